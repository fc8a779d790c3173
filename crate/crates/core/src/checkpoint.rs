//! Binary checkpoint files.
//!
//! Little-endian layout: magic, format version, observation layout version,
//! mode string, config TOML, optional phase offsets, then the named
//! networks. A SHA-256 of everything before it closes the file.

use std::io::{Cursor, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use sha2::{Digest, Sha256};

use crate::config::{hex_digest, ExperimentConfig};
use crate::cpg::NUM_LEGS;
use crate::error::{Error, Result};
use crate::policy::{GaussianPolicy, Mlp, ObsLayout, DEFAULT_RAW_BOUND, OBS_LAYOUT_VERSION};
use crate::ppo::{Agent, TrainMode};

const MAGIC: &[u8; 8] = b"CPGAITCK";
const FORMAT_VERSION: u32 = 1;

/// One stored network. Policy networks carry their log standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedNetwork {
    pub name: String,
    pub sizes: Vec<usize>,
    pub negative_slope: f64,
    pub params: Vec<f64>,
    pub log_std: Vec<f64>,
}

impl NamedNetwork {
    pub fn from_mlp(name: &str, mlp: &Mlp, log_std: &[f64]) -> Self {
        Self {
            name: name.to_string(),
            sizes: mlp.sizes().to_vec(),
            negative_slope: mlp.negative_slope(),
            params: mlp.params().to_vec(),
            log_std: log_std.to_vec(),
        }
    }

    pub fn mlp(&self) -> Result<Mlp> {
        Mlp::from_params(&self.sizes, self.params.clone(), self.negative_slope)
    }

    pub fn policy(&self) -> Result<GaussianPolicy> {
        let mean = self.mlp()?;
        if self.log_std.len() != mean.output_dim() {
            return Err(Error::contract(format!("network '{}' has no matching log std", self.name)));
        }
        Ok(GaussianPolicy {
            bounds: vec![[-DEFAULT_RAW_BOUND, DEFAULT_RAW_BOUND]; self.log_std.len()],
            log_std: self.log_std.clone(),
            mean,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub mode: TrainMode,
    pub config: ExperimentConfig,
    pub obs_layout_version: u32,
    /// Table offsets of the fixed gait; absent for schedule and baseline runs.
    pub phase_offsets: Option<[f64; NUM_LEGS]>,
    pub networks: Vec<NamedNetwork>,
}

impl Checkpoint {
    pub fn from_agents(mode: TrainMode, config: &ExperimentConfig, low: &Agent, high: Option<&Agent>) -> Self {
        let mut networks = vec![
            NamedNetwork::from_mlp("low_policy", &low.policy.mean, &low.policy.log_std),
            NamedNetwork::from_mlp("low_value", &low.value, &[]),
        ];
        if let Some(h) = high {
            networks.push(NamedNetwork::from_mlp("high_policy", &h.policy.mean, &h.policy.log_std));
            networks.push(NamedNetwork::from_mlp("high_value", &h.value, &[]));
        }
        Self {
            mode,
            config: config.clone(),
            obs_layout_version: OBS_LAYOUT_VERSION,
            phase_offsets: match mode {
                TrainMode::Single(g) => Some(g.phase_offsets()),
                _ => None,
            },
            networks,
        }
    }

    pub fn network(&self, name: &str) -> Option<&NamedNetwork> {
        self.networks.iter().find(|n| n.name == name)
    }

    pub fn config_hash(&self) -> Result<String> {
        self.config.hash()
    }

    /// Low- and high-level policies ready for evaluation.
    pub fn policies(&self) -> Result<(GaussianPolicy, Option<GaussianPolicy>)> {
        let low = self
            .network("low_policy")
            .ok_or_else(|| Error::contract("checkpoint has no low_policy network"))?
            .policy()?;
        let expected = match self.mode {
            TrainMode::Baseline => ObsLayout::Baseline.dim(),
            _ => ObsLayout::Low.dim(),
        };
        if low.mean.input_dim() != expected {
            return Err(Error::contract("low_policy input size does not match the observation layout"));
        }
        let high = self.network("high_policy").map(|n| n.policy()).transpose()?;
        Ok((low, high))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = Vec::new();
        w.write_all(MAGIC)?;
        w.write_u32::<LE>(FORMAT_VERSION)?;
        w.write_u32::<LE>(self.obs_layout_version)?;
        write_str(&mut w, &self.mode.to_string())?;
        let toml = self.config.to_toml_string()?;
        write_str(&mut w, &hex_digest(toml.as_bytes()))?;
        write_str(&mut w, &toml)?;
        match self.phase_offsets {
            Some(off) => {
                w.write_u8(1)?;
                for c in off {
                    w.write_f64::<LE>(c)?;
                }
            }
            None => w.write_u8(0)?,
        }
        w.write_u32::<LE>(self.networks.len() as u32)?;
        for n in &self.networks {
            write_str(&mut w, &n.name)?;
            w.write_u32::<LE>(n.sizes.len() as u32)?;
            for s in &n.sizes {
                w.write_u32::<LE>(*s as u32)?;
            }
            w.write_f64::<LE>(n.negative_slope)?;
            write_f64s(&mut w, &n.params)?;
            write_f64s(&mut w, &n.log_std)?;
        }
        let digest = Sha256::digest(&w);
        w.extend_from_slice(&digest);
        Ok(w)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() + 32 {
            return Err(bad("file too short"));
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(bad("checksum mismatch"));
        }
        let mut r = Cursor::new(body);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        let version = r.read_u32::<LE>()?;
        if version != FORMAT_VERSION {
            return Err(bad(&format!("unsupported format version {version}")));
        }
        let obs_layout_version = r.read_u32::<LE>()?;
        if obs_layout_version != OBS_LAYOUT_VERSION {
            return Err(bad(&format!(
                "observation layout version {obs_layout_version}, expected {OBS_LAYOUT_VERSION}"
            )));
        }
        let mode: TrainMode = read_str(&mut r)?.parse()?;
        let hash = read_str(&mut r)?;
        let toml = read_str(&mut r)?;
        if hex_digest(toml.as_bytes()) != hash {
            return Err(bad("config hash mismatch"));
        }
        let config = ExperimentConfig::from_toml_str(&toml)?;
        let phase_offsets = match r.read_u8()? {
            0 => None,
            1 => {
                let mut off = [0.0; NUM_LEGS];
                for c in &mut off {
                    *c = r.read_f64::<LE>()?;
                }
                Some(off)
            }
            _ => return Err(bad("corrupt phase offset flag")),
        };
        if mode.has_cpg() != phase_offsets.is_some() && !matches!(mode, TrainMode::Multi) {
            return Err(bad("phase offsets inconsistent with the mode"));
        }
        let count = r.read_u32::<LE>()?;
        let mut networks = Vec::new();
        for _ in 0..count {
            let name = read_str(&mut r)?;
            let layers = r.read_u32::<LE>()? as usize;
            if layers > 64 {
                return Err(bad("implausible layer count"));
            }
            let sizes = (0..layers)
                .map(|_| r.read_u32::<LE>().map(|s| s as usize))
                .collect::<std::io::Result<Vec<_>>>()?;
            let negative_slope = r.read_f64::<LE>()?;
            let params = read_f64s(&mut r)?;
            let log_std = read_f64s(&mut r)?;
            let net = NamedNetwork {
                name,
                sizes,
                negative_slope,
                params,
                log_std,
            };
            net.mlp()?;
            networks.push(net);
        }
        if r.position() as usize != body.len() {
            return Err(bad("trailing bytes"));
        }
        Ok(Self {
            mode,
            config,
            obs_layout_version,
            phase_offsets,
            networks,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Checkpoint { reason, .. } => Error::Checkpoint {
                path: path.to_path_buf(),
                reason,
            },
            Error::Io(io) => Error::Checkpoint {
                path: path.to_path_buf(),
                reason: format!("truncated or unreadable: {io}"),
            },
            other => other,
        })
    }
}

fn bad(reason: &str) -> Error {
    Error::Checkpoint {
        path: Default::default(),
        reason: reason.to_string(),
    }
}

fn write_str(w: &mut Vec<u8>, s: &str) -> Result<()> {
    w.write_u32::<LE>(s.len() as u32)?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

fn read_str(r: &mut Cursor<&[u8]>) -> Result<String> {
    let len = r.read_u32::<LE>()? as usize;
    let remaining = r.get_ref().len() - r.position() as usize;
    if len > remaining {
        return Err(bad("string length exceeds file size"));
    }
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|_| bad("invalid UTF-8"))
}

fn write_f64s(w: &mut Vec<u8>, xs: &[f64]) -> Result<()> {
    w.write_u64::<LE>(xs.len() as u64)?;
    for x in xs {
        w.write_f64::<LE>(*x)?;
    }
    Ok(())
}

fn read_f64s(r: &mut Cursor<&[u8]>) -> Result<Vec<f64>> {
    let len = r.read_u64::<LE>()? as usize;
    let remaining = r.get_ref().len() - r.position() as usize;
    if len > remaining / 8 {
        return Err(bad("array length exceeds file size"));
    }
    (0..len).map(|_| Ok(r.read_f64::<LE>()?)).collect()
}
