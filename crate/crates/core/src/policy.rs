//! Fully connected networks with LeakyReLU hidden layers, analytic
//! backpropagation, Adam, and a diagonal Gaussian policy head.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Version tag of the observation layouts below. Stored in checkpoints.
pub const OBS_LAYOUT_VERSION: u32 = 1;

/// Low-level observation: gravity axis (3), body linear velocity (3), body
/// angular velocity (3), joint angles (8), joint velocities (8), previous
/// action (5), command (1), CPG period (1), per-leg phase sin/cos (8), gait
/// one-hot (3).
pub const LOW_OBS_DIM: usize = 43;
pub const LOW_ACTION_DIM: usize = 5;
/// High-level observation: command velocity only.
pub const HIGH_OBS_DIM: usize = 1;
pub const HIGH_ACTION_DIM: usize = 1;
/// Baseline observation: the low-level layout without CPG features and with
/// an 8-dimensional previous action.
pub const BASELINE_OBS_DIM: usize = 34;
pub const BASELINE_ACTION_DIM: usize = 8;

pub const HIGH_HIDDEN: [usize; 1] = [128];
pub const LOW_HIDDEN: [usize; 2] = [128, 128];
pub const DEFAULT_NEGATIVE_SLOPE: f64 = 0.01;

/// A network input vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation(pub Vec<f64>);

impl Observation {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }
}

/// Which observation layout a network consumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ObsLayout {
    High,
    Low,
    Baseline,
}

impl ObsLayout {
    pub fn dim(self) -> usize {
        match self {
            ObsLayout::High => HIGH_OBS_DIM,
            ObsLayout::Low => LOW_OBS_DIM,
            ObsLayout::Baseline => BASELINE_OBS_DIM,
        }
    }

    /// Fixed per-feature input scaling applied before the first layer.
    pub fn input_scale(self) -> Vec<f64> {
        let proprio = |prev_action: usize| {
            let mut s = vec![1.0; 6];
            s.extend([0.25; 3]);
            s.extend([1.0; 8]);
            s.extend([0.1; 8]);
            s.extend(std::iter::repeat_n(1.0, prev_action));
            s.push(1.0);
            s
        };
        match self {
            ObsLayout::High => vec![1.0],
            ObsLayout::Low => {
                let mut s = proprio(LOW_ACTION_DIM);
                s.extend([1.0; 12]);
                s
            }
            ObsLayout::Baseline => proprio(BASELINE_ACTION_DIM),
        }
    }
}

pub fn leaky_relu(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        slope * x
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Maps an unbounded value into `[lo, hi]` through a sigmoid.
pub fn squash(raw: f64, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * sigmoid(raw)
}

/// Multilayer perceptron with parameters stored in one flat vector.
///
/// Layer `l` maps `sizes[l]` inputs to `sizes[l + 1]` outputs; its weights
/// are row-major `(out, in)` followed by its bias.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    params: Vec<f64>,
    negative_slope: f64,
}

/// Intermediate values of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// `inputs[l]` is the input of layer `l`; the last entry is the output.
    inputs: Vec<Vec<f64>>,
    /// Pre-activation of each hidden layer.
    pre: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        self.inputs.last().expect("cache holds at least the input")
    }

    pub fn input(&self) -> &[f64] {
        &self.inputs[0]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpGradients {
    /// Same layout as [`Mlp::params`].
    pub params: Vec<f64>,
    pub input: Vec<f64>,
}

impl Mlp {
    /// Zero-initialized network.
    pub fn zeros(sizes: &[usize], negative_slope: f64) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::contract(format!("invalid layer sizes {sizes:?}")));
        }
        let count = sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        Ok(Self {
            sizes: sizes.to_vec(),
            params: vec![0.0; count],
            negative_slope,
        })
    }

    /// Scaled Gaussian initialization: hidden weights have variance
    /// `2 / fan_in`, output weights `output_gain^2 / fan_in`, biases zero.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], output_gain: f64, rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(sizes, DEFAULT_NEGATIVE_SLOPE)?;
        let n_layers = net.num_layers();
        let mut offset = 0;
        for l in 0..n_layers {
            let (fan_in, fan_out) = (sizes[l], sizes[l + 1]);
            let gain = if l + 1 == n_layers { output_gain } else { 2f64.sqrt() };
            let std = gain / (fan_in as f64).sqrt();
            for w in &mut net.params[offset..offset + fan_in * fan_out] {
                let z: f64 = StandardNormal.sample(rng);
                *w = std * z;
            }
            offset += fan_in * fan_out + fan_out;
        }
        Ok(net)
    }

    pub fn from_params(sizes: &[usize], params: Vec<f64>, negative_slope: f64) -> Result<Self> {
        let mut net = Self::zeros(sizes, negative_slope)?;
        if params.len() != net.params.len() {
            return Err(Error::contract(format!(
                "expected {} parameters for sizes {sizes:?}, got {}",
                net.params.len(),
                params.len()
            )));
        }
        net.params = params;
        Ok(net)
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn num_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn negative_slope(&self) -> f64 {
        self.negative_slope
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        if input.len() != self.input_dim() {
            return Err(Error::contract(format!(
                "network expects {} inputs, got {}",
                self.input_dim(),
                input.len()
            )));
        }
        Ok(())
    }

    fn layer(&self, l: usize, offset: usize, x: &[f64], out: &mut Vec<f64>) -> usize {
        let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
        let w = &self.params[offset..offset + n_in * n_out];
        let b = &self.params[offset + n_in * n_out..offset + n_in * n_out + n_out];
        out.clear();
        out.extend(w.chunks_exact(n_in).zip(b).map(|(row, bias)| {
            bias + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
        }));
        offset + n_in * n_out + n_out
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.check_input(input)?;
        let mut x = input.to_vec();
        let mut y = Vec::new();
        let mut offset = 0;
        let last = self.num_layers() - 1;
        for l in 0..self.num_layers() {
            offset = self.layer(l, offset, &x, &mut y);
            if l < last {
                for v in &mut y {
                    *v = leaky_relu(*v, self.negative_slope);
                }
            }
            std::mem::swap(&mut x, &mut y);
        }
        Ok(x)
    }

    pub fn forward_cached(&self, input: &[f64]) -> Result<ForwardCache> {
        self.check_input(input)?;
        let mut inputs = vec![input.to_vec()];
        let mut pre = Vec::with_capacity(self.num_layers() - 1);
        let mut offset = 0;
        let last = self.num_layers() - 1;
        for l in 0..self.num_layers() {
            let mut y = Vec::new();
            offset = self.layer(l, offset, &inputs[l], &mut y);
            if l < last {
                let act = y.iter().map(|&v| leaky_relu(v, self.negative_slope)).collect();
                pre.push(y);
                inputs.push(act);
            } else {
                inputs.push(y);
            }
        }
        Ok(ForwardCache { inputs, pre })
    }

    /// Adds the parameter gradient of `upstream · output` into `grad` and
    /// returns the gradient with respect to the input.
    pub fn accumulate_backward(&self, cache: &ForwardCache, upstream: &[f64], grad: &mut [f64]) -> Result<Vec<f64>> {
        if cache.inputs.len() != self.sizes.len() || cache.input().len() != self.input_dim() {
            return Err(Error::contract("forward cache does not belong to this network"));
        }
        if upstream.len() != self.output_dim() {
            return Err(Error::contract(format!(
                "upstream gradient has length {}, network output is {}",
                upstream.len(),
                self.output_dim()
            )));
        }
        if grad.len() != self.params.len() {
            return Err(Error::contract("gradient buffer length mismatch"));
        }
        let mut offsets = Vec::with_capacity(self.num_layers());
        let mut off = 0;
        for w in self.sizes.windows(2) {
            offsets.push(off);
            off += w[0] * w[1] + w[1];
        }
        let mut delta = upstream.to_vec();
        for l in (0..self.num_layers()).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let o = offsets[l];
            let x = &cache.inputs[l];
            let (gw, gb) = grad[o..o + n_in * n_out + n_out].split_at_mut(n_in * n_out);
            for ((row, gbias), d) in gw.chunks_exact_mut(n_in).zip(gb.iter_mut()).zip(&delta) {
                *gbias += d;
                for (g, xi) in row.iter_mut().zip(x) {
                    *g += d * xi;
                }
            }
            let w = &self.params[o..o + n_in * n_out];
            let mut dx = vec![0.0; n_in];
            for (row, d) in w.chunks_exact(n_in).zip(&delta) {
                for (acc, wi) in dx.iter_mut().zip(row) {
                    *acc += d * wi;
                }
            }
            if l > 0 {
                for (g, z) in dx.iter_mut().zip(&cache.pre[l - 1]) {
                    if *z <= 0.0 {
                        *g *= self.negative_slope;
                    }
                }
            }
            delta = dx;
        }
        Ok(delta)
    }

    pub fn backward(&self, cache: &ForwardCache, upstream: &[f64]) -> Result<MlpGradients> {
        let mut params = vec![0.0; self.params.len()];
        let input = self.accumulate_backward(cache, upstream, &mut params)?;
        Ok(MlpGradients { params, input })
    }
}

/// Adam optimizer over a flat parameter slice.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(len: usize) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    /// Descends along `grad` with step size `lr`.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        debug_assert_eq!(params.len(), self.m.len());
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

/// Diagonal Gaussian over raw (pre-squash) actions with a state-independent
/// log standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPolicy {
    pub mean: Mlp,
    pub log_std: Vec<f64>,
    /// Clamp range of the raw sample, per dimension.
    pub bounds: Vec<[f64; 2]>,
}

/// A sampled raw action.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionSample {
    /// Pre-clamp sample; the log-probability refers to this value.
    pub raw: Vec<f64>,
    /// Sample clamped into the raw bounds.
    pub action: Vec<f64>,
    pub log_prob: f64,
}

pub const DEFAULT_RAW_BOUND: f64 = 5.0;
pub const DEFAULT_INITIAL_STD: f64 = 0.4;

impl GaussianPolicy {
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Result<Self> {
        let mean = Mlp::new(sizes, 0.01, rng)?;
        let dim = mean.output_dim();
        Ok(Self {
            mean,
            log_std: vec![DEFAULT_INITIAL_STD.ln(); dim],
            bounds: vec![[-DEFAULT_RAW_BOUND, DEFAULT_RAW_BOUND]; dim],
        })
    }

    pub fn action_dim(&self) -> usize {
        self.log_std.len()
    }

    pub fn std(&self) -> Vec<f64> {
        self.log_std.iter().map(|l| l.exp()).collect()
    }

    pub fn clamp(&self, raw: &[f64]) -> Vec<f64> {
        raw.iter().zip(&self.bounds).map(|(x, [lo, hi])| x.clamp(*lo, *hi)).collect()
    }

    /// Log-density of `raw` under `N(mean, exp(log_std)^2)`.
    pub fn log_prob(&self, mean: &[f64], raw: &[f64]) -> f64 {
        gaussian_log_prob(mean, &self.log_std, raw)
    }

    pub fn sample<R: Rng + ?Sized>(&self, obs: &[f64], rng: &mut R) -> Result<ActionSample> {
        let mean = self.mean.forward(obs)?;
        let raw: Vec<f64> = mean
            .iter()
            .zip(&self.log_std)
            .map(|(m, l)| {
                let z: f64 = StandardNormal.sample(rng);
                m + l.exp() * z
            })
            .collect();
        let log_prob = self.log_prob(&mean, &raw);
        let action = self.clamp(&raw);
        Ok(ActionSample { raw, action, log_prob })
    }

    /// Deterministic action: the clamped mean.
    pub fn mode(&self, obs: &[f64]) -> Result<Vec<f64>> {
        Ok(self.clamp(&self.mean.forward(obs)?))
    }

    pub fn is_finite(&self) -> bool {
        self.mean.is_finite() && self.log_std.iter().all(|l| l.is_finite())
    }
}

pub fn gaussian_log_prob(mean: &[f64], log_std: &[f64], x: &[f64]) -> f64 {
    let half_ln_2pi = 0.5 * (2.0 * std::f64::consts::PI).ln();
    mean.iter()
        .zip(log_std)
        .zip(x)
        .map(|((m, l), x)| {
            let z = (x - m) / l.exp();
            -0.5 * z * z - l - half_ln_2pi
        })
        .sum()
}

/// Output squashing of the high-level network: raw value to CPG period.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HighActionSpace {
    pub period_min: f64,
    pub period_max: f64,
}

impl Default for HighActionSpace {
    fn default() -> Self {
        Self {
            period_min: 0.2,
            period_max: 1.0,
        }
    }
}

impl HighActionSpace {
    pub fn period(&self, raw: f64) -> f64 {
        squash(raw, self.period_min, self.period_max)
    }
}

/// Output squashing of the low-level network: amplitude and calf targets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LowActionSpace {
    pub amplitude_max: f64,
    pub calf_limits: [f64; 2],
}

impl Default for LowActionSpace {
    fn default() -> Self {
        Self {
            amplitude_max: 0.8,
            calf_limits: [-0.8, 0.0],
        }
    }
}

impl LowActionSpace {
    /// `(A, [calf; 4])` from a raw 5-vector.
    pub fn decode(&self, raw: &[f64]) -> (f64, [f64; 4]) {
        let a = squash(raw[0], 0.0, self.amplitude_max);
        let [lo, hi] = self.calf_limits;
        (a, std::array::from_fn(|i| squash(raw[i + 1], lo, hi)))
    }

    /// Decoded action as the 5-vector `[A, calf0..calf3]`.
    pub fn decode_vec(&self, raw: &[f64]) -> [f64; LOW_ACTION_DIM] {
        let (a, calf) = self.decode(raw);
        [a, calf[0], calf[1], calf[2], calf[3]]
    }

    /// Action decoded from an all-zero raw output.
    pub fn midpoint(&self) -> [f64; LOW_ACTION_DIM] {
        self.decode_vec(&[0.0; LOW_ACTION_DIM])
    }
}

/// High-level action: CPG period from the command velocity.
pub fn act_high(policy: &GaussianPolicy, space: &HighActionSpace, v: f64) -> Result<f64> {
    Ok(space.period(policy.mode(&[v])?[0]))
}

/// Low-level action: amplitude and calf targets from an observation.
pub fn act_low(policy: &GaussianPolicy, space: &LowActionSpace, obs: &Observation) -> Result<(f64, [f64; 4])> {
    let raw = policy.mode(obs.as_slice())?;
    if raw.len() != LOW_ACTION_DIM {
        return Err(Error::contract(format!("low-level policy must emit {LOW_ACTION_DIM} values")));
    }
    Ok(space.decode(&raw))
}
