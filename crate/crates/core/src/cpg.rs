//! Sinusoidal central pattern generator.
//!
//! Each leg `i` follows `sin(B t + C_i)` where all legs share the angular
//! frequency `B`. Leg order throughout the crate is `[FR, FL, RR, RL]`.

use std::f64::consts::{PI, TAU};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NUM_LEGS: usize = 4;
pub const LEG_NAMES: [&str; NUM_LEGS] = ["FR", "FL", "RR", "RL"];

/// Upper end of the commanded velocity range, m/s.
pub const MAX_COMMAND_VELOCITY: f64 = 1.5;

/// Wraps an angle into `[0, 2π)`.
pub fn wrap_angle(x: f64) -> f64 {
    let w = x.rem_euclid(TAU);
    // rem_euclid can round up to exactly TAU for tiny negative inputs
    if w >= TAU {
        0.0
    } else {
        w
    }
}

/// Smallest signed difference `a - b` on the circle, in `(-π, π]`.
pub fn angle_diff(a: f64, b: f64) -> f64 {
    let d = wrap_angle(a - b);
    if d > PI {
        d - TAU
    } else {
        d
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GaitKind {
    Trot,
    Pace,
    Bound,
}

impl GaitKind {
    pub const ALL: [GaitKind; 3] = [GaitKind::Trot, GaitKind::Pace, GaitKind::Bound];

    pub fn phase_offsets(self) -> [f64; NUM_LEGS] {
        gait_phase_offsets(self)
    }

    pub fn index(self) -> usize {
        match self {
            GaitKind::Trot => 0,
            GaitKind::Pace => 1,
            GaitKind::Bound => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            GaitKind::Trot => "trot",
            GaitKind::Pace => "pace",
            GaitKind::Bound => "bound",
        }
    }

    /// Pairs of legs that should touch down together.
    pub fn leg_pairs(self) -> [(usize, usize); 2] {
        match self {
            GaitKind::Trot => [(0, 3), (1, 2)],
            GaitKind::Pace => [(0, 2), (1, 3)],
            GaitKind::Bound => [(0, 1), (2, 3)],
        }
    }

    /// The gait whose phase table is closest (circular L1) to `offsets`.
    pub fn nearest(offsets: &[f64; NUM_LEGS]) -> GaitKind {
        let dist = |g: GaitKind| -> f64 {
            let table = g.phase_offsets();
            // compare relative to leg 0 so a global phase shift does not matter
            (0..NUM_LEGS)
                .map(|i| {
                    angle_diff(offsets[i] - offsets[0], table[i] - table[0]).abs()
                })
                .sum()
        };
        let mut best = GaitKind::Trot;
        let mut best_d = f64::INFINITY;
        for g in GaitKind::ALL {
            let d = dist(g);
            if d < best_d {
                best = g;
                best_d = d;
            }
        }
        best
    }
}

impl fmt::Display for GaitKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for GaitKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "trot" => Ok(GaitKind::Trot),
            "pace" => Ok(GaitKind::Pace),
            "bound" => Ok(GaitKind::Bound),
            other => Err(Error::domain(format!("unknown gait `{other}`"))),
        }
    }
}

/// Per-leg phase offsets `[FR, FL, RR, RL]` of each gait.
pub fn gait_phase_offsets(gait: GaitKind) -> [f64; NUM_LEGS] {
    match gait {
        GaitKind::Trot => [PI, 0.0, 0.0, PI],
        GaitKind::Pace => [PI, 0.0, PI, 0.0],
        GaitKind::Bound => [PI, PI, 0.0, 0.0],
    }
}

/// Gait used by the multi-gait controller for command velocity `v`.
///
/// Intervals are closed on the right: `(0, 0.5]` trot, `(0.5, 1]` pace,
/// `(1, 1.5]` bound.
pub fn gait_for_velocity(v: f64) -> Result<GaitKind> {
    if !(v > 0.0 && v <= MAX_COMMAND_VELOCITY) {
        return Err(Error::domain(format!(
            "command velocity {v} outside (0, {MAX_COMMAND_VELOCITY}]"
        )));
    }
    Ok(if v <= 0.5 {
        GaitKind::Trot
    } else if v <= 1.0 {
        GaitKind::Pace
    } else {
        GaitKind::Bound
    })
}

/// Phase offsets selected by the velocity schedule.
pub fn gait_schedule(v: f64) -> Result<[f64; NUM_LEGS]> {
    gait_for_velocity(v).map(gait_phase_offsets)
}

/// Frequency and per-leg phase of the oscillator bank.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CpgParams {
    frequency: f64,
    phases: [f64; NUM_LEGS],
}

impl CpgParams {
    pub fn new(frequency: f64, phases: [f64; NUM_LEGS]) -> Result<Self> {
        if !(frequency > 0.0 && frequency.is_finite()) {
            return Err(Error::domain(format!("CPG frequency must be positive, got {frequency}")));
        }
        if phases.iter().any(|c| !c.is_finite()) {
            return Err(Error::domain("CPG phases must be finite"));
        }
        Ok(Self {
            frequency,
            phases: phases.map(wrap_angle),
        })
    }

    pub fn from_period(period: f64, phases: [f64; NUM_LEGS]) -> Result<Self> {
        if !(period > 0.0 && period.is_finite()) {
            return Err(Error::domain(format!("CPG period must be positive, got {period}")));
        }
        Self::new(TAU / period, phases)
    }

    /// Angular frequency `B`, rad/s.
    pub fn frequency(&self) -> f64 {
        self.frequency
    }

    /// Phase offsets `C_i`, wrapped to `[0, 2π)`.
    pub fn phases(&self) -> [f64; NUM_LEGS] {
        self.phases
    }

    pub fn period(&self) -> f64 {
        TAU / self.frequency
    }
}

/// Low-level control clock. Time is `step * dt`; it is never accumulated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClockState {
    pub step: u64,
    pub dt: f64,
}

impl ClockState {
    pub fn new(dt: f64) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::domain(format!("clock period must be positive, got {dt}")));
        }
        Ok(Self { step: 0, dt })
    }

    pub fn at(step: u64, dt: f64) -> Result<Self> {
        Ok(Self { step, ..Self::new(dt)? })
    }

    pub fn time(&self) -> f64 {
        self.step as f64 * self.dt
    }

    pub fn tick(&mut self) {
        self.step += 1;
    }
}

/// CPG output of every leg at time `t`.
pub fn eval_cpg(params: &CpgParams, t: f64) -> [f64; NUM_LEGS] {
    let bt = params.frequency * t;
    params.phases.map(|c| (bt + c).sin())
}

/// Re-times the oscillator bank to a new period without a jump in value.
///
/// The new phase absorbs the frequency change accumulated up to the switch
/// instant `T = step * dt`, so `sin(B_old T + C_old) == sin(B_new T + C_new)`.
pub fn synchronize(params: &CpgParams, period: f64, clock: &ClockState) -> Result<CpgParams> {
    if !(period > 0.0 && period.is_finite()) {
        return Err(Error::domain(format!("synchronize: period must be positive, got {period}")));
    }
    let b_old = params.frequency;
    let b_new = TAU / period;
    let shift = (b_old - b_new) * clock.time();
    let phases = params.phases.map(|c| wrap_angle(shift + c));
    Ok(CpgParams {
        frequency: b_new,
        phases,
    })
}

/// Oscillator phase `(B t + C_i) mod 2π` of every leg.
pub fn phase_at(params: &CpgParams, clock: &ClockState) -> [f64; NUM_LEGS] {
    let bt = params.frequency * clock.time();
    params.phases.map(|c| wrap_angle(bt + c))
}

/// Which part of the oscillator cycle counts as stance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StanceConvention {
    /// `sin <= 0` is stance; the zero crossing belongs to stance.
    #[default]
    NegativeHalfWave,
    /// `sin >= 0` is stance.
    PositiveHalfWave,
    /// Stance while the thigh target sweeps the foot backward,
    /// `cos(B t + C_i) >= 0`. Not decidable from the signal value alone.
    Retraction,
}

impl StanceConvention {
    pub fn from_stance_on_negative(flag: bool) -> Self {
        if flag {
            StanceConvention::NegativeHalfWave
        } else {
            StanceConvention::PositiveHalfWave
        }
    }

    /// Stance test on a CPG value; `None` for [`StanceConvention::Retraction`].
    pub fn is_stance(self, signal: f64) -> Option<bool> {
        match self {
            StanceConvention::NegativeHalfWave => Some(signal <= 0.0),
            StanceConvention::PositiveHalfWave => Some(signal >= 0.0),
            StanceConvention::Retraction => None,
        }
    }

    /// Stance test on the oscillator argument `B t + C_i`.
    pub fn is_stance_at(self, phase: f64) -> bool {
        match self {
            StanceConvention::Retraction => phase.cos() >= 0.0,
            half_wave => half_wave.is_stance(phase.sin()).unwrap_or_default(),
        }
    }
}

/// Stance indicator `G_i` (1 = stance, 0 = swing) from raw CPG values, for
/// the half-wave conventions.
pub fn stance_from_signal(signal: &[f64; NUM_LEGS], convention: StanceConvention) -> Option<[u8; NUM_LEGS]> {
    let mut g = [0; NUM_LEGS];
    for (gi, &s) in g.iter_mut().zip(signal) {
        *gi = u8::from(convention.is_stance(s)?);
    }
    Some(g)
}

/// Stance indicator `G_i` of every leg at the clock's current time.
pub fn leg_phase_indicator(
    params: &CpgParams,
    clock: &ClockState,
    convention: StanceConvention,
) -> [u8; NUM_LEGS] {
    let bt = params.frequency * clock.time();
    params.phases.map(|c| u8::from(convention.is_stance_at(bt + c)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.iter().zip(b).all(|(x, y)| (x - y).abs() < tol)
    }

    fn close_circ(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.iter().zip(b).all(|(x, y)| angle_diff(*x, *y).abs() < tol)
    }

    #[test]
    fn eval_examples() {
        let p = CpgParams::new(TAU, [PI, 0.0, 0.0, PI]).unwrap();
        assert!(close(&eval_cpg(&p, 0.0), &[0.0; 4], 1e-12));
        let p = CpgParams::new(TAU, [0.0; 4]).unwrap();
        assert!(close(&eval_cpg(&p, 0.25), &[1.0; 4], 1e-12));
        let p = CpgParams::new(TAU, gait_phase_offsets(GaitKind::Pace)).unwrap();
        assert!(close(&eval_cpg(&p, 0.25), &[-1.0, 1.0, -1.0, 1.0], 1e-12));
    }

    #[test]
    fn gait_tables() {
        assert_eq!(gait_phase_offsets(GaitKind::Trot), [PI, 0.0, 0.0, PI]);
        assert_eq!(gait_phase_offsets(GaitKind::Pace), [PI, 0.0, PI, 0.0]);
        assert_eq!(gait_phase_offsets(GaitKind::Bound), [PI, PI, 0.0, 0.0]);
    }

    #[test]
    fn schedule_branches_and_boundaries() {
        assert_eq!(gait_schedule(0.3).unwrap(), [PI, 0.0, 0.0, PI]);
        assert_eq!(gait_schedule(0.7).unwrap(), [PI, 0.0, PI, 0.0]);
        assert_eq!(gait_schedule(1.2).unwrap(), [PI, PI, 0.0, 0.0]);
        assert_eq!(gait_for_velocity(0.5).unwrap(), GaitKind::Trot);
        assert_eq!(gait_for_velocity(1.0).unwrap(), GaitKind::Pace);
        assert_eq!(gait_for_velocity(1.5).unwrap(), GaitKind::Bound);
        assert!(gait_schedule(0.0).is_err());
        assert!(gait_schedule(-0.1).is_err());
        assert!(gait_schedule(1.5000001).is_err());
        assert!(gait_schedule(f64::NAN).is_err());
    }

    #[test]
    fn synchronize_examples() {
        let clock = ClockState::at(37, 0.01).unwrap();
        let p = CpgParams::new(TAU, [0.0; 4]).unwrap();
        let s = synchronize(&p, 1.0, &clock).unwrap();
        assert!((s.frequency() - TAU).abs() < 1e-15);
        assert!(close_circ(&s.phases(), &[0.0; 4], 1e-12));

        let clock = ClockState::at(100, 0.01).unwrap();
        let p = CpgParams::new(2.0 * TAU, [0.0; 4]).unwrap();
        let s = synchronize(&p, 1.0, &clock).unwrap();
        assert!((s.frequency() - TAU).abs() < 1e-12);
        assert!(close_circ(&s.phases(), &[0.0; 4], 1e-9));

        let clock = ClockState::at(50, 0.01).unwrap();
        let p = CpgParams::new(PI, [PI / 2.0, 0.0, 0.0, 0.0]).unwrap();
        let s = synchronize(&p, 4.0, &clock).unwrap();
        assert!((s.frequency() - PI / 2.0).abs() < 1e-12);
        assert!(close_circ(&s.phases(), &[3.0 * PI / 4.0, PI / 4.0, PI / 4.0, PI / 4.0], 1e-12));
    }

    #[test]
    fn synchronize_rejects_bad_period() {
        let clock = ClockState::at(1, 0.01).unwrap();
        let p = CpgParams::new(TAU, [0.0; 4]).unwrap();
        assert!(matches!(synchronize(&p, 0.0, &clock), Err(Error::Domain(_))));
        assert!(matches!(synchronize(&p, -1.0, &clock), Err(Error::Domain(_))));
    }

    #[test]
    fn phase_examples() {
        let p = CpgParams::new(TAU, [0.0; 4]).unwrap();
        assert_eq!(phase_at(&p, &ClockState::at(0, 0.01).unwrap()), [0.0; 4]);
        let p = CpgParams::new(TAU, [PI, 0.0, 0.0, PI]).unwrap();
        let ph = phase_at(&p, &ClockState::at(50, 0.01).unwrap());
        assert!(close_circ(&ph, &[0.0, PI, PI, 0.0], 1e-12));
        let p = CpgParams::new(PI, [PI / 2.0, 0.0, 0.0, 0.0]).unwrap();
        let ph = phase_at(&p, &ClockState::at(100, 0.01).unwrap());
        assert!(close_circ(&ph, &[1.5 * PI, PI, PI, PI], 1e-12));
        assert!(ph.iter().all(|x| (0.0..TAU).contains(x)));
    }

    #[test]
    fn stance_indicator_examples() {
        let neg = StanceConvention::NegativeHalfWave;
        assert_eq!(stance_from_signal(&[0.5, -0.5, 0.5, -0.5], neg), Some([0, 1, 0, 1]));
        assert_eq!(stance_from_signal(&[0.0; 4], neg), Some([1, 1, 1, 1]));
        assert_eq!(
            stance_from_signal(&[0.5, -0.5, 0.5, -0.5], StanceConvention::from_stance_on_negative(false)),
            Some([1, 0, 1, 0])
        );
        assert_eq!(stance_from_signal(&[0.5; 4], StanceConvention::Retraction), None);
        // trot, FR and RL on their positive half-wave
        let p = CpgParams::new(TAU, gait_phase_offsets(GaitKind::Trot)).unwrap();
        let clock = ClockState::at(75, 0.01).unwrap();
        assert_eq!(leg_phase_indicator(&p, &clock, neg), [0, 1, 1, 0]);
        // at t = 0.1 FL and RR sit at 0.2π and retract; FR and RL protract
        let early = ClockState::at(10, 0.01).unwrap();
        assert_eq!(leg_phase_indicator(&p, &early, StanceConvention::Retraction), [0, 1, 1, 0]);
    }

    #[test]
    fn nearest_gait_recovers_tables() {
        for g in GaitKind::ALL {
            assert_eq!(GaitKind::nearest(&g.phase_offsets()), g);
            let shifted = g.phase_offsets().map(|c| wrap_angle(c + 1.234));
            assert_eq!(GaitKind::nearest(&shifted), g);
        }
    }

    #[test]
    fn params_validate() {
        assert!(CpgParams::new(0.0, [0.0; 4]).is_err());
        assert!(CpgParams::new(-1.0, [0.0; 4]).is_err());
        assert!(CpgParams::new(1.0, [f64::NAN, 0.0, 0.0, 0.0]).is_err());
        let p = CpgParams::new(1.0, [-0.5, 7.0, TAU, 0.0]).unwrap();
        assert!(p.phases().iter().all(|x| (0.0..TAU).contains(x)));
        assert!(ClockState::new(0.0).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn periodic(b in 0.5f64..30.0, c in proptest::array::uniform4(0.0f64..TAU), t in 0.0f64..20.0) {
                let p = CpgParams::new(b, c).unwrap();
                let a = eval_cpg(&p, t);
                let z = eval_cpg(&p, t + TAU / b);
                prop_assert!(close(&a, &z, 1e-9));
            }

            #[test]
            fn synchronize_is_idempotent(
                b in 0.5f64..40.0,
                c in proptest::array::uniform4(0.0f64..TAU),
                period in 0.1f64..2.0,
                step in 0u64..10_000,
            ) {
                let clock = ClockState::at(step, 0.01).unwrap();
                let p = CpgParams::new(b, c).unwrap();
                let once = synchronize(&p, period, &clock).unwrap();
                let twice = synchronize(&once, period, &clock).unwrap();
                prop_assert_eq!(once.frequency(), twice.frequency());
                prop_assert!(close_circ(&once.phases(), &twice.phases(), 1e-12));
            }

            #[test]
            fn schedule_piecewise_constant(v in 0.0001f64..1.5) {
                let g = gait_for_velocity(v).unwrap();
                let expected = if v <= 0.5 { GaitKind::Trot } else if v <= 1.0 { GaitKind::Pace } else { GaitKind::Bound };
                prop_assert_eq!(g, expected);
            }
        }
    }
}
