//! Acceptance checks, one printed line per criterion.
//!
//! The analytic criteria (1-8, 13) always run and must pass. The training
//! criteria (9-12) take hours on one core and run only when
//! `CPGAIT_FULL_ACCEPTANCE=1` is set. The smoke run (9) then fails the test
//! like the analytic ones; 10-12 measure learning trends and only report.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::{UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cpgait_core::bench::{EvalConfig, TrackingResult};
use cpgait_core::checkpoint::Checkpoint;
use cpgait_core::config::ExperimentConfig;
use cpgait_core::costs::{compute_costs, k_angular, k_linear, CostInputs, CostOptions, NUM_TERMS};
use cpgait_core::cpg::{eval_cpg, gait_for_velocity, gait_phase_offsets, gait_schedule, synchronize, NUM_LEGS};
use cpgait_core::dynamics::{pd_torque, reset, standing_torques, step_dynamics, NUM_JOINTS};
use cpgait_core::policy::{Mlp, HIGH_ACTION_DIM, HIGH_HIDDEN, HIGH_OBS_DIM, LOW_ACTION_DIM, LOW_HIDDEN, LOW_OBS_DIM};
use cpgait_core::ppo::compute_gae;
use cpgait_core::suite::{evaluate_to_dir, run_gait_suite, train_run, SuiteRun};
use cpgait_core::{ClockState, CostWeights, CpgParams, Curriculum, GaitKind, PdGains, RobotModel, RobotState, SuiteMode, TrainMode};

struct Report {
    failures: Vec<u32>,
}

impl Report {
    fn line(&mut self, id: u32, name: &str, pass: bool, detail: String) {
        println!("criterion {id:2} {:4} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
        if !pass {
            self.failures.push(id);
        }
    }

    /// Outcome of a learning-trend criterion; never fails the run.
    fn soft(&self, id: u32, name: &str, pass: bool, detail: String) {
        println!("criterion {id:2} {:4} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    }

    fn skip(&self, id: u32, name: &str) {
        println!("criterion {id:2} SKIP {name}: set CPGAIT_FULL_ACCEPTANCE=1 to train");
    }
}

fn kernels(r: &mut Report) {
    let at_zero = (k_angular(0.0) + 0.25).abs() <= 1e-12 && (k_linear(0.0) + 0.5).abs() <= 1e-12;
    let grid: Vec<f64> = (0..1000).map(|i| i as f64 * 0.01).collect();
    let mut even = true;
    let mut monotone = true;
    for k in [k_angular as fn(f64) -> f64, k_linear] {
        for w in grid.windows(2) {
            even &= k(w[1]) == k(-w[1]);
            // values are negative and rise toward zero as |x| grows
            monotone &= k(w[1]) >= k(w[0]);
        }
        monotone &= k(grid[1]) > k(grid[0]);
    }
    r.line(
        1,
        "kernel values",
        at_zero && even && monotone,
        format!(
            "k_angular(0)={} k_linear(0)={} even={even} monotone={monotone}",
            k_angular(0.0),
            k_linear(0.0)
        ),
    );
}

fn synchronizer(r: &mut Report) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for _ in 0..100_000 {
        let phases: [f64; NUM_LEGS] = std::array::from_fn(|_| rng.random_range(0.0..2.0 * PI));
        let old = CpgParams::from_period(rng.random_range(0.2..=1.0), phases).unwrap();
        let dt = [0.01, 0.0025, 0.005, 0.002][rng.random_range(0..4)];
        let clock = ClockState::at(rng.random_range(0..100_000), dt).unwrap();
        let new = synchronize(&old, rng.random_range(0.2..=1.0), &clock).unwrap();
        let t = clock.time();
        let (a, b) = (eval_cpg(&old, t), eval_cpg(&new, t));
        for i in 0..NUM_LEGS {
            worst = worst.max((a[i] - b[i]).abs());
        }
    }
    r.line(2, "synchronizer continuity", worst < 1e-9, format!("max jump {worst:.3e} over 1e5 cases"));
}

fn curriculum(r: &mut Report) {
    let mut c = Curriculum::default();
    let mut worst: f64 = 0.0;
    for n in 1..=10_000 {
        c = c.update();
        worst = worst.max((c.k_c - 0.3f64.powf(0.999f64.powi(n))).abs());
    }
    let defaults = Curriculum::default();
    let ok = worst < 1e-10 && defaults.k_c == 0.3 && defaults.k_d == 0.999;
    r.line(3, "curriculum closed form", ok, format!("max deviation {worst:.3e}, final k_c {:.6}", c.k_c));
}

fn gait_tables(r: &mut Report) {
    let trot = [PI, 0.0, 0.0, PI];
    let pace = [PI, 0.0, PI, 0.0];
    let bound = [PI, PI, 0.0, 0.0];
    let tables = gait_phase_offsets(GaitKind::Trot) == trot
        && gait_phase_offsets(GaitKind::Pace) == pace
        && gait_phase_offsets(GaitKind::Bound) == bound;
    let cases = [
        (0.1, trot),
        (0.5, trot),
        (0.5 + 1e-12, pace),
        (0.75, pace),
        (1.0, pace),
        (1.0 + 1e-12, bound),
        (1.5, bound),
    ];
    let schedule = cases.iter().all(|&(v, want)| gait_schedule(v).unwrap() == want);
    let domain = gait_for_velocity(0.0).is_err() && gait_for_velocity(1.6).is_err();
    r.line(
        4,
        "gait tables and schedule",
        tables && schedule && domain,
        format!("tables={tables} schedule={schedule} domain={domain}"),
    );
}

/// Signs of every hidden pre-activation, from a forward pass written
/// independently of the library (row-major `(out, in)` weights, then bias).
fn activation_pattern(sizes: &[usize], params: &[f64], x: &[f64]) -> Vec<bool> {
    let mut pattern = Vec::new();
    let mut h = x.to_vec();
    let mut offset = 0;
    for l in 0..sizes.len() - 1 {
        let (n_in, n_out) = (sizes[l], sizes[l + 1]);
        let w = &params[offset..offset + n_in * n_out];
        let b = &params[offset + n_in * n_out..offset + n_in * n_out + n_out];
        offset += n_in * n_out + n_out;
        let z: Vec<f64> = (0..n_out).map(|o| b[o] + (0..n_in).map(|i| w[o * n_in + i] * h[i]).sum::<f64>()).collect();
        if l + 2 < sizes.len() {
            pattern.extend(z.iter().map(|v| *v > 0.0));
            h = z.iter().map(|&v| if v > 0.0 { v } else { 0.01 * v }).collect();
        }
    }
    pattern
}

/// Largest relative error between analytic and central-difference gradients
/// of `u . f(x)` over `probes` random parameter and input coordinates.
///
/// The network is piecewise linear in any single parameter or input, so a
/// central difference whose stencil stays on one side of every kink is exact
/// up to rounding. Probes whose stencil flips an activation are redrawn.
fn gradient_error(sizes: &[usize], probes: usize, rng: &mut ChaCha8Rng) -> (f64, usize) {
    let n_params: usize = sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
    let mut params = Vec::with_capacity(n_params);
    for w in sizes.windows(2) {
        let scale = (2.0 / w[0] as f64).sqrt();
        params.extend((0..w[0] * w[1]).map(|_| rng.random_range(-scale..scale)));
        params.extend((0..w[1]).map(|_| rng.random_range(-0.1..0.1)));
    }
    let net = Mlp::from_params(sizes, params.clone(), 0.01).unwrap();
    let h = 1e-4;
    let rel = |a: f64, n: f64| if a == n { 0.0 } else { (a - n).abs() / a.abs().max(n.abs()) };
    let mut worst: f64 = 0.0;
    let mut redrawn = 0;
    let mut done = 0;
    while done < probes {
        let x: Vec<f64> = (0..sizes[0]).map(|_| rng.random_range(-2.0..2.0)).collect();
        let u: Vec<f64> = (0..*sizes.last().unwrap()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let loss = |net: &Mlp, x: &[f64]| -> f64 { net.forward(x).unwrap().iter().zip(&u).map(|(a, b)| a * b).sum() };
        let grads = net.backward(&net.forward_cached(&x).unwrap(), &u).unwrap();
        let base = activation_pattern(sizes, &params, &x);

        let k = rng.random_range(0..n_params);
        let (mut pp, mut pm) = (params.clone(), params.clone());
        pp[k] += h;
        pm[k] -= h;
        let i = rng.random_range(0..sizes[0]);
        let (mut xp, mut xm) = (x.clone(), x.clone());
        xp[i] += h;
        xm[i] -= h;
        let flat = activation_pattern(sizes, &pp, &x) == base
            && activation_pattern(sizes, &pm, &x) == base
            && activation_pattern(sizes, &params, &xp) == base
            && activation_pattern(sizes, &params, &xm) == base;
        if !flat {
            redrawn += 1;
            continue;
        }
        let plus = Mlp::from_params(sizes, pp, 0.01).unwrap();
        let minus = Mlp::from_params(sizes, pm, 0.01).unwrap();
        let numeric = (loss(&plus, &x) - loss(&minus, &x)) / (2.0 * h);
        worst = worst.max(rel(grads.params[k], numeric));
        let numeric = (loss(&net, &xp) - loss(&net, &xm)) / (2.0 * h);
        worst = worst.max(rel(grads.input[i], numeric));
        done += 1;
    }
    (worst, redrawn)
}

fn gradient_check(r: &mut Report) {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let high = [&[HIGH_OBS_DIM][..], &HIGH_HIDDEN, &[HIGH_ACTION_DIM]].concat();
    let low = [&[LOW_OBS_DIM][..], &LOW_HIDDEN, &[LOW_ACTION_DIM]].concat();
    let (e_high, r_high) = gradient_error(&high, 100, &mut rng);
    let (e_low, r_low) = gradient_error(&low, 100, &mut rng);
    r.line(
        5,
        "MLP gradient check",
        e_high < 1e-4 && e_low < 1e-4,
        format!(
            "max relative error {high:?}: {e_high:.2e}, {low:?}: {e_low:.2e} ({} probes redrawn at kinks)",
            r_high + r_low
        ),
    );
}

fn gae_oracle(r: &mut Report) {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (gamma, lambda) = (0.99, 0.95);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let n = rng.random_range(1..=50);
        let rewards: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let values: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let dones: Vec<bool> = (0..n).map(|_| rng.random_bool(0.1)).collect();
        let last = rng.random_range(-2.0..2.0);
        let (adv, ret) = compute_gae(&rewards, &values, &dones, last, gamma, lambda).unwrap();
        let next_value = |t: usize| if t + 1 < n { values[t + 1] } else { last };
        for t in 0..n {
            let mut expect = 0.0;
            let mut discount = 1.0;
            for l in t..n {
                let bootstrap = if dones[l] { 0.0 } else { gamma * next_value(l) };
                expect += discount * (rewards[l] + bootstrap - values[l]);
                if dones[l] {
                    break;
                }
                discount *= gamma * lambda;
            }
            worst = worst.max((adv[t] - expect).abs());
            worst = worst.max((ret[t] - (expect + values[t])).abs());
        }
    }
    r.line(6, "GAE brute-force oracle", worst < 1e-10, format!("max deviation {worst:.3e} over 1000 episodes"));
}

fn random_state(model: &RobotModel, rng: &mut ChaCha8Rng) -> RobotState {
    let base = reset(model, rng.random(), 0.2);
    let v = |rng: &mut ChaCha8Rng, s: f64| Vector3::new(rng.random_range(-s..s), rng.random_range(-s..s), rng.random_range(-s..s));
    let q = UnitQuaternion::from_euler_angles(rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3), rng.random_range(-PI..PI));
    let mut qd = [0.0; NUM_JOINTS];
    for x in &mut qd {
        *x = rng.random_range(-5.0..5.0);
    }
    let mut p = base.base_position;
    p.z += rng.random_range(-0.05..0.05);
    RobotState::from_coordinates(model, p, q, v(rng, 1.5), v(rng, 2.0), base.joint_angles, qd)
}

fn cost_assembly(r: &mut Report) {
    let model = RobotModel::default();
    let weights = CostWeights::default();
    let table = [120.0, 500.0, 0.5, 0.02, 1.0, 1.5e4, 200.0, 100.0, 0.5, 300.0];
    let loaded = ExperimentConfig::default().env_config(TrainMode::Multi).unwrap().weights;
    let defaults = weights.0 == table && loaded.0 == table;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let s = random_state(&model, &mut rng);
        let torques: [f64; NUM_JOINTS] = std::array::from_fn(|_| rng.random_range(-20.0..20.0));
        let action: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
        let prev: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
        let phase: [u8; NUM_LEGS] = std::array::from_fn(|_| rng.random_range(0..2));
        let inputs = CostInputs::new(&s, rng.random_range(0.1..1.5), &torques, &action, &prev, phase);
        let b = compute_costs(&inputs, rng.random_range(0.3..1.0), &weights, &CostOptions::default()).unwrap();
        let mut total = 0.0;
        for i in 0..NUM_TERMS {
            total += table[i] * b.terms[i];
        }
        worst = worst.max((total - b.total).abs()).max((b.reward + total).abs());
    }
    r.line(
        7,
        "cost assembly",
        worst <= 1e-12 && defaults,
        format!("max deviation {worst:.3e}, default weights {}", if defaults { "match" } else { "differ" }),
    );
}

fn physics(r: &mut Report) {
    let dt = 0.0025;
    let model = RobotModel::default();
    let mut air = reset(&model, 0, 0.0);
    air.base_position.z += 1.0;
    let air = RobotState::from_coordinates(
        &model,
        air.base_position,
        air.base_orientation,
        air.base_linear_velocity,
        air.base_angular_velocity,
        air.joint_angles,
        air.joint_velocities,
    );
    let n = step_dynamics(&model, &air, &[0.0; NUM_JOINTS], dt).unwrap();
    let acc = (n.base_linear_velocity.z - air.base_linear_velocity.z) / dt;
    let fall_ok = (acc + 9.81).abs() <= 1e-6;

    let weightless = RobotModel {
        gravity: 0.0,
        ..RobotModel::default()
    };
    let mut s = RobotState::from_coordinates(
        &weightless,
        air.base_position,
        air.base_orientation,
        Vector3::new(0.4, -0.2, 0.1),
        Vector3::new(0.7, -1.1, 0.5),
        air.joint_angles,
        [0.0; NUM_JOINTS],
    );
    let mut drift: f64 = 0.0;
    for _ in 0..400 {
        let n = step_dynamics(&weightless, &s, &[0.0; NUM_JOINTS], dt).unwrap();
        drift = drift
            .max((n.linear_momentum(&weightless) - s.linear_momentum(&weightless)).norm())
            .max((n.angular_momentum(&weightless) - s.angular_momentum(&weightless)).norm());
        s = n;
    }
    let momentum_ok = drift < 1e-9;

    let gains = PdGains::default();
    let target = model.nominal_joint_angles();
    let start = reset(&model, 0, 0.0);
    let mut s = start.clone();
    let hold = standing_torques(&model, &target);
    for _ in 0..400 {
        let pd = pd_torque(&target, &s, &gains, model.torque_limit);
        let tau: [f64; NUM_JOINTS] = std::array::from_fn(|j| pd[j] + hold[j]);
        s = step_dynamics(&model, &s, &tau, dt).unwrap();
    }
    let stand = (s.base_position - start.base_position).norm();
    let stand_ok = stand < 1e-3;
    r.line(
        8,
        "physics sanity",
        fall_ok && momentum_ok && stand_ok,
        format!("free-fall acc {acc:.9}, zero-g momentum drift {drift:.2e}/step, standing drift {stand:.2e} m over 1 s"),
    );
}

fn read_tree(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.extension().is_some_and(|x| x == "csv") {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn audit(r: &mut Report) {
    let mut cfg = ExperimentConfig::default();
    cfg.train.iterations = 2;
    cfg.train.steps_per_iteration = 512;
    cfg.train.num_envs = 2;
    cfg.train.minibatch_size = 128;
    cfg.train.seed = 11;
    let eval = EvalConfig {
        velocities: vec![0.3, 0.9],
        duration: 2.5,
        ..EvalConfig::default()
    };
    let run = |dir: &Path| {
        let out = train_run(&cfg, TrainMode::Multi, dir, |_| {}).unwrap();
        let ck = Checkpoint::load(&dir.join("checkpoint.bin")).unwrap();
        assert_eq!(ck, out.checkpoint);
        evaluate_to_dir(&ck, &eval, "multi", &dir.join("eval")).unwrap();
        read_tree(dir)
    };
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (ta, tb) = (run(a.path()), run(b.path()));
    let identical = !ta.is_empty() && ta == tb;
    r.line(13, "CSV regeneration", identical, format!("{} CSV files compared byte for byte", ta.len()));
}

fn config_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn output_dir(name: &str) -> PathBuf {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../target/acceptance").join(name);
    let _ = fs::remove_dir_all(&dir);
    dir
}

fn at(results: &[TrackingResult], v: f64) -> &TrackingResult {
    results.iter().find(|t| t.command == v).expect("evaluated velocity")
}

fn smoke_training(r: &mut Report) {
    let cfg = ExperimentConfig::load(&config_path("smoke_trot.toml")).unwrap();
    let start = Instant::now();
    let out = train_run(&cfg, TrainMode::Single(GaitKind::Trot), &output_dir("smoke"), |m| {
        if m.iteration % 25 == 0 {
            eprintln!("smoke iter {} err {:.3} v {:.3}", m.iteration, m.mean_abs_velocity_error, m.mean_forward_velocity);
        }
    })
    .unwrap();
    let minutes = start.elapsed().as_secs_f64() / 60.0;
    let eval = EvalConfig {
        velocities: vec![0.6],
        ..EvalConfig::default()
    };
    let report = evaluate_to_dir(&out.checkpoint, &eval, "smoke", &output_dir("smoke_eval")).unwrap();
    let t = &report.results[0];
    let overlap = t.overlap.map_or(0.0, |o| o.ratio);
    let pass = out.manifest.total_steps <= 2_000_000 && minutes <= 60.0 && t.tracking_error < 0.3 && overlap >= 0.6;
    r.line(
        9,
        "smoke trot training",
        pass,
        format!(
            "{} steps in {minutes:.1} min, tracking error {:.3} m/s (v {:.3}), diagonal overlap {overlap:.3}, fell {}",
            out.manifest.total_steps, t.tracking_error, t.mean_forward_velocity, t.fell
        ),
    );
}

fn suite(mode: SuiteMode) -> Vec<SuiteRun> {
    let cfg = ExperimentConfig::load(&config_path("suite.toml")).unwrap();
    run_gait_suite(mode, &cfg, &[0, 1, 2], &EvalConfig::default(), &output_dir(&mode.to_string()), |label, m| {
        if m.iteration % 50 == 0 {
            eprintln!("{label} iter {} err {:.3}", m.iteration, m.mean_abs_velocity_error);
        }
    })
    .unwrap()
}

fn curriculum_table(r: &Report) {
    let runs = suite(SuiteMode::Curriculum);
    println!("    label                 stopped/evaluated  fell  mean tracking error");
    let mut rows = 0;
    for run in &runs {
        let res = &run.report.results;
        let stopped = res.iter().filter(|t| t.stopped()).count();
        let fell = res.iter().filter(|t| t.fell).count();
        let err = res.iter().map(|t| t.tracking_error).sum::<f64>() / res.len() as f64;
        println!("    {:22} {stopped}/{}  {fell}  {err:.3}", run.spec.label, res.len());
        rows += 1;
    }
    r.soft(10, "curriculum comparison table", rows == 6, format!("{rows} runs tabulated"));
}

fn gait_trend(r: &Report) {
    let runs = suite(SuiteMode::Single);
    let mut wins = 0;
    for seed in 0..3u64 {
        let err = |g: GaitKind| {
            let run = runs
                .iter()
                .find(|x| x.spec.mode == TrainMode::Single(g) && x.spec.config.train.seed == seed)
                .unwrap();
            at(&run.report.results, 1.5).tracking_error
        };
        let (trot, pace, bound) = (err(GaitKind::Trot), err(GaitKind::Pace), err(GaitKind::Bound));
        let win = bound < trot;
        wins += usize::from(win);
        println!("    seed {seed}: error at 1.5 m/s trot {trot:.3} pace {pace:.3} bound {bound:.3} -> {}", if win { "pass" } else { "fail" });
    }
    r.soft(11, "bound beats trot at 1.5 m/s", wins >= 2, format!("{wins}/3 seeds"));
}

fn period_trend(r: &Report) {
    let cfg = ExperimentConfig::load(&config_path("suite.toml")).unwrap();
    let runs = run_gait_suite(SuiteMode::Multi, &cfg, &[0], &EvalConfig::default(), &output_dir("multi"), |_, _| {}).unwrap();
    let periods: Vec<f64> = runs[0].report.results.iter().map(|t| t.mean_period).collect();
    let inversions = periods.windows(2).filter(|w| w[1] > w[0]).count();
    r.soft(
        12,
        "multi-gait period trend",
        inversions <= 1,
        format!("periods {periods:.3?} at {:?} m/s, {inversions} inversion(s)", cpgait_core::bench::DEFAULT_VELOCITIES),
    );
}

fn main() {
    let mut r = Report { failures: Vec::new() };
    kernels(&mut r);
    synchronizer(&mut r);
    curriculum(&mut r);
    gait_tables(&mut r);
    gradient_check(&mut r);
    gae_oracle(&mut r);
    cost_assembly(&mut r);
    physics(&mut r);
    if std::env::var("CPGAIT_FULL_ACCEPTANCE").is_ok_and(|v| v == "1") {
        smoke_training(&mut r);
        curriculum_table(&r);
        gait_trend(&r);
        period_trend(&r);
    } else {
        r.skip(9, "smoke trot training");
        r.skip(10, "curriculum comparison table");
        r.skip(11, "bound beats trot at 1.5 m/s");
        r.skip(12, "multi-gait period trend");
    }
    audit(&mut r);
    if !r.failures.is_empty() {
        eprintln!("failed criteria: {:?}", r.failures);
        std::process::exit(1);
    }
}
