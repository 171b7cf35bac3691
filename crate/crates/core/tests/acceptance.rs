//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fail.
//!
//! Run with `cargo test --release --test acceptance`.

use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use lcv::cayley::{
    cayley_forward, cayley_inverse, dlambda_dt, is_in_so_star, skew_len, so_star_path, unpack_skew,
    DiagParams, SkewParams,
};
use lcv::costvolume::{learnable_cost_volume, vanilla_cost_volume, wssd, CostVolume, FeatureMap};
use lcv::harness::gradcheck::run_gradcheck;
use lcv::harness::{run_experiment, ExperimentConfig, ExperimentResult, PerturbSpec};
use lcv::kernel::{
    assemble_kernel, factor_grad, kernel_grad, param_count, whitening_pca, whitening_zca, SpdKernel,
};
use lcv::optim::{
    cayley_sgd_step, stiefel_project, stiefel_retract, stiefel_sgd_step, OptimizerMode, TrainState,
};
use lcv::Mat;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        passed,
        detail: detail.into(),
    }
}

fn max_abs(m: &Mat) -> f64 {
    m.iter().fold(0.0_f64, |a, x| a.max(x.abs()))
}

fn orth_error(m: &Mat) -> f64 {
    let n = m.nrows();
    max_abs(&(m.transpose() * m - Mat::identity(n, n)))
}

fn random_skew(n: usize, scale: f64, rng: &mut ChaCha8Rng) -> SkewParams {
    SkewParams::new(
        n,
        (0..skew_len(n))
            .map(|_| rng.gen_range(-scale..scale))
            .collect(),
    )
    .unwrap()
}

fn random_kernel(c: usize, rng: &mut ChaCha8Rng) -> SpdKernel {
    let s = random_skew(c, 1.0, rng);
    let t = DiagParams::new((0..c).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
    assemble_kernel(&s, &t).unwrap()
}

fn random_features(c: usize, h: usize, w: usize, rng: &mut ChaCha8Rng) -> FeatureMap {
    FeatureMap::new(
        c,
        h,
        w,
        (0..c * h * w).map(|_| rng.sample(StandardNormal)).collect(),
    )
    .unwrap()
}

fn volume_diff(a: &CostVolume, b: &CostVolume) -> f64 {
    a.data()
        .iter()
        .zip(b.data())
        .fold(0.0_f64, |m, (x, y)| m.max((x - y).abs()))
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

fn cayley_suite() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut worst_orth, mut worst_trip, mut min_dist) = (0.0_f64, 0.0_f64, f64::INFINITY);
    let mut failures = 0;
    for case in 0..1000 {
        let n = [2, 8, 64, 128][case % 4];
        let s = unpack_skew(&random_skew(n, 5.0, &mut rng));
        let p = cayley_forward(&s).unwrap();
        let check = is_in_so_star(p.as_matrix());
        let orth = orth_error(p.as_matrix());
        let trip = max_abs(&(cayley_inverse(&p).unwrap() - &s));
        worst_orth = worst_orth.max(orth);
        worst_trip = worst_trip.max(trip);
        min_dist = min_dist.min(check.distance_to_minus_one);
        if !(orth < 1e-10
            && check.determinant > 0.0
            && check.distance_to_minus_one > 1e-8
            && trip < 1e-9)
        {
            failures += 1;
        }
    }
    let elapsed = started.elapsed();
    outcome(
        failures == 0 && elapsed < Duration::from_secs(30),
        format!(
            "1000 matrices, {failures} failures; worst orthogonality {worst_orth:.2e}, worst round trip {worst_trip:.2e}, \
             min distance of spectrum to -1 {min_dist:.2e}, {:.1}s",
            elapsed.as_secs_f64()
        ),
    )
}

fn identity_degeneracy() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let k = assemble_kernel(&SkewParams::zeros(16), &DiagParams::zeros(16)).unwrap();
    let mut worst = 0.0_f64;
    for _ in 0..100 {
        let f1 = random_features(16, 16, 16, &mut rng);
        let f2 = random_features(16, 16, 16, &mut rng);
        let a = learnable_cost_volume(&f1, &f2, &k, 5, 5).unwrap();
        let b = vanilla_cost_volume(&f1, &f2, 5, 5).unwrap();
        worst = worst.max(volume_diff(&a, &b));
    }
    outcome(
        worst <= 1e-12,
        format!("100 pairs, worst deviation {worst:.2e}"),
    )
}

fn whitening() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut worst_cv, mut worst_gram) = (0.0_f64, 0.0_f64);
    for case in 0..100 {
        let c = [2, 16][case % 2];
        let k = random_kernel(c, &mut rng);
        let q = whitening_pca(&k);
        let r = whitening_zca(&k);
        worst_gram = worst_gram
            .max(max_abs(&(q.transpose() * &q - k.w())))
            .max(max_abs(&(&r * &r - k.w())));
        let f1 = random_features(c, 8, 8, &mut rng);
        let f2 = random_features(c, 8, 8, &mut rng);
        let learned = learnable_cost_volume(&f1, &f2, &k, 5, 5).unwrap();
        for m in [&q, &r] {
            let white = vanilla_cost_volume(
                &f1.transform_channels(m).unwrap(),
                &f2.transform_channels(m).unwrap(),
                5,
                5,
            )
            .unwrap();
            worst_cv = worst_cv.max(volume_diff(&learned, &white));
        }
    }
    outcome(
        worst_cv < 1e-8 && worst_gram < 1e-10,
        format!("100 instances; cost volume identities {worst_cv:.2e}, Gram identities {worst_gram:.2e}"),
    )
}

fn wssd_expansion() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0_f64;
    for c in [2, 16] {
        let k = random_kernel(c, &mut rng);
        for _ in 0..10_000 {
            let a: Vec<f64> = (0..c).map(|_| rng.sample(StandardNormal)).collect();
            let b: Vec<f64> = (0..c).map(|_| rng.sample(StandardNormal)).collect();
            let quad = |x: &[f64], y: &[f64]| -> f64 {
                (0..c)
                    .map(|i| (0..c).map(|j| x[i] * k.w()[(i, j)] * y[j]).sum::<f64>())
                    .sum()
            };
            let expanded = quad(&a, &a) + quad(&b, &b) - 2.0 * quad(&a, &b);
            worst = worst.max((wssd(&a, &b, &k).unwrap() - expanded).abs());
        }
    }
    outcome(
        worst < 1e-10,
        format!("2 x 10^4 pairs, worst deviation {worst:.2e}"),
    )
}

fn gradient_gate() -> Outcome {
    let started = Instant::now();
    let report = run_gradcheck(20, 0).unwrap();
    let status = Command::new(env!("CARGO_BIN_EXE_lcv"))
        .args(["gradcheck", "--instances", "20"])
        .output()
        .expect("running lcv gradcheck");
    let elapsed = started.elapsed();
    let worst: Vec<String> = report
        .checks
        .iter()
        .map(|c| format!("{} {:.2e}", c.name, c.worst_relative_error))
        .collect();
    outcome(
        report.passed() && status.status.code() == Some(0) && elapsed < Duration::from_secs(120),
        format!(
            "{}; `lcv gradcheck` exit {:?}; {:.1}s",
            worst.join(", "),
            status.status.code(),
            elapsed.as_secs_f64()
        ),
    )
}

fn stiefel_suite() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (mut tangency, mut per_step, mut exact_zero) = (0.0_f64, 0.0_f64, true);
    let mut drift = 0.0_f64;
    for &n in &[4, 16, 64] {
        let mut x = cayley_forward(&unpack_skew(&random_skew(n, 1.0, &mut rng))).unwrap();
        exact_zero &= stiefel_retract(&x, &Mat::zeros(n, n)).unwrap().as_matrix() == x.as_matrix();
        for _ in 0..100 {
            let z = Mat::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
            let step = stiefel_project(x.as_matrix(), &z).unwrap();
            let m = x.as_matrix().transpose() * &step;
            tangency = tangency.max(max_abs(&(&m + m.transpose())));
            x = stiefel_retract(&x, &(step * 0.05)).unwrap();
            per_step = per_step.max(orth_error(x.as_matrix()));
        }
        drift = drift.max(orth_error(x.as_matrix()));
    }
    outcome(
        tangency <= 1e-10 && per_step < 1e-8 && drift < 1e-7 && exact_zero,
        format!(
            "tangency {tangency:.2e}, worst per-step orthogonality {per_step:.2e}, drift after 100 steps {drift:.2e}, \
             zero step exact: {exact_zero}"
        ),
    )
}

fn connectedness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mut endpoint, mut all_members, mut errors) = (0.0_f64, true, 0);
    for case in 0..100 {
        let n = [4, 8][case % 2];
        let p = cayley_forward(&unpack_skew(&random_skew(n, 3.0, &mut rng))).unwrap();
        match so_star_path(&p, 10) {
            Ok(path) => {
                endpoint = endpoint
                    .max(max_abs(&(path[0].as_matrix() - Mat::identity(n, n))))
                    .max(max_abs(&(path[path.len() - 1].as_matrix() - p.as_matrix())));
                all_members &=
                    path.len() == 11 && path.iter().all(|a| is_in_so_star(a.as_matrix()).member);
            }
            Err(_) => errors += 1,
        }
    }
    outcome(
        errors == 0 && endpoint < 1e-8 && all_members,
        format!("100 paths, {errors} errors; worst endpoint deviation {endpoint:.2e}, all intermediates in SO*: {all_members}"),
    )
}

fn parameter_count() -> Outcome {
    let (full, free) = param_count(&[64, 64, 128, 128, 128]).unwrap();
    outcome(
        full == 57_344,
        format!("{full} kernel entries ({free} free parameters)"),
    )
}

fn desk_config(mode: OptimizerMode) -> ExperimentConfig {
    let mut config = ExperimentConfig::default();
    config.synthetic.height = 32;
    config.synthetic.width = 32;
    config.synthetic.signal_channels = 4;
    config.synthetic.noise_channels = 12;
    config.window = [5, 5];
    config.perturb = PerturbSpec {
        noise_std: 0.1,
        ..PerturbSpec::IDENTITY
    };
    config.optimizer.max_steps = 500;
    config.optimizer.mode = mode;
    config
}

fn desk_run(mode: OptimizerMode) -> Vec<ExperimentResult> {
    let config = desk_config(mode);
    (0..10)
        .map(|seed| run_experiment(&config.with_seed(seed)).unwrap())
        .collect()
}

fn desk_experiment(results: &[ExperimentResult], elapsed: Duration) -> Outcome {
    let pick =
        |f: fn(&ExperimentResult) -> f64| median(&mut results.iter().map(f).collect::<Vec<_>>());
    let (ai, al) = (pick(|r| r.aepe_identity), pick(|r| r.aepe_learned));
    let (fi, fl) = (pick(|r| r.fl_identity), pick(|r| r.fl_learned));
    outcome(
        al < ai && fl <= fi && elapsed < Duration::from_secs(600),
        format!(
            "median AEPE identity {ai:.4} -> learned {al:.4}; median Fl-all {fi:.2}% -> {fl:.2}%; {:.1}s",
            elapsed.as_secs_f64()
        ),
    )
}

fn step_timing(c: usize, mode: OptimizerMode, rng: &mut ChaCha8Rng) -> f64 {
    let mut state = TrainState::identity(c);
    let steps = 10;
    let started = Instant::now();
    for _ in 0..steps {
        let a = Mat::from_fn(c, c, |_, _| rng.gen_range(-1.0..1.0));
        state = match mode {
            OptimizerMode::Cayley => {
                let g = kernel_grad(&state.kernel, &a).unwrap();
                cayley_sgd_step(&state, &g, 1e-3).unwrap()
            }
            OptimizerMode::Stiefel => {
                let (dl_dp, d_lambda) = factor_grad(&state.kernel, &a).unwrap();
                let d_diag: Vec<f64> = d_lambda
                    .iter()
                    .zip(state.kernel.diag_params().values())
                    .map(|(g, t)| g * dlambda_dt(*t))
                    .collect();
                stiefel_sgd_step(&state, &dl_dp, &d_diag, 1e-3).unwrap()
            }
        };
    }
    started.elapsed().as_secs_f64() * 1e3 / steps as f64
}

fn optimizer_consistency(cayley: &[ExperimentResult], stiefel: &[ExperimentResult]) -> Outcome {
    let worst = cayley
        .iter()
        .zip(stiefel)
        .map(|(a, b)| (a.aepe_learned - b.aepe_learned).abs() / a.aepe_learned.max(b.aepe_learned))
        .fold(0.0_f64, f64::max);
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let timings: Vec<String> = [64, 128]
        .iter()
        .map(|&c| {
            format!(
                "c={c}: cayley {:.2} ms/step, stiefel {:.2} ms/step",
                step_timing(c, OptimizerMode::Cayley, &mut rng),
                step_timing(c, OptimizerMode::Stiefel, &mut rng)
            )
        })
        .collect();
    outcome(
        worst < 0.10,
        format!(
            "worst per-seed relative AEPE gap {:.2}%; {}",
            worst * 100.0,
            timings.join("; ")
        ),
    )
}

fn main() -> ExitCode {
    let mut outcomes: Vec<(&str, Outcome)> = vec![
        ("Cayley correctness", cayley_suite()),
        ("identity degeneracy", identity_degeneracy()),
        ("whitening equivalences", whitening()),
        ("WSSD expansion", wssd_expansion()),
        ("gradient gate", gradient_gate()),
        ("Stiefel suite", stiefel_suite()),
        ("connectedness path", connectedness()),
        ("parameter count", parameter_count()),
    ];
    let started = Instant::now();
    let cayley = desk_run(OptimizerMode::Cayley);
    outcomes.push((
        "desk-scale learning",
        desk_experiment(&cayley, started.elapsed()),
    ));
    let stiefel = desk_run(OptimizerMode::Stiefel);
    outcomes.push((
        "optimizer consistency",
        optimizer_consistency(&cayley, &stiefel),
    ));

    let mut all = true;
    for (n, (name, o)) in outcomes.iter().enumerate() {
        all &= o.passed;
        println!(
            "criterion {:>2} [{}] {name}: {}",
            n + 1,
            if o.passed { "PASS" } else { "FAIL" },
            o.detail
        );
    }
    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
