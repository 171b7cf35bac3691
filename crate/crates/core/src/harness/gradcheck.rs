//! Analytic-versus-finite-difference gradient suite behind `lcv gradcheck`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::cayley::{skew_len, DiagParams, SkewParams};
use crate::error::Result;
use crate::harness::loss::matching_loss;
use crate::harness::synth::{generate, SyntheticSpec};
use crate::kernel::{assemble_kernel, kernel_grad, KernelGradient};
use crate::linalg::Mat;
use crate::optim::finite_difference_oracle;

pub const FD_STEP: f64 = 1e-5;
pub const REL_TOLERANCE: f64 = 1e-5;

#[derive(Debug, Clone, Serialize)]
pub struct CheckOutcome {
    pub name: String,
    pub instances: usize,
    pub worst_relative_error: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradcheckReport {
    pub checks: Vec<CheckOutcome>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

/// `max |a - b| / max(max |a|, max |b|)` over all parameters.
pub fn relative_error(analytic: &KernelGradient, numeric: &KernelGradient) -> f64 {
    let (a, b) = (analytic.flatten(), numeric.flatten());
    let num = a
        .iter()
        .zip(&b)
        .fold(0.0_f64, |m, (x, y)| m.max((x - y).abs()));
    let den = a.iter().chain(&b).fold(0.0_f64, |m, x| m.max(x.abs()));
    if den == 0.0 {
        num
    } else {
        num / den
    }
}

fn random_params(c: usize, scale: f64, rng: &mut ChaCha8Rng) -> Result<(SkewParams, DiagParams)> {
    let s = SkewParams::new(
        c,
        (0..skew_len(c))
            .map(|_| rng.gen_range(-scale..scale))
            .collect(),
    )?;
    let t = DiagParams::new((0..c).map(|_| rng.gen_range(-scale..scale)).collect())?;
    Ok((s, t))
}

fn outcome(name: &str, errors: &[f64]) -> CheckOutcome {
    let worst = errors.iter().copied().fold(0.0_f64, f64::max);
    CheckOutcome {
        name: name.to_string(),
        instances: errors.len(),
        worst_relative_error: worst,
        passed: worst < REL_TOLERANCE && errors.iter().all(|e| e.is_finite()),
    }
}

/// Linear kernel losses `L(W) = <A, W>` (trace for `A = I`) at random
/// parameters, cycling through `c` in {2, 6, 16}.
pub fn check_kernel_losses(instances: usize, seed: u64) -> Result<CheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut errors = Vec::with_capacity(instances);
    for n in 0..instances {
        let c = [2, 6, 16][n % 3];
        let (s, t) = random_params(c, 1.0, &mut rng)?;
        let a = if n % 4 == 0 {
            Mat::identity(c, c)
        } else {
            Mat::from_fn(c, c, |_, _| rng.gen_range(-1.0..1.0))
        };
        let analytic = kernel_grad(&assemble_kernel(&s, &t)?, &a)?;
        let numeric = finite_difference_oracle(
            |s, t| Ok(assemble_kernel(s, t)?.w().component_mul(&a).sum()),
            &s,
            &t,
            FD_STEP,
        )?;
        errors.push(relative_error(&analytic, &numeric));
    }
    Ok(outcome("kernel trace-type losses", &errors))
}

/// Softmax matching loss through the learnable cost volume on 4-channel
/// 4x4 problems with a 3x3 window.
pub fn check_matching_loss(instances: usize, seed: u64) -> Result<CheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut errors = Vec::with_capacity(instances);
    for _ in 0..instances {
        let inst = generate(&SyntheticSpec {
            height: 4,
            width: 4,
            signal_channels: 2,
            noise_channels: 2,
            max_displacement: 1,
            seed: rng.gen(),
            ..SyntheticSpec::default()
        })?;
        let batch = [inst];
        let (s, t) = random_params(4, 0.5, &mut rng)?;
        let k = assemble_kernel(&s, &t)?;
        let (_, dl_dw) = matching_loss(&batch, &k, 3, 3)?;
        let analytic = kernel_grad(&k, &dl_dw)?;
        let numeric = finite_difference_oracle(
            |s, t| Ok(matching_loss(&batch, &assemble_kernel(s, t)?, 3, 3)?.0),
            &s,
            &t,
            FD_STEP,
        )?;
        errors.push(relative_error(&analytic, &numeric));
    }
    Ok(outcome(
        "softmax matching loss through the cost volume",
        &errors,
    ))
}

pub fn run_gradcheck(instances: usize, seed: u64) -> Result<GradcheckReport> {
    Ok(GradcheckReport {
        checks: vec![
            check_kernel_losses(instances, seed)?,
            check_matching_loss(instances, seed.wrapping_add(1))?,
        ],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_passes() {
        let report = run_gradcheck(6, 0).unwrap();
        for c in &report.checks {
            assert!(c.passed, "{} worst {:e}", c.name, c.worst_relative_error);
        }
    }

    #[test]
    fn relative_error_detects_mismatch() {
        let a = KernelGradient {
            d_skew: vec![1.0],
            d_diag: vec![2.0, 0.0],
        };
        let mut b = a.clone();
        assert_eq!(relative_error(&a, &b), 0.0);
        b.d_diag[1] = 0.2;
        assert!((relative_error(&a, &b) - 0.1).abs() < 1e-15);
    }
}
