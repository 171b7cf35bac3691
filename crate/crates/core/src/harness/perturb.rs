//! Robustness perturbations: illumination gamma, additive noise and a
//! random-content patch.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::costvolume::FeatureMap;
use crate::error::{LcvError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PerturbSpec {
    pub gamma: f64,
    pub noise_std: f64,
    pub patch_radius: usize,
}

impl Default for PerturbSpec {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl PerturbSpec {
    pub const IDENTITY: Self = Self {
        gamma: 1.0,
        noise_std: 0.0,
        patch_radius: 0,
    };

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(LcvError::InvalidArgument(format!(
                "gamma must be positive, got {}",
                self.gamma
            )));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(LcvError::InvalidArgument(format!(
                "noise_std must be nonnegative, got {}",
                self.noise_std
            )));
        }
        Ok(())
    }

    pub fn is_identity(&self) -> bool {
        *self == Self::IDENTITY
    }
}

/// `x -> sign(x) |x|^gamma` on a value already normalized to `[-1, 1]`.
pub fn gamma_curve(x: f64, gamma: f64) -> f64 {
    x.signum() * x.abs().powf(gamma)
}

/// Applies, in order: gamma to the first `signal_channels` channels after
/// normalizing them jointly by their max magnitude, a disc of fresh noise at
/// a random position, and additive `N(0, noise_std^2)` noise on every entry.
/// Neutral settings leave the input untouched.
pub fn perturb(
    f: &FeatureMap,
    p: &PerturbSpec,
    signal_channels: usize,
    seed: u64,
) -> Result<FeatureMap> {
    p.validate()?;
    if signal_channels > f.channels() {
        return Err(LcvError::DimensionMismatch(format!(
            "{signal_channels} signal channels in a {}-channel map",
            f.channels()
        )));
    }
    let (h, w) = (f.height(), f.width());
    let r = p.patch_radius;
    if r > 0 && (2 * r + 1 > h || 2 * r + 1 > w) {
        return Err(LcvError::InvalidArgument(format!(
            "patch of radius {r} does not fit a {h}x{w} frame"
        )));
    }
    let mut out = f.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    if p.gamma != 1.0 && signal_channels > 0 {
        let n = h * w;
        let signal = &mut out.data_mut()[..signal_channels * n];
        let scale = signal.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
        if scale > 0.0 {
            for x in signal.iter_mut() {
                *x = scale * gamma_curve(*x / scale, p.gamma);
            }
        }
    }

    if r > 0 {
        let rms = (f.data().iter().map(|x| x * x).sum::<f64>() / f.data().len() as f64).sqrt();
        let content = Normal::new(0.0, rms.max(f64::MIN_POSITIVE))
            .map_err(|e| LcvError::InvalidArgument(e.to_string()))?;
        let ci = rng.gen_range(r..h - r);
        let cj = rng.gen_range(r..w - r);
        let r2 = (r * r) as isize;
        for i in ci - r..=ci + r {
            for j in cj - r..=cj + r {
                let (di, dj) = (i as isize - ci as isize, j as isize - cj as isize);
                if di * di + dj * dj <= r2 {
                    for ch in 0..f.channels() {
                        out.set(ch, i, j, content.sample(&mut rng));
                    }
                }
            }
        }
    }

    if p.noise_std > 0.0 {
        let noise =
            Normal::new(0.0, p.noise_std).map_err(|e| LcvError::InvalidArgument(e.to_string()))?;
        for x in out.data_mut() {
            *x += noise.sample(&mut rng);
        }
    }
    Ok(out)
}
