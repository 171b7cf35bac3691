//! Synthetic correspondence problems with known integer flow.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::costvolume::{FeatureMap, FlowField};
use crate::error::{LcvError, Result};
use crate::linalg::Mat;

/// Side of the square blocks sharing one displacement.
const FLOW_BLOCK: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub height: usize,
    pub width: usize,
    /// Channels carrying a random unit vector that moves with the flow.
    pub signal_channels: usize,
    /// Channels of independent per-frame noise.
    pub noise_channels: usize,
    /// Per-entry std of the noise channels; defaults to the per-entry scale
    /// of the signal, `1 / sqrt(signal_channels)`.
    pub noise_channel_std: Option<f64>,
    /// Optional `c x c` channel mixing applied to both frames, row-major rows.
    pub mixing: Option<Vec<Vec<f64>>>,
    pub max_displacement: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            height: 32,
            width: 32,
            signal_channels: 4,
            noise_channels: 12,
            noise_channel_std: None,
            mixing: None,
            max_displacement: 2,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn channels(&self) -> usize {
        self.signal_channels + self.noise_channels
    }

    pub fn noise_std(&self) -> f64 {
        self.noise_channel_std
            .unwrap_or(1.0 / (self.signal_channels.max(1) as f64).sqrt())
    }

    pub fn mixing_matrix(&self) -> Result<Option<Mat>> {
        let Some(rows) = &self.mixing else {
            return Ok(None);
        };
        let c = self.channels();
        if rows.len() != c || rows.iter().any(|r| r.len() != c) {
            return Err(LcvError::DimensionMismatch(format!(
                "mixing matrix must be {c}x{c}"
            )));
        }
        let m = Mat::from_fn(c, c, |i, j| rows[i][j]);
        if !m.iter().all(|x| x.is_finite()) {
            return Err(LcvError::NonFinite("mixing matrix"));
        }
        Ok(Some(m))
    }

    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return Err(LcvError::InvalidArgument(
                "frame size must be positive".into(),
            ));
        }
        if self.signal_channels == 0 {
            return Err(LcvError::InvalidArgument(
                "need at least one signal channel".into(),
            ));
        }
        if self.max_displacement >= self.height.min(self.width) {
            return Err(LcvError::InvalidArgument(format!(
                "max_displacement {} does not fit a {}x{} frame",
                self.max_displacement, self.height, self.width
            )));
        }
        if !(self.noise_std() >= 0.0 && self.noise_std().is_finite()) {
            return Err(LcvError::InvalidArgument(
                "noise_channel_std must be nonnegative".into(),
            ));
        }
        self.mixing_matrix()?;
        Ok(())
    }
}

/// Two frames of features and the flow taking the first onto the second.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticInstance {
    pub f1: FeatureMap,
    pub f2: FeatureMap,
    pub gt: FlowField,
}

/// Draws one instance. Signal channels of `f1` are an exact resample of
/// `f2` under the ground-truth flow: `f1(i, j) = f2(i + dy, j + dx)`.
pub fn generate(spec: &SyntheticSpec) -> Result<SyntheticInstance> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (h, w, s) = (spec.height, spec.width, spec.signal_channels);
    let c = spec.channels();
    let mut f2 = FeatureMap::zeros(c, h, w);
    for i in 0..h {
        for j in 0..w {
            let v = random_unit(s, &mut rng);
            for (ch, x) in v.into_iter().enumerate() {
                f2.set(ch, i, j, x);
            }
        }
    }

    let md = spec.max_displacement as isize;
    let (bh, bw) = (h.div_ceil(FLOW_BLOCK), w.div_ceil(FLOW_BLOCK));
    let block_flow: Vec<(isize, isize)> = (0..bh * bw)
        .map(|_| (rng.gen_range(-md..=md), rng.gen_range(-md..=md)))
        .collect();
    let mut gt = FlowField::zeros(h, w);
    let mut f1 = FeatureMap::zeros(c, h, w);
    for i in 0..h {
        for j in 0..w {
            let (dx, dy) = block_flow[(i / FLOW_BLOCK) * bw + j / FLOW_BLOCK];
            // Keep the match inside the frame; clamping never grows |d|.
            let dy = dy.clamp(-(i as isize), (h - 1 - i) as isize);
            let dx = dx.clamp(-(j as isize), (w - 1 - j) as isize);
            gt.set(i, j, dx as f64, dy as f64);
            let (ti, tj) = ((i as isize + dy) as usize, (j as isize + dx) as usize);
            for ch in 0..s {
                f1.set(ch, i, j, f2.get(ch, ti, tj));
            }
        }
    }

    let noise = spec.noise_std();
    for f in [&mut f1, &mut f2] {
        for ch in s..c {
            for x in f.plane_mut(ch) {
                let z: f64 = StandardNormal.sample(&mut rng);
                *x = noise * z;
            }
        }
    }

    if let Some(m) = spec.mixing_matrix()? {
        f1 = f1.transform_channels(&m)?;
        f2 = f2.transform_channels(&m)?;
    }
    Ok(SyntheticInstance { f1, f2, gt })
}

fn random_unit(dim: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut *rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::costvolume::{decode_flow_argmax, epe, vanilla_cost_volume};

    #[test]
    fn static_scene_without_noise() {
        let spec = SyntheticSpec {
            noise_channels: 0,
            max_displacement: 0,
            height: 12,
            width: 10,
            ..SyntheticSpec::default()
        };
        let inst = generate(&spec).unwrap();
        assert_eq!(inst.f1, inst.f2);
        assert_eq!(inst.gt, FlowField::zeros(12, 10));
    }

    #[test]
    fn same_seed_same_output() {
        let spec = SyntheticSpec {
            seed: 42,
            ..SyntheticSpec::default()
        };
        assert_eq!(generate(&spec).unwrap(), generate(&spec).unwrap());
        let other = SyntheticSpec {
            seed: 43,
            ..SyntheticSpec::default()
        };
        assert_ne!(generate(&spec).unwrap(), generate(&other).unwrap());
    }

    #[test]
    fn flow_is_integer_and_bounded_and_signal_is_resampled() {
        let spec = SyntheticSpec {
            max_displacement: 3,
            seed: 5,
            ..SyntheticSpec::default()
        };
        let inst = generate(&spec).unwrap();
        for i in 0..spec.height {
            for j in 0..spec.width {
                let (dx, dy) = inst.gt.get(i, j);
                assert_eq!(dx.fract(), 0.0);
                assert_eq!(dy.fract(), 0.0);
                assert!(dx.abs().max(dy.abs()) <= 3.0);
                let (ti, tj) = ((i as f64 + dy) as usize, (j as f64 + dx) as usize);
                for ch in 0..spec.signal_channels {
                    assert_eq!(inst.f1.get(ch, i, j), inst.f2.get(ch, ti, tj));
                }
                for ch in spec.signal_channels..spec.channels() {
                    assert_ne!(inst.f1.get(ch, i, j), inst.f2.get(ch, ti, tj));
                }
            }
        }
    }

    #[test]
    fn exact_recovery_without_noise() {
        for seed in 0..5 {
            let spec = SyntheticSpec {
                noise_channels: 0,
                max_displacement: 2,
                seed,
                ..SyntheticSpec::default()
            };
            let inst = generate(&spec).unwrap();
            let cv = vanilla_cost_volume(&inst.f1, &inst.f2, 5, 5).unwrap();
            assert_eq!(epe(&decode_flow_argmax(&cv), &inst.gt).unwrap(), 0.0);
        }
    }

    #[test]
    fn mixing_is_applied_to_both_frames() {
        let base = SyntheticSpec {
            height: 8,
            width: 8,
            signal_channels: 2,
            noise_channels: 1,
            seed: 3,
            ..SyntheticSpec::default()
        };
        let mixed = SyntheticSpec {
            mixing: Some(vec![
                vec![1.0, 2.0, 0.0],
                vec![0.0, 1.0, 0.0],
                vec![0.0, 0.0, 3.0],
            ]),
            ..base.clone()
        };
        let a = generate(&base).unwrap();
        let b = generate(&mixed).unwrap();
        let x = a.f2.get(0, 3, 4) + 2.0 * a.f2.get(1, 3, 4);
        assert!((b.f2.get(0, 3, 4) - x).abs() < 1e-15);
        assert!((b.f1.get(2, 1, 1) - 3.0 * a.f1.get(2, 1, 1)).abs() < 1e-15);
    }

    #[test]
    fn rejects_invalid_specs() {
        let too_far = SyntheticSpec {
            height: 4,
            width: 8,
            max_displacement: 4,
            ..SyntheticSpec::default()
        };
        assert!(generate(&too_far).is_err());
        let bad_mix = SyntheticSpec {
            mixing: Some(vec![vec![1.0]]),
            ..SyntheticSpec::default()
        };
        assert!(generate(&bad_mix).is_err());
    }
}
