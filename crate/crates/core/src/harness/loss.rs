//! Softmax matching loss over the displacement window.
//!
//! The `u * v` costs at each pixel are logits and the ground-truth
//! displacement is the label; the loss is the mean cross-entropy over all
//! pixels of all instances.

use rayon::prelude::*;

use crate::costvolume::{check_window, FeatureMap, FlowField};
use crate::error::{LcvError, Result};
use crate::harness::synth::SyntheticInstance;
use crate::kernel::SpdKernel;
use crate::linalg::Mat;

/// Loss and `dL/dW` for one batch of instances.
pub fn matching_loss(
    instances: &[SyntheticInstance],
    k: &SpdKernel,
    u: usize,
    v: usize,
) -> Result<(f64, Mat)> {
    check_window(u, v)?;
    if instances.is_empty() {
        return Err(LcvError::InvalidArgument(
            "matching loss needs at least one instance".into(),
        ));
    }
    let c = k.dim();
    let mut total = 0.0;
    let mut grad = Mat::zeros(c, c);
    for inst in instances {
        let (l, g) = instance_loss(&inst.f1, &inst.f2, &inst.gt, k, u, v)?;
        total += l;
        grad += g;
    }
    let n = instances.len() as f64;
    Ok((total / n, grad / n))
}

fn instance_loss(
    f1: &FeatureMap,
    f2: &FeatureMap,
    gt: &FlowField,
    k: &SpdKernel,
    u: usize,
    v: usize,
) -> Result<(f64, Mat)> {
    let c = k.dim();
    let (h, w) = (f1.height(), f1.width());
    if f1.channels() != c || f2.channels() != c || (f2.height(), f2.width()) != (h, w) {
        return Err(LcvError::DimensionMismatch(
            "instance features do not match the kernel".into(),
        ));
    }
    if (gt.height(), gt.width()) != (h, w) {
        return Err(LcvError::DimensionMismatch(
            "ground truth does not match the features".into(),
        ));
    }
    let (ru, rv) = ((u / 2) as isize, (v / 2) as isize);
    let a = f1.pixel_major();
    let b = f2.pixel_major();
    let wm = k.w();
    let mut wb = vec![0.0; b.len()];
    for (dst, src) in wb.chunks_mut(c).zip(b.chunks(c)) {
        for (r, d) in dst.iter_mut().enumerate() {
            *d = (0..c).map(|col| wm[(r, col)] * src[col]).sum();
        }
    }

    // Per-row partial sums, combined in row order for determinism.
    let rows: Vec<Result<(f64, Mat)>> = (0..h)
        .into_par_iter()
        .map(|i| {
            let mut loss = 0.0;
            let mut g = Mat::zeros(c, c);
            let mut logits = vec![0.0; u * v];
            let mut hvec = vec![0.0; c];
            for j in 0..w {
                let (gx, gy) = gt.get(i, j);
                let (lk, ll) = (gy as isize + ru, gx as isize + rv);
                if gx.fract() != 0.0 || gy.fract() != 0.0 || lk < 0 || ll < 0 || lk >= u as isize || ll >= v as isize {
                    return Err(LcvError::InvalidArgument(format!(
                        "ground truth ({gx}, {gy}) at ({i}, {j}) is not a cell of the {u}x{v} window"
                    )));
                }
                let label = lk as usize * v + ll as usize;
                let pa = &a[(i * w + j) * c..][..c];
                let target = |kl: usize| -> Option<usize> {
                    let ti = i as isize + (kl / v) as isize - ru;
                    let tj = j as isize + (kl % v) as isize - rv;
                    (ti >= 0 && tj >= 0 && ti < h as isize && tj < w as isize)
                        .then(|| (ti as usize * w + tj as usize) * c)
                };
                for (kl, z) in logits.iter_mut().enumerate() {
                    *z = match target(kl) {
                        Some(off) => pa.iter().zip(&wb[off..off + c]).map(|(x, y)| x * y).sum(),
                        None => 0.0,
                    };
                }
                let zmax = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let sum: f64 = logits.iter().map(|z| (z - zmax).exp()).sum();
                loss += zmax + sum.ln() - logits[label];
                hvec.fill(0.0);
                for (kl, z) in logits.iter().enumerate() {
                    let mut coeff = (z - zmax).exp() / sum;
                    if kl == label {
                        coeff -= 1.0;
                    }
                    if let Some(off) = target(kl) {
                        for (hc, bc) in hvec.iter_mut().zip(&b[off..off + c]) {
                            *hc += coeff * bc;
                        }
                    }
                }
                for (r, ar) in pa.iter().enumerate() {
                    for (col, hc) in hvec.iter().enumerate() {
                        g[(r, col)] += ar * hc;
                    }
                }
            }
            Ok((loss, g))
        })
        .collect();
    let n = (h * w) as f64;
    let mut loss = 0.0;
    let mut grad = Mat::zeros(c, c);
    for row in rows {
        let (l, g) = row?;
        loss += l;
        grad += g;
    }
    Ok((loss / n, grad / n))
}
