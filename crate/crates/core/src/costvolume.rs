//! Vanilla and learnable cost volumes, the WSSD quadratic form,
//! winner-take-all decoding and flow metrics.
//!
//! Index convention: `C[k, l, i, j]` compares pixel `(i, j)` of the first
//! frame with pixel `(i + k - (u-1)/2, j + l - (v-1)/2)` of the second, so `k`
//! is the vertical (row) displacement and `l` the horizontal one. Candidates
//! outside the frame cost 0.

use nalgebra::DVector;
use rayon::prelude::*;

use crate::error::{LcvError, Result};
use crate::kernel::SpdKernel;
use crate::linalg::Mat;
use crate::tensor::Tensor;

/// Features of one frame, stored channels x height x width.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl FeatureMap {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(LcvError::InvalidArgument(format!(
                "feature map shape {channels}x{height}x{width} has an empty axis"
            )));
        }
        if data.len() != channels * height * width {
            return Err(LcvError::DimensionMismatch(format!(
                "feature map {channels}x{height}x{width} given {} values",
                data.len()
            )));
        }
        if !data.iter().all(|x| x.is_finite()) {
            return Err(LcvError::NonFinite("feature map"));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, ch: usize, i: usize, j: usize) -> f64 {
        self.data[(ch * self.height + i) * self.width + j]
    }

    pub(crate) fn set(&mut self, ch: usize, i: usize, j: usize, v: f64) {
        self.data[(ch * self.height + i) * self.width + j] = v;
    }

    pub fn plane(&self, ch: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.data[ch * n..(ch + 1) * n]
    }

    pub(crate) fn plane_mut(&mut self, ch: usize) -> &mut [f64] {
        let n = self.height * self.width;
        &mut self.data[ch * n..(ch + 1) * n]
    }

    /// Feature vector of one pixel.
    pub fn pixel(&self, i: usize, j: usize) -> DVector<f64> {
        DVector::from_fn(self.channels, |ch, _| self.get(ch, i, j))
    }

    /// Copy with the channel vector of every pixel replaced by `m * f`.
    pub fn transform_channels(&self, m: &Mat) -> Result<Self> {
        if m.shape() != (self.channels, self.channels) {
            return Err(LcvError::DimensionMismatch(format!(
                "channel transform is {}x{}, features have {} channels",
                m.nrows(),
                m.ncols(),
                self.channels
            )));
        }
        let pm = self.pixel_major();
        let c = self.channels;
        let mapped = apply_per_pixel(m, &pm, c);
        Ok(Self::from_pixel_major(c, self.height, self.width, &mapped))
    }

    /// Layout `[i][j][ch]`, so each pixel's channel vector is contiguous.
    pub(crate) fn pixel_major(&self) -> Vec<f64> {
        let (c, n) = (self.channels, self.height * self.width);
        let mut out = vec![0.0; c * n];
        for ch in 0..c {
            for (p, v) in self.plane(ch).iter().enumerate() {
                out[p * c + ch] = *v;
            }
        }
        out
    }

    fn from_pixel_major(c: usize, h: usize, w: usize, pm: &[f64]) -> Self {
        let n = h * w;
        let mut data = vec![0.0; c * n];
        for p in 0..n {
            for ch in 0..c {
                data[ch * n + p] = pm[p * c + ch];
            }
        }
        Self {
            channels: c,
            height: h,
            width: w,
            data,
        }
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor {
            dims: vec![self.channels, self.height, self.width],
            data: self.data.clone(),
        }
    }

    pub fn from_tensor(t: Tensor) -> Result<Self> {
        match t.dims[..] {
            [c, h, w] => Self::new(c, h, w, t.data),
            _ => Err(LcvError::DimensionMismatch(format!(
                "feature tensor must have rank 3, got dims {:?}",
                t.dims
            ))),
        }
    }
}

/// `out[p] = m * x[p]` for every pixel-major channel vector, reducing in
/// ascending channel order.
fn apply_per_pixel(m: &Mat, pm: &[f64], c: usize) -> Vec<f64> {
    let mut out = vec![0.0; pm.len()];
    out.par_chunks_mut(c)
        .zip(pm.par_chunks(c))
        .for_each(|(dst, src)| {
            for (r, d) in dst.iter_mut().enumerate() {
                let mut acc = 0.0;
                for (col, x) in src.iter().enumerate() {
                    acc += m[(r, col)] * x;
                }
                *d = acc;
            }
        });
    out
}

/// Matching costs over a `u x v` displacement window, stored `u x v x h x w`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostVolume {
    u: usize,
    v: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl CostVolume {
    pub fn new(u: usize, v: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        check_window(u, v)?;
        if height == 0 || width == 0 {
            return Err(LcvError::InvalidArgument(
                "cost volume has an empty spatial axis".into(),
            ));
        }
        if data.len() != u * v * height * width {
            return Err(LcvError::DimensionMismatch(format!(
                "cost volume {u}x{v}x{height}x{width} given {} values",
                data.len()
            )));
        }
        if !data.iter().all(|x| x.is_finite()) {
            return Err(LcvError::NonFinite("cost volume"));
        }
        Ok(Self {
            u,
            v,
            height,
            width,
            data,
        })
    }

    pub fn window(&self) -> (usize, usize) {
        (self.u, self.v)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, k: usize, l: usize, i: usize, j: usize) -> f64 {
        self.data[((k * self.v + l) * self.height + i) * self.width + j]
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        Self {
            data: self.data.iter().map(|x| alpha * x).collect(),
            ..self.clone()
        }
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor {
            dims: vec![self.u, self.v, self.height, self.width],
            data: self.data.clone(),
        }
    }

    pub fn from_tensor(t: Tensor) -> Result<Self> {
        match t.dims[..] {
            [u, v, h, w] => Self::new(u, v, h, w, t.data),
            _ => Err(LcvError::DimensionMismatch(format!(
                "cost volume tensor must have rank 4, got dims {:?}",
                t.dims
            ))),
        }
    }
}

/// Dense flow, stored `2 x h x w`: plane 0 horizontal, plane 1 vertical
/// displacement in pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl FlowField {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(LcvError::InvalidArgument(
                "flow field has an empty axis".into(),
            ));
        }
        if data.len() != 2 * height * width {
            return Err(LcvError::DimensionMismatch(format!(
                "flow field 2x{height}x{width} given {} values",
                data.len()
            )));
        }
        if !data.iter().all(|x| x.is_finite()) {
            return Err(LcvError::NonFinite("flow field"));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![0.0; 2 * height * width],
        }
    }

    /// Same displacement at every pixel.
    pub fn constant(height: usize, width: usize, dx: f64, dy: f64) -> Self {
        let n = height * width;
        let mut data = vec![dx; 2 * n];
        data[n..].fill(dy);
        Self {
            height,
            width,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// `(dx, dy)` at pixel `(i, j)`.
    pub fn get(&self, i: usize, j: usize) -> (f64, f64) {
        let p = i * self.width + j;
        (self.data[p], self.data[self.height * self.width + p])
    }

    pub(crate) fn set(&mut self, i: usize, j: usize, dx: f64, dy: f64) {
        let p = i * self.width + j;
        let n = self.height * self.width;
        self.data[p] = dx;
        self.data[n + p] = dy;
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor {
            dims: vec![2, self.height, self.width],
            data: self.data.clone(),
        }
    }

    pub fn from_tensor(t: Tensor) -> Result<Self> {
        match t.dims[..] {
            [2, h, w] => Self::new(h, w, t.data),
            _ => Err(LcvError::DimensionMismatch(format!(
                "flow tensor must have dims [2, h, w], got {:?}",
                t.dims
            ))),
        }
    }
}

pub(crate) fn check_window(u: usize, v: usize) -> Result<()> {
    if u.is_multiple_of(2) || v.is_multiple_of(2) {
        return Err(LcvError::InvalidArgument(format!(
            "window extents must be odd, got {u}x{v}"
        )));
    }
    Ok(())
}

fn check_pair(f1: &FeatureMap, f2: &FeatureMap) -> Result<()> {
    if (f1.channels, f1.height, f1.width) != (f2.channels, f2.height, f2.width) {
        return Err(LcvError::DimensionMismatch(format!(
            "feature maps {}x{}x{} and {}x{}x{}",
            f1.channels, f1.height, f1.width, f2.channels, f2.height, f2.width
        )));
    }
    Ok(())
}

/// Correlates pixel-major features; every output cell is an independent
/// ascending-channel dot product, so the result does not depend on the
/// parallel schedule.
fn correlate(a: &[f64], b: &[f64], c: usize, h: usize, w: usize, u: usize, v: usize) -> Vec<f64> {
    let (ru, rv) = ((u / 2) as isize, (v / 2) as isize);
    let mut data = vec![0.0; u * v * h * w];
    data.par_chunks_mut(h * w)
        .enumerate()
        .for_each(|(kl, plane)| {
            let dy = (kl / v) as isize - ru;
            let dx = (kl % v) as isize - rv;
            for i in 0..h {
                let ti = i as isize + dy;
                if ti < 0 || ti >= h as isize {
                    continue;
                }
                for j in 0..w {
                    let tj = j as isize + dx;
                    if tj < 0 || tj >= w as isize {
                        continue;
                    }
                    let pa = &a[(i * w + j) * c..][..c];
                    let pb = &b[(ti as usize * w + tj as usize) * c..][..c];
                    let mut acc = 0.0;
                    for ch in 0..c {
                        acc += pa[ch] * pb[ch];
                    }
                    plane[i * w + j] = acc;
                }
            }
        });
    data
}

/// `C[k,l,i,j] = <F1[:, i, j], F2[:, i + k - (u-1)/2, j + l - (v-1)/2]>`.
pub fn vanilla_cost_volume(
    f1: &FeatureMap,
    f2: &FeatureMap,
    u: usize,
    v: usize,
) -> Result<CostVolume> {
    check_pair(f1, f2)?;
    check_window(u, v)?;
    let data = correlate(
        &f1.pixel_major(),
        &f2.pixel_major(),
        f1.channels,
        f1.height,
        f1.width,
        u,
        v,
    );
    CostVolume::new(u, v, f1.height, f1.width, data)
}

/// Elliptical inner product `F1^T W F2` over the displacement window.
///
/// `W F2` is formed once per pixel before correlation; with `W = I` the
/// products `1 * x` and sums with `0 * y` are exact, so the result equals
/// the vanilla volume bitwise.
pub fn learnable_cost_volume(
    f1: &FeatureMap,
    f2: &FeatureMap,
    k: &SpdKernel,
    u: usize,
    v: usize,
) -> Result<CostVolume> {
    check_pair(f1, f2)?;
    check_window(u, v)?;
    if k.dim() != f1.channels {
        return Err(LcvError::DimensionMismatch(format!(
            "kernel of dimension {} with {}-channel features",
            k.dim(),
            f1.channels
        )));
    }
    let c = f1.channels;
    let wf2 = apply_per_pixel(k.w(), &f2.pixel_major(), c);
    let data = correlate(&f1.pixel_major(), &wf2, c, f1.height, f1.width, u, v);
    CostVolume::new(u, v, f1.height, f1.width, data)
}

/// Weighted sum of squared differences `(f2 - f1)^T W (f2 - f1)`.
pub fn wssd(f1: &[f64], f2: &[f64], k: &SpdKernel) -> Result<f64> {
    if f1.len() != f2.len() || f1.len() != k.dim() {
        return Err(LcvError::DimensionMismatch(format!(
            "vectors of length {} and {} with kernel of dimension {}",
            f1.len(),
            f2.len(),
            k.dim()
        )));
    }
    let d = DVector::from_iterator(f1.len(), f2.iter().zip(f1).map(|(b, a)| b - a));
    Ok(d.dot(&(k.w() * &d)))
}

/// Winner-take-all decode. Ties go to the smaller displacement magnitude,
/// then to the earlier cell in row-major `(k, l)` order.
pub fn decode_flow_argmax(cv: &CostVolume) -> FlowField {
    let (u, v, h, w) = (cv.u, cv.v, cv.height, cv.width);
    let (ru, rv) = ((u / 2) as isize, (v / 2) as isize);
    let mut flow = FlowField::zeros(h, w);
    for i in 0..h {
        for j in 0..w {
            let mut best: Option<(f64, isize, isize, isize)> = None;
            for k in 0..u {
                for l in 0..v {
                    let cost = cv.get(k, l, i, j);
                    let (dy, dx) = (k as isize - ru, l as isize - rv);
                    let mag = dy * dy + dx * dx;
                    let better = match best {
                        None => true,
                        Some((bc, bm, _, _)) => cost > bc || (cost == bc && mag < bm),
                    };
                    if better {
                        best = Some((cost, mag, dx, dy));
                    }
                }
            }
            let (_, _, dx, dy) = best.expect("window is nonempty");
            flow.set(i, j, dx as f64, dy as f64);
        }
    }
    flow
}

fn check_flows(pred: &FlowField, gt: &FlowField) -> Result<()> {
    if (pred.height, pred.width) != (gt.height, gt.width) {
        return Err(LcvError::DimensionMismatch(format!(
            "flow fields {}x{} and {}x{}",
            pred.height, pred.width, gt.height, gt.width
        )));
    }
    Ok(())
}

fn endpoint_errors<'a>(
    pred: &'a FlowField,
    gt: &'a FlowField,
) -> impl Iterator<Item = (f64, f64)> + 'a {
    let n = pred.height * pred.width;
    (0..n).map(move |p| {
        let ex = pred.data[p] - gt.data[p];
        let ey = pred.data[n + p] - gt.data[n + p];
        let gmag = gt.data[p].hypot(gt.data[n + p]);
        (ex.hypot(ey), gmag)
    })
}

/// Average endpoint error in pixels.
pub fn epe(pred: &FlowField, gt: &FlowField) -> Result<f64> {
    check_flows(pred, gt)?;
    let n = (pred.height * pred.width) as f64;
    Ok(endpoint_errors(pred, gt).map(|(e, _)| e).sum::<f64>() / n)
}

/// Percentage of pixels whose endpoint error exceeds both 3 px and 5% of
/// the ground-truth magnitude.
pub fn fl_all(pred: &FlowField, gt: &FlowField) -> Result<f64> {
    check_flows(pred, gt)?;
    let n = (pred.height * pred.width) as f64;
    let outliers = endpoint_errors(pred, gt)
        .filter(|&(e, g)| e > 3.0 && e > 0.05 * g)
        .count();
    Ok(100.0 * outliers as f64 / n)
}
