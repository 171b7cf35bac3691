//! The SPD kernel `W = P^T diag(lambda) P` behind the elliptical inner
//! product, its whitening views and its gradient through the Cayley charts.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DVector;

use crate::cayley::{
    cayley_forward, cayley_inverse, dlambda_dt, lambda_from_t, pack_skew, skew_len, unpack_skew,
    DiagParams, OrthogonalMatrix, SkewParams,
};
use crate::error::{LcvError, Result};
use crate::linalg::{ensure_finite, lu_solve, max_abs, skew_part, sym_part, Mat};

const INVARIANT_TOL: f64 = 1e-10;

/// Symmetric positive-definite kernel together with its spectral factors.
#[derive(Debug, Clone, PartialEq)]
pub struct SpdKernel {
    w: Mat,
    p: OrthogonalMatrix,
    lambda: Vec<f64>,
    skew: Option<SkewParams>,
    diag: DiagParams,
}

/// Gradient of a scalar loss with respect to the kernel's free parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelGradient {
    pub d_skew: Vec<f64>,
    pub d_diag: Vec<f64>,
}

impl KernelGradient {
    pub fn zeros(dim: usize) -> Self {
        Self {
            d_skew: vec![0.0; skew_len(dim)],
            d_diag: vec![0.0; dim],
        }
    }

    pub fn max_norm(&self) -> f64 {
        self.d_skew
            .iter()
            .chain(&self.d_diag)
            .fold(0.0_f64, |acc, x| acc.max(x.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.d_skew
            .iter()
            .chain(&self.d_diag)
            .all(|x| x.is_finite())
    }

    /// Skew entries followed by diagonal entries.
    pub fn flatten(&self) -> Vec<f64> {
        self.d_skew.iter().chain(&self.d_diag).copied().collect()
    }
}

/// Builds `W` from skew and diagonal parameters.
pub fn assemble_kernel(s: &SkewParams, t: &DiagParams) -> Result<SpdKernel> {
    if s.dim() != t.len() {
        return Err(LcvError::DimensionMismatch(format!(
            "skew parameters of dimension {} with {} diagonal parameters",
            s.dim(),
            t.len()
        )));
    }
    let p = cayley_forward(&unpack_skew(s))?;
    let mut k = SpdKernel::from_parts(p, t.clone());
    k.skew = Some(s.clone());
    Ok(k)
}

impl SpdKernel {
    /// `W = I`, the vanilla cost volume's kernel.
    pub fn identity(dim: usize) -> Self {
        Self {
            w: Mat::identity(dim, dim),
            p: OrthogonalMatrix::identity(dim),
            lambda: vec![1.0; dim],
            skew: Some(SkewParams::zeros(dim)),
            diag: DiagParams::zeros(dim),
        }
    }

    /// Builds a kernel from an orthogonal factor and diagonal parameters.
    /// Skew parameters are recovered lazily when a Cayley-chart quantity is
    /// requested.
    pub fn from_factors(p: OrthogonalMatrix, t: DiagParams) -> Result<Self> {
        if p.dim() != t.len() {
            return Err(LcvError::DimensionMismatch(format!(
                "orthogonal factor of dimension {} with {} diagonal parameters",
                p.dim(),
                t.len()
            )));
        }
        Ok(Self::from_parts(p, t))
    }

    fn from_parts(p: OrthogonalMatrix, diag: DiagParams) -> Self {
        let lambda = lambda_from_t(&diag);
        let pm = p.as_matrix();
        let mut scaled = pm.clone();
        for (mut row, l) in scaled.row_iter_mut().zip(&lambda) {
            row *= *l;
        }
        let w = sym_part(&(pm.transpose() * scaled));
        Self {
            w,
            p,
            lambda,
            skew: None,
            diag,
        }
    }

    pub fn dim(&self) -> usize {
        self.lambda.len()
    }

    pub fn w(&self) -> &Mat {
        &self.w
    }

    pub fn p(&self) -> &OrthogonalMatrix {
        &self.p
    }

    pub fn lambda(&self) -> &[f64] {
        &self.lambda
    }

    pub fn diag_params(&self) -> &DiagParams {
        &self.diag
    }

    /// Skew parameters of the orthogonal factor, recomputed through the
    /// inverse Cayley map when the kernel was built from factors.
    pub fn skew_params(&self) -> Result<SkewParams> {
        match &self.skew {
            Some(s) => Ok(s.clone()),
            None => pack_skew(&cayley_inverse(&self.p)?),
        }
    }

    /// Checks every structural invariant of the kernel.
    pub fn validate(&self) -> Result<()> {
        let c = self.dim();
        ensure_finite(&self.w, "kernel matrix")?;
        if !self.lambda.iter().all(|l| *l > 0.0 && l.is_finite()) {
            return Err(LcvError::NotPositiveDefinite {
                min_eigenvalue: self.lambda.iter().copied().fold(f64::INFINITY, f64::min),
            });
        }
        let asym = max_abs(&skew_part(&self.w));
        if asym > INVARIANT_TOL {
            return Err(LcvError::InvalidArgument(format!(
                "kernel asymmetry {asym:e}"
            )));
        }
        OrthogonalMatrix::new(self.p.as_matrix().clone())?;
        let pm = self.p.as_matrix();
        let rebuilt =
            pm.transpose() * Mat::from_diagonal(&DVector::from_column_slice(&self.lambda)) * pm;
        let scale = self.lambda.iter().copied().fold(1.0_f64, f64::max);
        let err = max_abs(&(rebuilt - &self.w));
        if err > INVARIANT_TOL * scale {
            return Err(LcvError::InvalidArgument(format!(
                "kernel differs from its factorization by {err:e}"
            )));
        }
        if nalgebra::Cholesky::new(self.w.clone()).is_none() {
            let min_eigenvalue = self.lambda.iter().copied().fold(f64::INFINITY, f64::min);
            return Err(LcvError::NotPositiveDefinite { min_eigenvalue });
        }
        debug_assert_eq!(self.w.nrows(), c);
        Ok(())
    }
}

/// PCA whitening `Q = Lambda^{1/2} P`, so that `Q^T Q = W`.
pub fn whitening_pca(k: &SpdKernel) -> Mat {
    let mut q = k.p.as_matrix().clone();
    for (mut row, l) in q.row_iter_mut().zip(&k.lambda) {
        row *= l.sqrt();
    }
    q
}

/// ZCA whitening `R = P^T Lambda^{1/2} P`, symmetric with `R R = W`.
pub fn whitening_zca(k: &SpdKernel) -> Mat {
    sym_part(&(k.p.as_matrix().transpose() * whitening_pca(k)))
}

/// Euclidean gradients with respect to the spectral factors:
/// `dL/dP = Lambda P (G + G^T)` and `dL/dlambda_i = (P G P^T)_ii`.
pub fn factor_grad(k: &SpdKernel, dl_dw: &Mat) -> Result<(Mat, Vec<f64>)> {
    let c = k.dim();
    if dl_dw.shape() != (c, c) {
        return Err(LcvError::DimensionMismatch(format!(
            "loss gradient is {}x{}, kernel is {c}x{c}",
            dl_dw.nrows(),
            dl_dw.ncols()
        )));
    }
    ensure_finite(dl_dw, "loss gradient")?;
    let p = k.p.as_matrix();
    let mut lp = p.clone();
    for (mut row, l) in lp.row_iter_mut().zip(&k.lambda) {
        row *= *l;
    }
    let d_p = lp * (dl_dw + dl_dw.transpose());
    let pgp = p * dl_dw * p.transpose();
    let d_lambda = (0..c).map(|i| pgp[(i, i)]).collect();
    Ok((d_p, d_lambda))
}

/// Chain rule from `dL/dW` to the skew and diagonal parameters.
///
/// With `A = (I + S)^{-1}`, the Cayley map gives `dP = -(I + P) dS A`, hence
/// `dL/dS = -(I + P)^T (dL/dP) A^T`, and each packed entry `s_ij` (i > j)
/// collects `dL/dS_ij - dL/dS_ji`.
pub fn kernel_grad(k: &SpdKernel, dl_dw: &Mat) -> Result<KernelGradient> {
    let c = k.dim();
    let (d_p, d_lambda) = factor_grad(k, dl_dw)?;
    let s = unpack_skew(&k.skew_params()?);
    let eye = Mat::identity(c, c);
    // X = dL/dP (I - S)^{-1}, via (I + S) X^T = (dL/dP)^T.
    let xt = lu_solve(&(&eye + &s), &d_p.transpose(), "kernel_grad")?;
    let d_s = -(&eye + k.p.as_matrix()).transpose() * xt.transpose();
    let mut d_skew = Vec::with_capacity(skew_len(c));
    for i in 1..c {
        for j in 0..i {
            d_skew.push(d_s[(i, j)] - d_s[(j, i)]);
        }
    }
    let d_diag = d_lambda
        .iter()
        .zip(k.diag.values())
        .map(|(g, t)| g * dlambda_dt(*t))
        .collect();
    Ok(KernelGradient { d_skew, d_diag })
}

/// Kernel storage for a stack of pyramid levels: `(sum c^2, sum c(c+1)/2)`,
/// i.e. full-matrix entries and free parameters of this parameterization.
pub fn param_count(channel_dims: &[usize]) -> Result<(usize, usize)> {
    if channel_dims.is_empty() {
        return Err(LcvError::InvalidArgument(
            "no channel dimensions given".into(),
        ));
    }
    if channel_dims.contains(&0) {
        return Err(LcvError::InvalidArgument(
            "channel dimensions must be positive".into(),
        ));
    }
    Ok(channel_dims.iter().fold((0, 0), |(full, free), &c| {
        (full + c * c, free + c * (c + 1) / 2)
    }))
}

const CHECKPOINT_MAGIC: &[u8; 4] = b"LCVK";
const CHECKPOINT_VERSION: u8 = 1;

/// Writes the `LCVK` checkpoint: magic, version byte, `c` as u32 LE, then
/// the skew and diagonal parameters as f64 LE.
pub fn write_checkpoint<W: Write>(k: &SpdKernel, mut out: W) -> Result<()> {
    let skew = k.skew_params()?;
    let c = u32::try_from(k.dim())
        .map_err(|_| LcvError::InvalidArgument("kernel dimension exceeds u32".into()))?;
    out.write_all(CHECKPOINT_MAGIC)?;
    out.write_all(&[CHECKPOINT_VERSION])?;
    out.write_all(&c.to_le_bytes())?;
    for v in skew.entries().iter().chain(k.diag.values()) {
        out.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut input: R) -> Result<SpdKernel> {
    let bad = |reason: String| LcvError::Format {
        format: "LCVK",
        reason,
    };
    let mut header = [0u8; 9];
    input
        .read_exact(&mut header)
        .map_err(|e| bad(format!("truncated header: {e}")))?;
    if &header[..4] != CHECKPOINT_MAGIC {
        return Err(bad("bad magic".into()));
    }
    if header[4] != CHECKPOINT_VERSION {
        return Err(bad(format!("unsupported version {}", header[4])));
    }
    let c = u32::from_le_bytes(header[5..9].try_into().unwrap()) as usize;
    if c == 0 {
        return Err(bad("zero kernel dimension".into()));
    }
    let mut payload = Vec::new();
    input.read_to_end(&mut payload)?;
    let expected = skew_len(c)
        .checked_add(c)
        .and_then(|n| n.checked_mul(8))
        .ok_or_else(|| bad(format!("kernel dimension {c} is too large")))?;
    if payload.len() != expected {
        return Err(bad(format!(
            "payload has {} bytes, dimension {c} needs {expected}",
            payload.len()
        )));
    }
    let values: Vec<f64> = payload
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
        .collect();
    if !values.iter().all(|v| v.is_finite()) {
        return Err(bad("non-finite parameter".into()));
    }
    let (skew, diag) = values.split_at(skew_len(c));
    let skew = SkewParams::new(c, skew.to_vec())?;
    let diag = DiagParams::new(diag.to_vec())?;
    let k = assemble_kernel(&skew, &diag)?;
    k.validate()?;
    Ok(k)
}

pub fn save_checkpoint(k: &SpdKernel, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_checkpoint(k, &mut buf)?;
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<SpdKernel> {
    read_checkpoint(std::fs::File::open(path)?)
}
