//! Cayley charts for the orthogonal factor and the positive diagonal.
//!
//! A skew-symmetric `S` maps to `P = (I - S)(I + S)^{-1}`, which is special
//! orthogonal and never has `-1` in its spectrum. The set of such matrices,
//! `SO*(n)`, is exactly the image of the chart, and the inverse is
//! `S = (I + P)^{-1}(I - P)`. Positive eigenvalues are reached from an
//! unconstrained `t` through `lambda = (pi + 2 atan t) / (pi - 2 atan t)`.

use std::f64::consts::PI;

use nalgebra::{Complex, Schur};

use crate::error::{LcvError, Result};
use crate::linalg::{ensure_finite, ensure_square, lu_solve, max_abs, orthogonality_error, Mat};

/// Default margin on `|eig + 1|` used by [`is_in_so_star`].
pub const SO_STAR_MARGIN: f64 = 1e-8;

const SKEW_TOLERANCE: f64 = 1e-12;
const ORTHOGONAL_TOLERANCE: f64 = 1e-10;
const MEMBERSHIP_ORTHOGONALITY: f64 = 1e-8;

/// Free parameters of an `n x n` skew-symmetric matrix: its strictly lower
/// triangle, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SkewParams {
    entries: Vec<f64>,
    dim: usize,
}

impl SkewParams {
    pub fn new(dim: usize, entries: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(LcvError::InvalidArgument(
                "dimension must be positive".into(),
            ));
        }
        let want = skew_len(dim);
        if entries.len() != want {
            return Err(LcvError::DimensionMismatch(format!(
                "{} skew parameters for dimension {dim}, expected {want}",
                entries.len()
            )));
        }
        Ok(Self { entries, dim })
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            entries: vec![0.0; skew_len(dim)],
            dim,
        }
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Number of free parameters of an `n x n` skew-symmetric matrix.
pub fn skew_len(dim: usize) -> usize {
    dim * dim.saturating_sub(1) / 2
}

/// Unconstrained parameters whose arctan-Cayley image is the diagonal of
/// eigenvalues.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagParams {
    t: Vec<f64>,
}

impl DiagParams {
    pub fn new(t: Vec<f64>) -> Result<Self> {
        if t.is_empty() {
            return Err(LcvError::InvalidArgument(
                "diagonal parameters must be nonempty".into(),
            ));
        }
        if !t.iter().all(|x| x.is_finite()) {
            return Err(LcvError::NonFinite("diagonal parameters"));
        }
        Ok(Self { t })
    }

    pub fn zeros(dim: usize) -> Self {
        Self { t: vec![0.0; dim] }
    }

    pub fn values(&self) -> &[f64] {
        &self.t
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }
}

/// A special orthogonal matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct OrthogonalMatrix(Mat);

impl OrthogonalMatrix {
    /// Validates `max |P^T P - I| <= 1e-10` and `det P > 0`.
    pub fn new(values: Mat) -> Result<Self> {
        ensure_square(&values, "orthogonal matrix")?;
        ensure_finite(&values, "orthogonal matrix")?;
        let error = orthogonality_error(&values);
        if error > ORTHOGONAL_TOLERANCE {
            return Err(LcvError::NotOrthogonal { error });
        }
        let det = values.clone().lu().determinant();
        if det <= 0.0 {
            return Err(LcvError::InvalidArgument(format!(
                "orthogonal matrix has determinant {det}, expected +1"
            )));
        }
        Ok(Self(values))
    }

    pub(crate) fn new_unchecked(values: Mat) -> Self {
        Self(values)
    }

    pub fn identity(n: usize) -> Self {
        Self(Mat::identity(n, n))
    }

    pub fn as_matrix(&self) -> &Mat {
        &self.0
    }

    pub fn into_matrix(self) -> Mat {
        self.0
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }
}

pub fn pack_skew(s: &Mat) -> Result<SkewParams> {
    let n = ensure_square(s, "skew-symmetric matrix")?;
    ensure_finite(s, "skew-symmetric matrix")?;
    let max_violation = max_abs(&(s + s.transpose()));
    if max_violation > SKEW_TOLERANCE {
        return Err(LcvError::NotSkewSymmetric { max_violation });
    }
    let mut entries = Vec::with_capacity(skew_len(n));
    for i in 1..n {
        for j in 0..i {
            entries.push(s[(i, j)]);
        }
    }
    SkewParams::new(n, entries)
}

pub fn unpack_skew(p: &SkewParams) -> Mat {
    let n = p.dim;
    let mut s = Mat::zeros(n, n);
    let mut it = p.entries.iter();
    for i in 1..n {
        for j in 0..i {
            let v = *it.next().expect("length checked at construction");
            s[(i, j)] = v;
            s[(j, i)] = -v;
        }
    }
    s
}

/// `P = (I - S)(I + S)^{-1}`.
///
/// `I - S` and `I + S` commute, so this is computed as one LU solve
/// `(I + S) P = I - S`.
pub fn cayley_forward(s: &Mat) -> Result<OrthogonalMatrix> {
    let n = ensure_square(s, "skew-symmetric matrix")?;
    ensure_finite(s, "skew-symmetric matrix")?;
    let eye = Mat::identity(n, n);
    let p = lu_solve(&(&eye + s), &(&eye - s), "cayley_forward")?;
    Ok(OrthogonalMatrix(p))
}

/// `S = (I + P)^{-1}(I - P)`, returned exactly skew-symmetric.
pub fn cayley_inverse(p: &OrthogonalMatrix) -> Result<Mat> {
    let check = is_in_so_star(p.as_matrix());
    if !check.member {
        return Err(LcvError::NotInSoStar(check.describe()));
    }
    let n = p.dim();
    let eye = Mat::identity(n, n);
    let s = lu_solve(
        &(&eye + p.as_matrix()),
        &(&eye - p.as_matrix()),
        "cayley_inverse",
    )?;
    Ok((&s - s.transpose()) * 0.5)
}

/// `lambda = (pi + 2 atan t) / (pi - 2 atan t)`, applied entrywise.
pub fn lambda_from_t(t: &DiagParams) -> Vec<f64> {
    t.t.iter().map(|&x| lambda_scalar(x)).collect()
}

pub fn lambda_scalar(t: f64) -> f64 {
    let a = 2.0 * t.atan();
    (PI + a) / (PI - a)
}

/// `d lambda / d t = 4 pi / ((1 + t^2)(pi - 2 atan t)^2)`.
pub fn dlambda_dt(t: f64) -> f64 {
    let d = PI - 2.0 * t.atan();
    4.0 * PI / ((1.0 + t * t) * d * d)
}

/// Inverse of [`lambda_from_t`]: `t = tan(pi (lambda - 1) / (2 (lambda + 1)))`.
pub fn t_from_lambda(lambda: &[f64]) -> Result<DiagParams> {
    let t = lambda
        .iter()
        .map(|&l| {
            if !(l > 0.0) || !l.is_finite() {
                Err(LcvError::InvalidArgument(format!(
                    "eigenvalue {l} is not finite and positive"
                )))
            } else {
                Ok((PI * (l - 1.0) / (2.0 * (l + 1.0))).tan())
            }
        })
        .collect::<Result<Vec<_>>>()?;
    DiagParams::new(t)
}

/// Outcome of an `SO*(n)` membership test.
#[derive(Debug, Clone, PartialEq)]
pub struct SoStarCheck {
    pub member: bool,
    pub orthogonality_error: f64,
    pub determinant: f64,
    /// Eigenvalue closest to `-1` (upper half-plane representative).
    pub nearest_eigenvalue: Complex<f64>,
    pub distance_to_minus_one: f64,
}

impl SoStarCheck {
    pub fn describe(&self) -> String {
        format!(
            "orthogonality error {:e}, det {:.6}, eigenvalue nearest -1 is {:.6}{:+.6}i (distance {:e})",
            self.orthogonality_error,
            self.determinant,
            self.nearest_eigenvalue.re,
            self.nearest_eigenvalue.im,
            self.distance_to_minus_one
        )
    }
}

pub fn is_in_so_star(p: &Mat) -> SoStarCheck {
    is_in_so_star_with_margin(p, SO_STAR_MARGIN)
}

/// Membership in `SO*(n)` with a configurable margin on `|eig + 1|`.
///
/// For orthogonal `P` the singular values of `I + P` are exactly
/// `|1 + e^{i theta}|` over its eigenvalues, so the distance of the spectrum
/// to `-1` is `sigma_min(I + P)` and the nearest eigenvalue has angle
/// `2 acos(sigma_min / 2)`.
pub fn is_in_so_star_with_margin(p: &Mat, margin: f64) -> SoStarCheck {
    let nan = Complex::new(f64::NAN, f64::NAN);
    let bad = |orthogonality_error: f64, determinant: f64| SoStarCheck {
        member: false,
        orthogonality_error,
        determinant,
        nearest_eigenvalue: nan,
        distance_to_minus_one: f64::NAN,
    };
    if p.nrows() != p.ncols() || p.nrows() == 0 || !p.iter().all(|x| x.is_finite()) {
        return bad(f64::INFINITY, f64::NAN);
    }
    let n = p.nrows();
    let orth = orthogonality_error(p);
    let det = p.clone().lu().determinant();
    let (nearest, distance) = if orth <= MEMBERSHIP_ORTHOGONALITY {
        let sv = (Mat::identity(n, n) + p).singular_values();
        let sigma = sv.iter().copied().fold(f64::INFINITY, f64::min);
        let theta = 2.0 * (sigma / 2.0).clamp(-1.0, 1.0).acos();
        (Complex::new(theta.cos(), theta.sin().abs()), sigma)
    } else {
        // Not orthogonal: fall back to the general spectrum for the diagnostic.
        let eigs = p.complex_eigenvalues();
        eigs.iter()
            .map(|z| (*z, (z + 1.0).norm()))
            .fold((nan, f64::INFINITY), |best, cur| {
                if cur.1 < best.1 {
                    cur
                } else {
                    best
                }
            })
    };
    SoStarCheck {
        member: orth <= MEMBERSHIP_ORTHOGONALITY && det > 0.0 && distance > margin,
        orthogonality_error: orth,
        determinant: det,
        nearest_eigenvalue: nearest,
        distance_to_minus_one: distance,
    }
}

/// Continuous path in `SO*(n)` from `I` to `P`, sampled at `steps + 1`
/// equally spaced times.
///
/// The real Schur form `P = Q T Q^T` of an orthogonal matrix is block
/// diagonal with 2x2 rotation blocks and `+1` entries; each block angle
/// `theta` lies in `(-pi, pi)` and the path scales it to `t * theta`.
pub fn so_star_path(p: &OrthogonalMatrix, steps: usize) -> Result<Vec<OrthogonalMatrix>> {
    if steps == 0 {
        return Err(LcvError::InvalidArgument(
            "path needs at least one step".into(),
        ));
    }
    let check = is_in_so_star(p.as_matrix());
    if !check.member {
        return Err(LcvError::NotInSoStar(check.describe()));
    }
    let n = p.dim();
    let schur = Schur::try_new(p.as_matrix().clone(), f64::EPSILON, 10_000)
        .ok_or_else(|| LcvError::Decomposition("real Schur iteration did not converge".into()))?;
    let (q, t) = schur.unpack();
    let blocks = rotation_blocks(&t)?;

    let mut path = Vec::with_capacity(steps + 1);
    for k in 0..=steps {
        let frac = k as f64 / steps as f64;
        let mut d = Mat::identity(n, n);
        for block in &blocks {
            if let RotationBlock::Pair { start, angle } = *block {
                let (s, c) = (frac * angle).sin_cos();
                d[(start, start)] = c;
                d[(start, start + 1)] = -s;
                d[(start + 1, start)] = s;
                d[(start + 1, start + 1)] = c;
            }
        }
        path.push(OrthogonalMatrix(&q * d * q.transpose()));
    }
    Ok(path)
}

#[derive(Debug, Clone, Copy)]
enum RotationBlock {
    Fixed,
    Pair { start: usize, angle: f64 },
}

fn rotation_blocks(t: &Mat) -> Result<Vec<RotationBlock>> {
    const BLOCK_TOL: f64 = 1e-12;
    const STRUCTURE_TOL: f64 = 1e-8;
    let n = t.nrows();
    let mut blocks = Vec::new();
    let mut in_block = vec![usize::MAX; n];
    let mut i = 0;
    while i < n {
        if i + 1 < n && t[(i + 1, i)].abs() > BLOCK_TOL {
            let (a, b, c, d) = (t[(i, i)], t[(i, i + 1)], t[(i + 1, i)], t[(i + 1, i + 1)]);
            let det = a * d - b * c;
            if (det - 1.0).abs() > STRUCTURE_TOL {
                return Err(LcvError::Decomposition(format!(
                    "2x2 Schur block at {i} has determinant {det}, not a rotation"
                )));
            }
            // Least-squares fit of [[cos, -sin], [sin, cos]] to the block.
            let angle = (c - b).atan2(a + d);
            blocks.push(RotationBlock::Pair { start: i, angle });
            in_block[i] = blocks.len() - 1;
            in_block[i + 1] = blocks.len() - 1;
            i += 2;
        } else {
            if (t[(i, i)] - 1.0).abs() > STRUCTURE_TOL {
                return Err(LcvError::Decomposition(format!(
                    "real Schur eigenvalue {} at {i} is not +1",
                    t[(i, i)]
                )));
            }
            blocks.push(RotationBlock::Fixed);
            in_block[i] = blocks.len() - 1;
            i += 1;
        }
    }
    // A normal matrix has a block-diagonal Schur form.
    for r in 0..n {
        for c in 0..n {
            if in_block[r] != in_block[c] && t[(r, c)].abs() > STRUCTURE_TOL {
                return Err(LcvError::Decomposition(format!(
                    "Schur form is not block diagonal: |T[{r},{c}]| = {:e}",
                    t[(r, c)].abs()
                )));
            }
        }
    }
    Ok(blocks)
}
