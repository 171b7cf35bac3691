//! Small dense helpers shared by the matrix modules.

use nalgebra::{Cholesky, DMatrix};

use crate::error::{LcvError, Result};

pub type Mat = DMatrix<f64>;

pub fn max_abs(m: &Mat) -> f64 {
    m.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()))
}

/// `max |M^T M - I|`.
pub fn orthogonality_error(m: &Mat) -> f64 {
    let n = m.ncols();
    max_abs(&(m.transpose() * m - Mat::identity(n, n)))
}

/// `(M - M^T) / 2`.
pub fn skew_part(m: &Mat) -> Mat {
    (m - m.transpose()) * 0.5
}

pub fn sym_part(m: &Mat) -> Mat {
    (m + m.transpose()) * 0.5
}

pub fn ensure_square(m: &Mat, what: &str) -> Result<usize> {
    if m.nrows() != m.ncols() {
        return Err(LcvError::DimensionMismatch(format!(
            "{what} must be square, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(m.nrows())
}

pub fn ensure_finite(m: &Mat, what: &'static str) -> Result<()> {
    if m.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(LcvError::NonFinite(what))
    }
}

/// Solves `a * x = b` with partially pivoted LU.
pub fn lu_solve(a: &Mat, b: &Mat, context: &'static str) -> Result<Mat> {
    let lu = a.clone().lu();
    let pivot_ratio = pivot_ratio(lu.u().diagonal().iter().copied());
    if pivot_ratio < f64::EPSILON {
        return Err(LcvError::SingularSolve {
            context,
            pivot_ratio,
        });
    }
    lu.solve(b).ok_or(LcvError::SingularSolve {
        context,
        pivot_ratio,
    })
}

fn pivot_ratio(diag: impl Iterator<Item = f64>) -> f64 {
    let (lo, hi) = diag.fold((f64::INFINITY, 0.0_f64), |(lo, hi), d| {
        (lo.min(d.abs()), hi.max(d.abs()))
    });
    if hi == 0.0 {
        0.0
    } else {
        lo / hi
    }
}

/// Inverse square root of a symmetric positive-definite matrix.
///
/// For SPD input the singular value decomposition coincides with the
/// eigendecomposition. nalgebra's SVD is used here because its symmetric
/// eigen solver can stop early on some well-conditioned inputs; the
/// reconstruction residual is checked before the factors are used.
pub fn matrix_inv_sqrt(m: &Mat) -> Result<Mat> {
    let n = ensure_square(m, "matrix_inv_sqrt input")?;
    ensure_finite(m, "matrix_inv_sqrt input")?;
    let scale = max_abs(m).max(1.0);
    let asym = max_abs(&skew_part(m));
    if asym > 1e-10 * scale {
        return Err(LcvError::InvalidArgument(format!(
            "matrix_inv_sqrt input is not symmetric (max asymmetry {asym:e})"
        )));
    }
    let sym = sym_part(m);
    if Cholesky::new(sym.clone()).is_none() {
        let min_eigenvalue = sym
            .symmetric_eigenvalues()
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        return Err(LcvError::NotPositiveDefinite { min_eigenvalue });
    }
    let svd = sym.clone().svd(true, true);
    let v_t = svd.v_t.ok_or_else(|| {
        LcvError::Decomposition("SVD did not return right singular vectors".into())
    })?;
    let sigma = &svd.singular_values;
    if !(sigma.min() > 0.0) {
        return Err(LcvError::NotPositiveDefinite {
            min_eigenvalue: sigma.min(),
        });
    }
    let v = v_t.transpose();
    let residual = max_abs(&(&v * Mat::from_diagonal(sigma) * &v_t - &sym));
    if residual > 1e-10 * scale {
        return Err(LcvError::Decomposition(format!(
            "symmetric factorization residual {residual:e} in matrix_inv_sqrt"
        )));
    }
    let r = &v * Mat::from_diagonal(&sigma.map(|x| 1.0 / x.sqrt())) * &v_t;
    debug_assert_eq!(r.nrows(), n);
    Ok(sym_part(&r))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inv_sqrt_identity_and_diagonal() {
        let i = Mat::identity(3, 3);
        assert!(max_abs(&(matrix_inv_sqrt(&i).unwrap() - &i)) < 1e-15);
        let d = Mat::from_diagonal(&nalgebra::DVector::from_vec(vec![4.0, 9.0]));
        let r = matrix_inv_sqrt(&d).unwrap();
        let want = Mat::from_diagonal(&nalgebra::DVector::from_vec(vec![0.5, 1.0 / 3.0]));
        assert!(max_abs(&(r - want)) < 1e-15);
    }

    #[test]
    fn inv_sqrt_random_spd() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for n in [2, 5, 12] {
            let a = Mat::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
            let m = a.transpose() * &a + Mat::identity(n, n);
            let r = matrix_inv_sqrt(&m).unwrap();
            assert!(max_abs(&skew_part(&r)) == 0.0);
            assert!(max_abs(&(&r * &m * &r - Mat::identity(n, n))) < 1e-9);
        }
    }

    #[test]
    fn inv_sqrt_rejects_indefinite() {
        let d = Mat::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, -2.0]));
        assert!(matches!(
            matrix_inv_sqrt(&d),
            Err(LcvError::NotPositiveDefinite { .. })
        ));
    }
}
