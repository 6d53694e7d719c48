//! Gram-matrix quantities, the norm-rescaled ("checked") view, the
//! closed-form low-rank inverse of XX^T and the expansion of
//! (XX^T)^{-1} y_noisy.
//!
//! With A = ZZ^T and nu = Z mu, the design Gram splits as
//! XX^T = A + y nu^T + nu y^T + ||mu||^2 y y^T, and its inverse and the
//! vector (XX^T)^{-1} y_noisy have closed forms in the scalars
//! s, s_N, s_NN, t, h, h_N and d = s(||mu||^2 - t) + (1+h)^2.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::model::Dataset;

/// Norm-rescaled view: rows of Z divided by their norms, labels divided by
/// the same norms. Quadratic forms against A^{-1} are invariant under this
/// rescaling.
#[derive(Debug, Clone)]
pub struct CheckedView {
    pub z_norms: DVector<f64>,
    pub z_checked: DMatrix<f64>,
    pub y_checked: DVector<f64>,
    pub y_noisy_checked: DVector<f64>,
}

impl CheckedView {
    /// Gram of the checked rows (rows are unit norm, so the diagonal is 1).
    pub fn gram(&self) -> DMatrix<f64> {
        &self.z_checked * self.z_checked.transpose()
    }

    /// a^T (Z_checked Z_checked^T)^{-1} b for the invariance checks.
    pub fn quadratic(&self, a: &DVector<f64>, b: &DVector<f64>) -> Result<f64> {
        let gram = self.gram();
        let chol = Cholesky::new(gram).ok_or(Error::SingularGram {
            min_eig: 0.0,
            max_eig: f64::NAN,
        })?;
        Ok(a.dot(&chol.solve(b)))
    }
}

/// Rescales rows by their norms. Rejects zero rows, naming the first one.
pub fn checked_transform(dataset: &Dataset) -> Result<CheckedView> {
    let n = dataset.n();
    let mut z_norms = DVector::zeros(n);
    for i in 0..n {
        let norm = dataset.z.row(i).norm();
        if norm == 0.0 {
            return Err(Error::ZeroNoiseRow { row: i });
        }
        z_norms[i] = norm;
    }
    let mut z_checked = dataset.z.clone();
    for i in 0..n {
        z_checked.row_mut(i).scale_mut(1.0 / z_norms[i]);
    }
    let y_checked =
        DVector::from_iterator(n, (0..n).map(|i| dataset.y[i] / z_norms[i]));
    let y_noisy_checked =
        DVector::from_iterator(n, (0..n).map(|i| dataset.y_noisy[i] / z_norms[i]));
    Ok(CheckedView { z_norms, z_checked, y_checked, y_noisy_checked })
}

/// The noise Gram A = ZZ^T with the scalar quantities of the closed-form
/// inverse, plus cached solutions of A x = y, A x = y_noisy, A x = nu.
#[derive(Debug, Clone)]
pub struct GramDecomposition {
    pub a: DMatrix<f64>,
    pub nu: DVector<f64>,
    pub s: f64,
    pub s_n: f64,
    pub s_nn: f64,
    pub t: f64,
    pub h: f64,
    pub h_n: f64,
    pub d: f64,
    pub mu_norm_sq: f64,
    pub a_inv_y: DVector<f64>,
    pub a_inv_y_noisy: DVector<f64>,
    pub a_inv_nu: DVector<f64>,
    y: DVector<f64>,
    y_noisy: DVector<f64>,
    chol: Cholesky<f64, Dyn>,
}

impl GramDecomposition {
    pub fn solve(&self, rhs: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(rhs)
    }

    pub fn a_inverse(&self) -> DMatrix<f64> {
        self.chol.inverse()
    }

    /// Threshold below which d counts as a degenerate perturbation.
    pub fn d_threshold(&self) -> f64 {
        1e-10 * self.s * self.mu_norm_sq.max(1.0)
    }

    fn require_nondegenerate(&self) -> Result<()> {
        let threshold = self.d_threshold();
        if self.d.abs() <= threshold {
            return Err(Error::DegeneratePerturbation { d_abs: self.d.abs(), threshold });
        }
        Ok(())
    }
}

/// Builds the decomposition. A must be invertible: smallest eigenvalue
/// above 1e-10 times the largest.
pub fn gram_quantities(dataset: &Dataset) -> Result<GramDecomposition> {
    let a = &dataset.z * dataset.z.transpose();
    let eigvals = a.clone().symmetric_eigen().eigenvalues;
    let max_eig = eigvals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min_eig = eigvals.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(min_eig > 1e-10 * max_eig) {
        return Err(Error::SingularGram { min_eig, max_eig });
    }
    let chol = Cholesky::new(a.clone()).ok_or(Error::SingularGram { min_eig, max_eig })?;

    let mu = dataset.mu();
    let nu = &dataset.z * &mu;
    let y = dataset.y.clone();
    let y_noisy = dataset.y_noisy.clone();

    let a_inv_y = chol.solve(&y);
    let a_inv_y_noisy = chol.solve(&y_noisy);
    let a_inv_nu = chol.solve(&nu);

    let s = y.dot(&a_inv_y);
    let s_n = y_noisy.dot(&a_inv_y);
    let s_nn = y_noisy.dot(&a_inv_y_noisy);
    let t = nu.dot(&a_inv_nu);
    let h = y.dot(&a_inv_nu);
    let h_n = y_noisy.dot(&a_inv_nu);
    let mu_norm_sq = mu.norm_squared();
    let d = s * (mu_norm_sq - t) + (1.0 + h) * (1.0 + h);

    Ok(GramDecomposition {
        a,
        nu,
        s,
        s_n,
        s_nn,
        t,
        h,
        h_n,
        d,
        mu_norm_sq,
        a_inv_y,
        a_inv_y_noisy,
        a_inv_nu,
        y,
        y_noisy,
        chol,
    })
}

/// Closed-form (XX^T)^{-1} =
/// A^{-1} - d^{-1} A^{-1}[(1+h)(y nu^T + nu y^T) - s nu nu^T + (||mu||^2 - t) y y^T] A^{-1}.
pub fn woodbury_inverse(gram: &GramDecomposition) -> Result<DMatrix<f64>> {
    gram.require_nondegenerate()?;
    let a_inv = gram.a_inverse();
    let u = &gram.a_inv_y; // A^{-1} y
    let v = &gram.a_inv_nu; // A^{-1} nu
    let one_h = 1.0 + gram.h;
    let uvt = u * v.transpose();
    let mid = (&uvt + uvt.transpose()) * one_h - (v * v.transpose()) * gram.s
        + (u * u.transpose()) * (gram.mu_norm_sq - gram.t);
    Ok(a_inv - mid / gram.d)
}

/// Closed-form (XX^T)^{-1} y_noisy = d^{-1} A^{-1} [ d y_noisy
/// - (s_N(||mu||^2 - t) + h_N(1+h)) y + (h_N s - s_N(1+h)) nu ].
pub fn expansion_vector(gram: &GramDecomposition) -> Result<DVector<f64>> {
    gram.require_nondegenerate()?;
    let c_y = gram.s_n * (gram.mu_norm_sq - gram.t) + gram.h_n * (1.0 + gram.h);
    let c_nu = gram.h_n * gram.s - gram.s_n * (1.0 + gram.h);
    Ok((&gram.a_inv_y_noisy * gram.d - &gram.a_inv_y * c_y + &gram.a_inv_nu * c_nu) / gram.d)
}

/// Noiseless specialization (y_noisy = y): d^{-1} A^{-1} [(1+h) y - s nu].
pub fn expansion_vector_noiseless(gram: &GramDecomposition) -> Result<DVector<f64>> {
    gram.require_nondegenerate()?;
    Ok((&gram.a_inv_y * (1.0 + gram.h) - &gram.a_inv_nu * gram.s) / gram.d)
}

impl GramDecomposition {
    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn y_noisy(&self) -> &DVector<f64> {
        &self.y_noisy
    }
}
