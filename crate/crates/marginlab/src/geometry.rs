//! Geometric structure of the max-margin direction: the convex-combination
//! representation of w/||w||^2, the hyperplane foot point of the folded
//! noise rows, the clean/noisy split with its exact orthogonal-case
//! weights, and the sphere-cap measure estimator.

use nalgebra::{Cholesky, DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classify::Classifier;
use crate::error::{Error, Result};
use crate::model::Dataset;
use crate::rng;

fn spd_solve_ones(gram: DMatrix<f64>) -> Result<DVector<f64>> {
    let n = gram.nrows();
    let chol = Cholesky::new(gram).ok_or(Error::SingularGram {
        min_eig: 0.0,
        max_eig: f64::NAN,
    })?;
    Ok(chol.solve(&DVector::from_element(n, 1.0)))
}

/// Foot of the perpendicular from the origin onto the affine hull of
/// margin-1 solutions for the folded rows: rows^T G^{-1} 1 / (1^T G^{-1} 1)
/// with G the row Gram. Satisfies ||out||^2 = 1/(1^T G^{-1} 1) and
/// rows * out = ||out||^2 * 1.
pub fn z_perp(folded_rows: &DMatrix<f64>) -> Result<DVector<f64>> {
    let weights = spd_solve_ones(folded_rows * folded_rows.transpose())?;
    let total: f64 = weights.sum();
    if total == 0.0 {
        return Err(Error::InvalidArgument(
            "degenerate geometry: weights sum to zero".into(),
        ));
    }
    Ok(folded_rows.transpose() * &weights / total)
}

/// Split of w/||w||^2 into clean and noisy convex masses.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GeometricDecomposition {
    /// Convex weights over samples, summing to 1.
    pub alpha: DVector<f64>,
    /// Total weight on clean samples.
    pub nu_c: f64,
    /// Total weight on noisy samples.
    pub nu_n: f64,
    /// Weight-averaged folded noise over clean samples.
    pub z_perp_c: DVector<f64>,
    /// Weight-averaged folded noise over noisy samples.
    pub z_perp_n: DVector<f64>,
    /// || w/||w||^2 - nu_c (z_perp_c + mu) - nu_n (z_perp_n - mu) ||.
    pub reconstruction_residual: f64,
    /// True when one side has no samples (its mass is 0, vector 0).
    pub clean_empty: bool,
    pub noisy_empty: bool,
}

impl GeometricDecomposition {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("decomposition serializes")
    }
}

/// Computes the convex representation w/||w||^2 = sum_i alpha_i xbar_i with
/// alpha proportional to (Xbar Xbar^T)^{-1} 1, then splits it into the
/// clean and noisy sample clouds. The reconstruction residual is reported
/// against the supplied classifier; it vanishes when every margin is 1.
pub fn clean_noisy_decomposition(
    dataset: &Dataset,
    classifier: &Classifier,
) -> Result<GeometricDecomposition> {
    let folded = dataset.folded_rows();
    let weights = spd_solve_ones(&folded * folded.transpose())?;
    let total: f64 = weights.sum();
    if total == 0.0 {
        return Err(Error::InvalidArgument(
            "degenerate geometry: weights sum to zero".into(),
        ));
    }
    let alpha = &weights / total;

    let n = dataset.n();
    let p = dataset.p();
    let folded_z = dataset.folded_z();
    let mu = dataset.mu();
    let mut nu_c = 0.0;
    let mut nu_n = 0.0;
    let mut sum_c = DVector::zeros(p);
    let mut sum_n = DVector::zeros(p);
    for i in 0..n {
        let zi = folded_z.row(i).transpose();
        if dataset.is_noisy(i) {
            nu_n += alpha[i];
            sum_n += zi * alpha[i];
        } else {
            nu_c += alpha[i];
            sum_c += zi * alpha[i];
        }
    }
    let clean_empty = nu_c == 0.0;
    let noisy_empty = nu_n == 0.0;
    let z_perp_c = if clean_empty { DVector::zeros(p) } else { &sum_c / nu_c };
    let z_perp_n = if noisy_empty { DVector::zeros(p) } else { &sum_n / nu_n };

    let w_sq = classifier.w.norm_squared();
    if w_sq == 0.0 {
        return Err(Error::InvalidArgument("classifier weight vector is zero".into()));
    }
    let target = &classifier.w / w_sq;
    let recon = (&z_perp_c + &mu) * nu_c + (&z_perp_n - &mu) * nu_n;
    let reconstruction_residual = (target - recon).norm();

    Ok(GeometricDecomposition {
        alpha,
        nu_c,
        nu_n,
        z_perp_c,
        z_perp_n,
        reconstruction_residual,
        clean_empty,
        noisy_empty,
    })
}

/// Closed-form clean/noisy masses in the exactly orthogonal model with
/// balanced inverse-square norms; x = n rho ||mu||^2.
pub fn orthogonal_nu_formulas(eta: f64, x: f64) -> Result<(f64, f64)> {
    if !(0.0..0.5).contains(&eta) {
        return Err(Error::InvalidArgument(format!("eta must lie in [0, 1/2); got {eta}")));
    }
    if x < 0.0 {
        return Err(Error::InvalidArgument(format!("x must be nonnegative; got {x}")));
    }
    let q = eta * (1.0 - eta);
    let nu_c = (1.0 - eta + 2.0 * q * x) / (1.0 + 4.0 * q * x);
    Ok((nu_c, 1.0 - nu_c))
}

/// A Monte Carlo fraction with its standard error.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CapEstimate {
    pub value: f64,
    pub standard_error: f64,
}

const MC_CHUNK: usize = 1024;

/// Fraction of the sqrt(p)-radius sphere within normalized distance d of a
/// hemisphere, i.e. P(u_1 >= -d/sqrt(p)) for u uniform on the unit sphere.
/// Sphere points come from normalized Gaussians; chunk streams depend only
/// on (seed, chunk), so two calls with the same seed share random numbers.
pub fn cap_fraction_mc(p: usize, d: f64, n_mc: usize, seed: u64) -> Result<CapEstimate> {
    if p < 2 {
        return Err(Error::InvalidArgument(format!("dimension must be >= 2; got {p}")));
    }
    if d < 0.0 {
        return Err(Error::InvalidArgument(format!("distance must be >= 0; got {d}")));
    }
    if n_mc < 1000 {
        return Err(Error::InvalidArgument(format!(
            "Monte Carlo needs at least 1000 samples; got {n_mc}"
        )));
    }
    let threshold = -d / (p as f64).sqrt();
    let chunks = n_mc.div_ceil(MC_CHUNK);
    let hits: u64 = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = rng::stream(seed, &[0xca9, c as u64]);
            let lo = c * MC_CHUNK;
            let hi = ((c + 1) * MC_CHUNK).min(n_mc);
            let mut count = 0u64;
            for _ in lo..hi {
                // u_1 = g_1 / ||g||; only the first coordinate is needed.
                let mut first = 0.0;
                let mut norm_sq = 0.0;
                for j in 0..p {
                    let g: f64 = rand_distr::Distribution::sample(
                        &rand_distr::StandardNormal,
                        &mut rng,
                    );
                    if j == 0 {
                        first = g;
                    }
                    norm_sq += g * g;
                }
                if first / norm_sq.sqrt() >= threshold {
                    count += 1;
                }
            }
            count
        })
        .sum();
    let value = hits as f64 / n_mc as f64;
    let standard_error = (value * (1.0 - value) / n_mc as f64).sqrt();
    Ok(CapEstimate { value, standard_error })
}
