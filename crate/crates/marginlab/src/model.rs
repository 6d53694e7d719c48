//! Model specifications and dataset sampling.
//!
//! A sample is x = y mu + z with y uniform on {-1,+1}, observed label
//! y_noisy = -y with probability eta, and noise z = g * Sigma^{1/2} xi for a
//! radial scale g (E g^2 = 1) and i.i.d. unit-variance coordinates xi.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::rng;

/// Covariance descriptor. Structured variants avoid materializing a p x p
/// matrix, which matters for the large-p event-frequency runs.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SigmaSpec {
    Identity { p: usize },
    Diagonal { eigenvalues: Vec<f64> },
    /// lambda_max on the first `spikes` coordinates, lambda_min elsewhere.
    Spiked { p: usize, spikes: usize, lambda_max: f64, lambda_min: f64 },
    Full { matrix: Vec<Vec<f64>> },
}

/// Realized factor F with F F^T = Sigma.
#[derive(Debug, Clone)]
pub enum CovarianceFactor {
    /// Square roots of the eigenvalues of a diagonal Sigma.
    Diagonal(Vec<f64>),
    /// Symmetric square root of a dense Sigma.
    Dense(DMatrix<f64>),
}

impl CovarianceFactor {
    pub fn apply(&self, xi: &DVector<f64>) -> DVector<f64> {
        match self {
            CovarianceFactor::Diagonal(d) => {
                DVector::from_iterator(d.len(), d.iter().zip(xi.iter()).map(|(f, x)| f * x))
            }
            CovarianceFactor::Dense(f) => f * xi,
        }
    }

    pub fn as_matrix(&self) -> DMatrix<f64> {
        match self {
            CovarianceFactor::Diagonal(d) => {
                DMatrix::from_diagonal(&DVector::from_column_slice(d))
            }
            CovarianceFactor::Dense(f) => f.clone(),
        }
    }
}

impl SigmaSpec {
    pub fn p(&self) -> usize {
        match self {
            SigmaSpec::Identity { p } | SigmaSpec::Spiked { p, .. } => *p,
            SigmaSpec::Diagonal { eigenvalues } => eigenvalues.len(),
            SigmaSpec::Full { matrix } => matrix.len(),
        }
    }

    /// True when the covariance is exactly the identity matrix.
    pub fn is_identity(&self) -> bool {
        match self {
            SigmaSpec::Identity { .. } => true,
            SigmaSpec::Diagonal { eigenvalues } => eigenvalues.iter().all(|&v| v == 1.0),
            SigmaSpec::Spiked { lambda_max, lambda_min, .. } => {
                *lambda_max == 1.0 && *lambda_min == 1.0
            }
            SigmaSpec::Full { matrix } => matrix.iter().enumerate().all(|(i, row)| {
                row.iter().enumerate().all(|(j, &v)| v == if i == j { 1.0 } else { 0.0 })
            }),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.p() == 0 {
            return Err(Error::InvalidSpec("covariance dimension must be >= 1".into()));
        }
        match self {
            SigmaSpec::Identity { .. } => Ok(()),
            SigmaSpec::Diagonal { eigenvalues } => {
                if let Some(&bad) = eigenvalues.iter().find(|&&v| v < 0.0) {
                    return Err(Error::NotPsd { eigenvalue: bad, tolerance: 0.0 });
                }
                Ok(())
            }
            SigmaSpec::Spiked { p, spikes, lambda_max, lambda_min } => {
                if spikes > p {
                    return Err(Error::InvalidSpec(format!(
                        "spike count {spikes} exceeds dimension {p}"
                    )));
                }
                if *lambda_min < 0.0 || *lambda_max < *lambda_min {
                    return Err(Error::InvalidSpec(
                        "spiked spectrum needs 0 <= lambda_min <= lambda_max".into(),
                    ));
                }
                Ok(())
            }
            SigmaSpec::Full { matrix } => {
                let p = matrix.len();
                if matrix.iter().any(|row| row.len() != p) {
                    return Err(Error::InvalidSpec("covariance matrix is not square".into()));
                }
                for i in 0..p {
                    for j in (i + 1)..p {
                        if (matrix[i][j] - matrix[j][i]).abs()
                            > 1e-10 * matrix[i][i].abs().max(1.0)
                        {
                            return Err(Error::InvalidSpec(format!(
                                "covariance not symmetric at ({i},{j})"
                            )));
                        }
                    }
                }
                // PSD check happens in `factor`, which is also where the
                // offending eigenvalue is reported.
                self.factor().map(|_| ())
            }
        }
    }

    fn dense(&self) -> DMatrix<f64> {
        match self {
            SigmaSpec::Identity { p } => DMatrix::identity(*p, *p),
            SigmaSpec::Diagonal { eigenvalues } => {
                DMatrix::from_diagonal(&DVector::from_column_slice(eigenvalues))
            }
            SigmaSpec::Spiked { p, spikes, lambda_max, lambda_min } => {
                let eig: Vec<f64> = (0..*p)
                    .map(|i| if i < *spikes { *lambda_max } else { *lambda_min })
                    .collect();
                DMatrix::from_diagonal(&DVector::from_column_slice(&eig))
            }
            SigmaSpec::Full { matrix } => {
                let p = matrix.len();
                DMatrix::from_fn(p, p, |i, j| matrix[i][j])
            }
        }
    }

    /// tr(Sigma).
    pub fn trace(&self) -> f64 {
        match self {
            SigmaSpec::Identity { p } => *p as f64,
            SigmaSpec::Diagonal { eigenvalues } => eigenvalues.iter().sum(),
            SigmaSpec::Spiked { p, spikes, lambda_max, lambda_min } => {
                *spikes as f64 * lambda_max + (*p - *spikes) as f64 * lambda_min
            }
            SigmaSpec::Full { matrix } => (0..matrix.len()).map(|i| matrix[i][i]).sum(),
        }
    }

    /// ||Sigma||_F.
    pub fn frobenius_norm(&self) -> f64 {
        match self {
            SigmaSpec::Identity { p } => (*p as f64).sqrt(),
            SigmaSpec::Diagonal { eigenvalues } => {
                eigenvalues.iter().map(|v| v * v).sum::<f64>().sqrt()
            }
            SigmaSpec::Spiked { p, spikes, lambda_max, lambda_min } => (*spikes as f64
                * lambda_max.powi(2)
                + (*p - *spikes) as f64 * lambda_min.powi(2))
            .sqrt(),
            SigmaSpec::Full { matrix } => matrix
                .iter()
                .flat_map(|r| r.iter())
                .map(|v| v * v)
                .sum::<f64>()
                .sqrt(),
        }
    }

    /// ||Sigma|| (spectral norm) = largest eigenvalue.
    pub fn op_norm(&self) -> f64 {
        match self {
            SigmaSpec::Identity { .. } => 1.0,
            SigmaSpec::Diagonal { eigenvalues } => {
                eigenvalues.iter().cloned().fold(0.0, f64::max)
            }
            SigmaSpec::Spiked { spikes, lambda_max, lambda_min, .. } => {
                if *spikes > 0 { *lambda_max } else { *lambda_min }
            }
            SigmaSpec::Full { matrix } => {
                let p = matrix.len();
                let m = DMatrix::from_fn(p, p, |i, j| matrix[i][j]);
                m.symmetric_eigen().eigenvalues.iter().cloned().fold(0.0, f64::max)
            }
        }
    }

    /// Smallest eigenvalue.
    pub fn lambda_min(&self) -> f64 {
        match self {
            SigmaSpec::Identity { .. } => 1.0,
            SigmaSpec::Diagonal { eigenvalues } => {
                eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min)
            }
            SigmaSpec::Spiked { p, spikes, lambda_max, lambda_min, .. } => {
                if *spikes >= *p { *lambda_max } else { *lambda_min }
            }
            SigmaSpec::Full { matrix } => {
                let p = matrix.len();
                let m = DMatrix::from_fn(p, p, |i, j| matrix[i][j]);
                m.symmetric_eigen().eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min)
            }
        }
    }

    /// ||Sigma^{1/2} mu||.
    pub fn half_mu_norm(&self, mu: &DVector<f64>) -> f64 {
        match self {
            SigmaSpec::Identity { .. } => mu.norm(),
            SigmaSpec::Diagonal { eigenvalues } => eigenvalues
                .iter()
                .zip(mu.iter())
                .map(|(l, m)| l * m * m)
                .sum::<f64>()
                .sqrt(),
            SigmaSpec::Spiked { spikes, lambda_max, lambda_min, .. } => mu
                .iter()
                .enumerate()
                .map(|(i, m)| if i < *spikes { lambda_max * m * m } else { lambda_min * m * m })
                .sum::<f64>()
                .sqrt(),
            SigmaSpec::Full { .. } => {
                // mu^T Sigma mu
                let sigma = self.dense();
                (mu.dot(&(&sigma * mu))).max(0.0).sqrt()
            }
        }
    }

    /// w^T Sigma w, used by the exact Gaussian test error.
    pub fn quadratic_form(&self, w: &DVector<f64>) -> f64 {
        self.half_mu_norm(w).powi(2)
    }

    /// Computes F with F F^T = Sigma. Diagonal-like specs get a diagonal
    /// factor; dense specs get the symmetric square root via eigensolve,
    /// with slightly negative eigenvalues (down to -1e-8 ||Sigma||)
    /// clamped to zero.
    pub fn factor(&self) -> Result<CovarianceFactor> {
        match self {
            SigmaSpec::Identity { p } => Ok(CovarianceFactor::Diagonal(vec![1.0; *p])),
            SigmaSpec::Diagonal { eigenvalues } => {
                if let Some(&bad) = eigenvalues.iter().find(|&&v| v < 0.0) {
                    return Err(Error::NotPsd { eigenvalue: bad, tolerance: 0.0 });
                }
                Ok(CovarianceFactor::Diagonal(
                    eigenvalues.iter().map(|v| v.sqrt()).collect(),
                ))
            }
            SigmaSpec::Spiked { p, spikes, lambda_max, lambda_min } => {
                self.validate()?;
                Ok(CovarianceFactor::Diagonal(
                    (0..*p)
                        .map(|i| if i < *spikes { lambda_max.sqrt() } else { lambda_min.sqrt() })
                        .collect(),
                ))
            }
            SigmaSpec::Full { .. } => {
                let sigma = self.dense();
                let op = sigma
                    .clone()
                    .symmetric_eigen()
                    .eigenvalues
                    .iter()
                    .fold(0.0f64, |a, &v| a.max(v.abs()));
                let tol = 1e-8 * op;
                let eig = sigma.symmetric_eigen();
                let mut vals = eig.eigenvalues.clone();
                for v in vals.iter_mut() {
                    if *v < -tol {
                        return Err(Error::NotPsd { eigenvalue: *v, tolerance: -tol });
                    }
                    if *v < 0.0 {
                        *v = 0.0;
                    }
                }
                let sqrt_vals = vals.map(|v| v.sqrt());
                let f = &eig.eigenvectors
                    * DMatrix::from_diagonal(&sqrt_vals)
                    * eig.eigenvectors.transpose();
                Ok(CovarianceFactor::Dense(f))
            }
        }
    }
}

/// Convenience wrapper matching the operation name used throughout.
pub fn covariance_factor(sigma: &SigmaSpec) -> Result<CovarianceFactor> {
    sigma.factor()
}

/// Signal vector: explicit, along the first axis, or direction + norm.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MuSpec {
    Axis { norm: f64 },
    Explicit { values: Vec<f64> },
    Direction { direction: Vec<f64>, norm: f64 },
}

impl MuSpec {
    pub fn vector(&self, p: usize) -> DVector<f64> {
        match self {
            MuSpec::Axis { norm } => {
                let mut v = DVector::zeros(p);
                if p > 0 {
                    v[0] = *norm;
                }
                v
            }
            MuSpec::Explicit { values } => DVector::from_column_slice(values),
            MuSpec::Direction { direction, norm } => {
                let d = DVector::from_column_slice(direction);
                let len = d.norm();
                d * (*norm / len)
            }
        }
    }

    pub fn norm(&self) -> f64 {
        match self {
            MuSpec::Axis { norm } | MuSpec::Direction { norm, .. } => norm.abs(),
            MuSpec::Explicit { values } => values.iter().map(|v| v * v).sum::<f64>().sqrt(),
        }
    }

    fn validate(&self, p: usize) -> Result<()> {
        match self {
            MuSpec::Axis { .. } => Ok(()),
            MuSpec::Explicit { values } => {
                if values.len() != p {
                    return Err(Error::InvalidSpec(format!(
                        "mu has length {} but p = {p}",
                        values.len()
                    )));
                }
                Ok(())
            }
            MuSpec::Direction { direction, .. } => {
                if direction.len() != p {
                    return Err(Error::InvalidSpec(format!(
                        "mu direction has length {} but p = {p}",
                        direction.len()
                    )));
                }
                if direction.iter().map(|v| v * v).sum::<f64>() == 0.0 {
                    return Err(Error::InvalidSpec("mu direction is the zero vector".into()));
                }
                Ok(())
            }
        }
    }
}

/// Radial-scale law with declared moment orders ell (None = infinity) and k.
/// Each variant has closed-form moments so E g^2 = 1 and the threshold constants
/// are checked analytically, never by sampling.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct GLawSpec {
    pub law: GLaw,
    /// Declared order ell in [2, infinity]; None encodes infinity.
    pub ell: Option<f64>,
    /// Declared order k in (2, 4].
    pub k: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GLaw {
    ConstantOne,
    /// g = lo with probability 1 - prob_hi, hi with probability prob_hi.
    TwoPoint { lo: f64, hi: f64, prob_hi: f64 },
    /// g = exp(sigma W - sigma^2), W standard normal, so that E g^2 = 1.
    LogNormal { sigma: f64 },
}

impl GLaw {
    /// E g^q for any real q (negative q allowed; all shipped laws have
    /// finite negative moments).
    pub fn moment(&self, q: f64) -> f64 {
        match self {
            GLaw::ConstantOne => 1.0,
            GLaw::TwoPoint { lo, hi, prob_hi } => {
                (1.0 - prob_hi) * lo.powf(q) + prob_hi * hi.powf(q)
            }
            GLaw::LogNormal { sigma } => {
                let m = -sigma * sigma;
                (q * m + 0.5 * q * q * sigma * sigma).exp()
            }
        }
    }

    /// ||g||_{L^q} = (E g^q)^{1/q}; q = None means the essential sup.
    pub fn lp_norm(&self, q: Option<f64>) -> Result<f64> {
        match q {
            Some(q) => Ok(self.moment(q).powf(1.0 / q)),
            None => match self {
                GLaw::ConstantOne => Ok(1.0),
                GLaw::TwoPoint { hi, .. } => Ok(*hi),
                GLaw::LogNormal { .. } => Err(Error::InvalidSpec(
                    "log-normal g is unbounded; declare a finite ell".into(),
                )),
            },
        }
    }

    pub(crate) fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        match self {
            GLaw::ConstantOne => 1.0,
            GLaw::TwoPoint { lo, hi, prob_hi } => {
                if rng.gen::<f64>() < *prob_hi {
                    *hi
                } else {
                    *lo
                }
            }
            GLaw::LogNormal { sigma } => {
                let w: f64 = StandardNormal.sample(rng);
                (sigma * w - sigma * sigma).exp()
            }
        }
    }
}

impl GLawSpec {
    pub fn constant_one() -> Self {
        GLawSpec { law: GLaw::ConstantOne, ell: None, k: 4.0 }
    }

    pub fn validate(&self) -> Result<()> {
        let second = self.law.moment(2.0);
        if (second - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidSpec(format!(
                "g law must have E g^2 = 1; got {second}"
            )));
        }
        if let GLaw::TwoPoint { lo, hi, prob_hi } = &self.law {
            if *lo <= 0.0 || *hi <= 0.0 || !(0.0..=1.0).contains(prob_hi) {
                return Err(Error::InvalidSpec("two-point g needs lo, hi > 0 and prob in [0,1]".into()));
            }
        }
        if let Some(ell) = self.ell {
            if ell < 2.0 {
                return Err(Error::InvalidSpec(format!("ell must be >= 2; got {ell}")));
            }
        }
        // ell = None (infinity) must come with a bounded law.
        self.law.lp_norm(self.ell)?;
        if !(self.k > 2.0 && self.k <= 4.0) {
            return Err(Error::InvalidSpec(format!("k must lie in (2, 4]; got {}", self.k)));
        }
        Ok(())
    }

    /// (n/delta)^{1/ell}, interpreting 1/infinity as 0.
    pub fn delta_power(&self, n: usize, delta: f64) -> f64 {
        match self.ell {
            Some(ell) => (n as f64 / delta).powf(1.0 / ell),
            None => 1.0,
        }
    }
}

/// Coordinate law: mean 0, variance 1, with analytic (r, K) such that
/// E |xi|^r <= K.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum XiLaw {
    Gaussian,
    Rademacher,
    /// Student-t with dof degrees of freedom, scaled to unit variance;
    /// r must be declared in (2, 4] with r < dof.
    StudentT { dof: f64, r: f64 },
}

impl XiLaw {
    /// Declared moment order r in (2, 4].
    pub fn r(&self) -> f64 {
        match self {
            XiLaw::Gaussian | XiLaw::Rademacher => 4.0,
            XiLaw::StudentT { r, .. } => *r,
        }
    }

    /// Analytic bound K with E |xi|^r <= K (exact value of the moment).
    pub fn big_k(&self) -> f64 {
        match self {
            XiLaw::Gaussian => 3.0,   // E xi^4 for the standard normal
            XiLaw::Rademacher => 1.0, // |xi| = 1
            XiLaw::StudentT { dof, r } => {
                // E |T_dof|^r = dof^{r/2} G((r+1)/2) G((dof-r)/2) / (sqrt(pi) G(dof/2)),
                // then scale by ((dof-2)/dof)^{r/2} for unit variance.
                let ln = 0.5 * r * dof.ln() + ln_gamma((r + 1.0) / 2.0)
                    + ln_gamma((dof - r) / 2.0)
                    - 0.5 * std::f64::consts::PI.ln()
                    - ln_gamma(dof / 2.0);
                ((dof - 2.0) / dof).powf(r / 2.0) * ln.exp()
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let r = self.r();
        if !(r > 2.0 && r <= 4.0) {
            return Err(Error::InvalidSpec(format!("r must lie in (2, 4]; got {r}")));
        }
        if let XiLaw::StudentT { dof, r } = self {
            if *dof <= *r {
                return Err(Error::InvalidSpec(format!(
                    "student-t needs dof > r; got dof = {dof}, r = {r}"
                )));
            }
            if *dof <= 2.0 {
                return Err(Error::InvalidSpec("student-t needs dof > 2 for unit variance".into()));
            }
        }
        Ok(())
    }

    pub(crate) fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        match self {
            XiLaw::Gaussian => StandardNormal.sample(rng),
            XiLaw::Rademacher => {
                if rng.gen::<bool>() {
                    1.0
                } else {
                    -1.0
                }
            }
            XiLaw::StudentT { dof, .. } => {
                let t: f64 = StudentT::new(*dof).expect("validated dof").sample(rng);
                t * ((dof - 2.0) / dof).sqrt()
            }
        }
    }
}

/// Full description of the data-generating process.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ModelSpec {
    pub mu: MuSpec,
    pub sigma: SigmaSpec,
    pub eta: f64,
    pub g: GLawSpec,
    pub xi: XiLaw,
    pub n: usize,
    pub p: usize,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..0.5).contains(&self.eta) {
            return Err(Error::InvalidSpec(format!("eta must lie in [0, 0.5); got {}", self.eta)));
        }
        if self.n == 0 || self.p == 0 {
            return Err(Error::InvalidSpec("n and p must be >= 1".into()));
        }
        if self.sigma.p() != self.p {
            return Err(Error::InvalidSpec(format!(
                "covariance dimension {} does not match p = {}",
                self.sigma.p(),
                self.p
            )));
        }
        self.sigma.validate()?;
        self.mu.validate(self.p)?;
        self.g.validate()?;
        self.xi.validate()?;
        Ok(())
    }

    pub fn mu_vector(&self) -> DVector<f64> {
        self.mu.vector(self.p)
    }

    /// True when the noise is exactly Gaussian (g constant, xi Gaussian),
    /// which enables the closed-form test error.
    pub fn is_gaussian_noise(&self) -> bool {
        matches!(self.g.law, GLaw::ConstantOne) && matches!(self.xi, XiLaw::Gaussian)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model spec serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let spec: ModelSpec =
            serde_json::from_str(s).map_err(|e| Error::InvalidSpec(format!("bad spec JSON: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }
}

/// One realized sample from a model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Dataset {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub y_noisy: DVector<f64>,
    pub z: DMatrix<f64>,
    pub g_values: DVector<f64>,
    pub spec: ModelSpec,
    pub seed: u64,
}

impl Dataset {
    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn mu(&self) -> DVector<f64> {
        self.spec.mu_vector()
    }

    /// Row i of the label-folded design: y_noisy_i * x_i.
    pub fn folded_rows(&self) -> DMatrix<f64> {
        let mut m = self.x.clone();
        for i in 0..self.n() {
            m.row_mut(i).scale_mut(self.y_noisy[i]);
        }
        m
    }

    /// Row i of the label-folded noise: y_noisy_i * z_i.
    pub fn folded_z(&self) -> DMatrix<f64> {
        let mut m = self.z.clone();
        for i in 0..self.n() {
            m.row_mut(i).scale_mut(self.y_noisy[i]);
        }
        m
    }

    pub fn is_noisy(&self, i: usize) -> bool {
        self.y[i] != self.y_noisy[i]
    }

    pub fn noisy_count(&self) -> usize {
        (0..self.n()).filter(|&i| self.is_noisy(i)).count()
    }
}

/// Samples a dataset. Each row draws from its own counter-derived stream,
/// so the result is identical whether rows are filled serially or in
/// parallel.
pub fn sample_dataset(spec: &ModelSpec, seed: u64) -> Result<Dataset> {
    spec.validate()?;
    let factor = spec.sigma.factor()?;
    let mu = spec.mu_vector();
    let (n, p) = (spec.n, spec.p);

    struct Row {
        y: f64,
        y_noisy: f64,
        g: f64,
        z: DVector<f64>,
    }

    let rows: Vec<Row> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut r = rng::stream(seed, &[i as u64]);
            let y: f64 = if r.gen::<bool>() { 1.0 } else { -1.0 };
            let flip = r.gen::<f64>() < spec.eta;
            let y_noisy = if flip { -y } else { y };
            let g = spec.g.law.sample(&mut r);
            let xi = DVector::from_iterator(p, (0..p).map(|_| spec.xi.sample(&mut r)));
            let z = factor.apply(&xi) * g;
            Row { y, y_noisy, g, z }
        })
        .collect();

    let mut x = DMatrix::zeros(n, p);
    let mut z = DMatrix::zeros(n, p);
    let mut y = DVector::zeros(n);
    let mut y_noisy = DVector::zeros(n);
    let mut g_values = DVector::zeros(n);
    for (i, row) in rows.into_iter().enumerate() {
        y[i] = row.y;
        y_noisy[i] = row.y_noisy;
        g_values[i] = row.g;
        for j in 0..p {
            x[(i, j)] = row.y * mu[j] + row.z[j];
            z[(i, j)] = row.z[j];
        }
    }

    Ok(Dataset { x, y, y_noisy, z, g_values, spec: spec.clone(), seed })
}

/// Builds an exactly orthogonal dataset: mu = mu_norm * e_1 and
/// z_i = norms[i] * e_{i+1}. All underlying labels are +1; the first
/// n_clean rows keep their label and the remaining n_noisy rows are
/// flipped. Used by the clean/noisy geometry identities, which hold
/// exactly in this configuration.
pub fn make_orthogonal_fixture(
    n_clean: usize,
    n_noisy: usize,
    norms: &[f64],
    mu_norm: f64,
    p: usize,
) -> Result<Dataset> {
    let n = n_clean + n_noisy;
    if norms.len() != n {
        return Err(Error::InvalidArgument(format!(
            "norms has length {}, expected n_clean + n_noisy = {n}",
            norms.len()
        )));
    }
    if p < n + 1 {
        return Err(Error::InvalidArgument(format!(
            "p = {p} too small; need p >= n_clean + n_noisy + 1 = {}",
            n + 1
        )));
    }
    if n == 0 {
        return Err(Error::InvalidArgument("fixture needs at least one row".into()));
    }
    if let Some(&bad) = norms.iter().find(|&&v| v <= 0.0) {
        return Err(Error::InvalidArgument(format!("norms must be positive; got {bad}")));
    }

    let mut z = DMatrix::zeros(n, p);
    let mut x = DMatrix::zeros(n, p);
    let y = DVector::from_element(n, 1.0);
    let mut y_noisy = DVector::from_element(n, 1.0);
    for i in n_clean..n {
        y_noisy[i] = -1.0;
    }
    for i in 0..n {
        z[(i, i + 1)] = norms[i];
        x[(i, 0)] = mu_norm; // y_i * mu with y_i = +1
        x[(i, i + 1)] = norms[i];
    }

    // The spec field records how the fixture was built; eta is the realized
    // flip fraction (metadata only — the fixture is deterministic).
    let spec = ModelSpec {
        mu: MuSpec::Axis { norm: mu_norm },
        sigma: SigmaSpec::Identity { p },
        eta: n_noisy as f64 / n as f64,
        g: GLawSpec::constant_one(),
        xi: XiLaw::Gaussian,
        n,
        p,
    };

    Ok(Dataset {
        x,
        y,
        y_noisy,
        z,
        g_values: DVector::from_element(n, 1.0),
        spec,
        seed: 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn gaussian_spec(n: usize, p: usize, mu_norm: f64, eta: f64) -> ModelSpec {
        ModelSpec {
            mu: MuSpec::Axis { norm: mu_norm },
            sigma: SigmaSpec::Identity { p },
            eta,
            g: GLawSpec::constant_one(),
            xi: XiLaw::Gaussian,
            n,
            p,
        }
    }

    #[test]
    fn identity_factor_is_identity() {
        let f = covariance_factor(&SigmaSpec::Identity { p: 3 }).unwrap();
        let m = f.as_matrix();
        assert_eq!(m, DMatrix::identity(3, 3));
    }

    #[test]
    fn diagonal_factor_is_elementwise_sqrt() {
        let f = covariance_factor(&SigmaSpec::Diagonal { eigenvalues: vec![4.0, 1.0] }).unwrap();
        match f {
            CovarianceFactor::Diagonal(d) => assert_eq!(d, vec![2.0, 1.0]),
            _ => panic!("expected diagonal factor"),
        }
    }

    #[test]
    fn full_factor_reconstructs() {
        let sigma = SigmaSpec::Full { matrix: vec![vec![2.0, 1.0], vec![1.0, 2.0]] };
        let f = covariance_factor(&sigma).unwrap().as_matrix();
        let rec = &f * f.transpose();
        let target = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        assert!((rec - target).norm() <= 1e-12);
    }

    #[test]
    fn non_psd_rejected_with_eigenvalue() {
        let sigma = SigmaSpec::Full { matrix: vec![vec![1.0, 2.0], vec![2.0, 1.0]] };
        match covariance_factor(&sigma) {
            Err(Error::NotPsd { eigenvalue, .. }) => assert!(eigenvalue < 0.0),
            other => panic!("expected NotPsd, got {other:?}"),
        }
    }

    #[test]
    fn noiseless_labels_match() {
        let spec = gaussian_spec(50, 10, 1.0, 0.0);
        let ds = sample_dataset(&spec, 42).unwrap();
        assert_eq!(ds.y, ds.y_noisy);
    }

    #[test]
    fn reconstruction_is_exact() {
        let spec = gaussian_spec(20, 8, 2.5, 0.3);
        let ds = sample_dataset(&spec, 7).unwrap();
        let mu = ds.mu();
        for i in 0..ds.n() {
            for j in 0..ds.p() {
                assert_eq!(ds.x[(i, j)], ds.y[i] * mu[j] + ds.z[(i, j)]);
            }
        }
    }

    #[test]
    fn sampling_is_seed_deterministic() {
        let spec = gaussian_spec(12, 6, 1.0, 0.2);
        let a = sample_dataset(&spec, 99).unwrap();
        let b = sample_dataset(&spec, 99).unwrap();
        assert_eq!(a.x, b.x);
        assert_eq!(a.y, b.y);
        assert_eq!(a.y_noisy, b.y_noisy);
        let c = sample_dataset(&spec, 100).unwrap();
        assert_ne!(a.x, c.x);
    }

    #[test]
    fn flips_only_change_sign() {
        let spec = gaussian_spec(200, 3, 1.0, 0.4);
        let ds = sample_dataset(&spec, 5).unwrap();
        for i in 0..ds.n() {
            assert!(ds.y_noisy[i] == ds.y[i] || ds.y_noisy[i] == -ds.y[i]);
        }
        assert!(ds.noisy_count() > 0);
    }

    #[test]
    fn label_noise_rate_concentrates() {
        let spec = gaussian_spec(10_000, 2, 1.0, 0.25);
        let ds = sample_dataset(&spec, 11).unwrap();
        let frac = ds.noisy_count() as f64 / ds.n() as f64;
        let slack = 3.0 * (0.25f64 * 0.75 / 10_000.0).sqrt();
        assert!((frac - 0.25).abs() <= slack, "frac = {frac}");
    }

    #[test]
    fn gaussian_moments_concentrate() {
        let spec = ModelSpec {
            mu: MuSpec::Explicit { values: vec![0.0, 0.0] },
            sigma: SigmaSpec::Identity { p: 2 },
            eta: 0.0,
            g: GLawSpec::constant_one(),
            xi: XiLaw::Gaussian,
            n: 100_000,
            p: 2,
        };
        let ds = sample_dataset(&spec, 1).unwrap();
        for j in 0..2 {
            let col = ds.z.column(j);
            let mean = col.sum() / ds.n() as f64;
            let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / ds.n() as f64;
            assert!(mean.abs() <= 3.0 / (ds.n() as f64).sqrt(), "mean {mean}");
            assert!((var - 1.0).abs() <= 0.02, "var {var}");
        }
    }

    #[test]
    fn diagonal_covariance_sample_matches() {
        let spec = ModelSpec {
            mu: MuSpec::Explicit { values: vec![0.0, 0.0] },
            sigma: SigmaSpec::Diagonal { eigenvalues: vec![4.0, 1.0] },
            eta: 0.0,
            g: GLawSpec::constant_one(),
            xi: XiLaw::Gaussian,
            n: 100_000,
            p: 2,
        };
        let ds = sample_dataset(&spec, 3).unwrap();
        let n = ds.n() as f64;
        for j in 0..2 {
            for l in 0..2 {
                let cov = ds
                    .z
                    .column(j)
                    .iter()
                    .zip(ds.z.column(l).iter())
                    .map(|(a, b)| a * b)
                    .sum::<f64>()
                    / n;
                let target = if j == l { if j == 0 { 4.0 } else { 1.0 } } else { 0.0 };
                assert!((cov - target).abs() <= 0.05, "cov({j},{l}) = {cov}");
            }
        }
    }

    #[test]
    fn orthogonal_fixture_geometry() {
        let ds = make_orthogonal_fixture(2, 0, &[1.0, 1.0], 1.0, 4).unwrap();
        let gram = &ds.z * ds.z.transpose();
        assert_eq!(gram, DMatrix::identity(2, 2));
        let zmu = &ds.z * ds.mu();
        assert_eq!(zmu, DVector::zeros(2));
    }

    #[test]
    fn orthogonal_fixture_single_clean_point() {
        let ds = make_orthogonal_fixture(1, 0, &[2.0], 1.0, 3).unwrap();
        assert_eq!(ds.x.row(0).transpose(), DVector::from_column_slice(&[1.0, 2.0, 0.0]));
    }

    #[test]
    fn orthogonal_fixture_folds_noisy_rows() {
        let ds = make_orthogonal_fixture(1, 1, &[1.0, 1.0], 1.0, 4).unwrap();
        let folded = ds.folded_rows();
        // clean row: mu + z1; noisy row: -mu + (-z2) folded = -x2
        assert_eq!(folded.row(0).transpose(), DVector::from_column_slice(&[1.0, 1.0, 0.0, 0.0]));
        assert_eq!(folded.row(1).transpose(), DVector::from_column_slice(&[-1.0, 0.0, -1.0, 0.0]));
    }

    #[test]
    fn fixture_rejects_small_p() {
        assert!(make_orthogonal_fixture(2, 1, &[1.0, 1.0, 1.0], 1.0, 3).is_err());
    }

    #[test]
    fn g_law_moments_are_analytic() {
        let ln = GLaw::LogNormal { sigma: 0.5 };
        assert_relative_eq!(ln.moment(2.0), 1.0, epsilon = 1e-12);
        // Two-point law with E g^2 = 1: 0.5 * 0.25 + 0.5 * hi^2 = 1.
        let hi = (1.75f64).sqrt();
        let tp = GLaw::TwoPoint { lo: 0.5, hi, prob_hi: 0.5 };
        assert_relative_eq!(tp.moment(2.0), 1.0, epsilon = 1e-12);
        assert_relative_eq!(tp.moment(-4.0), 0.5 * 16.0 + 0.5 * hi.powf(-4.0), epsilon = 1e-12);
    }

    #[test]
    fn student_t_fourth_moment_matches_formula() {
        // For dof = 10, r = 4: E T^4 = 3 dof^2 / ((dof-2)(dof-4)) and the
        // unit-variance scaling multiplies by ((dof-2)/dof)^2.
        let law = XiLaw::StudentT { dof: 10.0, r: 4.0 };
        let expected = 3.0 * 100.0 / (8.0 * 6.0) * (0.8f64).powi(2);
        assert_relative_eq!(law.big_k(), expected, epsilon = 1e-10);
    }

    #[test]
    fn spec_json_roundtrip() {
        let spec = gaussian_spec(10, 20, 3.0, 0.1);
        let json = spec.to_json();
        let back = ModelSpec::from_json(&json).unwrap();
        assert_eq!(spec, back);
    }

    #[test]
    fn invalid_eta_rejected() {
        let mut spec = gaussian_spec(4, 4, 1.0, 0.0);
        spec.eta = 0.5;
        assert!(spec.validate().is_err());
    }
}
