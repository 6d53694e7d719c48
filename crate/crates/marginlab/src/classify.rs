//! Three routes to the maximum-margin classifier: the least-squares
//! interpolator (closed form), a hard-margin dual coordinate-ascent oracle,
//! and logistic-loss gradient descent (whose direction converges to the
//! max-margin solution on separable data).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gram::{expansion_vector, gram_quantities};
use crate::model::Dataset;

/// Margin at most 1 + this slack counts as a support vector.
pub const SUPPORT_FLAG_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FitMethod {
    LeastSquaresInterpolator,
    HardMarginOracle,
    LogisticGd,
}

/// A weight vector with provenance and margin diagnostics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Classifier {
    pub w: DVector<f64>,
    pub method: FitMethod,
    /// <w, y_noisy_i x_i> per row.
    pub margins: DVector<f64>,
    pub support_flags: Vec<bool>,
    pub iterations: Option<usize>,
    pub converged: bool,
}

impl Classifier {
    fn from_weights(w: DVector<f64>, method: FitMethod, dataset: &Dataset) -> Self {
        let margins = dataset.folded_rows() * &w;
        let support_flags = margins.iter().map(|&m| m <= 1.0 + SUPPORT_FLAG_TOL).collect();
        Classifier { w, method, margins, support_flags, iterations: None, converged: true }
    }

    pub fn min_margin(&self) -> f64 {
        self.margins.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn separates(&self) -> bool {
        self.min_margin() > 0.0
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("classifier serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::InvalidArgument(format!("bad classifier JSON: {e}")))
    }
}

/// w_LS = X^T (XX^T)^{-1} y_noisy. Interpolates: every margin is exactly 1.
pub fn ls_interpolator(dataset: &Dataset) -> Result<Classifier> {
    let gram = gram_quantities(dataset)?;
    let v = expansion_vector(&gram)?;
    let w = dataset.x.transpose() * &v;
    Ok(Classifier::from_weights(w, FitMethod::LeastSquaresInterpolator, dataset))
}

/// Diagnostic for when the interpolator IS the max-margin solution.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SupportCondition {
    /// True iff every entry of Delta(y_noisy)(XX^T)^{-1} y_noisy is
    /// strictly positive (zero counts as failure).
    pub holds: bool,
    pub vector: DVector<f64>,
}

pub fn support_condition(dataset: &Dataset) -> Result<SupportCondition> {
    let gram = gram_quantities(dataset)?;
    let v = expansion_vector(&gram)?;
    let vector =
        DVector::from_iterator(dataset.n(), (0..dataset.n()).map(|i| dataset.y_noisy[i] * v[i]));
    let holds = vector.iter().all(|&e| e > 0.0);
    Ok(SupportCondition { holds, vector })
}

/// Hard-margin SVM via dual coordinate ascent:
/// maximize sum(lambda) - 1/2 lambda^T Q lambda over lambda >= 0 with
/// Q = Xbar Xbar^T, then w = Xbar^T lambda. `tol` is the primal-feasibility
/// tolerance; KKT residuals are checked at max(100 tol, 1e-6).
/// `max_iter` counts full coordinate sweeps.
pub fn hard_margin_oracle(dataset: &Dataset, tol: f64, max_iter: usize) -> Result<Classifier> {
    let xbar = dataset.folded_rows();
    let n = dataset.n();
    let q = &xbar * xbar.transpose();
    let kkt_tol = (100.0 * tol).max(1e-6);

    let mut lambda = DVector::<f64>::zeros(n);
    let mut qlam = DVector::<f64>::zeros(n); // Q lambda, kept incrementally
    let mut sweeps_done = 0;

    let diag: Vec<f64> = (0..n).map(|i| q[(i, i)]).collect();
    if let Some(i) = diag.iter().position(|&d| d <= 0.0) {
        return Err(Error::InvalidArgument(format!("sample {i} has zero norm; cannot separate")));
    }

    let mut converged = false;
    for sweep in 0..max_iter {
        let mut max_delta = 0.0f64;
        for i in 0..n {
            let grad = 1.0 - qlam[i];
            let new = (lambda[i] + grad / diag[i]).max(0.0);
            let delta = new - lambda[i];
            if delta != 0.0 {
                lambda[i] = new;
                qlam.axpy(delta, &q.column(i).clone_owned(), 1.0);
                max_delta = max_delta.max(delta.abs() * diag[i].sqrt());
            }
        }
        sweeps_done = sweep + 1;
        // Cheap progress gate before the full KKT check.
        if max_delta <= 0.1 * tol || sweeps_done % 64 == 0 {
            let min_margin = qlam.min();
            let w_norm_sq = lambda.dot(&qlam);
            let lambda_sum = lambda.sum();
            let gap = (w_norm_sq - lambda_sum).abs();
            let comp = (0..n)
                .map(|i| (lambda[i] * (qlam[i] - 1.0)).abs())
                .fold(0.0f64, f64::max);
            let scale = w_norm_sq.max(1.0);
            if min_margin >= 1.0 - tol && gap <= kkt_tol * scale && comp <= kkt_tol * scale {
                converged = true;
                break;
            }
        }
    }

    let w = xbar.transpose() * &lambda;
    if !converged {
        // Distinguish a genuinely infeasible problem from slow convergence:
        // probe with gradient descent on the squared hinge, which finds a
        // separator whenever one exists.
        let mut c = Classifier::from_weights(w, FitMethod::HardMarginOracle, dataset);
        c.iterations = Some(sweeps_done);
        if c.min_margin() > 0.0 {
            c.converged = false;
            return Ok(c);
        }
        let probe = squared_hinge_probe(&xbar);
        let probe_margin = (&xbar * &probe).min();
        if probe_margin > 0.0 {
            let mut c = Classifier::from_weights(probe, FitMethod::HardMarginOracle, dataset);
            c.iterations = Some(sweeps_done);
            c.converged = false;
            return Ok(c);
        }
        return Err(Error::NotSeparable { iterations: sweeps_done, probe_margin });
    }

    let mut c = Classifier::from_weights(w, FitMethod::HardMarginOracle, dataset);
    c.iterations = Some(sweeps_done);
    Ok(c)
}

/// Gradient descent on sum_i max(0, 1 - m_i)^2; returns the last iterate.
fn squared_hinge_probe(xbar: &DMatrix<f64>) -> DVector<f64> {
    let n = xbar.nrows();
    let p = xbar.ncols();
    let gram = xbar * xbar.transpose();
    let lam_max = gram.symmetric_eigen().eigenvalues.iter().cloned().fold(0.0, f64::max);
    let step = if lam_max > 0.0 { 0.5 / lam_max } else { return DVector::zeros(p) };
    let mut w = DVector::<f64>::zeros(p);
    for _ in 0..20_000 {
        let m = xbar * &w;
        let resid = DVector::from_iterator(n, m.iter().map(|&mi| (1.0 - mi).max(0.0)));
        if resid.iter().all(|&r| r < 1.0) && m.min() > 0.0 {
            break;
        }
        w += xbar.transpose() * resid * (2.0 * step);
    }
    w
}

/// One recorded point of a gradient-descent run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GdSnapshot {
    pub iter: usize,
    pub loss: f64,
    pub w_norm: f64,
    /// w_t / ||w_t|| (zero vector while w_t = 0).
    pub direction: DVector<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GdTrajectory {
    pub snapshots: Vec<GdSnapshot>,
    pub final_classifier: Classifier,
    pub step: f64,
}

/// The largest step with a monotone-loss guarantee:
/// 4 / lambda_max(Xbar^T Xbar / n), computed from the n x n Gram.
pub fn guarded_step(dataset: &Dataset) -> f64 {
    let xbar = dataset.folded_rows();
    let gram = &xbar * xbar.transpose();
    let lam_max = gram.symmetric_eigen().eigenvalues.iter().cloned().fold(0.0, f64::max);
    4.0 * dataset.n() as f64 / lam_max
}

/// Logistic loss (1/n) sum log(1 + exp(-m_i)).
fn logistic_loss(margins: &DVector<f64>) -> f64 {
    margins.iter().map(|&m| ln_1p_exp(-m)).sum::<f64>() / margins.len() as f64
}

/// log(1 + e^x) without overflow.
fn ln_1p_exp(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

/// Full-batch gradient descent from w = 0. `step = None` uses the guarded
/// step. Fails if the recorded loss increases over 10 consecutive
/// snapshots.
pub fn logistic_gd(
    dataset: &Dataset,
    step: Option<f64>,
    max_iter: usize,
    record_every: usize,
) -> Result<GdTrajectory> {
    let a = match step {
        Some(s) if s > 0.0 => s,
        Some(s) => return Err(Error::InvalidArgument(format!("step must be positive; got {s}"))),
        None => guarded_step(dataset),
    };
    let record_every = record_every.max(1);
    let xbar = dataset.folded_rows();
    let n = dataset.n() as f64;
    let p = dataset.p();

    let mut w = DVector::<f64>::zeros(p);
    let mut snapshots = Vec::new();
    let mut last_loss = f64::INFINITY;
    let mut rising = 0usize;

    let mut record = |iter: usize, w: &DVector<f64>, margins: &DVector<f64>| -> Result<()> {
        let loss = logistic_loss(margins);
        let w_norm = w.norm();
        let direction = if w_norm > 0.0 { w / w_norm } else { DVector::zeros(p) };
        snapshots.push(GdSnapshot { iter, loss, w_norm, direction });
        if loss > last_loss {
            rising += 1;
            if rising >= 10 {
                return Err(Error::DivergentLoss(10));
            }
        } else {
            rising = 0;
        }
        last_loss = loss;
        Ok(())
    };

    let margins0 = &xbar * &w;
    record(0, &w, &margins0)?;

    for iter in 1..=max_iter {
        let margins = &xbar * &w;
        // gradient of the loss is -(1/n) Xbar^T sigmoid(-margins)
        let sig = DVector::from_iterator(
            margins.len(),
            margins.iter().map(|&m| 1.0 / (1.0 + m.exp())),
        );
        w += xbar.transpose() * sig * (a / n);
        if iter % record_every == 0 || iter == max_iter {
            let margins = &xbar * &w;
            record(iter, &w, &margins)?;
        }
    }

    let mut final_classifier = Classifier::from_weights(w, FitMethod::LogisticGd, dataset);
    final_classifier.iterations = Some(max_iter);
    Ok(GdTrajectory { snapshots, final_classifier, step: a })
}

/// cos between two vectors; 0 if either is zero.
pub fn cosine(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    let na = a.norm();
    let nb = b.norm();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        a.dot(b) / (na * nb)
    }
}

/// Writes (iter, loss, w_norm, cosine_to_reference) rows; cosine is blank
/// when no reference direction is supplied.
pub fn write_trajectory_csv(
    trajectory: &GdTrajectory,
    reference: Option<&DVector<f64>>,
    path: &std::path::Path,
) -> Result<()> {
    let mut wtr = csv::Writer::from_path(path).map_err(Error::Csv)?;
    wtr.write_record(["iter", "loss", "w_norm", "cosine_to_reference"])?;
    for snap in &trajectory.snapshots {
        let cos = reference
            .map(|r| format!("{:.16e}", cosine(&snap.direction, r)))
            .unwrap_or_default();
        wtr.write_record([
            snap.iter.to_string(),
            format!("{:.16e}", snap.loss),
            format!("{:.16e}", snap.w_norm),
            cos,
        ])?;
    }
    wtr.flush().map_err(|e| Error::Io { path: path.display().to_string(), source: e })?;
    Ok(())
}
