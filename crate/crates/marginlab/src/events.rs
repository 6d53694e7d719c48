//! Event auditing: realized concentration-event parameters on a dataset,
//! predicted parameters with their explicit constants, precondition
//! checklists for the supported error-bound theorems, and numerical
//! verification of the quadratic-form bounds those events imply.

use std::collections::BTreeMap;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gram::{checked_transform, CheckedView, GramDecomposition};
use crate::model::{Dataset, GLawSpec, ModelSpec, XiLaw};

/// Thresholds at which the five concentration events are tested.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EventThresholds {
    /// E1: spectral deviation of the normalized Gram from the identity.
    pub eps: f64,
    /// E2: bound on ||Z_checked mu|| / ||mu||.
    pub alpha2: f64,
    /// E2: bound on ||Z_checked mu||_inf / ||mu||.
    pub alpha_inf: f64,
    /// E3: cap on max_i ||z_i||.
    pub m_cap: f64,
    /// E4: relative deviation of the mean inverse squared norm from rho.
    pub beta: f64,
    /// E5: relative deviation of the label-weighted mean from (1-2 eta) rho.
    pub gamma: f64,
    /// Reference value for the inverse-squared-norm concentration.
    pub rho: f64,
}

/// Which of the five events hold at the supplied thresholds.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
pub struct EventHolds {
    pub e1: bool,
    pub e2: bool,
    pub e3: bool,
    pub e4: bool,
    pub e5: bool,
}

impl EventHolds {
    pub fn first_four(&self) -> bool {
        self.e1 && self.e2 && self.e3 && self.e4
    }

    pub fn all(&self) -> bool {
        self.first_four() && self.e5
    }
}

/// Realized event parameters on one dataset plus the event booleans at the
/// supplied thresholds.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EventReport {
    pub eps_realized: f64,
    pub alpha2_realized: f64,
    pub alpha_inf_realized: f64,
    pub m_realized: f64,
    pub beta_realized: f64,
    pub gamma_realized: f64,
    /// The rho against which beta/gamma deviations were measured.
    pub rho: f64,
    pub thresholds: EventThresholds,
    pub holds: EventHolds,
}

impl EventReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("event report serializes")
    }
}

/// Computes realized event parameters exactly and evaluates the literal
/// event inequalities at the supplied thresholds.
pub fn event_report(dataset: &Dataset, thresholds: &EventThresholds) -> Result<EventReport> {
    let view = checked_transform(dataset)?;
    let n = dataset.n();
    let mu = dataset.mu();
    let mu_norm = mu.norm();

    // E1: || Z_checked Z_checked^T - I || (spectral, symmetric eigensolve).
    let mut gram = view.gram();
    for i in 0..n {
        gram[(i, i)] -= 1.0;
    }
    let eps_realized = gram
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .fold(0.0_f64, |acc, &v| acc.max(v.abs()));

    // E2: norms of Z_checked mu relative to ||mu||.
    let projected = &view.z_checked * &mu;
    let (alpha2_realized, alpha_inf_realized) = if mu_norm > 0.0 {
        (
            projected.norm() / mu_norm,
            projected.iter().fold(0.0_f64, |acc, &v| acc.max(v.abs())) / mu_norm,
        )
    } else {
        (0.0, 0.0)
    };

    // E3: largest noise-row norm.
    let m_realized = view.z_norms.iter().fold(0.0_f64, |acc, &v| acc.max(v));

    // E4/E5: concentration of the (label-weighted) inverse squared norms.
    let rho = thresholds.rho;
    if rho <= 0.0 {
        return Err(Error::InvalidArgument("rho threshold must be positive".into()));
    }
    let mean_inv_sq: f64 =
        view.z_norms.iter().map(|&nm| 1.0 / (nm * nm)).sum::<f64>() / n as f64;
    let beta_realized = (mean_inv_sq - rho).abs() / rho;

    let eta = dataset.spec.eta;
    let weighted: f64 = (0..n)
        .map(|i| dataset.y_noisy[i] * dataset.y[i] / (view.z_norms[i] * view.z_norms[i]))
        .sum::<f64>()
        / n as f64;
    let gamma_realized = (weighted - (1.0 - 2.0 * eta) * rho).abs() / rho;

    let holds = EventHolds {
        e1: eps_realized <= thresholds.eps,
        e2: alpha2_realized <= thresholds.alpha2 && alpha_inf_realized <= thresholds.alpha_inf,
        e3: m_realized <= thresholds.m_cap,
        e4: beta_realized <= thresholds.beta,
        e5: gamma_realized <= thresholds.gamma,
    };

    Ok(EventReport {
        eps_realized,
        alpha2_realized,
        alpha_inf_realized,
        m_realized,
        beta_realized,
        gamma_realized,
        rho,
        thresholds: thresholds.clone(),
        holds,
    })
}

/// The explicit constants used by the predicted event parameters.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ModelConstants {
    /// C(r, K) = 2^{r/2-1} { 2 (K^{2/r} + 1)^{r/2} + 2^{r/4} }.
    pub c: f64,
    /// C1(r, K) = 4 (2 C)^{2/r}.
    pub c1: f64,
    /// C2(g) = 2^{2+2/k} ||g^{-2}||_{L^{k/2}} / ||g^{-2}||_{L^1}.
    pub c2: f64,
}

/// Evaluates the three explicit constants for given moment orders.
pub fn model_constants(r: f64, big_k: f64, k: f64, g: &GLawSpec) -> Result<ModelConstants> {
    if !(r > 2.0 && r <= 4.0) {
        return Err(Error::InvalidArgument(format!("r must lie in (2, 4]; got {r}")));
    }
    if !(k > 2.0 && k <= 4.0) {
        return Err(Error::InvalidArgument(format!("k must lie in (2, 4]; got {k}")));
    }
    if big_k < 1.0 {
        return Err(Error::InvalidArgument(format!("K must be >= 1; got {big_k}")));
    }
    let c = 2.0_f64.powf(r / 2.0 - 1.0)
        * (2.0 * (big_k.powf(2.0 / r) + 1.0).powf(r / 2.0) + 2.0_f64.powf(r / 4.0));
    let c1 = 4.0 * (2.0 * c).powf(2.0 / r);
    // ||g^{-2}||_{L^{k/2}} = (E g^{-k})^{2/k}; ||g^{-2}||_{L^1} = E g^{-2}.
    let c2 = 2.0_f64.powf(2.0 + 2.0 / k) * g.law.moment(-k).powf(2.0 / k) / g.law.moment(-2.0);
    Ok(ModelConstants { c, c1, c2 })
}

/// Closed-form predicted event parameters for a mixture spec at level delta.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PredictedParameters {
    pub eps: f64,
    pub alpha2: f64,
    pub alpha_inf: f64,
    pub beta: f64,
    pub gamma: f64,
    pub rho: f64,
    pub m_cap: f64,
    pub constants: ModelConstants,
    /// Whether the prediction's own validity gate eps <= 1/2 passes.
    pub gate_passes: bool,
}

impl PredictedParameters {
    /// The predictions as thresholds for `event_report`.
    pub fn thresholds(&self) -> EventThresholds {
        EventThresholds {
            eps: self.eps,
            alpha2: self.alpha2,
            alpha_inf: self.alpha_inf,
            m_cap: self.m_cap,
            beta: self.beta,
            gamma: self.gamma,
            rho: self.rho,
        }
    }
}

/// Predicted event parameters for the mixture model: with probability at
/// least 1 - 5 delta all five events hold at these values (1 - 4 delta for
/// the first four), provided the eps <= 1/2 gate passes.
pub fn em_event_parameters(spec: &ModelSpec, delta: f64) -> Result<PredictedParameters> {
    spec.validate()?;
    if !(0.0 < delta && delta < 1.0) {
        return Err(Error::InvalidArgument(format!("delta must lie in (0, 1); got {delta}")));
    }
    let mu = spec.mu_vector();
    let mu_norm = mu.norm();
    if mu_norm == 0.0 {
        return Err(Error::InvalidArgument(
            "predicted parameters need a nonzero signal vector".into(),
        ));
    }
    let n = spec.n as f64;
    let p = spec.p as f64;
    let r = spec.xi.r();
    let big_k = spec.xi.big_k();
    let k = spec.g.k;
    let constants = model_constants(r, big_k, k, &spec.g)?;

    let trace = spec.sigma.trace();
    let frob = spec.sigma.frobenius_norm();
    let half_mu = spec.sigma.half_mu_norm(&mu);

    let eps = constants.c1
        * (n / delta).powf(2.0 / r)
        * p.powf(2.0 / r - 0.5).max(n.powf(2.0 / r))
        * frob
        / trace;
    let alpha2 = 2.0 * n.sqrt() * half_mu / ((delta * trace).sqrt() * mu_norm);
    let beta = eps + constants.c2 * delta.powf(-2.0 / k) * n.powf(-(1.0 - 2.0 / k));
    let rho = spec.g.law.moment(-2.0) / trace;
    let m_cap = (1.0 + eps) * spec.g.law.lp_norm(spec.g.ell)?
        * spec.g.delta_power(spec.n, delta)
        * trace.sqrt();

    Ok(PredictedParameters {
        eps,
        alpha2,
        alpha_inf: alpha2,
        beta,
        gamma: beta,
        rho,
        m_cap,
        constants,
        gate_passes: eps <= 0.5,
    })
}

/// One inequality of a precondition checklist.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChecklistItem {
    pub name: String,
    /// The realized left-hand side.
    pub realized: f64,
    /// Comparison direction: the realized value must satisfy
    /// `realized <relation> required`.
    pub relation: String,
    /// The required bound (right-hand side).
    pub required: f64,
    pub pass: bool,
}

fn item(name: &str, realized: f64, relation: &str, required: f64) -> ChecklistItem {
    let pass = match relation {
        "<=" => realized <= required,
        "<" => realized < required,
        ">=" => realized >= required,
        ">" => realized > required,
        _ => unreachable!("unknown relation"),
    };
    ChecklistItem {
        name: name.to_string(),
        realized,
        relation: relation.to_string(),
        required,
        pass,
    }
}

/// One alternative regime of a theorem's hypotheses.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegimeResult {
    pub name: String,
    pub items: Vec<ChecklistItem>,
    pub pass: bool,
}

fn regime(name: &str, items: Vec<ChecklistItem>) -> RegimeResult {
    let pass = items.iter().all(|i| i.pass);
    RegimeResult { name: name.to_string(), items, pass }
}

/// Full precondition checklist for one theorem.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TheoremChecklist {
    pub theorem: String,
    pub delta: f64,
    /// The universal constants that were plugged in (defaults echoed).
    pub constants_used: BTreeMap<String, f64>,
    /// Conditions every regime shares.
    pub common: Vec<ChecklistItem>,
    /// Alternative regimes; the theorem needs at least one to pass.
    pub regimes: Vec<RegimeResult>,
    pub pass: bool,
}

impl TheoremChecklist {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("checklist serializes")
    }
}

/// Theorem identifiers accepted by `theorem_preconditions`.
pub const SUPPORTED_THEOREMS: [&str; 10] = [
    "noiseless-generic",
    "noisy-generic",
    "noisy-generic-simple",
    "noiseless-em-small-signal",
    "noiseless-em-large-signal",
    "noisy-em",
    "identity-covariance",
    "phase-transition",
    "subgaussian-noisy",
    "subgaussian-noiseless",
];

/// max{22/eta, 17/(1-2 eta)}, the explicit constant of the noisy bounds.
pub fn c_two_eta(eta: f64) -> Result<f64> {
    if !(0.0 < eta && eta < 0.5) {
        return Err(Error::InvalidArgument(format!(
            "the noisy-case constant needs eta in (0, 1/2); got {eta}"
        )));
    }
    Ok((22.0 / eta).max(17.0 / (1.0 - 2.0 * eta)))
}

fn cval(constants: &BTreeMap<String, f64>, key: &str) -> f64 {
    constants.get(key).copied().unwrap_or(1.0)
}

fn require_noisy(eta: f64) -> Result<()> {
    if !(0.0 < eta && eta < 0.5) {
        return Err(Error::InvalidArgument(format!(
            "this theorem requires eta in (0, 1/2); got {eta}"
        )));
    }
    Ok(())
}

fn require_noiseless(eta: f64) -> Result<()> {
    if eta != 0.0 {
        return Err(Error::InvalidArgument(format!(
            "this theorem requires eta = 0; got {eta}"
        )));
    }
    Ok(())
}

/// Evaluates a theorem's precondition inequalities with the predicted event
/// parameters. Unspecified universal constants come from the caller's map
/// and default to 1; every constant used is echoed in the result.
pub fn theorem_preconditions(
    spec: &ModelSpec,
    delta: f64,
    theorem_id: &str,
    constants: &BTreeMap<String, f64>,
) -> Result<TheoremChecklist> {
    spec.validate()?;
    if !(0.0 < delta && delta < 1.0) {
        return Err(Error::InvalidArgument(format!("delta must lie in (0, 1); got {delta}")));
    }
    let mu = spec.mu_vector();
    let mu_norm = mu.norm();
    let eta = spec.eta;
    let n = spec.n as f64;
    let p = spec.p as f64;
    let trace = spec.sigma.trace();
    let frob = spec.sigma.frobenius_norm();
    let op = spec.sigma.op_norm();
    let half_mu = spec.sigma.half_mu_norm(&mu);
    let k = spec.g.k;
    let ell_pow = |expo: f64| spec.g.delta_power(spec.n, delta).powf(expo);

    let mut used = BTreeMap::new();
    let mut common = Vec::new();
    let mut regimes = Vec::new();

    match theorem_id {
        "noiseless-generic" => {
            require_noiseless(eta)?;
            let pred = em_event_parameters(spec, delta)?;
            let big_c = cval(constants, "C");
            used.insert("C".to_string(), big_c);
            let nrho = n * pred.rho;
            regimes.push(regime(
                "bounded-signal",
                vec![
                    item("beta-below-half", pred.beta, "<", 0.5),
                    item(
                        "signal-dominates-projection",
                        mu_norm * ((1.0 - pred.beta) * nrho).sqrt(),
                        ">=",
                        big_c * pred.alpha2,
                    ),
                    item(
                        "projection-times-signal-small",
                        pred.alpha2 * mu_norm * ((1.0 + pred.beta) * nrho).sqrt(),
                        "<=",
                        0.25,
                    ),
                    item(
                        "orthogonality-times-norm-cap-small",
                        pred.eps * pred.m_cap * ((1.0 + pred.beta) * nrho).sqrt(),
                        "<=",
                        0.25,
                    ),
                    item(
                        "cross-term-small",
                        pred.m_cap * pred.alpha_inf * mu_norm * (1.0 + pred.beta) * nrho,
                        "<",
                        3.0 / 32.0,
                    ),
                ],
            ));
            regimes.push(regime(
                "large-signal",
                vec![
                    item("signal-exceeds-norm-cap", mu_norm, ">=", big_c * pred.m_cap),
                    item("constant-exceeds-two", big_c, ">", 2.0),
                ],
            ));
        }
        "noisy-generic" => {
            require_noisy(eta)?;
            let pred = em_event_parameters(spec, delta)?;
            let c2eta = c_two_eta(eta)?;
            used.insert("C_2_eta".to_string(), c2eta);
            let nrho = n * pred.rho;
            common.push(item(
                "orthogonality-times-norm-cap-vs-noise",
                pred.eps * pred.m_cap * nrho.sqrt(),
                "<=",
                eta / 2.0,
            ));
            common.push(item(
                "signal-floor",
                mu_norm,
                ">=",
                c2eta * pred.alpha2 / nrho.sqrt(),
            ));
            common.push(item(
                "deviations-vs-noise-margins",
                pred.eps.max(pred.beta).max(pred.gamma),
                "<=",
                eta.min(1.0 - 2.0 * eta) / 8.0,
            ));
            regimes.push(regime(
                "bounded-signal",
                vec![
                    item(
                        "projection-times-signal-small",
                        pred.alpha2 * mu_norm * nrho.sqrt(),
                        "<=",
                        1.0 / 30.0,
                    ),
                    item(
                        "cross-term-small",
                        pred.alpha_inf * mu_norm * pred.m_cap * nrho,
                        "<=",
                        1.0 / 64.0,
                    ),
                ],
            ));
            regimes.push(regime(
                "large-signal",
                vec![
                    item(
                        "signal-exceeds-cross-scale",
                        mu_norm,
                        ">=",
                        c2eta * pred.alpha_inf * pred.m_cap,
                    ),
                    item(
                        "projection-terms-small",
                        (pred.alpha2 * pred.alpha2)
                            .max(pred.alpha2 * pred.alpha_inf * pred.m_cap * nrho.sqrt()),
                        "<=",
                        1.0 / c2eta,
                    ),
                ],
            ));
        }
        "noisy-generic-simple" => {
            require_noisy(eta)?;
            let pred = em_event_parameters(spec, delta)?;
            let c2eta = c_two_eta(eta)?;
            used.insert("C_2_eta".to_string(), c2eta);
            let nrho = n * pred.rho;
            common.push(item(
                "signal-floor",
                mu_norm,
                ">=",
                17.0 / 16.0 * c2eta * pred.alpha2 * pred.m_cap,
            ));
            common.push(item(
                "projection-or-orthogonality-small",
                pred.alpha2.max(pred.eps) * pred.m_cap * nrho.sqrt(),
                "<=",
                16.0 / (17.0 * c2eta),
            ));
            common.push(item(
                "deviations-small",
                pred.beta.max(pred.gamma),
                "<=",
                16.0 / (17.0 * c2eta),
            ));
        }
        "noiseless-em-small-signal" => {
            require_noiseless(eta)?;
            let r = spec.xi.r();
            let cons = model_constants(r, spec.xi.big_k(), k, &spec.g)?;
            let big_c = cval(constants, "C");
            used.insert("C".to_string(), big_c);
            common.push(item(
                "sample-count-floor",
                n,
                ">=",
                (4.0 * cons.c2 / delta.powf(2.0 / k)).powf(k / (k - 2.0)),
            ));
            common.push(item(
                "signal-vs-covariance-projection",
                mu_norm * mu_norm,
                ">=",
                big_c * delta.powf(-0.5) * half_mu,
            ));
            common.push(item(
                "trace-floor",
                trace,
                ">=",
                big_c
                    * ell_pow(1.0)
                    * ((n / delta).powf(2.0 / r)
                        * n.sqrt()
                        * frob
                        * p.powf(2.0 / r - 0.5).max(n.powf(2.0 / r)))
                    .max((n / delta).sqrt() * n * half_mu),
            ));
        }
        "noiseless-em-large-signal" => {
            require_noiseless(eta)?;
            let r = spec.xi.r();
            let cons = model_constants(r, spec.xi.big_k(), k, &spec.g)?;
            let big_c = cval(constants, "C");
            used.insert("C".to_string(), big_c);
            common.push(item("constant-exceeds-two", big_c, ">", 2.0));
            common.push(item(
                "signal-floor",
                mu_norm,
                ">=",
                1.5 * big_c * spec.g.law.lp_norm(spec.g.ell)? * ell_pow(1.0) * trace.sqrt(),
            ));
            common.push(item(
                "trace-floor",
                trace,
                ">=",
                2.0 * cons.c1
                    * (n / delta).powf(2.0 / r)
                    * p.powf(2.0 / r - 0.5).max(n.powf(2.0 / r))
                    * frob,
            ));
        }
        "noisy-em" => {
            require_noisy(eta)?;
            let r = spec.xi.r();
            let cons = model_constants(r, spec.xi.big_k(), k, &spec.g)?;
            let big_c = cval(constants, "C");
            used.insert("C".to_string(), big_c);
            let eta_min = eta.min(1.0 - 2.0 * eta);
            common.push(item(
                "signal-vs-covariance-projection",
                mu_norm * mu_norm,
                ">=",
                big_c * (1.0 / eta).max(1.0 / (1.0 - 2.0 * eta)) * delta.powf(-0.5) * half_mu,
            ));
            common.push(item(
                "trace-floor",
                trace,
                ">=",
                big_c / eta
                    * (n / delta).powf(2.0 / r)
                    * ell_pow(1.0)
                    * n.sqrt()
                    * p.powf(2.0 / r - 0.5).max(n.powf(2.0 / r))
                    * frob,
            ));
            common.push(item(
                "sample-count-floor",
                n,
                ">=",
                delta.powf(-2.0 / (k - 2.0)) * (16.0 * cons.c2 / eta_min).powf(k / (k - 2.0)),
            ));
            regimes.push(regime(
                "large-trace",
                vec![item(
                    "trace-dominates-projection",
                    trace,
                    ">=",
                    big_c * (n / delta).sqrt() * ell_pow(1.0) * n * half_mu,
                )],
            ));
            regimes.push(regime(
                "large-signal",
                vec![
                    item(
                        "signal-vs-projection",
                        mu_norm * mu_norm,
                        ">=",
                        big_c / eta_min * (n / delta).sqrt() * ell_pow(1.0) * half_mu,
                    ),
                    item(
                        "trace-vs-projection-ratio",
                        trace,
                        ">=",
                        big_c / eta_min
                            * (n / delta)
                            * ell_pow(1.0)
                            * n.sqrt()
                            * half_mu
                            * half_mu
                            / (mu_norm * mu_norm),
                    ),
                ],
            ));
        }
        "identity-covariance" => {
            require_noisy(eta)?;
            if !spec.sigma.is_identity() {
                return Err(Error::InvalidArgument(
                    "this checklist requires the identity covariance".into(),
                ));
            }
            let r = spec.xi.r();
            let big_c = cval(constants, "C");
            used.insert("C".to_string(), big_c);
            let inv_ell = match spec.g.ell {
                Some(ell) => 1.0 / ell,
                None => 0.0,
            };
            common.push(item(
                "signal-above-fourth-root",
                mu_norm,
                ">=",
                big_c * (p / n).powf(0.25),
            ));
            common.push(item(
                "dimension-floor",
                p,
                ">=",
                big_c
                    * n.powf((4.0 + (1.0 + 2.0 * inv_ell) * r) / (2.0 * (r - 2.0)))
                        .max(n.powf(8.0 / r + 1.0 + 2.0 * inv_ell)),
            ));
        }
        "phase-transition" => {
            require_noisy(eta)?;
            if !matches!(spec.xi, XiLaw::Gaussian) {
                return Err(Error::InvalidArgument(
                    "the phase-transition sandwich requires Gaussian coordinates".into(),
                ));
            }
            let r = spec.xi.r();
            let cons = model_constants(r, spec.xi.big_k(), k, &spec.g)?;
            let big_c = cval(constants, "C");
            used.insert("C".to_string(), big_c);
            let lambda_max = op;
            let lambda_min = spec.sigma.lambda_min();
            let inv_ell = match spec.g.ell {
                Some(ell) => 1.0 / ell,
                None => 0.0,
            };
            let eta_min = eta.min(1.0 - 2.0 * eta);
            let c_eta_delta =
                delta.powf(-1.0 - inv_ell) * (1.0 / delta).ln().sqrt() / eta_min;
            common.push(item("delta-cap", delta, "<=", 0.2));
            common.push(item(
                "dimension-floor",
                p,
                ">=",
                big_c * big_c
                    * c_eta_delta
                    * c_eta_delta
                    * (lambda_max / lambda_min).powi(2)
                    * n.powf(2.0 + 2.0 * inv_ell),
            ));
            common.push(item(
                "signal-floor",
                mu_norm,
                ">=",
                big_c * c_eta_delta * lambda_max,
            ));
            common.push(item(
                "sample-count-floor",
                n,
                ">=",
                delta.powf(-2.0 / (k - 2.0)) * (16.0 * cons.c2 / eta_min).powf(k / (k - 2.0)),
            ));
        }
        "subgaussian-noisy" => {
            require_noisy(eta)?;
            let l = cval(constants, "L");
            let ct1 = cval(constants, "C_tilde1");
            let ct2 = cval(constants, "C_tilde2");
            let ct3 = cval(constants, "C_tilde3");
            let ct4 = cval(constants, "C_tilde4");
            used.insert("L".to_string(), l);
            used.insert("C_tilde1".to_string(), ct1);
            used.insert("C_tilde2".to_string(), ct2);
            used.insert("C_tilde3".to_string(), ct3);
            used.insert("C_tilde4".to_string(), ct4);
            let c2eta = c_two_eta(eta)?;
            used.insert("C_2_eta".to_string(), c2eta);
            let log_d = (1.0 / delta).ln();
            let eta_min = eta.min(1.0 - 2.0 * eta);
            common.push(item(
                "trace-floor",
                trace,
                ">=",
                33.0 * ct1 * l * l / (16.0 * eta)
                    * (n.powf(1.5) * log_d * op).max(n * log_d.sqrt() * frob),
            ));
            common.push(item(
                "signal-vs-covariance-projection",
                mu_norm * mu_norm,
                ">=",
                2.0 * ct2 * c2eta * l * log_d.sqrt() * half_mu,
            ));
            common.push(item(
                "sample-count-floor",
                n,
                ">=",
                log_d * (16.0 * ct4 / eta_min).powi(2),
            ));
            regimes.push(regime(
                "large-trace",
                vec![item(
                    "trace-dominates-projection",
                    trace,
                    ">=",
                    (60.0 * ct2 * n * log_d.sqrt())
                        .max(132.0 * ct3 * n * n.ln().sqrt() / delta)
                        * l
                        * half_mu,
                )],
            ));
            regimes.push(regime(
                "large-signal",
                vec![
                    item(
                        "signal-vs-projection",
                        mu_norm * mu_norm,
                        ">=",
                        33.0 / 16.0 * ct3 * c2eta * l * n.ln().sqrt() / delta * half_mu,
                    ),
                    item(
                        "trace-vs-projection-ratio",
                        trace,
                        ">=",
                        4.0 * ct2 * c2eta * l * l
                            * (ct2 * n * log_d)
                                .max(33.0 / 32.0 * ct3 / delta * (log_d * n * n.ln()).sqrt())
                            * half_mu
                            * half_mu
                            / (mu_norm * mu_norm),
                    ),
                ],
            ));
        }
        "subgaussian-noiseless" => {
            require_noiseless(eta)?;
            let l = cval(constants, "L");
            let big_c = cval(constants, "C");
            let c_prime = cval(constants, "C_prime");
            let ct1 = cval(constants, "C_tilde1");
            let ct2 = cval(constants, "C_tilde2");
            let ct3 = cval(constants, "C_tilde3");
            used.insert("L".to_string(), l);
            used.insert("C".to_string(), big_c);
            used.insert("C_prime".to_string(), c_prime);
            used.insert("C_tilde1".to_string(), ct1);
            used.insert("C_tilde2".to_string(), ct2);
            used.insert("C_tilde3".to_string(), ct3);
            let ct5 = (3.0 * 6.0_f64.sqrt() * ct1)
                .max(4.0 * 6.0_f64.sqrt() * ct2)
                .max(48.0 * ct3);
            used.insert("C_tilde5".to_string(), ct5);
            let log_d = (1.0 / delta).ln();
            regimes.push(regime(
                "bounded-signal",
                vec![
                    item(
                        "signal-vs-covariance-projection",
                        mu_norm * mu_norm,
                        ">=",
                        2.0 * 2.0_f64.sqrt() * big_c * ct2 * l * log_d.sqrt() * half_mu,
                    ),
                    item(
                        "trace-floor",
                        trace,
                        ">=",
                        ct5 * (l * l * n * log_d.sqrt() * frob)
                            .max(l * l * n.powf(1.5) * log_d * op)
                            .max(l * n * n.ln().sqrt() / delta * half_mu),
                    ),
                ],
            ));
            regimes.push(regime(
                "large-signal",
                vec![
                    item("signal-floor", mu_norm, ">=", 1.5 * c_prime * trace.sqrt()),
                    item(
                        "trace-floor",
                        trace,
                        ">=",
                        2.0 * ct1 * l * l
                            * ((n * log_d).sqrt() * frob).max(n * log_d * op),
                    ),
                ],
            ));
        }
        other => return Err(Error::UnknownTheorem(other.to_string())),
    }

    let common_pass = common.iter().all(|i| i.pass);
    let regime_pass = regimes.is_empty() || regimes.iter().any(|r| r.pass);
    let pass = common_pass && regime_pass;
    Ok(TheoremChecklist {
        theorem: theorem_id.to_string(),
        delta,
        constants_used: used,
        common,
        regimes,
        pass,
    })
}

/// Outcome of one quadratic-form bound check.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum BoundStatus {
    Pass,
    Violation { realized: f64, lower: f64, upper: f64 },
    Skipped { reason: String },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundCheck {
    pub name: String,
    #[serde(flatten)]
    pub status: BoundStatus,
}

impl BoundCheck {
    pub fn is_violation(&self) -> bool {
        matches!(self.status, BoundStatus::Violation { .. })
    }
}

/// Absolute slack for interval membership; covers round-off when an
/// interval degenerates to a point (exact fixtures).
fn within(v: f64, lower: f64, upper: f64) -> bool {
    let slack = 1e-9 * (1.0 + lower.abs().max(upper.abs()).max(v.abs()));
    v >= lower - slack && v <= upper + slack
}

fn check(name: &str, v: f64, lower: f64, upper: f64) -> BoundCheck {
    let status = if within(v, lower, upper) {
        BoundStatus::Pass
    } else {
        BoundStatus::Violation { realized: v, lower, upper }
    };
    BoundCheck { name: name.to_string(), status }
}

fn skip(name: &str, reason: &str) -> BoundCheck {
    BoundCheck {
        name: name.to_string(),
        status: BoundStatus::Skipped { reason: reason.to_string() },
    }
}

/// Checks every i of a per-sample bracket and reports the worst case.
fn check_rows(name: &str, values: &DVector<f64>, lower: &[f64], upper: &[f64]) -> BoundCheck {
    for i in 0..values.len() {
        if !within(values[i], lower[i], upper[i]) {
            return BoundCheck {
                name: format!("{name}[{i}]"),
                status: BoundStatus::Violation {
                    realized: values[i],
                    lower: lower[i],
                    upper: upper[i],
                },
            };
        }
    }
    BoundCheck { name: name.to_string(), status: BoundStatus::Pass }
}

/// Verifies the two-sided quadratic-form bounds implied by the events that
/// hold in the report. Bounds whose hypothesis events fail are reported as
/// skipped, never as violations.
pub fn verify_quad_bounds(
    dataset: &Dataset,
    gram: &GramDecomposition,
    report: &EventReport,
) -> Result<Vec<BoundCheck>> {
    let view: CheckedView = checked_transform(dataset)?;
    let th = &report.thresholds;
    let (eps, a2, ainf, m_cap, beta, gamma, rho) =
        (th.eps, th.alpha2, th.alpha_inf, th.m_cap, th.beta, th.gamma, th.rho);
    let n = dataset.n() as f64;
    let nrho = n * rho;
    let eta = dataset.spec.eta;
    let mu_norm_sq = gram.mu_norm_sq;
    let mu_norm = mu_norm_sq.sqrt();
    let h = &report.holds;
    let mut out = Vec::new();

    let e1_ok = h.e1 && eps <= 0.5;
    let e1_reason = if h.e1 {
        "requires eps <= 1/2"
    } else {
        "hypothesis event E1 fails at the supplied threshold"
    };

    // s and s_NN: [(1-beta) n rho / (1+eps), (1+beta) n rho / (1-eps)].
    if e1_ok && h.e4 {
        let lo = (1.0 - beta) * nrho / (1.0 + eps);
        let hi = (1.0 + beta) * nrho / (1.0 - eps);
        out.push(check("clean-label-form", gram.s, lo, hi));
        out.push(check("noisy-label-form", gram.s_nn, lo, hi));
    } else {
        let reason = if e1_ok { "hypothesis event E4 fails" } else { e1_reason };
        out.push(skip("clean-label-form", reason));
        out.push(skip("noisy-label-form", reason));
    }

    // s_N: [(1-2 eta) -/+ (gamma + eps (1+beta))] n rho / (1-eps^2).
    if e1_ok && h.e4 && h.e5 && gamma < 0.5 {
        let dev = gamma + eps * (1.0 + beta);
        let lo = ((1.0 - 2.0 * eta) - dev) * nrho / (1.0 - eps * eps);
        let hi = ((1.0 - 2.0 * eta) + dev) * nrho / (1.0 - eps * eps);
        out.push(check("mixed-label-form", gram.s_n, lo, hi));
    } else {
        out.push(skip(
            "mixed-label-form",
            "requires E1, E4, E5 and gamma < 1/2",
        ));
    }

    // t <= min{alpha2^2/(1-eps), 1} ||mu||^2, t >= 0.
    if e1_ok && h.e2 {
        let hi = (a2 * a2 / (1.0 - eps)).min(1.0) * mu_norm_sq;
        out.push(check("signal-projection-form", gram.t, 0.0, hi));
    } else {
        out.push(skip("signal-projection-form", "requires E1 and E2"));
    }

    // |h|, |h_N| <= alpha2 ||mu|| sqrt((1+beta) n rho) / (1-eps).
    if e1_ok && h.e2 && h.e4 {
        let cap = a2 * mu_norm * ((1.0 + beta) * nrho).sqrt() / (1.0 - eps);
        out.push(check("clean-cross-form", gram.h, -cap, cap));
        out.push(check("noisy-cross-form", gram.h_n, -cap, cap));
    } else {
        out.push(skip("clean-cross-form", "requires E1, E2, E4"));
        out.push(skip("noisy-cross-form", "requires E1, E2, E4"));
    }

    // Per-sample label brackets under E1, E3, E4.
    if e1_ok && h.e3 && h.e4 {
        let spread = eps * m_cap * ((1.0 + beta) * nrho).sqrt();
        let nn = dataset.n();
        let mut lower = vec![0.0; nn];
        let mut upper = vec![0.0; nn];
        for i in 0..nn {
            let zsq = view.z_norms[i] * view.z_norms[i];
            lower[i] = (1.0 - spread) / ((1.0 - eps * eps) * zsq);
            upper[i] = (1.0 + spread) / ((1.0 - eps * eps) * zsq);
        }
        let clean = DVector::from_iterator(nn, (0..nn).map(|i| dataset.y[i] * gram.a_inv_y[i]));
        let noisy = DVector::from_iterator(
            nn,
            (0..nn).map(|i| dataset.y_noisy[i] * gram.a_inv_y_noisy[i]),
        );
        let mixed = DVector::from_iterator(nn, (0..nn).map(|i| gram.a_inv_y[i].abs()));
        out.push(check_rows("clean-diagonal-form", &clean, &lower, &upper));
        out.push(check_rows("noisy-diagonal-form", &noisy, &lower, &upper));
        out.push(check_rows("mixed-diagonal-form", &mixed, &lower, &upper));
    } else {
        out.push(skip("clean-diagonal-form", "requires E1, E3, E4"));
        out.push(skip("noisy-diagonal-form", "requires E1, E3, E4"));
        out.push(skip("mixed-diagonal-form", "requires E1, E3, E4"));
    }

    // |nu^T A^{-1} e_i| <= (alpha_inf + eps alpha2) ||mu|| / ((1-eps^2) ||z_i||).
    if e1_ok && h.e2 {
        let nn = dataset.n();
        let mut lower = vec![0.0; nn];
        let mut upper = vec![0.0; nn];
        for i in 0..nn {
            let cap = (ainf + eps * a2) * mu_norm / ((1.0 - eps * eps) * view.z_norms[i]);
            lower[i] = -cap;
            upper[i] = cap;
        }
        out.push(check_rows("signal-coordinate-form", &gram.a_inv_nu, &lower, &upper));
    } else {
        out.push(skip("signal-coordinate-form", "requires E1 and E2"));
    }

    // M^2 rho >= 1/(1+beta).
    if h.e3 && h.e4 {
        out.push(check(
            "norm-cap-consistency",
            m_cap * m_cap * rho,
            1.0 / (1.0 + beta),
            f64::INFINITY,
        ));
    } else {
        out.push(skip("norm-cap-consistency", "requires E3 and E4"));
    }

    Ok(out)
}
