//! Test-error evaluation (exact Gaussian and Monte Carlo), predicted
//! margin-alignment orders, error-bound formulas, the tail function kappa,
//! and the spectral sandwich on the excess error.

use std::collections::BTreeMap;

use nalgebra::DVector;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::classify::Classifier;
use crate::error::{Error, Result};
use crate::model::{Dataset, GLaw, GLawSpec, ModelSpec, SigmaSpec, XiLaw};
use crate::rng;

/// Standard normal CDF via the complementary error function.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// ||w|| / <w, mu>, the margin-alignment ratio. Requires positive
/// alignment with the signal.
pub fn zeta(w: &DVector<f64>, mu: &DVector<f64>) -> Result<f64> {
    let align = w.dot(mu);
    if align <= 0.0 {
        return Err(Error::NonPositiveAlignment(align));
    }
    Ok(w.norm() / align)
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum RiskMethod {
    ExactGaussian,
    MonteCarlo,
}

/// A test-error probability with its uncertainty.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RiskEstimate {
    pub value: f64,
    pub standard_error: f64,
    pub method: RiskMethod,
    pub n_mc: usize,
}

/// Exact misclassification probability when the noise is Gaussian:
/// eta + (1 - 2 eta) Phi(-<w, mu> / sqrt(w^T Sigma w)).
pub fn test_error_exact(
    w: &DVector<f64>,
    mu: &DVector<f64>,
    sigma: &SigmaSpec,
    eta: f64,
) -> Result<RiskEstimate> {
    let align = w.dot(mu);
    if align <= 0.0 {
        return Err(Error::NonPositiveAlignment(align));
    }
    let var = sigma.quadratic_form(w);
    if var <= 0.0 {
        return Err(Error::InvalidArgument(
            "w^T Sigma w must be positive for the exact error".into(),
        ));
    }
    let value = eta + (1.0 - 2.0 * eta) * normal_cdf(-align / var.sqrt());
    Ok(RiskEstimate { value, standard_error: 0.0, method: RiskMethod::ExactGaussian, n_mc: 0 })
}

/// Exact test error for a full model spec; rejects non-Gaussian noise.
pub fn test_error_exact_spec(w: &DVector<f64>, spec: &ModelSpec) -> Result<RiskEstimate> {
    if !spec.is_gaussian_noise() {
        return Err(Error::ExactRiskUnavailable);
    }
    test_error_exact(w, &spec.mu_vector(), &spec.sigma, spec.eta)
}

const MC_CHUNK: usize = 1024;

/// Monte Carlo test error over fresh draws from the model. Chunked with
/// per-chunk streams, so the count is identical regardless of how the
/// chunks are scheduled.
pub fn test_error_mc(
    w: &DVector<f64>,
    spec: &ModelSpec,
    n_mc: usize,
    seed: u64,
) -> Result<RiskEstimate> {
    spec.validate()?;
    if n_mc < 1000 {
        return Err(Error::InvalidArgument(format!(
            "Monte Carlo needs at least 1000 samples; got {n_mc}"
        )));
    }
    let mu = spec.mu_vector();
    let align = w.dot(&mu);
    let factor = spec.sigma.factor()?;
    // <w, g F xi> = g <F w, xi> for the symmetric factor F.
    let v = factor.apply(w);
    let p = spec.p;
    let eta = spec.eta;

    let chunks = n_mc.div_ceil(MC_CHUNK);
    let errors: u64 = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = rng::stream(seed, &[0x7e57_e44, c as u64]);
            let lo = c * MC_CHUNK;
            let hi = ((c + 1) * MC_CHUNK).min(n_mc);
            let mut bad = 0u64;
            for _ in lo..hi {
                let y: f64 = if rng.gen::<bool>() { 1.0 } else { -1.0 };
                let y_noisy = if rng.gen::<f64>() < eta { -y } else { y };
                let g = spec.g.law.sample(&mut rng);
                let mut dot = 0.0;
                for j in 0..p {
                    dot += v[j] * spec.xi.sample(&mut rng);
                }
                let margin = y_noisy * (y * align + g * dot);
                if margin < 0.0 {
                    bad += 1;
                }
            }
            bad
        })
        .sum();

    let value = errors as f64 / n_mc as f64;
    let standard_error = (value * (1.0 - value) / n_mc as f64).sqrt();
    Ok(RiskEstimate { value, standard_error, method: RiskMethod::MonteCarlo, n_mc })
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    Noiseless,
    Noisy,
}

/// The predicted order of (||w|| / <w, mu>)^2, split into its terms. In the
/// noisy regime every term carries the 1/(1-2 eta)^2 prefactor.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ZetaPrediction {
    pub regime: Regime,
    /// eta n rho term (0 in the noiseless regime), prefactor included.
    pub label_noise_term: f64,
    /// 1/||mu||^2 term, prefactor included.
    pub inverse_signal_term: f64,
    /// 1/(n rho ||mu||^4) term, prefactor included.
    pub weak_signal_term: f64,
    pub total: f64,
}

/// Predicted squared margin-alignment ratio.
pub fn predicted_zeta_sq(
    eta: f64,
    n_rho: f64,
    mu_norm: f64,
    regime: Regime,
) -> Result<ZetaPrediction> {
    if n_rho <= 0.0 || mu_norm <= 0.0 {
        return Err(Error::InvalidArgument("n rho and ||mu|| must be positive".into()));
    }
    let prefactor = match regime {
        Regime::Noiseless => 1.0,
        Regime::Noisy => {
            if !(0.0 < eta && eta < 0.5) {
                return Err(Error::InvalidArgument(format!(
                    "the noisy regime requires eta in (0, 1/2); got {eta}"
                )));
            }
            1.0 / ((1.0 - 2.0 * eta) * (1.0 - 2.0 * eta))
        }
    };
    let label_noise_term = match regime {
        Regime::Noiseless => 0.0,
        Regime::Noisy => prefactor * eta * n_rho,
    };
    let inverse_signal_term = prefactor / (mu_norm * mu_norm);
    let weak_signal_term = prefactor / (n_rho * mu_norm.powi(4));
    Ok(ZetaPrediction {
        regime,
        label_noise_term,
        inverse_signal_term,
        weak_signal_term,
        total: label_noise_term + inverse_signal_term + weak_signal_term,
    })
}

/// A bound value clipped to [0, 1]; `vacuous` marks a raw value >= 1.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct BoundValue {
    pub raw: f64,
    pub value: f64,
    pub vacuous: bool,
}

impl BoundValue {
    fn new(raw: f64) -> Self {
        BoundValue { raw, value: raw.clamp(0.0, 1.0), vacuous: raw >= 1.0 }
    }
}

/// The polynomial and (optionally) exponential test-error bounds. The
/// exponential variants need the sub-Gaussian norm under the key `psi2` in
/// the constants map; `c`, `c1`, `c2` default to 1.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RiskBounds {
    pub noiseless_bound: BoundValue,
    /// Present only when eta > 0.
    pub noisy_bound: Option<BoundValue>,
    pub noiseless_exp: Option<BoundValue>,
    pub noisy_exp: Option<BoundValue>,
    pub constants_used: BTreeMap<String, f64>,
}

pub fn risk_bounds(
    eta: f64,
    n_rho: f64,
    mu_norm: f64,
    op_norm_ezz: f64,
    constants: &BTreeMap<String, f64>,
) -> Result<RiskBounds> {
    if n_rho <= 0.0 || mu_norm <= 0.0 || op_norm_ezz <= 0.0 {
        return Err(Error::InvalidArgument(
            "n rho, ||mu|| and ||E zz^T|| must be positive".into(),
        ));
    }
    if !(0.0..0.5).contains(&eta) {
        return Err(Error::InvalidArgument(format!("eta must lie in [0, 1/2); got {eta}")));
    }
    let get = |k: &str| constants.get(k).copied().unwrap_or(1.0);
    let (c, c1, c2) = (get("c"), get("c1"), get("c2"));
    let mu_sq = mu_norm * mu_norm;
    let order_noiseless = 1.0 / mu_sq + 1.0 / (n_rho * mu_sq * mu_sq);

    let mut used = BTreeMap::new();
    used.insert("c".to_string(), c);
    let noiseless_bound = BoundValue::new(c * op_norm_ezz * order_noiseless);

    let noisy_bound = if eta > 0.0 {
        used.insert("c1".to_string(), c1);
        let order = eta * n_rho + order_noiseless;
        Some(BoundValue::new(
            eta + c1 * op_norm_ezz / ((1.0 - 2.0 * eta) * (1.0 - 2.0 * eta)) * order,
        ))
    } else {
        None
    };

    let (noiseless_exp, noisy_exp) = if let Some(&psi2) = constants.get("psi2") {
        used.insert("psi2".to_string(), psi2);
        used.insert("c2".to_string(), c2);
        let nl = (-c / (psi2 * psi2)
            / (1.0 / mu_sq + 1.0 / (n_rho * mu_norm.powi(3))))
        .exp();
        let ny = if eta > 0.0 {
            let order = eta * n_rho + order_noiseless;
            Some(BoundValue::new(
                eta + (1.0 - eta)
                    * (-c2 * (1.0 - 2.0 * eta) * (1.0 - 2.0 * eta) / (psi2 * psi2) / order)
                        .exp(),
            ))
        } else {
            None
        };
        (Some(BoundValue::new(nl)), ny)
    } else {
        (None, None)
    };

    Ok(RiskBounds { noiseless_bound, noisy_bound, noiseless_exp, noisy_exp, constants_used: used })
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum KappaMode {
    ClosedForm,
    MonteCarlo,
}

/// kappa(t) = (1 - 2 eta)/2 * P(g |xi_1| > t) with its uncertainty
/// (0 for the closed form).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KappaEstimate {
    pub value: f64,
    pub standard_error: f64,
}

/// Evaluates the excess-error tail function. The closed form
/// (1 - 2 eta)(1 - Phi(t)) needs g constant one and Gaussian coordinates.
pub fn kappa(
    t: f64,
    eta: f64,
    g: &GLawSpec,
    xi: &XiLaw,
    mode: KappaMode,
    n_mc: usize,
    seed: u64,
) -> Result<KappaEstimate> {
    if t < 0.0 {
        return Err(Error::InvalidArgument(format!("kappa needs t >= 0; got {t}")));
    }
    if !(0.0..0.5).contains(&eta) {
        return Err(Error::InvalidArgument(format!("eta must lie in [0, 1/2); got {eta}")));
    }
    match mode {
        KappaMode::ClosedForm => {
            if !(matches!(g.law, GLaw::ConstantOne) && matches!(xi, XiLaw::Gaussian)) {
                return Err(Error::InvalidArgument(
                    "closed-form kappa needs g constant one and Gaussian coordinates".into(),
                ));
            }
            // P(|xi| > t) = 2 (1 - Phi(t)).
            Ok(KappaEstimate {
                value: (1.0 - 2.0 * eta) * (1.0 - normal_cdf(t)),
                standard_error: 0.0,
            })
        }
        KappaMode::MonteCarlo => {
            if n_mc < 1000 {
                return Err(Error::InvalidArgument(format!(
                    "Monte Carlo needs at least 1000 samples; got {n_mc}"
                )));
            }
            let chunks = n_mc.div_ceil(MC_CHUNK);
            let hits: u64 = (0..chunks)
                .into_par_iter()
                .map(|c| {
                    let mut rng = rng::stream(seed, &[0x4a99_a, c as u64]);
                    let lo = c * MC_CHUNK;
                    let hi = ((c + 1) * MC_CHUNK).min(n_mc);
                    let mut count = 0u64;
                    for _ in lo..hi {
                        let gv = g.law.sample(&mut rng);
                        let xv = xi.sample(&mut rng);
                        if gv * xv.abs() > t {
                            count += 1;
                        }
                    }
                    count
                })
                .sum();
            let frac = hits as f64 / n_mc as f64;
            let half = (1.0 - 2.0 * eta) / 2.0;
            Ok(KappaEstimate {
                value: half * frac,
                standard_error: half * (frac * (1.0 - frac) / n_mc as f64).sqrt(),
            })
        }
    }
}

/// Result of sandwiching the observed excess test error between the
/// spectral tail values.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SandwichCheck {
    pub lower: f64,
    pub observed_excess: f64,
    pub upper: f64,
    pub zeta: f64,
    pub band: f64,
    pub pass: bool,
}

/// Checks kappa(lambda_min^{-1/2}/zeta) <= observed excess <=
/// kappa(lambda_max^{-1/2}/zeta) within the supplied band. The observed
/// error is exact for Gaussian noise, Monte Carlo otherwise (n_mc, seed).
pub fn sandwich_check(
    dataset: &Dataset,
    classifier: &Classifier,
    band: f64,
    n_mc: usize,
    seed: u64,
) -> Result<SandwichCheck> {
    let spec = &dataset.spec;
    if !matches!(spec.xi, XiLaw::Gaussian) {
        return Err(Error::InvalidArgument(
            "the sandwich requires Gaussian coordinates".into(),
        ));
    }
    if !(0.0 < spec.eta && spec.eta < 0.5) {
        return Err(Error::InvalidArgument(format!(
            "the sandwich requires eta in (0, 1/2); got {}",
            spec.eta
        )));
    }
    let mu = spec.mu_vector();
    let z = zeta(&classifier.w, &mu)?;
    let lambda_min = spec.sigma.lambda_min();
    let lambda_max = spec.sigma.op_norm();
    if lambda_min <= 0.0 {
        return Err(Error::InvalidArgument(
            "the sandwich requires a positive definite covariance".into(),
        ));
    }

    let kap = |t: f64| -> Result<f64> {
        if matches!(spec.g.law, GLaw::ConstantOne) {
            Ok(kappa(t, spec.eta, &spec.g, &spec.xi, KappaMode::ClosedForm, 0, 0)?.value)
        } else {
            Ok(kappa(t, spec.eta, &spec.g, &spec.xi, KappaMode::MonteCarlo, n_mc, seed)?.value)
        }
    };
    let lower = kap(1.0 / (lambda_min.sqrt() * z))?;
    let upper = kap(1.0 / (lambda_max.sqrt() * z))?;

    let observed = if spec.is_gaussian_noise() {
        test_error_exact_spec(&classifier.w, spec)?
    } else {
        test_error_mc(&classifier.w, spec, n_mc.max(1000), seed ^ 0x5a5a)?
    };
    let observed_excess = observed.value - spec.eta;
    // Tiny absolute slack so exactly-coinciding bounds (flat spectrum) are
    // not failed on floating-point ulps.
    let slack = band + 1e-12 * (1.0 + lower.abs().max(upper.abs()));
    let pass = lower - slack <= observed_excess && observed_excess <= upper + slack;
    Ok(SandwichCheck { lower, observed_excess, upper, zeta: z, band, pass })
}
