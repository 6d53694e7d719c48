//! Property-based tests of the structural invariants: seed determinism,
//! the normalized-row change of variables, the closed-form Gram inverse,
//! the expansion-vector identity, scale behavior, and event-boolean
//! soundness.

use nalgebra::DVector;
use proptest::prelude::*;

use marginlab::classify::ls_interpolator;
use marginlab::events::{event_report, EventThresholds};
use marginlab::geometry::clean_noisy_decomposition;
use marginlab::gram::{
    checked_transform, expansion_vector, gram_quantities, woodbury_inverse,
};
use marginlab::model::{sample_dataset, GLawSpec, ModelSpec, MuSpec, SigmaSpec, XiLaw};
use marginlab::risk::{kappa, zeta, KappaMode};

fn spec_strategy() -> impl Strategy<Value = (ModelSpec, u64)> {
    (2usize..6, 8usize..30, prop_oneof![Just(0.0), Just(0.2)], 0.5f64..4.0, any::<u64>())
        .prop_filter("overparameterized", |(n, p, ..)| *p > n + 2)
        .prop_map(|(n, p, eta, mu_norm, seed)| {
            (
                ModelSpec {
                    mu: MuSpec::Axis { norm: mu_norm },
                    sigma: SigmaSpec::Identity { p },
                    eta,
                    g: GLawSpec::constant_one(),
                    xi: XiLaw::Gaussian,
                    n,
                    p,
                },
                seed,
            )
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn sampling_is_seed_deterministic((spec, seed) in spec_strategy()) {
        let a = sample_dataset(&spec, seed).unwrap();
        let b = sample_dataset(&spec, seed).unwrap();
        prop_assert_eq!(a.x, b.x);
        prop_assert_eq!(a.y, b.y);
        prop_assert_eq!(a.y_noisy, b.y_noisy);
    }

    #[test]
    fn normalized_rows_have_unit_norm((spec, seed) in spec_strategy()) {
        let ds = sample_dataset(&spec, seed).unwrap();
        let view = checked_transform(&ds).unwrap();
        for i in 0..ds.n() {
            prop_assert!((view.z_checked.row(i).norm() - 1.0).abs() <= 1e-10);
        }
    }

    #[test]
    fn quadratic_forms_are_invariant_under_row_normalization((spec, seed) in spec_strategy()) {
        let ds = sample_dataset(&spec, seed).unwrap();
        let gram = gram_quantities(&ds).unwrap();
        let view = checked_transform(&ds).unwrap();
        // y^T A^{-1} y_N computed in raw and normalized coordinates.
        let raw = ds.y.dot(&gram.solve(&ds.y_noisy));
        let checked = view.quadratic(&view.y_checked, &view.y_noisy_checked).unwrap();
        let scale = raw.abs().max(1.0);
        prop_assert!((raw - checked).abs() <= 1e-8 * scale,
            "raw {raw} vs checked {checked}");
    }

    #[test]
    fn closed_form_gram_inverse_matches_direct((spec, seed) in spec_strategy()) {
        let ds = sample_dataset(&spec, seed).unwrap();
        let gram = gram_quantities(&ds).unwrap();
        let xxt = ds.x.clone() * ds.x.transpose();
        let direct = xxt.try_inverse().unwrap();
        let wood = woodbury_inverse(&gram).unwrap();
        prop_assert!((&wood - &direct).norm() / direct.norm() <= 1e-8);
    }

    #[test]
    fn expansion_vector_solves_the_normal_system((spec, seed) in spec_strategy()) {
        let ds = sample_dataset(&spec, seed).unwrap();
        let gram = gram_quantities(&ds).unwrap();
        let v = expansion_vector(&gram).unwrap();
        let xxt = ds.x.clone() * ds.x.transpose();
        let resid = (&xxt * &v - &ds.y_noisy).norm();
        prop_assert!(resid <= 1e-8 * ds.y_noisy.norm());
    }

    #[test]
    fn interpolator_margins_are_all_one((spec, seed) in spec_strategy()) {
        let ds = sample_dataset(&spec, seed).unwrap();
        let clf = ls_interpolator(&ds).unwrap();
        for &m in clf.margins.iter() {
            prop_assert!((m - 1.0).abs() <= 1e-8);
        }
    }

    #[test]
    fn reconstruction_identity_holds((spec, seed) in spec_strategy()) {
        let ds = sample_dataset(&spec, seed).unwrap();
        let clf = ls_interpolator(&ds).unwrap();
        let d = clean_noisy_decomposition(&ds, &clf).unwrap();
        prop_assert!(d.reconstruction_residual <= 1e-8);
        prop_assert!((d.nu_c + d.nu_n - 1.0).abs() <= 1e-8);
    }

    #[test]
    fn interpolator_direction_is_scale_equivariant((spec, seed) in spec_strategy()) {
        // Scaling every sample by c > 0 scales the minimum-norm
        // interpolator by 1/c: the direction is unchanged.
        let ds = sample_dataset(&spec, seed).unwrap();
        let clf = ls_interpolator(&ds).unwrap();
        let mut scaled = ds.clone();
        scaled.x *= 3.0;
        scaled.z *= 3.0;
        scaled.spec.mu = MuSpec::Axis {
            norm: match spec.mu {
                MuSpec::Axis { norm } => norm * 3.0,
                _ => unreachable!(),
            },
        };
        let clf_scaled = ls_interpolator(&scaled).unwrap();
        let diff = (&clf.w - &clf_scaled.w * 3.0).norm();
        prop_assert!(diff <= 1e-8 * clf.w.norm());
    }

    #[test]
    fn zeta_is_scale_invariant((spec, seed) in spec_strategy(), c in 0.1f64..10.0) {
        let ds = sample_dataset(&spec, seed).unwrap();
        let clf = ls_interpolator(&ds).unwrap();
        let mu = spec.mu_vector();
        if let Ok(z) = zeta(&clf.w, &mu) {
            let w_scaled: DVector<f64> = &clf.w * c;
            let z_scaled = zeta(&w_scaled, &mu).unwrap();
            prop_assert!((z - z_scaled).abs() <= 1e-10 * z.abs());
        }
    }

    #[test]
    fn kappa_is_monotone_non_increasing(eta in 0.01f64..0.49, t1 in 0.0f64..3.0, dt in 0.0f64..3.0) {
        let g = GLawSpec::constant_one();
        let xi = XiLaw::Gaussian;
        let a = kappa(t1, eta, &g, &xi, KappaMode::ClosedForm, 0, 0).unwrap().value;
        let b = kappa(t1 + dt, eta, &g, &xi, KappaMode::ClosedForm, 0, 0).unwrap().value;
        prop_assert!(b <= a + 1e-15);
    }

    #[test]
    fn event_booleans_match_threshold_inequalities(
        (spec, seed) in spec_strategy(),
        eps in 0.01f64..3.0,
        alpha in 0.01f64..3.0,
        m_cap in 0.1f64..20.0,
        beta in 0.01f64..3.0,
    ) {
        let ds = sample_dataset(&spec, seed).unwrap();
        let thresholds = EventThresholds {
            eps,
            alpha2: alpha,
            alpha_inf: alpha,
            m_cap,
            beta,
            gamma: beta,
            rho: 1.0 / spec.p as f64,
        };
        let report = event_report(&ds, &thresholds).unwrap();
        prop_assert_eq!(report.holds.e1, report.eps_realized <= eps);
        prop_assert_eq!(report.holds.e2,
            report.alpha2_realized <= alpha && report.alpha_inf_realized <= alpha);
        prop_assert_eq!(report.holds.e3, report.m_realized <= m_cap);
        prop_assert_eq!(report.holds.e4, report.beta_realized <= beta);
        prop_assert_eq!(report.holds.e5, report.gamma_realized <= beta);
    }
}
