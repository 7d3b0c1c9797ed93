mod common;

use common::property_suite as suite;
use hybo::gp::{GpPosterior, KernelHyperparams, TrainingSet};
use hybo::scenario::{combine, AcquisitionKind, AcquisitionParams};
use proptest::prelude::*;

macro_rules! checks {
    ($($name:ident),* $(,)?) => {
        $(
            #[test]
            fn $name() {
                if let Err(e) = suite::$name() {
                    panic!("{e}");
                }
            }
        )*
    };
}

checks!(
    gp_interpolates_training_data,
    gp_reverts_to_prior_far_away,
    gp_prediction_gradients,
    gp_likelihood_gradient,
    reparameterized_draw_moments,
    saa_ei_nonpositive_on_grid,
    lcb_without_beta_is_mean,
    smooth_ei_sqrt_bound,
    softplus_kink_value,
    elimination_matches_explicit_states,
    solver_box_quadratic,
    solver_equality_symmetric_case,
    acquisition_optimum_matches_dense_grid,
    flash_residuals_vanish,
    nrtl_pure_component_limit,
    antoine_is_monotone,
    activity_coefficient_round_trip,
    campaign_csvs_are_deterministic,
);

#[test]
fn suite_lists_every_check_once() {
    let mut names: Vec<&str> = suite::CHECKS.iter().map(|(n, _)| *n).collect();
    names.sort_unstable();
    names.dedup();
    assert_eq!(names.len(), suite::CHECKS.len());
}

fn scenarios() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1e3..1e3f64, 1..40)
}

proptest! {
    #[test]
    fn saa_ei_is_never_positive(f in scenarios(), fp in -1e3..1e3f64) {
        let p = AcquisitionParams { incumbent: Some(fp), ..Default::default() };
        prop_assert!(combine(AcquisitionKind::SaaEi, &p, &f, None) <= 0.0);
    }

    #[test]
    fn saa_ei_matches_its_definition(f in scenarios(), fp in -1e3..1e3f64) {
        let p = AcquisitionParams { incumbent: Some(fp), ..Default::default() };
        let want = f.iter().map(|v| (v - fp).min(0.0)).sum::<f64>() / f.len() as f64;
        let got = combine(AcquisitionKind::SaaEi, &p, &f, None);
        prop_assert!((got - want).abs() <= 1e-12 * (1.0 + want.abs()));
    }

    #[test]
    fn lcb_with_zero_beta_is_the_mean(f in prop::collection::vec(-1e3..1e3f64, 2..40)) {
        let p = AcquisitionParams { beta: 0.0, ..Default::default() };
        prop_assert_eq!(combine(AcquisitionKind::SaaLcb, &p, &f, None), combine(AcquisitionKind::Mean, &p, &f, None));
    }

    #[test]
    fn lcb_is_below_the_mean(f in prop::collection::vec(-1e3..1e3f64, 2..40), beta in 0.0..5.0f64) {
        let p = AcquisitionParams { beta, ..Default::default() };
        prop_assert!(combine(AcquisitionKind::SaaLcb, &p, &f, None) <= combine(AcquisitionKind::Mean, &p, &f, None) + 1e-9);
    }

    #[test]
    fn smooth_sqrt_stays_within_half_root_epsilon(f in scenarios(), fp in -1e3..1e3f64, log_eps in -10.0..0.0f64) {
        let epsilon = 10f64.powf(log_eps);
        let p = AcquisitionParams { incumbent: Some(fp), beta: 2.0, epsilon };
        let exact = combine(AcquisitionKind::SaaEi, &p, &f, None);
        let smooth = combine(AcquisitionKind::SmoothEiSqrt, &p, &f, None);
        prop_assert!(smooth <= exact + 1e-12 * (1.0 + exact.abs()));
        prop_assert!((smooth - exact).abs() <= epsilon.sqrt() / 2.0 * (1.0 + 1e-9) + 1e-12 * (1.0 + exact.abs()));
    }

    #[test]
    fn softplus_is_below_saa_ei(f in scenarios(), fp in -1e3..1e3f64) {
        let p = AcquisitionParams { incumbent: Some(fp), ..Default::default() };
        let softplus = combine(AcquisitionKind::SmoothEiSoftplus, &p, &f, None);
        prop_assert!(softplus.is_finite());
        prop_assert!(softplus <= combine(AcquisitionKind::SaaEi, &p, &f, None) + 1e-12);
    }

    #[test]
    fn gp_interpolates_arbitrary_data(
        points in prop::collection::btree_map(-20i32..20, -5.0..5.0f64, 2..8),
        log_ls in -1.0..0.5f64,
    ) {
        // Integer keys keep inputs at least 0.15 lengthscales apart. Closer
        // points make K nearly singular and the nugget then visibly shifts
        // the mean away from the labels.
        let x: Vec<Vec<f64>> = points.keys().map(|k| vec![*k as f64 / 4.0]).collect();
        let y: Vec<f64> = points.values().copied().collect();
        let ts = TrainingSet::new(&x, &y, &[false]).unwrap();
        let h = KernelHyperparams { signal_variance: 1.0, lengthscales: vec![log_ls.exp()], noise_variance: 1e-10 };
        let Ok(gp) = GpPosterior::new(ts, h) else { return Ok(()) };
        let scale = gp.training_set().standardization().label_scale;
        for (q, want) in x.iter().zip(&y) {
            let (m, s) = gp.predict(q);
            prop_assert!((m - want).abs() <= 1e-3 * scale, "mean {} vs {}", m, want);
            prop_assert!(s >= 0.0);
        }
    }

    #[test]
    fn gp_std_is_bounded_by_the_prior(q in -50.0..50.0f64, log_sv in -2.0..2.0f64) {
        let x = vec![vec![-1.0], vec![0.0], vec![2.0]];
        let y = vec![0.5, -1.0, 3.0];
        let ts = TrainingSet::new(&x, &y, &[true]).unwrap();
        let h = KernelHyperparams { signal_variance: log_sv.exp(), lengthscales: vec![0.7], noise_variance: 1e-8 };
        let gp = GpPosterior::new(ts, h).unwrap();
        let prior = gp.training_set().standardization().label_scale * log_sv.exp().sqrt();
        let (_, s) = gp.predict(&[q]);
        prop_assert!(s <= prior * (1.0 + 1e-12));
    }
}
