use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rejsamp_core::balance::draw_tprs;
use rejsamp_core::estequ::{ee_variance, solve_ee, weighted_quantile, EstimatingFunction};
use rejsamp_core::estimators::{fit_regression_vec, pi_star_mean, Denominator};
use rejsamp_core::population::generate_synthetic;
use rejsamp_core::variance::{vhat_general, EstimatorKind, VarianceStyle};
use rejsamp_core::{BalanceCriterion, Design, Error, FinitePopulation, GammaSq, Matrix, Phase, PhaseChain};

fn chain(pop: &FinitePopulation, gamma: f64, seed: u64, n1: usize, n2: usize) -> PhaseChain {
    let crit = if gamma.is_finite() {
        BalanceCriterion::new(GammaSq::new(gamma).unwrap(), vec![0])
    } else {
        BalanceCriterion::unrestricted(vec![0])
    };
    draw_tprs(&mut ChaCha8Rng::seed_from_u64(seed), pop, &Design::Srswor { n: n1 }, &Design::Srswor { n: n2 }, &crit)
        .unwrap()
}

#[test]
fn mean_kind_is_the_pi_star_mean() {
    let pop = generate_synthetic(1, 5000, 1.0, 1.0).unwrap();
    for seed in 0..10 {
        let c = chain(&pop, 0.05, seed, 500, 50);
        let y = c.y(&pop, Phase::II).unwrap();
        let fit = solve_ee(&c, &pop, &[0], &y, &EstimatingFunction::Mean).unwrap();
        let m = pi_star_mean(&c, Phase::II, &y, Denominator::Hajek).unwrap();
        assert!((fit.xi_hat[0] - m).abs() < 1e-10 * m.abs().max(1.0));
        assert!((fit.gamma_s_hat[(0, 0)] + 1.0).abs() < 1e-12);

        // B̂ is the regression slope of y on x
        let x = c.x_rows(&pop, Phase::II, &[0]).unwrap();
        let w: Vec<f64> = c.level(Phase::II).unwrap().pi_star().iter().map(|p| 1.0 / p).collect();
        let beta = fit_regression_vec(&w, &x, &y).unwrap().beta()[0];
        assert!((fit.b_hat[(0, 0)] - beta).abs() < 1e-10 * beta.abs().max(1.0));

        for style in [VarianceStyle::Ht, VarianceStyle::Syg] {
            let ee = ee_variance(&c, &pop, &[0], &fit, style, false).unwrap();
            let v = vhat_general(&c, &pop, &[0], &y, EstimatorKind::Mean, style, false).unwrap();
            assert!((ee.covariance[(0, 0)] - v.total()).abs() < 1e-10 * v.total());
            assert!((ee.components[0].total() - v.total()).abs() < 1e-10 * v.total());
        }
    }
}

#[test]
fn variance_kind_two_points() {
    let pop = FinitePopulation::new(Matrix::from_vec(4, 1, vec![0.0, 1.0, 2.0, 3.0]), None, Some(vec![1.0, 3.0, 5.0, 0.0]))
        .unwrap();
    let c = chain(&pop, f64::INFINITY, 0, 4, 2);
    let y = c.y(&pop, Phase::II).unwrap();
    let fit = solve_ee(&c, &pop, &[0], &y, &EstimatingFunction::Variance);
    // any two-point sample: mean and divisor-n variance
    let fit = fit.unwrap();
    let m = (y[0] + y[1]) / 2.0;
    let v = ((y[0] - m).powi(2) + (y[1] - m).powi(2)) / 2.0;
    assert!((fit.xi_hat[0] - m).abs() < 1e-10 && (fit.xi_hat[1] - v).abs() < 1e-9);
}

#[test]
fn quantile_examples_and_monotonicity() {
    assert_eq!(weighted_quantile(&[1.0, 2.0, 3.0], &[1.0; 3], 0.5).unwrap(), 2.0);

    let pop = generate_synthetic(3, 3000, 1.0, 1.0).unwrap();
    let c = chain(&pop, 0.1, 4, 300, 60);
    let y = c.y(&pop, Phase::II).unwrap();
    let mut last = f64::NEG_INFINITY;
    for k in 1..20 {
        let tau = k as f64 / 20.0;
        let fit = solve_ee(&c, &pop, &[0], &y, &EstimatingFunction::Quantile(tau)).unwrap();
        assert!(fit.xi_hat[0] >= last);
        assert!(y.contains(&fit.xi_hat[0]));
        last = fit.xi_hat[0];
        let v = ee_variance(&c, &pop, &[0], &fit, VarianceStyle::Ht, false).unwrap();
        assert!(v.covariance[(0, 0)] > 0.0);
    }
}

#[test]
fn proportion_above_every_value_has_zero_variance() {
    let pop = generate_synthetic(3, 1000, 1.0, 1.0).unwrap();
    let c = chain(&pop, 0.1, 4, 200, 40);
    let y = c.y(&pop, Phase::II).unwrap();
    let fit = solve_ee(&c, &pop, &[0], &y, &EstimatingFunction::ProportionBelow(1e9)).unwrap();
    assert!((fit.xi_hat[0] - 1.0).abs() < 1e-12);
    let v = ee_variance(&c, &pop, &[0], &fit, VarianceStyle::Ht, false).unwrap();
    assert!(v.covariance[(0, 0)].abs() < 1e-20);
}

#[test]
fn proportion_matches_indicator_mean() {
    let pop = generate_synthetic(5, 1000, 1.0, 1.0).unwrap();
    let c = chain(&pop, 0.1, 4, 200, 40);
    let y = c.y(&pop, Phase::II).unwrap();
    let fit = solve_ee(&c, &pop, &[0], &y, &EstimatingFunction::ProportionBelow(1.0)).unwrap();
    let ind: Vec<f64> = y.iter().map(|&v| if v < 1.0 { 1.0 } else { 0.0 }).collect();
    let want = pi_star_mean(&c, Phase::II, &ind, Denominator::Hajek).unwrap();
    assert!((fit.xi_hat[0] - want).abs() < 1e-10);
}

#[test]
fn bad_inputs_are_rejected() {
    let pop = generate_synthetic(5, 100, 1.0, 1.0).unwrap();
    let c = chain(&pop, f64::INFINITY, 1, 50, 20);
    let y = c.y(&pop, Phase::II).unwrap();
    assert!(solve_ee(&c, &pop, &[0], &y[..3], &EstimatingFunction::Mean).is_err());
    assert!(matches!(solve_ee(&c, &pop, &[0], &y, &EstimatingFunction::Quantile(1.5)), Err(Error::Config(_))));
}
