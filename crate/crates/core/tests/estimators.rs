use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rejsamp_core::balance::{draw_three_phase, draw_tprs};
use rejsamp_core::estimators::{
    fit_regression, fit_regression_vec, hajek_mean, pi_star_mean, ree, regression_estimate_three_phase,
    regression_estimate_two_phase, regression_weights, Denominator,
};
use rejsamp_core::population::generate_synthetic;
use rejsamp_core::{BalanceCriterion, Design, DrawnSample, Error, FinitePopulation, GammaSq, Matrix, Phase, PhaseChain};

fn frame(x: &[f64], y: &[f64]) -> FinitePopulation {
    FinitePopulation::new(Matrix::from_vec(x.len(), 1, x.to_vec()), None, Some(y.to_vec())).unwrap()
}

fn chain_of(frame_size: usize, phases: &[(&[usize], Vec<f64>)]) -> PhaseChain {
    let samples = phases.iter().map(|(idx, pi)| DrawnSample::custom(idx.to_vec(), pi.clone()).unwrap()).collect();
    PhaseChain::from_samples(frame_size, samples).unwrap()
}

#[test]
fn hajek_mean_examples() {
    let s = DrawnSample::custom(vec![0, 1], vec![0.5, 0.25]).unwrap();
    assert!((hajek_mean(&s, &[1.0, 3.0]).unwrap() - 7.0 / 3.0).abs() < 1e-15);
    let one = DrawnSample::custom(vec![2], vec![0.1, 0.1, 0.4]).unwrap();
    assert_eq!(hajek_mean(&one, &[5.5]).unwrap(), 5.5);
    let equal = DrawnSample::custom(vec![0, 1, 2], vec![0.3; 3]).unwrap();
    assert!((hajek_mean(&equal, &[1.0, 2.0, 6.0]).unwrap() - 3.0).abs() < 1e-15);
}

#[test]
fn census_chain_recovers_frame_mean() {
    let all: Vec<usize> = (0..5).collect();
    let chain = chain_of(5, &[(&all, vec![1.0; 5]), (&all, vec![1.0; 5])]);
    let y = [1.0, 4.0, 2.0, 8.0, 5.0];
    assert!((pi_star_mean(&chain, Phase::II, &y, Denominator::Hajek).unwrap() - 4.0).abs() < 1e-15);
    assert!((pi_star_mean(&chain, Phase::II, &y, Denominator::FrameSize).unwrap() - 4.0).abs() < 1e-15);
}

fn subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    (0u32..1 << n)
        .filter(|m| m.count_ones() as usize == k)
        .map(|m| (0..n).filter(|i| m >> i & 1 == 1).collect())
        .collect()
}

#[test]
fn frame_size_denominator_is_unbiased_over_enumeration() {
    let y = [1.3, 2.0, -0.7, 4.4, 3.1, 0.2];
    let ybar = y.iter().sum::<f64>() / 6.0;
    let mut total = 0.0;
    let mut count = 0;
    for a in subsets(6, 4) {
        for b in subsets(4, 2) {
            let chain = chain_of(6, &[(&a, vec![4.0 / 6.0; 6]), (&b, vec![0.5; 4])]);
            let vals = chain.level(Phase::II).unwrap().units().iter().map(|&u| y[u]).collect::<Vec<_>>();
            total += pi_star_mean(&chain, Phase::II, &vals, Denominator::FrameSize).unwrap();
            count += 1;
        }
    }
    assert_eq!(count, 90);
    assert!((total / count as f64 - ybar).abs() < 1e-12);
}

#[test]
fn ree_single_stratum_is_the_pi_star_mean() {
    let pop = generate_synthetic(1, 300, 1.0, 1.0).unwrap();
    let crit = BalanceCriterion::unrestricted(vec![0]);
    let chain =
        draw_tprs(&mut ChaCha8Rng::seed_from_u64(2), &pop, &Design::Srswor { n: 60 }, &Design::Srswor { n: 15 }, &crit)
            .unwrap();
    let y = chain.y(&pop, Phase::II).unwrap();
    let a = ree(&chain, &[0; 300], &y).unwrap();
    let b = pi_star_mean(&chain, Phase::II, &y, Denominator::Hajek).unwrap();
    assert!((a - b).abs() < 1e-12);
}

#[test]
fn ree_by_hand_and_exact_within_strata() {
    let strata = [0, 0, 0, 1, 1, 1];
    // A = {0, 1, 3, 4} with π_I = 0.5, B = positions {0, 2, 3} → units {0, 3, 4}
    let chain = chain_of(6, &[(&[0, 1, 3, 4], vec![0.5; 6]), (&[0, 2, 3], vec![0.5; 4])]);
    let y = [2.0, 7.0, 9.0];
    let want = (4.0 * 2.0 + 4.0 * 8.0) / 6.0;
    assert!((ree(&chain, &strata, &y).unwrap() - want).abs() < 1e-14);

    // constant within strata and a balanced phase I: exact frame mean
    let chain = chain_of(6, &[(&[0, 1, 3, 4], vec![2.0 / 3.0; 6]), (&[0, 3], vec![0.5; 4])]);
    let frame_y = [1.0, 1.0, 1.0, 5.0, 5.0, 5.0];
    let vals = [frame_y[0], frame_y[3]];
    assert!((ree(&chain, &strata, &vals).unwrap() - 3.0).abs() < 1e-14);

    let missing = chain_of(6, &[(&[0, 1, 3, 4], vec![0.5; 6]), (&[0, 1], vec![0.5; 4])]);
    assert_eq!(ree(&missing, &strata, &[1.0, 2.0]), Err(Error::UndefinedRatio { stratum: 1 }));
}

#[test]
fn scalar_fit_matches_closed_form() {
    let x = [0.5, 1.5, 2.0, 3.5, 5.0];
    let y = [1.0, 2.2, 2.1, 4.9, 6.0];
    let w = [1.0, 2.0, 0.5, 3.0, 1.5];
    let fit = fit_regression_vec(&w, &Matrix::from_vec(5, 1, x.to_vec()), &y).unwrap();
    let sw: f64 = w.iter().sum();
    let xb = x.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let yb = y.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let sxy: f64 = (0..5).map(|i| w[i] * (x[i] - xb) * (y[i] - yb)).sum();
    let sxx: f64 = (0..5).map(|i| w[i] * (x[i] - xb) * (x[i] - xb)).sum();
    assert!((fit.beta()[0] - sxy / sxx).abs() < 1e-13);
    assert!((fit.center_x[0] - xb).abs() < 1e-14);
}

#[test]
fn identity_response_and_errors() {
    let x = Matrix::from_vec(4, 2, vec![1.0, 0.0, 2.0, 1.0, 0.5, 3.0, 4.0, 2.0]);
    let fit = fit_regression(&[1.0, 2.0, 1.0, 3.0], &x, &x).unwrap();
    assert!(fit.coefficients.sub(&Matrix::identity(2)).max_abs() < 1e-12);

    let small = Matrix::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0]);
    assert_eq!(
        fit_regression_vec(&[1.0, 1.0], &small, &[1.0, 2.0]).unwrap_err(),
        Error::InsufficientData { n: 2, p: 2 }
    );
    let collinear = Matrix::from_vec(4, 2, vec![1.0, 2.0, 2.0, 4.0, 3.0, 6.0, 5.0, 10.0]);
    assert!(matches!(fit_regression_vec(&[1.0; 4], &collinear, &[1.0, 2.0, 3.0, 4.0]), Err(Error::Collinear { .. })));
}

#[test]
fn two_phase_regression_special_cases() {
    let pop = generate_synthetic(4, 400, 1.0, 1.0).unwrap();
    let x = pop.x().column(0);
    let linear: Vec<f64> = x.iter().map(|v| 1.0 + 2.0 * v).collect();
    let lin_pop = frame(&x, &linear);
    let crit = BalanceCriterion::unrestricted(vec![0]);
    let census = Design::Srswor { n: 400 };
    let chain = draw_tprs(&mut ChaCha8Rng::seed_from_u64(3), &lin_pop, &census, &Design::Srswor { n: 40 }, &crit).unwrap();
    let y = chain.y(&lin_pop, Phase::II).unwrap();
    let (est, _) = regression_estimate_two_phase(&chain, &lin_pop, Phase::II, &[0], &y).unwrap();
    assert!((est - lin_pop.y_mean().unwrap()).abs() < 1e-10);

    let (c, _) = regression_estimate_two_phase(&chain, &lin_pop, Phase::II, &[0], &vec![3.25; y.len()]).unwrap();
    assert!((c - 3.25).abs() < 1e-12);
}

#[test]
fn regression_weights_reproduce_estimate() {
    let pop = generate_synthetic(5, 5000, 2.0, 1.0).unwrap();
    let crit = BalanceCriterion::new(GammaSq::new(0.5).unwrap(), vec![0]);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..30 {
        let chain = draw_tprs(&mut rng, &pop, &Design::Srswor { n: 500 }, &Design::Srswor { n: 30 }, &crit).unwrap();
        let y = chain.y(&pop, Phase::II).unwrap();
        let (est, _) = regression_estimate_two_phase(&chain, &pop, Phase::II, &[0], &y).unwrap();
        let w = regression_weights(&chain, &pop, Phase::II, &[0]).unwrap();
        let dot: f64 = w.weights.iter().zip(&y).map(|(a, b)| a * b).sum();
        assert!((dot - est).abs() < 1e-10 * est.abs().max(1.0));
        assert!((w.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(w.negative_count, w.weights.iter().filter(|v| **v < 0.0).count());
    }
}

#[test]
fn extreme_point_gives_one_negative_weight() {
    let pop = frame(&[0.0, 1.0, 10.0, 30.0], &[0.0; 4]);
    let chain = chain_of(4, &[(&[0, 1, 2, 3], vec![1.0; 4]), (&[0, 1, 2], vec![0.75; 4])]);
    let w = regression_weights(&chain, &pop, Phase::II, &[0]).unwrap();
    assert_eq!(w.negative_count, 1);
    assert!(w.weights[0] < 0.0);
    // ω_0 = 1/3 + (0 − 11/3)(41/4 − 11/3)/Σ(x − x̄)²
    let want = 1.0 / 3.0 - 11.0 / 3.0 * (41.0 / 4.0 - 11.0 / 3.0) / (182.0 / 3.0);
    assert!((w.weights[0] - want).abs() < 1e-14);
}

#[test]
fn balanced_phase_two_weights_are_uniform() {
    // x̄_II = x̄_I: positions 0 and 3 have the same mean as all four
    let pop = frame(&[1.0, 2.0, 3.0, 4.0], &[0.0; 4]);
    let chain = chain_of(4, &[(&[0, 1, 2, 3], vec![1.0; 4]), (&[0, 1, 2, 3], vec![1.0; 4])]);
    let w = regression_weights(&chain, &pop, Phase::II, &[0]).unwrap();
    assert!(w.weights.iter().all(|v| (v - 0.25).abs() < 1e-15));
}

#[test]
fn three_phase_exact_for_linear_outcome() {
    let base = rejsamp_core::population::generate_api_proxy(8, 600).unwrap();
    let x = base.x().clone();
    let z = base.z().unwrap().clone();
    let y: Vec<f64> = (0..600).map(|i| 5.0 + 0.8 * x[(i, 0)] + 1.5 * z[(i, 0)] - 0.7 * z[(i, 1)] + 0.2 * z[(i, 2)]).collect();
    let pop = FinitePopulation::new(x, Some(z), Some(y)).unwrap();
    let census = Design::Srswor { n: 600 };
    let d3 = Design::Srswor { n: 50 };
    let free = BalanceCriterion::unrestricted(vec![0]);
    let chain = draw_three_phase(&mut ChaCha8Rng::seed_from_u64(1), &pop, [&census, &census, &d3], &free, &free).unwrap();
    let vals = chain.y(&pop, Phase::III).unwrap();
    let (est, fit) = regression_estimate_three_phase(&chain, &pop, &[0], &vals).unwrap();
    assert_eq!(fit.coefficients.rows(), 4);
    assert!((est - pop.y_mean().unwrap()).abs() < 1e-8 * pop.y_mean().unwrap().abs());
}

#[test]
fn three_phase_requires_derived_block() {
    let pop = generate_synthetic(1, 50, 1.0, 1.0).unwrap();
    let all: Vec<usize> = (0..50).collect();
    let chain = chain_of(50, &[(&all, vec![1.0; 50]), (&all[..20], vec![0.4; 50]), (&[0, 1, 2, 3, 4], vec![0.25; 20])]);
    assert!(matches!(regression_estimate_three_phase(&chain, &pop, &[0], &[1.0; 5]), Err(Error::Config(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn estimators_are_location_scale_equivariant(seed in 0u64..1000, a in 0.1f64..5.0, b in -10.0f64..10.0) {
        let pop = generate_synthetic(seed, 500, 1.0, 1.0).unwrap();
        let crit = BalanceCriterion::new(GammaSq::new(1.0).unwrap(), vec![0]);
        let chain = draw_tprs(&mut ChaCha8Rng::seed_from_u64(seed), &pop, &Design::Srswor { n: 100 }, &Design::Srswor { n: 20 }, &crit).unwrap();
        let y = chain.y(&pop, Phase::II).unwrap();
        let y2: Vec<f64> = y.iter().map(|v| a * v + b).collect();
        let m = pi_star_mean(&chain, Phase::II, &y, Denominator::Hajek).unwrap();
        let m2 = pi_star_mean(&chain, Phase::II, &y2, Denominator::Hajek).unwrap();
        prop_assert!((m2 - (a * m + b)).abs() < 1e-10 * (1.0 + m2.abs()));
        let (r, _) = regression_estimate_two_phase(&chain, &pop, Phase::II, &[0], &y).unwrap();
        let (r2, _) = regression_estimate_two_phase(&chain, &pop, Phase::II, &[0], &y2).unwrap();
        prop_assert!((r2 - (a * r + b)).abs() < 1e-10 * (1.0 + r2.abs()));
    }

    #[test]
    fn residuals_are_orthogonal_to_centered_x(
        xs in prop::collection::vec(-5.0f64..5.0, 8),
        ys in prop::collection::vec(-5.0f64..5.0, 8),
        ws in prop::collection::vec(0.1f64..3.0, 8),
    ) {
        let x = Matrix::from_vec(8, 1, xs.clone());
        let mean = xs.iter().zip(&ws).map(|(a, b)| a * b).sum::<f64>() / ws.iter().sum::<f64>();
        prop_assume!(xs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() > 1e-3);
        let fit = fit_regression_vec(&ws, &x, &ys).unwrap();
        let e = fit.residuals(&x, &ys, 0);
        let cov: f64 = (0..8).map(|i| ws[i] * e[i] * (xs[i] - fit.center_x[0])).sum();
        let scale: f64 = (0..8).map(|i| ws[i] * ys[i].abs() * (xs[i] - fit.center_x[0]).abs()).sum::<f64>() + 1e-12;
        prop_assert!(cov.abs() < 1e-9 * scale);
    }
}
