use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rejsamp_core::ldist::{
    chisq_cdf, chisq_quantile, mixture_quantile, normal_cdf, normal_quantile, v_pgamma, LSampler, MixtureQuantiler,
    MixtureSpec, RadiusMethod,
};
use rejsamp_core::Error;
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

#[test]
fn chisq_cdf_matches_statrs() {
    for dof in [1usize, 2, 3, 5, 10, 30] {
        let oracle = ChiSquared::new(dof as f64).unwrap();
        for x in [1e-4, 0.01, 0.1, 0.5, 1.0, 2.5, 7.0, 15.0, 40.0, 90.0] {
            let got = chisq_cdf(dof, x);
            assert!((got - oracle.cdf(x)).abs() < 1e-12, "dof {dof} x {x}: {got} vs {}", oracle.cdf(x));
        }
    }
}

#[test]
fn chisq_closed_forms() {
    assert_eq!(chisq_cdf(3, 0.0), 0.0);
    assert!((chisq_cdf(2, 2.0 * std::f64::consts::LN_2) - 0.5).abs() < 1e-14);
    // P(χ²₁ ≤ 0.01) = 2Φ(0.1) − 1
    let phi = Normal::standard().cdf(0.1);
    assert!((chisq_cdf(1, 0.01) - (2.0 * phi - 1.0)).abs() < 1e-13);
    assert!((chisq_cdf(1, 0.01) - 0.0797).abs() < 1e-4);
    let q = chisq_quantile(4, 0.3).unwrap();
    assert!((chisq_cdf(4, q) - 0.3).abs() < 1e-12);
}

#[test]
fn normal_helpers_match_reference() {
    let n = Normal::standard();
    // reference values from an independent implementation
    let table = [
        (-6.0, 9.865876450376946e-10),
        (-2.0, 0.022750131948179195),
        (-0.3, 0.3820885778110474),
        (0.0, 0.5),
        (0.7, 0.758036347776927),
        (1.96, 0.9750021048517795),
        (4.5, 0.9999966023268753),
    ];
    for (x, want) in table {
        assert!((normal_cdf(x) - want).abs() < 1e-15 + 1e-13 * want, "{x}");
    }
    for p in [1e-6, 0.025, 0.3, 0.5, 0.9, 0.975] {
        assert!((normal_quantile(p) - n.inverse_cdf(p)).abs() < 1e-9);
    }
}

#[test]
fn v_table_values() {
    for (g, want) in [(0.01, 0.003), (0.05, 0.017), (0.1, 0.033)] {
        assert!((v_pgamma(1, g) - want).abs() < 5e-4, "{g}: {}", v_pgamma(1, g));
    }
    assert_eq!(v_pgamma(3, f64::INFINITY), 1.0);
}

#[test]
fn v_is_monotone_and_bounded() {
    for p in 1..=6 {
        let mut last = 0.0;
        for k in 1..200 {
            let g = 0.05 * k as f64;
            let v = v_pgamma(p, g);
            assert!(v > last && v <= 1.0);
            last = v;
        }
    }
}

#[test]
fn l_variance_matches_v() {
    for (p, g) in [(1usize, 0.01), (1, 0.5), (2, 0.1), (3, 2.0), (5, 0.05)] {
        let sampler = LSampler::new(p, g).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(p as u64 * 1000 + (g * 100.0) as u64);
        let n = 1_000_000;
        let (mut s, mut s2, mut max) = (0.0, 0.0, 0.0f64);
        for _ in 0..n {
            let l = sampler.sample(&mut rng);
            s += l;
            s2 += l * l;
            max = max.max(l.abs());
        }
        let mean = s / n as f64;
        let var = s2 / n as f64 - mean * mean;
        let v = v_pgamma(p, g);
        assert!((var / v - 1.0).abs() < 0.02, "p {p} g {g}: {var} vs {v}");
        assert!(mean.abs() < 0.005 * g.sqrt());
        assert!(max <= g.sqrt());
    }
}

#[test]
fn every_radius_method_is_exercised() {
    assert_eq!(LSampler::new(1, 0.5).unwrap().method(), RadiusMethod::ChiSquareRejection);
    assert_eq!(LSampler::new(1, 1e-3).unwrap().method(), RadiusMethod::PowerProposal);
    assert_eq!(LSampler::new(20, 6.0).unwrap().method(), RadiusMethod::InverseCdf);
    assert_eq!(LSampler::new(2, f64::INFINITY).unwrap().method(), RadiusMethod::Untruncated);
    // inverse-CDF route keeps the right variance too
    let s = LSampler::new(20, 6.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let n = 200_000;
    let var = (0..n).map(|_| s.sample(&mut rng).powi(2)).sum::<f64>() / n as f64;
    assert!((var / v_pgamma(20, 6.0) - 1.0).abs() < 0.02);
}

#[test]
fn p_one_law_is_truncated_normal() {
    let g: f64 = 0.5;
    let gamma = g.sqrt();
    let sampler = LSampler::new(1, g).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let n = 1_000_000;
    let mut draws: Vec<f64> = (0..n).map(|_| sampler.sample(&mut rng)).collect();
    draws.sort_by(f64::total_cmp);
    let z = Normal::standard();
    let mass = z.cdf(gamma) - z.cdf(-gamma);
    let cdf = |x: f64| (z.cdf(x) - z.cdf(-gamma)) / mass;
    let mut ks = 0.0f64;
    for (i, &x) in draws.iter().enumerate() {
        let f = cdf(x);
        ks = ks.max((f - i as f64 / n as f64).abs()).max(((i + 1) as f64 / n as f64 - f).abs());
    }
    assert!(ks < 0.005, "KS {ks}");
}

#[test]
fn mixture_quantile_examples() {
    let spec = MixtureSpec::normal(1.0);
    assert!((mixture_quantile(&spec, 0.975, 1_000_000, 1).unwrap() - 1.96).abs() < 0.01);

    let as_l = MixtureSpec::default().with_l(1.0, 1, f64::INFINITY).with_normal(0.5);
    let as_normal = MixtureSpec::normal(1.0).with_normal(0.5);
    for a in [0.025, 0.2, 0.9] {
        let x = mixture_quantile(&as_l, a, 1_000_000, 2).unwrap();
        let y = mixture_quantile(&as_normal, a, 1_000_000, 2).unwrap();
        assert!((x - y).abs() < 0.01);
    }

    let pure = MixtureSpec::default().with_l(1.0, 1, 0.05);
    assert!(mixture_quantile(&pure, 0.5, 1_000_000, 3).unwrap().abs() < 0.005);

    let zero = MixtureSpec::default().with_l(0.0, 1, 0.05).with_normal(0.0);
    assert_eq!(mixture_quantile(&zero, 0.5, 1000, 3), Err(Error::DegenerateDistribution));
    assert!(mixture_quantile(&spec, 1.0, 1000, 3).is_err());
}

#[test]
fn mixture_quantiles_are_symmetric_and_reproducible() {
    let spec = MixtureSpec::default().with_l(2.0, 1, 0.01).with_l(0.7, 2, 0.3).with_normal(1.0).with_normal(0.4);
    let mut q = MixtureQuantiler::new(400_000, 9);
    q.prepare(&spec).unwrap();
    let (lo, hi) = q.quantile_pair(&spec, 0.025, 0.975).unwrap();
    assert!((lo + hi).abs() < 0.02 * hi, "{lo} {hi}");
    let again = mixture_quantile(&spec, 0.975, 400_000, 9).unwrap();
    assert_eq!(again, hi);
    assert!((spec.variance() - (4.0 * v_pgamma(1, 0.01) + 0.49 * v_pgamma(2, 0.3) + 1.16)).abs() < 1e-12);
}

#[test]
fn unprepared_quantiler_is_an_error() {
    let spec = MixtureSpec::default().with_l(1.0, 1, 0.1);
    let q = MixtureQuantiler::new(1000, 0);
    assert!(q.quantile(&spec, 0.5).is_err());
}
