use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rejsamp_core::designs::{draw_poisson, draw_srswor, draw_stratified};
use rejsamp_core::{DrawnSample, PhaseChain, StratumPlan};

/// All `k`-subsets of `0..n`.
fn subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, n, k, &mut Vec::new(), &mut out);
    out
}

#[test]
fn srswor_joint_matches_enumeration() {
    let all = subsets(5, 2);
    assert_eq!(all.len(), 10);
    let s = draw_srswor(&mut ChaCha8Rng::seed_from_u64(0), 5, 2).unwrap();
    for i in 0..5 {
        for j in 0..5 {
            let count = all.iter().filter(|c| c.contains(&i) && c.contains(&j)).count();
            assert!((s.pairwise(i, j).unwrap() - count as f64 / 10.0).abs() < 1e-15);
        }
    }
}

#[test]
fn srswor_inclusion_frequency() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut hits = [0usize; 10];
    let reps = 100_000;
    for _ in 0..reps {
        for &i in draw_srswor(&mut rng, 10, 3).unwrap().indices() {
            hits[i] += 1;
        }
    }
    for h in hits {
        assert!((h as f64 / reps as f64 - 0.3).abs() < 0.01);
    }
}

#[test]
fn poisson_mean_size() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let reps = 100_000;
    let total: usize = (0..reps).map(|_| draw_poisson(&mut rng, &[0.5; 20]).unwrap().len()).sum();
    assert!((total as f64 / reps as f64 - 10.0).abs() < 0.1);
}

#[test]
fn stratified_joint_matches_enumeration() {
    let plan = StratumPlan { stratum_of: vec![0, 0, 0, 0, 1, 1, 1, 1, 1, 1], take: vec![2, 3] };
    let s = draw_stratified(&mut ChaCha8Rng::seed_from_u64(3), &plan).unwrap();
    let first = subsets(4, 2);
    let second = subsets(6, 3);
    let mut joint = vec![vec![0usize; 10]; 10];
    for a in &first {
        for b in &second {
            let units: Vec<usize> = a.iter().copied().chain(b.iter().map(|j| j + 4)).collect();
            for &i in &units {
                for &j in &units {
                    joint[i][j] += 1;
                }
            }
        }
    }
    let total = (first.len() * second.len()) as f64;
    for i in 0..10 {
        for j in 0..10 {
            assert!((s.pairwise(i, j).unwrap() - joint[i][j] as f64 / total).abs() < 1e-15, "({i},{j})");
        }
    }
    assert_eq!(s.pairwise(0, 7).unwrap(), 0.25);
}

#[test]
fn single_stratum_matches_srswor_law() {
    let plan = StratumPlan { stratum_of: vec![0; 8], take: vec![3] };
    let a = draw_stratified(&mut ChaCha8Rng::seed_from_u64(1), &plan).unwrap();
    let b = draw_srswor(&mut ChaCha8Rng::seed_from_u64(1), 8, 3).unwrap();
    for i in 0..8 {
        assert_eq!(a.pi(i), b.pi(i));
        for j in 0..8 {
            assert_eq!(a.pairwise(i, j).unwrap(), b.pairwise(i, j).unwrap());
        }
    }
}

#[test]
fn fixed_size_identities() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let plan = StratumPlan { stratum_of: vec![0, 1, 0, 1, 1, 2, 2, 2, 2], take: vec![1, 2, 3] };
    for s in [draw_srswor(&mut rng, 9, 4).unwrap(), draw_stratified(&mut rng, &plan).unwrap()] {
        let n = s.len() as f64;
        assert!((s.first_order().iter().sum::<f64>() - n).abs() < 1e-12);
        for i in 0..9 {
            let row: f64 = (0..9).map(|j| s.pairwise(i, j).unwrap()).sum();
            assert!((row - n * s.pi(i)).abs() < 1e-12);
        }
    }
}

#[test]
fn census_strata() {
    let plan = StratumPlan { stratum_of: vec![0, 0, 0, 1, 1, 1], take: vec![3, 3] };
    let s = draw_stratified(&mut ChaCha8Rng::seed_from_u64(5), &plan).unwrap();
    assert_eq!(s.indices(), &[0, 1, 2, 3, 4, 5]);
}

#[test]
fn empty_stratum_with_positive_take_is_rejected() {
    let plan = StratumPlan { stratum_of: vec![0, 0, 0], take: vec![1, 1] };
    assert!(draw_stratified(&mut ChaCha8Rng::seed_from_u64(5), &plan).is_err());
}

#[test]
fn inclusion_products() {
    let phase_i = DrawnSample::custom(vec![0, 2, 4, 6], vec![0.5; 8]).unwrap();
    let phase_ii = DrawnSample::custom(vec![1, 2], vec![0.4; 4]).unwrap();
    let phase_iii = DrawnSample::custom(vec![1], vec![0.5; 2]).unwrap();
    let chain = PhaseChain::from_samples(8, vec![phase_i.clone(), phase_ii.clone(), phase_iii]).unwrap();
    use rejsamp_core::Phase;
    assert!((chain.inclusion_product(Phase::II, 2).unwrap() - 0.2).abs() < 1e-15);
    assert!((chain.inclusion_product(Phase::II, 4).unwrap() - 0.2).abs() < 1e-15);
    assert!((chain.inclusion_product(Phase::III, 4).unwrap() - 0.1).abs() < 1e-15);
    assert!(chain.inclusion_product(Phase::II, 0).is_err());

    let census = DrawnSample::custom((0..8).collect(), vec![1.0; 8]).unwrap();
    let two = PhaseChain::from_samples(8, vec![census, DrawnSample::custom(vec![3], vec![0.4; 8]).unwrap()]).unwrap();
    assert_eq!(two.inclusion_product(Phase::II, 3).unwrap(), 0.4);
}
