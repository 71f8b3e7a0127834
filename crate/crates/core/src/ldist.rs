//! The truncated-ball law `L_{p,γ²}` and the mixtures built from it.
//!
//! `L_{p,γ²} = χ_{p,γ²} · S · Γ_p^{1/2}` where `χ²_{p,γ²}` is `χ²_p` truncated
//! to `[0, γ²]`, `S` is a random sign and `Γ_p ~ Beta(1/2, (p−1)/2)`. The
//! product `S · Γ_p^{1/2}` is the first coordinate of a uniform point on the
//! unit sphere in `R^p`, which is how it is sampled here.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::population::std_normal;

const GAMMA_MAX_ITER: usize = 500;
const GAMMA_EPS: f64 = 1e-16;

/// Regularized lower incomplete gamma `P(a, x)`.
pub fn regularized_lower_gamma(a: f64, x: f64) -> f64 {
    debug_assert!(a > 0.0);
    if x <= 0.0 {
        return 0.0;
    }
    if x.is_infinite() {
        return 1.0;
    }
    let log_prefactor = -x + a * libm::log(x) - libm::lgamma(a);
    if x < a + 1.0 {
        // series: P = e^{-x} x^a / Γ(a) Σ x^n / (a (a+1) ... (a+n))
        let mut term = 1.0 / a;
        let mut sum = term;
        let mut ap = a;
        for _ in 0..GAMMA_MAX_ITER {
            ap += 1.0;
            term *= x / ap;
            sum += term;
            if term.abs() < sum.abs() * GAMMA_EPS {
                break;
            }
        }
        (sum * libm::exp(log_prefactor)).min(1.0)
    } else {
        // modified Lentz continued fraction for Q
        let tiny = 1e-300;
        let mut b = x + 1.0 - a;
        let mut c = 1.0 / tiny;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..GAMMA_MAX_ITER {
            let an = -(i as f64) * (i as f64 - a);
            b += 2.0;
            d = an * d + b;
            if d.abs() < tiny {
                d = tiny;
            }
            c = b + an / c;
            if c.abs() < tiny {
                c = tiny;
            }
            d = 1.0 / d;
            let delta = d * c;
            h *= delta;
            if (delta - 1.0).abs() < GAMMA_EPS {
                break;
            }
        }
        (1.0 - libm::exp(log_prefactor) * h).max(0.0)
    }
}

/// `P(χ²_dof ≤ x)`.
pub fn chisq_cdf(dof: usize, x: f64) -> f64 {
    assert!(dof >= 1, "chi-square needs at least one degree of freedom");
    if x.is_nan() {
        return f64::NAN;
    }
    regularized_lower_gamma(dof as f64 / 2.0, x / 2.0)
}

/// Inverse of [`chisq_cdf`] by bisection; `prob` in `(0, 1)`.
pub fn chisq_quantile(dof: usize, prob: f64) -> Result<f64> {
    if !(prob > 0.0 && prob < 1.0) {
        return Err(Error::Config(alloc::format!("chi-square quantile level {prob} outside (0, 1)")));
    }
    let mut hi = dof as f64 + 10.0;
    while chisq_cdf(dof, hi) < prob {
        hi *= 2.0;
    }
    Ok(bisect(0.0, hi, |t| chisq_cdf(dof, t) - prob))
}

fn bisect(mut lo: f64, mut hi: f64, f: impl Fn(f64) -> f64) -> f64 {
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Variance of `L_{p,γ²}`: `P(χ²_{p+2} ≤ γ²) / P(χ²_p ≤ γ²)`, and 1 for `γ² = ∞`.
pub fn v_pgamma(p: usize, gamma_sq: f64) -> f64 {
    assert!(p >= 1 && gamma_sq > 0.0, "v_pgamma needs p >= 1 and gamma_sq > 0");
    if gamma_sq.is_infinite() {
        return 1.0;
    }
    let denom = chisq_cdf(p, gamma_sq);
    if denom < 1e-280 {
        // both probabilities underflow; use the small-threshold limit p/(p+2) · γ²/p
        return gamma_sq / (p as f64 + 2.0);
    }
    (chisq_cdf(p + 2, gamma_sq) / denom).min(1.0)
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / core::f64::consts::SQRT_2)
}

/// Standard normal quantile (Wichura's AS241, about 1e-16 relative accuracy).
pub fn normal_quantile(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        return q * poly(&A, r) / poly(&B, r);
    }
    let r = if q < 0.0 { p } else { 1.0 - p };
    let r = libm::sqrt(-libm::log(r));
    let val = if r <= 5.0 {
        let r = r - 1.6;
        poly(&C, r) / poly(&D, r)
    } else {
        let r = r - 5.0;
        poly(&E, r) / poly(&F, r)
    };
    if q < 0.0 {
        -val
    } else {
        val
    }
}

fn poly(coef: &[f64; 8], x: f64) -> f64 {
    coef.iter().rev().fold(0.0, |acc, c| acc * x + c)
}

const A: [f64; 8] = [
    3.387_132_872_796_366_5,
    133.141_667_891_784_38,
    1_971.590_950_306_551_3,
    13_731.693_765_509_461,
    45_921.953_931_549_87,
    67_265.770_927_008_7,
    33_430.575_583_588_13,
    2_509.080_928_730_122_7,
];
const B: [f64; 8] = [
    1.0,
    42.313_330_701_600_91,
    687.187_007_492_057_9,
    5_394.196_021_424_751,
    21_213.794_301_586_597,
    39_307.895_800_092_71,
    28_729.085_735_721_943,
    5_226.495_278_852_545,
];
const C: [f64; 8] = [
    1.423_437_110_749_683_5,
    4.630_337_846_156_546,
    5.769_497_221_460_691,
    3.647_848_324_763_204_5,
    1.270_458_252_452_368_4,
    0.241_780_725_177_450_6,
    0.022_723_844_989_269_184,
    7.745_450_142_783_414e-4,
];
const D: [f64; 8] = [
    1.0,
    2.053_191_626_637_759,
    1.676_384_830_183_803_8,
    0.689_767_334_985_1,
    0.148_103_976_427_480_08,
    0.015_198_666_563_616_457,
    5.475_938_084_995_345e-4,
    1.050_750_071_644_416_9e-9,
];
const E: [f64; 8] = [
    6.657_904_643_501_103,
    5.463_784_911_164_114,
    1.784_826_539_917_291_3,
    0.296_560_571_828_504_9,
    0.026_532_189_526_576_124,
    0.001_242_660_947_388_078_4,
    2.711_555_568_743_487_6e-5,
    2.010_334_399_292_288_1e-7,
];
const F: [f64; 8] = [
    1.0,
    0.599_832_206_555_888,
    0.136_929_880_922_735_8,
    0.014_875_361_290_850_615,
    7.868_691_311_456_133e-4,
    1.846_318_317_510_054_8e-5,
    1.421_511_758_316_446e-7,
    2.043_631_353_402_297_7e-15,
];

/// Which route [`LSampler`] takes to draw the truncated radius.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RadiusMethod {
    /// No truncation: `L` is standard normal.
    Untruncated,
    /// Draw `χ²_p` and reject values above `γ²`.
    ChiSquareRejection,
    /// Propose from the density `∝ t^{p/2−1}` on `[0, γ²]` and accept with
    /// probability `e^{−t/2}`; efficient when `γ²` is small.
    PowerProposal,
    /// Invert the truncated CDF by bisection.
    InverseCdf,
}

/// Reusable sampler for `L_{p,γ²}`.
#[derive(Debug, Clone)]
pub struct LSampler {
    p: usize,
    gamma_sq: f64,
    mass: f64,
    method: RadiusMethod,
}

impl LSampler {
    pub fn new(p: usize, gamma_sq: f64) -> Result<Self> {
        if p == 0 {
            return Err(Error::Config("L needs dimension p >= 1".into()));
        }
        if !(gamma_sq > 0.0) {
            return Err(Error::Config(alloc::format!("threshold must be positive, got {gamma_sq}")));
        }
        if gamma_sq.is_infinite() {
            return Ok(Self { p, gamma_sq, mass: 1.0, method: RadiusMethod::Untruncated });
        }
        let mass = chisq_cdf(p, gamma_sq);
        let method = if mass >= 0.05 {
            RadiusMethod::ChiSquareRejection
        } else if gamma_sq <= 4.0 {
            RadiusMethod::PowerProposal
        } else {
            RadiusMethod::InverseCdf
        };
        Ok(Self { p, gamma_sq, mass, method })
    }

    pub fn method(&self) -> RadiusMethod {
        self.method
    }

    /// `P(χ²_p ≤ γ²)`, the asymptotic acceptance rate.
    pub fn truncation_mass(&self) -> f64 {
        self.mass
    }

    /// One draw of `χ²_{p,γ²}`.
    pub fn sample_radius_sq<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let p = self.p;
        match self.method {
            RadiusMethod::Untruncated => chi_sq_draw(rng, p),
            RadiusMethod::ChiSquareRejection => loop {
                let t = chi_sq_draw(rng, p);
                if t <= self.gamma_sq {
                    return t;
                }
            },
            RadiusMethod::PowerProposal => loop {
                let u: f64 = rng.random();
                let t = self.gamma_sq * libm::pow(u, 2.0 / p as f64);
                let accept: f64 = rng.random();
                if accept < libm::exp(-0.5 * t) {
                    return t;
                }
            },
            RadiusMethod::InverseCdf => {
                let u: f64 = rng.random::<f64>() * self.mass;
                bisect(0.0, self.gamma_sq, |t| chisq_cdf(p, t) - u)
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.method == RadiusMethod::Untruncated {
            return std_normal(rng);
        }
        let radius = libm::sqrt(self.sample_radius_sq(rng));
        if self.p == 1 {
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            return radius * sign;
        }
        // first coordinate of a uniform direction on the sphere: S·Γ_p^{1/2}
        let first = std_normal(rng);
        let mut norm_sq = first * first;
        for _ in 1..self.p {
            let g = std_normal(rng);
            norm_sq += g * g;
        }
        radius * first / libm::sqrt(norm_sq)
    }
}

fn chi_sq_draw<R: Rng + ?Sized>(rng: &mut R, p: usize) -> f64 {
    (0..p).map(|_| {
        let g = std_normal(rng);
        g * g
    })
    .sum()
}

/// One draw of `L_{p,γ²}`. Build an [`LSampler`] when drawing repeatedly.
pub fn sample_l<R: Rng + ?Sized>(rng: &mut R, p: usize, gamma_sq: f64) -> Result<f64> {
    Ok(LSampler::new(p, gamma_sq)?.sample(rng))
}

/// One `scale · L_{p,γ²}` component of a mixture.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LTerm {
    pub scale: f64,
    pub dim: usize,
    pub gamma_sq: f64,
}

/// `Σ scale_i · L_{p_i,γ_i²} + Σ scale_j · Z_j` with all components independent.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MixtureSpec {
    pub l_terms: Vec<LTerm>,
    pub normal_terms: Vec<f64>,
}

impl MixtureSpec {
    pub fn normal(scale: f64) -> Self {
        Self { l_terms: Vec::new(), normal_terms: vec![scale] }
    }

    pub fn with_l(mut self, scale: f64, dim: usize, gamma_sq: f64) -> Self {
        self.l_terms.push(LTerm { scale, dim, gamma_sq });
        self
    }

    pub fn with_normal(mut self, scale: f64) -> Self {
        self.normal_terms.push(scale);
        self
    }

    /// Variance of the mixture.
    pub fn variance(&self) -> f64 {
        let l: f64 = self.l_terms.iter().map(|t| t.scale * t.scale * v_pgamma(t.dim, t.gamma_sq)).sum();
        l + self.normal_terms.iter().map(|s| s * s).sum::<f64>()
    }

    fn validate(&self) -> Result<()> {
        let scales = self.l_terms.iter().map(|t| t.scale).chain(self.normal_terms.iter().copied());
        let mut any_positive = false;
        for s in scales {
            if !(s >= 0.0 && s.is_finite()) {
                return Err(Error::Config(alloc::format!("mixture scale {s} must be finite and nonnegative")));
            }
            any_positive |= s > 0.0;
        }
        for t in &self.l_terms {
            if t.dim == 0 || !(t.gamma_sq > 0.0) {
                return Err(Error::Config("L term needs p >= 1 and a positive threshold".into()));
            }
        }
        if any_positive {
            Ok(())
        } else {
            Err(Error::DegenerateDistribution)
        }
    }

    /// The L terms that are genuinely truncated, and the standard deviation
    /// of everything else folded into one normal.
    fn split(&self) -> (Vec<LTerm>, f64) {
        let mut normal_var: f64 = self.normal_terms.iter().map(|s| s * s).sum();
        let mut truncated = Vec::new();
        for t in &self.l_terms {
            if t.scale == 0.0 {
                continue;
            }
            if t.gamma_sq.is_infinite() {
                normal_var += t.scale * t.scale;
            } else {
                truncated.push(*t);
            }
        }
        (truncated, libm::sqrt(normal_var))
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::Config(alloc::format!("quantile level {alpha} outside (0, 1)")))
    }
}

/// Monte Carlo `alpha` quantile of a mixture, deterministic in `(spec, alpha, n_draws, seed)`.
///
/// Normal-only mixtures (including `L` terms with `γ² = ∞`) are answered
/// exactly without sampling.
pub fn mixture_quantile(spec: &MixtureSpec, alpha: f64, n_draws: usize, seed: u64) -> Result<f64> {
    let mut q = MixtureQuantiler::new(n_draws, seed);
    q.prepare(spec)?;
    q.quantile(spec, alpha)
}

/// Caches pools of `L_{p,γ²}` and normal draws so that many mixture
/// quantiles with different scales can be evaluated cheaply.
///
/// Pool `k` for a given `(p, γ²)` is only ever used for the `k`-th L term
/// with that law inside one spec, keeping terms independent.
#[derive(Debug, Clone)]
pub struct MixtureQuantiler {
    n_draws: usize,
    seed: u64,
    normal_pool: Vec<f64>,
    pools: Vec<(usize, u64, usize, Vec<f64>)>,
}

impl MixtureQuantiler {
    pub fn new(n_draws: usize, seed: u64) -> Self {
        Self { n_draws: n_draws.max(1), seed, normal_pool: Vec::new(), pools: Vec::new() }
    }

    pub fn n_draws(&self) -> usize {
        self.n_draws
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn stream(&self, salt: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(salt);
        rng
    }

    /// Draw whatever pools `spec` needs and does not have yet.
    pub fn prepare(&mut self, spec: &MixtureSpec) -> Result<()> {
        spec.validate()?;
        let (truncated, normal_sd) = spec.split();
        if normal_sd > 0.0 && self.normal_pool.is_empty() && !truncated.is_empty() {
            let mut rng = self.stream(0);
            self.normal_pool = (0..self.n_draws).map(|_| std_normal(&mut rng)).collect();
        }
        for (dim, bits, occurrence) in pool_keys(&truncated) {
            if self.find(dim, bits, occurrence).is_some() {
                continue;
            }
            // the stream depends only on the pool's key, never on preparation order
            let salt = (bits.rotate_left(17) ^ ((dim as u64) << 48) ^ ((occurrence as u64) << 40)) | 1;
            let mut rng = self.stream(salt);
            let sampler = LSampler::new(dim, f64::from_bits(bits))?;
            let pool = (0..self.n_draws).map(|_| sampler.sample(&mut rng)).collect();
            self.pools.push((dim, bits, occurrence, pool));
        }
        Ok(())
    }

    fn find(&self, dim: usize, bits: u64, occurrence: usize) -> Option<&[f64]> {
        self.pools.iter().find(|(d, b, o, _)| *d == dim && *b == bits && *o == occurrence).map(|(_, _, _, p)| p.as_slice())
    }

    fn combined(&self, spec: &MixtureSpec) -> Result<Option<(Vec<f64>, f64)>> {
        spec.validate()?;
        let (truncated, normal_sd) = spec.split();
        if truncated.is_empty() {
            return Ok(None);
        }
        let mut values = vec![0.0; self.n_draws];
        for (term, (dim, bits, occurrence)) in truncated.iter().zip(pool_keys(&truncated)) {
            let pool = self
                .find(dim, bits, occurrence)
                .ok_or_else(|| Error::Config("mixture quantiler used before prepare()".into()))?;
            for (v, l) in values.iter_mut().zip(pool) {
                *v += term.scale * l;
            }
        }
        if normal_sd > 0.0 {
            if self.normal_pool.is_empty() {
                return Err(Error::Config("mixture quantiler used before prepare()".into()));
            }
            for (v, z) in values.iter_mut().zip(&self.normal_pool) {
                *v += normal_sd * z;
            }
        }
        Ok(Some((values, normal_sd)))
    }

    pub fn quantile(&self, spec: &MixtureSpec, alpha: f64) -> Result<f64> {
        let (lo, _) = self.quantile_pair(spec, alpha, alpha)?;
        Ok(lo)
    }

    /// Two quantiles from one combined pool.
    pub fn quantile_pair(&self, spec: &MixtureSpec, a: f64, b: f64) -> Result<(f64, f64)> {
        check_alpha(a)?;
        check_alpha(b)?;
        match self.combined(spec)? {
            None => {
                let (_, sd) = spec.split();
                Ok((sd * normal_quantile(a), sd * normal_quantile(b)))
            }
            Some((mut values, _)) => {
                let qa = select_quantile(&mut values, a);
                let qb = select_quantile(&mut values, b);
                Ok((qa, qb))
            }
        }
    }
}

fn pool_keys(terms: &[LTerm]) -> Vec<(usize, u64, usize)> {
    let mut keys: Vec<(usize, u64, usize)> = Vec::with_capacity(terms.len());
    for t in terms {
        let bits = t.gamma_sq.to_bits();
        let occurrence = keys.iter().filter(|(d, b, _)| *d == t.dim && *b == bits).count();
        keys.push((t.dim, bits, occurrence));
    }
    keys
}

/// Empirical quantile by the inverse-CDF (type 1) rule.
fn select_quantile(values: &mut [f64], alpha: f64) -> f64 {
    let n = values.len();
    let rank = libm::ceil(alpha * n as f64) as usize;
    let k = rank.clamp(1, n) - 1;
    let (_, v, _) = values.select_nth_unstable_by(k, f64::total_cmp);
    *v
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chisq_closed_forms() {
        assert_eq!(chisq_cdf(3, 0.0), 0.0);
        let x = 2.0 * core::f64::consts::LN_2;
        assert!((chisq_cdf(2, x) - 0.5).abs() < 1e-14);
        for &x in &[0.01, 0.5, 3.0, 40.0] {
            assert!((chisq_cdf(2, x) - (1.0 - libm::exp(-x / 2.0))).abs() < 1e-13);
            let one = 2.0 * normal_cdf(libm::sqrt(x)) - 1.0;
            assert!((chisq_cdf(1, x) - one).abs() < 1e-13, "x = {x}");
        }
        assert!((chisq_cdf(1, 0.01) - 0.0797).abs() < 1e-4);
    }

    #[test]
    fn chisq_quantile_inverts() {
        let q = chisq_quantile(3, 0.001).unwrap();
        assert!((chisq_cdf(3, q) - 0.001).abs() < 1e-12);
        assert!(chisq_quantile(3, 1.0).is_err());
    }

    #[test]
    fn v_table_values() {
        assert!((v_pgamma(1, 0.01) - 0.003).abs() < 5e-4);
        assert!((v_pgamma(1, 0.05) - 0.017).abs() < 5e-4);
        assert!((v_pgamma(1, 0.1) - 0.033).abs() < 5e-4);
        assert_eq!(v_pgamma(4, f64::INFINITY), 1.0);
    }

    #[test]
    fn v_is_monotone_and_bounded() {
        for p in 1..8 {
            let mut prev = 0.0;
            for k in 1..200 {
                let g = 0.05 * k as f64;
                let v = v_pgamma(p, g);
                assert!(v > prev && v <= 1.0, "p={p} g={g}");
                prev = v;
            }
        }
    }

    #[test]
    fn normal_quantile_round_trip() {
        assert!((normal_quantile(0.975) - 1.959_963_984_540_054).abs() < 1e-14);
        for &p in &[1e-10, 0.001, 0.2, 0.5, 0.8, 0.999] {
            assert!((normal_cdf(normal_quantile(p)) - p).abs() < 1e-13 * p.max(1e-3) * 10.0);
        }
    }

    #[test]
    fn every_radius_method_respects_support() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for (p, g, m) in [
            (1, 2.0, RadiusMethod::ChiSquareRejection),
            (2, 0.01, RadiusMethod::PowerProposal),
            (30, 8.0, RadiusMethod::InverseCdf),
        ] {
            let s = LSampler::new(p, g).unwrap();
            assert_eq!(s.method(), m);
            let gamma = libm::sqrt(g);
            for _ in 0..2000 {
                let l = s.sample(&mut rng);
                assert!(l.abs() <= gamma + 1e-12);
            }
        }
    }

    #[test]
    fn radius_methods_agree_in_mean() {
        // E χ²_{p,γ²} = p·v_{p,γ²}, whichever route draws it
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for (p, g) in [(2, 0.01), (3, 0.5), (30, 8.0)] {
            let s = LSampler::new(p, g).unwrap();
            let n = 20_000;
            let mean = (0..n).map(|_| s.sample_radius_sq(&mut rng)).sum::<f64>() / n as f64;
            let target = p as f64 * v_pgamma(p, g);
            assert!((mean / target - 1.0).abs() < 0.03, "p={p} g={g} mean={mean} target={target}");
        }
    }

    #[test]
    fn normal_only_mixture_is_exact() {
        let spec = MixtureSpec::normal(1.0);
        assert_eq!(mixture_quantile(&spec, 0.975, 100_000, 1).unwrap(), normal_quantile(0.975));
        let inf = MixtureSpec::default().with_l(2.0, 3, f64::INFINITY);
        let q = mixture_quantile(&inf, 0.975, 100_000, 1).unwrap();
        assert!((q - 2.0 * 1.959_963_984_540_054).abs() < 1e-12);
    }

    #[test]
    fn degenerate_mixture_is_rejected() {
        let spec = MixtureSpec::default().with_l(0.0, 1, 0.1).with_normal(0.0);
        assert_eq!(mixture_quantile(&spec, 0.5, 1000, 1), Err(Error::DegenerateDistribution));
        assert!(mixture_quantile(&MixtureSpec::normal(1.0), 1.0, 1000, 1).is_err());
    }

    #[test]
    fn quantiler_is_deterministic() {
        let spec = MixtureSpec::normal(0.5).with_l(1.0, 1, 0.05);
        let a = mixture_quantile(&spec, 0.9, 100_000, 99).unwrap();
        let b = mixture_quantile(&spec, 0.9, 100_000, 99).unwrap();
        assert_eq!(a, b);
    }
}
