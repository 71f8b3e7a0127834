//! Finite populations and their moments.

use alloc::format;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// A fixed frame of `N` units with phase-I covariates `x`, optional phase-II
/// covariates `z` and an optionally observed study variable `y`.
#[derive(Debug, Clone, PartialEq)]
pub struct FinitePopulation {
    x: Matrix,
    z: Option<Matrix>,
    y: Option<Vec<f64>>,
    unit_ids: Vec<u64>,
}

/// Column selector for [`population_moments`] and friends.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Column {
    X(usize),
    Z(usize),
    Y,
}

impl FinitePopulation {
    pub fn new(x: Matrix, z: Option<Matrix>, y: Option<Vec<f64>>) -> Result<Self> {
        let ids = (0..x.rows() as u64).collect();
        Self::with_ids(x, z, y, ids)
    }

    pub fn with_ids(x: Matrix, z: Option<Matrix>, y: Option<Vec<f64>>, unit_ids: Vec<u64>) -> Result<Self> {
        let n = x.rows();
        if n == 0 {
            return Err(Error::Config("population has no units".into()));
        }
        if unit_ids.len() != n {
            return Err(Error::Config(format!("{} unit ids for {n} units", unit_ids.len())));
        }
        if let Some(z) = &z {
            if z.rows() != n {
                return Err(Error::Config(format!("z has {} rows, x has {n}", z.rows())));
            }
            if !z.is_finite() {
                return Err(Error::Config("non-finite value in z".into()));
            }
        }
        if let Some(y) = &y {
            if y.len() != n {
                return Err(Error::Config(format!("y has {} entries, x has {n} rows", y.len())));
            }
            if y.iter().any(|v| !v.is_finite()) {
                return Err(Error::Config("non-finite value in y".into()));
            }
        }
        if !x.is_finite() {
            return Err(Error::Config("non-finite value in x".into()));
        }
        Ok(Self { x, z, y, unit_ids })
    }

    pub fn n_units(&self) -> usize {
        self.x.rows()
    }

    /// Dimension `p` of the phase-I covariates.
    pub fn p(&self) -> usize {
        self.x.cols()
    }

    /// Dimension `q` of the phase-II covariates (0 when absent).
    pub fn q(&self) -> usize {
        self.z.as_ref().map_or(0, Matrix::cols)
    }

    pub fn x(&self) -> &Matrix {
        &self.x
    }

    pub fn x_row(&self, unit: usize) -> &[f64] {
        self.x.row(unit)
    }

    pub fn z(&self) -> Option<&Matrix> {
        self.z.as_ref()
    }

    /// The study variable, or [`Error::UnobservedOutcome`] for design-only frames.
    pub fn y(&self) -> Result<&[f64]> {
        self.y.as_deref().ok_or(Error::UnobservedOutcome)
    }

    pub fn has_y(&self) -> bool {
        self.y.is_some()
    }

    pub fn unit_ids(&self) -> &[u64] {
        &self.unit_ids
    }

    /// Value of a column at one unit.
    pub fn value(&self, column: Column, unit: usize) -> Result<f64> {
        match column {
            Column::X(j) => {
                if j >= self.p() {
                    return Err(Error::Config(format!("x column {j} out of range")));
                }
                Ok(self.x[(unit, j)])
            }
            Column::Z(j) => match &self.z {
                Some(z) if j < z.cols() => Ok(z[(unit, j)]),
                _ => Err(Error::Config(format!("z column {j} not available"))),
            },
            Column::Y => Ok(self.y()?[unit]),
        }
    }

    pub fn column(&self, column: Column) -> Result<Vec<f64>> {
        (0..self.n_units()).map(|i| self.value(column, i)).collect()
    }

    /// Frame mean of y, `ȳ₀`.
    pub fn y_mean(&self) -> Result<f64> {
        let y = self.y()?;
        Ok(y.iter().sum::<f64>() / y.len() as f64)
    }

    /// Replace the study variable, e.g. for a transformed outcome.
    pub fn with_y(mut self, y: Vec<f64>) -> Result<Self> {
        if y.len() != self.n_units() || y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("replacement y must be finite with one entry per unit".into()));
        }
        self.y = Some(y);
        Ok(self)
    }
}

/// Means of two column blocks and their cross-covariance with divisor `N − 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentPair {
    pub mean_u: Vec<f64>,
    pub mean_v: Vec<f64>,
    pub cov_uv: Matrix,
}

pub fn population_moments(pop: &FinitePopulation, u_cols: &[Column], v_cols: &[Column]) -> Result<MomentPair> {
    let n = pop.n_units();
    if n < 2 {
        return Err(Error::DegeneratePopulation { n_units: n });
    }
    let u: Vec<Vec<f64>> = u_cols.iter().map(|c| pop.column(*c)).collect::<Result<_>>()?;
    let v: Vec<Vec<f64>> = v_cols.iter().map(|c| pop.column(*c)).collect::<Result<_>>()?;
    let mean = |col: &Vec<f64>| col.iter().sum::<f64>() / n as f64;
    let mean_u: Vec<f64> = u.iter().map(mean).collect();
    let mean_v: Vec<f64> = v.iter().map(mean).collect();
    let mut cov_uv = Matrix::zeros(u.len(), v.len());
    for (a, ua) in u.iter().enumerate() {
        for (b, vb) in v.iter().enumerate() {
            let s: f64 = ua.iter().zip(vb).map(|(p, q)| (p - mean_u[a]) * (q - mean_v[b])).sum();
            cov_uv[(a, b)] = s / (n - 1) as f64;
        }
    }
    Ok(MomentPair { mean_u, mean_v, cov_uv })
}

/// Frame with `x ~ 0.5^{1/2}(χ²₁ − 1)` and `y = 1 + βx + e`, `e ~ N(0, σ²)`.
///
/// The `x` and `e` draws do not depend on `beta`, so frames generated with the
/// same seed and different slopes share covariates and noise.
pub fn generate_synthetic(seed: u64, n_units: usize, beta: f64, noise_sd: f64) -> Result<FinitePopulation> {
    if n_units < 2 {
        return Err(Error::Config(format!("n_units must be at least 2, got {n_units}")));
    }
    if !(noise_sd > 0.0 && noise_sd.is_finite()) || !beta.is_finite() {
        return Err(Error::Config(format!("invalid noise_sd {noise_sd} or beta {beta}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = Vec::with_capacity(n_units);
    let mut y = Vec::with_capacity(n_units);
    let half_root = libm::sqrt(0.5);
    for _ in 0..n_units {
        let g: f64 = StandardNormal.sample(&mut rng);
        let e: f64 = StandardNormal.sample(&mut rng);
        let xi = half_root * (g * g - 1.0);
        x.push(xi);
        y.push(1.0 + beta * xi + noise_sd * e);
    }
    FinitePopulation::new(Matrix::from_vec(n_units, 1, x), None, Some(y))
}

/// Synthetic stand-in for a school-performance frame: `x` is last year's
/// score, `z` holds three percentages (English learners, subsidized meals,
/// first-year students) and `y` is this year's score.
///
/// All covariates are strictly positive so they can drive
/// probability-proportional-to-size designs.
pub fn generate_api_proxy(seed: u64, n_units: usize) -> Result<FinitePopulation> {
    if n_units < 2 {
        return Err(Error::Config(format!("n_units must be at least 2, got {n_units}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };
    let mut x = Vec::with_capacity(n_units);
    let mut z = Vec::with_capacity(n_units * 3);
    let mut y = Vec::with_capacity(n_units);
    for _ in 0..n_units {
        let api99 = (650.0 + 105.0 * normal()).clamp(320.0, 980.0);
        let meals = (50.0 - 0.22 * (api99 - 650.0) + 14.0 * normal()).clamp(2.0, 98.0);
        let ell = (0.45 * meals + 3.0 + 9.0 * normal()).clamp(1.0, 90.0);
        let mobility = (16.0 + 0.02 * (650.0 - api99) + 7.0 * normal()).clamp(1.0, 60.0);
        let api00 = 40.0 + 0.97 * api99 - 0.35 * (meals - 50.0) - 0.25 * (ell - 25.0) - 0.5 * (mobility - 16.0)
            + 18.0 * normal();
        x.push(api99);
        z.extend_from_slice(&[ell, meals, mobility]);
        y.push(api00);
    }
    FinitePopulation::new(Matrix::from_vec(n_units, 1, x), Some(Matrix::from_vec(n_units, 3, z)), Some(y))
}

/// Draw a single standard normal; shared by samplers across the crate.
#[inline]
pub(crate) fn std_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(values: &[f64]) -> FinitePopulation {
        FinitePopulation::new(Matrix::from_vec(values.len(), 1, values.to_vec()), None, Some(values.to_vec())).unwrap()
    }

    #[test]
    fn moments_by_hand() {
        let pop = tiny(&[1.0, 2.0, 3.0]);
        let m = population_moments(&pop, &[Column::X(0)], &[Column::Y]).unwrap();
        assert_eq!(m.mean_u, [2.0]);
        assert!((m.cov_uv[(0, 0)] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn constant_column_has_zero_covariance() {
        let x = Matrix::from_vec(4, 1, alloc::vec![5.0; 4]);
        let pop = FinitePopulation::new(x, None, Some(alloc::vec![1.0, 2.0, 0.0, 7.0])).unwrap();
        let m = population_moments(&pop, &[Column::X(0)], &[Column::Y]).unwrap();
        assert_eq!(m.cov_uv[(0, 0)], 0.0);
    }

    #[test]
    fn doubled_column_doubles_covariance() {
        let u = [0.3, 1.7, -2.0, 4.1, 0.0];
        let v: Vec<f64> = u.iter().map(|a| 2.0 * a).collect();
        let pop = FinitePopulation::new(Matrix::from_vec(5, 1, u.to_vec()), None, Some(v)).unwrap();
        let uu = population_moments(&pop, &[Column::X(0)], &[Column::X(0)]).unwrap();
        let uv = population_moments(&pop, &[Column::X(0)], &[Column::Y]).unwrap();
        assert!((uv.cov_uv[(0, 0)] - 2.0 * uu.cov_uv[(0, 0)]).abs() < 1e-12);
    }

    #[test]
    fn single_unit_is_degenerate() {
        let pop = tiny(&[1.0]);
        assert_eq!(
            population_moments(&pop, &[Column::Y], &[Column::Y]),
            Err(Error::DegeneratePopulation { n_units: 1 })
        );
    }

    #[test]
    fn rejects_non_finite() {
        let x = Matrix::from_vec(2, 1, alloc::vec![1.0, f64::NAN]);
        assert!(FinitePopulation::new(x, None, None).is_err());
    }

    #[test]
    fn synthetic_is_reproducible() {
        let a = generate_synthetic(7, 500, 1.0, 1.0).unwrap();
        let b = generate_synthetic(7, 500, 1.0, 1.0).unwrap();
        assert_eq!(a, b);
        assert!(generate_synthetic(7, 1, 1.0, 1.0).is_err());
        assert!(generate_synthetic(7, 10, 1.0, 0.0).is_err());
    }

    #[test]
    fn design_only_frame_refuses_y() {
        let x = Matrix::from_vec(3, 1, alloc::vec![1.0, 2.0, 3.0]);
        let pop = FinitePopulation::new(x, None, None).unwrap();
        assert_eq!(pop.y(), Err(Error::UnobservedOutcome));
    }
}
