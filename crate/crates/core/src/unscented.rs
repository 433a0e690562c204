//! Scaled unscented transform over Gaussian input noise.

use crate::error::{Result, UboError};
use crate::linalg::{cholesky, Matrix};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct UtConfig<T> {
    pub alpha: T,
    pub kappa: T,
    /// Input-noise covariance.
    pub input_cov: Matrix<T>,
}

impl<T: Scalar> UtConfig<T> {
    pub fn new(alpha: T, kappa: T, input_cov: Matrix<T>) -> Result<Self> {
        let cfg = Self { alpha, kappa, input_cov };
        cfg.validate()?;
        Ok(cfg)
    }

    /// `σ²I` noise with the default spread `α = 1`, `κ = 0`.
    pub fn isotropic(dim: usize, sigma: T) -> Self {
        Self { alpha: T::one(), kappa: T::zero(), input_cov: Matrix::from_diagonal(&vec![sigma * sigma; dim]) }
    }

    pub fn with_alpha(mut self, alpha: T) -> Self {
        self.alpha = alpha;
        self
    }

    pub fn dim(&self) -> usize {
        self.input_cov.rows()
    }

    /// `γ = α²(d+κ) − d`.
    pub fn gamma(&self) -> T {
        let d = T::lit(self.dim() as f64);
        self.alpha * self.alpha * (d + self.kappa) - d
    }

    /// `(w⁰, wⁱ)`.
    pub fn weights(&self) -> (T, T) {
        let d = T::lit(self.dim() as f64);
        let g = self.gamma();
        (g / (d + g), T::one() / (T::lit(2.0) * (d + g)))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > T::zero() && self.alpha <= T::one()) {
            return Err(UboError::InvalidConfig("UT alpha must lie in (0, 1]".into()));
        }
        if !(self.kappa >= T::zero()) {
            return Err(UboError::InvalidConfig("UT kappa must be non-negative".into()));
        }
        if !self.input_cov.is_square() || self.dim() == 0 {
            return Err(UboError::InvalidConfig("input covariance must be a non-empty square matrix".into()));
        }
        if !(T::lit(self.dim() as f64) + self.gamma() > T::zero()) {
            return Err(UboError::InvalidConfig("UT spread d + γ must be positive".into()));
        }
        Ok(())
    }
}

/// `2d+1` sigma points and their weights.
#[derive(Debug, Clone, PartialEq)]
pub struct SigmaSet<T> {
    pub points: Vec<Vec<T>>,
    pub weights: Vec<T>,
}

/// Precomputed transform: the scaled square root of the covariance is factored once and
/// reused for every center.
#[derive(Debug, Clone)]
pub struct UnscentedTransform<T> {
    offsets: Vec<Vec<T>>,
    w0: T,
    wi: T,
    clamp: bool,
}

/// Matrix square root of a PSD matrix via Cholesky, with zero rows/columns allowed.
fn psd_sqrt<T: Scalar>(a: &Matrix<T>) -> Result<Matrix<T>> {
    if !a.is_symmetric(T::lit(1e-12)) {
        return Err(UboError::NotPsd);
    }
    if let Some(l) = cholesky(a) {
        return Ok(l);
    }
    // semi-definite case: drop exactly-zero diagonal entries and factor the rest
    let n = a.rows();
    let keep: Vec<usize> = (0..n).filter(|&i| a[(i, i)] != T::zero()).collect();
    for i in 0..n {
        if a[(i, i)] < T::zero() {
            return Err(UboError::NotPsd);
        }
        if a[(i, i)] == T::zero() && (0..n).any(|j| a[(i, j)] != T::zero()) {
            return Err(UboError::NotPsd);
        }
    }
    let sub = Matrix::from_fn(keep.len(), keep.len(), |i, j| a[(keep[i], keep[j])]);
    let l = cholesky(&sub).ok_or(UboError::NotPsd)?;
    let mut out = Matrix::zeros(n, n);
    for (i, &ki) in keep.iter().enumerate() {
        for (j, &kj) in keep.iter().enumerate() {
            out[(ki, kj)] = l[(i, j)];
        }
    }
    Ok(out)
}

impl<T: Scalar> UnscentedTransform<T> {
    pub fn new(cfg: &UtConfig<T>) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.dim();
        let spread = T::lit(d as f64) + cfg.gamma();
        let root = psd_sqrt(&cfg.input_cov.scaled(spread))?;
        let offsets = (0..d).map(|j| root.column(j)).collect();
        let (w0, wi) = cfg.weights();
        Ok(Self { offsets, w0, wi, clamp: true })
    }

    /// Disables clamping of sigma points to the unit cube.
    pub fn unclamped(mut self) -> Self {
        self.clamp = false;
        self
    }

    pub fn dim(&self) -> usize {
        self.offsets.len()
    }

    pub fn weights(&self) -> (T, T) {
        (self.w0, self.wi)
    }

    fn place(&self, v: T) -> T {
        if self.clamp {
            v.max(T::zero()).min(T::one())
        } else {
            v
        }
    }

    /// Sigma points ordered `[center, center+col_1, center−col_1, …]`.
    pub fn sigma_points(&self, center: &[T]) -> Result<SigmaSet<T>> {
        if center.len() != self.dim() {
            return Err(UboError::DimensionMismatch { expected: self.dim(), got: center.len() });
        }
        let mut points = Vec::with_capacity(2 * self.dim() + 1);
        let mut weights = Vec::with_capacity(2 * self.dim() + 1);
        points.push(center.iter().map(|&v| self.place(v)).collect());
        weights.push(self.w0);
        for off in &self.offsets {
            for sign in [T::one(), -T::one()] {
                points.push(center.iter().zip(off).map(|(&c, &o)| self.place(c + sign * o)).collect());
                weights.push(self.wi);
            }
        }
        Ok(SigmaSet { points, weights })
    }

    /// Weighted sum of `f` over the sigma points; points with zero weight are skipped.
    pub fn expectation<F: FnMut(&[T]) -> T>(&self, mut f: F, center: &[T]) -> Result<T> {
        let set = self.sigma_points(center)?;
        let mut acc = T::zero();
        for (p, &w) in set.points.iter().zip(&set.weights) {
            if w == T::zero() {
                continue;
            }
            let v = f(p);
            if !v.is_finite() {
                return Err(UboError::NonFinite("function value at a sigma point"));
            }
            acc += w * v;
        }
        Ok(acc)
    }
}

pub fn sigma_points<T: Scalar>(center: &[T], cfg: &UtConfig<T>) -> Result<SigmaSet<T>> {
    UnscentedTransform::new(cfg)?.sigma_points(center)
}

/// UT estimate of `∫ f(x) N(x; center, Σ) dx`.
pub fn ut_expectation<T: Scalar, F: FnMut(&[T]) -> T>(f: F, center: &[T], cfg: &UtConfig<T>) -> Result<T> {
    UnscentedTransform::new(cfg)?.expectation(f, center)
}

/// Acquisition averaged over the input-noise distribution of the query.
pub fn unscented_acquisition<T: Scalar, F: FnMut(&[T]) -> T>(acq: F, x: &[T], ut: &UnscentedTransform<T>) -> Result<T> {
    ut.expectation(acq, x)
}

/// Observed point maximizing the UT-integrated posterior mean, with its value.
/// Ties go to the earliest index.
pub fn unscented_incumbent<T: Scalar, F: FnMut(&[T]) -> T>(
    mut mean: F,
    points: &[Vec<T>],
    ut: &UnscentedTransform<T>,
) -> Result<(usize, T)> {
    let mut best: Option<(usize, T)> = None;
    for (i, x) in points.iter().enumerate() {
        let g = ut.expectation(&mut mean, x)?;
        match best {
            Some((_, b)) if b >= g => {}
            _ => best = Some((i, g)),
        }
    }
    best.ok_or(UboError::EmptyDataset)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_dimensional_default_instantiation() {
        let cfg = UtConfig::<f64>::isotropic(1, 0.02);
        assert_eq!(cfg.gamma(), 0.0);
        let s = sigma_points(&[0.5], &cfg).unwrap();
        assert_eq!(s.weights, vec![0.0, 0.5, 0.5]);
        assert!((s.points[1][0] - 0.52).abs() < 1e-15);
        assert!((s.points[2][0] - 0.48).abs() < 1e-15);
    }

    #[test]
    fn two_dimensional_offsets() {
        let sigma = 0.02;
        let s = sigma_points(&[0.5, 0.5], &UtConfig::<f64>::isotropic(2, sigma)).unwrap();
        assert_eq!(s.points.len(), 5);
        assert!(s.weights[1..].iter().all(|&w| (w - 0.25).abs() < 1e-15));
        let off = 2f64.sqrt() * sigma;
        assert!((s.points[1][0] - 0.5 - off).abs() < 1e-15);
        assert_eq!(s.points[1][1], 0.5);
    }

    #[test]
    fn negative_center_weight_is_allowed() {
        let cfg = UtConfig::<f64>::isotropic(2, 0.02).with_alpha(0.9);
        assert!((cfg.gamma() + 0.38).abs() < 1e-12);
        let (w0, wi) = cfg.weights();
        assert!(w0 < 0.0);
        assert!((w0 + 4.0 * wi - 1.0).abs() < 1e-12);
    }

    #[test]
    fn clamps_to_domain() {
        let s = sigma_points(&[0.0, 1.0], &UtConfig::isotropic(2, 0.05)).unwrap();
        assert!(s.points.iter().flatten().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn rejects_invalid_configs() {
        let cov = Matrix::from_row_major(2, 2, vec![1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(sigma_points(&[0.5, 0.5], &UtConfig { alpha: 1.0, kappa: 0.0, input_cov: cov }), Err(UboError::NotPsd)));
        assert!(UtConfig::new(1.5, 0.0, Matrix::identity(2)).is_err());
        assert!(UtConfig::new(0.5, -1.0, Matrix::identity(2)).is_err());
    }

    #[test]
    fn zero_noise_collapses_to_center() {
        let ut = UnscentedTransform::new(&UtConfig::<f64>::isotropic(2, 0.0)).unwrap();
        let v = ut.expectation(|x| x[0] * 3.0 + x[1], &[0.2, 0.4]).unwrap();
        assert!((v - 1.0).abs() < 1e-15);
    }

    #[test]
    fn constant_function_is_exact() {
        let cfg = UtConfig::<f64>::isotropic(3, 0.02).with_alpha(0.7);
        assert!((ut_expectation(|_x| 4.5, &[0.3, 0.3, 0.3], &cfg).unwrap() - 4.5).abs() < 1e-12);
    }

    #[test]
    fn single_point_incumbent() {
        let ut = UnscentedTransform::new(&UtConfig::isotropic(1, 0.02)).unwrap();
        let (i, _) = unscented_incumbent(|x| x[0], &[vec![0.4]], &ut).unwrap();
        assert_eq!(i, 0);
    }

    #[test]
    fn plateau_beats_spike() {
        // equal height: a spike at 0.2 (width 0.005) and a plateau around 0.7
        let f = |x: &[f64]| {
            let spike = (-(x[0] - 0.2f64).powi(2) / (2.0 * 0.005f64.powi(2))).exp();
            let plateau = (-(x[0] - 0.7f64).powi(2) / (2.0 * 0.2f64.powi(2))).exp();
            spike.max(plateau)
        };
        let ut = UnscentedTransform::new(&UtConfig::isotropic(1, 0.02)).unwrap();
        let (i, g) = unscented_incumbent(f, &[vec![0.2], vec![0.7]], &ut).unwrap();
        assert_eq!(i, 1);
        assert!(g > 0.99);
    }
}
