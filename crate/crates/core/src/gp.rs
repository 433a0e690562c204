//! Zero-mean Gaussian-process surrogate.

use serde::{Deserialize, Serialize};

use crate::error::{Result, UboError};
use crate::kernels::Kernel;
use std::sync::OnceLock;

use crate::linalg::{cholesky_with_jitter, dot, lower_inverse, solve_lower, solve_lower_transpose, Matrix};
use crate::scalar::Scalar;

pub const JITTER_START: f64 = 1e-10;
pub const JITTER_MAX: f64 = 1e-4;

/// Where an observation came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Init,
    Selected,
    ReceivedRemote,
}

/// Ordered `(query, observation)` pairs over the unit cube.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T> {
    dim: usize,
    points: Vec<Vec<T>>,
    values: Vec<T>,
    provenance: Vec<Provenance>,
}

impl<T: Scalar> Dataset<T> {
    pub fn new(dim: usize) -> Self {
        Self { dim, points: Vec::new(), values: Vec::new(), provenance: Vec::new() }
    }

    /// Appends one observation. Coordinates must lie in `[0,1]` and `y` must be finite.
    pub fn push(&mut self, x: Vec<T>, y: T, provenance: Provenance) -> Result<()> {
        if x.len() != self.dim {
            return Err(UboError::DimensionMismatch { expected: self.dim, got: x.len() });
        }
        if x.iter().any(|&c| !(c >= T::zero() && c <= T::one())) {
            return Err(UboError::InvalidConfig("query coordinates must lie in [0,1]".into()));
        }
        if !y.is_finite() {
            return Err(UboError::NonFinite("observation"));
        }
        self.points.push(x);
        self.values.push(y);
        self.provenance.push(provenance);
        Ok(())
    }

    pub fn from_points(dim: usize, points: Vec<Vec<T>>, values: Vec<T>) -> Result<Self> {
        if points.len() != values.len() {
            return Err(UboError::InvalidConfig("points and values differ in length".into()));
        }
        let mut ds = Self::new(dim);
        for (x, y) in points.into_iter().zip(values) {
            ds.push(x, y, Provenance::Init)?;
        }
        Ok(ds)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn points(&self) -> &[Vec<T>] {
        &self.points
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn provenance(&self) -> &[Provenance] {
        &self.provenance
    }

    /// Index of the largest observation; ties go to the earliest.
    pub fn argmax(&self) -> Option<usize> {
        let mut best: Option<usize> = None;
        for (i, &v) in self.values.iter().enumerate() {
            match best {
                Some(b) if self.values[b] >= v => {}
                _ => best = Some(i),
            }
        }
        best
    }

    /// Observations as a multiset of bit patterns, for order-free comparisons.
    pub fn as_bit_multiset(&self) -> Vec<(Vec<u64>, u64)> {
        let mut rows: Vec<_> = self
            .points
            .iter()
            .zip(&self.values)
            .map(|(x, &y)| (x.iter().map(|c| c.as_f64().to_bits()).collect(), y.as_f64().to_bits()))
            .collect();
        rows.sort();
        rows
    }
}

/// Gaussian predictive belief at one query point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction<T> {
    pub mean: T,
    pub variance: T,
}

impl<T: Scalar> Prediction<T> {
    pub fn std_dev(&self) -> T {
        self.variance.max(T::zero()).sqrt()
    }
}

/// Prediction from the GP prior: zero mean and the kernel's own variance.
pub fn prior_predict<T: Scalar, K: Kernel<T>>(kernel: &K, x: &[T]) -> Prediction<T> {
    let p = kernel.embed(x);
    Prediction { mean: T::zero(), variance: kernel.diag(&p) }
}

/// A fitted GP. Observations are standardized internally (mean removed, divided by
/// their standard deviation); predictions are reported in the original units.
#[derive(Debug, Clone)]
pub struct GpState<T: Scalar, K: Kernel<T>> {
    kernel: K,
    noise_variance: T,
    train: Vec<K::Point>,
    chol: Matrix<T>,
    /// `L⁻¹`, built on first prediction; the likelihood path never needs it.
    chol_inv: OnceLock<Matrix<T>>,
    alpha: Vec<T>,
    /// `yᵀK⁻¹y` for the standardized targets.
    quad: T,
    y_mean: T,
    y_scale: T,
    jitter: T,
}

impl<T: Scalar, K: Kernel<T>> GpState<T, K> {
    pub fn fit(dataset: &Dataset<T>, kernel: K, noise_variance: T) -> Result<Self> {
        if dataset.is_empty() {
            return Err(UboError::EmptyDataset);
        }
        if dataset.dim() != kernel.dim() {
            return Err(UboError::DimensionMismatch { expected: kernel.dim(), got: dataset.dim() });
        }
        if !(noise_variance >= T::zero()) {
            return Err(UboError::InvalidConfig("noise variance must be non-negative".into()));
        }
        if dataset.values().iter().any(|v| !v.is_finite()) {
            return Err(UboError::NonFinite("observation"));
        }
        let n = T::lit(dataset.len() as f64);
        let y_mean = dataset.values().iter().copied().sum::<T>() / n;
        let var = dataset.values().iter().map(|&v| (v - y_mean) * (v - y_mean)).sum::<T>() / n;
        let sd = var.sqrt();
        let y_scale = if sd > T::lit(1e-12) * (T::one() + y_mean.abs()) { sd } else { T::one() };
        let y_std: Vec<T> = dataset.values().iter().map(|&v| (v - y_mean) / y_scale).collect();

        let train: Vec<K::Point> = dataset.points().iter().map(|x| kernel.embed(x)).collect();
        let mut k = kernel.gram(&train);
        k.add_to_diagonal(noise_variance);
        let (chol, jitter) = cholesky_with_jitter(&k, T::lit(JITTER_START), T::lit(JITTER_MAX))?;
        let whitened = solve_lower(&chol, &y_std);
        let alpha = solve_lower_transpose(&chol, &whitened);
        // a sum of squares has no cancellation, unlike yᵀα
        let quad = dot(&whitened, &whitened);
        Ok(Self { kernel, noise_variance, train, chol, chol_inv: OnceLock::new(), alpha, quad, y_mean, y_scale, jitter })
    }

    pub fn kernel(&self) -> &K {
        &self.kernel
    }

    pub fn noise_variance(&self) -> T {
        self.noise_variance
    }

    pub fn jitter(&self) -> T {
        self.jitter
    }

    pub fn len(&self) -> usize {
        self.train.len()
    }

    pub fn is_empty(&self) -> bool {
        self.train.is_empty()
    }

    pub fn chol_factor(&self) -> &Matrix<T> {
        &self.chol
    }

    /// `(mean, scale)` used to standardize the observations.
    pub fn standardization(&self) -> (T, T) {
        (self.y_mean, self.y_scale)
    }

    pub fn predict(&self, x: &[T]) -> Result<Prediction<T>> {
        if x.len() != self.kernel.dim() {
            return Err(UboError::DimensionMismatch { expected: self.kernel.dim(), got: x.len() });
        }
        Ok(self.predict_unchecked(x))
    }

    pub(crate) fn predict_unchecked(&self, x: &[T]) -> Prediction<T> {
        let q = self.kernel.embed(x);
        let k: Vec<T> = self.train.iter().map(|p| self.kernel.eval_embedded(p, &q)).collect();
        let mean = dot(&k, &self.alpha);
        let inv = self.chol_inv.get_or_init(|| lower_inverse(&self.chol));
        let explained = (0..k.len()).fold(T::zero(), |s, i| {
            let v = dot(&inv.row(i)[..=i], &k[..=i]);
            s + v * v
        });
        let var = (self.kernel.diag(&q) - explained).max(T::zero());
        Prediction { mean: self.y_mean + self.y_scale * mean, variance: self.y_scale * self.y_scale * var }
    }

    /// Posterior mean only; skips the triangular solve.
    pub fn predict_mean(&self, x: &[T]) -> T {
        let q = self.kernel.embed(x);
        let m = self.train.iter().zip(&self.alpha).fold(T::zero(), |s, (p, &a)| s + a * self.kernel.eval_embedded(p, &q));
        self.y_mean + self.y_scale * m
    }

    /// Log marginal likelihood of the observations in their original units.
    ///
    /// Equals the standardized-data likelihood minus `n·ln(scale)` (the change of variables),
    /// so it is comparable across datasets while being a constant shift for a fixed dataset.
    pub fn log_marginal_likelihood(&self) -> T {
        let n = T::lit(self.train.len() as f64);
        let quad = self.quad;
        let log_det: T = (0..self.chol.rows()).map(|i| self.chol[(i, i)].ln()).sum();
        -quad / T::lit(2.0) - log_det - n / T::lit(2.0) * T::lit(std::f64::consts::TAU).ln() - n * self.y_scale.ln()
    }
}
