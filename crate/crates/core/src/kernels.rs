//! Covariance functions.
//!
//! Kernels work on *embedded* points: each input is mapped once into whatever form makes
//! pairwise evaluation cheap (inputs pre-divided by the ARD lengthscales, blending weights
//! precomputed). The GP embeds its training set once per fit and every query once per
//! prediction.

use crate::error::{Result, UboError};
use crate::linalg::{squared_distance, Matrix};
use crate::scalar::Scalar;

pub trait Kernel<T: Scalar>: Clone + Send + Sync {
    type Point: Clone + std::fmt::Debug + Send + Sync;

    fn dim(&self) -> usize;

    fn embed(&self, x: &[T]) -> Self::Point;

    fn eval_embedded(&self, a: &Self::Point, b: &Self::Point) -> T;

    fn eval(&self, a: &[T], b: &[T]) -> T {
        self.eval_embedded(&self.embed(a), &self.embed(b))
    }

    fn diag(&self, x: &Self::Point) -> T {
        self.eval_embedded(x, x)
    }

    fn gram(&self, points: &[Self::Point]) -> Matrix<T> {
        let n = points.len();
        let mut k = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let v = self.eval_embedded(&points[i], &points[j]);
                k[(i, j)] = v;
                k[(j, i)] = v;
            }
        }
        k
    }
}

fn scale_by_lengthscales<T: Scalar>(x: &[T], lengthscales: &[T]) -> Vec<T> {
    x.iter().zip(lengthscales).map(|(&v, &l)| v / l).collect()
}

/// Matérn kernel with smoothness 5/2 and one lengthscale per input dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct MaternArd<T> {
    pub lengthscales: Vec<T>,
    pub signal_variance: T,
}

impl<T: Scalar> MaternArd<T> {
    pub fn new(lengthscales: Vec<T>, signal_variance: T) -> Result<Self> {
        if lengthscales.is_empty() {
            return Err(UboError::InvalidConfig("Matérn kernel needs at least one lengthscale".into()));
        }
        if lengthscales.iter().any(|&l| !(l > T::zero()) || !l.is_finite()) {
            return Err(UboError::InvalidConfig("Matérn lengthscales must be positive".into()));
        }
        if !(signal_variance > T::zero()) || !signal_variance.is_finite() {
            return Err(UboError::InvalidConfig("Matérn signal variance must be positive".into()));
        }
        Ok(Self { lengthscales, signal_variance })
    }

    pub fn isotropic(dim: usize, lengthscale: T, signal_variance: T) -> Result<Self> {
        Self::new(vec![lengthscale; dim], signal_variance)
    }

    /// Value as a function of the lengthscale-scaled distance `r`.
    #[inline]
    pub fn profile(&self, r: T) -> T {
        self.signal_variance * matern52_unit(r)
    }

    #[inline]
    fn scaled_eval(&self, a: &[T], b: &[T]) -> T {
        self.profile(squared_distance(a, b).sqrt())
    }
}

impl<T: Scalar> Kernel<T> for MaternArd<T> {
    type Point = Vec<T>;

    fn dim(&self) -> usize {
        self.lengthscales.len()
    }

    fn embed(&self, x: &[T]) -> Vec<T> {
        scale_by_lengthscales(x, &self.lengthscales)
    }

    fn eval_embedded(&self, a: &Vec<T>, b: &Vec<T>) -> T {
        self.scaled_eval(a, b)
    }

    fn diag(&self, _x: &Vec<T>) -> T {
        self.signal_variance
    }
}

/// Squared-exponential kernel with ARD lengthscales.
#[derive(Debug, Clone, PartialEq)]
pub struct SquaredExponential<T> {
    pub lengthscales: Vec<T>,
    pub signal_variance: T,
}

impl<T: Scalar> SquaredExponential<T> {
    pub fn new(lengthscales: Vec<T>, signal_variance: T) -> Result<Self> {
        if lengthscales.is_empty() || lengthscales.iter().any(|&l| !(l > T::zero())) {
            return Err(UboError::InvalidConfig("SE lengthscales must be positive".into()));
        }
        if !(signal_variance > T::zero()) {
            return Err(UboError::InvalidConfig("SE signal variance must be positive".into()));
        }
        Ok(Self { lengthscales, signal_variance })
    }
}

impl<T: Scalar> Kernel<T> for SquaredExponential<T> {
    type Point = Vec<T>;

    fn dim(&self) -> usize {
        self.lengthscales.len()
    }

    fn embed(&self, x: &[T]) -> Vec<T> {
        scale_by_lengthscales(x, &self.lengthscales)
    }

    fn eval_embedded(&self, a: &Vec<T>, b: &Vec<T>) -> T {
        self.signal_variance * (-squared_distance(a, b) / T::lit(2.0)).exp()
    }

    fn diag(&self, _x: &Vec<T>) -> T {
        self.signal_variance
    }
}

/// Hyperparameters of the Spartan kernel: one global Matérn kernel blended with `M`
/// local Matérn kernels whose influence regions share the center `theta_p`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpartanHyperparams<T> {
    pub theta_g: MaternArd<T>,
    pub theta_l: Vec<MaternArd<T>>,
    /// Center of the local influence funnel.
    pub theta_p: Vec<T>,
    /// Spread of the global weighting density.
    pub sigma_g: T,
    /// Spreads of the local weighting densities (one per local kernel).
    pub sigma_l: Vec<T>,
    /// Center of the global weighting density.
    pub psi: Vec<T>,
}

impl<T: Scalar> SpartanHyperparams<T> {
    /// Validates the parameter set. `psi == theta_p` is the usual tie but not required here.
    pub fn new(
        theta_g: MaternArd<T>,
        theta_l: Vec<MaternArd<T>>,
        theta_p: Vec<T>,
        sigma_g: T,
        sigma_l: Vec<T>,
        psi: Vec<T>,
    ) -> Result<Self> {
        let d = theta_g.lengthscales.len();
        if theta_l.is_empty() || theta_l.len() != sigma_l.len() {
            return Err(UboError::InvalidConfig("Spartan kernel needs M >= 1 local kernels with one spread each".into()));
        }
        if theta_l.iter().any(|k| k.lengthscales.len() != d) || theta_p.len() != d || psi.len() != d {
            return Err(UboError::InvalidConfig("Spartan parameter dimensions disagree".into()));
        }
        if theta_p.iter().any(|&c| c < T::zero() || c > T::one()) {
            return Err(UboError::InvalidConfig("funnel center must lie in the unit cube".into()));
        }
        let max_l = sigma_l.iter().fold(T::zero(), |m, &s| m.max(s));
        if sigma_l.iter().any(|&s| !(s > T::zero())) || !(sigma_g > max_l) {
            return Err(UboError::InvalidConfig("Spartan spreads must satisfy sigma_g > max(sigma_l) > 0".into()));
        }
        Ok(Self { theta_g, theta_l, theta_p, sigma_g, sigma_l, psi })
    }

    pub fn dim(&self) -> usize {
        self.theta_p.len()
    }
}

/// Blending weights `(λ_g, λ_l[..])` at `x`; their squares sum to one.
pub fn spartan_weights<T: Scalar>(x: &[T], hp: &SpartanHyperparams<T>) -> (T, Vec<T>) {
    let d = T::lit(x.len() as f64);
    let two_pi = T::lit(std::f64::consts::TAU);
    let log_density = |center: &[T], sigma: T| {
        let var = sigma * sigma;
        -squared_distance(x, center) / (T::lit(2.0) * var) - d / T::lit(2.0) * (two_pi * var).ln()
    };
    let log_g = log_density(&hp.psi, hp.sigma_g);
    let log_l: Vec<T> = hp.sigma_l.iter().map(|&s| log_density(&hp.theta_p, s)).collect();
    let top = log_l.iter().fold(log_g, |m, &v| m.max(v));
    if !top.is_finite() {
        return (T::one(), vec![T::zero(); log_l.len()]);
    }
    let total = (log_g - top).exp() + log_l.iter().map(|&v| (v - top).exp()).sum::<T>();
    let lam = |v: T| ((v - top).exp() / total).sqrt();
    (lam(log_g), log_l.iter().map(|&v| lam(v)).collect())
}

/// A point embedded for the Spartan kernel: scaled coordinates for the global and each
/// local kernel, stored back to back, and per-kernel amplitudes `λ·√σ²`.
#[derive(Debug, Clone)]
pub struct SpartanPoint<T> {
    coords: Vec<T>,
    amp: Vec<T>,
}

/// Unit-variance Matérn-5/2 as a function of the scaled distance.
#[inline]
pub fn matern52_unit<T: Scalar>(r: T) -> T {
    let s5r = T::lit(5f64.sqrt()) * r;
    (T::one() + s5r + s5r * s5r * T::lit(1.0 / 3.0)) * (-s5r).exp()
}

/// Nonstationary composite kernel
/// `k(x,x') = λ_g(x)λ_g(x')k_g(x,x') + Σ_l λ_l(x)λ_l(x')k_l(x,x')`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spartan<T> {
    pub hp: SpartanHyperparams<T>,
}

impl<T: Scalar> Spartan<T> {
    pub fn new(hp: SpartanHyperparams<T>) -> Self {
        Self { hp }
    }
}

impl<T: Scalar> Kernel<T> for Spartan<T> {
    type Point = SpartanPoint<T>;

    fn dim(&self) -> usize {
        self.hp.dim()
    }

    fn embed(&self, x: &[T]) -> SpartanPoint<T> {
        let (lambda_g, lambda_l) = spartan_weights(x, &self.hp);
        let kernels = || std::iter::once(&self.hp.theta_g).chain(&self.hp.theta_l);
        let amp = std::iter::once(lambda_g)
            .chain(lambda_l)
            .zip(kernels())
            .map(|(lam, k)| lam * k.signal_variance.sqrt())
            .collect::<Vec<_>>();
        let mut coords = Vec::with_capacity(x.len() * amp.len());
        for k in kernels() {
            coords.extend(x.iter().zip(&k.lengthscales).map(|(&v, &l)| v / l));
        }
        SpartanPoint { coords, amp }
    }

    #[inline]
    fn eval_embedded(&self, a: &SpartanPoint<T>, b: &SpartanPoint<T>) -> T {
        let d = self.hp.dim();
        a.coords
            .chunks_exact(d)
            .zip(b.coords.chunks_exact(d))
            .zip(a.amp.iter().zip(&b.amp))
            .fold(T::zero(), |s, ((u, v), (&wa, &wb))| s + wa * wb * matern52_unit(squared_distance(u, v).sqrt()))
    }

    fn diag(&self, x: &SpartanPoint<T>) -> T {
        x.amp.iter().fold(T::zero(), |s, &w| s + w * w)
    }
}
