//! Fully Bayesian treatment of kernel hyperparameters by slice sampling.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, UboError};
use crate::gp::{Dataset, GpState, Prediction};
use crate::kernels::{Kernel, MaternArd, Spartan, SpartanHyperparams};
use crate::scalar::Scalar;

/// Step-out parameters of the univariate slice sampler.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SliceConfig {
    pub width: f64,
    pub max_step_out: usize,
    /// Shrinkage attempts before a coordinate keeps its current value.
    pub max_shrink: usize,
}

impl Default for SliceConfig {
    fn default() -> Self {
        Self { width: 1.0, max_step_out: 10, max_shrink: 100 }
    }
}

/// Coordinate-wise slice sampling with stepping out and shrinkage.
///
/// Every returned sample is one full sweep over the coordinates; the first `burn_in`
/// sweeps are discarded.
pub fn slice_sample<T, F, R>(
    mut log_target: F,
    x0: &[T],
    n_samples: usize,
    burn_in: usize,
    cfg: &SliceConfig,
    rng: &mut R,
) -> Result<Vec<Vec<T>>>
where
    T: Scalar,
    F: FnMut(&[T]) -> T,
    R: Rng + ?Sized,
{
    let mut x = x0.to_vec();
    let mut fx = log_target(&x);
    if !fx.is_finite() {
        return Err(UboError::NonFinite("log target at the starting point"));
    }
    let width = T::lit(cfg.width);
    let mut out = Vec::with_capacity(n_samples);
    for sweep in 0..(burn_in + n_samples) {
        for i in 0..x.len() {
            let xi = x[i];
            let level = fx - T::lit(-(1.0 - rng.random::<f64>()).ln());
            let mut eval_at = |v: T, x: &mut Vec<T>| {
                x[i] = v;
                log_target(x)
            };
            let mut lo = xi - width * T::lit(rng.random::<f64>());
            let mut hi = lo + width;
            let mut j = (rng.random::<f64>() * cfg.max_step_out as f64) as usize;
            let mut k = cfg.max_step_out.saturating_sub(1).saturating_sub(j);
            while j > 0 && eval_at(lo, &mut x) > level {
                lo -= width;
                j -= 1;
            }
            while k > 0 && eval_at(hi, &mut x) > level {
                hi += width;
                k -= 1;
            }
            let mut accepted = None;
            for _ in 0..cfg.max_shrink {
                let cand = lo + (hi - lo) * T::lit(rng.random::<f64>());
                let fc = eval_at(cand, &mut x);
                if fc > level {
                    accepted = Some((cand, fc));
                    break;
                }
                if cand < xi {
                    lo = cand;
                } else {
                    hi = cand;
                }
            }
            match accepted {
                Some((v, f)) => {
                    x[i] = v;
                    fx = f;
                }
                None => x[i] = xi,
            }
        }
        if sweep >= burn_in {
            out.push(x.clone());
        }
    }
    Ok(out)
}

/// Log-normal prior stated as the normal law of the logarithm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogNormal {
    pub mu: f64,
    pub sigma: f64,
}

impl LogNormal {
    fn log_density_of_log<T: Scalar>(&self, u: T) -> T {
        let z = (u - T::lit(self.mu)) / T::lit(self.sigma);
        -z * z / T::lit(2.0) - T::lit(self.sigma.ln() + 0.5 * std::f64::consts::TAU.ln())
    }
}

/// A parameterized kernel family with a prior over its unconstrained parameter vector.
pub trait HyperModel<T: Scalar>: Clone + Send + Sync {
    type Kernel: Kernel<T>;

    fn n_params(&self) -> usize;

    fn initial(&self) -> Vec<T>;

    /// Log prior density; `-inf` outside the support.
    fn log_prior(&self, theta: &[T]) -> T;

    /// Kernel for a parameter vector, `None` when it is outside the support.
    fn kernel(&self, theta: &[T]) -> Option<Self::Kernel>;
}

/// Stationary Matérn-5/2 ARD family: `[ln ℓ_1..ln ℓ_d, ln s²]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MaternPrior {
    pub dim: usize,
    pub lengthscale: LogNormal,
    pub signal_variance: LogNormal,
}

impl MaternPrior {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            lengthscale: LogNormal { mu: 0.1f64.ln(), sigma: 1.0 },
            signal_variance: LogNormal { mu: 0.0, sigma: 1.0 },
        }
    }
}

impl<T: Scalar> HyperModel<T> for MaternPrior {
    type Kernel = MaternArd<T>;

    fn n_params(&self) -> usize {
        self.dim + 1
    }

    fn initial(&self) -> Vec<T> {
        let mut v = vec![T::lit(self.lengthscale.mu); self.dim];
        v.push(T::lit(self.signal_variance.mu));
        v
    }

    fn log_prior(&self, theta: &[T]) -> T {
        let (ls, sv) = theta.split_at(self.dim);
        ls.iter().map(|&u| self.lengthscale.log_density_of_log(u)).sum::<T>()
            + self.signal_variance.log_density_of_log(sv[0])
    }

    fn kernel(&self, theta: &[T]) -> Option<MaternArd<T>> {
        let (ls, sv) = theta.split_at(self.dim);
        MaternArd::new(ls.iter().map(|u| u.exp()).collect(), sv[0].exp()).ok()
    }
}

/// Spartan family with `M` local kernels.
///
/// Layout: global `[ln ℓ (d), ln s²]`, then per local kernel `[ln ℓ (d), ln s², ln σ_l]`,
/// then the funnel center `θ_p (d)`. The global weighting density is centered on `θ_p`
/// with fixed spread `sigma_g`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpartanPrior {
    pub dim: usize,
    pub n_local: usize,
    pub lengthscale: LogNormal,
    pub signal_variance: LogNormal,
    /// Bounds of the log-uniform prior on each local spread.
    pub sigma_l_range: (f64, f64),
    pub sigma_g: f64,
}

impl SpartanPrior {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            n_local: 1,
            lengthscale: LogNormal { mu: 0.1f64.ln(), sigma: 1.0 },
            signal_variance: LogNormal { mu: 0.0, sigma: 1.0 },
            sigma_l_range: (0.01, 0.5),
            sigma_g: 10.0,
        }
    }

    fn local_offset(&self, l: usize) -> usize {
        self.dim + 1 + l * (self.dim + 2)
    }

    fn center_offset(&self) -> usize {
        self.local_offset(self.n_local)
    }

    /// Decodes a parameter vector without support checks beyond positivity.
    pub fn decode<T: Scalar>(&self, theta: &[T]) -> Option<SpartanHyperparams<T>> {
        let d = self.dim;
        let exp_all = |s: &[T]| s.iter().map(|u| u.exp()).collect::<Vec<T>>();
        let global = MaternArd::new(exp_all(&theta[..d]), theta[d].exp()).ok()?;
        let mut locals = Vec::with_capacity(self.n_local);
        let mut spreads = Vec::with_capacity(self.n_local);
        for l in 0..self.n_local {
            let o = self.local_offset(l);
            locals.push(MaternArd::new(exp_all(&theta[o..o + d]), theta[o + d].exp()).ok()?);
            spreads.push(theta[o + d + 1].exp());
        }
        let c = self.center_offset();
        let center = theta[c..c + d].to_vec();
        SpartanHyperparams::new(global, locals, center.clone(), T::lit(self.sigma_g), spreads, center).ok()
    }
}

impl<T: Scalar> HyperModel<T> for SpartanPrior {
    type Kernel = Spartan<T>;

    fn n_params(&self) -> usize {
        self.center_offset() + self.dim
    }

    fn initial(&self) -> Vec<T> {
        let d = self.dim;
        let mut v = vec![T::lit(0.3f64.ln()); d];
        v.push(T::zero());
        for _ in 0..self.n_local {
            v.extend(std::iter::repeat_n(T::lit(self.lengthscale.mu), d));
            v.push(T::zero());
            v.push(T::lit(0.1f64.ln()));
        }
        v.extend(std::iter::repeat_n(T::lit(0.5), d));
        v
    }

    fn log_prior(&self, theta: &[T]) -> T {
        let d = self.dim;
        let (lo, hi) = (T::lit(self.sigma_l_range.0.ln()), T::lit(self.sigma_l_range.1.ln()));
        let mut lp = theta[..d].iter().map(|&u| self.lengthscale.log_density_of_log(u)).sum::<T>()
            + self.signal_variance.log_density_of_log(theta[d]);
        for l in 0..self.n_local {
            let o = self.local_offset(l);
            lp += theta[o..o + d].iter().map(|&u| self.lengthscale.log_density_of_log(u)).sum::<T>();
            lp += self.signal_variance.log_density_of_log(theta[o + d]);
            let s = theta[o + d + 1];
            if !(s >= lo && s <= hi) {
                return T::neg_infinity();
            }
        }
        let c = self.center_offset();
        if theta[c..c + d].iter().any(|&v| !(v >= T::zero() && v <= T::one())) {
            return T::neg_infinity();
        }
        lp
    }

    fn kernel(&self, theta: &[T]) -> Option<Spartan<T>> {
        self.decode(theta).map(Spartan::new)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperConfig {
    pub n_samples: usize,
    /// Burn-in of the very first chain.
    pub burn_in: usize,
    /// Burn-in when warm-starting from the previous chain state.
    pub warm_burn_in: usize,
    /// Noise variance of the standardized observations.
    pub noise_variance: f64,
    pub slice: SliceConfig,
}

impl Default for HyperConfig {
    fn default() -> Self {
        Self { n_samples: 10, burn_in: 100, warm_burn_in: 10, noise_variance: 1e-4, slice: SliceConfig::default() }
    }
}

/// Hyperparameter samples with one fitted GP per sample.
#[derive(Debug, Clone)]
pub struct HyperSampleSet<T: Scalar, K: Kernel<T>> {
    pub samples: Vec<Vec<T>>,
    pub states: Vec<GpState<T, K>>,
}

impl<T: Scalar, K: Kernel<T>> HyperSampleSet<T, K> {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn predict_all(&self, x: &[T]) -> Vec<Prediction<T>> {
        self.states.iter().map(|s| s.predict_unchecked(x)).collect()
    }

    /// Posterior mean averaged over the samples.
    pub fn mean(&self, x: &[T]) -> T {
        self.states.iter().map(|s| s.predict_mean(x)).sum::<T>() / T::lit(self.states.len() as f64)
    }
}

pub fn log_posterior<T: Scalar, M: HyperModel<T>>(model: &M, dataset: &Dataset<T>, noise: T, theta: &[T]) -> T {
    let lp = model.log_prior(theta);
    if !lp.is_finite() {
        return T::neg_infinity();
    }
    let Some(kernel) = model.kernel(theta) else { return T::neg_infinity() };
    match GpState::fit(dataset, kernel, noise) {
        Ok(gp) => {
            let l = gp.log_marginal_likelihood() + lp;
            if l.is_finite() {
                l
            } else {
                T::neg_infinity()
            }
        }
        Err(_) => T::neg_infinity(),
    }
}

const REFIT_RETRIES: usize = 5;

/// Slice-sampling chain over a hyperparameter family, warm-started between calls.
#[derive(Debug, Clone)]
pub struct HyperSampler<T, M> {
    model: M,
    cfg: HyperConfig,
    chain: Option<Vec<T>>,
}

impl<T: Scalar, M: HyperModel<T>> HyperSampler<T, M> {
    pub fn new(model: M, cfg: HyperConfig) -> Self {
        Self { model, cfg, chain: None }
    }

    pub fn model(&self) -> &M {
        &self.model
    }

    pub fn config(&self) -> &HyperConfig {
        &self.cfg
    }

    pub fn chain_state(&self) -> Option<&[T]> {
        self.chain.as_deref()
    }

    pub fn resample<R: Rng + ?Sized>(&mut self, dataset: &Dataset<T>, rng: &mut R) -> Result<HyperSampleSet<T, M::Kernel>> {
        if dataset.is_empty() {
            return Err(UboError::EmptyDataset);
        }
        if self.cfg.n_samples == 0 {
            return Err(UboError::InvalidConfig("need at least one hyperparameter sample".into()));
        }
        let noise = T::lit(self.cfg.noise_variance);
        let target = |theta: &[T]| log_posterior(&self.model, dataset, noise, theta);
        let (start, burn) = match &self.chain {
            Some(prev) if target(prev).is_finite() => (prev.clone(), self.cfg.warm_burn_in),
            _ => (self.model.initial(), self.cfg.burn_in),
        };
        let mut draws = slice_sample(target, &start, self.cfg.n_samples, burn, &self.cfg.slice, rng)?;

        let mut samples = Vec::with_capacity(self.cfg.n_samples);
        let mut states = Vec::with_capacity(self.cfg.n_samples);
        let mut retries = 0;
        let mut queue: std::collections::VecDeque<Vec<T>> = draws.drain(..).collect();
        while states.len() < self.cfg.n_samples {
            let theta = match queue.pop_front() {
                Some(t) => t,
                None => {
                    retries += 1;
                    if retries > REFIT_RETRIES {
                        return Err(UboError::Singular { jitter: crate::gp::JITTER_MAX });
                    }
                    let last = samples.last().cloned().unwrap_or_else(|| start.clone());
                    let extra = slice_sample(target, &last, 1, 0, &self.cfg.slice, rng)?;
                    extra.into_iter().next().expect("one sample requested")
                }
            };
            let fitted = self.model.kernel(&theta).map(|k| GpState::fit(dataset, k, noise));
            match fitted {
                Some(Ok(gp)) if gp.log_marginal_likelihood().is_finite() => {
                    samples.push(theta);
                    states.push(gp);
                }
                _ => {}
            }
        }
        self.chain = samples.last().cloned();
        Ok(HyperSampleSet { samples, states })
    }
}

/// One-shot resampling from a cold chain.
pub fn resample_hypers<T: Scalar, M: HyperModel<T>, R: Rng + ?Sized>(
    dataset: &Dataset<T>,
    model: &M,
    cfg: &HyperConfig,
    rng: &mut R,
) -> Result<HyperSampleSet<T, M::Kernel>> {
    HyperSampler::new(model.clone(), *cfg).resample(dataset, rng)
}
