//! Expected improvement and the two query-selection meta-policies.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::gp::Prediction;
use crate::hyper::HyperSampleSet;
use crate::kernels::Kernel;
use crate::scalar::{normal_cdf, normal_pdf, Scalar};
use crate::sobol::Sobol;

/// Best solution so far.
#[derive(Debug, Clone, PartialEq)]
pub struct Incumbent<T> {
    pub value: T,
    pub location: Vec<T>,
}

/// Expected improvement over `incumbent` for a maximization problem.
pub fn expected_improvement<T: Scalar>(pred: &Prediction<T>, incumbent: T) -> T {
    let improvement = pred.mean - incumbent;
    let sd = pred.std_dev();
    if !(sd > T::zero()) {
        return improvement.max(T::zero());
    }
    let z = improvement / sd;
    (improvement * normal_cdf(z) + sd * normal_pdf(z)).max(T::zero())
}

/// EI averaged over the hyperparameter samples.
pub fn mcmc_ei<T: Scalar, K: Kernel<T>>(hypers: &HyperSampleSet<T, K>, x: &[T], incumbent: T) -> T {
    let preds = hypers.predict_all(x);
    preds.iter().map(|p| expected_improvement(p, incumbent)).sum::<T>() / T::lit(preds.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GreedyConfig {
    pub candidate_count: usize,
    /// Candidates refined by the local search.
    pub refine_top: usize,
    /// Evaluation budget of each local search.
    pub refine_evals: usize,
    /// Initial simplex edge.
    pub refine_step: f64,
}

impl GreedyConfig {
    pub fn for_dim(dim: usize) -> Self {
        Self { candidate_count: 500 * dim, refine_top: 5, refine_evals: 200, refine_step: 0.05 }
    }
}

/// Boltzmann (softmax) meta-policy over a discrete candidate set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetaPolicyConfig {
    pub beta: f64,
    pub candidate_count: usize,
    /// Min-max normalize acquisition values to `[0,1]` before the softmax.
    pub normalize: bool,
}

impl MetaPolicyConfig {
    pub const DEFAULT_BETA: f64 = 10.0;

    pub fn for_dim(dim: usize) -> Self {
        Self { beta: Self::DEFAULT_BETA, candidate_count: 500 * dim, normalize: true }
    }
}

fn candidates<T: Scalar, R: Rng + ?Sized>(dim: usize, n: usize, rng: &mut R) -> Vec<Vec<T>> {
    Sobol::scrambled(dim, rng)
        .take_points(n)
        .into_iter()
        .map(|p| p.into_iter().map(T::lit).collect())
        .collect()
}

fn clamp_unit<T: Scalar>(x: &mut [T]) {
    for v in x {
        *v = v.max(T::zero()).min(T::one());
    }
}

/// Bounded Nelder-Mead *maximization*; vertices are clamped to the unit cube.
/// Returns the best vertex and its value.
pub fn nelder_mead<T: Scalar, F: FnMut(&[T]) -> T>(mut f: F, x0: &[T], step: T, max_evals: usize) -> (Vec<T>, T) {
    let n = x0.len();
    let neg = |f: &mut F, x: &[T]| {
        let v = f(x);
        if v.is_nan() {
            T::infinity()
        } else {
            -v
        }
    };
    let mut simplex: Vec<(Vec<T>, T)> = Vec::with_capacity(n + 1);
    let mut evals = 0;
    simplex.push((x0.to_vec(), neg(&mut f, x0)));
    evals += 1;
    for i in 0..n {
        let mut x = x0.to_vec();
        x[i] = if x[i] + step <= T::one() { x[i] + step } else { x[i] - step };
        clamp_unit(&mut x);
        let v = neg(&mut f, &x);
        simplex.push((x, v));
        evals += 1;
    }
    let half = T::lit(0.5);
    let two = T::lit(2.0);
    let towards = |a: &[T], b: &[T], t: T| -> Vec<T> {
        let mut p: Vec<T> = a.iter().zip(b).map(|(&a, &b)| a + t * (b - a)).collect();
        clamp_unit(&mut p);
        p
    };
    while evals < max_evals {
        simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal));
        let mut centroid = vec![T::zero(); n];
        for (x, _) in &simplex[..n] {
            for (c, &v) in centroid.iter_mut().zip(x) {
                *c += v;
            }
        }
        for c in &mut centroid {
            *c /= T::lit(n as f64);
        }
        let worst = simplex[n].clone();
        let reflected = towards(&centroid, &worst.0, -T::one());
        let fr = neg(&mut f, &reflected);
        evals += 1;
        if fr < simplex[0].1 {
            if evals >= max_evals {
                simplex[n] = (reflected, fr);
                break;
            }
            let expanded = towards(&centroid, &worst.0, -two);
            let fe = neg(&mut f, &expanded);
            evals += 1;
            simplex[n] = if fe < fr { (expanded, fe) } else { (reflected, fr) };
        } else if fr < simplex[n - 1].1 {
            simplex[n] = (reflected, fr);
        } else {
            if evals >= max_evals {
                break;
            }
            let contracted = if fr < worst.1 { towards(&centroid, &reflected, half) } else { towards(&centroid, &worst.0, half) };
            let fc = neg(&mut f, &contracted);
            evals += 1;
            if fc < worst.1.min(fr) {
                simplex[n] = (contracted, fc);
            } else {
                let best = simplex[0].0.clone();
                for v in simplex.iter_mut().skip(1) {
                    if evals >= max_evals {
                        break;
                    }
                    let p = towards(&best, &v.0, half);
                    let fp = neg(&mut f, &p);
                    evals += 1;
                    *v = (p, fp);
                }
            }
        }
    }
    let (x, v) = simplex
        .into_iter()
        .reduce(|a, b| if b.1 < a.1 { b } else { a })
        .expect("simplex is non-empty");
    (x, -v)
}

/// Greedy selection: best Sobol candidates refined by local search.
/// Ties resolve to the earliest candidate.
pub fn select_greedy<T, F, R>(mut acq: F, dim: usize, cfg: &GreedyConfig, rng: &mut R) -> Vec<T>
where
    T: Scalar,
    F: FnMut(&[T]) -> T,
    R: Rng + ?Sized,
{
    let cands = candidates::<T, R>(dim, cfg.candidate_count.max(1), rng);
    let mut scored: Vec<(usize, T)> = cands
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let v = acq(c);
            (i, if v.is_nan() { T::neg_infinity() } else { v })
        })
        .collect();
    // stable: equal values keep index order
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(std::cmp::Ordering::Equal));
    let (first, first_val) = scored[0];
    let mut best = (cands[first].clone(), first_val);
    for &(i, _) in scored.iter().take(cfg.refine_top) {
        let (x, v) = nelder_mead(&mut acq, &cands[i], T::lit(cfg.refine_step), cfg.refine_evals);
        if v > best.1 {
            best = (x, v);
        }
    }
    best.0
}

/// Draws an index with probability `∝ exp(β·v_i)`, after optional min-max
/// normalization. Equal values give a uniform draw.
pub fn boltzmann_index<R: Rng + ?Sized>(values: &[f64], beta: f64, normalize: bool, rng: &mut R) -> usize {
    assert!(!values.is_empty());
    let (lo, hi) = values
        .iter()
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        return rng.random_range(0..values.len());
    }
    let logits: Vec<f64> = values
        .iter()
        .map(|&v| {
            if !v.is_finite() {
                f64::NEG_INFINITY
            } else if hi <= lo {
                0.0
            } else if normalize {
                beta * (v - lo) / (hi - lo)
            } else {
                beta * v
            }
        })
        .collect();
    let top = logits.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let weights: Vec<f64> = logits.iter().map(|&l| (l - top).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, &w) in weights.iter().enumerate() {
        if u < w {
            return i;
        }
        u -= w;
    }
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(0)
}

/// Stochastic selection: a Boltzmann draw over Sobol candidates.
pub fn select_stochastic<T, F, R>(mut acq: F, dim: usize, cfg: &MetaPolicyConfig, rng: &mut R) -> Vec<T>
where
    T: Scalar,
    F: FnMut(&[T]) -> T,
    R: Rng + ?Sized,
{
    let cands = candidates::<T, R>(dim, cfg.candidate_count.max(2), rng);
    let values: Vec<f64> = cands.iter().map(|c| acq(c).as_f64()).collect();
    let i = boltzmann_index(&values, cfg.beta, cfg.normalize, rng);
    cands[i].clone()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn pred(mean: f64, sd: f64) -> Prediction<f64> {
        Prediction { mean, variance: sd * sd }
    }

    #[test]
    fn ei_at_zero_improvement() {
        let v = expected_improvement(&pred(0.3, 1.0), 0.3);
        assert!((v - 0.398_942_280_401_432_7).abs() < 1e-12);
    }

    #[test]
    fn ei_tail_and_zero_variance() {
        assert!(expected_improvement(&pred(-10.0, 1.0), 0.0) < 1e-20);
        assert!(expected_improvement(&pred(-10.0, 1.0), 0.0) >= 0.0);
        assert_eq!(expected_improvement(&pred(2.0, 0.0), 0.5), 1.5);
        assert_eq!(expected_improvement(&pred(0.0, 0.0), 0.5), 0.0);
    }

    #[test]
    fn ei_increases_with_uncertainty_below_incumbent() {
        let mut prev = 0.0;
        for k in 1..50 {
            let v = expected_improvement(&pred(-0.5, 0.05 * k as f64), 0.0);
            assert!(v > prev);
            prev = v;
        }
    }

    #[test]
    fn nelder_mead_finds_quadratic_peak() {
        let (x, v) = nelder_mead(|x: &[f64]| -(x[0] - 0.3).powi(2) - 2.0 * (x[1] - 0.8).powi(2), &[0.5, 0.5], 0.1, 400);
        assert!((x[0] - 0.3).abs() < 1e-3 && (x[1] - 0.8).abs() < 1e-3);
        assert!(v > -1e-6);
    }

    #[test]
    fn nelder_mead_stays_in_domain() {
        let (x, _) = nelder_mead(|x: &[f64]| x[0] + x[1], &[0.9, 0.9], 0.2, 100);
        assert!(x.iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert!(x[0] > 0.99 && x[1] > 0.99);
    }

    #[test]
    fn greedy_finds_known_optimum() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = select_greedy(|x: &[f64]| -(x[0] - 0.5).powi(2), 1, &GreedyConfig::for_dim(1), &mut rng);
        assert!((x[0] - 0.5).abs() < 1e-3);
    }

    #[test]
    fn greedy_constant_returns_first_candidate() {
        let cfg = GreedyConfig::for_dim(2);
        let x = select_greedy(|_x: &[f64]| 1.0, 2, &cfg, &mut ChaCha8Rng::seed_from_u64(8));
        let first = Sobol::scrambled(2, &mut ChaCha8Rng::seed_from_u64(8)).next_point();
        assert_eq!(x, first);
    }

    #[test]
    fn selectors_are_seeded() {
        let acq = |x: &[f64]| (7.0 * x[0]).sin() * (3.0 * x[1]).cos();
        let cfg = MetaPolicyConfig { beta: 5.0, ..MetaPolicyConfig::for_dim(2) };
        let a = select_stochastic(acq, 2, &cfg, &mut ChaCha8Rng::seed_from_u64(3));
        let b = select_stochastic(acq, 2, &cfg, &mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!(a, b);
        let g = GreedyConfig::for_dim(2);
        assert_eq!(
            select_greedy(acq, 2, &g, &mut ChaCha8Rng::seed_from_u64(3)),
            select_greedy(acq, 2, &g, &mut ChaCha8Rng::seed_from_u64(3))
        );
    }

    #[test]
    fn two_equal_candidates_split_evenly() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 10_000;
        let hits = (0..n).filter(|_| boltzmann_index(&[0.2, 0.2], 3.0, true, &mut rng) == 0).count();
        assert!((hits as f64 / n as f64 - 0.5).abs() < 0.02);
    }

    #[test]
    fn non_finite_values_get_no_mass() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..1000 {
            assert_ne!(boltzmann_index(&[0.0, f64::NAN, 1.0], 50.0, true, &mut rng), 1);
        }
    }
}
