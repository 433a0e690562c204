//! Experiment runner: repetitions with common random numbers, integrated-outcome scoring
//! of incumbents, and per-evaluation mean curves with normal-approximation 95% intervals.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distributed::{run_cluster, BudgetMode, ClusterConfig, NetworkModel};
use crate::error::{Result, UboError};
use crate::hyper::HyperConfig;
use crate::optimizer::{run, Method, OptimizerConfig, Trace, UtSettings};
use crate::problems::{clamp_to_domain, noisy_query, Problem};

const NOISE_SALT: u64 = 0x6e6f_6973_655f_7273;
const SCORE_SALT: u64 = 0x7363_6f72_655f_7273;

/// Methods compared by the harness; `UBO-SPx4` is UBO-SP on a simulated cluster.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MethodSpec {
    #[serde(rename = "BO")]
    Bo,
    #[serde(rename = "UBO")]
    Ubo,
    #[serde(rename = "UBO-SP")]
    UboSp,
    #[serde(rename = "UBO-SPx4")]
    UboSpX4,
}

impl MethodSpec {
    pub const ALL: [MethodSpec; 4] = [MethodSpec::Bo, MethodSpec::Ubo, MethodSpec::UboSp, MethodSpec::UboSpX4];

    pub fn method(self) -> Method {
        match self {
            MethodSpec::Bo => Method::Bo,
            MethodSpec::Ubo => Method::Ubo,
            MethodSpec::UboSp | MethodSpec::UboSpX4 => Method::UboSp,
        }
    }

    pub fn nodes(self) -> usize {
        if self == MethodSpec::UboSpX4 {
            4
        } else {
            1
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            MethodSpec::Bo => "BO",
            MethodSpec::Ubo => "UBO",
            MethodSpec::UboSp => "UBO-SP",
            MethodSpec::UboSpX4 => "UBO-SPx4",
        }
    }
}

impl fmt::Display for MethodSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MethodSpec {
    type Err = UboError;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| UboError::InvalidConfig(format!("unknown method `{s}`")))
    }
}

fn default_n_mc() -> usize {
    1000
}

/// An experiment as read from JSON. Unset optional fields fall back to the problem preset
/// and the optimizer defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub problem: String,
    pub methods: Vec<MethodSpec>,
    pub repetitions: usize,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budget: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init_samples: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(default = "default_n_mc")]
    pub n_mc: usize,
    /// Boltzmann inverse temperature of UBO-SP.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    /// Sobol candidates per input dimension for both selectors.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub candidates_per_dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hyper: Option<HyperConfig>,
}

impl ExperimentSpec {
    pub fn new(problem: impl Into<String>, methods: Vec<MethodSpec>, repetitions: usize, seed: u64) -> Self {
        Self {
            problem: problem.into(),
            methods,
            repetitions,
            seed,
            output: None,
            budget: None,
            init_samples: None,
            sigma: None,
            n_mc: default_n_mc(),
            beta: None,
            candidates_per_dim: None,
            hyper: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.repetitions == 0 {
            return Err(UboError::InvalidConfig("repetitions must be at least 1".into()));
        }
        if self.methods.is_empty() {
            return Err(UboError::InvalidConfig("no methods given".into()));
        }
        if self.n_mc == 0 {
            return Err(UboError::InvalidConfig("n_mc must be positive".into()));
        }
        Problem::by_name(&self.problem).map(|_| ())
    }

    /// The problem with the spec's input noise applied.
    pub fn problem(&self) -> Result<Problem> {
        let p = Problem::by_name(&self.problem)?;
        Ok(match self.sigma {
            Some(s) => p.with_sigma(s),
            None => p,
        })
    }

    /// Seed shared by every method in repetition `rep`.
    pub fn rep_seed(&self, rep: usize) -> u64 {
        self.seed.wrapping_add(rep as u64)
    }

    pub fn optimizer_config(&self, problem: &Problem, method: Method, rep: usize) -> OptimizerConfig {
        let mut cfg = OptimizerConfig::new(problem.dim, method, self.rep_seed(rep));
        cfg.budget = self.budget.unwrap_or(problem.budget);
        cfg.init_samples = self.init_samples.unwrap_or(problem.init_samples);
        cfg.ut = UtSettings { sigma: problem.input_sigma, ..cfg.ut };
        if let Some(b) = self.beta {
            cfg.meta.beta = b;
        }
        if let Some(c) = self.candidates_per_dim {
            cfg.meta.candidate_count = c * problem.dim;
            cfg.greedy.candidate_count = c * problem.dim;
        }
        if let Some(h) = self.hyper {
            cfg.hyper = h;
        }
        cfg
    }
}

/// Objective-noise stream of repetition `rep_seed`, node `node`; shared by all methods.
pub fn noise_rng(rep_seed: u64, node: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(rep_seed ^ NOISE_SALT);
    rng.set_stream(node as u64);
    rng
}

/// Perturbation stream used to score the incumbent after evaluation `eval_index`.
pub fn scoring_rng(rep_seed: u64, eval_index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(rep_seed ^ SCORE_SALT);
    rng.set_stream(eval_index as u64);
    rng
}

/// Monte Carlo estimate of `E[f(x + ε)]`, `ε ~ N(0, σ²I)`, perturbed inputs clamped.
pub fn integrated_outcome<R: Rng + ?Sized>(problem: &Problem, x: &[f64], n_mc: usize, rng: &mut R) -> f64 {
    if problem.input_sigma == 0.0 {
        return problem.eval(x);
    }
    let mut p = vec![0.0; x.len()];
    let mut sum = 0.0;
    for _ in 0..n_mc {
        for (pi, &xi) in p.iter_mut().zip(x) {
            let e: f64 = StandardNormal.sample(rng);
            *pi = xi + problem.input_sigma * e;
        }
        clamp_to_domain(&mut p);
        sum += problem.eval(&p);
    }
    sum / n_mc as f64
}

/// One (method, repetition) run.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub method: MethodSpec,
    pub rep: usize,
    pub trace: Trace,
    /// Integrated outcome of the incumbent after each trace record.
    pub scores: Vec<f64>,
    /// Set when the run aborted; `trace` is then partial.
    pub failure: Option<String>,
}

impl RunResult {
    pub fn final_score(&self) -> Option<f64> {
        self.scores.last().copied()
    }

    pub fn final_incumbent(&self) -> Option<&[f64]> {
        self.trace.records.last().map(|r| r.inc_x.as_slice())
    }
}

/// Runs one method for one repetition without scoring.
pub fn run_method(spec: &ExperimentSpec, problem: &Problem, method: MethodSpec, rep: usize) -> (Trace, Option<String>) {
    let cfg = spec.optimizer_config(problem, method.method(), rep);
    let rep_seed = spec.rep_seed(rep);
    if method.nodes() == 1 {
        let mut noise = noise_rng(rep_seed, 0);
        match run(|x: &[f64]| noisy_query(problem, x, &mut noise), cfg) {
            Ok(t) => (t, None),
            Err(e) => (e.partial.clone(), Some(e.error.to_string())),
        }
    } else {
        let cluster = ClusterConfig {
            n_nodes: method.nodes(),
            base: cfg,
            mode: BudgetMode::SplitTotal,
            network: NetworkModel { seed: rep_seed, ..NetworkModel::lossless() },
        };
        let mut streams: Vec<ChaCha8Rng> = (0..cluster.n_nodes).map(|k| noise_rng(rep_seed, k)).collect();
        match run_cluster(&cluster, |k, x| noisy_query(problem, x, &mut streams[k])) {
            Ok(res) => (res.global, None),
            Err(e) => (Trace { dim: problem.dim, records: Vec::new() }, Some(e.to_string())),
        }
    }
}

/// Scores the incumbent of every record with its per-index common perturbations.
pub fn score_trace(problem: &Problem, trace: &Trace, rep_seed: u64, n_mc: usize) -> Vec<f64> {
    trace
        .records
        .iter()
        .enumerate()
        .map(|(i, r)| integrated_outcome(problem, &r.inc_x, n_mc, &mut scoring_rng(rep_seed, i + 1)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: MethodSpec,
    pub eval_index: usize,
    pub mean: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

#[derive(Debug, Clone)]
pub struct ExperimentResults {
    pub spec: ExperimentSpec,
    /// Sorted by (method, repetition).
    pub runs: Vec<RunResult>,
    pub table: Vec<SummaryRow>,
}

/// Mean and 95% half-width `1.96·sd/√n` (sample standard deviation; zero for `n = 1`).
pub fn mean_ci(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, 1.96 * var.sqrt() / n.sqrt())
}

/// Standard error of the mean, using the sample standard deviation.
pub fn standard_error(values: &[f64]) -> f64 {
    mean_ci(values).1 / 1.96
}

/// Harness thread count: `UBO_THREADS` if set, else every core.
pub fn thread_count() -> usize {
    std::env::var("UBO_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentResults> {
    spec.validate()?;
    run_experiment_on(spec, &spec.problem()?)
}

/// Runs an experiment on an explicit problem; the spec's problem name is not consulted
/// but its `sigma` override still applies.
pub fn run_experiment_on(spec: &ExperimentSpec, problem: &Problem) -> Result<ExperimentResults> {
    spec.validate()?;
    let problem = spec.sigma.map_or_else(|| problem.clone(), |s| problem.clone().with_sigma(s));
    let mut jobs: Vec<(MethodSpec, usize)> =
        spec.methods.iter().flat_map(|&m| (0..spec.repetitions).map(move |r| (m, r))).collect();
    jobs.sort();
    jobs.dedup();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(thread_count())
        .build()
        .map_err(|e| UboError::InvalidConfig(e.to_string()))?;
    let runs: Vec<RunResult> = pool.install(|| {
        jobs.par_iter()
            .map(|&(method, rep)| {
                let (trace, failure) = run_method(spec, &problem, method, rep);
                let scores = score_trace(&problem, &trace, spec.rep_seed(rep), spec.n_mc);
                RunResult { method, rep, trace, scores, failure }
            })
            .collect()
    });
    let table = summarize(&runs);
    Ok(ExperimentResults { spec: spec.clone(), runs, table })
}

/// Per-method, per-evaluation mean curves over the runs that reached that evaluation.
pub fn summarize(runs: &[RunResult]) -> Vec<SummaryRow> {
    let mut methods: Vec<MethodSpec> = runs.iter().map(|r| r.method).collect();
    methods.sort();
    methods.dedup();
    let mut rows = Vec::new();
    for m in methods {
        let mine: Vec<&RunResult> = runs.iter().filter(|r| r.method == m).collect();
        let len = mine.iter().map(|r| r.scores.len()).max().unwrap_or(0);
        for t in 0..len {
            let vals: Vec<f64> = mine.iter().filter_map(|r| r.scores.get(t).copied()).collect();
            let (mean, half) = mean_ci(&vals);
            rows.push(SummaryRow { method: m, eval_index: t + 1, mean, ci_lo: mean - half, ci_hi: mean + half });
        }
    }
    rows
}

impl ExperimentResults {
    pub fn runs_of(&self, method: MethodSpec) -> impl Iterator<Item = &RunResult> {
        self.runs.iter().filter(move |r| r.method == method)
    }

    pub fn final_scores(&self, method: MethodSpec) -> Vec<f64> {
        self.runs_of(method).filter_map(RunResult::final_score).collect()
    }

    /// Columns `method,eval_index,mean,ci_lo,ci_hi`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["method", "eval_index", "mean", "ci_lo", "ci_hi"])?;
        for r in &self.table {
            out.write_record([
                r.method.to_string(),
                r.eval_index.to_string(),
                r.mean.to_string(),
                r.ci_lo.to_string(),
                r.ci_hi.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn summary_json(&self) -> serde_json::Value {
        let methods: Vec<serde_json::Value> = self
            .spec
            .methods
            .iter()
            .map(|&m| {
                let finals = self.final_scores(m);
                let (mean, half) = if finals.is_empty() { (f64::NAN, f64::NAN) } else { mean_ci(&finals) };
                let failures = self.runs_of(m).filter(|r| r.failure.is_some()).count();
                serde_json::json!({
                    "method": m,
                    "final_mean": mean,
                    "final_ci_half_width": half,
                    "repetitions": finals.len(),
                    "failures": failures,
                })
            })
            .collect();
        serde_json::json!({ "spec": self.spec, "methods": methods })
    }
}

/// Mean Euclidean distance over all pairs of points.
pub fn mean_pairwise_distance(points: &[Vec<f64>]) -> f64 {
    let n = points.len();
    if n < 2 {
        return 0.0;
    }
    let mut sum = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            sum += crate::linalg::squared_distance(&points[i], &points[j]).sqrt();
        }
    }
    sum / (n * (n - 1) / 2) as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_spec_names() {
        for m in MethodSpec::ALL {
            assert_eq!(m.as_str().parse::<MethodSpec>().unwrap(), m);
        }
        let spec: ExperimentSpec =
            serde_json::from_str(r#"{"problem":"gm2d","methods":["BO","UBO-SPx4"],"repetitions":2,"seed":1}"#).unwrap();
        assert_eq!(spec.methods, vec![MethodSpec::Bo, MethodSpec::UboSpX4]);
        assert_eq!(spec.n_mc, 1000);
    }

    #[test]
    fn unknown_spec_fields_are_rejected() {
        let r: std::result::Result<ExperimentSpec, _> =
            serde_json::from_str(r#"{"problem":"gm2d","methods":["BO"],"repetitions":2,"seed":1,"reps":3}"#);
        assert!(r.is_err());
    }

    #[test]
    fn zero_repetitions_is_invalid() {
        assert!(ExperimentSpec::new("gm2d", vec![MethodSpec::Bo], 0, 1).validate().is_err());
        assert!(ExperimentSpec::new("nope", vec![MethodSpec::Bo], 1, 1).validate().is_err());
    }

    #[test]
    fn mean_ci_matches_hand_computation() {
        let (m, h) = mean_ci(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        let sd = (5.0f64 / 3.0).sqrt();
        assert!((h - 1.96 * sd / 2.0).abs() < 1e-15);
        assert_eq!(mean_ci(&[7.0]), (7.0, 0.0));
    }

    #[test]
    fn pairwise_distance_of_unit_square_corners() {
        let pts = vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]];
        let expect = (4.0 + 2.0 * 2f64.sqrt()) / 6.0;
        assert!((mean_pairwise_distance(&pts) - expect).abs() < 1e-15);
    }
}
