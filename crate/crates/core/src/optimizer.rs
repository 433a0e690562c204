//! The outer optimization loop: Sobol initialization, model refits, query selection and
//! incumbent tracking.
//!
//! [`Optimizer`] is a stepper so the same state machine drives single-node runs and
//! cluster nodes; [`run`] is the plain loop around it.

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::acquisition::{mcmc_ei, select_greedy, select_stochastic, GreedyConfig, Incumbent, MetaPolicyConfig};
use crate::error::{Result, UboError};
use crate::gp::Provenance;
use crate::hyper::{HyperConfig, HyperSampler, SpartanPrior};
use crate::sobol::Sobol;
use crate::unscented::{unscented_incumbent, UtConfig};
use crate::{Dataset, SpartanSampleSet, UnscentedTransform};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "BO")]
    Bo,
    #[serde(rename = "UBO")]
    Ubo,
    #[serde(rename = "UBO-SP")]
    UboSp,
}

impl Method {
    /// Whether the acquisition and the incumbent are integrated over input noise.
    pub fn unscented(self) -> bool {
        matches!(self, Method::Ubo | Method::UboSp)
    }

    pub fn stochastic(self) -> bool {
        matches!(self, Method::UboSp)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Bo => "BO",
            Method::Ubo => "UBO",
            Method::UboSp => "UBO-SP",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = UboError;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "BO" => Ok(Method::Bo),
            "UBO" => Ok(Method::Ubo),
            "UBO-SP" | "UBOSP" => Ok(Method::UboSp),
            _ => Err(UboError::InvalidConfig(format!("unknown method `{s}`"))),
        }
    }
}

/// Which points of the Sobol design this optimizer evaluates: indices
/// `offset, offset+stride, …` of a sequence scrambled with `scramble_seed`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InitDesign {
    pub offset: usize,
    pub stride: usize,
    /// `None` derives the scramble from the optimizer seed.
    pub scramble_seed: Option<u64>,
}

impl Default for InitDesign {
    fn default() -> Self {
        Self { offset: 0, stride: 1, scramble_seed: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UtSettings {
    pub alpha: f64,
    pub kappa: f64,
    /// Standard deviation of the isotropic input noise.
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub dim: usize,
    pub method: Method,
    /// Number of selected (non-initial) evaluations.
    pub budget: usize,
    pub init_samples: usize,
    pub init: InitDesign,
    pub ut: UtSettings,
    pub meta: MetaPolicyConfig,
    pub greedy: GreedyConfig,
    pub hyper: HyperConfig,
    pub local_kernels: usize,
    pub seed: u64,
}

impl OptimizerConfig {
    pub fn new(dim: usize, method: Method, seed: u64) -> Self {
        Self {
            dim,
            method,
            budget: 40,
            init_samples: 5,
            init: InitDesign::default(),
            ut: UtSettings { alpha: 1.0, kappa: 0.0, sigma: 0.02 },
            meta: MetaPolicyConfig::for_dim(dim),
            greedy: GreedyConfig::for_dim(dim),
            hyper: HyperConfig::default(),
            local_kernels: 1,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.dim > crate::sobol::MAX_DIM {
            return Err(UboError::InvalidConfig(format!("dimension must be in 1..={}", crate::sobol::MAX_DIM)));
        }
        if self.init_samples == 0 {
            return Err(UboError::InvalidConfig("need at least one initial sample".into()));
        }
        if self.init.stride == 0 {
            return Err(UboError::InvalidConfig("init stride must be positive".into()));
        }
        if self.method.stochastic() && !(self.meta.beta > 0.0) {
            return Err(UboError::InvalidConfig("meta-policy beta must be positive".into()));
        }
        if self.meta.candidate_count < 2 {
            return Err(UboError::InvalidConfig("meta-policy needs at least two candidates".into()));
        }
        if self.local_kernels == 0 {
            return Err(UboError::InvalidConfig("Spartan kernel needs a local kernel".into()));
        }
        if !(self.ut.sigma >= 0.0) {
            return Err(UboError::InvalidConfig("input noise must be non-negative".into()));
        }
        self.ut_config().validate()
    }

    pub fn ut_config(&self) -> UtConfig<f64> {
        UtConfig { alpha: self.ut.alpha, kappa: self.ut.kappa, ..UtConfig::isotropic(self.dim, self.ut.sigma) }
    }
}

/// One objective evaluation and the incumbent reported after it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    /// 1-based count of local evaluations (including failed ones).
    pub eval_index: usize,
    /// 0 for initial points, otherwise the selection iteration.
    pub iter: usize,
    pub x: Vec<f64>,
    /// `NaN` marks a failed evaluation.
    pub y: f64,
    pub inc_x: Vec<f64>,
    pub inc_value: f64,
    pub wall_ms: f64,
}

impl TraceRecord {
    pub fn failed(&self) -> bool {
        !self.y.is_finite()
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Trace {
    pub dim: usize,
    pub records: Vec<TraceRecord>,
}

impl Trace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last_incumbent(&self) -> Option<(&[f64], f64)> {
        self.records.last().map(|r| (r.inc_x.as_slice(), r.inc_value))
    }

    /// Bitwise equality of everything except wall-clock timings.
    pub fn same_run(&self, other: &Trace) -> bool {
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        self.dim == other.dim
            && self.records.len() == other.records.len()
            && self.records.iter().zip(&other.records).all(|(a, b)| {
                a.eval_index == b.eval_index
                    && a.iter == b.iter
                    && bits(&a.x) == bits(&b.x)
                    && a.y.to_bits() == b.y.to_bits()
                    && bits(&a.inc_x) == bits(&b.inc_x)
                    && a.inc_value.to_bits() == b.inc_value.to_bits()
            })
    }

    pub fn csv_header(dim: usize) -> Vec<String> {
        let mut h = vec!["eval_index".to_string(), "iter".to_string()];
        h.extend((0..dim).map(|i| format!("x_{i}")));
        h.push("y".into());
        h.extend((0..dim).map(|i| format!("inc_x_{i}")));
        h.push("inc_value".into());
        h.push("wall_ms".into());
        h
    }

    /// Writes `eval_index,iter,x_0..,y,inc_x_0..,inc_value,wall_ms`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(Self::csv_header(self.dim))?;
        for r in &self.records {
            let mut row = vec![r.eval_index.to_string(), r.iter.to_string()];
            row.extend(r.x.iter().map(|v| v.to_string()));
            row.push(r.y.to_string());
            row.extend(r.inc_x.iter().map(|v| v.to_string()));
            row.push(r.inc_value.to_string());
            row.push(format!("{:.3}", r.wall_ms));
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv<R: std::io::Read>(r: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let header = rdr.headers()?.clone();
        let dim = header.iter().filter(|h| h.starts_with("x_")).count();
        let mut records = Vec::new();
        for row in rdr.records() {
            let row = row?;
            let num = |i: usize| -> Result<f64> {
                row.get(i).and_then(|s| s.parse().ok()).ok_or_else(|| UboError::InvalidConfig(format!("bad trace field {i}")))
            };
            let x = (0..dim).map(|i| num(2 + i)).collect::<Result<Vec<_>>>()?;
            let inc_x = (0..dim).map(|i| num(3 + dim + i)).collect::<Result<Vec<_>>>()?;
            records.push(TraceRecord {
                eval_index: num(0)? as usize,
                iter: num(1)? as usize,
                x,
                y: num(2 + dim)?,
                inc_x,
                inc_value: num(3 + 2 * dim)?,
                wall_ms: num(4 + 2 * dim)?,
            });
        }
        Ok(Self { dim, records })
    }
}

/// A query handed out by [`Optimizer::next_query`].
#[derive(Debug, Clone, PartialEq)]
pub struct Query {
    pub x: Vec<f64>,
    pub provenance: Provenance,
    pub iter: usize,
}

/// Single-owner optimizer state.
pub struct Optimizer {
    cfg: OptimizerConfig,
    dataset: Dataset,
    sampler: HyperSampler<f64, SpartanPrior>,
    ut: UnscentedTransform,
    rng: ChaCha8Rng,
    init_design: Sobol,
    init_issued: usize,
    init_redraws: usize,
    selected: usize,
    outstanding: Option<Query>,
    model: Option<SpartanSampleSet>,
    model_fresh: bool,
    incumbent: Option<Incumbent<f64>>,
    trace: Trace,
    clock: Instant,
}

impl fmt::Debug for Optimizer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Optimizer")
            .field("method", &self.cfg.method)
            .field("observations", &self.dataset.len())
            .field("selected", &self.selected)
            .finish()
    }
}

impl Optimizer {
    pub fn new(cfg: OptimizerConfig) -> Result<Self> {
        cfg.validate()?;
        let scramble = cfg.init.scramble_seed.unwrap_or(cfg.seed ^ 0x5eed_0f_50b0_1u64);
        let mut init_design = Sobol::scrambled(cfg.dim, &mut ChaCha8Rng::seed_from_u64(scramble));
        init_design.skip_points(cfg.init.offset);
        let prior = SpartanPrior { n_local: cfg.local_kernels, ..SpartanPrior::new(cfg.dim) };
        Ok(Self {
            dataset: Dataset::new(cfg.dim),
            sampler: HyperSampler::new(prior, cfg.hyper),
            ut: UnscentedTransform::new(&cfg.ut_config())?,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            init_design,
            init_issued: 0,
            init_redraws: 0,
            selected: 0,
            outstanding: None,
            model: None,
            model_fresh: false,
            incumbent: None,
            trace: Trace { dim: cfg.dim, records: Vec::new() },
            clock: Instant::now(),
            cfg,
        })
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.cfg
    }

    pub fn dataset(&self) -> &Dataset {
        &self.dataset
    }

    pub fn trace(&self) -> &Trace {
        &self.trace
    }

    pub fn into_trace(self) -> Trace {
        self.trace
    }

    pub fn incumbent(&self) -> Option<&Incumbent<f64>> {
        self.incumbent.as_ref()
    }

    pub fn model(&self) -> Option<&SpartanSampleSet> {
        self.model.as_ref()
    }

    pub fn selected_count(&self) -> usize {
        self.selected
    }

    fn init_remaining(&self) -> usize {
        self.cfg.init_samples - self.init_issued
    }

    /// True once every initial point has been issued and the selection budget is used up.
    pub fn is_done(&self) -> bool {
        self.outstanding.is_none() && self.init_remaining() == 0 && self.selected >= self.cfg.budget
    }

    /// Skips this optimizer's own initial design (a node joining with history).
    pub fn skip_init(&mut self) {
        self.init_issued = self.cfg.init_samples;
    }

    fn next_init_point(&mut self) -> Vec<f64> {
        let p = self.init_design.next_point();
        self.init_design.skip_points(self.cfg.init.stride - 1);
        p
    }

    /// The next point to evaluate, or `None` when the budget is spent.
    pub fn next_query(&mut self) -> Result<Option<Query>> {
        if let Some(q) = &self.outstanding {
            return Ok(Some(q.clone()));
        }
        let q = if self.init_remaining() > 0 {
            self.init_issued += 1;
            Query { x: self.next_init_point(), provenance: Provenance::Init, iter: 0 }
        } else if self.selected < self.cfg.budget {
            let x = self.select()?;
            Query { x, provenance: Provenance::Selected, iter: self.selected + 1 }
        } else {
            return Ok(None);
        };
        self.outstanding = Some(q.clone());
        Ok(Some(q))
    }

    /// Replaces the outstanding query after a failed evaluation.
    pub fn redraw(&mut self) -> Result<Query> {
        let old = self.outstanding.take().ok_or_else(|| UboError::InvalidConfig("no outstanding query".into()))?;
        let x = match old.provenance {
            Provenance::Init => {
                self.init_redraws += 1;
                self.next_init_point()
            }
            _ => self.select()?,
        };
        let q = Query { x, ..old };
        self.outstanding = Some(q.clone());
        Ok(q)
    }

    /// Records the observation for the outstanding query.
    pub fn observe(&mut self, y: f64) -> Result<()> {
        let q = self.outstanding.take().ok_or_else(|| UboError::InvalidConfig("no outstanding query".into()))?;
        if !y.is_finite() {
            self.push_record(&q, f64::NAN);
            self.outstanding = Some(q);
            return Err(UboError::NonFinite("objective value"));
        }
        self.dataset.push(q.x.clone(), y, q.provenance)?;
        if q.provenance == Provenance::Selected {
            self.selected += 1;
        }
        self.model_fresh = false;
        self.update_plain_incumbent(&q.x, y);
        self.push_record(&q, y);
        Ok(())
    }

    /// Adds an observation made elsewhere; it does not count toward the local budget.
    pub fn ingest(&mut self, x: Vec<f64>, y: f64) -> Result<()> {
        self.dataset.push(x.clone(), y, Provenance::ReceivedRemote)?;
        self.model_fresh = false;
        self.update_plain_incumbent(&x, y);
        Ok(())
    }

    fn update_plain_incumbent(&mut self, x: &[f64], y: f64) {
        // once UBO has a model its incumbent only changes on refit
        if self.cfg.method.unscented() && self.model.is_some() {
            return;
        }
        if self.incumbent.as_ref().is_none_or(|inc| y > inc.value) {
            self.incumbent = Some(Incumbent { value: y, location: x.to_vec() });
        }
    }

    fn push_record(&mut self, q: &Query, y: f64) {
        let (inc_x, inc_value) = match &self.incumbent {
            Some(inc) => (inc.location.clone(), inc.value),
            None => (vec![f64::NAN; self.cfg.dim], f64::NAN),
        };
        self.trace.records.push(TraceRecord {
            eval_index: self.trace.records.len() + 1,
            iter: q.iter,
            x: q.x.clone(),
            y,
            inc_x,
            inc_value,
            wall_ms: self.clock.elapsed().as_secs_f64() * 1e3,
        });
    }

    /// Refits the hyperparameter samples if the dataset changed and refreshes the
    /// incumbent, also on the latest trace record.
    pub fn refresh(&mut self) -> Result<()> {
        if self.model_fresh || self.dataset.is_empty() {
            return Ok(());
        }
        let set = self.sampler.resample(&self.dataset, &mut self.rng)?;
        self.model = Some(set);
        self.model_fresh = true;
        let inc = self.compute_incumbent()?;
        if let Some(last) = self.trace.records.iter_mut().rev().find(|r| !r.failed()) {
            last.inc_x = inc.location.clone();
            last.inc_value = inc.value;
        }
        self.incumbent = Some(inc);
        Ok(())
    }

    fn compute_incumbent(&self) -> Result<Incumbent<f64>> {
        let i = self.dataset.argmax().ok_or(UboError::EmptyDataset)?;
        match (&self.model, self.cfg.method.unscented()) {
            (Some(model), true) => {
                let (j, g) = unscented_incumbent(|x| model.mean(x), self.dataset.points(), &self.ut)?;
                Ok(Incumbent { value: g, location: self.dataset.points()[j].clone() })
            }
            _ => Ok(Incumbent { value: self.dataset.values()[i], location: self.dataset.points()[i].clone() }),
        }
    }

    /// Final refit so the last record's incumbent reflects every observation.
    pub fn finalize(&mut self) -> Result<Option<Incumbent<f64>>> {
        if self.cfg.method.unscented() {
            self.refresh()?;
        }
        Ok(self.incumbent.clone())
    }

    fn select(&mut self) -> Result<Vec<f64>> {
        self.refresh()?;
        let model = self.model.as_ref().expect("refresh fits a model");
        let rho = self.incumbent.as_ref().map(|i| i.value).ok_or(UboError::EmptyDataset)?;
        let dim = self.cfg.dim;
        let ut = &self.ut;
        let x = match (self.cfg.method.unscented(), self.cfg.method.stochastic()) {
            (false, _) => {
                let acq = |x: &[f64]| mcmc_ei(model, x, rho);
                select_greedy(acq, dim, &self.cfg.greedy, &mut self.rng)
            }
            (true, stochastic) => {
                let acq = |x: &[f64]| ut.expectation(|p| mcmc_ei(model, p, rho), x).unwrap_or(f64::NAN);
                if stochastic {
                    select_stochastic(acq, dim, &self.cfg.meta, &mut self.rng)
                } else {
                    select_greedy(acq, dim, &self.cfg.greedy, &mut self.rng)
                }
            }
        };
        Ok(x)
    }
}

/// Error of [`run`], carrying the trace recorded up to the failure.
#[derive(Debug)]
pub struct RunError {
    pub error: UboError,
    pub partial: Trace,
}

impl fmt::Display for RunError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} (after {} evaluations)", self.error, self.partial.len())
    }
}

impl std::error::Error for RunError {}

/// Runs the full loop: `init_samples` Sobol points, then `budget` selected queries.
///
/// A non-finite objective value is recorded as a failure and the query is re-drawn once;
/// a second consecutive failure aborts the run.
pub fn run<F: FnMut(&[f64]) -> f64>(mut objective: F, cfg: OptimizerConfig) -> std::result::Result<Trace, RunError> {
    let mut opt = match Optimizer::new(cfg) {
        Ok(o) => o,
        Err(error) => return Err(RunError { error, partial: Trace::default() }),
    };
    match drive(&mut opt, &mut objective) {
        Ok(()) => Ok(opt.into_trace()),
        Err(error) => Err(RunError { error, partial: opt.into_trace() }),
    }
}

fn drive<F: FnMut(&[f64]) -> f64>(opt: &mut Optimizer, objective: &mut F) -> Result<()> {
    while let Some(q) = opt.next_query()? {
        evaluate_with_redraw(opt, objective, q)?;
    }
    opt.finalize()?;
    Ok(())
}

/// Evaluates `q`, re-drawing once on a non-finite value.
pub fn evaluate_with_redraw<F: FnMut(&[f64]) -> f64>(opt: &mut Optimizer, objective: &mut F, q: Query) -> Result<f64> {
    let y = objective(&q.x);
    if opt.observe(y).is_ok() {
        return Ok(y);
    }
    let q = opt.redraw()?;
    let y = objective(&q.x);
    match opt.observe(y) {
        Ok(()) => Ok(y),
        Err(_) => Err(UboError::ObjectiveFailed { eval_index: opt.trace().len() }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick(method: Method, seed: u64) -> OptimizerConfig {
        let mut cfg = OptimizerConfig::new(1, method, seed);
        cfg.budget = 3;
        cfg.init_samples = 4;
        cfg.hyper = HyperConfig { n_samples: 2, burn_in: 5, warm_burn_in: 2, ..HyperConfig::default() };
        cfg.greedy = GreedyConfig { candidate_count: 50, refine_top: 2, refine_evals: 30, refine_step: 0.05 };
        cfg.meta.candidate_count = 50;
        cfg
    }

    fn bowl(x: &[f64]) -> f64 {
        -(x[0] - 0.3).powi(2)
    }

    #[test]
    fn method_names_round_trip() {
        for m in [Method::Bo, Method::Ubo, Method::UboSp] {
            assert_eq!(m.as_str().parse::<Method>().unwrap(), m);
            assert_eq!(serde_json::to_string(&m).unwrap(), format!("\"{m}\""));
        }
        assert!("UCB".parse::<Method>().is_err());
    }

    #[test]
    fn zero_budget_evaluates_only_the_design() {
        let mut cfg = quick(Method::Bo, 1);
        cfg.budget = 0;
        let t = run(bowl, cfg).unwrap();
        assert_eq!(t.len(), 4);
        assert!(t.records.iter().all(|r| r.iter == 0));
        let best = t.records.iter().map(|r| r.y).fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(t.last_incumbent().unwrap().1, best);
    }

    #[test]
    fn every_method_spends_exactly_its_budget() {
        for m in [Method::Bo, Method::Ubo, Method::UboSp] {
            let t = run(bowl, quick(m, 2)).unwrap();
            assert_eq!(t.len(), 7, "{m}");
            assert!(t.records.iter().flat_map(|r| r.x.iter()).all(|v| (0.0..=1.0).contains(v)));
            let iters: Vec<usize> = t.records.iter().map(|r| r.iter).collect();
            assert_eq!(iters, vec![0, 0, 0, 0, 1, 2, 3]);
        }
    }

    #[test]
    fn unscented_incumbent_is_an_observed_point() {
        let t = run(bowl, quick(Method::Ubo, 3)).unwrap();
        for r in &t.records {
            assert!(t.records.iter().any(|s| s.x == r.inc_x));
        }
    }

    #[test]
    fn non_finite_value_is_redrawn_once() {
        let mut calls = 0;
        let t = run(
            |x: &[f64]| {
                calls += 1;
                if calls == 2 {
                    f64::NAN
                } else {
                    bowl(x)
                }
            },
            quick(Method::Bo, 4),
        )
        .unwrap();
        assert_eq!(t.len(), 8);
        assert!(t.records[1].failed());
        assert_eq!(t.records.iter().filter(|r| !r.failed()).count(), 7);
    }

    #[test]
    fn repeated_failure_aborts_with_partial_trace() {
        let mut calls = 0;
        let err = run(
            |x: &[f64]| {
                calls += 1;
                if calls > 5 {
                    f64::INFINITY
                } else {
                    bowl(x)
                }
            },
            quick(Method::Bo, 4),
        )
        .unwrap_err();
        assert!(matches!(err.error, UboError::ObjectiveFailed { .. }));
        assert_eq!(err.partial.records.iter().filter(|r| !r.failed()).count(), 5);
    }

    #[test]
    fn trace_csv_round_trip() {
        let t = run(bowl, quick(Method::UboSp, 5)).unwrap();
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("eval_index,iter,x_0,y,inc_x_0,inc_value,wall_ms\n"));
        let back = Trace::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back.len(), t.len());
        assert_eq!(back.records[3].x, t.records[3].x);
    }

    #[test]
    fn rejects_bad_configs() {
        let mut cfg = quick(Method::UboSp, 1);
        cfg.meta.beta = 0.0;
        assert!(Optimizer::new(cfg).is_err());
        let mut cfg = quick(Method::Bo, 1);
        cfg.init_samples = 0;
        assert!(Optimizer::new(cfg).is_err());
    }
}
