//! In-process cluster on a seeded round scheduler.
//!
//! Round `r` starts at `r * step_ms`. Messages sent during a round leave at its end and
//! reach each peer after an independently drawn latency, unless dropped. A message is
//! merged at the first round starting at or after its arrival.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use super::{NodeState, QueryMessage};
use crate::error::{Result, UboError};
use crate::optimizer::{InitDesign, Method, OptimizerConfig, Trace};
use crate::Dataset;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Latency {
    Fixed { ms: f64 },
    Uniform { lo_ms: f64, hi_ms: f64 },
    Exponential { mean_ms: f64 },
}

impl Latency {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Latency::Fixed { ms } => ms,
            Latency::Uniform { lo_ms, hi_ms } if hi_ms > lo_ms => rng.random_range(lo_ms..hi_ms),
            Latency::Uniform { lo_ms, .. } => lo_ms,
            Latency::Exponential { mean_ms } if mean_ms > 0.0 => Exp::new(1.0 / mean_ms).expect("positive rate").sample(rng),
            Latency::Exponential { .. } => 0.0,
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            Latency::Fixed { ms } => ms >= 0.0,
            Latency::Uniform { lo_ms, hi_ms } => lo_ms >= 0.0 && hi_ms >= lo_ms,
            Latency::Exponential { mean_ms } => mean_ms >= 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(UboError::InvalidConfig(format!("bad latency model {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NetworkModel {
    pub latency: Latency,
    pub drop_rate: f64,
    /// Simulated duration of one optimizer iteration.
    pub step_ms: f64,
    pub seed: u64,
}

impl NetworkModel {
    pub fn lossless() -> Self {
        Self { latency: Latency::Fixed { ms: 0.0 }, drop_rate: 0.0, step_ms: 1.0, seed: 0 }
    }
}

impl Default for NetworkModel {
    fn default() -> Self {
        Self::lossless()
    }
}

/// How the base budget is shared among nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BudgetMode {
    /// Every node runs the full `p + T` evaluations with its own design.
    PerNode,
    /// Nodes split one shared initial design and the iteration budget, so the cluster
    /// spends `p + T` evaluations in total.
    SplitTotal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterConfig {
    pub n_nodes: usize,
    pub base: OptimizerConfig,
    pub mode: BudgetMode,
    pub network: NetworkModel,
}

impl ClusterConfig {
    pub fn new(n_nodes: usize, base: OptimizerConfig) -> Self {
        Self { n_nodes, base, mode: BudgetMode::PerNode, network: NetworkModel::lossless() }
    }

    pub fn node_id(k: usize) -> String {
        format!("node-{k}")
    }

    /// Optimizer configuration of node `k`; its seed is `base.seed + k`.
    pub fn node_config(&self, k: usize) -> OptimizerConfig {
        let mut cfg = self.base.clone();
        cfg.seed = self.base.seed.wrapping_add(k as u64);
        if self.mode == BudgetMode::SplitTotal {
            let n = self.n_nodes;
            let share = |total: usize| total / n + usize::from(k < total % n);
            cfg.init_samples = share(self.base.init_samples);
            cfg.budget = share(self.base.budget);
            cfg.init = InitDesign {
                offset: self.base.init.offset + k * self.base.init.stride,
                stride: self.base.init.stride * n,
                scramble_seed: Some(self.base.init.scramble_seed.unwrap_or(self.base.seed)),
            };
        }
        cfg
    }

    fn validate(&self) -> Result<()> {
        if self.n_nodes == 0 {
            return Err(UboError::InvalidConfig("cluster needs at least one node".into()));
        }
        if self.base.method != Method::UboSp {
            return Err(UboError::InvalidConfig("cluster nodes must use the stochastic UBO-SP policy".into()));
        }
        if self.mode == BudgetMode::SplitTotal && self.base.init_samples < self.n_nodes {
            return Err(UboError::InvalidConfig("every node needs at least one initial point".into()));
        }
        if !(0.0..=1.0).contains(&self.network.drop_rate) || !(self.network.step_ms > 0.0) {
            return Err(UboError::InvalidConfig("drop rate must be in [0, 1] and step_ms positive".into()));
        }
        self.network.latency.validate()
    }
}

#[derive(Debug, Clone)]
pub struct ClusterResult {
    pub traces: Vec<Trace>,
    pub datasets: Vec<Dataset>,
    /// Every sent message, in send order.
    pub log: Vec<QueryMessage>,
    /// Evaluations of all nodes in execution order, renumbered from 1.
    pub global: Trace,
    /// Queries selected by each node per round (selection rounds only).
    pub rounds: Vec<Vec<Vec<f64>>>,
    pub dropped: usize,
    pub rejected: usize,
}

impl ClusterResult {
    /// Fraction of rounds where two nodes queried points closer than `tol`.
    pub fn duplicate_round_fraction(&self, tol: f64) -> f64 {
        let contested = self.rounds.iter().filter(|r| r.len() > 1).count();
        if contested == 0 {
            return 0.0;
        }
        let dup = self
            .rounds
            .iter()
            .filter(|r| (0..r.len()).any(|i| (i + 1..r.len()).any(|j| crate::linalg::squared_distance(&r[i], &r[j]).sqrt() < tol)))
            .count();
        dup as f64 / contested as f64
    }
}

struct InFlight {
    to: usize,
    deliver_at: f64,
    order: usize,
    /// Wire encoding, so simulated delivery goes through the same codec as TCP.
    frame: std::sync::Arc<[u8]>,
}

/// Runs `n_nodes` UBO-SP nodes on a simulated network until every node has spent its
/// budget and all surviving messages are delivered.
///
/// `objective(node, x)` evaluates a query for a node, so each node can own a noise stream.
pub fn run_cluster<F>(cfg: &ClusterConfig, mut objective: F) -> Result<ClusterResult>
where
    F: FnMut(usize, &[f64]) -> f64,
{
    cfg.validate()?;
    let n = cfg.n_nodes;
    let mut nodes = (0..n)
        .map(|k| NodeState::new(ClusterConfig::node_id(k), cfg.node_config(k)))
        .collect::<Result<Vec<_>>>()?;
    let mut net_rng = ChaCha8Rng::seed_from_u64(cfg.network.seed);
    let mut in_flight: Vec<InFlight> = Vec::new();
    let mut log = Vec::new();
    let mut order: Vec<(usize, usize)> = Vec::new();
    let mut rounds = Vec::new();
    let mut dropped = 0;
    let mut sent = 0;
    let mut round = 0usize;

    loop {
        let now = round as f64 * cfg.network.step_ms;
        deliver_due(&mut in_flight, &mut nodes, now);
        if nodes.iter().all(NodeState::is_done) && in_flight.is_empty() {
            break;
        }
        let mut selected = Vec::new();
        let mut outgoing = Vec::new();
        for (k, node) in nodes.iter_mut().enumerate() {
            let before = node.trace().len();
            let chosen = node.optimizer().selected_count();
            if let Some(msg) = node.step(&mut |x: &[f64]| objective(k, x))? {
                if node.optimizer().selected_count() > chosen {
                    selected.push(msg.x.clone());
                }
                outgoing.push((k, msg));
            }
            for idx in before..node.trace().len() {
                order.push((k, idx));
            }
        }
        if !selected.is_empty() {
            rounds.push(selected);
        }
        let leave = now + cfg.network.step_ms;
        for (from, msg) in outgoing {
            let frame: std::sync::Arc<[u8]> = msg.encode().into();
            for to in (0..n).filter(|&t| t != from) {
                if net_rng.random::<f64>() < cfg.network.drop_rate {
                    dropped += 1;
                    continue;
                }
                let deliver_at = leave + cfg.network.latency.sample(&mut net_rng);
                in_flight.push(InFlight { to, deliver_at, order: sent, frame: frame.clone() });
                sent += 1;
            }
            log.push(msg);
        }
        round += 1;
    }

    for node in &mut nodes {
        node.finalize()?;
    }
    let rejected = nodes.iter().map(NodeState::rejected).sum();
    let datasets: Vec<Dataset> = nodes.iter().map(|nd| nd.dataset().clone()).collect();
    let traces: Vec<Trace> = nodes.into_iter().map(NodeState::into_trace).collect();
    let mut global = Trace { dim: cfg.base.dim, records: Vec::with_capacity(order.len()) };
    for (i, (k, idx)) in order.into_iter().enumerate() {
        let mut r = traces[k].records[idx].clone();
        r.eval_index = i + 1;
        global.records.push(r);
    }
    Ok(ClusterResult { traces, datasets, log, global, rounds, dropped, rejected })
}

fn deliver_due(in_flight: &mut Vec<InFlight>, nodes: &mut [NodeState], now: f64) {
    let (mut due, rest): (Vec<_>, Vec<_>) = std::mem::take(in_flight).into_iter().partition(|m| m.deliver_at <= now);
    *in_flight = rest;
    due.sort_by(|a, b| a.deliver_at.total_cmp(&b.deliver_at).then(a.order.cmp(&b.order)));
    for m in due {
        let msg = QueryMessage::decode(&m.frame).expect("frames built by encode decode");
        nodes[m.to].deliver(msg);
    }
}
