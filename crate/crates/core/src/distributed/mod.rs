//! Fully distributed optimization: every node runs its own stochastic-policy optimizer and
//! broadcasts only `(query, observation)` pairs.
//!
//! Merging is keyed on `(node_id, seq)`, so delivery order and duplicate delivery do not
//! matter and a late node can join from a message log.

mod sim;
mod tcp;

pub use sim::{run_cluster, BudgetMode, ClusterConfig, ClusterResult, Latency, NetworkModel};
pub use tcp::{run_tcp_node, TcpNodeConfig, TcpNodeResult};

use std::collections::HashSet;
use std::io::{BufRead, Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Result, UboError};
use crate::optimizer::{evaluate_with_redraw, Optimizer, OptimizerConfig, Trace};
use crate::Dataset;

/// Frames larger than this are treated as malformed.
pub const MAX_FRAME_BYTES: usize = 1 << 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryMessage {
    pub node_id: String,
    pub seq: u64,
    pub x: Vec<f64>,
    pub y: f64,
}

impl QueryMessage {
    pub fn validate(&self, dim: usize) -> Result<()> {
        if self.node_id.is_empty() {
            return Err(UboError::MalformedMessage("empty node id".into()));
        }
        if self.x.len() != dim {
            return Err(UboError::MalformedMessage(format!("expected {dim} coordinates, got {}", self.x.len())));
        }
        if !self.x.iter().all(|v| (0.0..=1.0).contains(v)) {
            return Err(UboError::MalformedMessage("query outside the unit cube".into()));
        }
        if !self.y.is_finite() {
            return Err(UboError::MalformedMessage("non-finite observation".into()));
        }
        Ok(())
    }

    pub fn key(&self) -> (String, u64) {
        (self.node_id.clone(), self.seq)
    }

    /// 4-byte big-endian length followed by the JSON body.
    pub fn encode(&self) -> Vec<u8> {
        let body = serde_json::to_vec(self).expect("message serializes");
        let mut out = Vec::with_capacity(body.len() + 4);
        out.extend_from_slice(&(body.len() as u32).to_be_bytes());
        out.extend_from_slice(&body);
        out
    }

    pub fn decode(frame: &[u8]) -> Result<Self> {
        if frame.len() < 4 {
            return Err(UboError::MalformedMessage("truncated frame".into()));
        }
        let len = u32::from_be_bytes([frame[0], frame[1], frame[2], frame[3]]) as usize;
        if frame.len() != len + 4 {
            return Err(UboError::MalformedMessage("frame length mismatch".into()));
        }
        serde_json::from_slice(&frame[4..]).map_err(|e| UboError::MalformedMessage(e.to_string()))
    }
}

pub fn write_frame<W: Write>(w: &mut W, msg: &QueryMessage) -> Result<()> {
    w.write_all(&msg.encode())?;
    w.flush()?;
    Ok(())
}

/// Reads one frame; `Ok(None)` on a clean end of stream.
pub fn read_frame<R: Read>(r: &mut R) -> Result<Option<QueryMessage>> {
    let mut len = [0u8; 4];
    match r.read_exact(&mut len) {
        Ok(()) => {}
        Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e.into()),
    }
    let n = u32::from_be_bytes(len) as usize;
    if n > MAX_FRAME_BYTES {
        return Err(UboError::MalformedMessage(format!("frame of {n} bytes")));
    }
    let mut body = vec![0u8; n];
    r.read_exact(&mut body)?;
    serde_json::from_slice(&body).map(Some).map_err(|e| UboError::MalformedMessage(e.to_string()))
}

pub fn write_log<W: Write>(mut w: W, messages: &[QueryMessage]) -> Result<()> {
    for m in messages {
        serde_json::to_writer(&mut w, m)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Parses a JSON-lines log. Blank lines are skipped; a bad line is an error.
pub fn read_log<R: BufRead>(r: R) -> Result<Vec<QueryMessage>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let msg = serde_json::from_str(&line).map_err(|e| UboError::MalformedMessage(format!("line {}: {e}", i + 1)))?;
        out.push(msg);
    }
    Ok(out)
}

/// One node of the cluster.
#[derive(Debug)]
pub struct NodeState {
    node_id: String,
    optimizer: Optimizer,
    seen: HashSet<(String, u64)>,
    inbox: Vec<QueryMessage>,
    next_seq: u64,
    rejected: usize,
    known: Vec<QueryMessage>,
}

impl NodeState {
    pub fn new(node_id: impl Into<String>, cfg: OptimizerConfig) -> Result<Self> {
        Ok(Self {
            node_id: node_id.into(),
            optimizer: Optimizer::new(cfg)?,
            seen: HashSet::new(),
            inbox: Vec::new(),
            next_seq: 0,
            rejected: 0,
            known: Vec::new(),
        })
    }

    /// A node that starts from everything in `history`. With a non-empty history the
    /// node skips its own initial design and goes straight to selection.
    pub fn bootstrap(node_id: impl Into<String>, cfg: OptimizerConfig, history: &[QueryMessage]) -> Result<Self> {
        let mut node = Self::new(node_id, cfg)?;
        for msg in history {
            // malformed entries are counted, like on the wire
            let _ = node.merge(msg.clone());
            if msg.node_id == node.node_id {
                node.next_seq = node.next_seq.max(msg.seq + 1);
            }
        }
        if node.optimizer.dataset().len() > 0 {
            node.optimizer.skip_init();
        }
        Ok(node)
    }

    pub fn node_id(&self) -> &str {
        &self.node_id
    }

    pub fn dataset(&self) -> &Dataset {
        self.optimizer.dataset()
    }

    pub fn trace(&self) -> &Trace {
        self.optimizer.trace()
    }

    pub fn optimizer(&self) -> &Optimizer {
        &self.optimizer
    }

    pub fn rejected(&self) -> usize {
        self.rejected
    }

    pub fn is_done(&self) -> bool {
        self.optimizer.is_done()
    }

    /// Every message this node has sent or accepted, in arrival order.
    pub fn known_messages(&self) -> &[QueryMessage] {
        &self.known
    }

    /// Adds a remote observation. Returns `Ok(false)` for an already seen message.
    pub fn merge(&mut self, msg: QueryMessage) -> Result<bool> {
        if let Err(e) = msg.validate(self.optimizer.config().dim) {
            self.rejected += 1;
            return Err(e);
        }
        if !self.seen.insert(msg.key()) {
            return Ok(false);
        }
        self.optimizer.ingest(msg.x.clone(), msg.y)?;
        self.known.push(msg);
        Ok(true)
    }

    /// Queues a message to be merged at the start of the next step.
    pub fn deliver(&mut self, msg: QueryMessage) {
        self.inbox.push(msg);
    }

    /// Merges everything waiting in the inbox; returns how many messages were new.
    pub fn drain_inbox(&mut self) -> usize {
        let inbox = std::mem::take(&mut self.inbox);
        inbox.into_iter().filter(|m| matches!(self.merge(m.clone()), Ok(true))).count()
    }

    /// One iteration: drain the inbox, pick a query, evaluate it, and return the message
    /// to broadcast. `Ok(None)` once the local budget is spent.
    pub fn step<F: FnMut(&[f64]) -> f64>(&mut self, objective: &mut F) -> Result<Option<QueryMessage>> {
        self.drain_inbox();
        let Some(q) = self.optimizer.next_query()? else {
            return Ok(None);
        };
        let y = evaluate_with_redraw(&mut self.optimizer, objective, q)?;
        let x = self.optimizer.dataset().points().last().cloned().expect("just observed");
        let msg = QueryMessage { node_id: self.node_id.clone(), seq: self.next_seq, x, y };
        self.next_seq += 1;
        self.seen.insert(msg.key());
        self.known.push(msg.clone());
        Ok(Some(msg))
    }

    /// Drains the inbox and refits so the reported incumbent covers all data.
    pub fn finalize(&mut self) -> Result<()> {
        self.drain_inbox();
        self.optimizer.finalize()?;
        Ok(())
    }

    pub fn into_trace(self) -> Trace {
        self.optimizer.into_trace()
    }
}
