//! Real-socket mode: full-mesh broadcast of length-prefixed JSON frames over TCP.
//!
//! A node never blocks on its peers. Incoming frames are read by per-connection threads
//! into a channel that the node drains at the start of each iteration; a send to an
//! unreachable peer drops that message for that peer.

use std::io::BufWriter;
use std::net::{TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, Sender};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use super::{read_frame, write_frame, NodeState, QueryMessage};
use crate::error::{Result, UboError};
use crate::optimizer::{OptimizerConfig, Trace};
use crate::Dataset;

#[derive(Debug, Clone)]
pub struct TcpNodeConfig {
    pub node_id: String,
    pub peers: Vec<String>,
    pub optimizer: OptimizerConfig,
    /// Messages to bootstrap from (late join).
    pub history: Vec<QueryMessage>,
    /// After the local budget is spent, keep receiving until the dataset reaches
    /// `expect_total` points or `linger` elapses.
    pub expect_total: Option<usize>,
    pub linger: Duration,
    pub connect_timeout: Duration,
}

impl TcpNodeConfig {
    pub fn new(node_id: impl Into<String>, peers: Vec<String>, optimizer: OptimizerConfig) -> Self {
        Self {
            node_id: node_id.into(),
            peers,
            optimizer,
            history: Vec::new(),
            expect_total: None,
            linger: Duration::from_millis(500),
            connect_timeout: Duration::from_millis(500),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TcpNodeResult {
    pub trace: Trace,
    pub dataset: Dataset,
    pub messages: Vec<QueryMessage>,
    pub rejected: usize,
    pub send_failures: usize,
}

enum Incoming {
    Message(QueryMessage),
    Malformed,
}

/// Runs one node against `listener` (already bound, so callers can pick port 0).
pub fn run_tcp_node<F: FnMut(&[f64]) -> f64>(cfg: TcpNodeConfig, listener: TcpListener, mut objective: F) -> Result<TcpNodeResult> {
    let stop = Arc::new(AtomicBool::new(false));
    let (tx, rx) = mpsc::channel();
    listener.set_nonblocking(true)?;
    let acceptor = {
        let stop = Arc::clone(&stop);
        thread::spawn(move || accept_loop(listener, tx, stop))
    };

    let result = drive(&cfg, &rx, &mut objective);
    stop.store(true, Ordering::Relaxed);
    let _ = acceptor.join();
    result
}

fn drive<F: FnMut(&[f64]) -> f64>(cfg: &TcpNodeConfig, rx: &Receiver<Incoming>, objective: &mut F) -> Result<TcpNodeResult> {
    let mut node = NodeState::bootstrap(cfg.node_id.clone(), cfg.optimizer.clone(), &cfg.history)?;
    let mut peers: Vec<Peer> = cfg.peers.iter().map(|a| Peer { addr: a.clone(), stream: None }).collect();
    let mut rejected_wire = 0;
    let mut send_failures = 0;

    loop {
        rejected_wire += pump(rx, &mut node);
        match node.step(objective)? {
            Some(msg) => {
                for p in &mut peers {
                    if p.send(&msg, cfg.connect_timeout).is_err() {
                        send_failures += 1;
                    }
                }
            }
            None => break,
        }
    }

    let deadline = Instant::now() + cfg.linger;
    while Instant::now() < deadline {
        rejected_wire += pump(rx, &mut node);
        node.drain_inbox();
        if cfg.expect_total.is_some_and(|n| node.dataset().len() >= n) {
            break;
        }
        thread::sleep(Duration::from_millis(5));
    }
    rejected_wire += pump(rx, &mut node);
    node.finalize()?;
    Ok(TcpNodeResult {
        dataset: node.dataset().clone(),
        messages: node.known_messages().to_vec(),
        rejected: node.rejected() + rejected_wire,
        send_failures,
        trace: node.into_trace(),
    })
}

/// Moves everything from the channel into the node's inbox; returns undecodable frames.
fn pump(rx: &Receiver<Incoming>, node: &mut NodeState) -> usize {
    let mut malformed = 0;
    while let Ok(item) = rx.try_recv() {
        match item {
            Incoming::Message(m) => node.deliver(m),
            Incoming::Malformed => malformed += 1,
        }
    }
    malformed
}

struct Peer {
    addr: String,
    stream: Option<BufWriter<TcpStream>>,
}

impl Peer {
    fn send(&mut self, msg: &QueryMessage, timeout: Duration) -> Result<()> {
        if self.stream.is_none() {
            let addr = self
                .addr
                .to_socket_addrs()?
                .next()
                .ok_or_else(|| UboError::InvalidConfig(format!("cannot resolve {}", self.addr)))?;
            let s = TcpStream::connect_timeout(&addr, timeout)?;
            s.set_nodelay(true)?;
            self.stream = Some(BufWriter::new(s));
        }
        let res = write_frame(self.stream.as_mut().expect("connected"), msg);
        if res.is_err() {
            self.stream = None;
        }
        res
    }
}

fn accept_loop(listener: TcpListener, tx: Sender<Incoming>, stop: Arc<AtomicBool>) {
    while !stop.load(Ordering::Relaxed) {
        match listener.accept() {
            Ok((stream, _)) => {
                let tx = tx.clone();
                let _ = stream.set_nonblocking(false);
                thread::spawn(move || read_loop(stream, tx));
            }
            // WouldBlock while idle; transient accept errors are retried the same way
            Err(_) => thread::sleep(Duration::from_millis(2)),
        }
    }
}

fn read_loop(mut stream: TcpStream, tx: Sender<Incoming>) {
    loop {
        match read_frame(&mut stream) {
            Ok(Some(m)) => {
                if tx.send(Incoming::Message(m)).is_err() {
                    return;
                }
            }
            Ok(None) => return,
            Err(UboError::MalformedMessage(_)) => {
                // framing is lost after a bad body; drop the connection
                let _ = tx.send(Incoming::Malformed);
                return;
            }
            Err(_) => return,
        }
    }
}
