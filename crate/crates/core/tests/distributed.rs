//! Multi-node behavior: counting, bootstrap, lossy networks and real sockets.

use std::collections::HashSet;
use std::net::TcpListener;
use std::thread;
use std::time::Duration;

use ubo::distributed::{run_cluster, run_tcp_node, ClusterConfig, NetworkModel, NodeState, QueryMessage, TcpNodeConfig};
use ubo::optimizer::{Method, OptimizerConfig};
use ubo::problems::gm_eval;

fn gm(x: &[f64]) -> f64 {
    gm_eval([x[0], x[1]])
}

fn quick(seed: u64, init: usize, budget: usize) -> OptimizerConfig {
    let mut cfg = OptimizerConfig::new(2, Method::UboSp, seed);
    cfg.init_samples = init;
    cfg.budget = budget;
    cfg.hyper.burn_in = 20;
    cfg.hyper.warm_burn_in = 2;
    cfg.hyper.n_samples = 3;
    cfg.meta.candidate_count = 200;
    cfg
}

fn msg(node: &str, seq: u64, x: [f64; 2]) -> QueryMessage {
    QueryMessage { node_id: node.into(), seq, x: x.to_vec(), y: gm(&x) }
}

#[test]
fn two_remote_nodes_add_six_points() {
    let mut node = NodeState::new("local", quick(1, 3, 0)).unwrap();
    let mut objective = gm;
    while node.step(&mut objective).unwrap().is_some() {}
    let local = node.dataset().len();
    for (k, name) in ["a", "b"].iter().enumerate() {
        for s in 0..3 {
            let v = 0.1 + 0.2 * k as f64 + 0.05 * s as f64;
            assert!(node.merge(msg(name, s, [v, 1.0 - v])).unwrap());
        }
    }
    assert!(!node.merge(msg("a", 0, [0.1, 0.9])).unwrap());
    assert_eq!(node.dataset().len(), local + 6);
}

#[test]
fn empty_history_bootstraps_a_fresh_node() {
    let mut boot = NodeState::bootstrap("n", quick(2, 4, 0), &[]).unwrap();
    let mut fresh = NodeState::new("n", quick(2, 4, 0)).unwrap();
    assert!(boot.dataset().is_empty());
    let (mut f1, mut f2) = (gm, gm);
    while boot.step(&mut f1).unwrap().is_some() {}
    while fresh.step(&mut f2).unwrap().is_some() {}
    assert_eq!(boot.dataset().len(), 4);
    assert_eq!(boot.dataset().as_bit_multiset(), fresh.dataset().as_bit_multiset());
}

#[test]
fn malformed_messages_are_rejected_and_counted() {
    let mut node = NodeState::new("n", quick(3, 2, 0)).unwrap();
    assert!(node.merge(QueryMessage { node_id: "x".into(), seq: 0, x: vec![0.5], y: 1.0 }).is_err());
    assert!(node.merge(QueryMessage { node_id: "x".into(), seq: 1, x: vec![0.5, 1.5], y: 1.0 }).is_err());
    assert!(node.merge(QueryMessage { node_id: "x".into(), seq: 2, x: vec![0.5, 0.5], y: f64::NAN }).is_err());
    assert_eq!(node.rejected(), 3);
    assert!(node.dataset().is_empty());
}

#[test]
fn four_lossless_nodes_share_every_point() {
    let (p, t) = (8, 3);
    let res = run_cluster(&ClusterConfig::new(4, quick(10, p, t)), |_, x| gm(x)).unwrap();
    let union: HashSet<Vec<u64>> = res.datasets.iter().flat_map(|d| d.points().iter().map(|x| x.iter().map(|v| v.to_bits()).collect())).collect();
    assert_eq!(union.len(), 4 * (p + t));
    for d in &res.datasets {
        assert_eq!(d.len(), 4 * (p + t));
    }
    assert_eq!(res.global.len(), 4 * (p + t));
}

#[test]
fn lossy_network_still_finishes() {
    let mut cfg = ClusterConfig::new(3, quick(20, 5, 4));
    cfg.network = NetworkModel { drop_rate: 0.3, seed: 9, ..NetworkModel::lossless() };
    let res = run_cluster(&cfg, |_, x| gm(x)).unwrap();
    assert!(res.dropped > 0);
    let sizes: Vec<usize> = res.datasets.iter().map(|d| d.len()).collect();
    assert!(sizes.iter().any(|&s| s < 27), "some node should miss messages: {sizes:?}");
    for (trace, data) in res.traces.iter().zip(&res.datasets) {
        assert_eq!(trace.len(), 9);
        let own: HashSet<Vec<u64>> = data.points().iter().map(|x| x.iter().map(|v| v.to_bits()).collect()).collect();
        for r in &trace.records {
            assert!(own.contains(&r.x.iter().map(|v| v.to_bits()).collect::<Vec<_>>()));
        }
    }
}

#[test]
fn stochastic_nodes_rarely_collide() {
    let res = run_cluster(&ClusterConfig::new(4, quick(30, 20, 12)), |_, x| gm(x)).unwrap();
    assert_eq!(res.rounds.len(), 12);
    let frac = res.duplicate_round_fraction(1e-3);
    assert!(frac < 0.01, "duplicate rounds {frac}");
}

#[test]
fn two_tcp_nodes_on_localhost_converge() {
    let la = TcpListener::bind("127.0.0.1:0").unwrap();
    let lb = TcpListener::bind("127.0.0.1:0").unwrap();
    let (aa, ab) = (la.local_addr().unwrap().to_string(), lb.local_addr().unwrap().to_string());
    let node = |id: &str, peer: String, seed: u64, listener: TcpListener| {
        let mut cfg = TcpNodeConfig::new(id, vec![peer], quick(seed, 4, 3));
        cfg.expect_total = Some(14);
        cfg.linger = Duration::from_secs(20);
        cfg.connect_timeout = Duration::from_secs(2);
        thread::spawn(move || run_tcp_node(cfg, listener, gm).unwrap())
    };
    let ha = node("a", ab, 40, la);
    let hb = node("b", aa, 41, lb);
    let (ra, rb) = (ha.join().unwrap(), hb.join().unwrap());
    assert_eq!(ra.dataset.len(), 14);
    assert_eq!(ra.dataset.as_bit_multiset(), rb.dataset.as_bit_multiset());
    assert_eq!(ra.rejected + rb.rejected, 0);
}

#[test]
fn frames_preserve_every_bit_of_the_floats() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(50);
    for seq in 0..2000 {
        let m = QueryMessage { node_id: "n".into(), seq, x: vec![rng.random(), rng.random()], y: rng.random_range(-1e3..1e3) };
        let back = QueryMessage::decode(&m.encode()).unwrap();
        assert_eq!(back.x.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), m.x.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        assert_eq!(back.y.to_bits(), m.y.to_bits());
    }
}
