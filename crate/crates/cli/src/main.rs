use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use ubo::distributed::{self, run_cluster, BudgetMode, ClusterConfig, Latency, NetworkModel, NodeState, TcpNodeConfig};
use ubo::harness::{self, ExperimentSpec};
use ubo::optimizer::{self, Method, OptimizerConfig, Trace, UtSettings};
use ubo::problems::{noisy_query, Problem, RoverWorld};

#[derive(Parser)]
#[command(name = "ubo", version, about = "Robust Bayesian optimization under input noise")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Optimize one benchmark with one method and write the trace as CSV.
    Run(RunArgs),
    /// Run an experiment spec (JSON) and write mean curves with 95% intervals.
    Bench {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write a JSON summary of final outcomes.
        #[arg(long)]
        summary: Option<PathBuf>,
    },
    /// Run UBO-SP nodes on a simulated network, or one node over TCP with --listen.
    Cluster(ClusterArgs),
    /// Bootstrap a node from a message log and continue optimizing.
    Replay {
        #[arg(long)]
        log: PathBuf,
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, default_value = "replay")]
        node_id: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the rover world as JSON.
    World {
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args, Clone)]
struct CommonArgs {
    #[arg(long, default_value = "gm2d")]
    problem: String,
    /// Selected evaluations after the initial design (problem preset if omitted).
    #[arg(long)]
    budget: Option<usize>,
    /// Initial Sobol evaluations (problem preset if omitted).
    #[arg(long)]
    init: Option<usize>,
    /// Input-noise standard deviation (problem preset if omitted).
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Boltzmann inverse temperature of the stochastic policy.
    #[arg(long)]
    beta: Option<f64>,
}

impl CommonArgs {
    fn problem(&self) -> Result<Problem> {
        let p = Problem::by_name(&self.problem)?;
        Ok(match self.sigma {
            Some(s) => p.with_sigma(s),
            None => p,
        })
    }

    fn config(&self, problem: &Problem, method: Method) -> OptimizerConfig {
        let mut cfg = OptimizerConfig::new(problem.dim, method, self.seed);
        cfg.budget = self.budget.unwrap_or(problem.budget);
        cfg.init_samples = self.init.unwrap_or(problem.init_samples);
        cfg.ut = UtSettings { sigma: problem.input_sigma, ..cfg.ut };
        if let Some(b) = self.beta {
            cfg.meta.beta = b;
        }
        cfg
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long, default_value = "UBO-SP")]
    method: Method,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ClusterArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long, default_value_t = 4)]
    nodes: usize,
    #[arg(long, default_value_t = 0.0)]
    latency_ms: f64,
    /// Latency distribution: fixed, uniform (0..2L) or exponential (mean L).
    #[arg(long, default_value = "fixed")]
    latency_dist: String,
    #[arg(long, default_value_t = 0.0)]
    drop_rate: f64,
    /// Simulated duration of one iteration.
    #[arg(long, default_value_t = 1.0)]
    step_ms: f64,
    /// Split one budget across the nodes instead of giving each node the full budget.
    #[arg(long)]
    split: bool,
    /// Output directory for traces and the message log.
    #[arg(long)]
    out: Option<PathBuf>,
    /// TCP mode: address to listen on.
    #[arg(long, requires = "peers")]
    listen: Option<String>,
    /// TCP mode: comma-separated peer addresses.
    #[arg(long, value_delimiter = ',')]
    peers: Option<Vec<String>>,
    #[arg(long, default_value = "node-0")]
    node_id: String,
    /// TCP mode: message log to bootstrap from.
    #[arg(long)]
    history: Option<PathBuf>,
    /// TCP mode: how long to keep receiving after the local budget is spent.
    #[arg(long, default_value_t = 2000)]
    linger_ms: u64,
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Run(a) => cmd_run(a),
        Command::Bench { spec, out, summary } => cmd_bench(&spec, out.as_deref(), summary.as_deref()),
        Command::Cluster(a) if a.listen.is_some() => cmd_tcp(a),
        Command::Cluster(a) => cmd_cluster(a),
        Command::Replay { log, common, node_id, out } => cmd_replay(&log, &common, node_id, out.as_deref()),
        Command::World { out } => {
            let json = serde_json::to_string_pretty(&RoverWorld::default())?;
            write_text(out.as_deref(), &json)
        }
    }
}

fn open_out(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => Box::new(io::stdout().lock()),
    })
}

fn write_text(path: Option<&Path>, text: &str) -> Result<()> {
    let mut w = open_out(path)?;
    writeln!(w, "{text}")?;
    Ok(())
}

fn report(trace: &Trace) {
    if let Some((x, v)) = trace.last_incumbent() {
        eprintln!("{} evaluations, incumbent {:?} value {:.6}", trace.len(), x, v);
    }
}

fn cmd_run(a: RunArgs) -> Result<()> {
    let problem = a.common.problem()?;
    let cfg = a.common.config(&problem, a.method);
    let mut noise = harness::noise_rng(a.common.seed, 0);
    let trace = match optimizer::run(|x: &[f64]| noisy_query(&problem, x, &mut noise), cfg) {
        Ok(t) => t,
        Err(e) => {
            e.partial.write_csv(open_out(a.out.as_deref())?)?;
            bail!("run aborted: {e}");
        }
    };
    trace.write_csv(open_out(a.out.as_deref())?)?;
    report(&trace);
    Ok(())
}

fn cmd_bench(spec_path: &Path, out: Option<&Path>, summary: Option<&Path>) -> Result<()> {
    let text = fs::read_to_string(spec_path).with_context(|| format!("reading {}", spec_path.display()))?;
    let spec: ExperimentSpec = serde_json::from_str(&text).context("parsing experiment spec")?;
    let results = harness::run_experiment(&spec)?;
    let out = out.map(Path::to_path_buf).or_else(|| spec.output.as_ref().map(PathBuf::from));
    results.write_csv(open_out(out.as_deref())?)?;
    let json = serde_json::to_string_pretty(&results.summary_json())?;
    match summary {
        Some(p) => write_text(Some(p), &json)?,
        None => eprintln!("{json}"),
    }
    Ok(())
}

fn latency(dist: &str, ms: f64) -> Result<Latency> {
    Ok(match dist {
        "fixed" => Latency::Fixed { ms },
        "uniform" => Latency::Uniform { lo_ms: 0.0, hi_ms: 2.0 * ms },
        "exponential" => Latency::Exponential { mean_ms: ms },
        other => bail!("unknown latency distribution `{other}`"),
    })
}

fn cmd_cluster(a: ClusterArgs) -> Result<()> {
    let problem = a.common.problem()?;
    let cfg = ClusterConfig {
        n_nodes: a.nodes,
        base: a.common.config(&problem, Method::UboSp),
        mode: if a.split { BudgetMode::SplitTotal } else { BudgetMode::PerNode },
        network: NetworkModel {
            latency: latency(&a.latency_dist, a.latency_ms)?,
            drop_rate: a.drop_rate,
            step_ms: a.step_ms,
            seed: a.common.seed,
        },
    };
    let mut streams: Vec<_> = (0..a.nodes).map(|k| harness::noise_rng(a.common.seed, k)).collect();
    let res = run_cluster(&cfg, |k, x| noisy_query(&problem, x, &mut streams[k]))?;
    if let Some(dir) = &a.out {
        fs::create_dir_all(dir)?;
        for (k, t) in res.traces.iter().enumerate() {
            t.write_csv(File::create(dir.join(format!("{}.csv", ClusterConfig::node_id(k))))?)?;
        }
        res.global.write_csv(File::create(dir.join("global.csv"))?)?;
        distributed::write_log(BufWriter::new(File::create(dir.join("messages.jsonl"))?), &res.log)?;
    }
    eprintln!(
        "{} nodes, {} messages sent, {} dropped, {} rejected",
        a.nodes,
        res.log.len(),
        res.dropped,
        res.rejected
    );
    for (k, t) in res.traces.iter().enumerate() {
        eprint!("{}: ", ClusterConfig::node_id(k));
        report(t);
    }
    Ok(())
}

fn cmd_tcp(a: ClusterArgs) -> Result<()> {
    let problem = a.common.problem()?;
    let listen = a.listen.clone().expect("checked by caller");
    let listener = TcpListener::bind(&listen).with_context(|| format!("binding {listen}"))?;
    let mut cfg = TcpNodeConfig::new(a.node_id.clone(), a.peers.clone().unwrap_or_default(), a.common.config(&problem, Method::UboSp));
    cfg.linger = Duration::from_millis(a.linger_ms);
    if let Some(h) = &a.history {
        cfg.history = distributed::read_log(BufReader::new(File::open(h)?))?;
    }
    let mut noise = harness::noise_rng(a.common.seed, 0);
    let res = distributed::run_tcp_node(cfg, listener, |x: &[f64]| noisy_query(&problem, x, &mut noise))?;
    if let Some(dir) = &a.out {
        fs::create_dir_all(dir)?;
        res.trace.write_csv(File::create(dir.join(format!("{}.csv", a.node_id)))?)?;
        distributed::write_log(BufWriter::new(File::create(dir.join("messages.jsonl"))?), &res.messages)?;
    }
    eprintln!(
        "{}: dataset {} points, {} rejected, {} failed sends",
        a.node_id,
        res.dataset.len(),
        res.rejected,
        res.send_failures
    );
    report(&res.trace);
    Ok(())
}

fn cmd_replay(log: &Path, common: &CommonArgs, node_id: String, out: Option<&Path>) -> Result<()> {
    let problem = common.problem()?;
    let history = distributed::read_log(BufReader::new(File::open(log).with_context(|| format!("opening {}", log.display()))?))?;
    let mut cfg = common.config(&problem, Method::UboSp);
    cfg.budget = common.budget.unwrap_or(0);
    let mut node = NodeState::bootstrap(node_id, cfg, &history)?;
    eprintln!("bootstrapped {} points from {} messages ({} rejected)", node.dataset().len(), history.len(), node.rejected());
    let mut noise = harness::noise_rng(common.seed, 0);
    let mut objective = |x: &[f64]| noisy_query(&problem, x, &mut noise);
    while node.step(&mut objective)?.is_some() {}
    node.finalize()?;
    if let Some(inc) = node.optimizer().incumbent() {
        eprintln!("incumbent {:?} value {:.6}", inc.location, inc.value);
    }
    node.trace().write_csv(open_out(out)?)?;
    Ok(())
}
