use std::collections::hash_map::RandomState;
use std::hash::{BuildHasher, Hasher};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use edgeqos::checkpoint::{load_checkpoint, save_checkpoint};
use edgeqos::config::{CliConfig, OneOrMany};
use edgeqos::harness::{self, Cell, ExportFormat, RunSeeds, RunSummary};
use edgeqos::Error;
use edgeqos_core::dqn::DqnAgent;
use edgeqos_core::policies::PolicyKind;
use edgeqos_core::sim::DisruptionRule;

/// Admission control for volatile edge devices: DQN, TEL and RND policies
/// on a simulated cluster.
///
/// Exit codes: 0 success, 1 a run failed, 2 invalid configuration,
/// 3 I/O or file-format error.
#[derive(Parser)]
#[command(name = "edgeqos", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the sweep and write results to a new run directory.
    Run(Overrides),
    /// Time individual decisions of every policy at every cluster size.
    Bench(Overrides),
    /// Save or load trained DRL networks.
    #[command(subcommand)]
    Checkpoint(CheckpointCommand),
}

#[derive(Subcommand)]
enum CheckpointCommand {
    /// Train a DRL agent on the first (devices, ratio) cell and save its network.
    Save {
        path: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Resume a DRL run from a saved network. Replay memory starts empty.
    Load {
        path: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum RuleArg {
    AvailableFraction,
    Literal,
}

#[derive(Args, Default)]
struct Overrides {
    /// TOML configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Cluster sizes, comma separated.
    #[arg(long, value_delimiter = ',')]
    devices: Vec<usize>,
    /// Acceptance ratios, comma separated.
    #[arg(long, value_delimiter = ',')]
    ratio: Vec<f64>,
    /// Policies (drl, tel, rnd), comma separated.
    #[arg(long, value_delimiter = ',')]
    policy: Vec<PolicyKind>,
    #[arg(long)]
    executions: Option<u64>,
    /// Master seed; a random seed is chosen and printed when omitted.
    #[arg(long)]
    seed: Option<u64>,
    /// Parent directory of run directories.
    #[arg(long, default_value = "runs")]
    out_dir: PathBuf,
    /// Disable exploration.
    #[arg(long)]
    greedy: bool,
    #[arg(long, value_enum)]
    disruption_rule: Option<RuleArg>,
    /// Export sliding-window averages of this length instead of cumulative ones.
    #[arg(long)]
    window: Option<usize>,
    /// Concurrent runs; 0 uses every core.
    #[arg(long)]
    jobs: Option<usize>,
    /// Record decision latencies (makes the CSV non-reproducible).
    #[arg(long)]
    measure_latency: bool,
    #[arg(long)]
    step_norm: Option<f64>,
    #[arg(long)]
    learning_rate: Option<f64>,
}

impl Overrides {
    fn resolve(&self, base: Option<&Path>) -> Result<CliConfig, Error> {
        let mut cfg = match self.config.as_deref().or(base) {
            Some(path) => CliConfig::load(path)?,
            None => CliConfig::default(),
        };
        let e = &mut cfg.experiment;
        if !self.devices.is_empty() {
            e.devices = OneOrMany::Many(self.devices.clone());
        }
        if !self.ratio.is_empty() {
            e.acceptance_ratio = OneOrMany::Many(self.ratio.clone());
            cfg.bench.acceptance_ratio = self.ratio[0];
        }
        if !self.policy.is_empty() {
            e.policies = OneOrMany::Many(self.policy.clone());
        }
        if let Some(x) = self.executions {
            e.executions = x;
        }
        if let Some(x) = self.seed {
            e.seed = Some(x);
        }
        if let Some(x) = self.window {
            e.window = Some(x);
        }
        if let Some(x) = self.jobs {
            e.jobs = x;
        }
        if self.measure_latency {
            e.measure_latency = true;
        }
        if self.greedy {
            cfg.agent.greedy = true;
        }
        if let Some(x) = self.step_norm {
            cfg.agent.step_norm = x;
        }
        if let Some(x) = self.learning_rate {
            cfg.training.learning_rate = x;
        }
        if let Some(rule) = self.disruption_rule {
            cfg.sim.disruption_rule = match rule {
                RuleArg::AvailableFraction => DisruptionRule::AvailableFraction,
                RuleArg::Literal => DisruptionRule::Literal,
            };
        }
        if cfg.experiment.seed.is_none() {
            let seed = random_seed();
            eprintln!("seed: {seed} (random)");
            cfg.experiment.seed = Some(seed);
        }
        if cfg.experiment.seed.is_some_and(|s| s > i64::MAX as u64) {
            return Err(Error::Config(format!("seed must be at most {}", i64::MAX)));
        }
        cfg.experiment_spec().validate()?;
        Ok(cfg)
    }
}

fn random_seed() -> u64 {
    let mut h = RandomState::new().build_hasher();
    h.write_u128(
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .unwrap_or_default()
            .as_nanos(),
    );
    // config files store integers as i64
    h.finish() >> 1
}

/// Create `<out_dir>/run_<unix seconds>_seed<seed>`, adding a suffix when
/// the name is taken.
fn create_run_dir(out_dir: &Path, seed: u64) -> Result<PathBuf, Error> {
    std::fs::create_dir_all(out_dir)?;
    let stamp = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .unwrap_or_default()
        .as_secs();
    let base = format!("run_{stamp}_seed{seed}");
    for k in 0.. {
        let name = if k == 0 { base.clone() } else { format!("{base}_{k}") };
        let dir = out_dir.join(name);
        match std::fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(e.into()),
        }
    }
    unreachable!()
}

fn summary_line(s: &RunSummary) -> String {
    let head = format!("{} devices={} ratio={:.2}", s.policy, s.devices, s.acceptance_ratio);
    match (&s.error, s.error_ratio) {
        (Some(err), _) => format!("{head} FAILED: {err}"),
        (None, Some(e)) => format!("{head} error_ratio={e:.4} time={:.1}s", s.wall_time_s),
        (None, None) => format!("{head} no result"),
    }
}

fn cmd_run(o: &Overrides) -> Result<ExitCode, Error> {
    let cfg = o.resolve(None)?;
    let spec = cfg.experiment_spec();
    let dir = create_run_dir(&o.out_dir, spec.seed)?;
    std::fs::write(dir.join("config.toml"), cfg.to_toml_string())?;
    let summaries = harness::run_experiment(&spec)?;
    harness::export_results(&summaries, ExportFormat::Csv, &dir.join("results.csv"))?;
    harness::export_results(&summaries, ExportFormat::Json, &dir.join("results.json"))?;
    for s in &summaries {
        println!("{}", summary_line(s));
    }
    eprintln!("results written to {}", dir.display());
    Ok(if summaries.iter().any(RunSummary::failed) {
        ExitCode::from(1)
    } else {
        ExitCode::SUCCESS
    })
}

fn cmd_bench(o: &Overrides) -> Result<ExitCode, Error> {
    let cfg = o.resolve(None)?;
    let spec = cfg.experiment_spec();
    for &devices in &spec.devices {
        for &policy in &spec.policies {
            let cell = Cell {
                policy,
                devices,
                ratio: cfg.bench.acceptance_ratio,
            };
            let r = harness::bench_cell(&spec, &cell, cfg.bench.warmup, cfg.bench.repetitions)?;
            println!(
                "{policy} devices={devices}: {:.3} ± {:.3} us over {} decisions",
                r.stats.mean_us, r.stats.std_us, r.stats.samples
            );
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn sidecar(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".toml");
    PathBuf::from(name)
}

fn drl_cell(cfg: &CliConfig, devices: usize) -> Cell {
    Cell {
        policy: PolicyKind::Drl,
        devices,
        ratio: cfg.experiment.acceptance_ratio.to_vec()[0],
    }
}

fn cmd_checkpoint_save(path: &Path, o: &Overrides) -> Result<ExitCode, Error> {
    let cfg = o.resolve(None)?;
    let spec = cfg.experiment_spec();
    let cell = drl_cell(&cfg, spec.devices[0]);
    let started = Instant::now();
    let (agent, trace) = harness::run_agent(&spec, &cell, None)?;
    save_checkpoint(agent.eval_network(), path)?;
    std::fs::write(sidecar(path), cfg.to_toml_string())?;
    let s = harness::summarize(&spec, &cell, Ok(trace), started.elapsed());
    println!("{}", summary_line(&s));
    eprintln!("network saved to {}", path.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_checkpoint_load(path: &Path, o: &Overrides) -> Result<ExitCode, Error> {
    let side = sidecar(path);
    let cfg = o.resolve(side.exists().then_some(side.as_path()))?;
    let net = load_checkpoint(path)?;
    let devices = net.input_len().saturating_sub(2);
    let mut spec = cfg.experiment_spec();
    spec.agent.network.activation = net.activation();
    let cell = drl_cell(&cfg, devices);
    let seeds = RunSeeds::derive(spec.seed, &cell);
    let agent = DqnAgent::with_network(net, spec.agent_config(devices), seeds.policy)?;
    let started = Instant::now();
    let (_, trace) = harness::run_agent(&spec, &cell, Some(agent))?;
    let s = harness::summarize(&spec, &cell, Ok(trace), started.elapsed());
    println!("{}", summary_line(&s));
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(o) => cmd_run(o),
        Command::Bench(o) => cmd_bench(o),
        Command::Checkpoint(CheckpointCommand::Save { path, overrides }) => cmd_checkpoint_save(path, overrides),
        Command::Checkpoint(CheckpointCommand::Load { path, overrides }) => cmd_checkpoint_load(path, overrides),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
