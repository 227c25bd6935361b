//! Experiment orchestration: parameter sweeps, error-ratio curves, latency
//! statistics and result export.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::{Duration, Instant};

use edgeqos_core::dqn::{AgentConfig, DqnAgent};
use edgeqos_core::policies::{AdmissionPolicy, Estimator, PolicyKind, RndPolicy, TelPolicy};
use edgeqos_core::seed::SeedKey;
use edgeqos_core::sim::{Clock, Cluster, DisruptionRule, NoClock, SimConfig, VolatilityModel};
use edgeqos_core::{rng_from_seed, Error as CoreError};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clock::MonotonicClock;
use crate::Error;

/// Exact CSV header of the summary table.
pub const SUMMARY_HEADER: &str =
    "policy,devices,acceptance_ratio,executions,seed,error_ratio,latency_mean_us,latency_std_us";

/// Exact CSV header of a running-average series file.
pub const SERIES_HEADER: &str = "step,running_avg";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "mode", content = "window")]
pub enum AverageMode {
    #[default]
    Cumulative,
    Window(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub devices: Vec<usize>,
    pub ratios: Vec<f64>,
    pub executions: u64,
    pub policies: Vec<PolicyKind>,
    pub seed: u64,
    pub agent: AgentConfig,
    /// When non-zero, the learning rate of a cluster of `n` devices is
    /// `agent.training.learning_rate * (reference_devices / n)^2`. Rewards
    /// and Q-values grow with the cluster, so a fixed step size that suits
    /// small clusters overshoots on large ones.
    pub reference_devices: usize,
    pub estimator: Estimator,
    pub disruption_rule: DisruptionRule,
    pub volatility_model: VolatilityModel,
    pub average: AverageMode,
    /// Time every decision. Timings differ between invocations, so leave
    /// this off when outputs must be byte-reproducible.
    pub measure_latency: bool,
    /// Decisions discarded before latency statistics are taken.
    pub latency_warmup: usize,
    /// Maximum number of points per exported series.
    pub max_series_points: usize,
    /// Runs executed concurrently; 0 uses every available core.
    pub jobs: usize,
}

/// Acceptance ratios 0.3, 0.4, ..., 1.0.
pub fn default_ratios() -> Vec<f64> {
    (3..=10).map(|k| k as f64 / 10.0).collect()
}

/// Agent settings used for long sweeps. Device failures do not depend on
/// time, so the step counter is scaled until it is negligible next to the
/// other inputs (below 1e-3 over 100k executions).
pub fn default_sweep_agent() -> AgentConfig {
    let mut agent = AgentConfig {
        step_norm: 1e8,
        ..AgentConfig::default()
    };
    agent.training.learning_rate = 0.01;
    agent
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            devices: vec![5, 10, 15],
            ratios: default_ratios(),
            executions: 100_000,
            policies: PolicyKind::ALL.to_vec(),
            seed: 0,
            agent: default_sweep_agent(),
            reference_devices: 5,
            estimator: Estimator::Empirical,
            disruption_rule: DisruptionRule::AvailableFraction,
            volatility_model: VolatilityModel::FixedProfiles,
            average: AverageMode::Cumulative,
            measure_latency: false,
            latency_warmup: 10,
            max_series_points: 5000,
            jobs: 0,
        }
    }
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<(), Error> {
        if self.executions == 0 {
            return Err(Error::Config("executions must be at least 1".into()));
        }
        if self.devices.is_empty() || self.devices.contains(&0) {
            return Err(Error::Config(
                "devices must be a non-empty list of positive sizes".into(),
            ));
        }
        if self.ratios.is_empty() {
            return Err(Error::Config("acceptance_ratio list is empty".into()));
        }
        for &r in &self.ratios {
            if !(r > 0.0 && r <= 1.0) {
                return Err(Error::Config(format!("acceptance_ratio {r} is outside (0, 1]")));
            }
        }
        if self.policies.is_empty() {
            return Err(Error::Config("no policy selected".into()));
        }
        if let AverageMode::Window(0) = self.average {
            return Err(Error::Config("window must be positive".into()));
        }
        if self.max_series_points < 2 {
            return Err(Error::Config("max_series_points must be at least 2".into()));
        }
        self.agent.validate().map_err(|e| Error::Config(format!("agent: {e}")))
    }

    /// Every (policy, devices, ratio) cell, sorted.
    pub fn cells(&self) -> Vec<Cell> {
        let mut cells = Vec::new();
        for &policy in &self.policies {
            for &devices in &self.devices {
                for &ratio in &self.ratios {
                    cells.push(Cell { policy, devices, ratio });
                }
            }
        }
        cells.sort_by(|a, b| a.sort_key().partial_cmp(&b.sort_key()).unwrap());
        cells.dedup();
        cells
    }

    /// Agent settings for a cluster of `devices` devices.
    pub fn agent_config(&self, devices: usize) -> AgentConfig {
        let mut agent = self.agent;
        if self.reference_devices > 0 {
            let scale = self.reference_devices as f64 / devices as f64;
            agent.training.learning_rate *= scale * scale;
        }
        agent
    }

    fn sim_config(&self, ratio: f64) -> SimConfig {
        SimConfig {
            acceptance_ratio: ratio,
            disruption_rule: self.disruption_rule,
            volatility_model: self.volatility_model,
        }
    }
}

/// One run of the sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub policy: PolicyKind,
    pub devices: usize,
    pub ratio: f64,
}

impl Cell {
    fn sort_key(&self) -> (PolicyKind, usize, f64) {
        (self.policy, self.devices, self.ratio)
    }
}

/// Seeds of the four independent random streams of a run.
///
/// Device profiles and failure draws depend only on the master seed and the
/// cluster size, so every policy and every acceptance ratio of one size sees
/// the same devices and the same failure events.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunSeeds {
    pub profiles: u64,
    pub volatility: u64,
    pub policy: u64,
    pub weights: u64,
}

impl RunSeeds {
    pub fn derive(master: u64, cell: &Cell) -> Self {
        let cluster = SeedKey::new(master).devices(cell.devices);
        let run = cluster.ratio(cell.ratio).policy(cell.policy.name());
        Self {
            profiles: cluster.stream("profiles"),
            volatility: cluster.stream("volatility"),
            policy: run.stream("policy"),
            weights: run.stream("weights"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub mean_us: f64,
    pub std_us: f64,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesPoint {
    pub step: u64,
    pub running_avg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub policy: PolicyKind,
    pub devices: usize,
    pub acceptance_ratio: f64,
    pub executions: u64,
    pub seed: u64,
    pub error_ratio: Option<f64>,
    pub latency_mean_us: Option<f64>,
    pub latency_std_us: Option<f64>,
    pub series: Vec<SeriesPoint>,
    pub wall_time_s: f64,
    /// Set when the run aborted.
    pub error: Option<String>,
}

impl RunSummary {
    pub fn failed(&self) -> bool {
        self.error.is_some()
    }

    pub fn series_file_name(&self) -> String {
        format!(
            "series_{}_{}_{:.2}.csv",
            self.policy.name(),
            self.devices,
            self.acceptance_ratio
        )
    }
}

/// Per-execution trace of one run.
#[derive(Debug, Clone, Default)]
pub struct RunTrace {
    pub disrupted: Vec<bool>,
    pub latencies: Vec<Duration>,
}

impl RunTrace {
    pub fn error_ratio(&self) -> f64 {
        self.disrupted.iter().filter(|d| **d).count() as f64 / self.disrupted.len().max(1) as f64
    }
}

/// Build the policy of `cell` with its derived seeds.
pub fn build_policy(
    spec: &ExperimentSpec,
    cell: &Cell,
    seeds: &RunSeeds,
) -> Result<Box<dyn AdmissionPolicy + Send>, CoreError> {
    Ok(match cell.policy {
        PolicyKind::Drl => Box::new(DqnAgent::new(
            cell.devices,
            spec.agent_config(cell.devices),
            seeds.weights,
            seeds.policy,
        )?),
        PolicyKind::Tel => Box::new(TelPolicy::new(
            cell.devices,
            cell.ratio,
            spec.estimator,
            rng_from_seed(seeds.policy),
        )?),
        PolicyKind::Rnd => Box::new(RndPolicy::new(cell.devices, cell.ratio, rng_from_seed(seeds.policy))?),
    })
}

pub fn build_cluster(spec: &ExperimentSpec, cell: &Cell, seeds: &RunSeeds) -> Result<Cluster, CoreError> {
    Cluster::new(
        cell.devices,
        spec.sim_config(cell.ratio),
        seeds.profiles,
        seeds.volatility,
    )
}

/// Drive `policy` on `cluster` for `executions` executions.
pub fn drive<P, C>(cluster: &mut Cluster, policy: &mut P, executions: u64, clock: &C) -> Result<RunTrace, CoreError>
where
    P: AdmissionPolicy + ?Sized,
    C: Clock + ?Sized,
{
    let mut trace = RunTrace {
        disrupted: Vec::with_capacity(executions as usize),
        latencies: Vec::with_capacity(executions as usize),
    };
    for _ in 0..executions {
        let rec = cluster.run_execution(policy, clock)?;
        trace.disrupted.push(rec.disrupted);
        trace.latencies.push(rec.decision_latency);
    }
    Ok(trace)
}

/// Run one cell and return its raw trace.
pub fn run_cell(spec: &ExperimentSpec, cell: &Cell) -> Result<RunTrace, CoreError> {
    let seeds = RunSeeds::derive(spec.seed, cell);
    let mut cluster = build_cluster(spec, cell, &seeds)?;
    let mut policy = build_policy(spec, cell, &seeds)?;
    if spec.measure_latency {
        drive(&mut cluster, &mut policy, spec.executions, &MonotonicClock::new())
    } else {
        drive(&mut cluster, &mut policy, spec.executions, &NoClock)
    }
}

/// Run a DRL agent on `cell`, returning the agent after training. With
/// `agent` set, that agent is used instead of a freshly initialised one.
pub fn run_agent(
    spec: &ExperimentSpec,
    cell: &Cell,
    agent: Option<DqnAgent>,
) -> Result<(DqnAgent, RunTrace), CoreError> {
    let seeds = RunSeeds::derive(spec.seed, cell);
    let mut cluster = build_cluster(spec, cell, &seeds)?;
    let mut agent = match agent {
        Some(a) => a,
        None => DqnAgent::new(
            cell.devices,
            spec.agent_config(cell.devices),
            seeds.weights,
            seeds.policy,
        )?,
    };
    let trace = if spec.measure_latency {
        drive(&mut cluster, &mut agent, spec.executions, &MonotonicClock::new())?
    } else {
        drive(&mut cluster, &mut agent, spec.executions, &NoClock)?
    };
    Ok((agent, trace))
}

/// Decision latencies of one policy together with the decisions it made.
#[derive(Debug, Clone)]
pub struct BenchResult {
    pub stats: LatencyStats,
    pub blocked: Vec<Vec<bool>>,
}

/// Time `warmup + repetitions` decisions of the policy of `cell`.
pub fn bench_cell(spec: &ExperimentSpec, cell: &Cell, warmup: usize, repetitions: usize) -> Result<BenchResult, Error> {
    let seeds = RunSeeds::derive(spec.seed, cell);
    let mut cluster = build_cluster(spec, cell, &seeds)?;
    let mut policy = build_policy(spec, cell, &seeds)?;
    let clock = MonotonicClock::new();
    let mut latencies = Vec::with_capacity(warmup + repetitions);
    let mut blocked = Vec::with_capacity(warmup + repetitions);
    for _ in 0..warmup + repetitions {
        let rec = cluster.run_execution(&mut policy, &clock)?;
        latencies.push(rec.decision_latency);
        blocked.push(rec.blocked);
    }
    Ok(BenchResult {
        stats: latency_stats(&latencies, warmup)?,
        blocked,
    })
}

pub fn summarize(
    spec: &ExperimentSpec,
    cell: &Cell,
    result: Result<RunTrace, CoreError>,
    wall: Duration,
) -> RunSummary {
    let mut summary = RunSummary {
        policy: cell.policy,
        devices: cell.devices,
        acceptance_ratio: cell.ratio,
        executions: spec.executions,
        seed: spec.seed,
        error_ratio: None,
        latency_mean_us: None,
        latency_std_us: None,
        series: Vec::new(),
        wall_time_s: wall.as_secs_f64(),
        error: None,
    };
    match result {
        Ok(trace) => {
            summary.error_ratio = Some(trace.error_ratio());
            if spec.measure_latency {
                if let Ok(stats) = latency_stats(&trace.latencies, spec.latency_warmup) {
                    summary.latency_mean_us = Some(stats.mean_us);
                    summary.latency_std_us = Some(stats.std_us);
                }
            }
            let avg = running_average(&trace.disrupted, spec.average);
            summary.series = downsample(&avg, spec.max_series_points);
        }
        Err(e) => summary.error = Some(e.to_string()),
    }
    summary
}

/// Run every cell of the sweep. Failed cells are reported in their summary
/// and do not affect the others. Summaries come back sorted by
/// (policy, devices, ratio).
pub fn run_experiment(spec: &ExperimentSpec) -> Result<Vec<RunSummary>, Error> {
    spec.validate()?;
    let cells = spec.cells();
    let run = |cell: &Cell| {
        let started = Instant::now();
        let result = run_cell(spec, cell);
        summarize(spec, cell, result, started.elapsed())
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(spec.jobs)
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    Ok(pool.install(|| cells.par_iter().map(run).collect()))
}

/// Running error ratio of a disruption-flag series.
pub fn running_average(flags: &[bool], mode: AverageMode) -> Vec<f64> {
    let mut out = Vec::with_capacity(flags.len());
    let mut hits = 0usize;
    match mode {
        AverageMode::Cumulative => {
            for (k, &f) in flags.iter().enumerate() {
                hits += f as usize;
                out.push(hits as f64 / (k + 1) as f64);
            }
        }
        AverageMode::Window(w) => {
            let w = w.max(1);
            for (k, &f) in flags.iter().enumerate() {
                hits += f as usize;
                if k >= w {
                    hits -= flags[k - w] as usize;
                }
                out.push(hits as f64 / (k + 1).min(w) as f64);
            }
        }
    }
    out
}

/// At most `max_points` evenly spaced points; the last point is always kept.
pub fn downsample(series: &[f64], max_points: usize) -> Vec<SeriesPoint> {
    let n = series.len();
    if n == 0 {
        return Vec::new();
    }
    let point = |i: usize| SeriesPoint {
        step: i as u64,
        running_avg: series[i],
    };
    if n <= max_points {
        return (0..n).map(point).collect();
    }
    let last = (n - 1) as f64;
    let mut idx: Vec<usize> = (0..max_points)
        .map(|k| (k as f64 * last / (max_points - 1) as f64).round() as usize)
        .collect();
    idx.dedup();
    idx.into_iter().map(point).collect()
}

/// Mean and sample standard deviation of latencies after dropping `warmup`
/// leading samples.
pub fn latency_stats(latencies: &[Duration], warmup: usize) -> Result<LatencyStats, Error> {
    let kept = latencies.get(warmup..).unwrap_or(&[]);
    if kept.is_empty() {
        return Err(Error::InsufficientSamples {
            needed: warmup + 1,
            found: latencies.len(),
        });
    }
    let us: Vec<f64> = kept.iter().map(|d| d.as_secs_f64() * 1e6).collect();
    let n = us.len() as f64;
    let mean = us.iter().sum::<f64>() / n;
    let std = if us.len() > 1 {
        (us.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    Ok(LatencyStats {
        mean_us: mean,
        std_us: std,
        samples: us.len(),
    })
}

#[derive(Serialize)]
struct CsvRow {
    policy: PolicyKind,
    devices: usize,
    acceptance_ratio: f64,
    executions: u64,
    seed: u64,
    error_ratio: Option<f64>,
    latency_mean_us: Option<f64>,
    latency_std_us: Option<f64>,
}

/// Summary table as CSV, rows in (policy, devices, ratio) order.
pub fn write_summary_csv<W: Write>(summaries: &[RunSummary], out: W) -> Result<(), Error> {
    let mut sorted: Vec<&RunSummary> = summaries.iter().collect();
    sorted.sort_by(|a, b| {
        (a.policy, a.devices, a.acceptance_ratio)
            .partial_cmp(&(b.policy, b.devices, b.acceptance_ratio))
            .unwrap()
    });
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(SUMMARY_HEADER.split(','))?;
    for s in sorted {
        w.serialize(CsvRow {
            policy: s.policy,
            devices: s.devices,
            acceptance_ratio: s.acceptance_ratio,
            executions: s.executions,
            seed: s.seed,
            error_ratio: s.error_ratio,
            latency_mean_us: s.latency_mean_us,
            latency_std_us: s.latency_std_us,
        })?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_series_csv<W: Write>(series: &[SeriesPoint], out: W) -> Result<(), Error> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(SERIES_HEADER.split(','))?;
    for p in series {
        w.serialize((p.step, p.running_avg))?;
    }
    w.flush()?;
    Ok(())
}

/// Supported summary formats.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    Csv,
    Json,
}

/// Write the summary table to `path`. For CSV, one series file per
/// successful run is written next to it.
pub fn export_results(summaries: &[RunSummary], format: ExportFormat, path: &Path) -> Result<(), Error> {
    let file = BufWriter::new(File::create(path)?);
    match format {
        ExportFormat::Csv => {
            write_summary_csv(summaries, file)?;
            let dir = path.parent().unwrap_or(Path::new("."));
            for s in summaries.iter().filter(|s| !s.failed()) {
                let f = BufWriter::new(File::create(dir.join(s.series_file_name()))?);
                write_series_csv(&s.series, f)?;
            }
        }
        ExportFormat::Json => {
            let mut sorted = summaries.to_vec();
            sorted.sort_by(|a, b| {
                (a.policy, a.devices, a.acceptance_ratio)
                    .partial_cmp(&(b.policy, b.devices, b.acceptance_ratio))
                    .unwrap()
            });
            serde_json::to_writer_pretty(file, &sorted)?;
        }
    }
    Ok(())
}

pub fn import_json(path: &Path) -> Result<Vec<RunSummary>, Error> {
    let file = std::io::BufReader::new(File::open(path)?);
    Ok(serde_json::from_reader(file)?)
}
