//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use edgeqos::harness::{self, Cell, ExperimentSpec, RunSummary};
use edgeqos_core::dqn::{AgentConfig, DqnAgent};
use edgeqos_core::env::{compute_reward, generate_mask, Action, EnvironmentState};
use edgeqos_core::nn::{Activation, MlpNetwork};
use edgeqos_core::policies::{PolicyKind, RndPolicy};
use edgeqos_core::rng_from_seed;
use edgeqos_core::sim::{is_disrupted, Cluster, DeviceProfile, DisruptionRule, NoClock, SimConfig};
use rand::Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn bits(v: &[bool]) -> Vec<u8> {
    v.iter().map(|&b| b as u8).collect()
}

fn trace_fidelity() -> Outcome {
    let mut net = MlpNetwork::zeros(&[4, 8, 5], Activation::Relu).unwrap();
    net.layers_mut()[1].biases = vec![2.11, 3.02, 1.55, 0.053, 0.12];
    let cfg = AgentConfig {
        greedy: true,
        step_norm: 1.0,
        ..AgentConfig::default()
    };
    let mut agent = DqnAgent::with_network(net, cfg, 0).unwrap();
    let state = EnvironmentState {
        blocked: vec![true, false],
        failed: false,
        step: 2,
    };
    agent.set_pending_state(state.clone()).unwrap();
    agent.decide(false).unwrap();
    let obs = agent.observe(agent.env());
    let mask: Vec<u8> = bits(&generate_mask(&state).valid);
    let action = agent.last_action();
    let next = agent.observe(agent.next_env());
    let pass = obs == [1.0, 0.0, 0.0, 2.0]
        && mask == [1, 0, 0, 1, 1]
        && action == Some(Action(0))
        && next == [0.0, 0.0, 0.0, 3.0];
    outcome(
        pass,
        format!("state {obs:?} mask {mask:?} action {action:?} next {next:?}"),
    )
}

/// The four-case table written out per device.
fn table_reward(blocked: &[bool], disrupted: bool) -> i64 {
    let mut total = 0;
    for &b in blocked {
        total += if !b && !disrupted {
            10
        } else if !b && disrupted {
            -10
        } else if b && !disrupted {
            0
        } else {
            -10
        };
    }
    total
}

fn reward_oracle() -> Outcome {
    let mut checked = 0;
    let mut mismatches = 0;
    for n in 1..=4usize {
        for pattern in 0u32..(1 << n) {
            let blocked: Vec<bool> = (0..n).map(|i| pattern >> i & 1 == 1).collect();
            for disrupted in [false, true] {
                checked += 1;
                if compute_reward(&blocked, disrupted).0 != table_reward(&blocked, disrupted) {
                    mismatches += 1;
                }
            }
        }
    }
    outcome(mismatches == 0, format!("{checked} cases, {mismatches} mismatches"))
}

fn gradient_check() -> Outcome {
    let mut rng = rng_from_seed(2024);
    let eps = 1e-5;
    let mut worst: f64 = 0.0;
    let mut compared = 0usize;
    for k in 0..10 {
        let n = rng.gen_range(1..=6usize);
        let hidden = rng.gen_range(3..=24usize);
        let act = if k % 2 == 0 { Activation::Relu } else { Activation::Tanh };
        let mut net = MlpNetwork::new(&[n + 2, hidden, 2 * n + 1], act, &mut rng).unwrap();
        // non-zero biases so that the bias gradients are exercised too
        let params: Vec<f64> = net.parameters().iter().map(|p| p + rng.gen_range(-0.1..0.1)).collect();
        net.set_parameters(&params).unwrap();
        for _ in 0..10 {
            let x: Vec<f64> = (0..n + 2).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let y = [rng.gen_range(-5.0..5.0)];
            let a = [rng.gen_range(0..2 * n + 1)];
            let inputs = [x];
            let (_, grad) = net.gradient(&inputs, &y, &a).unwrap();
            let mut probe = net.clone();
            for i in 0..params.len() {
                let mut p = params.clone();
                p[i] = params[i] + eps;
                probe.set_parameters(&p).unwrap();
                let up = probe.loss(&inputs, &y, &a).unwrap();
                p[i] = params[i] - eps;
                probe.set_parameters(&p).unwrap();
                let down = probe.loss(&inputs, &y, &a).unwrap();
                let numeric = (up - down) / (2.0 * eps);
                let scale = grad[i].abs().max(numeric.abs());
                // both sides at rounding level: nothing to compare
                if scale <= 1e-7 {
                    continue;
                }
                compared += 1;
                worst = worst.max((grad[i] - numeric).abs() / scale);
            }
        }
    }
    outcome(
        worst < 1e-4,
        format!("max relative error {worst:.2e} over {compared} entries"),
    )
}

fn sweep(devices: &[usize], ratios: &[f64], policies: &[PolicyKind], executions: u64, seed: u64) -> Vec<RunSummary> {
    let spec = ExperimentSpec {
        devices: devices.to_vec(),
        ratios: ratios.to_vec(),
        policies: policies.to_vec(),
        executions,
        seed,
        ..ExperimentSpec::default()
    };
    let out = harness::run_experiment(&spec).unwrap();
    for s in &out {
        assert!(!s.failed(), "run failed: {:?}", s.error);
    }
    out
}

fn err(s: &[RunSummary], policy: PolicyKind, devices: usize, ratio: f64) -> f64 {
    s.iter()
        .find(|r| r.policy == policy && r.devices == devices && (r.acceptance_ratio - ratio).abs() < 1e-9)
        .and_then(|r| r.error_ratio)
        .unwrap()
}

/// Mean error ratio per (policy, ratio) over `seeds`.
fn seed_means(
    devices: usize,
    ratios: &[f64],
    executions: u64,
    seeds: std::ops::Range<u64>,
) -> BTreeMap<(PolicyKind, u64), f64> {
    let count = seeds.end - seeds.start;
    let mut means = BTreeMap::new();
    for seed in seeds {
        let runs = sweep(
            &[devices],
            ratios,
            &[PolicyKind::Drl, PolicyKind::Tel],
            executions,
            seed,
        );
        for r in runs {
            let key = (r.policy, (r.acceptance_ratio * 100.0).round() as u64);
            *means.entry(key).or_insert(0.0) += r.error_ratio.unwrap() / count as f64;
        }
    }
    means
}

fn disruption_rule() -> Outcome {
    let blocked = [false; 5];
    let mut worked = true;
    for pattern in 0u32..32 {
        let volatile: Vec<bool> = (0..5).map(|i| pattern >> i & 1 == 1).collect();
        let expect = pattern.count_ones() >= 3;
        worked &= is_disrupted(&blocked, &volatile, 0.5, DisruptionRule::AvailableFraction) == expect;
    }
    let seeds = 10;
    let mut mean = 0.0;
    for seed in 0..seeds {
        mean += err(
            &sweep(&[5], &[1.0], &[PolicyKind::Tel], 100_000, seed),
            PolicyKind::Tel,
            5,
            1.0,
        ) / seeds as f64;
    }
    outcome(
        worked && (0.85..=0.99).contains(&mean),
        format!(
            "worked case {}, TEL error at 5 devices a=1.0 over {seeds} seeds {mean:.3} (band [0.85, 0.99])",
            if worked { "ok" } else { "WRONG" }
        ),
    )
}

fn small_cluster_ordering() -> Outcome {
    let ratios = [0.7, 0.8, 0.9, 1.0];
    let means = seed_means(5, &ratios, 50_000, 0..10);
    let mut pass = true;
    let mut parts = Vec::new();
    for r in ratios {
        let k = (r * 100.0).round() as u64;
        let drl = means[&(PolicyKind::Drl, k)];
        let tel = means[&(PolicyKind::Tel, k)];
        pass &= drl < tel && tel < 1.0 && drl <= 0.35;
        parts.push(format!("a={r}: drl {drl:.3} tel {tel:.3}"));
    }
    outcome(pass, format!("10 seeds; {}", parts.join(", ")))
}

fn large_cluster_parity() -> Outcome {
    let ratios = [0.3, 0.4, 0.5];
    let means = seed_means(15, &ratios, 50_000, 0..3);
    let mut pass = true;
    let mut parts = Vec::new();
    for r in ratios {
        let k = (r * 100.0).round() as u64;
        let drl = means[&(PolicyKind::Drl, k)];
        let tel = means[&(PolicyKind::Tel, k)];
        pass &= (drl - tel).abs() <= 0.15;
        parts.push(format!("a={r}: drl {drl:.3} tel {tel:.3}"));
    }
    outcome(pass, format!("3 seeds; {}", parts.join(", ")))
}

fn baseline_sweep() -> Vec<RunSummary> {
    sweep(
        &[5, 10, 15],
        &harness::default_ratios(),
        &[PolicyKind::Tel, PolicyKind::Rnd],
        100_000,
        0,
    )
}

fn rnd_dominance(runs: &[RunSummary]) -> Outcome {
    let mut worst = f64::INFINITY;
    let mut at = String::new();
    for n in [5, 10, 15] {
        for r in harness::default_ratios() {
            let gap = err(runs, PolicyKind::Rnd, n, r) - err(runs, PolicyKind::Tel, n, r);
            if gap < worst {
                worst = gap;
                at = format!("{n} devices a={r}");
            }
        }
    }
    outcome(worst >= -0.05, format!("smallest RND - TEL gap {worst:.3} at {at}"))
}

fn monotonicity(runs: &[RunSummary]) -> Outcome {
    let mut worst: f64 = 0.0;
    let mut at = String::new();
    for policy in [PolicyKind::Tel, PolicyKind::Rnd] {
        for n in [5, 10, 15] {
            let ratios = harness::default_ratios();
            for w in ratios.windows(2) {
                // w[0] < w[1]: error at the lower ratio may not exceed the higher one
                let rise = err(runs, policy, n, w[0]) - err(runs, policy, n, w[1]);
                if rise > worst {
                    worst = rise;
                    at = format!(" ({policy} {n} devices a={} -> {})", w[1], w[0]);
                }
            }
        }
    }
    outcome(
        worst <= 0.02,
        format!("largest increase while lowering the ratio {worst:.3}{at}"),
    )
}

fn latency_ordering() -> Outcome {
    let spec = ExperimentSpec {
        seed: 9,
        ..ExperimentSpec::default()
    };
    let mut pass = true;
    let mut parts = Vec::new();
    for n in [5, 10, 15] {
        let mean = |policy| {
            let cell = Cell {
                policy,
                devices: n,
                ratio: 1.0,
            };
            harness::bench_cell(&spec, &cell, 10, 100).unwrap().stats.mean_us
        };
        let (drl, tel, rnd) = (mean(PolicyKind::Drl), mean(PolicyKind::Tel), mean(PolicyKind::Rnd));
        pass &= tel * 10.0 <= drl && rnd * 10.0 <= drl;
        parts.push(format!("{n}: drl {drl:.1}us tel {tel:.2}us rnd {rnd:.2}us"));
    }
    outcome(pass, parts.join(", "))
}

fn run_cli(out: &Path) -> Vec<u8> {
    let status = Command::new(env!("CARGO_BIN_EXE_edgeqos"))
        .args([
            "run",
            "--devices",
            "5,10",
            "--ratio",
            "0.5,1.0",
            "--executions",
            "3000",
            "--seed",
            "77",
        ])
        .arg("--out-dir")
        .arg(out)
        .output()
        .unwrap();
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    let dir = std::fs::read_dir(out).unwrap().next().unwrap().unwrap().path();
    std::fs::read(dir.join("results.csv")).unwrap()
}

fn determinism() -> Outcome {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let first = run_cli(a.path());
    let second = run_cli(b.path());
    let rows = first.iter().filter(|&&c| c == b'\n').count().saturating_sub(1);
    outcome(
        first == second,
        format!("{rows} rows, byte-identical: {}", first == second),
    )
}

fn rnd_enumeration() -> Outcome {
    let p = [0.3, 0.6];
    let runs = 100_000u64;
    let mut pass = true;
    let mut parts = Vec::new();
    for ratio in [0.3f64, 0.5, 1.0] {
        // B devices are blocked uniformly at random among all B-subsets.
        let b = (2.0 - 2.0 * ratio + 1e-9).floor() as usize;
        let subsets: Vec<[bool; 2]> = [[false, false], [true, false], [false, true], [true, true]]
            .into_iter()
            .filter(|s| s.iter().filter(|x| **x).count() == b)
            .collect();
        let mut expected = 0.0;
        for blocked in &subsets {
            for v in 0..4u32 {
                let volatile = [v & 1 == 1, v & 2 == 2];
                if volatile.iter().zip(blocked).any(|(v, b)| *v && *b) {
                    continue;
                }
                let mut prob = 1.0 / subsets.len() as f64;
                for i in 0..2 {
                    if !blocked[i] {
                        prob *= if volatile[i] { p[i] } else { 1.0 - p[i] };
                    }
                }
                let u = blocked.iter().filter(|b| !**b).count();
                let failed = volatile.iter().filter(|v| **v).count();
                if u == 0 || ((u - failed) as f64) < ratio * u as f64 - 1e-9 {
                    expected += prob;
                }
            }
        }
        let profiles = p.iter().map(|&q| DeviceProfile { fail_probability: q }).collect();
        let mut cluster = Cluster::with_profiles(profiles, SimConfig::new(ratio), 11).unwrap();
        let mut policy = RndPolicy::new(2, ratio, rng_from_seed(12)).unwrap();
        let mut hits = 0u64;
        for _ in 0..runs {
            hits += cluster.run_execution(&mut policy, &NoClock).unwrap().disrupted as u64;
        }
        let freq = hits as f64 / runs as f64;
        let sigma = (expected * (1.0 - expected) / runs as f64).sqrt();
        pass &= (freq - expected).abs() <= 3.0 * sigma;
        parts.push(format!(
            "a={ratio}: exact {expected:.4} simulated {freq:.4} (3 sigma {:.4})",
            3.0 * sigma
        ));
    }
    outcome(pass, parts.join(", "))
}

fn main() {
    let mut failures = 0;
    let mut report = |id: u32, name: &str, f: &mut dyn FnMut() -> Outcome| {
        let started = Instant::now();
        let o = f();
        if !o.pass {
            failures += 1;
        }
        println!(
            "criterion {id:>2} {} {name}: {} [{:.1}s]",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            started.elapsed().as_secs_f64()
        );
    };
    report(1, "masked-action trace fidelity", &mut trace_fidelity);
    report(2, "reward oracle equivalence", &mut reward_oracle);
    report(3, "gradient correctness", &mut gradient_check);
    report(4, "disruption-rule consistency", &mut disruption_rule);
    report(5, "policy ordering at 5 devices", &mut small_cluster_ordering);
    report(6, "diminishing DRL advantage at 15 devices", &mut large_cluster_parity);
    let runs = baseline_sweep();
    report(7, "RND error dominance", &mut || rnd_dominance(&runs));
    report(8, "monotonicity in the acceptance ratio", &mut || monotonicity(&runs));
    report(9, "latency ordering", &mut latency_ordering);
    report(10, "determinism of `run`", &mut determinism);
    report(11, "RND enumeration oracle at 2 devices", &mut rnd_enumeration);
    if failures > 0 {
        println!("{failures} criteria failed");
        std::process::exit(1);
    }
}
