//! Device volatility emulation and the disruption rule.

use alloc::vec::Vec;
use core::time::Duration;

use rand::Rng as _;

use crate::env::{compute_reward, Reward};
use crate::policies::{validate_acceptance_ratio, AdmissionPolicy, Outcome, PolicyKind};
use crate::{rng_from_seed, Error, Rng};

/// When an execution counts as disrupted. `U` is the number of allowed
/// devices, `V` the number of volatile ones.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum DisruptionRule {
    /// Disrupted iff `U = 0` or `(U - V) / U < ratio`.
    #[default]
    AvailableFraction,
    /// Disrupted iff `U = 0` or `V / U > ratio`.
    Literal,
}

/// How device failures are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum VolatilityModel {
    /// Each device gets a failure probability from U(0,1) once; executions
    /// are independent Bernoulli draws with that probability.
    #[default]
    FixedProfiles,
    /// A fresh U(0,1) failure probability per device and execution.
    FreshPerExecution,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SimConfig {
    pub acceptance_ratio: f64,
    pub disruption_rule: DisruptionRule,
    pub volatility_model: VolatilityModel,
}

impl SimConfig {
    pub fn new(acceptance_ratio: f64) -> Self {
        Self {
            acceptance_ratio,
            disruption_rule: DisruptionRule::default(),
            volatility_model: VolatilityModel::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DeviceProfile {
    pub fail_probability: f64,
}

pub fn draw_profiles(devices: usize, rng: &mut Rng) -> Vec<DeviceProfile> {
    (0..devices)
        .map(|_| DeviceProfile {
            fail_probability: rng.gen::<f64>(),
        })
        .collect()
}

/// Bernoulli failure draws for the allowed devices. One uniform is consumed
/// per device whether or not it is blocked, so two policies sharing a seed
/// see the same failure events.
pub fn draw_volatility(profiles: &[DeviceProfile], blocked: &[bool], rng: &mut Rng) -> Vec<bool> {
    profiles
        .iter()
        .zip(blocked)
        .map(|(p, &b)| {
            let u: f64 = rng.gen();
            !b && u < p.fail_probability
        })
        .collect()
}

fn draw_volatility_fresh(blocked: &[bool], rng: &mut Rng) -> Vec<bool> {
    blocked
        .iter()
        .map(|&b| {
            let p: f64 = rng.gen();
            let u: f64 = rng.gen();
            !b && u < p
        })
        .collect()
}

pub fn is_disrupted(blocked: &[bool], volatile: &[bool], ratio: f64, rule: DisruptionRule) -> bool {
    let allowed = blocked.iter().filter(|b| !**b).count();
    if allowed == 0 {
        return true;
    }
    let failed = volatile.iter().zip(blocked).filter(|(v, b)| **v && !**b).count();
    let u = allowed as f64;
    // 1e-9 keeps exact boundaries (4/5 against 0.8) on the non-disrupted side.
    match rule {
        DisruptionRule::AvailableFraction => ((allowed - failed) as f64) < ratio * u - 1e-9,
        DisruptionRule::Literal => (failed as f64) > ratio * u + 1e-9,
    }
}

/// Monotonic time source used to measure decision latency.
pub trait Clock {
    /// Time since an arbitrary fixed origin.
    fn now(&self) -> Duration;
}

/// Clock that always reads zero; every latency comes out as zero.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoClock;

impl Clock for NoClock {
    fn now(&self) -> Duration {
        Duration::ZERO
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ExecutionRecord {
    pub step: u64,
    pub blocked: Vec<bool>,
    /// Allowed devices that failed.
    pub volatile: Vec<bool>,
    pub disrupted: bool,
    /// Only recorded for the learning agent.
    pub reward: Option<Reward>,
    pub decision_latency: Duration,
}

/// A cluster of devices with fixed failure profiles and its own volatility
/// stream.
#[derive(Debug, Clone)]
pub struct Cluster {
    profiles: Vec<DeviceProfile>,
    config: SimConfig,
    rng: Rng,
    step: u64,
}

impl Cluster {
    pub fn new(devices: usize, config: SimConfig, profile_seed: u64, volatility_seed: u64) -> Result<Self, Error> {
        let profiles = draw_profiles(devices, &mut rng_from_seed(profile_seed));
        Self::with_profiles(profiles, config, volatility_seed)
    }

    pub fn with_profiles(profiles: Vec<DeviceProfile>, config: SimConfig, volatility_seed: u64) -> Result<Self, Error> {
        validate_acceptance_ratio(config.acceptance_ratio)?;
        if profiles.is_empty() {
            return Err(Error::InvalidConfig("cluster needs at least one device"));
        }
        if profiles.iter().any(|p| !(0.0..=1.0).contains(&p.fail_probability)) {
            return Err(Error::InvalidConfig("fail probabilities must lie in [0, 1]"));
        }
        Ok(Self {
            profiles,
            config,
            rng: rng_from_seed(volatility_seed),
            step: 0,
        })
    }

    pub fn devices(&self) -> usize {
        self.profiles.len()
    }

    pub fn profiles(&self) -> &[DeviceProfile] {
        &self.profiles
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Ask the policy for a blocked set (timed with `clock`), emulate the
    /// execution, and report the outcome back to the policy.
    pub fn run_execution<P, C>(&mut self, policy: &mut P, clock: &C) -> Result<ExecutionRecord, Error>
    where
        P: AdmissionPolicy + ?Sized,
        C: Clock + ?Sized,
    {
        if policy.devices() != self.devices() {
            return Err(Error::DimensionMismatch {
                expected: self.devices(),
                found: policy.devices(),
            });
        }
        let started = clock.now();
        let blocked = policy.decide()?;
        let latency = clock.now().saturating_sub(started);
        if blocked.len() != self.devices() {
            return Err(Error::DimensionMismatch {
                expected: self.devices(),
                found: blocked.len(),
            });
        }

        let volatile = match self.config.volatility_model {
            VolatilityModel::FixedProfiles => draw_volatility(&self.profiles, &blocked, &mut self.rng),
            VolatilityModel::FreshPerExecution => draw_volatility_fresh(&blocked, &mut self.rng),
        };
        let disrupted = is_disrupted(
            &blocked,
            &volatile,
            self.config.acceptance_ratio,
            self.config.disruption_rule,
        );
        policy.update(&Outcome {
            volatile: &volatile,
            disrupted,
        });
        let reward = (policy.kind() == PolicyKind::Drl).then(|| compute_reward(&blocked, disrupted));

        let record = ExecutionRecord {
            step: self.step,
            blocked,
            volatile,
            disrupted,
            reward,
            decision_latency: latency,
        };
        self.step += 1;
        Ok(record)
    }
}
