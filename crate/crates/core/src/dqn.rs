//! Deep Q-learning admission agent.
//!
//! Every call to [`DqnAgent::decide`] runs one iteration of the control loop:
//! record the outcome of the previous execution, store the resulting
//! experience, train the evaluation network on a replay batch, then pick one
//! masked action and apply it to produce the blocked set for the next
//! execution.

use alloc::vec::Vec;

use rand::Rng as _;

use crate::env::{self, Action, ActionMask, EnvironmentState, Reward};
use crate::nn::{Activation, MlpNetwork, TrainingConfig};
use crate::policies::{AdmissionPolicy, Outcome, PolicyKind};
use crate::seed::mix;
use crate::{rng_from_seed, Error, Rng};

/// One replay tuple. Observations are stored already encoded.
#[derive(Debug, Clone, PartialEq)]
pub struct Experience {
    pub env: Vec<f64>,
    pub next_env: Vec<f64>,
    pub action: Action,
    pub reward: Reward,
    pub next_mask: ActionMask,
}

/// Bounded replay memory. When full, a uniformly chosen old entry makes room
/// for the new one.
#[derive(Debug, Clone)]
pub struct ReplayMemory<T = Experience> {
    capacity: usize,
    entries: Vec<T>,
    rng: Rng,
}

impl<T> ReplayMemory<T> {
    pub fn new(capacity: usize, rng: Rng) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            capacity,
            entries: Vec::new(),
            rng,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[T] {
        &self.entries
    }

    /// Insert `item`, returning the evicted entry if the memory was full.
    pub fn remember(&mut self, item: T) -> Option<T> {
        if self.entries.len() < self.capacity {
            self.entries.push(item);
            None
        } else {
            let victim = self.rng.gen_range(0..self.entries.len());
            Some(core::mem::replace(&mut self.entries[victim], item))
        }
    }

    /// Indices of a uniform batch: without replacement when the memory holds
    /// enough entries, with replacement otherwise.
    pub fn sample_indices(&mut self, batch: usize) -> Vec<usize> {
        let len = self.entries.len();
        if len == 0 {
            return Vec::new();
        }
        if batch <= len {
            rand::seq::index::sample(&mut self.rng, len, batch).into_vec()
        } else {
            (0..batch).map(|_| self.rng.gen_range(0..len)).collect()
        }
    }
}

/// Exponentially decaying exploration rate, floored at `min`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EpsilonSchedule {
    pub start: f64,
    pub min: f64,
    pub decay: f64,
}

impl Default for EpsilonSchedule {
    fn default() -> Self {
        Self {
            start: 0.1,
            min: 0.01,
            decay: 0.999,
        }
    }
}

impl EpsilonSchedule {
    /// Exploration rate after `decisions` decisions.
    pub fn at(&self, decisions: u64) -> f64 {
        let e = self.start * libm::pow(self.decay, decisions as f64);
        e.max(self.min)
    }
}

/// Hidden-layer layout of the Q-networks.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct NetworkConfig {
    pub hidden_layers: usize,
    pub hidden_width: usize,
    pub activation: Activation,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            hidden_layers: 1,
            hidden_width: 150,
            activation: Activation::Relu,
        }
    }
}

impl NetworkConfig {
    /// Layer sizes `[n + 2, hidden.., 2n + 1]` for a cluster of `devices`.
    pub fn layer_sizes(&self, devices: usize) -> Vec<usize> {
        let mut sizes = Vec::with_capacity(self.hidden_layers + 2);
        sizes.push(devices + 2);
        sizes.extend(core::iter::repeat_n(self.hidden_width, self.hidden_layers));
        sizes.push(env::action_count(devices));
        sizes
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AgentConfig {
    pub gamma: f64,
    pub start_size: usize,
    pub memory_capacity: usize,
    pub target_sync_period: u64,
    pub exploration: EpsilonSchedule,
    /// Always take the best masked action; disables exploration.
    pub greedy: bool,
    /// Divisor applied to the step counter in observations.
    pub step_norm: f64,
    pub training: TrainingConfig,
    pub network: NetworkConfig,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            gamma: 0.1,
            start_size: 10,
            memory_capacity: 100_000,
            target_sync_period: 100,
            exploration: EpsilonSchedule::default(),
            greedy: false,
            step_norm: 1.0,
            training: TrainingConfig::default(),
            network: NetworkConfig::default(),
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<(), Error> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::InvalidConfig("gamma must be in (0, 1]"));
        }
        if self.memory_capacity == 0 {
            return Err(Error::InvalidConfig("memory_capacity must be positive"));
        }
        if self.target_sync_period == 0 {
            return Err(Error::InvalidConfig("target_sync_period must be positive"));
        }
        if !(self.step_norm > 0.0 && self.step_norm.is_finite()) {
            return Err(Error::InvalidConfig("step_norm must be positive"));
        }
        let e = &self.exploration;
        if !(0.0..=1.0).contains(&e.start) || !(0.0..=1.0).contains(&e.min) || !(0.0..=1.0).contains(&e.decay) {
            return Err(Error::InvalidConfig("exploration parameters must lie in [0, 1]"));
        }
        if self.network.hidden_layers == 0 || self.network.hidden_width == 0 {
            return Err(Error::InvalidConfig(
                "the network needs at least one non-empty hidden layer",
            ));
        }
        self.training.validate()
    }
}

/// Bootstrap target `reward + gamma * max_{valid a'} next_q[a']`.
pub fn q_target(reward: Reward, next_q: &[f64], next_mask: &ActionMask, gamma: f64) -> f64 {
    let best = next_q
        .iter()
        .zip(&next_mask.valid)
        .filter(|(_, v)| **v)
        .map(|(q, _)| *q)
        .fold(f64::NEG_INFINITY, f64::max);
    reward.0 as f64 + gamma * best
}

/// Highest-valued valid action; ties go to the lowest index.
pub fn greedy_action(q: &[f64], mask: &ActionMask) -> Action {
    let mut best: Option<(usize, f64)> = None;
    for (i, (&value, &valid)) in q.iter().zip(&mask.valid).enumerate() {
        if valid && best.is_none_or(|(_, b)| value > b) {
            best = Some((i, value));
        }
    }
    // The no-op entry is always valid.
    Action(best.map_or(mask.len() - 1, |(i, _)| i))
}

/// Epsilon-greedy choice over the valid actions of `mask`.
pub fn select_masked_action(q: &[f64], mask: &ActionMask, epsilon: f64, rng: &mut Rng) -> Action {
    if epsilon > 0.0 && rng.gen::<f64>() < epsilon {
        let valid = mask.valid.iter().filter(|v| **v).count();
        let pick = rng.gen_range(0..valid);
        mask.valid_actions().nth(pick).expect("pick is below the valid count")
    } else {
        greedy_action(q, mask)
    }
}

#[derive(Debug, Clone)]
pub struct DqnAgent {
    config: AgentConfig,
    eval: MlpNetwork,
    target: MlpNetwork,
    memory: ReplayMemory,
    rng: Rng,
    env: EnvironmentState,
    next_env: EnvironmentState,
    last_action: Option<Action>,
    last_outcome: bool,
    decisions: u64,
    train_steps: u64,
    last_loss: Option<f64>,
}

impl DqnAgent {
    /// Fresh agent. `weight_seed` drives network initialisation,
    /// `policy_seed` drives exploration and the replay memory.
    pub fn new(devices: usize, config: AgentConfig, weight_seed: u64, policy_seed: u64) -> Result<Self, Error> {
        if devices == 0 {
            return Err(Error::InvalidConfig("cluster needs at least one device"));
        }
        config.validate()?;
        let sizes = config.network.layer_sizes(devices);
        let eval = MlpNetwork::new(&sizes, config.network.activation, &mut rng_from_seed(weight_seed))?;
        Self::with_network(eval, config, policy_seed)
    }

    /// Agent whose evaluation and target networks start from `eval`, for
    /// example a loaded checkpoint. The replay memory starts empty.
    pub fn with_network(eval: MlpNetwork, config: AgentConfig, policy_seed: u64) -> Result<Self, Error> {
        config.validate()?;
        let sizes = eval.layer_sizes();
        let devices = sizes[0].checked_sub(2).filter(|&n| n > 0).ok_or(Error::InvalidConfig(
            "network input must have n + 2 entries with n >= 1",
        ))?;
        let outputs = sizes[sizes.len() - 1];
        if outputs != env::action_count(devices) {
            return Err(Error::DimensionMismatch {
                expected: env::action_count(devices),
                found: outputs,
            });
        }
        let env = EnvironmentState::initial(devices);
        let mut next_env = env.clone();
        next_env.step = 1;
        Ok(Self {
            target: eval.clone_into_target(),
            eval,
            memory: ReplayMemory::new(
                config.memory_capacity,
                rng_from_seed(mix(policy_seed, 0x7265_706c_6179)),
            ),
            rng: rng_from_seed(policy_seed),
            config,
            env,
            next_env,
            last_action: None,
            last_outcome: false,
            decisions: 0,
            train_steps: 0,
            last_loss: None,
        })
    }

    pub fn config(&self) -> &AgentConfig {
        &self.config
    }

    pub fn devices(&self) -> usize {
        self.env.devices()
    }

    pub fn eval_network(&self) -> &MlpNetwork {
        &self.eval
    }

    /// Mutable access to the evaluation network. The target network is not
    /// touched.
    pub fn eval_network_mut(&mut self) -> &mut MlpNetwork {
        &mut self.eval
    }

    pub fn target_network(&self) -> &MlpNetwork {
        &self.target
    }

    pub fn memory(&self) -> &ReplayMemory {
        &self.memory
    }

    /// State the last action was chosen in.
    pub fn env(&self) -> &EnvironmentState {
        &self.env
    }

    /// State produced by the last action; its blocked flags are the ones in
    /// effect for the upcoming execution.
    pub fn next_env(&self) -> &EnvironmentState {
        &self.next_env
    }

    /// Replace the pending state. The next call to [`DqnAgent::decide`]
    /// promotes it to the current state without storing an experience.
    pub fn set_pending_state(&mut self, state: EnvironmentState) -> Result<(), Error> {
        if state.devices() != self.devices() {
            return Err(Error::DimensionMismatch {
                expected: self.devices(),
                found: state.devices(),
            });
        }
        self.next_env = state;
        self.last_action = None;
        Ok(())
    }

    pub fn last_action(&self) -> Option<Action> {
        self.last_action
    }

    pub fn decisions(&self) -> u64 {
        self.decisions
    }

    pub fn train_steps(&self) -> u64 {
        self.train_steps
    }

    pub fn last_loss(&self) -> Option<f64> {
        self.last_loss
    }

    pub fn epsilon(&self) -> f64 {
        if self.config.greedy {
            0.0
        } else {
            self.config.exploration.at(self.decisions)
        }
    }

    pub fn observe(&self, state: &EnvironmentState) -> Vec<f64> {
        env::encode_observation(state, self.config.step_norm)
    }

    pub fn q_values(&self, state: &EnvironmentState) -> Result<Vec<f64>, Error> {
        self.eval.forward(&self.observe(state))
    }

    /// Masked epsilon-greedy action for `state` under the current exploration
    /// rate.
    pub fn select_action(&mut self, state: &EnvironmentState) -> Result<Action, Error> {
        let q = self.q_values(state)?;
        let mask = env::generate_mask(state);
        let epsilon = self.epsilon();
        Ok(select_masked_action(&q, &mask, epsilon, &mut self.rng))
    }

    pub fn remember(&mut self, exp: Experience) {
        self.memory.remember(exp);
    }

    /// One SGD step on a replay batch, once the memory holds more than
    /// `start_size` experiences. Syncs the target network every
    /// `target_sync_period` steps.
    pub fn train_step(&mut self) -> Result<Option<f64>, Error> {
        if self.memory.len() <= self.config.start_size {
            return Ok(None);
        }
        let batch = self.config.training.batch_size;
        let picks = self.memory.sample_indices(batch);
        let mut inputs = Vec::with_capacity(batch);
        let mut targets = Vec::with_capacity(batch);
        let mut actions = Vec::with_capacity(batch);
        for i in picks {
            let exp = &self.memory.entries()[i];
            let next_q = self.target.forward(&exp.next_env)?;
            targets.push(q_target(exp.reward, &next_q, &exp.next_mask, self.config.gamma));
            inputs.push(exp.env.as_slice());
            actions.push(exp.action.0);
        }
        let loss = self
            .eval
            .train_batch(&inputs, &targets, &actions, &self.config.training)?;
        self.train_steps += 1;
        if self.train_steps.is_multiple_of(self.config.target_sync_period) {
            self.target.copy_from(&self.eval);
        }
        self.last_loss = Some(loss);
        Ok(Some(loss))
    }

    /// One iteration of the control loop. `prev_disrupted` is the outcome of
    /// the execution that used the previously returned blocked flags (`false`
    /// before the first execution). Returns the blocked flags for the next
    /// execution.
    pub fn decide(&mut self, prev_disrupted: bool) -> Result<Vec<bool>, Error> {
        self.next_env.failed = prev_disrupted;
        if let Some(action) = self.last_action {
            let reward = env::compute_reward(&self.next_env.blocked, prev_disrupted);
            let exp = Experience {
                env: self.observe(&self.env),
                next_env: self.observe(&self.next_env),
                action,
                reward,
                next_mask: env::generate_mask(&self.next_env),
            };
            self.memory.remember(exp);
            self.train_step()?;
        }
        self.env = self.next_env.clone();
        let action = self.select_action(&self.env.clone())?;
        self.next_env = env::apply_action(&self.env, action)?;
        self.last_action = Some(action);
        self.decisions += 1;
        Ok(self.next_env.blocked.clone())
    }
}

impl AdmissionPolicy for DqnAgent {
    fn kind(&self) -> PolicyKind {
        PolicyKind::Drl
    }

    fn devices(&self) -> usize {
        DqnAgent::devices(self)
    }

    fn decide(&mut self) -> Result<Vec<bool>, Error> {
        let prev = self.last_outcome;
        DqnAgent::decide(self, prev)
    }

    fn update(&mut self, outcome: &Outcome<'_>) {
        self.last_outcome = outcome.disrupted;
    }
}
