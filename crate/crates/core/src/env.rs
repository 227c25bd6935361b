//! Observation, mask, action and reward algebra shared by every policy.
//!
//! Devices are indexed from 0. For a cluster of `n` devices the action space
//! has `2n + 1` entries: `2i` allows device `i`, `2i + 1` blocks it and `2n`
//! leaves the cluster unchanged.

use alloc::vec::Vec;

use crate::Error;

/// What the agent observes before a decision.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EnvironmentState {
    /// `true` means the device is blocked for allocation.
    pub blocked: Vec<bool>,
    /// Whether the previous execution was disrupted.
    pub failed: bool,
    pub step: u64,
}

impl EnvironmentState {
    /// All devices allowed, no failure, step 0.
    pub fn initial(devices: usize) -> Self {
        Self {
            blocked: alloc::vec![false; devices],
            failed: false,
            step: 0,
        }
    }

    pub fn devices(&self) -> usize {
        self.blocked.len()
    }

    /// Length of the encoded observation (`n + 2`).
    pub fn observation_len(&self) -> usize {
        self.blocked.len() + 2
    }

    pub fn allowed_count(&self) -> usize {
        self.blocked.iter().filter(|b| !**b).count()
    }
}

/// Validity of every action for one state.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ActionMask {
    pub valid: Vec<bool>,
}

impl ActionMask {
    pub fn len(&self) -> usize {
        self.valid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.valid.is_empty()
    }

    pub fn allows(&self, action: Action) -> bool {
        self.valid.get(action.0).copied().unwrap_or(false)
    }

    /// Indices of the valid actions, ascending.
    pub fn valid_actions(&self) -> impl Iterator<Item = Action> + '_ {
        self.valid
            .iter()
            .enumerate()
            .filter(|(_, v)| **v)
            .map(|(i, _)| Action(i))
    }
}

/// Index into the `2n + 1` action space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Action(pub usize);

/// Decoded meaning of an [`Action`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActionKind {
    Allow(usize),
    Block(usize),
    Noop,
}

impl Action {
    pub fn allow(device: usize) -> Self {
        Action(2 * device)
    }

    pub fn block(device: usize) -> Self {
        Action(2 * device + 1)
    }

    pub fn noop(devices: usize) -> Self {
        Action(2 * devices)
    }

    pub fn index(self) -> usize {
        self.0
    }

    /// Returns `None` when the index is outside the action space of a
    /// cluster with `devices` devices.
    pub fn kind(self, devices: usize) -> Option<ActionKind> {
        if self.0 == 2 * devices {
            Some(ActionKind::Noop)
        } else if self.0 < 2 * devices {
            let device = self.0 / 2;
            Some(if self.0.is_multiple_of(2) {
                ActionKind::Allow(device)
            } else {
                ActionKind::Block(device)
            })
        } else {
            None
        }
    }
}

/// Sum of per-device points for one execution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Reward(pub i64);

impl Reward {
    pub fn value(self) -> i64 {
        self.0
    }
}

/// Points per device and execution.
pub const DEVICE_POINTS: i64 = 10;

/// Number of actions for a cluster of `devices` devices.
pub fn action_count(devices: usize) -> usize {
    2 * devices + 1
}

/// Encode `state` as the network input: block flags, failure flag, and the
/// step counter divided by `step_norm`.
pub fn encode_observation(state: &EnvironmentState, step_norm: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(state.observation_len());
    encode_observation_into(state, step_norm, &mut out);
    out
}

pub(crate) fn encode_observation_into(state: &EnvironmentState, step_norm: f64, out: &mut Vec<f64>) {
    out.clear();
    out.extend(state.blocked.iter().map(|&b| flag(b)));
    out.push(flag(state.failed));
    out.push(state.step as f64 / step_norm);
}

fn flag(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

pub fn generate_mask(state: &EnvironmentState) -> ActionMask {
    let mut valid = Vec::with_capacity(action_count(state.devices()));
    for &blocked in &state.blocked {
        valid.push(blocked);
        valid.push(!blocked);
    }
    valid.push(true);
    ActionMask { valid }
}

/// Transition to the next state. The failure flag is cleared; the caller
/// sets it once the next execution has been observed.
pub fn apply_action(state: &EnvironmentState, action: Action) -> Result<EnvironmentState, Error> {
    let devices = state.devices();
    let mut blocked = state.blocked.clone();
    match action.kind(devices) {
        Some(ActionKind::Allow(i)) if blocked[i] => blocked[i] = false,
        Some(ActionKind::Block(i)) if !blocked[i] => blocked[i] = true,
        Some(ActionKind::Noop) => {}
        _ => return Err(Error::InvalidAction { index: action.0 }),
    }
    Ok(EnvironmentState {
        blocked,
        failed: false,
        step: state.step + 1,
    })
}

pub fn compute_reward(blocked: &[bool], disrupted: bool) -> Reward {
    let total = blocked
        .iter()
        .map(|&b| match (b, disrupted) {
            (false, false) => DEVICE_POINTS,
            (false, true) => -DEVICE_POINTS,
            (true, false) => 0,
            (true, true) => -DEVICE_POINTS,
        })
        .sum();
    Reward(total)
}
