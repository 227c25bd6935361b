//! The shared admission-policy interface and the two baselines: the
//! telemetry heuristic (TEL) and uniform random blocking (RND).

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::seq::SliceRandom;

use crate::{Error, Rng};

/// Result of one service execution, as reported back to a policy.
#[derive(Debug, Clone, Copy)]
pub struct Outcome<'a> {
    /// Allowed devices that failed during the execution.
    pub volatile: &'a [bool],
    pub disrupted: bool,
}

/// A policy decides, before every execution, which devices are blocked.
pub trait AdmissionPolicy {
    fn kind(&self) -> PolicyKind;

    fn devices(&self) -> usize;

    /// Blocked flags for the next execution.
    fn decide(&mut self) -> Result<Vec<bool>, Error>;

    /// Feed back the outcome of the execution that used the last decision.
    fn update(&mut self, outcome: &Outcome<'_>);
}

impl<P: AdmissionPolicy + ?Sized> AdmissionPolicy for alloc::boxed::Box<P> {
    fn kind(&self) -> PolicyKind {
        (**self).kind()
    }

    fn devices(&self) -> usize {
        (**self).devices()
    }

    fn decide(&mut self) -> Result<Vec<bool>, Error> {
        (**self).decide()
    }

    fn update(&mut self, outcome: &Outcome<'_>) {
        (**self).update(outcome)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum PolicyKind {
    Drl,
    Tel,
    Rnd,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 3] = [PolicyKind::Drl, PolicyKind::Tel, PolicyKind::Rnd];

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::Drl => "drl",
            PolicyKind::Tel => "tel",
            PolicyKind::Rnd => "rnd",
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnknownPolicy;

impl fmt::Display for UnknownPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("unknown policy, expected one of drl, tel, rnd")
    }
}

impl core::error::Error for UnknownPolicy {}

impl FromStr for PolicyKind {
    type Err = UnknownPolicy;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "drl" => Ok(PolicyKind::Drl),
            "tel" => Ok(PolicyKind::Tel),
            "rnd" => Ok(PolicyKind::Rnd),
            _ => Err(UnknownPolicy),
        }
    }
}

pub fn validate_acceptance_ratio(ratio: f64) -> Result<(), Error> {
    if ratio > 0.0 && ratio <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidAcceptanceRatio(ratio))
    }
}

/// Number of devices TEL and RND block: `floor(n - n * ratio)`.
pub fn block_count(devices: usize, ratio: f64) -> Result<usize, Error> {
    validate_acceptance_ratio(ratio)?;
    if devices == 0 {
        return Err(Error::InvalidConfig("cluster needs at least one device"));
    }
    let n = devices as f64;
    // 1e-9 absorbs products such as 10 * 0.3 landing just below an integer.
    let b = libm::floor(n - n * ratio + 1e-9) as usize;
    Ok(b.min(devices - 1))
}

/// How availabilities are estimated from the counters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Estimator {
    /// `1 - failures / max(1, executions)`
    #[default]
    Empirical,
    /// `1 - (failures + 1) / (executions + 2)`
    Laplace,
}

impl Estimator {
    fn availability(self, executions: u64, failures: u64) -> f64 {
        match self {
            Estimator::Empirical => 1.0 - failures as f64 / executions.max(1) as f64,
            Estimator::Laplace => 1.0 - (failures + 1) as f64 / (executions + 2) as f64,
        }
    }
}

/// Per-device telemetry. Availabilities start at 1.0 and are only
/// recomputed after a disrupted execution.
#[derive(Debug, Clone, PartialEq)]
pub struct AvailabilityTable {
    executions: Vec<u64>,
    failures: Vec<u64>,
    availability: Vec<f64>,
    estimator: Estimator,
}

impl AvailabilityTable {
    pub fn new(devices: usize, estimator: Estimator) -> Self {
        Self {
            executions: vec![0; devices],
            failures: vec![0; devices],
            availability: vec![1.0; devices],
            estimator,
        }
    }

    /// Table with preset availabilities and zeroed counters.
    pub fn from_availabilities(availability: Vec<f64>) -> Self {
        let n = availability.len();
        Self {
            executions: vec![0; n],
            failures: vec![0; n],
            availability,
            estimator: Estimator::Empirical,
        }
    }

    pub fn devices(&self) -> usize {
        self.availability.len()
    }

    pub fn availability(&self) -> &[f64] {
        &self.availability
    }

    pub fn executions(&self) -> &[u64] {
        &self.executions
    }

    pub fn failures(&self) -> &[u64] {
        &self.failures
    }

    pub fn update(&mut self, volatile: &[bool], disrupted: bool) {
        for e in &mut self.executions {
            *e += 1;
        }
        if !disrupted {
            return;
        }
        for (f, _) in self.failures.iter_mut().zip(volatile).filter(|(_, v)| **v) {
            *f += 1;
        }
        for ((a, &e), &f) in self.availability.iter_mut().zip(&self.executions).zip(&self.failures) {
            *a = self.estimator.availability(e, f);
        }
    }
}

/// Block the `blocks` devices with the lowest availability. Ties are broken
/// uniformly at random.
pub fn tel_decide(table: &AvailabilityTable, blocks: usize, rng: &mut Rng) -> Vec<bool> {
    let n = table.devices();
    let mut blocked = vec![false; n];
    if blocks == 0 {
        return blocked;
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let avail = table.availability();
    order.sort_by(|&a, &b| avail[a].total_cmp(&avail[b]));
    for &i in order.iter().take(blocks) {
        blocked[i] = true;
    }
    blocked
}

/// Block a uniformly random subset of `blocks` devices.
pub fn rnd_decide(devices: usize, blocks: usize, rng: &mut Rng) -> Vec<bool> {
    let mut blocked = vec![false; devices];
    for i in rand::seq::index::sample(rng, devices, blocks.min(devices)).iter() {
        blocked[i] = true;
    }
    blocked
}

#[derive(Debug, Clone)]
pub struct TelPolicy {
    table: AvailabilityTable,
    blocks: usize,
    rng: Rng,
}

impl TelPolicy {
    pub fn new(devices: usize, ratio: f64, estimator: Estimator, rng: Rng) -> Result<Self, Error> {
        Ok(Self {
            table: AvailabilityTable::new(devices, estimator),
            blocks: block_count(devices, ratio)?,
            rng,
        })
    }

    pub fn table(&self) -> &AvailabilityTable {
        &self.table
    }

    pub fn blocks(&self) -> usize {
        self.blocks
    }
}

impl AdmissionPolicy for TelPolicy {
    fn kind(&self) -> PolicyKind {
        PolicyKind::Tel
    }

    fn devices(&self) -> usize {
        self.table.devices()
    }

    fn decide(&mut self) -> Result<Vec<bool>, Error> {
        Ok(tel_decide(&self.table, self.blocks, &mut self.rng))
    }

    fn update(&mut self, outcome: &Outcome<'_>) {
        self.table.update(outcome.volatile, outcome.disrupted);
    }
}

#[derive(Debug, Clone)]
pub struct RndPolicy {
    devices: usize,
    blocks: usize,
    rng: Rng,
}

impl RndPolicy {
    pub fn new(devices: usize, ratio: f64, rng: Rng) -> Result<Self, Error> {
        Ok(Self {
            devices,
            blocks: block_count(devices, ratio)?,
            rng,
        })
    }

    pub fn blocks(&self) -> usize {
        self.blocks
    }
}

impl AdmissionPolicy for RndPolicy {
    fn kind(&self) -> PolicyKind {
        PolicyKind::Rnd
    }

    fn devices(&self) -> usize {
        self.devices
    }

    fn decide(&mut self) -> Result<Vec<bool>, Error> {
        Ok(rnd_decide(self.devices, self.blocks, &mut self.rng))
    }

    fn update(&mut self, _outcome: &Outcome<'_>) {}
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng_from_seed;
    use proptest::prelude::*;

    fn blocked_set(blocked: &[bool]) -> Vec<usize> {
        blocked
            .iter()
            .enumerate()
            .filter(|(_, b)| **b)
            .map(|(i, _)| i)
            .collect()
    }

    #[test]
    fn block_count_examples() {
        assert_eq!(block_count(5, 1.0), Ok(0));
        assert_eq!(block_count(5, 0.5), Ok(2));
        assert_eq!(block_count(10, 0.3), Ok(7));
        assert_eq!(block_count(5, 0.8), Ok(1));
        assert_eq!(block_count(15, 0.7), Ok(4));
    }

    #[test]
    fn block_count_rejects_bad_ratios() {
        for r in [0.0, -0.1, 1.5, f64::NAN] {
            assert!(matches!(block_count(5, r), Err(Error::InvalidAcceptanceRatio(_))));
        }
    }

    #[test]
    fn tel_blocks_two_lowest() {
        let table = AvailabilityTable::from_availabilities(vec![0.2, 0.9, 0.8, 1.0, 1.0]);
        let blocked = tel_decide(&table, 2, &mut rng_from_seed(0));
        assert_eq!(blocked_set(&blocked), vec![0, 2]);
    }

    #[test]
    fn tel_zero_blocks() {
        let table = AvailabilityTable::from_availabilities(vec![0.1, 0.2]);
        assert_eq!(tel_decide(&table, 0, &mut rng_from_seed(0)), vec![false, false]);
    }

    #[test]
    fn tel_ties_are_seeded_and_uniform() {
        let table = AvailabilityTable::from_availabilities(vec![1.0; 5]);
        let a = tel_decide(&table, 2, &mut rng_from_seed(77));
        let b = tel_decide(&table, 2, &mut rng_from_seed(77));
        assert_eq!(a, b);
        assert_eq!(blocked_set(&a).len(), 2);

        // 10 possible pairs; each should appear about 1/10 of the time.
        let mut counts = std::collections::BTreeMap::new();
        let mut rng = rng_from_seed(1);
        let draws = 20_000;
        for _ in 0..draws {
            *counts
                .entry(blocked_set(&tel_decide(&table, 2, &mut rng)))
                .or_insert(0u32) += 1;
        }
        assert_eq!(counts.len(), 10);
        for &c in counts.values() {
            let p = c as f64 / draws as f64;
            assert!((p - 0.1).abs() < 0.012, "{p}");
        }
    }

    #[test]
    fn tel_update_only_on_disruption() {
        let mut table = AvailabilityTable::new(3, Estimator::Empirical);
        table.update(&[false, true, false], false);
        assert_eq!(table.availability(), &[1.0, 1.0, 1.0]);
        assert_eq!(table.executions(), &[1, 1, 1]);

        let mut fresh = AvailabilityTable::new(3, Estimator::Empirical);
        fresh.update(&[false, true, false], true);
        let a = fresh.availability();
        assert!(a[1] < a[0] && a[1] < a[2]);
        assert_eq!(a, &[1.0, 0.0, 1.0]);
    }

    #[test]
    fn repeat_offender_is_minimum() {
        let mut table = AvailabilityTable::new(4, Estimator::Laplace);
        let mut rng = rng_from_seed(3);
        for _ in 0..50 {
            let mut volatile = vec![false; 4];
            volatile[2] = true;
            use rand::Rng as _;
            volatile[rng.gen_range(0..4)] = true;
            table.update(&volatile, true);
        }
        let a = table.availability();
        let min = a.iter().cloned().fold(f64::INFINITY, f64::min);
        assert_eq!(a[2], min);
    }

    #[test]
    fn tel_policy_blocks_strictly_worst_device() {
        let mut tel = TelPolicy::new(5, 0.8, Estimator::Empirical, rng_from_seed(0)).unwrap();
        let volatile = [false, false, false, true, false];
        tel.update(&Outcome {
            volatile: &volatile,
            disrupted: true,
        });
        for _ in 0..20 {
            let blocked = tel.decide().unwrap();
            assert_eq!(blocked_set(&blocked), vec![3]);
            tel.update(&Outcome {
                volatile: &volatile,
                disrupted: true,
            });
        }
    }

    #[test]
    fn rnd_examples() {
        assert_eq!(rnd_decide(5, 0, &mut rng_from_seed(1)), vec![false; 5]);
        let one_left = rnd_decide(5, 4, &mut rng_from_seed(9));
        assert_eq!(one_left.iter().filter(|b| !**b).count(), 1);
        assert_eq!(one_left, rnd_decide(5, 4, &mut rng_from_seed(9)));
    }

    #[test]
    fn rnd_remaining_device_is_uniform() {
        let mut counts = [0u32; 4];
        let mut rng = rng_from_seed(12);
        for _ in 0..40_000 {
            let b = rnd_decide(4, 3, &mut rng);
            counts[b.iter().position(|x| !x).unwrap()] += 1;
        }
        for c in counts {
            assert!((c as f64 / 40_000.0 - 0.25).abs() < 0.01);
        }
    }

    #[test]
    fn policy_names_round_trip() {
        for k in PolicyKind::ALL {
            assert_eq!(k.name().parse::<PolicyKind>(), Ok(k));
        }
        assert!("dqn".parse::<PolicyKind>().is_err());
    }

    proptest! {
        #[test]
        fn baselines_block_exactly_b(n in 1usize..20, ratio in 0.01f64..=1.0, seed in any::<u64>()) {
            let b = block_count(n, ratio).unwrap();
            prop_assert!(b < n);
            let mut tel = TelPolicy::new(n, ratio, Estimator::Empirical, rng_from_seed(seed)).unwrap();
            let mut rnd = RndPolicy::new(n, ratio, rng_from_seed(seed)).unwrap();
            for _ in 0..5 {
                let t = tel.decide().unwrap();
                prop_assert_eq!(t.iter().filter(|x| **x).count(), b);
                let r = rnd.decide().unwrap();
                prop_assert_eq!(r.iter().filter(|x| **x).count(), b);
                let volatile: Vec<bool> = t.iter().map(|x| !x).collect();
                tel.update(&Outcome { volatile: &volatile, disrupted: true });
            }
        }

        #[test]
        fn tel_ignores_availability_scale(
            avail in proptest::collection::vec(0.0f64..1.0, 1..12),
            scale in 0.01f64..100.0,
            seed in any::<u64>(),
            pick in any::<prop::sample::Index>(),
        ) {
            let b = pick.index(avail.len());
            let scaled: Vec<f64> = avail.iter().map(|a| a * scale).collect();
            let x = tel_decide(&AvailabilityTable::from_availabilities(avail), b, &mut rng_from_seed(seed));
            let y = tel_decide(&AvailabilityTable::from_availabilities(scaled), b, &mut rng_from_seed(seed));
            prop_assert_eq!(x, y);
        }

        #[test]
        fn failures_never_exceed_executions(
            rounds in proptest::collection::vec((proptest::collection::vec(any::<bool>(), 6), any::<bool>()), 0..40)
        ) {
            let mut table = AvailabilityTable::new(6, Estimator::Empirical);
            for (volatile, disrupted) in &rounds {
                table.update(volatile, *disrupted);
            }
            for i in 0..6 {
                prop_assert!(table.failures()[i] <= table.executions()[i]);
                prop_assert!((0.0..=1.0).contains(&table.availability()[i]));
            }
        }
    }
}
