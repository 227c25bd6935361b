//! Stable derivation of independent child seeds from a master seed.
//!
//! Child seeds depend only on the labelled components that went into them,
//! never on the order in which runs are created.

/// SplitMix64 finaliser.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Combine a seed with a salt.
pub fn mix(seed: u64, salt: u64) -> u64 {
    splitmix64(seed ^ splitmix64(salt))
}

/// Builder for a child seed: `SeedKey::new(master).devices(5).stream("profiles")`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedKey {
    state: u64,
}

const TAG_DEVICES: u64 = 1;
const TAG_RATIO: u64 = 2;
const TAG_POLICY: u64 = 3;
const TAG_STREAM: u64 = 4;

impl SeedKey {
    pub fn new(master: u64) -> Self {
        Self {
            state: splitmix64(master),
        }
    }

    fn absorb(mut self, tag: u64, value: u64) -> Self {
        self.state = mix(self.state, tag);
        self.state = mix(self.state, value);
        self
    }

    fn absorb_str(mut self, tag: u64, s: &str) -> Self {
        self.state = mix(self.state, tag);
        for chunk in s.as_bytes().chunks(8) {
            let mut buf = [0u8; 8];
            buf[..chunk.len()].copy_from_slice(chunk);
            self.state = mix(self.state, u64::from_le_bytes(buf));
        }
        self.state = mix(self.state, s.len() as u64);
        self
    }

    pub fn devices(self, devices: usize) -> Self {
        self.absorb(TAG_DEVICES, devices as u64)
    }

    /// Ratios are keyed at micro-unit resolution so that `0.3` and
    /// `0.30000000000000004` name the same cell.
    pub fn ratio(self, ratio: f64) -> Self {
        let micro = libm::round(ratio * 1e6) as i64;
        self.absorb(TAG_RATIO, micro as u64)
    }

    pub fn policy(self, policy: &str) -> Self {
        self.absorb_str(TAG_POLICY, policy)
    }

    pub fn stream(self, stream: &str) -> u64 {
        self.absorb_str(TAG_STREAM, stream).state
    }
}
