//! Keyed random streams.
//!
//! Every draw in an experiment comes from a stream addressed by
//! `(root seed, purpose, outer index, inner index)`, so results do not depend
//! on which thread runs which trial.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Purpose {
    /// Calibration task `inner` of outer trial `outer`.
    CalibrationTask = 1,
    /// Test task of inner trial `inner`.
    TestTask = 2,
    /// Evaluation draws of inner trial `inner`.
    Evaluation = 3,
    /// Test-task calibration budget of the PS-Test baseline.
    TestCalibration = 4,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn stream(seed: u64, purpose: Purpose, outer: u64, inner: u64) -> StreamRng {
    let words = [seed, purpose as u64, outer, inner];
    let mut key = [0u8; 32];
    for (i, w) in words.iter().enumerate() {
        key[i * 8..(i + 1) * 8].copy_from_slice(&splitmix64(*w ^ (i as u64).wrapping_mul(0xa076_1d64_78bd_642f)).to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

/// A single stream for ad-hoc use.
pub fn seeded(seed: u64) -> StreamRng {
    ChaCha8Rng::seed_from_u64(seed)
}
