//! Counter-mode seed derivation.
//!
//! Every stochastic stream in a run (spawn schedules, per-aircraft action
//! sampling, minibatch shuffles) is keyed from the master seed through
//! [`mix`], so results never depend on worker scheduling.

/// SplitMix64 finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn mix(a: u64, b: u64) -> u64 {
    splitmix64(splitmix64(a) ^ b.wrapping_mul(0x2545_f491_4f6c_dd1d))
}

pub fn mix3(a: u64, b: u64, c: u64) -> u64 {
    mix(mix(a, b), c)
}

/// Stream tags, so that streams derived from the same seed never collide.
pub mod tag {
    pub const SPAWN: u64 = 0x5350_4157_4e00_0001;
    pub const ACTION: u64 = 0x4143_5449_4f4e_0002;
    pub const SECTOR: u64 = 0x5345_4354_4f52_0003;
    pub const SHUFFLE: u64 = 0x5348_5546_464c_0004;
    pub const INIT: u64 = 0x494e_4954_0000_0005;
    pub const EVAL: u64 = 0x4556_414c_0000_0006;
}
