//! Seeded random streams.
//!
//! A master seed is split into named child streams (`init`, `program`,
//! `read`, `faults`, `data`, `quadrature`, ...). Each stream is derived by
//! hashing the stream name together with the master seed, so consuming more
//! draws from one stream never shifts the draws of another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The generator used for every stochastic quantity in the crate.
pub type StreamRng = ChaCha8Rng;

pub const STREAM_INIT: &str = "init";
pub const STREAM_PROGRAM: &str = "program";
pub const STREAM_READ: &str = "read";
pub const STREAM_FAULTS: &str = "faults";
pub const STREAM_DATA: &str = "data";
pub const STREAM_QUADRATURE: &str = "quadrature";
pub const STREAM_EVAL: &str = "eval";

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Deterministic 64-bit mix of a seed and an index.
pub fn mix(seed: u64, index: u64) -> u64 {
    splitmix64(seed ^ splitmix64(index.wrapping_add(0x632b_e59b_d9b4_e019)))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SeedTree {
    seed: u64,
}

impl SeedTree {
    pub fn new(master: u64) -> Self {
        SeedTree { seed: master }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Sub-tree for a named scope, e.g. one sweep point.
    pub fn child(&self, name: &str) -> SeedTree {
        SeedTree {
            seed: mix(self.seed, fnv1a(name.as_bytes())),
        }
    }

    /// Sub-tree for the `index`-th item of a parallel loop.
    pub fn indexed(&self, index: u64) -> SeedTree {
        SeedTree {
            seed: mix(self.seed, index),
        }
    }

    pub fn stream(&self, name: &str) -> StreamRng {
        StreamRng::seed_from_u64(self.child(name).seed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn streams_are_independent_of_consumption() {
        let tree = SeedTree::new(7);
        let mut a = tree.stream(STREAM_READ);
        let _burn: Vec<f64> = (0..100).map(|_| a.gen()).collect();
        let mut b1 = tree.stream(STREAM_PROGRAM);
        let mut b2 = SeedTree::new(7).stream(STREAM_PROGRAM);
        assert_eq!(b1.gen::<u64>(), b2.gen::<u64>());
    }

    #[test]
    fn named_streams_differ() {
        let tree = SeedTree::new(1);
        let x: u64 = tree.stream(STREAM_READ).gen();
        let y: u64 = tree.stream(STREAM_PROGRAM).gen();
        assert_ne!(x, y);
        assert_ne!(tree.indexed(0), tree.indexed(1));
    }
}
