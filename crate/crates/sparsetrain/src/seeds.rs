//! Deterministic RNG stream derivation.
//!
//! Every stochastic component draws from its own ChaCha stream derived
//! from the master run seed. Sequential and parallel trainers derive the
//! same streams the same way, which is what makes a single-worker WASAP
//! run with a scripted scheduler bit-identical to sequential training.

use rand_chacha::ChaCha8Rng;
use rand_chacha::rand_core::SeedableRng;

pub type Rng = ChaCha8Rng;

const STREAM_INIT: u64 = 0;
const STREAM_EVOLVE: u64 = 1;
const STREAM_SYNTH: u64 = 2;
const STREAM_SPLIT: u64 = 3;
const STREAM_WORKER_BASE: u64 = 1_000;
const STREAM_LOCAL_EVOLVE_BASE: u64 = 2_000;

/// splitmix64 finalizer; decorrelates derived seeds from consecutive inputs.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn subseed(master: u64, stream: u64) -> u64 {
    mix(master ^ mix(stream))
}

pub fn rng_for(master: u64, stream: u64) -> Rng {
    Rng::seed_from_u64(subseed(master, stream))
}

/// Network weight initialization stream.
pub fn init_rng(master: u64) -> Rng {
    rng_for(master, STREAM_INIT)
}

/// Topology evolution stream (the server's, in parallel runs).
pub fn evolve_rng(master: u64) -> Rng {
    rng_for(master, STREAM_EVOLVE)
}

/// Per-worker stream driving shard shuffling and dropout. Sequential
/// training is worker 0.
pub fn worker_rng(master: u64, worker: usize) -> Rng {
    rng_for(master, STREAM_WORKER_BASE + worker as u64)
}

/// Per-worker evolution stream for WASAP phase two, where each replica
/// evolves its topology independently.
pub fn local_evolve_rng(master: u64, worker: usize) -> Rng {
    rng_for(master, STREAM_LOCAL_EVOLVE_BASE + worker as u64)
}

pub fn synth_rng(master: u64) -> Rng {
    rng_for(master, STREAM_SYNTH)
}

pub fn split_rng(master: u64) -> Rng {
    rng_for(master, STREAM_SPLIT)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng as _;

    #[test]
    fn streams_are_distinct_and_reproducible() {
        let mut a = worker_rng(7, 0);
        let mut a2 = worker_rng(7, 0);
        let mut b = worker_rng(7, 1);
        let mut e = evolve_rng(7);
        let xa: u64 = a.random();
        assert_eq!(xa, a2.random());
        assert_ne!(xa, b.random::<u64>());
        assert_ne!(xa, e.random::<u64>());
    }
}
