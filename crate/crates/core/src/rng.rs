//! Deterministic random streams.
//!
//! Every stochastic draw in the crate comes from a ChaCha stream keyed by
//! `(seed, domain, a, b)`, so results never depend on evaluation order or on
//! whether the `parallel` feature is enabled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream domains. Keeps streams used for different purposes disjoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    Topology = 1,
    ProcessNoise = 2,
    MeasurementNoise = 3,
    Filter = 4,
    Gossip = 5,
    Init = 6,
    Experiment = 7,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a seed with up to two indices into a new 64-bit seed.
pub fn derive_seed(seed: u64, domain: Domain, a: u64, b: u64) -> u64 {
    let mut h = splitmix64(seed ^ 0xA076_1D64_78BD_642F);
    h = splitmix64(h ^ (domain as u64));
    h = splitmix64(h ^ a);
    splitmix64(h ^ b.rotate_left(17))
}

pub fn stream(seed: u64, domain: Domain, a: u64, b: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, domain, a, b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let x: u64 = stream(7, Domain::Filter, 1, 2).gen();
        let y: u64 = stream(7, Domain::Filter, 1, 2).gen();
        let z: u64 = stream(7, Domain::Filter, 2, 1).gen();
        let w: u64 = stream(7, Domain::Gossip, 1, 2).gen();
        assert_eq!(x, y);
        assert_ne!(x, z);
        assert_ne!(x, w);
    }
}
