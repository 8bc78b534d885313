//! Keyed random streams.
//!
//! Every consumer of randomness derives its own ChaCha stream from the run
//! seed plus a purpose tag and a tuple of integer keys (round, client,
//! server, ...). Streams never share state, so results do not depend on the
//! order in which work is scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Purpose tags separating the independent stream families.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Topology = 1,
    Data = 2,
    Eval = 3,
    Init = 4,
    Sampling = 5,
    Training = 6,
    Fading = 7,
    Mobility = 8,
    Probe = 9,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive an independent stream for `(seed, purpose, keys...)`.
pub fn stream(seed: u64, purpose: Purpose, keys: &[u64]) -> ChaCha8Rng {
    let mut h = splitmix64(seed ^ 0x6D73_6665_6461_7667);
    h = splitmix64(h ^ purpose as u64);
    for &k in keys {
        h = splitmix64(h ^ k);
    }
    let mut bytes = [0u8; 32];
    let mut s = h;
    for chunk in bytes.chunks_mut(8) {
        s = splitmix64(s);
        chunk.copy_from_slice(&s.to_le_bytes());
    }
    ChaCha8Rng::from_seed(bytes)
}
