//! Seeded substreams. Every random object is drawn from a ChaCha8 stream
//! selected by `(seed, domain, index)`, so results do not depend on thread
//! count or evaluation order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const RNG_NAME: &str = "ChaCha8Rng, stream = (splitmix64(seed ^ domain), index)";

/// Independent families of draws sharing one user seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Domain {
    Brownian,
    WhiteNoise,
    Ensemble,
    Cell,
}

impl Domain {
    fn tag(self) -> u64 {
        match self {
            Domain::Brownian => 0x4252_4f57_4e00_0001,
            Domain::WhiteNoise => 0x5748_4954_4500_0002,
            Domain::Ensemble => 0x454e_5345_4d00_0003,
            Domain::Cell => 0x4345_4c4c_0000_0004,
        }
    }
}

pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Generator for substream `index` of `domain` under `seed`.
pub fn substream(seed: u64, domain: Domain, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seed ^ domain.tag()));
    rng.set_stream(index);
    rng
}

/// Seed for an independent child job, e.g. ensemble member or experiment cell.
pub fn derive_seed(seed: u64, child: u64) -> u64 {
    splitmix64(splitmix64(seed ^ Domain::Cell.tag()) ^ splitmix64(child.wrapping_add(1)))
}
