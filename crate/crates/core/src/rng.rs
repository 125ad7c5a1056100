//! Seeded, splittable random streams.
//!
//! Every stochastic operation takes a generator derived from a `(seed, stream)`
//! pair so that parallel work (pixels, realizations, dataset samples) can be
//! scheduled in any order and still produce identical output.

use rand_pcg::Pcg64Mcg;

/// Identifies an independent random stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RngHandle {
    pub seed: u64,
    pub stream: u64,
}

pub type SimRng = Pcg64Mcg;

impl RngHandle {
    pub fn new(seed: u64, stream: u64) -> Self {
        Self { seed, stream }
    }

    /// Generator for this stream: 128-bit multiplicative PCG whose state is
    /// hashed from `(seed, stream)`. Output is platform independent.
    pub fn rng(&self) -> SimRng {
        let a = splitmix(self.seed);
        let b = splitmix(a ^ self.stream);
        let c = splitmix(b.wrapping_add(self.stream));
        // the generator forces the low bit to 1, so `b` (unique per stream) goes high
        Pcg64Mcg::new(((b as u128) << 64) | (a ^ c) as u128)
    }

    /// Derives a child handle; children of distinct `(stream, index)` pairs
    /// never collide with each other.
    pub fn child(&self, index: u64) -> Self {
        Self {
            seed: splitmix(self.seed ^ splitmix(self.stream.wrapping_add(0x5851_f42d_4c95_7f2d))),
            stream: index,
        }
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
