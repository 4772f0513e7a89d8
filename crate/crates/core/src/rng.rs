//! Seed splitting. Every random stream in the simulator is a ChaCha8 generator
//! keyed by a hash of `(base seed, purpose tag, indices...)`, so streams for
//! different drops and blocks never overlap and results do not depend on how
//! work is scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::scalar::{Real, C};

pub type SimRng = ChaCha8Rng;

/// Purpose tags for derived streams.
pub mod tag {
    pub const TOPOLOGY: u64 = 0x746f_706f;
    pub const SHADOWING: u64 = 0x7368_6164;
    pub const EVALUATION: u64 = 0x6576_616c;
    pub const CALIBRATION: u64 = 0x6361_6c69;
    pub const PILOTS: u64 = 0x7069_6c6f;
    pub const DROP: u64 = 0x6472_6f70;
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Hash a base seed with a path of indices.
pub fn derive_seed(base: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(base), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

pub fn stream(base: u64, path: &[u64]) -> SimRng {
    SimRng::seed_from_u64(derive_seed(base, path))
}

/// Circularly-symmetric complex Gaussian with unit variance.
#[inline]
pub fn complex_gaussian<T: Real, R: rand::Rng + ?Sized>(rng: &mut R) -> C<T> {
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    let s = std::f64::consts::FRAC_1_SQRT_2;
    C::new(T::lit(re * s), T::lit(im * s))
}
