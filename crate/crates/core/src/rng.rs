//! Seeded random streams.
//!
//! Every random draw in the crate goes through a [`SeededRng`] handed in by
//! the caller. Drivers that need several independent streams derive them
//! from `(seed, stage tag, index)` with [`derive_seed`], so a run is fully
//! determined by its top-level seed.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub type SeededRng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn fnv1a(tag: &str) -> u64 {
    tag.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Child seed for stage `tag`, repetition `index`.
pub fn derive_seed(seed: u64, tag: &str, index: u64) -> u64 {
    splitmix64(splitmix64(seed ^ fnv1a(tag)).wrapping_add(splitmix64(index)))
}

pub fn seeded(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Generator for stage `tag`, repetition `index` of a run seeded with `seed`.
pub fn stream(seed: u64, tag: &str, index: u64) -> SeededRng {
    seeded(derive_seed(seed, tag, index))
}

/// Matrix with i.i.d. `N(0, std^2)` entries, filled column by column.
pub fn gaussian_matrix<R: rand::Rng + ?Sized>(
    rows: usize,
    cols: usize,
    std: f64,
    rng: &mut R,
) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| {
        let z: f64 = StandardNormal.sample(rng);
        std * z
    })
}
