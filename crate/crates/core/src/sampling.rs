//! Reproducible random chart points.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;

use crate::base_geometry::ProductBase;

/// Half-width of the sampling window on warped-line coordinates.
pub const LINE_HALF_WIDTH: f64 = 2.0;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform on circles, uniform on [-2, 2] along lines.
pub fn random_point<R: Rng>(base: &ProductBase, rng: &mut R) -> Vec<f64> {
    (0..base.chart_dim())
        .map(|i| {
            if base.is_periodic(i) {
                rng.gen_range(0.0..2.0 * PI)
            } else {
                rng.gen_range(-LINE_HALF_WIDTH..LINE_HALF_WIDTH)
            }
        })
        .collect()
}

pub fn sample_points(base: &ProductBase, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut r = rng(seed);
    (0..count).map(|_| random_point(base, &mut r)).collect()
}
