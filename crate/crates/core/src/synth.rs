//! Smooth synthetic images for toy-scale runs and tests.
//!
//! Red rises left to right, green rises top to bottom and blue carries a
//! low-frequency wave whose character depends on the category. Every piece
//! therefore carries a weak positional cue and adjacent strips match closely.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::tensor::Tensor;

/// Number of distinct synthetic categories.
pub const CATEGORIES: usize = 2;

pub fn category_name(k: usize) -> String {
    ["waves", "bands"][k % CATEGORIES].to_string()
}

/// One `[3, side, side]` image in `[-1, 1]`.
pub fn smooth_image(side: usize, category: usize, seed: u64) -> Tensor<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r0 = rng.gen_range(-0.8..-0.7);
    let ar = rng.gen_range(1.1..1.5);
    let br = rng.gen_range(-0.1..0.1);
    let g0 = rng.gen_range(-0.8..-0.7);
    let ag = rng.gen_range(1.1..1.5);
    let bg = rng.gen_range(-0.1..0.1);
    let b0 = rng.gen_range(-0.3..0.3);
    let fu = rng.gen_range(0.3..1.0);
    let fv = rng.gen_range(0.3..1.0);
    let phase = rng.gen_range(0.0..std::f64::consts::TAU);
    let mut data = vec![0f32; 3 * side * side];
    let last = (side - 1).max(1) as f64;
    for y in 0..side {
        for x in 0..side {
            let (u, v) = (x as f64 / last, y as f64 / last);
            let wave = match category % CATEGORIES {
                0 => (std::f64::consts::TAU * (fu * u + fv * v) + phase).sin(),
                _ => (std::f64::consts::TAU * fu * (u - v) + phase).cos(),
            };
            let px = [
                r0 + ar * u + br * v,
                g0 + ag * v + bg * u,
                b0 + 0.3 * wave,
            ];
            for (c, val) in px.into_iter().enumerate() {
                data[(c * side + y) * side + x] = val.clamp(-1.0, 1.0) as f32;
            }
        }
    }
    Tensor::from_vec(&[3, side, side], data).expect("shape matches")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn images_are_bounded_and_seeded() {
        let a = smooth_image(48, 0, 7);
        assert_eq!(a.shape(), &[3, 48, 48]);
        assert!(a.data().iter().all(|v| (-1.0..=1.0).contains(v)));
        assert_eq!(a, smooth_image(48, 0, 7));
        assert_ne!(a, smooth_image(48, 0, 8));
        assert_ne!(a, smooth_image(48, 1, 7));
    }

    #[test]
    fn red_rises_left_to_right() {
        let img = smooth_image(32, 1, 3);
        let d = img.data();
        assert!(d[31] > d[0]);
        let green = |y: usize| d[32 * 32 + y * 32];
        assert!(green(31) > green(0));
    }
}
