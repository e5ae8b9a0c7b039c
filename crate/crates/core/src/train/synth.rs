use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::image::PlanarImage;

pub const CAST_GAMMA: f64 = 2.2;
pub const GAIN_RANGE: (f64, f64) = (0.6, 1.4);

/// Per-channel gains drawn uniformly from [`GAIN_RANGE`].
pub fn draw_gains(seed: u64) -> [f64; 3] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    [0; 3].map(|_| rng.gen_range(GAIN_RANGE.0..=GAIN_RANGE.1))
}

/// Applies channel gains in gamma-decoded space and re-encodes, clamped.
pub fn apply_gains(img: &PlanarImage, gains: [f64; 3]) -> PlanarImage {
    img.map_pixels(3, |p, o| {
        for c in 0..3 {
            let lin = p[c].clamp(0.0, 1.0).powf(CAST_GAMMA) * gains[c];
            o[c] = lin.clamp(0.0, 1.0).powf(1.0 / CAST_GAMMA);
        }
    })
}

/// Synthetic white-balance error, deterministic per `(img, seed)`.
pub fn synth_corrupt(img: &PlanarImage, seed: u64) -> PlanarImage {
    apply_gains(img, draw_gains(seed))
}

/// A smooth synthetic scene: a neutral shaded backdrop with a few soft
/// colored blobs, so that a global cast is visible in the achromatic parts.
pub fn synthetic_scene(size: usize, seed: u64) -> PlanarImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = rng.gen_range(0.25..0.65);
    let (gy, gx) = (rng.gen_range(-0.25..0.25), rng.gen_range(-0.25..0.25));
    let blobs: Vec<([f64; 2], f64, [f64; 3], f64)> = (0..rng.gen_range(2..=5))
        .map(|_| {
            let center = [rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)];
            let radius = rng.gen_range(0.05..0.16);
            let color = [0; 3].map(|_| rng.gen_range(0.05..0.95));
            let weight = rng.gen_range(0.5..1.0);
            (center, radius, color, weight)
        })
        .collect();
    let n = size as f64;
    PlanarImage::from_fn(size, size, 3, |y, x| {
        let (v, u) = ((y as f64 + 0.5) / n, (x as f64 + 0.5) / n);
        let shade = (base + gy * (v - 0.5) + gx * (u - 0.5)).clamp(0.02, 0.98);
        let mut px = [shade; 3];
        for (c, r, col, w) in &blobs {
            let d2 = (v - c[0]).powi(2) + (u - c[1]).powi(2);
            let a = w * (-d2 / (2.0 * r * r)).exp();
            for k in 0..3 {
                px[k] = px[k] * (1.0 - a) + col[k] * a;
            }
        }
        px.to_vec()
    })
    .expect("non-empty scene")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_gains_are_identity() {
        let img = synthetic_scene(8, 1);
        assert!(apply_gains(&img, [1.0; 3]).max_abs_diff(&img) < 1e-15);
    }

    #[test]
    fn corruption_is_seeded() {
        let img = synthetic_scene(8, 2);
        assert_eq!(synth_corrupt(&img, 9), synth_corrupt(&img, 9));
        assert_ne!(synth_corrupt(&img, 9), synth_corrupt(&img, 10));
        let g = draw_gains(4);
        assert!(g.iter().all(|v| (0.6..=1.4).contains(v)));
    }

    #[test]
    fn warm_cast_on_mid_gray() {
        let gray = PlanarImage::filled(1, 1, &[0.5; 3]).unwrap();
        let p = apply_gains(&gray, [1.4, 1.0, 0.6]);
        let d = p.data();
        assert!(d[0] > d[1] && d[1] > d[2]);
        assert!((d[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn scenes_are_in_gamut_and_seeded() {
        let a = synthetic_scene(16, 3);
        assert!(a.data().iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(a, synthetic_scene(16, 3));
    }
}
