#![allow(dead_code)]

/// Sharma, Wu and Dalal (2005) CIEDE2000 test data: (L1, a1, b1, L2, a2, b2, dE).
pub const SHARMA_PAIRS: [[f64; 7]; 34] = [
    [50.0, 2.6772, -79.7751, 50.0, 0.0, -82.7485, 2.0425],
    [50.0, 3.1571, -77.2803, 50.0, 0.0, -82.7485, 2.8615],
    [50.0, 2.8361, -74.0200, 50.0, 0.0, -82.7485, 3.4412],
    [50.0, -1.3802, -84.2814, 50.0, 0.0, -82.7485, 1.0000],
    [50.0, -1.1848, -84.8006, 50.0, 0.0, -82.7485, 1.0000],
    [50.0, -0.9009, -85.5211, 50.0, 0.0, -82.7485, 1.0000],
    [50.0, 0.0, 0.0, 50.0, -1.0, 2.0, 2.3669],
    [50.0, -1.0, 2.0, 50.0, 0.0, 0.0, 2.3669],
    [50.0, 2.49, -0.001, 50.0, -2.49, 0.0009, 7.1792],
    [50.0, 2.49, -0.001, 50.0, -2.49, 0.0010, 7.1792],
    [50.0, 2.49, -0.001, 50.0, -2.49, 0.0011, 7.2195],
    [50.0, 2.49, -0.001, 50.0, -2.49, 0.0012, 7.2195],
    [50.0, -0.001, 2.49, 50.0, 0.0009, -2.49, 4.8045],
    [50.0, -0.001, 2.49, 50.0, 0.0010, -2.49, 4.8045],
    [50.0, -0.001, 2.49, 50.0, 0.0011, -2.49, 4.7461],
    [50.0, 2.5, 0.0, 50.0, 0.0, -2.5, 4.3065],
    [50.0, 2.5, 0.0, 73.0, 25.0, -18.0, 27.1492],
    [50.0, 2.5, 0.0, 61.0, -5.0, 29.0, 22.8977],
    [50.0, 2.5, 0.0, 56.0, -27.0, -3.0, 31.9030],
    [50.0, 2.5, 0.0, 58.0, 24.0, 15.0, 19.4535],
    [50.0, 2.5, 0.0, 50.0, 3.1736, 0.5854, 1.0000],
    [50.0, 2.5, 0.0, 50.0, 3.2972, 0.0, 1.0000],
    [50.0, 2.5, 0.0, 50.0, 1.8634, 0.5757, 1.0000],
    [50.0, 2.5, 0.0, 50.0, 3.2592, 0.3350, 1.0000],
    [60.2574, -34.0099, 36.2677, 60.4626, -34.1751, 39.4387, 1.2644],
    [63.0109, -31.0961, -5.8663, 62.8187, -29.7946, -4.0864, 1.2630],
    [61.2901, 3.7196, -5.3901, 61.4292, 2.2480, -4.9620, 1.8731],
    [35.0831, -44.1164, 3.7933, 35.0232, -40.0716, 1.5901, 1.8645],
    [22.7233, 20.0904, -46.6940, 23.0331, 14.9730, -42.5619, 2.0373],
    [36.4612, 47.8580, 18.3852, 36.2715, 50.5065, 21.2231, 1.4146],
    [90.8027, -2.0831, 1.4410, 91.1528, -1.6435, 0.0447, 1.4441],
    [90.9257, -0.5406, -0.9208, 88.6381, -0.8985, -0.7239, 1.5381],
    [6.7747, -0.2908, -2.4247, 5.8714, -0.0985, -2.2286, 0.6377],
    [2.0776, 0.0795, -1.1350, 0.9033, -0.0636, -0.5514, 0.9082],
];

use lhsi_core::lhsi::{AxisParam, LhsiParams, PiecewiseMonotoneMap, DEFAULT_ALPHA_MAX, DEFAULT_ALPHA_MIN};
use lhsi_core::dclan::ssm_discretize;
use lhsi_core::numerics::Tensor;
use lhsi_core::PlanarImage;
use rand::Rng;

pub fn random_image(rng: &mut impl Rng, h: usize, w: usize) -> PlanarImage {
    PlanarImage::from_fn(h, w, 3, |_, _| (0..3).map(|_| rng.gen()).collect()).unwrap()
}

pub fn random_map(rng: &mut impl Rng, intervals: usize) -> PiecewiseMonotoneMap {
    let u = (0..intervals).map(|_| rng.gen_range(-3.0..3.0)).collect();
    PiecewiseMonotoneMap::from_raw(u, DEFAULT_ALPHA_MIN, DEFAULT_ALPHA_MAX).unwrap()
}

/// Random axis (any sign, bounded away from zero) and random maps.
pub fn random_params(rng: &mut impl Rng, intervals: usize) -> LhsiParams {
    let raw = [0; 3].map(|_| {
        let v: f64 = rng.gen_range(0.05..1.0);
        if rng.gen() {
            v
        } else {
            -v
        }
    });
    LhsiParams {
        axis: AxisParam::new(raw),
        map_t: random_map(rng, intervals),
        map_r: random_map(rng, intervals),
        map_theta: random_map(rng, intervals),
    }
}

/// The recurrence unrolled one step at a time with explicit discretization.
pub fn naive_scan(x: &Tensor, delta: &Tensor, a: &Tensor, b: &Tensor, c: &Tensor) -> Vec<f64> {
    let (l, ch) = (x.shape()[0], x.shape()[1]);
    let n = a.shape()[1];
    let mut h = vec![vec![0.0; n]; ch];
    let mut y = vec![0.0; l * ch];
    for t in 0..l {
        for i in 0..ch {
            let d = delta.data()[t * ch + i];
            let arow = &a.data()[i * n..(i + 1) * n];
            let brow = &b.data()[t * n..(t + 1) * n];
            let (ab, bb) = ssm_discretize(arow, brow, &vec![d; n]).unwrap();
            let mut acc = 0.0;
            for s in 0..n {
                h[i][s] = ab[s] * h[i][s] + bb[s] * x.data()[t * ch + i];
                acc += c.data()[t * n + s] * h[i][s];
            }
            y[t * ch + i] = acc;
        }
    }
    y
}
