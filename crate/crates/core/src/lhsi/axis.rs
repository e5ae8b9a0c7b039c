use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = [f64; 3];

pub(crate) fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub(crate) fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

/// Corners of the unit RGB cube.
pub(crate) const CUBE_CORNERS: [Vec3; 8] = [
    [0.0, 0.0, 0.0],
    [1.0, 0.0, 0.0],
    [0.0, 1.0, 0.0],
    [0.0, 0.0, 1.0],
    [1.0, 1.0, 0.0],
    [1.0, 0.0, 1.0],
    [0.0, 1.0, 1.0],
    [1.0, 1.0, 1.0],
];

/// Componentwise absolute value followed by L2 normalization.
pub fn normalize_axis(raw: Vec3) -> Result<Vec3> {
    let a = [raw[0].abs(), raw[1].abs(), raw[2].abs()];
    let n = norm(a);
    if !(n > 0.0) || !n.is_finite() {
        return Err(Error::contract("normalize_axis", format!("degenerate axis {raw:?}")));
    }
    Ok([a[0] / n, a[1] / n, a[2] / n])
}

/// Whether the hue reference falls back from the red direction to green.
pub(crate) fn uses_green_reference(n: Vec3) -> bool {
    n[0].abs() > 0.9
}

/// Orthonormal pair spanning the chroma plane of `n`, with `{e1, e2, n}`
/// right-handed. `e1` is the Gram-Schmidt residual of `(1, 0, 0)`, or of
/// `(0, 1, 0)` when the axis is too close to red.
pub fn orthobasis(n: Vec3) -> (Vec3, Vec3) {
    let u = if uses_green_reference(n) {
        [0.0, 1.0, 0.0]
    } else {
        [1.0, 0.0, 0.0]
    };
    let d = dot(u, n);
    let r = [u[0] - d * n[0], u[1] - d * n[1], u[2] - d * n[2]];
    let l = norm(r);
    let e1 = [r[0] / l, r[1] / l, r[2] / l];
    (e1, cross(n, e1))
}

/// Index of the cube corner farthest from the axis line.
pub(crate) fn farthest_corner(n: Vec3) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, c) in CUBE_CORNERS.iter().enumerate() {
        let d = dot(*c, n);
        let p = [c[0] - d * n[0], c[1] - d * n[1], c[2] - d * n[2]];
        let l = norm(p);
        if l > best.1 {
            best = (i, l);
        }
    }
    best.0
}

/// Largest distance from the axis line over the RGB cube (attained at a corner).
pub fn max_radius(n: Vec3) -> f64 {
    let c = CUBE_CORNERS[farthest_corner(n)];
    let d = dot(c, n);
    norm([c[0] - d * n[0], c[1] - d * n[1], c[2] - d * n[2]])
}

/// Learnable luminance direction, stored as its unconstrained raw vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxisParam {
    pub raw: Vec3,
}

impl Default for AxisParam {
    fn default() -> Self {
        AxisParam { raw: [1.0, 1.0, 1.0] }
    }
}

impl AxisParam {
    pub fn new(raw: Vec3) -> Self {
        AxisParam { raw }
    }

    /// Unit direction in the nonnegative octant.
    pub fn direction(&self) -> Result<Vec3> {
        normalize_axis(self.raw)
    }
}
