use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::PlanarImage;
use crate::lhsi::axis::{dot, max_radius, orthobasis, AxisParam, Vec3};
use crate::lhsi::map::{MapTable, PiecewiseMonotoneMap};

pub const DEFAULT_INTERVALS: usize = 32;
pub const DEFAULT_ALPHA_MIN: f64 = 0.1;
pub const DEFAULT_ALPHA_MAX: f64 = 10.0;

/// All learnable state of the color space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LhsiParams {
    pub axis: AxisParam,
    pub map_t: PiecewiseMonotoneMap,
    pub map_r: PiecewiseMonotoneMap,
    pub map_theta: PiecewiseMonotoneMap,
}

impl Default for LhsiParams {
    fn default() -> Self {
        Self::identity(DEFAULT_INTERVALS, DEFAULT_ALPHA_MIN, DEFAULT_ALPHA_MAX)
            .expect("default bounds are valid")
    }
}

impl LhsiParams {
    /// Diagonal axis with identity maps.
    pub fn identity(intervals: usize, alpha_min: f64, alpha_max: f64) -> Result<Self> {
        let map = PiecewiseMonotoneMap::identity(intervals, alpha_min, alpha_max)?;
        Ok(LhsiParams {
            axis: AxisParam::default(),
            map_t: map.clone(),
            map_r: map.clone(),
            map_theta: map,
        })
    }

    pub fn frame(&self) -> Result<LhsiFrame> {
        LhsiFrame::new(self)
    }
}

/// Geometry and lookup tables derived from [`LhsiParams`].
#[derive(Debug, Clone)]
pub struct LhsiFrame {
    pub n: Vec3,
    pub e1: Vec3,
    pub e2: Vec3,
    /// `a + b + c`
    pub axis_sum: f64,
    pub radius: f64,
    pub t: MapTable,
    pub r: MapTable,
    pub theta: MapTable,
}

impl LhsiFrame {
    pub fn new(params: &LhsiParams) -> Result<Self> {
        let n = params.axis.direction()?;
        let (e1, e2) = orthobasis(n);
        Ok(LhsiFrame {
            n,
            e1,
            e2,
            axis_sum: n[0] + n[1] + n[2],
            radius: max_radius(n),
            t: params.map_t.table(),
            r: params.map_r.table(),
            theta: params.map_theta.table(),
        })
    }

    /// Unmapped cylindrical coordinates `(t, r, theta)`, each in `[0, 1]`.
    pub fn cylindrical(&self, p: &[f64]) -> (f64, f64, f64) {
        let p = [p[0], p[1], p[2]];
        let t = dot(self.n, p) / self.axis_sum;
        let x1 = dot(self.e1, p);
        let x2 = dot(self.e2, p);
        let r = (x1 * x1 + x2 * x2).sqrt() / self.radius;
        let mut theta = x2.atan2(x1) / TAU;
        if theta < 0.0 {
            theta += 1.0;
        }
        (t.clamp(0.0, 1.0), r.clamp(0.0, 1.0), theta.clamp(0.0, 1.0))
    }

    pub fn encode_pixel(&self, p: &[f64], out: &mut [f64]) {
        let (t, r, theta) = self.cylindrical(p);
        let tm = self.t.eval(t);
        let rm = self.r.eval(r);
        let ang = TAU * self.theta.eval(theta);
        out[0] = tm;
        out[1] = rm * ang.sin();
        out[2] = rm * ang.cos();
    }

    /// Returns whether the saturation had to be clamped.
    pub fn decode_pixel(&self, c: &[f64], out: &mut [f64]) -> bool {
        let rm_raw = (c[1] * c[1] + c[2] * c[2]).sqrt();
        let clipped = rm_raw > 1.0 + 1e-6;
        let rm = rm_raw.min(1.0);
        let mut thm = c[1].atan2(c[2]) / TAU;
        if thm < 0.0 {
            thm += 1.0;
        }
        let t = self.t.invert(c[0].clamp(0.0, 1.0));
        let r = self.r.invert(rm);
        let theta = self.theta.invert(thm.clamp(0.0, 1.0));
        let t_raw = t * self.axis_sum;
        let r_raw = r * self.radius;
        let ang = TAU * theta;
        let (rc, rs) = (r_raw * ang.cos(), r_raw * ang.sin());
        for i in 0..3 {
            let v = t_raw * self.n[i] + rc * self.e1[i] + rs * self.e2[i];
            out[i] = v.clamp(0.0, 1.0);
        }
        clipped
    }
}

/// sRGB to the `(t', r' sin 2πθ', r' cos 2πθ')` representation.
pub fn rgb_to_lhsi(img: &PlanarImage, params: &LhsiParams) -> Result<PlanarImage> {
    img.require_channels("rgb_to_lhsi", 3)?;
    let frame = params.frame()?;
    Ok(img.map_pixels(3, |p, o| frame.encode_pixel(p, o)))
}

/// Inverse of [`rgb_to_lhsi`]; saturations above 1 and colors outside the
/// cube are clamped.
pub fn lhsi_to_rgb(img: &PlanarImage, params: &LhsiParams) -> Result<PlanarImage> {
    img.require_channels("lhsi_to_rgb", 3)?;
    let frame = params.frame()?;
    let mut clipped = 0usize;
    let out = img.map_pixels(3, |c, o| {
        if frame.decode_pixel(c, o) {
            clipped += 1;
        }
    });
    if clipped > 0 {
        log::warn!("lhsi_to_rgb: {clipped} pixel(s) out of gamut, saturation clamped");
    }
    if out.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("lhsi_to_rgb output".into()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn img(px: &[[f64; 3]]) -> PlanarImage {
        PlanarImage::new(1, px.len(), 3, px.iter().flatten().copied().collect()).unwrap()
    }

    #[test]
    fn black_maps_to_origin_and_back() {
        let p = LhsiParams::default();
        let black = img(&[[0.0; 3]]);
        let l = rgb_to_lhsi(&black, &p).unwrap();
        assert_eq!(l.data(), &[0.0, 0.0, 0.0]);
        assert_eq!(lhsi_to_rgb(&l, &p).unwrap().data(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn gray_under_diagonal_axis() {
        let p = LhsiParams::default();
        let l = rgb_to_lhsi(&img(&[[0.3; 3]]), &p).unwrap();
        assert!((l.data()[0] - 0.3).abs() < 1e-15);
        assert!(l.data()[1].abs() < 1e-15 && l.data()[2].abs() < 1e-15);
        let back = lhsi_to_rgb(&img(&[[0.6, 0.0, 0.0]]), &p).unwrap();
        assert!(back.data().iter().all(|v| (v - 0.6).abs() < 1e-14));
    }

    #[test]
    fn gray_luminance_is_axis_independent() {
        let mut p = LhsiParams::default();
        p.axis = AxisParam::new([0.48, 0.76, 0.45]);
        let l = rgb_to_lhsi(&img(&[[0.7; 3]]), &p).unwrap();
        assert!((l.data()[0] - 0.7).abs() < 1e-15);
    }

    #[test]
    fn wrong_channel_count_rejected() {
        let g = PlanarImage::new(1, 1, 1, vec![0.2]).unwrap();
        assert!(rgb_to_lhsi(&g, &LhsiParams::default()).is_err());
    }

    #[test]
    fn oversaturated_input_is_clamped() {
        let p = LhsiParams::default();
        let out = lhsi_to_rgb(&img(&[[0.5, 3.0, 0.0]]), &p).unwrap();
        assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
}
