//! Tape versions of the LHSI transforms.
//!
//! These follow the arithmetic of [`LhsiFrame`](super::LhsiFrame) operation
//! by operation, so forward values agree with the plain implementation up to
//! the last bit in all but pathological cases. Interval selection and the
//! hue wrap are taken from forward values and carry no gradient.

use std::f64::consts::TAU;
use std::rc::Rc;

use crate::error::Result;
use crate::lhsi::axis::{farthest_corner, uses_green_reference, CUBE_CORNERS};
use crate::lhsi::transform::LhsiParams;
use crate::numerics::{Tape, Tensor, Var, PAD};

/// Leaves holding [`LhsiParams`] on a tape.
#[derive(Debug, Clone, Copy)]
pub struct LhsiVars {
    pub axis: Var,
    pub map_t: Var,
    pub map_r: Var,
    pub map_theta: Var,
    alpha_min: f64,
    alpha_max: f64,
}

/// Raw parameters of one monotone map, bound on a tape.
#[derive(Debug, Clone, Copy)]
pub struct MapVar {
    pub raw: Var,
    pub alpha_min: f64,
    pub alpha_max: f64,
}

struct MapNodes {
    piece: Var,
    cum: Var,
    total: Var,
    intervals: usize,
}

impl MapVar {
    fn nodes(&self, tape: &Tape) -> Result<MapNodes> {
        let m = tape.shape(self.raw)[0];
        let alpha = tape.affine(tape.sigmoid(self.raw), self.alpha_max - self.alpha_min, self.alpha_min);
        let piece = tape.scale(alpha, 1.0 / m as f64);
        let cum = tape.cumsum(piece);
        let total = tape.gather(cum, Rc::new(vec![m - 1]), &[1])?;
        Ok(MapNodes {
            piece,
            cum,
            total,
            intervals: m,
        })
    }

    /// Forward map of a flat `[P]` tensor; inputs are clamped to `[0, 1]`.
    pub fn forward(&self, tape: &Tape, v: Var) -> Result<Var> {
        let nodes = self.nodes(tape)?;
        let m = nodes.intervals;
        let v = tape.clamp(v, 0.0, 1.0)?;
        let ks: Vec<usize> = tape.with_data(v, |d| {
            d.iter()
                .map(|&x| ((x * m as f64).floor().max(0.0) as usize).min(m - 1))
                .collect()
        });
        let len = ks.len();
        let prev: Vec<usize> = ks.iter().map(|&k| if k == 0 { PAD } else { k - 1 }).collect();
        let neg_k: Vec<f64> = ks.iter().map(|&k| -(k as f64)).collect();
        let prefix = tape.gather(nodes.cum, Rc::new(prev), &[len])?;
        let slope = tape.gather(nodes.piece, Rc::new(ks), &[len])?;
        let frac = tape.add(tape.scale(v, m as f64), tape.constant(Tensor::from_vec(neg_k)))?;
        let num = tape.add(prefix, tape.mul(slope, frac)?)?;
        tape.div(num, nodes.total)
    }

    /// Inverse map of a flat `[P]` tensor; inputs are clamped to `[0, 1]`.
    pub fn inverse(&self, tape: &Tape, y: Var) -> Result<Var> {
        let nodes = self.nodes(tape)?;
        let m = nodes.intervals;
        let y = tape.clamp(y, 0.0, 1.0)?;
        let cum = tape.data(nodes.cum);
        let total = cum[m - 1];
        let ks: Vec<usize> = tape.with_data(y, |d| {
            d.iter()
                .map(|&yv| {
                    let target = yv * total;
                    // prefix[k] = cum[k - 1]; find the largest k < M with prefix[k] <= target.
                    let count = 1 + cum[..m - 1].partition_point(|&p| p <= target);
                    count - 1
                })
                .collect()
        });
        let len = ks.len();
        let prev: Vec<usize> = ks.iter().map(|&k| if k == 0 { PAD } else { k - 1 }).collect();
        let kf: Vec<f64> = ks.iter().map(|&k| k as f64).collect();
        let prefix = tape.gather(nodes.cum, Rc::new(prev), &[len])?;
        let slope = tape.gather(nodes.piece, Rc::new(ks), &[len])?;
        let target = tape.mul(y, nodes.total)?;
        let frac = tape.div(tape.sub(target, prefix)?, slope)?;
        let pos = tape.add(frac, tape.constant(Tensor::from_vec(kf)))?;
        let v = tape.div(pos, tape.scalar_constant(m as f64))?;
        tape.clamp(v, 0.0, 1.0)
    }
}

/// Axis geometry on the tape.
struct FrameVars {
    /// `[3, 1]` columns for projecting `[P, 3]` pixels.
    n_col: Var,
    e1_col: Var,
    e2_col: Var,
    /// `[1, 3]` rows for reconstruction.
    n_row: Var,
    e1_row: Var,
    e2_row: Var,
    axis_sum: Var,
    radius: Var,
}

fn frame(tape: &Tape, axis: Var) -> Result<FrameVars> {
    let a = tape.abs(axis);
    let len = tape.sqrt(tape.sum(tape.mul(a, a)?));
    let n = tape.div(a, len)?;
    let nv = tape.data(n);
    let reference = if uses_green_reference([nv[0], nv[1], nv[2]]) { 1 } else { 0 };
    let mut u = vec![0.0; 3];
    u[reference] = 1.0;
    let d = tape.gather(n, Rc::new(vec![reference]), &[1])?;
    let r = tape.sub(tape.constant(Tensor::from_vec(u)), tape.mul(n, d)?)?;
    let rlen = tape.sqrt(tape.sum(tape.mul(r, r)?));
    let e1 = tape.div(r, rlen)?;
    let pick = |v: Var, idx: [usize; 3]| tape.gather(v, Rc::new(idx.to_vec()), &[3]);
    let e2 = tape.sub(
        tape.mul(pick(n, [1, 2, 0])?, pick(e1, [2, 0, 1])?)?,
        tape.mul(pick(n, [2, 0, 1])?, pick(e1, [1, 2, 0])?)?,
    )?;
    let axis_sum = tape.sum(n);
    let corner = CUBE_CORNERS[farthest_corner([nv[0], nv[1], nv[2]])];
    let cd = tape.sum(tape.mul(n, tape.constant(Tensor::from_vec(corner.to_vec())))?);
    let perp = tape.sub(tape.constant(Tensor::from_vec(corner.to_vec())), tape.mul(n, cd)?)?;
    let radius = tape.sqrt(tape.sum(tape.mul(perp, perp)?));
    Ok(FrameVars {
        n_col: tape.reshape(n, &[3, 1])?,
        e1_col: tape.reshape(e1, &[3, 1])?,
        e2_col: tape.reshape(e2, &[3, 1])?,
        n_row: tape.reshape(n, &[1, 3])?,
        e1_row: tape.reshape(e1, &[1, 3])?,
        e2_row: tape.reshape(e2, &[1, 3])?,
        axis_sum,
        radius,
    })
}

/// `theta / 2π` wrapped into `[0, 1]`, from `atan2(y, x)`.
fn unit_angle(tape: &Tape, y: Var, x: Var) -> Result<Var> {
    let raw = tape.div(tape.atan2(y, x)?, tape.scalar_constant(TAU))?;
    let shift: Vec<f64> = tape.with_data(raw, |d| d.iter().map(|&v| if v < 0.0 { 1.0 } else { 0.0 }).collect());
    let shape = tape.shape(raw);
    let wrapped = tape.add(raw, tape.constant(Tensor::new(shape, shift)?))?;
    tape.clamp(wrapped, 0.0, 1.0)
}

impl LhsiVars {
    /// Binds `params` as learnable leaves (or constants when `learnable` is false).
    pub fn bind(tape: &Tape, params: &LhsiParams, learnable: bool) -> Self {
        let leaf = |t: Tensor| if learnable { tape.param(t) } else { tape.constant(t) };
        LhsiVars {
            axis: leaf(Tensor::from_vec(params.axis.raw.to_vec())),
            map_t: leaf(Tensor::from_vec(params.map_t.raw().to_vec())),
            map_r: leaf(Tensor::from_vec(params.map_r.raw().to_vec())),
            map_theta: leaf(Tensor::from_vec(params.map_theta.raw().to_vec())),
            alpha_min: params.map_t.alpha_min(),
            alpha_max: params.map_t.alpha_max(),
        }
    }

    /// Rebinds from explicit leaves (used by gradient checks).
    pub fn from_vars(axis: Var, map_t: Var, map_r: Var, map_theta: Var, alpha_min: f64, alpha_max: f64) -> Self {
        LhsiVars {
            axis,
            map_t,
            map_r,
            map_theta,
            alpha_min,
            alpha_max,
        }
    }

    fn map(&self, raw: Var) -> MapVar {
        MapVar {
            raw,
            alpha_min: self.alpha_min,
            alpha_max: self.alpha_max,
        }
    }

    /// `[P, 3]` sRGB pixels to `[P, 3]` LHSI.
    pub fn encode(&self, tape: &Tape, rgb: Var) -> Result<Var> {
        let p = tape.shape(rgb)[0];
        let f = frame(tape, self.axis)?;
        let t = tape.clamp(tape.div(tape.matmul(rgb, f.n_col)?, f.axis_sum)?, 0.0, 1.0)?;
        let x1 = tape.matmul(rgb, f.e1_col)?;
        let x2 = tape.matmul(rgb, f.e2_col)?;
        let rr = tape.sqrt(tape.add(tape.mul(x1, x1)?, tape.mul(x2, x2)?)?);
        let r = tape.clamp(tape.div(rr, f.radius)?, 0.0, 1.0)?;
        let theta = unit_angle(tape, x2, x1)?;
        let flat = |v: Var| tape.reshape(v, &[p]);
        let tm = self.map(self.map_t).forward(tape, flat(t)?)?;
        let rm = self.map(self.map_r).forward(tape, flat(r)?)?;
        let ang = tape.scale(self.map(self.map_theta).forward(tape, flat(theta)?)?, TAU);
        let c1 = tape.mul(rm, tape.sin(ang))?;
        let c2 = tape.mul(rm, tape.cos(ang))?;
        let col = |v: Var| tape.reshape(v, &[p, 1]);
        tape.concat(&[col(tm)?, col(c1)?, col(c2)?], 1)
    }

    /// `[P, 3]` LHSI to `[P, 3]` sRGB, clamped to the unit cube.
    pub fn decode(&self, tape: &Tape, rep: Var) -> Result<Var> {
        let p = tape.shape(rep)[0];
        let f = frame(tape, self.axis)?;
        let parts = tape.split(rep, 1, &[1, 1, 1])?;
        let (c0, c1, c2) = (parts[0], parts[1], parts[2]);
        let rm = tape.clamp(tape.sqrt(tape.add(tape.mul(c1, c1)?, tape.mul(c2, c2)?)?), 0.0, 1.0)?;
        let thm = unit_angle(tape, c1, c2)?;
        let flat = |v: Var| tape.reshape(v, &[p]);
        let col = |v: Var| tape.reshape(v, &[p, 1]);
        let t = self.map(self.map_t).inverse(tape, flat(c0)?)?;
        let r = self.map(self.map_r).inverse(tape, flat(rm)?)?;
        let theta = self.map(self.map_theta).inverse(tape, flat(thm)?)?;
        let t_raw = col(tape.mul(t, f.axis_sum)?)?;
        let r_raw = tape.mul(r, f.radius)?;
        let ang = tape.scale(theta, TAU);
        let rc = col(tape.mul(r_raw, tape.cos(ang))?)?;
        let rs = col(tape.mul(r_raw, tape.sin(ang))?)?;
        let rgb = tape.add(
            tape.add(tape.matmul(t_raw, f.n_row)?, tape.matmul(rc, f.e1_row)?)?,
            tape.matmul(rs, f.e2_row)?,
        )?;
        tape.clamp(rgb, 0.0, 1.0)
    }
}
