//! Differentiable inverses of the fixed spaces, in network layout.

use std::f64::consts::TAU;

use crate::error::Result;
use crate::numerics::{Tape, Tensor, Var};
use crate::refspaces::{
    LAB_AB_SCALE, LAB_L_SCALE, SRGB_ENCODE_THRESHOLD, WHITE_D65, XYZ_TO_RGB,
};

/// `mask * a + (1 - mask) * b` for a constant 0/1 mask.
fn select(tape: &Tape, mask: Vec<f64>, a: Var, b: Var) -> Result<Var> {
    let shape = tape.shape(a);
    let inv: Vec<f64> = mask.iter().map(|m| 1.0 - m).collect();
    let ma = tape.mul(a, tape.constant(Tensor::new(shape.clone(), mask)?))?;
    let mb = tape.mul(b, tape.constant(Tensor::new(shape, inv)?))?;
    tape.add(ma, mb)
}

fn columns(tape: &Tape, rep: Var) -> Result<(Var, Var, Var)> {
    let p = tape.split(rep, 1, &[1, 1, 1])?;
    Ok((p[0], p[1], p[2]))
}

/// HSV channels (each `[P, 1]`) to `[P, 3]` sRGB.
fn hsv_columns_to_rgb(tape: &Tape, h: Var, s: Var, v: Var) -> Result<Var> {
    let s = tape.clamp(s, 0.0, 1.0)?;
    let v = tape.clamp(v, 0.0, 1.0)?;
    let vs = tape.mul(v, s)?;
    let channel = |n: f64| -> Result<Var> {
        let k = tape.affine(h, 6.0, n);
        // k mod 6 with the wrap count held constant.
        let wraps: Vec<f64> = tape.with_data(k, |d| d.iter().map(|&x| -6.0 * (x / 6.0).floor()).collect());
        let k = tape.add(k, tape.constant(Tensor::new(tape.shape(k), wraps)?))?;
        let tri = tape.clamp(tape.minimum(k, tape.affine(k, -1.0, 4.0))?, 0.0, 1.0)?;
        tape.sub(v, tape.mul(vs, tri)?)
    };
    tape.concat(&[channel(5.0)?, channel(3.0)?, channel(1.0)?], 1)
}

/// Network-layout HSV `(V, H, S)` to sRGB.
pub fn decode_hsv_layout(tape: &Tape, rep: Var) -> Result<Var> {
    let (v, h, s) = columns(tape, rep)?;
    hsv_columns_to_rgb(tape, h, s, v)
}

/// `(V, S sin 2πH, S cos 2πH)` to sRGB.
pub fn decode_hvi(tape: &Tape, rep: Var) -> Result<Var> {
    let (v, c1, c2) = columns(tape, rep)?;
    let s = tape.sqrt(tape.add(tape.mul(c1, c1)?, tape.mul(c2, c2)?)?);
    let h = tape.div(tape.atan2(c1, c2)?, tape.scalar_constant(TAU))?;
    hsv_columns_to_rgb(tape, h, s, v)
}

/// Normalized `(L*/100, a*/128, b*/128)` to sRGB.
pub fn decode_lab_normalized(tape: &Tape, rep: Var) -> Result<Var> {
    const DELTA: f64 = 6.0 / 29.0;
    let (l, a, b) = columns(tape, rep)?;
    let l = tape.clamp(l, 0.0, 1.0)?;
    let a = tape.clamp(a, -1.0, 1.0)?;
    let b = tape.clamp(b, -1.0, 1.0)?;
    let fy = tape.affine(l, LAB_L_SCALE / 116.0, 16.0 / 116.0);
    let fx = tape.add(fy, tape.scale(a, LAB_AB_SCALE / 500.0))?;
    let fz = tape.sub(fy, tape.scale(b, LAB_AB_SCALE / 200.0))?;
    let finv = |f: Var, white: f64| -> Result<Var> {
        let mask: Vec<f64> = tape.with_data(f, |d| d.iter().map(|&x| if x > DELTA { 1.0 } else { 0.0 }).collect());
        let cube = tape.mul(tape.mul(f, f)?, f)?;
        let lin = tape.affine(f, 3.0 * DELTA * DELTA, -3.0 * DELTA * DELTA * 4.0 / 29.0);
        Ok(tape.scale(select(tape, mask, cube, lin)?, white))
    };
    let xyz = tape.concat(
        &[finv(fx, WHITE_D65[0])?, finv(fy, WHITE_D65[1])?, finv(fz, WHITE_D65[2])?],
        1,
    )?;
    let m = *XYZ_TO_RGB;
    let mt: Vec<f64> = (0..3).flat_map(|k| (0..3).map(move |j| m[j][k])).collect();
    let lin = tape.matmul(xyz, tape.constant(Tensor::new(vec![3, 3], mt)?))?;
    let lin = tape.clamp(lin, 0.0, 1.0)?;
    let mask: Vec<f64> = tape.with_data(lin, |d| {
        d.iter().map(|&x| if x <= SRGB_ENCODE_THRESHOLD { 1.0 } else { 0.0 }).collect()
    });
    let low = tape.scale(lin, 12.92);
    let safe = tape.clamp(lin, SRGB_ENCODE_THRESHOLD, 1.0)?;
    let high = tape.affine(tape.exp(tape.scale(tape.log(safe), 1.0 / 2.4)), 1.055, -0.055);
    tape.clamp(select(tape, mask, low, high)?, 0.0, 1.0)
}
