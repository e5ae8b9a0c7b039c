//! Fixed reference color spaces: HSV, classic HSI, CIELAB (D65) and a
//! polarized HSV variant (HVI).
//!
//! Every space also has a network layout: one intensity channel followed by
//! two chroma channels, which is what the dual-branch network consumes.

mod diff;

use std::f64::consts::TAU;
use std::fmt;
use std::str::FromStr;
use std::sync::LazyLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::PlanarImage;
use crate::lhsi::{lhsi_to_rgb, rgb_to_lhsi, LhsiParams};

pub use diff::{decode_hsv_layout, decode_hvi, decode_lab_normalized};

// ---- HSV -------------------------------------------------------------------

/// Hexcone HSV with all three channels in `[0, 1]`. Grays get `H = S = 0`.
pub fn rgb_to_hsv_pixel(p: &[f64]) -> [f64; 3] {
    let (r, g, b) = (p[0], p[1], p[2]);
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let c = max - min;
    let s = if max > 0.0 { c / max } else { 0.0 };
    let h = if c == 0.0 {
        0.0
    } else if max == r {
        let h = (g - b) / c;
        if h < 0.0 {
            h + 6.0
        } else {
            h
        }
    } else if max == g {
        (b - r) / c + 2.0
    } else {
        (r - g) / c + 4.0
    };
    let h = h / 6.0;
    [if h >= 1.0 { 0.0 } else { h }, s, max]
}

pub fn hsv_to_rgb_pixel(hsv: &[f64]) -> [f64; 3] {
    let (h, s, v) = (hsv[0], hsv[1], hsv[2]);
    let f = |n: f64| {
        let k = (n + 6.0 * h).rem_euclid(6.0);
        v - v * s * k.min(4.0 - k).clamp(0.0, 1.0)
    };
    [f(5.0), f(3.0), f(1.0)]
}

pub fn rgb_to_hsv(img: &PlanarImage) -> Result<PlanarImage> {
    img.require_channels("rgb_to_hsv", 3)?;
    Ok(img.map_pixels(3, |p, o| o.copy_from_slice(&rgb_to_hsv_pixel(p))))
}

pub fn hsv_to_rgb(img: &PlanarImage) -> Result<PlanarImage> {
    img.require_channels("hsv_to_rgb", 3)?;
    Ok(img.map_pixels(3, |p, o| o.copy_from_slice(&hsv_to_rgb_pixel(p))))
}

// ---- HVI -------------------------------------------------------------------

/// `(V, S sin 2πH, S cos 2πH)` from the HSV hexcone.
pub fn rgb_to_hvi_pixel(p: &[f64]) -> [f64; 3] {
    let [h, s, v] = rgb_to_hsv_pixel(p);
    let (sn, cs) = (TAU * h).sin_cos();
    [v, s * sn, s * cs]
}

pub fn hvi_to_rgb_pixel(c: &[f64]) -> [f64; 3] {
    let s = (c[1] * c[1] + c[2] * c[2]).sqrt().min(1.0);
    let h = (c[1].atan2(c[2]) / TAU).rem_euclid(1.0);
    hsv_to_rgb_pixel(&[h, s, c[0].clamp(0.0, 1.0)])
}

pub fn rgb_to_hvi(img: &PlanarImage) -> Result<PlanarImage> {
    img.require_channels("rgb_to_hvi", 3)?;
    Ok(img.map_pixels(3, |p, o| o.copy_from_slice(&rgb_to_hvi_pixel(p))))
}

pub fn hvi_to_rgb(img: &PlanarImage) -> Result<PlanarImage> {
    img.require_channels("hvi_to_rgb", 3)?;
    Ok(img.map_pixels(3, |p, o| o.copy_from_slice(&hvi_to_rgb_pixel(p))))
}

// ---- CIELAB ----------------------------------------------------------------

pub(crate) const SRGB_ENCODE_THRESHOLD: f64 = 0.003_130_8;
pub(crate) const SRGB_DECODE_THRESHOLD: f64 = 12.92 * SRGB_ENCODE_THRESHOLD;

/// D65 reference white.
pub const WHITE_D65: [f64; 3] = [0.950_47, 1.0, 1.088_83];

pub(crate) const RGB_TO_XYZ: [[f64; 3]; 3] = [
    [0.412_456_4, 0.357_576_1, 0.180_437_5],
    [0.212_672_9, 0.715_152_2, 0.072_175_0],
    [0.019_333_9, 0.119_192_0, 0.950_304_1],
];

pub(crate) static XYZ_TO_RGB: LazyLock<[[f64; 3]; 3]> = LazyLock::new(|| invert3(&RGB_TO_XYZ));

fn invert3(m: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let c = |r0: usize, c0: usize, r1: usize, c1: usize| m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0];
    let cof = [
        [c(1, 1, 2, 2), -c(1, 0, 2, 2), c(1, 0, 2, 1)],
        [-c(0, 1, 2, 2), c(0, 0, 2, 2), -c(0, 0, 2, 1)],
        [c(0, 1, 1, 2), -c(0, 0, 1, 2), c(0, 0, 1, 1)],
    ];
    let det = m[0][0] * cof[0][0] + m[0][1] * cof[0][1] + m[0][2] * cof[0][2];
    let mut inv = [[0.0; 3]; 3];
    for (i, row) in inv.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = cof[j][i] / det;
        }
    }
    inv
}

pub fn srgb_to_linear(c: f64) -> f64 {
    if c < SRGB_DECODE_THRESHOLD {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

pub fn linear_to_srgb(l: f64) -> f64 {
    if l <= SRGB_ENCODE_THRESHOLD {
        12.92 * l
    } else {
        1.055 * l.powf(1.0 / 2.4) - 0.055
    }
}

const LAB_EPS: f64 = 216.0 / 24389.0; // (6/29)^3
const LAB_DELTA: f64 = 6.0 / 29.0;

fn lab_f(t: f64) -> f64 {
    if t > LAB_EPS {
        t.cbrt()
    } else {
        t / (3.0 * LAB_DELTA * LAB_DELTA) + 4.0 / 29.0
    }
}

fn lab_finv(f: f64) -> f64 {
    if f > LAB_DELTA {
        f * f * f
    } else {
        3.0 * LAB_DELTA * LAB_DELTA * (f - 4.0 / 29.0)
    }
}

fn mat_vec(m: &[[f64; 3]; 3], v: [f64; 3]) -> [f64; 3] {
    [
        m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
        m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
        m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
    ]
}

/// Unnormalized CIE L*a*b* of an sRGB pixel.
pub fn srgb_to_lab(p: &[f64]) -> [f64; 3] {
    let lin = [srgb_to_linear(p[0]), srgb_to_linear(p[1]), srgb_to_linear(p[2])];
    let xyz = mat_vec(&RGB_TO_XYZ, lin);
    let fx = lab_f(xyz[0] / WHITE_D65[0]);
    let fy = lab_f(xyz[1] / WHITE_D65[1]);
    let fz = lab_f(xyz[2] / WHITE_D65[2]);
    [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
}

/// Unnormalized L*a*b* back to sRGB, clamped to the cube.
pub fn lab_to_srgb(lab: &[f64]) -> [f64; 3] {
    let fy = (lab[0] + 16.0) / 116.0;
    let fx = fy + lab[1] / 500.0;
    let fz = fy - lab[2] / 200.0;
    let xyz = [
        WHITE_D65[0] * lab_finv(fx),
        WHITE_D65[1] * lab_finv(fy),
        WHITE_D65[2] * lab_finv(fz),
    ];
    let lin = mat_vec(&XYZ_TO_RGB, xyz);
    lin.map(|l| linear_to_srgb(l.clamp(0.0, 1.0)).clamp(0.0, 1.0))
}

pub const LAB_L_SCALE: f64 = 100.0;
pub const LAB_AB_SCALE: f64 = 128.0;

/// Network-facing CIELAB: `L*/100`, `a*/128`, `b*/128`, chroma clamped to `[-1, 1]`.
pub fn rgb_to_lab_pixel(p: &[f64]) -> [f64; 3] {
    let [l, a, b] = srgb_to_lab(p);
    [
        l / LAB_L_SCALE,
        (a / LAB_AB_SCALE).clamp(-1.0, 1.0),
        (b / LAB_AB_SCALE).clamp(-1.0, 1.0),
    ]
}

pub fn lab_to_rgb_pixel(c: &[f64]) -> [f64; 3] {
    lab_to_srgb(&[
        c[0].clamp(0.0, 1.0) * LAB_L_SCALE,
        c[1].clamp(-1.0, 1.0) * LAB_AB_SCALE,
        c[2].clamp(-1.0, 1.0) * LAB_AB_SCALE,
    ])
}

pub fn rgb_to_lab(img: &PlanarImage) -> Result<PlanarImage> {
    img.require_channels("rgb_to_lab", 3)?;
    Ok(img.map_pixels(3, |p, o| o.copy_from_slice(&rgb_to_lab_pixel(p))))
}

pub fn lab_to_rgb(img: &PlanarImage) -> Result<PlanarImage> {
    img.require_channels("lab_to_rgb", 3)?;
    Ok(img.map_pixels(3, |p, o| o.copy_from_slice(&lab_to_rgb_pixel(p))))
}

// ---- classic HSI -------------------------------------------------------------

/// LHSI with the gray diagonal as axis and identity maps.
pub fn rgb_to_hsi_classic(img: &PlanarImage) -> Result<PlanarImage> {
    rgb_to_lhsi(img, &LhsiParams::default())
}

pub fn hsi_classic_to_rgb(img: &PlanarImage) -> Result<PlanarImage> {
    lhsi_to_rgb(img, &LhsiParams::default())
}

// ---- space selection ---------------------------------------------------------

/// Color space the network operates in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Space {
    #[default]
    Lhsi,
    Hsv,
    Lab,
    Hvi,
    Hsi,
}

impl Space {
    pub const ALL: [Space; 5] = [Space::Lhsi, Space::Hsv, Space::Lab, Space::Hvi, Space::Hsi];

    pub fn name(self) -> &'static str {
        match self {
            Space::Lhsi => "lhsi",
            Space::Hsv => "hsv",
            Space::Lab => "lab",
            Space::Hvi => "hvi",
            Space::Hsi => "hsi",
        }
    }

    /// Whether the space carries learnable parameters.
    pub fn is_learnable(self) -> bool {
        self == Space::Lhsi
    }

    /// Plain 3-channel representation in the space's native channel order.
    pub fn forward(self, img: &PlanarImage, params: &LhsiParams) -> Result<PlanarImage> {
        match self {
            Space::Lhsi => rgb_to_lhsi(img, params),
            Space::Hsi => rgb_to_hsi_classic(img),
            Space::Hsv => rgb_to_hsv(img),
            Space::Lab => rgb_to_lab(img),
            Space::Hvi => rgb_to_hvi(img),
        }
    }

    pub fn inverse(self, img: &PlanarImage, params: &LhsiParams) -> Result<PlanarImage> {
        match self {
            Space::Lhsi => lhsi_to_rgb(img, params),
            Space::Hsi => hsi_classic_to_rgb(img),
            Space::Hsv => hsv_to_rgb(img),
            Space::Lab => lab_to_rgb(img),
            Space::Hvi => hvi_to_rgb(img),
        }
    }

    /// Network layout: intensity first, then the two chroma channels.
    /// Only HSV differs from its native order (`V, H, S`).
    pub fn to_layout(self, native: &[f64]) -> [f64; 3] {
        match self {
            Space::Hsv => [native[2], native[0], native[1]],
            _ => [native[0], native[1], native[2]],
        }
    }
}

impl fmt::Display for Space {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Space {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Space::ALL
            .into_iter()
            .find(|sp| sp.name() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::Config(format!("unknown color space '{s}' (lhsi|hsv|lab|hvi|hsi)")))
    }
}
