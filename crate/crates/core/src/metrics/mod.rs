//! White-balance error metrics and their per-dataset summaries.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::PlanarImage;
use crate::refspaces::srgb_to_lab;

/// Mean and quartiles of a per-image error list.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: f64,
    pub q1: f64,
    pub q2: f64,
    pub q3: f64,
}

/// Scores for one predicted/ground-truth pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImageScores {
    pub mse: f64,
    pub mae_deg: f64,
    pub de2000: f64,
}

fn check_pair(op: &'static str, pred: &PlanarImage, gt: &PlanarImage) -> Result<()> {
    pred.require_same_shape(op, gt)?;
    pred.require_channels(op, 3)
}

/// Mean squared error on the 8-bit scale.
pub fn mse(pred: &PlanarImage, gt: &PlanarImage) -> Result<f64> {
    check_pair("mse", pred, gt)?;
    let sum: f64 = pred
        .data()
        .iter()
        .zip(gt.data())
        .map(|(p, g)| {
            let d = 255.0 * p - 255.0 * g;
            d * d
        })
        .sum();
    Ok(sum / pred.data().len() as f64)
}

/// Mean per-pixel angle between RGB vectors, in degrees. Pixels where
/// either vector is (numerically) black contribute 0.
pub fn angular_mae(pred: &PlanarImage, gt: &PlanarImage) -> Result<f64> {
    check_pair("angular_mae", pred, gt)?;
    let sum: f64 = pred
        .pixels()
        .zip(gt.pixels())
        .map(|(p, g)| {
            let np = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
            let ng = (g[0] * g[0] + g[1] * g[1] + g[2] * g[2]).sqrt();
            if np < 1e-9 || ng < 1e-9 {
                return 0.0;
            }
            // atan2 form: exact zero for parallel vectors, accurate at small angles.
            let dot = p[0] * g[0] + p[1] * g[1] + p[2] * g[2];
            let cx = p[1] * g[2] - p[2] * g[1];
            let cy = p[2] * g[0] - p[0] * g[2];
            let cz = p[0] * g[1] - p[1] * g[0];
            (cx * cx + cy * cy + cz * cz).sqrt().atan2(dot).to_degrees()
        })
        .sum();
    Ok(sum / pred.pixel_count() as f64)
}

/// CIEDE2000 color difference between two L*a*b* triples, `kL = kC = kH = 1`.
pub fn ciede2000(lab1: [f64; 3], lab2: [f64; 3]) -> f64 {
    let [l1, a1, b1] = lab1;
    let [l2, a2, b2] = lab2;
    let pow7 = |x: f64| x.powi(7);
    let c25 = pow7(25.0);

    let c_bar = ((a1 * a1 + b1 * b1).sqrt() + (a2 * a2 + b2 * b2).sqrt()) / 2.0;
    let g = 0.5 * (1.0 - (pow7(c_bar) / (pow7(c_bar) + c25)).sqrt());
    let a1p = (1.0 + g) * a1;
    let a2p = (1.0 + g) * a2;
    let c1p = (a1p * a1p + b1 * b1).sqrt();
    let c2p = (a2p * a2p + b2 * b2).sqrt();
    let hue = |b: f64, a: f64| {
        if a == 0.0 && b == 0.0 {
            0.0
        } else {
            b.atan2(a).to_degrees().rem_euclid(360.0)
        }
    };
    let h1p = hue(b1, a1p);
    let h2p = hue(b2, a2p);

    let dl = l2 - l1;
    let dc = c2p - c1p;
    let chroma_product = c1p * c2p;
    let dh = if chroma_product == 0.0 {
        0.0
    } else {
        let d = h2p - h1p;
        if d.abs() <= 180.0 {
            d
        } else if d > 180.0 {
            d - 360.0
        } else {
            d + 360.0
        }
    };
    let dh_big = 2.0 * chroma_product.sqrt() * (dh / 2.0).to_radians().sin();

    let l_bar = (l1 + l2) / 2.0;
    let c_bar_p = (c1p + c2p) / 2.0;
    let h_bar = if chroma_product == 0.0 {
        h1p + h2p
    } else if (h1p - h2p).abs() <= 180.0 {
        (h1p + h2p) / 2.0
    } else if h1p + h2p < 360.0 {
        (h1p + h2p + 360.0) / 2.0
    } else {
        (h1p + h2p - 360.0) / 2.0
    };

    let cosd = |deg: f64| deg.to_radians().cos();
    let t = 1.0 - 0.17 * cosd(h_bar - 30.0) + 0.24 * cosd(2.0 * h_bar) + 0.32 * cosd(3.0 * h_bar + 6.0)
        - 0.20 * cosd(4.0 * h_bar - 63.0);
    let d_theta = 30.0 * (-((h_bar - 275.0) / 25.0).powi(2)).exp();
    let rc = 2.0 * (pow7(c_bar_p) / (pow7(c_bar_p) + c25)).sqrt();
    let l50 = (l_bar - 50.0).powi(2);
    let sl = 1.0 + 0.015 * l50 / (20.0 + l50).sqrt();
    let sc = 1.0 + 0.045 * c_bar_p;
    let sh = 1.0 + 0.015 * c_bar_p * t;
    let rt = -(2.0 * d_theta).to_radians().sin() * rc;

    let (tl, tc, th) = (dl / sl, dc / sc, dh_big / sh);
    (tl * tl + tc * tc + th * th + rt * tc * th).max(0.0).sqrt()
}

/// Mean per-pixel CIEDE2000 between two sRGB images.
pub fn delta_e2000(pred: &PlanarImage, gt: &PlanarImage) -> Result<f64> {
    check_pair("delta_e2000", pred, gt)?;
    let sum: f64 = pred
        .pixels()
        .zip(gt.pixels())
        .map(|(p, g)| ciede2000(srgb_to_lab(p), srgb_to_lab(g)))
        .sum();
    Ok(sum / pred.pixel_count() as f64)
}

pub fn score_pair(pred: &PlanarImage, gt: &PlanarImage) -> Result<ImageScores> {
    Ok(ImageScores {
        mse: mse(pred, gt)?,
        mae_deg: angular_mae(pred, gt)?,
        de2000: delta_e2000(pred, gt)?,
    })
}

/// Linear-interpolation quantile of an ascending slice.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let rank = q * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (rank - lo as f64)
}

pub fn summarize(errors: &[f64]) -> Result<MetricSummary> {
    if errors.is_empty() {
        return Err(Error::contract("summarize", "empty error list"));
    }
    if errors.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("summarize: error list".into()));
    }
    let mut sorted = errors.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(MetricSummary {
        mean: errors.iter().sum::<f64>() / errors.len() as f64,
        q1: quantile(&sorted, 0.25),
        q2: quantile(&sorted, 0.5),
        q3: quantile(&sorted, 0.75),
    })
}
