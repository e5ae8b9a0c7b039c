use crate::dataio::resize_bilinear;
use crate::dclan::{correct_in_space, Dclan, ParamStore};
use crate::error::Result;
use crate::image::PlanarImage;
use crate::lhsi::{LhsiParams, DEFAULT_ALPHA_MAX, DEFAULT_ALPHA_MIN};
use crate::refspaces::Space;
use crate::train::config::TrainConfig;

/// A trained (or freshly initialized) correction model.
#[derive(Debug, Clone)]
pub struct Model {
    pub space: Space,
    pub lhsi: LhsiParams,
    pub net: Dclan,
    pub weights: ParamStore,
}

/// Working resolution for an `h x w` image: the longer side becomes
/// `net_size` (0 keeps the native size) and both sides are rounded to
/// multiples of `divisor`.
pub fn working_size(h: usize, w: usize, net_size: usize, divisor: usize) -> (usize, usize) {
    let (th, tw) = if net_size == 0 {
        (h as f64, w as f64)
    } else {
        let s = net_size as f64 / h.max(w) as f64;
        (h as f64 * s, w as f64 * s)
    };
    let round = |v: f64| ((v / divisor as f64).round() as usize).max(1) * divisor;
    (round(th), round(tw))
}

impl Model {
    /// Identity color space and freshly initialized weights.
    pub fn init(config: &TrainConfig) -> Result<Self> {
        let (net, weights) = Dclan::new(&config.arch, config.seed)?;
        Ok(Model {
            space: config.space,
            lhsi: LhsiParams::identity(config.arch.intervals, DEFAULT_ALPHA_MIN, DEFAULT_ALPHA_MAX)?,
            net,
            weights,
        })
    }

    /// Runs the network at exactly the image's resolution.
    pub fn correct_native(&self, img: &PlanarImage) -> Result<PlanarImage> {
        correct_in_space(img, self.space, &self.lhsi, &self.net, &self.weights)
    }

    /// Corrects an image of any size: the network runs at the working
    /// resolution and its correction (output minus input) is upsampled and
    /// added to the full-resolution input.
    pub fn correct(&self, img: &PlanarImage, net_size: usize) -> Result<PlanarImage> {
        let (h, w) = (img.height(), img.width());
        let (wh, ww) = working_size(h, w, net_size, self.net.config.divisor());
        if (wh, ww) == (h, w) {
            return self.correct_native(img);
        }
        let small = resize_bilinear(img, wh, ww)?;
        let fixed = self.correct_native(&small)?;
        let delta = PlanarImage::new(
            wh,
            ww,
            3,
            fixed.data().iter().zip(small.data()).map(|(a, b)| a - b).collect(),
        )?;
        let delta = resize_bilinear(&delta, h, w)?;
        let mut out = PlanarImage::new(
            h,
            w,
            3,
            img.data().iter().zip(delta.data()).map(|(a, d)| a + d).collect(),
        )?;
        out.clamp01();
        Ok(out)
    }
}
