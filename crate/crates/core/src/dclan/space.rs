use crate::error::Result;
use crate::image::PlanarImage;
use crate::lhsi::{LhsiParams, LhsiVars};
use crate::numerics::{Tape, Tensor, Var};
use crate::refspaces::{decode_hsv_layout, decode_hvi, decode_lab_normalized, Space};

/// A color space bound on a tape, in network layout
/// `(intensity, chroma 1, chroma 2)`.
#[derive(Debug, Clone, Copy)]
pub enum SpaceTape {
    /// LHSI-family spaces, learnable or fixed.
    Lhsi(LhsiVars),
    /// Parameter-free spaces; encoding happens off the tape.
    Fixed(Space),
}

impl SpaceTape {
    /// Binds `space`. `params` only matters for [`Space::Lhsi`]; its leaves
    /// are learnable when `learnable` is set.
    pub fn bind(tape: &Tape, space: Space, params: &LhsiParams, learnable: bool) -> Self {
        match space {
            Space::Lhsi => SpaceTape::Lhsi(LhsiVars::bind(tape, params, learnable)),
            Space::Hsi => SpaceTape::Lhsi(LhsiVars::bind(tape, &LhsiParams::default(), false)),
            other => SpaceTape::Fixed(other),
        }
    }

    pub fn lhsi_vars(&self) -> Option<LhsiVars> {
        match self {
            SpaceTape::Lhsi(v) => Some(*v),
            SpaceTape::Fixed(_) => None,
        }
    }

    /// `[P, 3]` sRGB to `[P, 3]` network layout. For fixed spaces the
    /// result is a constant computed from the forward values.
    pub fn encode(&self, tape: &Tape, rgb: Var) -> Result<Var> {
        match self {
            SpaceTape::Lhsi(v) => v.encode(tape, rgb),
            SpaceTape::Fixed(space) => {
                let p = tape.shape(rgb)[0];
                let img = PlanarImage::new(1, p, 3, tape.data(rgb))?;
                let native = space.forward(&img, &LhsiParams::default())?;
                let data = native.pixels().flat_map(|px| space.to_layout(px)).collect();
                Ok(tape.constant(Tensor::new(vec![p, 3], data)?))
            }
        }
    }

    /// `[P, 3]` network layout back to clamped sRGB.
    pub fn decode(&self, tape: &Tape, rep: Var) -> Result<Var> {
        match self {
            SpaceTape::Lhsi(v) => v.decode(tape, rep),
            SpaceTape::Fixed(Space::Hsv) => decode_hsv_layout(tape, rep),
            SpaceTape::Fixed(Space::Lab) => decode_lab_normalized(tape, rep),
            SpaceTape::Fixed(Space::Hvi) => decode_hvi(tape, rep),
            SpaceTape::Fixed(Space::Lhsi | Space::Hsi) => unreachable!("bound as Lhsi"),
        }
    }
}
