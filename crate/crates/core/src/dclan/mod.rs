//! Dual-branch encoder/decoder built from state-space token mixers and
//! cross-attention between an intensity branch and a chroma branch.
//!
//! Feature maps are `[H * W, C]` token matrices in raster order. The
//! network predicts residual corrections to the intensity and chroma maps
//! of the input; with the residual heads at zero it is the identity.

mod cam;
mod layers;
mod mab;
mod mvm;
mod params;
mod space;
mod ssm;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use cam::{attention, Cam, CamConfig, CrossPath};
pub use layers::{upsample_nearest2, Conv2d, Grid, LayerNorm, Linear, Mlp};
pub use mab::Mab;
pub use mvm::{Mvm, MvmConfig};
pub use params::{Bound, Builder, ParamId, ParamStore};
pub use space::SpaceTape;
pub use ssm::{ssm_discretize, SsmParams};

use crate::error::{Error, Result};
use crate::image::PlanarImage;
use crate::lhsi::LhsiParams;
use crate::numerics::{Tape, Var};
use crate::refspaces::Space;

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DclanConfig {
    /// Channel width per scale, finest first.
    pub widths: Vec<usize>,
    pub blocks_per_scale: usize,
    pub state_size: usize,
    pub heads: usize,
    pub expand: usize,
    pub kernel: usize,
    /// Interval count of each monotone map of the color space.
    pub intervals: usize,
}

impl Default for DclanConfig {
    fn default() -> Self {
        DclanConfig {
            widths: vec![16, 32],
            blocks_per_scale: 1,
            state_size: 8,
            heads: 2,
            expand: 2,
            kernel: 3,
            intervals: crate::lhsi::DEFAULT_INTERVALS,
        }
    }
}

impl DclanConfig {
    pub fn scales(&self) -> usize {
        self.widths.len()
    }

    /// Spatial extents must be multiples of this.
    pub fn divisor(&self) -> usize {
        1 << (self.scales().saturating_sub(1))
    }

    pub fn mvm(&self, width: usize) -> MvmConfig {
        MvmConfig {
            width,
            expand: self.expand,
            kernel: self.kernel,
            state: self.state_size,
        }
    }

    pub fn cam(&self, width: usize) -> CamConfig {
        CamConfig {
            width_hs: width,
            width_i: width,
            heads: self.heads,
            expand: self.expand,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.is_empty() || self.blocks_per_scale == 0 || self.intervals == 0 {
            return Err(Error::Config("need at least one scale, one block and one interval".into()));
        }
        for &w in &self.widths {
            self.mvm(w).validate().map_err(|e| Error::Config(e.to_string()))?;
            self.cam(w).validate().map_err(|e| Error::Config(e.to_string()))?;
        }
        Ok(())
    }
}

/// A stride-2 2x2 convolution per branch.
#[derive(Debug, Clone)]
struct BranchConvs {
    hs: Conv2d,
    i: Conv2d,
}

impl BranchConvs {
    fn forward(&self, tape: &Tape, p: &Bound, hs: Var, i: Var, g: Grid) -> Result<(Var, Var, Grid)> {
        let (hs, og) = self.hs.forward(tape, p, hs, g)?;
        let (i, _) = self.i.forward(tape, p, i, g)?;
        Ok((hs, i, og))
    }
}

/// Network structure; weights live in the accompanying [`ParamStore`].
#[derive(Debug, Clone)]
pub struct Dclan {
    pub config: DclanConfig,
    stem_hs: Conv2d,
    stem_i: Conv2d,
    encoders: Vec<Vec<Mab>>,
    downs: Vec<BranchConvs>,
    ups: Vec<BranchConvs>,
    decoders: Vec<Vec<Mab>>,
    pub head_hs: Conv2d,
    pub head_i: Conv2d,
}

impl Dclan {
    /// Builds the architecture and freshly initialized weights. Registration
    /// order, and therefore every [`ParamId`], depends only on `config`.
    pub fn new(config: &DclanConfig, seed: u64) -> Result<(Dclan, ParamStore)> {
        config.validate()?;
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut b = Builder::new(&mut store, &mut rng);
        let w = &config.widths;
        let s = config.scales();
        let blocks = |b: &mut Builder<'_>, prefix: &str, width: usize| -> Result<Vec<Mab>> {
            (0..config.blocks_per_scale)
                .map(|k| Mab::new(b, &format!("{prefix}.{k}"), config.mvm(width), config.cam(width)))
                .collect()
        };
        let stem_i = Conv2d::same3(&mut b, "stem_i", 3, w[0], false)?;
        let stem_hs = Conv2d::same3(&mut b, "stem_hs", 2, w[0], false)?;
        let mut encoders = Vec::new();
        let mut downs = Vec::new();
        for k in 0..s {
            encoders.push(blocks(&mut b, &format!("enc{k}"), w[k])?);
            if k + 1 < s {
                downs.push(BranchConvs {
                    hs: Conv2d::new(&mut b, &format!("down{k}.hs"), w[k], w[k + 1], 2, 2, 0, false)?,
                    i: Conv2d::new(&mut b, &format!("down{k}.i"), w[k], w[k + 1], 2, 2, 0, false)?,
                });
            }
        }
        let mut ups = Vec::new();
        let mut decoders = Vec::new();
        for k in 0..s.saturating_sub(1) {
            ups.push(BranchConvs {
                hs: Conv2d::same3(&mut b, &format!("up{k}.hs"), w[k + 1], w[k], false)?,
                i: Conv2d::same3(&mut b, &format!("up{k}.i"), w[k + 1], w[k], false)?,
            });
            decoders.push(blocks(&mut b, &format!("dec{k}"), w[k])?);
        }
        let head_i = Conv2d::same3(&mut b, "head_i", w[0], 1, true)?;
        let head_hs = Conv2d::same3(&mut b, "head_hs", w[0], 2, true)?;
        let net = Dclan {
            config: config.clone(),
            stem_hs,
            stem_i,
            encoders,
            downs,
            ups,
            decoders,
            head_hs,
            head_i,
        };
        Ok((net, store))
    }

    pub fn check_grid(&self, g: Grid) -> Result<()> {
        let d = self.config.divisor();
        if g.height % d != 0 || g.width % d != 0 {
            return Err(Error::contract(
                "dclan_forward",
                format!("{}x{} not divisible by {d}", g.height, g.width),
            ));
        }
        Ok(())
    }

    /// Corrected representation for `rep: [H * W, 3]` in network layout.
    pub fn forward_rep(&self, tape: &Tape, p: &Bound, rep: Var, g: Grid) -> Result<Var> {
        self.check_grid(g)?;
        let parts = tape.split(rep, 1, &[1, 2])?;
        let (i_map, hs_map) = (parts[0], parts[1]);
        let (mut i, _) = self.stem_i.forward(tape, p, tape.concat(&[hs_map, i_map], 1)?, g)?;
        let (mut hs, _) = self.stem_hs.forward(tape, p, hs_map, g)?;
        let mut grid = g;
        let mut skips = Vec::new();
        for (k, blocks) in self.encoders.iter().enumerate() {
            for blk in blocks {
                (hs, i) = blk.forward(tape, p, hs, i)?;
            }
            if let Some(down) = self.downs.get(k) {
                skips.push((hs, i, grid));
                (hs, i, grid) = down.forward(tape, p, hs, i, grid)?;
            }
        }
        for k in (0..self.ups.len()).rev() {
            let (skip_hs, skip_i, skip_grid) = skips[k];
            let (uh, ug) = upsample_nearest2(tape, hs, grid)?;
            let (ui, _) = upsample_nearest2(tape, i, grid)?;
            let (uh, ui, _) = self.ups[k].forward(tape, p, uh, ui, ug)?;
            hs = tape.add(uh, skip_hs)?;
            i = tape.add(ui, skip_i)?;
            grid = skip_grid;
            for blk in &self.decoders[k] {
                (hs, i) = blk.forward(tape, p, hs, i)?;
            }
        }
        let (di, _) = self.head_i.forward(tape, p, i, grid)?;
        let (dhs, _) = self.head_hs.forward(tape, p, hs, grid)?;
        let i_out = tape.add(i_map, di)?;
        let hs_out = tape.add(hs_map, dhs)?;
        tape.concat(&[i_out, hs_out], 1)
    }

    /// Full pipeline on the tape: encode, correct, decode.
    pub fn forward(&self, tape: &Tape, p: &Bound, space: &SpaceTape, rgb: Var, g: Grid) -> Result<Forward> {
        let input_rep = space.encode(tape, rgb)?;
        let rep = self.forward_rep(tape, p, input_rep, g)?;
        let rgb = space.decode(tape, rep)?;
        Ok(Forward { rep, rgb })
    }

    /// Zeroes the residual outputs of every block (heads are always zero at init).
    pub fn zero_block_residuals(&self, store: &mut ParamStore) {
        for blk in self.encoders.iter().chain(&self.decoders).flatten() {
            blk.zero_residual_outputs(store);
        }
    }
}

/// Outputs of [`Dclan::forward`].
#[derive(Debug, Clone, Copy)]
pub struct Forward {
    /// Corrected representation in network layout.
    pub rep: Var,
    /// Corrected sRGB, clamped to `[0, 1]`.
    pub rgb: Var,
}

/// Corrects an sRGB image with the network in color space `space`.
pub fn correct_in_space(
    rgb: &PlanarImage,
    space: Space,
    params: &LhsiParams,
    net: &Dclan,
    weights: &ParamStore,
) -> Result<PlanarImage> {
    rgb.require_channels("dclan_forward", 3)?;
    let g = Grid {
        height: rgb.height(),
        width: rgb.width(),
    };
    net.check_grid(g)?;
    let tape = Tape::new();
    let p = weights.bind(&tape, false);
    let sp = SpaceTape::bind(&tape, space, params, false);
    let x = tape.constant(rgb.to_tensor());
    let out = net.forward(&tape, &p, &sp, x, g)?;
    let img = PlanarImage::from_tensor(g.height, g.width, &tape.value(out.rgb))?;
    if img.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("dclan_forward output".into()));
    }
    Ok(img)
}

/// Corrects an sRGB image through the learnable color space.
pub fn dclan_forward(rgb: &PlanarImage, params: &LhsiParams, net: &Dclan, weights: &ParamStore) -> Result<PlanarImage> {
    correct_in_space(rgb, Space::Lhsi, params, net, weights)
}
