use crate::dclan::layers::{LayerNorm, Linear, Mlp};
use crate::dclan::params::{Bound, Builder, ParamId, ParamStore};
use crate::dclan::ssm::SsmParams;
use crate::error::{Error, Result};
use crate::numerics::{Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MvmConfig {
    pub width: usize,
    pub expand: usize,
    pub kernel: usize,
    pub state: usize,
}

impl MvmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.width % 2 != 0 {
            return Err(Error::contract("mvm", format!("width {} must be even", self.width)));
        }
        if self.expand == 0 || self.kernel % 2 == 0 || self.state == 0 {
            return Err(Error::contract("mvm", "expand and state must be positive, kernel odd"));
        }
        Ok(())
    }

    /// Width of each of the two expanded halves.
    pub fn half(&self) -> usize {
        self.width * self.expand / 2
    }
}

/// Depthwise 1-D convolution with bias.
#[derive(Debug, Clone)]
struct DwConv {
    w: ParamId,
    b: ParamId,
}

impl DwConv {
    fn new(b: &mut Builder<'_>, name: &str, width: usize, kernel: usize) -> Result<Self> {
        let bound = 1.0 / (kernel as f64).sqrt();
        b.scoped(name, |b| {
            Ok(DwConv {
                w: b.uniform("w", &[width, kernel], bound)?,
                b: b.zeros("b", &[width])?,
            })
        })
    }

    fn forward(&self, tape: &Tape, p: &Bound, x: Var) -> Result<Var> {
        tape.add(tape.dwconv1d(x, p.var(self.w))?, p.var(self.b))
    }
}

/// Token mixer: a gated pair of conv branches, one of them passed through a
/// selective scan, fused back to model width, followed by an MLP; both
/// stages are residual.
#[derive(Debug, Clone)]
pub struct Mvm {
    pub config: MvmConfig,
    norm: LayerNorm,
    in_proj: Linear,
    conv_i: DwConv,
    conv_hs: DwConv,
    pub ssm: SsmParams,
    pub fuse: Linear,
    norm2: LayerNorm,
    pub mlp: Mlp,
}

impl Mvm {
    pub fn new(b: &mut Builder<'_>, name: &str, config: MvmConfig) -> Result<Self> {
        config.validate()?;
        let (w, half) = (config.width, config.half());
        b.scoped(name, |b| {
            Ok(Mvm {
                config,
                norm: LayerNorm::new(b, "norm", w)?,
                in_proj: Linear::new(b, "in_proj", w, 2 * half)?,
                conv_i: DwConv::new(b, "conv_i", half, config.kernel)?,
                conv_hs: DwConv::new(b, "conv_hs", half, config.kernel)?,
                ssm: SsmParams::new(b, "ssm", half, config.state)?,
                fuse: Linear::new(b, "fuse", 2 * half, w)?,
                norm2: LayerNorm::new(b, "norm2", w)?,
                mlp: Mlp::new(b, "mlp", w, config.expand * w)?,
            })
        })
    }

    /// `x: [L, width]` to `[L, width]`.
    pub fn forward(&self, tape: &Tape, p: &Bound, x: Var) -> Result<Var> {
        let shape = tape.shape(x);
        if shape.len() != 2 || shape[1] != self.config.width {
            return Err(Error::shape("mvm_forward", &shape, &[0, self.config.width]));
        }
        let half = self.config.half();
        let h = self.in_proj.forward(tape, p, self.norm.forward(tape, p, x)?)?;
        let parts = tape.split(h, 1, &[half, half])?;
        let f_i = tape.silu(self.conv_i.forward(tape, p, parts[0])?);
        let f_hs = tape.silu(self.conv_hs.forward(tape, p, parts[1])?);
        let f_hs = self.ssm.forward(tape, p, f_hs)?;
        let fused = self.fuse.forward(tape, p, tape.concat(&[f_i, f_hs], 1)?)?;
        let x1 = tape.add(x, fused)?;
        let m = self.mlp.forward(tape, p, self.norm2.forward(tape, p, x1)?)?;
        tape.add(x1, m)
    }

    /// Zeroes the layers feeding the two residual sums.
    pub fn zero_residual_outputs(&self, store: &mut ParamStore) {
        self.fuse.zero(store);
        self.mlp.fc2.zero(store);
    }
}
