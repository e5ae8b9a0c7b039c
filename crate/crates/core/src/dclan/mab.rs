use crate::dclan::cam::{Cam, CamConfig};
use crate::dclan::mvm::{Mvm, MvmConfig};
use crate::dclan::params::{Bound, Builder, ParamStore};
use crate::error::Result;
use crate::numerics::{Tape, Var};

/// Mamba-attention block: a token mixer per branch, then cross-attention.
#[derive(Debug, Clone)]
pub struct Mab {
    pub mvm_hs: Mvm,
    pub mvm_i: Mvm,
    pub cam: Cam,
}

impl Mab {
    pub fn new(b: &mut Builder<'_>, name: &str, mvm: MvmConfig, cam: CamConfig) -> Result<Self> {
        b.scoped(name, |b| {
            Ok(Mab {
                mvm_hs: Mvm::new(b, "mvm_hs", mvm)?,
                mvm_i: Mvm::new(b, "mvm_i", mvm)?,
                cam: Cam::new(b, "cam", cam)?,
            })
        })
    }

    pub fn forward(&self, tape: &Tape, p: &Bound, hs: Var, i: Var) -> Result<(Var, Var)> {
        let hs = self.mvm_hs.forward(tape, p, hs)?;
        let i = self.mvm_i.forward(tape, p, i)?;
        self.cam.forward(tape, p, hs, i)
    }

    pub fn zero_residual_outputs(&self, store: &mut ParamStore) {
        self.mvm_hs.zero_residual_outputs(store);
        self.mvm_i.zero_residual_outputs(store);
        self.cam.zero_residual_outputs(store);
    }
}
