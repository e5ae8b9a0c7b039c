use crate::dclan::layers::{LayerNorm, Linear, Mlp};
use crate::dclan::params::{Bound, Builder, ParamStore};
use crate::error::{Error, Result};
use crate::numerics::{Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CamConfig {
    pub width_hs: usize,
    pub width_i: usize,
    pub heads: usize,
    pub expand: usize,
}

impl CamConfig {
    pub fn validate(&self) -> Result<()> {
        for w in [self.width_hs, self.width_i] {
            if self.heads == 0 || w == 0 || w % self.heads != 0 {
                return Err(Error::contract(
                    "cam",
                    format!("width {w} not divisible by {} heads", self.heads),
                ));
            }
        }
        Ok(())
    }
}

/// Multi-head scaled dot-product attention, `q: [Lq, D]`, `k, v: [Lk, D]`.
pub fn attention(tape: &Tape, q: Var, k: Var, v: Var, heads: usize) -> Result<Var> {
    let (sq, sk) = (tape.shape(q), tape.shape(k));
    let d = sq[1];
    if heads == 0 || d % heads != 0 || sk[1] != d || tape.shape(v) != sk {
        return Err(Error::shape("attention", &sq, &sk));
    }
    let dk = d / heads;
    let split = |x: Var, l: usize| -> Result<Var> { tape.permute(tape.reshape(x, &[l, heads, dk])?, &[1, 0, 2]) };
    let (qh, kh, vh) = (split(q, sq[0])?, split(k, sk[0])?, split(v, sk[0])?);
    let scores = tape.scale(tape.matmul(qh, tape.transpose(kh)?)?, 1.0 / (dk as f64).sqrt());
    let out = tape.matmul(tape.softmax(scores), vh)?;
    tape.reshape(tape.permute(out, &[1, 0, 2])?, &[sq[0], d])
}

/// One direction of the cross-attention: queries from `own`, keys and
/// values from `other`.
#[derive(Debug, Clone)]
pub struct CrossPath {
    heads: usize,
    norm_q: LayerNorm,
    norm_kv: LayerNorm,
    q: Linear,
    k: Linear,
    v: Linear,
    pub out: Linear,
    norm: LayerNorm,
    pub mlp: Mlp,
}

impl CrossPath {
    fn new(b: &mut Builder<'_>, name: &str, own: usize, other: usize, heads: usize, expand: usize) -> Result<Self> {
        b.scoped(name, |b| {
            Ok(CrossPath {
                heads,
                norm_q: LayerNorm::new(b, "norm_q", own)?,
                norm_kv: LayerNorm::new(b, "norm_kv", other)?,
                q: Linear::new(b, "q", own, own)?,
                k: Linear::new(b, "k", other, own)?,
                v: Linear::new(b, "v", other, own)?,
                out: Linear::new(b, "out", own, own)?,
                norm: LayerNorm::new(b, "norm", own)?,
                mlp: Mlp::new(b, "mlp", own, expand * own)?,
            })
        })
    }

    /// The attention output before the residual, `Linear(softmax(QKᵀ/√d_k) V)`,
    /// with both inputs layer-normalized before projection.
    pub fn attend(&self, tape: &Tape, p: &Bound, own: Var, other: Var) -> Result<Var> {
        let own = self.norm_q.forward(tape, p, own)?;
        let other = self.norm_kv.forward(tape, p, other)?;
        let q = self.q.forward(tape, p, own)?;
        let k = self.k.forward(tape, p, other)?;
        let v = self.v.forward(tape, p, other)?;
        self.out.forward(tape, p, attention(tape, q, k, v, self.heads)?)
    }

    pub fn forward(&self, tape: &Tape, p: &Bound, own: Var, other: Var) -> Result<Var> {
        let x1 = tape.add(own, self.attend(tape, p, own, other)?)?;
        let m = self.mlp.forward(tape, p, self.norm.forward(tape, p, x1)?)?;
        tape.add(x1, m)
    }

    fn zero_residual_outputs(&self, store: &mut ParamStore) {
        self.out.zero(store);
        self.mlp.fc2.zero(store);
    }
}

/// Bidirectional cross-attention between the chroma and intensity branches.
/// The two directions have independent weights.
#[derive(Debug, Clone)]
pub struct Cam {
    pub config: CamConfig,
    pub i_path: CrossPath,
    pub hs_path: CrossPath,
}

impl Cam {
    pub fn new(b: &mut Builder<'_>, name: &str, config: CamConfig) -> Result<Self> {
        config.validate()?;
        let CamConfig { width_hs, width_i, heads, expand } = config;
        b.scoped(name, |b| {
            Ok(Cam {
                config,
                i_path: CrossPath::new(b, "i", width_i, width_hs, heads, expand)?,
                hs_path: CrossPath::new(b, "hs", width_hs, width_i, heads, expand)?,
            })
        })
    }

    /// Returns `(hs_out, i_out)`; both paths read the unmodified inputs.
    pub fn forward(&self, tape: &Tape, p: &Bound, hs: Var, i: Var) -> Result<(Var, Var)> {
        let (sh, si) = (tape.shape(hs), tape.shape(i));
        if sh.len() != 2 || si.len() != 2 || sh[0] != si[0] || sh[1] != self.config.width_hs || si[1] != self.config.width_i {
            return Err(Error::shape("cam_forward", &sh, &si));
        }
        let i_out = self.i_path.forward(tape, p, i, hs)?;
        let hs_out = self.hs_path.forward(tape, p, hs, i)?;
        Ok((hs_out, i_out))
    }

    pub fn zero_residual_outputs(&self, store: &mut ParamStore) {
        self.i_path.zero_residual_outputs(store);
        self.hs_path.zero_residual_outputs(store);
    }
}
