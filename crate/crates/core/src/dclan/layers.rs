use std::rc::Rc;

use crate::dclan::params::{Bound, Builder, ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::numerics::{Tape, Var, PAD};

const LN_EPS: f64 = 1e-5;

/// `x W + b` over the last axis, `W: [in, out]`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(b: &mut Builder<'_>, name: &str, in_dim: usize, out_dim: usize) -> Result<Self> {
        let bound = 1.0 / (in_dim as f64).sqrt();
        b.scoped(name, |b| {
            Ok(Linear {
                w: b.uniform("w", &[in_dim, out_dim], bound)?,
                b: b.zeros("b", &[out_dim])?,
                in_dim,
                out_dim,
            })
        })
    }

    pub fn forward(&self, tape: &Tape, p: &Bound, x: Var) -> Result<Var> {
        tape.add(tape.matmul(x, p.var(self.w))?, p.var(self.b))
    }

    pub fn zero(&self, store: &mut ParamStore) {
        store.zero(self.w);
        store.zero(self.b);
    }
}

/// Layer normalization over the last axis with a per-channel affine.
#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new(b: &mut Builder<'_>, name: &str, width: usize) -> Result<Self> {
        b.scoped(name, |b| {
            Ok(LayerNorm {
                gamma: b.full("gamma", &[width], 1.0)?,
                beta: b.zeros("beta", &[width])?,
            })
        })
    }

    pub fn forward(&self, tape: &Tape, p: &Bound, x: Var) -> Result<Var> {
        let n = tape.layer_norm(x, LN_EPS);
        tape.add(tape.mul(n, p.var(self.gamma))?, p.var(self.beta))
    }
}

/// Two-layer perceptron with a SiLU in between.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl Mlp {
    pub fn new(b: &mut Builder<'_>, name: &str, width: usize, hidden: usize) -> Result<Self> {
        b.scoped(name, |b| {
            Ok(Mlp {
                fc1: Linear::new(b, "fc1", width, hidden)?,
                fc2: Linear::new(b, "fc2", hidden, width)?,
            })
        })
    }

    pub fn forward(&self, tape: &Tape, p: &Bound, x: Var) -> Result<Var> {
        let h = tape.silu(self.fc1.forward(tape, p, x)?);
        self.fc2.forward(tape, p, h)
    }
}

/// Spatial extent of a token map stored as `[H * W, C]` in raster order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Grid {
    pub height: usize,
    pub width: usize,
}

impl Grid {
    pub fn tokens(self) -> usize {
        self.height * self.width
    }
}

/// 2-D convolution on raster token maps via im2col and a matmul.
/// Weight layout `[(ky * k + kx) * cin + ci, cout]`.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub w: ParamId,
    pub b: ParamId,
    pub cin: usize,
    pub cout: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        b: &mut Builder<'_>,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        zero: bool,
    ) -> Result<Self> {
        let fan_in = kernel * kernel * cin;
        let bound = 1.0 / (fan_in as f64).sqrt();
        b.scoped(name, |b| {
            let w = if zero {
                b.zeros("w", &[fan_in, cout])?
            } else {
                b.uniform("w", &[fan_in, cout], bound)?
            };
            Ok(Conv2d {
                w,
                b: b.zeros("b", &[cout])?,
                cin,
                cout,
                kernel,
                stride,
                pad,
            })
        })
    }

    /// Same-size 3x3 convolution.
    pub fn same3(b: &mut Builder<'_>, name: &str, cin: usize, cout: usize, zero: bool) -> Result<Self> {
        Self::new(b, name, cin, cout, 3, 1, 1, zero)
    }

    pub fn out_grid(&self, g: Grid) -> Result<Grid> {
        let span = |n: usize| -> Result<usize> {
            let padded = n + 2 * self.pad;
            if padded < self.kernel || (padded - self.kernel) % self.stride != 0 {
                return Err(Error::contract(
                    "conv2d",
                    format!("extent {n} incompatible with kernel {} stride {}", self.kernel, self.stride),
                ));
            }
            Ok((padded - self.kernel) / self.stride + 1)
        };
        Ok(Grid {
            height: span(g.height)?,
            width: span(g.width)?,
        })
    }

    fn im2col_index(&self, g: Grid, out: Grid) -> Vec<usize> {
        let (k, s, p, cin) = (self.kernel, self.stride, self.pad as isize, self.cin);
        let mut idx = Vec::with_capacity(out.tokens() * k * k * cin);
        for oy in 0..out.height {
            for ox in 0..out.width {
                for ky in 0..k {
                    let iy = (oy * s + ky) as isize - p;
                    for kx in 0..k {
                        let ix = (ox * s + kx) as isize - p;
                        let inside = iy >= 0 && ix >= 0 && (iy as usize) < g.height && (ix as usize) < g.width;
                        for ci in 0..cin {
                            idx.push(if inside {
                                (iy as usize * g.width + ix as usize) * cin + ci
                            } else {
                                PAD
                            });
                        }
                    }
                }
            }
        }
        idx
    }

    pub fn forward(&self, tape: &Tape, p: &Bound, x: Var, g: Grid) -> Result<(Var, Grid)> {
        let shape = tape.shape(x);
        if shape != [g.tokens(), self.cin] {
            return Err(Error::shape("conv2d", &shape, &[g.tokens(), self.cin]));
        }
        let out = self.out_grid(g)?;
        let cols = self.kernel * self.kernel * self.cin;
        let patches = tape.gather(x, Rc::new(self.im2col_index(g, out)), &[out.tokens(), cols])?;
        let y = tape.add(tape.matmul(patches, p.var(self.w))?, p.var(self.b))?;
        Ok((y, out))
    }

    pub fn zero(&self, store: &mut ParamStore) {
        store.zero(self.w);
        store.zero(self.b);
    }
}

/// Nearest-neighbour 2x upsampling of a raster token map.
pub fn upsample_nearest2(tape: &Tape, x: Var, g: Grid) -> Result<(Var, Grid)> {
    let c = tape.shape(x)[1];
    let out = Grid {
        height: g.height * 2,
        width: g.width * 2,
    };
    let mut idx = Vec::with_capacity(out.tokens() * c);
    for y in 0..out.height {
        for xx in 0..out.width {
            let src = (y / 2) * g.width + xx / 2;
            idx.extend((0..c).map(|ci| src * c + ci));
        }
    }
    Ok((tape.gather(x, Rc::new(idx), &[out.tokens(), c])?, out))
}
