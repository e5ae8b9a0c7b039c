use rand::Rng;

use crate::dclan::layers::Linear;
use crate::dclan::params::{Bound, Builder, ParamId};
use crate::error::{Error, Result};
use crate::numerics::{zoh, Tape, Tensor, Var};

/// Zero-order-hold discretization of a diagonal system, elementwise:
/// `Ā = exp(ΔA)`, `B̄ = ((exp(ΔA) - 1) / A) B`.
pub fn ssm_discretize(a: &[f64], b: &[f64], delta: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    if a.len() != b.len() || a.len() != delta.len() {
        return Err(Error::shape("ssm_discretize", &[a.len(), b.len()], &[delta.len()]));
    }
    if let Some(d) = delta.iter().find(|d| !(**d > 0.0)) {
        return Err(Error::contract("ssm_discretize", format!("timescale {d} must be positive")));
    }
    if let Some(v) = a.iter().find(|v| !(**v < 0.0)) {
        return Err(Error::contract("ssm_discretize", format!("transition {v} must be negative")));
    }
    Ok(a.iter().zip(b).zip(delta).map(|((&a, &b), &d)| zoh(a, b, d)).unzip())
}

/// `log(exp(y) - 1)`, so that `softplus(inverse_softplus(y)) = y`.
fn inverse_softplus(y: f64) -> f64 {
    y + (-(-y).exp_m1()).ln()
}

/// Content-aware state-space layer: `Δ`, `B` and `C` are projected from the
/// input at every timestep, `A` is diagonal per channel.
#[derive(Debug, Clone)]
pub struct SsmParams {
    pub width: usize,
    pub state: usize,
    /// `Δ = softplus(x W_Δ + b_Δ)`.
    pub delta_proj: Linear,
    pub w_b: ParamId,
    pub w_c: ParamId,
    /// `A = -exp(a_log)`, `[width, state]`.
    pub a_log: ParamId,
}

impl SsmParams {
    pub fn new(b: &mut Builder<'_>, name: &str, width: usize, state: usize) -> Result<Self> {
        let bound = 1.0 / (width as f64).sqrt();
        b.scoped(name, |b| {
            let delta_proj = Linear::new(b, "delta", width, width)?;
            // Initial timescales log-uniform in [0.01, 0.1].
            let bias: Vec<f64> = (0..width)
                .map(|_| {
                    let dt = b.rng().gen_range(0.01f64.ln()..0.1f64.ln()).exp();
                    inverse_softplus(dt)
                })
                .collect();
            *b.store.get_mut(delta_proj.b) = Tensor::from_vec(bias);
            let a_log: Vec<f64> = (0..width)
                .flat_map(|_| (1..=state).map(|s| (s as f64).ln()))
                .collect();
            Ok(SsmParams {
                width,
                state,
                delta_proj,
                w_b: b.uniform("w_b", &[width, state], bound)?,
                w_c: b.uniform("w_c", &[width, state], bound)?,
                a_log: b.tensor("a_log", Tensor::new(vec![width, state], a_log)?)?,
            })
        })
    }

    /// `x: [L, width]` to `[L, width]`.
    pub fn forward(&self, tape: &Tape, p: &Bound, x: Var) -> Result<Var> {
        let delta = tape.softplus(self.delta_proj.forward(tape, p, x)?);
        let bm = tape.matmul(x, p.var(self.w_b))?;
        let cm = tape.matmul(x, p.var(self.w_c))?;
        let a = tape.scale(tape.exp(p.var(self.a_log)), -1.0);
        tape.selective_scan(x, delta, a, bm, cm)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn discretize_examples() {
        let (ab, bb) = ssm_discretize(&[-1.0], &[1.0], &[2f64.ln()]).unwrap();
        assert!((ab[0] - 0.5).abs() < 1e-15 && (bb[0] - 0.5).abs() < 1e-15);
        let (ab, bb) = ssm_discretize(&[-1.0], &[2.0], &[1.0]).unwrap();
        let e = (-1f64).exp();
        assert!((ab[0] - e).abs() < 1e-15 && (bb[0] - 2.0 * (1.0 - e)).abs() < 1e-15);
        let (ab, bb) = ssm_discretize(&[-3.0], &[1.0], &[1e-12]).unwrap();
        assert!((ab[0] - 1.0).abs() < 1e-11 && (bb[0] - 1e-12).abs() < 1e-20);
    }

    #[test]
    fn discretize_contract() {
        assert!(ssm_discretize(&[-1.0], &[1.0], &[0.0]).is_err());
        assert!(ssm_discretize(&[-1.0], &[1.0], &[-0.1]).is_err());
        assert!(ssm_discretize(&[0.0], &[1.0], &[0.1]).is_err());
        assert!(ssm_discretize(&[-1.0, -1.0], &[1.0], &[0.1]).is_err());
    }

    #[test]
    fn inverse_softplus_round_trip() {
        for y in [0.01, 0.05, 0.1, 1.0, 5.0] {
            let x: f64 = inverse_softplus(y);
            assert!(((1.0 + x.exp()).ln() - y).abs() < 1e-12);
        }
    }
}
