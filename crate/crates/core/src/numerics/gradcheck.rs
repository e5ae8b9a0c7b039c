use crate::error::{Error, Result};
use crate::numerics::tape::{Tape, Var};
use crate::numerics::tensor::Tensor;

/// Outcome of comparing analytic gradients against central differences.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    /// `max |analytic - numeric| / max(1, |numeric|)` over checked coordinates.
    pub max_rel_error: f64,
    /// `(leaf, flat index)` where the worst error occurred.
    pub worst: (usize, usize),
    pub coords_checked: usize,
}

/// Checks every coordinate of every leaf in `point`.
pub fn grad_check<F>(f: F, point: &[Tensor], eps: f64) -> Result<GradCheck>
where
    F: Fn(&Tape, &[Var]) -> Result<Var>,
{
    let coords: Vec<(usize, usize)> = point
        .iter()
        .enumerate()
        .flat_map(|(l, t)| (0..t.numel()).map(move |i| (l, i)))
        .collect();
    grad_check_coords(f, point, eps, &coords)
}

/// Like [`grad_check`] but only probes the listed `(leaf, index)` pairs.
pub fn grad_check_coords<F>(
    f: F,
    point: &[Tensor],
    eps: f64,
    coords: &[(usize, usize)],
) -> Result<GradCheck>
where
    F: Fn(&Tape, &[Var]) -> Result<Var>,
{
    if !(eps > 0.0) {
        return Err(Error::contract("grad_check", format!("eps must be > 0, got {eps}")));
    }
    let eval = |leaves: &[Tensor]| -> Result<f64> {
        let tape = Tape::new();
        let vars: Vec<Var> = leaves.iter().map(|t| tape.param(t.clone())).collect();
        let out = f(&tape, &vars)?;
        if tape.shape(out).iter().product::<usize>() != 1 {
            return Err(Error::contract("grad_check", "function must be scalar-valued"));
        }
        Ok(tape.item(out))
    };

    let tape = Tape::new();
    let vars: Vec<Var> = point.iter().map(|t| tape.param(t.clone())).collect();
    let out = f(&tape, &vars)?;
    if !tape.item(out).is_finite() {
        return Err(Error::NonFinite("grad_check: value at the base point".into()));
    }
    let grads = tape.backward(out)?;
    let analytic: Vec<Tensor> = vars.iter().map(|&v| grads.get(v)).collect();
    drop(tape);

    let mut probe = point.to_vec();
    let mut report = GradCheck {
        max_rel_error: 0.0,
        worst: (0, 0),
        coords_checked: 0,
    };
    for &(leaf, idx) in coords {
        let x0 = point[leaf].data()[idx];
        probe[leaf].data_mut()[idx] = x0 + eps;
        let up = eval(&probe)?;
        probe[leaf].data_mut()[idx] = x0 - eps;
        let down = eval(&probe)?;
        probe[leaf].data_mut()[idx] = x0;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::NonFinite(format!(
                "grad_check: probing leaf {leaf} index {idx}"
            )));
        }
        let numeric = (up - down) / (2.0 * eps);
        let a = analytic[leaf].data()[idx];
        let err = (a - numeric).abs() / numeric.abs().max(1.0);
        if err > report.max_rel_error || report.coords_checked == 0 {
            report.max_rel_error = err;
            report.worst = (leaf, idx);
        }
        report.coords_checked += 1;
    }
    Ok(report)
}
