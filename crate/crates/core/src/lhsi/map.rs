use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Maps an unbounded raw parameter to a slope in `(alpha_min, alpha_max)`.
pub fn slope_from_raw(u: f64, alpha_min: f64, alpha_max: f64) -> Result<f64> {
    check_bounds(alpha_min, alpha_max)?;
    Ok(alpha_min + (alpha_max - alpha_min) * sigmoid(u))
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn check_bounds(alpha_min: f64, alpha_max: f64) -> Result<()> {
    if !(alpha_min > 0.0 && alpha_min < alpha_max && alpha_max.is_finite()) {
        return Err(Error::contract(
            "slope bounds",
            format!("need 0 < alpha_min < alpha_max, got ({alpha_min}, {alpha_max})"),
        ));
    }
    Ok(())
}

/// Strictly increasing piecewise-linear bijection of `[0, 1]`.
///
/// The unit interval is cut into `M` equal pieces; piece `i` has slope
/// `alpha_i` derived from the raw parameter `u_i` and the whole curve is
/// divided by its total integral so both endpoints are pinned.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseMonotoneMap {
    u: Vec<f64>,
    alpha_min: f64,
    alpha_max: f64,
}

/// Precomputed slopes and prefix integrals for repeated evaluation.
#[derive(Debug, Clone)]
pub struct MapTable {
    /// `alpha_i * delta`
    pub(crate) piece: Vec<f64>,
    /// `prefix[k] = sum_{i<k} alpha_i * delta`, length `M + 1`.
    pub(crate) prefix: Vec<f64>,
}

impl MapTable {
    pub fn intervals(&self) -> usize {
        self.piece.len()
    }

    pub fn total(&self) -> f64 {
        self.prefix[self.piece.len()]
    }

    /// Interval holding `v`, with `v = 1` assigned to the last interval.
    pub(crate) fn interval_of(&self, v: f64) -> usize {
        let m = self.piece.len();
        ((v * m as f64).floor().max(0.0) as usize).min(m - 1)
    }

    /// Interval whose output range holds `y`.
    pub(crate) fn interval_of_output(&self, y: f64) -> usize {
        let target = y * self.total();
        let m = self.piece.len();
        // Largest k < M with prefix[k] <= target.
        let k = self.prefix[..m].partition_point(|&p| p <= target);
        k.saturating_sub(1).min(m - 1)
    }

    /// Forward map without range checks; `v` is clamped into `[0, 1]`.
    pub fn eval(&self, v: f64) -> f64 {
        let v = v.clamp(0.0, 1.0);
        let k = self.interval_of(v);
        let frac = v * self.piece.len() as f64 - k as f64;
        (self.prefix[k] + self.piece[k] * frac) / self.total()
    }

    /// Inverse map without range checks; `y` is clamped into `[0, 1]`.
    pub fn invert(&self, y: f64) -> f64 {
        let y = y.clamp(0.0, 1.0);
        let k = self.interval_of_output(y);
        let frac = (y * self.total() - self.prefix[k]) / self.piece[k];
        ((k as f64 + frac) / self.piece.len() as f64).clamp(0.0, 1.0)
    }
}

impl PiecewiseMonotoneMap {
    /// Identity map (all raw parameters zero).
    pub fn identity(intervals: usize, alpha_min: f64, alpha_max: f64) -> Result<Self> {
        Self::from_raw(vec![0.0; intervals], alpha_min, alpha_max)
    }

    pub fn from_raw(u: Vec<f64>, alpha_min: f64, alpha_max: f64) -> Result<Self> {
        check_bounds(alpha_min, alpha_max)?;
        if u.is_empty() {
            return Err(Error::contract("PiecewiseMonotoneMap", "need at least one interval"));
        }
        if u.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("PiecewiseMonotoneMap raw parameter".into()));
        }
        Ok(PiecewiseMonotoneMap {
            u,
            alpha_min,
            alpha_max,
        })
    }

    /// Builds the map realizing the given slopes, each strictly inside the bounds.
    pub fn from_slopes(slopes: &[f64], alpha_min: f64, alpha_max: f64) -> Result<Self> {
        check_bounds(alpha_min, alpha_max)?;
        let u = slopes
            .iter()
            .map(|&a| {
                if !(a > alpha_min && a < alpha_max) {
                    return Err(Error::contract(
                        "PiecewiseMonotoneMap::from_slopes",
                        format!("slope {a} outside ({alpha_min}, {alpha_max})"),
                    ));
                }
                let s = (a - alpha_min) / (alpha_max - alpha_min);
                Ok((s / (1.0 - s)).ln())
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_raw(u, alpha_min, alpha_max)
    }

    pub fn intervals(&self) -> usize {
        self.u.len()
    }

    pub fn raw(&self) -> &[f64] {
        &self.u
    }

    pub fn raw_mut(&mut self) -> &mut [f64] {
        &mut self.u
    }

    pub fn alpha_min(&self) -> f64 {
        self.alpha_min
    }

    pub fn alpha_max(&self) -> f64 {
        self.alpha_max
    }

    pub fn slopes(&self) -> Vec<f64> {
        self.u
            .iter()
            .map(|&u| self.alpha_min + (self.alpha_max - self.alpha_min) * sigmoid(u))
            .collect()
    }

    pub fn table(&self) -> MapTable {
        let delta = 1.0 / self.u.len() as f64;
        let piece: Vec<f64> = self.slopes().into_iter().map(|a| a * delta).collect();
        let mut prefix = Vec::with_capacity(piece.len() + 1);
        let mut s = 0.0;
        prefix.push(0.0);
        for &p in &piece {
            s += p;
            prefix.push(s);
        }
        MapTable { piece, prefix }
    }

    pub fn forward(&self, v: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::contract("map_forward", format!("input {v} outside [0, 1]")));
        }
        Ok(self.table().eval(v))
    }

    pub fn inverse(&self, y: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&y) {
            return Err(Error::contract("map_inverse", format!("input {y} outside [0, 1]")));
        }
        Ok(self.table().invert(y))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slope_examples() {
        assert!((slope_from_raw(0.0, 0.1, 10.0).unwrap() - 5.05).abs() < 1e-15);
        let hi = slope_from_raw(40.0, 0.1, 10.0).unwrap();
        assert!(hi <= 10.0 && hi > 9.999_999);
        // sigma(ln 3) = 0.75; alpha_min must stay positive so use a tiny one.
        let s = slope_from_raw(3f64.ln(), 1e-300, 1.0).unwrap();
        assert!((s - 0.75).abs() < 1e-15);
        assert!(slope_from_raw(0.0, 0.0, 1.0).is_err());
        assert!(slope_from_raw(0.0, 2.0, 1.0).is_err());
    }

    #[test]
    fn uniform_slopes_give_identity() {
        let m = PiecewiseMonotoneMap::from_raw(vec![1.3; 7], 0.1, 10.0).unwrap();
        assert!((m.forward(0.37).unwrap() - 0.37).abs() < 1e-15);
        assert!((m.inverse(0.42).unwrap() - 0.42).abs() < 1e-15);
    }

    #[test]
    fn two_piece_hand_evaluation() {
        let m = PiecewiseMonotoneMap::from_slopes(&[1.0, 3.0], 0.5, 3.5).unwrap();
        assert!((m.forward(0.5).unwrap() - 0.25).abs() < 1e-12);
        assert!((m.forward(0.75).unwrap() - 0.625).abs() < 1e-12);
        assert!((m.inverse(0.25).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn endpoints_pinned() {
        let m = PiecewiseMonotoneMap::from_raw(vec![-3.0, 0.4, 2.2, 9.0, -0.1], 0.1, 10.0).unwrap();
        assert_eq!(m.forward(0.0).unwrap(), 0.0);
        assert_eq!(m.forward(1.0).unwrap(), 1.0);
        assert_eq!(m.inverse(0.0).unwrap(), 0.0);
        assert_eq!(m.inverse(1.0).unwrap(), 1.0);
    }

    #[test]
    fn out_of_range_inputs_rejected() {
        let m = PiecewiseMonotoneMap::identity(4, 0.1, 10.0).unwrap();
        assert!(m.forward(1.5).is_err());
        assert!(m.forward(-0.1).is_err());
        assert!(m.inverse(f64::NAN).is_err());
    }

    #[test]
    fn round_trip_sweep() {
        let m = PiecewiseMonotoneMap::from_raw((0..32).map(|i| (i as f64 * 0.7).sin() * 4.0).collect(), 0.1, 10.0)
            .unwrap();
        let t = m.table();
        let worst = (0..1000)
            .map(|i| i as f64 / 999.0)
            .map(|v| (v - t.invert(t.eval(v))).abs())
            .fold(0.0, f64::max);
        assert!(worst < 1e-10, "{worst}");
    }
}
