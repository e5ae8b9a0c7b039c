//! Learnable HSI: cylindrical coordinates around a learnable luminance axis,
//! with a learnable monotone map on each of the three coordinates.
//!
//! A pixel `p` is split into its projection on the unit axis `n` (luminance
//! `t`), the distance from the axis (saturation `r`) and the angle around it
//! (hue `θ`). Each coordinate passes through its own
//! [`PiecewiseMonotoneMap`], and the representation is
//! `(t', r' sin 2πθ', r' cos 2πθ')`.

mod axis;
mod diff;
mod map;
mod transform;

pub use axis::{max_radius, normalize_axis, orthobasis, AxisParam, Vec3};
pub use diff::{LhsiVars, MapVar};
pub use map::{slope_from_raw, MapTable, PiecewiseMonotoneMap};
pub use transform::{
    lhsi_to_rgb, rgb_to_lhsi, LhsiFrame, LhsiParams, DEFAULT_ALPHA_MAX, DEFAULT_ALPHA_MIN,
    DEFAULT_INTERVALS,
};
