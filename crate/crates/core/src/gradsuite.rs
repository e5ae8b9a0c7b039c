//! Finite-difference checks of every differentiable component at small
//! shapes, shared by the test suite and the command-line tool.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dclan::{Bound, Builder, Cam, CamConfig, Dclan, DclanConfig, Grid, Mvm, MvmConfig, ParamStore, SpaceTape, SsmParams};
use crate::error::Result;
use crate::lhsi::{AxisParam, LhsiParams, LhsiVars, MapVar, PiecewiseMonotoneMap, DEFAULT_ALPHA_MAX, DEFAULT_ALPHA_MIN};
use crate::numerics::{grad_check, grad_check_coords, GradCheck, Tape, Tensor, Var};

/// Relative error every entry must stay below.
pub const TOLERANCE: f64 = 1e-4;
/// Central-difference step.
pub const STEP: f64 = 1e-5;

const INTERVALS: usize = 8;

#[derive(Debug, Clone)]
pub struct SuiteEntry {
    pub name: &'static str,
    pub report: GradCheck,
}

impl SuiteEntry {
    pub fn passed(&self) -> bool {
        self.report.max_rel_error < TOLERANCE
    }
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(lo..hi)).collect()).expect("shape matches")
}

/// `sum(w * y)` with a fixed random `w`, so that no output direction is
/// favored.
fn weighted_sum(tape: &Tape, y: Var, w: &Tensor) -> Result<Var> {
    let w = tape.constant(w.clone().reshape(&tape.shape(y))?);
    Ok(tape.sum(tape.mul(y, w)?))
}

fn random_weights(rng: &mut ChaCha8Rng, n: usize) -> Tensor {
    uniform(rng, &[n], -1.0, 1.0)
}

/// A point whose position inside its map interval is at least `margin`
/// (in units of the interval width) from either end.
fn interior(rng: &mut ChaCha8Rng, margin: f64) -> f64 {
    let k = rng.gen_range(0..INTERVALS) as f64;
    (k + rng.gen_range(margin..1.0 - margin)) / INTERVALS as f64
}

fn far_from_knots(table_pos: f64) -> bool {
    let f = (table_pos * INTERVALS as f64).fract();
    (0.02..0.98).contains(&f)
}

fn random_lhsi(rng: &mut ChaCha8Rng) -> Result<LhsiParams> {
    let map = |rng: &mut ChaCha8Rng| {
        let u = (0..INTERVALS).map(|_| rng.gen_range(-2.0..2.0)).collect();
        PiecewiseMonotoneMap::from_raw(u, DEFAULT_ALPHA_MIN, DEFAULT_ALPHA_MAX)
    };
    Ok(LhsiParams {
        axis: AxisParam::new([0; 3].map(|_| rng.gen_range(0.4..1.0))),
        map_t: map(rng)?,
        map_r: map(rng)?,
        map_theta: map(rng)?,
    })
}

fn lhsi_leaves(p: &LhsiParams) -> Vec<Tensor> {
    vec![
        Tensor::from_vec(p.axis.raw.to_vec()),
        Tensor::from_vec(p.map_t.raw().to_vec()),
        Tensor::from_vec(p.map_r.raw().to_vec()),
        Tensor::from_vec(p.map_theta.raw().to_vec()),
    ]
}

fn lhsi_vars(v: &[Var]) -> LhsiVars {
    LhsiVars::from_vars(v[0], v[1], v[2], v[3], DEFAULT_ALPHA_MIN, DEFAULT_ALPHA_MAX)
}

/// Pixels whose cylindrical coordinates, before and after mapping, keep
/// clear of interval knots, the hue wrap and the saturation clamp.
fn safe_pixels(rng: &mut ChaCha8Rng, params: &LhsiParams, count: usize) -> Result<Vec<f64>> {
    let frame = params.frame()?;
    let mut out = Vec::with_capacity(count * 3);
    while out.len() < count * 3 {
        let p: [f64; 3] = [0; 3].map(|_| rng.gen_range(0.05..0.95));
        let (t, r, th) = frame.cylindrical(&p);
        let mapped = [frame.t.eval(t), frame.r.eval(r), frame.theta.eval(th)];
        let ok = [t, r, th].iter().chain(&mapped).all(|&v| far_from_knots(v))
            && (0.05..0.95).contains(&r)
            && (0.02..0.98).contains(&th)
            && (0.02..0.98).contains(&mapped[2]);
        if ok {
            out.extend_from_slice(&p);
        }
    }
    Ok(out)
}

fn check_map_forward(rng: &mut ChaCha8Rng) -> Result<GradCheck> {
    let u = uniform(rng, &[INTERVALS], -2.0, 2.0);
    let v = Tensor::from_vec((0..24).map(|_| interior(rng, 0.05)).collect());
    let w = random_weights(rng, 24);
    grad_check(
        |t, x| {
            let m = MapVar { raw: x[0], alpha_min: DEFAULT_ALPHA_MIN, alpha_max: DEFAULT_ALPHA_MAX };
            weighted_sum(t, m.forward(t, x[1])?, &w)
        },
        &[u, v],
        STEP,
    )
}

fn check_map_inverse(rng: &mut ChaCha8Rng) -> Result<GradCheck> {
    let raw: Vec<f64> = (0..INTERVALS).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let map = PiecewiseMonotoneMap::from_raw(raw.clone(), DEFAULT_ALPHA_MIN, DEFAULT_ALPHA_MAX)?;
    let table = map.table();
    let ys: Vec<f64> = (0..24).map(|_| table.eval(interior(rng, 0.05))).collect();
    let w = random_weights(rng, 24);
    grad_check(
        |t, x| {
            let m = MapVar { raw: x[0], alpha_min: DEFAULT_ALPHA_MIN, alpha_max: DEFAULT_ALPHA_MAX };
            weighted_sum(t, m.inverse(t, x[1])?, &w)
        },
        &[Tensor::from_vec(raw), Tensor::from_vec(ys)],
        STEP,
    )
}

fn check_rgb_to_lhsi(rng: &mut ChaCha8Rng) -> Result<GradCheck> {
    let params = random_lhsi(rng)?;
    let px = 16;
    let mut point = lhsi_leaves(&params);
    point.push(Tensor::new(vec![px, 3], safe_pixels(rng, &params, px)?)?);
    let w = random_weights(rng, px * 3);
    grad_check(|t, x| weighted_sum(t, lhsi_vars(x).encode(t, x[4])?, &w), &point, STEP)
}

fn check_lhsi_to_rgb(rng: &mut ChaCha8Rng) -> Result<GradCheck> {
    let params = random_lhsi(rng)?;
    let px = 16;
    // Gray-ish pixels decode strictly inside the cube.
    let frame = params.frame()?;
    let mut rep = Vec::new();
    let pixels = safe_pixels(rng, &params, px * 4)?;
    for p in pixels.chunks(3) {
        let mut c = [0.0; 3];
        frame.encode_pixel(p, &mut c);
        if p.iter().all(|v| (0.1..0.9).contains(v)) {
            rep.extend_from_slice(&c);
        }
        if rep.len() == px * 3 {
            break;
        }
    }
    let px = rep.len() / 3;
    let mut point = lhsi_leaves(&params);
    point.push(Tensor::new(vec![px, 3], rep)?);
    let w = random_weights(rng, px * 3);
    grad_check(|t, x| weighted_sum(t, lhsi_vars(x).decode(t, x[4])?, &w), &point, STEP)
}

fn check_scan(rng: &mut ChaCha8Rng) -> Result<GradCheck> {
    let (l, c, n) = (7, 3, 4);
    let point = vec![
        uniform(rng, &[l, c], -1.0, 1.0),
        uniform(rng, &[l, c], 0.05, 0.8),
        uniform(rng, &[c, n], -3.0, -0.2),
        uniform(rng, &[l, n], -1.0, 1.0),
        uniform(rng, &[l, n], -1.0, 1.0),
    ];
    let w = random_weights(rng, l * c);
    grad_check(|t, x| weighted_sum(t, t.selective_scan(x[0], x[1], x[2], x[3], x[4])?, &w), &point, STEP)
}

/// Leaves: `[input, weights...]`.
fn store_point(input: Tensor, store: &ParamStore) -> Vec<Tensor> {
    std::iter::once(input).chain(store.ids().map(|id| store.get(id).clone())).collect()
}

fn bound(x: &[Var], from: usize) -> Bound {
    Bound::from_vars(x[from..].to_vec())
}

fn check_ssm_layer(rng: &mut ChaCha8Rng) -> Result<GradCheck> {
    let (l, width) = (6, 4);
    let mut store = ParamStore::new();
    let mut init = ChaCha8Rng::seed_from_u64(rng.gen());
    let ssm = SsmParams::new(&mut Builder::new(&mut store, &mut init), "ssm", width, 3)?;
    let point = store_point(uniform(rng, &[l, width], -1.0, 1.0), &store);
    let w = random_weights(rng, l * width);
    grad_check(|t, x| weighted_sum(t, ssm.forward(t, &bound(x, 1), x[0])?, &w), &point, STEP)
}

fn check_mvm(rng: &mut ChaCha8Rng) -> Result<GradCheck> {
    let (l, width) = (4, 8);
    let mut store = ParamStore::new();
    let mut init = ChaCha8Rng::seed_from_u64(rng.gen());
    let config = MvmConfig { width, expand: 2, kernel: 3, state: 4 };
    let mvm = Mvm::new(&mut Builder::new(&mut store, &mut init), "mvm", config)?;
    let point = store_point(uniform(rng, &[l, width], -1.0, 1.0), &store);
    let w = random_weights(rng, l * width);
    grad_check(|t, x| weighted_sum(t, mvm.forward(t, &bound(x, 1), x[0])?, &w), &point, STEP)
}

fn check_cam(rng: &mut ChaCha8Rng) -> Result<GradCheck> {
    let (l, width) = (4, 4);
    let mut store = ParamStore::new();
    let mut init = ChaCha8Rng::seed_from_u64(rng.gen());
    let config = CamConfig { width_hs: width, width_i: width, heads: 2, expand: 2 };
    let cam = Cam::new(&mut Builder::new(&mut store, &mut init), "cam", config)?;
    let mut point = store_point(uniform(rng, &[l, width], -1.0, 1.0), &store);
    point.insert(1, uniform(rng, &[l, width], -1.0, 1.0));
    let (w_hs, w_i) = (random_weights(rng, l * width), random_weights(rng, l * width));
    grad_check(
        |t, x| {
            let (hs, i) = cam.forward(t, &bound(x, 2), x[0], x[1])?;
            Ok(t.add(weighted_sum(t, hs, &w_hs)?, weighted_sum(t, i, &w_i)?)?)
        },
        &point,
        STEP,
    )
}

/// The smallest architecture that still has two scales.
pub fn tiny_config() -> DclanConfig {
    DclanConfig {
        widths: vec![4, 8],
        blocks_per_scale: 1,
        state_size: 2,
        heads: 2,
        expand: 2,
        kernel: 3,
        intervals: INTERVALS,
    }
}

fn check_dclan(rng: &mut ChaCha8Rng) -> Result<GradCheck> {
    let side = 16;
    let (net, mut store) = Dclan::new(&tiny_config(), rng.gen())?;
    // Nonzero heads, or everything upstream of them would have zero gradient.
    for head in [&net.head_i, &net.head_hs] {
        let shape = store.get(head.w).shape().to_vec();
        *store.get_mut(head.w) = uniform(rng, &shape, -0.2, 0.2);
    }
    let params = random_lhsi(rng)?;
    let image = Tensor::new(vec![side * side, 3], safe_pixels(rng, &params, side * side)?)?;
    let mut point = lhsi_leaves(&params);
    point.push(image);
    point.extend(store.ids().map(|id| store.get(id).clone()));
    // Every color-space coordinate, and a few of each weight and input tensor.
    let mut coords = Vec::new();
    for (leaf, t) in point.iter().enumerate() {
        if leaf < 4 {
            coords.extend((0..t.numel()).map(|i| (leaf, i)));
        } else {
            coords.extend((0..2).map(|_| (leaf, rng.gen_range(0..t.numel()))));
        }
    }
    let g = Grid { height: side, width: side };
    grad_check_coords(
        |t, x| {
            let space = SpaceTape::Lhsi(lhsi_vars(x));
            let out = net.forward(t, &bound(x, 5), &space, x[4], g)?;
            Ok(t.mean(out.rgb))
        },
        &point,
        STEP,
        &coords,
    )
}

/// Runs every check with inputs drawn from `seed`.
pub fn run(seed: u64) -> Result<Vec<SuiteEntry>> {
    type Check = fn(&mut ChaCha8Rng) -> Result<GradCheck>;
    let checks: [(&'static str, Check); 9] = [
        ("map_forward", check_map_forward),
        ("map_inverse", check_map_inverse),
        ("rgb_to_lhsi", check_rgb_to_lhsi),
        ("lhsi_to_rgb", check_lhsi_to_rgb),
        ("selective_scan", check_scan),
        ("ssm_layer", check_ssm_layer),
        ("mvm_forward", check_mvm),
        ("cam_forward", check_cam),
        ("dclan_forward", check_dclan),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    checks
        .iter()
        .map(|&(name, f)| {
            let mut sub = ChaCha8Rng::seed_from_u64(rng.gen());
            Ok(SuiteEntry { name, report: f(&mut sub)? })
        })
        .collect()
}
