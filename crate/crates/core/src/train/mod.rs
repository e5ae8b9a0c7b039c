//! Training: losses, optimizer, schedule, synthetic casts, the training
//! loop and checkpoints.

mod checkpoint;
mod config;
mod model;
mod optim;
mod synth;

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use checkpoint::{Checkpoint, MapsRecord, WeightRecord, CHECKPOINT_VERSION};
pub use config::TrainConfig;
pub use model::{working_size, Model};
pub use optim::{adam_step, clip_grad_norm, AdamConfig, AdamState};
pub use synth::{apply_gains, draw_gains, synth_corrupt, synthetic_scene, CAST_GAMMA, GAIN_RANGE};

use crate::dataio::{crop, crop_offset, load_image, ManifestEntry};
use crate::dclan::{Grid, SpaceTape};
use crate::error::{Error, Result};
use crate::exec::try_par_map;
use crate::image::PlanarImage;
use crate::metrics::delta_e2000;
use crate::numerics::{Tape, Var};

/// `w_rgb * mean|pred_rgb - gt_rgb| + w_lhsi * mean|pred_rep - gt_rep|`.
pub fn total_loss(
    tape: &Tape,
    pred_rgb: Var,
    gt_rgb: Var,
    pred_rep: Var,
    gt_rep: Var,
    w_rgb: f64,
    w_lhsi: f64,
) -> Result<Var> {
    for (a, b) in [(pred_rgb, gt_rgb), (pred_rep, gt_rep)] {
        let (sa, sb) = (tape.shape(a), tape.shape(b));
        if sa != sb {
            return Err(Error::shape("total_loss", &sa, &sb));
        }
    }
    let l_rgb = tape.mean(tape.abs(tape.sub(pred_rgb, gt_rgb)?));
    let l_rep = tape.mean(tape.abs(tape.sub(pred_rep, gt_rep)?));
    tape.add(tape.scale(l_rgb, w_rgb), tape.scale(l_rep, w_lhsi))
}

/// A corrupted input with its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Pair {
    pub input: PlanarImage,
    pub target: PlanarImage,
}

/// A training image: either a fixed pair, or a clean image that receives a
/// fresh synthetic cast at every step.
#[derive(Debug, Clone, PartialEq)]
pub enum TrainItem {
    Pair(Pair),
    Clean(PlanarImage),
}

impl TrainItem {
    fn target(&self) -> &PlanarImage {
        match self {
            TrainItem::Pair(p) => &p.target,
            TrainItem::Clean(c) => c,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub train: Vec<TrainItem>,
    pub val: Vec<Pair>,
}

impl Dataset {
    /// `train_count` clean synthetic scenes plus `val_count` held-out
    /// scenes with fixed casts, all `size x size`.
    pub fn synthetic(train_count: usize, val_count: usize, size: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let train = (0..train_count)
            .map(|_| TrainItem::Clean(synthetic_scene(size, rng.gen())))
            .collect();
        let val = (0..val_count)
            .map(|_| {
                let target = synthetic_scene(size, rng.gen());
                Pair {
                    input: synth_corrupt(&target, rng.gen()),
                    target,
                }
            })
            .collect();
        Dataset { train, val }
    }

    /// Loads manifest entries; the last `val_count` entries are held out
    /// (at least one image always stays in training). Held-out entries
    /// without a target get a fixed synthetic cast.
    pub fn from_manifest(entries: &[ManifestEntry], val_count: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let val_count = val_count.min(entries.len().saturating_sub(1));
        let split = entries.len() - val_count;
        let mut train = Vec::new();
        let mut val = Vec::new();
        for (k, e) in entries.iter().enumerate() {
            let img = load_image(&e.input_path)?;
            let item = match &e.target_path {
                Some(t) => {
                    let target = load_image(t)?;
                    if !target.same_shape(&img) {
                        return Err(Error::Decode {
                            path: t.clone(),
                            msg: "target size differs from input".into(),
                        });
                    }
                    TrainItem::Pair(Pair { input: img, target })
                }
                None => TrainItem::Clean(img),
            };
            if k < split {
                train.push(item);
            } else {
                val.push(match item {
                    TrainItem::Pair(p) => p,
                    TrainItem::Clean(c) => Pair {
                        input: synth_corrupt(&c, rng.gen()),
                        target: c,
                    },
                });
            }
        }
        Ok(Dataset { train, val })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    /// 0 is the untrained model.
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: Option<f64>,
    pub val_de2000: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub space: crate::refspaces::Space,
    pub seed: u64,
    pub epochs: Vec<EpochLog>,
    pub initial_val_de2000: Option<f64>,
    pub final_val_de2000: Option<f64>,
}

impl TrainReport {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::dataio::write_file(path.as_ref(), self.to_json()?.as_bytes())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    pub checkpoint: Checkpoint,
    pub report: TrainReport,
}

/// Mean ΔE2000 of the model's corrections over `pairs`.
pub fn evaluate(model: &Model, pairs: &[Pair], net_size: usize) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::contract("evaluate", "no validation pairs"));
    }
    let scores = try_par_map(pairs, |p| delta_e2000(&model.correct(&p.input, net_size)?, &p.target))?;
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

/// Loss and gradients for one crop.
struct SampleGrads {
    loss: f64,
    grads: Vec<Vec<f64>>,
}

/// Parameter groups in optimizer order: network weights, then (for the
/// learnable space) axis and the three maps.
fn param_sizes(model: &Model) -> Vec<usize> {
    let mut sizes: Vec<usize> = model.weights.ids().map(|id| model.weights.get(id).numel()).collect();
    if model.space.is_learnable() {
        sizes.push(3);
        sizes.extend([&model.lhsi.map_t, &model.lhsi.map_r, &model.lhsi.map_theta].map(|m| m.intervals()));
    }
    sizes
}

fn sample_grads(model: &Model, cfg: &TrainConfig, input: &PlanarImage, target: &PlanarImage) -> Result<SampleGrads> {
    let tape = Tape::new();
    let p = model.weights.bind(&tape, true);
    let learnable = model.space.is_learnable();
    let space = SpaceTape::bind(&tape, model.space, &model.lhsi, learnable);
    let g = Grid {
        height: input.height(),
        width: input.width(),
    };
    let x = tape.constant(input.to_tensor());
    let out = model.net.forward(&tape, &p, &space, x, g)?;
    let gt = tape.constant(target.to_tensor());
    let gt_rep = space.encode(&tape, gt)?;
    let loss = total_loss(&tape, out.rgb, gt, out.rep, gt_rep, cfg.w_rgb, cfg.w_lhsi)?;
    let value = tape.item(loss);
    let grads = tape.backward(loss)?;
    let mut leaves: Vec<Var> = p.vars().to_vec();
    if learnable {
        let v = space.lhsi_vars().expect("learnable space is bound as LHSI");
        leaves.extend([v.axis, v.map_t, v.map_r, v.map_theta]);
    }
    Ok(SampleGrads {
        loss: value,
        grads: leaves.iter().map(|&v| grads.get(v).into_data()).collect(),
    })
}

fn apply_update(model: &mut Model, grads: &[Vec<f64>], state: &mut AdamState, lr: f64, cfg: &AdamConfig) -> Result<()> {
    let learnable = model.space.is_learnable();
    let Model { weights, lhsi, .. } = model;
    let mut params: Vec<&mut [f64]> = weights.tensors_mut().iter_mut().map(|t| t.data_mut()).collect();
    if learnable {
        params.push(&mut lhsi.axis.raw[..]);
        params.push(lhsi.map_t.raw_mut());
        params.push(lhsi.map_r.raw_mut());
        params.push(lhsi.map_theta.raw_mut());
    }
    adam_step(&mut params, grads, state, lr, cfg)
}

/// Trains from `model`'s current state. `on_epoch` sees every log entry
/// as soon as it is complete.
pub fn train_loop_from(
    mut model: Model,
    config: &TrainConfig,
    data: &Dataset,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    config.validate()?;
    if data.train.is_empty() {
        return Err(Error::contract("train_loop", "empty training set"));
    }
    for item in &data.train {
        let t = item.target();
        if t.height() < config.crop || t.width() < config.crop {
            return Err(Error::contract(
                "train_loop",
                format!("image {}x{} smaller than crop {}", t.height(), t.width(), config.crop),
            ));
        }
    }
    let adam = config.adam();
    let mut state = AdamState::new(&param_sizes(&model));
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let validate = |m: &Model| -> Result<Option<f64>> {
        if data.val.is_empty() {
            Ok(None)
        } else {
            evaluate(m, &data.val, config.net_size).map(Some)
        }
    };
    let mut logs = Vec::new();
    let first = EpochLog {
        epoch: 0,
        lr: config.lr_at_epoch(0),
        train_loss: None,
        val_de2000: validate(&model)?,
    };
    log::info!("epoch 0: val dE2000 {:?}", first.val_de2000);
    on_epoch(&first);
    logs.push(first);

    let mut order: Vec<usize> = (0..data.train.len()).collect();
    for epoch in 0..config.epochs {
        let lr = config.lr_at_epoch(epoch);
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut seen = 0usize;
        for (step, batch) in order.chunks(config.batch).enumerate() {
            // Draw all randomness for the batch on this thread, in order.
            let crops = batch
                .iter()
                .map(|&k| {
                    let item = &data.train[k];
                    let (y, x) = crop_offset(item.target(), config.crop, &mut rng)?;
                    let target = crop(item.target(), y, x, config.crop, config.crop)?;
                    let input = match item {
                        TrainItem::Pair(p) => crop(&p.input, y, x, config.crop, config.crop)?,
                        TrainItem::Clean(_) => synth_corrupt(&target, rng.gen()),
                    };
                    Ok(Pair { input, target })
                })
                .collect::<Result<Vec<_>>>()?;
            let results = try_par_map(&crops, |p| sample_grads(&model, config, &p.input, &p.target))?;
            let mut grads = results[0].grads.clone();
            for r in &results[1..] {
                for (acc, g) in grads.iter_mut().zip(&r.grads) {
                    acc.iter_mut().zip(g).for_each(|(a, b)| *a += b);
                }
            }
            let scale = 1.0 / results.len() as f64;
            grads.iter_mut().flatten().for_each(|g| *g *= scale);
            let batch_loss = results.iter().map(|r| r.loss).sum::<f64>() * scale;
            if !batch_loss.is_finite() {
                return Err(Error::NonFinite(format!("loss at epoch {} step {step}", epoch + 1)));
            }
            if let Some(c) = config.grad_clip {
                clip_grad_norm(&mut grads, c);
            }
            apply_update(&mut model, &grads, &mut state, lr, &adam)
                .map_err(|e| Error::NonFinite(format!("epoch {} step {step}: {e}", epoch + 1)))?;
            loss_sum += batch_loss * results.len() as f64;
            seen += results.len();
        }
        let done = epoch + 1;
        let val = if done % config.val_every == 0 || done == config.epochs {
            validate(&model)?
        } else {
            None
        };
        let entry = EpochLog {
            epoch: done,
            lr,
            train_loss: Some(loss_sum / seen as f64),
            val_de2000: val,
        };
        log::info!(
            "epoch {done}: lr {lr:.3e} train loss {:.6} val dE2000 {:?}",
            loss_sum / seen as f64,
            val
        );
        on_epoch(&entry);
        logs.push(entry);
    }
    let report = TrainReport {
        space: model.space,
        seed: config.seed,
        initial_val_de2000: logs.first().and_then(|l| l.val_de2000),
        final_val_de2000: logs.last().and_then(|l| l.val_de2000),
        epochs: logs,
    };
    let checkpoint = Checkpoint::from_model(&model, config, config.epochs);
    Ok(TrainOutcome {
        model,
        checkpoint,
        report,
    })
}

/// Trains a freshly initialized model.
pub fn train_loop(config: &TrainConfig, data: &Dataset, on_epoch: impl FnMut(&EpochLog)) -> Result<TrainOutcome> {
    let model = Model::init(config)?;
    train_loop_from(model, config, data, on_epoch)
}
