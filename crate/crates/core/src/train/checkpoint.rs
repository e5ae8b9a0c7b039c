use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataio::write_file;
use crate::dclan::Dclan;
use crate::error::{Error, Result};
use crate::lhsi::{AxisParam, LhsiParams, PiecewiseMonotoneMap};
use crate::numerics::Tensor;
use crate::train::config::TrainConfig;
use crate::train::model::Model;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapsRecord {
    pub t: PiecewiseMonotoneMap,
    pub r: PiecewiseMonotoneMap,
    pub theta: PiecewiseMonotoneMap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightRecord {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// On-disk model state. Serialization is deterministic: weights are keyed
/// by name in sorted order and floats are written round-trip exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub version: u32,
    pub axis_raw: [f64; 3],
    pub maps: MapsRecord,
    pub weights: BTreeMap<String, WeightRecord>,
    pub config: TrainConfig,
    pub epoch: usize,
}

impl Checkpoint {
    pub fn from_model(model: &Model, config: &TrainConfig, epoch: usize) -> Self {
        let weights = model
            .weights
            .ids()
            .map(|id| {
                let t = model.weights.get(id);
                (
                    model.weights.name(id).to_string(),
                    WeightRecord {
                        shape: t.shape().to_vec(),
                        data: t.data().to_vec(),
                    },
                )
            })
            .collect();
        let mut config = config.clone();
        config.space = model.space;
        Checkpoint {
            version: CHECKPOINT_VERSION,
            axis_raw: model.lhsi.axis.raw,
            maps: MapsRecord {
                t: model.lhsi.map_t.clone(),
                r: model.lhsi.map_r.clone(),
                theta: model.lhsi.map_theta.clone(),
            },
            weights,
            config,
            epoch,
        }
    }

    /// Untrained model for `config`, as a checkpoint.
    pub fn initial(config: &TrainConfig) -> Result<Self> {
        Ok(Self::from_model(&Model::init(config)?, config, 0))
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| Error::Checkpoint(format!("not valid JSON: {e}")))?;
        let version = value
            .get("version")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| Error::Checkpoint("missing version field".into()))?;
        if version != CHECKPOINT_VERSION as u64 {
            return Err(Error::UnsupportedVersion {
                found: version.min(u32::MAX as u64) as u32,
                expected: CHECKPOINT_VERSION,
            });
        }
        let ckpt: Checkpoint = serde_json::from_value(value).map_err(|e| Error::Checkpoint(e.to_string()))?;
        ckpt.config.validate().map_err(|e| Error::Checkpoint(format!("config: {e}")))?;
        Ok(ckpt)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_file(path.as_ref(), self.to_json()?.as_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// Rebuilds the model, checking every weight against the architecture.
    pub fn to_model(&self) -> Result<Model> {
        let arch = &self.config.arch;
        let (net, mut weights) = Dclan::new(arch, 0).map_err(|e| Error::Checkpoint(format!("architecture: {e}")))?;
        for id in weights.ids().collect::<Vec<_>>() {
            let name = weights.name(id).to_string();
            let rec = self
                .weights
                .get(&name)
                .ok_or_else(|| Error::Checkpoint(format!("missing weight {name}")))?;
            let t = Tensor::new(rec.shape.clone(), rec.data.clone())
                .map_err(|e| Error::Checkpoint(format!("weight {name}: {e}")))?;
            if !t.is_finite() {
                return Err(Error::Checkpoint(format!("weight {name} has non-finite entries")));
            }
            weights.set(&name, t)?;
        }
        if self.weights.len() != weights.len() {
            let extra = self.weights.keys().find(|k| weights.id(k).is_none());
            return Err(Error::Checkpoint(format!("unexpected weight {}", extra.map_or("?", |s| s))));
        }
        let map = |m: &PiecewiseMonotoneMap, which: &str| -> Result<PiecewiseMonotoneMap> {
            if m.intervals() != arch.intervals {
                return Err(Error::Checkpoint(format!(
                    "map {which}: {} intervals, config says {}",
                    m.intervals(),
                    arch.intervals
                )));
            }
            PiecewiseMonotoneMap::from_raw(m.raw().to_vec(), m.alpha_min(), m.alpha_max())
                .map_err(|e| Error::Checkpoint(format!("map {which}: {e}")))
        };
        let axis = AxisParam::new(self.axis_raw);
        axis.direction().map_err(|e| Error::Checkpoint(format!("axis: {e}")))?;
        Ok(Model {
            space: self.config.space,
            lhsi: LhsiParams {
                axis,
                map_t: map(&self.maps.t, "t")?,
                map_r: map(&self.maps.r, "r")?,
                map_theta: map(&self.maps.theta, "theta")?,
            },
            net,
            weights,
        })
    }
}
