use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};

use super::state::{ModelBundle, TrainState};
use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::losses::LossComponents;
use crate::networks::{Generator, Network};

/// Bumped whenever the on-disk layout changes.
pub const FORMAT_VERSION: u32 = 1;

const META: &str = "meta.json";
const OPTIMIZER: &str = "optimizer.safetensors";
const NETWORKS: [&str; 4] = ["g_v", "g_t", "d_v", "d_t"];

/// Per-epoch means of every loss component.
pub type LossHistory = Vec<LossComponents>;

#[derive(Debug, Serialize, Deserialize)]
struct Meta {
    format_version: u32,
    epoch: usize,
    iteration: u64,
    config: TrainConfig,
    loss_history: LossHistory,
}

/// Trained state plus the config it was trained under.
#[derive(Debug)]
pub struct CheckpointBundle {
    pub state: TrainState,
    pub config: TrainConfig,
    pub loss_history: LossHistory,
}

impl CheckpointBundle {
    pub fn epoch(&self) -> usize {
        self.state.epoch
    }
}

/// Directory name used for the checkpoint taken after `epoch`.
pub fn checkpoint_name(epoch: usize) -> String {
    format!("epoch-{epoch:04}")
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn save_tensors(tensors: &HashMap<String, Tensor>, path: &Path) -> Result<()> {
    let tmp = path.with_extension("tmp");
    candle_core::safetensors::save(tensors, &tmp)?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn load_tensors(path: &Path, device: &Device) -> Result<HashMap<String, Tensor>> {
    let incompatible = |reason: String| Error::Incompatible {
        path: path.to_path_buf(),
        reason,
    };
    let bytes = fs::read(path).map_err(|e| incompatible(format!("cannot read: {e}")))?;
    candle_core::safetensors::load_buffer(&bytes, device)
        .map_err(|e| incompatible(format!("unreadable tensor file: {e}")))
}

fn networks(models: &ModelBundle) -> [&dyn Network; 4] {
    [&models.g_v, &models.g_t, &models.d_v, &models.d_t]
}

fn optimizers(state: &TrainState) -> [&super::Adam; 4] {
    [&state.opt_g_v, &state.opt_g_t, &state.opt_d_v, &state.opt_d_t]
}

/// Writes `bundle` into directory `dir`; `meta.json` is written last.
pub fn save_checkpoint(bundle: &CheckpointBundle, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (name, net) in NETWORKS.iter().zip(networks(&bundle.state.models)) {
        save_tensors(&net.params().tensors()?, &dir.join(format!("{name}.safetensors")))?;
    }
    let mut opt_state = HashMap::new();
    for (name, opt) in NETWORKS.iter().zip(optimizers(&bundle.state)) {
        for (key, t) in opt.state()? {
            opt_state.insert(format!("{name}/{key}"), t);
        }
    }
    save_tensors(&opt_state, &dir.join(OPTIMIZER))?;
    let meta = Meta {
        format_version: FORMAT_VERSION,
        epoch: bundle.state.epoch,
        iteration: bundle.state.iteration,
        config: bundle.config.clone(),
        loss_history: bundle.loss_history.clone(),
    };
    write_atomic(&dir.join(META), serde_json::to_string_pretty(&meta)?.as_bytes())
}

fn read_meta(dir: &Path) -> Result<Meta> {
    let incompatible = |path: PathBuf, reason: String| Error::Incompatible { path, reason };
    let meta_path = dir.join(META);
    let text = fs::read_to_string(&meta_path)
        .map_err(|e| incompatible(meta_path.clone(), format!("cannot read: {e}")))?;
    let raw: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| incompatible(meta_path.clone(), format!("malformed metadata: {e}")))?;
    let version = raw.get("format_version").and_then(|v| v.as_u64());
    if version != Some(u64::from(FORMAT_VERSION)) {
        let found = version.map_or_else(|| "none".to_string(), |v| v.to_string());
        return Err(incompatible(
            meta_path,
            format!("format_version {found} is not supported (expected {FORMAT_VERSION})"),
        ));
    }
    serde_json::from_value(raw).map_err(|e| incompatible(meta_path, format!("malformed metadata: {e}")))
}

/// Both generators and the config snapshot, without optimizer or feature state.
pub fn load_generators(dir: &Path, device: &Device) -> Result<(Generator, Generator, TrainConfig)> {
    let meta = read_meta(dir)?;
    let g_v = Generator::new(3, DType::F32, device)?;
    let g_t = Generator::new(3, DType::F32, device)?;
    for (name, net) in [("g_v", &g_v), ("g_t", &g_t)] {
        let path = dir.join(format!("{name}.safetensors"));
        let tensors = load_tensors(&path, device)?;
        net.params().load(&tensors).map_err(|e| Error::Incompatible {
            path: path.clone(),
            reason: e.to_string(),
        })?;
    }
    Ok((g_v, g_t, meta.config))
}

/// Rebuilds the full training state stored in `dir`.
///
/// Nothing is returned unless every file parses and matches the expected shapes.
pub fn load_checkpoint(dir: &Path, device: &Device) -> Result<CheckpointBundle> {
    let incompatible = |path: PathBuf, reason: String| Error::Incompatible { path, reason };
    let meta = read_meta(dir)?;
    let models = ModelBundle::new(&meta.config, DType::F32, device)?;
    let mut state = TrainState::from_models(models, &meta.config)?;
    for (name, net) in NETWORKS.iter().zip(networks(&state.models)) {
        let path = dir.join(format!("{name}.safetensors"));
        let tensors = load_tensors(&path, device)?;
        net.params()
            .load(&tensors)
            .map_err(|e| incompatible(path.clone(), e.to_string()))?;
    }
    let opt_path = dir.join(OPTIMIZER);
    let all = load_tensors(&opt_path, device)?;
    let opts = [
        &mut state.opt_g_v,
        &mut state.opt_g_t,
        &mut state.opt_d_v,
        &mut state.opt_d_t,
    ];
    for (name, opt) in NETWORKS.iter().zip(opts) {
        let prefix = format!("{name}/");
        let part: HashMap<String, Tensor> = all
            .iter()
            .filter_map(|(k, t)| k.strip_prefix(&prefix).map(|k| (k.to_string(), t.clone())))
            .collect();
        opt.load_state(&part)
            .map_err(|e| incompatible(opt_path.clone(), e.to_string()))?;
    }
    state.epoch = meta.epoch;
    state.iteration = meta.iteration;
    Ok(CheckpointBundle {
        state,
        config: meta.config,
        loss_history: meta.loss_history,
    })
}

/// Human-readable differences between a checkpoint's config and `current`.
///
/// Each difference is also logged as a warning.
pub fn compare_snapshot(snapshot: &TrainConfig, current: &TrainConfig) -> Vec<String> {
    let mut diffs = Vec::new();
    let name = |c: &TrainConfig| c.preset.map_or("custom", |p| p.name()).to_string();
    if snapshot.preset != current.preset {
        diffs.push(format!(
            "loss preset differs: checkpoint `{}`, current `{}`",
            name(snapshot),
            name(current)
        ));
    } else if snapshot.weights != current.weights {
        diffs.push("loss weights differ from the checkpoint".to_string());
    }
    if snapshot.image_size != current.image_size {
        diffs.push(format!(
            "image size differs: checkpoint {}, current {}",
            snapshot.image_size, current.image_size
        ));
    }
    if snapshot.feature_extractor != current.feature_extractor {
        diffs.push("feature extractor differs from the checkpoint".to_string());
    }
    for d in &diffs {
        log::warn!("{d}");
    }
    diffs
}
