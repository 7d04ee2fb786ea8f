use std::fs::OpenOptions;
use std::path::{Path, PathBuf};

use candle_core::{DType, Device};
use image::RgbImage;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::checkpoint::{checkpoint_name, compare_snapshot, save_checkpoint, CheckpointBundle};
use super::schedule::lr_at_epoch;
use super::state::{derive_seed, train_step, TrainState};
use crate::config::TrainConfig;
use crate::data::{load_image, scan_paired_dataset, ImageBatch, Split};
use crate::error::{Error, Result};
use crate::losses::LossComponents;

/// Name of the per-iteration CSV log inside `checkpoint_dir`.
pub const TRAIN_LOG: &str = "train_log.csv";

const SHUFFLE_SALT: u64 = 0x5348_5546;

/// Iterations in one epoch over `train_size` pairs.
pub fn iterations_per_epoch(train_size: usize, batch_size: usize) -> usize {
    train_size.div_ceil(batch_size)
}

/// Visiting order of the train split in a 1-based `epoch`.
pub fn epoch_order(seed: u64, epoch: usize, len: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..len).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed ^ SHUFFLE_SALT, epoch as u64));
    order.shuffle(&mut rng);
    order
}

/// Location of the checkpoint written after `epoch`.
pub fn checkpoint_path(cfg: &TrainConfig, epoch: usize) -> PathBuf {
    cfg.checkpoint_dir.join(checkpoint_name(epoch))
}

/// Trains from scratch; see [`train_from`].
pub fn train(cfg: &TrainConfig) -> Result<CheckpointBundle> {
    train_from(cfg, None)
}

/// Runs the remaining epochs of `cfg`, optionally continuing `resume`.
///
/// The returned bundle is also the last checkpoint written.
pub fn train_from(cfg: &TrainConfig, resume: Option<CheckpointBundle>) -> Result<CheckpointBundle> {
    cfg.validate()?;
    let device = Device::Cpu;
    let fresh = resume.is_none();
    let (mut state, mut history) = match resume {
        Some(bundle) => {
            compare_snapshot(&bundle.config, cfg);
            if bundle.state.epoch > cfg.epochs_total {
                return Err(Error::validation(
                    "train.epochs_total",
                    format!(
                        "checkpoint is at epoch {} but epochs_total is {}",
                        bundle.state.epoch, cfg.epochs_total
                    ),
                ));
            }
            (bundle.state, bundle.loss_history)
        }
        None => (TrainState::new(cfg, DType::F32, &device)?, Vec::new()),
    };

    let manifest = scan_paired_dataset(&cfg.dataset_root, cfg.dataset_layout)?;
    let size = cfg.image_size as u32;
    let pairs: Vec<(RgbImage, RgbImage)> = manifest
        .split(Split::Train)
        .iter()
        .map(|s| Ok((load_image(&s.source_path, size)?, load_image(&s.visible_path, size)?)))
        .collect::<Result<_>>()?;
    log::info!("loaded {} training pairs", pairs.len());

    std::fs::create_dir_all(&cfg.checkpoint_dir).map_err(|e| Error::io(&cfg.checkpoint_dir, e))?;
    let mut log = TrainLog::open(&cfg.checkpoint_dir.join(TRAIN_LOG), fresh)?;
    let weights = cfg.weights;
    let mut last_saved = None;

    while state.epoch < cfg.epochs_total {
        let epoch = state.epoch + 1;
        let lr = lr_at_epoch(epoch, cfg)?;
        state.set_lr(lr);
        let order = epoch_order(cfg.seed, epoch, pairs.len());
        let mut seen = Vec::with_capacity(order.len());
        for chunk in order.chunks(cfg.batch_size) {
            let sources: Vec<RgbImage> = chunk.iter().map(|&i| pairs[i].0.clone()).collect();
            let visibles: Vec<RgbImage> = chunk.iter().map(|&i| pairs[i].1.clone()).collect();
            let source = ImageBatch::from_images(&sources, &device)?;
            let visible = ImageBatch::from_images(&visibles, &device)?;
            let components = train_step(&mut state, (&source, &visible), &weights)?;
            log.row(epoch, state.iteration, &components, lr)?;
            seen.push(components);
        }
        state.epoch = epoch;
        let mean = LossComponents::mean(&seen);
        log::info!(
            "epoch {epoch}/{} lr {lr:.3e} syn {:.4}/{:.4} cyc {:.4}/{:.4}",
            cfg.epochs_total,
            mean.syn_t,
            mean.syn_v,
            mean.cyc_t,
            mean.cyc_v
        );
        history.push(mean);
        if epoch % cfg.checkpoint_every == 0 || epoch == cfg.epochs_total {
            let path = checkpoint_path(cfg, epoch);
            let bundle = CheckpointBundle {
                state,
                config: cfg.clone(),
                loss_history: history,
            };
            save_checkpoint(&bundle, &path)?;
            log::info!("wrote {}", path.display());
            last_saved = Some(epoch);
            state = bundle.state;
            history = bundle.loss_history;
        }
    }

    let bundle = CheckpointBundle {
        state,
        config: cfg.clone(),
        loss_history: history,
    };
    if last_saved != Some(bundle.state.epoch) {
        save_checkpoint(&bundle, &checkpoint_path(cfg, bundle.state.epoch))?;
    }
    Ok(bundle)
}

struct TrainLog {
    writer: csv::Writer<std::fs::File>,
}

impl TrainLog {
    /// A fresh run truncates the log; a resumed run appends to it.
    fn open(path: &Path, fresh: bool) -> Result<Self> {
        let write_header = fresh || !path.exists();
        let file = if fresh {
            std::fs::File::create(path)
        } else {
            OpenOptions::new().create(true).append(true).open(path)
        }
        .map_err(|e| Error::io(path, e))?;
        let mut writer = csv::Writer::from_writer(file);
        if write_header {
            let mut header = vec!["epoch", "iteration"];
            header.extend(LossComponents::COLUMNS);
            header.push("lr");
            writer.write_record(&header)?;
            writer.flush().map_err(|e| Error::io(path, e))?;
        }
        Ok(TrainLog { writer })
    }

    fn row(&mut self, epoch: usize, iteration: u64, c: &LossComponents, lr: f64) -> Result<()> {
        let mut record = vec![epoch.to_string(), iteration.to_string()];
        record.extend(c.values().iter().map(|v| v.to_string()));
        record.push(lr.to_string());
        self.writer.write_record(&record)?;
        self.writer
            .flush()
            .map_err(|e| Error::io(Path::new(TRAIN_LOG), e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn iteration_count_rounds_up() {
        assert_eq!(iterations_per_epoch(552, 1), 552);
        assert_eq!(iterations_per_epoch(8, 3), 3);
        assert_eq!(iterations_per_epoch(9, 3), 3);
    }

    #[test]
    fn shuffle_is_seeded_per_epoch() {
        let a = epoch_order(7, 1, 50);
        assert_eq!(a, epoch_order(7, 1, 50));
        assert_ne!(a, epoch_order(7, 2, 50));
        assert_ne!(a, epoch_order(8, 1, 50));
        let mut sorted = a.clone();
        sorted.sort();
        assert_eq!(sorted, (0..50).collect::<Vec<_>>());
    }
}
