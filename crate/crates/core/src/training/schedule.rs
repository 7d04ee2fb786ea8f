use crate::config::TrainConfig;
use crate::error::{Error, Result};

/// Learning rate for a 1-based epoch: constant, then linear decay to zero.
///
/// `base_lr` for `epoch <= epochs_constant_lr`, then
/// `base_lr * (epochs_total - epoch) / (epochs_total - epochs_constant_lr)`.
pub fn lr_at_epoch(epoch: usize, cfg: &TrainConfig) -> Result<f64> {
    if epoch == 0 || epoch > cfg.epochs_total {
        return Err(Error::validation(
            "epoch",
            format!("{epoch} is outside 1..={}", cfg.epochs_total),
        ));
    }
    if epoch <= cfg.epochs_constant_lr {
        return Ok(cfg.base_lr);
    }
    let remaining = (cfg.epochs_total - epoch) as f64;
    let span = (cfg.epochs_total - cfg.epochs_constant_lr) as f64;
    Ok(cfg.base_lr * (remaining / span))
}
