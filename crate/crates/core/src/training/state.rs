use candle_core::{DType, Device, Tensor};

use super::adam::Adam;
use crate::config::{LossWeights, TrainConfig};
use crate::data::ImageBatch;
use crate::error::{Error, Result};
use crate::losses::{discriminator_terms, ForwardBundle, GeneratorTerms, LossComponents};
use crate::networks::{init_weights, Discriminator, FeatureExtractor, Generator, Network};

// Offsets mixed into the run seed so each network draws from its own stream.
const SEED_G_V: u64 = 0x11;
const SEED_G_T: u64 = 0x22;
const SEED_D_V: u64 = 0x33;
const SEED_D_T: u64 = 0x44;
const SEED_PHI: u64 = 0x55;

pub(crate) fn derive_seed(seed: u64, salt: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed.wrapping_add(salt.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// The four trainable networks and the frozen feature extractor.
#[derive(Debug)]
pub struct ModelBundle {
    /// Source (thermal / NIR) to visible.
    pub g_v: Generator,
    /// Visible to source.
    pub g_t: Generator,
    pub d_v: Discriminator,
    pub d_t: Discriminator,
    pub phi: FeatureExtractor,
}

impl ModelBundle {
    /// Builds and initializes every network from the config's seed.
    pub fn new(cfg: &TrainConfig, dtype: DType, device: &Device) -> Result<Self> {
        let bundle = ModelBundle {
            g_v: Generator::new(3, dtype, device)?,
            g_t: Generator::new(3, dtype, device)?,
            d_v: Discriminator::new(3, dtype, device)?,
            d_t: Discriminator::new(3, dtype, device)?,
            phi: FeatureExtractor::new(
                &cfg.feature_extractor,
                derive_seed(cfg.seed, SEED_PHI),
                dtype,
                device,
            )?,
        };
        let (mean, std) = (cfg.init_mean, cfg.init_std);
        init_weights(&bundle.g_v, mean, std, derive_seed(cfg.seed, SEED_G_V))?;
        init_weights(&bundle.g_t, mean, std, derive_seed(cfg.seed, SEED_G_T))?;
        init_weights(&bundle.d_v, mean, std, derive_seed(cfg.seed, SEED_D_V))?;
        init_weights(&bundle.d_t, mean, std, derive_seed(cfg.seed, SEED_D_T))?;
        Ok(bundle)
    }
}

/// Loss tensors of one forward pass, before any parameter update.
pub struct StepLosses {
    pub bundle: ForwardBundle,
    pub generator_total: Tensor,
    pub adv_d_t: Tensor,
    pub adv_d_v: Tensor,
    pub components: LossComponents,
}

/// Networks, their Adam states and progress counters.
#[derive(Debug)]
pub struct TrainState {
    pub models: ModelBundle,
    pub opt_g_v: Adam,
    pub opt_g_t: Adam,
    pub opt_d_v: Adam,
    pub opt_d_t: Adam,
    /// Number of fully completed epochs.
    pub epoch: usize,
    pub iteration: u64,
    image_size: usize,
}

impl TrainState {
    pub fn new(cfg: &TrainConfig, dtype: DType, device: &Device) -> Result<Self> {
        Self::from_models(ModelBundle::new(cfg, dtype, device)?, cfg)
    }

    pub fn from_models(models: ModelBundle, cfg: &TrainConfig) -> Result<Self> {
        let lr = cfg.base_lr;
        let beta1 = cfg.adam_beta1;
        Ok(TrainState {
            opt_g_v: Adam::new(models.g_v.params(), lr, beta1)?,
            opt_g_t: Adam::new(models.g_t.params(), lr, beta1)?,
            opt_d_v: Adam::new(models.d_v.params(), lr, beta1)?,
            opt_d_t: Adam::new(models.d_t.params(), lr, beta1)?,
            models,
            epoch: 0,
            iteration: 0,
            image_size: cfg.image_size,
        })
    }

    pub fn set_lr(&mut self, lr: f64) {
        for opt in [&mut self.opt_g_v, &mut self.opt_g_t, &mut self.opt_d_v, &mut self.opt_d_t] {
            opt.set_lr(lr);
        }
    }

    pub fn lr(&self) -> f64 {
        self.opt_g_v.lr()
    }

    fn check_batch(&self, batch: &ImageBatch, what: &str) -> Result<()> {
        let dims = batch.tensor().dims();
        let s = self.image_size;
        if dims.len() != 4 || dims[1] != 3 || dims[2] != s || dims[3] != s {
            return Err(Error::Shape(format!(
                "{what} batch has shape {dims:?}, expected (B, 3, {s}, {s})"
            )));
        }
        Ok(())
    }

    /// Forward pass through all networks and every loss term.
    pub fn forward_losses(
        &self,
        source: &ImageBatch,
        visible: &ImageBatch,
        weights: &LossWeights,
    ) -> Result<StepLosses> {
        self.check_batch(source, "source")?;
        self.check_batch(visible, "visible")?;
        let dtype = self.models.g_v.params().dtype();
        let real_t = source.tensor().to_dtype(dtype)?;
        let real_v = visible.tensor().to_dtype(dtype)?;
        let m = &self.models;
        let bundle = ForwardBundle::compute(&m.g_t, &m.g_v, &real_t, &real_v)?;
        let gen_terms = GeneratorTerms::compute(&bundle, &m.d_t, &m.d_v, &m.phi)?;
        let (adv_d_t, adv_d_v) = discriminator_terms(&bundle, &m.d_t, &m.d_v)?;
        let components = LossComponents::from_tensors(&gen_terms, &adv_d_t, &adv_d_v)?;
        components.check_finite()?;
        Ok(StepLosses {
            generator_total: gen_terms.weighted_sum(weights)?,
            bundle,
            adv_d_t,
            adv_d_v,
            components,
        })
    }

    /// Adam step on both generators; discriminator parameters are untouched.
    pub fn update_generators(&mut self, losses: &StepLosses) -> Result<()> {
        let grads = losses.generator_total.backward()?;
        self.opt_g_v.step(&grads)?;
        self.opt_g_t.step(&grads)
    }

    /// Adam steps on `D_V` then `D_T`, each on its own least-squares loss.
    pub fn update_discriminators(&mut self, losses: &StepLosses) -> Result<()> {
        let grads = losses.adv_d_v.backward()?;
        self.opt_d_v.step(&grads)?;
        let grads = losses.adv_d_t.backward()?;
        self.opt_d_t.step(&grads)
    }
}

/// One alternating iteration: generators first, then `D_V`, then `D_T`.
///
/// Returns the loss values measured before any update.
pub fn train_step(
    state: &mut TrainState,
    pair: (&ImageBatch, &ImageBatch),
    weights: &LossWeights,
) -> Result<LossComponents> {
    let losses = state.forward_losses(pair.0, pair.1, weights)?;
    state.update_generators(&losses)?;
    state.update_discriminators(&losses)?;
    state.iteration += 1;
    Ok(losses.components)
}
