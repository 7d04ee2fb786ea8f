//! Experiment configuration, loss weighting and the named method presets.
//!
//! Configs are TOML files with a fixed key tree:
//!
//! ```toml
//! [dataset]
//! root = "data/whu-iip"
//! layout = "whu_iip"          # whu_iip | rgb_nir | generic_paired
//!
//! [train]
//! image_size = 256
//! epochs_total = 200
//! epochs_constant_lr = 100
//! base_lr = 2e-4
//! batch_size = 1
//! adam_beta1 = 0.9
//! seed = 0
//!
//! [init]
//! mean = 0.0
//! std = 0.02
//!
//! [loss]
//! preset = "pcsgan"           # or explicit lambda_t, lambda_v, mu_t, ... keys
//!
//! [feature]
//! backbone = "residual_classifier_pretrained"
//! layer = "layer3"
//! weights = "weights/resnet50.safetensors"
//!
//! [checkpoint]
//! dir = "runs/pcsgan"
//! every = 10
//! ```

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One of the ten generator-side terms of the composite objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossTerm {
    AdversarialT,
    AdversarialV,
    CycleT,
    CycleV,
    SynthesizedT,
    SynthesizedV,
    CycledPerceptualT,
    CycledPerceptualV,
    SynthesizedPerceptualT,
    SynthesizedPerceptualV,
}

impl LossTerm {
    pub const ALL: [LossTerm; 10] = [
        LossTerm::AdversarialT,
        LossTerm::AdversarialV,
        LossTerm::CycleT,
        LossTerm::CycleV,
        LossTerm::SynthesizedT,
        LossTerm::SynthesizedV,
        LossTerm::CycledPerceptualT,
        LossTerm::CycledPerceptualV,
        LossTerm::SynthesizedPerceptualT,
        LossTerm::SynthesizedPerceptualV,
    ];

    /// Column name used in training logs and error messages.
    pub fn name(self) -> &'static str {
        match self {
            LossTerm::AdversarialT => "adv_G_T",
            LossTerm::AdversarialV => "adv_G_V",
            LossTerm::CycleT => "cyc_T",
            LossTerm::CycleV => "cyc_V",
            LossTerm::SynthesizedT => "syn_T",
            LossTerm::SynthesizedV => "syn_V",
            LossTerm::CycledPerceptualT => "cyc_per_T",
            LossTerm::CycledPerceptualV => "cyc_per_V",
            LossTerm::SynthesizedPerceptualT => "syn_per_T",
            LossTerm::SynthesizedPerceptualV => "syn_per_V",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for LossTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Weights of the composite generator objective plus a per-term enable mask.
///
/// The adversarial terms carry an implicit weight of 1. A disabled term
/// contributes exactly zero whatever its weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_t: f64,
    pub lambda_v: f64,
    pub mu_t: f64,
    pub mu_v: f64,
    pub omega_t: f64,
    pub omega_v: f64,
    pub psi_t: f64,
    pub psi_v: f64,
    enabled: [bool; 10],
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_t: 10.0,
            lambda_v: 10.0,
            mu_t: 15.0,
            mu_v: 15.0,
            omega_t: 1.0,
            omega_v: 1.0,
            psi_t: 1.0,
            psi_v: 1.0,
            enabled: [true; 10],
        }
    }
}

impl LossWeights {
    /// Default magnitudes with only `terms` enabled.
    pub fn with_terms(terms: &[LossTerm]) -> Self {
        let mut weights = LossWeights {
            enabled: [false; 10],
            ..LossWeights::default()
        };
        for &term in terms {
            weights.enabled[term.index()] = true;
        }
        weights
    }

    pub fn is_enabled(&self, term: LossTerm) -> bool {
        self.enabled[term.index()]
    }

    pub fn set_enabled(&mut self, term: LossTerm, on: bool) {
        self.enabled[term.index()] = on;
    }

    pub fn enabled_terms(&self) -> Vec<LossTerm> {
        LossTerm::ALL
            .into_iter()
            .filter(|t| self.is_enabled(*t))
            .collect()
    }

    /// Raw magnitude of a term, ignoring the mask.
    pub fn weight(&self, term: LossTerm) -> f64 {
        match term {
            LossTerm::AdversarialT | LossTerm::AdversarialV => 1.0,
            LossTerm::CycleT => self.lambda_t,
            LossTerm::CycleV => self.lambda_v,
            LossTerm::SynthesizedT => self.mu_t,
            LossTerm::SynthesizedV => self.mu_v,
            LossTerm::CycledPerceptualT => self.omega_t,
            LossTerm::CycledPerceptualV => self.omega_v,
            LossTerm::SynthesizedPerceptualT => self.psi_t,
            LossTerm::SynthesizedPerceptualV => self.psi_v,
        }
    }

    /// Effective coefficient in the objective: weight times enable flag.
    pub fn coefficient(&self, term: LossTerm) -> f64 {
        if self.is_enabled(term) {
            self.weight(term)
        } else {
            0.0
        }
    }

    pub fn validate(&self) -> Result<()> {
        let named = [
            ("loss.lambda_t", self.lambda_t),
            ("loss.lambda_v", self.lambda_v),
            ("loss.mu_t", self.mu_t),
            ("loss.mu_v", self.mu_v),
            ("loss.omega_t", self.omega_t),
            ("loss.omega_v", self.omega_v),
            ("loss.psi_t", self.psi_t),
            ("loss.psi_v", self.psi_v),
        ];
        for (key, value) in named {
            if !value.is_finite() || value < 0.0 {
                return Err(Error::validation(key, format!("weight must be finite and >= 0, got {value}")));
            }
        }
        Ok(())
    }
}

/// Named loss configurations: the compared methods and the ablation rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MethodPreset {
    #[serde(rename = "gan_only")]
    GanOnly,
    #[serde(rename = "pix2pix")]
    Pix2pix,
    #[serde(rename = "cyclegan")]
    CycleGan,
    #[serde(rename = "ps2gan")]
    Ps2Gan,
    #[serde(rename = "pcsgan")]
    PcsGan,
    #[serde(rename = "abl_AL")]
    AblAl,
    #[serde(rename = "abl_AL_CL")]
    AblAlCl,
    #[serde(rename = "abl_AL_CL_CPL")]
    AblAlClCpl,
    #[serde(rename = "abl_AL_CL_SL")]
    AblAlClSl,
    #[serde(rename = "abl_AL_CL_SL_SPL")]
    AblAlClSlSpl,
}

impl MethodPreset {
    pub const ALL: [MethodPreset; 10] = [
        MethodPreset::GanOnly,
        MethodPreset::Pix2pix,
        MethodPreset::CycleGan,
        MethodPreset::Ps2Gan,
        MethodPreset::PcsGan,
        MethodPreset::AblAl,
        MethodPreset::AblAlCl,
        MethodPreset::AblAlClCpl,
        MethodPreset::AblAlClSl,
        MethodPreset::AblAlClSlSpl,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MethodPreset::GanOnly => "gan_only",
            MethodPreset::Pix2pix => "pix2pix",
            MethodPreset::CycleGan => "cyclegan",
            MethodPreset::Ps2Gan => "ps2gan",
            MethodPreset::PcsGan => "pcsgan",
            MethodPreset::AblAl => "abl_AL",
            MethodPreset::AblAlCl => "abl_AL_CL",
            MethodPreset::AblAlClCpl => "abl_AL_CL_CPL",
            MethodPreset::AblAlClSl => "abl_AL_CL_SL",
            MethodPreset::AblAlClSlSpl => "abl_AL_CL_SL_SPL",
        }
    }

    /// Row label for result tables, e.g. `AL+CL+SL`.
    pub fn label(self) -> &'static str {
        match self {
            MethodPreset::GanOnly => "GAN",
            MethodPreset::Pix2pix => "Pix2pix",
            MethodPreset::CycleGan => "CycleGAN",
            MethodPreset::Ps2Gan => "PS2GAN",
            MethodPreset::PcsGan => "AL+CL+CPL+SL+SPL",
            MethodPreset::AblAl => "AL",
            MethodPreset::AblAlCl => "AL+CL",
            MethodPreset::AblAlClCpl => "AL+CL+CPL",
            MethodPreset::AblAlClSl => "AL+CL+SL",
            MethodPreset::AblAlClSlSpl => "AL+CL+SL+SPL",
        }
    }

    pub fn terms(self) -> &'static [LossTerm] {
        use LossTerm::*;
        const AL: &[LossTerm] = &[AdversarialT, AdversarialV];
        const AL_SL: &[LossTerm] = &[AdversarialT, AdversarialV, SynthesizedT, SynthesizedV];
        const AL_CL: &[LossTerm] = &[AdversarialT, AdversarialV, CycleT, CycleV];
        const AL_CL_CPL: &[LossTerm] = &[
            AdversarialT,
            AdversarialV,
            CycleT,
            CycleV,
            CycledPerceptualT,
            CycledPerceptualV,
        ];
        const AL_CL_SL: &[LossTerm] = &[
            AdversarialT,
            AdversarialV,
            CycleT,
            CycleV,
            SynthesizedT,
            SynthesizedV,
        ];
        const AL_CL_SL_SPL: &[LossTerm] = &[
            AdversarialT,
            AdversarialV,
            CycleT,
            CycleV,
            SynthesizedT,
            SynthesizedV,
            SynthesizedPerceptualT,
            SynthesizedPerceptualV,
        ];
        match self {
            MethodPreset::GanOnly | MethodPreset::AblAl => AL,
            MethodPreset::Pix2pix => AL_SL,
            MethodPreset::CycleGan | MethodPreset::AblAlCl => AL_CL,
            MethodPreset::Ps2Gan | MethodPreset::AblAlClSl => AL_CL_SL,
            MethodPreset::AblAlClCpl => AL_CL_CPL,
            MethodPreset::AblAlClSlSpl => AL_CL_SL_SPL,
            MethodPreset::PcsGan => &LossTerm::ALL,
        }
    }

    pub fn mask(self) -> LossWeights {
        LossWeights::with_terms(self.terms())
    }
}

impl FromStr for MethodPreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MethodPreset::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::Lookup {
                kind: "preset",
                name: s.to_string(),
            })
    }
}

impl fmt::Display for MethodPreset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Loss mask and default magnitudes for a named preset.
pub fn preset_loss_mask(name: &str) -> Result<LossWeights> {
    Ok(name.parse::<MethodPreset>()?.mask())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetLayout {
    WhuIip,
    RgbNir,
    GenericPaired,
}

impl DatasetLayout {
    pub fn name(self) -> &'static str {
        match self {
            DatasetLayout::WhuIip => "whu_iip",
            DatasetLayout::RgbNir => "rgb_nir",
            DatasetLayout::GenericPaired => "generic_paired",
        }
    }
}

impl FromStr for DatasetLayout {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "whu_iip" => Ok(DatasetLayout::WhuIip),
            "rgb_nir" => Ok(DatasetLayout::RgbNir),
            "generic_paired" => Ok(DatasetLayout::GenericPaired),
            _ => Err(Error::Lookup {
                kind: "dataset layout",
                name: s.to_string(),
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backbone {
    ResidualClassifierPretrained,
    ResidualClassifierRandom,
}

impl FromStr for Backbone {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "residual_classifier_pretrained" => Ok(Backbone::ResidualClassifierPretrained),
            "residual_classifier_random" => Ok(Backbone::ResidualClassifierRandom),
            _ => Err(Error::Lookup {
                kind: "feature backbone",
                name: s.to_string(),
            }),
        }
    }
}

/// Tap point inside the residual backbone.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureTap {
    Stem,
    Layer1,
    Layer2,
    Layer3,
    Layer4,
}

impl FeatureTap {
    pub fn name(self) -> &'static str {
        match self {
            FeatureTap::Stem => "stem",
            FeatureTap::Layer1 => "layer1",
            FeatureTap::Layer2 => "layer2",
            FeatureTap::Layer3 => "layer3",
            FeatureTap::Layer4 => "layer4",
        }
    }

    /// Number of residual stages run before the tap.
    pub fn stages(self) -> usize {
        self as usize
    }

    /// Total spatial stride of the features at this tap.
    pub fn stride(self) -> usize {
        match self {
            FeatureTap::Stem | FeatureTap::Layer1 => 4,
            FeatureTap::Layer2 => 8,
            FeatureTap::Layer3 => 16,
            FeatureTap::Layer4 => 32,
        }
    }
}

impl FromStr for FeatureTap {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            FeatureTap::Stem,
            FeatureTap::Layer1,
            FeatureTap::Layer2,
            FeatureTap::Layer3,
            FeatureTap::Layer4,
        ]
        .into_iter()
        .find(|t| t.name() == s)
        .ok_or_else(|| Error::Lookup {
            kind: "feature layer",
            name: s.to_string(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureExtractorSpec {
    pub backbone: Backbone,
    pub layer: FeatureTap,
    /// Safetensors file with the pretrained backbone parameters.
    pub weights: Option<PathBuf>,
}

impl Default for FeatureExtractorSpec {
    fn default() -> Self {
        FeatureExtractorSpec {
            backbone: Backbone::ResidualClassifierPretrained,
            layer: FeatureTap::Layer3,
            weights: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub dataset_root: PathBuf,
    pub dataset_layout: DatasetLayout,
    pub image_size: usize,
    pub epochs_total: usize,
    pub epochs_constant_lr: usize,
    pub base_lr: f64,
    pub batch_size: usize,
    pub adam_beta1: f64,
    pub init_mean: f64,
    pub init_std: f64,
    pub weights: LossWeights,
    pub preset: Option<MethodPreset>,
    pub seed: u64,
    pub feature_extractor: FeatureExtractorSpec,
    pub checkpoint_dir: PathBuf,
    pub checkpoint_every: usize,
}

impl TrainConfig {
    pub fn new(dataset_root: impl Into<PathBuf>) -> Self {
        TrainConfig {
            dataset_root: dataset_root.into(),
            dataset_layout: DatasetLayout::GenericPaired,
            image_size: 256,
            epochs_total: 200,
            epochs_constant_lr: 100,
            base_lr: 2e-4,
            batch_size: 1,
            adam_beta1: 0.9,
            init_mean: 0.0,
            init_std: 0.02,
            weights: LossWeights::default(),
            preset: None,
            seed: 0,
            feature_extractor: FeatureExtractorSpec::default(),
            checkpoint_dir: PathBuf::from("checkpoints"),
            checkpoint_every: 10,
        }
    }

    /// Switches to a preset, replacing the loss weights with its mask.
    pub fn with_preset(mut self, preset: MethodPreset) -> Self {
        self.preset = Some(preset);
        self.weights = preset.mask();
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.image_size == 0 || self.image_size % 4 != 0 {
            return Err(Error::validation(
                "train.image_size",
                format!("must be a positive multiple of 4, got {}", self.image_size),
            ));
        }
        if self.epochs_total == 0 {
            return Err(Error::validation("train.epochs_total", "must be >= 1"));
        }
        if self.epochs_constant_lr > self.epochs_total {
            return Err(Error::validation(
                "train.epochs_constant_lr",
                format!(
                    "{} exceeds train.epochs_total = {}",
                    self.epochs_constant_lr, self.epochs_total
                ),
            ));
        }
        if !(self.base_lr.is_finite() && self.base_lr > 0.0) {
            return Err(Error::validation("train.base_lr", "must be finite and > 0"));
        }
        if self.batch_size == 0 {
            return Err(Error::validation("train.batch_size", "must be >= 1"));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) {
            return Err(Error::validation("train.adam_beta1", "must lie in [0, 1)"));
        }
        if !self.init_mean.is_finite() {
            return Err(Error::validation("init.mean", "must be finite"));
        }
        if !(self.init_std.is_finite() && self.init_std > 0.0) {
            return Err(Error::validation("init.std", "must be finite and > 0"));
        }
        if self.checkpoint_every == 0 {
            return Err(Error::validation("checkpoint.every", "must be >= 1"));
        }
        self.weights.validate()
    }

    /// Renders the config back into the documented TOML key tree.
    pub fn to_toml_string(&self) -> String {
        let mut table = toml::Table::new();
        let mut dataset = toml::Table::new();
        dataset.insert("root".into(), path_value(&self.dataset_root));
        dataset.insert("layout".into(), self.dataset_layout.name().into());
        table.insert("dataset".into(), dataset.into());

        let mut train = toml::Table::new();
        train.insert("image_size".into(), (self.image_size as i64).into());
        train.insert("epochs_total".into(), (self.epochs_total as i64).into());
        train.insert("epochs_constant_lr".into(), (self.epochs_constant_lr as i64).into());
        train.insert("base_lr".into(), self.base_lr.into());
        train.insert("batch_size".into(), (self.batch_size as i64).into());
        train.insert("adam_beta1".into(), self.adam_beta1.into());
        train.insert("seed".into(), (self.seed as i64).into());
        table.insert("train".into(), train.into());

        let mut init = toml::Table::new();
        init.insert("mean".into(), self.init_mean.into());
        init.insert("std".into(), self.init_std.into());
        table.insert("init".into(), init.into());

        let mut loss = toml::Table::new();
        match self.preset {
            Some(preset) => {
                loss.insert("preset".into(), preset.name().into());
            }
            None => {
                let w = &self.weights;
                for (key, value) in [
                    ("lambda_t", w.lambda_t),
                    ("lambda_v", w.lambda_v),
                    ("mu_t", w.mu_t),
                    ("mu_v", w.mu_v),
                    ("omega_t", w.omega_t),
                    ("omega_v", w.omega_v),
                    ("psi_t", w.psi_t),
                    ("psi_v", w.psi_v),
                ] {
                    loss.insert(key.into(), value.into());
                }
            }
        }
        table.insert("loss".into(), loss.into());

        let mut feature = toml::Table::new();
        let backbone = match self.feature_extractor.backbone {
            Backbone::ResidualClassifierPretrained => "residual_classifier_pretrained",
            Backbone::ResidualClassifierRandom => "residual_classifier_random",
        };
        feature.insert("backbone".into(), backbone.into());
        feature.insert("layer".into(), self.feature_extractor.layer.name().into());
        if let Some(weights) = &self.feature_extractor.weights {
            feature.insert("weights".into(), path_value(weights));
        }
        table.insert("feature".into(), feature.into());

        let mut checkpoint = toml::Table::new();
        checkpoint.insert("dir".into(), path_value(&self.checkpoint_dir));
        checkpoint.insert("every".into(), (self.checkpoint_every as i64).into());
        table.insert("checkpoint".into(), checkpoint.into());

        toml::to_string(&table).expect("a toml::Table always serializes")
    }
}

fn path_value(path: &Path) -> toml::Value {
    toml::Value::String(path.to_string_lossy().into_owned())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    dataset: RawDataset,
    #[serde(default)]
    train: RawTrain,
    #[serde(default)]
    init: RawInit,
    #[serde(default)]
    loss: RawLoss,
    #[serde(default)]
    feature: RawFeature,
    #[serde(default)]
    checkpoint: RawCheckpoint,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDataset {
    root: PathBuf,
    layout: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTrain {
    image_size: Option<usize>,
    epochs_total: Option<usize>,
    epochs_constant_lr: Option<usize>,
    base_lr: Option<f64>,
    batch_size: Option<usize>,
    adam_beta1: Option<f64>,
    seed: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawInit {
    mean: Option<f64>,
    std: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLoss {
    preset: Option<String>,
    lambda_t: Option<f64>,
    lambda_v: Option<f64>,
    mu_t: Option<f64>,
    mu_v: Option<f64>,
    omega_t: Option<f64>,
    omega_v: Option<f64>,
    psi_t: Option<f64>,
    psi_v: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFeature {
    backbone: Option<String>,
    layer: Option<String>,
    weights: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCheckpoint {
    dir: Option<PathBuf>,
    every: Option<usize>,
}

/// Reads and validates a TOML config file.
///
/// Relative paths inside the file are resolved against the file's directory.
pub fn load_config(path: impl AsRef<Path>) -> Result<TrainConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut cfg = parse_config(&text, path)?;
    let base = path.parent().unwrap_or(Path::new(""));
    let anchor = |p: &mut PathBuf| {
        if p.is_relative() {
            *p = base.join(&*p);
        }
    };
    anchor(&mut cfg.dataset_root);
    anchor(&mut cfg.checkpoint_dir);
    if let Some(w) = cfg.feature_extractor.weights.as_mut() {
        anchor(w);
    }
    Ok(cfg)
}

/// Parses config text; `origin` is only used in error messages.
pub fn parse_config(text: &str, origin: &Path) -> Result<TrainConfig> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| {
        let offset = e.span().map(|s| s.start).unwrap_or(0).min(text.len());
        let before = &text[..offset];
        let line = before.matches('\n').count() + 1;
        let column = offset - before.rfind('\n').map(|i| i + 1).unwrap_or(0) + 1;
        Error::ConfigSyntax {
            path: origin.to_path_buf(),
            line,
            column,
            message: e.message().to_string(),
        }
    })?;

    let mut cfg = TrainConfig::new(raw.dataset.root);
    if let Some(layout) = raw.dataset.layout {
        cfg.dataset_layout = layout.parse()?;
    }

    let t = raw.train;
    cfg.image_size = t.image_size.unwrap_or(cfg.image_size);
    cfg.epochs_total = t.epochs_total.unwrap_or(cfg.epochs_total);
    cfg.epochs_constant_lr = t.epochs_constant_lr.unwrap_or(cfg.epochs_constant_lr);
    cfg.base_lr = t.base_lr.unwrap_or(cfg.base_lr);
    cfg.batch_size = t.batch_size.unwrap_or(cfg.batch_size);
    cfg.adam_beta1 = t.adam_beta1.unwrap_or(cfg.adam_beta1);
    cfg.seed = t.seed.unwrap_or(cfg.seed);

    cfg.init_mean = raw.init.mean.unwrap_or(cfg.init_mean);
    cfg.init_std = raw.init.std.unwrap_or(cfg.init_std);

    let l = raw.loss;
    let overrides = [
        ("loss.lambda_t", l.lambda_t),
        ("loss.lambda_v", l.lambda_v),
        ("loss.mu_t", l.mu_t),
        ("loss.mu_v", l.mu_v),
        ("loss.omega_t", l.omega_t),
        ("loss.omega_v", l.omega_v),
        ("loss.psi_t", l.psi_t),
        ("loss.psi_v", l.psi_v),
    ];
    match l.preset {
        Some(name) => {
            let preset: MethodPreset = name.parse()?;
            if let Some((key, _)) = overrides.iter().find(|(_, v)| v.is_some()) {
                return Err(Error::validation(
                    *key,
                    format!("cannot override weights of preset `{preset}`"),
                ));
            }
            cfg = cfg.with_preset(preset);
        }
        None => {
            let w = &mut cfg.weights;
            let slots = [
                &mut w.lambda_t,
                &mut w.lambda_v,
                &mut w.mu_t,
                &mut w.mu_v,
                &mut w.omega_t,
                &mut w.omega_v,
                &mut w.psi_t,
                &mut w.psi_v,
            ];
            for (slot, (_, value)) in slots.into_iter().zip(overrides) {
                if let Some(v) = value {
                    *slot = v;
                }
            }
        }
    }

    let f = raw.feature;
    if let Some(backbone) = f.backbone {
        cfg.feature_extractor.backbone = backbone.parse()?;
    }
    if let Some(layer) = f.layer {
        cfg.feature_extractor.layer = layer.parse()?;
    }
    cfg.feature_extractor.weights = f.weights;

    cfg.checkpoint_dir = raw.checkpoint.dir.unwrap_or(cfg.checkpoint_dir);
    cfg.checkpoint_every = raw.checkpoint.every.unwrap_or(cfg.checkpoint_every);

    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<TrainConfig> {
        parse_config(text, Path::new("test.toml"))
    }

    #[test]
    fn defaults_fill_unspecified_keys() {
        let cfg = parse("[dataset]\nroot = \"data\"\n").unwrap();
        assert_eq!(cfg.epochs_total, 200);
        assert_eq!(cfg.epochs_constant_lr, 100);
        assert_eq!(cfg.base_lr, 2e-4);
        assert_eq!(cfg.batch_size, 1);
        assert_eq!(cfg.image_size, 256);
        assert_eq!(cfg.adam_beta1, 0.9);
        assert_eq!(cfg.init_mean, 0.0);
        assert_eq!(cfg.init_std, 0.02);
        assert_eq!(cfg.weights, LossWeights::default());
        assert_eq!(cfg.preset, None);
    }

    #[test]
    fn constant_segment_longer_than_run_is_rejected() {
        let err = parse("[dataset]\nroot = \"d\"\n[train]\nepochs_constant_lr = 300\nepochs_total = 200\n")
            .unwrap_err();
        assert!(matches!(err, Error::Validation { ref key, .. } if key == "train.epochs_constant_lr"));
    }

    #[test]
    fn preset_weight_override_is_rejected() {
        let err = parse("[dataset]\nroot = \"d\"\n[loss]\npreset = \"cyclegan\"\nlambda_t = 5\n").unwrap_err();
        assert!(matches!(err, Error::Validation { ref key, .. } if key == "loss.lambda_t"));
    }

    #[test]
    fn syntax_error_reports_line() {
        let err = parse("[dataset]\nroot = \"d\"\n[train]\nepochs_total = = 3\n").unwrap_err();
        match err {
            Error::ConfigSyntax { line, .. } => assert_eq!(line, 4),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_key_is_a_syntax_error() {
        let err = parse("[dataset]\nroot = \"d\"\n\n[train]\nepochs = 3\n").unwrap_err();
        assert!(matches!(err, Error::ConfigSyntax { line: 5, .. }), "{err}");
    }

    #[test]
    fn negative_weight_names_key() {
        let err = parse("[dataset]\nroot = \"d\"\n[loss]\nmu_v = -1.0\n").unwrap_err();
        assert!(matches!(err, Error::Validation { ref key, .. } if key == "loss.mu_v"));
    }

    #[test]
    fn pcsgan_preset_enables_everything_with_default_magnitudes() {
        let w = preset_loss_mask("pcsgan").unwrap();
        assert_eq!(w.enabled_terms(), LossTerm::ALL.to_vec());
        assert_eq!((w.lambda_t, w.lambda_v, w.mu_t, w.mu_v), (10.0, 10.0, 15.0, 15.0));
        assert_eq!((w.omega_t, w.omega_v, w.psi_t, w.psi_v), (1.0, 1.0, 1.0, 1.0));
    }

    #[test]
    fn cyclegan_and_abl_al_masks() {
        use LossTerm::*;
        let cyc = preset_loss_mask("cyclegan").unwrap();
        assert_eq!(cyc.enabled_terms(), vec![AdversarialT, AdversarialV, CycleT, CycleV]);
        let al = preset_loss_mask("abl_AL").unwrap();
        assert_eq!(al.enabled_terms(), vec![AdversarialT, AdversarialV]);
    }

    #[test]
    fn unknown_preset_is_lookup_error() {
        assert!(matches!(preset_loss_mask("dualgan"), Err(Error::Lookup { .. })));
    }

    #[test]
    fn every_preset_is_a_subset_of_pcsgan_and_pure() {
        let full = MethodPreset::PcsGan.mask();
        for preset in MethodPreset::ALL {
            let mask = preset_loss_mask(preset.name()).unwrap();
            assert_eq!(mask, preset_loss_mask(preset.name()).unwrap());
            for term in mask.enabled_terms() {
                assert!(full.is_enabled(term));
            }
        }
    }

    #[test]
    fn toml_rendering_round_trips() {
        let mut cfg = TrainConfig::new("some/root").with_preset(MethodPreset::Ps2Gan);
        cfg.image_size = 64;
        cfg.feature_extractor.backbone = Backbone::ResidualClassifierRandom;
        cfg.feature_extractor.layer = FeatureTap::Layer2;
        let back = parse(&cfg.to_toml_string()).unwrap();
        assert_eq!(back, cfg);

        let mut explicit = TrainConfig::new("r");
        explicit.weights.omega_v = 0.5;
        assert_eq!(parse(&explicit.to_toml_string()).unwrap(), explicit);
    }
}
