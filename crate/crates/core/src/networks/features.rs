//! Frozen residual-classifier feature extractor used by the perceptual losses.
//!
//! The backbone is the 50-layer bottleneck residual network with torchvision
//! parameter names (`conv1.weight`, `bn1.running_mean`,
//! `layer2.0.downsample.0.weight`, ...), so converted ImageNet checkpoints load
//! directly. Batch norms run in eval mode and are folded into per-channel
//! affines at construction. Nothing here is a [`candle_core::Var`], so no
//! optimizer can reach these parameters.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::config::{Backbone, FeatureExtractorSpec, FeatureTap};
use crate::error::{Error, Result};
use crate::nn::{max_pool_3x3_s2, FrozenBatchNorm, FrozenConv};

const STAGE_BLOCKS: [usize; 4] = [3, 4, 6, 3];
const STAGE_WIDTHS: [usize; 4] = [64, 128, 256, 512];
const EXPANSION: usize = 4;

const IMAGENET_MEAN: [f64; 3] = [0.485, 0.456, 0.406];
const IMAGENET_STD: [f64; 3] = [0.229, 0.224, 0.225];

#[derive(Debug, Clone)]
struct ConvBn {
    conv: FrozenConv,
    bn: FrozenBatchNorm,
}

impl ConvBn {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.bn.forward(&self.conv.forward(x)?)
    }
}

#[derive(Debug, Clone)]
struct Bottleneck {
    reduce: ConvBn,
    spatial: ConvBn,
    expand: ConvBn,
    downsample: Option<ConvBn>,
}

impl Bottleneck {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = self.reduce.forward(x)?.relu()?;
        let y = self.spatial.forward(&y)?.relu()?;
        let y = self.expand.forward(&y)?;
        let skip = match &self.downsample {
            Some(ds) => ds.forward(x)?,
            None => x.clone(),
        };
        Ok((y + skip)?.relu()?)
    }
}

/// Frozen, deterministic feature map `phi` at a configured tap point.
#[derive(Debug, Clone)]
pub struct FeatureExtractor {
    tap: FeatureTap,
    stem: ConvBn,
    stages: Vec<Vec<Bottleneck>>,
    input_scale: Tensor,
    input_shift: Tensor,
    raw: BTreeMap<String, Tensor>,
}

/// Every parameter name the backbone needs up to `tap`, with its shape.
pub fn parameter_shapes(tap: FeatureTap) -> Vec<(String, Vec<usize>)> {
    let mut out = Vec::new();
    let conv_bn = |out: &mut Vec<(String, Vec<usize>)>, conv: String, bn: String, shape: [usize; 4]| {
        out.push((format!("{conv}.weight"), shape.to_vec()));
        for p in ["weight", "bias", "running_mean", "running_var"] {
            out.push((format!("{bn}.{p}"), vec![shape[0]]));
        }
    };
    conv_bn(&mut out, "conv1".into(), "bn1".into(), [64, 3, 7, 7]);
    let mut in_ch = 64;
    for stage in 0..tap.stages() {
        let width = STAGE_WIDTHS[stage];
        for block in 0..STAGE_BLOCKS[stage] {
            let p = format!("layer{}.{block}", stage + 1);
            conv_bn(&mut out, format!("{p}.conv1"), format!("{p}.bn1"), [width, in_ch, 1, 1]);
            conv_bn(&mut out, format!("{p}.conv2"), format!("{p}.bn2"), [width, width, 3, 3]);
            conv_bn(
                &mut out,
                format!("{p}.conv3"),
                format!("{p}.bn3"),
                [width * EXPANSION, width, 1, 1],
            );
            if block == 0 {
                conv_bn(
                    &mut out,
                    format!("{p}.downsample.0"),
                    format!("{p}.downsample.1"),
                    [width * EXPANSION, in_ch, 1, 1],
                );
            }
            in_ch = width * EXPANSION;
        }
    }
    out
}

impl FeatureExtractor {
    /// Builds the extractor described by `spec`.
    ///
    /// The pretrained backbone reads `spec.weights`; the random backbone is
    /// drawn from `seed` (He-normal convolutions, identity batch norms).
    pub fn new(spec: &FeatureExtractorSpec, seed: u64, dtype: DType, device: &Device) -> Result<Self> {
        match spec.backbone {
            Backbone::ResidualClassifierRandom => Self::random(spec.layer, seed, dtype, device),
            Backbone::ResidualClassifierPretrained => {
                let path = spec.weights.as_deref().ok_or_else(|| {
                    Error::Configuration(
                        "the pretrained feature backbone needs `feature.weights` to point at a safetensors file"
                            .into(),
                    )
                })?;
                Self::from_file(path, spec.layer, dtype, device)
            }
        }
    }

    pub fn random(tap: FeatureTap, seed: u64, dtype: DType, device: &Device) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = HashMap::new();
        for (name, shape) in parameter_shapes(tap) {
            let n: usize = shape.iter().product();
            let is_norm = name.starts_with("bn") || name.contains(".bn") || name.contains("downsample.1");
            let values: Vec<f64> = if name.ends_with("running_var") || (is_norm && name.ends_with(".weight")) {
                vec![1.0; n]
            } else if name.ends_with(".weight") {
                let fan_out = shape[0] * shape[2] * shape[3];
                let normal = Normal::new(0.0, (2.0 / fan_out as f64).sqrt()).expect("positive std");
                (0..n).map(|_| normal.sample(&mut rng)).collect()
            } else {
                vec![0.0; n]
            };
            params.insert(name, Tensor::from_vec(values, shape, device)?);
        }
        Self::from_tensors(params, tap, dtype, device)
    }

    /// Loads backbone parameters from a safetensors file; extra keys (e.g. `fc.*`) are ignored.
    pub fn from_file(path: &Path, tap: FeatureTap, dtype: DType, device: &Device) -> Result<Self> {
        if !path.exists() {
            return Err(Error::io(
                path,
                std::io::Error::new(std::io::ErrorKind::NotFound, "feature weights not found"),
            ));
        }
        let params = candle_core::safetensors::load(path, device)?;
        Self::from_tensors(params, tap, dtype, device)
    }

    pub fn from_tensors(
        params: HashMap<String, Tensor>,
        tap: FeatureTap,
        dtype: DType,
        device: &Device,
    ) -> Result<Self> {
        let mut raw = BTreeMap::new();
        for (name, shape) in parameter_shapes(tap) {
            let t = params
                .get(&name)
                .ok_or_else(|| Error::Configuration(format!("feature weights lack `{name}`")))?;
            if t.dims() != shape.as_slice() {
                return Err(Error::Shape(format!(
                    "feature weight `{name}`: expected {shape:?}, found {:?}",
                    t.dims()
                )));
            }
            raw.insert(name, t.to_dtype(dtype)?.to_device(device)?);
        }
        let conv_bn = |conv: &str, bn: &str, stride: usize, padding: usize| -> Result<ConvBn> {
            let get = |k: String| raw[&k].clone();
            Ok(ConvBn {
                conv: FrozenConv::new(get(format!("{conv}.weight")), None, stride, padding),
                bn: FrozenBatchNorm::new(
                    &get(format!("{bn}.weight")),
                    &get(format!("{bn}.bias")),
                    &get(format!("{bn}.running_mean")),
                    &get(format!("{bn}.running_var")),
                )?,
            })
        };
        let stem = conv_bn("conv1", "bn1", 2, 3)?;
        let mut stages = Vec::new();
        for stage in 0..tap.stages() {
            let mut blocks = Vec::new();
            for block in 0..STAGE_BLOCKS[stage] {
                let p = format!("layer{}.{block}", stage + 1);
                let stride = if stage > 0 && block == 0 { 2 } else { 1 };
                blocks.push(Bottleneck {
                    reduce: conv_bn(&format!("{p}.conv1"), &format!("{p}.bn1"), 1, 0)?,
                    spatial: conv_bn(&format!("{p}.conv2"), &format!("{p}.bn2"), stride, 1)?,
                    expand: conv_bn(&format!("{p}.conv3"), &format!("{p}.bn3"), 1, 0)?,
                    downsample: if block == 0 {
                        Some(conv_bn(
                            &format!("{p}.downsample.0"),
                            &format!("{p}.downsample.1"),
                            stride,
                            0,
                        )?)
                    } else {
                        None
                    },
                });
            }
            stages.push(blocks);
        }
        // [-1, 1] -> [0, 1] -> ImageNet standardization, as one affine per channel.
        let scale: Vec<f64> = IMAGENET_STD.iter().map(|s| 0.5 / s).collect();
        let shift: Vec<f64> = IMAGENET_MEAN
            .iter()
            .zip(IMAGENET_STD)
            .map(|(m, s)| (0.5 - m) / s)
            .collect();
        let input_scale = Tensor::from_vec(scale, (1, 3, 1, 1), device)?.to_dtype(dtype)?;
        let input_shift = Tensor::from_vec(shift, (1, 3, 1, 1), device)?.to_dtype(dtype)?;
        Ok(FeatureExtractor {
            tap,
            stem,
            stages,
            input_scale,
            input_shift,
            raw,
        })
    }

    pub fn tap(&self) -> FeatureTap {
        self.tap
    }

    /// Smallest accepted input side: the total stride at the tap.
    pub fn min_input_size(&self) -> usize {
        self.tap.stride()
    }

    /// The frozen source parameters, by torchvision name.
    pub fn parameters(&self) -> &BTreeMap<String, Tensor> {
        &self.raw
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        candle_core::safetensors::save(&self.raw.clone().into_iter().collect::<HashMap<_, _>>(), path)?;
        Ok(())
    }

    /// Features of a `[-1, 1]` image batch. Differentiable w.r.t. the input.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (_, c, h, w) = x.dims4()?;
        if c != 3 {
            return Err(Error::Shape(format!("feature extractor expects 3 channels, got {c}")));
        }
        let min = self.min_input_size();
        if h < min || w < min {
            return Err(Error::validation(
                "feature.layer",
                format!("input {h}x{w} is smaller than the {min}px minimum at tap `{}`", self.tap.name()),
            ));
        }
        let x = x.broadcast_mul(&self.input_scale)?.broadcast_add(&self.input_shift)?;
        let mut x = max_pool_3x3_s2(&self.stem.forward(&x)?.relu()?)?;
        for stage in &self.stages {
            for block in stage {
                x = block.forward(&x)?;
            }
        }
        Ok(x)
    }
}

pub fn extract_features(fe: &FeatureExtractor, batch: &Tensor) -> Result<Tensor> {
    fe.forward(batch)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn image(seed: u64, size: usize) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v: Vec<f32> = (0..3 * size * size)
            .map(|_| rand::Rng::random_range(&mut rng, -1.0..1.0))
            .collect();
        Tensor::from_vec(v, (1, 3, size, size), &Device::Cpu).unwrap()
    }

    #[test]
    fn tap_shapes() {
        let fe = FeatureExtractor::random(FeatureTap::Layer3, 0, DType::F32, &Device::Cpu).unwrap();
        assert_eq!(fe.forward(&image(1, 32)).unwrap().dims(), &[1, 1024, 2, 2]);
        let fe = FeatureExtractor::random(FeatureTap::Stem, 0, DType::F32, &Device::Cpu).unwrap();
        assert_eq!(fe.forward(&image(1, 32)).unwrap().dims(), &[1, 64, 8, 8]);
    }

    #[test]
    fn deterministic_and_distinguishing() {
        let fe = FeatureExtractor::random(FeatureTap::Layer2, 0, DType::F32, &Device::Cpu).unwrap();
        let x = image(1, 32);
        let a: Vec<f32> = fe.forward(&x).unwrap().flatten_all().unwrap().to_vec1().unwrap();
        let b: Vec<f32> = fe.forward(&x).unwrap().flatten_all().unwrap().to_vec1().unwrap();
        assert_eq!(a, b);
        let c: Vec<f32> = fe.forward(&image(2, 32)).unwrap().flatten_all().unwrap().to_vec1().unwrap();
        let l1: f32 = a.iter().zip(&c).map(|(p, q)| (p - q).abs()).sum::<f32>() / a.len() as f32;
        assert!(l1 > 0.0);
    }

    #[test]
    fn too_small_input_is_validation_error() {
        let fe = FeatureExtractor::random(FeatureTap::Layer3, 0, DType::F32, &Device::Cpu).unwrap();
        assert!(matches!(fe.forward(&image(0, 8)), Err(Error::Validation { .. })));
    }

    #[test]
    fn pretrained_without_weights_is_configuration_error() {
        let spec = FeatureExtractorSpec::default();
        assert!(matches!(
            FeatureExtractor::new(&spec, 0, DType::F32, &Device::Cpu),
            Err(Error::Configuration(_))
        ));
    }

    #[test]
    fn saved_weights_load_as_pretrained() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("resnet.safetensors");
        let random = FeatureExtractor::random(FeatureTap::Layer1, 9, DType::F32, &Device::Cpu).unwrap();
        random.save(&path).unwrap();
        let spec = FeatureExtractorSpec {
            backbone: Backbone::ResidualClassifierPretrained,
            layer: FeatureTap::Layer1,
            weights: Some(path),
        };
        let loaded = FeatureExtractor::new(&spec, 0, DType::F32, &Device::Cpu).unwrap();
        let x = image(3, 16);
        let a: Vec<f32> = random.forward(&x).unwrap().flatten_all().unwrap().to_vec1().unwrap();
        let b: Vec<f32> = loaded.forward(&x).unwrap().flatten_all().unwrap().to_vec1().unwrap();
        assert_eq!(a, b);
    }
}
