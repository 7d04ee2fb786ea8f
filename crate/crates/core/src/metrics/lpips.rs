use std::collections::HashMap;
use std::path::{Path, PathBuf};

use candle_core::{DType, Device, Tensor, D};
use image::RgbImage;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::data::ImageBatch;
use crate::error::{Error, Result};
use crate::nn::FrozenConv;

/// Overrides [`DEFAULT_WEIGHTS_PATH`].
pub const WEIGHTS_ENV: &str = "PCSGAN_LPIPS_WEIGHTS";
pub const DEFAULT_WEIGHTS_PATH: &str = "weights/lpips_alex.safetensors";

/// Smallest square input the AlexNet trunk maps to a non-empty last tap.
pub const MIN_INPUT_SIZE: usize = 31;

// (in, out, kernel, stride, padding, max-pool before this conv)
const TRUNK: [(usize, usize, usize, usize, usize, bool); 5] = [
    (3, 64, 11, 4, 2, false),
    (64, 192, 5, 1, 2, true),
    (192, 384, 3, 1, 1, true),
    (384, 256, 3, 1, 1, false),
    (256, 256, 3, 1, 1, false),
];
const TRUNK_KEYS: [usize; 5] = [0, 3, 6, 8, 10];
const SHIFT: [f32; 3] = [-0.030, -0.088, -0.188];
const SCALE: [f32; 3] = [0.458, 0.448, 0.450];

/// Learned perceptual distance over five AlexNet activations.
#[derive(Debug, Clone)]
pub struct Lpips {
    convs: Vec<FrozenConv>,
    lins: Vec<Tensor>,
    calibrated: bool,
}

/// Path used when none is given explicitly.
pub fn weights_path() -> PathBuf {
    std::env::var_os(WEIGHTS_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(DEFAULT_WEIGHTS_PATH))
}

impl Lpips {
    /// Reads `features.{0,3,6,8,10}.{weight,bias}` and `lin{0..4}.model.1.weight`.
    pub fn from_file(path: &Path) -> Result<Self> {
        if !path.is_file() {
            return Err(Error::Configuration(format!(
                "LPIPS weights not found at {} (set {WEIGHTS_ENV} or pass the uncalibrated fallback flag)",
                path.display()
            )));
        }
        let tensors = candle_core::safetensors::load(path, &Device::Cpu)?;
        Self::from_tensors(&tensors, true)
    }

    pub fn from_tensors(tensors: &HashMap<String, Tensor>, calibrated: bool) -> Result<Self> {
        let get = |key: String, shape: &[usize]| -> Result<Tensor> {
            let t = tensors
                .get(&key)
                .ok_or_else(|| Error::Configuration(format!("LPIPS weights lack `{key}`")))?;
            if t.dims() != shape {
                return Err(Error::Shape(format!(
                    "LPIPS weight `{key}`: expected {shape:?}, found {:?}",
                    t.dims()
                )));
            }
            Ok(t.to_dtype(DType::F32)?)
        };
        let mut convs = Vec::new();
        let mut lins = Vec::new();
        for (i, ((cin, cout, k, stride, pad, _), key)) in TRUNK.iter().zip(TRUNK_KEYS).enumerate() {
            let w = get(format!("features.{key}.weight"), &[*cout, *cin, *k, *k])?;
            let b = get(format!("features.{key}.bias"), &[*cout])?;
            convs.push(FrozenConv::new(w, Some(b), *stride, *pad));
            lins.push(get(format!("lin{i}.model.1.weight"), &[1, *cout, 1, 1])?);
        }
        Ok(Lpips {
            convs,
            lins,
            calibrated,
        })
    }

    /// Seeded He-normal trunk with unit layer weights. Scores are internally
    /// consistent but not comparable with published LPIPS numbers.
    pub fn uncalibrated(seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tensors = HashMap::new();
        let dev = Device::Cpu;
        for (i, ((cin, cout, k, ..), key)) in TRUNK.iter().zip(TRUNK_KEYS).enumerate() {
            let fan_in = cin * k * k;
            let normal = Normal::new(0.0f32, (2.0 / fan_in as f32).sqrt()).expect("positive std");
            let w: Vec<f32> = (0..cout * fan_in).map(|_| normal.sample(&mut rng)).collect();
            tensors.insert(format!("features.{key}.weight"), Tensor::from_vec(w, (*cout, *cin, *k, *k), &dev)?);
            tensors.insert(format!("features.{key}.bias"), Tensor::zeros(*cout, DType::F32, &dev)?);
            tensors.insert(format!("lin{i}.model.1.weight"), Tensor::ones((1, *cout, 1, 1), DType::F32, &dev)?);
        }
        Self::from_tensors(&tensors, false)
    }

    /// Calibrated weights from `path`, or the seeded fallback when allowed.
    pub fn load(path: &Path, allow_uncalibrated: bool) -> Result<Self> {
        match Self::from_file(path) {
            Err(Error::Configuration(msg)) if allow_uncalibrated => {
                log::warn!("{msg}; using uncalibrated LPIPS");
                Self::uncalibrated(0)
            }
            other => other,
        }
    }

    pub fn is_calibrated(&self) -> bool {
        self.calibrated
    }

    fn activations(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        let shift = Tensor::new(&SHIFT, x.device())?.reshape((1, 3, 1, 1))?;
        let scale = Tensor::new(&SCALE, x.device())?.reshape((1, 3, 1, 1))?;
        let mut h = x.broadcast_sub(&shift)?.broadcast_div(&scale)?;
        let mut taps = Vec::with_capacity(5);
        for (conv, (.., pool)) in self.convs.iter().zip(TRUNK) {
            if pool {
                h = h.max_pool2d_with_stride(3, 2)?;
            }
            h = conv.forward(&h)?.relu()?;
            taps.push(h.clone());
        }
        Ok(taps)
    }

    /// Per-sample distances between two `(B, 3, H, W)` batches in `[-1, 1]`.
    pub fn distance_batch(&self, a: &Tensor, b: &Tensor) -> Result<Vec<f64>> {
        let dims = a.dims();
        if dims != b.dims() {
            return Err(Error::validation(
                "image",
                format!("shape mismatch: {dims:?} vs {:?}", b.dims()),
            ));
        }
        if dims.len() != 4 || dims[2].min(dims[3]) < MIN_INPUT_SIZE {
            return Err(Error::validation(
                "lpips",
                format!("input {dims:?} is smaller than {MIN_INPUT_SIZE}x{MIN_INPUT_SIZE}"),
            ));
        }
        let a = a.to_dtype(DType::F32)?;
        let b = b.to_dtype(DType::F32)?;
        let mut total = Tensor::zeros(dims[0], DType::F32, a.device())?;
        for ((fa, fb), lin) in self.activations(&a)?.iter().zip(self.activations(&b)?).zip(&self.lins) {
            let diff = (unit_normalize(fa)? - unit_normalize(&fb)?)?.sqr()?;
            let weighted = crate::nn::conv2d(&diff, lin, 1, 0)?;
            total = (total + weighted.flatten_from(1)?.mean(D::Minus1)?)?;
        }
        Ok(total.to_vec1::<f32>()?.into_iter().map(f64::from).collect())
    }

    pub fn distance(&self, a: &RgbImage, b: &RgbImage) -> Result<f64> {
        let dev = Device::Cpu;
        let ta = ImageBatch::from_images(std::slice::from_ref(a), &dev)?;
        let tb = ImageBatch::from_images(std::slice::from_ref(b), &dev)?;
        Ok(self.distance_batch(ta.tensor(), tb.tensor())?[0])
    }
}

/// Scales each spatial feature vector to unit length.
fn unit_normalize(x: &Tensor) -> Result<Tensor> {
    let norm = x.sqr()?.sum_keepdim(1)?.sqrt()?;
    Ok(x.broadcast_div(&(norm + 1e-10)?)?)
}
