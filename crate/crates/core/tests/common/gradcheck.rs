//! Central finite differences of the composite generator objective.

use std::collections::HashMap;

use candle_core::{DType, Device, Tensor, Var};
use pcsgan::config::{Backbone, FeatureTap};
use pcsgan::data::ImageBatch;
use pcsgan::losses::{ForwardBundle, GeneratorTerms};
use pcsgan::networks::{FeatureExtractor, Network};
use pcsgan::training::ModelBundle;
use pcsgan::{LossTerm, LossWeights, TrainConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Minimum distance of any `|.|` argument from zero.
pub const KINK_MARGIN: f64 = 1e-3;
// Instance norms over 2x2 bottleneck maps make the objective steep (single
// coordinates reach 1e5) and put ReLU kinks within 1e-4 of the evaluation
// point, so the steps are tiny. In f64 the rounding error stays near 1e-7
// relative.
const H_DIRECTION: f64 = 1e-8;
const H_COORD: f64 = 1e-10;
/// The random backbone has bias-free convolutions and identity batch norms,
/// so it is positively homogeneous: scaling the stem rescales every feature
/// by the same factor. A larger feature scale spreads the perceptual
/// residuals away from zero.
pub const PHI_GAIN: f64 = 100.0;

pub struct Problem {
    pub models: ModelBundle,
    pub real_t: Tensor,
    pub real_v: Tensor,
    pub weights: LossWeights,
    /// Discriminators are skipped below the smallest input they accept.
    pub adversarial: bool,
}

#[derive(Debug)]
pub struct Report {
    pub input_seed: u32,
    pub kink_margin: f64,
    pub checks: usize,
    pub worst_rel_err: f64,
}

/// Binary image in `{-1, 1}`. Generator outputs are strictly inside
/// `(-1, 1)`, so every pixel residual is bounded away from zero.
fn batch(seed: u32, size: u32) -> Tensor {
    let raw: Vec<u8> = super::stream(seed, (size * size * 3) as usize)
        .map(|v| if v >> 31 == 1 { 255 } else { 0 })
        .collect();
    let img = image::RgbImage::from_raw(size, size, raw).unwrap();
    ImageBatch::from_images(&[img], &Device::Cpu)
        .unwrap()
        .tensor()
        .to_dtype(DType::F64)
        .unwrap()
}

impl Problem {
    /// f64 networks with a random-weight backbone. Terms that need a
    /// discriminator are disabled below 24 pixels.
    pub fn new(size: usize, tap: FeatureTap, input_seed: u32) -> Self {
        let mut cfg = TrainConfig::new("unused");
        cfg.image_size = size;
        cfg.feature_extractor.backbone = Backbone::ResidualClassifierRandom;
        cfg.feature_extractor.layer = tap;
        cfg.seed = 3;
        let adversarial = size >= 24;
        let mut weights = LossWeights::default();
        if !adversarial {
            weights.set_enabled(LossTerm::AdversarialT, false);
            weights.set_enabled(LossTerm::AdversarialV, false);
        }
        let mut models = ModelBundle::new(&cfg, DType::F64, &Device::Cpu).unwrap();
        let mut params: HashMap<String, Tensor> =
            models.phi.parameters().iter().map(|(k, v)| (k.clone(), v.clone())).collect();
        let stem = params["conv1.weight"].affine(PHI_GAIN, 0.0).unwrap();
        params.insert("conv1.weight".into(), stem);
        models.phi = FeatureExtractor::from_tensors(params, tap, DType::F64, &Device::Cpu).unwrap();
        Problem {
            models,
            real_t: batch(input_seed, size as u32),
            real_v: batch(input_seed + 1, size as u32),
            weights,
            adversarial,
        }
    }

    fn terms(&self) -> (ForwardBundle, GeneratorTerms) {
        let m = &self.models;
        let fwd = ForwardBundle::compute(&m.g_t, &m.g_v, &self.real_t, &self.real_v).unwrap();
        let terms = if self.adversarial {
            GeneratorTerms::compute(&fwd, &m.d_t, &m.d_v, &m.phi).unwrap()
        } else {
            let zero = Tensor::zeros((1, 1, 1, 1), DType::F64, &Device::Cpu).unwrap();
            GeneratorTerms::from_scores(&fwd, &zero, &zero, &m.phi).unwrap()
        };
        (fwd, terms)
    }

    pub fn objective(&self) -> Tensor {
        self.terms().1.weighted_sum(&self.weights).unwrap()
    }

    fn value(&self) -> f64 {
        self.objective().to_scalar::<f64>().unwrap()
    }

    /// Smallest `|x|` over every argument of every L1 term. Feature entries
    /// that are zero on both sides (inactive ReLUs) stay at zero under a small
    /// perturbation and are skipped.
    pub fn kink_margin(&self) -> f64 {
        let (f, _) = self.terms();
        let phi = &self.models.phi;
        let feat = |t: &Tensor| phi.forward(t).unwrap();
        let pairs = [
            (f.cyc_t.clone(), f.real_t.clone()),
            (f.cyc_v.clone(), f.real_v.clone()),
            (f.syn_t.clone(), f.real_t.clone()),
            (f.syn_v.clone(), f.real_v.clone()),
            (feat(&f.cyc_t), feat(&f.real_t)),
            (feat(&f.cyc_v), feat(&f.real_v)),
            (feat(&f.syn_t), feat(&f.real_t)),
            (feat(&f.syn_v), feat(&f.real_v)),
        ];
        pairs
            .iter()
            .map(|(a, b)| {
                let a: Vec<f64> = a.flatten_all().unwrap().to_vec1().unwrap();
                let b: Vec<f64> = b.flatten_all().unwrap().to_vec1().unwrap();
                a.iter()
                    .zip(&b)
                    .filter(|(x, y)| !(**x == 0.0 && **y == 0.0))
                    .map(|(x, y)| (x - y).abs())
                    .fold(f64::INFINITY, f64::min)
            })
            .fold(f64::INFINITY, f64::min)
    }

    fn generator_vars(&self) -> Vec<Var> {
        let m = &self.models;
        m.g_v.params().iter().chain(m.g_t.params().iter()).map(|(_, v)| v.clone()).collect()
    }
}

fn rel_err(numeric: f64, analytic: f64) -> f64 {
    (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-12)
}

/// First input seed from `start` whose objective stays `KINK_MARGIN` away
/// from every `|.|` kink.
pub fn find_problem(size: usize, tap: FeatureTap, start: u32) -> (Problem, u32, f64) {
    for seed in (start..start + 400).step_by(2) {
        let p = Problem::new(size, tap, seed);
        let margin = p.kink_margin();
        if margin >= KINK_MARGIN {
            return (p, seed, margin);
        }
    }
    panic!("no input seed keeps every L1 argument {KINK_MARGIN} away from zero");
}

/// Compares backprop with central differences along `directions` random unit
/// directions in generator-parameter space and on the `coords` parameter
/// entries with the largest gradients.
pub fn check(size: usize, tap: FeatureTap, directions: usize, coords: usize) -> Report {
    let (p, input_seed, kink_margin) = find_problem(size, tap, 1);
    let vars = p.generator_vars();
    let grads = p.objective().backward().unwrap();
    let grad: Vec<Vec<f64>> = vars
        .iter()
        .map(|v| grads.get(v).unwrap().flatten_all().unwrap().to_vec1().unwrap())
        .collect();
    let origin: Vec<Tensor> = vars.iter().map(|v| v.as_tensor().copy().unwrap()).collect();
    let set_all = |delta: &[Vec<f64>], h: f64| {
        for ((v, o), d) in vars.iter().zip(&origin).zip(delta) {
            let d = Tensor::from_slice(d, o.dims(), &Device::Cpu).unwrap();
            v.set(&(o + d.affine(h, 0.0).unwrap()).unwrap()).unwrap();
        }
    };
    let restore = || {
        for (v, o) in vars.iter().zip(&origin) {
            v.set(o).unwrap();
        }
    };

    let mut worst: f64 = 0.0;
    let mut checks = 0;
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..directions {
        let mut dir: Vec<Vec<f64>> = grad
            .iter()
            .map(|g| (0..g.len()).map(|_| StandardNormal.sample(&mut rng)).collect())
            .collect();
        let norm = dir.iter().flatten().map(|x| x * x).sum::<f64>().sqrt();
        dir.iter_mut().flatten().for_each(|x| *x /= norm);
        let analytic: f64 = grad.iter().flatten().zip(dir.iter().flatten()).map(|(g, d)| g * d).sum();
        set_all(&dir, H_DIRECTION);
        let plus = p.value();
        set_all(&dir, -H_DIRECTION);
        let minus = p.value();
        restore();
        worst = worst.max(rel_err((plus - minus) / (2.0 * H_DIRECTION), analytic));
        checks += 1;
    }

    let mut ranked: Vec<(usize, usize, f64)> = grad
        .iter()
        .enumerate()
        .filter_map(|(vi, g)| {
            g.iter()
                .enumerate()
                .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
                .map(|(ei, &val)| (vi, ei, val))
        })
        .collect();
    ranked.sort_by(|a, b| b.2.abs().total_cmp(&a.2.abs()));
    for &(vi, ei, analytic) in ranked.iter().take(coords) {
        let bump = |h: f64| {
            let mut values: Vec<f64> = origin[vi].flatten_all().unwrap().to_vec1().unwrap();
            values[ei] += h;
            vars[vi]
                .set(&Tensor::from_vec(values, origin[vi].dims(), &Device::Cpu).unwrap())
                .unwrap();
            let v = p.value();
            vars[vi].set(&origin[vi]).unwrap();
            v
        };
        let numeric = (bump(H_COORD) - bump(-H_COORD)) / (2.0 * H_COORD);
        worst = worst.max(rel_err(numeric, analytic));
        checks += 1;
    }
    Report {
        input_seed,
        kink_margin,
        checks,
        worst_rel_err: worst,
    }
}
