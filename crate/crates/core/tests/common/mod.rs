//! Deterministic inputs shared by the integration tests.
//!
//! The hashed generators mirror `tests/oracles/reference_values.py` bit for
//! bit, so frozen reference values can be recomputed from scratch.
#![allow(dead_code)]

use std::collections::HashMap;
use std::path::Path;

use candle_core::{Device, Tensor};
use image::{Rgb, RgbImage};

pub fn fnv1a(name: &str) -> u32 {
    name.bytes()
        .fold(0x811C_9DC5u32, |h, b| (h ^ u32::from(b)).wrapping_mul(0x0100_0193))
}

pub fn hash32(mut x: u32) -> u32 {
    x ^= x >> 16;
    x = x.wrapping_mul(0x7FEB_352D);
    x ^= x >> 15;
    x = x.wrapping_mul(0x846C_A68B);
    x ^ (x >> 16)
}

pub fn stream(seed: u32, n: usize) -> impl Iterator<Item = u32> {
    (0..n as u32).map(move |i| hash32(i.wrapping_mul(0x9E37_79B1).wrapping_add(seed)))
}

/// Uniform f32 in [-1, 1).
pub fn unit(seed: u32, n: usize) -> Vec<f32> {
    stream(seed, n)
        .map(|h| (h >> 8) as f32 * 2f32.powi(-24) * 2.0 - 1.0)
        .collect()
}

pub fn pixels(seed: u32, w: u32, h: u32) -> RgbImage {
    let raw: Vec<u8> = stream(seed, (w * h * 3) as usize).map(|v| (v >> 24) as u8).collect();
    RgbImage::from_raw(w, h, raw).expect("buffer size")
}

/// Ramp-plus-noise image and a noisier copy of it.
pub fn structured_pair(w: u32, h: u32) -> (RgbImage, RgbImage) {
    let n = (w * h * 3) as usize;
    let n1: Vec<u32> = stream(11, n).collect();
    let n2: Vec<u32> = stream(12, n).collect();
    let build = |noise: &[u32], shift: u32, offset: i64| {
        RgbImage::from_fn(w, h, |x, y| {
            let px = |c: u32| {
                let base = i64::from((((x * y) >> 6) + x + 2 * y + 40 * c) & 255);
                let i = ((y * w + x) * 3 + c) as usize;
                (base + i64::from(noise[i] >> shift) - offset).clamp(0, 255) as u8
            };
            Rgb([px(0), px(1), px(2)])
        })
    };
    (build(&n1, 29, 4), build(&n2, 27, 16))
}

/// He-uniform convolution weight keyed by parameter name.
pub fn conv_weight(name: &str, shape: &[usize]) -> Tensor {
    let fan_in: usize = shape[1..].iter().product();
    let scale = (6.0 / fan_in as f64).sqrt() as f32;
    let n = shape.iter().product();
    let v: Vec<f32> = unit(fnv1a(name), n).into_iter().map(|u| u * scale).collect();
    Tensor::from_vec(v, shape, &Device::Cpu).expect("shape")
}

/// Hashed residual-backbone parameters under torchvision names.
pub fn hashed_backbone(shapes: &[(String, Vec<usize>)]) -> HashMap<String, Tensor> {
    shapes
        .iter()
        .map(|(name, shape)| {
            let t = if shape.len() == 4 {
                conv_weight(name, shape)
            } else {
                let u = unit(fnv1a(name), shape[0]);
                let v: Vec<f32> = if name.ends_with("running_var") {
                    u.iter().map(|u| (u + 1.0) * 0.25 + 1.0).collect()
                } else if name.ends_with("running_mean") || name.ends_with(".bias") {
                    u.iter().map(|u| 0.1 * u).collect()
                } else {
                    u.iter().map(|u| 1.0 + 0.1 * u).collect()
                };
                Tensor::from_vec(v, shape[0], &Device::Cpu).expect("shape")
            };
            (name.clone(), t)
        })
        .collect()
}

pub fn assert_close(actual: f64, expected: f64, tol: f64, what: &str) {
    assert!(
        (actual - expected).abs() <= tol,
        "{what}: got {actual:.12}, expected {expected:.12} (tol {tol:e})"
    );
}

/// Writes `train`/`test` tiny PNG pairs in the canonical tree. Names are
/// `<split-subject>_<index>.png` with twelve images per subject, so subjects
/// never cross the split.
pub fn write_fixture(root: &Path, train: usize, test: usize, size: u32) {
    for (split, count, base) in [("train", train, 0u32), ("test", test, 1_000_000)] {
        for kind in ["source", "visible"] {
            std::fs::create_dir_all(root.join(split).join(kind)).unwrap();
        }
        for i in 0..count {
            let name = format!("{split}{:03}_{i:04}.png", i / 12);
            let seed = base + 2 * i as u32;
            pixels(seed, size, size).save(root.join(split).join("source").join(&name)).unwrap();
            pixels(seed + 1, size, size).save(root.join(split).join("visible").join(&name)).unwrap();
        }
    }
}

pub mod gradcheck;
