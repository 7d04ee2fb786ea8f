//! Metric and backbone outputs against the frozen values printed by
//! `tests/oracles/reference_values.py` (numpy direct-window SSIM, torch
//! AlexNet/ResNet-50 on hashed weights).

mod common;

use std::collections::HashMap;

use candle_core::{DType, Device, Tensor};
use common::*;
use pcsgan::config::FeatureTap;
use pcsgan::data::ImageBatch;
use pcsgan::metrics::{ms_ssim, ssim, Lpips};
use pcsgan::networks::{parameter_shapes, FeatureExtractor};

#[test]
fn ssim_matches_direct_window_reference() {
    let (a, b) = (pixels(1, 16, 16), pixels(2, 16, 16));
    assert_close(ssim(&a, &b).unwrap(), 0.029786976606, 1e-9, "16x16 noise");
    let (a, b) = structured_pair(32, 32);
    assert_close(ssim(&a, &b).unwrap(), 0.487839372733, 1e-9, "32x32 structured");
}

#[test]
fn ms_ssim_matches_direct_window_reference() {
    let (a, b) = structured_pair(256, 256);
    assert_close(ssim(&a, &b).unwrap(), 0.715062826334, 1e-9, "ssim 256");
    // tf.image.ssim_multiscale agrees to 6e-7 in float32.
    assert_close(ms_ssim(&a, &b).unwrap(), 0.975136317827, 1e-9, "ms_ssim 256");
}

fn features(tap: FeatureTap) -> Vec<f64> {
    let params = hashed_backbone(&parameter_shapes(tap));
    let fe = FeatureExtractor::from_tensors(params, tap, DType::F32, &Device::Cpu).unwrap();
    let x = ImageBatch::from_images(&[pixels(3, 64, 64)], &Device::Cpu).unwrap();
    let y = fe.forward(x.tensor()).unwrap();
    y.flatten_all().unwrap().to_dtype(DType::F64).unwrap().to_vec1().unwrap()
}

fn check_features(f: &[f64], len: usize, mean: f64, l2: f64, probes: [f64; 4]) {
    assert_eq!(f.len(), len);
    let m = f.iter().sum::<f64>() / len as f64;
    let n = f.iter().map(|v| v * v).sum::<f64>().sqrt();
    assert!(((m - mean) / mean).abs() < 1e-4, "mean {m} vs {mean}");
    assert!(((n - l2) / l2).abs() < 1e-4, "l2 {n} vs {l2}");
    for (&i, want) in [0, 7, 1000, len - 1].iter().zip(probes) {
        assert!((f[i] - want).abs() <= 1e-4 * want.abs().max(1.0), "f[{i}] = {} vs {want}", f[i]);
    }
}

#[test]
fn backbone_layer1_matches_torchvision() {
    check_features(
        &features(FeatureTap::Layer1),
        256 * 16 * 16,
        3.099041761,
        1.196037865e3,
        [5.201052665710449, 4.649254322052002, 0.0, 0.0],
    );
}

#[test]
fn backbone_layer3_matches_torchvision() {
    check_features(
        &features(FeatureTap::Layer3),
        1024 * 4 * 4,
        3.225568678e1,
        6.245201169e3,
        [10.12761402130127, 1.392356038093567, 11.18397045135498, 32.22671890258789],
    );
}

#[test]
fn lpips_matches_reference_implementation() {
    let chans = [64usize, 192, 384, 256, 256];
    let trunk = [(3usize, 11usize), (64, 5), (192, 3), (384, 3), (256, 3)];
    let mut t = HashMap::new();
    for (i, ((key, &(cin, k)), &c)) in [0, 3, 6, 8, 10].iter().zip(&trunk).zip(&chans).enumerate() {
        let w = format!("features.{key}.weight");
        t.insert(w.clone(), conv_weight(&w, &[c, cin, k, k]));
        let b = format!("features.{key}.bias");
        let bias: Vec<f32> = unit(fnv1a(&b), c).iter().map(|u| 0.1 * u).collect();
        t.insert(b, Tensor::from_vec(bias, c, &Device::Cpu).unwrap());
        let l = format!("lin{i}.model.1.weight");
        let lin: Vec<f32> = unit(fnv1a(&l), c).iter().map(|u| (u + 1.0) * 0.5).collect();
        t.insert(l, Tensor::from_vec(lin, (1, c, 1, 1), &Device::Cpu).unwrap());
    }
    let lpips = Lpips::from_tensors(&t, true).unwrap();
    let d = lpips.distance(&pixels(4, 64, 64), &pixels(5, 64, 64)).unwrap();
    assert!(((d - 0.820167908) / 0.820167908).abs() < 1e-4, "lpips {d}");
}
