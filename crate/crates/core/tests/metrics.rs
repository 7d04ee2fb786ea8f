//! Metric properties and dataset-level evaluation.

mod common;

use std::path::Path;

use image::{Rgb, RgbImage};
use pcsgan::config::DatasetLayout;
use pcsgan::data::{scan_paired_dataset, DatasetManifest, Direction};
use pcsgan::metrics::{
    evaluate_dataset, ms_ssim, mse, psnr, psnr_from_mse, ssim, IdentityTranslator, Lpips, AGGREGATION_NOTE,
    CSV_COLUMNS, PSNR_CAP_DB,
};
use pcsgan::Error;
use proptest::prelude::*;

fn arb_pair(size: u32) -> impl Strategy<Value = (RgbImage, RgbImage)> {
    (any::<u32>(), any::<u32>()).prop_map(move |(s, t)| (common::pixels(s, size, size), common::pixels(t, size, size)))
}

/// `x` plus seeded uniform noise of `amplitude` in `[-1, 1]` units, clamped.
fn noisy(x: &RgbImage, amplitude: f64, seed: u32) -> RgbImage {
    let noise = common::unit(seed, (x.width() * x.height() * 3) as usize);
    let mut out = x.clone();
    for (v, n) in out.iter_mut().zip(noise) {
        *v = (f64::from(*v) + amplitude * 127.5 * f64::from(n)).round().clamp(0.0, 255.0) as u8;
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn mse_and_ssim_are_symmetric((a, b) in arb_pair(16)) {
        prop_assert_eq!(mse(&a, &b).unwrap(), mse(&b, &a).unwrap());
        prop_assert!((ssim(&a, &b).unwrap() - ssim(&b, &a).unwrap()).abs() < 1e-12);
        let s = ssim(&a, &b).unwrap();
        prop_assert!((-1.0..=1.0).contains(&s));
    }

    #[test]
    fn psnr_strictly_decreases_in_mse(m in 1e-6f64..65025.0, dm in 1e-3f64..100.0) {
        prop_assert!(psnr_from_mse(m + dm) < psnr_from_mse(m));
        prop_assert!(psnr_from_mse(m) <= PSNR_CAP_DB);
    }
}

#[test]
fn mse_and_psnr_closed_forms() {
    let a = RgbImage::from_pixel(8, 8, Rgb([128; 3]));
    let b = RgbImage::from_pixel(8, 8, Rgb([127; 3]));
    assert_eq!(mse(&a, &b).unwrap(), 1.0);
    assert_eq!(mse(&a, &a).unwrap(), 0.0);
    assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP_DB);
    assert_eq!(psnr_from_mse(65025.0), 0.0);
    common::assert_close(psnr_from_mse(74.6082), 29.403, 1e-3, "psnr at mse 74.6082");
    assert!(matches!(mse(&a, &RgbImage::new(4, 8)), Err(Error::Validation { .. })));
}

#[test]
fn ms_ssim_is_bounded_by_one() {
    for seed in 0..2 {
        let (a, b) = (common::pixels(seed, 176, 176), common::pixels(seed + 10, 176, 176));
        let v = ms_ssim(&a, &b).unwrap();
        assert!(v <= 1.0 && v >= 0.0, "{v}");
        assert!((ms_ssim(&a, &b).unwrap() - ms_ssim(&b, &a).unwrap()).abs() < 1e-12);
    }
    let small = common::pixels(1, 160, 160);
    assert!(ms_ssim(&small, &small).is_err());
}

#[test]
fn lpips_is_zero_on_identical_and_grows_with_noise() {
    let lpips = Lpips::uncalibrated(3).unwrap();
    let x = common::structured_pair(64, 64).0;
    assert_eq!(lpips.distance(&x, &x).unwrap(), 0.0);
    let small = lpips.distance(&x, &noisy(&x, 0.05, 8)).unwrap();
    let large = lpips.distance(&x, &noisy(&x, 0.5, 8)).unwrap();
    assert!(small >= 0.0);
    assert!(large > small, "lpips at 0.5 noise {large} <= at 0.05 noise {small}");
}

#[test]
fn lpips_weights_report_where_they_were_expected() {
    let err = Lpips::load(Path::new("/nonexistent/lpips.safetensors"), false).unwrap_err().to_string();
    assert!(err.contains("/nonexistent/lpips.safetensors"), "{err}");
    assert!(err.contains("PCSGAN_LPIPS_WEIGHTS"), "{err}");
    let fallback = Lpips::load(Path::new("/nonexistent/lpips.safetensors"), true).unwrap();
    assert!(!fallback.is_calibrated());
}

/// Test split whose visible images are copies of the source images.
fn mirrored_fixture(root: &Path, count: usize, size: u32) {
    common::write_fixture(root, 1, count, size);
    let test = root.join("test");
    for entry in std::fs::read_dir(test.join("source")).unwrap() {
        let p = entry.unwrap().path();
        std::fs::copy(&p, test.join("visible").join(p.file_name().unwrap())).unwrap();
    }
}

#[test]
fn identity_translator_on_mirrored_pairs_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    mirrored_fixture(dir.path(), 3, 32);
    let manifest = scan_paired_dataset(dir.path(), DatasetLayout::GenericPaired).unwrap();
    let lpips = Lpips::uncalibrated(1).unwrap();
    let report = evaluate_dataset(&IdentityTranslator, &manifest, Direction::T2V, 32, &lpips).unwrap();
    assert_eq!(report.per_image.len(), 3);
    assert_eq!(report.aggregate.ssim, 1.0);
    assert!(report.aggregate.mse <= 1.0);
    assert_eq!(report.aggregate.lpips, 0.0);
    assert_eq!(report.aggregate.ms_ssim, None, "32 px is below the MS-SSIM minimum");
    assert!(report.psnr_capped);
    assert_eq!(report.aggregation_note, AGGREGATION_NOTE);
}

#[test]
fn aggregate_is_the_mean_of_per_image_rows() {
    let dir = tempfile::tempdir().unwrap();
    common::write_fixture(dir.path(), 1, 4, 32);
    let manifest = scan_paired_dataset(dir.path(), DatasetLayout::GenericPaired).unwrap();
    let lpips = Lpips::uncalibrated(1).unwrap();
    let report = evaluate_dataset(&IdentityTranslator, &manifest, Direction::V2T, 32, &lpips).unwrap();
    let n = report.per_image.len() as f64;
    let mean = |f: fn(&pcsgan::metrics::ImageMetrics) -> f64| report.per_image.iter().map(f).sum::<f64>() / n;
    let a = &report.aggregate;
    for (got, want) in [
        (a.ssim, mean(|r| r.ssim)),
        (a.mse, mean(|r| r.mse)),
        (a.psnr_db, mean(|r| r.psnr_db)),
        (a.lpips, mean(|r| r.lpips)),
    ] {
        assert!((got - want).abs() <= 1e-9 * want.abs().max(1.0), "{got} vs {want}");
    }
    // Per-image PSNR means differ from the PSNR of the mean MSE.
    assert_ne!(a.psnr_db, psnr_from_mse(a.mse));

    let csv = report.to_csv().unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), CSV_COLUMNS.join(","));
    assert_eq!(lines.count(), 4);
}

#[test]
fn empty_test_split_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    common::write_fixture(dir.path(), 1, 1, 32);
    let mut manifest: DatasetManifest = scan_paired_dataset(dir.path(), DatasetLayout::GenericPaired).unwrap();
    manifest.test.clear();
    let lpips = Lpips::uncalibrated(1).unwrap();
    let err = evaluate_dataset(&IdentityTranslator, &manifest, Direction::T2V, 32, &lpips).unwrap_err();
    assert!(matches!(err, Error::EmptyDataset(_)), "{err}");
}

#[test]
fn failing_pair_is_named() {
    let dir = tempfile::tempdir().unwrap();
    common::write_fixture(dir.path(), 1, 2, 32);
    let manifest = scan_paired_dataset(dir.path(), DatasetLayout::GenericPaired).unwrap();
    std::fs::write(&manifest.test[1].visible_path, b"not an image").unwrap();
    let lpips = Lpips::uncalibrated(1).unwrap();
    let err = evaluate_dataset(&IdentityTranslator, &manifest, Direction::T2V, 32, &lpips).unwrap_err();
    let id = manifest.test[1].name();
    assert!(matches!(&err, Error::Pair { id: got, .. } if *got == id), "{err}");
}
