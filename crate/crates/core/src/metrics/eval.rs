use std::path::Path;

use candle_core::Device;
use image::RgbImage;
use serde::{Deserialize, Serialize};

use super::lpips::Lpips;
use super::quality::{ms_ssim, mse, psnr_from_mse, ssim, MS_SSIM_MIN_SIZE, PSNR_CAP_DB};
use crate::data::{denormalize, load_image, DatasetManifest, Direction, ImageBatch, Split};
use crate::error::{Error, Result};
use crate::networks::{Generator, Network};

pub const AGGREGATION_NOTE: &str = "per-image means";

/// CSV header of [`MetricReport::to_csv`].
pub const CSV_COLUMNS: [&str; 5] = ["ssim", "ms_ssim", "psnr_db", "mse", "lpips"];

/// Maps a normalized batch from one domain into the other.
pub trait Translator {
    fn translate(&self, batch: &ImageBatch) -> Result<ImageBatch>;
}

impl Translator for Generator {
    fn translate(&self, batch: &ImageBatch) -> Result<ImageBatch> {
        let x = batch.tensor().to_dtype(self.params().dtype())?;
        ImageBatch::new(crate::nn::no_grad(|| self.forward(&x))?)
    }
}

/// Returns its input unchanged; the perfect-generator baseline.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityTranslator;

impl Translator for IdentityTranslator {
    fn translate(&self, batch: &ImageBatch) -> Result<ImageBatch> {
        Ok(batch.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageMetrics {
    pub pair_id: String,
    pub ssim: f64,
    /// Absent for images below the five-scale minimum size.
    pub ms_ssim: Option<f64>,
    pub psnr_db: f64,
    /// The pair matched exactly and `psnr_db` holds the cap.
    pub psnr_capped: bool,
    pub mse: f64,
    pub lpips: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateMetrics {
    pub ssim: f64,
    pub ms_ssim: Option<f64>,
    pub psnr_db: f64,
    pub mse: f64,
    pub lpips: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub per_image: Vec<ImageMetrics>,
    pub aggregate: AggregateMetrics,
    pub aggregation_note: String,
    /// False when LPIPS used the uncalibrated fallback.
    pub lpips_calibrated: bool,
    /// Some PSNR values are the zero-error cap.
    pub psnr_capped: bool,
}

/// All five metrics for one generated image against its ground truth.
pub fn image_metrics(id: &str, output: &RgbImage, truth: &RgbImage, lpips: &Lpips) -> Result<ImageMetrics> {
    let m = mse(output, truth)?;
    let (w, h) = output.dimensions();
    let ms = if (w.min(h) as usize) >= MS_SSIM_MIN_SIZE {
        Some(ms_ssim(output, truth)?)
    } else {
        None
    };
    Ok(ImageMetrics {
        pair_id: id.to_string(),
        ssim: ssim(output, truth)?,
        ms_ssim: ms,
        psnr_db: psnr_from_mse(m),
        psnr_capped: m == 0.0,
        mse: m,
        lpips: lpips.distance(output, truth)?,
    })
}

impl MetricReport {
    /// Aggregates rows by arithmetic mean of each column.
    pub fn from_rows(per_image: Vec<ImageMetrics>, lpips_calibrated: bool) -> Result<Self> {
        if per_image.is_empty() {
            return Err(Error::EmptyDataset("no images were evaluated".into()));
        }
        let n = per_image.len() as f64;
        let mean = |f: fn(&ImageMetrics) -> f64| per_image.iter().map(f).sum::<f64>() / n;
        let ms_ssim = per_image
            .iter()
            .map(|r| r.ms_ssim)
            .collect::<Option<Vec<f64>>>()
            .map(|v| v.iter().sum::<f64>() / n);
        let aggregate = AggregateMetrics {
            ssim: mean(|r| r.ssim),
            ms_ssim,
            psnr_db: mean(|r| r.psnr_db),
            mse: mean(|r| r.mse),
            lpips: mean(|r| r.lpips),
        };
        Ok(MetricReport {
            psnr_capped: per_image.iter().any(|r| r.psnr_capped),
            per_image,
            aggregate,
            aggregation_note: AGGREGATION_NOTE.to_string(),
            lpips_calibrated,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// One row per image in manifest order; missing MS-SSIM is an empty cell.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(CSV_COLUMNS)?;
        for r in &self.per_image {
            w.write_record([
                r.ssim.to_string(),
                r.ms_ssim.map(|v| v.to_string()).unwrap_or_default(),
                r.psnr_db.to_string(),
                r.mse.to_string(),
                r.lpips.to_string(),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::io(Path::new("report.csv"), e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    /// `SSIM MSE PSNR LPIPS MS-SSIM` header and values.
    pub fn summary_table(&self) -> String {
        let a = &self.aggregate;
        let ms = a.ms_ssim.map_or_else(|| "n/a".to_string(), |v| format!("{v:.4}"));
        let mut out = format!(
            "{:>8} {:>10} {:>9} {:>8} {:>8}\n{:>8.4} {:>10.4} {:>9.4} {:>8.4} {:>8}",
            "SSIM", "MSE", "PSNR", "LPIPS", "MS-SSIM", a.ssim, a.mse, a.psnr_db, a.lpips, ms
        );
        if self.psnr_capped {
            out.push_str(&format!("\n(PSNR includes identical pairs capped at {PSNR_CAP_DB} dB)"));
        }
        if !self.lpips_calibrated {
            out.push_str("\n(LPIPS uncalibrated: not comparable with published scores)");
        }
        out
    }

    /// Writes `report.json` and `report.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, body) in [("report.json", self.to_json()?), ("report.csv", self.to_csv()?)] {
            let path = dir.join(name);
            let tmp = path.with_extension("tmp");
            std::fs::write(&tmp, body).map_err(|e| Error::io(&tmp, e))?;
            std::fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}

/// Translates every test pair and scores it against the other domain's image.
///
/// A failing pair aborts the run with an error naming it.
pub fn evaluate_dataset(
    translator: &dyn Translator,
    manifest: &DatasetManifest,
    direction: Direction,
    image_size: usize,
    lpips: &Lpips,
) -> Result<MetricReport> {
    let samples = manifest.split(Split::Test);
    if samples.is_empty() {
        return Err(Error::EmptyDataset("the test split is empty".into()));
    }
    let size = image_size as u32;
    let mut rows = Vec::with_capacity(samples.len());
    for sample in samples {
        let id = sample.name();
        let row = (|| {
            let (input, truth) = match direction {
                Direction::T2V => (&sample.source_path, &sample.visible_path),
                Direction::V2T => (&sample.visible_path, &sample.source_path),
            };
            let input = ImageBatch::from_images(&[load_image(input, size)?], &Device::Cpu)?;
            let output = denormalize(&translator.translate(&input)?)?;
            image_metrics(&id, &output[0], &load_image(truth, size)?, lpips)
        })()
        .map_err(|e| Error::Pair {
            id: id.clone(),
            source: Box::new(e),
        })?;
        rows.push(row);
    }
    MetricReport::from_rows(rows, lpips.is_calibrated())
}
