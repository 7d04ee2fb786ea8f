//! Command-line surface: `train`, `evaluate`, `transform` and `ablate`.

use std::path::{Path, PathBuf};

use candle_core::Device;
use clap::{Args, Parser, Subcommand, ValueEnum};
use image::imageops::FilterType;
use image::RgbImage;

use crate::config::{load_config, DatasetLayout, MethodPreset, TrainConfig};
use crate::data::{denormalize, load_image, scan_paired_dataset, Direction, ImageBatch, Split};
use crate::error::{Error, Result};
use crate::grid::render_image_grid;
use crate::metrics::{evaluate_dataset, lpips_weights_path, AggregateMetrics, IdentityTranslator, Lpips, Translator};
use crate::networks::Generator;
use crate::training::{checkpoint_path, load_checkpoint, load_generators, train_from};

#[derive(Debug, Parser)]
#[command(name = "pcsgan", version, about = "Paired cross-domain image translation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train G_V, G_T, D_V and D_T from a TOML config.
    Train(TrainArgs),
    /// Score a checkpoint's generator on a dataset's test split.
    Evaluate(EvaluateArgs),
    /// Translate every image in a directory.
    Transform(TransformArgs),
    /// Train and evaluate several loss presets under one seed.
    Ablate(AblateArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Checkpoint directory to continue from.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Baseline {
    /// Output equals input.
    Identity,
}

#[derive(Debug, Args)]
pub struct LpipsArgs {
    /// Calibrated LPIPS weights (safetensors); defaults to $PCSGAN_LPIPS_WEIGHTS.
    #[arg(long)]
    pub lpips_weights: Option<PathBuf>,
    /// Fall back to a seeded, uncalibrated LPIPS network when weights are missing.
    #[arg(long)]
    pub lpips_uncalibrated: bool,
}

impl LpipsArgs {
    pub fn load(&self) -> Result<Lpips> {
        let path = self.lpips_weights.clone().unwrap_or_else(lpips_weights_path);
        Lpips::load(&path, self.lpips_uncalibrated)
    }
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long, required_unless_present = "baseline")]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    /// Directory receiving report.json and report.csv.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "t2v", value_parser = parse_direction)]
    pub direction: Direction,
    /// Dataset layout; defaults to the checkpoint's.
    #[arg(long, value_parser = parse_layout)]
    pub layout: Option<DatasetLayout>,
    /// Evaluation resolution; defaults to the checkpoint's.
    #[arg(long)]
    pub image_size: Option<usize>,
    /// Score a reference translator instead of a checkpoint.
    #[arg(long, value_enum)]
    pub baseline: Option<Baseline>,
    #[command(flatten)]
    pub lpips: LpipsArgs,
}

#[derive(Debug, Args)]
pub struct TransformArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, default_value = "t2v", value_parser = parse_direction)]
    pub direction: Direction,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Comma-separated preset names, run in the given order.
    #[arg(long, value_delimiter = ',', required = true, value_parser = parse_preset)]
    pub presets: Vec<MethodPreset>,
    /// Output directory; defaults to `<checkpoint.dir>/ablation`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub lpips: LpipsArgs,
}

fn parse_direction(s: &str) -> std::result::Result<Direction, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_layout(s: &str) -> std::result::Result<DatasetLayout, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_preset(s: &str) -> std::result::Result<MethodPreset, String> {
    s.trim().parse().map_err(|e: Error| e.to_string())
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(args) => cmd_train(&args),
        Command::Evaluate(args) => cmd_evaluate(&args),
        Command::Transform(args) => cmd_transform(&args),
        Command::Ablate(args) => cmd_ablate(&args),
    }
}

pub fn cmd_train(args: &TrainArgs) -> Result<()> {
    let cfg = load_config(&args.config)?;
    let resume = match &args.resume {
        Some(dir) => Some(load_checkpoint(dir, &Device::Cpu)?),
        None => None,
    };
    let bundle = train_from(&cfg, resume)?;
    println!("{}", checkpoint_path(&cfg, bundle.epoch()).display());
    Ok(())
}

pub fn cmd_evaluate(args: &EvaluateArgs) -> Result<()> {
    let lpips = args.lpips.load()?;
    let loaded = match (&args.baseline, &args.checkpoint) {
        (Some(Baseline::Identity), _) => None,
        (None, Some(dir)) => Some(load_generators(dir, &Device::Cpu)?),
        (None, None) => return Err(Error::Configuration("evaluate needs --checkpoint or --baseline".into())),
    };
    let snapshot = loaded.as_ref().map(|(_, _, cfg)| cfg);
    let layout = args
        .layout
        .or(snapshot.map(|c| c.dataset_layout))
        .unwrap_or(DatasetLayout::GenericPaired);
    let image_size = args.image_size.or(snapshot.map(|c| c.image_size)).unwrap_or(256);
    let manifest = scan_paired_dataset(&args.data, layout)?;
    let translator: &dyn Translator = match &loaded {
        None => &IdentityTranslator,
        Some((g_v, g_t, _)) => match args.direction {
            Direction::T2V => g_v,
            Direction::V2T => g_t,
        },
    };
    let report = evaluate_dataset(translator, &manifest, args.direction, image_size, &lpips)?;
    report.write(&args.out)?;
    println!("{}", report.summary_table());
    Ok(())
}

/// Generator input size for an image: its own size when the network accepts
/// it, otherwise the training resolution.
fn working_size(img: &RgbImage, fallback: u32) -> (u32, u32) {
    let (w, h) = img.dimensions();
    if w >= 8 && h >= 8 && w % 4 == 0 && h % 4 == 0 {
        (w, h)
    } else {
        (fallback, fallback)
    }
}

/// Translates one decoded image, returning it at its original size.
pub fn translate_image(generator: &dyn Translator, img: &RgbImage, fallback: u32) -> Result<RgbImage> {
    let (w, h) = img.dimensions();
    let (ww, wh) = working_size(img, fallback);
    let input = if (ww, wh) == (w, h) {
        img.clone()
    } else {
        image::imageops::resize(img, ww, wh, FilterType::Triangle)
    };
    let batch = ImageBatch::from_images(&[input], &Device::Cpu)?;
    let out = denormalize(&generator.translate(&batch)?)?.remove(0);
    Ok(if (ww, wh) == (w, h) {
        out
    } else {
        image::imageops::resize(&out, w, h, FilterType::Triangle)
    })
}

fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg"))
        })
        .collect();
    files.sort();
    Ok(files)
}

pub fn cmd_transform(args: &TransformArgs) -> Result<()> {
    let (g_v, g_t, cfg) = load_generators(&args.checkpoint, &Device::Cpu)?;
    let generator: &Generator = match args.direction {
        Direction::T2V => &g_v,
        Direction::V2T => &g_t,
    };
    let inputs = list_images(&args.input)?;
    if inputs.is_empty() {
        return Err(Error::EmptyDataset(format!(
            "no input images (png/jpg) in {}",
            args.input.display()
        )));
    }
    std::fs::create_dir_all(&args.output).map_err(|e| Error::io(&args.output, e))?;
    let mut failed = 0;
    for path in &inputs {
        let result = (|| -> Result<PathBuf> {
            let img = image::open(path)
                .map_err(|source| Error::Image {
                    path: path.clone(),
                    source,
                })?
                .to_rgb8();
            let out = translate_image(generator, &img, cfg.image_size as u32)?;
            let stem = path.file_stem().unwrap_or_default();
            let target = args.output.join(stem).with_extension("png");
            out.save_with_format(&target, image::ImageFormat::Png)
                .map_err(|source| Error::Image {
                    path: target.clone(),
                    source,
                })?;
            Ok(target)
        })();
        match result {
            Ok(target) => println!("{}", target.display()),
            Err(e) => {
                eprintln!("error: {e}");
                failed += 1;
            }
        }
    }
    if failed > 0 {
        return Err(Error::PartialFailure {
            failed,
            total: inputs.len(),
        });
    }
    Ok(())
}

/// Presets trained one after another from one base config.
#[derive(Debug, Clone)]
pub struct AblationPlan {
    pub presets: Vec<MethodPreset>,
    pub base: TrainConfig,
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub preset: MethodPreset,
    pub metrics: AggregateMetrics,
}

impl AblationPlan {
    pub fn new(presets: Vec<MethodPreset>, base: TrainConfig, out_dir: PathBuf) -> Result<Self> {
        if presets.is_empty() {
            return Err(Error::validation("presets", "at least one preset is required"));
        }
        let mut seen = std::collections::BTreeSet::new();
        if let Some(dup) = presets.iter().find(|p| !seen.insert(p.name())) {
            return Err(Error::validation("presets", format!("`{}` is listed twice", dup.name())));
        }
        Ok(AblationPlan { presets, base, out_dir })
    }

    /// Config of one run; each preset trains in its own subdirectory.
    pub fn config_for(&self, preset: MethodPreset) -> TrainConfig {
        let mut cfg = self.base.clone().with_preset(preset);
        cfg.checkpoint_dir = self.out_dir.join(preset.name());
        cfg
    }

    /// Trains and scores every preset in order, then writes
    /// `ablation.csv`, `ablation.md` and `ablation_grid.png` into `out_dir`.
    pub fn run(&self, lpips: &Lpips) -> Result<Vec<AblationRow>> {
        let manifest = scan_paired_dataset(&self.base.dataset_root, self.base.dataset_layout)?;
        let first = manifest
            .split(Split::Test)
            .first()
            .ok_or_else(|| Error::EmptyDataset("the test split is empty".into()))?
            .clone();
        let size = self.base.image_size as u32;
        let input = load_image(&first.source_path, size)?;
        let mut rows = Vec::new();
        let mut outputs = Vec::new();
        for &preset in &self.presets {
            let wrap = |e: Error| Error::Preset {
                preset: preset.name().to_string(),
                source: Box::new(e),
            };
            let cfg = self.config_for(preset);
            log::info!("ablation run `{}`", preset.name());
            let bundle = train_from(&cfg, None).map_err(wrap)?;
            let g_v = &bundle.state.models.g_v;
            let report = evaluate_dataset(g_v, &manifest, Direction::T2V, cfg.image_size, lpips).map_err(wrap)?;
            report.write(&cfg.checkpoint_dir.join("eval")).map_err(wrap)?;
            outputs.push(translate_image(g_v, &input, size).map_err(wrap)?);
            rows.push(AblationRow {
                preset,
                metrics: report.aggregate,
            });
        }
        self.write_outputs(&rows, lpips.is_calibrated())?;
        let mut grid_row = vec![input];
        grid_row.extend(outputs);
        grid_row.push(load_image(&first.visible_path, size)?);
        let mut labels = vec!["Input".to_string()];
        labels.extend(self.presets.iter().map(|p| p.label().to_string()));
        labels.push("Target".to_string());
        render_image_grid(&[grid_row], &labels, &self.out_dir.join("ablation_grid.png"))?;
        Ok(rows)
    }

    fn write_outputs(&self, rows: &[AblationRow], calibrated: bool) -> Result<()> {
        std::fs::create_dir_all(&self.out_dir).map_err(|e| Error::io(&self.out_dir, e))?;
        let (csv_text, md) = ablation_tables(rows, calibrated)?;
        for (name, body) in [("ablation.csv", csv_text), ("ablation.md", md)] {
            let path = self.out_dir.join(name);
            let tmp = path.with_extension("tmp");
            std::fs::write(&tmp, body).map_err(|e| Error::io(&tmp, e))?;
            std::fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}

/// CSV and Markdown tables with columns Losses, SSIM, MSE, PSNR, LPIPS, MS-SSIM.
pub fn ablation_tables(rows: &[AblationRow], calibrated: bool) -> Result<(String, String)> {
    let header = ["losses", "preset", "ssim", "mse", "psnr_db", "lpips", "ms_ssim"];
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    let mut md = String::from("| Losses | SSIM | MSE | PSNR | LPIPS | MS-SSIM |\n|---|---|---|---|---|---|\n");
    for r in rows {
        let m = &r.metrics;
        let ms = m.ms_ssim.map(|v| v.to_string()).unwrap_or_default();
        w.write_record([
            r.preset.label().to_string(),
            r.preset.name().to_string(),
            m.ssim.to_string(),
            m.mse.to_string(),
            m.psnr_db.to_string(),
            m.lpips.to_string(),
            ms,
        ])?;
        let ms = m.ms_ssim.map_or_else(|| "n/a".to_string(), |v| format!("{v:.4}"));
        md.push_str(&format!(
            "| {} | {:.4} | {:.4} | {:.4} | {:.4} | {} |\n",
            r.preset.label(),
            m.ssim,
            m.mse,
            m.psnr_db,
            m.lpips,
            ms
        ));
    }
    if !calibrated {
        md.push_str("\nLPIPS uncalibrated: not comparable with published scores.\n");
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::io(Path::new("ablation.csv"), e.into_error()))?;
    Ok((String::from_utf8(bytes).expect("csv output is utf-8"), md))
}

pub fn cmd_ablate(args: &AblateArgs) -> Result<()> {
    let base = load_config(&args.config)?;
    let out = args.out.clone().unwrap_or_else(|| base.checkpoint_dir.join("ablation"));
    let plan = AblationPlan::new(args.presets.clone(), base, out)?;
    let lpips = args.lpips.load()?;
    let rows = plan.run(&lpips)?;
    let (_, md) = ablation_tables(&rows, lpips.is_calibrated())?;
    print!("{md}");
    Ok(())
}
