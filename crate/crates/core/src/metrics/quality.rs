//! Full-reference metrics on 8-bit RGB images, computed per channel on the
//! 0..=255 scale and averaged over channels.

use image::RgbImage;

use crate::error::{Error, Result};

/// Reported PSNR when two images are identical.
pub const PSNR_CAP_DB: f64 = 100.0;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;
const PEAK: f64 = 255.0;

pub const MS_SSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];

/// Smallest side accepted by [`ms_ssim`].
pub const MS_SSIM_MIN_SIZE: usize = 16 * SSIM_WINDOW;

fn check_same(a: &RgbImage, b: &RgbImage) -> Result<()> {
    if a.dimensions() != b.dimensions() {
        return Err(Error::validation(
            "image",
            format!("shape mismatch: {:?} vs {:?}", a.dimensions(), b.dimensions()),
        ));
    }
    Ok(())
}

/// Mean squared difference over all pixels and channels.
pub fn mse(a: &RgbImage, b: &RgbImage) -> Result<f64> {
    check_same(a, b)?;
    let n = a.as_raw().len().max(1) as f64;
    let sum: f64 = a
        .as_raw()
        .iter()
        .zip(b.as_raw())
        .map(|(&x, &y)| {
            let d = f64::from(x) - f64::from(y);
            d * d
        })
        .sum();
    Ok(sum / n)
}

/// PSNR in dB from a mean squared error; zero error maps to [`PSNR_CAP_DB`].
pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        return PSNR_CAP_DB;
    }
    (10.0 * (PEAK * PEAK / mse).log10()).min(PSNR_CAP_DB)
}

pub fn psnr(a: &RgbImage, b: &RgbImage) -> Result<f64> {
    Ok(psnr_from_mse(mse(a, b)?))
}

/// One channel as a row-major `f64` plane.
#[derive(Debug, Clone)]
struct Plane {
    w: usize,
    h: usize,
    data: Vec<f64>,
}

impl Plane {
    fn channel(img: &RgbImage, c: usize) -> Self {
        let (w, h) = img.dimensions();
        Plane {
            w: w as usize,
            h: h as usize,
            data: img.as_raw().iter().skip(c).step_by(3).map(|&v| f64::from(v)).collect(),
        }
    }

    fn map2(&self, other: &Plane, f: impl Fn(f64, f64) -> f64) -> Plane {
        Plane {
            w: self.w,
            h: self.h,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    /// Separable valid-mode filtering with a symmetric 1-d kernel.
    fn filter_valid(&self, k: &[f64]) -> Plane {
        let n = k.len();
        let ow = self.w + 1 - n;
        let oh = self.h + 1 - n;
        let mut rows = vec![0.0; ow * self.h];
        for y in 0..self.h {
            let src = &self.data[y * self.w..(y + 1) * self.w];
            for x in 0..ow {
                rows[y * ow + x] = k.iter().zip(&src[x..x + n]).map(|(a, b)| a * b).sum();
            }
        }
        let mut out = vec![0.0; ow * oh];
        for y in 0..oh {
            for x in 0..ow {
                out[y * ow + x] = (0..n).map(|i| k[i] * rows[(y + i) * ow + x]).sum();
            }
        }
        Plane { w: ow, h: oh, data: out }
    }

    /// 2x2 average pooling; a trailing odd row or column is dropped.
    fn downsample(&self) -> Plane {
        let (w, h) = (self.w / 2, self.h / 2);
        let mut data = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                let at = |dy: usize, dx: usize| self.data[(2 * y + dy) * self.w + 2 * x + dx];
                data.push((at(0, 0) + at(0, 1) + at(1, 0) + at(1, 1)) / 4.0);
            }
        }
        Plane { w, h, data }
    }
}

/// Normalized 1-d Gaussian taps.
pub fn gaussian_kernel(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let raw: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

/// `(mean ssim, mean contrast-structure)` of one channel pair.
fn ssim_parts(a: &Plane, b: &Plane, kernel: &[f64]) -> (f64, f64) {
    let c1 = (K1 * PEAK).powi(2);
    let c2 = (K2 * PEAK).powi(2);
    let mu_a = a.filter_valid(kernel);
    let mu_b = b.filter_valid(kernel);
    let aa = a.map2(a, |x, y| x * y).filter_valid(kernel);
    let bb = b.map2(b, |x, y| x * y).filter_valid(kernel);
    let ab = a.map2(b, |x, y| x * y).filter_valid(kernel);
    let n = mu_a.data.len() as f64;
    let (mut ssim_sum, mut cs_sum) = (0.0, 0.0);
    for i in 0..mu_a.data.len() {
        let (ma, mb) = (mu_a.data[i], mu_b.data[i]);
        let var_a = aa.data[i] - ma * ma;
        let var_b = bb.data[i] - mb * mb;
        let cov = ab.data[i] - ma * mb;
        let cs = (2.0 * cov + c2) / (var_a + var_b + c2);
        let l = (2.0 * ma * mb + c1) / (ma * ma + mb * mb + c1);
        ssim_sum += l * cs;
        cs_sum += cs;
    }
    (ssim_sum / n, cs_sum / n)
}

fn check_window(a: &RgbImage, min: usize, what: &str) -> Result<()> {
    let (w, h) = a.dimensions();
    if (w.min(h) as usize) < min {
        return Err(Error::validation(
            what,
            format!("{w}x{h} image is smaller than the required {min}x{min}"),
        ));
    }
    Ok(())
}

/// Mean local SSIM over all full 11x11 Gaussian windows.
pub fn ssim(a: &RgbImage, b: &RgbImage) -> Result<f64> {
    check_same(a, b)?;
    check_window(a, SSIM_WINDOW, "ssim")?;
    let kernel = gaussian_kernel(SSIM_WINDOW, SSIM_SIGMA);
    let total: f64 = (0..3)
        .map(|c| ssim_parts(&Plane::channel(a, c), &Plane::channel(b, c), &kernel).0)
        .sum();
    Ok(total / 3.0)
}

/// Five-scale MS-SSIM; negative per-scale terms are clamped to zero.
pub fn ms_ssim(a: &RgbImage, b: &RgbImage) -> Result<f64> {
    check_same(a, b)?;
    check_window(a, MS_SSIM_MIN_SIZE, "ms_ssim")?;
    let kernel = gaussian_kernel(SSIM_WINDOW, SSIM_SIGMA);
    let mut total = 0.0;
    for c in 0..3 {
        let (mut pa, mut pb) = (Plane::channel(a, c), Plane::channel(b, c));
        let mut value = 1.0;
        for (scale, weight) in MS_SSIM_WEIGHTS.iter().enumerate() {
            let (s, cs) = ssim_parts(&pa, &pb, &kernel);
            let last = scale + 1 == MS_SSIM_WEIGHTS.len();
            let term = if last { s } else { cs };
            value *= term.max(0.0).powf(*weight);
            if !last {
                pa = pa.downsample();
                pb = pb.downsample();
            }
        }
        total += value;
    }
    Ok(total / 3.0)
}
