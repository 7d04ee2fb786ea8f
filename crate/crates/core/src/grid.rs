//! Figure-style comparison grids: one labeled column per method.

use std::path::Path;

use font8x8::{UnicodeFonts, BASIC_FONTS};
use image::{Rgb, RgbImage};

use crate::error::{Error, Result};

/// Gap after every cell, right and below.
pub const GRID_PAD: u32 = 4;
/// Glyph scale of the 8x8 bitmap font.
pub const LABEL_SCALE: u32 = 2;
/// Height of the label strip above the first row.
pub const LABEL_STRIP: u32 = 8 * LABEL_SCALE + GRID_PAD;

const BACKGROUND: Rgb<u8> = Rgb([255, 255, 255]);
const INK: Rgb<u8> = Rgb([0, 0, 0]);

/// Composes `rows` (equal-length, equal-size images) under a label strip.
///
/// Width is `cols * (w + GRID_PAD)`, height `LABEL_STRIP + rows * (h + GRID_PAD)`.
pub fn compose_grid(rows: &[Vec<RgbImage>], labels: &[String]) -> Result<RgbImage> {
    let first_row = rows
        .first()
        .ok_or_else(|| Error::validation("grid.rows", "at least one row is required"))?;
    let cols = first_row.len();
    if cols == 0 {
        return Err(Error::validation("grid.rows", "rows must not be empty"));
    }
    if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != cols) {
        return Err(Error::validation(
            "grid.rows",
            format!("row {i} has {} images, row 0 has {cols}", r.len()),
        ));
    }
    if labels.len() != cols {
        return Err(Error::validation(
            "grid.labels",
            format!("{} labels for {cols} columns", labels.len()),
        ));
    }
    let (w, h) = first_row[0].dimensions();
    if rows.iter().flatten().any(|img| img.dimensions() != (w, h)) {
        return Err(Error::validation("grid.rows", "all images must share one size"));
    }
    let cell_w = w + GRID_PAD;
    let cell_h = h + GRID_PAD;
    let mut canvas = RgbImage::from_pixel(cols as u32 * cell_w, LABEL_STRIP + rows.len() as u32 * cell_h, BACKGROUND);
    for (c, label) in labels.iter().enumerate() {
        draw_label(&mut canvas, label, c as u32 * cell_w, GRID_PAD / 2, w);
    }
    for (r, row) in rows.iter().enumerate() {
        for (c, img) in row.iter().enumerate() {
            image::imageops::replace(
                &mut canvas,
                img,
                i64::from(c as u32 * cell_w),
                i64::from(LABEL_STRIP + r as u32 * cell_h),
            );
        }
    }
    Ok(canvas)
}

/// Draws `text` from `(x0, y0)`, clipped to `max_width` pixels.
fn draw_label(canvas: &mut RgbImage, text: &str, x0: u32, y0: u32, max_width: u32) {
    let advance = 8 * LABEL_SCALE;
    for (i, ch) in text.chars().enumerate() {
        let gx = x0 + i as u32 * advance;
        if (i as u32 + 1) * advance > max_width {
            break;
        }
        let Some(glyph) = BASIC_FONTS.get(ch).or_else(|| BASIC_FONTS.get('?')) else {
            continue;
        };
        for (row, bits) in glyph.iter().enumerate() {
            for col in 0..8u32 {
                if bits & (1 << col) == 0 {
                    continue;
                }
                for dy in 0..LABEL_SCALE {
                    for dx in 0..LABEL_SCALE {
                        let px = gx + col * LABEL_SCALE + dx;
                        let py = y0 + row as u32 * LABEL_SCALE + dy;
                        if px < canvas.width() && py < canvas.height() {
                            canvas.put_pixel(px, py, INK);
                        }
                    }
                }
            }
        }
    }
}

/// Writes [`compose_grid`] as a PNG at `out`.
pub fn render_image_grid(rows: &[Vec<RgbImage>], labels: &[String], out: &Path) -> Result<()> {
    let grid = compose_grid(rows, labels)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    grid.save_with_format(out, image::ImageFormat::Png)
        .map_err(|source| Error::Image {
            path: out.to_path_buf(),
            source,
        })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("m{i}")).collect()
    }

    #[test]
    fn layout_arithmetic() {
        let img = RgbImage::from_pixel(256, 256, Rgb([10, 20, 30]));
        let rows = vec![vec![img.clone(); 4], vec![img; 4]];
        let grid = compose_grid(&rows, &labels(4)).unwrap();
        assert_eq!(grid.width(), 4 * (256 + GRID_PAD));
        assert_eq!(grid.height(), LABEL_STRIP + 2 * (256 + GRID_PAD));
    }

    #[test]
    fn single_image_sits_below_the_label_strip() {
        let img = RgbImage::from_fn(5, 3, |x, y| Rgb([x as u8 * 40, y as u8 * 60, 7]));
        let grid = compose_grid(&[vec![img.clone()]], &["x".into()]).unwrap();
        for (x, y, p) in img.enumerate_pixels() {
            assert_eq!(grid.get_pixel(x, LABEL_STRIP + y), p);
        }
        assert_eq!(grid.width(), 5 + GRID_PAD);
    }

    #[test]
    fn labels_are_inked() {
        let img = RgbImage::from_pixel(64, 8, Rgb([255, 255, 255]));
        let grid = compose_grid(&[vec![img]], &["AL".into()]).unwrap();
        let inked = (0..LABEL_STRIP)
            .flat_map(|y| (0..grid.width()).map(move |x| (x, y)))
            .filter(|&(x, y)| *grid.get_pixel(x, y) == INK)
            .count();
        assert!(inked > 10);
    }

    #[test]
    fn rejects_ragged_rows_and_label_mismatch() {
        let img = RgbImage::new(4, 4);
        let ragged = vec![vec![img.clone(); 2], vec![img.clone(); 3]];
        assert!(matches!(compose_grid(&ragged, &labels(2)), Err(Error::Validation { .. })));
        let rows = vec![vec![img; 2]];
        assert!(matches!(compose_grid(&rows, &labels(3)), Err(Error::Validation { .. })));
    }
}
