//! Grid image rendering: one row of targets, one of sources, one of
//! results, nearest-neighbor upscaled for visibility.

use essencekit::{EssenceError, ImageTensor64, Result};
use image::RgbImage;

pub fn tensor_to_rgb(img: &ImageTensor64, range: (f64, f64)) -> RgbImage {
    let (h, w, c) = img.shape();
    let (lo, hi) = range;
    let span = hi - lo;
    let mut out = RgbImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let px = |ch: usize| {
                let v = img.data()[(y * w + x) * c + ch];
                (((v - lo) / span).clamp(0.0, 1.0) * 255.0).round() as u8
            };
            let rgb = if c == 1 {
                let g = px(0);
                [g, g, g]
            } else {
                [px(0), px(1), px(2)]
            };
            out.put_pixel(x as u32, y as u32, image::Rgb(rgb));
        }
    }
    out
}

fn blit_scaled(canvas: &mut RgbImage, cell: &RgbImage, ox: u32, oy: u32, scale: u32) {
    for y in 0..cell.height() * scale {
        for x in 0..cell.width() * scale {
            let p = *cell.get_pixel(x / scale, y / scale);
            canvas.put_pixel(ox + x, oy + y, p);
        }
    }
}

/// Three-row layout: targets, sources, results. All cells must share the
/// first cell's dimensions.
pub fn compose_grid(rows: &[Vec<RgbImage>], scale: u32) -> Result<RgbImage> {
    let first = rows
        .iter()
        .flatten()
        .next()
        .ok_or_else(|| EssenceError::EmptyBatch("compose_grid".into()))?;
    let (cw, ch) = (first.width(), first.height());
    for cell in rows.iter().flatten() {
        if (cell.width(), cell.height()) != (cw, ch) {
            return Err(EssenceError::ShapeMismatch {
                context: "compose_grid".into(),
                expected: vec![ch as usize, cw as usize],
                got: vec![cell.height() as usize, cell.width() as usize],
            });
        }
    }
    let cols = rows.iter().map(|r| r.len()).max().unwrap_or(1) as u32;
    let mut canvas = RgbImage::new(cols * cw * scale, rows.len() as u32 * ch * scale);
    for (ry, row) in rows.iter().enumerate() {
        for (cx, cell) in row.iter().enumerate() {
            blit_scaled(
                &mut canvas,
                cell,
                cx as u32 * cw * scale,
                ry as u32 * ch * scale,
                scale,
            );
        }
    }
    Ok(canvas)
}

pub fn save_grid(path: &std::path::Path, canvas: &RgbImage) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    canvas
        .save(path)
        .map_err(|e| EssenceError::InvalidImage(e.to_string()))
}
