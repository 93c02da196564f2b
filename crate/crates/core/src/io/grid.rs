//! Lossless PNG renderings of sample grids and 2-D scatter plots.
//!
//! Every PNG carries the config hash in a `tEXt` chunk with keyword
//! `config_hash`.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Batch;

const PAD: usize = 2;
const TEXT_KEY: &str = "config_hash";

/// A table of equally shaped `(channels, height, width)` images; `None`
/// cells stay blank.
#[derive(Debug, Clone)]
pub struct Grid {
    pub image_shape: [usize; 3],
    pub rows: usize,
    pub cols: usize,
    pub cells: Vec<Option<Vec<f64>>>,
}

impl Grid {
    pub fn new(image_shape: &[usize], rows: usize, cols: usize) -> Result<Self> {
        let image_shape: [usize; 3] = image_shape
            .try_into()
            .map_err(|_| Error::InvalidArgument(format!("grid cells must be (c, h, w) images, got {image_shape:?}")))?;
        if !matches!(image_shape[0], 1 | 3) {
            return Err(Error::InvalidArgument("grid images need 1 or 3 channels".into()));
        }
        Ok(Self { image_shape, rows, cols, cells: vec![None; rows * cols] })
    }

    pub fn set(&mut self, row: usize, col: usize, pixels: &[f64]) -> Result<()> {
        crate::error::ensure_dim("grid cell", self.image_shape.iter().product(), pixels.len())?;
        if row >= self.rows || col >= self.cols {
            return Err(Error::IndexOutOfRange { index: row * self.cols + col, len: self.cells.len() });
        }
        self.cells[row * self.cols + col] = Some(pixels.to_vec());
        Ok(())
    }

    fn pixel_size(&self) -> (usize, usize) {
        let [_, h, w] = self.image_shape;
        (self.cols * (w + PAD) + PAD, self.rows * (h + PAD) + PAD)
    }

    /// 8-bit RGB raster; values are clipped to `[0, 1]`.
    pub fn raster(&self) -> (usize, usize, Vec<u8>) {
        let [c, h, w] = self.image_shape;
        let (width, height) = self.pixel_size();
        let mut out = vec![255u8; width * height * 3];
        for (k, cell) in self.cells.iter().enumerate() {
            let Some(px) = cell else { continue };
            let (x0, y0) = (PAD + (k % self.cols) * (w + PAD), PAD + (k / self.cols) * (h + PAD));
            for y in 0..h {
                for x in 0..w {
                    let at = ((y0 + y) * width + x0 + x) * 3;
                    for ch in 0..3 {
                        let v = px[(ch % c) * h * w + y * w + x];
                        out[at + ch] = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
                    }
                }
            }
        }
        (width, height, out)
    }
}

fn write_rgb(path: &Path, width: usize, height: usize, rgb: &[u8], config_hash: &str) -> Result<()> {
    let file = BufWriter::new(File::create(path)?);
    let mut enc = png::Encoder::new(file, width as u32, height as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    enc.add_text_chunk(TEXT_KEY.into(), config_hash.into())
        .map_err(|e| Error::Serialization(e.to_string()))?;
    let mut w = enc.write_header().map_err(|e| Error::Serialization(e.to_string()))?;
    w.write_image_data(rgb).map_err(|e| Error::Serialization(e.to_string()))?;
    w.finish().map_err(|e| Error::Serialization(e.to_string()))?;
    Ok(())
}

pub fn save_grid(grid: &Grid, path: impl AsRef<Path>, config_hash: &str) -> Result<()> {
    let (w, h, rgb) = grid.raster();
    write_rgb(path.as_ref(), w, h, &rgb, config_hash)
}

/// The config hash embedded in a PNG written by this module.
pub fn png_config_hash(path: impl AsRef<Path>) -> Result<Option<String>> {
    let dec = png::Decoder::new(File::open(path)?);
    let reader = dec.read_info().map_err(|e| Error::Corrupt(e.to_string()))?;
    Ok(reader
        .info()
        .uncompressed_latin1_text
        .iter()
        .find(|t| t.keyword == TEXT_KEY)
        .map(|t| t.text.clone()))
}

/// The sample figure layout: one row per condition with columns
/// `[truth], observation, ladder..., mean, std`. The std column is scaled
/// by its maximum over the grid so that structure is visible.
pub fn sample_grid(truth: Option<&Batch>, observation: &Batch, ladder: &[Batch], mean: &Batch, std: &Batch) -> Result<Grid> {
    let rows = observation.n();
    let offset = usize::from(truth.is_some());
    let cols = offset + 1 + ladder.len() + 2;
    let mut grid = Grid::new(mean.shape(), rows, cols)?;
    let peak = std.data().iter().cloned().fold(0.0, f64::max);
    let scale = if peak > 0.0 { 1.0 / peak } else { 0.0 };
    for i in 0..rows {
        if let Some(t) = truth {
            grid.set(i, 0, t.sample(i))?;
        }
        grid.set(i, offset, observation.sample(i))?;
        for (j, l) in ladder.iter().enumerate() {
            grid.set(i, offset + 1 + j, l.sample(i))?;
        }
        grid.set(i, cols - 2, mean.sample(i))?;
        let s: Vec<f64> = std.sample(i).iter().map(|v| v * scale).collect();
        grid.set(i, cols - 1, &s)?;
    }
    Ok(grid)
}

/// Scatter plot of the first two coordinates of each point set.
pub fn save_scatter(groups: &[(&Batch, [u8; 3])], size: usize, path: impl AsRef<Path>, config_hash: &str) -> Result<()> {
    let pts: Vec<(f64, f64, [u8; 3])> = groups
        .iter()
        .flat_map(|(b, color)| b.rows().filter(|r| r.len() >= 2).map(move |r| (r[0], r[1], *color)))
        .collect();
    if pts.is_empty() {
        return Err(Error::Empty("scatter points"));
    }
    let lo = pts.iter().fold(f64::INFINITY, |m, p| m.min(p.0).min(p.1));
    let hi = pts.iter().fold(f64::NEG_INFINITY, |m, p| m.max(p.0).max(p.1));
    let span = (hi - lo).max(1e-9) * 1.1;
    let mid = 0.5 * (hi + lo);
    let mut rgb = vec![255u8; size * size * 3];
    for (x, y, color) in pts {
        let px = (((x - mid) / span + 0.5) * (size - 1) as f64).round() as usize;
        let py = (((mid - y) / span + 0.5) * (size - 1) as f64).round() as usize;
        for (dx, dy) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
            let (u, v) = ((px + dx).min(size - 1), (py + dy).min(size - 1));
            rgb[(v * size + u) * 3..][..3].copy_from_slice(&color);
        }
    }
    write_rgb(path.as_ref(), size, size, &rgb, config_hash)
}

/// Fails unless every PNG in `dir` carries `config_hash`.
pub fn check_pngs(dir: impl AsRef<Path>, config_hash: &str) -> Result<()> {
    for entry in fs::read_dir(dir)? {
        let p = entry?.path();
        if p.extension().is_some_and(|e| e == "png") {
            let found = png_config_hash(&p)?.unwrap_or_default();
            if found != config_hash {
                return Err(Error::HashMismatch(config_hash.into(), found));
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_layout_and_hash() {
        let img = |v: f64| Batch::new(2, vec![1, 3, 4], vec![v; 24]).unwrap();
        let ladder = vec![img(0.2), img(0.4), img(0.6), img(0.8), img(1.0)];
        let grid = sample_grid(Some(&img(1.0)), &img(0.5), &ladder, &img(0.5), &img(0.1)).unwrap();
        assert_eq!((grid.rows, grid.cols), (2, 9));
        let (w, h, rgb) = grid.raster();
        assert_eq!((w, h), (9 * 6 + 2, 2 * 5 + 2));
        assert_eq!(rgb.len(), w * h * 3);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.png");
        save_grid(&grid, &p, "cafe").unwrap();
        assert_eq!(png_config_hash(&p).unwrap().as_deref(), Some("cafe"));
        check_pngs(dir.path(), "cafe").unwrap();
        assert_eq!(check_pngs(dir.path(), "beef").unwrap_err().kind(), "hash_mismatch");
    }

    #[test]
    fn rejects_vectors() {
        assert!(Grid::new(&[2], 1, 1).is_err());
    }
}
