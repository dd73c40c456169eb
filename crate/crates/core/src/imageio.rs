//! Grayscale image grids written as binary PGM or PNG.

use std::fs;
use std::path::Path;

use crate::error::{Error, IoContext, Result};

/// Row of equally sized grayscale panels, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub h: usize,
    pub w: usize,
    pub gap: usize,
    pub rows: Vec<Vec<Vec<f32>>>,
}

impl Grid {
    pub fn new(h: usize, w: usize) -> Self {
        Self { h, w, gap: 1, rows: Vec::new() }
    }

    pub fn push_row(&mut self, panels: Vec<Vec<f32>>) {
        self.rows.push(panels);
    }

    pub fn panels(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    /// Composite raster (width, height, 8-bit pixels).
    pub fn raster(&self) -> (usize, usize, Vec<u8>) {
        let cols = self.rows.iter().map(Vec::len).max().unwrap_or(0);
        let width = cols * self.w + cols.saturating_sub(1) * self.gap;
        let height = self.rows.len() * self.h + self.rows.len().saturating_sub(1) * self.gap;
        let mut px = vec![255u8; width * height];
        for (r, row) in self.rows.iter().enumerate() {
            for (c, panel) in row.iter().enumerate() {
                let (oy, ox) = (r * (self.h + self.gap), c * (self.w + self.gap));
                for y in 0..self.h {
                    for x in 0..self.w {
                        let v = panel[y * self.w + x].clamp(0.0, 1.0);
                        px[(oy + y) * width + ox + x] = (v * 255.0).round() as u8;
                    }
                }
            }
        }
        (width, height, px)
    }

    pub fn pgm_bytes(&self) -> Vec<u8> {
        let (w, h, px) = self.raster();
        let mut bytes = format!("P5\n{w} {h}\n255\n").into_bytes();
        bytes.extend_from_slice(&px);
        bytes
    }

    pub fn png_bytes(&self) -> Result<Vec<u8>> {
        use image::ImageEncoder;
        let (w, h, px) = self.raster();
        let mut out = Vec::new();
        image::codecs::png::PngEncoder::new(&mut out)
            .write_image(&px, w as u32, h as u32, image::ExtendedColorType::L8)
            .map_err(|e| Error::Image(e.to_string()))?;
        Ok(out)
    }

    pub fn write_pgm(&self, path: &Path) -> Result<()> {
        fs::write(path, self.pgm_bytes()).at(path)
    }

    pub fn write_png(&self, path: &Path) -> Result<()> {
        fs::write(path, self.png_bytes()?).at(path)
    }
}

/// Reads an 8-bit grayscale PGM/PNG image into `[0, 1]` intensities.
pub fn read_gray(path: &Path) -> Result<(usize, usize, Vec<f32>)> {
    let img = image::open(path)
        .map_err(|e| Error::Input(format!("cannot read image {}: {e}", path.display())))?
        .to_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let px = img.into_raw().into_iter().map(|v| f32::from(v) / 255.0).collect();
    Ok((h, w, px))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_header_and_size() {
        let dir = tempfile::tempdir().unwrap();
        let mut g = Grid::new(2, 3);
        g.push_row(vec![vec![0.0; 6], vec![1.0; 6]]);
        let p = dir.path().join("g.pgm");
        g.write_pgm(&p).unwrap();
        let bytes = fs::read(&p).unwrap();
        assert!(bytes.starts_with(b"P5\n7 2\n255\n"));
        assert_eq!(bytes.len(), 11 + 14);
        let png = dir.path().join("g.png");
        g.write_png(&png).unwrap();
        let (h, w, px) = read_gray(&png).unwrap();
        assert_eq!((h, w), (2, 7));
        assert_eq!(px[6], 1.0);
    }
}
