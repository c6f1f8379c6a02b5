//! PNG snapshots of fields with overlaid measurement marks.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use crate::error::{Error, Result};
use crate::world::{Domain, Position};

/// Scalar field plus point overlays, rendered at `scale` pixels per cell.
pub struct FieldImage<'a> {
    pub domain: &'a Domain,
    pub values: &'a [f64],
    pub vmin: f64,
    pub vmax: f64,
    /// (position, palette index) pairs.
    pub marks: Vec<(Position, usize)>,
    pub scale: usize,
}

const PALETTE: [[u8; 3]; 6] = [
    [230, 30, 30],
    [30, 200, 60],
    [250, 200, 0],
    [200, 40, 220],
    [0, 220, 220],
    [255, 255, 255],
];

fn colormap(t: f64) -> [u8; 3] {
    // dark brown (fresh) -> teal -> deep blue (ocean)
    let t = t.clamp(0.0, 1.0);
    let stops = [(0.0, [90.0, 50.0, 20.0]), (0.5, [40.0, 170.0, 160.0]), (1.0, [10.0, 30.0, 120.0])];
    let (lo, hi) = if t < 0.5 { (stops[0], stops[1]) } else { (stops[1], stops[2]) };
    let w = (t - lo.0) / (hi.0 - lo.0);
    let mut out = [0u8; 3];
    for c in 0..3 {
        out[c] = (lo.1[c] + w * (hi.1[c] - lo.1[c])).round() as u8;
    }
    out
}

impl FieldImage<'_> {
    pub fn rgb(&self) -> (usize, usize, Vec<u8>) {
        let d = self.domain;
        let s = self.scale.max(1);
        let (w, h) = (d.nx() * s, d.ny() * s);
        let mut px = vec![0u8; w * h * 3];
        let span = (self.vmax - self.vmin).max(1e-12);
        for row in 0..h {
            // north up
            let j = d.ny() - 1 - row / s;
            for col in 0..w {
                let i = col / s;
                let idx = j * d.nx() + i;
                let rgb = if d.land_mask()[idx] {
                    [150, 150, 150]
                } else {
                    colormap((self.values[idx] - self.vmin) / span)
                };
                px[(row * w + col) * 3..(row * w + col) * 3 + 3].copy_from_slice(&rgb);
            }
        }
        for (p, color) in &self.marks {
            let Some(c) = d.nearest_cell(*p) else { continue };
            let rgb = PALETTE[color % PALETTE.len()];
            let row0 = (d.ny() - 1 - c.j) * s;
            let col0 = c.i * s;
            for r in row0..row0 + s {
                for q in col0..col0 + s {
                    px[(r * w + q) * 3..(r * w + q) * 3 + 3].copy_from_slice(&rgb);
                }
            }
        }
        (w, h, px)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let (w, h, px) = self.rgb();
        let file = BufWriter::new(File::create(path)?);
        let mut enc = png::Encoder::new(file, w as u32, h as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header().map_err(|e| Error::Io(std::io::Error::other(e)))?;
        writer.write_image_data(&px).map_err(|e| Error::Io(std::io::Error::other(e)))?;
        Ok(())
    }
}

/// Two panels side by side (e.g. truth | estimate), separated by a gap.
pub fn save_side_by_side(left: &FieldImage<'_>, right: &FieldImage<'_>, path: impl AsRef<Path>) -> Result<()> {
    let (w1, h1, a) = left.rgb();
    let (w2, h2, b) = right.rgb();
    let gap = 4;
    let (w, h) = (w1 + gap + w2, h1.max(h2));
    let mut px = vec![255u8; w * h * 3];
    for r in 0..h1 {
        px[r * w * 3..r * w * 3 + w1 * 3].copy_from_slice(&a[r * w1 * 3..(r + 1) * w1 * 3]);
    }
    for r in 0..h2 {
        let off = r * w * 3 + (w1 + gap) * 3;
        px[off..off + w2 * 3].copy_from_slice(&b[r * w2 * 3..(r + 1) * w2 * 3]);
    }
    let file = BufWriter::new(File::create(path)?);
    let mut enc = png::Encoder::new(file, w as u32, h as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc.write_header().map_err(|e| Error::Io(std::io::Error::other(e)))?;
    writer.write_image_data(&px).map_err(|e| Error::Io(std::io::Error::other(e)))?;
    Ok(())
}
