//! 8-bit grayscale renderings of C-scans and B-scans.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{GrayImage, ImageEncoder};
use sweepseg::volume::Grid;

/// `round(255 · clamp(v / vmax, 0, 1))` with `vmax` the field maximum.
/// A field with no positive value renders black.
pub fn to_gray(g: &Grid<f32>) -> GrayImage {
    let vmax = g.data.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
    let pixels = g
        .data
        .iter()
        .map(|&v| {
            if vmax > 0.0 {
                (255.0 * (v / vmax).clamp(0.0, 1.0)).round() as u8
            } else {
                0
            }
        })
        .collect();
    GrayImage::from_raw(g.cols as u32, g.rows as u32, pixels).expect("buffer matches grid size")
}

/// Binary (P5) PGM.
pub fn write_pgm(g: &Grid<f32>, path: &Path) -> anyhow::Result<()> {
    let img = to_gray(g);
    let out = BufWriter::new(File::create(path)?);
    PnmEncoder::new(out)
        .with_subtype(PnmSubtype::Graymap(SampleEncoding::Binary))
        .write_image(img.as_raw(), img.width(), img.height(), image::ExtendedColorType::L8)?;
    Ok(())
}
