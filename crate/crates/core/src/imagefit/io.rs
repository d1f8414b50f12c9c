//! 16-bit binary PGM and plain CSV grids (one row per line, rows along y).

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use image::codecs::pnm::{GraymapHeader, PnmEncoder, SampleEncoding};
use image::{ExtendedColorType, ImageEncoder};

use super::{GridGeometry, ImageGrid};
use crate::error::{Error, Result};

fn io_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Io(format!("{}: {e}", path.display()))
}

/// Writes `image` rounded to 16-bit counts. Values above 65535 are an error.
pub fn write_pgm(image: &ImageGrid, path: &Path) -> Result<()> {
    if let Some(v) = image.pixels.iter().find(|v| **v > u16::MAX as f64 + 0.5) {
        return Err(Error::Argument(format!(
            "pixel value {v} does not fit in 16 bits"
        )));
    }
    let bytes: Vec<u8> = image
        .pixels
        .iter()
        .flat_map(|v| (v.round() as u16).to_ne_bytes())
        .collect();
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    let (width, height) = (image.geometry.width as u32, image.geometry.height as u32);
    let header = GraymapHeader {
        encoding: SampleEncoding::Binary,
        width,
        height,
        maxwhite: u16::MAX as u32,
    };
    PnmEncoder::new(&mut w)
        .with_header(header.into())
        .write_image(&bytes, width, height, ExtendedColorType::L16)
        .map_err(|e| io_err(path, e))?;
    w.flush().map_err(|e| io_err(path, e))
}

/// Reads a greyscale PGM; the file carries no optics, so pitch and
/// magnification come from `optics`.
pub fn read_pgm(path: &Path, optics: GridGeometry) -> Result<ImageGrid> {
    let img = image::ImageReader::open(path)
        .map_err(|e| io_err(path, e))?
        .with_guessed_format()
        .map_err(|e| io_err(path, e))?
        .decode()
        .map_err(|e| io_err(path, e))?
        .into_luma16();
    let geometry = GridGeometry {
        width: img.width() as usize,
        height: img.height() as usize,
        ..optics
    };
    ImageGrid::new(
        geometry,
        img.into_raw().into_iter().map(f64::from).collect(),
    )
}

pub fn write_csv(image: &ImageGrid, path: &Path) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| io_err(path, e))?;
    for row in image.pixels.chunks(image.geometry.width) {
        w.write_record(row.iter().map(|v| v.to_string()))
            .map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

pub fn read_csv(path: &Path, optics: GridGeometry) -> Result<ImageGrid> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| io_err(path, e))?;
    let mut pixels = Vec::new();
    let mut width = None;
    let mut height = 0;
    for rec in r.records() {
        let rec = rec.map_err(|e| io_err(path, e))?;
        if width.is_some_and(|w| w != rec.len()) {
            return Err(Error::Argument(format!(
                "{}: ragged row {}",
                path.display(),
                height + 1
            )));
        }
        width = Some(rec.len());
        for field in rec.iter() {
            let v: f64 = field
                .parse()
                .map_err(|_| Error::Argument(format!("{}: bad value '{field}'", path.display())))?;
            pixels.push(v);
        }
        height += 1;
    }
    let geometry = GridGeometry {
        width: width.unwrap_or(0),
        height,
        ..optics
    };
    ImageGrid::new(geometry, pixels)
}

/// Reads a PGM or CSV grid, chosen by file extension.
pub fn read_image(path: &Path, optics: GridGeometry) -> Result<ImageGrid> {
    match path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .as_deref()
    {
        Some("csv") => read_csv(path, optics),
        Some("pgm") | Some("pnm") => read_pgm(path, optics),
        _ => Err(Error::Argument(format!(
            "{}: unsupported image format (expected .pgm or .csv)",
            path.display()
        ))),
    }
}
