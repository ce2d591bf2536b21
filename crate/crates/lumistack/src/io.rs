//! File formats: 8-bit RGB PNG for unit-domain images, raw little-endian f32
//! planar maps with a JSON sidecar for everything float-valued, and the same
//! raw+sidecar pairing for warp grids.
//!
//! The sidecar sits next to the raw file with its extension replaced by
//! `.json` (`logr.f32` / `logr.json`).

use crate::error::{Error, Result};
use crate::image::{Domain, Panorama};
use crate::warp::{WarpGrid, GRID_COLS, GRID_ROWS};
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::{Path, PathBuf};

/// Sidecar schema for float maps.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FloatMapMeta {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub dtype: String,
    pub layout: String,
    pub domain_tag: String,
}

/// Sidecar schema for warp grids.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WarpGridMeta {
    pub rows: usize,
    pub cols: usize,
    pub channels: usize,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn sidecar_path(raw: &Path) -> PathBuf {
    raw.with_extension("json")
}

/// Quantizes a unit-domain panorama to 8-bit RGB PNG (round to nearest).
pub fn write_png(path: &Path, p: &Panorama) -> Result<()> {
    if p.domain() != Domain::SrgbUnit {
        return Err(Error::DomainMismatch {
            expected: Domain::SrgbUnit.tag().into(),
            actual: p.domain().tag().into(),
        });
    }
    let mut buf = image::RgbImage::new(p.width() as u32, p.height() as u32);
    for y in 0..p.height() {
        for x in 0..p.width() {
            let px = [
                (p.get(x, y, 0).clamp(0.0, 1.0) * 255.0).round() as u8,
                (p.get(x, y, 1).clamp(0.0, 1.0) * 255.0).round() as u8,
                (p.get(x, y, 2).clamp(0.0, 1.0) * 255.0).round() as u8,
            ];
            buf.put_pixel(x as u32, y as u32, image::Rgb(px));
        }
    }
    buf.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Error::Image {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
}

/// Reads an RGB PNG into a unit-domain panorama (values v / 255).
pub fn read_png(path: &Path) -> Result<Panorama> {
    let img = image::open(path)
        .map_err(|e| Error::Image {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?
        .into_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut p = Panorama::new(w, h, Domain::SrgbUnit);
    for y in 0..h {
        for x in 0..w {
            let px = img.get_pixel(x as u32, y as u32);
            for c in 0..3 {
                p.set(x, y, c, px[c] as f64 / 255.0);
            }
        }
    }
    Ok(p)
}

/// Writes a panorama as planar f32le raw data plus its JSON sidecar.
pub fn write_float_map(raw_path: &Path, p: &Panorama) -> Result<()> {
    let n = p.pixel_count();
    let mut bytes = Vec::with_capacity(n * 3 * 4);
    for c in 0..3 {
        for i in 0..n {
            let v = p.data()[i * 3 + c] as f32;
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(raw_path, bytes).map_err(io_err(raw_path))?;
    let meta = FloatMapMeta {
        width: p.width(),
        height: p.height(),
        channels: 3,
        dtype: "f32le".into(),
        layout: "planar".into(),
        domain_tag: p.domain().tag().into(),
    };
    write_json(&sidecar_path(raw_path), &meta)
}

/// Reads a planar f32le raw map using its JSON sidecar.
pub fn read_float_map(raw_path: &Path) -> Result<Panorama> {
    let meta: FloatMapMeta = read_json(&sidecar_path(raw_path))?;
    if meta.dtype != "f32le" || meta.layout != "planar" {
        return Err(Error::invalid(format!(
            "unsupported float map encoding {}/{}",
            meta.dtype, meta.layout
        )));
    }
    if meta.channels != 3 {
        return Err(Error::invalid(format!(
            "expected 3 channels, sidecar says {}",
            meta.channels
        )));
    }
    let domain = Domain::from_tag(&meta.domain_tag)?;
    let bytes = fs::read(raw_path).map_err(io_err(raw_path))?;
    let n = meta.width * meta.height;
    if bytes.len() != n * 3 * 4 {
        return Err(Error::invalid(format!(
            "raw f32 payload is {} bytes, sidecar implies {}",
            bytes.len(),
            n * 3 * 4
        )));
    }
    let mut p = Panorama::new(meta.width, meta.height, domain);
    for c in 0..3 {
        for i in 0..n {
            let o = (c * n + i) * 4;
            let v = f32::from_le_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]]);
            p.data_mut()[i * 3 + c] = v as f64;
        }
    }
    Ok(p)
}

/// Writes a warp grid as planar f32le (all dx row-major, then all dy) plus
/// its JSON sidecar.
pub fn write_warp_grid(raw_path: &Path, grid: &WarpGrid) -> Result<()> {
    let n = GRID_ROWS * GRID_COLS;
    let mut bytes = Vec::with_capacity(n * 2 * 4);
    for ch in 0..2 {
        for i in 0..n {
            let v = grid.as_flat()[i * 2 + ch] as f32;
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(raw_path, bytes).map_err(io_err(raw_path))?;
    let meta = WarpGridMeta {
        rows: GRID_ROWS,
        cols: GRID_COLS,
        channels: 2,
    };
    write_json(&sidecar_path(raw_path), &meta)
}

pub fn read_warp_grid(raw_path: &Path) -> Result<WarpGrid> {
    let meta: WarpGridMeta = read_json(&sidecar_path(raw_path))?;
    if (meta.rows, meta.cols, meta.channels) != (GRID_ROWS, GRID_COLS, 2) {
        return Err(Error::invalid(format!(
            "warp grid sidecar {}x{}x{} does not match {}x{}x2",
            meta.rows, meta.cols, meta.channels, GRID_ROWS, GRID_COLS
        )));
    }
    let bytes = fs::read(raw_path).map_err(io_err(raw_path))?;
    let n = GRID_ROWS * GRID_COLS;
    if bytes.len() != n * 2 * 4 {
        return Err(Error::invalid(format!(
            "warp grid payload is {} bytes, expected {}",
            bytes.len(),
            n * 2 * 4
        )));
    }
    let mut flat = vec![0.0f64; n * 2];
    for ch in 0..2 {
        for i in 0..n {
            let o = (ch * n + i) * 4;
            let v = f32::from_le_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]]);
            flat[i * 2 + ch] = v as f64;
        }
    }
    WarpGrid::from_flat(flat)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    fs::write(path, text + "\n").map_err(io_err(path))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}
