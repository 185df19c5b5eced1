//! File formats.
//!
//! Portable float grid (".safg"): a 16-byte preamble — magic `SAFG`,
//! version u32 little-endian, 8 reserved zero bytes — then dims as three
//! u32 LE (height, width, channels) and the values as little-endian f32,
//! row-major with channel innermost. Metadata travels in an adjacent
//! structured text sidecar (`<path>.meta`, `key: value` lines).
//!
//! Model checkpoint: a text header (layer widths, activation tag, seed)
//! terminated by a `binary` line, followed by the parameters as little-endian
//! f32, row-major per matrix, each weight matrix followed by its bias vector.

use crate::error::{Error, Result};
use crate::grid::{Grid, GridShape, InputGrid};
use crate::model::{Activation, DifferentiableModel, TinyMlp};
use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"SAFG";
const VERSION: u32 = 1;

pub fn write_float_grid(path: &Path, grid: &Grid) -> Result<()> {
    let mut buf = Vec::with_capacity(28 + grid.len() * 4);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&[0u8; 8]);
    let s = grid.shape();
    for dim in [s.height, s.width, s.channels] {
        buf.extend_from_slice(&(dim as u32).to_le_bytes());
    }
    for &v in grid.values() {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn read_float_grid(path: &Path) -> Result<Grid> {
    let bytes = std::fs::read(path)?;
    let fail = |reason: &str| Error::Format { path: path.display().to_string(), reason: reason.into() };
    if bytes.len() < 28 {
        return Err(fail("truncated header"));
    }
    if &bytes[0..4] != MAGIC {
        return Err(fail("bad magic"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(fail(&format!("unsupported version {version}")));
    }
    let dim = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
    let shape = GridShape::new(dim(16), dim(20), dim(24));
    let data = &bytes[28..];
    if data.len() != shape.len() * 4 {
        return Err(fail(&format!("expected {} f32 values, found {} bytes", shape.len(), data.len())));
    }
    let values = data
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Grid::from_vec(shape, values)
}

/// Writes `key: value` lines, keys sorted for byte-stable output.
pub fn write_sidecar(path: &Path, entries: &BTreeMap<String, String>) -> Result<()> {
    let mut out = String::new();
    for (k, v) in entries {
        out.push_str(k);
        out.push_str(": ");
        out.push_str(v);
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_sidecar(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path)?;
    let mut map = BTreeMap::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            continue;
        }
        let (k, v) = line.split_once(':').ok_or_else(|| Error::Format {
            path: path.display().to_string(),
            reason: format!("sidecar line without ':': {line}"),
        })?;
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(map)
}

/// Loads an 8-bit PNG (grayscale or RGB) as an input grid with values in
/// [0,1].
pub fn read_png(path: &Path) -> Result<InputGrid> {
    let img = image::open(path).map_err(|e| Error::Image(e.to_string()))?;
    let (grid, shape);
    match img {
        image::DynamicImage::ImageLuma8(g) => {
            shape = GridShape::new(g.height() as usize, g.width() as usize, 1);
            grid = Grid::from_vec(shape, g.pixels().map(|p| p.0[0] as f64 / 255.0).collect())?;
        }
        other => {
            let rgb = other.to_rgb8();
            shape = GridShape::new(rgb.height() as usize, rgb.width() as usize, 3);
            let mut values = Vec::with_capacity(shape.len());
            for p in rgb.pixels() {
                for c in 0..3 {
                    values.push(p.0[c] as f64 / 255.0);
                }
            }
            grid = Grid::from_vec(shape, values)?;
        }
    }
    InputGrid::new(grid)
}

/// Loads either a PNG or a portable float grid, deciding by extension.
pub fn read_image(path: &Path) -> Result<InputGrid> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("png") => read_png(path),
        _ => InputGrid::new(read_float_grid(path)?),
    }
}

pub fn write_checkpoint(path: &Path, model: &TinyMlp) -> Result<()> {
    let mut file = std::fs::File::create(path)?;
    let mut header = String::new();
    header.push_str("tinymlp v1\n");
    header.push_str("widths");
    for w in model.widths() {
        header.push_str(&format!(" {w}"));
    }
    header.push('\n');
    let s = model.input_shape();
    header.push_str(&format!("shape {} {} {}\n", s.height, s.width, s.channels));
    header.push_str(&format!("activation {}\n", model.activation().tag()));
    header.push_str(&format!("seed {}\n", model.seed()));
    header.push_str("binary\n");
    file.write_all(header.as_bytes())?;
    let mut buf = Vec::new();
    for p in model.parameters() {
        buf.extend_from_slice(&(p as f32).to_le_bytes());
    }
    file.write_all(&buf)?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<TinyMlp> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let fail = |reason: String| Error::Format { path: path.display().to_string(), reason };

    // Header is ASCII lines up to and including "binary\n".
    let marker = b"binary\n";
    let header_end = bytes
        .windows(marker.len())
        .position(|w| w == marker)
        .ok_or_else(|| fail("missing 'binary' marker".into()))?
        + marker.len();
    let header = std::str::from_utf8(&bytes[..header_end])
        .map_err(|_| fail("non-utf8 header".into()))?;

    let mut widths: Option<Vec<usize>> = None;
    let mut shape: Option<GridShape> = None;
    let mut activation = Activation::Tanh;
    let mut seed = 0u64;
    for line in header.lines() {
        let mut parts = line.split_whitespace();
        match parts.next() {
            Some("widths") => {
                widths = Some(
                    parts
                        .map(|p| p.parse::<usize>().map_err(|_| fail(format!("bad width '{p}'"))))
                        .collect::<Result<_>>()?,
                );
            }
            Some("shape") => {
                let dims: Vec<usize> = parts
                    .map(|p| p.parse::<usize>().map_err(|_| fail(format!("bad dim '{p}'"))))
                    .collect::<Result<_>>()?;
                if dims.len() != 3 {
                    return Err(fail("shape needs 3 dims".into()));
                }
                shape = Some(GridShape::new(dims[0], dims[1], dims[2]));
            }
            Some("activation") => {
                activation = Activation::from_tag(parts.next().unwrap_or(""))?;
            }
            Some("seed") => {
                seed = parts
                    .next()
                    .and_then(|p| p.parse::<u64>().ok())
                    .ok_or_else(|| fail("bad seed".into()))?;
            }
            _ => {}
        }
    }
    let widths = widths.ok_or_else(|| fail("missing widths".into()))?;
    let shape = shape.ok_or_else(|| fail("missing shape".into()))?;

    let mut model = TinyMlp::new(shape, &widths, activation, seed)?;
    let data = &bytes[header_end..];
    let n_params: usize = widths.windows(2).map(|p| p[0] * p[1] + p[1]).sum();
    if data.len() != n_params * 4 {
        return Err(fail(format!("expected {n_params} f32 params, found {} bytes", data.len())));
    }
    let params: Vec<f64> = data
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    model.set_parameters(&params)?;
    Ok(model)
}
