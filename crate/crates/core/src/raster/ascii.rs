//! ESRI ASCII grid reading and writing.

use std::fmt::Write as _;
use std::io::{Read, Write};
use std::path::Path;

use super::CategoricalRaster;
use crate::error::{Error, Result};

#[derive(Default)]
struct Header {
    ncols: Option<usize>,
    nrows: Option<usize>,
    xll: Option<f64>,
    yll: Option<f64>,
    cellsize: Option<f64>,
    nodata: Option<i64>,
}

fn header_err(msg: impl Into<String>) -> Error {
    Error::MalformedHeader(msg.into())
}

fn parse_header_value<T: std::str::FromStr>(key: &str, value: Option<&str>) -> Result<T> {
    let value = value.ok_or_else(|| header_err(format!("missing value for {key}")))?;
    value
        .parse()
        .map_err(|_| header_err(format!("bad value {value:?} for {key}")))
}

fn set_once<T>(slot: &mut Option<T>, key: &str, value: T) -> Result<()> {
    if slot.is_some() {
        return Err(header_err(format!("duplicate key {key}")));
    }
    *slot = Some(value);
    Ok(())
}

/// Parses an ESRI ASCII grid. Header keys are case-insensitive. The class
/// count is the largest value plus one. NODATA cells are rejected.
pub fn load_ascii_grid(text: &str) -> Result<CategoricalRaster> {
    let mut header = Header::default();
    let mut lines = text.lines().peekable();

    while let Some(line) = lines.peek() {
        let mut tokens = line.split_whitespace();
        let Some(key) = tokens.next() else {
            lines.next();
            continue;
        };
        if !key.starts_with(|c: char| c.is_ascii_alphabetic()) {
            break;
        }
        let key = key.to_ascii_lowercase();
        let value = tokens.next();
        if tokens.next().is_some() {
            return Err(header_err(format!("trailing tokens after {key}")));
        }
        match key.as_str() {
            "ncols" => set_once(&mut header.ncols, &key, parse_header_value(&key, value)?)?,
            "nrows" => set_once(&mut header.nrows, &key, parse_header_value(&key, value)?)?,
            "xllcorner" | "xllcenter" => {
                set_once(&mut header.xll, "xllcorner", parse_header_value(&key, value)?)?
            }
            "yllcorner" | "yllcenter" => {
                set_once(&mut header.yll, "yllcorner", parse_header_value(&key, value)?)?
            }
            "cellsize" => set_once(&mut header.cellsize, &key, parse_header_value(&key, value)?)?,
            "nodata_value" => {
                let v: f64 = parse_header_value(&key, value)?;
                if v.fract() != 0.0 {
                    return Err(header_err(format!("non-integer NODATA_value {v}")));
                }
                set_once(&mut header.nodata, &key, v as i64)?
            }
            other => return Err(header_err(format!("unknown key {other:?}"))),
        }
        lines.next();
    }

    let ncols = header.ncols.ok_or_else(|| header_err("missing ncols"))?;
    let nrows = header.nrows.ok_or_else(|| header_err("missing nrows"))?;
    let cellsize = header.cellsize.ok_or_else(|| header_err("missing cellsize"))?;
    if ncols == 0 || nrows == 0 {
        return Err(header_err("ncols and nrows must be positive"));
    }
    if !(cellsize > 0.0 && cellsize.is_finite()) {
        return Err(header_err(format!("cellsize must be positive, got {cellsize}")));
    }

    let expected = ncols * nrows;
    let mut values = Vec::with_capacity(expected);
    let mut max_value = 0u16;
    for token in lines.flat_map(str::split_whitespace) {
        let idx = values.len();
        let (row, col) = (idx / ncols, idx % ncols);
        let cell_err = |reason| Error::InvalidCell {
            row,
            col,
            token: token.to_string(),
            reason,
        };
        if idx >= expected {
            return Err(cell_err("more cells than ncols x nrows"));
        }
        let v: i64 = match token.parse() {
            Ok(v) => v,
            Err(_) => {
                return Err(match token.parse::<f64>() {
                    Ok(f) if f.fract() == 0.0 && f.is_finite() => cell_err("cell written as a decimal"),
                    Ok(_) => cell_err("non-integer class index"),
                    Err(_) => cell_err("not a number"),
                })
            }
        };
        if header.nodata == Some(v) {
            return Err(cell_err("NODATA cells are not allowed in reference rasters"));
        }
        if v < 0 {
            return Err(cell_err("negative class index"));
        }
        let v = u16::try_from(v).map_err(|_| cell_err("class index too large"))?;
        max_value = max_value.max(v);
        values.push(v);
    }
    if values.len() != expected {
        return Err(Error::InvalidRaster(format!(
            "expected {expected} cells ({nrows} rows of {ncols}), found {}",
            values.len()
        )));
    }
    CategoricalRaster::new(ncols, nrows, cellsize, max_value as usize + 1, values)
}

/// Canonical ESRI ASCII text with the lower-left corner at the origin.
pub fn save_ascii_grid(raster: &CategoricalRaster) -> String {
    let mut out = String::with_capacity(raster.values().len() * 2 + 128);
    let _ = writeln!(out, "ncols {}", raster.width());
    let _ = writeln!(out, "nrows {}", raster.height());
    out.push_str("xllcorner 0\nyllcorner 0\n");
    let _ = writeln!(out, "cellsize {}", raster.cell_size());
    for row in raster.values().chunks(raster.width()) {
        let mut first = true;
        for v in row {
            if !first {
                out.push(' ');
            }
            first = false;
            let _ = write!(out, "{v}");
        }
        out.push('\n');
    }
    out
}

pub fn read_ascii_grid_file(path: &Path) -> Result<CategoricalRaster> {
    let mut text = String::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_string(&mut text))
        .map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
    load_ascii_grid(&text)
}

pub fn write_ascii_grid<W: Write>(raster: &CategoricalRaster, mut out: W) -> std::io::Result<()> {
    out.write_all(save_ascii_grid(raster).as_bytes())
}
