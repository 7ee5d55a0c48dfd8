//! ESRI ASCII grid reader/writer.
//!
//! File layout: header lines (ncols, nrows, xllcorner, yllcorner, cellsize,
//! optional NODATA_value), then nrows data lines of ncols values with the
//! top (northernmost) row first. Internally rows are stored bottom-up.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::RasterGrid;
use crate::error::{EfiError, Result};

pub fn read_ascii_grid(path: &Path) -> Result<RasterGrid> {
    let file = std::fs::File::open(path)
        .map_err(|e| EfiError::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
    let reader = BufReader::new(file);

    let mut ncols: Option<usize> = None;
    let mut nrows: Option<usize> = None;
    let mut xll: Option<f64> = None;
    let mut yll: Option<f64> = None;
    let mut cellsize: Option<f64> = None;
    let mut nodata: f64 = -9999.0;

    let mut data_lines: Vec<String> = Vec::new();
    let mut in_header = true;

    for line in reader.lines() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if in_header && trimmed.chars().next().is_some_and(|c| c.is_ascii_alphabetic()) {
            let mut parts = trimmed.split_whitespace();
            let key = parts.next().unwrap_or("");
            let value = parts.next().ok_or_else(|| {
                EfiError::Format(format!("header key {key} has no value"))
            })?;
            let key_lc = key.to_ascii_lowercase();
            match key_lc.as_str() {
                "ncols" => {
                    ncols = Some(value.parse().map_err(|_| {
                        EfiError::Format(format!("invalid ncols value {value:?}"))
                    })?)
                }
                "nrows" => {
                    nrows = Some(value.parse().map_err(|_| {
                        EfiError::Format(format!("invalid nrows value {value:?}"))
                    })?)
                }
                "xllcorner" => {
                    xll = Some(value.parse().map_err(|_| {
                        EfiError::Format(format!("invalid xllcorner value {value:?}"))
                    })?)
                }
                "yllcorner" => {
                    yll = Some(value.parse().map_err(|_| {
                        EfiError::Format(format!("invalid yllcorner value {value:?}"))
                    })?)
                }
                "cellsize" => {
                    cellsize = Some(value.parse().map_err(|_| {
                        EfiError::Format(format!("invalid cellsize value {value:?}"))
                    })?)
                }
                "nodata_value" => {
                    nodata = value.parse().map_err(|_| {
                        EfiError::Format(format!("invalid NODATA_value {value:?}"))
                    })?
                }
                _ => return Err(EfiError::Format(format!("unknown header key {key}"))),
            }
        } else {
            in_header = false;
            data_lines.push(trimmed.to_string());
        }
    }

    let ncols = ncols.ok_or_else(|| EfiError::Format("missing header key ncols".into()))?;
    let nrows = nrows.ok_or_else(|| EfiError::Format("missing header key nrows".into()))?;
    let x_origin = xll.ok_or_else(|| EfiError::Format("missing header key xllcorner".into()))?;
    let y_origin = yll.ok_or_else(|| EfiError::Format("missing header key yllcorner".into()))?;
    let cellsize =
        cellsize.ok_or_else(|| EfiError::Format("missing header key cellsize".into()))?;
    if ncols == 0 || nrows == 0 {
        return Err(EfiError::Format("ncols and nrows must be at least 1".into()));
    }
    if !(cellsize > 0.0) {
        return Err(EfiError::Format(format!("cellsize must be positive, got {cellsize}")));
    }
    if data_lines.len() != nrows {
        return Err(EfiError::Dimension(format!(
            "expected {nrows} data rows, found {}",
            data_lines.len()
        )));
    }

    let mut values = vec![0.0; ncols * nrows];
    for (file_row, line) in data_lines.iter().enumerate() {
        let row_values: Vec<&str> = line.split_whitespace().collect();
        if row_values.len() != ncols {
            return Err(EfiError::Dimension(format!(
                "row {} has {} values, expected {ncols}",
                file_row + 1,
                row_values.len()
            )));
        }
        // file rows run top-down; internal storage is bottom-up
        let grid_row = nrows - 1 - file_row;
        for (col, raw) in row_values.iter().enumerate() {
            values[grid_row * ncols + col] = raw.parse().map_err(|_| {
                EfiError::Format(format!("invalid numeric value {raw:?} in row {}", file_row + 1))
            })?;
        }
    }

    Ok(RasterGrid { ncols, nrows, x_origin, y_origin, cellsize, nodata, values })
}

pub fn write_ascii_grid(grid: &RasterGrid, path: &Path) -> Result<()> {
    let mut out = BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "ncols {}", grid.ncols)?;
    writeln!(out, "nrows {}", grid.nrows)?;
    writeln!(out, "xllcorner {}", grid.x_origin)?;
    writeln!(out, "yllcorner {}", grid.y_origin)?;
    writeln!(out, "cellsize {}", grid.cellsize)?;
    writeln!(out, "NODATA_value {}", grid.nodata)?;
    for file_row in 0..grid.nrows {
        let grid_row = grid.nrows - 1 - file_row;
        let mut line = String::new();
        for col in 0..grid.ncols {
            if col > 0 {
                line.push(' ');
            }
            line.push_str(&format!("{}", grid.get(grid_row, col)));
        }
        writeln!(out, "{line}")?;
    }
    Ok(())
}
