//! Core spatial types and readers/writers for every external format the
//! pipeline touches: ESRI ASCII grids, LAS / CSV point clouds, and GeoJSON
//! feature collections.
//!
//! All types are immutable after construction. Linear units are feet
//! throughout; areas are acres (43560 square feet per acre).

mod ascii;
mod geojson;
mod las;

pub use ascii::{read_ascii_grid, write_ascii_grid};
pub use geojson::write_geojson;
pub use las::{read_las, write_las};

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{EfiError, Result};

pub const SQFT_PER_ACRE: f64 = 43560.0;

/// Axis-aligned rectangle in feet.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Extent {
    pub xmin: f64,
    pub ymin: f64,
    pub xmax: f64,
    pub ymax: f64,
}

impl Extent {
    pub fn new(xmin: f64, ymin: f64, xmax: f64, ymax: f64) -> Self {
        Extent { xmin, ymin, xmax, ymax }
    }

    pub fn width(&self) -> f64 {
        self.xmax - self.xmin
    }

    pub fn height(&self) -> f64 {
        self.ymax - self.ymin
    }

    pub fn area_acres(&self) -> f64 {
        self.width() * self.height() / SQFT_PER_ACRE
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.xmin && x <= self.xmax && y >= self.ymin && y <= self.ymax
    }
}

/// Row/column address into a grid or tessellation. Row 0 is the southernmost
/// (lowest y) row everywhere in this crate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CellIndex {
    pub row: usize,
    pub col: usize,
}

/// Geometry of a regular grid: origin at the lower-left corner, square cells.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridMeta {
    pub ncols: usize,
    pub nrows: usize,
    pub x_origin: f64,
    pub y_origin: f64,
    pub cellsize: f64,
}

impl GridMeta {
    pub fn extent(&self) -> Extent {
        Extent::new(
            self.x_origin,
            self.y_origin,
            self.x_origin + self.ncols as f64 * self.cellsize,
            self.y_origin + self.nrows as f64 * self.cellsize,
        )
    }

    /// Cell containing (x, y), with points on the top/right edge snapped into
    /// the last row/column. None when outside the grid.
    pub fn cell_of(&self, x: f64, y: f64) -> Option<CellIndex> {
        let fx = (x - self.x_origin) / self.cellsize;
        let fy = (y - self.y_origin) / self.cellsize;
        if fx < 0.0 || fy < 0.0 {
            return None;
        }
        let mut col = fx.floor() as usize;
        let mut row = fy.floor() as usize;
        if col == self.ncols && x <= self.x_origin + self.ncols as f64 * self.cellsize {
            col = self.ncols - 1;
        }
        if row == self.nrows && y <= self.y_origin + self.nrows as f64 * self.cellsize {
            row = self.nrows - 1;
        }
        if col >= self.ncols || row >= self.nrows {
            return None;
        }
        Some(CellIndex { row, col })
    }

    /// Center coordinates of a cell.
    pub fn cell_center(&self, cell: CellIndex) -> (f64, f64) {
        (
            self.x_origin + (cell.col as f64 + 0.5) * self.cellsize,
            self.y_origin + (cell.row as f64 + 0.5) * self.cellsize,
        )
    }

    pub fn ncells(&self) -> usize {
        self.ncols * self.nrows
    }

    pub fn linear(&self, cell: CellIndex) -> usize {
        cell.row * self.ncols + cell.col
    }

    pub fn from_linear(&self, idx: usize) -> CellIndex {
        CellIndex { row: idx / self.ncols, col: idx % self.ncols }
    }
}

/// Regular raster: row-major values stored bottom-up, so index 0 is the
/// lower-left cell. Nodata cells carry the sentinel value.
#[derive(Debug, Clone, PartialEq)]
pub struct RasterGrid {
    pub ncols: usize,
    pub nrows: usize,
    pub x_origin: f64,
    pub y_origin: f64,
    pub cellsize: f64,
    pub nodata: f64,
    pub values: Vec<f64>,
}

impl RasterGrid {
    pub fn new(meta: GridMeta, nodata: f64, fill: f64) -> Self {
        RasterGrid {
            ncols: meta.ncols,
            nrows: meta.nrows,
            x_origin: meta.x_origin,
            y_origin: meta.y_origin,
            cellsize: meta.cellsize,
            nodata,
            values: vec![fill; meta.ncells()],
        }
    }

    pub fn meta(&self) -> GridMeta {
        GridMeta {
            ncols: self.ncols,
            nrows: self.nrows,
            x_origin: self.x_origin,
            y_origin: self.y_origin,
            cellsize: self.cellsize,
        }
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.ncols + col]
    }

    pub fn set(&mut self, row: usize, col: usize, v: f64) {
        self.values[row * self.ncols + col] = v;
    }

    pub fn is_nodata(&self, row: usize, col: usize) -> bool {
        self.get(row, col) == self.nodata
    }

    /// Value at (x, y), None when outside the grid or nodata.
    pub fn sample(&self, x: f64, y: f64) -> Option<f64> {
        let cell = self.meta().cell_of(x, y)?;
        let v = self.get(cell.row, cell.col);
        if v == self.nodata {
            None
        } else {
            Some(v)
        }
    }

    /// Headers must match exactly for two grids to be co-registered.
    pub fn same_layout(&self, other: &RasterGrid) -> bool {
        self.meta() == other.meta()
    }
}

/// A single LiDAR return.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LidarPoint {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub return_number: u8,
    pub classification: u8,
}

/// Ground classification code used by LAS and by this crate.
pub const CLASS_GROUND: u8 = 2;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<LidarPoint>,
}

impl PointCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Bounding box of all points; None when empty.
    pub fn bounds(&self) -> Option<Extent> {
        let first = self.points.first()?;
        let mut e = Extent::new(first.x, first.y, first.x, first.y);
        for p in &self.points {
            e.xmin = e.xmin.min(p.x);
            e.xmax = e.xmax.max(p.x);
            e.ymin = e.ymin.min(p.y);
            e.ymax = e.ymax.max(p.y);
        }
        Some(e)
    }
}

/// A property value carried into GeoJSON output.
#[derive(Debug, Clone, PartialEq)]
pub enum PropertyValue {
    Number(f64),
    Text(String),
}

impl From<f64> for PropertyValue {
    fn from(v: f64) -> Self {
        PropertyValue::Number(v)
    }
}

impl From<&str> for PropertyValue {
    fn from(v: &str) -> Self {
        PropertyValue::Text(v.to_string())
    }
}

impl From<String> for PropertyValue {
    fn from(v: String) -> Self {
        PropertyValue::Text(v)
    }
}

/// Reporting-unit geometry plus attributes, held as a set of member cells of
/// one governing tessellation.
#[derive(Debug, Clone)]
pub struct PolygonRecord {
    pub id: String,
    pub cell_members: Vec<CellIndex>,
    pub area: f64,
    pub properties: BTreeMap<String, PropertyValue>,
}

impl PolygonRecord {
    /// Validates the area invariant: area == |cells| * cell_area within 1e-9
    /// relative.
    pub fn new(
        id: String,
        cell_members: Vec<CellIndex>,
        area: f64,
        properties: BTreeMap<String, PropertyValue>,
    ) -> Result<Self> {
        if cell_members.is_empty() {
            return Err(EfiError::Consistency(format!("unit {id} has no member cells")));
        }
        if area <= 0.0 {
            return Err(EfiError::Consistency(format!("unit {id} has nonpositive area")));
        }
        Ok(PolygonRecord { id, cell_members, area, properties })
    }
}

/// Acres covered by one square cell of the given side length in feet.
pub fn cell_area(cellsize: f64) -> Result<f64> {
    if !(cellsize > 0.0) {
        return Err(EfiError::Domain(format!(
            "cellsize must be positive, got {cellsize}"
        )));
    }
    Ok(cellsize * cellsize / SQFT_PER_ACRE)
}

/// Reads a point cloud, dispatching on extension: `.las` binary, anything
/// else is treated as the CSV fallback (header row with columns
/// x,y,z,return_number,classification).
pub fn read_point_cloud(path: &Path) -> Result<PointCloud> {
    match path.extension().and_then(|e| e.to_str()) {
        Some(ext) if ext.eq_ignore_ascii_case("las") => las::read_las(path),
        Some(ext) if ext.eq_ignore_ascii_case("laz") => Err(EfiError::Capability(
            "LAZ decompression is not supported; provide .las or .csv".to_string(),
        )),
        _ => read_point_csv(path),
    }
}

/// CSV fallback reader. Header row required; column order free; extra
/// columns ignored.
pub fn read_point_csv(path: &Path) -> Result<PointCloud> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)?;
    let headers = reader
        .headers()
        .map_err(|e| EfiError::Format(format!("{}: {e}", path.display())))?
        .clone();
    let mut idx = [usize::MAX; 5];
    let wanted = ["x", "y", "z", "return_number", "classification"];
    for (i, name) in headers.iter().enumerate() {
        if let Some(pos) = wanted.iter().position(|w| *w == name.trim()) {
            idx[pos] = i;
        }
    }
    for (pos, name) in wanted.iter().enumerate() {
        if idx[pos] == usize::MAX {
            return Err(EfiError::Format(format!(
                "{}: missing column {name}",
                path.display()
            )));
        }
    }
    let mut points = Vec::new();
    for (rec_no, rec) in reader.records().enumerate() {
        let line = rec_no + 2; // header is line 1
        let rec = rec.map_err(|e| EfiError::Format(format!("{}: {e}", path.display())))?;
        if rec.len() < 5 {
            return Err(EfiError::Format(format!(
                "{}: line {line}: expected at least 5 fields, got {}",
                path.display(),
                rec.len()
            )));
        }
        let field = |i: usize| -> Result<f64> {
            rec.get(idx[i])
                .ok_or_else(|| {
                    EfiError::Format(format!("{}: line {line}: short row", path.display()))
                })?
                .trim()
                .parse::<f64>()
                .map_err(|e| {
                    EfiError::Format(format!("{}: line {line}: {e}", path.display()))
                })
        };
        points.push(LidarPoint {
            x: field(0)?,
            y: field(1)?,
            z: field(2)?,
            return_number: (field(3)? as i64).max(1) as u8,
            classification: field(4)? as u8,
        });
    }
    Ok(PointCloud { points })
}

/// Writes the CSV fallback encoding of a cloud.
pub fn write_point_csv(cloud: &PointCloud, path: &Path) -> Result<()> {
    use std::io::Write;
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "x,y,z,return_number,classification")?;
    for p in &cloud.points {
        writeln!(
            out,
            "{},{},{},{},{}",
            p.x, p.y, p.z, p.return_number, p.classification
        )?;
    }
    Ok(())
}

/// Loads a named set of co-registered band grids, validating that every
/// header matches the first.
pub fn load_bands(paths: &[(String, std::path::PathBuf)]) -> Result<BTreeMap<String, RasterGrid>> {
    let mut bands = BTreeMap::new();
    let mut reference: Option<(String, GridMeta)> = None;
    for (name, path) in paths {
        let grid = read_ascii_grid(path)?;
        match &reference {
            None => reference = Some((name.clone(), grid.meta())),
            Some((ref_name, meta)) => {
                if grid.meta() != *meta {
                    return Err(EfiError::Consistency(format!(
                        "band {name} is not co-registered with band {ref_name}"
                    )));
                }
            }
        }
        bands.insert(name.clone(), grid);
    }
    Ok(bands)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn cell_area_66ft_is_tenth_acre() {
        assert_abs_diff_eq!(cell_area(66.0).unwrap(), 0.1, epsilon = 1e-12);
    }

    #[test]
    fn cell_area_one_acre_side() {
        assert_abs_diff_eq!(cell_area(208.71).unwrap(), 1.0, epsilon = 1e-4);
    }

    #[test]
    fn cell_area_rejects_nonpositive() {
        assert!(matches!(cell_area(0.0), Err(EfiError::Domain(_))));
        assert!(matches!(cell_area(-5.0), Err(EfiError::Domain(_))));
    }

    #[test]
    fn cell_of_snaps_max_edge_inward() {
        let meta = GridMeta { ncols: 2, nrows: 2, x_origin: 0.0, y_origin: 0.0, cellsize: 10.0 };
        assert_eq!(meta.cell_of(20.0, 20.0), Some(CellIndex { row: 1, col: 1 }));
        assert_eq!(meta.cell_of(0.0, 0.0), Some(CellIndex { row: 0, col: 0 }));
        assert_eq!(meta.cell_of(20.01, 5.0), None);
        assert_eq!(meta.cell_of(-0.01, 5.0), None);
    }

    #[test]
    fn point_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pts.csv");
        let cloud = PointCloud {
            points: vec![
                LidarPoint { x: 10.0, y: 10.0, z: 0.0, return_number: 1, classification: 2 },
                LidarPoint { x: 1.5, y: 2.5, z: 30.25, return_number: 2, classification: 1 },
            ],
        };
        write_point_csv(&cloud, &path).unwrap();
        let back = read_point_cloud(&path).unwrap();
        assert_eq!(back, cloud);
    }

    #[test]
    fn point_csv_single_ground_return() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pts.csv");
        std::fs::write(&path, "x,y,z,return_number,classification\n10,10,0,1,2\n").unwrap();
        let cloud = read_point_cloud(&path).unwrap();
        assert_eq!(cloud.len(), 1);
        let p = cloud.points[0];
        assert_eq!((p.x, p.y, p.z), (10.0, 10.0, 0.0));
        assert_eq!(p.return_number, 1);
        assert_eq!(p.classification, CLASS_GROUND);
    }

    #[test]
    fn point_csv_header_only_is_empty() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pts.csv");
        std::fs::write(&path, "x,y,z,return_number,classification\n").unwrap();
        let cloud = read_point_cloud(&path).unwrap();
        assert!(cloud.is_empty());
    }

    #[test]
    fn point_csv_short_row_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pts.csv");
        std::fs::write(&path, "x,y,z,return_number,classification\n1,2,3\n").unwrap();
        match read_point_cloud(&path) {
            Err(EfiError::Format(msg)) => assert!(msg.contains("line 2"), "{msg}"),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn bands_must_be_coregistered() {
        let dir = tempfile::tempdir().unwrap();
        let meta = GridMeta { ncols: 2, nrows: 2, x_origin: 0.0, y_origin: 0.0, cellsize: 66.0 };
        let a = RasterGrid::new(meta, -9999.0, 1.0);
        let mut meta_b = meta;
        meta_b.x_origin = 5.0;
        let b = RasterGrid::new(meta_b, -9999.0, 1.0);
        let pa = dir.path().join("a.asc");
        let pb = dir.path().join("b.asc");
        write_ascii_grid(&a, &pa).unwrap();
        write_ascii_grid(&b, &pb).unwrap();
        let ok = load_bands(&[("nir".into(), pa.clone()), ("red".into(), pa.clone())]);
        assert!(ok.is_ok());
        let bad = load_bands(&[("nir".into(), pa), ("red".into(), pb)]);
        assert!(matches!(bad, Err(EfiError::Consistency(_))));
    }
}
