//! Remote-sensing feature pool: terrain models from the point cloud,
//! normalized-height statistics, strata densities, a canopy cover proxy, and
//! spectral indices, assembled per analysis cell in a fixed name order.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::error::{EfiError, Result};
use crate::geodata::{GridMeta, PointCloud, RasterGrid, CLASS_GROUND};
use crate::util::{fmt_f64, mean, quantile_linear, std_pop};

/// Height strata as half-open bins [b0,b1), [b1,b2), ..., [bk, inf).
#[derive(Debug, Clone, PartialEq)]
pub struct StrataSpec {
    pub boundaries: Vec<f64>,
}

impl StrataSpec {
    pub fn new(boundaries: Vec<f64>) -> Result<Self> {
        if boundaries.is_empty() {
            return Err(EfiError::Config("strata boundaries must be nonempty".into()));
        }
        if boundaries[0] < 0.0 {
            return Err(EfiError::Config("first strata boundary must be >= 0".into()));
        }
        if boundaries.windows(2).any(|w| w[0] >= w[1]) {
            return Err(EfiError::Config("strata boundaries must be strictly ascending".into()));
        }
        Ok(StrataSpec { boundaries })
    }

    pub fn bin_count(&self) -> usize {
        self.boundaries.len()
    }

    /// "strata_6_16" for [6,16), "strata_96_up" for the open top bin.
    pub fn bin_names(&self) -> Vec<String> {
        let b = &self.boundaries;
        (0..b.len())
            .map(|i| {
                if i + 1 < b.len() {
                    format!("strata_{}_{}", fmt_f64(b[i]), fmt_f64(b[i + 1]))
                } else {
                    format!("strata_{}_up", fmt_f64(b[i]))
                }
            })
            .collect()
    }
}

impl Default for StrataSpec {
    fn default() -> Self {
        StrataSpec { boundaries: vec![0.0, 6.0, 16.0, 32.0, 64.0, 96.0] }
    }
}

/// One cell's feature values aligned to a name list shared by the whole run.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub names: Vec<String>,
    pub values: Vec<f64>,
}

/// Knobs for feature assembly. Band names must match the loaded band grids;
/// NDVI needs nir+red and EVI nir+red+blue, and each index is emitted only
/// when its bands are all listed.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureConfig {
    pub strata: StrataSpec,
    pub percentiles: Vec<f64>,
    pub cover_threshold: f64,
    pub bands: Vec<String>,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            strata: StrataSpec::default(),
            percentiles: (1..=19).map(|i| i as f64 * 5.0).collect(),
            cover_threshold: 6.0,
            bands: vec!["nir".into(), "red".into(), "blue".into()],
        }
    }
}

impl FeatureConfig {
    fn has_bands(&self, needed: &[&str]) -> bool {
        needed.iter().all(|n| self.bands.iter().any(|b| b == n))
    }
}

/// Digital terrain model: per-cell minimum z of ground-classified returns,
/// holes filled by iterating the mean of filled 8-neighbors until the grid
/// is complete.
pub fn build_dtm(cloud: &PointCloud, cellsize: f64, extent_meta: &GridMeta) -> Result<RasterGrid> {
    debug_assert_eq!(extent_meta.cellsize, cellsize);
    let mut dtm = RasterGrid::new(*extent_meta, f64::NAN, f64::NAN);
    let mut any_ground = false;
    for p in &cloud.points {
        if p.classification != CLASS_GROUND {
            continue;
        }
        let Some(cell) = extent_meta.cell_of(p.x, p.y) else { continue };
        any_ground = true;
        let cur = dtm.get(cell.row, cell.col);
        if cur.is_nan() || p.z < cur {
            dtm.set(cell.row, cell.col, p.z);
        }
    }
    if !any_ground {
        return Err(EfiError::Data(
            "no ground-classified (class 2) points: cannot build a terrain model".into(),
        ));
    }
    fill_holes(&mut dtm);
    dtm.nodata = -9999.0;
    Ok(dtm)
}

/// Synchronous iterative fill: each pass computes, for every empty cell with
/// at least one filled 8-neighbor, the mean of the neighbors filled *before*
/// the pass. Converges on any grid with at least one filled cell.
fn fill_holes(grid: &mut RasterGrid) {
    let (nr, nc) = (grid.nrows, grid.ncols);
    loop {
        let mut updates: Vec<(usize, usize, f64)> = Vec::new();
        for r in 0..nr {
            for c in 0..nc {
                if !grid.get(r, c).is_nan() {
                    continue;
                }
                let mut sum = 0.0;
                let mut n = 0usize;
                for dr in -1i64..=1 {
                    for dc in -1i64..=1 {
                        if dr == 0 && dc == 0 {
                            continue;
                        }
                        let rr = r as i64 + dr;
                        let cc = c as i64 + dc;
                        if rr < 0 || cc < 0 || rr >= nr as i64 || cc >= nc as i64 {
                            continue;
                        }
                        let v = grid.get(rr as usize, cc as usize);
                        if !v.is_nan() {
                            sum += v;
                            n += 1;
                        }
                    }
                }
                if n > 0 {
                    updates.push((r, c, sum / n as f64));
                }
            }
        }
        if updates.is_empty() {
            break;
        }
        for (r, c, v) in updates {
            grid.set(r, c, v);
        }
    }
}

/// Canopy height model: per-cell max(z - dtm) over all returns, floored at
/// 0; cells without returns are 0.
pub fn build_chm(cloud: &PointCloud, dtm: &RasterGrid) -> RasterGrid {
    let meta = dtm.meta();
    let mut chm = RasterGrid::new(meta, -9999.0, 0.0);
    for p in &cloud.points {
        let Some(cell) = meta.cell_of(p.x, p.y) else { continue };
        let h = (p.z - dtm.get(cell.row, cell.col)).max(0.0);
        if h > chm.get(cell.row, cell.col) {
            chm.set(cell.row, cell.col, h);
        }
    }
    chm
}

/// Replaces each point's z with its height above the terrain, floored at 0.
pub fn normalize_heights(cloud: &PointCloud, dtm: &RasterGrid) -> Result<PointCloud> {
    let meta = dtm.meta();
    let mut points = Vec::with_capacity(cloud.len());
    for p in &cloud.points {
        let Some(cell) = meta.cell_of(p.x, p.y) else {
            return Err(EfiError::Extent(format!(
                "point ({}, {}) falls outside the terrain model",
                p.x, p.y
            )));
        };
        let mut q = *p;
        q.z = (p.z - dtm.get(cell.row, cell.col)).max(0.0);
        points.push(q);
    }
    Ok(PointCloud { points })
}

/// Fraction of heights per stratum. Sums to 1 for nonempty input (heights
/// below the first boundary count into the first bin); all zeros when empty.
pub fn strata_densities(heights: &[f64], spec: &StrataSpec) -> Vec<f64> {
    let mut counts = vec![0usize; spec.bin_count()];
    for &h in heights {
        let bin = spec
            .boundaries
            .iter()
            .rposition(|&b| b <= h)
            .unwrap_or(0);
        counts[bin] += 1;
    }
    if heights.is_empty() {
        return vec![0.0; spec.bin_count()];
    }
    let n = heights.len() as f64;
    counts.into_iter().map(|c| c as f64 / n).collect()
}

/// Linear-interpolation percentile of a nonempty height list.
pub fn height_percentile(heights: &[f64], p: f64) -> Result<f64> {
    if heights.is_empty() {
        return Err(EfiError::Domain("percentile of an empty height list".into()));
    }
    if !(0.0..=100.0).contains(&p) {
        return Err(EfiError::Domain(format!("percentile {p} outside [0, 100]")));
    }
    Ok(quantile_linear(heights, p))
}

/// Percent of first returns above the threshold height; 0 when there are no
/// first returns.
pub fn cover_proxy(heights: &[f64], first_return_flags: &[bool], threshold: f64) -> Result<f64> {
    if heights.len() != first_return_flags.len() {
        return Err(EfiError::Consistency(format!(
            "cover proxy: {} heights but {} first-return flags",
            heights.len(),
            first_return_flags.len()
        )));
    }
    let mut first = 0usize;
    let mut above = 0usize;
    for (&h, &is_first) in heights.iter().zip(first_return_flags) {
        if is_first {
            first += 1;
            if h > threshold {
                above += 1;
            }
        }
    }
    if first == 0 {
        return Ok(0.0);
    }
    Ok(100.0 * above as f64 / first as f64)
}

/// Normalized difference vegetation index; 0 when both bands are 0.
pub fn ndvi(nir: f64, red: f64) -> f64 {
    let den = nir + red;
    if den == 0.0 {
        return 0.0;
    }
    (nir - red) / den
}

/// Enhanced vegetation index with the denominator clamped away from 0.
pub fn evi(nir: f64, red: f64, blue: f64) -> f64 {
    let mut den = nir + 6.0 * red - 7.5 * blue + 1.0;
    if den.abs() < 1e-6 {
        den = if den < 0.0 { -1e-6 } else { 1e-6 };
    }
    2.5 * (nir - red) / den
}

/// Per-cell slope in degrees from central differences, one-sided at edges.
pub fn slope_grid(dtm: &RasterGrid) -> Result<RasterGrid> {
    if dtm.nrows < 2 || dtm.ncols < 2 {
        return Err(EfiError::Dimension(format!(
            "slope needs a grid of at least 2x2, got {}x{}",
            dtm.nrows, dtm.ncols
        )));
    }
    let mut slope = RasterGrid::new(dtm.meta(), -9999.0, 0.0);
    let cs = dtm.cellsize;
    for r in 0..dtm.nrows {
        for c in 0..dtm.ncols {
            let dzdx = if c == 0 {
                (dtm.get(r, 1) - dtm.get(r, 0)) / cs
            } else if c == dtm.ncols - 1 {
                (dtm.get(r, c) - dtm.get(r, c - 1)) / cs
            } else {
                (dtm.get(r, c + 1) - dtm.get(r, c - 1)) / (2.0 * cs)
            };
            let dzdy = if r == 0 {
                (dtm.get(1, c) - dtm.get(0, c)) / cs
            } else if r == dtm.nrows - 1 {
                (dtm.get(r, c) - dtm.get(r - 1, c)) / cs
            } else {
                (dtm.get(r + 1, c) - dtm.get(r - 1, c)) / (2.0 * cs)
            };
            let g = (dzdx * dzdx + dzdy * dzdy).sqrt();
            slope.set(r, c, g.atan().to_degrees());
        }
    }
    Ok(slope)
}

/// Everything known about one analysis cell before feature assembly: point
/// heights with first-return flags, and the raster pixel values whose
/// centers fall in the cell.
#[derive(Debug, Clone, Default)]
pub struct CellCohort {
    pub heights: Vec<f64>,
    pub first_return: Vec<bool>,
    pub band_pixels: BTreeMap<String, Vec<f64>>,
    pub elev: Vec<f64>,
    pub slope: Vec<f64>,
}

/// The feature name list for a config, in assembly order. Identical across
/// cells and runs for the same config.
pub fn feature_names(cfg: &FeatureConfig) -> Vec<String> {
    let mut names = vec!["h_mean".to_string(), "h_std".to_string(), "h_max".to_string()];
    for p in &cfg.percentiles {
        names.push(format!("h_p{}", fmt_f64(*p)));
    }
    names.extend(cfg.strata.bin_names());
    names.push("cover_pct".to_string());
    for b in &cfg.bands {
        names.push(format!("{b}_mean"));
        names.push(format!("{b}_std"));
    }
    if cfg.has_bands(&["nir", "red"]) {
        names.push("ndvi_mean".to_string());
    }
    if cfg.has_bands(&["nir", "red", "blue"]) {
        names.push("evi_mean".to_string());
    }
    names.push("elev_mean".to_string());
    names.push("slope_mean".to_string());
    names
}

/// Assembles one cell's features. Cells without points get zeros for every
/// point-derived feature; cells without pixels get zeros for raster means.
pub fn assemble_features(cohort: &CellCohort, cfg: &FeatureConfig) -> Result<FeatureVector> {
    let names = feature_names(cfg);
    let mut values = Vec::with_capacity(names.len());
    let h = &cohort.heights;
    values.push(mean(h));
    values.push(std_pop(h));
    values.push(h.iter().copied().fold(0.0, f64::max));
    for p in &cfg.percentiles {
        values.push(if h.is_empty() { 0.0 } else { height_percentile(h, *p)? });
    }
    values.extend(strata_densities(h, &cfg.strata));
    values.push(cover_proxy(h, &cohort.first_return, cfg.cover_threshold)?);

    let empty = Vec::new();
    let band = |name: &str| cohort.band_pixels.get(name).unwrap_or(&empty);
    for b in &cfg.bands {
        let px = band(b);
        values.push(mean(px));
        values.push(std_pop(px));
    }
    if cfg.has_bands(&["nir", "red"]) {
        let (nir, red) = (band("nir"), band("red"));
        if nir.len() != red.len() {
            return Err(EfiError::Consistency(format!(
                "cell has {} nir pixels but {} red pixels",
                nir.len(),
                red.len()
            )));
        }
        let vals: Vec<f64> = nir.iter().zip(red).map(|(&n, &r)| ndvi(n, r)).collect();
        values.push(mean(&vals));
    }
    if cfg.has_bands(&["nir", "red", "blue"]) {
        let (nir, red, blue) = (band("nir"), band("red"), band("blue"));
        if nir.len() != red.len() || nir.len() != blue.len() {
            return Err(EfiError::Consistency("band pixel counts differ within a cell".into()));
        }
        let vals: Vec<f64> =
            nir.iter().zip(red).zip(blue).map(|((&n, &r), &b)| evi(n, r, b)).collect();
        values.push(mean(&vals));
    }
    values.push(mean(&cohort.elev));
    values.push(mean(&cohort.slope));
    debug_assert_eq!(names.len(), values.len());
    Ok(FeatureVector { names, values })
}

/// Bins points and raster pixels into the analysis tessellation and
/// assembles every cell's features. Row i of the result is the cell with
/// linear index i (row-major from the lower-left).
pub fn compute_cell_features(
    tess: &GridMeta,
    normalized: &PointCloud,
    dtm: &RasterGrid,
    slope: &RasterGrid,
    bands: &BTreeMap<String, RasterGrid>,
    cfg: &FeatureConfig,
) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    for name in &cfg.bands {
        if !bands.contains_key(name) {
            return Err(EfiError::Config(format!("configured band {name} was not loaded")));
        }
    }
    let mut cohorts: Vec<CellCohort> = vec![CellCohort::default(); tess.ncells()];
    for c in cohorts.iter_mut() {
        for b in &cfg.bands {
            c.band_pixels.insert(b.clone(), Vec::new());
        }
    }
    for p in &normalized.points {
        let Some(cell) = tess.cell_of(p.x, p.y) else { continue };
        let i = tess.linear(cell);
        cohorts[i].heights.push(p.z);
        cohorts[i].first_return.push(p.return_number == 1);
    }
    let terrain_meta = dtm.meta();
    for r in 0..terrain_meta.nrows {
        for c in 0..terrain_meta.ncols {
            let (x, y) = terrain_meta.cell_center(crate::geodata::CellIndex { row: r, col: c });
            let Some(cell) = tess.cell_of(x, y) else { continue };
            let i = tess.linear(cell);
            if !dtm.is_nodata(r, c) {
                cohorts[i].elev.push(dtm.get(r, c));
            }
            if !slope.is_nodata(r, c) {
                cohorts[i].slope.push(slope.get(r, c));
            }
        }
    }
    // Bands may sit on a coarser grid than the terrain, so each is binned by
    // its own pixel centers.
    for b in &cfg.bands {
        let g = &bands[b];
        let band_meta = g.meta();
        for r in 0..band_meta.nrows {
            for c in 0..band_meta.ncols {
                let (x, y) = band_meta.cell_center(crate::geodata::CellIndex { row: r, col: c });
                let Some(cell) = tess.cell_of(x, y) else { continue };
                let i = tess.linear(cell);
                if !g.is_nodata(r, c) {
                    cohorts[i].band_pixels.get_mut(b).expect("band preinserted").push(g.get(r, c));
                }
            }
        }
    }
    let names = feature_names(cfg);
    let rows: Vec<Result<Vec<f64>>> = cohorts
        .par_iter()
        .map(|cohort| assemble_features(cohort, cfg).map(|fv| fv.values))
        .collect();
    let mut out = Vec::with_capacity(rows.len());
    for r in rows {
        out.push(r?);
    }
    Ok((names, out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geodata::LidarPoint;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn meta(ncols: usize, nrows: usize, cellsize: f64) -> GridMeta {
        GridMeta { ncols, nrows, x_origin: 0.0, y_origin: 0.0, cellsize }
    }

    fn ground(x: f64, y: f64, z: f64) -> LidarPoint {
        LidarPoint { x, y, z, return_number: 2, classification: CLASS_GROUND }
    }

    fn veg(x: f64, y: f64, z: f64) -> LidarPoint {
        LidarPoint { x, y, z, return_number: 1, classification: 1 }
    }

    #[test]
    fn dtm_takes_min_ground_z_per_cell() {
        let m = meta(2, 1, 10.0);
        let cloud = PointCloud {
            points: vec![ground(5.0, 5.0, 102.0), ground(5.5, 5.0, 100.0), ground(15.0, 5.0, 100.0)],
        };
        let dtm = build_dtm(&cloud, 10.0, &m).unwrap();
        assert_eq!(dtm.get(0, 0), 100.0);
        assert_eq!(dtm.get(0, 1), 100.0);
    }

    #[test]
    fn dtm_fills_hole_from_neighbors() {
        let m = meta(3, 3, 10.0);
        let mut points = Vec::new();
        for r in 0..3 {
            for c in 0..3 {
                if r == 1 && c == 1 {
                    continue;
                }
                points.push(ground(c as f64 * 10.0 + 5.0, r as f64 * 10.0 + 5.0, 100.0));
            }
        }
        let dtm = build_dtm(&PointCloud { points }, 10.0, &m).unwrap();
        assert_abs_diff_eq!(dtm.get(1, 1), 100.0, epsilon = 1e-12);
    }

    #[test]
    fn dtm_fill_converges_across_large_gap() {
        // ground only in the left column; the rest fills leftward-propagated
        let m = meta(5, 1, 10.0);
        let cloud = PointCloud { points: vec![ground(5.0, 5.0, 80.0)] };
        let dtm = build_dtm(&cloud, 10.0, &m).unwrap();
        for c in 0..5 {
            assert_abs_diff_eq!(dtm.get(0, c), 80.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn dtm_requires_ground_points() {
        let m = meta(2, 2, 10.0);
        let cloud = PointCloud { points: vec![veg(5.0, 5.0, 120.0)] };
        assert!(matches!(build_dtm(&cloud, 10.0, &m), Err(EfiError::Data(_))));
    }

    #[test]
    fn chm_is_floored_max_above_terrain() {
        let m = meta(3, 1, 10.0);
        let cloud = PointCloud {
            points: vec![
                ground(5.0, 5.0, 100.0),
                ground(15.0, 5.0, 100.0),
                ground(25.0, 5.0, 100.0),
                veg(5.0, 5.0, 150.0),
                veg(15.0, 5.0, 99.0),
            ],
        };
        let dtm = build_dtm(&cloud, 10.0, &m).unwrap();
        let chm = build_chm(&cloud, &dtm);
        assert_eq!(chm.get(0, 0), 50.0);
        assert_eq!(chm.get(0, 1), 0.0); // below-terrain return floors to 0
        assert_eq!(chm.get(0, 2), 0.0); // ground only
    }

    #[test]
    fn normalize_heights_floors_and_checks_extent() {
        let m = meta(1, 1, 10.0);
        let cloud =
            PointCloud { points: vec![ground(5.0, 5.0, 100.0), veg(5.0, 5.0, 120.0), veg(5.5, 5.0, 95.0)] };
        let dtm = build_dtm(&cloud, 10.0, &m).unwrap();
        let norm = normalize_heights(&cloud, &dtm).unwrap();
        assert_eq!(norm.points[1].z, 20.0);
        assert_eq!(norm.points[2].z, 0.0);
        let outside = PointCloud { points: vec![veg(50.0, 5.0, 120.0)] };
        assert!(matches!(normalize_heights(&outside, &dtm), Err(EfiError::Extent(_))));
    }

    #[test]
    fn strata_density_examples() {
        let spec = StrataSpec::new(vec![0.0, 6.0, 16.0, 32.0]).unwrap();
        assert_eq!(strata_densities(&[1.0, 3.0, 5.0, 10.0], &spec), vec![0.75, 0.25, 0.0, 0.0]);
        assert_eq!(strata_densities(&[40.0], &spec), vec![0.0, 0.0, 0.0, 1.0]);
        assert_eq!(strata_densities(&[], &spec), vec![0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn strata_names_follow_boundaries() {
        assert_eq!(
            StrataSpec::default().bin_names(),
            vec![
                "strata_0_6",
                "strata_6_16",
                "strata_16_32",
                "strata_32_64",
                "strata_64_96",
                "strata_96_up"
            ]
        );
    }

    #[test]
    fn percentile_contract() {
        assert_abs_diff_eq!(height_percentile(&[2.0, 4.0, 6.0, 8.0], 50.0).unwrap(), 5.0);
        assert_abs_diff_eq!(height_percentile(&[7.0], 95.0).unwrap(), 7.0);
        assert_abs_diff_eq!(height_percentile(&[1.0, 2.0, 3.0, 4.0, 5.0], 25.0).unwrap(), 2.0);
        assert!(matches!(height_percentile(&[], 50.0), Err(EfiError::Domain(_))));
        assert!(matches!(height_percentile(&[1.0], 101.0), Err(EfiError::Domain(_))));
    }

    #[test]
    fn cover_proxy_counts_first_returns_only() {
        let heights = [10.0, 3.0, 8.0, 12.0, 50.0];
        let flags = [true, true, true, true, false];
        assert_abs_diff_eq!(cover_proxy(&heights, &flags, 6.0).unwrap(), 75.0);
        assert_eq!(cover_proxy(&[], &[], 6.0).unwrap(), 0.0);
        assert_abs_diff_eq!(
            cover_proxy(&[1.0, 2.0], &[true, true], 0.0).unwrap(),
            100.0
        );
        assert!(matches!(
            cover_proxy(&[1.0], &[true, false], 6.0),
            Err(EfiError::Consistency(_))
        ));
    }

    #[test]
    fn ndvi_examples() {
        assert_abs_diff_eq!(ndvi(0.5, 0.1), 0.6667, epsilon = 1e-4);
        assert_eq!(ndvi(0.3, 0.3), 0.0);
        assert_eq!(ndvi(0.0, 0.0), 0.0);
    }

    #[test]
    fn evi_examples() {
        assert_abs_diff_eq!(evi(0.5, 0.1, 0.05), 0.5797, epsilon = 1e-3);
        assert_eq!(evi(0.0, 0.0, 0.0), 0.0);
        // denominator engineered to ~0: nir + 6 red - 7.5 blue + 1 = 0
        let v = evi(0.1, 0.1, 0.1 / 7.5 + 0.6 / 7.5 + 1.0 / 7.5);
        assert!(v.is_finite());
    }

    #[test]
    fn slope_flat_and_inclined_planes() {
        let m = meta(4, 4, 2.0);
        let flat = RasterGrid::new(m, -9999.0, 100.0);
        let s = slope_grid(&flat).unwrap();
        assert!(s.values.iter().all(|&v| v == 0.0));

        // plane rising 1 ft per 1 ft in x: value = x
        let mut plane = RasterGrid::new(m, -9999.0, 0.0);
        for r in 0..4 {
            for c in 0..4 {
                plane.set(r, c, c as f64 * 2.0);
            }
        }
        let s = slope_grid(&plane).unwrap();
        for v in &s.values {
            assert_abs_diff_eq!(*v, 45.0, epsilon = 1e-9);
        }

        // plane rising 1 ft per cell: analytic gradient 1/cellsize
        let mut gentle = RasterGrid::new(m, -9999.0, 0.0);
        for r in 0..4 {
            for c in 0..4 {
                gentle.set(r, c, c as f64);
            }
        }
        let s = slope_grid(&gentle).unwrap();
        let expected = (1.0f64 / 2.0).atan().to_degrees();
        for v in &s.values {
            assert_abs_diff_eq!(*v, expected, epsilon = 1e-9);
        }
        let tiny = RasterGrid::new(meta(1, 1, 2.0), -9999.0, 0.0);
        assert!(matches!(slope_grid(&tiny), Err(EfiError::Dimension(_))));
    }

    #[test]
    fn assemble_empty_cell_is_all_zero() {
        let cfg = FeatureConfig::default();
        let fv = assemble_features(&CellCohort::default(), &cfg).unwrap();
        assert_eq!(fv.names, feature_names(&cfg));
        assert_eq!(fv.names.len(), 39);
        assert!(fv.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn assemble_known_cell_matches_component_ops() {
        let cfg = FeatureConfig {
            strata: StrataSpec::new(vec![0.0, 6.0, 16.0, 32.0]).unwrap(),
            percentiles: vec![50.0],
            cover_threshold: 6.0,
            bands: vec!["nir".into(), "red".into(), "blue".into()],
        };
        let mut cohort = CellCohort {
            heights: vec![2.0, 4.0, 6.0, 8.0],
            first_return: vec![true, true, true, true],
            ..Default::default()
        };
        cohort.band_pixels.insert("nir".into(), vec![0.5, 0.5]);
        cohort.band_pixels.insert("red".into(), vec![0.1, 0.1]);
        cohort.band_pixels.insert("blue".into(), vec![0.05, 0.05]);
        cohort.elev = vec![100.0, 110.0];
        cohort.slope = vec![5.0, 15.0];
        let fv = assemble_features(&cohort, &cfg).unwrap();
        let get = |name: &str| fv.values[fv.names.iter().position(|n| n == name).unwrap()];
        assert_abs_diff_eq!(get("h_mean"), 5.0);
        assert_abs_diff_eq!(get("h_std"), std_pop(&cohort.heights));
        assert_abs_diff_eq!(get("h_max"), 8.0);
        assert_abs_diff_eq!(get("h_p50"), 5.0);
        assert_abs_diff_eq!(get("strata_0_6"), 0.5); // 2, 4 in [0,6); 6 and 8 go up
        assert_abs_diff_eq!(get("strata_6_16"), 0.5);
        assert_abs_diff_eq!(get("cover_pct"), 25.0); // only 8 > 6
        assert_abs_diff_eq!(get("nir_mean"), 0.5);
        assert_abs_diff_eq!(get("nir_std"), 0.0);
        assert_abs_diff_eq!(get("ndvi_mean"), ndvi(0.5, 0.1));
        assert_abs_diff_eq!(get("evi_mean"), evi(0.5, 0.1, 0.05));
        assert_abs_diff_eq!(get("elev_mean"), 105.0);
        assert_abs_diff_eq!(get("slope_mean"), 10.0);
    }

    #[test]
    fn uniform_scene_gives_identical_vectors() {
        let tess = meta(2, 2, 20.0);
        let raster = meta(4, 4, 10.0);
        let mut points = Vec::new();
        for r in 0..4 {
            for c in 0..4 {
                let (x, y) = (c as f64 * 10.0 + 5.0, r as f64 * 10.0 + 5.0);
                points.push(ground(x, y, 100.0));
                points.push(veg(x, y, 130.0));
            }
        }
        let cloud = PointCloud { points };
        let dtm = build_dtm(&cloud, 10.0, &raster).unwrap();
        let slope = slope_grid(&dtm).unwrap();
        let norm = normalize_heights(&cloud, &dtm).unwrap();
        let mut bands = BTreeMap::new();
        for (name, v) in [("nir", 0.5), ("red", 0.1), ("blue", 0.05)] {
            bands.insert(name.to_string(), RasterGrid::new(raster, -9999.0, v));
        }
        let cfg = FeatureConfig::default();
        let (names, rows) = compute_cell_features(&tess, &norm, &dtm, &slope, &bands, &cfg).unwrap();
        assert_eq!(names.len(), 39);
        assert_eq!(rows.len(), 4);
        for row in &rows[1..] {
            assert_eq!(row, &rows[0]);
        }
    }

    #[test]
    fn bands_coarser_than_terrain_bin_by_their_own_pixels() {
        // terrain at 10 ft, bands at 20 ft: one tess cell sees 16 elev pixels
        // but only 4 band pixels.
        let tess = meta(1, 1, 40.0);
        let terrain = meta(4, 4, 10.0);
        let coarse = meta(2, 2, 20.0);
        let mut points = Vec::new();
        for r in 0..4 {
            for c in 0..4 {
                points.push(ground(c as f64 * 10.0 + 5.0, r as f64 * 10.0 + 5.0, 100.0));
            }
        }
        let cloud = PointCloud { points };
        let dtm = build_dtm(&cloud, 10.0, &terrain).unwrap();
        let slope = slope_grid(&dtm).unwrap();
        let norm = normalize_heights(&cloud, &dtm).unwrap();
        let mut bands = BTreeMap::new();
        for (name, v) in [("nir", 0.5), ("red", 0.1), ("blue", 0.05)] {
            bands.insert(name.to_string(), RasterGrid::new(coarse, -9999.0, v));
        }
        let cfg = FeatureConfig::default();
        let (names, rows) = compute_cell_features(&tess, &norm, &dtm, &slope, &bands, &cfg).unwrap();
        let get = |n: &str| rows[0][names.iter().position(|x| x == n).unwrap()];
        assert_abs_diff_eq!(get("nir_mean"), 0.5);
        assert_abs_diff_eq!(get("ndvi_mean"), ndvi(0.5, 0.1));
        assert_abs_diff_eq!(get("elev_mean"), 100.0);
    }

    #[test]
    fn missing_band_is_config_error() {
        let tess = meta(1, 1, 10.0);
        let raster = meta(2, 2, 5.0);
        let cloud = PointCloud { points: vec![ground(5.0, 5.0, 0.0)] };
        let dtm = build_dtm(&cloud, 5.0, &raster).unwrap();
        let slope = slope_grid(&dtm).unwrap();
        let bands = BTreeMap::new();
        let cfg = FeatureConfig::default();
        assert!(matches!(
            compute_cell_features(&tess, &cloud, &dtm, &slope, &bands, &cfg),
            Err(EfiError::Config(_))
        ));
    }

    proptest! {
        #[test]
        fn strata_sum_to_one(
            heights in proptest::collection::vec(0.0..200.0f64, 1..60),
            cuts in proptest::collection::btree_set(1u32..300, 1..8),
        ) {
            let mut boundaries: Vec<f64> = cuts.into_iter().map(|c| c as f64).collect();
            boundaries.insert(0, 0.0);
            let spec = StrataSpec::new(boundaries).unwrap();
            let d = strata_densities(&heights, &spec);
            prop_assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn ndvi_bounded_and_antisymmetric(a in 0.0..2.0f64, b in 0.0..2.0f64) {
            let v = ndvi(a, b);
            prop_assert!((-1.0..=1.0).contains(&v));
            prop_assert!((ndvi(a, b) + ndvi(b, a)).abs() < 1e-12);
        }

        #[test]
        fn percentile_monotone_and_bounded(
            heights in proptest::collection::vec(0.0..300.0f64, 1..40),
            p1 in 0.0..100.0f64,
            p2 in 0.0..100.0f64,
        ) {
            let (lo, hi) = if p1 <= p2 { (p1, p2) } else { (p2, p1) };
            let a = height_percentile(&heights, lo).unwrap();
            let b = height_percentile(&heights, hi).unwrap();
            prop_assert!(a <= b + 1e-12);
            let min = heights.iter().cloned().fold(f64::INFINITY, f64::min);
            let max = heights.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(a >= min - 1e-12 && b <= max + 1e-12);
        }

        #[test]
        fn translation_invariance_of_height_features(
            dz in -50.0..50.0f64,
            zs in proptest::collection::vec(0.0..120.0f64, 1..30),
        ) {
            let raster = GridMeta { ncols: 2, nrows: 2, x_origin: 0.0, y_origin: 0.0, cellsize: 10.0 };
            let mut points = vec![
                ground(5.0, 5.0, 100.0),
                ground(15.0, 5.0, 100.0),
                ground(5.0, 15.0, 100.0),
                ground(15.0, 15.0, 100.0),
            ];
            for (i, z) in zs.iter().enumerate() {
                let x = 2.0 + (i % 4) as f64 * 4.0;
                let y = 2.0 + ((i / 4) % 4) as f64 * 4.0;
                points.push(veg(x, y, 100.0 + z));
            }
            let cloud = PointCloud { points: points.clone() };
            let shifted = PointCloud {
                points: points.iter().map(|p| LidarPoint { z: p.z + dz, ..*p }).collect(),
            };
            let dtm = build_dtm(&cloud, 10.0, &raster).unwrap();
            let dtm_shift = build_dtm(&shifted, 10.0, &raster).unwrap();
            let n1 = normalize_heights(&cloud, &dtm).unwrap();
            let n2 = normalize_heights(&shifted, &dtm_shift).unwrap();
            for (a, b) in n1.points.iter().zip(&n2.points) {
                prop_assert!((a.z - b.z).abs() < 1e-9);
            }
            let c1 = build_chm(&cloud, &dtm);
            let c2 = build_chm(&shifted, &dtm_shift);
            for (a, b) in c1.values.iter().zip(&c2.values) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }
    }
}
