//! Synthetic scene generator: co-registered point clouds, imagery bands,
//! and ground plots over stands with known attributes. The end-to-end
//! oracle for desk-scale validation; realism is not the goal,
//! recoverability of known signal is.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::error::{EfiError, Result};
use crate::geodata::{
    write_ascii_grid, write_las, Extent, GridMeta, LidarPoint, PointCloud, RasterGrid,
    SQFT_PER_ACRE,
};
use crate::plots::{compile_plot_attributes, AttributeVector, PlotRecord, TreeRecord};
use crate::util::{fmt_f64, stage_seed};

const SOFTWOOD_SPECIES: i32 = 122; // ponderosa pine
const HARDWOOD_SPECIES: i32 = 312;
const CROWN_RADIUS_PER_HEIGHT: f64 = 0.16;
const CROWN_DEPTH_PER_HEIGHT: f64 = 0.45;
/// Chance that a canopy-intercepted pulse also reaches the ground.
const GROUND_PENETRATION: f64 = 0.3;

/// One homogeneous stand rectangle.
#[derive(Debug, Clone, PartialEq)]
pub struct StandPatch {
    pub name: String,
    pub rect: Extent,
    pub stems_per_acre: f64,
    pub dbh_mean: f64,
    pub dbh_std: f64,
    /// height = intercept + slope x dbh
    pub height_intercept: f64,
    pub height_slope: f64,
    pub softwood_fraction: f64,
    pub snag_fraction: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub extent: Extent,
    pub patches: Vec<StandPatch>,
    /// Pulses per square foot.
    pub pulse_density: f64,
    /// Ground plane z = a·x + b·y + c.
    pub terrain: (f64, f64, f64),
    /// Gaussian jitter on every return elevation, feet.
    pub noise_std: f64,
    pub band_cellsize: f64,
    pub plot_count: usize,
    pub plot_radius: f64,
    pub seed: u64,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.pulse_density > 0.0) {
            return Err(EfiError::Domain(format!(
                "pulse density must be positive, got {}",
                self.pulse_density
            )));
        }
        if !(self.extent.width() > 0.0 && self.extent.height() > 0.0) {
            return Err(EfiError::Domain("scene extent has nonpositive size".into()));
        }
        if !(self.band_cellsize > 0.0) || !(self.plot_radius > 0.0) {
            return Err(EfiError::Domain("band cellsize and plot radius must be positive".into()));
        }
        if !(self.noise_std >= 0.0) {
            return Err(EfiError::Domain(format!("noise std {} negative", self.noise_std)));
        }
        for p in &self.patches {
            if !(p.stems_per_acre >= 0.0) || !(p.dbh_std >= 0.0) {
                return Err(EfiError::Domain(format!(
                    "patch {}: density and dbh spread must be nonnegative",
                    p.name
                )));
            }
            for f in [p.softwood_fraction, p.snag_fraction] {
                if !(0.0..=1.0).contains(&f) {
                    return Err(EfiError::Domain(format!(
                        "patch {}: fraction {f} outside [0, 1]",
                        p.name
                    )));
                }
            }
            let inside = p.rect.xmin >= self.extent.xmin - 1e-9
                && p.rect.ymin >= self.extent.ymin - 1e-9
                && p.rect.xmax <= self.extent.xmax + 1e-9
                && p.rect.ymax <= self.extent.ymax + 1e-9
                && p.rect.width() > 0.0
                && p.rect.height() > 0.0;
            if !inside {
                return Err(EfiError::Domain(format!(
                    "patch {} rectangle falls outside the scene extent",
                    p.name
                )));
            }
        }
        Ok(())
    }

    fn ground_z(&self, x: f64, y: f64) -> f64 {
        let (a, b, c) = self.terrain;
        a * x + b * y + c
    }
}

/// A placed stem. Heights are above ground; terrain is added when pulses
/// are sampled.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthTree {
    pub x: f64,
    pub y: f64,
    pub dbh: f64,
    pub height: f64,
    pub species_code: i32,
    pub status: i32,
    pub carbon_ag: f64,
    pub patch: usize,
}

impl SynthTree {
    fn is_live(&self) -> bool {
        self.status == 1
    }

    fn crown_radius(&self) -> f64 {
        CROWN_RADIUS_PER_HEIGHT * self.height
    }

    fn record(&self, plot_id: &str, tpa_expansion: f64) -> TreeRecord {
        TreeRecord {
            plot_id: plot_id.to_string(),
            status: self.status,
            species_code: self.species_code,
            dbh: self.dbh,
            height: self.height,
            tpa_expansion,
            carbon_ag: self.carbon_ag,
        }
    }
}

/// Stems placed uniformly at each patch density; dbh gaussian, height
/// linear in dbh, aboveground carbon allometric in dbh²·height.
pub fn generate_trees(spec: &SceneSpec) -> Result<Vec<SynthTree>> {
    spec.validate()?;
    let mut trees = Vec::new();
    for (pi, patch) in spec.patches.iter().enumerate() {
        let area_ac = patch.rect.width() * patch.rect.height() / SQFT_PER_ACRE;
        let count = (patch.stems_per_acre * area_ac).round() as usize;
        let mut rng = ChaCha8Rng::seed_from_u64(stage_seed(spec.seed, &format!("synth.trees.{pi}")));
        let dbh_dist = Normal::new(patch.dbh_mean, patch.dbh_std)
            .map_err(|e| EfiError::Domain(format!("patch {}: {e}", patch.name)))?;
        for _ in 0..count {
            let x = rng.gen_range(patch.rect.xmin..patch.rect.xmax);
            let y = rng.gen_range(patch.rect.ymin..patch.rect.ymax);
            let dbh = dbh_dist.sample(&mut rng).max(1.0);
            let height = (patch.height_intercept + patch.height_slope * dbh).max(1.0);
            let species_code = if rng.gen::<f64>() < patch.softwood_fraction {
                SOFTWOOD_SPECIES
            } else {
                HARDWOOD_SPECIES
            };
            let status = if rng.gen::<f64>() < patch.snag_fraction { 2 } else { 1 };
            trees.push(SynthTree {
                x,
                y,
                dbh,
                height,
                species_code,
                status,
                carbon_ag: 0.025 * dbh * dbh * height,
                patch: pi,
            });
        }
    }
    Ok(trees)
}

/// Uniform-bucket spatial index over stems. Crown queries look only at
/// live trees; radius queries see every stem.
struct TreeIndex<'a> {
    trees: &'a [SynthTree],
    bucket: f64,
    ncols: usize,
    nrows: usize,
    x0: f64,
    y0: f64,
    cells: Vec<Vec<u32>>,
    max_crown_r: f64,
}

impl<'a> TreeIndex<'a> {
    fn new(trees: &'a [SynthTree], extent: &Extent) -> Self {
        let bucket = 32.0;
        let ncols = (extent.width() / bucket).ceil().max(1.0) as usize;
        let nrows = (extent.height() / bucket).ceil().max(1.0) as usize;
        let mut cells = vec![Vec::new(); ncols * nrows];
        let mut max_crown_r: f64 = 0.0;
        for (i, t) in trees.iter().enumerate() {
            let col = (((t.x - extent.xmin) / bucket) as usize).min(ncols - 1);
            let row = (((t.y - extent.ymin) / bucket) as usize).min(nrows - 1);
            cells[row * ncols + col].push(i as u32);
            if t.is_live() {
                max_crown_r = max_crown_r.max(t.crown_radius());
            }
        }
        TreeIndex { trees, bucket, ncols, nrows, x0: extent.xmin, y0: extent.ymin, cells, max_crown_r }
    }

    fn scan(&self, x: f64, y: f64, radius: f64, mut visit: impl FnMut(usize)) {
        let reach = (radius / self.bucket).ceil() as i64;
        let col = ((x - self.x0) / self.bucket) as i64;
        let row = ((y - self.y0) / self.bucket) as i64;
        for r in (row - reach).max(0)..=(row + reach).min(self.nrows as i64 - 1) {
            for c in (col - reach).max(0)..=(col + reach).min(self.ncols as i64 - 1) {
                for &ti in &self.cells[r as usize * self.ncols + c as usize] {
                    visit(ti as usize);
                }
            }
        }
    }

    /// Height of the tallest live crown surface over (x, y), 0 in the open.
    /// Crowns are paraboloids of revolution: z(d) = h − depth·(d/r)².
    fn surface(&self, x: f64, y: f64) -> f64 {
        let mut best: f64 = 0.0;
        self.scan(x, y, self.max_crown_r, |ti| {
            let t = &self.trees[ti];
            if !t.is_live() {
                return;
            }
            let r = t.crown_radius();
            let d2 = (t.x - x) * (t.x - x) + (t.y - y) * (t.y - y);
            if d2 <= r * r && r > 0.0 {
                let z = t.height - CROWN_DEPTH_PER_HEIGHT * t.height * (d2 / (r * r));
                best = best.max(z);
            }
        });
        best
    }

    fn covered(&self, x: f64, y: f64) -> bool {
        self.surface(x, y) > 0.0
    }

    fn stems_within(&self, x: f64, y: f64, radius: f64) -> Vec<usize> {
        let mut out = Vec::new();
        self.scan(x, y, radius, |ti| {
            let t = &self.trees[ti];
            let d2 = (t.x - x) * (t.x - x) + (t.y - y) * (t.y - y);
            if d2 <= radius * radius {
                out.push(ti);
            }
        });
        out.sort_unstable();
        out
    }
}

/// Fraction of grid samples over `rect` lying under a live crown, as percent.
fn sampled_cover_pct(index: &TreeIndex, rect: &Extent, step: f64) -> f64 {
    let nx = ((rect.width() / step).floor() as usize).max(1);
    let ny = ((rect.height() / step).floor() as usize).max(1);
    let hits: usize = (0..ny)
        .into_par_iter()
        .map(|j| {
            let y = rect.ymin + (j as f64 + 0.5) * step;
            (0..nx)
                .filter(|i| index.covered(rect.xmin + (*i as f64 + 0.5) * step, y))
                .count()
        })
        .sum();
    100.0 * hits as f64 / (nx * ny) as f64
}

/// Same sampling restricted to a circle, for plot-level measured cover.
fn plot_cover_pct(index: &TreeIndex, cx: f64, cy: f64, radius: f64, step: f64) -> f64 {
    let n = (2.0 * radius / step).floor() as usize;
    let mut total = 0usize;
    let mut hits = 0usize;
    for j in 0..n {
        let y = cy - radius + (j as f64 + 0.5) * step;
        for i in 0..n {
            let x = cx - radius + (i as f64 + 0.5) * step;
            if (x - cx) * (x - cx) + (y - cy) * (y - cy) <= radius * radius {
                total += 1;
                if index.covered(x, y) {
                    hits += 1;
                }
            }
        }
    }
    if total == 0 {
        0.0
    } else {
        100.0 * hits as f64 / total as f64
    }
}

/// Exact attributes per patch from the full tree list (not sampled plots),
/// through the same compiler the ground plots use. Expansion is 1/area so
/// each stem represents itself.
pub fn scene_truth_table(
    spec: &SceneSpec,
    trees: &[SynthTree],
) -> Result<Vec<(String, AttributeVector)>> {
    let index = TreeIndex::new(trees, &spec.extent);
    let mut out = Vec::with_capacity(spec.patches.len());
    for (pi, patch) in spec.patches.iter().enumerate() {
        let area_ac = patch.rect.width() * patch.rect.height() / SQFT_PER_ACRE;
        let expansion = 1.0 / area_ac;
        let records: Vec<TreeRecord> = trees
            .iter()
            .filter(|t| t.patch == pi)
            .map(|t| t.record(&patch.name, expansion))
            .collect();
        let cover = sampled_cover_pct(&index, &patch.rect, 5.0);
        let plot = PlotRecord {
            plot_id: patch.name.clone(),
            x: (patch.rect.xmin + patch.rect.xmax) / 2.0,
            y: (patch.rect.ymin + patch.rect.ymax) / 2.0,
            measured_canopy_cover: Some(cover),
        };
        out.push((patch.name.clone(), compile_plot_attributes(&plot, &records)?));
    }
    Ok(out)
}

/// Everything one scene produces, co-registered.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub cloud: PointCloud,
    pub bands: BTreeMap<String, RasterGrid>,
    pub plots: Vec<(PlotRecord, Vec<TreeRecord>)>,
    pub truth: Vec<(String, AttributeVector)>,
    pub trees: Vec<SynthTree>,
}

fn sample_pulses(spec: &SceneSpec, index: &TreeIndex) -> Result<PointCloud> {
    let spacing = 1.0 / spec.pulse_density.sqrt();
    let nx = ((spec.extent.width() / spacing).floor() as usize).max(1);
    let ny = ((spec.extent.height() / spacing).floor() as usize).max(1);
    let noise = Normal::new(0.0, spec.noise_std)
        .map_err(|e| EfiError::Domain(format!("return noise: {e}")))?;
    let rows: Vec<Vec<LidarPoint>> = (0..ny)
        .into_par_iter()
        .map(|j| {
            let mut rng =
                ChaCha8Rng::seed_from_u64(stage_seed(spec.seed, &format!("synth.pulse.{j}")));
            let mut row = Vec::with_capacity(nx + nx / 4);
            for i in 0..nx {
                let x = spec.extent.xmin + (i as f64 + rng.gen::<f64>()) * spacing;
                let y = spec.extent.ymin + (j as f64 + rng.gen::<f64>()) * spacing;
                let ground = spec.ground_z(x, y);
                let surface = index.surface(x, y);
                if surface > 0.0 {
                    row.push(LidarPoint {
                        x,
                        y,
                        z: ground + surface + noise.sample(&mut rng),
                        return_number: 1,
                        classification: 1,
                    });
                    if rng.gen::<f64>() < GROUND_PENETRATION {
                        row.push(LidarPoint {
                            x,
                            y,
                            z: ground + noise.sample(&mut rng),
                            return_number: 2,
                            classification: 2,
                        });
                    }
                } else {
                    row.push(LidarPoint {
                        x,
                        y,
                        z: ground + noise.sample(&mut rng),
                        return_number: 1,
                        classification: 2,
                    });
                }
            }
            row
        })
        .collect();
    Ok(PointCloud { points: rows.into_iter().flatten().collect() })
}

/// Reflectance rises with canopy density in NIR and falls in red, so NDVI
/// tracks cover; blue stays nearly flat.
fn sample_bands(spec: &SceneSpec, index: &TreeIndex) -> Result<BTreeMap<String, RasterGrid>> {
    let cs = spec.band_cellsize;
    let ncols = ((spec.extent.width() / cs - 1e-9).ceil() as usize).max(1);
    let nrows = ((spec.extent.height() / cs - 1e-9).ceil() as usize).max(1);
    let meta = GridMeta {
        ncols,
        nrows,
        x_origin: spec.extent.xmin,
        y_origin: spec.extent.ymin,
        cellsize: cs,
    };
    let noise = Normal::new(0.0, 0.01)
        .map_err(|e| EfiError::Domain(format!("band noise: {e}")))?;
    // per-pixel canopy density from a 3x3 subsample
    let offsets = [1.0 / 6.0, 0.5, 5.0 / 6.0];
    let rows: Vec<Vec<(f64, f64, f64)>> = (0..nrows)
        .into_par_iter()
        .map(|r| {
            let mut rng =
                ChaCha8Rng::seed_from_u64(stage_seed(spec.seed, &format!("synth.bands.{r}")));
            (0..ncols)
                .map(|c| {
                    let x0 = meta.x_origin + c as f64 * cs;
                    let y0 = meta.y_origin + r as f64 * cs;
                    let mut hits = 0;
                    for oy in offsets {
                        for ox in offsets {
                            if index.covered(x0 + ox * cs, y0 + oy * cs) {
                                hits += 1;
                            }
                        }
                    }
                    let density = hits as f64 / 9.0;
                    let nir = (0.25 + 0.50 * density + noise.sample(&mut rng)).clamp(0.001, 1.0);
                    let red = (0.45 - 0.30 * density + noise.sample(&mut rng)).clamp(0.001, 1.0);
                    let blue = (0.08 + 0.04 * density + noise.sample(&mut rng)).clamp(0.001, 1.0);
                    (nir, red, blue)
                })
                .collect()
        })
        .collect();
    let mut nir = RasterGrid::new(meta.clone(), -9999.0, 0.0);
    let mut red = RasterGrid::new(meta.clone(), -9999.0, 0.0);
    let mut blue = RasterGrid::new(meta, -9999.0, 0.0);
    for (r, row) in rows.iter().enumerate() {
        for (c, &(vn, vr, vb)) in row.iter().enumerate() {
            nir.set(r, c, vn);
            red.set(r, c, vr);
            blue.set(r, c, vb);
        }
    }
    Ok([("nir", nir), ("red", red), ("blue", blue)]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect())
}

fn sample_plots(
    spec: &SceneSpec,
    index: &TreeIndex,
    trees: &[SynthTree],
) -> Vec<(PlotRecord, Vec<TreeRecord>)> {
    let r = spec.plot_radius;
    let expansion = SQFT_PER_ACRE / (std::f64::consts::PI * r * r);
    let mut rng = ChaCha8Rng::seed_from_u64(stage_seed(spec.seed, "synth.plots"));
    let mut out = Vec::with_capacity(spec.plot_count);
    for p in 0..spec.plot_count {
        let cn = format!("P{:04}", p + 1);
        // keep the full plot circle inside the scene so expansion stays unbiased
        let x = rng.gen_range(spec.extent.xmin + r..spec.extent.xmax - r);
        let y = rng.gen_range(spec.extent.ymin + r..spec.extent.ymax - r);
        let records: Vec<TreeRecord> = index
            .stems_within(x, y, r)
            .into_iter()
            .map(|ti| trees[ti].record(&cn, expansion))
            .collect();
        let cover = plot_cover_pct(index, x, y, r, 3.0);
        out.push((
            PlotRecord { plot_id: cn, x, y, measured_canopy_cover: Some(cover) },
            records,
        ));
    }
    out
}

pub fn generate_scene(spec: &SceneSpec) -> Result<Scene> {
    spec.validate()?;
    if spec.plot_count > 0 {
        let fits = spec.extent.width() > 2.0 * spec.plot_radius
            && spec.extent.height() > 2.0 * spec.plot_radius;
        if !fits {
            return Err(EfiError::Domain(
                "scene extent too small to hold a full plot circle".into(),
            ));
        }
    }
    let trees = generate_trees(spec)?;
    let index = TreeIndex::new(&trees, &spec.extent);
    let cloud = sample_pulses(spec, &index)?;
    let bands = sample_bands(spec, &index)?;
    let plots = sample_plots(spec, &index, &trees);
    let truth = scene_truth_table(spec, &trees)?;
    Ok(Scene { cloud, bands, plots, truth, trees })
}

/// The stock three-patch scene: dense large-diameter stand, crowded
/// mid-sized stand, open sparse stand, as vertical strips.
pub fn default_scene(acres: f64, pulse_density: f64, plot_count: usize, seed: u64) -> SceneSpec {
    // width:height fixed at 9600:9075 so 2000 acres lands on round numbers
    let aspect = 9075.0 / 9600.0;
    let width = (acres * SQFT_PER_ACRE / aspect).sqrt();
    let height = width * aspect;
    let strip = width / 3.0;
    let mk = |i: usize, name: &str, stems: f64, dbh: f64, spread: f64, soft: f64, snag: f64| {
        StandPatch {
            name: name.to_string(),
            rect: Extent {
                xmin: i as f64 * strip,
                ymin: 0.0,
                xmax: (i + 1) as f64 * strip,
                ymax: height,
            },
            stems_per_acre: stems,
            dbh_mean: dbh,
            dbh_std: spread,
            height_intercept: 4.5,
            height_slope: 3.4,
            softwood_fraction: soft,
            snag_fraction: snag,
        }
    };
    SceneSpec {
        extent: Extent { xmin: 0.0, ymin: 0.0, xmax: width, ymax: height },
        patches: vec![
            mk(0, "dense_old", 60.0, 28.0, 4.0, 0.9, 0.10),
            mk(1, "mid_young", 150.0, 12.0, 3.0, 0.7, 0.05),
            // kept well clear of zero basal area so patch-relative accuracy
            // checks have a meaningful denominator
            mk(2, "open_sparse", 80.0, 9.0, 2.0, 0.5, 0.02),
        ],
        pulse_density,
        terrain: (0.02, -0.015, 1000.0),
        noise_std: 0.15,
        band_cellsize: 25.0,
        plot_count,
        plot_radius: 48.0,
        seed,
    }
}

/// Writes a scene in the exact formats the ingest path reads: FIA-style
/// plot/tree/cond CSVs, a LAS point cloud, ASCII-grid bands, and the truth
/// table CSV with patch rectangles.
pub fn write_scene(scene: &Scene, spec: &SceneSpec, dir: &Path) -> Result<()> {
    use std::io::Write;
    std::fs::create_dir_all(dir)?;
    crate::plots::write_plot_tables(
        &scene.plots,
        &dir.join("plot.csv"),
        &dir.join("tree.csv"),
        &dir.join("cond.csv"),
    )?;
    write_las(&scene.cloud, &dir.join("cloud.las"))?;
    for (name, grid) in &scene.bands {
        write_ascii_grid(grid, &dir.join(format!("{name}.asc")))?;
    }
    let mut truth = std::io::BufWriter::new(std::fs::File::create(dir.join("truth_patches.csv"))?);
    writeln!(
        truth,
        "patch,xmin,ymin,xmax,ymax,area_ac,bapa,bapa_softwood,bapa_snag,ht,dia,tpa,cagpa,cncvr_pct"
    )?;
    for (pi, (name, attrs)) in scene.truth.iter().enumerate() {
        let rect = &spec.patches[pi].rect;
        let area_ac = rect.width() * rect.height() / SQFT_PER_ACRE;
        let vals: Vec<String> = attrs.as_array().iter().map(|v| fmt_f64(*v)).collect();
        writeln!(
            truth,
            "{name},{},{},{},{},{},{}",
            fmt_f64(rect.xmin),
            fmt_f64(rect.ymin),
            fmt_f64(rect.xmax),
            fmt_f64(rect.ymax),
            fmt_f64(area_ac),
            vals.join(",")
        )?;
    }
    Ok(())
}
