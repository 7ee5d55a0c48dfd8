//! Stage orchestration. Each subcommand reads its inputs from disk and
//! persists its artifacts under the run directory, so stages are resumable
//! and testable in isolation:
//!
//!   inputs/            synthetic or real plot tables, cloud, bands
//!   dtm.asc            terrain model
//!   tessellation.txt   analysis grid
//!   regions.txt        reporting-unit partition
//!   features.csv       per-cell feature table
//!   plot_attributes.csv
//!   models/, metrics.csv
//!   predictions.csv/.geojson
//!   habitat_units.csv, acreage.csv, habitat.geojson, report.txt

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::config::RunConfig;
use crate::error::{EfiError, Result};
use crate::features::{build_dtm, compute_cell_features, normalize_heights, slope_grid};
use crate::geodata::{
    load_bands, read_point_cloud, write_ascii_grid, write_geojson, Extent, GridMeta, PointCloud,
    PolygonRecord, PropertyValue, RasterGrid,
};
use crate::habitat::{
    acreage_report, classify_units, compute_dia_threshold, write_acreage_csv, write_habitat_csv,
    HabitatThresholds,
};
use crate::inference::{
    aggregate_to_reporting, clamp_attributes, predict_cells, read_unit_csv, write_unit_csv,
};
use crate::learn::{
    apply_normalizer, cv_grid_search, fit_normalizer, read_model, select_features, write_model,
    DesignMatrix, PersistedModel,
};
use crate::plots::{
    compile_plot_attributes, load_plot_tables, AttributeVector, ATTRIBUTE_NAMES,
};
use crate::segmentation::{grow_reporting_units, tessellate, Region, Tessellation};
use crate::synth::{default_scene, generate_scene, write_scene};
use crate::util::{fmt_f64, mean, stage_seed};

pub fn dtm_path(cfg: &RunConfig) -> PathBuf {
    cfg.out.join("dtm.asc")
}
pub fn tessellation_path(cfg: &RunConfig) -> PathBuf {
    cfg.out.join("tessellation.txt")
}
pub fn regions_path(cfg: &RunConfig) -> PathBuf {
    cfg.out.join("regions.txt")
}
pub fn features_path(cfg: &RunConfig) -> PathBuf {
    cfg.out.join("features.csv")
}
pub fn plot_attributes_path(cfg: &RunConfig) -> PathBuf {
    cfg.out.join("plot_attributes.csv")
}
pub fn model_path(cfg: &RunConfig, attr: &str) -> PathBuf {
    cfg.out.join("models").join(format!("pred_{attr}.model"))
}
pub fn metrics_path(cfg: &RunConfig) -> PathBuf {
    cfg.out.join("metrics.csv")
}
pub fn predictions_csv_path(cfg: &RunConfig) -> PathBuf {
    cfg.out.join("predictions.csv")
}
pub fn predictions_geojson_path(cfg: &RunConfig) -> PathBuf {
    cfg.out.join("predictions.geojson")
}
pub fn habitat_csv_path(cfg: &RunConfig) -> PathBuf {
    cfg.out.join("habitat_units.csv")
}
pub fn acreage_path(cfg: &RunConfig) -> PathBuf {
    cfg.out.join("acreage.csv")
}
pub fn habitat_geojson_path(cfg: &RunConfig) -> PathBuf {
    cfg.out.join("habitat.geojson")
}
pub fn report_path(cfg: &RunConfig) -> PathBuf {
    cfg.out.join("report.txt")
}

fn require(path: &Path, stage: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(EfiError::Dependency(format!(
            "{} is missing; run the {stage} stage first",
            path.display()
        )))
    }
}

fn grid_over(extent: &Extent, cellsize: f64) -> GridMeta {
    GridMeta {
        ncols: ((extent.width() / cellsize - 1e-9).ceil().max(1.0)) as usize,
        nrows: ((extent.height() / cellsize - 1e-9).ceil().max(1.0)) as usize,
        x_origin: extent.xmin,
        y_origin: extent.ymin,
        cellsize,
    }
}

/// Reads the cloud and the three bands; the band grid defines the scene
/// extent, and the cloud must fall inside it.
fn load_scene_inputs(cfg: &RunConfig) -> Result<(PointCloud, BTreeMap<String, RasterGrid>, Extent)> {
    let cloud = read_point_cloud(&cfg.cloud_path())?;
    let bands = load_bands(&cfg.band_paths())?;
    let extent = bands["nir"].meta().extent();
    let Some(bounds) = cloud.bounds() else {
        return Err(EfiError::Data("point cloud is empty".into()));
    };
    let tol = 1e-6;
    if bounds.xmin < extent.xmin - tol
        || bounds.ymin < extent.ymin - tol
        || bounds.xmax > extent.xmax + tol
        || bounds.ymax > extent.ymax + tol
    {
        return Err(EfiError::Consistency(format!(
            "point cloud bounds ({}, {})..({}, {}) extend beyond the band extent ({}, {})..({}, {})",
            bounds.xmin, bounds.ymin, bounds.xmax, bounds.ymax,
            extent.xmin, extent.ymin, extent.xmax, extent.ymax
        )));
    }
    Ok((cloud, bands, extent))
}

/// The shared front half of segment and features: terrain, normalized
/// heights, tessellation, per-cell feature table.
fn cell_feature_table(
    cfg: &RunConfig,
) -> Result<(Tessellation, Vec<String>, Vec<Vec<f64>>, RasterGrid)> {
    let (cloud, bands, extent) = load_scene_inputs(cfg)?;
    let dtm_meta = grid_over(&extent, cfg.dtm_cellsize);
    let dtm = build_dtm(&cloud, cfg.dtm_cellsize, &dtm_meta)?;
    let slope = slope_grid(&dtm)?;
    let normalized = normalize_heights(&cloud, &dtm)?;
    let tess = tessellate(&extent, cfg.analysis_unit_area)?;
    let (names, rows) =
        compute_cell_features(&tess.meta, &normalized, &dtm, &slope, &bands, &cfg.feature_config()?)?;
    Ok((tess, names, rows, dtm))
}

fn column(names: &[String], rows: &[Vec<f64>], want: &str) -> Result<Vec<f64>> {
    let j = names
        .iter()
        .position(|n| n == want)
        .ok_or_else(|| EfiError::Schema(format!("feature table has no {want} column")))?;
    Ok(rows.iter().map(|r| r[j]).collect())
}

const TESSELLATION_MAGIC: &str = "efi-tessellation/1";
const REGIONS_MAGIC: &str = "efi-regions/1";

pub fn write_tessellation(tess: &Tessellation, path: &Path) -> Result<()> {
    let m = &tess.meta;
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "{TESSELLATION_MAGIC}")?;
    writeln!(out, "ncols {}", m.ncols)?;
    writeln!(out, "nrows {}", m.nrows)?;
    writeln!(out, "x_origin {}", fmt_f64(m.x_origin))?;
    writeln!(out, "y_origin {}", fmt_f64(m.y_origin))?;
    writeln!(out, "cellsize {}", fmt_f64(m.cellsize))?;
    Ok(())
}

pub fn read_tessellation(path: &Path) -> Result<Tessellation> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    if lines.next() != Some(TESSELLATION_MAGIC) {
        return Err(EfiError::Format(format!(
            "{}: not a tessellation document",
            path.display()
        )));
    }
    let mut field = |key: &str| -> Result<String> {
        lines
            .next()
            .and_then(|l| l.strip_prefix(key))
            .and_then(|rest| rest.strip_prefix(' '))
            .map(str::to_string)
            .ok_or_else(|| EfiError::Format(format!("{}: missing {key}", path.display())))
    };
    let parse_usize = |s: String| -> Result<usize> {
        s.parse().map_err(|e| EfiError::Format(format!("{}: {e}", path.display())))
    };
    let parse_f64 = |s: String| -> Result<f64> {
        s.parse().map_err(|e| EfiError::Format(format!("{}: {e}", path.display())))
    };
    let ncols = parse_usize(field("ncols")?)?;
    let nrows = parse_usize(field("nrows")?)?;
    let x_origin = parse_f64(field("x_origin")?)?;
    let y_origin = parse_f64(field("y_origin")?)?;
    let cellsize = parse_f64(field("cellsize")?)?;
    Ok(Tessellation { meta: GridMeta { ncols, nrows, x_origin, y_origin, cellsize } })
}

pub fn write_regions(regions: &[Region], meta: &GridMeta, path: &Path) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "{REGIONS_MAGIC}")?;
    writeln!(out, "count {}", regions.len())?;
    for r in regions {
        write!(
            out,
            "{} {} {} {} {}",
            r.id,
            fmt_f64(r.area),
            fmt_f64(r.centroid_features.0),
            fmt_f64(r.centroid_features.1),
            r.members.len()
        )?;
        for m in &r.members {
            write!(out, " {}", meta.linear(*m))?;
        }
        writeln!(out)?;
    }
    Ok(())
}

pub fn read_regions(meta: &GridMeta, path: &Path) -> Result<Vec<Region>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    if lines.next() != Some(REGIONS_MAGIC) {
        return Err(EfiError::Format(format!("{}: not a regions document", path.display())));
    }
    let count: usize = lines
        .next()
        .and_then(|l| l.strip_prefix("count "))
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| EfiError::Format(format!("{}: missing count line", path.display())))?;
    let mut regions = Vec::with_capacity(count);
    for _ in 0..count {
        let line = lines
            .next()
            .ok_or_else(|| EfiError::Format(format!("{}: truncated region list", path.display())))?;
        let mut parts = line.split(' ');
        let mut next = |what: &str| -> Result<&str> {
            parts
                .next()
                .ok_or_else(|| EfiError::Format(format!("{}: missing {what}", path.display())))
        };
        let id: usize = next("id")?
            .parse()
            .map_err(|e| EfiError::Format(format!("{}: {e}", path.display())))?;
        let area: f64 = next("area")?
            .parse()
            .map_err(|e| EfiError::Format(format!("{}: {e}", path.display())))?;
        let c1: f64 = next("centroid")?
            .parse()
            .map_err(|e| EfiError::Format(format!("{}: {e}", path.display())))?;
        let c2: f64 = next("centroid")?
            .parse()
            .map_err(|e| EfiError::Format(format!("{}: {e}", path.display())))?;
        let k: usize = next("member count")?
            .parse()
            .map_err(|e| EfiError::Format(format!("{}: {e}", path.display())))?;
        let mut members = Vec::with_capacity(k);
        for _ in 0..k {
            let idx: usize = next("member")?
                .parse()
                .map_err(|e| EfiError::Format(format!("{}: {e}", path.display())))?;
            if idx >= meta.ncells() {
                return Err(EfiError::Consistency(format!(
                    "{}: member cell {idx} outside the {}-cell tessellation",
                    path.display(),
                    meta.ncells()
                )));
            }
            members.push(meta.from_linear(idx));
        }
        regions.push(Region { id, members, centroid_features: (c1, c2), area });
    }
    Ok(regions)
}

pub fn write_feature_table(names: &[String], rows: &[Vec<f64>], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["cell".to_string()];
    header.extend_from_slice(names);
    w.write_record(&header)?;
    for (i, row) in rows.iter().enumerate() {
        let mut rec = vec![i.to_string()];
        rec.extend(row.iter().map(|v| fmt_f64(*v)));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_feature_table(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut r = csv::Reader::from_path(path)
        .map_err(|e| EfiError::Format(format!("{}: {e}", path.display())))?;
    let headers = r.headers()?.clone();
    let mut names: Vec<String> = headers.iter().map(str::to_string).collect();
    if names.first().map(String::as_str) != Some("cell") {
        return Err(EfiError::Schema(format!(
            "{}: first column must be cell, got {:?}",
            path.display(),
            names.first()
        )));
    }
    names.remove(0);
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let idx: usize = rec[0]
            .parse()
            .map_err(|e| EfiError::Format(format!("{} row {}: {e}", path.display(), i + 2)))?;
        if idx != i {
            return Err(EfiError::Consistency(format!(
                "{}: cell rows out of order at {idx} (expected {i})",
                path.display()
            )));
        }
        let mut row = Vec::with_capacity(names.len());
        for v in rec.iter().skip(1) {
            row.push(v.parse::<f64>().map_err(|e| {
                EfiError::Format(format!("{} row {}: {e} in {v:?}", path.display(), i + 2))
            })?);
        }
        if row.len() != names.len() {
            return Err(EfiError::Dimension(format!(
                "{} row {}: {} values for {} features",
                path.display(),
                i + 2,
                row.len(),
                names.len()
            )));
        }
        rows.push(row);
    }
    Ok((names, rows))
}

pub fn write_plot_attribute_table(
    rows: &[(String, f64, f64, AttributeVector)],
    path: &Path,
) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["plot_cn".to_string(), "x".to_string(), "y".to_string()];
    header.extend(ATTRIBUTE_NAMES.iter().map(|s| s.to_string()));
    w.write_record(&header)?;
    for (cn, x, y, attrs) in rows {
        let mut rec = vec![cn.clone(), fmt_f64(*x), fmt_f64(*y)];
        rec.extend(attrs.as_array().iter().map(|v| fmt_f64(*v)));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_plot_attribute_table(path: &Path) -> Result<Vec<(String, f64, f64, AttributeVector)>> {
    let mut r = csv::Reader::from_path(path)
        .map_err(|e| EfiError::Format(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        if rec.len() != 11 {
            return Err(EfiError::Schema(format!(
                "{} row {}: expected 11 columns, got {}",
                path.display(),
                i + 2,
                rec.len()
            )));
        }
        let num = |k: usize| -> Result<f64> {
            rec[k].parse().map_err(|e| {
                EfiError::Format(format!("{} row {}: {e} in {:?}", path.display(), i + 2, &rec[k]))
            })
        };
        let mut vals = [0.0; 8];
        for (k, v) in vals.iter_mut().enumerate() {
            *v = num(k + 3)?;
        }
        out.push((rec[0].to_string(), num(1)?, num(2)?, AttributeVector::from_array(vals)));
    }
    Ok(out)
}

pub fn cmd_simulate(cfg: &RunConfig) -> Result<()> {
    let spec = default_scene(cfg.scene_acres, cfg.pulse_density, cfg.plot_count, cfg.seed);
    let scene = generate_scene(&spec)?;
    write_scene(&scene, &spec, &cfg.inputs_dir())?;
    eprintln!(
        "simulate: {} stems, {} returns, {} plots, {} patches -> {}",
        scene.trees.len(),
        scene.cloud.len(),
        scene.plots.len(),
        spec.patches.len(),
        cfg.inputs_dir().display()
    );
    Ok(())
}

pub fn cmd_segment(cfg: &RunConfig) -> Result<()> {
    std::fs::create_dir_all(&cfg.out)?;
    let (tess, names, rows, dtm) = cell_feature_table(cfg)?;
    let chm_means = column(&names, &rows, "h_mean")?;
    let ndvi_means = column(&names, &rows, "ndvi_mean")?;
    let regions = grow_reporting_units(&tess, &chm_means, &ndvi_means, cfg.reporting_target_area)?;
    write_ascii_grid(&dtm, &dtm_path(cfg))?;
    write_tessellation(&tess, &tessellation_path(cfg))?;
    write_regions(&regions, &tess.meta, &regions_path(cfg))?;
    let mean_area = tess.ncells() as f64 * tess.cell_area_acres() / regions.len() as f64;
    eprintln!(
        "segment: {} cells -> {} reporting units, mean area {mean_area:.4} ac",
        tess.ncells(),
        regions.len()
    );
    Ok(())
}

pub fn cmd_features(cfg: &RunConfig) -> Result<()> {
    std::fs::create_dir_all(&cfg.out)?;
    let (tess, names, rows, _) = cell_feature_table(cfg)?;
    write_feature_table(&names, &rows, &features_path(cfg))?;
    eprintln!(
        "features: {} cells x {} features -> {}",
        tess.ncells(),
        names.len(),
        features_path(cfg).display()
    );
    Ok(())
}

pub fn cmd_compile_plots(cfg: &RunConfig) -> Result<()> {
    std::fs::create_dir_all(&cfg.out)?;
    let pairs = load_plot_tables(&cfg.plot_csv_path(), &cfg.tree_csv_path(), &cfg.cond_csv_path())?;
    let mut rows = Vec::with_capacity(pairs.len());
    for (plot, trees) in &pairs {
        rows.push((plot.plot_id.clone(), plot.x, plot.y, compile_plot_attributes(plot, trees)?));
    }
    write_plot_attribute_table(&rows, &plot_attributes_path(cfg))?;
    eprintln!("compile-plots: {} plots -> {}", rows.len(), plot_attributes_path(cfg).display());
    Ok(())
}

pub fn cmd_train(cfg: &RunConfig) -> Result<()> {
    require(&features_path(cfg), "features")?;
    require(&tessellation_path(cfg), "segment")?;
    require(&plot_attributes_path(cfg), "compile-plots")?;
    let (names, cell_rows) = read_feature_table(&features_path(cfg))?;
    let tess = read_tessellation(&tessellation_path(cfg))?;
    if cell_rows.len() != tess.ncells() {
        return Err(EfiError::Consistency(format!(
            "feature table has {} rows for a {}-cell tessellation",
            cell_rows.len(),
            tess.ncells()
        )));
    }
    let plot_rows = read_plot_attribute_table(&plot_attributes_path(cfg))?;

    let mut design_rows: Vec<Vec<f64>> = Vec::new();
    let mut targets: Vec<AttributeVector> = Vec::new();
    let mut excluded = 0usize;
    for (_, x, y, attrs) in &plot_rows {
        match tess.meta.cell_of(*x, *y) {
            Some(cell) => {
                design_rows.push(cell_rows[tess.meta.linear(cell)].clone());
                targets.push(*attrs);
            }
            None => excluded += 1,
        }
    }
    if excluded > 0 {
        eprintln!("train: warning: {excluded} plots outside the scene extent were excluded");
    }

    let norm = fit_normalizer(&design_rows, &names)?;
    let normalized = apply_normalizer(&norm, &design_rows)?;
    if !norm.dropped.is_empty() {
        eprintln!("train: dropped {} zero-variance features", norm.dropped.len());
    }

    std::fs::create_dir_all(cfg.out.join("models"))?;
    let mut metrics = csv::Writer::from_path(metrics_path(cfg))?;
    metrics.write_record(["attribute", "best_lambda", "best_alpha", "cv_rmse", "cv_r2"])?;
    for (slot, attr) in ATTRIBUTE_NAMES.iter().enumerate() {
        let x = DesignMatrix::new(
            normalized.clone(),
            norm.kept_names.clone(),
            targets.iter().map(|t| t.as_array()[slot]).collect(),
        )?;
        let selected = select_features(&x, cfg.keep_fraction)?;
        let (model, report) = cv_grid_search(
            &selected,
            &cfg.alphas,
            cfg.lambda_count,
            cfg.cv_folds,
            stage_seed(cfg.seed, &format!("train.{attr}")),
        )?;
        let best = report
            .grid
            .iter()
            .find(|g| (g.0, g.1) == report.best)
            .copied()
            .ok_or_else(|| EfiError::Consistency("best grid point missing from report".into()))?;
        let features = model
            .selected_features
            .iter()
            .zip(&model.coefficients)
            .map(|(name, coef)| {
                let k = norm
                    .kept_names
                    .iter()
                    .position(|n| n == name)
                    .ok_or_else(|| EfiError::Consistency(format!("{name} missing from normalizer")))?;
                Ok((name.clone(), norm.means[k], norm.stds[k], *coef))
            })
            .collect::<Result<Vec<_>>>()?;
        let persisted = PersistedModel {
            attribute: attr.to_string(),
            lambda: model.lambda,
            alpha: model.alpha,
            intercept: model.intercept,
            converged: model.converged,
            features,
        };
        write_model(&persisted, &model_path(cfg, attr))?;
        metrics.write_record([
            attr.to_string(),
            fmt_f64(best.0),
            fmt_f64(best.1),
            fmt_f64(best.2),
            fmt_f64(best.3),
        ])?;
        eprintln!(
            "train: {attr}: lambda {:.6} alpha {:.1} cv_rmse {:.4} cv_r2 {:.4}{}",
            best.0,
            best.1,
            best.2,
            best.3,
            if model.converged { "" } else { " (not converged)" }
        );
    }
    metrics.flush()?;
    Ok(())
}

fn load_models(cfg: &RunConfig) -> Result<BTreeMap<String, PersistedModel>> {
    let mut models = BTreeMap::new();
    for attr in ATTRIBUTE_NAMES {
        let path = model_path(cfg, attr);
        require(&path, "train")?;
        models.insert(attr.to_string(), read_model(&path)?);
    }
    Ok(models)
}

fn load_partition(cfg: &RunConfig) -> Result<(Tessellation, Vec<Region>)> {
    require(&tessellation_path(cfg), "segment")?;
    require(&regions_path(cfg), "segment")?;
    let tess = read_tessellation(&tessellation_path(cfg))?;
    let regions = read_regions(&tess.meta, &regions_path(cfg))?;
    Ok((tess, regions))
}

pub fn cmd_predict(cfg: &RunConfig) -> Result<()> {
    require(&features_path(cfg), "features")?;
    let models = load_models(cfg)?;
    let (tess, regions) = load_partition(cfg)?;
    let (names, cell_rows) = read_feature_table(&features_path(cfg))?;
    if cell_rows.len() != tess.ncells() {
        return Err(EfiError::Consistency(format!(
            "feature table has {} rows for a {}-cell tessellation",
            cell_rows.len(),
            tess.ncells()
        )));
    }
    let raw = predict_cells(&models, &names, &cell_rows)?;
    let clamped: Vec<AttributeVector> = raw.iter().map(clamp_attributes).collect();
    let areas = vec![tess.cell_area_acres(); clamped.len()];
    let units = aggregate_to_reporting(&clamped, &areas, &regions, &tess.meta)?;
    write_unit_csv(&units, &predictions_csv_path(cfg))?;

    let records = regions
        .iter()
        .zip(&units)
        .map(|(region, unit)| {
            let mut props: BTreeMap<String, PropertyValue> = BTreeMap::new();
            for (name, v) in ATTRIBUTE_NAMES.iter().zip(unit.attributes.as_array()) {
                props.insert(format!("pred_{name}"), PropertyValue::Number(v));
            }
            PolygonRecord::new(unit.unit_id.clone(), region.members.clone(), unit.area, props)
        })
        .collect::<Result<Vec<_>>>()?;
    write_geojson(&records, &tess.meta, &predictions_geojson_path(cfg))?;
    eprintln!(
        "predict: {} units -> {} and {}",
        units.len(),
        predictions_csv_path(cfg).display(),
        predictions_geojson_path(cfg).display()
    );
    Ok(())
}

pub fn cmd_habitat(cfg: &RunConfig) -> Result<()> {
    require(&predictions_csv_path(cfg), "predict")?;
    let (tess, regions) = load_partition(cfg)?;
    let units = read_unit_csv(&predictions_csv_path(cfg))?;
    let (dia_min, dia_source) = match cfg.dia_min {
        Some(v) => (v, "config override"),
        None => (compute_dia_threshold(&units)?, "computed Q3"),
    };
    eprintln!("habitat: dia_min={} ({dia_source})", fmt_f64(dia_min));
    let th = HabitatThresholds {
        cncvr_nesting: cfg.cncvr_nesting,
        cncvr_foraging: cfg.cncvr_foraging,
        tpa_min: cfg.tpa_min,
        dia_min,
        softwood_fraction_min: cfg.softwood_fraction_min,
    };
    th.validate()?;
    let results = classify_units(&units, &th);
    write_habitat_csv(&results, &habitat_csv_path(cfg))?;
    let rows = acreage_report(&results, &units)?;
    write_acreage_csv(&rows, &acreage_path(cfg))?;
    for r in &rows {
        eprintln!("habitat: {} {}: {:.2} ac over {} units", r.species, r.class, r.acres, r.unit_count);
    }

    let by_id: BTreeMap<&str, &crate::habitat::HabitatResult> =
        results.iter().map(|r| (r.unit_id.as_str(), r)).collect();
    let records = regions
        .iter()
        .zip(&units)
        .map(|(region, unit)| {
            let result = by_id.get(unit.unit_id.as_str()).ok_or_else(|| {
                EfiError::Consistency(format!("no habitat result for unit {}", unit.unit_id))
            })?;
            let mut props: BTreeMap<String, PropertyValue> = BTreeMap::new();
            props.insert("cso_class".into(), PropertyValue::Text(result.cso_class.to_string()));
            props
                .insert("fisher_class".into(), PropertyValue::Text(result.fisher_class.to_string()));
            PolygonRecord::new(unit.unit_id.clone(), region.members.clone(), unit.area, props)
        })
        .collect::<Result<Vec<_>>>()?;
    write_geojson(&records, &tess.meta, &habitat_geojson_path(cfg))?;
    Ok(())
}

pub fn cmd_report(cfg: &RunConfig) -> Result<()> {
    require(&tessellation_path(cfg), "segment")?;
    require(&regions_path(cfg), "segment")?;
    require(&metrics_path(cfg), "train")?;
    require(&predictions_csv_path(cfg), "predict")?;
    require(&acreage_path(cfg), "habitat")?;
    let tess = read_tessellation(&tessellation_path(cfg))?;
    let regions = read_regions(&tess.meta, &regions_path(cfg))?;
    let units = read_unit_csv(&predictions_csv_path(cfg))?;
    let metrics = std::fs::read_to_string(metrics_path(cfg))?;
    let acreage = std::fs::read_to_string(acreage_path(cfg))?;

    let total_area: f64 = units.iter().map(|u| u.area).sum();
    let mut out = std::io::BufWriter::new(std::fs::File::create(report_path(cfg))?);
    writeln!(out, "enhanced forest inventory run report")?;
    writeln!(out, "====================================")?;
    writeln!(out)?;
    writeln!(
        out,
        "analysis grid: {} x {} cells of {:.2} ft ({:.4} ac each)",
        tess.meta.ncols,
        tess.meta.nrows,
        tess.meta.cellsize,
        tess.cell_area_acres()
    )?;
    writeln!(
        out,
        "reporting units: {} covering {:.2} ac (mean {:.4} ac)",
        regions.len(),
        total_area,
        total_area / regions.len() as f64
    )?;
    writeln!(out)?;
    writeln!(out, "cross-validated model metrics")?;
    writeln!(out, "-----------------------------")?;
    out.write_all(metrics.as_bytes())?;
    writeln!(out)?;
    writeln!(out, "habitat acreage")?;
    writeln!(out, "---------------")?;
    out.write_all(acreage.as_bytes())?;
    let mean_bapa = if units.is_empty() {
        0.0
    } else {
        mean(&units.iter().map(|u| u.attributes.bapa).collect::<Vec<_>>())
    };
    writeln!(out)?;
    writeln!(out, "mean predicted live basal area: {mean_bapa:.2} ft^2/ac")?;
    eprintln!("report: {}", report_path(cfg).display());
    Ok(())
}

pub fn cmd_run(cfg: &RunConfig) -> Result<()> {
    cmd_simulate(cfg)?;
    cmd_segment(cfg)?;
    cmd_features(cfg)?;
    cmd_compile_plots(cfg)?;
    cmd_train(cfg)?;
    cmd_predict(cfg)?;
    cmd_habitat(cfg)?;
    cmd_report(cfg)
}
