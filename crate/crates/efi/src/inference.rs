//! Wall-to-wall prediction: apply the trained attribute models to every
//! analysis cell, clamp to physical ranges, and aggregate to reporting
//! units by area-weighted averaging.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{EfiError, Result};
use crate::geodata::GridMeta;
use crate::learn::PersistedModel;
use crate::plots::{AttributeVector, ATTRIBUTE_NAMES};
use crate::segmentation::Region;
use crate::util::fmt_f64;

/// Attribute predictions summarized over one reporting unit.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictedUnit {
    pub unit_id: String,
    pub attributes: AttributeVector,
    pub area: f64,
}

/// Raw per-cell predictions for all eight attributes: ŷ = β₀ + xᵀβ with each
/// model's own normalizer and feature subset. Values are not yet clamped.
pub fn predict_cells(
    models: &BTreeMap<String, PersistedModel>,
    feature_names: &[String],
    cell_features: &[Vec<f64>],
) -> Result<Vec<AttributeVector>> {
    // resolve each model's feature subset to cell-vector columns once
    let mut plans: Vec<(usize, &PersistedModel, Vec<usize>)> = Vec::with_capacity(8);
    for (slot, attr) in ATTRIBUTE_NAMES.iter().enumerate() {
        let model = models
            .get(*attr)
            .ok_or_else(|| EfiError::Schema(format!("no model supplied for attribute {attr}")))?;
        let mut cols = Vec::with_capacity(model.features.len());
        for (name, ..) in &model.features {
            let j = feature_names.iter().position(|f| f == name).ok_or_else(|| {
                EfiError::Schema(format!(
                    "model {attr} needs feature {name} but cell vectors do not carry it"
                ))
            })?;
            cols.push(j);
        }
        plans.push((slot, model, cols));
    }

    cell_features
        .par_iter()
        .map(|cell| {
            let mut out = [0.0; 8];
            for (slot, model, cols) in &plans {
                let raw: Vec<f64> = cols.iter().map(|&j| cell[j]).collect();
                out[*slot] = model.predict_raw(&raw)?;
            }
            Ok(AttributeVector::from_array(out))
        })
        .collect()
}

/// Floors every attribute at 0, caps cncvr_pct at 100, and caps
/// bapa_softwood at bapa. Idempotent.
pub fn clamp_attributes(raw: &AttributeVector) -> AttributeVector {
    let mut v = raw.as_array().map(|x| x.max(0.0));
    v[7] = v[7].min(100.0); // cncvr_pct
    v[1] = v[1].min(v[0]); // bapa_softwood within bapa
    AttributeVector::from_array(v)
}

/// Area-weighted aggregation of per-cell attributes over reporting units.
/// The regions must partition the cells exactly.
pub fn aggregate_to_reporting(
    cell_attrs: &[AttributeVector],
    cell_areas: &[f64],
    regions: &[Region],
    meta: &GridMeta,
) -> Result<Vec<PredictedUnit>> {
    let n = cell_attrs.len();
    if cell_areas.len() != n {
        return Err(EfiError::Dimension(format!(
            "{n} cell attribute vectors but {} areas",
            cell_areas.len()
        )));
    }
    let mut claims = vec![0u32; n];
    for region in regions {
        for cell in &region.members {
            let i = meta.linear(*cell);
            if i >= n {
                return Err(EfiError::Partition(format!(
                    "region {} claims cell {:?} outside the {} analysis cells",
                    region.id, cell, n
                )));
            }
            claims[i] += 1;
        }
    }
    if let Some(i) = claims.iter().position(|&c| c != 1) {
        return Err(EfiError::Partition(format!(
            "cell {:?} claimed by {} regions",
            meta.from_linear(i),
            claims[i]
        )));
    }

    regions
        .par_iter()
        .map(|region| {
            let mut sums = [0.0; 8];
            let mut area = 0.0;
            for cell in &region.members {
                let i = meta.linear(*cell);
                let a = cell_areas[i];
                area += a;
                for (s, v) in sums.iter_mut().zip(cell_attrs[i].as_array()) {
                    *s += a * v;
                }
            }
            if !(area > 0.0) {
                return Err(EfiError::Partition(format!(
                    "reporting unit {} has nonpositive area {area}",
                    region.id
                )));
            }
            Ok(PredictedUnit {
                unit_id: format!("u{}", region.id),
                attributes: AttributeVector::from_array(sums.map(|s| s / area)),
                area,
            })
        })
        .collect()
}

/// Per-unit prediction table: unit_id, area_ac, then pred_<attribute> in
/// canonical order.
pub fn write_unit_csv(units: &[PredictedUnit], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["unit_id".to_string(), "area_ac".to_string()];
    header.extend(ATTRIBUTE_NAMES.iter().map(|a| format!("pred_{a}")));
    w.write_record(&header)?;
    for u in units {
        let mut rec = vec![u.unit_id.clone(), fmt_f64(u.area)];
        rec.extend(u.attributes.as_array().iter().map(|v| fmt_f64(*v)));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_unit_csv(path: &Path) -> Result<Vec<PredictedUnit>> {
    let mut r = csv::Reader::from_path(path)
        .map_err(|e| EfiError::Format(format!("{}: {e}", path.display())))?;
    let headers = r.headers()?.clone();
    let mut expected = vec!["unit_id".to_string(), "area_ac".to_string()];
    expected.extend(ATTRIBUTE_NAMES.iter().map(|a| format!("pred_{a}")));
    let got: Vec<&str> = headers.iter().collect();
    if got != expected.iter().map(String::as_str).collect::<Vec<_>>() {
        return Err(EfiError::Schema(format!(
            "{}: header {:?} does not match the prediction table layout",
            path.display(),
            got
        )));
    }
    let mut units = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let num = |i: usize| -> Result<f64> {
            rec[i].parse().map_err(|e| {
                EfiError::Format(format!("{} row {}: {e} in {:?}", path.display(), line + 2, &rec[i]))
            })
        };
        let mut vals = [0.0; 8];
        for (k, v) in vals.iter_mut().enumerate() {
            *v = num(k + 2)?;
        }
        units.push(PredictedUnit {
            unit_id: rec[0].to_string(),
            area: num(1)?,
            attributes: AttributeVector::from_array(vals),
        });
    }
    Ok(units)
}
