//! Habitat suitability rules for the California spotted owl and Pacific
//! fisher: threshold tests on the predicted stand attributes, plus the
//! per-class acreage rollup.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use crate::error::{EfiError, Result};
use crate::inference::PredictedUnit;
use crate::plots::AttributeVector;
use crate::util::{fmt_f64, quantile_linear};

/// Rule constants. All comparisons are strictly greater-than.
#[derive(Debug, Clone, PartialEq)]
pub struct HabitatThresholds {
    /// Canopy cover floor for owl nesting and for fisher, percent.
    pub cncvr_nesting: f64,
    /// Relaxed cover floor for owl foraging, percent.
    pub cncvr_foraging: f64,
    /// Stem density floor for owl habitat, stems/ac.
    pub tpa_min: f64,
    /// Mean-DBH floor, inches. Defaults to the project-area Q3; 25 in is
    /// the usual override for comparable reporting.
    pub dia_min: f64,
    /// Softwood share of basal area that must be exceeded.
    pub softwood_fraction_min: f64,
}

impl HabitatThresholds {
    pub fn with_dia(dia_min: f64) -> Result<Self> {
        let th = HabitatThresholds {
            cncvr_nesting: 60.0,
            cncvr_foraging: 40.0,
            tpa_min: 9.0,
            dia_min,
            softwood_fraction_min: 0.5,
        };
        th.validate()?;
        Ok(th)
    }

    pub fn validate(&self) -> Result<()> {
        if self.cncvr_foraging > self.cncvr_nesting {
            return Err(EfiError::Config(format!(
                "foraging cover threshold {} exceeds nesting threshold {}",
                self.cncvr_foraging, self.cncvr_nesting
            )));
        }
        let all = [
            self.cncvr_nesting,
            self.cncvr_foraging,
            self.tpa_min,
            self.dia_min,
            self.softwood_fraction_min,
        ];
        if all.iter().any(|v| !(*v >= 0.0)) {
            return Err(EfiError::Config("habitat thresholds must be nonnegative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum CsoClass {
    Unlikely,
    Foraging,
    Nesting,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum FisherClass {
    Unlikely,
    Likely,
}

impl fmt::Display for CsoClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CsoClass::Nesting => "Nesting",
            CsoClass::Foraging => "Foraging",
            CsoClass::Unlikely => "Unlikely",
        })
    }
}

impl fmt::Display for FisherClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FisherClass::Likely => "Likely",
            FisherClass::Unlikely => "Unlikely",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HabitatResult {
    pub unit_id: String,
    pub cso_class: CsoClass,
    pub fisher_class: FisherClass,
}

/// Third quartile of predicted mean DBH across units, unweighted by area,
/// with the same linear-interpolation quantile used for height percentiles.
pub fn compute_dia_threshold(units: &[PredictedUnit]) -> Result<f64> {
    if units.is_empty() {
        return Err(EfiError::Domain("diameter quartile of zero units".into()));
    }
    let dias: Vec<f64> = units.iter().map(|u| u.attributes.dia).collect();
    Ok(quantile_linear(&dias, 75.0))
}

fn softwood_dominant(attrs: &AttributeVector, th: &HabitatThresholds) -> bool {
    // bapa = 0 fails: 0 > 0 is false
    attrs.bapa_softwood > th.softwood_fraction_min * attrs.bapa
}

pub fn classify_cso(attrs: &AttributeVector, th: &HabitatThresholds) -> CsoClass {
    let structure = attrs.tpa > th.tpa_min
        && attrs.dia > th.dia_min
        && softwood_dominant(attrs, th);
    if structure && attrs.cncvr_pct > th.cncvr_nesting {
        CsoClass::Nesting
    } else if structure && attrs.cncvr_pct > th.cncvr_foraging {
        CsoClass::Foraging
    } else {
        CsoClass::Unlikely
    }
}

pub fn classify_fisher(attrs: &AttributeVector, th: &HabitatThresholds) -> FisherClass {
    if attrs.cncvr_pct > th.cncvr_nesting
        && attrs.dia > th.dia_min
        && softwood_dominant(attrs, th)
    {
        FisherClass::Likely
    } else {
        FisherClass::Unlikely
    }
}

pub fn classify_units(units: &[PredictedUnit], th: &HabitatThresholds) -> Vec<HabitatResult> {
    units
        .iter()
        .map(|u| HabitatResult {
            unit_id: u.unit_id.clone(),
            cso_class: classify_cso(&u.attributes, th),
            fisher_class: classify_fisher(&u.attributes, th),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct AcreageRow {
    pub species: String,
    pub class: String,
    pub acres: f64,
    pub unit_count: usize,
}

/// Acres and unit counts per species per class. Within each species the
/// class totals sum to the full scene acreage because every unit gets
/// exactly one class.
pub fn acreage_report(
    results: &[HabitatResult],
    units: &[PredictedUnit],
) -> Result<Vec<AcreageRow>> {
    let area_by_id: BTreeMap<&str, f64> =
        units.iter().map(|u| (u.unit_id.as_str(), u.area)).collect();
    let mut cso: BTreeMap<CsoClass, (f64, usize)> = BTreeMap::new();
    let mut fisher: BTreeMap<FisherClass, (f64, usize)> = BTreeMap::new();
    for r in results {
        let area = *area_by_id.get(r.unit_id.as_str()).ok_or_else(|| {
            EfiError::Consistency(format!("habitat result for unknown unit {}", r.unit_id))
        })?;
        let c = cso.entry(r.cso_class).or_default();
        c.0 += area;
        c.1 += 1;
        let f = fisher.entry(r.fisher_class).or_default();
        f.0 += area;
        f.1 += 1;
    }
    let mut rows = Vec::with_capacity(5);
    for class in [CsoClass::Nesting, CsoClass::Foraging, CsoClass::Unlikely] {
        let (acres, count) = cso.get(&class).copied().unwrap_or_default();
        rows.push(AcreageRow {
            species: "cso".into(),
            class: class.to_string(),
            acres,
            unit_count: count,
        });
    }
    for class in [FisherClass::Likely, FisherClass::Unlikely] {
        let (acres, count) = fisher.get(&class).copied().unwrap_or_default();
        rows.push(AcreageRow {
            species: "fisher".into(),
            class: class.to_string(),
            acres,
            unit_count: count,
        });
    }
    Ok(rows)
}

/// Per-unit class table: unit_id, cso_class, fisher_class.
pub fn write_habitat_csv(results: &[HabitatResult], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["unit_id", "cso_class", "fisher_class"])?;
    for r in results {
        w.write_record([&r.unit_id, &r.cso_class.to_string(), &r.fisher_class.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Summary table: species, class, acres, unit_count.
pub fn write_acreage_csv(rows: &[AcreageRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["species", "class", "acres", "unit_count"])?;
    for r in rows {
        w.write_record([&r.species, &r.class, &fmt_f64(r.acres), &r.unit_count.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
