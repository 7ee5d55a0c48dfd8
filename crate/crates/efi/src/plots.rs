//! FIA-style plot and tree tables, and the per-plot attribute compiler that
//! produces the model targets.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{EfiError, Result};

/// One measured stem, expanded to a per-acre contribution via
/// `tpa_expansion`.
#[derive(Debug, Clone, PartialEq)]
pub struct TreeRecord {
    pub plot_id: String,
    /// 1 = live, 2 = dead (snag); other codes contribute nothing.
    pub status: i32,
    pub species_code: i32,
    /// Diameter at breast height, inches.
    pub dbh: f64,
    /// Total height, feet.
    pub height: f64,
    /// Stems per acre represented by this record.
    pub tpa_expansion: f64,
    /// Aboveground carbon, pounds per stem.
    pub carbon_ag: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlotRecord {
    pub plot_id: String,
    pub x: f64,
    pub y: f64,
    /// Field-measured live canopy cover percent, when the COND table has it.
    pub measured_canopy_cover: Option<f64>,
}

/// Ground-truth (and later predicted) stand attributes, all per acre.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AttributeVector {
    /// Live basal area, ft²/ac.
    pub bapa: f64,
    /// Live softwood basal area, ft²/ac.
    pub bapa_softwood: f64,
    /// Snag (dead) basal area, ft²/ac.
    pub bapa_snag: f64,
    /// TPA-weighted mean height of live trees, feet.
    pub ht: f64,
    /// TPA-weighted mean DBH of live trees, inches.
    pub dia: f64,
    /// Live stems per acre.
    pub tpa: f64,
    /// Live aboveground carbon, tons/ac.
    pub cagpa: f64,
    /// Canopy cover percent.
    pub cncvr_pct: f64,
}

/// Canonical attribute order used by every table and model file.
pub const ATTRIBUTE_NAMES: [&str; 8] =
    ["bapa", "bapa_softwood", "bapa_snag", "ht", "dia", "tpa", "cagpa", "cncvr_pct"];

impl AttributeVector {
    pub fn as_array(&self) -> [f64; 8] {
        [
            self.bapa,
            self.bapa_softwood,
            self.bapa_snag,
            self.ht,
            self.dia,
            self.tpa,
            self.cagpa,
            self.cncvr_pct,
        ]
    }

    pub fn from_array(v: [f64; 8]) -> Self {
        AttributeVector {
            bapa: v[0],
            bapa_softwood: v[1],
            bapa_snag: v[2],
            ht: v[3],
            dia: v[4],
            tpa: v[5],
            cagpa: v[6],
            cncvr_pct: v[7],
        }
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        let i = ATTRIBUTE_NAMES.iter().position(|n| *n == name)?;
        Some(self.as_array()[i])
    }
}

/// Cross-sectional stem area at breast height in ft² for a DBH in inches.
pub fn basal_area_per_tree(dbh: f64) -> Result<f64> {
    if dbh < 0.0 || dbh.is_nan() {
        return Err(EfiError::Domain(format!("dbh must be nonnegative, got {dbh}")));
    }
    Ok(0.005454154 * dbh * dbh)
}

/// FIA species codes below 300 are conifers.
pub fn is_softwood(species_code: i32) -> bool {
    species_code < 300
}

const STATUS_LIVE: i32 = 1;
const STATUS_DEAD: i32 = 2;

/// Compiles the stand attribute vector for one plot. An empty tree list is a
/// valid (all-zero) stand.
pub fn compile_plot_attributes(plot: &PlotRecord, trees: &[TreeRecord]) -> Result<AttributeVector> {
    let mut bapa = 0.0;
    let mut bapa_softwood = 0.0;
    let mut bapa_snag = 0.0;
    let mut tpa = 0.0;
    let mut ht_weighted = 0.0;
    let mut dia_weighted = 0.0;
    let mut carbon_lb = 0.0;
    for t in trees {
        let ba = basal_area_per_tree(t.dbh)? * t.tpa_expansion;
        match t.status {
            STATUS_LIVE => {
                bapa += ba;
                if is_softwood(t.species_code) {
                    bapa_softwood += ba;
                }
                tpa += t.tpa_expansion;
                ht_weighted += t.height * t.tpa_expansion;
                dia_weighted += t.dbh * t.tpa_expansion;
                carbon_lb += t.carbon_ag * t.tpa_expansion;
            }
            STATUS_DEAD => bapa_snag += ba,
            _ => {}
        }
    }
    Ok(AttributeVector {
        bapa,
        bapa_softwood,
        bapa_snag,
        ht: if tpa > 0.0 { ht_weighted / tpa } else { 0.0 },
        dia: if tpa > 0.0 { dia_weighted / tpa } else { 0.0 },
        tpa,
        cagpa: carbon_lb / 2000.0,
        cncvr_pct: plot.measured_canopy_cover.unwrap_or(0.0),
    })
}

struct ColumnMap {
    idx: Vec<usize>,
}

impl ColumnMap {
    fn new(path: &Path, headers: &csv::StringRecord, required: &[&str]) -> Result<Self> {
        let mut idx = Vec::with_capacity(required.len());
        for name in required {
            match headers.iter().position(|h| h.trim() == *name) {
                Some(i) => idx.push(i),
                None => {
                    return Err(EfiError::Schema(format!(
                        "{}: missing column {name}",
                        path.display()
                    )))
                }
            }
        }
        Ok(ColumnMap { idx })
    }

    fn text(&self, rec: &csv::StringRecord, col: usize, path: &Path, line: usize) -> Result<String> {
        rec.get(self.idx[col])
            .map(|s| s.trim().to_string())
            .ok_or_else(|| EfiError::Format(format!("{}: line {line}: short row", path.display())))
    }

    fn num(&self, rec: &csv::StringRecord, col: usize, path: &Path, line: usize) -> Result<f64> {
        let s = self.text(rec, col, path, line)?;
        s.parse::<f64>()
            .map_err(|e| EfiError::Format(format!("{}: line {line}: {e}", path.display())))
    }
}

fn read_rows(path: &Path, required: &[&str]) -> Result<(ColumnMap, Vec<(usize, csv::StringRecord)>)> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_path(path)?;
    let headers = reader.headers()?.clone();
    let map = ColumnMap::new(path, &headers, required)?;
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        rows.push((i + 2, rec?)); // header is line 1
    }
    Ok((map, rows))
}

/// Loads the PLOT, TREE, and COND tables and joins trees to plots by
/// PLT_CN = CN. Plots with no trees are kept with an empty tree list.
pub fn load_plot_tables(
    plot_csv: &Path,
    tree_csv: &Path,
    cond_csv: &Path,
) -> Result<Vec<(PlotRecord, Vec<TreeRecord>)>> {
    let (pmap, prows) = read_rows(plot_csv, &["CN", "X", "Y"])?;
    let mut order: Vec<String> = Vec::new();
    let mut plots: BTreeMap<String, PlotRecord> = BTreeMap::new();
    for (line, rec) in &prows {
        let cn = pmap.text(rec, 0, plot_csv, *line)?;
        if cn.is_empty() {
            return Err(EfiError::Format(format!(
                "{}: line {line}: empty plot CN",
                plot_csv.display()
            )));
        }
        if plots.contains_key(&cn) {
            return Err(EfiError::Consistency(format!(
                "{}: line {line}: duplicate plot CN {cn}",
                plot_csv.display()
            )));
        }
        let plot = PlotRecord {
            plot_id: cn.clone(),
            x: pmap.num(rec, 1, plot_csv, *line)?,
            y: pmap.num(rec, 2, plot_csv, *line)?,
            measured_canopy_cover: None,
        };
        order.push(cn.clone());
        plots.insert(cn, plot);
    }

    let (cmap, crows) = read_rows(cond_csv, &["PLT_CN", "LIVE_CANOPY_CVR_PCT"])?;
    let mut cond_orphans: Vec<String> = Vec::new();
    for (line, rec) in &crows {
        let cn = cmap.text(rec, 0, cond_csv, *line)?;
        let Some(plot) = plots.get_mut(&cn) else {
            cond_orphans.push(format!("{cn} (line {line})"));
            continue;
        };
        let raw = cmap.text(rec, 1, cond_csv, *line)?;
        if raw.is_empty() {
            continue; // cover not measured for this condition
        }
        let cover = raw.parse::<f64>().map_err(|e| {
            EfiError::Format(format!("{}: line {line}: {e}", cond_csv.display()))
        })?;
        if !(0.0..=100.0).contains(&cover) {
            return Err(EfiError::Data(format!(
                "{}: line {line}: canopy cover {cover} outside [0, 100]",
                cond_csv.display()
            )));
        }
        // single-condition interpretation: first row per plot wins
        if plot.measured_canopy_cover.is_none() {
            plot.measured_canopy_cover = Some(cover);
        }
    }

    let (tmap, trows) = read_rows(
        tree_csv,
        &["PLT_CN", "STATUSCD", "SPCD", "DIA", "HT", "TPA_UNADJ", "CARBON_AG"],
    )?;
    let mut trees: BTreeMap<String, Vec<TreeRecord>> = BTreeMap::new();
    let mut tree_orphans: Vec<String> = Vec::new();
    for (line, rec) in &trows {
        let cn = tmap.text(rec, 0, tree_csv, *line)?;
        if !plots.contains_key(&cn) {
            tree_orphans.push(format!("{cn} (line {line})"));
            continue;
        }
        let tree = TreeRecord {
            plot_id: cn.clone(),
            status: tmap.num(rec, 1, tree_csv, *line)? as i32,
            species_code: tmap.num(rec, 2, tree_csv, *line)? as i32,
            dbh: tmap.num(rec, 3, tree_csv, *line)?,
            height: tmap.num(rec, 4, tree_csv, *line)?,
            tpa_expansion: tmap.num(rec, 5, tree_csv, *line)?,
            carbon_ag: tmap.num(rec, 6, tree_csv, *line)?,
        };
        if tree.dbh < 0.0 || tree.height < 0.0 || tree.tpa_expansion < 0.0 {
            return Err(EfiError::Data(format!(
                "{}: line {line}: negative dbh, height, or tpa_expansion",
                tree_csv.display()
            )));
        }
        trees.entry(cn).or_default().push(tree);
    }

    if !tree_orphans.is_empty() || !cond_orphans.is_empty() {
        let mut parts = Vec::new();
        if !tree_orphans.is_empty() {
            parts.push(format!(
                "{} tree rows reference missing plots: {}",
                tree_orphans.len(),
                tree_orphans.join(", ")
            ));
        }
        if !cond_orphans.is_empty() {
            parts.push(format!(
                "{} cond rows reference missing plots: {}",
                cond_orphans.len(),
                cond_orphans.join(", ")
            ));
        }
        return Err(EfiError::Orphan(parts.join("; ")));
    }

    Ok(order
        .into_iter()
        .map(|cn| {
            let plot = plots.remove(&cn).expect("plot inserted above");
            let tree_list = trees.remove(&cn).unwrap_or_default();
            (plot, tree_list)
        })
        .collect())
}

/// Writes plot/tree/cond tables in the exact shape `load_plot_tables` reads.
pub fn write_plot_tables(
    pairs: &[(PlotRecord, Vec<TreeRecord>)],
    plot_csv: &Path,
    tree_csv: &Path,
    cond_csv: &Path,
) -> Result<()> {
    use std::io::Write;
    let mut pf = std::io::BufWriter::new(std::fs::File::create(plot_csv)?);
    writeln!(pf, "CN,X,Y")?;
    for (p, _) in pairs {
        writeln!(pf, "{},{},{}", p.plot_id, p.x, p.y)?;
    }
    let mut tf = std::io::BufWriter::new(std::fs::File::create(tree_csv)?);
    writeln!(tf, "PLT_CN,STATUSCD,SPCD,DIA,HT,TPA_UNADJ,CARBON_AG")?;
    for (_, trees) in pairs {
        for t in trees {
            writeln!(
                tf,
                "{},{},{},{},{},{},{}",
                t.plot_id, t.status, t.species_code, t.dbh, t.height, t.tpa_expansion, t.carbon_ag
            )?;
        }
    }
    let mut cf = std::io::BufWriter::new(std::fs::File::create(cond_csv)?);
    writeln!(cf, "PLT_CN,LIVE_CANOPY_CVR_PCT")?;
    for (p, _) in pairs {
        match p.measured_canopy_cover {
            Some(c) => writeln!(cf, "{},{}", p.plot_id, c)?,
            None => writeln!(cf, "{},", p.plot_id)?,
        }
    }
    Ok(())
}
