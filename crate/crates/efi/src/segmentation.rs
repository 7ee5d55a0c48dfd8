//! Two-tier spatial units: a plot-sized square tessellation (tier 1) and
//! greedy agglomerative reporting units grown on CHM/NDVI similarity
//! (tier 2). Reporting units are unions of analysis cells, so tier-2
//! aggregation is exact.

use std::cmp::Reverse;
use std::collections::{BTreeSet, BinaryHeap};

use crate::error::{EfiError, Result};
use crate::geodata::{cell_area, CellIndex, Extent, GridMeta, SQFT_PER_ACRE};
use crate::util::{mean, std_pop};

/// Tier-1 grid of square analysis cells covering the scene extent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tessellation {
    pub meta: GridMeta,
}

impl Tessellation {
    pub fn cell_area_acres(&self) -> f64 {
        self.meta.cellsize * self.meta.cellsize / SQFT_PER_ACRE
    }

    pub fn ncells(&self) -> usize {
        self.meta.ncells()
    }
}

/// Tier-2 reporting unit: a 4-connected set of analysis cells.
#[derive(Debug, Clone, PartialEq)]
pub struct Region {
    /// Smallest linear cell index among members; stable across runs.
    pub id: usize,
    /// Sorted by linear index.
    pub members: Vec<CellIndex>,
    /// Raw (CHM mean, NDVI mean) over members.
    pub centroid_features: (f64, f64),
    pub area: f64,
}

/// Squares of side sqrt(unit_area) acres snapped outward to cover the
/// extent.
pub fn tessellate(extent: &Extent, analysis_unit_area: f64) -> Result<Tessellation> {
    if !(extent.width() > 0.0) || !(extent.height() > 0.0) {
        return Err(EfiError::Domain(format!(
            "tessellation extent must have positive area, got {} x {} ft",
            extent.width(),
            extent.height()
        )));
    }
    if !(analysis_unit_area > 0.0) {
        return Err(EfiError::Domain(format!(
            "analysis unit area must be positive, got {analysis_unit_area}"
        )));
    }
    let cellsize = (analysis_unit_area * SQFT_PER_ACRE).sqrt();
    // tolerate fp noise so an exact multiple does not gain a phantom column
    let cols = (extent.width() / cellsize - 1e-9).ceil().max(1.0);
    let rows = (extent.height() / cellsize - 1e-9).ceil().max(1.0);
    Ok(Tessellation {
        meta: GridMeta {
            ncols: cols as usize,
            nrows: rows as usize,
            x_origin: extent.xmin,
            y_origin: extent.ymin,
            cellsize,
        },
    })
}

/// |members| x cell area.
pub fn region_area(region: &Region, tess: &Tessellation) -> Result<f64> {
    if region.members.is_empty() {
        return Err(EfiError::Consistency(format!("region {} has no members", region.id)));
    }
    Ok(region.members.len() as f64 * cell_area(tess.meta.cellsize)?)
}

fn zscore(values: &[f64]) -> Vec<f64> {
    let m = mean(values);
    let s = std_pop(values);
    if s == 0.0 {
        return vec![0.0; values.len()];
    }
    values.iter().map(|v| (v - m) / s).collect()
}

struct RegionState {
    members: Vec<usize>,
    sum: [f64; 2],
    adj: BTreeSet<usize>,
    version: u32,
}

impl RegionState {
    fn centroid(&self) -> [f64; 2] {
        let n = self.members.len() as f64;
        [self.sum[0] / n, self.sum[1] / n]
    }
}

/// Heap key: cost ordered by nonnegative-f64 bit pattern, then the id pair.
/// Total order makes the merge sequence deterministic.
#[derive(PartialEq, Eq, PartialOrd, Ord)]
struct PairKey {
    cost_bits: u64,
    a: usize,
    b: usize,
    va: u32,
    vb: u32,
}

fn pair_cost(ra: &RegionState, rb: &RegionState, cell_acres: f64) -> f64 {
    let ca = ra.centroid();
    let cb = rb.centroid();
    let d0 = ca[0] - cb[0];
    let d1 = ca[1] - cb[1];
    let combined = (ra.members.len() + rb.members.len()) as f64 * cell_acres;
    combined * (d0 * d0 + d1 * d1)
}

/// Greedy agglomeration: repeatedly merge the 4-adjacent region pair with
/// the lowest cost = combined area x squared centroid distance (channels
/// z-scored over the scene), until mean region area reaches the target.
/// The surviving region keeps the smaller id; ties break on (cost, a, b).
pub fn grow_reporting_units(
    tess: &Tessellation,
    chm_means: &[f64],
    ndvi_means: &[f64],
    target_area: f64,
) -> Result<Vec<Region>> {
    let n = tess.ncells();
    if chm_means.len() != n || ndvi_means.len() != n {
        return Err(EfiError::Dimension(format!(
            "per-cell channels must have {n} values, got {} and {}",
            chm_means.len(),
            ndvi_means.len()
        )));
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    let cell_acres = tess.cell_area_acres();
    let chm_z = zscore(chm_means);
    let ndvi_z = zscore(ndvi_means);
    let meta = &tess.meta;

    let mut regions: Vec<Option<RegionState>> = (0..n)
        .map(|i| {
            let cell = meta.from_linear(i);
            let mut adj = BTreeSet::new();
            if cell.col > 0 {
                adj.insert(i - 1);
            }
            if cell.col + 1 < meta.ncols {
                adj.insert(i + 1);
            }
            if cell.row > 0 {
                adj.insert(i - meta.ncols);
            }
            if cell.row + 1 < meta.nrows {
                adj.insert(i + meta.ncols);
            }
            Some(RegionState { members: vec![i], sum: [chm_z[i], ndvi_z[i]], adj, version: 0 })
        })
        .collect();

    let mut heap: BinaryHeap<Reverse<PairKey>> = BinaryHeap::new();
    let push_pair = |heap: &mut BinaryHeap<Reverse<PairKey>>,
                         regions: &Vec<Option<RegionState>>,
                         a: usize,
                         b: usize| {
        let (a, b) = if a < b { (a, b) } else { (b, a) };
        let (ra, rb) = (regions[a].as_ref().unwrap(), regions[b].as_ref().unwrap());
        let cost = pair_cost(ra, rb, cell_acres);
        heap.push(Reverse(PairKey {
            cost_bits: cost.to_bits(),
            a,
            b,
            va: ra.version,
            vb: rb.version,
        }));
    };
    for i in 0..n {
        let adj = regions[i].as_ref().unwrap().adj.clone();
        for j in adj {
            if i < j {
                push_pair(&mut heap, &regions, i, j);
            }
        }
    }

    let total_area = n as f64 * cell_acres;
    let mut live = n;
    while live > 1 && total_area / (live as f64) < target_area {
        let Some(Reverse(key)) = heap.pop() else { break };
        let valid = match (&regions[key.a], &regions[key.b]) {
            (Some(ra), Some(rb)) => ra.version == key.va && rb.version == key.vb,
            _ => false,
        };
        if !valid {
            continue;
        }
        // merge b into a (a < b by construction)
        let rb = regions[key.b].take().unwrap();
        let ra = regions[key.a].as_mut().unwrap();
        ra.members.extend(rb.members);
        ra.sum[0] += rb.sum[0];
        ra.sum[1] += rb.sum[1];
        ra.version += 1;
        let mut new_adj: BTreeSet<usize> = ra.adj.union(&rb.adj).copied().collect();
        new_adj.remove(&key.a);
        new_adj.remove(&key.b);
        ra.adj = new_adj.clone();
        for &nb in &new_adj {
            let rn = regions[nb].as_mut().unwrap();
            rn.adj.remove(&key.b);
            rn.adj.insert(key.a);
        }
        live -= 1;
        for &nb in &new_adj {
            push_pair(&mut heap, &regions, key.a, nb);
        }
    }

    let mut out = Vec::with_capacity(live);
    for (id, slot) in regions.into_iter().enumerate() {
        let Some(state) = slot else { continue };
        let mut linear = state.members;
        linear.sort_unstable();
        debug_assert_eq!(id, linear[0]);
        let count = linear.len() as f64;
        let raw_chm = linear.iter().map(|&i| chm_means[i]).sum::<f64>() / count;
        let raw_ndvi = linear.iter().map(|&i| ndvi_means[i]).sum::<f64>() / count;
        out.push(Region {
            id,
            members: linear.iter().map(|&i| meta.from_linear(i)).collect(),
            centroid_features: (raw_chm, raw_ndvi),
            area: count * cell_acres,
        });
    }
    Ok(out)
}
