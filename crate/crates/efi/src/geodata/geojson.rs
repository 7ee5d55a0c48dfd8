//! GeoJSON FeatureCollection output. Each unit's geometry is the rectilinear
//! union outline of its member cells, traced from directed boundary edges
//! with the interior kept on the left, so exterior rings come out
//! counterclockwise and holes clockwise as RFC 7946 requires. Collinear
//! vertices are kept: two adjacent cells produce a 6-corner rectangle.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde_json::{json, Map, Value};

use super::{GridMeta, PolygonRecord, PropertyValue};
use crate::error::{EfiError, Result};

/// Corner of the cell lattice as (row, col); world position is
/// origin + corner * cellsize.
type Corner = (i64, i64);

#[derive(Debug, Clone, Copy)]
struct Edge {
    a: Corner,
    b: Corner,
}

impl Edge {
    fn dir(&self) -> (i64, i64) {
        (self.b.0 - self.a.0, self.b.1 - self.a.1)
    }
}

/// Lower score is preferred: left turn, then straight, then right. With the
/// interior on the left, taking the sharpest left at a pinch corner splits
/// the figure into simple rings that touch at a point.
fn turn_score(incoming: (i64, i64), outgoing: (i64, i64)) -> u8 {
    // headings in (x, y) = (col, row)
    let (ix, iy) = (incoming.1, incoming.0);
    let (ox, oy) = (outgoing.1, outgoing.0);
    let cross = ix * oy - iy * ox;
    if cross > 0 {
        0
    } else if cross == 0 {
        1
    } else {
        2
    }
}

/// Twice the signed shoelace area in corner units; positive when
/// counterclockwise.
fn twice_signed_area(ring: &[Corner]) -> i64 {
    let n = ring.len();
    let mut acc = 0i64;
    for i in 0..n {
        let (r1, c1) = ring[i];
        let (r2, c2) = ring[(i + 1) % n];
        acc += c1 * r2 - c2 * r1;
    }
    acc
}

/// Ray cast from (px, py) toward +x. Half-integer test points against
/// integer vertices, so no edge case lands exactly on a vertex or edge.
fn point_in_ring(ring: &[Corner], px: f64, py: f64) -> bool {
    let n = ring.len();
    let mut inside = false;
    for i in 0..n {
        let (r1, c1) = ring[i];
        let (r2, c2) = ring[(i + 1) % n];
        if c1 != c2 {
            continue; // horizontal edge, never crosses a horizontal ray
        }
        let x = c1 as f64;
        let (ylo, yhi) = (r1.min(r2) as f64, r1.max(r2) as f64);
        if x > px && py > ylo && py < yhi {
            inside = !inside;
        }
    }
    inside
}

/// A representative point strictly inside a rectilinear ring: the region
/// occupies the northeast quadrant at the ring's lowest-then-leftmost vertex.
fn inner_point(ring: &[Corner]) -> (f64, f64) {
    let v = ring.iter().min().expect("ring has vertices");
    (v.1 as f64 + 0.5, v.0 as f64 + 0.5)
}

/// Traces the union outline of a cell set into rings of lattice corners.
/// Exterior rings come back counterclockwise, holes clockwise. Rings are not
/// closed (first vertex is not repeated).
fn trace_rings(cells: &BTreeSet<Corner>) -> Vec<Vec<Corner>> {
    let has = |r: i64, c: i64| cells.contains(&(r, c));
    let mut edges: Vec<Edge> = Vec::new();
    for &(r, c) in cells {
        if !has(r - 1, c) {
            edges.push(Edge { a: (r, c), b: (r, c + 1) }); // bottom, heading east
        }
        if !has(r, c + 1) {
            edges.push(Edge { a: (r, c + 1), b: (r + 1, c + 1) }); // right, heading north
        }
        if !has(r + 1, c) {
            edges.push(Edge { a: (r + 1, c + 1), b: (r + 1, c) }); // top, heading west
        }
        if !has(r, c - 1) {
            edges.push(Edge { a: (r + 1, c), b: (r, c) }); // left, heading south
        }
    }

    let mut outgoing: BTreeMap<Corner, Vec<usize>> = BTreeMap::new();
    for (i, e) in edges.iter().enumerate() {
        outgoing.entry(e.a).or_default().push(i);
    }
    let mut order: Vec<usize> = (0..edges.len()).collect();
    order.sort_by_key(|&i| (edges[i].a, edges[i].b));

    let mut used = vec![false; edges.len()];
    let mut rings = Vec::new();
    for &start in &order {
        if used[start] {
            continue;
        }
        used[start] = true;
        let mut ring = vec![edges[start].a];
        let mut cur = edges[start].b;
        let mut dir = edges[start].dir();
        while cur != ring[0] {
            ring.push(cur);
            let candidates = outgoing.get(&cur).map(Vec::as_slice).unwrap_or(&[]);
            let next = candidates
                .iter()
                .filter(|&&j| !used[j])
                .min_by_key(|&&j| turn_score(dir, edges[j].dir()))
                .copied()
                .expect("boundary edges always chain into closed rings");
            used[next] = true;
            cur = edges[next].b;
            dir = edges[next].dir();
        }
        rings.push(ring);
    }
    rings
}

/// Rings for one unit in world coordinates, grouped as
/// (exterior, holes) pairs. Public within the crate so invariants about
/// outline area can be checked without going through a file.
pub(crate) fn unit_rings(
    unit: &PolygonRecord,
    meta: &GridMeta,
) -> Result<Vec<(Vec<(f64, f64)>, Vec<Vec<(f64, f64)>>)>> {
    let mut cells: BTreeSet<Corner> = BTreeSet::new();
    for cell in &unit.cell_members {
        if cell.row >= meta.nrows || cell.col >= meta.ncols {
            return Err(EfiError::Consistency(format!(
                "unit {} references cell ({}, {}) outside the {}x{} tessellation",
                unit.id, cell.row, cell.col, meta.nrows, meta.ncols
            )));
        }
        cells.insert((cell.row as i64, cell.col as i64));
    }
    let rings = trace_rings(&cells);

    let mut exteriors: Vec<(Vec<Corner>, i64)> = Vec::new();
    let mut holes: Vec<Vec<Corner>> = Vec::new();
    for ring in rings {
        let a2 = twice_signed_area(&ring);
        if a2 > 0 {
            exteriors.push((ring, a2));
        } else {
            holes.push(ring);
        }
    }

    // Each hole attaches to the smallest exterior containing it; nesting of
    // islands inside holes makes the smallest the correct owner.
    let mut grouped: Vec<(Vec<Corner>, Vec<Vec<Corner>>)> =
        exteriors.iter().map(|(r, _)| (r.clone(), Vec::new())).collect();
    for hole in holes {
        let (hx, hy) = inner_point(&hole);
        let owner = exteriors
            .iter()
            .enumerate()
            .filter(|(_, (ext, _))| point_in_ring(ext, hx, hy))
            .min_by_key(|(_, (_, a2))| *a2)
            .map(|(i, _)| i)
            .ok_or_else(|| {
                EfiError::Consistency(format!("unit {}: hole ring outside every exterior", unit.id))
            })?;
        grouped[owner].1.push(hole);
    }

    let to_world = |ring: &[Corner]| -> Vec<(f64, f64)> {
        ring.iter()
            .map(|&(r, c)| {
                (
                    meta.x_origin + c as f64 * meta.cellsize,
                    meta.y_origin + r as f64 * meta.cellsize,
                )
            })
            .collect()
    };
    Ok(grouped
        .iter()
        .map(|(ext, hs)| (to_world(ext), hs.iter().map(|h| to_world(h)).collect()))
        .collect())
}

fn ring_positions(ring: &[(f64, f64)]) -> Value {
    let mut coords: Vec<Value> = ring.iter().map(|&(x, y)| json!([x, y])).collect();
    coords.push(json!([ring[0].0, ring[0].1])); // close the ring
    Value::Array(coords)
}

fn property_value(v: &PropertyValue) -> Value {
    match v {
        PropertyValue::Number(n) => serde_json::Number::from_f64(*n)
            .map(Value::Number)
            .unwrap_or(Value::Null),
        PropertyValue::Text(s) => Value::String(s.clone()),
    }
}

/// Writes the units as an RFC 7946 FeatureCollection in the grid's native
/// coordinates. Properties carry the unit id and area plus everything the
/// caller attached to the record.
pub fn write_geojson(units: &[PolygonRecord], meta: &GridMeta, path: &Path) -> Result<()> {
    let mut features = Vec::with_capacity(units.len());
    for unit in units {
        let groups = unit_rings(unit, meta)?;
        let geometry = if groups.len() == 1 {
            let (ext, holes) = &groups[0];
            let mut rings = vec![ring_positions(ext)];
            rings.extend(holes.iter().map(|h| ring_positions(h)));
            json!({ "type": "Polygon", "coordinates": rings })
        } else {
            let polys: Vec<Value> = groups
                .iter()
                .map(|(ext, holes)| {
                    let mut rings = vec![ring_positions(ext)];
                    rings.extend(holes.iter().map(|h| ring_positions(h)));
                    Value::Array(rings)
                })
                .collect();
            json!({ "type": "MultiPolygon", "coordinates": polys })
        };
        let mut props = Map::new();
        props.insert("unit_id".to_string(), Value::String(unit.id.clone()));
        props.insert(
            "area_ac".to_string(),
            serde_json::Number::from_f64(unit.area).map(Value::Number).unwrap_or(Value::Null),
        );
        for (k, v) in &unit.properties {
            props.insert(k.clone(), property_value(v));
        }
        features.push(json!({
            "type": "Feature",
            "geometry": geometry,
            "properties": Value::Object(props),
        }));
    }
    let collection = json!({ "type": "FeatureCollection", "features": features });
    let mut text = serde_json::to_string(&collection)
        .map_err(|e| EfiError::Format(format!("geojson serialization: {e}")))?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

/// Shoelace area of one (exterior, holes) group list in world units, holes
/// subtracted.
#[cfg(test)]
pub(crate) fn outline_area(groups: &[(Vec<(f64, f64)>, Vec<Vec<(f64, f64)>>)]) -> f64 {
    fn shoelace(ring: &[(f64, f64)]) -> f64 {
        let n = ring.len();
        let mut acc = 0.0;
        for i in 0..n {
            let (x1, y1) = ring[i];
            let (x2, y2) = ring[(i + 1) % n];
            acc += x1 * y2 - x2 * y1;
        }
        acc / 2.0
    }
    groups
        .iter()
        .map(|(ext, holes)| shoelace(ext) + holes.iter().map(|h| shoelace(h)).sum::<f64>())
        .sum()
}
