//! Minimal LAS reader/writer: versions 1.2-1.4, point record formats 0-3,
//! uncompressed only. Only the fields this pipeline consumes are decoded
//! (scaled coordinates, return number, classification).

use std::path::Path;

use super::{LidarPoint, PointCloud};
use crate::error::{EfiError, Result};

const SIGNATURE: &[u8; 4] = b"LASF";
const HEADER_SIZE_12: usize = 227;
const HEADER_SIZE_14: usize = 375;

// minimal record lengths for point formats 0..=3
const FORMAT_LEN: [usize; 4] = [20, 28, 26, 34];

fn u16_at(buf: &[u8], off: usize) -> u16 {
    u16::from_le_bytes([buf[off], buf[off + 1]])
}

fn u32_at(buf: &[u8], off: usize) -> u32 {
    u32::from_le_bytes([buf[off], buf[off + 1], buf[off + 2], buf[off + 3]])
}

fn u64_at(buf: &[u8], off: usize) -> u64 {
    let mut b = [0u8; 8];
    b.copy_from_slice(&buf[off..off + 8]);
    u64::from_le_bytes(b)
}

fn i32_at(buf: &[u8], off: usize) -> i32 {
    i32::from_le_bytes([buf[off], buf[off + 1], buf[off + 2], buf[off + 3]])
}

fn f64_at(buf: &[u8], off: usize) -> f64 {
    let mut b = [0u8; 8];
    b.copy_from_slice(&buf[off..off + 8]);
    f64::from_le_bytes(b)
}

pub fn read_las(path: &Path) -> Result<PointCloud> {
    let buf = std::fs::read(path)?;
    if buf.len() < HEADER_SIZE_12 {
        return Err(EfiError::Format(format!(
            "{}: file too short for a LAS header",
            path.display()
        )));
    }
    if &buf[0..4] != SIGNATURE {
        return Err(EfiError::Format(format!(
            "{}: missing LASF signature",
            path.display()
        )));
    }
    let major = buf[24];
    let minor = buf[25];
    if major != 1 || !(2..=4).contains(&minor) {
        return Err(EfiError::Capability(format!(
            "{}: LAS version {major}.{minor} not supported (1.2-1.4 only)",
            path.display()
        )));
    }
    let point_offset = u32_at(&buf, 96) as usize;
    let format_raw = buf[104];
    if format_raw & 0x80 != 0 {
        return Err(EfiError::Capability(format!(
            "{}: compressed (LAZ) point data not supported",
            path.display()
        )));
    }
    let format = format_raw & 0x3f;
    if format as usize >= FORMAT_LEN.len() {
        return Err(EfiError::Capability(format!(
            "{}: point record format {format} not supported (0-3 only)",
            path.display()
        )));
    }
    let record_len = u16_at(&buf, 105) as usize;
    if record_len < FORMAT_LEN[format as usize] {
        return Err(EfiError::Format(format!(
            "{}: record length {record_len} shorter than format {format} minimum {}",
            path.display(),
            FORMAT_LEN[format as usize]
        )));
    }
    let legacy_count = u32_at(&buf, 107) as u64;
    let count = if minor == 4 && legacy_count == 0 {
        if buf.len() < HEADER_SIZE_14 {
            return Err(EfiError::Format(format!(
                "{}: truncated LAS 1.4 header",
                path.display()
            )));
        }
        u64_at(&buf, 247)
    } else {
        legacy_count
    };

    let x_scale = f64_at(&buf, 131);
    let y_scale = f64_at(&buf, 139);
    let z_scale = f64_at(&buf, 147);
    let x_offset = f64_at(&buf, 155);
    let y_offset = f64_at(&buf, 163);
    let z_offset = f64_at(&buf, 171);

    let need = point_offset + count as usize * record_len;
    if buf.len() < need {
        return Err(EfiError::Format(format!(
            "{}: truncated point data ({} bytes, need {need})",
            path.display(),
            buf.len()
        )));
    }

    let mut points = Vec::with_capacity(count as usize);
    for i in 0..count as usize {
        let base = point_offset + i * record_len;
        let xi = i32_at(&buf, base) as f64;
        let yi = i32_at(&buf, base + 4) as f64;
        let zi = i32_at(&buf, base + 8) as f64;
        let flags = buf[base + 14];
        let classification = buf[base + 15] & 0x1f;
        points.push(LidarPoint {
            x: xi * x_scale + x_offset,
            y: yi * y_scale + y_offset,
            z: zi * z_scale + z_offset,
            return_number: (flags & 0x07).max(1),
            classification,
        });
    }
    Ok(PointCloud { points })
}

/// Writes a LAS 1.2 point-format-0 file with 0.01 quantization and zero
/// offsets. Creation date fields are left zero so identical clouds produce
/// byte-identical files.
pub fn write_las(cloud: &PointCloud, path: &Path) -> Result<()> {
    const SCALE: f64 = 0.01;
    let count = cloud.points.len();
    if count > u32::MAX as usize {
        return Err(EfiError::Capability("too many points for a LAS 1.2 file".into()));
    }
    let record_len = FORMAT_LEN[0];
    let mut buf = vec![0u8; HEADER_SIZE_12 + count * record_len];

    buf[0..4].copy_from_slice(SIGNATURE);
    buf[24] = 1; // version major
    buf[25] = 2; // version minor
    let software = b"efi synth";
    buf[58..58 + software.len()].copy_from_slice(software);
    buf[94..96].copy_from_slice(&(HEADER_SIZE_12 as u16).to_le_bytes());
    buf[96..100].copy_from_slice(&(HEADER_SIZE_12 as u32).to_le_bytes());
    buf[104] = 0; // point format 0
    buf[105..107].copy_from_slice(&(record_len as u16).to_le_bytes());
    buf[107..111].copy_from_slice(&(count as u32).to_le_bytes());
    // by-return counts: bucket everything beyond 5th return into slot 5
    let mut by_return = [0u32; 5];
    for p in &cloud.points {
        let slot = (p.return_number.clamp(1, 5) - 1) as usize;
        by_return[slot] += 1;
    }
    for (i, n) in by_return.iter().enumerate() {
        buf[111 + i * 4..115 + i * 4].copy_from_slice(&n.to_le_bytes());
    }
    for (i, scale) in [SCALE, SCALE, SCALE].iter().enumerate() {
        buf[131 + i * 8..139 + i * 8].copy_from_slice(&scale.to_le_bytes());
    }
    // offsets stay zero

    let bounds = cloud.bounds();
    let (xmin, xmax, ymin, ymax) = match &bounds {
        Some(e) => (e.xmin, e.xmax, e.ymin, e.ymax),
        None => (0.0, 0.0, 0.0, 0.0),
    };
    let (zmin, zmax) = cloud
        .points
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p.z), hi.max(p.z)));
    let (zmin, zmax) = if cloud.points.is_empty() { (0.0, 0.0) } else { (zmin, zmax) };
    for (i, v) in [xmax, xmin, ymax, ymin, zmax, zmin].iter().enumerate() {
        buf[179 + i * 8..187 + i * 8].copy_from_slice(&v.to_le_bytes());
    }

    for (i, p) in cloud.points.iter().enumerate() {
        let base = HEADER_SIZE_12 + i * record_len;
        let quant = |v: f64| -> Result<i32> {
            let q = (v / SCALE).round();
            if q > i32::MAX as f64 || q < i32::MIN as f64 {
                return Err(EfiError::Numeric(format!(
                    "coordinate {v} does not fit LAS quantization"
                )));
            }
            Ok(q as i32)
        };
        buf[base..base + 4].copy_from_slice(&quant(p.x)?.to_le_bytes());
        buf[base + 4..base + 8].copy_from_slice(&quant(p.y)?.to_le_bytes());
        buf[base + 8..base + 12].copy_from_slice(&quant(p.z)?.to_le_bytes());
        let rn = p.return_number.clamp(1, 7);
        buf[base + 14] = rn | (rn << 3); // return i of i
        buf[base + 15] = p.classification & 0x1f;
    }

    std::fs::write(path, buf)?;
    Ok(())
}
