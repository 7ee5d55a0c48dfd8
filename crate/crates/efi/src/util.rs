//! Small numeric helpers shared across modules.

/// Arithmetic mean; 0 for an empty slice.
pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

/// Population standard deviation; 0 for slices shorter than 1.
pub fn std_pop(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let m = mean(values);
    let var = values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / values.len() as f64;
    var.sqrt()
}

/// Linear-interpolation quantile over an unsorted slice: rank index
/// h = (n-1) * p / 100, interpolated between the flanking order statistics.
///
/// Panics on an empty slice; callers gate on emptiness and raise their own
/// domain error.
pub fn quantile_linear(values: &[f64], p: f64) -> f64 {
    assert!(!values.is_empty(), "quantile of empty slice");
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("non-finite value in quantile"));
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p / 100.0;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    let frac = h - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// FNV-1a 64-bit hash. Used to derive stable per-stage RNG seeds; Rust's
/// `DefaultHasher` is not guaranteed stable across releases.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Sub-seed for a named stage, derived from the run seed.
pub fn stage_seed(seed: u64, stage: &str) -> u64 {
    let mut bytes = Vec::with_capacity(8 + stage.len());
    bytes.extend_from_slice(&seed.to_le_bytes());
    bytes.extend_from_slice(stage.as_bytes());
    fnv1a64(&bytes)
}

/// Shortest round-trip decimal form of an f64. `format!("{}")` on f64 is
/// guaranteed to parse back to the identical bit pattern.
pub fn fmt_f64(v: f64) -> String {
    format!("{v}")
}
