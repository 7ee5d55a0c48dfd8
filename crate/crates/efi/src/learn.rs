//! Model fitting: feature normalization, correlation-filter feature
//! selection, elastic-net coordinate descent, cross-validated grid search,
//! and the RMSE / R² metrics. One model per stand attribute.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{EfiError, Result};
use crate::util::{fmt_f64, mean, std_pop};

pub const TOL_DEFAULT: f64 = 1e-7;
pub const MAX_SWEEPS_DEFAULT: usize = 10_000;
pub const LAMBDA_COUNT_DEFAULT: usize = 50;
pub const LAMBDA_RATIO_DEFAULT: f64 = 1e-3;
pub const FOLDS_DEFAULT: usize = 5;
/// R² sentinel for a constant target with nonzero residuals.
pub const R2_SENTINEL: f64 = -1e30;

/// Alpha grid {0.1, 0.2, ..., 1.0}.
pub fn default_alphas() -> Vec<f64> {
    (1..=10).map(|i| i as f64 / 10.0).collect()
}

/// Training data: n rows x p features plus the target column.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    pub rows: Vec<Vec<f64>>,
    pub feature_names: Vec<String>,
    pub targets: Vec<f64>,
}

impl DesignMatrix {
    pub fn new(rows: Vec<Vec<f64>>, feature_names: Vec<String>, targets: Vec<f64>) -> Result<Self> {
        if rows.len() != targets.len() {
            return Err(EfiError::Dimension(format!(
                "{} rows but {} targets",
                rows.len(),
                targets.len()
            )));
        }
        if rows.iter().any(|r| r.len() != feature_names.len()) {
            return Err(EfiError::Dimension("row width does not match feature names".into()));
        }
        Ok(DesignMatrix { rows, feature_names, targets })
    }

    pub fn n(&self) -> usize {
        self.rows.len()
    }

    pub fn p(&self) -> usize {
        self.feature_names.len()
    }

    fn column(&self, j: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r[j]).collect()
    }
}

/// Column means and population stds fitted on training rows. Zero-variance
/// columns are dropped and their names recorded.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalizer {
    /// Names of retained columns, in original column order.
    pub kept_names: Vec<String>,
    /// Indices of retained columns in the fitting row layout.
    pub kept: Vec<usize>,
    /// Means/stds aligned to `kept_names`.
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
    pub dropped: Vec<String>,
}

pub fn fit_normalizer(rows: &[Vec<f64>], names: &[String]) -> Result<Normalizer> {
    if rows.len() < 2 {
        return Err(EfiError::Data(format!(
            "normalizer needs at least 2 rows, got {}",
            rows.len()
        )));
    }
    let p = names.len();
    if rows.iter().any(|r| r.len() != p) {
        return Err(EfiError::Dimension("row width does not match feature names".into()));
    }
    let mut norm = Normalizer {
        kept_names: Vec::new(),
        kept: Vec::new(),
        means: Vec::new(),
        stds: Vec::new(),
        dropped: Vec::new(),
    };
    for j in 0..p {
        let col: Vec<f64> = rows.iter().map(|r| r[j]).collect();
        let (m, s) = (mean(&col), std_pop(&col));
        if !m.is_finite() || !s.is_finite() {
            return Err(EfiError::Numeric(format!("non-finite values in feature {}", names[j])));
        }
        if s == 0.0 {
            norm.dropped.push(names[j].clone());
        } else {
            norm.kept_names.push(names[j].clone());
            norm.kept.push(j);
            norm.means.push(m);
            norm.stds.push(s);
        }
    }
    Ok(norm)
}

/// Projects rows onto the retained columns and standardizes each to the
/// fitted mean/std.
pub fn apply_normalizer(norm: &Normalizer, rows: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let width = norm.kept.iter().copied().max().map(|m| m + 1).unwrap_or(0);
    let mut out = Vec::with_capacity(rows.len());
    for (i, row) in rows.iter().enumerate() {
        if row.len() < width {
            return Err(EfiError::Dimension(format!(
                "row {i} has {} values, normalizer needs at least {width}",
                row.len()
            )));
        }
        out.push(
            norm.kept
                .iter()
                .zip(norm.means.iter().zip(&norm.stds))
                .map(|(&j, (m, s))| (row[j] - m) / s)
                .collect(),
        );
    }
    Ok(out)
}

/// Keeps the ceil(p x keep_fraction) features with the largest absolute
/// Pearson correlation to the target; ties break toward the lexically
/// earlier name. Kept columns stay in their original order.
pub fn select_features(x: &DesignMatrix, keep_fraction: f64) -> Result<DesignMatrix> {
    if !(keep_fraction > 0.0 && keep_fraction <= 1.0) {
        return Err(EfiError::Domain(format!("keep_fraction {keep_fraction} outside (0, 1]")));
    }
    let p = x.p();
    if p == 0 {
        return Ok(x.clone());
    }
    let keep = ((p as f64 * keep_fraction).ceil() as usize).clamp(1, p);
    let n = x.n() as f64;
    let ty = &x.targets;
    let my = mean(ty);
    let sy = std_pop(ty);
    let mut scored: Vec<(f64, &String, usize)> = (0..p)
        .map(|j| {
            let col = x.column(j);
            let sx = std_pop(&col);
            let r = if sx == 0.0 || sy == 0.0 {
                0.0
            } else {
                let mx = mean(&col);
                let cov =
                    col.iter().zip(ty).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>() / n;
                cov / (sx * sy)
            };
            (r.abs(), &x.feature_names[j], j)
        })
        .collect();
    scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then_with(|| a.1.cmp(b.1)));
    let mut kept_idx: Vec<usize> = scored[..keep].iter().map(|s| s.2).collect();
    kept_idx.sort_unstable();
    Ok(DesignMatrix {
        rows: x.rows.iter().map(|r| kept_idx.iter().map(|&j| r[j]).collect()).collect(),
        feature_names: kept_idx.iter().map(|&j| x.feature_names[j].clone()).collect(),
        targets: x.targets.clone(),
    })
}

/// sign(z) * max(|z| - gamma, 0).
pub fn soft_threshold(z: f64, gamma: f64) -> f64 {
    if z > gamma {
        z - gamma
    } else if z < -gamma {
        z + gamma
    } else {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ElasticNetModel {
    pub intercept: f64,
    pub coefficients: Vec<f64>,
    pub lambda: f64,
    pub alpha: f64,
    pub selected_features: Vec<String>,
    /// False when max_sweeps ran out before the tolerance was met; a
    /// warning, not a failure.
    pub converged: bool,
    pub sweeps: usize,
}

impl ElasticNetModel {
    /// Prediction for a row aligned to `selected_features`.
    pub fn predict(&self, row: &[f64]) -> f64 {
        self.intercept
            + self.coefficients.iter().zip(row).map(|(c, v)| c * v).sum::<f64>()
    }
}

fn penalized_objective(resid: &[f64], beta: &[f64], lambda: f64, alpha: f64) -> f64 {
    let n = resid.len() as f64;
    let sse = resid.iter().map(|r| r * r).sum::<f64>();
    let l1 = beta.iter().map(|b| b.abs()).sum::<f64>();
    let l2 = beta.iter().map(|b| b * b).sum::<f64>();
    sse / (2.0 * n) + lambda * (alpha * l1 + (1.0 - alpha) / 2.0 * l2)
}

fn fit_elastic_net_impl(
    x: &DesignMatrix,
    lambda: f64,
    alpha: f64,
    tol: f64,
    max_sweeps: usize,
    mut on_sweep: impl FnMut(f64),
) -> Result<ElasticNetModel> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(EfiError::Domain(format!("alpha {alpha} outside [0, 1]")));
    }
    if !(lambda >= 0.0) {
        return Err(EfiError::Domain(format!("lambda {lambda} must be nonnegative")));
    }
    let n = x.n();
    if n == 0 {
        return Err(EfiError::Data("cannot fit on an empty design matrix".into()));
    }
    let p = x.p();
    for row in &x.rows {
        if row.iter().any(|v| !v.is_finite()) {
            return Err(EfiError::Numeric("non-finite feature value in design matrix".into()));
        }
    }
    if x.targets.iter().any(|v| !v.is_finite()) {
        return Err(EfiError::Numeric("non-finite target value".into()));
    }

    let nf = n as f64;
    let cols: Vec<Vec<f64>> = (0..p).map(|j| x.column(j)).collect();
    let z: Vec<f64> = cols.iter().map(|c| c.iter().map(|v| v * v).sum::<f64>() / nf).collect();

    let mut beta = vec![0.0; p];
    let mut intercept = mean(&x.targets);
    let mut resid: Vec<f64> = x.targets.iter().map(|y| y - intercept).collect();
    let gamma = lambda * alpha;
    let ridge = lambda * (1.0 - alpha);

    let mut converged = false;
    let mut sweeps = 0;
    let mut prev_obj = f64::INFINITY;
    while sweeps < max_sweeps {
        sweeps += 1;
        let mut max_delta: f64 = 0.0;
        for j in 0..p {
            let denom = z[j] + ridge;
            if denom == 0.0 {
                continue; // all-zero column with no ridge term
            }
            let old = beta[j];
            let col = &cols[j];
            let mut rho = 0.0;
            for i in 0..n {
                rho += col[i] * (resid[i] + col[i] * old);
            }
            rho /= nf;
            let new = soft_threshold(rho, gamma) / denom;
            if new != old {
                let d = old - new;
                for i in 0..n {
                    resid[i] += col[i] * d;
                }
                beta[j] = new;
            }
            max_delta = max_delta.max((new - old).abs());
        }
        // intercept is unpenalized: absorb the residual mean
        let shift = mean(&resid);
        if shift != 0.0 {
            intercept += shift;
            for r in resid.iter_mut() {
                *r -= shift;
            }
        }
        max_delta = max_delta.max(shift.abs());

        let obj = penalized_objective(&resid, &beta, lambda, alpha);
        debug_assert!(
            obj <= prev_obj + 1e-10 * (1.0 + prev_obj.abs()),
            "objective increased: {prev_obj} -> {obj}"
        );
        prev_obj = obj;
        on_sweep(obj);

        if max_delta < tol {
            converged = true;
            break;
        }
    }

    Ok(ElasticNetModel {
        intercept,
        coefficients: beta,
        lambda,
        alpha,
        selected_features: x.feature_names.clone(),
        converged,
        sweeps,
    })
}

/// Cyclic coordinate descent for
/// (1/2n)‖y − β₀ − Xβ‖² + λ(α‖β‖₁ + ((1−α)/2)‖β‖²), intercept unpenalized.
pub fn fit_elastic_net(
    x: &DesignMatrix,
    lambda: f64,
    alpha: f64,
    tol: f64,
    max_sweeps: usize,
) -> Result<ElasticNetModel> {
    fit_elastic_net_impl(x, lambda, alpha, tol, max_sweeps, |_| {})
}

/// Same fit, returning the per-sweep objective values.
pub fn fit_elastic_net_traced(
    x: &DesignMatrix,
    lambda: f64,
    alpha: f64,
    tol: f64,
    max_sweeps: usize,
) -> Result<(ElasticNetModel, Vec<f64>)> {
    let mut trace = Vec::new();
    let model = fit_elastic_net_impl(x, lambda, alpha, tol, max_sweeps, |o| trace.push(o))?;
    Ok((model, trace))
}

/// Log-spaced path from λ_max (the smallest λ that zeroes every coefficient
/// at the given α) down to ratio x λ_max. α = 0 borrows the α = 0.01 λ_max.
pub fn lambda_path(x: &DesignMatrix, alpha: f64, count: usize, ratio: f64) -> Result<Vec<f64>> {
    if count < 2 {
        return Err(EfiError::Domain(format!("lambda path needs count >= 2, got {count}")));
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(EfiError::Domain(format!("lambda ratio {ratio} outside (0, 1)")));
    }
    let n = x.n() as f64;
    let my = mean(&x.targets);
    let mut top: f64 = 0.0;
    for j in 0..x.p() {
        let dot: f64 =
            x.rows.iter().zip(&x.targets).map(|(r, y)| r[j] * (y - my)).sum();
        top = top.max(dot.abs());
    }
    let a = if alpha == 0.0 { 0.01 } else { alpha };
    let mut lambda_max = top / (n * a);
    if lambda_max == 0.0 {
        // degenerate target or all-zero features: any positive path works
        lambda_max = 1e-3;
    }
    Ok((0..count)
        .map(|i| lambda_max * ratio.powf(i as f64 / (count - 1) as f64))
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct CVReport {
    /// (lambda, alpha, mean held-out RMSE, mean held-out R²) per grid point.
    pub grid: Vec<(f64, f64, f64, f64)>,
    pub best: (f64, f64),
    pub folds: usize,
}

/// Fold id per row: a seeded shuffle of the row order, then position mod k.
pub fn cv_folds(n: usize, k: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    idx.shuffle(&mut rng);
    let mut fold = vec![0usize; n];
    for (pos, &row) in idx.iter().enumerate() {
        fold[row] = pos % k;
    }
    fold
}

/// Grid search over (alpha, lambda path) with k-fold cross-validation.
/// Best = minimal mean RMSE, ties toward larger λ then larger α; the final
/// model is refit on all rows at the best point.
pub fn cv_grid_search(
    x: &DesignMatrix,
    alphas: &[f64],
    lambda_count: usize,
    k: usize,
    seed: u64,
) -> Result<(ElasticNetModel, CVReport)> {
    if k < 2 {
        return Err(EfiError::Domain(format!("cross-validation needs k >= 2, got {k}")));
    }
    let n = x.n();
    if n < k {
        return Err(EfiError::Data(format!("{n} rows cannot fill {k} folds")));
    }
    if alphas.is_empty() {
        return Err(EfiError::Config("alpha grid is empty".into()));
    }
    let fold_of = cv_folds(n, k, seed);

    struct Fold {
        train: DesignMatrix,
        test_rows: Vec<Vec<f64>>,
        test_targets: Vec<f64>,
    }
    let folds: Vec<Fold> = (0..k)
        .map(|f| {
            let mut train_rows = Vec::new();
            let mut train_targets = Vec::new();
            let mut test_rows = Vec::new();
            let mut test_targets = Vec::new();
            for i in 0..n {
                if fold_of[i] == f {
                    test_rows.push(x.rows[i].clone());
                    test_targets.push(x.targets[i]);
                } else {
                    train_rows.push(x.rows[i].clone());
                    train_targets.push(x.targets[i]);
                }
            }
            Fold {
                train: DesignMatrix {
                    rows: train_rows,
                    feature_names: x.feature_names.clone(),
                    targets: train_targets,
                },
                test_rows,
                test_targets,
            }
        })
        .collect();

    let mut points: Vec<(f64, f64)> = Vec::new(); // (lambda, alpha) in report order
    for &a in alphas {
        for l in lambda_path(x, a, lambda_count, LAMBDA_RATIO_DEFAULT)? {
            points.push((l, a));
        }
    }

    let evals: Vec<Result<(f64, f64)>> = points
        .par_iter()
        .map(|&(lambda, alpha)| {
            let mut rmses = Vec::with_capacity(k);
            let mut r2s = Vec::with_capacity(k);
            for fold in &folds {
                let model =
                    fit_elastic_net(&fold.train, lambda, alpha, TOL_DEFAULT, MAX_SWEEPS_DEFAULT)?;
                let preds: Vec<f64> =
                    fold.test_rows.iter().map(|r| model.predict(r)).collect();
                rmses.push(rmse(&fold.test_targets, &preds)?);
                r2s.push(r2(&fold.test_targets, &preds)?);
            }
            Ok((mean(&rmses), mean(&r2s)))
        })
        .collect();

    let mut grid = Vec::with_capacity(points.len());
    for (&(lambda, alpha), eval) in points.iter().zip(evals) {
        let (mean_rmse, mean_r2) = eval?;
        grid.push((lambda, alpha, mean_rmse, mean_r2));
    }

    let mut best = grid[0];
    for g in &grid[1..] {
        let better = g.2 < best.2
            || (g.2 == best.2 && (g.0 > best.0 || (g.0 == best.0 && g.1 > best.1)));
        if better {
            best = *g;
        }
    }

    let model = fit_elastic_net(x, best.0, best.1, TOL_DEFAULT, MAX_SWEEPS_DEFAULT)?;
    Ok((model, CVReport { grid, best: (best.0, best.1), folds: k }))
}

/// Root mean squared error.
pub fn rmse(y: &[f64], yhat: &[f64]) -> Result<f64> {
    if y.len() != yhat.len() || y.is_empty() {
        return Err(EfiError::Consistency(format!(
            "rmse needs equal nonzero lengths, got {} and {}",
            y.len(),
            yhat.len()
        )));
    }
    let sse = y.iter().zip(yhat).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    Ok((sse / y.len() as f64).sqrt())
}

/// Coefficient of determination. For a constant target: 0 when residuals
/// are zero, a large negative sentinel otherwise.
pub fn r2(y: &[f64], yhat: &[f64]) -> Result<f64> {
    if y.len() != yhat.len() || y.is_empty() {
        return Err(EfiError::Consistency(format!(
            "r2 needs equal nonzero lengths, got {} and {}",
            y.len(),
            yhat.len()
        )));
    }
    let my = mean(y);
    let ss_res = y.iter().zip(yhat).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    let ss_tot = y.iter().map(|a| (a - my) * (a - my)).sum::<f64>();
    if ss_tot == 0.0 {
        return Ok(if ss_res == 0.0 { 0.0 } else { R2_SENTINEL });
    }
    Ok(1.0 - ss_res / ss_tot)
}

/// A trained attribute model with everything prediction needs: the
/// normalizer slice for its features, the penalty, and the coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct PersistedModel {
    pub attribute: String,
    pub lambda: f64,
    pub alpha: f64,
    pub intercept: f64,
    pub converged: bool,
    /// (feature name, training mean, training std, coefficient).
    pub features: Vec<(String, f64, f64, f64)>,
}

impl PersistedModel {
    /// Prediction from raw (unnormalized) feature values aligned to
    /// `features` order.
    pub fn predict_raw(&self, raw: &[f64]) -> Result<f64> {
        if raw.len() != self.features.len() {
            return Err(EfiError::Dimension(format!(
                "model {} expects {} features, got {}",
                self.attribute,
                self.features.len(),
                raw.len()
            )));
        }
        let mut acc = self.intercept;
        for ((_, m, s, c), v) in self.features.iter().zip(raw) {
            acc += c * (v - m) / s;
        }
        Ok(acc)
    }

    pub fn feature_names(&self) -> Vec<&str> {
        self.features.iter().map(|(n, _, _, _)| n.as_str()).collect()
    }
}

const MODEL_MAGIC: &str = "efi-model/1";

/// Plain-text model document. Numbers use shortest round-trip decimal form,
/// so write-then-read reproduces every value bit for bit.
pub fn write_model(model: &PersistedModel, path: &Path) -> Result<()> {
    use std::io::Write;
    for (name, ..) in &model.features {
        if name.chars().any(char::is_whitespace) || name.is_empty() {
            return Err(EfiError::Format(format!(
                "feature name {name:?} cannot be stored in the model document"
            )));
        }
    }
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "{MODEL_MAGIC}")?;
    writeln!(out, "attribute {}", model.attribute)?;
    writeln!(out, "lambda {}", fmt_f64(model.lambda))?;
    writeln!(out, "alpha {}", fmt_f64(model.alpha))?;
    writeln!(out, "intercept {}", fmt_f64(model.intercept))?;
    writeln!(out, "converged {}", model.converged)?;
    writeln!(out, "features {}", model.features.len())?;
    for (name, m, s, c) in &model.features {
        writeln!(out, "{name} {} {} {}", fmt_f64(*m), fmt_f64(*s), fmt_f64(*c))?;
    }
    Ok(())
}

pub fn read_model(path: &Path) -> Result<PersistedModel> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let magic = lines.next().unwrap_or_default();
    if magic != MODEL_MAGIC {
        return Err(EfiError::Format(format!(
            "{}: not a model document (leading line {magic:?})",
            path.display()
        )));
    }
    let mut field = |key: &str| -> Result<String> {
        let line = lines.next().ok_or_else(|| {
            EfiError::Format(format!("{}: missing {key} line", path.display()))
        })?;
        line.strip_prefix(key)
            .and_then(|rest| rest.strip_prefix(' '))
            .map(str::to_string)
            .ok_or_else(|| {
                EfiError::Format(format!("{}: expected {key} line, got {line:?}", path.display()))
            })
    };
    let attribute = field("attribute")?;
    let parse = |s: String| -> Result<f64> {
        s.parse::<f64>()
            .map_err(|e| EfiError::Format(format!("{}: {e} in {s:?}", path.display())))
    };
    let lambda = parse(field("lambda")?)?;
    let alpha = parse(field("alpha")?)?;
    let intercept = parse(field("intercept")?)?;
    let converged = match field("converged")?.as_str() {
        "true" => true,
        "false" => false,
        other => {
            return Err(EfiError::Format(format!(
                "{}: converged must be true/false, got {other:?}",
                path.display()
            )))
        }
    };
    let count: usize = field("features")?
        .parse()
        .map_err(|e| EfiError::Format(format!("{}: {e}", path.display())))?;
    let mut features = Vec::with_capacity(count);
    for _ in 0..count {
        let line = lines
            .next()
            .ok_or_else(|| EfiError::Format(format!("{}: truncated feature list", path.display())))?;
        let parts: Vec<&str> = line.split(' ').collect();
        if parts.len() != 4 {
            return Err(EfiError::Format(format!(
                "{}: feature line needs 4 fields, got {line:?}",
                path.display()
            )));
        }
        let num = |s: &str| -> Result<f64> {
            s.parse::<f64>()
                .map_err(|e| EfiError::Format(format!("{}: {e} in {s:?}", path.display())))
        };
        features.push((parts[0].to_string(), num(parts[1])?, num(parts[2])?, num(parts[3])?));
    }
    Ok(PersistedModel { attribute, lambda, alpha, intercept, converged, features })
}
