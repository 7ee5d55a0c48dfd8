//! Acceptance gate: nine numbered criteria covering the solver, the spatial
//! partition, attribute compilation, habitat rules, and the full pipeline.
//! Every criterion prints one PASS/FAIL line; the test fails if any
//! criterion fails. Oracles here are written from scratch (closed-form
//! ridge, exhaustive truth tables, brute-force agglomeration) so they
//! cannot share bugs with the library code under test.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use efi::config::RunConfig;
use efi::geodata::{Extent, GridMeta, SQFT_PER_ACRE};
use efi::habitat::{classify_cso, classify_fisher, CsoClass, FisherClass, HabitatThresholds};
use efi::inference::{aggregate_to_reporting, clamp_attributes, predict_cells, read_unit_csv};
use efi::learn::{
    cv_grid_search, fit_elastic_net, fit_elastic_net_traced, lambda_path, r2, read_model,
    DesignMatrix, PersistedModel,
};
use efi::pipeline;
use efi::plots::{compile_plot_attributes, AttributeVector, PlotRecord, TreeRecord, ATTRIBUTE_NAMES};
use efi::segmentation::{grow_reporting_units, tessellate, Region, Tessellation};

#[test]
fn acceptance_criteria() {
    let criteria: Vec<(&str, fn())> = vec![
        ("1 solver matches closed forms", criterion_1),
        ("2 objective and l1-path monotone", criterion_2),
        ("3 cross-validated support recovery", criterion_3),
        ("4 segmentation partition properties", criterion_4),
        ("5 aggregation conserves area-weighted means", criterion_5),
        ("6 plot compilation fixtures", criterion_6),
        ("7 habitat truth table and monotonicity", criterion_7),
        ("8 end-to-end accuracy and budget", criterion_8),
        ("9 bytewise determinism", criterion_9),
    ];
    let mut failures = Vec::new();
    for (name, run) in criteria {
        match catch_unwind(AssertUnwindSafe(run)) {
            Ok(()) => println!("criterion {name}: PASS"),
            Err(payload) => {
                let msg = payload
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| payload.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_else(|| "panic".to_string());
                println!("criterion {name}: FAIL ({msg})");
                failures.push(name);
            }
        }
    }
    assert!(failures.is_empty(), "failed criteria: {failures:?}");
}

// ---------------------------------------------------------------- criterion 1

fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn random_problem(seed: u64, n: usize, p: usize) -> DesignMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w: Vec<f64> = (0..p).map(|_| 2.0 * standard_normal(&mut rng)).collect();
    let rows: Vec<Vec<f64>> =
        (0..n).map(|_| (0..p).map(|_| standard_normal(&mut rng)).collect()).collect();
    let targets: Vec<f64> = rows
        .iter()
        .map(|r| {
            let signal: f64 = r.iter().zip(&w).map(|(v, wj)| v * wj).sum();
            0.5 + signal + 0.5 * standard_normal(&mut rng)
        })
        .collect();
    let names = (0..p).map(|j| format!("f{j}")).collect();
    DesignMatrix::new(rows, names, targets).unwrap()
}

/// Closed-form ridge with an unpenalized intercept: center the columns and
/// the target, solve (Xc'Xc/n + lambda I) b = Xc'yc/n by Gaussian
/// elimination with partial pivoting, then b0 = ybar - xbar'b.
fn ridge_closed_form(x: &DesignMatrix, lambda: f64) -> (f64, Vec<f64>) {
    let n = x.n();
    let p = x.p();
    let nf = n as f64;
    let xbar: Vec<f64> =
        (0..p).map(|j| x.rows.iter().map(|r| r[j]).sum::<f64>() / nf).collect();
    let ybar = x.targets.iter().sum::<f64>() / nf;
    let mut a = vec![vec![0.0f64; p + 1]; p];
    for i in 0..p {
        for j in 0..p {
            let mut dot = 0.0;
            for r in 0..n {
                dot += (x.rows[r][i] - xbar[i]) * (x.rows[r][j] - xbar[j]);
            }
            a[i][j] = dot / nf;
        }
        a[i][i] += lambda;
        let mut rhs = 0.0;
        for r in 0..n {
            rhs += (x.rows[r][i] - xbar[i]) * (x.targets[r] - ybar);
        }
        a[i][p] = rhs / nf;
    }
    for col in 0..p {
        let pivot = (col..p).max_by(|&r1, &r2| {
            a[r1][col].abs().partial_cmp(&a[r2][col].abs()).unwrap()
        });
        let pivot = pivot.unwrap();
        a.swap(col, pivot);
        assert!(a[col][col].abs() > 1e-12, "singular ridge system");
        for row in (col + 1)..p {
            let f = a[row][col] / a[col][col];
            for k in col..=p {
                a[row][k] -= f * a[col][k];
            }
        }
    }
    let mut beta = vec![0.0f64; p];
    for row in (0..p).rev() {
        let mut acc = a[row][p];
        for k in (row + 1)..p {
            acc -= a[row][k] * beta[k];
        }
        beta[row] = acc / a[row][row];
    }
    let intercept = ybar - xbar.iter().zip(&beta).map(|(m, b)| m * b).sum::<f64>();
    (intercept, beta)
}

fn max_rel_coef_error(got: &[f64], want: &[f64]) -> f64 {
    let scale = want.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
    got.iter().zip(want).map(|(g, w)| (g - w).abs()).fold(0.0f64, f64::max) / scale
}

fn criterion_1() {
    let started = Instant::now();
    for seed in 0..25u64 {
        let x = random_problem(seed, 40, 8);

        for lambda in [0.05, 0.8] {
            let fit = fit_elastic_net(&x, lambda, 0.0, 1e-12, 200_000).unwrap();
            let (b0, beta) = ridge_closed_form(&x, lambda);
            let rel = max_rel_coef_error(&fit.coefficients, &beta);
            assert!(rel <= 1e-4, "seed {seed} lambda {lambda}: ridge rel err {rel:.2e}");
            assert!(
                (fit.intercept - b0).abs() / b0.abs().max(1.0) <= 1e-4,
                "seed {seed}: ridge intercept {} vs {b0}",
                fit.intercept
            );
        }

        let ols = fit_elastic_net(&x, 0.0, 0.7, 1e-12, 200_000).unwrap();
        let (b0, beta) = ridge_closed_form(&x, 0.0);
        let rel = max_rel_coef_error(&ols.coefficients, &beta);
        assert!(rel <= 1e-4, "seed {seed}: OLS rel err {rel:.2e}");
        assert!((ols.intercept - b0).abs() / b0.abs().max(1.0) <= 1e-4);

        // lambda_max from its definition, independent of the library's path
        let ybar = x.targets.iter().sum::<f64>() / x.n() as f64;
        let mut lambda_max: f64 = 0.0;
        for j in 0..x.p() {
            let dot: f64 =
                x.rows.iter().zip(&x.targets).map(|(r, y)| r[j] * (y - ybar)).sum();
            lambda_max = lambda_max.max(dot.abs() / x.n() as f64);
        }
        let lasso = fit_elastic_net(&x, lambda_max, 1.0, 1e-12, 200_000).unwrap();
        assert!(
            lasso.coefficients.iter().all(|&c| c == 0.0),
            "seed {seed}: coefficients nonzero at lambda_max"
        );
    }
    let elapsed = started.elapsed();
    assert!(elapsed < Duration::from_secs(5), "criterion 1 took {elapsed:?}");
}

// ---------------------------------------------------------------- criterion 2

fn criterion_2() {
    for seed in 100..110u64 {
        let x = random_problem(seed, 60, 12);
        let (_, trace) = fit_elastic_net_traced(&x, 0.3, 0.5, 1e-9, 10_000).unwrap();
        assert!(trace.len() >= 2, "seed {seed}: trace too short");
        for w in trace.windows(2) {
            let slack = 1e-10 * w[0].abs().max(1.0);
            assert!(
                w[1] <= w[0] + slack,
                "seed {seed}: objective rose {} -> {}",
                w[0],
                w[1]
            );
        }

        // descending-lambda path: the l1 norm may only grow as lambda shrinks
        for alpha in [1.0, 0.4] {
            let path = lambda_path(&x, alpha, 50, 1e-3).unwrap();
            assert_eq!(path.len(), 50);
            let mut prev_l1 = f64::INFINITY;
            let mut prev_lambda = f64::INFINITY;
            for &lambda in path.iter() {
                assert!(lambda < prev_lambda, "path not strictly descending");
                prev_lambda = lambda;
                let fit = fit_elastic_net(&x, lambda, alpha, 1e-9, 50_000).unwrap();
                let l1: f64 = fit.coefficients.iter().map(|c| c.abs()).sum();
                assert!(
                    l1 >= prev_l1 - 1e-8 || prev_l1 == f64::INFINITY,
                    "seed {seed} alpha {alpha}: l1 shrank {prev_l1} -> {l1} at lambda {lambda}"
                );
                if prev_l1 == f64::INFINITY || l1 > prev_l1 {
                    prev_l1 = l1;
                }
            }
        }
    }
}

// ---------------------------------------------------------------- criterion 3

fn criterion_3() {
    let started = Instant::now();
    let (n_train, n_test, p, active_count) = (150usize, 50usize, 50usize, 5usize);
    let mut passes = 0;
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let n = n_train + n_test;
        let rows: Vec<Vec<f64>> =
            (0..n).map(|_| (0..p).map(|_| standard_normal(&mut rng)).collect()).collect();
        let mut feature_ids: Vec<usize> = (0..p).collect();
        feature_ids.shuffle(&mut rng);
        let active: Vec<usize> = feature_ids[..active_count].to_vec();
        let mut beta_true = vec![0.0f64; p];
        for &j in &active {
            let magnitude = 2.0 + 2.0 * rng.gen::<f64>();
            beta_true[j] = if rng.gen::<bool>() { magnitude } else { -magnitude };
        }
        let signal: Vec<f64> = rows
            .iter()
            .map(|r| r.iter().zip(&beta_true).map(|(v, b)| v * b).sum::<f64>())
            .collect();
        let sbar = signal.iter().sum::<f64>() / n as f64;
        let svar = signal.iter().map(|s| (s - sbar).powi(2)).sum::<f64>() / n as f64;
        let sigma = (svar / 10.0).sqrt(); // SNR 10
        let y: Vec<f64> =
            signal.iter().map(|s| s + sigma * standard_normal(&mut rng)).collect();

        let names: Vec<String> = (0..p).map(|j| format!("f{j}")).collect();
        let train = DesignMatrix::new(
            rows[..n_train].to_vec(),
            names.clone(),
            y[..n_train].to_vec(),
        )
        .unwrap();
        let (model, _) = cv_grid_search(&train, &[0.5, 1.0], 50, 5, seed).unwrap();

        let recovered =
            active.iter().filter(|&&j| model.coefficients[j] != 0.0).count();
        let yhat: Vec<f64> = rows[n_train..].iter().map(|r| model.predict(r)).collect();
        let held_out_r2 = r2(&y[n_train..], &yhat).unwrap();
        if recovered >= 4 && held_out_r2 >= 0.8 {
            passes += 1;
        } else {
            println!(
                "  criterion 3 seed {seed}: recovered {recovered}/5, held-out r2 {held_out_r2:.3}"
            );
        }
    }
    let elapsed = started.elapsed();
    assert!(passes >= 9, "only {passes}/10 seeds recovered the support");
    assert!(elapsed < Duration::from_secs(60), "criterion 3 took {elapsed:?}");
}

// ---------------------------------------------------------------- criterion 4

fn check_partition(regions: &[Region], tess: &Tessellation) {
    let mut claims = vec![0usize; tess.ncells()];
    for r in regions {
        assert!(!r.members.is_empty(), "region {} empty", r.id);
        for &m in &r.members {
            claims[tess.meta.linear(m)] += 1;
        }
    }
    for (i, &c) in claims.iter().enumerate() {
        assert!(c == 1, "cell {i} claimed {c} times");
    }
}

fn check_connected(regions: &[Region], tess: &Tessellation) {
    for r in regions {
        let set: std::collections::BTreeSet<usize> =
            r.members.iter().map(|&m| tess.meta.linear(m)).collect();
        let start = *set.iter().next().unwrap();
        let mut stack = vec![start];
        let mut seen = std::collections::BTreeSet::from([start]);
        while let Some(i) = stack.pop() {
            let cell = tess.meta.from_linear(i);
            let mut visit = |j: usize| {
                if set.contains(&j) && seen.insert(j) {
                    stack.push(j);
                }
            };
            if cell.col > 0 {
                visit(i - 1);
            }
            if cell.col + 1 < tess.meta.ncols {
                visit(i + 1);
            }
            if cell.row > 0 {
                visit(i - tess.meta.ncols);
            }
            if cell.row + 1 < tess.meta.nrows {
                visit(i + tess.meta.ncols);
            }
        }
        assert_eq!(seen.len(), set.len(), "region {} not 4-connected", r.id);
    }
}

/// Reference agglomeration: rescan every adjacent pair each step and merge
/// the cheapest, ties to the lowest (id, id) pair. Quadratic, only usable
/// on tiny grids; deliberately shares no code with the library.
fn brute_force_agglomeration(
    tess: &Tessellation,
    chm: &[f64],
    ndvi: &[f64],
    target: f64,
) -> Vec<Vec<usize>> {
    let n = tess.ncells();
    let cell_acres = tess.cell_area_acres();
    let zscore = |vals: &[f64]| -> Vec<f64> {
        let m = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / vals.len() as f64;
        let s = var.sqrt();
        if s == 0.0 {
            vec![0.0; vals.len()]
        } else {
            vals.iter().map(|v| (v - m) / s).collect()
        }
    };
    let c1 = zscore(chm);
    let c2 = zscore(ndvi);
    let mut regions: Vec<Option<Vec<usize>>> = (0..n).map(|i| Some(vec![i])).collect();
    let mut live = n;
    let adjacent = |ra: &[usize], rb: &[usize]| {
        ra.iter().any(|&i| {
            rb.iter().any(|&j| {
                let (a, b) = (tess.meta.from_linear(i), tess.meta.from_linear(j));
                (a.row == b.row && a.col.abs_diff(b.col) == 1)
                    || (a.col == b.col && a.row.abs_diff(b.row) == 1)
            })
        })
    };
    while live > 1 && (n as f64 * cell_acres) / (live as f64) < target {
        let mut best: Option<(f64, usize, usize)> = None;
        for a in 0..n {
            let Some(ra) = &regions[a] else { continue };
            for b in (a + 1)..n {
                let Some(rb) = &regions[b] else { continue };
                if !adjacent(ra, rb) {
                    continue;
                }
                let centroid = |r: &[usize]| {
                    let k = r.len() as f64;
                    (
                        r.iter().map(|&i| c1[i]).sum::<f64>() / k,
                        r.iter().map(|&i| c2[i]).sum::<f64>() / k,
                    )
                };
                let (a1, a2) = centroid(ra);
                let (b1, b2) = centroid(rb);
                let d = (a1 - b1).powi(2) + (a2 - b2).powi(2);
                let cost = (ra.len() + rb.len()) as f64 * cell_acres * d;
                let better = match best {
                    None => true,
                    Some((c, ba, bb)) => cost < c || (cost == c && (a, b) < (ba, bb)),
                };
                if better {
                    best = Some((cost, a, b));
                }
            }
        }
        let (_, a, b) = best.expect("live > 1 implies an adjacent pair");
        let rb = regions[b].take().unwrap();
        regions[a].as_mut().unwrap().extend(rb);
        live -= 1;
    }
    regions
        .into_iter()
        .flatten()
        .map(|mut m| {
            m.sort_unstable();
            m
        })
        .collect()
}

fn criterion_4() {
    // pipeline segmentation of a simulated 100-acre scene
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig {
        out: dir.path().to_path_buf(),
        seed: 4,
        scene_acres: 100.0,
        pulse_density: 0.03,
        plot_count: 20,
        ..RunConfig::default()
    };
    pipeline::cmd_simulate(&cfg).unwrap();
    pipeline::cmd_segment(&cfg).unwrap();
    let tess = pipeline::read_tessellation(&pipeline::tessellation_path(&cfg)).unwrap();
    let regions = pipeline::read_regions(&tess.meta, &pipeline::regions_path(&cfg)).unwrap();
    check_partition(&regions, &tess);
    check_connected(&regions, &tess);
    let cell_acres = tess.cell_area_acres();
    assert!((cell_acres - 1.0 / 6.0).abs() < 1e-12);
    let mean_area = tess.ncells() as f64 * cell_acres / regions.len() as f64;
    assert!(
        (0.5..0.5 + cell_acres).contains(&mean_area),
        "mean region area {mean_area}"
    );

    // two homogeneous halves: no region spans the contrast boundary
    let side = (100.0 * SQFT_PER_ACRE).sqrt();
    let tess2 = tessellate(&Extent::new(0.0, 0.0, side, side), 1.0 / 6.0).unwrap();
    let ncols = tess2.meta.ncols;
    let mid = ncols / 2;
    let chm: Vec<f64> = (0..tess2.ncells())
        .map(|i| if i % ncols < mid { 12.0 } else { 85.0 })
        .collect();
    let ndvi = vec![0.45; tess2.ncells()];
    let half_area = tess2.ncells() as f64 * tess2.cell_area_acres() / 2.0;
    let regions2 = grow_reporting_units(&tess2, &chm, &ndvi, half_area * 0.9).unwrap();
    check_partition(&regions2, &tess2);
    for r in &regions2 {
        let left = r.members.iter().all(|m| m.col < mid);
        let right = r.members.iter().all(|m| m.col >= mid);
        assert!(left || right, "region {} spans the boundary", r.id);
    }

    // 4x4 downscale against the brute-force oracle
    let cellsize = (0.1 * SQFT_PER_ACRE).sqrt();
    let tess3 = Tessellation {
        meta: GridMeta { ncols: 4, nrows: 4, x_origin: 0.0, y_origin: 0.0, cellsize },
    };
    let chm3: Vec<f64> =
        (0..16).map(|i| if i % 4 < 2 { 10.0 } else { 80.0 }).collect();
    let ndvi3 = vec![0.4; 16];
    let fast = grow_reporting_units(&tess3, &chm3, &ndvi3, 0.8).unwrap();
    let slow = brute_force_agglomeration(&tess3, &chm3, &ndvi3, 0.8);
    let fast_sets: Vec<Vec<usize>> = fast
        .iter()
        .map(|r| r.members.iter().map(|&m| tess3.meta.linear(m)).collect())
        .collect();
    assert_eq!(fast_sets, slow, "heap agglomeration diverged from brute force");
    for r in &fast {
        assert!(
            r.members.iter().all(|m| m.col < 2) || r.members.iter().all(|m| m.col >= 2),
            "downscale region spans the boundary"
        );
    }
}

// ---------------------------------------------------------------- criterion 5

fn weighted_means(attrs: &[AttributeVector], areas: &[f64]) -> [f64; 8] {
    let total: f64 = areas.iter().sum();
    let mut out = [0.0f64; 8];
    for (v, &a) in attrs.iter().zip(areas) {
        for (slot, x) in v.as_array().iter().enumerate() {
            out[slot] += a * x;
        }
    }
    for o in out.iter_mut() {
        *o /= total;
    }
    out
}

fn assert_conserved(cell_attrs: &[AttributeVector], cell_areas: &[f64], units: &[efi::inference::PredictedUnit], label: &str) {
    let cell_means = weighted_means(cell_attrs, cell_areas);
    let unit_attrs: Vec<AttributeVector> = units.iter().map(|u| u.attributes).collect();
    let unit_areas: Vec<f64> = units.iter().map(|u| u.area).collect();
    let unit_means = weighted_means(&unit_attrs, &unit_areas);
    for (slot, name) in ATTRIBUTE_NAMES.iter().enumerate() {
        let rel = (cell_means[slot] - unit_means[slot]).abs()
            / cell_means[slot].abs().max(1e-30);
        assert!(
            rel <= 1e-9,
            "{label}: {name} cell mean {} vs unit mean {} (rel {rel:.2e})",
            cell_means[slot],
            unit_means[slot]
        );
    }
}

fn criterion_5() {
    // the end-to-end scene, reconstructed from its persisted artifacts
    let e2e = e2e_fixture();
    let cfg = &e2e.cfg;
    let (names, rows) =
        pipeline::read_feature_table(&pipeline::features_path(cfg)).unwrap();
    let tess = pipeline::read_tessellation(&pipeline::tessellation_path(cfg)).unwrap();
    let regions = pipeline::read_regions(&tess.meta, &pipeline::regions_path(cfg)).unwrap();
    let mut models: BTreeMap<String, PersistedModel> = BTreeMap::new();
    for attr in ATTRIBUTE_NAMES {
        models.insert(attr.to_string(), read_model(&pipeline::model_path(cfg, attr)).unwrap());
    }
    let cells: Vec<AttributeVector> = predict_cells(&models, &names, &rows)
        .unwrap()
        .iter()
        .map(clamp_attributes)
        .collect();
    let areas = vec![tess.cell_area_acres(); cells.len()];
    let units = aggregate_to_reporting(&cells, &areas, &regions, &tess.meta).unwrap();
    assert_conserved(&cells, &areas, &units, "end-to-end scene");

    // randomized scenes: arbitrary attributes over row-band partitions
    for seed in 0..3u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(50 + seed);
        let (ncols, nrows) = (4 + seed as usize, 5 + seed as usize);
        let meta = GridMeta {
            ncols,
            nrows,
            x_origin: 0.0,
            y_origin: 0.0,
            cellsize: 80.0,
        };
        let n = meta.ncells();
        let cells: Vec<AttributeVector> = (0..n)
            .map(|_| {
                let mut vals = [0.0f64; 8];
                for v in vals.iter_mut() {
                    *v = 300.0 * rng.gen::<f64>();
                }
                AttributeVector::from_array(vals)
            })
            .collect();
        let areas = vec![80.0 * 80.0 / SQFT_PER_ACRE; n];
        let regions: Vec<Region> = (0..nrows)
            .map(|r| {
                let members: Vec<_> = (0..ncols)
                    .map(|c| meta.from_linear(r * ncols + c))
                    .collect();
                Region {
                    id: r * ncols,
                    members,
                    centroid_features: (0.0, 0.0),
                    area: ncols as f64 * areas[0],
                }
            })
            .collect();
        let units = aggregate_to_reporting(&cells, &areas, &regions, &meta).unwrap();
        assert_conserved(&cells, &areas, &units, "random scene");
    }
}

// ---------------------------------------------------------------- criterion 6

fn tree(status: i32, species: i32, dbh: f64, height: f64, exp: f64, carbon: f64) -> TreeRecord {
    TreeRecord {
        plot_id: "P1".to_string(),
        status,
        species_code: species,
        dbh,
        height,
        tpa_expansion: exp,
        carbon_ag: carbon,
    }
}

fn plot(cover: Option<f64>) -> PlotRecord {
    PlotRecord { plot_id: "P1".to_string(), x: 0.0, y: 0.0, measured_canopy_cover: cover }
}

fn criterion_6() {
    const K: f64 = 0.005454154;

    // three trees: live softwood, live hardwood, one snag
    let trees = vec![
        tree(1, 122, 20.0, 100.0, 6.0, 1000.0),
        tree(1, 312, 10.0, 40.0, 6.0, 150.0),
        tree(2, 122, 15.0, 60.0, 4.0, 300.0),
    ];
    let got = compile_plot_attributes(&plot(Some(55.5)), &trees).unwrap();
    // basal area replicated with the same association: ((K * d) * d) * exp
    assert_eq!(got.bapa, K * 20.0 * 20.0 * 6.0 + K * 10.0 * 10.0 * 6.0);
    assert_eq!(got.bapa_softwood, K * 20.0 * 20.0 * 6.0);
    assert_eq!(got.bapa_snag, K * 15.0 * 15.0 * 4.0);
    assert_eq!(got.tpa, 12.0);
    assert_eq!(got.ht, (100.0 * 6.0 + 40.0 * 6.0) / 12.0);
    assert_eq!(got.dia, (20.0 * 6.0 + 10.0 * 6.0) / 12.0);
    assert_eq!(got.cagpa, (1000.0 * 6.0 + 150.0 * 6.0) / 2000.0);
    assert_eq!(got.cncvr_pct, 55.5);

    // documented two-tree value
    let two = vec![tree(1, 122, 10.0, 40.0, 6.0, 100.0), tree(1, 122, 20.0, 90.0, 6.0, 800.0)];
    let got2 = compile_plot_attributes(&plot(None), &two).unwrap();
    assert!((got2.bapa - 16.362).abs() <= 1e-2, "two-tree bapa {}", got2.bapa);

    // snag-only plot
    let snag = vec![tree(2, 122, 20.0, 90.0, 6.0, 800.0)];
    let got3 = compile_plot_attributes(&plot(None), &snag).unwrap();
    assert_eq!(got3.bapa, 0.0);
    assert_eq!(got3.tpa, 0.0);
    assert!((got3.bapa_snag - 13.090).abs() <= 1e-2, "snag bapa_snag {}", got3.bapa_snag);

    // empty plot
    let got4 = compile_plot_attributes(&plot(None), &[]).unwrap();
    assert_eq!(got4.as_array(), [0.0; 8]);
}

// ---------------------------------------------------------------- criterion 7

#[derive(Debug, PartialEq, Clone, Copy)]
enum OracleCso {
    Nesting,
    Foraging,
    Unlikely,
}
#[derive(Debug, PartialEq, Clone, Copy)]
enum OracleFisher {
    Likely,
    Unlikely,
}

/// Straight transcription of the suitability table: strict inequalities,
/// softwood share of total basal area, no stem-density rule for fisher.
fn oracle_cso(cover: f64, tpa: f64, dia: f64, sw_ba: f64, bapa: f64) -> OracleCso {
    let structure = tpa > 9.0 && dia > 25.0 && sw_ba > 0.5 * bapa;
    if structure && cover > 60.0 {
        OracleCso::Nesting
    } else if structure && cover > 40.0 {
        OracleCso::Foraging
    } else {
        OracleCso::Unlikely
    }
}

fn oracle_fisher(cover: f64, dia: f64, sw_ba: f64, bapa: f64) -> OracleFisher {
    if cover > 60.0 && dia > 25.0 && sw_ba > 0.5 * bapa {
        OracleFisher::Likely
    } else {
        OracleFisher::Unlikely
    }
}

fn vector(cover: f64, tpa: f64, dia: f64, sw_ba: f64, bapa: f64) -> AttributeVector {
    AttributeVector::from_array([bapa, sw_ba, 0.0, 80.0, dia, tpa, 5.0, cover])
}

fn criterion_7() {
    let th = HabitatThresholds {
        cncvr_nesting: 60.0,
        cncvr_foraging: 40.0,
        tpa_min: 9.0,
        dia_min: 25.0,
        softwood_fraction_min: 0.5,
    };
    let bapa = 100.0;
    let mut combos = 0usize;
    for nesting_cover in [59.0, 60.0, 61.0] {
        for tpa in [8.0, 9.0, 10.0] {
            for dia in [24.0, 25.0, 26.0] {
                for frac in [0.49, 0.50, 0.51] {
                    for foraging_cover in [39.0, 40.0, 41.0] {
                        let sw_ba = bapa * frac;
                        for cover in [nesting_cover, foraging_cover] {
                            let attrs = vector(cover, tpa, dia, sw_ba, bapa);
                            let want_cso = oracle_cso(cover, tpa, dia, sw_ba, bapa);
                            let got_cso = classify_cso(&attrs, &th);
                            let matches = matches!(
                                (want_cso, got_cso),
                                (OracleCso::Nesting, CsoClass::Nesting)
                                    | (OracleCso::Foraging, CsoClass::Foraging)
                                    | (OracleCso::Unlikely, CsoClass::Unlikely)
                            );
                            assert!(
                                matches,
                                "cso mismatch at cover {cover} tpa {tpa} dia {dia} frac {frac}: \
                                 oracle {want_cso:?}, got {got_cso:?}"
                            );
                            let want_fisher = oracle_fisher(cover, dia, sw_ba, bapa);
                            let got_fisher = classify_fisher(&attrs, &th);
                            let fisher_matches = matches!(
                                (want_fisher, got_fisher),
                                (OracleFisher::Likely, FisherClass::Likely)
                                    | (OracleFisher::Unlikely, FisherClass::Unlikely)
                            );
                            assert!(
                                fisher_matches,
                                "fisher mismatch at cover {cover} dia {dia} frac {frac}"
                            );
                        }
                        combos += 1;
                    }
                }
            }
        }
    }
    assert_eq!(combos, 243, "boundary grid size");

    // monotonicity in cover over random vectors
    let mut rng = ChaCha8Rng::seed_from_u64(7777);
    for _ in 0..10_000 {
        let bapa = 300.0 * rng.gen::<f64>();
        let sw_ba = bapa * rng.gen::<f64>();
        let dia = 40.0 * rng.gen::<f64>();
        let tpa = 300.0 * rng.gen::<f64>();
        let cover = 100.0 * rng.gen::<f64>();
        let bump = (100.0 - cover) * rng.gen::<f64>();
        let lo = vector(cover, tpa, dia, sw_ba, bapa);
        let hi = vector(cover + bump, tpa, dia, sw_ba, bapa);
        assert!(
            classify_cso(&hi, &th) >= classify_cso(&lo, &th),
            "cso demoted when cover rose: {lo:?} -> {hi:?}"
        );
        assert!(
            classify_fisher(&hi, &th) >= classify_fisher(&lo, &th),
            "fisher demoted when cover rose"
        );
    }
}

// ---------------------------------------------------------------- criterion 8

struct EndToEnd {
    // holds the artifacts alive for criteria 5, 8, and 9
    _dir: tempfile::TempDir,
    cfg: RunConfig,
    elapsed: Duration,
}

static E2E: OnceLock<std::result::Result<EndToEnd, String>> = OnceLock::new();

fn e2e_fixture() -> &'static EndToEnd {
    E2E.get_or_init(|| {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let cfg = RunConfig {
            out: dir.path().to_path_buf(),
            seed: 42,
            ..RunConfig::default()
        };
        let started = Instant::now();
        pipeline::cmd_run(&cfg).map_err(|e| e.to_string())?;
        Ok(EndToEnd { _dir: dir, cfg, elapsed: started.elapsed() })
    })
    .as_ref()
    .expect("end-to-end pipeline run failed")
}

struct TruthPatch {
    rect: Extent,
    bapa: f64,
}

fn read_truth_patches(path: &Path) -> Vec<TruthPatch> {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap();
    assert!(header.starts_with("patch,xmin,ymin,xmax,ymax,area_ac,bapa"), "{header}");
    lines
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            let num = |i: usize| f[i].parse::<f64>().unwrap();
            TruthPatch {
                rect: Extent::new(num(1), num(2), num(3), num(4)),
                bapa: num(6),
            }
        })
        .collect()
}

fn read_metrics(path: &Path) -> BTreeMap<String, (f64, f64)> {
    let text = std::fs::read_to_string(path).unwrap();
    let mut out = BTreeMap::new();
    for line in text.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        out.insert(
            f[0].to_string(),
            (f[3].parse::<f64>().unwrap(), f[4].parse::<f64>().unwrap()),
        );
    }
    out
}

fn criterion_8() {
    let e2e = e2e_fixture();
    let cfg = &e2e.cfg;
    assert!(
        e2e.elapsed < Duration::from_secs(300),
        "pipeline took {:?}",
        e2e.elapsed
    );

    // simulate produced the agreed scene shape
    assert!(cfg.scene_acres >= 1990.0 && cfg.plot_count >= 120);
    let truth = read_truth_patches(&cfg.inputs_dir().join("truth_patches.csv"));
    assert_eq!(truth.len(), 3, "three structurally distinct patches");

    // model quality on the two headline attributes
    let metrics = read_metrics(&pipeline::metrics_path(cfg));
    for attr in ["cncvr_pct", "ht"] {
        let (_, cv_r2) = metrics[attr];
        assert!(cv_r2 >= 0.7, "{attr} cv r2 {cv_r2}");
    }

    // patch-mean basal area against synthetic truth
    let tess = pipeline::read_tessellation(&pipeline::tessellation_path(cfg)).unwrap();
    let regions = pipeline::read_regions(&tess.meta, &pipeline::regions_path(cfg)).unwrap();
    let units = read_unit_csv(&pipeline::predictions_csv_path(cfg)).unwrap();
    assert_eq!(regions.len(), units.len());
    let mut sums = vec![(0.0f64, 0.0f64); truth.len()];
    for (region, unit) in regions.iter().zip(&units) {
        let (mut cx, mut cy) = (0.0, 0.0);
        for &m in &region.members {
            let (x, y) = tess.meta.cell_center(m);
            cx += x;
            cy += y;
        }
        cx /= region.members.len() as f64;
        cy /= region.members.len() as f64;
        let patch = truth.iter().position(|p| {
            cx >= p.rect.xmin && cx < p.rect.xmax && cy >= p.rect.ymin && cy < p.rect.ymax
        });
        let Some(pi) = patch else { continue };
        sums[pi].0 += unit.attributes.bapa * unit.area;
        sums[pi].1 += unit.area;
    }
    for (pi, patch) in truth.iter().enumerate() {
        let (wsum, area) = sums[pi];
        assert!(area > 0.0, "patch {pi} received no units");
        let pred = wsum / area;
        let rel = (pred - patch.bapa).abs() / patch.bapa;
        assert!(
            rel <= 0.25,
            "patch {pi}: predicted mean bapa {pred:.2} vs truth {:.2} (rel {rel:.3})",
            patch.bapa
        );
    }

    // acreage conservation between classification and the unit partition
    let scene_acres: f64 = units.iter().map(|u| u.area).sum();
    let acreage = std::fs::read_to_string(pipeline::acreage_path(cfg)).unwrap();
    let mut species_acres: BTreeMap<String, f64> = BTreeMap::new();
    let mut species_units: BTreeMap<String, usize> = BTreeMap::new();
    for line in acreage.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        *species_acres.entry(f[0].to_string()).or_default() += f[2].parse::<f64>().unwrap();
        *species_units.entry(f[0].to_string()).or_default() +=
            f[3].parse::<usize>().unwrap();
    }
    assert_eq!(species_acres.len(), 2);
    for (species, acres) in &species_acres {
        let rel = (acres - scene_acres).abs() / scene_acres;
        assert!(
            rel <= 1e-6,
            "{species}: acreage total {acres} vs scene {scene_acres} (rel {rel:.2e})"
        );
        assert_eq!(species_units[species], units.len(), "{species} unit count");
    }
}

// ---------------------------------------------------------------- criterion 9

fn criterion_9() {
    let first = e2e_fixture();
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig {
        out: dir.path().to_path_buf(),
        seed: first.cfg.seed,
        ..RunConfig::default()
    };
    pipeline::cmd_run(&cfg).unwrap();

    let compare = [
        "inputs/plot.csv",
        "inputs/tree.csv",
        "inputs/cond.csv",
        "inputs/truth_patches.csv",
        "features.csv",
        "plot_attributes.csv",
        "metrics.csv",
        "predictions.csv",
        "predictions.geojson",
        "habitat_units.csv",
        "acreage.csv",
        "habitat.geojson",
    ];
    for rel in compare {
        let a = std::fs::read(first.cfg.out.join(rel)).unwrap();
        let b = std::fs::read(cfg.out.join(rel)).unwrap();
        assert!(a == b, "{rel} differs between identical-seed runs");
    }
}
