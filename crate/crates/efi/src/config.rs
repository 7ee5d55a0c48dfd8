//! Run configuration: a flat key=value text document with exactly the keys
//! below. Unknown keys are errors so typos surface instead of silently
//! falling back to defaults.

use std::path::{Path, PathBuf};

use crate::error::{EfiError, Result};
use crate::features::{FeatureConfig, StrataSpec};

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub out: PathBuf,
    pub seed: u64,
    /// Explicit input paths; when None the stage looks under `<out>/inputs/`.
    pub plot_csv: Option<PathBuf>,
    pub tree_csv: Option<PathBuf>,
    pub cond_csv: Option<PathBuf>,
    pub cloud: Option<PathBuf>,
    pub band_nir: Option<PathBuf>,
    pub band_red: Option<PathBuf>,
    pub band_blue: Option<PathBuf>,
    /// Terrain model cell side, feet.
    pub dtm_cellsize: f64,
    /// Tier-1 analysis cell size, acres.
    pub analysis_unit_area: f64,
    /// Tier-2 reporting unit mean-area target, acres.
    pub reporting_target_area: f64,
    pub strata: Vec<f64>,
    pub percentiles: Vec<f64>,
    pub cover_threshold: f64,
    pub keep_fraction: f64,
    pub alphas: Vec<f64>,
    pub lambda_count: usize,
    pub lambda_ratio: f64,
    pub cv_folds: usize,
    /// Mean-DBH habitat floor; None computes the project-area Q3.
    pub dia_min: Option<f64>,
    pub cncvr_nesting: f64,
    pub cncvr_foraging: f64,
    pub tpa_min: f64,
    pub softwood_fraction_min: f64,
    /// Simulator knobs.
    pub scene_acres: f64,
    pub pulse_density: f64,
    pub plot_count: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            out: PathBuf::from("efi_out"),
            seed: 42,
            plot_csv: None,
            tree_csv: None,
            cond_csv: None,
            cloud: None,
            band_nir: None,
            band_red: None,
            band_blue: None,
            dtm_cellsize: 15.0,
            analysis_unit_area: 1.0 / 6.0,
            reporting_target_area: 0.5,
            strata: vec![0.0, 6.0, 16.0, 32.0, 64.0, 96.0],
            percentiles: (1..=19).map(|i| i as f64 * 5.0).collect(),
            cover_threshold: 6.0,
            keep_fraction: 0.4375,
            alphas: (1..=10).map(|i| i as f64 / 10.0).collect(),
            lambda_count: 50,
            lambda_ratio: 1e-3,
            cv_folds: 5,
            dia_min: None,
            cncvr_nesting: 60.0,
            cncvr_foraging: 40.0,
            tpa_min: 9.0,
            softwood_fraction_min: 0.5,
            scene_acres: 2000.0,
            pulse_density: 0.02,
            plot_count: 150,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let positive: [(&str, f64); 7] = [
            ("dtm_cellsize", self.dtm_cellsize),
            ("analysis_unit_area", self.analysis_unit_area),
            ("reporting_target_area", self.reporting_target_area),
            ("scene_acres", self.scene_acres),
            ("pulse_density", self.pulse_density),
            ("lambda_ratio", self.lambda_ratio),
            ("keep_fraction", self.keep_fraction),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return Err(EfiError::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.keep_fraction > 1.0 {
            return Err(EfiError::Config(format!(
                "keep_fraction {} outside (0, 1]",
                self.keep_fraction
            )));
        }
        if self.lambda_ratio >= 1.0 {
            return Err(EfiError::Config(format!(
                "lambda_ratio {} outside (0, 1)",
                self.lambda_ratio
            )));
        }
        if self.lambda_count < 2 {
            return Err(EfiError::Config(format!(
                "lambda_count must be at least 2, got {}",
                self.lambda_count
            )));
        }
        if self.cv_folds < 2 {
            return Err(EfiError::Config(format!(
                "cv_folds must be at least 2, got {}",
                self.cv_folds
            )));
        }
        if self.alphas.is_empty() || self.alphas.iter().any(|a| !(0.0..=1.0).contains(a)) {
            return Err(EfiError::Config("alphas must be a nonempty list within [0, 1]".into()));
        }
        if !(self.cover_threshold >= 0.0) {
            return Err(EfiError::Config(format!(
                "cover_threshold must be nonnegative, got {}",
                self.cover_threshold
            )));
        }
        // exercised for range errors; feature stages rebuild it on demand
        StrataSpec::new(self.strata.clone())?;
        if self.percentiles.iter().any(|p| !(0.0..=100.0).contains(p)) {
            return Err(EfiError::Config("percentiles must lie within [0, 100]".into()));
        }
        Ok(())
    }

    pub fn feature_config(&self) -> Result<FeatureConfig> {
        Ok(FeatureConfig {
            strata: StrataSpec::new(self.strata.clone())?,
            percentiles: self.percentiles.clone(),
            cover_threshold: self.cover_threshold,
            bands: vec!["nir".into(), "red".into(), "blue".into()],
        })
    }

    pub fn inputs_dir(&self) -> PathBuf {
        self.out.join("inputs")
    }

    fn input(&self, explicit: &Option<PathBuf>, name: &str) -> PathBuf {
        explicit.clone().unwrap_or_else(|| self.inputs_dir().join(name))
    }

    pub fn plot_csv_path(&self) -> PathBuf {
        self.input(&self.plot_csv, "plot.csv")
    }

    pub fn tree_csv_path(&self) -> PathBuf {
        self.input(&self.tree_csv, "tree.csv")
    }

    pub fn cond_csv_path(&self) -> PathBuf {
        self.input(&self.cond_csv, "cond.csv")
    }

    pub fn cloud_path(&self) -> PathBuf {
        self.input(&self.cloud, "cloud.las")
    }

    pub fn band_paths(&self) -> Vec<(String, PathBuf)> {
        vec![
            ("nir".to_string(), self.input(&self.band_nir, "nir.asc")),
            ("red".to_string(), self.input(&self.band_red, "red.asc")),
            ("blue".to_string(), self.input(&self.band_blue, "blue.asc")),
        ]
    }
}

fn parse_list(value: &str, key: &str) -> Result<Vec<f64>> {
    value
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|e| EfiError::Config(format!("{key}: {e} in {:?}", s.trim())))
        })
        .collect()
}

/// Parses a config document. Lines are `key = value`; blank lines and
/// `#` comments are skipped; every key must be known and appear at most
/// once.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    let mut seen: Vec<String> = Vec::new();
    for (ln, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(EfiError::Config(format!(
                "line {}: expected key = value, got {line:?}",
                ln + 1
            )));
        };
        let key = key.trim();
        let value = value.trim();
        if seen.iter().any(|k| k == key) {
            return Err(EfiError::Config(format!("line {}: duplicate key {key}", ln + 1)));
        }
        seen.push(key.to_string());
        let num = |v: &str| -> Result<f64> {
            v.parse::<f64>().map_err(|e| EfiError::Config(format!("{key}: {e} in {v:?}")))
        };
        let int = |v: &str| -> Result<usize> {
            v.parse::<usize>().map_err(|e| EfiError::Config(format!("{key}: {e} in {v:?}")))
        };
        match key {
            "out" => cfg.out = PathBuf::from(value),
            "seed" => {
                cfg.seed = value
                    .parse::<u64>()
                    .map_err(|e| EfiError::Config(format!("seed: {e} in {value:?}")))?
            }
            "plot_csv" => cfg.plot_csv = Some(PathBuf::from(value)),
            "tree_csv" => cfg.tree_csv = Some(PathBuf::from(value)),
            "cond_csv" => cfg.cond_csv = Some(PathBuf::from(value)),
            "cloud" => cfg.cloud = Some(PathBuf::from(value)),
            "band_nir" => cfg.band_nir = Some(PathBuf::from(value)),
            "band_red" => cfg.band_red = Some(PathBuf::from(value)),
            "band_blue" => cfg.band_blue = Some(PathBuf::from(value)),
            "dtm_cellsize" => cfg.dtm_cellsize = num(value)?,
            "analysis_unit_area" => cfg.analysis_unit_area = num(value)?,
            "reporting_target_area" => cfg.reporting_target_area = num(value)?,
            "strata" => cfg.strata = parse_list(value, key)?,
            "percentiles" => cfg.percentiles = parse_list(value, key)?,
            "cover_threshold" => cfg.cover_threshold = num(value)?,
            "keep_fraction" => cfg.keep_fraction = num(value)?,
            "alphas" => cfg.alphas = parse_list(value, key)?,
            "lambda_count" => cfg.lambda_count = int(value)?,
            "lambda_ratio" => cfg.lambda_ratio = num(value)?,
            "cv_folds" => cfg.cv_folds = int(value)?,
            "dia_min" => cfg.dia_min = Some(num(value)?),
            "cncvr_nesting" => cfg.cncvr_nesting = num(value)?,
            "cncvr_foraging" => cfg.cncvr_foraging = num(value)?,
            "tpa_min" => cfg.tpa_min = num(value)?,
            "softwood_fraction_min" => cfg.softwood_fraction_min = num(value)?,
            "scene_acres" => cfg.scene_acres = num(value)?,
            "pulse_density" => cfg.pulse_density = num(value)?,
            "plot_count" => cfg.plot_count = int(value)?,
            other => {
                return Err(EfiError::Config(format!(
                    "line {}: unknown key {other:?}",
                    ln + 1
                )))
            }
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| EfiError::Config(format!("{}: {e}", path.display())))?;
    parse_config(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        RunConfig::default().validate().unwrap();
    }

    #[test]
    fn parses_known_keys_and_lists() {
        let cfg = parse_config(
            "# comment\n\
             out = /tmp/run1\n\
             seed = 7\n\
             strata = 0, 10, 20\n\
             alphas = 0.5,1.0\n\
             dia_min = 25\n\
             cv_folds = 3\n",
        )
        .unwrap();
        assert_eq!(cfg.out, PathBuf::from("/tmp/run1"));
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.strata, vec![0.0, 10.0, 20.0]);
        assert_eq!(cfg.alphas, vec![0.5, 1.0]);
        assert_eq!(cfg.dia_min, Some(25.0));
        assert_eq!(cfg.cv_folds, 3);
        // untouched keys keep defaults
        assert_eq!(cfg.lambda_count, 50);
    }

    #[test]
    fn unknown_key_is_config_error() {
        let err = parse_config("keep_fracton = 0.4\n").unwrap_err();
        match err {
            EfiError::Config(msg) => assert!(msg.contains("keep_fracton"), "{msg}"),
            other => panic!("expected config error, got {other}"),
        }
    }

    #[test]
    fn duplicate_key_is_config_error() {
        assert!(matches!(parse_config("seed = 1\nseed = 2\n"), Err(EfiError::Config(_))));
    }

    #[test]
    fn out_of_range_values_are_config_errors() {
        assert!(parse_config("keep_fraction = 1.5\n").is_err());
        assert!(parse_config("lambda_ratio = 1.0\n").is_err());
        assert!(parse_config("cv_folds = 1\n").is_err());
        assert!(parse_config("alphas = 0.5, 2.0\n").is_err());
        assert!(parse_config("strata = 5, 3\n").is_err());
    }

    #[test]
    fn input_paths_default_under_out() {
        let cfg = parse_config("out = base\n").unwrap();
        assert_eq!(cfg.cloud_path(), PathBuf::from("base/inputs/cloud.las"));
        let cfg2 = parse_config("cloud = /data/x.las\n").unwrap();
        assert_eq!(cfg2.cloud_path(), PathBuf::from("/data/x.las"));
    }
}
