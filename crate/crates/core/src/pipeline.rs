//! Declarative experiments: data → POD → placement → reconstruction →
//! uncertainty, with every artifact written to one output directory.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::io;
use crate::oracle::{self, EnumerationOptions, Histogram, DEFAULT_BINS, DEFAULT_CAP};
use crate::placement::{ConstraintKind, ConstraintSpec, GridGeometry, Placement};
use crate::pod::{compute_pod, SnapshotMatrix};
use crate::qr::{log_det_objective, place_sensors};
use crate::reconstruct::{relative_error, GappyEstimator};
use crate::sim::{generate_lti, simulate_heat_split, HeatPlateConfig};
use crate::uncertainty::{noise_vector, signal_variance, uncertainty_report, UncertaintyReport};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DataSource {
    /// Snapshot file (`.csv` or binary), optionally with a separate test set.
    File {
        path: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        test_path: Option<PathBuf>,
        /// `[nx, ny]` when the states are a flattened grid.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        grid: Option<[usize; 2]>,
    },
    Heat {
        #[serde(default)]
        plate: HeatPlateConfig,
        #[serde(default)]
        test_steps: usize,
    },
    Lti {
        #[serde(default = "default_lti_n")]
        n: usize,
        #[serde(default = "default_lti_n")]
        inputs: usize,
        #[serde(default = "default_lti_n")]
        outputs: usize,
        #[serde(default = "default_lti_steps")]
        steps: usize,
        #[serde(default)]
        test_steps: usize,
    },
}

fn default_lti_n() -> usize {
    25
}

fn default_lti_steps() -> usize {
    200
}

/// Constraint as written by a user: 1-based indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstraintConfig {
    pub kind: ConstraintKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub region: Option<Vec<usize>>,
    /// Heat plates only: region made of the leftmost columns.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub region_columns: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budget: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predetermined: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_distance: Option<f64>,
}

impl Default for ConstraintConfig {
    fn default() -> Self {
        Self {
            kind: ConstraintKind::Unconstrained,
            region: None,
            region_columns: None,
            budget: None,
            predetermined: None,
            min_distance: None,
        }
    }
}

impl ConstraintConfig {
    pub fn resolve(&self, n: usize, geometry: &GridGeometry) -> Result<ConstraintSpec> {
        let region = || -> Result<Vec<usize>> {
            match (&self.region, self.region_columns) {
                (Some(r), None) => io::indices_from_one_based(r, n),
                (None, Some(cols)) => {
                    let (nx, ny) = grid_shape(geometry).ok_or_else(|| {
                        Error::Config("region_columns needs a two-dimensional grid".into())
                    })?;
                    if cols == 0 || cols > nx {
                        return Err(Error::Config(format!(
                            "region_columns {cols} is outside 1..={nx}"
                        )));
                    }
                    Ok((0..ny).flat_map(|y| (0..cols).map(move |x| y * nx + x)).collect())
                }
                (Some(_), Some(_)) => Err(Error::Config(
                    "give either region or region_columns, not both".into(),
                )),
                (None, None) => Err(Error::Config(format!(
                    "{} constraint needs a region",
                    self.kind.name()
                ))),
            }
        };
        let budget = || {
            self.budget.ok_or_else(|| {
                Error::Config(format!("{} constraint needs a budget", self.kind.name()))
            })
        };
        match self.kind {
            ConstraintKind::Unconstrained => Ok(ConstraintSpec::unconstrained()),
            ConstraintKind::RegionMax => ConstraintSpec::region_max(region()?, budget()?),
            ConstraintKind::RegionExact => ConstraintSpec::region_exact(region()?, budget()?),
            ConstraintKind::Predetermined => {
                let fixed = self.predetermined.as_ref().ok_or_else(|| {
                    Error::Config("predetermined constraint needs sensor locations".into())
                })?;
                ConstraintSpec::predetermined(io::indices_from_one_based(fixed, n)?)
            }
            ConstraintKind::MinDistance => {
                let d = self.min_distance.ok_or_else(|| {
                    Error::Config("min-distance constraint needs a distance".into())
                })?;
                ConstraintSpec::min_distance(d, geometry.clone())
            }
        }
    }
}

fn grid_shape(geometry: &GridGeometry) -> Option<(usize, usize)> {
    if geometry.dim() != 2 || geometry.is_empty() {
        return None;
    }
    let last = geometry.coord(geometry.len() - 1);
    let (nx, ny) = (last[0] as usize + 1, last[1] as usize + 1);
    (nx * ny == geometry.len()).then_some((nx, ny))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleConfig {
    #[serde(default = "default_bins")]
    pub bins: usize,
    #[serde(default = "default_cap")]
    pub cap: u64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            bins: DEFAULT_BINS,
            cap: DEFAULT_CAP,
        }
    }
}

fn default_bins() -> usize {
    DEFAULT_BINS
}

fn default_cap() -> u64 {
    DEFAULT_CAP
}

fn default_eta() -> f64 {
    0.95
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub rank: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_std: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snr_db: Option<f64>,
    /// Confidence level of the reported ellipsoid volume.
    #[serde(default = "default_eta")]
    pub eta: f64,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    pub source: DataSource,
    #[serde(default)]
    pub constraint: ConstraintConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle: Option<OracleConfig>,
}

impl ExperimentConfig {
    /// Unconstrained, noiseless, seed 0, output `out`.
    pub fn new(source: DataSource, rank: usize) -> Self {
        Self {
            rank,
            seed: 0,
            noise_std: None,
            snr_db: None,
            eta: default_eta(),
            output: default_output(),
            source,
            constraint: ConstraintConfig::default(),
            oracle: None,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| {
            Error::Config(e.to_string().lines().collect::<Vec<_>>().join(" "))
        })?;
        config.check()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path)?)
    }

    /// Normalized TOML; the manifest hash is taken over this text.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn hash(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.to_toml()?.as_bytes())))
    }

    pub fn check(&self) -> Result<()> {
        if self.noise_std.is_some() && self.snr_db.is_some() {
            return Err(Error::Config("give either noise_std or snr_db, not both".into()));
        }
        if let Some(b) = self.noise_std {
            if !(b >= 0.0) || !b.is_finite() {
                return Err(Error::Config(format!("noise_std {b} must be finite and nonnegative")));
            }
        }
        if let Some(s) = self.snr_db {
            if !s.is_finite() {
                return Err(Error::Config("snr_db must be finite".into()));
            }
        }
        if !(self.eta > 0.0 && self.eta < 1.0) {
            return Err(Error::Config(format!("eta {} must lie in (0, 1)", self.eta)));
        }
        if let DataSource::File { path, test_path, .. } = &self.source {
            for p in std::iter::once(path).chain(test_path) {
                if !p.exists() {
                    return Err(Error::Config(format!("snapshot file {} does not exist", p.display())));
                }
            }
        }
        Ok(())
    }
}

/// Training data, optional held-out data and the sensor geometry.
pub struct Dataset {
    pub train: SnapshotMatrix,
    pub test: Option<SnapshotMatrix>,
    pub geometry: GridGeometry,
}

pub fn load_dataset(source: &DataSource, seed: u64) -> Result<Dataset> {
    match source {
        DataSource::File {
            path,
            test_path,
            grid,
        } => {
            let train = io::read_snapshots(path)?;
            let test = test_path.as_deref().map(io::read_snapshots).transpose()?;
            let geometry = match grid {
                Some([nx, ny]) => {
                    if nx * ny != train.n() {
                        return Err(Error::Config(format!(
                            "grid {nx}x{ny} does not match state dimension {}",
                            train.n()
                        )));
                    }
                    GridGeometry::grid(*nx, *ny)
                }
                None => GridGeometry::line(train.n()),
            };
            Ok(Dataset {
                train,
                test,
                geometry,
            })
        }
        DataSource::Heat { plate, test_steps } => {
            let (train, test) = simulate_heat_split(plate, *test_steps)?;
            Ok(Dataset {
                train,
                test,
                geometry: plate.geometry(),
            })
        }
        DataSource::Lti {
            n,
            inputs,
            outputs,
            steps,
            test_steps,
        } => {
            let all = generate_lti(seed, *n, *inputs, *outputs)?.snapshots(steps + test_steps)?;
            let train = all.columns(0..*steps)?;
            let test = if *test_steps > 0 {
                Some(all.columns(*steps..steps + test_steps)?)
            } else {
                None
            };
            Ok(Dataset {
                train,
                test,
                geometry: GridGeometry::line(*n),
            })
        }
    }
}

/// In-memory results of a pipeline run.
#[derive(Debug, Clone)]
pub struct PipelineOutcome {
    pub placement: Placement,
    pub objective: f64,
    pub beta: f64,
    /// Relative error in percent per evaluated snapshot.
    pub errors: Vec<f64>,
    pub uncertainty: UncertaintyReport,
    pub percentile: Option<f64>,
    pub histogram: Option<Histogram>,
    pub files: Vec<PathBuf>,
}

trait Staged<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T> Staged<T> for Result<T> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| e.at_stage(stage))
    }
}

pub fn run_pipeline(config: &ExperimentConfig) -> Result<PipelineOutcome> {
    config.check().stage("config")?;
    let data = load_dataset(&config.source, config.seed).stage("data")?;
    let basis = compute_pod(&data.train, config.rank).stage("pod")?;
    let n = basis.n();
    let constraint = config.constraint.resolve(n, &data.geometry).stage("place")?;
    let placement = place_sensors(&basis, &constraint).stage("place")?.into_placement();
    let objective = log_det_objective(&basis, &placement).stage("place")?;

    let eval = data.test.as_ref().unwrap_or(&data.train);
    let beta = match (config.noise_std, config.snr_db) {
        (_, Some(db)) => {
            let variance = signal_variance(eval, &placement).stage("reconstruct")?;
            (variance / 10f64.powf(db / 10.0)).sqrt()
        }
        (b, None) => b.unwrap_or(0.0),
    };
    let estimator = GappyEstimator::new(&basis, &placement).stage("reconstruct")?;
    let errors = (0..eval.m())
        .map(|j| -> Result<f64> {
            let x = eval.snapshot(j);
            let y = placement.selection().apply(&x)?
                + noise_vector(placement.len(), beta, config.seed, j as u64)?;
            let xhat = basis.expand(&estimator.coefficients(&y)?)?;
            relative_error(&x, &xhat)
        })
        .collect::<Result<Vec<_>>>()
        .stage("reconstruct")?;

    let uncertainty = uncertainty_report(&basis, &placement, beta, config.eta).stage("uncertainty")?;

    let (percentile, histogram) = match &config.oracle {
        Some(oc) => {
            let options = EnumerationOptions {
                cap: oc.cap,
                ..EnumerationOptions::default()
            };
            let result = oracle::enumerate_placements_with(&basis, &constraint, &options).stage("oracle")?;
            let percentile = result.percentile_rank(objective).stage("oracle")?;
            let hist = oracle::histogram(&result.objective_values, oc.bins).stage("oracle")?;
            (Some(percentile), Some(hist))
        }
        None => (None, None),
    };

    let mut outcome = PipelineOutcome {
        placement,
        objective,
        beta,
        errors,
        uncertainty,
        percentile,
        histogram,
        files: Vec::new(),
    };
    outcome.files = write_outputs(config, &data.geometry, &outcome).stage("write")?;
    Ok(outcome)
}

fn write_outputs(
    config: &ExperimentConfig,
    geometry: &GridGeometry,
    outcome: &PipelineOutcome,
) -> Result<Vec<PathBuf>> {
    let dir = &config.output;
    fs::create_dir_all(dir)?;
    let mut written: BTreeMap<String, PathBuf> = BTreeMap::new();
    let placement_path = dir.join("placement.csv");
    io::write_placement_csv(&outcome.placement, Some(geometry), &placement_path)?;
    written.insert("placement.csv".into(), placement_path);

    let mut put = |name: &str, contents: String| -> Result<()> {
        let path = dir.join(name);
        fs::write(&path, contents)?;
        written.insert(name.to_string(), path);
        Ok(())
    };

    put("objective.txt", format!("{}\n", io::fmt_f64(outcome.objective)))?;
    put("errors.csv", errors_csv(&outcome.errors))?;
    put("uncertainty.csv", uncertainty_csv(&outcome.uncertainty, outcome.beta))?;
    if let (Some(p), Some(h)) = (outcome.percentile, &outcome.histogram) {
        put("percentile.txt", format!("{}\n", io::fmt_f64(p)))?;
        put("histogram.csv", histogram_csv(h))?;
    }

    put("config.toml", config.to_toml()?)?;

    let mut manifest = format!(
        "config_sha256 = \"{}\"\nseed = {}\n\n[outputs]\n",
        config.hash()?,
        config.seed
    );
    for (name, path) in &written {
        let digest = hex::encode(Sha256::digest(fs::read(path)?));
        manifest.push_str(&format!("\"{name}\" = \"{digest}\"\n"));
    }
    let manifest_path = dir.join("manifest.toml");
    fs::write(&manifest_path, manifest)?;
    written.insert("manifest.toml".into(), manifest_path);
    Ok(written.into_values().collect())
}

/// `snapshot,relative_error_percent` with 1-based snapshot numbers.
pub fn errors_csv(errors: &[f64]) -> String {
    let mut text = String::from("snapshot,relative_error_percent\n");
    for (j, e) in errors.iter().enumerate() {
        text.push_str(&format!("{},{}\n", j + 1, io::fmt_f64(*e)));
    }
    text
}

/// Long-format table of the covariance diagonal, 3σ bounds and the scalar
/// measures.
pub fn uncertainty_csv(report: &UncertaintyReport, beta: f64) -> String {
    let mut unc = String::from("quantity,component,value\n");
    let mut row = |q: &str, c: Option<usize>, v: f64| {
        let comp = c.map(|c| (c + 1).to_string()).unwrap_or_default();
        unc.push_str(&format!("{q},{comp},{}\n", io::fmt_f64(v)));
    };
    for i in 0..report.covariance.nrows() {
        row("variance", Some(i), report.covariance[(i, i)]);
    }
    for (i, b) in report.sigma_bounds.iter().enumerate() {
        row("three_sigma", Some(i), *b);
    }
    row("noise_std", None, beta);
    row("generalized_variance", None, report.generalized_variance);
    row("average_variance", None, report.average_variance);
    row("maximal_variance", None, report.maximal_variance);
    row("eta", None, report.eta);
    row("ellipsoid_volume", None, report.ellipsoid_volume);
    unc
}

pub fn histogram_csv(h: &Histogram) -> String {
    let mut text = String::from("bin,lower,upper,count\n");
    for (b, count) in h.counts.iter().enumerate() {
        text.push_str(&format!(
            "{},{},{},{count}\n",
            b + 1,
            io::fmt_f64(h.edges[b]),
            io::fmt_f64(h.edges[b + 1])
        ));
    }
    text
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_heat(out: &Path) -> ExperimentConfig {
        ExperimentConfig::from_toml(&format!(
            r#"
rank = 6
seed = 3
noise_std = 0.01
output = "{}"

[source]
kind = "heat"
test_steps = 20

[source.plate]
nx = 12
ny = 10
steps = 150
"#,
            out.display()
        ))
        .unwrap()
    }

    #[test]
    fn parses_and_hashes_stably() {
        let cfg = small_heat(Path::new("/tmp/x"));
        assert_eq!(cfg.hash().unwrap(), cfg.clone().hash().unwrap());
        let again = ExperimentConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(again, cfg);
        let mut other = cfg.clone();
        other.seed = 4;
        assert_ne!(other.hash().unwrap(), cfg.hash().unwrap());
    }

    #[test]
    fn config_errors() {
        assert!(ExperimentConfig::from_toml("rank = 3\n[source]\nkind = \"nope\"\n").is_err());
        assert!(ExperimentConfig::from_toml("rank = 3\nbogus = 1\n[source]\nkind = \"lti\"\n").is_err());
        let both = "rank = 3\nnoise_std = 0.1\nsnr_db = 20.0\n[source]\nkind = \"lti\"\n";
        assert!(matches!(ExperimentConfig::from_toml(both), Err(Error::Config(_))));
        let missing = "rank = 3\n[source]\nkind = \"file\"\npath = \"/definitely/not/here.csv\"\n";
        assert!(ExperimentConfig::from_toml(missing).is_err());
    }

    #[test]
    fn constraint_resolution() {
        let g = GridGeometry::grid(4, 3);
        let c = ConstraintConfig {
            kind: ConstraintKind::RegionExact,
            region_columns: Some(2),
            budget: Some(1),
            ..ConstraintConfig::default()
        };
        assert_eq!(c.resolve(12, &g).unwrap().indices(), &[0, 1, 4, 5, 8, 9]);
        let p = ConstraintConfig {
            kind: ConstraintKind::Predetermined,
            predetermined: Some(vec![1, 12]),
            ..ConstraintConfig::default()
        };
        assert_eq!(p.resolve(12, &g).unwrap().indices(), &[0, 11]);
        let bad = ConstraintConfig {
            kind: ConstraintKind::Predetermined,
            predetermined: Some(vec![0]),
            ..ConstraintConfig::default()
        };
        assert!(bad.resolve(12, &g).is_err());
        let no_budget = ConstraintConfig {
            kind: ConstraintKind::RegionMax,
            region: Some(vec![1, 2]),
            ..ConstraintConfig::default()
        };
        assert!(matches!(no_budget.resolve(12, &g), Err(Error::Config(_))));
    }

    #[test]
    fn heat_run_writes_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small_heat(dir.path());
        let out = run_pipeline(&cfg).unwrap();
        assert_eq!(out.placement.len(), 6);
        assert_eq!(out.errors.len(), 20);
        let placement = fs::read_to_string(dir.path().join("placement.csv")).unwrap();
        assert_eq!(placement.lines().count(), 7);
        for name in ["objective.txt", "errors.csv", "uncertainty.csv", "manifest.toml", "config.toml"] {
            assert!(dir.path().join(name).exists(), "{name}");
        }
        assert!(!dir.path().join("percentile.txt").exists());
    }

    #[test]
    fn failures_name_the_stage() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small_heat(dir.path());
        cfg.rank = 10_000;
        let err = run_pipeline(&cfg).unwrap_err();
        assert!(err.to_string().starts_with("pod stage"), "{err}");
        assert_eq!(err.code(), "rank-out-of-range");
    }
}
