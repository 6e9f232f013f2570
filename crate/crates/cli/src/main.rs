//! `sparse-sensing` command-line tool.
//!
//! Every analysis subcommand builds an experiment configuration from an
//! optional `--config` file and then applies the flags on top of it.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sparse_sensing::io;
use sparse_sensing::oracle::{self, EnumerationOptions};
use sparse_sensing::pipeline::{
    self, errors_csv, histogram_csv, uncertainty_csv, ConstraintConfig, DataSource, ExperimentConfig,
    OracleConfig,
};
use sparse_sensing::placement::{ConstraintKind, Placement};
use sparse_sensing::pod::{compute_pod, energy_content, PodBasis};
use sparse_sensing::qr::{log_det_objective, place_sensors};
use sparse_sensing::reconstruct::{relative_error, GappyEstimator};
use sparse_sensing::sim::{generate_lti, simulate_heat, HeatPlateConfig};
use sparse_sensing::uncertainty::{noise_vector, signal_variance, uncertainty_report};
use sparse_sensing::{Error, Result};

// Ignores write failures so a closed pipe (`| head`) does not panic.
macro_rules! out {
    ($($arg:tt)*) => {{
        use std::io::Write as _;
        let _ = writeln!(std::io::stdout().lock(), $($arg)*);
    }};
}

#[derive(Parser)]
#[command(name = "sparse-sensing", version, about = "Constrained sensor placement with gappy POD")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute a POD basis and its energy content.
    Pod(Common),
    /// Select sensors by constrained pivoted QR.
    Place(Common),
    /// Reconstruct snapshots from (noisy) point measurements.
    Reconstruct {
        #[command(flatten)]
        common: Common,
        /// Placement file; defaults to a fresh QR placement.
        #[arg(long)]
        placement: Option<PathBuf>,
    },
    /// Error covariance, variance measures and 3σ bounds.
    Uncertainty {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        placement: Option<PathBuf>,
        /// Confidence level of the ellipsoid volume.
        #[arg(long)]
        eta: Option<f64>,
    },
    /// Brute-force the objective over every feasible placement.
    Enumerate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        bins: Option<usize>,
        #[arg(long)]
        cap: Option<u64>,
    },
    /// Run the explicit heat-plate solver and write the snapshots.
    SimulateHeat {
        /// TOML file with plate settings.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        nx: Option<usize>,
        #[arg(long)]
        ny: Option<usize>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        dt: Option<f64>,
        /// Output file (`.csv` or binary).
        #[arg(long, default_value = "heat.snap")]
        out: PathBuf,
    },
    /// Simulate a seeded random LTI system and write the state snapshots.
    SimulateLti {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 25)]
        n: usize,
        #[arg(long)]
        inputs: Option<usize>,
        #[arg(long)]
        outputs: Option<usize>,
        #[arg(long, default_value_t = 200)]
        steps: usize,
        #[arg(long, default_value = "lti.snap")]
        out: PathBuf,
    },
    /// Run a whole experiment from a config file.
    Pipeline(Common),
}

#[derive(Args, Clone, Default)]
struct Common {
    /// Experiment TOML; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Snapshot file (`.csv` or binary), replacing the configured source.
    #[arg(long)]
    snapshots: Option<PathBuf>,
    #[arg(long, requires = "snapshots")]
    test_snapshots: Option<PathBuf>,
    /// Grid shape `NX,NY` of the snapshot states.
    #[arg(long, value_delimiter = ',', requires = "snapshots")]
    grid: Option<Vec<usize>>,
    #[arg(long)]
    rank: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    noise_std: Option<f64>,
    #[arg(long, conflicts_with = "noise_std")]
    snr_db: Option<f64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    constraint: ConstraintArgs,
}

#[derive(Args, Clone, Default)]
struct ConstraintArgs {
    /// unconstrained, region, predetermined or min-distance.
    #[arg(long)]
    constraint: Option<String>,
    /// 1-based region members, comma separated.
    #[arg(long, value_delimiter = ',')]
    region: Option<Vec<usize>>,
    /// Region made of the leftmost grid columns.
    #[arg(long, conflicts_with = "region")]
    region_columns: Option<usize>,
    /// Exactly this many sensors in the region.
    #[arg(long, conflicts_with = "max")]
    exact: Option<usize>,
    /// At most this many sensors in the region.
    #[arg(long)]
    max: Option<usize>,
    /// 1-based fixed sensor locations, comma separated.
    #[arg(long, value_delimiter = ',')]
    predetermined: Option<Vec<usize>>,
    #[arg(long)]
    min_distance: Option<f64>,
}

impl ConstraintArgs {
    fn any(&self) -> bool {
        self.constraint.is_some()
            || self.region.is_some()
            || self.region_columns.is_some()
            || self.exact.is_some()
            || self.max.is_some()
            || self.predetermined.is_some()
            || self.min_distance.is_some()
    }

    fn to_config(&self) -> Result<ConstraintConfig> {
        let kind = match self.constraint.as_deref() {
            Some("unconstrained") => ConstraintKind::Unconstrained,
            Some("region-exact") => ConstraintKind::RegionExact,
            Some("region-max") => ConstraintKind::RegionMax,
            Some("region") if self.exact.is_some() => ConstraintKind::RegionExact,
            Some("region") if self.max.is_some() => ConstraintKind::RegionMax,
            Some("region") => {
                return Err(Error::Config("region constraint needs --exact or --max".into()));
            }
            Some("predetermined") => ConstraintKind::Predetermined,
            Some("min-distance") => ConstraintKind::MinDistance,
            Some(other) => {
                return Err(Error::Config(format!("unknown constraint kind {other:?}")));
            }
            None if self.exact.is_some() => ConstraintKind::RegionExact,
            None if self.max.is_some() => ConstraintKind::RegionMax,
            None if self.predetermined.is_some() => ConstraintKind::Predetermined,
            None if self.min_distance.is_some() => ConstraintKind::MinDistance,
            None => ConstraintKind::Unconstrained,
        };
        Ok(ConstraintConfig {
            kind,
            region: self.region.clone(),
            region_columns: self.region_columns,
            budget: self.exact.or(self.max),
            predetermined: self.predetermined.clone(),
            min_distance: self.min_distance,
        })
    }
}

impl Common {
    /// Config file (if any) with the flags applied on top.
    fn experiment(&self) -> Result<ExperimentConfig> {
        let base = self.config.as_deref().map(ExperimentConfig::load).transpose()?;
        let source = match (&self.snapshots, &base) {
            (Some(path), _) => DataSource::File {
                path: path.clone(),
                test_path: self.test_snapshots.clone(),
                grid: match self.grid.as_deref() {
                    None => None,
                    Some(&[nx, ny]) => Some([nx, ny]),
                    Some(_) => return Err(Error::Config("--grid takes NX,NY".into())),
                },
            },
            (None, Some(b)) => b.source.clone(),
            (None, None) => {
                return Err(Error::Config("give --snapshots or --config".into()));
            }
        };
        let rank = self
            .rank
            .or(base.as_ref().map(|b| b.rank))
            .ok_or_else(|| Error::Config("give --rank or set rank in the config".into()))?;
        let mut config = match base {
            Some(b) => ExperimentConfig { source, rank, ..b },
            None => ExperimentConfig::new(source, rank),
        };
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        if self.noise_std.is_some() || self.snr_db.is_some() {
            config.noise_std = self.noise_std;
            config.snr_db = self.snr_db;
        }
        if let Some(out) = &self.out {
            config.output = out.clone();
        }
        if self.constraint.any() {
            config.constraint = self.constraint.to_config()?;
        }
        config.check()?;
        Ok(config)
    }
}

struct Prepared {
    config: ExperimentConfig,
    data: pipeline::Dataset,
    basis: PodBasis,
}

fn prepare(common: &Common) -> Result<Prepared> {
    let config = common.experiment()?;
    let data = pipeline::load_dataset(&config.source, config.seed)?;
    let basis = compute_pod(&data.train, config.rank)?;
    fs::create_dir_all(&config.output)?;
    Ok(Prepared { config, data, basis })
}

impl Prepared {
    fn placement(&self, file: Option<&Path>) -> Result<Placement> {
        match file {
            Some(path) => io::read_placement(path, self.basis.n()),
            None => {
                let constraint = self.config.constraint.resolve(self.basis.n(), &self.data.geometry)?;
                Ok(place_sensors(&self.basis, &constraint)?.into_placement())
            }
        }
    }

    fn beta(&self, placement: &Placement) -> Result<f64> {
        match (self.config.noise_std, self.config.snr_db) {
            (_, Some(db)) => {
                let eval = self.data.test.as_ref().unwrap_or(&self.data.train);
                Ok((signal_variance(eval, placement)? / 10f64.powf(db / 10.0)).sqrt())
            }
            (b, None) => Ok(b.unwrap_or(0.0)),
        }
    }

    fn write(&self, name: &str, contents: String) -> Result<()> {
        fs::write(self.config.output.join(name), contents)?;
        Ok(())
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Pod(common) => {
            let p = prepare(&common)?;
            io::write_matrix_csv(p.basis.modes(), &p.config.output.join("modes.csv"))?;
            let energy = energy_content(&p.basis)?;
            let mut text = String::from("mode,singular_value,energy,cumulative\n");
            for (k, s) in p.basis.singular_values().iter().enumerate() {
                text.push_str(&format!(
                    "{},{},{},{}\n",
                    k + 1,
                    io::fmt_f64(*s),
                    io::fmt_f64(energy.per_mode[k]),
                    io::fmt_f64(energy.cumulative[k])
                ));
            }
            p.write("energy.csv", text)?;
            out!(
                "rank {}: cumulative energy {:.6}",
                p.basis.rank(),
                energy.cumulative[p.basis.rank() - 1]
            );
        }
        Command::Place(common) => {
            let p = prepare(&common)?;
            let placement = p.placement(None)?;
            let objective = log_det_objective(&p.basis, &placement)?;
            io::write_placement_csv(&placement, Some(&p.data.geometry), &p.config.output.join("placement.csv"))?;
            p.write("objective.txt", format!("{}\n", io::fmt_f64(objective)))?;
            let one_based: Vec<String> = placement.indices().iter().map(|i| (i + 1).to_string()).collect();
            out!("sensors {}", one_based.join(","));
            out!("log det {objective}");
        }
        Command::Reconstruct { common, placement } => {
            let p = prepare(&common)?;
            let placement = p.placement(placement.as_deref())?;
            let beta = p.beta(&placement)?;
            let estimator = GappyEstimator::new(&p.basis, &placement)?;
            let eval = p.data.test.as_ref().unwrap_or(&p.data.train);
            let mut errors = Vec::with_capacity(eval.m());
            for j in 0..eval.m() {
                let x = eval.snapshot(j);
                let y = placement.selection().apply(&x)?
                    + noise_vector(placement.len(), beta, p.config.seed, j as u64)?;
                errors.push(relative_error(&x, &p.basis.expand(&estimator.coefficients(&y)?)?)?);
            }
            p.write("errors.csv", errors_csv(&errors))?;
            let mean = errors.iter().sum::<f64>() / errors.len() as f64;
            out!("mean relative error {mean:e} % over {} snapshots", errors.len());
        }
        Command::Uncertainty {
            common,
            placement,
            eta,
        } => {
            let p = prepare(&common)?;
            let placement = p.placement(placement.as_deref())?;
            let beta = p.beta(&placement)?;
            let report = uncertainty_report(&p.basis, &placement, beta, eta.unwrap_or(p.config.eta))?;
            p.write("uncertainty.csv", uncertainty_csv(&report, beta))?;
            out!(
                "det {:e} trace {:e} max eigenvalue {:e}",
                report.generalized_variance, report.average_variance, report.maximal_variance
            );
        }
        Command::Enumerate { common, bins, cap } => {
            let p = prepare(&common)?;
            let defaults = p.config.oracle.clone().unwrap_or_default();
            let oc = OracleConfig {
                bins: bins.unwrap_or(defaults.bins),
                cap: cap.unwrap_or(defaults.cap),
            };
            let constraint = p.config.constraint.resolve(p.basis.n(), &p.data.geometry)?;
            let options = EnumerationOptions {
                cap: oc.cap,
                ..EnumerationOptions::default()
            };
            let result = oracle::enumerate_placements_with(&p.basis, &constraint, &options)?;
            let placement = place_sensors(&p.basis, &constraint)?.into_placement();
            let objective = log_det_objective(&p.basis, &placement)?;
            let percentile = result.percentile_rank(objective)?;
            let hist = oracle::histogram(&result.objective_values, oc.bins)?;
            p.write("histogram.csv", histogram_csv(&hist))?;
            p.write("percentile.txt", format!("{}\n", io::fmt_f64(percentile)))?;
            io::write_placement_csv(
                &result.best_placement,
                Some(&p.data.geometry),
                &p.config.output.join("best_placement.csv"),
            )?;
            out!(
                "{} placements, {} singular; greedy log det {objective} beats {percentile:.4}%; best {}",
                result.total_count,
                result.singular_count(),
                result.best_value
            );
        }
        Command::SimulateHeat {
            config,
            nx,
            ny,
            steps,
            dt,
            out,
        } => {
            let mut plate: HeatPlateConfig = match config {
                Some(path) => toml::from_str(&fs::read_to_string(path)?)
                    .map_err(|e| Error::Config(e.to_string().lines().collect::<Vec<_>>().join(" ")))?,
                None => HeatPlateConfig::default(),
            };
            plate.nx = nx.unwrap_or(plate.nx);
            plate.ny = ny.unwrap_or(plate.ny);
            plate.steps = steps.unwrap_or(plate.steps);
            plate.dt = dt.unwrap_or(plate.dt);
            let x = simulate_heat(&plate)?;
            io::write_snapshots(&x, &out)?;
            out!("wrote {}x{} snapshots to {}", x.n(), x.m(), out.display());
        }
        Command::SimulateLti {
            seed,
            n,
            inputs,
            outputs,
            steps,
            out,
        } => {
            let system = generate_lti(seed, n, inputs.unwrap_or(n), outputs.unwrap_or(n))?;
            let x = system.snapshots(steps)?;
            io::write_snapshots(&x, &out)?;
            out!("wrote {}x{} snapshots to {}", x.n(), x.m(), out.display());
        }
        Command::Pipeline(common) => {
            if common.config.is_none() {
                return Err(Error::Config("pipeline needs --config".into()));
            }
            let config = common.experiment()?;
            let outcome = pipeline::run_pipeline(&config)?;
            for f in &outcome.files {
                out!("{}", f.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("error: usage: {first}");
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}: {}", e.code(), e.to_string().replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}
