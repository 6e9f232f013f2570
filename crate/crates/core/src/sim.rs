//! Data generators: random linear time-invariant systems and explicit
//! finite-difference heat diffusion on a rectangular plate.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::placement::GridGeometry;
use crate::pod::SnapshotMatrix;

/// `ẋ = A x + B u`, `y = C x` with i.i.d. standard normal entries.
#[derive(Debug, Clone, PartialEq)]
pub struct LtiSystem {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    seed: u64,
}

// separate ChaCha streams per draw purpose
const STREAM_SYSTEM: u64 = 0;
const STREAM_INPUTS: u64 = 1;

/// Draws `A` (`n x n`), `B` (`n x q`) and `C` (`p x n`) from a seeded RNG.
pub fn generate_lti(seed: u64, n: usize, q: usize, p: usize) -> Result<LtiSystem> {
    if n == 0 || q == 0 || p == 0 {
        return Err(Error::Empty("system dimensions"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(STREAM_SYSTEM);
    let mut draw = |rows, cols| {
        DMatrix::from_fn(rows, cols, |_, _| -> f64 { StandardNormal.sample(&mut rng) })
    };
    let a = draw(n, n);
    let b = draw(n, q);
    let c = draw(p, n);
    Ok(LtiSystem { a, b, c, seed })
}

impl LtiSystem {
    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    /// State trajectory under white-noise forcing, one column per step.
    ///
    /// The dynamics matrix is rescaled to spectral norm 0.95 and stepped as
    /// `x_{k+1} = Â x_k + B u_k` from `x_0 = 0`, so trajectories stay bounded
    /// whatever the draw of `A`. Inputs come from their own RNG stream.
    pub fn snapshots(&self, steps: usize) -> Result<SnapshotMatrix> {
        if steps == 0 {
            return Err(Error::Empty("trajectory"));
        }
        let norm = self
            .a
            .clone()
            .singular_values()
            .iter()
            .cloned()
            .fold(0.0, f64::max);
        let a_hat = if norm > 0.0 {
            &self.a * (0.95 / norm)
        } else {
            self.a.clone()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(STREAM_INPUTS);
        let q = self.b.ncols();
        let mut x = DVector::zeros(self.n());
        let mut out = DMatrix::zeros(self.n(), steps);
        for k in 0..steps {
            let u = DVector::from_fn(q, |_, _| -> f64 { StandardNormal.sample(&mut rng) });
            x = &a_hat * &x + &self.b * u;
            out.set_column(k, &x);
        }
        SnapshotMatrix::new(out)
    }
}

/// Explicit-scheme stability bound on `α Δt (1/Δx² + 1/Δy²)`.
pub const CFL_BOUND: f64 = 0.5;

/// Plate and solver settings. Temperatures in °C, diffusivity in mm²/s.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeatPlateConfig {
    pub nx: usize,
    pub ny: usize,
    pub diffusivity: f64,
    pub dx: f64,
    pub dy: f64,
    pub dt: f64,
    pub steps: usize,
    pub t_hot: f64,
    pub t_ambient: f64,
}

impl Default for HeatPlateConfig {
    fn default() -> Self {
        Self {
            nx: 50,
            ny: 50,
            diffusivity: 2.0,
            dx: 1.0,
            dy: 1.0,
            dt: 0.125,
            steps: 1000,
            t_hot: 100.0,
            t_ambient: 36.0,
        }
    }
}

impl HeatPlateConfig {
    /// Default plate with half the time step.
    pub fn half_step() -> Self {
        Self {
            dt: 0.0625,
            ..Self::default()
        }
    }

    pub fn stability_number(&self) -> f64 {
        self.diffusivity * self.dt * (1.0 / (self.dx * self.dx) + 1.0 / (self.dy * self.dy))
    }

    pub fn n(&self) -> usize {
        self.nx * self.ny
    }

    pub fn geometry(&self) -> GridGeometry {
        GridGeometry::grid(self.nx, self.ny)
    }

    /// Linear indices of the grid columns `x < columns`.
    pub fn left_columns(&self, columns: usize) -> Vec<usize> {
        (0..self.ny)
            .flat_map(|y| (0..columns.min(self.nx)).map(move |x| y * self.nx + x))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.nx < 3 || self.ny < 3 {
            return Err(Error::Config(format!(
                "plate grid {}x{} needs at least 3 points per side",
                self.nx, self.ny
            )));
        }
        if !(self.dx > 0.0 && self.dy > 0.0 && self.dt > 0.0) {
            return Err(Error::Config("grid and time steps must be positive".into()));
        }
        if !(self.diffusivity >= 0.0) {
            return Err(Error::Config("diffusivity must be nonnegative".into()));
        }
        if self.steps == 0 {
            return Err(Error::Config("heat simulation needs at least one step".into()));
        }
        if ![self.t_hot, self.t_ambient, self.diffusivity]
            .iter()
            .all(|v| v.is_finite())
        {
            return Err(Error::NonFinite { what: "heat config" });
        }
        let number = self.stability_number();
        // a little room for rounding in the product
        if number > CFL_BOUND * (1.0 + 1e-12) {
            return Err(Error::Unstable {
                number,
                bound: CFL_BOUND,
            });
        }
        Ok(())
    }
}

/// Forward-Euler, five-point-stencil plate solver. The field is stored
/// row-major, index `y * nx + x`; the `x = 0` column is held at `t_hot`
/// and the rest of the boundary at `t_ambient`.
#[derive(Debug, Clone)]
pub struct HeatPlate {
    config: HeatPlateConfig,
    field: Vec<f64>,
    scratch: Vec<f64>,
}

impl HeatPlate {
    pub fn new(config: HeatPlateConfig) -> Result<Self> {
        config.validate()?;
        let (nx, ny) = (config.nx, config.ny);
        let mut field = vec![config.t_ambient; nx * ny];
        for y in 0..ny {
            field[y * nx] = config.t_hot;
        }
        Ok(Self {
            scratch: field.clone(),
            field,
            config,
        })
    }

    pub fn field(&self) -> &[f64] {
        &self.field
    }

    pub fn step(&mut self) {
        let (nx, ny) = (self.config.nx, self.config.ny);
        let lx = self.config.diffusivity * self.config.dt / (self.config.dx * self.config.dx);
        let ly = self.config.diffusivity * self.config.dt / (self.config.dy * self.config.dy);
        let u = &self.field;
        self.scratch.copy_from_slice(u);
        for y in 1..ny - 1 {
            for x in 1..nx - 1 {
                let i = y * nx + x;
                let horizontal = u[i - 1] + u[i + 1];
                let vertical = u[i - nx] + u[i + nx];
                self.scratch[i] = u[i] + lx * (horizontal - 2.0 * u[i]) + ly * (vertical - 2.0 * u[i]);
            }
        }
        std::mem::swap(&mut self.field, &mut self.scratch);
    }
}

/// Snapshot `k` (1-based) is the flattened field after `k` steps.
pub fn simulate_heat(config: &HeatPlateConfig) -> Result<SnapshotMatrix> {
    simulate_heat_steps(config, config.steps)
}

/// Like [`simulate_heat`] but for an explicit number of steps.
pub fn simulate_heat_steps(config: &HeatPlateConfig, steps: usize) -> Result<SnapshotMatrix> {
    let mut plate = HeatPlate::new(config.clone())?;
    if steps == 0 {
        return Err(Error::Config("heat simulation needs at least one step".into()));
    }
    let n = config.n();
    let mut data = Vec::with_capacity(n * steps);
    for _ in 0..steps {
        plate.step();
        data.extend_from_slice(plate.field());
    }
    SnapshotMatrix::from_column_major(n, steps, data)
}

/// Training snapshots for the configured steps and a test set continuing the
/// same run for `test_steps` more.
pub fn simulate_heat_split(
    config: &HeatPlateConfig,
    test_steps: usize,
) -> Result<(SnapshotMatrix, Option<SnapshotMatrix>)> {
    let all = simulate_heat_steps(config, config.steps + test_steps)?;
    let train = all.columns(0..config.steps)?;
    let test = if test_steps > 0 {
        Some(all.columns(config.steps..config.steps + test_steps)?)
    } else {
        None
    };
    Ok((train, test))
}
