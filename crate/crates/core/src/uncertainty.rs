//! Estimation-error statistics under i.i.d. Gaussian measurement noise.
//!
//! With `y = S x + η`, `η ~ N(0, β² I)` the gappy estimate has error
//! covariance `Σ = β² ((SΨ)ᵀ SΨ)⁻¹`.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use statrs::function::gamma::{gamma_lr, ln_gamma};

use crate::error::{Error, Result};
use crate::placement::{ConstraintSpec, Placement};
use crate::pod::{PodBasis, SnapshotMatrix};
use crate::qr::place_sensors;
use crate::reconstruct::GappyEstimator;

const SYMMETRY_TOL: f64 = 1e-10;

/// `β² ((SΨ)ᵀ SΨ)⁻¹`, formed from the triangular factor of `SΨ`.
///
/// `β = 0` gives the zero matrix, which is not positive definite; callers
/// that need the scalar measures should check [`is_degenerate`] first.
pub fn error_covariance(basis: &PodBasis, placement: &Placement, beta: f64) -> Result<DMatrix<f64>> {
    if !(beta >= 0.0) || !beta.is_finite() {
        return Err(Error::OutOfRange(format!(
            "noise standard deviation {beta} must be finite and nonnegative"
        )));
    }
    let unit = unit_covariance(basis, placement)?;
    if beta == 0.0 {
        log::warn!("zero noise level gives a degenerate error covariance");
    }
    Ok(unit * (beta * beta))
}

/// `((SΨ)ᵀ SΨ)⁻¹`, symmetric by construction.
fn unit_covariance(basis: &PodBasis, placement: &Placement) -> Result<DMatrix<f64>> {
    if placement.n() != basis.n() {
        return Err(Error::DimensionMismatch {
            what: "placement state dimension",
            expected: basis.n(),
            found: placement.n(),
        });
    }
    let r = basis.rank();
    if placement.len() < r {
        return Err(Error::Underdetermined {
            sensors: placement.len(),
            rank: r,
        });
    }
    let sampled = placement.selection().rows_of(basis.modes())?;
    let tri = sampled.qr().r();
    let scale = tri.diagonal().amax();
    if tri.diagonal().iter().any(|d| d.abs() <= scale * f64::EPSILON * placement.len() as f64) {
        return Err(Error::Singular);
    }
    let inv = tri
        .solve_upper_triangular(&DMatrix::identity(r, r))
        .ok_or(Error::Singular)?;
    let mut cov = DMatrix::zeros(r, r);
    for i in 0..r {
        for j in i..r {
            let v = inv.row(i).dot(&inv.row(j));
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    Ok(cov)
}

pub fn is_degenerate(covariance: &DMatrix<f64>) -> bool {
    covariance.iter().all(|&v| v == 0.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VarianceMeasures {
    /// `det Σ`
    pub generalized: f64,
    /// `tr Σ`
    pub average: f64,
    /// `λ_max(Σ)`
    pub maximal: f64,
}

fn check_spd(sigma: &DMatrix<f64>) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    if sigma.nrows() == 0 || !sigma.is_square() {
        return Err(Error::NotPositiveDefinite);
    }
    if sigma.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { what: "covariance" });
    }
    let scale = sigma.amax();
    if (sigma - sigma.transpose()).amax() > SYMMETRY_TOL * scale.max(1.0) {
        return Err(Error::NotPositiveDefinite);
    }
    sigma.clone().cholesky().ok_or(Error::NotPositiveDefinite)
}

fn log_det_spd(chol: &nalgebra::Cholesky<f64, nalgebra::Dyn>) -> f64 {
    2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
}

pub fn variance_measures(sigma: &DMatrix<f64>) -> Result<VarianceMeasures> {
    let chol = check_spd(sigma)?;
    let eigen = sigma.clone().symmetric_eigen();
    let maximal = eigen.eigenvalues.max();
    if !(eigen.eigenvalues.min() > 0.0) {
        return Err(Error::NotPositiveDefinite);
    }
    Ok(VarianceMeasures {
        generalized: log_det_spd(&chol).exp(),
        average: sigma.trace(),
        maximal,
    })
}

/// Inverse of the χ² CDF with `dof` degrees of freedom, by bisection on the
/// regularized lower incomplete gamma function.
pub fn chi_squared_quantile(eta: f64, dof: usize) -> Result<f64> {
    if !(eta > 0.0 && eta < 1.0) {
        return Err(Error::OutOfRange(format!(
            "confidence level {eta} must lie strictly between 0 and 1"
        )));
    }
    if dof == 0 {
        return Err(Error::OutOfRange("chi-squared needs at least one degree of freedom".into()));
    }
    let k = dof as f64 / 2.0;
    let cdf = |x: f64| gamma_lr(k, x / 2.0);
    let mut hi = dof as f64;
    while cdf(hi) < eta {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    while hi - lo > 1e-13 * hi.max(1.0) {
        let mid = 0.5 * (lo + hi);
        if cdf(mid) < eta {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Volume of `{e : eᵀ Σ⁻¹ e ≤ α}` with α the χ²_r quantile at `eta`.
pub fn ellipsoid_volume(sigma: &DMatrix<f64>, eta: f64) -> Result<f64> {
    let alpha = chi_squared_quantile(eta, sigma.nrows().max(1))?;
    ellipsoid_volume_for_level(sigma, alpha)
}

/// `(απ)^{r/2} / Γ(r/2 + 1) · √det Σ` for an explicit level `α`.
pub fn ellipsoid_volume_for_level(sigma: &DMatrix<f64>, alpha: f64) -> Result<f64> {
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::OutOfRange(format!("ellipsoid level {alpha} must be positive")));
    }
    let chol = check_spd(sigma)?;
    let half_r = sigma.nrows() as f64 / 2.0;
    let log_vol = half_r * (alpha * std::f64::consts::PI).ln() - ln_gamma(half_r + 1.0)
        + 0.5 * log_det_spd(&chol);
    Ok(log_vol.exp())
}

/// `3 √Σ_ii` per component.
pub fn three_sigma_bounds(sigma: &DMatrix<f64>) -> Result<Vec<f64>> {
    sigma
        .diagonal()
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            if v >= 0.0 {
                Ok(3.0 * v.sqrt())
            } else {
                Err(Error::OutOfRange(format!(
                    "covariance diagonal entry {} is negative ({v})",
                    i + 1
                )))
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintyReport {
    pub covariance: DMatrix<f64>,
    pub generalized_variance: f64,
    pub average_variance: f64,
    pub maximal_variance: f64,
    pub sigma_bounds: Vec<f64>,
    pub eta: f64,
    pub ellipsoid_volume: f64,
    pub degenerate: bool,
}

pub fn uncertainty_report(
    basis: &PodBasis,
    placement: &Placement,
    beta: f64,
    eta: f64,
) -> Result<UncertaintyReport> {
    let covariance = error_covariance(basis, placement, beta)?;
    let sigma_bounds = three_sigma_bounds(&covariance)?;
    if beta == 0.0 {
        chi_squared_quantile(eta, basis.rank())?;
        return Ok(UncertaintyReport {
            covariance,
            generalized_variance: 0.0,
            average_variance: 0.0,
            maximal_variance: 0.0,
            sigma_bounds,
            eta,
            ellipsoid_volume: 0.0,
            degenerate: true,
        });
    }
    let measures = variance_measures(&covariance)?;
    let ellipsoid_volume = ellipsoid_volume(&covariance, eta)?;
    Ok(UncertaintyReport {
        covariance,
        generalized_variance: measures.generalized,
        average_variance: measures.average,
        maximal_variance: measures.maximal,
        sigma_bounds,
        eta,
        ellipsoid_volume,
        degenerate: false,
    })
}

/// Gaussian noise vector for draw `stream` of a seeded experiment. Every draw
/// owns its own ChaCha stream so results do not depend on evaluation order.
pub fn noise_vector(len: usize, beta: f64, seed: u64, stream: u64) -> Result<DVector<f64>> {
    if beta == 0.0 {
        return Ok(DVector::zeros(len));
    }
    let normal = Normal::new(0.0, beta)
        .map_err(|e| Error::OutOfRange(format!("noise level {beta}: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    Ok(DVector::from_iterator(len, (0..len).map(|_| normal.sample(&mut rng))))
}

const MC_CHUNK: usize = 4096;

/// Sample covariance of `â - a` over `draws` noise realisations.
pub fn monte_carlo_covariance(
    basis: &PodBasis,
    placement: &Placement,
    beta: f64,
    draws: usize,
    seed: u64,
) -> Result<DMatrix<f64>> {
    if draws < 2 {
        return Err(Error::OutOfRange("Monte Carlo needs at least two draws".into()));
    }
    let estimator = GappyEstimator::new(basis, placement)?;
    let r = basis.rank();
    let p = placement.len();
    let chunks: Vec<(DVector<f64>, DMatrix<f64>)> = (0..draws.div_ceil(MC_CHUNK))
        .into_par_iter()
        .map(|c| -> Result<_> {
            let mut sum = DVector::zeros(r);
            let mut outer = DMatrix::zeros(r, r);
            for d in c * MC_CHUNK..((c + 1) * MC_CHUNK).min(draws) {
                let e = estimator.coefficients(&noise_vector(p, beta, seed, d as u64)?)?;
                sum += &e;
                outer.ger(1.0, &e, &e, 1.0);
            }
            Ok((sum, outer))
        })
        .collect::<Result<_>>()?;
    let mut sum = DVector::zeros(r);
    let mut outer = DMatrix::zeros(r, r);
    for (s, o) in chunks {
        sum += s;
        outer += o;
    }
    let count = draws as f64;
    let mean = sum / count;
    Ok((outer - &mean * mean.transpose() * count) / (count - 1.0))
}

/// How the noise level of a sweep is specified.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseLevel {
    Std(f64),
    /// Variance of the noiseless readings over `β²`, in decibels.
    SnrDb(f64),
}

/// Population variance of all noiseless readings `S x` over a snapshot set.
pub fn signal_variance(test: &SnapshotMatrix, placement: &Placement) -> Result<f64> {
    let mut values = Vec::with_capacity(test.m() * placement.len());
    for j in 0..test.m() {
        values.extend(placement.selection().apply(&test.snapshot(j))?.iter());
    }
    if values.is_empty() {
        return Err(Error::Empty("test set"));
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    Ok(values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / values.len() as f64)
}

pub fn snr_db(signal_variance: f64, beta: f64) -> f64 {
    10.0 * (signal_variance / (beta * beta)).log10()
}

/// Coefficient errors `â - a` on held-out states, one row per snapshot.
/// The reference coefficients are the orthogonal projections `Ψᵀ x`.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorSample {
    pub errors: DMatrix<f64>,
    pub sigma_bounds: Vec<f64>,
}

impl ErrorSample {
    /// Fraction of snapshots whose error lies within `±3σ_i`, per component.
    pub fn coverage(&self) -> Vec<f64> {
        let m = self.errors.nrows() as f64;
        self.sigma_bounds
            .iter()
            .enumerate()
            .map(|(i, b)| self.errors.column(i).iter().filter(|e| e.abs() <= *b).count() as f64 / m)
            .collect()
    }

    /// Empirical standard deviation about zero, per component.
    pub fn spread(&self) -> Vec<f64> {
        let m = self.errors.nrows() as f64;
        self.errors
            .column_iter()
            .map(|c| (c.norm_squared() / m).sqrt())
            .collect()
    }
}

/// Adds noise drawn from stream `j` to the readings of snapshot `j` and
/// records the coefficient errors.
pub fn estimation_errors(
    basis: &PodBasis,
    placement: &Placement,
    test: &SnapshotMatrix,
    beta: f64,
    seed: u64,
) -> Result<ErrorSample> {
    if test.m() == 0 {
        return Err(Error::Empty("test set"));
    }
    if test.n() != basis.n() {
        return Err(Error::DimensionMismatch {
            what: "test snapshot length",
            expected: basis.n(),
            found: test.n(),
        });
    }
    let estimator = GappyEstimator::new(basis, placement)?;
    let sigma = error_covariance(basis, placement, beta)?;
    let sigma_bounds = three_sigma_bounds(&sigma)?;
    let r = basis.rank();
    let rows: Vec<DVector<f64>> = (0..test.m())
        .into_par_iter()
        .map(|j| -> Result<_> {
            let x = test.snapshot(j);
            let truth = basis.project(&x)?;
            let y = placement.selection().apply(&x)?
                + noise_vector(placement.len(), beta, seed, j as u64)?;
            Ok(estimator.coefficients(&y)? - truth)
        })
        .collect::<Result<_>>()?;
    let errors = DMatrix::from_fn(test.m(), r, |j, i| rows[j][i]);
    Ok(ErrorSample {
        errors,
        sigma_bounds,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub rank: usize,
    pub beta: f64,
    pub snr_db: f64,
    pub spread: Vec<f64>,
    pub sigma_bounds: Vec<f64>,
    /// Largest 3σ bound over components.
    pub envelope: f64,
    pub coverage: Vec<f64>,
}

fn sweep_row(
    basis: &PodBasis,
    placement: &Placement,
    test: &SnapshotMatrix,
    beta: f64,
    seed: u64,
) -> Result<SweepRow> {
    let sample = estimation_errors(basis, placement, test, beta, seed)?;
    let variance = signal_variance(test, placement)?;
    Ok(SweepRow {
        rank: basis.rank(),
        beta,
        snr_db: snr_db(variance, beta),
        spread: sample.spread(),
        envelope: sample.sigma_bounds.iter().cloned().fold(0.0, f64::max),
        coverage: sample.coverage(),
        sigma_bounds: sample.sigma_bounds,
    })
}

/// Estimation statistics for a fixed placement at several noise levels.
pub fn noise_sweep(
    basis: &PodBasis,
    placement: &Placement,
    test: &SnapshotMatrix,
    levels: &[NoiseLevel],
    seed: u64,
) -> Result<Vec<SweepRow>> {
    if levels.is_empty() {
        return Err(Error::Empty("noise level list"));
    }
    let variance = signal_variance(test, placement)?;
    levels
        .iter()
        .map(|level| {
            let beta = match *level {
                NoiseLevel::Std(b) => b,
                NoiseLevel::SnrDb(db) => (variance / 10f64.powf(db / 10.0)).sqrt(),
            };
            sweep_row(basis, placement, test, beta, seed)
        })
        .collect()
}

/// Re-places `r` sensors for every rank in `ranks` and records the
/// estimation statistics at a fixed noise level.
pub fn rank_sweep(
    basis: &PodBasis,
    constraint: &ConstraintSpec,
    test: &SnapshotMatrix,
    ranks: &[usize],
    beta: f64,
    seed: u64,
) -> Result<Vec<SweepRow>> {
    if ranks.is_empty() {
        return Err(Error::Empty("rank list"));
    }
    ranks
        .iter()
        .map(|&r| {
            let truncated = basis.truncate(r)?;
            let placement = place_sensors(&truncated, constraint)?.into_placement();
            sweep_row(&truncated, &placement, test, beta, seed)
        })
        .collect()
}
