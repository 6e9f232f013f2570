//! Gappy POD: least-squares modal coefficients from point measurements and
//! the full-state reconstruction `x̂ = Ψ (SΨ)† y`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::placement::Placement;
use crate::pod::PodBasis;

/// Sensor readings together with where they were taken.
#[derive(Debug, Clone, PartialEq)]
pub struct Measurement {
    values: DVector<f64>,
    placement: Placement,
    noise_std: f64,
}

impl Measurement {
    pub fn new(values: DVector<f64>, placement: Placement, noise_std: f64) -> Result<Self> {
        if values.len() != placement.len() {
            return Err(Error::DimensionMismatch {
                what: "measurement length",
                expected: placement.len(),
                found: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "measurement",
            });
        }
        if !(noise_std >= 0.0) {
            return Err(Error::OutOfRange(format!(
                "noise standard deviation {noise_std} must be nonnegative"
            )));
        }
        Ok(Self {
            values,
            placement,
            noise_std,
        })
    }

    /// Noiseless reading `S x` of a full state.
    pub fn sample(state: &DVector<f64>, placement: &Placement) -> Result<Self> {
        let values = placement.selection().apply(state)?;
        Self::new(values, placement.clone(), 0.0)
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.values
    }

    pub fn placement(&self) -> &Placement {
        &self.placement
    }

    pub fn noise_std(&self) -> f64 {
        self.noise_std
    }
}

/// Above this condition number of `SΨ` an estimate is flagged.
pub const ILL_CONDITIONED: f64 = 1e-3 / f64::EPSILON;

/// Coefficient estimate with the conditioning of the solve.
#[derive(Debug, Clone, PartialEq)]
pub struct Estimate {
    pub coefficients: DVector<f64>,
    pub condition_number: f64,
}

impl Estimate {
    pub fn is_ill_conditioned(&self) -> bool {
        !(self.condition_number <= ILL_CONDITIONED)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reconstruction {
    pub coefficients: DVector<f64>,
    pub state: DVector<f64>,
    pub condition_number: f64,
}

/// Reusable solver for one basis and placement: factors `SΨ = Q R` once so
/// many measurement vectors can be processed cheaply.
#[derive(Debug, Clone)]
pub struct GappyEstimator {
    placement: Placement,
    q: DMatrix<f64>,
    r: DMatrix<f64>,
    condition_number: f64,
}

impl GappyEstimator {
    pub fn new(basis: &PodBasis, placement: &Placement) -> Result<Self> {
        if placement.n() != basis.n() {
            return Err(Error::DimensionMismatch {
                what: "placement state dimension",
                expected: basis.n(),
                found: placement.n(),
            });
        }
        let (p, r) = (placement.len(), basis.rank());
        if p < r {
            return Err(Error::Underdetermined { sensors: p, rank: r });
        }
        let sampled = placement.selection().rows_of(basis.modes())?;
        let singular = sampled.singular_values();
        let smax = singular.max();
        let smin = singular.min();
        let condition_number = if smin > 0.0 { smax / smin } else { f64::INFINITY };
        if !condition_number.is_finite() || smin <= smax * f64::EPSILON * p as f64 {
            return Err(Error::Singular);
        }
        if condition_number > ILL_CONDITIONED {
            log::warn!("sampled basis is ill-conditioned (condition number {condition_number:e})");
        }
        let qr = sampled.qr();
        Ok(Self {
            placement: placement.clone(),
            q: qr.q(),
            r: qr.r(),
            condition_number,
        })
    }

    pub fn condition_number(&self) -> f64 {
        self.condition_number
    }

    pub fn placement(&self) -> &Placement {
        &self.placement
    }

    /// `â = R⁻¹ Qᵀ y`.
    pub fn coefficients(&self, values: &DVector<f64>) -> Result<DVector<f64>> {
        if values.len() != self.placement.len() {
            return Err(Error::DimensionMismatch {
                what: "measurement length",
                expected: self.placement.len(),
                found: values.len(),
            });
        }
        let rhs = self.q.tr_mul(values);
        self.r
            .solve_upper_triangular(&rhs)
            .ok_or(Error::Singular)
    }

    pub fn estimate(&self, values: &DVector<f64>) -> Result<Estimate> {
        Ok(Estimate {
            coefficients: self.coefficients(values)?,
            condition_number: self.condition_number,
        })
    }
}

/// Least-squares coefficients `(SΨ)† y`, solved through a QR factorization
/// of `SΨ` rather than the normal equations.
pub fn estimate_coefficients(basis: &PodBasis, measurement: &Measurement) -> Result<Estimate> {
    GappyEstimator::new(basis, measurement.placement())?.estimate(measurement.values())
}

/// `x̂ = Ψ â`.
pub fn reconstruct_state(basis: &PodBasis, coefficients: &DVector<f64>) -> Result<DVector<f64>> {
    basis.expand(coefficients)
}

pub fn reconstruct(basis: &PodBasis, measurement: &Measurement) -> Result<Reconstruction> {
    let estimate = estimate_coefficients(basis, measurement)?;
    let state = reconstruct_state(basis, &estimate.coefficients)?;
    Ok(Reconstruction {
        coefficients: estimate.coefficients,
        state,
        condition_number: estimate.condition_number,
    })
}

/// `100 ‖x - x̂‖₂ / ‖x‖₂`.
pub fn relative_error(truth: &DVector<f64>, estimate: &DVector<f64>) -> Result<f64> {
    if truth.len() != estimate.len() {
        return Err(Error::DimensionMismatch {
            what: "state length",
            expected: truth.len(),
            found: estimate.len(),
        });
    }
    let norm = truth.norm();
    if norm == 0.0 {
        return Err(Error::OutOfRange(
            "relative error undefined for a zero true state".into(),
        ));
    }
    Ok(100.0 * (truth - estimate).norm() / norm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pod::{compute_pod, SnapshotMatrix};
    use crate::qr::place_sensors;
    use crate::placement::ConstraintSpec;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(&mut rng))
    }

    fn random_basis(n: usize, r: usize, seed: u64) -> PodBasis {
        let x = SnapshotMatrix::new(gaussian(n, 3 * r, seed)).unwrap();
        compute_pod(&x, r).unwrap()
    }

    #[test]
    fn identity_basis() {
        let basis = PodBasis::from_modes(DMatrix::identity(2, 2), vec![]).unwrap();
        let placement = Placement::new(vec![0, 1], 2).unwrap();
        let m = Measurement::new(DVector::from_vec(vec![4.0, 7.0]), placement, 0.0).unwrap();
        let est = estimate_coefficients(&basis, &m).unwrap();
        assert_relative_eq!(est.coefficients[0], 4.0, epsilon = 1e-15);
        assert_relative_eq!(est.coefficients[1], 7.0, epsilon = 1e-15);
    }

    #[test]
    fn exact_recovery_in_span() {
        for seed in 0..5 {
            let basis = random_basis(30, 6, seed);
            let qr = place_sensors(&basis, &ConstraintSpec::unconstrained()).unwrap();
            let a = gaussian(6, 1, 100 + seed).column(0).into_owned();
            let x = basis.expand(&a).unwrap();
            let m = Measurement::sample(&x, qr.placement()).unwrap();
            let rec = reconstruct(&basis, &m).unwrap();
            assert!((&rec.coefficients - &a).norm() <= 1e-10 * a.norm());
            assert!(relative_error(&x, &rec.state).unwrap() <= 1e-8);
        }
    }

    #[test]
    fn reconstruct_state_examples() {
        let basis = random_basis(10, 3, 7);
        let zero = reconstruct_state(&basis, &DVector::zeros(3)).unwrap();
        assert_eq!(zero, DVector::zeros(10));
        let first = reconstruct_state(&basis, &DVector::from_vec(vec![1.0, 0.0, 0.0])).unwrap();
        assert_eq!(first, basis.modes().column(0).into_owned());
        assert!(reconstruct_state(&basis, &DVector::zeros(2)).is_err());
    }

    #[test]
    fn estimator_is_linear() {
        let basis = random_basis(20, 5, 3);
        let placement = Placement::new(vec![0, 3, 7, 11, 19], 20).unwrap();
        let est = GappyEstimator::new(&basis, &placement).unwrap();
        let y1 = gaussian(5, 1, 1).column(0).into_owned();
        let y2 = gaussian(5, 1, 2).column(0).into_owned();
        let alpha = -1.7;
        let lhs = est.coefficients(&(&y1 * alpha + &y2)).unwrap();
        let rhs = est.coefficients(&y1).unwrap() * alpha + est.coefficients(&y2).unwrap();
        assert!((lhs - rhs).amax() <= 1e-12 * (1.0 + y1.amax() + y2.amax()) * est.condition_number());
    }

    #[test]
    fn least_squares_residual_is_orthogonal() {
        let basis = random_basis(20, 4, 4);
        let placement = Placement::new(vec![1, 2, 5, 8, 13, 17, 19], 20).unwrap();
        let y = gaussian(7, 1, 9).column(0).into_owned();
        let m = Measurement::new(y.clone(), placement.clone(), 0.0).unwrap();
        let a = estimate_coefficients(&basis, &m).unwrap().coefficients;
        let sampled = placement.selection().rows_of(basis.modes()).unwrap();
        let normal = sampled.transpose() * (&sampled * a - y);
        assert!(normal.amax() <= 1e-10);
    }

    #[test]
    fn underdetermined_rejected() {
        let basis = random_basis(20, 4, 5);
        let placement = Placement::new(vec![1, 2, 5], 20).unwrap();
        let m = Measurement::new(DVector::zeros(3), placement, 0.0).unwrap();
        assert!(matches!(
            estimate_coefficients(&basis, &m),
            Err(Error::Underdetermined { sensors: 3, rank: 4 })
        ));
    }

    #[test]
    fn singular_sampling_rejected() {
        let mut modes = DMatrix::zeros(4, 2);
        modes[(0, 0)] = 1.0;
        modes[(1, 1)] = 1.0;
        let basis = PodBasis::from_modes(modes, vec![]).unwrap();
        let placement = Placement::new(vec![2, 3], 4).unwrap();
        let m = Measurement::new(DVector::zeros(2), placement, 0.0).unwrap();
        assert!(matches!(estimate_coefficients(&basis, &m), Err(Error::Singular)));
    }

    #[test]
    fn ill_conditioning_is_flagged_not_fatal() {
        let eps: f64 = 1e-14;
        let c = (1.0 - eps * eps).sqrt();
        let modes = DMatrix::from_row_slice(3, 2, &[0.6, 0.8 * c, 0.8, -0.6 * c, 0.0, eps]);
        let basis = PodBasis::from_modes(modes, vec![]).unwrap();
        let placement = Placement::new(vec![0, 2], 3).unwrap();
        let est = GappyEstimator::new(&basis, &placement).unwrap();
        let e = est.estimate(&DVector::from_vec(vec![1.0, 1e-15])).unwrap();
        assert!(e.is_ill_conditioned(), "{}", e.condition_number);
    }

    #[test]
    fn relative_error_examples() {
        let x = DVector::from_vec(vec![3.0, 4.0]);
        assert_eq!(relative_error(&x, &x).unwrap(), 0.0);
        assert_eq!(relative_error(&x, &DVector::zeros(2)).unwrap(), 100.0);
        assert!(relative_error(&DVector::zeros(2), &x).is_err());
    }
}
