//! Greedy sensor selection by column-pivoted QR with adaptive constraints.
//!
//! The matrix being factored is `W = Ψᵀ` (`r x n`); every column of `W` is a
//! candidate sensor location. At each iteration the eligible column of the
//! trailing block with the largest 2-norm becomes the next pivot, and a
//! Householder reflector zeroes its subdiagonal. Constraints only change
//! which columns are eligible for the argmax; masked columns are still
//! reflected so the factorization stays valid.

use nalgebra::{DMatrix, DVector, DVectorView};

use crate::error::{Error, Result};
use crate::linalg::log_abs_det_in_place;
use crate::placement::{ConstraintKind, ConstraintSpec, Placement};
use crate::pod::PodBasis;

/// Householder reflector `H = I - 2 u uᵀ` mapping `v` onto
/// `-sign(v₁) ‖v‖₂ e₁`, with `sign(0) = +1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Householder {
    u: DVector<f64>,
}

impl Householder {
    pub fn new(v: DVectorView<'_, f64>) -> Result<Self> {
        if v.is_empty() {
            return Err(Error::Empty("reflector input"));
        }
        let sigma = v.norm();
        if sigma == 0.0 {
            return Err(Error::ZeroVector);
        }
        let sign = if v[0] < 0.0 { -1.0 } else { 1.0 };
        let mut u = v.into_owned();
        u[0] += sign * sigma;
        // ‖v + sign(v₁) σ e₁‖² = 2 σ (σ + |v₁|)
        let norm = (2.0 * sigma * (sigma + v[0].abs())).sqrt();
        u /= norm;
        Ok(Self { u })
    }

    /// Unit vector defining the reflector.
    pub fn unit(&self) -> &DVector<f64> {
        &self.u
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        let d = self.u.len();
        DMatrix::identity(d, d) - 2.0 * &self.u * self.u.transpose()
    }

    /// `H v` for a vector of matching length.
    pub fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        v - (2.0 * self.u.dot(v)) * &self.u
    }
}

/// Column-pivoted QR with constraints: `W Π = Q R`.
#[derive(Debug, Clone)]
pub struct PivotedQr {
    placement: Placement,
    permutation: Vec<usize>,
    r: DMatrix<f64>,
    q: DMatrix<f64>,
    first_constrained: Option<usize>,
}

impl PivotedQr {
    pub fn placement(&self) -> &Placement {
        &self.placement
    }

    pub fn into_placement(self) -> Placement {
        self.placement
    }

    /// Full column permutation; the first `p` entries are the sensors.
    pub fn permutation(&self) -> &[usize] {
        &self.permutation
    }

    /// Upper-trapezoidal factor with columns in pivot order.
    pub fn r(&self) -> &DMatrix<f64> {
        &self.r
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    /// First (0-based) iteration at which the constraint excluded a
    /// candidate that was otherwise available.
    pub fn first_constrained_iteration(&self) -> Option<usize> {
        self.first_constrained
    }

    /// Largest violation of `|R_ii|² ≥ Σ_{j=i..k} |R_jk|²` over
    /// `i ≤ k < upto`, relative to `|R_11|²`. Non-positive when the
    /// structure holds.
    pub fn diagonal_dominance_violation(&self, upto: usize) -> f64 {
        diagonal_dominance_violation(&self.r, upto)
    }
}

pub(crate) fn diagonal_dominance_violation(r: &DMatrix<f64>, upto: usize) -> f64 {
    let rows = r.nrows();
    let upto = upto.min(r.ncols());
    let scale = r[(0, 0)].powi(2).max(f64::MIN_POSITIVE);
    let mut worst = f64::NEG_INFINITY;
    for k in 0..upto {
        // suffix sums of the squared column entries give Σ_{j=i..k} at once
        let top = k.min(rows - 1);
        let mut tail = 0.0;
        for i in (0..=top).rev() {
            tail += r[(i, k)].powi(2);
            worst = worst.max((tail - r[(i, i)].powi(2)) / scale);
        }
    }
    worst
}

#[derive(Clone, Copy)]
enum Eligible {
    All,
    Inside,
    Outside,
    Spaced,
}

/// Greedy constrained selection of `sensors` columns of `w`.
///
/// Ties in the argmax go to the lowest original column index. Iteration
/// numbers in errors are 1-based.
pub fn constrained_qr(
    w: &DMatrix<f64>,
    constraint: &ConstraintSpec,
    sensors: usize,
) -> Result<PivotedQr> {
    let (rows, n) = w.shape();
    if rows == 0 || n == 0 {
        return Err(Error::Empty("input matrix"));
    }
    if rows > n {
        return Err(Error::RankOutOfRange { rank: rows, max: n });
    }
    if sensors > rows {
        return Err(Error::Unsupported(
            "oversampling with more sensors than basis modes",
        ));
    }
    if sensors == 0 {
        return Err(Error::Empty("sensor budget"));
    }
    if w.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { what: "input matrix" });
    }
    constraint.validate(n, sensors)?;

    let mut r = w.clone();
    let mut q = DMatrix::<f64>::identity(rows, rows);
    let mut perm: Vec<usize> = (0..n).collect();

    let mut in_set = vec![false; n];
    for &i in constraint.indices() {
        in_set[i] = true;
    }
    let mut too_close = vec![false; n];
    let mut selected_in_set = 0usize;
    let mut first_constrained = None;

    let max_norm = w.column_iter().map(|c| c.norm()).fold(0.0, f64::max);
    let tol = max_norm * f64::EPSILON * rows as f64;
    let budget = constraint.budget();

    for k in 0..sensors {
        let iteration = k + 1;
        let rule = match constraint.kind() {
            ConstraintKind::Unconstrained => Eligible::All,
            ConstraintKind::RegionMax => {
                if selected_in_set >= budget {
                    Eligible::Outside
                } else {
                    Eligible::All
                }
            }
            ConstraintKind::RegionExact => {
                if selected_in_set >= budget {
                    Eligible::Outside
                } else {
                    let deficit = budget - selected_in_set;
                    let remaining = sensors - k;
                    if remaining < deficit {
                        return Err(Error::Infeasible {
                            iteration,
                            reason: format!(
                                "{deficit} region sensors still required with {remaining} iterations left"
                            ),
                        });
                    }
                    if remaining == deficit {
                        Eligible::Inside
                    } else {
                        Eligible::All
                    }
                }
            }
            ConstraintKind::Predetermined => {
                if k >= sensors - budget {
                    if k == sensors - budget {
                        if let Some(&taken) =
                            perm[..k].iter().find(|&&i| in_set[i])
                        {
                            return Err(Error::Infeasible {
                                iteration,
                                reason: format!(
                                    "predetermined location {} was already chosen by an earlier pivot",
                                    taken + 1
                                ),
                            });
                        }
                    }
                    Eligible::Inside
                } else {
                    Eligible::All
                }
            }
            ConstraintKind::MinDistance => Eligible::Spaced,
        };
        let eligible = |i: usize| match rule {
            Eligible::All => true,
            Eligible::Inside => in_set[i],
            Eligible::Outside => !in_set[i],
            Eligible::Spaced => !too_close[i],
        };

        let mut best: Option<(usize, f64)> = None;
        let mut any_eligible = false;
        let mut any_masked = false;
        for pos in k..n {
            let orig = perm[pos];
            if !eligible(orig) {
                any_masked = true;
                continue;
            }
            any_eligible = true;
            let norm = r.view((k, pos), (rows - k, 1)).norm();
            if norm <= tol {
                continue;
            }
            best = match best {
                Some((bp, bn)) if bn > norm || (bn == norm && perm[bp] < orig) => Some((bp, bn)),
                _ => Some((pos, norm)),
            };
        }
        if any_masked && first_constrained.is_none() {
            first_constrained = Some(k);
        }
        let Some((pivot, _)) = best else {
            if !any_eligible {
                return Err(Error::Infeasible {
                    iteration,
                    reason: format!(
                        "{} constraint leaves no eligible location",
                        constraint.kind().name()
                    ),
                });
            }
            return Err(Error::RankDeficient { iteration });
        };

        r.swap_columns(k, pivot);
        perm.swap(k, pivot);

        let h = Householder::new(r.view((k, k), (rows - k, 1)).column(0))?;
        let u = h.unit();
        {
            let mut block = r.view_mut((k, k), (rows - k, n - k));
            // block <- (I - 2uuᵀ) block
            let proj = block.tr_mul(u);
            block.ger(-2.0, u, &proj, 1.0);
        }
        for i in k + 1..rows {
            r[(i, k)] = 0.0;
        }
        {
            let mut cols = q.view_mut((0, k), (rows, rows - k));
            // cols <- cols (I - 2uuᵀ)
            let proj = &cols * u;
            cols.ger(-2.0, &proj, u, 1.0);
        }

        let chosen = perm[k];
        if in_set[chosen] {
            selected_in_set += 1;
        }
        if constraint.kind() == ConstraintKind::MinDistance {
            let geometry = constraint
                .geometry()
                .expect("validated distance constraint has a geometry");
            let d = constraint.distance();
            for (i, flag) in too_close.iter_mut().enumerate() {
                if !*flag && geometry.distance(chosen, i) <= d {
                    *flag = true;
                }
            }
        }
    }

    let placement = Placement::new(perm[..sensors].to_vec(), n)?;
    Ok(PivotedQr {
        placement,
        permutation: perm,
        r,
        q,
        first_constrained,
    })
}

/// Greedy placement of `r` sensors for a basis: `constrained_qr(Ψᵀ, …, r)`.
pub fn place_sensors(basis: &PodBasis, constraint: &ConstraintSpec) -> Result<PivotedQr> {
    constrained_qr(&basis.modes().transpose(), constraint, basis.rank())
}

/// `log det((SΨ)ᵀ(SΨ))`, or `-inf` when the information matrix is singular.
pub fn log_det_objective(basis: &PodBasis, placement: &Placement) -> Result<f64> {
    if placement.n() != basis.n() {
        return Err(Error::DimensionMismatch {
            what: "placement state dimension",
            expected: basis.n(),
            found: placement.n(),
        });
    }
    let sampled = placement.selection().rows_of(basis.modes())?;
    Ok(information_log_det(&sampled))
}

/// `log det(Mᵀ M)` for a sampled `p x r` matrix `M`. For square `M` this is
/// `2 log |det M|`; for `p > r` it is evaluated from the triangular factor
/// of a QR decomposition. Singular information gives `-inf`.
pub fn information_log_det(sampled: &DMatrix<f64>) -> f64 {
    let (p, r) = sampled.shape();
    if p < r || r == 0 {
        return f64::NEG_INFINITY;
    }
    if p == r {
        let mut buf: Vec<f64> = sampled.transpose().as_slice().to_vec();
        return 2.0 * log_abs_det_in_place(&mut buf, r);
    }
    let factor = sampled.clone().qr().r();
    let scale = factor.amax();
    if scale == 0.0 {
        return f64::NEG_INFINITY;
    }
    let tiny = scale * f64::EPSILON * p as f64;
    let mut acc = 0.0;
    for i in 0..r {
        let d = factor[(i, i)].abs();
        if d <= tiny {
            return f64::NEG_INFINITY;
        }
        acc += 2.0 * d.ln();
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::placement::GridGeometry;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(&mut rng))
    }

    #[test]
    fn reflector_examples() {
        let v = DVector::from_vec(vec![1.0, 0.0]);
        let h = Householder::new(v.column(0)).unwrap();
        let hv = h.apply(&v);
        assert_relative_eq!(hv[0], -1.0, epsilon = 1e-15);
        assert!(hv[1].abs() < 1e-15);

        let v = DVector::from_vec(vec![3.0, 4.0]);
        let hv = Householder::new(v.column(0)).unwrap().apply(&v);
        assert_relative_eq!(hv[0], -5.0, epsilon = 1e-12);
        assert!(hv[1].abs() < 1e-12);

        let v = DVector::from_vec(vec![-3.0, 4.0]);
        let hv = Householder::new(v.column(0)).unwrap().apply(&v);
        assert_relative_eq!(hv[0], 5.0, epsilon = 1e-12);

        // sign(0) = +1
        let v = DVector::from_vec(vec![0.0, 2.0]);
        let hv = Householder::new(v.column(0)).unwrap().apply(&v);
        assert_relative_eq!(hv[0], -2.0, epsilon = 1e-12);
    }

    #[test]
    fn reflector_is_orthogonal_and_symmetric() {
        let m = gaussian(6, 1, 11);
        let v = m.column(0).into_owned();
        let h = Householder::new(v.column(0)).unwrap();
        let hm = h.matrix();
        assert!((hm.transpose() * &hm - DMatrix::<f64>::identity(6, 6)).amax() <= 1e-12);
        assert!((hm.transpose() - &hm).amax() <= 1e-15);
        let hv = &hm * &v;
        assert!(hv.rows(1, 5).amax() <= 1e-12 * v.norm());
        assert_relative_eq!(hv[0].abs(), v.norm(), max_relative = 1e-12);
    }

    #[test]
    fn reflector_rejects_zero() {
        let v = DVector::<f64>::zeros(3);
        assert!(matches!(Householder::new(v.column(0)), Err(Error::ZeroVector)));
    }

    #[test]
    fn orthogonal_columns_sorted_by_norm() {
        let w = DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, 1.0, 2.0]));
        let qr = constrained_qr(&w, &ConstraintSpec::unconstrained(), 3).unwrap();
        assert_eq!(qr.placement().indices(), &[0, 2, 1]);
    }

    #[test]
    fn factorization_reproduces_permuted_input() {
        let w = gaussian(5, 12, 3);
        let qr = constrained_qr(&w, &ConstraintSpec::unconstrained(), 5).unwrap();
        let mut permuted = DMatrix::zeros(5, 12);
        for (dst, &src) in qr.permutation().iter().enumerate() {
            permuted.set_column(dst, &w.column(src));
        }
        assert!((qr.q() * qr.r() - permuted).amax() < 1e-12);
        assert!((qr.q().transpose() * qr.q() - DMatrix::<f64>::identity(5, 5)).amax() < 1e-12);
        for j in 0..5 {
            for i in j + 1..5 {
                assert_eq!(qr.r()[(i, j)], 0.0);
            }
        }
    }

    #[test]
    fn ties_go_to_lowest_index() {
        let w = DMatrix::<f64>::identity(2, 4);
        let qr = constrained_qr(&w, &ConstraintSpec::unconstrained(), 2).unwrap();
        assert_eq!(qr.placement().indices(), &[0, 1]);
    }

    #[test]
    fn region_max_caps_region() {
        // columns 0 and 1 dominate, region {0, 1} with budget 1
        let w = DMatrix::from_row_slice(2, 4, &[5.0, 0.0, 1.0, 0.0, 0.0, 4.0, 0.0, 1.5]);
        let c = ConstraintSpec::region_max(vec![0, 1], 1).unwrap();
        let qr = constrained_qr(&w, &c, 2).unwrap();
        assert_eq!(qr.placement().indices(), &[0, 3]);
        assert_eq!(qr.first_constrained_iteration(), Some(1));
        assert!(c.is_satisfied_by(qr.placement()));
    }

    #[test]
    fn region_exact_fills_deficit_at_the_end() {
        let w = DMatrix::from_row_slice(
            3,
            5,
            &[
                5.0, 0.0, 0.0, 0.3, 0.0, //
                0.0, 4.0, 0.0, 0.0, 0.2, //
                0.0, 0.0, 3.0, 0.1, 0.1,
            ],
        );
        let c = ConstraintSpec::region_exact(vec![3, 4], 2).unwrap();
        let qr = constrained_qr(&w, &c, 3).unwrap();
        let idx = qr.placement().indices();
        assert_eq!(idx[0], 0);
        assert!(c.is_satisfied_by(qr.placement()));
        assert_eq!(qr.first_constrained_iteration(), Some(1));
    }

    #[test]
    fn region_exact_infeasible_when_region_exhausted() {
        // region column is zero, so the deficit can never be filled
        let w = DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        let c = ConstraintSpec::region_exact(vec![2], 1).unwrap();
        let err = constrained_qr(&w, &c, 2).unwrap_err();
        assert!(matches!(err, Error::RankDeficient { iteration: 2 }));
    }

    #[test]
    fn predetermined_goes_last() {
        let w = gaussian(4, 10, 5);
        let free = constrained_qr(&w, &ConstraintSpec::unconstrained(), 4).unwrap();
        let fixed: Vec<usize> = (0..10)
            .filter(|i| !free.placement().indices()[..2].contains(i))
            .take(2)
            .collect();
        let c = ConstraintSpec::predetermined(fixed.clone()).unwrap();
        let qr = constrained_qr(&w, &c, 4).unwrap();
        assert_eq!(&qr.placement().indices()[..2], &free.placement().indices()[..2]);
        let mut tail = qr.placement().indices()[2..].to_vec();
        tail.sort_unstable();
        assert_eq!(tail, fixed);
    }

    #[test]
    fn predetermined_collision_is_infeasible() {
        let w = gaussian(3, 8, 6);
        let free = constrained_qr(&w, &ConstraintSpec::unconstrained(), 3).unwrap();
        let first = free.placement().indices()[0];
        let other = (0..8).find(|i| !free.placement().contains(*i)).unwrap();
        let c = ConstraintSpec::predetermined(vec![first, other]).unwrap();
        let err = constrained_qr(&w, &c, 3).unwrap_err();
        assert!(matches!(err, Error::Infeasible { iteration: 2, .. }), "{err}");
    }

    #[test]
    fn min_distance_spreads_sensors() {
        let w = gaussian(4, 30, 8);
        let c = ConstraintSpec::min_distance(3.0, GridGeometry::line(30)).unwrap();
        let qr = constrained_qr(&w, &c, 4).unwrap();
        assert!(c.is_satisfied_by(qr.placement()));
        let free = constrained_qr(&w, &ConstraintSpec::unconstrained(), 4).unwrap();
        assert_eq!(qr.placement().indices()[0], free.placement().indices()[0]);
    }

    #[test]
    fn min_distance_runs_out_of_room() {
        let w = gaussian(3, 5, 9);
        let c = ConstraintSpec::min_distance(10.0, GridGeometry::line(5)).unwrap();
        let err = constrained_qr(&w, &c, 3).unwrap_err();
        assert!(matches!(err, Error::Infeasible { iteration: 2, .. }));
    }

    #[test]
    fn oversampling_rejected() {
        let w = gaussian(3, 5, 9);
        assert!(matches!(
            constrained_qr(&w, &ConstraintSpec::unconstrained(), 4),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn rank_deficient_input() {
        let mut w = gaussian(3, 6, 10);
        let row = w.row(0).into_owned();
        w.set_row(2, &row);
        let err = constrained_qr(&w, &ConstraintSpec::unconstrained(), 3).unwrap_err();
        assert!(matches!(err, Error::RankDeficient { iteration: 3 }));
    }

    #[test]
    fn log_det_examples() {
        assert_eq!(information_log_det(&DMatrix::identity(2, 2)), 0.0);
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 3.0]));
        assert_relative_eq!(information_log_det(&m), 36f64.ln(), epsilon = 1e-14);
        assert_relative_eq!(information_log_det(&m), 3.5835189384561099, epsilon = 1e-12);
        let singular = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        assert_eq!(information_log_det(&singular), f64::NEG_INFINITY);
    }

    #[test]
    fn tall_log_det_matches_normal_matrix() {
        let m = gaussian(7, 4, 12);
        let direct = (m.transpose() * &m).determinant().ln();
        assert_relative_eq!(information_log_det(&m), direct, max_relative = 1e-12);
    }

    #[test]
    fn square_log_det_is_twice_log_abs_det() {
        let m = gaussian(5, 5, 13);
        assert_relative_eq!(
            information_log_det(&m),
            2.0 * m.determinant().abs().ln(),
            max_relative = 1e-12
        );
    }

    #[test]
    fn log_det_equals_sum_of_squared_diagonal() {
        let w = gaussian(6, 20, 14);
        let qr = constrained_qr(&w, &ConstraintSpec::unconstrained(), 6).unwrap();
        let from_r: f64 = (0..6).map(|i| qr.r()[(i, i)].powi(2).ln()).sum();
        let sampled = DMatrix::from_fn(6, 6, |i, j| w[(j, qr.placement().indices()[i])]);
        assert_relative_eq!(information_log_det(&sampled), from_r, max_relative = 1e-10);
    }
}
