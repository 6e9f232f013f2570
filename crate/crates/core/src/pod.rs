//! Proper orthogonal decomposition of snapshot data.
//!
//! Snapshots are used raw: no mean is subtracted before the SVD, so the
//! leading mode carries the absolute level of the field.

use nalgebra::{DMatrix, DVector, SVD};

use crate::error::{Error, Result};

/// Column-stacked simulation states, `n` rows by `m` snapshots.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotMatrix {
    data: DMatrix<f64>,
}

impl SnapshotMatrix {
    pub fn new(data: DMatrix<f64>) -> Result<Self> {
        if data.nrows() == 0 || data.ncols() == 0 {
            return Err(Error::Empty("snapshot matrix"));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "snapshot matrix",
            });
        }
        Ok(Self { data })
    }

    /// Builds from a column-major buffer of `n * m` values.
    pub fn from_column_major(n: usize, m: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n * m {
            return Err(Error::DimensionMismatch {
                what: "snapshot payload length",
                expected: n * m,
                found: values.len(),
            });
        }
        Self::new(DMatrix::from_vec(n, m, values))
    }

    /// State dimension.
    pub fn n(&self) -> usize {
        self.data.nrows()
    }

    /// Number of snapshots.
    pub fn m(&self) -> usize {
        self.data.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn snapshot(&self, j: usize) -> DVector<f64> {
        self.data.column(j).into_owned()
    }

    /// Snapshots `range` as a new matrix.
    pub fn columns(&self, range: std::ops::Range<usize>) -> Result<Self> {
        if range.end > self.m() || range.is_empty() {
            return Err(Error::OutOfRange(format!(
                "snapshot range {}..{} outside 0..{}",
                range.start,
                range.end,
                self.m()
            )));
        }
        Self::new(self.data.columns(range.start, range.len()).into_owned())
    }

    /// Column-major copy of the entries.
    pub fn to_column_major(&self) -> Vec<f64> {
        self.data.as_slice().to_vec()
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.data
    }
}

/// Truncated POD basis: the leading `r` left singular vectors of the
/// snapshot matrix and the full list of singular values.
#[derive(Debug, Clone, PartialEq)]
pub struct PodBasis {
    modes: DMatrix<f64>,
    singular_values: Vec<f64>,
}

/// Tolerance used when validating orthonormality of supplied modes.
pub const ORTHONORMALITY_TOL: f64 = 1e-10;

impl PodBasis {
    /// Wraps an externally computed basis. The columns of `modes` must be
    /// orthonormal; `singular_values` may be empty when unknown.
    pub fn from_modes(modes: DMatrix<f64>, singular_values: Vec<f64>) -> Result<Self> {
        let (n, r) = modes.shape();
        if n == 0 || r == 0 {
            return Err(Error::Empty("basis"));
        }
        if r > n {
            return Err(Error::RankOutOfRange { rank: r, max: n });
        }
        if modes.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { what: "basis" });
        }
        let gram = modes.transpose() * &modes;
        let dev = (gram - DMatrix::identity(r, r)).amax();
        if dev > ORTHONORMALITY_TOL {
            return Err(Error::Format(format!(
                "basis columns are not orthonormal (max deviation {dev:e})"
            )));
        }
        if singular_values.windows(2).any(|w| w[0] < w[1]) || singular_values.iter().any(|s| *s < 0.0)
        {
            return Err(Error::Format(
                "singular values must be nonnegative and nonincreasing".into(),
            ));
        }
        Ok(Self {
            modes,
            singular_values,
        })
    }

    pub fn n(&self) -> usize {
        self.modes.nrows()
    }

    pub fn rank(&self) -> usize {
        self.modes.ncols()
    }

    /// The `n x r` mode matrix.
    pub fn modes(&self) -> &DMatrix<f64> {
        &self.modes
    }

    pub fn singular_values(&self) -> &[f64] {
        &self.singular_values
    }

    /// Keeps only the leading `rank` modes.
    pub fn truncate(&self, rank: usize) -> Result<Self> {
        if rank == 0 || rank > self.rank() {
            return Err(Error::RankOutOfRange {
                rank,
                max: self.rank(),
            });
        }
        Ok(Self {
            modes: self.modes.columns(0, rank).into_owned(),
            singular_values: self.singular_values.clone(),
        })
    }

    /// Orthogonal projection coefficients `Ψᵀ x`.
    pub fn project(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        if x.len() != self.n() {
            return Err(Error::DimensionMismatch {
                what: "state length",
                expected: self.n(),
                found: x.len(),
            });
        }
        Ok(self.modes.tr_mul(x))
    }

    /// `Ψ a` for a coefficient vector.
    pub fn expand(&self, coefficients: &DVector<f64>) -> Result<DVector<f64>> {
        if coefficients.len() != self.rank() {
            return Err(Error::DimensionMismatch {
                what: "coefficient length",
                expected: self.rank(),
                found: coefficients.len(),
            });
        }
        Ok(&self.modes * coefficients)
    }
}

/// Leading `rank` left singular vectors of `snapshots`.
///
/// Each mode is sign-normalized so that its largest-magnitude entry is
/// positive (the first such entry on exact ties), which makes the basis and
/// any pivot order computed from it reproducible.
pub fn compute_pod(snapshots: &SnapshotMatrix, rank: usize) -> Result<PodBasis> {
    let (n, m) = (snapshots.n(), snapshots.m());
    let max = n.min(m);
    if rank == 0 || rank > max {
        return Err(Error::RankOutOfRange { rank, max });
    }

    let svd = SVD::new(snapshots.matrix().clone(), true, false);
    let u = svd.u.expect("left singular vectors requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    // stable sort keeps the backend's order on exact ties
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));

    let singular_values: Vec<f64> = order
        .iter()
        .map(|&k| svd.singular_values[k].max(0.0))
        .collect();
    let mut modes = DMatrix::zeros(n, rank);
    for (dst, &src) in order.iter().take(rank).enumerate() {
        let mut col = u.column(src).into_owned();
        let pivot = col
            .iter()
            .enumerate()
            .fold((0usize, 0.0f64), |best, (i, v)| {
                if v.abs() > best.1 {
                    (i, v.abs())
                } else {
                    best
                }
            })
            .0;
        if col[pivot] < 0.0 {
            col.neg_mut();
        }
        modes.set_column(dst, &col);
    }

    Ok(PodBasis {
        modes,
        singular_values,
    })
}

/// Normalized and cumulative singular-value content.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyContent {
    pub per_mode: Vec<f64>,
    pub cumulative: Vec<f64>,
}

/// `per_mode[k] = σ_k / Σ_j σ_j` over all singular values of the basis.
pub fn energy_content(basis: &PodBasis) -> Result<EnergyContent> {
    energy_from_singular_values(basis.singular_values())
}

pub fn energy_from_singular_values(singular_values: &[f64]) -> Result<EnergyContent> {
    let total: f64 = singular_values.iter().sum();
    if singular_values.is_empty() || total <= 0.0 {
        return Err(Error::ZeroEnergy);
    }
    let per_mode: Vec<f64> = singular_values.iter().map(|s| s / total).collect();
    let mut acc = 0.0;
    let mut cumulative: Vec<f64> = per_mode
        .iter()
        .map(|p| {
            acc += p;
            acc.min(1.0)
        })
        .collect();
    // pin the final entry against summation drift
    if let Some(last) = cumulative.last_mut() {
        *last = 1.0;
    }
    Ok(EnergyContent {
        per_mode,
        cumulative,
    })
}

pub const DEFAULT_ENERGY_THRESHOLD: f64 = 0.99;

/// Smallest rank whose cumulative energy reaches `threshold`. Advisory only;
/// nothing in the crate truncates on its own.
pub fn suggest_rank(singular_values: &[f64], threshold: f64) -> Result<usize> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::OutOfRange(format!(
            "energy threshold {threshold} outside [0, 1]"
        )));
    }
    let energy = energy_from_singular_values(singular_values)?;
    Ok(energy
        .cumulative
        .iter()
        .position(|c| *c >= threshold)
        .map_or(singular_values.len(), |k| k + 1))
}
