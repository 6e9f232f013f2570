//! Sensor index sets, the selection operator and spatial constraints.
//!
//! All indices here are 0-based. User-facing files use 1-based indices and
//! convert at the [`crate::io`] boundary.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ordered sensor locations `γ₁..γ_p` in greedy selection order.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Placement {
    indices: Vec<usize>,
    n: usize,
}

impl Placement {
    pub fn new(indices: Vec<usize>, n: usize) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::Empty("placement"));
        }
        let mut seen = vec![false; n];
        for &i in &indices {
            if i >= n {
                return Err(Error::OutOfRange(format!(
                    "sensor index {} outside 1..={n}",
                    i + 1
                )));
            }
            if std::mem::replace(&mut seen[i], true) {
                return Err(Error::InvalidConstraint(format!(
                    "sensor index {} appears twice",
                    i + 1
                )));
            }
        }
        Ok(Self { indices, n })
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// State dimension the indices refer to.
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn contains(&self, index: usize) -> bool {
        self.indices.contains(&index)
    }

    pub fn selection(&self) -> SelectionOperator<'_> {
        SelectionOperator { placement: self }
    }
}

/// The `p x n` 0/1 matrix with rows `e_{γᵢ}ᵀ`, applied without being formed.
#[derive(Debug, Clone, Copy)]
pub struct SelectionOperator<'a> {
    placement: &'a Placement,
}

impl SelectionOperator<'_> {
    /// `S x = (x_{γ₁}, …, x_{γ_p})`.
    pub fn apply(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        if x.len() != self.placement.n {
            return Err(Error::DimensionMismatch {
                what: "state length",
                expected: self.placement.n,
                found: x.len(),
            });
        }
        Ok(DVector::from_iterator(
            self.placement.len(),
            self.placement.indices.iter().map(|&i| x[i]),
        ))
    }

    /// `S M`: the rows of `m` at the sensor locations.
    pub fn rows_of(&self, m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if m.nrows() != self.placement.n {
            return Err(Error::DimensionMismatch {
                what: "matrix rows",
                expected: self.placement.n,
                found: m.nrows(),
            });
        }
        Ok(DMatrix::from_fn(self.placement.len(), m.ncols(), |i, j| {
            m[(self.placement.indices[i], j)]
        }))
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut s = DMatrix::zeros(self.placement.len(), self.placement.n);
        for (row, &col) in self.placement.indices.iter().enumerate() {
            s[(row, col)] = 1.0;
        }
        s
    }
}

/// Coordinates of every state index, used by distance constraints and for
/// reporting sensor positions.
#[derive(Debug, Clone, PartialEq)]
pub struct GridGeometry {
    dim: usize,
    coords: Vec<f64>,
}

impl GridGeometry {
    /// Index `i` sits at coordinate `i`.
    pub fn line(n: usize) -> Self {
        Self {
            dim: 1,
            coords: (0..n).map(|i| i as f64).collect(),
        }
    }

    /// Row-major `nx x ny` grid: index `y * nx + x` sits at `(x, y)`.
    pub fn grid(nx: usize, ny: usize) -> Self {
        let mut coords = Vec::with_capacity(2 * nx * ny);
        for y in 0..ny {
            for x in 0..nx {
                coords.push(x as f64);
                coords.push(y as f64);
            }
        }
        Self { dim: 2, coords }
    }

    /// Arbitrary point cloud, one coordinate vector per state index.
    pub fn points(points: &[Vec<f64>]) -> Result<Self> {
        let dim = points.first().map_or(0, Vec::len);
        if dim == 0 {
            return Err(Error::Empty("geometry"));
        }
        let mut coords = Vec::with_capacity(dim * points.len());
        for p in points {
            if p.len() != dim {
                return Err(Error::DimensionMismatch {
                    what: "coordinate dimension",
                    expected: dim,
                    found: p.len(),
                });
            }
            if p.iter().any(|c| !c.is_finite()) {
                return Err(Error::NonFinite { what: "geometry" });
            }
            coords.extend_from_slice(p);
        }
        Ok(Self { dim, coords })
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn coord(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    /// Euclidean distance between the positions of two indices.
    pub fn distance(&self, i: usize, j: usize) -> f64 {
        self.coord(i)
            .iter()
            .zip(self.coord(j))
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConstraintKind {
    Unconstrained,
    RegionMax,
    RegionExact,
    Predetermined,
    MinDistance,
}

impl ConstraintKind {
    pub fn name(self) -> &'static str {
        match self {
            ConstraintKind::Unconstrained => "unconstrained",
            ConstraintKind::RegionMax => "region-max",
            ConstraintKind::RegionExact => "region-exact",
            ConstraintKind::Predetermined => "predetermined",
            ConstraintKind::MinDistance => "min-distance",
        }
    }
}

/// A spatial constraint on the greedy selection.
///
/// `indices` holds the region members (region kinds) or the fixed sensor
/// locations (predetermined). `budget` is the region quota, or the number of
/// predetermined sensors.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintSpec {
    kind: ConstraintKind,
    indices: Vec<usize>,
    budget: usize,
    min_distance: f64,
    geometry: Option<GridGeometry>,
}

impl ConstraintSpec {
    pub fn unconstrained() -> Self {
        Self {
            kind: ConstraintKind::Unconstrained,
            indices: Vec::new(),
            budget: 0,
            min_distance: 0.0,
            geometry: None,
        }
    }

    /// At most `budget` sensors inside `region`.
    pub fn region_max(region: Vec<usize>, budget: usize) -> Result<Self> {
        Self::region(ConstraintKind::RegionMax, region, budget)
    }

    /// Exactly `budget` sensors inside `region`.
    pub fn region_exact(region: Vec<usize>, budget: usize) -> Result<Self> {
        Self::region(ConstraintKind::RegionExact, region, budget)
    }

    fn region(kind: ConstraintKind, region: Vec<usize>, budget: usize) -> Result<Self> {
        check_distinct(&region)?;
        if budget > region.len() {
            return Err(Error::InvalidConstraint(format!(
                "region budget {budget} exceeds region size {}",
                region.len()
            )));
        }
        Ok(Self {
            kind,
            indices: region,
            budget,
            min_distance: 0.0,
            geometry: None,
        })
    }

    /// The given locations must all appear in the placement.
    pub fn predetermined(locations: Vec<usize>) -> Result<Self> {
        check_distinct(&locations)?;
        if locations.is_empty() {
            return Err(Error::InvalidConstraint(
                "predetermined constraint needs at least one location".into(),
            ));
        }
        Ok(Self {
            kind: ConstraintKind::Predetermined,
            budget: locations.len(),
            indices: locations,
            min_distance: 0.0,
            geometry: None,
        })
    }

    /// Selected sensors must be pairwise farther apart than `distance`.
    pub fn min_distance(distance: f64, geometry: GridGeometry) -> Result<Self> {
        if !(distance >= 0.0) || !distance.is_finite() {
            return Err(Error::InvalidConstraint(format!(
                "minimum distance {distance} must be finite and nonnegative"
            )));
        }
        Ok(Self {
            kind: ConstraintKind::MinDistance,
            indices: Vec::new(),
            budget: 0,
            min_distance: distance,
            geometry: Some(geometry),
        })
    }

    pub fn kind(&self) -> ConstraintKind {
        self.kind
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn budget(&self) -> usize {
        self.budget
    }

    pub fn distance(&self) -> f64 {
        self.min_distance
    }

    pub fn geometry(&self) -> Option<&GridGeometry> {
        self.geometry.as_ref()
    }

    /// Checks the constraint against a state dimension and sensor count.
    pub fn validate(&self, n: usize, sensors: usize) -> Result<()> {
        if let Some(&bad) = self.indices.iter().find(|&&i| i >= n) {
            return Err(Error::InvalidConstraint(format!(
                "constraint index {} outside 1..={n}",
                bad + 1
            )));
        }
        match self.kind {
            ConstraintKind::RegionExact if self.budget > sensors => {
                Err(Error::InvalidConstraint(format!(
                    "cannot place exactly {} of {sensors} sensors in the region",
                    self.budget
                )))
            }
            ConstraintKind::Predetermined if self.budget > sensors => {
                Err(Error::InvalidConstraint(format!(
                    "{} predetermined locations exceed the {sensors} sensors",
                    self.budget
                )))
            }
            ConstraintKind::MinDistance => match &self.geometry {
                None => Err(Error::InvalidConstraint(
                    "distance constraint requires a geometry".into(),
                )),
                Some(g) if g.len() != n => Err(Error::DimensionMismatch {
                    what: "geometry points",
                    expected: n,
                    found: g.len(),
                }),
                Some(_) => Ok(()),
            },
            _ => Ok(()),
        }
    }

    /// Post-hoc check that a placement honours the constraint.
    pub fn is_satisfied_by(&self, placement: &Placement) -> bool {
        let inside = placement
            .indices()
            .iter()
            .filter(|i| self.indices.contains(i))
            .count();
        match self.kind {
            ConstraintKind::Unconstrained => true,
            ConstraintKind::RegionMax => inside <= self.budget,
            ConstraintKind::RegionExact => inside == self.budget,
            ConstraintKind::Predetermined => self.indices.iter().all(|i| placement.contains(*i)),
            ConstraintKind::MinDistance => {
                let Some(g) = &self.geometry else {
                    return false;
                };
                let idx = placement.indices();
                idx.iter().enumerate().all(|(a, &i)| {
                    idx[a + 1..]
                        .iter()
                        .all(|&j| g.distance(i, j) > self.min_distance)
                })
            }
        }
    }
}

fn check_distinct(indices: &[usize]) -> Result<()> {
    let mut sorted = indices.to_vec();
    sorted.sort_unstable();
    if let Some(w) = sorted.windows(2).find(|w| w[0] == w[1]) {
        return Err(Error::InvalidConstraint(format!(
            "constraint index {} listed twice",
            w[0] + 1
        )));
    }
    Ok(())
}
