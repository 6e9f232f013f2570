//! Exhaustive enumeration of feasible placements, histogram binning and
//! percentile ranking.
//!
//! Placements are visited in lexicographic order of their sorted index
//! sets by an iterative walker that prunes prefixes which cannot be
//! completed under the constraint. Work is split by leading index, and the
//! per-leading-index results are concatenated in order, so aggregates do not
//! depend on how many partitions ran.

use std::ops::Range;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::log_abs_det_in_place;
use crate::placement::{ConstraintKind, ConstraintSpec, GridGeometry, Placement};
use crate::pod::PodBasis;

pub const DEFAULT_CAP: u64 = 10_000_000;
pub const DEFAULT_BINS: usize = 60;

#[derive(Debug, Clone)]
pub struct EnumerationOptions {
    /// Refuse to enumerate more feasible placements than this.
    pub cap: u64,
    /// Number of contiguous leading-index partitions run in parallel.
    pub partitions: usize,
}

impl Default for EnumerationOptions {
    fn default() -> Self {
        Self {
            cap: DEFAULT_CAP,
            partitions: rayon::current_num_threads().max(1),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnumerationResult {
    /// Objective of every feasible placement, in lexicographic order.
    /// Singular placements hold `-inf`.
    pub objective_values: Vec<f64>,
    /// First placement (lexicographically) attaining `best_value`.
    pub best_placement: Placement,
    pub best_value: f64,
    pub total_count: u64,
}

impl EnumerationResult {
    pub fn singular_count(&self) -> usize {
        self.objective_values
            .iter()
            .filter(|v| !v.is_finite())
            .count()
    }

    pub fn percentile_rank(&self, value: f64) -> Result<f64> {
        percentile_rank(&self.objective_values, value)
    }
}

/// `C(n, k)` without overflow for the sizes used here.
pub fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128)
}

/// Closed-form number of feasible `r`-subsets of `0..n`; `None` for the
/// distance constraint, which has no closed form.
pub fn feasible_count(n: usize, r: usize, constraint: &ConstraintSpec) -> Option<u128> {
    let c = constraint.indices().len();
    let s = constraint.budget();
    let outside = n.saturating_sub(c);
    match constraint.kind() {
        ConstraintKind::Unconstrained => Some(binomial(n, r)),
        ConstraintKind::RegionExact if s > r => Some(0),
        ConstraintKind::RegionExact => Some(binomial(outside, r - s) * binomial(c, s)),
        ConstraintKind::RegionMax => Some(
            (0..=s.min(r))
                .map(|j| binomial(outside, r - j) * binomial(c, j))
                .sum(),
        ),
        ConstraintKind::Predetermined => Some(if s > r { 0 } else { binomial(n - s, r - s) }),
        ConstraintKind::MinDistance => None,
    }
}

/// Prefix test for the lexicographic walker.
struct Feasibility<'a> {
    n: usize,
    r: usize,
    in_set: Vec<bool>,
    /// Number of set members with index `>= i`.
    set_from: Vec<usize>,
    lo: usize,
    hi: usize,
    spacing: Option<(&'a GridGeometry, f64)>,
}

impl<'a> Feasibility<'a> {
    fn new(n: usize, r: usize, constraint: &'a ConstraintSpec) -> Self {
        let mut in_set = vec![false; n];
        for &i in constraint.indices() {
            in_set[i] = true;
        }
        let mut set_from = vec![0; n + 1];
        for i in (0..n).rev() {
            set_from[i] = set_from[i + 1] + in_set[i] as usize;
        }
        let s = constraint.budget();
        let (lo, hi) = match constraint.kind() {
            ConstraintKind::RegionMax => (0, s),
            ConstraintKind::RegionExact | ConstraintKind::Predetermined => (s, s),
            ConstraintKind::Unconstrained | ConstraintKind::MinDistance => (0, 0),
        };
        let spacing = match constraint.kind() {
            ConstraintKind::MinDistance => constraint.geometry().map(|g| (g, constraint.distance())),
            _ => None,
        };
        Self {
            n,
            r,
            in_set,
            set_from,
            lo,
            hi,
            spacing,
        }
    }

    /// Can the sorted prefix (whose last element was just appended) still be
    /// completed to a feasible placement?
    fn admits(&self, prefix: &[usize], inside: usize) -> bool {
        let last = *prefix.last().expect("nonempty prefix");
        if let Some((geometry, d)) = self.spacing {
            if prefix[..prefix.len() - 1]
                .iter()
                .any(|&j| geometry.distance(j, last) <= d)
            {
                return false;
            }
        }
        let slots = (self.r - prefix.len()) as i64;
        let set_after = self.set_from[last + 1] as i64;
        let outside_after = (self.n - 1 - last) as i64 - set_after;
        let inside = inside as i64;
        let j_lo = (self.lo as i64 - inside).max(slots - outside_after).max(0);
        let j_hi = (self.hi as i64 - inside).min(set_after).min(slots);
        j_lo <= j_hi
    }

    /// Visits every feasible placement whose smallest index is in `leading`.
    fn walk(&self, leading: Range<usize>, mut visit: impl FnMut(&[usize])) {
        let (n, r) = (self.n, self.r);
        let mut combo: Vec<usize> = Vec::with_capacity(r);
        for first in leading {
            if first + r > n {
                break;
            }
            combo.clear();
            combo.push(first);
            // running count of set members in `combo`
            let mut inside = self.in_set[first] as usize;
            if !self.admits(&combo, inside) {
                continue;
            }
            if r == 1 {
                visit(&combo);
                continue;
            }
            let mut next = first + 1;
            loop {
                if next + (r - combo.len()) <= n {
                    combo.push(next);
                    inside += self.in_set[next] as usize;
                    let ok = self.admits(&combo, inside);
                    if ok && combo.len() == r {
                        visit(&combo);
                    }
                    if !ok || combo.len() == r {
                        combo.pop();
                        inside -= self.in_set[next] as usize;
                    }
                    next += 1;
                } else {
                    if combo.len() == 1 {
                        break;
                    }
                    let last = combo.pop().expect("nonempty");
                    inside -= self.in_set[last] as usize;
                    next = last + 1;
                }
            }
        }
    }
}

/// Calls `visit` on every feasible `r`-subset of `0..n` (sorted), in
/// lexicographic order.
pub fn for_each_placement(
    n: usize,
    r: usize,
    constraint: &ConstraintSpec,
    visit: impl FnMut(&[usize]),
) -> Result<()> {
    if r == 0 || r > n {
        return Err(Error::RankOutOfRange { rank: r, max: n });
    }
    constraint.validate(n, r)?;
    Feasibility::new(n, r, constraint).walk(0..n, visit);
    Ok(())
}

struct Partial {
    values: Vec<f64>,
    best: Option<(f64, Vec<usize>)>,
}

pub fn enumerate_placements(basis: &PodBasis, constraint: &ConstraintSpec) -> Result<EnumerationResult> {
    enumerate_placements_with(basis, constraint, &EnumerationOptions::default())
}

/// Evaluates the log-det objective on every feasible placement of
/// `r = basis.rank()` sensors.
pub fn enumerate_placements_with(
    basis: &PodBasis,
    constraint: &ConstraintSpec,
    options: &EnumerationOptions,
) -> Result<EnumerationResult> {
    let (n, r) = (basis.n(), basis.rank());
    constraint.validate(n, r)?;
    let bound = feasible_count(n, r, constraint).unwrap_or_else(|| binomial(n, r));
    if bound > options.cap as u128 {
        return Err(Error::CapExceeded {
            count: bound,
            cap: options.cap,
        });
    }
    let feasibility = Feasibility::new(n, r, constraint);
    let modes = basis.modes();

    let parts = options.partitions.clamp(1, n);
    let chunk = n.div_ceil(parts);
    let ranges: Vec<Range<usize>> = (0..parts)
        .map(|p| (p * chunk).min(n)..((p + 1) * chunk).min(n))
        .collect();

    let partials: Vec<Partial> = ranges
        .into_par_iter()
        .map(|range| {
            let mut values = Vec::new();
            let mut best: Option<(f64, Vec<usize>)> = None;
            let mut buf = vec![0.0; r * r];
            feasibility.walk(range, |combo| {
                for (row, &state) in combo.iter().enumerate() {
                    for col in 0..r {
                        buf[row * r + col] = modes[(state, col)];
                    }
                }
                let value = 2.0 * log_abs_det_in_place(&mut buf, r);
                if best.as_ref().is_none_or(|(b, _)| value > *b) {
                    best = Some((value, combo.to_vec()));
                }
                values.push(value);
            });
            Partial { values, best }
        })
        .collect();

    let mut objective_values = Vec::with_capacity(partials.iter().map(|p| p.values.len()).sum());
    let mut best: Option<(f64, Vec<usize>)> = None;
    for part in partials {
        objective_values.extend_from_slice(&part.values);
        if let Some((value, combo)) = part.best {
            if best.as_ref().is_none_or(|(b, _)| value > *b) {
                best = Some((value, combo));
            }
        }
    }
    let (best_value, best_combo) = best.ok_or(Error::Empty("feasible placement set"))?;
    Ok(EnumerationResult {
        total_count: objective_values.len() as u64,
        objective_values,
        best_placement: Placement::new(best_combo, n)?,
        best_value,
    })
}

/// Percentage of `values` strictly below `value`. `-inf` entries count as
/// below everything.
pub fn percentile_rank(values: &[f64], value: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Empty("objective values"));
    }
    let below = values.iter().filter(|v| **v < value).count();
    Ok(100.0 * below as f64 / values.len() as f64)
}

/// Uniform-width histogram of the finite values.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    /// `bins + 1` edges.
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
    /// Non-finite values left out of the bins.
    pub excluded: u64,
}

impl Histogram {
    /// Bin containing `value`, if it lies within the edges.
    pub fn bin_of(&self, value: f64) -> Option<usize> {
        let bins = self.counts.len();
        let (lo, hi) = (self.edges[0], self.edges[bins]);
        if !(value >= lo && value <= hi) {
            return None;
        }
        let width = (hi - lo) / bins as f64;
        Some((((value - lo) / width) as usize).min(bins - 1))
    }

    /// Index of the fullest bin (first one on ties).
    pub fn mode_bin(&self) -> usize {
        let mut best = 0;
        for (i, c) in self.counts.iter().enumerate() {
            if *c > self.counts[best] {
                best = i;
            }
        }
        best
    }
}

pub fn histogram(values: &[f64], bins: usize) -> Result<Histogram> {
    if bins == 0 {
        return Err(Error::OutOfRange("histogram needs at least one bin".into()));
    }
    let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    let excluded = (values.len() - finite.len()) as u64;
    if finite.is_empty() {
        return Err(Error::Empty("finite objective values"));
    }
    let mut lo = finite.iter().copied().fold(f64::INFINITY, f64::min);
    let mut hi = finite.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi <= lo {
        let pad = lo.abs().max(1.0) * f64::EPSILON * 16.0;
        lo -= pad;
        hi += pad;
    }
    let width = (hi - lo) / bins as f64;
    let edges: Vec<f64> = (0..=bins)
        .map(|i| if i == bins { hi } else { lo + width * i as f64 })
        .collect();
    let mut hist = Histogram {
        edges,
        counts: vec![0; bins],
        excluded,
    };
    for v in finite {
        let b = hist.bin_of(v).expect("value within range");
        hist.counts[b] += 1;
    }
    Ok(hist)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn all_subsets(n: usize, r: usize) -> Vec<Vec<usize>> {
        // bitmask oracle, sorted lexicographically
        let mut out: Vec<Vec<usize>> = (0u32..1 << n)
            .filter(|m| m.count_ones() as usize == r)
            .map(|m| (0..n).filter(|i| m >> i & 1 == 1).collect())
            .collect();
        out.sort();
        out
    }

    fn walked(n: usize, r: usize, c: &ConstraintSpec) -> Vec<Vec<usize>> {
        let mut out = Vec::new();
        for_each_placement(n, r, c, |p| out.push(p.to_vec())).unwrap();
        out
    }

    fn brute(n: usize, r: usize, c: &ConstraintSpec) -> Vec<Vec<usize>> {
        all_subsets(n, r)
            .into_iter()
            .filter(|s| c.is_satisfied_by(&Placement::new(s.clone(), n).unwrap()))
            .collect()
    }

    #[test]
    fn walker_matches_bitmask_enumeration() {
        let n = 9;
        let cases = vec![
            ConstraintSpec::unconstrained(),
            ConstraintSpec::region_exact(vec![0, 4, 5, 8], 2).unwrap(),
            ConstraintSpec::region_max(vec![1, 2, 3], 1).unwrap(),
            ConstraintSpec::predetermined(vec![2, 7]).unwrap(),
            ConstraintSpec::min_distance(1.5, GridGeometry::line(n)).unwrap(),
            ConstraintSpec::min_distance(1.0, GridGeometry::grid(3, 3)).unwrap(),
        ];
        for c in &cases {
            for r in 2..=4 {
                let got = walked(n, r, c);
                let expected = brute(n, r, c);
                assert_eq!(got, expected, "{:?} r={r}", c.kind());
                if let Some(count) = feasible_count(n, r, c) {
                    assert_eq!(count, expected.len() as u128);
                }
            }
        }
    }

    #[test]
    fn closed_form_counts() {
        assert_eq!(binomial(25, 7), 480_700);
        let region: Vec<usize> = (0..5).collect();
        let exact = ConstraintSpec::region_exact(region.clone(), 2).unwrap();
        assert_eq!(feasible_count(25, 7, &exact), Some(155_040));
        let max = ConstraintSpec::region_max(region, 2).unwrap();
        let expected: u128 = (0..=2).map(|j| binomial(20, 7 - j) * binomial(5, j)).sum();
        assert_eq!(feasible_count(25, 7, &max), Some(expected));
        let pre = ConstraintSpec::predetermined(vec![1, 16]).unwrap();
        assert_eq!(feasible_count(25, 7, &pre), Some(binomial(23, 5)));
    }

    #[test]
    fn tiny_enumeration() {
        let modes = DMatrix::from_column_slice(3, 1, &[0.6, 0.0, -0.8]);
        let basis = PodBasis::from_modes(modes, vec![]).unwrap();
        let result = enumerate_placements(&basis, &ConstraintSpec::unconstrained()).unwrap();
        assert_eq!(result.total_count, 3);
        assert_eq!(result.best_placement.indices(), &[2]);
        assert_eq!(result.singular_count(), 1);
        assert!((result.best_value - 0.64f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn cap_is_enforced() {
        let modes = DMatrix::identity(30, 10);
        let basis = PodBasis::from_modes(modes, vec![]).unwrap();
        let opts = EnumerationOptions {
            cap: 1000,
            partitions: 1,
        };
        assert!(matches!(
            enumerate_placements_with(&basis, &ConstraintSpec::unconstrained(), &opts),
            Err(Error::CapExceeded { .. })
        ));
    }

    #[test]
    fn percentile_examples() {
        let v = [1.0, 2.0, 3.0];
        assert!((percentile_rank(&v, 3.0).unwrap() - 200.0 / 3.0).abs() < 1e-12);
        assert_eq!(percentile_rank(&v, 0.5).unwrap(), 0.0);
        let with_sentinel = [f64::NEG_INFINITY, 1.0];
        assert_eq!(percentile_rank(&with_sentinel, 0.0).unwrap(), 50.0);
        assert!(percentile_rank(&[], 1.0).is_err());
    }

    #[test]
    fn histogram_examples() {
        let h = histogram(&[0.0, 1.0, 2.0, 3.0], 2).unwrap();
        assert_eq!(h.counts, vec![2, 2]);
        assert_eq!(h.edges, vec![0.0, 1.5, 3.0]);
        let h = histogram(&[4.2], 3).unwrap();
        assert_eq!(h.counts.iter().sum::<u64>(), 1);
        assert_eq!(h.counts.iter().filter(|c| **c > 0).count(), 1);
        let h = histogram(&[f64::NEG_INFINITY, 1.0, 2.0], 4).unwrap();
        assert_eq!(h.excluded, 1);
        assert_eq!(h.counts.iter().sum::<u64>(), 2);
        assert!(histogram(&[f64::NEG_INFINITY], 2).is_err());
        assert!(histogram(&[1.0], 0).is_err());
    }
}
