//! Atomic universal measures, regions and push-forwards.

use crate::error::{CfsError, Result};
use crate::numeric::ksum;
use crate::spectral::CfsPoint;

/// Default tolerance for merging coincident images under a push-forward.
pub const MERGE_TOL: f64 = 1e-9;

/// What a measure needs from its points.
pub trait Point: Clone + std::fmt::Debug {
    fn distance(&self, other: &Self) -> f64;
    /// Straight-line interpolation, used for tabulated flows.
    fn lerp(&self, other: &Self, t: f64) -> Self;
    /// Size used to scale probe radii.
    fn magnitude(&self) -> f64;
}

impl Point for CfsPoint {
    fn distance(&self, other: &Self) -> f64 {
        CfsPoint::distance(self, other)
    }

    fn lerp(&self, other: &Self, t: f64) -> Self {
        let psi = self.psi() * num_complex::Complex64::new(1.0 - t, 0.0) + other.psi() * num_complex::Complex64::new(t, 0.0);
        self.with_psi(psi).expect("interpolating points of equal shape")
    }

    fn magnitude(&self) -> f64 {
        self.norm()
    }
}

/// A point of an abstract compact space, given by coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct AbstractPoint {
    pub coords: Vec<f64>,
}

impl AbstractPoint {
    pub fn new(coords: Vec<f64>) -> Self {
        Self { coords }
    }
}

impl Point for AbstractPoint {
    fn distance(&self, other: &Self) -> f64 {
        if self.coords.len() != other.coords.len() {
            return f64::INFINITY;
        }
        ksum(self.coords.iter().zip(&other.coords).map(|(a, b)| (a - b) * (a - b))).sqrt()
    }

    fn lerp(&self, other: &Self, t: f64) -> Self {
        Self::new(self.coords.iter().zip(&other.coords).map(|(a, b)| (1.0 - t) * a + t * b).collect())
    }

    fn magnitude(&self) -> f64 {
        self.coords.iter().map(|c| c * c).sum::<f64>().sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteMeasure<P> {
    points: Vec<P>,
    weights: Vec<f64>,
    total_volume: f64,
}

impl<P: Point> DiscreteMeasure<P> {
    /// Checks weights are finite and nonnegative and sum to the total volume
    /// within 1e-9 relative.
    pub fn new(points: Vec<P>, weights: Vec<f64>, total_volume: f64) -> Result<Self> {
        if points.len() != weights.len() {
            return Err(CfsError::DimensionMismatch(format!(
                "{} points but {} weights",
                points.len(),
                weights.len()
            )));
        }
        if !(total_volume > 0.0) || !total_volume.is_finite() {
            return Err(CfsError::InvalidInput(format!("total volume must be positive, got {total_volume}")));
        }
        if let Some(w) = weights.iter().find(|w| !(**w >= 0.0) || !w.is_finite()) {
            return Err(CfsError::InvalidInput(format!("weights must be finite and nonnegative, got {w}")));
        }
        let s = ksum(weights.iter().copied());
        if (s - total_volume).abs() > 1e-9 * total_volume {
            return Err(CfsError::InvalidInput(format!("weights sum to {s}, total volume is {total_volume}")));
        }
        Ok(Self { points, weights, total_volume })
    }

    /// Uniform weights on the given points.
    pub fn uniform(points: Vec<P>, total_volume: f64) -> Result<Self> {
        let n = points.len().max(1) as f64;
        let w = vec![total_volume / n; points.len()];
        Self::new(points, w, total_volume)
    }

    /// Replaces weights, rescaling so they sum to the total volume exactly.
    pub fn with_weights(&self, weights: Vec<f64>) -> Result<Self> {
        let s = ksum(weights.iter().copied());
        if !(s > 0.0) {
            return Err(CfsError::InvalidInput("weights must have positive sum".into()));
        }
        let w = weights.iter().map(|w| w * self.total_volume / s).collect();
        Self::new(self.points.clone(), w, self.total_volume)
    }

    pub fn with_points(&self, points: Vec<P>) -> Result<Self> {
        Self::new(points, self.weights.clone(), self.total_volume)
    }

    pub fn points(&self) -> &[P] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn total_volume(&self) -> f64 {
        self.total_volume
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Indices of atoms with positive weight.
    pub fn support(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.weights[i] > 0.0).collect()
    }

    /// Reorders atoms: new atom k is old atom `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let mut seen = vec![false; self.len()];
        if perm.len() != self.len() || perm.iter().any(|&p| p >= self.len() || std::mem::replace(&mut seen[p], true)) {
            return Err(CfsError::InvalidInput("not a permutation of the atoms".into()));
        }
        Self::new(
            perm.iter().map(|&p| self.points[p].clone()).collect(),
            perm.iter().map(|&p| self.weights[p]).collect(),
            self.total_volume,
        )
    }
}

/// A subset of the support.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Region {
    indices: Vec<usize>,
}

impl Region {
    pub fn new<P: Point>(mut indices: Vec<usize>, m: &DiscreteMeasure<P>) -> Result<Self> {
        indices.sort_unstable();
        indices.dedup();
        if let Some(&i) = indices.iter().find(|&&i| i >= m.len() || m.weights()[i] <= 0.0) {
            return Err(CfsError::InvalidInput(format!("region index {i} is not in the support")));
        }
        Ok(Self { indices })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn whole<P: Point>(m: &DiscreteMeasure<P>) -> Self {
        Self { indices: m.support() }
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn contains(&self, i: usize) -> bool {
        self.indices.binary_search(&i).is_ok()
    }

    /// Support atoms outside the region.
    pub fn complement<P: Point>(&self, m: &DiscreteMeasure<P>) -> Vec<usize> {
        m.support().into_iter().filter(|i| !self.contains(*i)).collect()
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Push-forward of an atomic measure: atoms are mapped, weights carried,
/// images closer than `tol` merged into the first of them.
pub fn pushforward<P, F>(m: &DiscreteMeasure<P>, mut map: F, tol: f64) -> Result<DiscreteMeasure<P>>
where
    P: Point,
    F: FnMut(usize, &P) -> Result<P>,
{
    let mut points: Vec<P> = Vec::new();
    let mut weights: Vec<f64> = Vec::new();
    for i in m.support() {
        let image = map(i, &m.points()[i])?;
        match points.iter().position(|q| q.distance(&image) <= tol) {
            Some(k) => weights[k] += m.weights()[i],
            None => {
                points.push(image);
                weights.push(m.weights()[i]);
            }
        }
    }
    DiscreteMeasure::new(points, weights, m.total_volume())
}

/// Largest discrepancy found by greedy nearest-point matching of supports;
/// infinite when the supports have different sizes.
pub fn measure_mismatch<P: Point>(m1: &DiscreteMeasure<P>, m2: &DiscreteMeasure<P>) -> f64 {
    let s1 = m1.support();
    let mut s2 = m2.support();
    if s1.len() != s2.len() {
        return f64::INFINITY;
    }
    let mut worst: f64 = 0.0;
    for i in s1 {
        let p = &m1.points()[i];
        let (pos, d) = s2
            .iter()
            .enumerate()
            .map(|(k, &j)| (k, p.distance(&m2.points()[j])))
            .fold((usize::MAX, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best });
        if pos == usize::MAX {
            return f64::INFINITY;
        }
        let j = s2.remove(pos);
        worst = worst.max(d).max((m1.weights()[i] - m2.weights()[j]).abs());
    }
    worst
}

pub fn measure_equal<P: Point>(m1: &DiscreteMeasure<P>, m2: &DiscreteMeasure<P>, tol: f64) -> bool {
    measure_mismatch(m1, m2) <= tol
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn line(m: usize) -> Vec<AbstractPoint> {
        (0..m).map(|i| AbstractPoint::new(vec![i as f64])).collect()
    }

    #[test]
    fn constructor_validates() {
        assert!(DiscreteMeasure::new(line(2), vec![0.5, 0.5], 1.0).is_ok());
        assert!(DiscreteMeasure::new(line(2), vec![0.5, 0.6], 1.0).is_err());
        assert!(DiscreteMeasure::new(line(2), vec![1.5, -0.5], 1.0).is_err());
        assert!(DiscreteMeasure::new(line(2), vec![1.0], 1.0).is_err());
        assert!(DiscreteMeasure::new(line(1), vec![0.0], 0.0).is_err());
    }

    #[test]
    fn support_and_region() {
        let m = DiscreteMeasure::new(line(4), vec![0.5, 0.0, 0.25, 0.25], 1.0).unwrap();
        assert_eq!(m.support(), vec![0, 2, 3]);
        assert!(Region::new(vec![1], &m).is_err());
        let r = Region::new(vec![3, 0, 0], &m).unwrap();
        assert_eq!(r.indices(), &[0, 3]);
        assert_eq!(r.complement(&m), vec![2]);
        assert_eq!(Region::whole(&m).complement(&m), Vec::<usize>::new());
    }

    #[test]
    fn identity_pushforward_is_equal() {
        let m = DiscreteMeasure::new(line(3), vec![0.2, 0.3, 0.5], 1.0).unwrap();
        let p = pushforward(&m, |_, x| Ok(x.clone()), MERGE_TOL).unwrap();
        assert!(measure_equal(&m, &p, 1e-12));
    }

    #[test]
    fn cyclic_permutation_of_uniform_measure() {
        let m = DiscreteMeasure::uniform(line(5), 1.0).unwrap();
        let pts = line(5);
        let p = pushforward(&m, |i, _| Ok(pts[(i + 1) % 5].clone()), MERGE_TOL).unwrap();
        assert!(measure_equal(&m, &p, 1e-12));
        // nonuniform weights are not preserved
        let w = DiscreteMeasure::new(line(5), vec![0.1, 0.2, 0.3, 0.2, 0.2], 1.0).unwrap();
        let q = pushforward(&w, |i, _| Ok(pts[(i + 1) % 5].clone()), MERGE_TOL).unwrap();
        assert!(!measure_equal(&w, &q, 1e-9));
    }

    #[test]
    fn merging_sums_weights() {
        let m = DiscreteMeasure::new(line(3), vec![0.2, 0.3, 0.5], 1.0).unwrap();
        let p = pushforward(&m, |_, _| Ok(AbstractPoint::new(vec![7.0])), MERGE_TOL).unwrap();
        assert_eq!(p.len(), 1);
        assert!((p.weights()[0] - 1.0).abs() < 1e-15);
        assert_eq!(p.total_volume(), m.total_volume());
    }

    #[test]
    fn weight_perturbation_detected() {
        let tol = 1e-9;
        let m = DiscreteMeasure::new(line(2), vec![0.5, 0.5], 1.0).unwrap();
        let n = DiscreteMeasure::new(line(2), vec![0.5 + 10.0 * tol, 0.5 - 10.0 * tol], 1.0).unwrap();
        assert!(!measure_equal(&m, &n, tol));
        assert!(measure_equal(&m, &n, 100.0 * tol));
    }

    #[test]
    fn cfs_point_distance_is_operator_norm() {
        use crate::spectral::CMatrix;
        use num_complex::Complex64 as C;
        let mut a = CMatrix::zeros(2, 2);
        a[(1, 0)] = C::new(2.0, 0.0); // x = diag(4, 0)
        let mut b = CMatrix::zeros(2, 2);
        b[(0, 1)] = C::new(1.0, 0.0); // x = diag(0, -1)
        let x = CfsPoint::new(a, 1).unwrap();
        let y = CfsPoint::new(b, 1).unwrap();
        assert!((x.distance(&y) - 4.0).abs() < 1e-12);
        let mid = x.lerp(&y, 0.5);
        assert!((mid.psi()[(1, 0)].re - 1.0).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn prop_pushforward_conserves_volume(ws in proptest::collection::vec(0.0f64..1.0, 1..8), target in 0usize..3) {
            prop_assume!(ws.iter().sum::<f64>() > 1e-3);
            let total: f64 = ws.iter().sum();
            let m = DiscreteMeasure::new(line(ws.len()), ws.clone(), total).unwrap();
            // collapse onto at most three images
            let p = pushforward(&m, |i, _| Ok(AbstractPoint::new(vec![((i + target) % 3) as f64])), MERGE_TOL).unwrap();
            let s: f64 = p.weights().iter().sum();
            prop_assert!((s - total).abs() <= 1e-12 * total);
            prop_assert!(p.len() <= 3);
        }

        #[test]
        fn prop_equality_reflexive_symmetric(ws in proptest::collection::vec(0.01f64..1.0, 1..6), shift in 0.0f64..1e-6) {
            let total: f64 = ws.iter().sum();
            let m1 = DiscreteMeasure::new(line(ws.len()), ws.clone(), total).unwrap();
            let pts: Vec<_> = line(ws.len()).into_iter().map(|p| AbstractPoint::new(vec![p.coords[0] + shift])).collect();
            let m2 = DiscreteMeasure::new(pts, ws.clone(), total).unwrap();
            prop_assert!(measure_equal(&m1, &m1, 0.0));
            prop_assert_eq!(measure_equal(&m1, &m2, 5e-7), measure_equal(&m2, &m1, 5e-7));
        }
    }
}
