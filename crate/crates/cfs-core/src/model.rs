//! The two settings share one interface: a symmetric nonnegative Lagrangian
//! on a space of points, optionally with a trace.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CfsError, Result};
use crate::measure::{AbstractPoint, DiscreteMeasure, Point};
use crate::numeric::median;
use crate::spectral::{pair_spectrum, CMatrix, CfsPoint};

/// Values of one pair that the action functionals need.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairValues {
    pub lagrangian: f64,
    pub lagrangian_kappa: f64,
    /// |xy|^2 in the fermion setting; zero in the compact setting.
    pub weight_squared: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub count: usize,
    /// Probe radius as a multiple of the median point magnitude.
    pub radius_factor: f64,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self { count: 64, radius_factor: 0.5, seed: 0 }
    }
}

pub trait CausalModel {
    type Point: Point;

    fn pair(&self, x: &Self::Point, y: &Self::Point) -> Result<PairValues>;

    fn lagrangian_kappa(&self, x: &Self::Point, y: &Self::Point) -> Result<f64> {
        Ok(self.pair(x, y)?.lagrangian_kappa)
    }

    /// None when the setting has no trace constraint.
    fn trace(&self, x: &Self::Point) -> Option<f64>;

    /// Seeded probe points for the minimality check, with the radius used.
    fn probes(&self, m: &DiscreteMeasure<Self::Point>, cfg: &ProbeConfig) -> Result<(Vec<Self::Point>, f64)>;

    fn validate(&self, m: &DiscreteMeasure<Self::Point>) -> Result<()>;
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CfsModel {
    pub kappa: f64,
}

impl CfsModel {
    pub fn new(kappa: f64) -> Result<Self> {
        if !(kappa >= 0.0) || !kappa.is_finite() {
            return Err(CfsError::InvalidInput(format!("kappa must be nonnegative, got {kappa}")));
        }
        Ok(Self { kappa })
    }
}

fn probe_radius<P: Point>(m: &DiscreteMeasure<P>, cfg: &ProbeConfig) -> f64 {
    let mags: Vec<f64> = m.support().iter().map(|&i| m.points()[i].magnitude()).collect();
    let r = cfg.radius_factor * median(&mags);
    if r > 0.0 { r } else { cfg.radius_factor.max(1e-3) }
}

impl CausalModel for CfsModel {
    type Point = CfsPoint;

    fn pair(&self, x: &CfsPoint, y: &CfsPoint) -> Result<PairValues> {
        let s = pair_spectrum(x, y)?;
        Ok(PairValues {
            lagrangian: s.lagrangian,
            lagrangian_kappa: s.lagrangian_kappa(self.kappa),
            weight_squared: s.weight_squared(),
        })
    }

    fn trace(&self, x: &CfsPoint) -> Option<f64> {
        Some(x.trace())
    }

    /// Half the probes perturb a support atom at a tenth of the radius, the
    /// other half at the full radius. Perturbations are rescaled once so that
    /// the operator-norm distance is close to the target.
    fn probes(&self, m: &DiscreteMeasure<CfsPoint>, cfg: &ProbeConfig) -> Result<(Vec<CfsPoint>, f64)> {
        let support = m.support();
        if support.is_empty() || cfg.count == 0 {
            return Ok((vec![], 0.0));
        }
        let radius = probe_radius(m, cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut out = Vec::with_capacity(cfg.count);
        for k in 0..cfg.count {
            let base = &m.points()[support[k % support.len()]];
            let target = if k % 2 == 0 { 0.1 * radius } else { radius };
            let psi = base.psi();
            let dir = CMatrix::from_fn(psi.nrows(), psi.ncols(), |_, _| {
                Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
            });
            let dir = &dir / Complex64::new(dir.norm().max(1e-300), 0.0);
            let trial = |s: f64| base.with_psi(psi + &dir * Complex64::new(s, 0.0));
            let s0 = target / (2.0 * psi.norm() + target.sqrt()).max(1e-12);
            let p0 = trial(s0)?;
            let d0 = p0.distance(base);
            let p = if d0 > 0.0 { trial(s0 * target / d0)? } else { p0 };
            out.push(p);
        }
        Ok((out, radius))
    }

    fn validate(&self, m: &DiscreteMeasure<CfsPoint>) -> Result<()> {
        if let Some(first) = m.points().first() {
            for p in m.points() {
                if p.spin_dim() != first.spin_dim() || p.hilbert_dim() != first.hilbert_dim() {
                    return Err(CfsError::DimensionMismatch("atoms have different (n, f)".into()));
                }
            }
        }
        Ok(())
    }
}

/// Kernels of the compact setting.
#[derive(Debug, Clone, PartialEq)]
pub enum CompactKernel {
    /// L = value everywhere.
    Constant { value: f64 },
    /// Bilinear extension x^T M y of a symmetric nonnegative matrix, points
    /// are barycentric coordinates on the simplex spanned by M's index set.
    Matrix { values: DMatrix<f64> },
    /// height * max(0, 1 - |x - y| / radius) on R^d.
    Tent { radius: f64, height: f64 },
}

impl CompactKernel {
    pub fn constant(value: f64) -> Result<Self> {
        if !(value >= 0.0) || !value.is_finite() {
            return Err(CfsError::InvalidInput("constant kernel must be finite and nonnegative".into()));
        }
        Ok(Self::Constant { value })
    }

    pub fn matrix(values: DMatrix<f64>) -> Result<Self> {
        if !values.is_square() || values.nrows() == 0 {
            return Err(CfsError::InvalidInput("kernel matrix must be square and nonempty".into()));
        }
        for i in 0..values.nrows() {
            for j in 0..values.ncols() {
                let v = values[(i, j)];
                if !(v >= 0.0) || !v.is_finite() {
                    return Err(CfsError::InvalidInput(format!("kernel entry ({i},{j}) = {v} is not nonnegative")));
                }
                if v != values[(j, i)] {
                    return Err(CfsError::InvalidInput("kernel matrix must be symmetric".into()));
                }
            }
        }
        Ok(Self::Matrix { values })
    }

    /// The m x m identity kernel.
    pub fn diagonal(m: usize) -> Self {
        Self::Matrix { values: DMatrix::identity(m, m) }
    }

    pub fn tent(radius: f64, height: f64) -> Result<Self> {
        if !(radius > 0.0) || !(height >= 0.0) || !radius.is_finite() || !height.is_finite() {
            return Err(CfsError::InvalidInput("tent kernel needs positive radius and nonnegative height".into()));
        }
        Ok(Self::Tent { radius, height })
    }

    /// Vertex i of the simplex for a matrix kernel.
    pub fn vertex(&self, i: usize) -> Option<AbstractPoint> {
        match self {
            Self::Matrix { values } if i < values.nrows() => {
                let mut c = vec![0.0; values.nrows()];
                c[i] = 1.0;
                Some(AbstractPoint::new(c))
            }
            _ => None,
        }
    }

    pub fn evaluate(&self, x: &AbstractPoint, y: &AbstractPoint) -> Result<f64> {
        match self {
            Self::Constant { value } => Ok(*value),
            Self::Matrix { values } => {
                let m = values.nrows();
                if x.coords.len() != m || y.coords.len() != m {
                    return Err(CfsError::DimensionMismatch(format!("matrix kernel expects {m} coordinates")));
                }
                // symmetric summation order so that L(x, y) == L(y, x) bitwise
                let mut s = 0.0;
                for a in 0..m {
                    s += values[(a, a)] * (x.coords[a] * y.coords[a]);
                    for b in a + 1..m {
                        s += values[(a, b)] * (x.coords[a] * y.coords[b] + x.coords[b] * y.coords[a]);
                    }
                }
                Ok(s.max(0.0))
            }
            Self::Tent { radius, height } => {
                if x.coords.len() != y.coords.len() {
                    return Err(CfsError::DimensionMismatch("tent kernel points differ in dimension".into()));
                }
                Ok(height * (1.0 - x.distance(y) / radius).max(0.0))
            }
        }
    }

    pub fn check_point(&self, x: &AbstractPoint) -> Result<()> {
        if x.coords.iter().any(|c| !c.is_finite()) {
            return Err(CfsError::InvalidInput("non-finite coordinate".into()));
        }
        if let Self::Matrix { values } = self {
            let s: f64 = x.coords.iter().sum();
            if x.coords.len() != values.nrows() || x.coords.iter().any(|c| *c < -1e-12) || (s - 1.0).abs() > 1e-9 {
                return Err(CfsError::InvalidInput(format!(
                    "matrix-kernel points must be barycentric coordinates of length {}",
                    values.nrows()
                )));
            }
        }
        Ok(())
    }
}

impl CausalModel for CompactKernel {
    type Point = AbstractPoint;

    fn pair(&self, x: &AbstractPoint, y: &AbstractPoint) -> Result<PairValues> {
        let l = self.evaluate(x, y)?;
        Ok(PairValues { lagrangian: l, lagrangian_kappa: l, weight_squared: 0.0 })
    }

    fn trace(&self, _x: &AbstractPoint) -> Option<f64> {
        None
    }

    /// Matrix kernels: the simplex vertices, where the linear function ell
    /// attains its infimum, so the check is exact. Constant kernels: the
    /// support itself. Tent kernels: seeded points around the support.
    fn probes(&self, m: &DiscreteMeasure<AbstractPoint>, cfg: &ProbeConfig) -> Result<(Vec<AbstractPoint>, f64)> {
        match self {
            Self::Matrix { values } => {
                Ok(((0..values.nrows()).filter_map(|i| self.vertex(i)).collect(), 0.0))
            }
            Self::Constant { .. } => Ok((m.support().iter().map(|&i| m.points()[i].clone()).collect(), 0.0)),
            Self::Tent { radius, .. } => {
                let support = m.support();
                if support.is_empty() {
                    return Ok((vec![], 0.0));
                }
                let r = probe_radius(m, cfg).max(0.5 * radius);
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
                let pts = (0..cfg.count)
                    .map(|k| {
                        let base = &m.points()[support[k % support.len()]];
                        let scale = if k % 2 == 0 { 0.1 * r } else { r };
                        AbstractPoint::new(base.coords.iter().map(|c| c + scale * rng.gen_range(-1.0..1.0)).collect())
                    })
                    .collect();
                Ok((pts, r))
            }
        }
    }

    fn validate(&self, m: &DiscreteMeasure<AbstractPoint>) -> Result<()> {
        for p in m.points() {
            self.check_point(p)?;
        }
        if let (Self::Tent { .. }, Some(first)) = (self, m.points().first()) {
            if m.points().iter().any(|p| p.coords.len() != first.coords.len()) {
                return Err(CfsError::DimensionMismatch("points differ in dimension".into()));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn diagonal_kernel_on_vertices() {
        let k = CompactKernel::diagonal(3);
        let v: Vec<_> = (0..3).map(|i| k.vertex(i).unwrap()).collect();
        assert_eq!(k.evaluate(&v[0], &v[0]).unwrap(), 1.0);
        assert_eq!(k.evaluate(&v[0], &v[2]).unwrap(), 0.0);
        let mid = v[0].lerp(&v[1], 0.5);
        assert!((k.evaluate(&mid, &v[1]).unwrap() - 0.5).abs() < 1e-15);
        assert!(k.vertex(3).is_none());
    }

    #[test]
    fn kernel_constructors_validate() {
        assert!(CompactKernel::matrix(DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.4, 1.0])).is_err());
        assert!(CompactKernel::matrix(DMatrix::from_row_slice(2, 2, &[1.0, -0.5, -0.5, 1.0])).is_err());
        assert!(CompactKernel::tent(0.0, 1.0).is_err());
        assert!(CompactKernel::constant(-1.0).is_err());
        let k = CompactKernel::diagonal(2);
        assert!(k.check_point(&AbstractPoint::new(vec![0.3, 0.3])).is_err());
        assert!(k.check_point(&AbstractPoint::new(vec![0.3, 0.7])).is_ok());
    }

    #[test]
    fn tent_kernel_values() {
        let k = CompactKernel::tent(2.0, 3.0).unwrap();
        let a = AbstractPoint::new(vec![0.0, 0.0]);
        let b = AbstractPoint::new(vec![0.0, 1.0]);
        assert!((k.evaluate(&a, &b).unwrap() - 1.5).abs() < 1e-15);
        assert_eq!(k.evaluate(&a, &AbstractPoint::new(vec![3.0, 0.0])).unwrap(), 0.0);
    }

    #[test]
    fn cfs_probes_are_seeded_and_near() {
        use crate::spectral::CMatrix;
        let mut psi = CMatrix::zeros(2, 3);
        psi[(0, 0)] = Complex64::new(1.0, 0.0);
        psi[(1, 1)] = Complex64::new(1.5, 0.0);
        let p = CfsPoint::new(psi, 1).unwrap();
        let m = DiscreteMeasure::uniform(vec![p.clone()], 1.0).unwrap();
        let cfg = ProbeConfig { count: 8, radius_factor: 0.5, seed: 11 };
        let (a, r) = CfsModel::default().probes(&m, &cfg).unwrap();
        let (b, _) = CfsModel::default().probes(&m, &cfg).unwrap();
        assert_eq!(a, b);
        assert!((r - 0.5 * p.norm()).abs() < 1e-12);
        for (k, q) in a.iter().enumerate() {
            let target = if k % 2 == 0 { 0.1 * r } else { r };
            let d = q.distance(&p);
            assert!(d > 0.5 * target && d < 1.5 * target, "probe {k}: {d} vs {target}");
        }
    }

    proptest! {
        #[test]
        fn prop_matrix_kernel_symmetric(a in proptest::collection::vec(0.0f64..1.0, 3), b in proptest::collection::vec(0.0f64..1.0, 3),
                                        m in proptest::collection::vec(0.0f64..2.0, 6)) {
            let vals = DMatrix::from_row_slice(3, 3, &[m[0], m[1], m[2], m[1], m[3], m[4], m[2], m[4], m[5]]);
            let k = CompactKernel::matrix(vals).unwrap();
            let x = AbstractPoint::new(a);
            let y = AbstractPoint::new(b);
            let l = k.evaluate(&x, &y).unwrap();
            prop_assert_eq!(l, k.evaluate(&y, &x).unwrap());
            prop_assert!(l >= 0.0);
        }
    }
}
