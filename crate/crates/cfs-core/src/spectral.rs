//! Closed chains, their nontrivial spectrum and the causal Lagrangian.
//!
//! A point of F is stored through its wave evaluation matrix `psi`
//! (2n rows, f columns). The spin metric is diag(+1 x n, -1 x n) and the
//! represented operator is `x = -psi^* S psi`.

use nalgebra::{DMatrix, Schur, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{CfsError, Result};

pub type CMatrix = DMatrix<Complex64>;

const SCHUR_EPS: f64 = 1e-15;
const SCHUR_MAX_ITER: usize = 10_000;

#[derive(Debug, Clone, PartialEq)]
pub struct CfsPoint {
    psi: CMatrix,
    spin_dim: usize,
}

impl CfsPoint {
    pub fn new(psi: CMatrix, spin_dim: usize) -> Result<Self> {
        if spin_dim == 0 || psi.ncols() == 0 {
            return Err(CfsError::InvalidInput("spin and Hilbert dimensions must be positive".into()));
        }
        if psi.nrows() != 2 * spin_dim {
            return Err(CfsError::DimensionMismatch(format!(
                "psi has {} rows, expected 2n = {}",
                psi.nrows(),
                2 * spin_dim
            )));
        }
        if psi.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(CfsError::InvalidInput("psi has non-finite entries".into()));
        }
        Ok(Self { psi, spin_dim })
    }

    pub fn psi(&self) -> &CMatrix {
        &self.psi
    }

    pub fn spin_dim(&self) -> usize {
        self.spin_dim
    }

    pub fn hilbert_dim(&self) -> usize {
        self.psi.ncols()
    }

    /// +1 on the first n rows, -1 on the last n.
    pub fn signature(&self, row: usize) -> f64 {
        if row < self.spin_dim { 1.0 } else { -1.0 }
    }

    fn s_psi(&self) -> CMatrix {
        let mut m = self.psi.clone();
        for r in self.spin_dim..2 * self.spin_dim {
            m.row_mut(r).neg_mut();
        }
        m
    }

    /// The f x f operator x = -psi^* S psi.
    pub fn operator(&self) -> CMatrix {
        -(self.psi.adjoint() * self.s_psi())
    }

    /// tr(x) = |lower rows|^2 - |upper rows|^2.
    pub fn trace(&self) -> f64 {
        let mut t = 0.0;
        for r in 0..2 * self.spin_dim {
            let norm: f64 = self.psi.row(r).iter().map(|z| z.norm_sqr()).sum();
            t -= self.signature(r) * norm;
        }
        t
    }

    /// Eigenvalues of the represented operator, ascending.
    pub fn operator_eigenvalues(&self) -> Vec<f64> {
        let mut ev: Vec<f64> = SymmetricEigen::new(self.operator()).eigenvalues.iter().copied().collect();
        ev.sort_by(|a, b| a.total_cmp(b));
        ev
    }

    /// Operator norm of x.
    pub fn norm(&self) -> f64 {
        self.operator_eigenvalues().iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Operator-norm distance between the represented operators.
    pub fn distance(&self, other: &CfsPoint) -> f64 {
        if self.hilbert_dim() != other.hilbert_dim() {
            return f64::INFINITY;
        }
        let d = self.operator() - other.operator();
        SymmetricEigen::new(d).eigenvalues.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Point with psi replaced, keeping the spin dimension.
    pub fn with_psi(&self, psi: CMatrix) -> Result<Self> {
        Self::new(psi, self.spin_dim)
    }
}

fn check_pair(x: &CfsPoint, y: &CfsPoint) -> Result<()> {
    if x.spin_dim != y.spin_dim || x.hilbert_dim() != y.hilbert_dim() {
        return Err(CfsError::DimensionMismatch(format!(
            "points have (n, f) = ({}, {}) and ({}, {})",
            x.spin_dim,
            x.hilbert_dim(),
            y.spin_dim,
            y.hilbert_dim()
        )));
    }
    Ok(())
}

/// Kernel P(x, y) = -psi(x) psi(y)^* S, a 2n x 2n matrix.
pub fn kernel(x: &CfsPoint, y: &CfsPoint) -> Result<CMatrix> {
    check_pair(x, y)?;
    let mut p = -(&x.psi * y.psi.adjoint());
    for c in x.spin_dim..2 * x.spin_dim {
        p.column_mut(c).neg_mut();
    }
    Ok(p)
}

/// A_xy = P(x, y) P(y, x). Its nonzero spectrum coincides with that of xy.
pub fn closed_chain(x: &CfsPoint, y: &CfsPoint) -> Result<CMatrix> {
    Ok(kernel(x, y)? * kernel(y, x)?)
}

/// The 2n eigenvalues of the closed chain with multiplicity.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenList {
    values: Vec<Complex64>,
}

impl EigenList {
    pub fn new(mut values: Vec<Complex64>) -> Self {
        // canonical order: decreasing modulus, then argument
        values.sort_by(|a, b| b.norm().total_cmp(&a.norm()).then(a.arg().total_cmp(&b.arg())));
        Self { values }
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

pub fn eigenvalues_of(m: CMatrix) -> Result<Vec<Complex64>> {
    let dim = m.nrows();
    if dim == 0 {
        return Ok(vec![]);
    }
    if m.iter().all(|z| *z == Complex64::new(0.0, 0.0)) {
        return Ok(vec![Complex64::new(0.0, 0.0); dim]);
    }
    let schur = Schur::try_new(m, SCHUR_EPS, SCHUR_MAX_ITER).ok_or(CfsError::EigenFailure { dim })?;
    let ev = schur.eigenvalues().ok_or(CfsError::EigenFailure { dim })?;
    if ev.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(CfsError::EigenFailure { dim });
    }
    Ok(ev.iter().copied().collect())
}

pub fn nontrivial_eigenvalues(x: &CfsPoint, y: &CfsPoint) -> Result<EigenList> {
    let chain = closed_chain(x, y)?;
    Ok(EigenList::new(eigenvalues_of(chain)?))
}

/// |A| = sum of eigenvalue moduli.
pub fn spectral_weight(e: &EigenList) -> f64 {
    e.values.iter().map(|z| z.norm()).sum()
}

/// Spectral quantities of one pair, computed from a single eigen solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairSpectrum {
    /// |xy|
    pub weight: f64,
    /// |(xy)^2| = sum of squared moduli
    pub square_weight: f64,
    pub lagrangian: f64,
}

impl PairSpectrum {
    pub fn from_eigenvalues(e: &EigenList, spin_dim: usize) -> Self {
        let weight = spectral_weight(e);
        let square_weight: f64 = e.values.iter().map(|z| z.norm_sqr()).sum();
        let raw = square_weight - weight * weight / (2.0 * spin_dim as f64);
        // exact difference of nonnegative terms: clamp round-off
        let tol = 1e-12 * (weight * weight + 1.0);
        let lagrangian = if raw.abs() < tol { 0.0 } else { raw.max(0.0) };
        Self { weight, square_weight, lagrangian }
    }

    /// L + kappa |xy|^2.
    pub fn lagrangian_kappa(&self, kappa: f64) -> f64 {
        self.lagrangian + kappa * self.weight * self.weight
    }

    /// |xy|^2, the boundedness integrand.
    pub fn weight_squared(&self) -> f64 {
        self.weight * self.weight
    }
}

pub fn pair_spectrum(x: &CfsPoint, y: &CfsPoint) -> Result<PairSpectrum> {
    let e = nontrivial_eigenvalues(x, y)?;
    Ok(PairSpectrum::from_eigenvalues(&e, x.spin_dim))
}

pub fn lagrangian(x: &CfsPoint, y: &CfsPoint) -> Result<f64> {
    Ok(pair_spectrum(x, y)?.lagrangian)
}

pub fn lagrangian_kappa(x: &CfsPoint, y: &CfsPoint, kappa: f64) -> Result<f64> {
    if !(kappa >= 0.0) {
        return Err(CfsError::InvalidInput(format!("kappa must be nonnegative, got {kappa}")));
    }
    Ok(pair_spectrum(x, y)?.lagrangian_kappa(kappa))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CausalType {
    Timelike,
    Spacelike,
}

pub fn causal_classify(x: &CfsPoint, y: &CfsPoint, tol: f64) -> Result<CausalType> {
    if !(tol > 0.0) {
        return Err(CfsError::InvalidInput("classification tolerance must be positive".into()));
    }
    Ok(if lagrangian(x, y)? > tol { CausalType::Timelike } else { CausalType::Spacelike })
}

/// Hermitian f x f generator -> exp(i tau A), through its eigendecomposition
/// so that exp(-i tau A) is the exact adjoint.
pub fn unitary_exp(generator: &CMatrix, tau: f64) -> CMatrix {
    let eig = SymmetricEigen::new(generator.clone());
    let v = &eig.eigenvectors;
    let phases = CMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
        eig.eigenvalues.len(),
        eig.eigenvalues.iter().map(|l| Complex64::from_polar(1.0, tau * l)),
    ));
    v * phases * v.adjoint()
}

pub fn is_hermitian(m: &CMatrix, tol: f64) -> bool {
    m.is_square() && (m - m.adjoint()).iter().all(|z| z.norm() <= tol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn random_point(rng: &mut ChaCha8Rng, n: usize, f: usize) -> CfsPoint {
        let psi = CMatrix::from_fn(2 * n, f, |_, _| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
        CfsPoint::new(psi, n).unwrap()
    }

    // Oracle: nonzero spectrum of the f x f product xy, by dense diagonalization.
    fn product_spectrum(x: &CfsPoint, y: &CfsPoint) -> Vec<Complex64> {
        let xy = x.operator() * y.operator();
        let mut ev = eigenvalues_of(xy).unwrap();
        ev.sort_by(|a, b| b.norm().total_cmp(&a.norm()));
        ev
    }

    fn assert_same_nonzero_spectrum(a: &[Complex64], b: &[Complex64], rel: f64) {
        let scale = a.iter().chain(b).map(|z| z.norm()).fold(1.0, f64::max);
        let cut = 1e-8 * scale;
        let mut a: Vec<_> = a.iter().copied().filter(|z| z.norm() > cut).collect();
        let mut b: Vec<_> = b.iter().copied().filter(|z| z.norm() > cut).collect();
        assert_eq!(a.len(), b.len(), "{a:?} vs {b:?}");
        // greedy matching, multiset comparison
        while let Some(z) = a.pop() {
            let (idx, d) = b
                .iter()
                .enumerate()
                .map(|(i, w)| (i, (z - w).norm()))
                .min_by(|p, q| p.1.total_cmp(&q.1))
                .unwrap();
            assert!(d <= rel * scale, "eigenvalue {z} unmatched, distance {d}");
            b.swap_remove(idx);
        }
    }

    #[test]
    fn operator_has_bounded_signature() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for (n, f) in [(1, 4), (2, 5), (2, 6), (3, 3)] {
            let x = random_point(&mut rng, n, f);
            let ev = x.operator_eigenvalues();
            let tol = 1e-10 * x.norm().max(1.0);
            let pos = ev.iter().filter(|v| **v > tol).count();
            let neg = ev.iter().filter(|v| **v < -tol).count();
            assert!(pos <= n && neg <= n && pos + neg <= 2 * n, "{ev:?}");
            assert!(is_hermitian(&x.operator(), 1e-12));
            let tr: f64 = ev.iter().sum();
            assert!((tr - x.trace()).abs() < 1e-10);
        }
    }

    #[test]
    fn self_chain_of_symmetric_rank_two_point() {
        // rows: +block e0, -block e1 -> x = diag(+1 at e1, -1 at e0)
        let mut psi = CMatrix::zeros(2, 3);
        psi[(0, 0)] = c(1.0, 0.0);
        psi[(1, 1)] = c(1.0, 0.0);
        let x = CfsPoint::new(psi, 1).unwrap();
        let ev = nontrivial_eigenvalues(&x, &x).unwrap();
        for z in ev.values() {
            assert!((z - c(1.0, 0.0)).norm() < 1e-14);
        }
        assert_eq!(lagrangian(&x, &x).unwrap(), 0.0);
    }

    #[test]
    fn zero_factor_gives_zero_chain() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_point(&mut rng, 1, 4);
        let y = CfsPoint::new(CMatrix::zeros(2, 4), 1).unwrap();
        let a = closed_chain(&x, &y).unwrap();
        assert_eq!(a.shape(), (2, 2));
        assert!(a.iter().all(|z| z.norm() == 0.0));
        assert!(nontrivial_eigenvalues(&x, &y).unwrap().values().iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn collinear_rank_one_points() {
        let scale: f64 = 1.7;
        let mut psi = CMatrix::zeros(2, 3);
        psi[(1, 2)] = c(scale.sqrt(), 0.0);
        let x = CfsPoint::new(psi, 1).unwrap();
        let ev = nontrivial_eigenvalues(&x, &x).unwrap();
        assert!((ev.values()[0] - c(scale * scale, 0.0)).norm() < 1e-13);
        assert!(ev.values()[1].norm() < 1e-13);
    }

    #[test]
    fn orthogonal_supports_are_spacelike() {
        let mut px = CMatrix::zeros(2, 4);
        px[(0, 0)] = c(1.0, 0.0);
        px[(1, 1)] = c(0.5, 0.3);
        let mut py = CMatrix::zeros(2, 4);
        py[(0, 2)] = c(0.2, 1.0);
        py[(1, 3)] = c(-1.0, 0.0);
        let x = CfsPoint::new(px, 1).unwrap();
        let y = CfsPoint::new(py, 1).unwrap();
        assert!(nontrivial_eigenvalues(&x, &y).unwrap().values().iter().all(|z| z.norm() == 0.0));
        assert_eq!(causal_classify(&x, &y, 1e-12).unwrap(), CausalType::Spacelike);
    }

    #[test]
    fn isospectral_to_product_f4() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for n in [1, 2] {
            for _ in 0..20 {
                let x = random_point(&mut rng, n, 4);
                let y = random_point(&mut rng, n, 4);
                let chain = nontrivial_eigenvalues(&x, &y).unwrap();
                assert_eq!(chain.len(), 2 * n);
                assert_same_nonzero_spectrum(chain.values(), &product_spectrum(&x, &y), 1e-10);
            }
        }
    }

    #[test]
    fn spectral_weight_examples() {
        let e = EigenList::new(vec![c(1.0, 0.0), c(-1.0, 0.0), c(0.0, 1.0), c(0.0, 0.0)]);
        assert_eq!(spectral_weight(&e), 3.0);
        assert_eq!(spectral_weight(&EigenList::new(vec![c(0.0, 0.0); 4])), 0.0);
    }

    #[test]
    fn spectral_weight_matches_resummation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let vals: Vec<Complex64> = (0..8).map(|_| c(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0))).collect();
        let oracle = vals.iter().rev().fold(0.0, |s, z| s + (z.re * z.re + z.im * z.im).sqrt());
        assert!((spectral_weight(&EigenList::new(vals)) - oracle).abs() < 1e-13);
    }

    #[test]
    fn lagrangian_n1_examples() {
        // eigenvalues {1, 1}: L = 2 - 4/2 = 0
        let e = EigenList::new(vec![c(1.0, 0.0), c(1.0, 0.0)]);
        assert_eq!(PairSpectrum::from_eigenvalues(&e, 1).lagrangian, 0.0);
        // eigenvalues {2, 0}: L = (|l1| - |l2|)^2 / 2 = 2
        let e = EigenList::new(vec![c(2.0, 0.0), c(0.0, 0.0)]);
        assert!((PairSpectrum::from_eigenvalues(&e, 1).lagrangian - 2.0).abs() < 1e-15);
    }

    #[test]
    fn distinct_modulus_self_pair_is_timelike() {
        let mut psi = CMatrix::zeros(2, 2);
        psi[(0, 0)] = c(1.0, 0.0);
        psi[(1, 1)] = c(2.0, 0.0);
        let x = CfsPoint::new(psi, 1).unwrap();
        // x = diag(4, -1): eigenvalues of x^2 are {16, 1}, L = 15^2/2
        assert!((lagrangian(&x, &x).unwrap() - 112.5).abs() < 1e-11);
        assert_eq!(causal_classify(&x, &x, 1e-9).unwrap(), CausalType::Timelike);
    }

    #[test]
    fn dimension_mismatch_reported() {
        let x = CfsPoint::new(CMatrix::zeros(2, 3), 1).unwrap();
        let y = CfsPoint::new(CMatrix::zeros(2, 4), 1).unwrap();
        assert!(matches!(closed_chain(&x, &y), Err(CfsError::DimensionMismatch(_))));
        assert!(CfsPoint::new(CMatrix::zeros(3, 3), 1).is_err());
        assert!(lagrangian_kappa(&x, &x, -1.0).is_err());
    }

    #[test]
    fn unitary_exp_inverse_and_central_phase() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let raw = CMatrix::from_fn(4, 4, |_, _| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
        let a = (&raw + raw.adjoint()) * c(0.5, 0.0);
        let u = unitary_exp(&a, 0.37);
        let prod = unitary_exp(&a, -0.37) * &u;
        assert!((prod - CMatrix::identity(4, 4)).norm() < 1e-13);
        let id = CMatrix::identity(3, 3) * c(2.5, 0.0);
        let phase = unitary_exp(&id, 0.4);
        assert!((phase[(0, 0)] - Complex64::from_polar(1.0, 1.0)).norm() < 1e-14);
    }

    fn arb_pair(n: usize, f: usize) -> impl Strategy<Value = (CfsPoint, CfsPoint)> {
        let len = 2 * n * f * 2;
        (
            proptest::collection::vec(-1.0f64..1.0, len),
            proptest::collection::vec(-1.0f64..1.0, len),
        )
            .prop_map(move |(a, b)| {
                let mk = |v: &[f64]| {
                    CfsPoint::new(CMatrix::from_fn(2 * n, f, |i, j| c(v[2 * (i * f + j)], v[2 * (i * f + j) + 1])), n)
                        .unwrap()
                };
                (mk(&a), mk(&b))
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn prop_isospectral((x, y) in arb_pair(2, 5)) {
            let chain = nontrivial_eigenvalues(&x, &y).unwrap();
            assert_same_nonzero_spectrum(chain.values(), &product_spectrum(&x, &y), 1e-9);
        }

        #[test]
        fn prop_symmetric_in_arguments((x, y) in arb_pair(1, 4)) {
            let a = pair_spectrum(&x, &y).unwrap();
            let b = pair_spectrum(&y, &x).unwrap();
            let s = 1.0 + a.weight_squared();
            prop_assert!((a.lagrangian - b.lagrangian).abs() <= 1e-10 * s);
            prop_assert!((a.weight_squared() - b.weight_squared()).abs() <= 1e-10 * s);
            prop_assert!(a.lagrangian >= 0.0);
        }

        #[test]
        fn prop_n1_closed_form((x, y) in arb_pair(1, 3)) {
            let e = nontrivial_eigenvalues(&x, &y).unwrap();
            let l1 = e.values()[0].norm();
            let l2 = e.values()[1].norm();
            let closed = 0.5 * (l1 - l2) * (l1 - l2);
            let l = PairSpectrum::from_eigenvalues(&e, 1).lagrangian;
            prop_assert!((l - closed).abs() <= 1e-12 * (1.0 + (l1 + l2).powi(2)));
        }

        #[test]
        fn prop_degree_two_homogeneity((x, y) in arb_pair(2, 4), t in 0.2f64..3.0) {
            // psi -> sqrt(t) psi scales x by t
            let xt = x.with_psi(x.psi() * c(t.sqrt(), 0.0)).unwrap();
            let l = lagrangian(&x, &y).unwrap();
            let lt = lagrangian(&xt, &y).unwrap();
            let s = 1.0 + pair_spectrum(&xt, &y).unwrap().weight_squared();
            prop_assert!((lt - t * t * l).abs() <= 1e-10 * s);
        }

        #[test]
        fn prop_unitary_invariance((x, y) in arb_pair(2, 4), seed in 0u64..1000, tau in -2.0f64..2.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let raw = CMatrix::from_fn(4, 4, |_, _| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
            let a = (&raw + raw.adjoint()) * c(0.5, 0.0);
            let uinv = unitary_exp(&a, -tau);
            let xu = x.with_psi(x.psi() * &uinv).unwrap();
            let yu = y.with_psi(y.psi() * &uinv).unwrap();
            let l = lagrangian(&x, &y).unwrap();
            let lu = lagrangian(&xu, &yu).unwrap();
            let s = 1.0 + pair_spectrum(&x, &y).unwrap().weight_squared();
            prop_assert!((l - lu).abs() <= 1e-10 * s);
            prop_assert!((xu.trace() - x.trace()).abs() <= 1e-12 * (1.0 + x.trace().abs()));
        }

        #[test]
        fn prop_classification_symmetric((x, y) in arb_pair(1, 3)) {
            prop_assert_eq!(causal_classify(&x, &y, 1e-9).unwrap(), causal_classify(&y, &x, 1e-9).unwrap());
        }
    }
}
