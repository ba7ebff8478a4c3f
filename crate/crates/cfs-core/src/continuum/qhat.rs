//! Lorentz-invariant momentum-space kernels Q(k) = a(k^2) k-slash/|k| + b(k^2)
//! on the lower mass cone, with piecewise-linear coefficient curves.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::dirac::{minkowski_square, slash, Dirac};
use crate::error::{CfsError, Result};

/// Sampled (q^2, a, b) curve. Linear between nodes, constant outside.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    pub q2: Vec<f64>,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

/// One-sided q^2-slopes of a and b at a shell. `right` is the slope of the
/// segment above the shell, `left` of the segment below it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShellSlopes {
    pub a_right: f64,
    pub a_left: f64,
    pub b_right: f64,
    pub b_left: f64,
}

impl ShellSlopes {
    pub fn total(&self) -> f64 {
        self.a_right + self.a_left + self.b_right + self.b_left
    }
}

impl Curve {
    pub fn validate(&self) -> Result<()> {
        let n = self.q2.len();
        if n == 0 || self.a.len() != n || self.b.len() != n {
            return Err(CfsError::InvalidInput(format!(
                "curve needs matching nonempty columns, got q2={} a={} b={}",
                n,
                self.a.len(),
                self.b.len()
            )));
        }
        if self.q2.iter().chain(&self.a).chain(&self.b).any(|v| !v.is_finite()) {
            return Err(CfsError::InvalidInput("curve contains non-finite values".into()));
        }
        if self.q2.windows(2).any(|w| w[1] <= w[0]) {
            return Err(CfsError::InvalidInput("curve q2 nodes must be strictly increasing".into()));
        }
        Ok(())
    }

    /// Index i with q2[i] <= x < q2[i+1], or None outside the node range.
    fn segment(&self, x: f64) -> Option<usize> {
        let n = self.q2.len();
        if n < 2 || x < self.q2[0] || x >= self.q2[n - 1] {
            return None;
        }
        Some(self.q2.partition_point(|&q| q <= x) - 1)
    }

    fn interp(&self, col: &[f64], x: f64) -> f64 {
        let n = self.q2.len();
        if x <= self.q2[0] {
            return col[0];
        }
        if x >= self.q2[n - 1] {
            return col[n - 1];
        }
        let i = self.segment(x).unwrap_or(n - 2);
        let t = (x - self.q2[i]) / (self.q2[i + 1] - self.q2[i]);
        col[i] + t * (col[i + 1] - col[i])
    }

    pub fn a_at(&self, q2: f64) -> f64 {
        self.interp(&self.a, q2)
    }

    pub fn b_at(&self, q2: f64) -> f64 {
        self.interp(&self.b, q2)
    }

    fn seg_slope(&self, col: &[f64], i: usize) -> f64 {
        (col[i + 1] - col[i]) / (self.q2[i + 1] - self.q2[i])
    }

    fn right_slope(&self, col: &[f64], x: f64) -> f64 {
        match self.segment(x) {
            Some(i) => self.seg_slope(col, i),
            None => 0.0,
        }
    }

    fn left_slope(&self, col: &[f64], x: f64) -> f64 {
        let n = self.q2.len();
        if n < 2 || x <= self.q2[0] || x > self.q2[n - 1] {
            return 0.0;
        }
        let i = self.q2.partition_point(|&q| q < x) - 1;
        self.seg_slope(col, i)
    }

    /// Exact one-sided slopes of the interpolant at `q2`.
    pub fn slopes_at(&self, q2: f64) -> ShellSlopes {
        ShellSlopes {
            a_right: self.right_slope(&self.a, q2),
            a_left: self.left_slope(&self.a, q2),
            b_right: self.right_slope(&self.b, q2),
            b_left: self.left_slope(&self.b, q2),
        }
    }
}

fn default_weights() -> Vec<f64> {
    Vec::new()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QhatModel {
    pub masses: Vec<f64>,
    /// Per-generation weights; empty means all ones.
    #[serde(default = "default_weights")]
    pub weights: Vec<f64>,
    pub curve: Curve,
    /// One entry per generation, evaluated at q^2 = mass^2.
    pub slopes: Vec<ShellSlopes>,
}

impl QhatModel {
    pub fn generations(&self) -> usize {
        self.masses.len()
    }

    pub fn weight(&self, beta: usize) -> f64 {
        self.weights.get(beta).copied().unwrap_or(1.0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.masses.is_empty() {
            return Err(CfsError::InvalidInput("model needs at least one generation".into()));
        }
        if let Some(m) = self.masses.iter().find(|m| !(m.is_finite() && **m > 0.0)) {
            return Err(CfsError::InvalidInput(format!("masses must be positive, got {m}")));
        }
        if !self.weights.is_empty() {
            if self.weights.len() != self.masses.len() {
                return Err(CfsError::DimensionMismatch(format!(
                    "{} weights for {} generations",
                    self.weights.len(),
                    self.masses.len()
                )));
            }
            if let Some(w) = self.weights.iter().find(|w| !(w.is_finite() && **w > 0.0)) {
                return Err(CfsError::InvalidInput(format!("weights must be positive, got {w}")));
            }
        }
        self.curve.validate()?;
        if self.slopes.len() != self.masses.len() {
            return Err(CfsError::DimensionMismatch(format!(
                "{} slope entries for {} generations",
                self.slopes.len(),
                self.masses.len()
            )));
        }
        for (beta, (m, s)) in self.masses.iter().zip(&self.slopes).enumerate() {
            let got = self.curve.slopes_at(m * m);
            let pairs = [
                (s.a_right, got.a_right),
                (s.a_left, got.a_left),
                (s.b_right, got.b_right),
                (s.b_left, got.b_left),
            ];
            for (table, curve) in pairs {
                if !table.is_finite() || (table - curve).abs() > 1e-9 * (1.0 + curve.abs()) {
                    return Err(CfsError::Model(format!(
                        "slope table for generation {beta} ({table}) disagrees with the curve ({curve})"
                    )));
                }
            }
        }
        Ok(())
    }

    /// a(q2) + b(q2).
    pub fn combined(&self, q2: f64) -> f64 {
        self.curve.a_at(q2) + self.curve.b_at(q2)
    }

    /// Sum of the four one-sided slopes at the shell. Negative values mean
    /// the model is not state stable and are reported as a model error.
    pub fn c_beta(&self, beta: usize) -> Result<f64> {
        let s = self.slopes.get(beta).ok_or_else(|| {
            CfsError::InvalidInput(format!("generation {beta} out of range ({} generations)", self.slopes.len()))
        })?;
        let c = s.total();
        let scale = s.a_right.abs() + s.a_left.abs() + s.b_right.abs() + s.b_left.abs();
        if !c.is_finite() {
            return Err(CfsError::Model(format!("non-finite slope sum at generation {beta}")));
        }
        if c < -1e-12 * scale {
            return Err(CfsError::Model(format!("negative shell constant {c} at generation {beta}")));
        }
        Ok(c.max(0.0))
    }

    /// Q(k) for k inside the lower cone.
    pub fn eval(&self, k: [f64; 4]) -> Result<Dirac> {
        let k2 = minkowski_square(k);
        if !(k2 > 0.0 && k[0] < 0.0) {
            return Err(CfsError::InvalidInput(format!(
                "momentum {k:?} lies outside the lower mass cone"
            )));
        }
        let a = self.curve.a_at(k2);
        let b = self.curve.b_at(k2);
        Ok(slash(k) * Complex64::new(a / k2.sqrt(), 0.0) + Dirac::identity() * Complex64::new(b, 0.0))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub a_nonnegative: bool,
    pub min_a: f64,
    pub shell_values: Vec<f64>,
    pub shells_equal: bool,
    pub grid_minimum: f64,
    pub grid_argmin: f64,
    pub minimal_on_shells: bool,
    /// Shell constants; None where the slope sum is negative.
    pub c: Vec<Option<f64>>,
    pub c_nonnegative: bool,
    pub pass: bool,
}

/// Uniform q^2 grid on (0, 4 max m^2] merged with the curve nodes and shells.
pub fn default_q2_grid(model: &QhatModel, points: usize) -> Vec<f64> {
    let mmax = model.masses.iter().fold(0.0f64, |a, m| a.max(m * m));
    let top = (4.0 * mmax).max(model.curve.q2.last().copied().unwrap_or(0.0));
    let points = points.max(2);
    let mut grid: Vec<f64> = (1..=points).map(|i| top * i as f64 / points as f64).collect();
    grid.extend(model.curve.q2.iter().copied().filter(|q| *q > 0.0));
    grid.extend(model.masses.iter().map(|m| m * m));
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    grid
}

/// Checks nonnegativity of a, equal a+b on all shells and that the shells
/// attain the minimum of a+b over the grid.
pub fn state_stability_check(model: &QhatModel, grid: &[f64]) -> Result<StabilityReport> {
    model.validate()?;
    let grid: Vec<f64> = grid.iter().copied().filter(|q| q.is_finite() && *q > 0.0).collect();
    if grid.is_empty() {
        return Err(CfsError::InvalidInput("stability grid has no points inside the cone".into()));
    }
    let min_a = grid.iter().map(|q| model.curve.a_at(*q)).fold(f64::INFINITY, f64::min);
    let shell_values: Vec<f64> = model.masses.iter().map(|m| model.combined(m * m)).collect();
    let scale = 1.0 + shell_values.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let tol = 1e-12 * scale;
    let smin = shell_values.iter().copied().fold(f64::INFINITY, f64::min);
    let smax = shell_values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (mut grid_minimum, mut grid_argmin) = (f64::INFINITY, grid[0]);
    for &q in &grid {
        let v = model.combined(q);
        if v < grid_minimum {
            grid_minimum = v;
            grid_argmin = q;
        }
    }
    let c: Vec<Option<f64>> = (0..model.generations()).map(|b| model.c_beta(b).ok()).collect();
    let a_nonnegative = min_a >= -tol;
    let shells_equal = smax - smin <= tol;
    let minimal_on_shells = smin <= grid_minimum + tol;
    let c_nonnegative = c.iter().all(Option::is_some);
    Ok(StabilityReport {
        a_nonnegative,
        min_a,
        shell_values,
        shells_equal,
        grid_minimum,
        grid_argmin,
        minimal_on_shells,
        c,
        c_nonnegative,
        pass: a_nonnegative && shells_equal && minimal_on_shells && c_nonnegative,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    /// weight * mass * c per generation.
    pub products: Vec<f64>,
    /// (alpha, beta, relative deviation) for alpha < beta.
    pub pairs: Vec<(usize, usize, f64)>,
    pub max_deviation: f64,
    pub tolerance: f64,
    pub pass: bool,
}

/// Pairwise relative deviations of weight * mass * c across generations.
pub fn consistency_check(model: &QhatModel, tolerance: f64) -> Result<ConsistencyReport> {
    model.validate()?;
    let mut products = Vec::with_capacity(model.generations());
    for (beta, m) in model.masses.iter().enumerate() {
        products.push(model.weight(beta) * m * model.c_beta(beta)?);
    }
    let mut pairs = Vec::new();
    let mut max_deviation = 0.0f64;
    for i in 0..products.len() {
        for j in i + 1..products.len() {
            let denom = products[i].abs().max(products[j].abs());
            let dev = if denom == 0.0 { 0.0 } else { (products[i] - products[j]).abs() / denom };
            max_deviation = max_deviation.max(dev);
            pairs.push((i, j, dev));
        }
    }
    Ok(ConsistencyReport { products, pairs, max_deviation, tolerance, pass: max_deviation <= tolerance })
}

/// Parameters of a piecewise-linear test model. a+b has value `floor` at
/// every shell, with a V-shaped kink of the given one-sided slopes;
/// a = a_floor + split * (a+b - floor).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureSpec {
    pub masses: Vec<f64>,
    #[serde(default)]
    pub weights: Vec<f64>,
    pub floor: f64,
    pub a_floor: f64,
    pub split: f64,
    /// Magnitudes of the descending slope just below each shell.
    pub left_drop: Vec<f64>,
    /// Target shell constants (right slope minus left_drop).
    pub c: Vec<f64>,
}

pub fn piecewise_linear_model(spec: &FixtureSpec) -> Result<QhatModel> {
    let g = spec.masses.len();
    if g == 0 || spec.left_drop.len() != g || spec.c.len() != g {
        return Err(CfsError::DimensionMismatch("fixture needs one drop and one c per mass".into()));
    }
    if !(0.0..=1.0).contains(&spec.split) || spec.a_floor < 0.0 {
        return Err(CfsError::InvalidInput("split must lie in [0, 1] and a_floor must be nonnegative".into()));
    }
    let mut order: Vec<usize> = (0..g).collect();
    order.sort_by(|&i, &j| spec.masses[i].total_cmp(&spec.masses[j]));
    let shells: Vec<f64> = order.iter().map(|&i| spec.masses[i] * spec.masses[i]).collect();
    if shells.windows(2).any(|w| w[1] <= w[0]) {
        return Err(CfsError::InvalidInput("fixture masses must be distinct".into()));
    }
    let drop: Vec<f64> = order.iter().map(|&i| spec.left_drop[i]).collect();
    let rise: Vec<f64> = order.iter().map(|&i| spec.c[i] + spec.left_drop[i]).collect();
    if drop.iter().chain(&rise).any(|s| !(s.is_finite() && *s > 0.0)) {
        return Err(CfsError::InvalidInput("fixture slopes must be positive on both sides".into()));
    }
    // (q2, a+b) nodes
    let mut nodes = vec![(0.0, spec.floor + drop[0] * shells[0])];
    for i in 0..g {
        nodes.push((shells[i], spec.floor));
        if i + 1 < g {
            let (x0, x1) = (shells[i], shells[i + 1]);
            let peak = (rise[i] * x0 + drop[i + 1] * x1) / (rise[i] + drop[i + 1]);
            nodes.push((peak, spec.floor + rise[i] * (peak - x0)));
        }
    }
    let tail = shells[g - 1] + 1.0;
    nodes.push((tail, spec.floor + rise[g - 1]));
    let mut curve = Curve { q2: Vec::new(), a: Vec::new(), b: Vec::new() };
    for (q, f) in nodes {
        let a = spec.a_floor + spec.split * (f - spec.floor);
        curve.q2.push(q);
        curve.a.push(a);
        curve.b.push(f - a);
    }
    let slopes = spec.masses.iter().map(|m| curve.slopes_at(m * m)).collect();
    let model = QhatModel { masses: spec.masses.clone(), weights: spec.weights.clone(), curve, slopes };
    model.validate()?;
    Ok(model)
}

/// Model whose shell constants satisfy weight * mass * c = kappa for all
/// generations.
pub fn consistent_model(masses: &[f64], weights: &[f64], kappa: f64, left_drop: f64) -> Result<QhatModel> {
    let c = masses
        .iter()
        .enumerate()
        .map(|(i, m)| kappa / (weights.get(i).copied().unwrap_or(1.0) * m))
        .collect();
    piecewise_linear_model(&FixtureSpec {
        masses: masses.to_vec(),
        weights: weights.to_vec(),
        floor: 1.0,
        a_floor: 0.25,
        split: 0.5,
        left_drop: vec![left_drop; masses.len()],
        c,
    })
}

/// Constant a and b: smooth baseline with vanishing shell constants.
pub fn flat_model(masses: &[f64], a: f64, b: f64) -> QhatModel {
    let zero = ShellSlopes { a_right: 0.0, a_left: 0.0, b_right: 0.0, b_left: 0.0 };
    QhatModel {
        masses: masses.to_vec(),
        weights: Vec::new(),
        curve: Curve { q2: vec![0.0], a: vec![a], b: vec![b] },
        slopes: vec![zero; masses.len()],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::continuum::dirac::gamma0;

    fn three_shell() -> QhatModel {
        piecewise_linear_model(&FixtureSpec {
            masses: vec![0.8, 1.0, 1.3],
            weights: vec![],
            floor: 1.0,
            a_floor: 0.3,
            split: 0.4,
            left_drop: vec![1.0, 0.5, 2.0],
            c: vec![2.0, 0.7, 1.5],
        })
        .unwrap()
    }

    #[test]
    fn slope_sum() {
        let s = ShellSlopes { a_right: 2.0, a_left: 0.5, b_right: 1.0, b_left: 0.5 };
        assert_eq!(s.total(), 4.0);
        let sym = ShellSlopes { a_right: 0.3, a_left: -0.3, b_right: 1.1, b_left: -1.1 };
        assert_eq!(sym.total(), 0.0);
    }

    #[test]
    fn fixture_has_requested_constants() {
        let m = three_shell();
        for (beta, want) in [2.0, 0.7, 1.5].iter().enumerate() {
            assert!((m.c_beta(beta).unwrap() - want).abs() < 1e-12);
        }
        let r = state_stability_check(&m, &default_q2_grid(&m, 2000)).unwrap();
        assert!(r.pass, "{r:?}");
        assert!(r.min_a >= 0.3 - 1e-15);
    }

    #[test]
    fn flat_model_is_stable_with_zero_constants() {
        let m = flat_model(&[1.0, 2.0], 0.5, 0.25);
        let r = state_stability_check(&m, &default_q2_grid(&m, 100)).unwrap();
        assert!(r.pass);
        assert!(r.c.iter().all(|c| *c == Some(0.0)));
    }

    #[test]
    fn displaced_minimum_fails() {
        let mut m = three_shell();
        // push a node between the first two shells below the floor
        let i = m.curve.q2.iter().position(|q| *q > 0.65 && *q < 0.99).unwrap();
        m.curve.a[i] = 0.3;
        m.curve.b[i] = 0.5;
        m.slopes = m.masses.iter().map(|x| m.curve.slopes_at(x * x)).collect();
        let r = state_stability_check(&m, &default_q2_grid(&m, 2000)).unwrap();
        assert!(!r.minimal_on_shells);
        assert!(!r.pass);
        assert!((r.grid_argmin - m.curve.q2[i]).abs() < 1e-12);
    }

    #[test]
    fn negative_constant_is_model_error() {
        let mut m = flat_model(&[1.0], 0.5, 0.5);
        m.curve = Curve { q2: vec![0.0, 1.0, 2.0], a: vec![0.5, 0.5, 0.5], b: vec![3.0, 0.5, 1.0] };
        m.slopes = vec![m.curve.slopes_at(1.0)];
        assert!(matches!(m.c_beta(0), Err(CfsError::Model(_))));
        let r = state_stability_check(&m, &default_q2_grid(&m, 50)).unwrap();
        assert!(!r.c_nonnegative && !r.pass);
    }

    #[test]
    fn slope_table_must_match_curve() {
        let mut m = three_shell();
        m.slopes[1].b_left += 0.1;
        assert!(matches!(m.validate(), Err(CfsError::Model(_))));
    }

    #[test]
    fn eval_outside_cone_rejected() {
        let m = three_shell();
        assert!(m.eval([1.0, 0.0, 0.0, 0.0]).is_err());
        assert!(m.eval([-1.0, 2.0, 0.0, 0.0]).is_err());
        assert!(m.eval([-2.0, 0.3, 0.1, -0.4]).is_ok());
    }

    #[test]
    fn zero_a_gives_scalar() {
        let m = flat_model(&[1.0], 0.0, 0.7);
        let q = m.eval([-1.5, 0.2, 0.3, 0.1]).unwrap();
        assert!((q - Dirac::identity() * Complex64::new(0.7, 0.0)).norm() == 0.0);
    }

    #[test]
    fn g0_q_is_hermitian() {
        let m = three_shell();
        for k in [[-1.5, 0.2, 0.3, 0.1], [-3.0, 1.0, -2.0, 0.5], [-0.9, 0.0, 0.0, 0.1]] {
            let h = gamma0() * m.eval(k).unwrap();
            assert!((h - h.adjoint()).norm() < 1e-14);
        }
    }

    #[test]
    fn boosted_momentum_sees_same_coefficients() {
        let m = three_shell();
        let k = [-1.7, 0.3, 0.0, 0.0];
        let rap: f64 = 0.6;
        let boosted = [k[0] * rap.cosh() + k[1] * rap.sinh(), k[0] * rap.sinh() + k[1] * rap.cosh(), 0.0, 0.0];
        let (q, qb) = (minkowski_square(k), minkowski_square(boosted));
        assert!((q - qb).abs() < 1e-12);
        assert!((m.curve.a_at(q) - m.curve.a_at(qb)).abs() < 1e-10);
    }

    #[test]
    fn consistency_exact_by_construction() {
        let m = consistent_model(&[0.7, 1.0, 1.6], &[1.0, 2.0, 0.5], 1.2, 0.8).unwrap();
        let r = consistency_check(&m, 1e-12).unwrap();
        assert!(r.pass, "{r:?}");
        assert!(r.max_deviation <= 1e-13, "{}", r.max_deviation);
    }

    #[test]
    fn consistency_deviation_by_hand() {
        let m = three_shell();
        let r = consistency_check(&m, 1e-12).unwrap();
        let p = [0.8 * 2.0, 1.0 * 0.7, 1.3 * 1.5];
        let dev01 = (p[0] - p[1]) / p[0];
        assert!((r.pairs[0].2 - dev01).abs() < 1e-12);
        assert!(!r.pass);
        let single = flat_model(&[1.0], 0.1, 0.1);
        assert!(consistency_check(&single, 0.0).unwrap().pass);
    }

    #[test]
    fn json_round_trip_keeps_validation() {
        let m = three_shell();
        let s = serde_json::to_string(&m).unwrap();
        let back: QhatModel = serde_json::from_str(&s).unwrap();
        back.validate().unwrap();
    }
}
