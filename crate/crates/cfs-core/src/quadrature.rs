//! Gauss-Legendre rules and adaptive Gauss-Kronrod integration.

use crate::error::{CfsError, Result};
use crate::numeric::KahanSum;

/// Nodes and weights of the n-point Gauss-Legendre rule on [-1, 1],
/// computed by Newton iteration on the Legendre recurrence.
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussLegendre {
    pub fn new(n: usize) -> Self {
        assert!(n > 0, "Gauss-Legendre rule needs at least one node");
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let m = (n + 1) / 2;
        for i in 0..m {
            // Tricomi initial guess
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre_with_derivative(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre_with_derivative(n, x);
            if d != 0.0 {
                dp = d;
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        if n % 2 == 1 {
            nodes[n / 2] = 0.0;
        }
        Self { nodes, weights }
    }

    pub fn integrate<F: FnMut(f64) -> f64>(&self, mut f: F, a: f64, b: f64) -> f64 {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        let mut acc = KahanSum::new();
        for (x, w) in self.nodes.iter().zip(&self.weights) {
            acc.add(w * f(mid + half * x));
        }
        half * acc.value()
    }

    /// Nodes and weights mapped to [a, b].
    pub fn mapped(&self, a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(move |(x, w)| (mid + half * x, half * w))
    }

    /// Composite rule over the given breakpoints (must be increasing).
    pub fn integrate_panels<F: FnMut(f64) -> f64>(&self, mut f: F, breaks: &[f64]) -> f64 {
        let mut acc = KahanSum::new();
        for w in breaks.windows(2) {
            if w[1] > w[0] {
                acc.add(self.integrate(&mut f, w[0], w[1]));
            }
        }
        acc.value()
    }

    /// Composite rule with `panels` equal panels on [a, b].
    pub fn integrate_uniform<F: FnMut(f64) -> f64>(&self, f: F, a: f64, b: f64, panels: usize) -> f64 {
        let panels = panels.max(1);
        let breaks: Vec<f64> = (0..=panels)
            .map(|i| a + (b - a) * i as f64 / panels as f64)
            .collect();
        self.integrate_panels(f, &breaks)
    }
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

const XGK: [f64; 8] = [
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.000000000000000000000000000000000,
];
const WGK: [f64; 8] = [
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
];
const WG: [f64; 4] = [
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
];

fn gk15<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kron = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for j in 0..7 {
        let x = h * XGK[j];
        let s = f(c - x) + f(c + x);
        kron += WGK[j] * s;
        if j % 2 == 1 {
            gauss += WG[j / 2] * s;
        }
    }
    (kron * h, ((kron - gauss) * h).abs())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadEstimate {
    pub value: f64,
    pub error: f64,
    pub intervals: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct AdaptiveOptions {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_intervals: usize,
}

impl Default for AdaptiveOptions {
    fn default() -> Self {
        Self { abs_tol: 1e-13, rel_tol: 1e-12, max_intervals: 2000 }
    }
}

/// Globally adaptive G7/K15 on a finite interval. Always bisects the interval
/// with the largest error estimate (lowest index on ties), so the result is
/// deterministic.
pub fn adaptive<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, opts: AdaptiveOptions) -> Result<QuadEstimate> {
    let (v, e) = gk15(&mut f, a, b);
    let mut pieces = vec![(a, b, v, e)];
    loop {
        let value: f64 = pieces.iter().map(|p| p.2).collect::<KahanSum>().value();
        let error: f64 = pieces.iter().map(|p| p.3).sum();
        if error <= opts.abs_tol.max(opts.rel_tol * value.abs()) {
            return Ok(QuadEstimate { value, error, intervals: pieces.len() });
        }
        if pieces.len() >= opts.max_intervals || !value.is_finite() {
            return Err(CfsError::Quadrature { value, error });
        }
        let mut worst = 0;
        for (i, p) in pieces.iter().enumerate() {
            if p.3 > pieces[worst].3 {
                worst = i;
            }
        }
        let (lo, hi, _, _) = pieces[worst];
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            // interval cannot be split further in floating point
            return Err(CfsError::Quadrature { value, error });
        }
        let (v1, e1) = gk15(&mut f, lo, mid);
        let (v2, e2) = gk15(&mut f, mid, hi);
        pieces[worst] = (lo, mid, v1, e1);
        pieces.insert(worst + 1, (mid, hi, v2, e2));
    }
}

/// Integral over [a, inf) via q = a + t/(1-t), t in [0, 1).
pub fn adaptive_half_line<F: FnMut(f64) -> f64>(mut f: F, a: f64, opts: AdaptiveOptions) -> Result<QuadEstimate> {
    adaptive(
        |t| {
            if t >= 1.0 {
                return 0.0;
            }
            let s = 1.0 - t;
            let v = f(a + t / s) / (s * s);
            if v.is_finite() { v } else { 0.0 }
        },
        0.0,
        1.0,
        opts,
    )
}

/// Gauss-Legendre on the half-line [0, inf) via k = scale * t/(1-t).
/// Returns (node, weight) pairs including the Jacobian.
pub fn half_line_rule(n: usize, scale: f64) -> Vec<(f64, f64)> {
    let gl = GaussLegendre::new(n);
    gl.mapped(0.0, 1.0)
        .map(|(t, w)| {
            let s = 1.0 - t;
            (scale * t / s, w * scale / (s * s))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn gl_weights_sum_to_two() {
        for n in [1, 2, 5, 16, 64, 256] {
            let gl = GaussLegendre::new(n);
            let s: f64 = gl.weights.iter().sum();
            assert!((s - 2.0).abs() < 1e-13, "n={n} sum={s}");
        }
    }

    #[test]
    fn gl_exact_for_polynomials() {
        // n points integrate degree 2n-1 exactly
        let gl = GaussLegendre::new(6);
        let v = gl.integrate(|x| x.powi(11) + 3.0 * x.powi(10) - x.powi(2), -1.0, 1.0);
        let exact = 3.0 * 2.0 / 11.0 - 2.0 / 3.0;
        assert!((v - exact).abs() < 1e-14);
    }

    #[test]
    fn gl_known_three_point_nodes() {
        let gl = GaussLegendre::new(3);
        assert!((gl.nodes[2] - (0.6f64).sqrt()).abs() < 1e-15);
        assert!((gl.weights[1] - 8.0 / 9.0).abs() < 1e-15);
    }

    #[test]
    fn adaptive_handles_sqrt_endpoint() {
        let r = adaptive(|x| x.sqrt(), 0.0, 1.0, AdaptiveOptions::default()).unwrap();
        assert!((r.value - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn half_line_gaussian() {
        let r = adaptive_half_line(|x| (-x * x).exp(), 0.0, AdaptiveOptions::default()).unwrap();
        assert!((r.value - PI.sqrt() / 2.0).abs() < 1e-12);
    }

    #[test]
    fn mapped_half_line_rule() {
        let s: f64 = half_line_rule(128, 1.0)
            .into_iter()
            .map(|(k, w)| w * (-k).exp())
            .sum();
        assert!((s - 1.0).abs() < 1e-10);
    }

    #[test]
    fn adaptive_reports_failure() {
        let r = adaptive(|x| 1.0 / x, 0.0, 1.0, AdaptiveOptions { max_intervals: 20, ..Default::default() });
        assert!(matches!(r, Err(CfsError::Quadrature { .. })));
    }
}
