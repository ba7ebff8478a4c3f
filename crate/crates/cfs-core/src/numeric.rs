//! Small numerical helpers shared across modules.

/// Neumaier-compensated accumulator. Summation order is the call order, so
/// results are reproducible as long as callers iterate deterministically.
#[derive(Debug, Clone, Copy, Default)]
pub struct KahanSum {
    sum: f64,
    comp: f64,
}

impl KahanSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.comp += (self.sum - t) + v;
        } else {
            self.comp += (v - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

impl std::iter::FromIterator<f64> for KahanSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut k = KahanSum::new();
        for v in iter {
            k.add(v);
        }
        k
    }
}

pub fn ksum<I: IntoIterator<Item = f64>>(iter: I) -> f64 {
    iter.into_iter().collect::<KahanSum>().value()
}

/// Central-difference derivative at 0 with one Richardson step.
/// Returns (extrapolated estimate, |D(h) - D(h/2)| as an error proxy).
pub fn richardson_central<F>(mut f: F, h: f64) -> (f64, f64)
where
    F: FnMut(f64) -> f64,
{
    let d1 = (f(h) - f(-h)) / (2.0 * h);
    let h2 = 0.5 * h;
    let d2 = (f(h2) - f(-h2)) / (2.0 * h2);
    ((4.0 * d2 - d1) / 3.0, (d2 - d1).abs())
}

/// Combines J(e), J(e/2), J(e/4) to cancel the linear and quadratic terms
/// of an expansion in the regulator.
pub fn richardson_three(j1: f64, j2: f64, j4: f64) -> f64 {
    (8.0 * j4 - 6.0 * j2 + j1) / 3.0
}

/// Ordinary least-squares slope and intercept of y against x.
pub fn linear_fit(x: &[f64], y: &[f64]) -> Option<(f64, f64)> {
    let n = x.len();
    if n < 2 || y.len() != n {
        return None;
    }
    let mx = ksum(x.iter().copied()) / n as f64;
    let my = ksum(y.iter().copied()) / n as f64;
    let sxx = ksum(x.iter().map(|v| (v - mx) * (v - mx)));
    if sxx == 0.0 {
        return None;
    }
    let sxy = ksum(x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)));
    let slope = sxy / sxx;
    Some((slope, my - slope * mx))
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kahan_recovers_small_terms() {
        let mut k = KahanSum::new();
        k.add(1.0);
        for _ in 0..10_000 {
            k.add(1e-16);
        }
        k.add(-1.0);
        assert!((k.value() - 1e-12).abs() < 1e-20);
    }

    #[test]
    fn richardson_exact_on_cubic() {
        // central difference is exact through quadratics, Richardson kills h^2
        let (d, _) = richardson_central(|t| 3.0 * t + 2.0 * t * t * t + 0.5, 0.1);
        assert!((d - 3.0).abs() < 1e-12);
    }

    #[test]
    fn three_point_cancels_quadratic() {
        let j = |e: f64| 2.0 + 0.3 * e - 1.7 * e * e;
        let r = richardson_three(j(0.1), j(0.05), j(0.025));
        assert!((r - 2.0).abs() < 1e-13);
    }

    #[test]
    fn fit_recovers_line() {
        let x = [0.0, 1.0, 2.0, 3.0];
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v - 1.0).collect();
        let (s, c) = linear_fit(&x, &y).unwrap();
        assert!((s - 2.0).abs() < 1e-14 && (c + 1.0).abs() < 1e-14);
        assert!(linear_fit(&[1.0, 1.0], &[0.0, 2.0]).is_none());
    }

    #[test]
    fn median_even_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert_eq!(median(&[]), 0.0);
    }
}
