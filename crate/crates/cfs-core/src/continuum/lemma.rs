//! Time-layer integrals of Fourier transforms and the regulator integral
//! behind the closed-form currents.
//!
//! For a transform f(omega, k) = i phi(omega, |k|) with phi odd in omega, the
//! layer integral is evaluated as nested quadrature: phi -> spatial profile
//! F(omega, r) -> spatial integral G(omega) -> time kernel g(tau) ->
//! -int_{-T}^0 tau g(tau) dtau. The reference value is -phi'(0)/2.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{CfsError, Result};
use crate::numeric::{richardson_central, KahanSum};
use crate::quadrature::{adaptive, adaptive_half_line, AdaptiveOptions, GaussLegendre, QuadEstimate};

/// phi(omega, k) = amplitude * omega^power * exp(-omega^2/s^2 - k^2/t^2).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianProfile {
    pub amplitude: f64,
    pub power: u32,
    pub omega_width: f64,
    pub k_width: f64,
}

impl GaussianProfile {
    pub fn odd(amplitude: f64) -> Self {
        Self { amplitude, power: 1, omega_width: 1.0, k_width: 1.0 }
    }

    pub fn eval(&self, omega: f64, k: f64) -> f64 {
        let e = omega * omega / (self.omega_width * self.omega_width) + k * k / (self.k_width * self.k_width);
        self.amplitude * omega.powi(self.power as i32) * (-e).exp()
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.amplitude.is_finite()
            && self.omega_width.is_finite()
            && self.omega_width > 0.0
            && self.k_width.is_finite()
            && self.k_width > 0.0
            && self.power <= 16;
        if ok {
            Ok(())
        } else {
            Err(CfsError::InvalidInput(format!("invalid profile {self:?}")))
        }
    }

    /// A grid whose cutoffs leave Gaussian tails below about 1e-16.
    pub fn grid(&self) -> LemmaGrid {
        let (s, t) = (self.omega_width, self.k_width);
        let omega_max = 6.5 * s;
        let tau_max = 14.0 / s;
        let k_max = 7.0 * t;
        let r_max = 14.0 / t;
        LemmaGrid::fitted(omega_max, tau_max, k_max, r_max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LemmaGrid {
    pub omega_max: f64,
    pub tau_max: f64,
    pub k_max: f64,
    pub r_max: f64,
    pub omega_panels: usize,
    pub tau_panels: usize,
    pub k_panels: usize,
    pub r_panels: usize,
    pub order: usize,
}

impl LemmaGrid {
    /// Panel counts that keep every oscillatory phase under 8 per panel.
    pub fn fitted(omega_max: f64, tau_max: f64, k_max: f64, r_max: f64) -> Self {
        let wt = (omega_max * tau_max / 8.0).ceil() as usize;
        let kr = (k_max * r_max / 8.0).ceil() as usize;
        Self {
            omega_max,
            tau_max,
            k_max,
            r_max,
            omega_panels: wt.max(4),
            tau_panels: wt.max(4),
            k_panels: kr.max(4),
            r_panels: kr.max(8),
            order: 16,
        }
    }

    fn validate(&self) -> Result<()> {
        let pos = [self.omega_max, self.tau_max, self.k_max, self.r_max];
        let panels = [self.omega_panels, self.tau_panels, self.k_panels, self.r_panels];
        let ok = pos.iter().all(|v| v.is_finite() && *v > 0.0)
            && panels.iter().all(|p| (1..=10_000).contains(p))
            && (2..=64).contains(&self.order);
        if ok {
            Ok(())
        } else {
            Err(CfsError::InvalidInput(format!("invalid lemma grid {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LemmaReport {
    pub dimension: u32,
    pub lhs: f64,
    pub rhs: f64,
    pub difference: f64,
}

fn composite(rule: &GaussLegendre, a: f64, b: f64, panels: usize) -> Vec<(f64, f64)> {
    (0..panels)
        .flat_map(|i| {
            let x0 = a + (b - a) * i as f64 / panels as f64;
            let x1 = a + (b - a) * (i + 1) as f64 / panels as f64;
            rule.mapped(x0, x1).collect::<Vec<_>>()
        })
        .collect()
}

/// Rejects profiles that are not odd in omega or have not decayed at the
/// grid edges.
fn check_profile<F: Fn(f64, f64) -> f64>(phi: &F, grid: &LemmaGrid) -> Result<()> {
    let mut peak = 0.0f64;
    let mut odd_violation = 0.0f64;
    for i in 1..=16 {
        let w = grid.omega_max * i as f64 / 16.0;
        for j in 0..=16 {
            let k = grid.k_max * j as f64 / 16.0;
            let (p, q) = (phi(w, k), phi(-w, k));
            if !p.is_finite() || !q.is_finite() {
                return Err(CfsError::InvalidInput(format!("profile is not finite at ({w}, {k})")));
            }
            peak = peak.max(p.abs());
            odd_violation = odd_violation.max((p + q).abs());
        }
    }
    for j in 0..=16 {
        let k = grid.k_max * j as f64 / 16.0;
        peak = peak.max(phi(0.0, k).abs());
        odd_violation = odd_violation.max(2.0 * phi(0.0, k).abs());
    }
    if peak == 0.0 {
        return Ok(());
    }
    if odd_violation > 1e-12 * peak {
        return Err(CfsError::Precondition(format!(
            "profile is not odd in omega (violation {odd_violation:.3e}, peak {peak:.3e})"
        )));
    }
    let mut edge = 0.0f64;
    for i in 0..=16 {
        let t = i as f64 / 16.0;
        edge = edge.max(phi(grid.omega_max, t * grid.k_max).abs());
        edge = edge.max(phi(t * grid.omega_max, grid.k_max).abs());
    }
    if edge > 1e-12 * peak {
        return Err(CfsError::Precondition(format!(
            "profile has not decayed at the grid edge ({edge:.3e} of peak {peak:.3e})"
        )));
    }
    Ok(())
}

/// Layer integral (lhs) and -phi'(0)/2 (rhs) for a spatially radial profile
/// in dimension 1 or 3.
pub fn fourier_layer_lemma<F: Fn(f64, f64) -> f64>(phi: F, dimension: u32, grid: &LemmaGrid) -> Result<LemmaReport> {
    grid.validate()?;
    if dimension != 1 && dimension != 3 {
        return Err(CfsError::InvalidInput(format!("dimension must be 1 or 3, got {dimension}")));
    }
    check_profile(&phi, grid)?;
    let rule = GaussLegendre::new(grid.order);
    let ks = composite(&rule, 0.0, grid.k_max, grid.k_panels);
    let rs = composite(&rule, 0.0, grid.r_max, grid.r_panels);
    let ws = composite(&rule, 0.0, grid.omega_max, grid.omega_panels);
    let ts = composite(&rule, -grid.tau_max, 0.0, grid.tau_panels);

    // spatial inverse transform kernel with k-weights folded in, and the
    // measure of the spatial integral
    let table: Vec<Vec<f64>> = rs
        .iter()
        .map(|&(r, _)| {
            ks.iter()
                .map(|&(k, wk)| match dimension {
                    1 => wk * (k * r).cos() / PI,
                    _ => wk * k * (k * r).sin() / (2.0 * PI * PI * r),
                })
                .collect()
        })
        .collect();
    let measure: Vec<f64> = rs
        .iter()
        .map(|&(r, wr)| match dimension {
            1 => 2.0 * wr,
            _ => 4.0 * PI * r * r * wr,
        })
        .collect();

    let spatial: Vec<f64> = ws
        .iter()
        .map(|&(w, _)| {
            let row: Vec<f64> = ks.iter().map(|&(k, _)| phi(w, k)).collect();
            let mut acc = KahanSum::new();
            for (kernel, mu) in table.iter().zip(&measure) {
                let f: f64 = kernel.iter().zip(&row).map(|(a, b)| a * b).sum();
                acc.add(mu * f);
            }
            acc.value()
        })
        .collect();

    let lhs = ts
        .iter()
        .map(|&(tau, wt)| {
            let g = ws.iter().zip(&spatial).map(|(&(w, ww), s)| ww * s * (w * tau).sin()).collect::<KahanSum>().value() / PI;
            -wt * tau * g
        })
        .collect::<KahanSum>()
        .value();

    let (slope, _) = richardson_central(|w| phi(w, 0.0), 1e-3);
    let rhs = -0.5 * slope;
    Ok(LemmaReport { dimension, lhs, rhs, difference: (lhs - rhs).abs() })
}

/// int_0^inf q^2 eta / (q^2 + eta^2)^2 dq (expected pi/4 for any eta > 0),
/// on the positive or the negative half-line.
pub fn exint_check(eta: f64, negative_side: bool) -> Result<QuadEstimate> {
    if !(eta.is_finite() && eta > 0.0) {
        return Err(CfsError::InvalidInput(format!("regulator must be positive, got {eta}")));
    }
    let f = |q: f64| {
        let q = if negative_side { -q } else { q };
        q * q * eta / (q * q + eta * eta).powi(2)
    };
    let opts = AdaptiveOptions { abs_tol: 1e-14, rel_tol: 1e-13, max_intervals: 4000 };
    // split at eta where the integrand peaks
    let head = adaptive(f, 0.0, eta, opts)?;
    let tail = adaptive_half_line(|x| f(eta + x), 0.0, opts)?;
    Ok(QuadEstimate {
        value: head.value + tail.value,
        error: head.error + tail.error,
        intervals: head.intervals + tail.intervals,
    })
}
