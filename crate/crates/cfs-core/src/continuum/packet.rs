//! Spherically symmetric negative-frequency wave packets on a mass shell.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::dirac::{shell_spinor, slash, Spinor};
use super::qhat::QhatModel;
use crate::error::{CfsError, Result};
use crate::quadrature::half_line_rule;

fn default_nodes() -> usize {
    256
}

/// chi(k) = amplitude * exp(-|k|^2 / (2 width^2)) * u(k), with u the unit
/// shell spinor built from `polarization`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WavePacket {
    pub generation: usize,
    pub amplitude: f64,
    pub width: f64,
    pub polarization: [Complex64; 2],
    #[serde(default = "default_nodes")]
    pub radial_nodes: usize,
}

impl WavePacket {
    pub fn gaussian(generation: usize, amplitude: f64, width: f64) -> Self {
        Self {
            generation,
            amplitude,
            width,
            polarization: [Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0)],
            radial_nodes: default_nodes(),
        }
    }

    pub fn validate(&self, model: &QhatModel) -> Result<()> {
        if self.generation >= model.generations() {
            return Err(CfsError::InvalidInput(format!(
                "packet generation {} out of range ({} generations)",
                self.generation,
                model.generations()
            )));
        }
        if !self.amplitude.is_finite() {
            return Err(CfsError::InvalidInput("packet amplitude must be finite".into()));
        }
        if !(self.width.is_finite() && self.width > 0.0) {
            return Err(CfsError::InvalidInput(format!("packet width must be positive, got {}", self.width)));
        }
        if !(8..=8192).contains(&self.radial_nodes) {
            return Err(CfsError::InvalidInput(format!(
                "radial_nodes must lie in 8..=8192, got {}",
                self.radial_nodes
            )));
        }
        let pn = self.polarization[0].norm_sqr() + self.polarization[1].norm_sqr();
        if !(pn.is_finite() && pn > 0.0) {
            return Err(CfsError::InvalidInput("polarization must be a nonzero finite two-spinor".into()));
        }
        Ok(())
    }

    pub fn mass(&self, model: &QhatModel) -> f64 {
        model.masses[self.generation]
    }

    /// Radial profile at momentum length k.
    pub fn profile(&self, k: f64) -> f64 {
        self.amplitude * (-k * k / (2.0 * self.width * self.width)).exp()
    }

    /// Unit polarization.
    pub fn unit_polarization(&self) -> [Complex64; 2] {
        let n = (self.polarization[0].norm_sqr() + self.polarization[1].norm_sqr()).sqrt();
        [self.polarization[0] / n, self.polarization[1] / n]
    }

    pub fn spinor(&self, model: &QhatModel, kvec: [f64; 3]) -> Result<Spinor> {
        let k = (kvec[0] * kvec[0] + kvec[1] * kvec[1] + kvec[2] * kvec[2]).sqrt();
        let u = shell_spinor(self.mass(model), kvec, self.polarization)?;
        Ok(u * Complex64::new(self.profile(k), 0.0))
    }

    /// Radial quadrature nodes and weights for |k|.
    pub fn radial_rule(&self) -> Vec<(f64, f64)> {
        half_line_rule(self.radial_nodes, self.width)
    }

    /// Largest relative Dirac residual |(k-slash - m) chi| / |chi| over the
    /// radial nodes in a fixed set of directions.
    pub fn dirac_residual(&self, model: &QhatModel) -> Result<f64> {
        self.validate(model)?;
        let m = self.mass(model);
        let dirs = [
            [0.0, 0.0, 1.0],
            [1.0, 0.0, 0.0],
            [0.0, -1.0, 0.0],
            [0.6, 0.0, -0.8],
            [0.48, 0.6, 0.64],
        ];
        let mut worst = 0.0f64;
        for (k, _) in self.radial_rule() {
            for d in &dirs {
                let kvec = [k * d[0], k * d[1], k * d[2]];
                let chi = self.spinor(model, kvec)?;
                let norm = chi.norm();
                if norm == 0.0 {
                    continue;
                }
                let omega = (m * m + k * k).sqrt();
                let r = (slash([-omega, kvec[0], kvec[1], kvec[2]]) * chi - chi * Complex64::new(m, 0.0)).norm();
                worst = worst.max(r / norm);
            }
        }
        Ok(worst)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::continuum::qhat::flat_model;

    #[test]
    fn residual_within_bound() {
        let model = flat_model(&[0.7, 1.4], 0.1, 0.2);
        let mut p = WavePacket::gaussian(1, 2.0, 1.3);
        p.polarization = [Complex64::new(0.3, -0.2), Complex64::new(0.5, 0.9)];
        assert!(p.dirac_residual(&model).unwrap() <= 1e-10);
    }

    #[test]
    fn invalid_packets_rejected() {
        let model = flat_model(&[1.0], 0.1, 0.2);
        assert!(WavePacket::gaussian(1, 1.0, 1.0).validate(&model).is_err());
        assert!(WavePacket::gaussian(0, 1.0, 0.0).validate(&model).is_err());
        let mut p = WavePacket::gaussian(0, 1.0, 1.0);
        p.polarization = [Complex64::new(0.0, 0.0); 2];
        assert!(p.validate(&model).is_err());
    }

    #[test]
    fn radial_rule_integrates_gaussian_moment() {
        let p = WavePacket::gaussian(0, 1.0, 0.9);
        let s: f64 = p.radial_rule().iter().map(|(k, w)| w * k * k * p.profile(*k).powi(2)).sum();
        // int k^2 exp(-k^2/s^2) dk = sqrt(pi) s^3 / 4
        let want = std::f64::consts::PI.sqrt() * 0.9f64.powi(3) / 4.0;
        assert!((s - want).abs() < 1e-13 * want);
    }
}
