//! Causal action, constraint functionals, the function ell and EL residuals.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{CfsError, Result};
use crate::measure::DiscreteMeasure;
use crate::model::{CausalModel, ProbeConfig};
use crate::numeric::{ksum, KahanSum};
use crate::spectral::CfsPoint;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActionParams {
    #[serde(default)]
    pub kappa: f64,
    /// Trace multiplier; estimated from the measure when absent.
    #[serde(default)]
    pub nu: Option<f64>,
    #[serde(default)]
    pub bound_c: Option<f64>,
    #[serde(default)]
    pub probes: ProbeConfig,
}

impl Default for ActionParams {
    fn default() -> Self {
        Self { kappa: 0.0, nu: None, bound_c: None, probes: ProbeConfig::default() }
    }
}

impl ActionParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.kappa >= 0.0) || !self.kappa.is_finite() {
            return Err(CfsError::InvalidInput(format!("kappa must be nonnegative, got {}", self.kappa)));
        }
        if let Some(c) = self.bound_c {
            if !(c > 0.0) {
                return Err(CfsError::InvalidInput("boundedness constant must be positive".into()));
            }
        }
        Ok(())
    }
}

/// Pairwise Lagrangian values over all atoms, computed once.
#[derive(Debug, Clone)]
pub struct PairTable {
    pub lagrangian: DMatrix<f64>,
    pub lagrangian_kappa: DMatrix<f64>,
    pub weight_squared: DMatrix<f64>,
}

pub fn pair_table<M: CausalModel>(model: &M, m: &DiscreteMeasure<M::Point>) -> Result<PairTable> {
    let n = m.len();
    let mut t = PairTable {
        lagrangian: DMatrix::zeros(n, n),
        lagrangian_kappa: DMatrix::zeros(n, n),
        weight_squared: DMatrix::zeros(n, n),
    };
    let pts = m.points();
    for i in 0..n {
        for j in i..n {
            let v = model.pair(&pts[i], &pts[j])?;
            for (a, b) in [(i, j), (j, i)] {
                t.lagrangian[(a, b)] = v.lagrangian;
                t.lagrangian_kappa[(a, b)] = v.lagrangian_kappa;
                t.weight_squared[(a, b)] = v.weight_squared;
            }
        }
    }
    Ok(t)
}

fn double_sum(w: &[f64], table: &DMatrix<f64>) -> f64 {
    let mut acc = KahanSum::new();
    for i in 0..w.len() {
        for j in 0..w.len() {
            acc.add(w[i] * w[j] * table[(i, j)]);
        }
    }
    acc.value()
}

/// S = sum_ij rho_i rho_j L(x_i, x_j), with kappa excluded.
pub fn action<M: CausalModel>(model: &M, m: &DiscreteMeasure<M::Point>) -> Result<f64> {
    Ok(double_sum(m.weights(), &pair_table(model, m)?.lagrangian))
}

pub fn action_from_table(m_weights: &[f64], t: &PairTable) -> f64 {
    double_sum(m_weights, &t.lagrangian)
}

/// T = sum_ij rho_i rho_j |x_i x_j|^2.
pub fn boundedness_functional<M: CausalModel>(model: &M, m: &DiscreteMeasure<M::Point>) -> Result<f64> {
    Ok(double_sum(m.weights(), &pair_table(model, m)?.weight_squared))
}

pub fn boundedness_from_table(m_weights: &[f64], t: &PairTable) -> f64 {
    double_sum(m_weights, &t.weight_squared)
}

/// sum_i rho_i tr(x_i).
pub fn trace_integral(m: &DiscreteMeasure<CfsPoint>) -> f64 {
    ksum(m.points().iter().zip(m.weights()).map(|(p, w)| w * p.trace()))
}

/// ell(x) = sum_j rho_j L_kappa(x, x_j) for any point x.
pub fn ell<M: CausalModel>(model: &M, x: &M::Point, m: &DiscreteMeasure<M::Point>) -> Result<f64> {
    let mut acc = KahanSum::new();
    for j in m.support() {
        acc.add(m.weights()[j] * model.lagrangian_kappa(x, &m.points()[j])?);
    }
    Ok(acc.value())
}

fn ell_on_support(m_weights: &[f64], support: &[usize], t: &PairTable) -> Vec<f64> {
    support
        .iter()
        .map(|&i| ksum(support.iter().map(|&j| m_weights[j] * t.lagrangian_kappa[(i, j)])))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NuEstimate {
    pub nu: f64,
    /// max - min of the per-point estimates 2 ell / tr.
    pub spread: f64,
    /// Atoms with vanishing trace, left out of the estimate.
    pub excluded: Vec<usize>,
}

fn nu_from_values(support: &[usize], weights: &[f64], ell: &[f64], trace: &[f64]) -> Result<NuEstimate> {
    let scale = trace.iter().fold(0.0f64, |a, t| a.max(t.abs())).max(f64::MIN_POSITIVE);
    let mut num = KahanSum::new();
    let mut den = KahanSum::new();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let mut excluded = vec![];
    for (k, &i) in support.iter().enumerate() {
        if trace[k].abs() <= 1e-12 * scale {
            excluded.push(i);
            continue;
        }
        let est = 2.0 * ell[k] / trace[k];
        num.add(weights[i] * est);
        den.add(weights[i]);
        lo = lo.min(est);
        hi = hi.max(est);
    }
    if den.value() <= 0.0 {
        return Err(CfsError::Precondition("trace vanishes on the whole support".into()));
    }
    Ok(NuEstimate { nu: num.value() / den.value(), spread: hi - lo, excluded })
}

/// Weighted mean of 2 ell(x_i) / tr(x_i) over the support.
pub fn estimate_nu<M: CausalModel>(model: &M, m: &DiscreteMeasure<M::Point>) -> Result<NuEstimate> {
    let support = m.support();
    let t = pair_table(model, m)?;
    let ell = ell_on_support(m.weights(), &support, &t);
    let trace: Option<Vec<f64>> = support.iter().map(|&i| model.trace(&m.points()[i])).collect();
    let trace = trace.ok_or_else(|| CfsError::Precondition("the model has no trace".into()))?;
    nu_from_values(&support, m.weights(), &ell, &trace)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElReport {
    pub support: Vec<usize>,
    pub ell: Vec<f64>,
    pub trace: Option<Vec<f64>>,
    pub nu: Option<NuEstimate>,
    /// Weighted mean of g = ell - nu tr on the support.
    pub g_mean: f64,
    pub residual_constancy: f64,
    /// Constancy residual divided by the typical size of ell.
    pub relative_constancy: f64,
    pub residual_minimality: f64,
    pub probe_min: Option<f64>,
    pub probe_count: usize,
    pub probe_radius: f64,
    pub probe_seed: u64,
    /// Compact setting: sup of ell on the support minus the probed infimum.
    pub sup_minus_inf: Option<f64>,
}

/// Residuals of the EL equations. Minimality is checked against seeded
/// probe points, a surrogate for the unspecified neighbourhood in the
/// variational principle.
pub fn el_residual<M: CausalModel>(model: &M, m: &DiscreteMeasure<M::Point>, p: &ActionParams) -> Result<ElReport> {
    let t = pair_table(model, m)?;
    el_residual_with_table(model, m, p, &t)
}

pub fn el_residual_with_table<M: CausalModel>(
    model: &M,
    m: &DiscreteMeasure<M::Point>,
    p: &ActionParams,
    t: &PairTable,
) -> Result<ElReport> {
    let support = m.support();
    let w = m.weights();
    let ell_vals = ell_on_support(w, &support, t);
    let trace: Option<Vec<f64>> = support.iter().map(|&i| model.trace(&m.points()[i])).collect();
    let (nu, nu_value) = match (&trace, p.nu) {
        (Some(_), Some(v)) => (None, v),
        (Some(tr), None) => {
            let est = nu_from_values(&support, w, &ell_vals, tr)?;
            let v = est.nu;
            (Some(est), v)
        }
        (None, _) => (None, 0.0),
    };
    let g: Vec<f64> = match &trace {
        Some(tr) => ell_vals.iter().zip(tr).map(|(l, t)| l - nu_value * t).collect(),
        None => ell_vals.clone(),
    };
    let vol = ksum(support.iter().map(|&i| w[i]));
    let g_mean = if vol > 0.0 { ksum(support.iter().zip(&g).map(|(&i, gi)| w[i] * gi)) / vol } else { 0.0 };
    let residual_constancy = g.iter().fold(0.0f64, |a, gi| a.max((gi - g_mean).abs()));
    let ell_scale = ell_vals.iter().fold(0.0f64, |a, l| a.max(l.abs()));
    let relative_constancy = residual_constancy / ell_scale.max(f64::MIN_POSITIVE);

    let (probes, radius) = model.probes(m, &p.probes)?;
    let mut probe_min: Option<f64> = None;
    for q in &probes {
        let mut gq = ell(model, q, m)?;
        if let Some(tr) = model.trace(q) {
            gq -= nu_value * tr;
        }
        probe_min = Some(probe_min.map_or(gq, |v: f64| v.min(gq)));
    }
    let residual_minimality = probe_min.map_or(0.0, |v| (g_mean - v).max(0.0));
    let sup_minus_inf = match (&trace, probe_min) {
        (None, Some(v)) => Some(ell_vals.iter().fold(f64::NEG_INFINITY, |a, l| a.max(*l)) - v),
        _ => None,
    };
    Ok(ElReport {
        support,
        ell: ell_vals,
        trace,
        nu,
        g_mean,
        residual_constancy,
        relative_constancy: if residual_constancy == 0.0 { 0.0 } else { relative_constancy },
        residual_minimality,
        probe_min,
        probe_count: probes.len(),
        probe_radius: radius,
        probe_seed: p.probes.seed,
        sup_minus_inf,
    })
}
