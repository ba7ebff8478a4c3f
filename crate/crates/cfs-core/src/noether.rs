//! Variations of atomic measures, their symmetry classes, surface layer
//! integrals and the conservation checks built on them.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::action::{el_residual, ell, ActionParams};
use crate::error::{CfsError, Result};
use crate::measure::{measure_mismatch, pushforward, DiscreteMeasure, Point, Region, MERGE_TOL};
use crate::model::{CausalModel, ProbeConfig};
use crate::numeric::{ksum, linear_fit, richardson_central, KahanSum};
use crate::spectral::{is_hermitian, unitary_exp, CMatrix, CfsPoint};

/// A one-parameter family of maps of the support, with Phi(0, .) = id.
pub trait Variation<P: Point> {
    fn tau_max(&self) -> f64;

    /// Image of the support atom `atom` (located at `x`) at parameter tau.
    fn image(&self, atom: usize, x: &P, tau: f64) -> Result<P>;

    /// Checks Phi(0, x) = x on the support.
    fn validate(&self, m: &DiscreteMeasure<P>) -> Result<()> {
        for i in m.support() {
            let x = &m.points()[i];
            let d = self.image(i, x, 0.0)?.distance(x);
            if d > MERGE_TOL {
                return Err(CfsError::Precondition(format!("variation moves atom {i} at tau = 0 (by {d:e})")));
            }
        }
        Ok(())
    }
}

fn check_tau(tau: f64, tau_max: f64) -> Result<()> {
    if tau == 0.0 || tau.abs() < tau_max {
        Ok(())
    } else {
        Err(CfsError::TauOutOfRange { tau, tau_max })
    }
}

pub fn apply_variation<P: Point, V: Variation<P>>(v: &V, atom: usize, x: &P, tau: f64) -> Result<P> {
    v.image(atom, x, tau)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Identity {
    pub tau_max: f64,
}

impl<P: Point> Variation<P> for Identity {
    fn tau_max(&self) -> f64 {
        self.tau_max
    }

    fn image(&self, _atom: usize, x: &P, tau: f64) -> Result<P> {
        check_tau(tau, self.tau_max)?;
        Ok(x.clone())
    }
}

/// Conjugation x -> U x U^{-1} with U = exp(i tau A), acting on the wave
/// evaluation matrix as Psi -> Psi U^{-1}.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitaryVariation {
    generator: CMatrix,
    tau_max: f64,
}

impl UnitaryVariation {
    pub fn new(generator: CMatrix, tau_max: f64) -> Result<Self> {
        if !(tau_max > 0.0) {
            return Err(CfsError::InvalidInput("tau_max must be positive".into()));
        }
        let scale = generator.iter().fold(1.0f64, |a, z| a.max(z.norm()));
        if !is_hermitian(&generator, 1e-12 * scale) {
            return Err(CfsError::InvalidInput("generator must be a Hermitian square matrix".into()));
        }
        Ok(Self { generator, tau_max })
    }

    pub fn generator(&self) -> &CMatrix {
        &self.generator
    }

    pub fn unitary(&self, tau: f64) -> CMatrix {
        unitary_exp(&self.generator, tau)
    }
}

impl Variation<CfsPoint> for UnitaryVariation {
    fn tau_max(&self) -> f64 {
        self.tau_max
    }

    fn image(&self, _atom: usize, x: &CfsPoint, tau: f64) -> Result<CfsPoint> {
        check_tau(tau, self.tau_max)?;
        if x.hilbert_dim() != self.generator.nrows() {
            return Err(CfsError::DimensionMismatch(format!(
                "generator is {0}x{0}, point acts on dimension {1}",
                self.generator.nrows(),
                x.hilbert_dim()
            )));
        }
        if tau == 0.0 {
            return Ok(x.clone());
        }
        x.with_psi(x.psi() * unitary_exp(&self.generator, -tau))
    }
}

/// Sampled path of one atom; linear interpolation between samples, held
/// constant beyond the first and last sample.
#[derive(Debug, Clone, PartialEq)]
pub struct PathTable<P> {
    taus: Vec<f64>,
    points: Vec<P>,
}

impl<P: Point> PathTable<P> {
    pub fn new(taus: Vec<f64>, points: Vec<P>) -> Result<Self> {
        if taus.is_empty() || taus.len() != points.len() {
            return Err(CfsError::InvalidInput("path table needs equally many (>= 1) samples and points".into()));
        }
        if taus.iter().any(|t| !t.is_finite()) || taus.windows(2).any(|w| w[1] <= w[0]) {
            return Err(CfsError::InvalidInput("path samples must be finite and strictly increasing".into()));
        }
        Ok(Self { taus, points })
    }

    pub fn taus(&self) -> &[f64] {
        &self.taus
    }

    pub fn points(&self) -> &[P] {
        &self.points
    }

    pub fn eval(&self, tau: f64) -> P {
        let k = self.taus.partition_point(|t| *t <= tau);
        if k == 0 {
            return self.points[0].clone();
        }
        if k == self.taus.len() {
            return self.points[k - 1].clone();
        }
        let (t0, t1) = (self.taus[k - 1], self.taus[k]);
        if tau == t0 {
            return self.points[k - 1].clone();
        }
        self.points[k - 1].lerp(&self.points[k], (tau - t0) / (t1 - t0))
    }
}

/// Per-atom sampled paths. `on_measure` marks a flow meant as a
/// transformation of space-time itself rather than a variation of it.
#[derive(Debug, Clone, PartialEq)]
pub struct PointFlow<P> {
    paths: Vec<PathTable<P>>,
    tau_max: f64,
    pub on_measure: bool,
}

impl<P: Point> PointFlow<P> {
    pub fn new(paths: Vec<PathTable<P>>, tau_max: f64, on_measure: bool) -> Result<Self> {
        if !(tau_max > 0.0) {
            return Err(CfsError::InvalidInput("tau_max must be positive".into()));
        }
        Ok(Self { paths, tau_max, on_measure })
    }

    pub fn paths(&self) -> &[PathTable<P>] {
        &self.paths
    }

    /// Piecewise linear flow from x_i at tau = 0 to x_{perm[i]} at tau = 1
    /// and x_{perm^{-1}[i]} at tau = -1.
    pub fn permutation(points: &[P], perm: &[usize], tau_max: f64) -> Result<Self> {
        let n = points.len();
        let mut inverse = vec![usize::MAX; n];
        if perm.len() != n {
            return Err(CfsError::InvalidInput("permutation length differs from the atom count".into()));
        }
        for (i, &p) in perm.iter().enumerate() {
            if p >= n || inverse[p] != usize::MAX {
                return Err(CfsError::InvalidInput("not a permutation".into()));
            }
            inverse[p] = i;
        }
        let paths = (0..n)
            .map(|i| PathTable::new(vec![-1.0, 0.0, 1.0], vec![points[inverse[i]].clone(), points[i].clone(), points[perm[i]].clone()]))
            .collect::<Result<_>>()?;
        Self::new(paths, tau_max, true)
    }
}

impl<P: Point> Variation<P> for PointFlow<P> {
    fn tau_max(&self) -> f64 {
        self.tau_max
    }

    fn image(&self, atom: usize, _x: &P, tau: f64) -> Result<P> {
        check_tau(tau, self.tau_max)?;
        let path = self
            .paths
            .get(atom)
            .ok_or_else(|| CfsError::DimensionMismatch(format!("no path for atom {atom} ({} paths)", self.paths.len())))?;
        Ok(path.eval(tau))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum CfsVariation {
    Unitary(UnitaryVariation),
    Flow(PointFlow<CfsPoint>),
    /// Applied left to right.
    Composite(Vec<CfsVariation>),
}

impl Variation<CfsPoint> for CfsVariation {
    fn tau_max(&self) -> f64 {
        match self {
            CfsVariation::Unitary(u) => u.tau_max(),
            CfsVariation::Flow(f) => f.tau_max(),
            CfsVariation::Composite(parts) => parts.iter().map(|p| p.tau_max()).fold(f64::INFINITY, f64::min),
        }
    }

    fn image(&self, atom: usize, x: &CfsPoint, tau: f64) -> Result<CfsPoint> {
        match self {
            CfsVariation::Unitary(u) => u.image(atom, x, tau),
            CfsVariation::Flow(f) => f.image(atom, x, tau),
            CfsVariation::Composite(parts) => {
                check_tau(tau, self.tau_max())?;
                let mut y = x.clone();
                for p in parts {
                    y = p.image(atom, &y, tau)?;
                }
                Ok(y)
            }
        }
    }
}

fn images<P: Point, V: Variation<P>>(v: &V, m: &DiscreteMeasure<P>, tau: f64) -> Result<Vec<Option<P>>> {
    let mut out = vec![None; m.len()];
    for i in m.support() {
        out[i] = Some(v.image(i, &m.points()[i], tau)?);
    }
    Ok(out)
}

fn lag<M: CausalModel>(model: &M, x: &M::Point, y: &M::Point) -> Result<f64> {
    model.lagrangian_kappa(x, y)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SymmetryCheck {
    pub holds: bool,
    pub max_violation: f64,
}

/// L(x, Phi_tau(y)) = L(Phi_{-tau}(x), y) over all support pairs and the
/// sampled tau; the violation is compared against tol (1 + max L).
pub fn is_lagrangian_symmetry<M, V>(model: &M, v: &V, m: &DiscreteMeasure<M::Point>, taus: &[f64], tol: f64) -> Result<SymmetryCheck>
where
    M: CausalModel,
    V: Variation<M::Point>,
{
    let support = m.support();
    let mut worst: f64 = 0.0;
    let mut size: f64 = 0.0;
    for &tau in taus {
        let fwd = images(v, m, tau)?;
        let back = images(v, m, -tau)?;
        for &i in &support {
            for &j in &support {
                let a = lag(model, &m.points()[i], fwd[j].as_ref().unwrap())?;
                let b = lag(model, back[i].as_ref().unwrap(), &m.points()[j])?;
                worst = worst.max((a - b).abs());
                size = size.max(a.abs()).max(b.abs());
            }
        }
    }
    Ok(SymmetryCheck { holds: worst <= tol * (1.0 + size), max_violation: worst })
}

/// (Phi_tau)_* rho = rho at every sampled tau.
pub fn is_measure_symmetry<P: Point, V: Variation<P>>(v: &V, m: &DiscreteMeasure<P>, taus: &[f64], tol: f64) -> Result<SymmetryCheck> {
    let mut worst: f64 = 0.0;
    for &tau in taus {
        let pushed = pushforward(m, |i, x| v.image(i, x, tau), MERGE_TOL)?;
        worst = worst.max(measure_mismatch(&pushed, m));
    }
    Ok(SymmetryCheck { holds: worst <= tol, max_violation: worst })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GisResidual {
    /// sum_{x in M} sum_{y in Omega} rho rho (L(Phi x, y) - L(x, y))
    pub lagrangian: f64,
    /// sum_{x in Omega} rho (tr Phi x - tr x); None without a trace.
    pub trace: Option<f64>,
}

pub fn gis_residual<M, V>(model: &M, v: &V, m: &DiscreteMeasure<M::Point>, omega: &Region, tau: f64) -> Result<GisResidual>
where
    M: CausalModel,
    V: Variation<M::Point>,
{
    let img = images(v, m, tau)?;
    let w = m.weights();
    let mut acc = KahanSum::new();
    for i in m.support() {
        let phi = img[i].as_ref().unwrap();
        for &j in omega.indices() {
            let y = &m.points()[j];
            acc.add(w[i] * w[j] * (lag(model, phi, y)? - lag(model, &m.points()[i], y)?));
        }
    }
    let mut tr = KahanSum::new();
    let mut has_trace = true;
    for &i in omega.indices() {
        match (model.trace(img[i].as_ref().unwrap()), model.trace(&m.points()[i])) {
            (Some(a), Some(b)) => tr.add(w[i] * (a - b)),
            _ => has_trace = false,
        }
    }
    Ok(GisResidual { lagrangian: acc.value(), trace: (has_trace && model.trace(&m.points()[0]).is_some()).then(|| tr.value()) })
}

/// Value of the surface layer integral together with the sum of the
/// absolute values of its terms.
fn surface_terms<M, V>(model: &M, m: &DiscreteMeasure<M::Point>, omega: &Region, v: &V, tau: f64) -> Result<(f64, f64)>
where
    M: CausalModel,
    V: Variation<M::Point>,
{
    let outside = omega.complement(m);
    if omega.is_empty() || outside.is_empty() {
        return Ok((0.0, 0.0));
    }
    let img = images(v, m, tau)?;
    let w = m.weights();
    let mut acc = KahanSum::new();
    let mut abs = KahanSum::new();
    for &i in omega.indices() {
        for &j in &outside {
            let a = lag(model, img[i].as_ref().unwrap(), &m.points()[j])?;
            let b = lag(model, &m.points()[i], img[j].as_ref().unwrap())?;
            acc.add(w[i] * w[j] * (a - b));
            abs.add(w[i] * w[j] * (a.abs() + b.abs()));
        }
    }
    Ok((acc.value(), abs.value()))
}

/// sum_{x in Omega} sum_{y outside Omega} rho rho (L(Phi x, y) - L(x, Phi y)).
pub fn surface_layer_integral<M, V>(model: &M, m: &DiscreteMeasure<M::Point>, omega: &Region, v: &V, tau: f64) -> Result<f64>
where
    M: CausalModel,
    V: Variation<M::Point>,
{
    Ok(surface_terms(model, m, omega, v, tau)?.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdentityCheck {
    pub lhs: f64,
    /// sum_{x in Omega} rho (ell(Phi x) - ell(x))
    pub middle: f64,
    pub surface: f64,
    /// |lhs - (middle - surface)|
    pub residual: f64,
    /// Sum of the absolute values of all terms entering the three sums.
    pub scale: f64,
}

/// The exact carry-over identity for atomic measures:
/// lhs = middle - surface, each side summed independently.
pub fn identity_residual<M, V>(model: &M, m: &DiscreteMeasure<M::Point>, omega: &Region, v: &V, tau: f64) -> Result<IdentityCheck>
where
    M: CausalModel,
    V: Variation<M::Point>,
{
    let img = images(v, m, tau)?;
    let w = m.weights();
    let mut lhs = KahanSum::new();
    let mut scale = KahanSum::new();
    for i in m.support() {
        let phi = img[i].as_ref().unwrap();
        for &j in omega.indices() {
            let y = &m.points()[j];
            let a = lag(model, phi, y)?;
            let b = lag(model, &m.points()[i], y)?;
            lhs.add(w[i] * w[j] * (a - b));
            scale.add(w[i] * w[j] * (a.abs() + b.abs()));
        }
    }
    let mut middle = KahanSum::new();
    for &i in omega.indices() {
        let a = ell(model, img[i].as_ref().unwrap(), m)?;
        let b = ell(model, &m.points()[i], m)?;
        middle.add(w[i] * (a - b));
        scale.add(w[i] * (a.abs() + b.abs()));
    }
    let (surface, surface_abs) = surface_terms(model, m, omega, v, tau)?;
    scale.add(surface_abs);
    let (lhs, middle) = (lhs.value(), middle.value());
    Ok(IdentityCheck { lhs, middle, surface, residual: (lhs - (middle - surface)).abs(), scale: scale.value() })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoetherConfig {
    pub tol_abs: f64,
    pub tol_rel: f64,
    /// Slack per unit of relative EL constancy residual, relative to scale.
    pub el_coupling: f64,
    /// Finite-difference step; 1e-3 tau_max when absent.
    pub fd_step: Option<f64>,
    pub profile_samples: usize,
    /// Tolerance of the symmetry predicates checked as preconditions.
    pub symmetry_tol: f64,
}

impl Default for NoetherConfig {
    fn default() -> Self {
        Self { tol_abs: 1e-12, tol_rel: 1e-6, el_coupling: 10.0, fd_step: None, profile_samples: 11, symmetry_tol: 1e-9 }
    }
}

impl NoetherConfig {
    fn step(&self, tau_max: f64) -> Result<f64> {
        let h = self.fd_step.unwrap_or(1e-3 * tau_max);
        if !(h > 0.0) || h >= tau_max {
            return Err(CfsError::InvalidInput(format!("finite-difference step {h} must lie in (0, tau_max = {tau_max})")));
        }
        Ok(h)
    }

    fn profile_taus(&self, tau_max: f64) -> Vec<f64> {
        let n = self.profile_samples;
        match n {
            0 => vec![],
            1 => vec![0.0],
            _ => (0..n).map(|k| tau_max * (-0.9 + 1.8 * k as f64 / (n - 1) as f64)).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerdictStatus {
    Pass,
    Fail,
    PreconditionViolated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConservationVerdict {
    pub derivative_estimate: f64,
    /// |D(h) - D(h/2)| of the two central differences.
    pub fd_error: f64,
    pub fd_step: f64,
    /// Sum over the surface layer of rho rho (|d term1| + |d term2| + L).
    pub scale: f64,
    /// Relative EL constancy residual of the measure.
    pub el_residual: f64,
    pub threshold: f64,
    pub status: VerdictStatus,
    pub pass: bool,
    pub precondition_notes: Vec<String>,
    /// (tau, surface layer value) samples.
    pub profile: Vec<(f64, f64)>,
}

fn derivative_scale<M: CausalModel>(
    model: &M,
    m: &DiscreteMeasure<M::Point>,
    omega: &Region,
    moves: &[&dyn Fn(usize, &M::Point, f64) -> Result<M::Point>],
    h: f64,
) -> Result<f64> {
    let outside = omega.complement(m);
    let w = m.weights();
    let pts = m.points();
    let mut acc = KahanSum::new();
    for &i in omega.indices() {
        for &j in &outside {
            let (x, y) = (&pts[i], &pts[j]);
            let mut s = lag(model, x, y)?;
            for mv in moves {
                let d1 = (lag(model, &mv(i, x, h)?, y)? - lag(model, &mv(i, x, -h)?, y)?) / (2.0 * h);
                let d2 = (lag(model, x, &mv(j, y, h)?)? - lag(model, x, &mv(j, y, -h)?)?) / (2.0 * h);
                s += d1.abs() + d2.abs();
            }
            acc.add(w[i] * w[j] * s);
        }
    }
    Ok(acc.value())
}

fn relative_el<M: CausalModel>(model: &M, m: &DiscreteMeasure<M::Point>) -> Result<f64> {
    let p = ActionParams { probes: ProbeConfig { count: 0, ..ProbeConfig::default() }, ..ActionParams::default() };
    Ok(el_residual(model, m, &p)?.relative_constancy)
}

fn finish_verdict(est: (f64, f64), h: f64, scale: f64, r: f64, cfg: &NoetherConfig, notes: Vec<String>, profile: Vec<(f64, f64)>) -> ConservationVerdict {
    let threshold = cfg.tol_abs + (cfg.tol_rel + cfg.el_coupling * r) * scale;
    let within = est.0.is_finite() && est.0.abs() <= threshold;
    let status = if !notes.is_empty() {
        VerdictStatus::PreconditionViolated
    } else if within {
        VerdictStatus::Pass
    } else {
        VerdictStatus::Fail
    };
    ConservationVerdict {
        derivative_estimate: est.0,
        fd_error: est.1,
        fd_step: h,
        scale,
        el_residual: r,
        threshold,
        status,
        pass: status == VerdictStatus::Pass,
        precondition_notes: notes,
        profile,
    }
}

/// d/dtau at 0 of the surface layer integral, by Richardson-extrapolated
/// central differences. Preconditions (symmetry of the Lagrangian, or a
/// vanishing first-order integrated residual) are checked and reported.
pub fn noether_derivative<M, V>(model: &M, m: &DiscreteMeasure<M::Point>, omega: &Region, v: &V, cfg: &NoetherConfig) -> Result<ConservationVerdict>
where
    M: CausalModel,
    V: Variation<M::Point>,
{
    v.validate(m)?;
    let h = cfg.step(v.tau_max())?;
    let mut failure = None;
    let est = richardson_central(
        |tau| match surface_layer_integral(model, m, omega, v, tau) {
            Ok(s) => s,
            Err(e) => {
                failure.get_or_insert(e);
                f64::NAN
            }
        },
        h,
    );
    if let Some(e) = failure {
        return Err(e);
    }
    let mv = |i: usize, x: &M::Point, t: f64| v.image(i, x, t);
    let scale = derivative_scale(model, m, omega, &[&mv], h)?;
    let r = relative_el(model, m)?;

    let mut notes = vec![];
    let taus = cfg.profile_taus(v.tau_max());
    let lag_sym = is_lagrangian_symmetry(model, v, m, &taus, cfg.symmetry_tol)?;
    if !lag_sym.holds {
        // fall back to the integrated symmetry at first order
        let whole = Region::whole(m);
        let d = richardson_central(|t| gis_residual(model, v, m, omega, t).map(|g| g.lagrangian).unwrap_or(f64::NAN), h).0;
        let dt = richardson_central(|t| gis_residual(model, v, m, &whole, t).ok().and_then(|g| g.trace).unwrap_or(0.0), h).0;
        let bound = cfg.tol_abs + (cfg.tol_rel + cfg.el_coupling * r) * scale;
        if !(d.abs() <= bound) {
            notes.push(format!(
                "not a symmetry of the Lagrangian (violation {:e}) and the integrated residual has slope {d:e}",
                lag_sym.max_violation
            ));
        }
        if !(dt.abs() <= bound) {
            notes.push(format!("trace integral changes at first order (slope {dt:e})"));
        }
    }
    let profile = taus
        .iter()
        .map(|&t| surface_layer_integral(model, m, omega, v, t).map(|s| (t, s)))
        .collect::<Result<Vec<_>>>()?;
    Ok(finish_verdict(est, h, scale, r, cfg, notes, profile))
}

/// A measure-preserving flow paired with unitaries that reproduce it on the
/// orthogonal complement of a finite-dimensional subspace K.
#[derive(Debug, Clone, PartialEq)]
pub struct KillingVariation {
    pub flow: CfsVariation,
    pub unitaries: UnitaryVariation,
    /// Columns span K; zero columns for K = {0}.
    pub kernel_basis: CMatrix,
    /// Parameters at which the flow is certified as a measure symmetry.
    pub symmetry_taus: Vec<f64>,
}

impl KillingVariation {
    /// Orthogonal projector onto the complement of K.
    pub fn complement_projector(&self) -> Result<CMatrix> {
        let f = self.unitaries.generator().nrows();
        if self.kernel_basis.nrows() != f {
            return Err(CfsError::DimensionMismatch(format!("basis of K has {} rows, expected {f}", self.kernel_basis.nrows())));
        }
        let mut proj = CMatrix::identity(f, f);
        if self.kernel_basis.ncols() > 0 {
            let q = self.kernel_basis.clone().qr().q();
            proj -= &q * q.adjoint();
        }
        Ok(proj)
    }

    /// max over support atoms of |E_tau(., x) restricted to K^perp|, where
    /// E_tau(u, x) = Psi(f_tau x) u - Psi(x) U_tau^{-1} u.
    pub fn mismatch(&self, m: &DiscreteMeasure<CfsPoint>, tau: f64) -> Result<f64> {
        let proj = self.complement_projector()?;
        let u_inv = self.unitaries.unitary(-tau);
        let mut worst: f64 = 0.0;
        for i in m.support() {
            let x = &m.points()[i];
            let fx = self.flow.image(i, x, tau)?;
            let e = (fx.psi() - x.psi() * &u_inv) * &proj;
            worst = worst.max(e.norm());
        }
        Ok(worst)
    }
}

/// d/dtau at 0 of the four-term surface layer sum
/// L(f x, y) - L(x, f y) - L(Phi x, y) + L(x, Phi y).
pub fn killing_conservation_derivative<M>(
    model: &M,
    m: &DiscreteMeasure<CfsPoint>,
    omega: &Region,
    kv: &KillingVariation,
    cfg: &NoetherConfig,
) -> Result<ConservationVerdict>
where
    M: CausalModel<Point = CfsPoint>,
{
    kv.flow.validate(m)?;
    kv.unitaries.validate(m)?;
    let tau_max = kv.flow.tau_max().min(kv.unitaries.tau_max());
    let h = cfg.step(tau_max)?;
    let four = |tau: f64| -> Result<f64> {
        Ok(surface_layer_integral(model, m, omega, &kv.flow, tau)? - surface_layer_integral(model, m, omega, &kv.unitaries, tau)?)
    };
    let mut failure = None;
    let est = richardson_central(
        |tau| match four(tau) {
            Ok(s) => s,
            Err(e) => {
                failure.get_or_insert(e);
                f64::NAN
            }
        },
        h,
    );
    if let Some(e) = failure {
        return Err(e);
    }
    let f_move = |i: usize, x: &CfsPoint, t: f64| kv.flow.image(i, x, t);
    let u_move = |i: usize, x: &CfsPoint, t: f64| kv.unitaries.image(i, x, t);
    let scale = derivative_scale(model, m, omega, &[&f_move, &u_move], h)?;
    let r = relative_el(model, m)?;

    let mut notes = vec![];
    let sym = is_measure_symmetry(&kv.flow, m, &kv.symmetry_taus, cfg.symmetry_tol)?;
    if !sym.holds {
        notes.push(format!("flow is not a measure symmetry at the certified parameters (mismatch {:e})", sym.max_violation));
    }
    let taus = cfg.profile_taus(tau_max);
    let trace_scale = ksum(m.support().iter().map(|&i| m.points()[i].trace().abs())).max(1.0);
    for &tau in taus.iter().chain(&kv.symmetry_taus) {
        let drift = m
            .support()
            .iter()
            .map(|&i| kv.flow.image(i, &m.points()[i], tau).map(|y| (y.trace() - m.points()[i].trace()).abs()))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .fold(0.0f64, f64::max);
        if drift > 1e-12 * trace_scale {
            notes.push(format!("flow changes the trace by {drift:e} at tau = {tau}"));
            break;
        }
        let e = kv.mismatch(m, tau)?;
        let psi_scale = m.points().iter().map(|p| p.psi().norm()).fold(1.0f64, f64::max);
        if e > cfg.symmetry_tol * psi_scale {
            notes.push(format!("E_tau does not vanish off K at tau = {tau} (norm {e:e})"));
            break;
        }
    }
    let profile = taus.iter().map(|&t| four(t).map(|s| (t, s))).collect::<Result<Vec<_>>>()?;
    Ok(finish_verdict(est, h, scale, r, cfg, notes, profile))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeReduction {
    pub surface_layer: f64,
    /// sum over Phi(Omega) \ Omega of rho ell minus the same over Omega \ Phi(Omega)
    pub volume_side: f64,
    pub residual: f64,
    pub scale: f64,
    /// Weighted mean of ell times the volume difference, the value for an
    /// EL-consistent measure.
    pub mean_ell_form: f64,
    /// Atom index each support atom is mapped to.
    pub mapping: Vec<(usize, usize)>,
}

/// For a variation acting at `tau` as a weight-preserving bijection of the
/// support, compares the surface layer integral with the ell-weighted
/// volumes of the symmetric difference of Omega and its image.
pub fn volume_reduction_check<M, V>(model: &M, m: &DiscreteMeasure<M::Point>, omega: &Region, v: &V, tau: f64) -> Result<VolumeReduction>
where
    M: CausalModel,
    V: Variation<M::Point>,
{
    let support = m.support();
    let w = m.weights();
    let mut target = vec![usize::MAX; m.len()];
    let mut hit = vec![false; m.len()];
    for &i in &support {
        let z = v.image(i, &m.points()[i], tau)?;
        let j = support
            .iter()
            .copied()
            .filter(|&j| m.points()[j].distance(&z) <= MERGE_TOL)
            .min_by(|a, b| m.points()[*a].distance(&z).total_cmp(&m.points()[*b].distance(&z)))
            .ok_or_else(|| CfsError::Precondition(format!("image of atom {i} at tau = {tau} is not a support atom")))?;
        if hit[j] {
            return Err(CfsError::Precondition(format!("variation is not injective at tau = {tau}: atom {j} hit twice")));
        }
        if (w[i] - w[j]).abs() > 1e-12 * w[i].max(w[j]) {
            return Err(CfsError::Precondition(format!("variation moves weight {} onto weight {}", w[i], w[j])));
        }
        hit[j] = true;
        target[i] = j;
    }
    let ells: Vec<f64> = m.points().iter().map(|p| ell(model, p, m)).collect::<Result<_>>()?;
    let image_set: Vec<usize> = omega.indices().iter().map(|&i| target[i]).collect();
    let mut gained = KahanSum::new();
    let mut lost = KahanSum::new();
    let mut vol_diff = KahanSum::new();
    for &j in &image_set {
        if !omega.contains(j) {
            gained.add(w[j] * ells[j]);
            vol_diff.add(w[j]);
        }
    }
    for &i in omega.indices() {
        if !image_set.contains(&i) {
            lost.add(w[i] * ells[i]);
            vol_diff.add(-w[i]);
        }
    }
    let (surface, surface_abs) = surface_terms(model, m, omega, v, tau)?;
    let volume_side = gained.value() - lost.value();
    let vol = ksum(support.iter().map(|&i| w[i]));
    let mean_ell = if vol > 0.0 { ksum(support.iter().map(|&i| w[i] * ells[i])) / vol } else { 0.0 };
    Ok(VolumeReduction {
        surface_layer: surface,
        volume_side,
        residual: (surface - volume_side).abs(),
        scale: surface_abs + ksum(support.iter().map(|&i| w[i] * ells[i].abs())),
        mean_ell_form: mean_ell * vol_diff.value(),
        mapping: support.iter().map(|&i| (i, target[i])).collect(),
    })
}

/// Slope of log|derivative| against log(EL residual); about one when the
/// conservation defect degrades linearly with the residual.
pub fn residual_slope(samples: &[(f64, f64)]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = samples.iter().filter(|(r, d)| *r > 0.0 && d.abs() > 0.0).map(|(r, d)| (r.ln(), d.abs().ln())).collect();
    if pts.len() < 2 {
        return None;
    }
    let (x, y): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
    linear_fit(&x, &y).map(|(slope, _)| slope)
}

/// Hermitian B with exp(iB) = the cyclic shift e_k -> e_{k+1 mod n}.
pub fn cyclic_shift_generator(n: usize) -> CMatrix {
    let nf = n as f64;
    let mut b = CMatrix::zeros(n, n);
    for k in 0..n {
        let mut theta = 2.0 * std::f64::consts::PI * k as f64 / nf;
        if theta > std::f64::consts::PI {
            theta -= 2.0 * std::f64::consts::PI;
        }
        // eigenvector v_j = exp(-2 pi i k j / n) / sqrt(n), eigenvalue exp(i theta)
        let v: Vec<Complex64> = (0..n)
            .map(|j| Complex64::from_polar(1.0 / nf.sqrt(), -2.0 * std::f64::consts::PI * (k * j) as f64 / nf))
            .collect();
        for r in 0..n {
            for c in 0..n {
                b[(r, c)] += v[r] * v[c].conj() * theta;
            }
        }
    }
    (&b + b.adjoint()) * Complex64::new(0.5, 0.0)
}

/// Block-diagonal direct sum of two square matrices.
pub fn direct_sum(a: &CMatrix, b: &CMatrix) -> CMatrix {
    let (na, nb) = (a.nrows(), b.nrows());
    let mut out = CMatrix::zeros(na + nb, na + nb);
    out.view_mut((0, 0), (na, na)).copy_from(a);
    out.view_mut((na, na), (nb, nb)).copy_from(b);
    out
}

/// Uniform measure on `atoms` commuting points x_j = diag(alpha at j,
/// -beta at j+1) (indices mod atoms), spin dimension one. All ell and
/// traces agree, so the EL constancy residual vanishes.
pub fn cyclic_diagonal_system(atoms: usize, alpha: f64, beta: f64) -> Result<DiscreteMeasure<CfsPoint>> {
    if atoms < 2 || !(alpha > 0.0) || !(beta > 0.0) {
        return Err(CfsError::InvalidInput("need at least two atoms and positive eigenvalues".into()));
    }
    let pts = (0..atoms)
        .map(|j| {
            let mut psi = CMatrix::zeros(2, atoms);
            psi[(0, (j + 1) % atoms)] = Complex64::new(beta.sqrt(), 0.0);
            psi[(1, j)] = Complex64::new(alpha.sqrt(), 0.0);
            CfsPoint::new(psi, 1)
        })
        .collect::<Result<Vec<_>>>()?;
    DiscreteMeasure::uniform(pts, 1.0)
}

/// Spin dimension two system on H = C^N + C^N: atom j carries the cyclic
/// diagonal pattern in both summands, with eigenvalues (alpha, -beta) in
/// the first and (hole_alpha, -hole_beta) in the second.
pub fn killing_system(atoms: usize, alpha: f64, beta: f64, hole_alpha: f64, hole_beta: f64) -> Result<DiscreteMeasure<CfsPoint>> {
    if atoms < 2 || [alpha, beta, hole_alpha, hole_beta].iter().any(|v| !(*v > 0.0)) {
        return Err(CfsError::InvalidInput("need at least two atoms and positive eigenvalues".into()));
    }
    let n = atoms;
    let pts = (0..n)
        .map(|j| {
            let mut psi = CMatrix::zeros(4, 2 * n);
            psi[(0, (j + 1) % n)] = Complex64::new(beta.sqrt(), 0.0);
            psi[(1, n + (j + 1) % n)] = Complex64::new(hole_beta.sqrt(), 0.0);
            psi[(2, j)] = Complex64::new(alpha.sqrt(), 0.0);
            psi[(3, n + j)] = Complex64::new(hole_alpha.sqrt(), 0.0);
            CfsPoint::new(psi, 2)
        })
        .collect::<Result<Vec<_>>>()?;
    DiscreteMeasure::uniform(pts, 1.0)
}

/// Killing pair for `killing_system`: the flow shifts both summands
/// cyclically (a measure symmetry at integer tau), the unitaries shift only
/// the first summand, and K is the second summand.
pub fn killing_variation(atoms: usize, tau_max: f64) -> Result<KillingVariation> {
    let b = cyclic_shift_generator(atoms);
    let zero = CMatrix::zeros(atoms, atoms);
    let flow = UnitaryVariation::new(direct_sum(&b, &b), tau_max)?;
    let unitaries = UnitaryVariation::new(direct_sum(&b, &zero), tau_max)?;
    let mut basis = CMatrix::zeros(2 * atoms, atoms);
    for k in 0..atoms {
        basis[(atoms + k, k)] = Complex64::new(1.0, 0.0);
    }
    let symmetry_taus = (1..)
        .map(|k| k as f64)
        .take_while(|t| *t < tau_max)
        .flat_map(|t| [t, -t])
        .take(4)
        .collect();
    Ok(KillingVariation { flow: CfsVariation::Unitary(flow), unitaries, kernel_basis: basis, symmetry_taus })
}

/// Real symmetric matrix as a complex one.
pub fn complexify(m: &DMatrix<f64>) -> CMatrix {
    m.map(|v| Complex64::new(v, 0.0))
}
