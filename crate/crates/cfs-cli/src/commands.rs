//! One function per subcommand. Each reads its inputs, runs the library
//! call and returns an `Outcome`; the driver handles reporting.

use std::path::Path;

use cfs_core::action::el_residual;
use cfs_core::continuum::{
    consistency_check, cross_terms, current_closed, current_direct_extrapolated, default_q2_grid, energy_closed,
    fourier_layer_lemma, state_stability_check, DirectOptions, GaussianProfile, QhatModel, WavePacket,
};
use cfs_core::io::{self, System};
use cfs_core::measure::{DiscreteMeasure, Point, Region};
use cfs_core::model::CausalModel;
use cfs_core::noether::{
    identity_residual, killing_conservation_derivative, noether_derivative, volume_reduction_check, NoetherConfig,
    Variation, VerdictStatus,
};
use cfs_core::optimizer::{minimize_cfs, minimize_compact, OptimizerConfig};
use rayon::prelude::*;
use serde_json::json;

use crate::cli::OmegaArgs;
use crate::report::{to_value, CliError, CliResult, Outcome, Series, Status};

/// Global tolerance overrides.
#[derive(Debug, Clone, Copy, Default)]
pub struct Tolerances {
    pub abs: Option<f64>,
    pub rel: Option<f64>,
}

impl Tolerances {
    fn pick(&self, abs: f64, rel: f64) -> CliResult<(f64, f64)> {
        let (a, r) = (self.abs.unwrap_or(abs), self.rel.unwrap_or(rel));
        if !(a >= 0.0 && r >= 0.0 && a.is_finite() && r.is_finite()) {
            return Err(CliError::Usage(format!("tolerances must be finite and nonnegative, got abs={a} rel={r}")));
        }
        Ok((a, r))
    }
}

pub fn read(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|source| CliError::Read { path: path.to_path_buf(), source })
}

pub fn write(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|source| CliError::Write { path: path.to_path_buf(), source })
}

fn region<P: Point>(args: &OmegaArgs, m: &DiscreteMeasure<P>) -> CliResult<Region> {
    match &args.omega_file {
        Some(p) => Ok(io::decode_region(&read(p)?)?.build(m)?),
        None => Ok(Region::new(args.omega.clone(), m)?),
    }
}

fn verdict_status(s: VerdictStatus) -> Status {
    match s {
        VerdictStatus::Pass => Status::Pass,
        VerdictStatus::Fail => Status::Fail,
        VerdictStatus::PreconditionViolated => Status::PreconditionViolated,
    }
}

/// Minimizers are searched among measures with the input's atoms only.
const ANSATZ: &str = "fixed atom count: weights (and wave evaluations) vary, atoms are neither added nor removed";

pub fn solve(system: &Path, config: Option<&Path>, out_system: Option<&Path>, seed: u64) -> CliResult<Outcome> {
    let sys = io::decode_system(&read(system)?)?;
    let mut cfg = match config {
        Some(p) => io::decode_optimizer_config(&read(p)?)?,
        None => OptimizerConfig::default(),
    };
    cfg.seed = seed;
    match sys {
        System::Compact { kernel, measure } => {
            let (m, out) = minimize_compact(&kernel, measure.points(), &cfg)?;
            if let Some(p) = out_system {
                let file = io::SystemFile::from_compact(&kernel, &m);
                write(p, &serde_json::to_string_pretty(&file).expect("system files serialize"))?;
            }
            let mut series = Series::new(&["iteration", "action"]);
            series.rows = out.action_trace.iter().enumerate().map(|(i, a)| vec![i as f64, *a]).collect();
            Ok(Outcome {
                status: Status::from_pass(out.converged),
                tolerances: json!({ "stop_tol": cfg.stop_tol }),
                result: json!({ "setting": "compact", "ansatz": ANSATZ, "config": to_value(&cfg), "outcome": to_value(&out) }),
                series: Some(series),
            })
        }
        System::Cfs { params, measure, .. } => {
            let (m, out) = minimize_cfs(&measure, &params, &cfg)?;
            if let Some(p) = out_system {
                let file = io::SystemFile::from_cfs(&m, &params);
                write(p, &serde_json::to_string_pretty(&file).expect("system files serialize"))?;
            }
            let mut series = Series::new(&["iteration", "action", "boundedness", "trace", "objective", "relative_constancy", "step"]);
            series.rows = out
                .records
                .iter()
                .map(|r| vec![r.iter as f64, r.action, r.boundedness, r.trace, r.objective, r.relative_constancy, r.step])
                .collect();
            Ok(Outcome {
                status: Status::from_pass(out.converged),
                tolerances: json!({ "stop_tol": cfg.stop_tol }),
                result: json!({ "setting": "cfs", "ansatz": ANSATZ, "config": to_value(&cfg), "outcome": to_value(&out) }),
                series: Some(series),
            })
        }
    }
}

pub fn el_check(system: &Path, probes: Option<usize>, seed: u64, tol: Tolerances) -> CliResult<Outcome> {
    let (abs, rel) = tol.pick(1e-10, 1e-8)?;
    let sys = io::decode_system(&read(system)?)?;
    let report = match sys {
        System::Cfs { model, mut params, measure } => {
            params.probes.seed = seed;
            if let Some(n) = probes {
                params.probes.count = n;
            }
            el_residual(&model, &measure, &params)?
        }
        System::Compact { kernel, measure } => {
            let mut params = cfs_core::action::ActionParams::default();
            params.probes.seed = seed;
            if let Some(n) = probes {
                params.probes.count = n;
            }
            el_residual(&kernel, &measure, &params)?
        }
    };
    let pass = report.relative_constancy <= rel && report.residual_minimality <= abs + rel * report.g_mean.abs();
    Ok(Outcome {
        status: Status::from_pass(pass),
        tolerances: json!({ "constancy_rel": rel, "minimality_abs": abs, "minimality_rel": rel }),
        result: to_value(&report),
        series: None,
    })
}

fn identity_outcome<M: CausalModel, V: Variation<M::Point>>(
    model: &M,
    m: &DiscreteMeasure<M::Point>,
    omega: &Region,
    v: &V,
    tau: f64,
    abs: f64,
    rel: f64,
) -> CliResult<Outcome> {
    let check = identity_residual(model, m, omega, v, tau)?;
    let pass = check.residual <= abs + rel * check.scale;
    Ok(Outcome {
        status: Status::from_pass(pass),
        tolerances: json!({ "abs": abs, "rel": rel }),
        result: json!({ "tau": tau, "omega": omega.indices(), "check": to_value(&check) }),
        series: None,
    })
}

pub fn verify_identity(system: &Path, variation: &Path, omega: &OmegaArgs, tau: f64, tol: Tolerances) -> CliResult<Outcome> {
    let (abs, rel) = tol.pick(1e-14, 1e-10)?;
    let sys = io::decode_system(&read(system)?)?;
    let vf = io::decode_variation(&read(variation)?)?;
    match sys {
        System::Cfs { model, measure, .. } => {
            let v = vf.build_cfs(&measure)?;
            let r = region(omega, &measure)?;
            identity_outcome(&model, &measure, &r, &v, tau, abs, rel)
        }
        System::Compact { kernel, measure } => {
            let v = vf.build_compact(&measure)?;
            let r = region(omega, &measure)?;
            identity_outcome(&kernel, &measure, &r, &v, tau, abs, rel)
        }
    }
}

fn noether_config(config: Option<&Path>, tol: Tolerances) -> CliResult<NoetherConfig> {
    let mut cfg = match config {
        Some(p) => io::decode_noether_config(&read(p)?)?,
        None => NoetherConfig::default(),
    };
    let (abs, rel) = tol.pick(cfg.tol_abs, cfg.tol_rel)?;
    cfg.tol_abs = abs;
    cfg.tol_rel = rel;
    Ok(cfg)
}

fn verdict_outcome(v: cfs_core::noether::ConservationVerdict, cfg: &NoetherConfig, omega: &Region) -> Outcome {
    let mut series = Series::new(&["tau", "surface_layer"]);
    series.rows = v.profile.iter().map(|(t, s)| vec![*t, *s]).collect();
    Outcome {
        status: verdict_status(v.status),
        tolerances: json!({ "abs": cfg.tol_abs, "rel": cfg.tol_rel, "el_coupling": cfg.el_coupling }),
        result: json!({ "omega": omega.indices(), "config": to_value(cfg), "verdict": to_value(&v) }),
        series: Some(series),
    }
}

pub fn verify_noether(system: &Path, variation: &Path, omega: &OmegaArgs, config: Option<&Path>, tol: Tolerances) -> CliResult<Outcome> {
    let cfg = noether_config(config, tol)?;
    let sys = io::decode_system(&read(system)?)?;
    let vf = io::decode_variation(&read(variation)?)?;
    match sys {
        System::Cfs { model, measure, .. } => {
            let v = vf.build_cfs(&measure)?;
            let r = region(omega, &measure)?;
            Ok(verdict_outcome(noether_derivative(&model, &measure, &r, &v, &cfg)?, &cfg, &r))
        }
        System::Compact { kernel, measure } => {
            let v = vf.build_compact(&measure)?;
            let r = region(omega, &measure)?;
            Ok(verdict_outcome(noether_derivative(&kernel, &measure, &r, &v, &cfg)?, &cfg, &r))
        }
    }
}

pub fn verify_killing(killing: &Path, omega: &OmegaArgs, config: Option<&Path>, tol: Tolerances) -> CliResult<Outcome> {
    let cfg = noether_config(config, tol)?;
    let setup = io::decode_killing(&read(killing)?)?.build()?;
    let r = region(omega, &setup.measure)?;
    let v = killing_conservation_derivative(&setup.model, &setup.measure, &r, &setup.variation, &cfg)?;
    Ok(verdict_outcome(v, &cfg, &r))
}

fn volume_outcome<M: CausalModel, V: Variation<M::Point>>(
    model: &M,
    m: &DiscreteMeasure<M::Point>,
    omega: &Region,
    v: &V,
    tau: f64,
    abs: f64,
    rel: f64,
) -> CliResult<Outcome> {
    let r = volume_reduction_check(model, m, omega, v, tau)?;
    let pass = r.residual <= abs + rel * r.scale;
    Ok(Outcome {
        status: Status::from_pass(pass),
        tolerances: json!({ "abs": abs, "rel": rel }),
        result: json!({ "tau": tau, "omega": omega.indices(), "reduction": to_value(&r) }),
        series: None,
    })
}

pub fn volume_check(system: &Path, variation: &Path, omega: &OmegaArgs, tau: f64, tol: Tolerances) -> CliResult<Outcome> {
    let (abs, rel) = tol.pick(1e-14, 1e-10)?;
    let sys = io::decode_system(&read(system)?)?;
    let vf = io::decode_variation(&read(variation)?)?;
    match sys {
        System::Cfs { model, measure, .. } => {
            let v = vf.build_cfs(&measure)?;
            let r = region(omega, &measure)?;
            volume_outcome(&model, &measure, &r, &v, tau, abs, rel)
        }
        System::Compact { kernel, measure } => {
            let v = vf.build_compact(&measure)?;
            let r = region(omega, &measure)?;
            volume_outcome(&kernel, &measure, &r, &v, tau, abs, rel)
        }
    }
}

fn model_and_packets(model: &Path, packet: &Path) -> CliResult<(QhatModel, Vec<WavePacket>)> {
    let m = io::decode_model(&read(model)?)?;
    let packets = io::decode_packets(&read(packet)?)?;
    for p in &packets {
        p.validate(&m)?;
    }
    Ok((m, packets))
}

/// Largest allowed |sum of cross terms| / sum |diagonal terms|.
const CROSS_TOLERANCE: f64 = 0.01;

pub fn continuum_current(model: &Path, packet: &Path, options: Option<&Path>, tol: Tolerances) -> CliResult<Outcome> {
    let (_, rel) = tol.pick(0.0, 0.02)?;
    let (m, packets) = model_and_packets(model, packet)?;
    let opts = match options {
        Some(p) => io::decode_direct_options(&read(p)?)?,
        None => DirectOptions::default(),
    };
    // independent per packet; collect keeps the input order
    let per_packet: Vec<_> = packets
        .par_iter()
        .map(|p| -> cfs_core::Result<_> {
            let sweep = current_direct_extrapolated(&m, p, p, &opts)?;
            let closed = current_closed(&m, p, None)?;
            let denom = closed.momentum.abs();
            let rel_diff = if denom == 0.0 { sweep.extrapolated.abs() } else { (sweep.extrapolated - closed.momentum).abs() / denom };
            Ok((sweep, closed, rel_diff))
        })
        .collect::<cfs_core::Result<Vec<_>>>()?;
    let cross = if packets.len() > 1 { Some(cross_terms(&m, &packets, &opts)?) } else { None };
    let mut series = Series::new(&["packet", "eta", "value"]);
    for (i, (sweep, _, _)) in per_packet.iter().enumerate() {
        for (e, v) in sweep.etas.iter().zip(&sweep.values) {
            series.rows.push(vec![i as f64, *e, *v]);
        }
    }
    let direct_ok = per_packet.iter().all(|(_, _, d)| *d <= rel);
    let cross_ok = cross.as_ref().is_none_or(|c| c.ratio <= CROSS_TOLERANCE);
    let packets_json: Vec<_> = packets
        .iter()
        .zip(&per_packet)
        .map(|(p, (sweep, closed, d))| {
            json!({
                "generation": p.generation,
                "c": m.c_beta(p.generation).ok(),
                "direct": to_value(sweep),
                "closed": to_value(closed),
                "relative_difference": d,
            })
        })
        .collect();
    Ok(Outcome {
        status: Status::from_pass(direct_ok && cross_ok),
        tolerances: json!({ "direct_vs_closed_rel": rel, "cross_term_ratio": CROSS_TOLERANCE }),
        result: json!({
            "window": opts.window,
            "eta0": opts.eta0,
            "options": to_value(&opts),
            "packets": packets_json,
            "cross_terms": cross.as_ref().map(to_value),
        }),
        series: Some(series),
    })
}

pub fn continuum_energy(model: &Path, packet: &Path, tol: Tolerances) -> CliResult<Outcome> {
    let (_, rel) = tol.pick(0.0, 1e-8)?;
    let (m, packets) = model_and_packets(model, packet)?;
    let mut pass = true;
    let mut rows = Vec::new();
    for p in &packets {
        let j = current_closed(&m, p, None)?;
        let e = energy_closed(&m, p, None)?;
        let mass = p.mass(&m);
        let bound = e.momentum >= mass * j.momentum.abs() * (1.0 - 1e-12);
        pass &= j.relative_difference <= rel && e.relative_difference <= rel && bound;
        rows.push(json!({
            "generation": p.generation,
            "current": to_value(&j),
            "energy": to_value(&e),
            "energy_dominates_mass_current": bound,
        }));
    }
    Ok(Outcome {
        status: Status::from_pass(pass),
        tolerances: json!({ "dual_form_rel": rel }),
        result: json!({ "packets": rows }),
        series: None,
    })
}

pub fn continuum_lemma(lemma: Option<&Path>, dimension: u32, tol: Tolerances) -> CliResult<Outcome> {
    let (abs, _) = tol.pick(1e-6, 0.0)?;
    let (profile, dimension, grid) = match lemma {
        Some(p) => {
            let l = io::decode_lemma(&read(p)?)?;
            (l.profile, l.dimension, l.grid)
        }
        None => (GaussianProfile::odd(1.0), dimension, None),
    };
    let grid = grid.unwrap_or_else(|| profile.grid());
    let r = fourier_layer_lemma(|w, k| profile.eval(w, k), dimension, &grid)?;
    Ok(Outcome {
        status: Status::from_pass(r.difference <= abs),
        tolerances: json!({ "abs": abs }),
        result: json!({
            "profile": to_value(&profile),
            "grid": to_value(&grid),
            "dimension": r.dimension,
            "lhs": r.lhs,
            "rhs": r.rhs,
            "difference": r.difference,
        }),
        series: None,
    })
}

pub fn continuum_stability(model: &Path, grid_points: usize) -> CliResult<Outcome> {
    let m = io::decode_model(&read(model)?)?;
    if grid_points == 0 || grid_points > 10_000_000 {
        return Err(CliError::Usage(format!("grid_points must lie in 1..=10000000, got {grid_points}")));
    }
    let grid = default_q2_grid(&m, grid_points);
    let r = state_stability_check(&m, &grid)?;
    let mut series = Series::new(&["q2", "a", "b", "a_plus_b"]);
    series.rows = grid.iter().map(|q| vec![*q, m.curve.a_at(*q), m.curve.b_at(*q), m.combined(*q)]).collect();
    Ok(Outcome {
        status: Status::from_pass(r.pass),
        tolerances: json!({ "shell_equality_rel": 1e-12 }),
        result: json!({ "grid_points": grid.len(), "report": to_value(&r) }),
        series: Some(series),
    })
}

pub fn continuum_consistency(model: &Path, tol: Tolerances) -> CliResult<Outcome> {
    let (_, rel) = tol.pick(0.0, 1e-12)?;
    let m = io::decode_model(&read(model)?)?;
    let r = consistency_check(&m, rel)?;
    Ok(Outcome {
        status: Status::from_pass(r.pass),
        tolerances: json!({ "rel": rel }),
        result: to_value(&r),
        series: None,
    })
}
