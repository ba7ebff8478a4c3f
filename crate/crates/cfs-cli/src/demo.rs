//! Bundled demo inputs. Everything is a closed-form function of indices so
//! the files are reproducible byte for byte.

use std::path::Path;

use cfs_core::continuum::{consistent_model, DirectOptions, FixtureSpec, GaussianProfile, WavePacket};
use cfs_core::noether::NoetherConfig;
use cfs_core::optimizer::OptimizerConfig;
use serde_json::{json, Value};

use crate::report::{to_value, CliError, CliResult};

fn psi_entry(atom: usize, row: usize, col: usize) -> (f64, f64) {
    let t = 1.3 * (row + 1) as f64 + 0.7 * ((col + 1) * (atom + 1)) as f64;
    (t.sin(), 0.5 * (0.9 * t).cos())
}

fn cfs_system() -> Value {
    let (atoms, rows, f) = (5, 2, 3);
    let atoms: Vec<Value> = (0..atoms)
        .map(|a| {
            let re: Vec<Vec<f64>> = (0..rows).map(|r| (0..f).map(|c| psi_entry(a, r, c).0).collect()).collect();
            let im: Vec<Vec<f64>> = (0..rows).map(|r| (0..f).map(|c| psi_entry(a, r, c).1).collect()).collect();
            json!({ "psi": { "re": re, "im": im }, "weight": 0.2 })
        })
        .collect();
    json!({ "setting": "cfs", "spin_dim": 1, "params": { "kappa": 0.1 }, "atoms": atoms })
}

fn hermitian_generator(f: usize) -> Value {
    let re: Vec<Vec<f64>> = (0..f).map(|i| (0..f).map(|j| 0.3 * ((i + j + 1) as f64).cos()).collect()).collect();
    let im: Vec<Vec<f64>> = (0..f)
        .map(|i| (0..f).map(|j| if i == j { 0.0 } else { 0.2 * (i as f64 - j as f64) / (1.0 + (i + j) as f64) }).collect())
        .collect();
    json!({ "re": re, "im": im })
}

fn packets() -> Value {
    let ps: Vec<WavePacket> = (0..2)
        .map(|b| {
            let mut p = WavePacket::gaussian(b, 1.0 + 0.3 * b as f64, 0.8);
            p.polarization = [num_complex::Complex64::new(1.0, 0.2 * b as f64), num_complex::Complex64::new(0.1, -0.3)];
            p
        })
        .collect();
    json!({ "packets": ps })
}

/// (relative path, contents) for every demo file.
pub fn demo_files() -> CliResult<Vec<(&'static str, Value)>> {
    let fixture = FixtureSpec {
        masses: vec![0.7, 1.2],
        weights: vec![],
        floor: 0.4,
        a_floor: 0.0,
        split: 0.0,
        left_drop: vec![1.0, 0.3],
        c: vec![0.8, 2.0],
    };
    let explicit = consistent_model(&[0.8, 1.0, 1.3], &[1.0, 2.0, 0.5], 1.2, 0.5)?;
    let mut optimizer = OptimizerConfig::default();
    optimizer.max_iters = 400;
    Ok(vec![
        ("systems/cfs.json", cfs_system()),
        ("systems/cyclic.json", json!({ "setting": "cyclic_diagonal", "atoms": 5, "alpha": 2.0, "beta": 1.0 })),
        ("systems/diagonal.json", json!({ "setting": "compact", "kernel": { "kind": "diagonal", "size": 5 } })),
        ("variations/unitary.json", json!({ "kind": "unitary", "generator": hermitian_generator(3), "tau_max": 1.0 })),
        ("variations/unitary5.json", json!({ "kind": "unitary", "generator": hermitian_generator(5), "tau_max": 1.0 })),
        ("variations/cyclic_shift.json", json!({ "kind": "cyclic_shift", "tau_max": 3.0 })),
        ("variations/permutation.json", json!({ "kind": "permutation", "perm": [1, 2, 3, 4, 0], "tau_max": 2.0 })),
        ("omega.json", json!({ "indices": [0, 1] })),
        (
            "killing.json",
            json!({ "kind": "fixture", "atoms": 4, "alpha": 2.0, "beta": 1.0, "hole_alpha": 1.5, "hole_beta": 0.5, "tau_max": 3.0 }),
        ),
        ("continuum/model_fixture.json", json!({ "fixture": to_value(&fixture) })),
        ("continuum/model_explicit.json", to_value(&explicit)),
        ("continuum/packets.json", packets()),
        ("continuum/packet.json", to_value(&WavePacket::gaussian(0, 1.0, 0.7))),
        ("continuum/lemma_d1.json", json!({ "profile": to_value(&GaussianProfile::odd(1.0)), "dimension": 1 })),
        ("continuum/lemma_d3.json", json!({ "profile": to_value(&GaussianProfile::odd(1.0)), "dimension": 3 })),
        ("configs/optimizer.json", to_value(&optimizer)),
        ("configs/noether.json", to_value(&NoetherConfig::default())),
        ("configs/direct_options.json", to_value(&DirectOptions::default())),
    ])
}

pub fn render(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("json values serialize");
    s.push('\n');
    s
}

pub fn write_demos(dir: &Path) -> CliResult<Vec<String>> {
    let mut written = Vec::new();
    for (rel, v) in demo_files()? {
        let path = dir.join(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|source| CliError::Write { path: parent.to_path_buf(), source })?;
        }
        crate::commands::write(&path, &render(&v))?;
        written.push(rel.to_string());
    }
    Ok(written)
}
