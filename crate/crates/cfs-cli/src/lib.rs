//! Command-line front end: argument parsing, report envelopes and demos.

pub mod cli;
pub mod commands;
pub mod demo;
pub mod report;

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::Path;

use clap::Parser;
use serde_json::Value;

use cli::{Cli, Command, ContinuumCommand};
use commands::Tolerances;
use report::{CliError, CliResult, ErrorInfo, Outcome, Report, Status, EXIT_PASS, EXIT_SCHEMA};

fn name(c: &Command) -> &'static str {
    match c {
        Command::Solve { .. } => "solve",
        Command::ElCheck { .. } => "el-check",
        Command::VerifyIdentity { .. } => "verify-identity",
        Command::VerifyNoether { .. } => "verify-noether",
        Command::VerifyKilling { .. } => "verify-killing",
        Command::VolumeCheck { .. } => "volume-check",
        Command::Demo { .. } => "demo",
        Command::Continuum { command } => match command {
            ContinuumCommand::Current { .. } => "continuum current",
            ContinuumCommand::Energy { .. } => "continuum energy",
            ContinuumCommand::Lemma { .. } => "continuum lemma",
            ContinuumCommand::Stability { .. } => "continuum stability",
            ContinuumCommand::Consistency { .. } => "continuum consistency",
        },
    }
}

fn inputs(c: &Command) -> BTreeMap<String, String> {
    let mut m = BTreeMap::new();
    let mut put = |k: &str, p: Option<&Path>| {
        if let Some(p) = p {
            m.insert(k.to_string(), p.display().to_string());
        }
    };
    match c {
        Command::Solve { system, config, out_system } => {
            put("system", Some(system));
            put("config", config.as_deref());
            put("out_system", out_system.as_deref());
        }
        Command::ElCheck { system, .. } => put("system", Some(system)),
        Command::VerifyIdentity { system, variation, omega, .. }
        | Command::VolumeCheck { system, variation, omega, .. } => {
            put("system", Some(system));
            put("variation", Some(variation));
            put("omega_file", omega.omega_file.as_deref());
        }
        Command::VerifyNoether { system, variation, omega, config } => {
            put("system", Some(system));
            put("variation", Some(variation));
            put("omega_file", omega.omega_file.as_deref());
            put("config", config.as_deref());
        }
        Command::VerifyKilling { killing, omega, config } => {
            put("killing", Some(killing));
            put("omega_file", omega.omega_file.as_deref());
            put("config", config.as_deref());
        }
        Command::Demo { dir } => put("dir", Some(dir)),
        Command::Continuum { command } => match command {
            ContinuumCommand::Current { model, packet, options } => {
                put("model", Some(model));
                put("packet", Some(packet));
                put("options", options.as_deref());
            }
            ContinuumCommand::Energy { model, packet } => {
                put("model", Some(model));
                put("packet", Some(packet));
            }
            ContinuumCommand::Lemma { lemma, .. } => put("lemma", lemma.as_deref()),
            ContinuumCommand::Stability { model, packet, .. } => {
                put("model", Some(model));
                put("packet", packet.as_deref());
            }
            ContinuumCommand::Consistency { model } => put("model", Some(model)),
        },
    }
    m
}

fn dispatch(cli: &Cli) -> CliResult<Outcome> {
    let tol = Tolerances { abs: cli.tol_abs, rel: cli.tol_rel };
    match &cli.command {
        Command::Solve { system, config, out_system } => commands::solve(system, config.as_deref(), out_system.as_deref(), cli.seed),
        Command::ElCheck { system, probes } => commands::el_check(system, *probes, cli.seed, tol),
        Command::VerifyIdentity { system, variation, omega, tau } => commands::verify_identity(system, variation, omega, *tau, tol),
        Command::VerifyNoether { system, variation, omega, config } => commands::verify_noether(system, variation, omega, config.as_deref(), tol),
        Command::VerifyKilling { killing, omega, config } => commands::verify_killing(killing, omega, config.as_deref(), tol),
        Command::VolumeCheck { system, variation, omega, tau } => commands::volume_check(system, variation, omega, *tau, tol),
        Command::Demo { dir } => {
            let files = demo::write_demos(dir)?;
            Ok(Outcome { status: Status::Pass, tolerances: Value::Null, result: serde_json::json!({ "files": files }), series: None })
        }
        Command::Continuum { command } => match command {
            ContinuumCommand::Current { model, packet, options } => commands::continuum_current(model, packet, options.as_deref(), tol),
            ContinuumCommand::Energy { model, packet } => commands::continuum_energy(model, packet, tol),
            ContinuumCommand::Lemma { lemma, dimension } => commands::continuum_lemma(lemma.as_deref(), *dimension, tol),
            ContinuumCommand::Stability { model, grid_points, .. } => commands::continuum_stability(model, *grid_points),
            ContinuumCommand::Consistency { model } => commands::continuum_consistency(model, tol),
        },
    }
}

/// Runs the report for already parsed arguments; returns the report and
/// the process exit code.
pub fn execute(cli: &Cli) -> (Report, i32) {
    let mut report = Report {
        command: name(&cli.command).to_string(),
        seed: cli.seed,
        timestamp: report::timestamp(),
        status: Status::Error,
        exit_code: EXIT_PASS,
        inputs: inputs(&cli.command),
        tolerances: Value::Null,
        result: Value::Null,
        error: None,
    };
    let outcome = dispatch(cli).and_then(|o| {
        if let (Some(path), Some(series)) = (&cli.csv, &o.series) {
            series.write(path)?;
        }
        Ok(o)
    });
    match outcome {
        Ok(o) => {
            report.status = o.status;
            report.exit_code = o.status.exit_code();
            report.tolerances = o.tolerances;
            report.result = o.result;
        }
        Err(e) => {
            report.exit_code = e.exit_code();
            report.error = Some(ErrorInfo { kind: e.kind().to_string(), message: e.to_string() });
        }
    }
    let code = report.exit_code;
    (report, code)
}

fn emit(cli: &Cli, report: &Report) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(report).expect("reports serialize");
    text.push('\n');
    match &cli.out {
        Some(p) => commands::write(p, &text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

/// Full entry point: parse, run, report. Returns the exit code.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_SCHEMA } else { EXIT_PASS };
        }
    };
    if let Some(n) = cli.threads {
        // only the first call in a process can configure the pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let (report, code) = execute(&cli);
    if let Some(err) = &report.error {
        eprintln!("cfs: {}: {}", err.kind, err.message);
    }
    if let Err(e) = emit(&cli, &report) {
        eprintln!("cfs: {e}");
        return CliError::exit_code(&e);
    }
    code
}
