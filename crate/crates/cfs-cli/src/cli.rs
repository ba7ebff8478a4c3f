use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "cfs", version, about = "Causal action minimization, surface layer conservation checks and continuum-limit reports")]
pub struct Cli {
    /// Seed recorded in every report and used by all randomized steps.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Absolute tolerance override for the command's pass criterion.
    #[arg(long, global = true)]
    pub tol_abs: Option<f64>,
    /// Relative tolerance override for the command's pass criterion.
    #[arg(long, global = true)]
    pub tol_rel: Option<f64>,
    /// JSON report path; stdout when absent.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// CSV path for the command's long series (traces, sweeps, profiles).
    #[arg(long, global = true)]
    pub csv: Option<PathBuf>,
    /// Worker threads for parallel sections.
    #[arg(long, global = true, env = "CFS_THREADS")]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct OmegaArgs {
    /// Atom indices of the region, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub omega: Vec<usize>,
    /// Region file {"indices": [...]}; overrides --omega.
    #[arg(long)]
    pub omega_file: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Minimize the causal action starting from a system file.
    Solve {
        #[arg(long)]
        system: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Where to write the optimized system.
        #[arg(long)]
        out_system: Option<PathBuf>,
    },
    /// Euler-Lagrange residuals of a measure.
    ElCheck {
        #[arg(long)]
        system: PathBuf,
        /// Number of minimality probes (default from the system file).
        #[arg(long)]
        probes: Option<usize>,
    },
    /// Exact discrete identity relating the surface layer integral to the
    /// integrated symmetry residual.
    VerifyIdentity {
        #[arg(long)]
        system: PathBuf,
        #[arg(long)]
        variation: PathBuf,
        #[command(flatten)]
        omega: OmegaArgs,
        #[arg(long, default_value_t = 0.5)]
        tau: f64,
    },
    /// Conservation verdict for a symmetry variation.
    VerifyNoether {
        #[arg(long)]
        system: PathBuf,
        #[arg(long)]
        variation: PathBuf,
        #[command(flatten)]
        omega: OmegaArgs,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Conservation verdict for a measure symmetry paired with unitaries.
    VerifyKilling {
        #[arg(long)]
        killing: PathBuf,
        #[command(flatten)]
        omega: OmegaArgs,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Surface layer versus ell-weighted volume difference for a bijective
    /// measure symmetry.
    VolumeCheck {
        #[arg(long)]
        system: PathBuf,
        #[arg(long)]
        variation: PathBuf,
        #[command(flatten)]
        omega: OmegaArgs,
        #[arg(long, default_value_t = 1.0)]
        tau: f64,
    },
    /// Continuum-limit computations.
    Continuum {
        #[command(subcommand)]
        command: ContinuumCommand,
    },
    /// Write the bundled demo inputs into a directory.
    Demo {
        #[arg(long)]
        dir: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
pub enum ContinuumCommand {
    /// Regularized currents against their closed form, and cross terms.
    Current {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        packet: PathBuf,
        #[arg(long)]
        options: Option<PathBuf>,
    },
    /// Energy functional in momentum and position form.
    Energy {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        packet: PathBuf,
    },
    /// Fourier layer identity for an odd Gaussian profile.
    Lemma {
        #[arg(long)]
        lemma: Option<PathBuf>,
        /// Spatial dimension when no lemma file is given.
        #[arg(long, default_value_t = 1)]
        dimension: u32,
    },
    /// State-stability conditions on a q^2 grid.
    Stability {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 4000)]
        grid_points: usize,
        /// Accepted for a uniform interface; unused.
        #[arg(long)]
        packet: Option<PathBuf>,
    },
    /// Equality of weight * mass * shell constant across generations.
    Consistency {
        #[arg(long)]
        model: PathBuf,
    },
}
