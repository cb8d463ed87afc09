mod commands;
mod config;
mod values;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::values::{Figure, Grid, Levels, Mode};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad flags, config files or parameter values (exit 2).
    #[error("{0}")]
    Usage(String),
    /// The computation itself failed (exit 1).
    #[error("{0}")]
    Numeric(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<sntrap::Error> for CliError {
    fn from(e: sntrap::Error) -> Self {
        match e {
            sntrap::Error::Domain(_) | sntrap::Error::Unsupported(_) | sntrap::Error::Parse { .. } => {
                CliError::Usage(e.to_string())
            }
            _ => CliError::Numeric(e.to_string()),
        }
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "sntrap",
    version,
    about = "Self-gravity spectra and dynamics of a trapped crystalline sphere",
    arg_required_else_help = true
)]
pub struct Cli {
    /// Key-value config file; the section named after the subcommand is
    /// read and flags override it. Run manifests (*.meta) are valid configs.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Tabulate the dimensionless kernel i, i′ and ζi′ + 2i.
    Kernels(KernelsArgs),
    /// Print the P_n polynomials with exact coefficients.
    Polys(PolysArgs),
    /// Spectral coefficients f̃ and gravitational transition shifts.
    Spectrum(SpectrumArgs),
    /// Squeezed-state moment dynamics, or `dynamics sweep` for ω_SN²(α).
    Dynamics(DynamicsArgs),
    /// Axially symmetric trap: Monte-Carlo f_n(α, μ).
    Axial(AxialArgs),
    /// Nonlinear split-step solver.
    Oracle(OracleArgs),
    /// Canonical figure data sets.
    Figures(FiguresArgs),
}

#[derive(Args, Debug, Default)]
pub struct OutArgs {
    /// Output file; a `<file>.meta` manifest is written next to it.
    /// Without it the CSV goes to stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct MaterialArgs {
    /// Material preset name.
    #[arg(long)]
    pub material: Option<String>,
    /// Extra presets file with [name] sections (m_atom_u, sigma_m,
    /// density_kg_m3).
    #[arg(long)]
    pub presets: Option<PathBuf>,
    /// Trap angular frequency ω₀ (rad/s).
    #[arg(long)]
    pub omega0: Option<f64>,
}

#[derive(Args, Debug)]
pub struct KernelsArgs {
    #[arg(long)]
    pub family: Option<String>,
    /// start:stop:count[:log] or a comma list.
    #[arg(long)]
    pub zeta_grid: Option<Grid>,
    /// Atom count N of the lattice part (0: single atom).
    #[arg(long)]
    pub n_atoms: Option<f64>,
    /// R/σ (inf: single atom).
    #[arg(long)]
    pub varrho: Option<f64>,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Args, Debug)]
pub struct PolysArgs {
    /// Highest n to print.
    #[arg(long)]
    pub max_n: Option<usize>,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Args, Debug)]
pub struct SpectrumArgs {
    #[arg(long)]
    pub family: Option<String>,
    /// full, narrow, intermediate, wide or auto.
    #[arg(long)]
    pub regime: Option<String>,
    /// Levels a:b; rows hold the transitions (n, n+1) for n in a..b−1.
    #[arg(long)]
    pub levels: Option<Levels>,
    /// α grid; the sphere mass follows from α and ω₀.
    #[arg(long)]
    pub alpha: Option<Grid>,
    /// Sphere mass in atomic mass units (overrides the α grid).
    #[arg(long)]
    pub m_u: Option<f64>,
    #[command(flatten)]
    pub material: MaterialArgs,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Args, Debug)]
#[command(args_conflicts_with_subcommands = true)]
pub struct DynamicsArgs {
    #[command(subcommand)]
    pub sweep: Option<DynamicsSub>,
    #[command(flatten)]
    pub run: DynamicsRunArgs,
}

#[derive(Subcommand, Debug)]
pub enum DynamicsSub {
    /// ω_SN²(α) = −g′/4 for both atomic profiles.
    Sweep(DynamicsSweepArgs),
}

#[derive(Args, Debug)]
pub struct DynamicsRunArgs {
    #[command(flatten)]
    pub material: MaterialArgs,
    /// Initial width over the ground-state width.
    #[arg(long)]
    pub kappa: Option<f64>,
    #[arg(long)]
    pub family: Option<String>,
    #[arg(long)]
    pub regime: Option<String>,
    /// Ground-state α (sets the mass).
    #[arg(long, conflicts_with = "m_u")]
    pub alpha: Option<f64>,
    /// Sphere mass in atomic mass units.
    #[arg(long)]
    pub m_u: Option<f64>,
    /// End time, s (default ten trap periods).
    #[arg(long)]
    pub t_end: Option<f64>,
    #[arg(long)]
    pub samples: Option<usize>,
    /// Multiplier on G.
    #[arg(long)]
    pub gravity_scale: Option<f64>,
    /// Initial displacement in ground-state widths.
    #[arg(long)]
    pub x0: Option<f64>,
    #[arg(long)]
    pub tolerance: Option<f64>,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Args, Debug)]
pub struct DynamicsSweepArgs {
    #[arg(long)]
    pub material: Option<String>,
    #[arg(long)]
    pub presets: Option<PathBuf>,
    #[arg(long)]
    pub alpha: Option<Grid>,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Args, Debug)]
pub struct AxialArgs {
    /// Level pairs (n, n+1) for n in the range.
    #[arg(long)]
    pub n: Option<Levels>,
    #[arg(long)]
    pub alpha: Option<Grid>,
    #[arg(long)]
    pub mu: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub max_samples: Option<u64>,
    #[arg(long)]
    pub target_rel_err: Option<f64>,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Args, Debug)]
pub struct OracleArgs {
    /// it (imaginary time, energy report) or rt (real time, moments).
    #[arg(long)]
    pub mode: Option<Mode>,
    #[command(flatten)]
    pub material: MaterialArgs,
    #[arg(long)]
    pub family: Option<String>,
    /// Ground-state α (sets the mass).
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Gravitational boost λ_G.
    #[arg(long)]
    pub lambda_g: Option<f64>,
    #[arg(long)]
    pub grid_points: Option<usize>,
    /// Box half-width in ground-state widths.
    #[arg(long)]
    pub box_widths: Option<f64>,
    /// Step in units of 1/ω₀.
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long)]
    pub steps: Option<usize>,
    /// Real time: initial width over the ground-state width.
    #[arg(long)]
    pub kappa: Option<f64>,
    /// Real time: initial displacement in ground-state widths.
    #[arg(long)]
    pub x0: Option<f64>,
    /// Imaginary time: lowest odd state instead of the ground state.
    #[arg(long)]
    pub odd: Option<bool>,
    #[arg(long)]
    pub sample_every: Option<usize>,
    /// Real time: dump ψ every this many steps into --snapshot-dir.
    #[arg(long)]
    pub snapshot_every: Option<usize>,
    #[arg(long)]
    pub snapshot_dir: Option<PathBuf>,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Args, Debug)]
pub struct FiguresArgs {
    /// fig3, fig4, fig5, fig6, fig7 or all.
    pub which: Option<Figure>,
    /// Kernel family for fig3 (both when omitted).
    #[arg(long)]
    pub family: Option<String>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Monte-Carlo target for fig6.
    #[arg(long)]
    pub target_rel_err: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

fn init_threads() -> Result<(), CliError> {
    if let Ok(v) = std::env::var("SN_TRAP_THREADS") {
        let n: usize = v
            .trim()
            .parse()
            .ok()
            .filter(|n| *n > 0)
            .ok_or_else(|| CliError::Usage(format!("SN_TRAP_THREADS must be a positive integer, got '{v}'")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(format!("thread pool: {e}")))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = init_threads().and_then(|_| commands::run(cli));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("sntrap: {e}");
            match e {
                CliError::Usage(_) => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}
