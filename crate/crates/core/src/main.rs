use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use caqzo::compander::{CompanderFamily, CompanderSpec, GridSpec};
use caqzo::diagnostics::grid_span;
use caqzo::harness::{self, RunOptions};
use caqzo::Result;

#[derive(Parser)]
#[command(
    name = "caqzo",
    version,
    about = "Zeroth-order optimization through companding quantizers"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ExperimentArgs {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output_dir` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (0 = one per core).
    #[arg(long, default_value_t = 0)]
    workers: usize,
    /// Added to every start seed.
    #[arg(long, default_value_t = 0)]
    seed_offset: u64,
}

impl ExperimentArgs {
    fn options(&self) -> RunOptions {
        RunOptions {
            out: self.out.clone(),
            workers: self.workers,
            seed_offset: self.seed_offset,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run the convergence grid and write trace CSVs plus summary.json.
    Run(ExperimentArgs),
    /// Measure endpoint-rounding residuals and write residual.csv.
    ProbeResidual(ExperimentArgs),
    /// Report the normalized grid span of one scalar stencil.
    GridSpan {
        #[arg(long)]
        compander: CompanderFamily,
        /// Compander strength; defaults to the family's standard value.
        #[arg(long)]
        strength: Option<f64>,
        #[arg(long, conflicts_with = "levels")]
        bits: Option<u32>,
        /// Number of grid levels, for grids that are not a power of two.
        #[arg(long)]
        levels: Option<u32>,
        /// Block scale.
        #[arg(long, default_value_t = 1.0)]
        scale: f64,
        #[arg(long, allow_hyphen_values = true)]
        x: f64,
        #[arg(long, allow_hyphen_values = true)]
        u: f64,
        #[arg(long)]
        mu: f64,
        /// Also append the report as a CSV row.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

#[allow(clippy::too_many_arguments)]
fn grid_span_cmd(
    family: CompanderFamily,
    strength: Option<f64>,
    bits: Option<u32>,
    levels: Option<u32>,
    scale: f64,
    x: f64,
    u: f64,
    mu: f64,
    csv: Option<PathBuf>,
) -> Result<()> {
    let spec = CompanderSpec::new(family, strength.unwrap_or(family.default_strength()), scale)?;
    let (lo, hi) = spec.z_range();
    let grid = match (bits, levels) {
        (_, Some(n)) => GridSpec::with_levels(n, lo, hi)?,
        (Some(b), None) => GridSpec::new(b, lo, hi)?,
        (None, None) => {
            return Err(caqzo::Error::Config("pass --bits or --levels".into()));
        }
    };
    let r = grid_span(x, u, mu, &spec, &grid)?;
    if r.clipped {
        eprintln!("warning: stencil leaves the clip interval; computed on clamped values");
    }
    println!("rho = {}", r.rho);
    println!("regime = {}", r.regime.name());
    println!(
        "phi_prime_bracket = [{}, {}]",
        r.phi_slope_bounds.0, r.phi_slope_bounds.1
    );
    println!("delta = {}", grid.delta);
    if let Some(path) = csv {
        let fresh = !path.exists();
        let file = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)?;
        let mut w = csv::Writer::from_writer(file);
        if fresh {
            w.write_record([
                "compander",
                "strength",
                "levels",
                "scale",
                "x",
                "u",
                "mu",
                "rho",
                "regime",
                "phi_prime_min",
                "phi_prime_max",
                "clipped",
            ])?;
        }
        w.write_record([
            family.name().to_string(),
            spec.strength.to_string(),
            grid.levels.to_string(),
            scale.to_string(),
            x.to_string(),
            u.to_string(),
            mu.to_string(),
            r.rho.to_string(),
            r.regime.name().to_string(),
            r.phi_slope_bounds.0.to_string(),
            r.phi_slope_bounds.1.to_string(),
            r.clipped.to_string(),
        ])?;
        w.flush()?;
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run(args) => {
            let cfg = harness::load_config(&args.config)?;
            let outcome = harness::run_experiment(&cfg, &args.options())?;
            for cell in &outcome.summary.cells {
                let gaps: Vec<String> = cell
                    .mean_gap_ratio
                    .iter()
                    .map(|(m, g)| format!("{m}={g:.4}"))
                    .collect();
                println!(
                    "{} {} {}bit: {}",
                    cell.objective,
                    cell.compander,
                    cell.bits,
                    gaps.join(" ")
                );
            }
            for f in &outcome.files {
                println!("wrote {}", f.display());
            }
        }
        Command::ProbeResidual(args) => {
            let cfg = harness::load_config(&args.config)?;
            let (probes, path) = harness::probe_experiment(&cfg, &args.options())?;
            println!("{} probe rows", probes.len());
            println!("wrote {}", path.display());
        }
        Command::GridSpan {
            compander,
            strength,
            bits,
            levels,
            scale,
            x,
            u,
            mu,
            csv,
        } => grid_span_cmd(compander, strength, bits, levels, scale, x, u, mu, csv)?,
    }
    Ok(())
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
