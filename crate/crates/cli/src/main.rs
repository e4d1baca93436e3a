use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lorbundle::config::{load_config_file, ConfigSource};
use lorbundle::presets::Params;

mod commands;

/// Lorentzian circle-bundle metrics: curvature checks, Ricci-flat solver,
/// geodesic probes and holonomy.
///
/// Every run writes summary.json and CSV tables to --out. The exit status is 0
/// when all tolerance checks pass, 2 when one fails (the failures are listed on
/// stderr) and 1 on bad input.
#[derive(Parser, Debug)]
#[command(name = "lorbundle", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Closed-form connection and curvature against the brute-force pipeline.
    CheckCurvature(Common),
    /// Solve for f_B on a flat torus base and check Ric = 0.
    RicciFlat(Common),
    /// Integrate geodesics and monitor energy, u(t) and the structured integrator.
    Geodesic(Common),
    /// Long-horizon completeness probe.
    Probe(Common),
    /// Parallel transport around loops.
    Holonomy(HolonomyArgs),
    /// Sample the holonomy algebra and classify it.
    Classify(Common),
    /// Certify the type-4 holonomy conditions.
    VerifyType4(Common),
    /// Compare a preset against its expected-outcome table.
    Report(Common),
    /// List the presets with their parameters.
    Presets,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Named preset (see `lorbundle presets`).
    #[arg(long, conflicts_with = "config")]
    pub preset: Option<String>,
    /// JSON configuration file (preset form or raw bundle description).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Time horizon.
    #[arg(long = "T")]
    pub t: Option<f64>,
    /// Number of geodesics (geodesic, probe) or transport paths (verify-type4).
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Grid points per torus axis for the Poisson solver.
    #[arg(long)]
    pub resolution: Option<usize>,
    /// Number of sample points.
    #[arg(long)]
    pub points: Option<usize>,
    /// Preset parameter override, key=value (repeatable).
    #[arg(long = "param", value_name = "KEY=VALUE")]
    pub params: Vec<String>,
}

#[derive(Args, Debug, Clone)]
struct HolonomyArgs {
    #[command(flatten)]
    common: Common,
    /// Loop: u-circle, torus-cycle(c), rectangle(c1,c2,side) or waypoints
    /// "p1; p2; ..." (repeatable). Defaults to the u-circle, every torus cycle
    /// and a rectangle in the first base plane.
    #[arg(long = "loop", value_name = "SPEC")]
    loops: Vec<String>,
}

impl Common {
    fn source(&self) -> anyhow::Result<ConfigSource> {
        let mut overrides = Params::new();
        for p in &self.params {
            overrides.insert_pair(p)?;
        }
        let src = match (&self.preset, &self.config) {
            (Some(name), None) => {
                lorbundle::presets::descriptor(name)?;
                ConfigSource::preset(name, Params::new())
            }
            (None, Some(path)) => load_config_file(path)?,
            _ => anyhow::bail!("exactly one of --preset or --config is required"),
        };
        Ok(src.with_overrides(&overrides)?)
    }
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    let (common, outcome) = match cli.command {
        Command::Presets => {
            print!("{}", commands::preset_listing());
            return Ok(true);
        }
        Command::CheckCurvature(c) => (c.clone(), commands::check_curvature(&c.source()?, &c)?),
        Command::RicciFlat(c) => (c.clone(), commands::ricci_flat(&c.source()?, &c)?),
        Command::Geodesic(c) => (c.clone(), commands::geodesic(&c.source()?, &c)?),
        Command::Probe(c) => (c.clone(), commands::probe(&c.source()?, &c)?),
        Command::Holonomy(h) => (
            h.common.clone(),
            commands::holonomy(&h.common.source()?, &h.common, &h.loops)?,
        ),
        Command::Classify(c) => (c.clone(), commands::classify(&c.source()?, &c)?),
        Command::VerifyType4(c) => (c.clone(), commands::verify_type4(&c.source()?, &c)?),
        Command::Report(c) => (c.clone(), commands::report(&c.source()?, &c)?),
    };
    let passed = outcome.checks.all_passed();
    let files = outcome.write(&common.out)?;
    println!(
        "{}: {} checks, {} failed; wrote {} to {}",
        outcome.command,
        outcome.checks.0.len(),
        outcome.checks.failures().len(),
        files.join(", "),
        common.out.display()
    );
    if !passed {
        eprint!("{}", outcome.checks.itemize_failures());
    }
    Ok(passed)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {:#}", e);
            ExitCode::from(1)
        }
    }
}
