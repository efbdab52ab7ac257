use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use infomarket::analysis::{eigenvalues, jacobian};
use infomarket::beliefs::{Family, Label};
use infomarket::config::Config;
use infomarket::equilibrium::{tatonnement, write_trace_csv, EquilibriumResult};
use infomarket::experiments::{self, FieldPreset};

/// Exit status when tatonnement stops at the iteration cap.
const EXIT_NOT_CONVERGED: u8 = 2;

#[derive(Parser)]
#[command(
    name = "infomarket",
    version,
    about = "Stochastic market equilibrium under asymmetric beliefs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory for CSV and JSON files.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seed of the reference sample.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    nu_max: Option<usize>,
    #[arg(long, global = true)]
    rho: Option<f64>,
    #[arg(long, global = true)]
    epsilon: Option<f64>,
    /// Points per axis of the probability grid.
    #[arg(long, global = true)]
    grid: Option<usize>,
    /// Print the result as JSON.
    #[arg(long, global = true)]
    json: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one market by tatonnement.
    Solve,
    /// Sweep labeled distributions or the two-outcome probability grid.
    Sweep {
        #[arg(value_enum)]
        kind: SweepKind,
    },
    /// Iterations and eigenvalue ratios per labeled distribution.
    Stability,
    /// Per-outcome welfare of the symmetric and an asymmetric equilibrium.
    Welfare {
        /// Producer distribution label; overrides experiment.comparison.
        #[arg(long)]
        comparison: Option<String>,
    },
    /// Price-dynamics vector field for the two-outcome presets.
    Field,
    /// Calibrated parameters and moments of the labeled distributions.
    Distributions,
}

#[derive(Clone, Copy, ValueEnum)]
enum SweepKind {
    MeanFamily,
    VarianceFamily,
    Grid2d,
}

impl Common {
    fn load(&self, fallback: fn() -> Config) -> anyhow::Result<Config> {
        let mut config = match &self.config {
            Some(path) => Config::load(path)?,
            None => fallback(),
        };
        if let Some(seed) = self.seed {
            config.sampling.seed = seed;
        }
        if let Some(n) = self.nu_max {
            config.solver.nu_max = n;
        }
        if let Some(rho) = self.rho {
            config.solver.rho = rho;
        }
        if let Some(eps) = self.epsilon {
            config.solver.epsilon = eps;
        }
        if let Some(grid) = self.grid {
            config.experiment.grid = grid;
        }
        Ok(config)
    }

    fn out_dir(&self) -> anyhow::Result<PathBuf> {
        let dir = self.out.clone().unwrap_or_else(|| PathBuf::from("."));
        std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(dir)
    }
}

#[derive(Serialize)]
struct SolveReport<'a> {
    prices: &'a [f64],
    day_ahead_price: f64,
    p: f64,
    d: f64,
    r: &'a [f64],
    l: &'a [f64],
    iterations: usize,
    converged: bool,
    residual: f64,
}

impl<'a> SolveReport<'a> {
    fn new(res: &'a EquilibriumResult) -> Self {
        Self {
            prices: &res.prices,
            day_ahead_price: res.day_ahead_price(),
            p: res.dispatch.p,
            d: res.dispatch.d,
            r: &res.dispatch.r,
            l: &res.dispatch.l,
            iterations: res.iterations,
            converged: res.converged,
            residual: res.residual,
        }
    }
}

#[derive(Serialize)]
struct SpectrumRow {
    index: usize,
    eigenvalue: f64,
}

fn solve(common: &Common) -> anyhow::Result<ExitCode> {
    let path = common
        .config
        .as_ref()
        .context("solve needs --config <path>")?;
    let config = common
        .load(Config::two_outcome)
        .with_context(|| format!("loading {}", path.display()))?;
    let instance = config.instance()?;
    let res = tatonnement(&instance, &config.solver_config()?)?;
    let report = SolveReport::new(&res);

    if common.json {
        println!("{}", serde_json::to_string_pretty(&report)?);
    } else {
        let fmt = |v: &[f64]| {
            v.iter()
                .map(|x| format!("{x:.6}"))
                .collect::<Vec<_>>()
                .join(", ")
        };
        if instance.n_outcomes() <= 10 {
            println!("prices          [{}]", fmt(&res.prices));
        }
        println!("day-ahead price {:.6}", report.day_ahead_price);
        println!("p {:.6}  d {:.6}", res.dispatch.p, res.dispatch.d);
        if instance.n_outcomes() <= 10 {
            println!("r               [{}]", fmt(&res.dispatch.r));
            println!("l               [{}]", fmt(&res.dispatch.l));
        }
        println!("iterations      {}", res.iterations);
        println!("residual        {:e}", res.residual);
        println!("converged       {}", res.converged);
    }

    if common.out.is_some() {
        let dir = common.out_dir()?;
        std::fs::write(
            dir.join("result.json"),
            serde_json::to_string_pretty(&report)?,
        )?;
        if let Some(trace) = &res.trace {
            write_trace_csv(trace, std::fs::File::create(dir.join("trace.csv"))?)?;
        }
        let spectrum: Vec<_> = eigenvalues(&jacobian(&instance))?
            .into_iter()
            .enumerate()
            .map(|(index, eigenvalue)| SpectrumRow { index, eigenvalue })
            .collect();
        experiments::write_csv(&dir.join("spectrum.csv"), &spectrum)?;
    }

    if res.converged {
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!(
            "not converged after {} iterations (residual {:e})",
            res.iterations, res.residual
        );
        Ok(ExitCode::from(EXIT_NOT_CONVERGED))
    }
}

fn print_or_json<T: Serialize>(common: &Common, rows: &[T], file: &Path) -> anyhow::Result<()> {
    if common.json {
        println!("{}", serde_json::to_string_pretty(rows)?);
    } else {
        println!("wrote {} rows to {}", rows.len(), file.display());
    }
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    let common = &cli.common;
    match cli.command {
        Command::Solve => return solve(common),
        Command::Sweep { kind } => {
            let dir = common.out_dir()?;
            match kind {
                SweepKind::MeanFamily | SweepKind::VarianceFamily => {
                    let (family, name) = match kind {
                        SweepKind::MeanFamily => (Family::Mean, "mean_family.csv"),
                        _ => (Family::Variance, "variance_family.csv"),
                    };
                    let rows = experiments::family_sweep(&common.load(Config::sampled)?, family)?;
                    let file = dir.join(name);
                    experiments::write_csv(&file, &rows)?;
                    print_or_json(common, &rows, &file)?;
                }
                SweepKind::Grid2d => {
                    let rows = experiments::grid2d(&common.load(Config::two_outcome)?)?;
                    let file = dir.join("grid2d.csv");
                    experiments::write_csv(&file, &rows)?;
                    print_or_json(common, &rows, &file)?;
                }
            }
        }
        Command::Stability => {
            let dir = common.out_dir()?;
            let rows = experiments::stability_table(&common.load(Config::sampled)?)?;
            let file = dir.join("stability.csv");
            experiments::write_csv(&file, &rows)?;
            if common.json {
                println!("{}", serde_json::to_string_pretty(&rows)?);
            } else {
                print!("{}", experiments::stability_summary(&rows));
            }
        }
        Command::Welfare { comparison } => {
            let dir = common.out_dir()?;
            let mut config = common.load(Config::sampled)?;
            if let Some(c) = comparison {
                config.experiment.comparison = c;
            }
            let label: Label = config.comparison()?;
            let w = experiments::welfare_comparison(&config, label)?;
            let file = dir.join("welfare.csv");
            experiments::write_csv(&file, &w.rows)?;
            if common.json {
                println!("{}", serde_json::to_string_pretty(&w)?);
            } else {
                println!("comparison          {}", w.comparison);
                println!(
                    "expected welfare    reference {:.8}  asymmetric {:.8}",
                    w.expected_reference, w.expected_asymmetric
                );
                println!("expected loss       {:.8e}", w.expected_loss);
                println!("wrote {} rows to {}", w.rows.len(), file.display());
            }
        }
        Command::Field => {
            let dir = common.out_dir()?;
            let config = common.load(Config::two_outcome)?;
            let mut summaries = Vec::new();
            for preset in FieldPreset::ALL {
                let run = experiments::field(&config, preset)?;
                experiments::write_csv(
                    &dir.join(format!("field_{}.csv", preset.name())),
                    &run.samples,
                )?;
                experiments::write_csv(
                    &dir.join(format!("field_{}_trajectory.csv", preset.name())),
                    &run.trajectory,
                )?;
                summaries.push(run.summary);
            }
            experiments::write_csv(&dir.join("field_summary.csv"), &summaries)?;
            if common.json {
                println!("{}", serde_json::to_string_pretty(&summaries)?);
            } else {
                for s in &summaries {
                    println!(
                        "{:<10} rest ({:.4}, {:.4})  speed_l {:.4}  speed_h {:.4}  ratio {:.3}",
                        s.preset, s.lambda_l, s.lambda_h, s.speed_l, s.speed_h, s.speed_ratio
                    );
                }
            }
        }
        Command::Distributions => {
            let dir = common.out_dir()?;
            let rows = experiments::distributions(&common.load(Config::sampled)?)?;
            let file = dir.join("distributions.csv");
            experiments::write_csv(&file, &rows)?;
            print_or_json(common, &rows, &file)?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
