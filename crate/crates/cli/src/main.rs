use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use tilt_cli::acceptance;
use tilt_cli::config::{PRESETS, ScenarioConfig, ScenarioKind, load_config, preset};
use tilt_cli::error::CliError;
use tilt_cli::output::{snapshot_path, write_outcome, write_sweep};
use tilt_cli::scenarios::{run_scenario, sweep};

#[derive(Parser)]
#[command(name = "tilt", version, about = "Einstein-Euler on S3 with extreme fluid tilt")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML scenario file
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in scenario, see `tilt presets`
    #[arg(long)]
    preset: Option<String>,
    /// Output directory (overrides output_dir)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; 1 gives bit-reproducible reductions
    #[arg(long)]
    threads: Option<usize>,
    /// Perturbation seed (overrides perturbation.seed)
    #[arg(long)]
    seed: Option<u64>,
    /// Sound speed squared (overrides cs2)
    #[arg(long)]
    cs2: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Homogeneous background construction and checks
    Background(Common),
    /// Euler equations on closed de Sitter
    EulerFlrw(Common),
    /// Coupled Einstein-Euler evolution
    Coupled(Common),
    /// Predicted decay exponents for a sound speed
    Rates(Common),
    /// Any scenario kind, as given by the config
    Run(Common),
    /// Run a template over a grid of sound speeds in parallel
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Comma-separated cs2 values; fractions such as 1/3 are accepted
        #[arg(long, default_value = "")]
        grid: String,
    },
    /// Run the acceptance criteria and print one line each
    Acceptance {
        /// Only these criteria (1-10)
        #[arg(long, value_delimiter = ',')]
        only: Vec<u8>,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Print the resolved configuration as TOML
    ShowConfig(Common),
    /// List the presets
    Presets,
}

fn resolve(c: &Common, expect: Option<ScenarioKind>) -> Result<ScenarioConfig, CliError> {
    let mut cfg = match (&c.config, &c.preset) {
        (Some(p), _) => load_config(p)?,
        (None, Some(name)) => preset(name, None)?,
        (None, None) => match expect {
            Some(ScenarioKind::RatesReport) => preset("rates", None)?,
            _ => return Err(CliError::Config { field: "--config".into(), message: "give --config or --preset".into() }),
        },
    };
    if let Some(x) = c.cs2 {
        cfg.cs2 = x;
    }
    if let Some(s) = c.seed {
        cfg.perturbation.seed = s;
    }
    if let Some(o) = &c.out {
        cfg.output_dir = o.clone();
    }
    if let Some(k) = expect {
        if cfg.scenario != k {
            return Err(CliError::Config {
                field: "scenario".into(),
                message: format!("`{}` does not match the subcommand ({})", cfg.scenario.as_str(), k.as_str()),
            });
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn set_threads(n: Option<usize>) {
    if let Some(n) = n {
        // fails only if a pool already exists, which cannot happen before any work
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

fn parse_grid(s: &str) -> Result<Vec<f64>, CliError> {
    s.split(',')
        .map(str::trim)
        .filter(|x| !x.is_empty())
        .map(|x| {
            let bad = || CliError::Config { field: "--grid".into(), message: format!("cannot parse `{x}`") };
            match x.split_once('/') {
                Some((a, b)) => Ok(a.trim().parse::<f64>().map_err(|_| bad())? / b.trim().parse::<f64>().map_err(|_| bad())?),
                None => x.parse::<f64>().map_err(|_| bad()),
            }
        })
        .collect()
}

fn run(c: &Common, expect: Option<ScenarioKind>) -> Result<ExitCode, CliError> {
    let cfg = resolve(c, expect)?;
    set_threads(c.threads);
    let start = Instant::now();
    let out = run_scenario(&cfg)?;
    let manifest = write_outcome(&cfg.output_dir, &cfg, &out, start.elapsed().as_secs_f64())?;
    for ch in &out.checks {
        let mark = if !ch.gating { "info" } else if ch.passed { "PASS" } else { "FAIL" };
        if ch.relation == "report" || ch.relation == "error" {
            println!("{mark:>4}  {:<32} {:>12.4e}  {}", ch.name, ch.value, ch.detail);
        } else {
            println!("{mark:>4}  {:<32} {:>12.4e} {} {:.1e}  {}", ch.name, ch.value, ch.relation, ch.threshold, ch.detail);
        }
    }
    println!("artifacts in {}", cfg.output_dir.display());
    if let Some(f) = &out.failure {
        return Err(CliError::Aborted {
            message: f.clone(),
            snapshot: snapshot_path(&cfg.output_dir, &manifest).unwrap_or_else(|| cfg.output_dir.clone()),
        });
    }
    Ok(if manifest.all_passed { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Background(c) => run(c, Some(ScenarioKind::Background)),
        Command::EulerFlrw(c) => run(c, Some(ScenarioKind::EulerFlrw)),
        Command::Coupled(c) => run(c, Some(ScenarioKind::Coupled)),
        Command::Rates(c) => run(c, Some(ScenarioKind::RatesReport)),
        Command::Run(c) => run(c, None),
        Command::Sweep { common, grid } => (|| {
            let cfg = resolve(common, None)?;
            let grid = parse_grid(grid)?;
            set_threads(common.threads);
            let start = Instant::now();
            let rows = sweep(&cfg, &grid);
            let m = write_sweep(&cfg.output_dir, &cfg, &grid, &rows, start.elapsed().as_secs_f64())?;
            for r in &rows {
                println!(
                    "cs2 {:<8.4} {:<24} tilt target {:>8.4} fitted {:>8} {}",
                    r.cs2,
                    r.regime,
                    r.tilt_rate_target,
                    r.tilt_rate_fitted.map(|x| format!("{x:.4}")).unwrap_or("-".into()),
                    r.error.as_deref().unwrap_or("")
                );
            }
            if !m.failed_cells.is_empty() {
                eprintln!("failed cells: {:?}", m.failed_cells);
                return Ok(ExitCode::from(1));
            }
            Ok(ExitCode::SUCCESS)
        })(),
        Command::Acceptance { only, threads } => {
            set_threads(*threads);
            let ids: Vec<u8> = if only.is_empty() { (1..=10).collect() } else { only.clone() };
            let mut ok = true;
            for id in ids {
                let line = acceptance::run_criterion(id);
                println!("{line}");
                ok &= line.passed();
            }
            Ok(if ok { ExitCode::SUCCESS } else { ExitCode::from(1) })
        }
        Command::ShowConfig(c) => resolve(c, None).and_then(|cfg| {
            print!("{}", toml::to_string(&cfg).map_err(|e| CliError::Parse(e.to_string()))?);
            Ok(ExitCode::SUCCESS)
        }),
        Command::Presets => {
            for p in PRESETS {
                println!("{p}");
            }
            Ok(ExitCode::SUCCESS)
        }
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
