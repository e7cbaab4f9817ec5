use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use chargeprice::bilevel::CoupledProblem;
use chargeprice::grid::load_grid;
use chargeprice::scenario::{
    self, comparison_table, cost_sweep_tables, demand_sweep_tables, forecast_table, write_json,
    ForecastSpec, Realization, RunConfig, VerifyOptions,
};
use chargeprice::traffic::load_traffic;
use chargeprice::{Error, Result};

/// Locational pricing of EV charging stations.
#[derive(Debug, Parser)]
#[command(name = "chargeprice", version)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Traffic network file (JSON).
    #[arg(long, global = true, env = "CHARGEPRICE_TRAFFIC")]
    traffic: Option<PathBuf>,
    /// Distribution grid file (JSON).
    #[arg(long, global = true, env = "CHARGEPRICE_GRID")]
    grid: Option<PathBuf>,
    /// Per-station price bounds `lo,hi`; defaults to `0,2*max cost`.
    #[arg(long, global = true, env = "CHARGEPRICE_LAMBDA_BOX", value_parser = parse_box, allow_hyphen_values = true)]
    lambda_box: Option<(f64, f64)>,
    #[arg(long, global = true, env = "CHARGEPRICE_SEED", default_value_t = 0)]
    seed: u64,
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true, env = "CHARGEPRICE_WORKERS", default_value_t = 0)]
    workers: usize,
    /// Output directory, created if missing.
    #[arg(long, global = true, env = "CHARGEPRICE_OUT", default_value = ".")]
    out: PathBuf,
    /// Largest scaled KKT residual accepted by `verify`.
    #[arg(
        long,
        global = true,
        env = "CHARGEPRICE_TOL_KKT",
        default_value_t = 1e-6
    )]
    tol_kkt: f64,
    /// Slack below which a constraint counts as active.
    #[arg(
        long,
        global = true,
        env = "CHARGEPRICE_TOL_ACTIVE",
        default_value_t = 1e-7
    )]
    tol_active: f64,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Optimal station prices; writes result.json.
    Solve,
    /// Critical-region partition of the price box; writes partition.json.
    Regions,
    /// Re-prices the instance for each O-D demand level.
    SweepDemand {
        /// Comma-separated demand levels applied to every nonzero O-D pair.
        #[arg(long, value_delimiter = ',', required = true)]
        levels: Vec<f64>,
    },
    /// Re-prices the instance for each marginal cost of one generator.
    SweepCost {
        #[arg(long)]
        generator: String,
        #[arg(
            long,
            value_delimiter = ',',
            required = true,
            allow_hyphen_values = true
        )]
        costs: Vec<f64>,
    },
    /// Cost deviation under integer demand forecasts around the truth.
    ForecastMc {
        #[arg(long)]
        truth: f64,
        /// Forecast half-width in percent.
        #[arg(long, default_value_t = 5.0)]
        deviation: f64,
        #[arg(long, default_value_t = 30)]
        samples: usize,
        /// Compare planned costs instead of fixing the forecast prices.
        #[arg(long)]
        full_resolve: bool,
    },
    /// Bilevel pricing against the cheapest-station baseline.
    Baseline,
    /// Runs every oracle check; writes verify.json.
    Verify {
        /// Uniform price samples for the demand-function checks.
        #[arg(long, default_value_t = 200)]
        samples: usize,
    },
}

fn parse_box(s: &str) -> std::result::Result<(f64, f64), String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 2 {
        return Err("expected `lo,hi`".into());
    }
    let lo: f64 = parts[0].parse().map_err(|e| format!("lower bound: {e}"))?;
    let hi: f64 = parts[1].parse().map_err(|e| format!("upper bound: {e}"))?;
    Ok((lo, hi))
}

fn load_problem(common: &Common) -> Result<CoupledProblem> {
    let missing = |flag: &str| Error::InvalidInput(format!("--{flag} is required"));
    let traffic = load_traffic(
        common
            .traffic
            .as_deref()
            .ok_or_else(|| missing("traffic"))?,
    )?;
    let grid = load_grid(common.grid.as_deref().ok_or_else(|| missing("grid"))?)?;
    CoupledProblem::new(traffic, grid)
}

fn out_path(dir: &Path, name: &str) -> PathBuf {
    dir.join(name)
}

fn run(cli: Cli) -> Result<()> {
    let c = &cli.common;
    let cfg = RunConfig {
        lambda_box: c.lambda_box,
        seed: c.seed,
        workers: c.workers,
        tol_kkt: c.tol_kkt,
        tol_active: c.tol_active,
    };
    cfg.validate()?;
    let problem = load_problem(c)?;
    std::fs::create_dir_all(&c.out).map_err(|source| Error::Io {
        path: c.out.clone(),
        source,
    })?;
    let out = c.out.as_path();
    match cli.command {
        Command::Solve => {
            let report = scenario::run_solve(&problem, &cfg)?;
            write_json(&out_path(out, "result.json"), &report)?;
            for s in &report.stations {
                println!("{} price {} demand {}", s.id, s.price, s.demand);
            }
            println!(
                "idso {} itso {} combined {} regions {}",
                report.costs.idso, report.costs.itso, report.costs.combined, report.stats.regions
            );
        }
        Command::Regions => {
            let part = scenario::run_regions(&problem, &cfg)?;
            write_json(&out_path(out, "partition.json"), &part)?;
            println!("regions {}", part.regions.len());
        }
        Command::SweepDemand { levels } => {
            let rows = scenario::run_demand_sweep(&problem, &levels, &cfg)?;
            let (summary, stations) = demand_sweep_tables(&rows);
            summary.write(&out_path(out, "sweep_demand.csv"))?;
            stations.write(&out_path(out, "sweep_demand_stations.csv"))?;
            for r in &rows {
                println!(
                    "m_w {} {} idso {}",
                    r.m_w,
                    r.status,
                    r.idso_cost.map_or("-".into(), scenario::num)
                );
            }
        }
        Command::SweepCost { generator, costs } => {
            let rows = scenario::run_cost_sweep(&problem, &generator, &costs, &cfg)?;
            let ids: Vec<String> = problem
                .traffic
                .stations
                .iter()
                .map(|s| s.id.clone())
                .collect();
            let (prices, demands) = cost_sweep_tables(&rows, &ids);
            prices.write(&out_path(out, "sweep_cost_prices.csv"))?;
            demands.write(&out_path(out, "sweep_cost_demands.csv"))?;
            for r in &rows {
                println!("cost {} {}", r.cost, r.status);
            }
        }
        Command::ForecastMc {
            truth,
            deviation,
            samples,
            full_resolve,
        } => {
            let spec = ForecastSpec {
                truth,
                deviation_pct: deviation,
                samples,
                realization: if full_resolve {
                    Realization::FullResolve
                } else {
                    Realization::FixedPrice
                },
            };
            let report = scenario::run_forecast_mc(&problem, &spec, &cfg)?;
            forecast_table(&report).write(&out_path(out, "forecast_mc.csv"))?;
            write_json(&out_path(out, "forecast_summary.json"), &report.summary)?;
            let s = &report.summary;
            println!(
                "samples {} failed {} max |deviation| {}% bound violations {}",
                s.samples,
                s.failed,
                s.max_abs_deviation_pct.map_or("-".into(), scenario::num),
                s.bound_violations
            );
        }
        Command::Baseline => {
            let cmp = scenario::run_baseline_compare(&problem, &cfg)?;
            comparison_table(&cmp).write(&out_path(out, "baseline.csv"))?;
            write_json(&out_path(out, "baseline.json"), &cmp)?;
            for r in &cmp.rows {
                println!("{} combined {}", r.method, r.combined_cost);
            }
        }
        Command::Verify { samples } => {
            let vopts = VerifyOptions {
                samples,
                ..VerifyOptions::default()
            };
            let report = scenario::run_verify(&problem, &cfg, &vopts)?;
            write_json(&out_path(out, "verify.json"), &report)?;
            for check in &report.checks {
                println!("{}", check.line());
            }
            if !report.passed() {
                return Err(Error::Verification {
                    failed: report.failed_names(),
                });
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let record = serde_json::json!({
                "error": e.kind(),
                "message": e.to_string(),
                "exit_code": e.exit_code(),
            });
            eprintln!("{record}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
