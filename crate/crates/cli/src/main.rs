//! `cellfree`: runs the named simulation scenarios and writes CSV tables.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use cellfree_core::closed_form::sinr_coeffs_cellfree;
use cellfree_core::config::{apply_env_overrides, load_scenario, SystemConfig};
use cellfree_core::exec::Execution;
use cellfree_core::experiments::{run_scenario, validate, Environment, Scenario, ScenarioName, ScenarioReport};
use cellfree_core::power_control::{joint_optimize, max_uniform_target, TargetSpec};
use cellfree_core::Error;
use clap::{Args, Parser, Subcommand};

const EXIT_CHECK_FAILED: u8 = 1;
const EXIT_USAGE: u8 = 2;

#[derive(Debug, Parser)]
#[command(name = "cellfree", version, about = "Wirelessly powered cell-free IoT simulator")]
struct Cli {
    #[command(flatten)]
    common: Common,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Scenario file (TOML). Absent keys take the full-scale defaults.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Master seed; overrides the file and the CELLFREE_SEED variable.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output root; each scenario writes into `<out-dir>/<scenario>/`.
    #[arg(long, global = true, default_value = "out", value_name = "DIR")]
    out_dir: PathBuf,

    /// Number of large-scale fading draws.
    #[arg(long, global = true)]
    draws: Option<usize>,

    /// Small-scale realizations per draw.
    #[arg(long, global = true)]
    mc: Option<usize>,

    /// Orthonormalize the pilot book (needs tau >= K).
    #[arg(long, global = true)]
    orthogonal_pilots: bool,

    /// Run on a single thread.
    #[arg(long, global = true)]
    sequential: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one named scenario.
    Run {
        scenario: String,
        /// Target SINR (linear) for the optimization scenarios.
        #[arg(long)]
        delta: Option<f64>,
    },
    /// Bound, SINR and covariance checks; defaults to the desk profile.
    Validate,
    /// Single joint power-control solve on one large-scale draw.
    Optimize {
        /// Target SINR (linear), common to all sensors.
        #[arg(long)]
        delta: f64,
        /// Index of the large-scale draw to solve.
        #[arg(long, default_value_t = 0)]
        draw: usize,
        /// Also write the fading, topology and pilot book of the draw.
        #[arg(long)]
        dump: bool,
    },
    /// List the available scenarios.
    ListScenarios,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(EXIT_CHECK_FAILED),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

/// Domain failures count as failed checks; everything else is a usage error.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::InfeasibleTarget { .. } | Error::DegenerateSystem { .. } | Error::Consistency(_) | Error::Numerical(_) | Error::UnservableSensor(_) => {
            EXIT_CHECK_FAILED
        }
        _ => EXIT_USAGE,
    }
}

fn dispatch(cli: &Cli) -> Result<bool, Error> {
    let c = &cli.common;
    match &cli.command {
        Command::ListScenarios => {
            for name in ScenarioName::ALL {
                println!("{:<18} {}", name.as_str(), name.description());
            }
            Ok(true)
        }
        Command::Run { scenario, delta } => {
            let name: ScenarioName = scenario.parse()?;
            let mut sc = Scenario::new(name, load_config(c, SystemConfig::table_one())?);
            if let Some(d) = c.draws {
                sc.draws = d;
            }
            if let Some(m) = c.mc {
                sc.mc_realizations = m;
            }
            if let Some(d) = delta {
                sc.target_sinr = *d;
            }
            sc.execution = execution(c);
            let report = run_scenario(&sc, &c.out_dir)?;
            print_report(&report);
            Ok(report.passed())
        }
        Command::Validate => {
            let cfg = load_config(c, SystemConfig::desk())?;
            let reports = validate(&cfg, c.draws.unwrap_or(5), c.mc.unwrap_or(500), cfg.seed, execution(c), &c.out_dir)?;
            reports.iter().for_each(print_report);
            let passed = reports.iter().all(ScenarioReport::passed);
            println!("validate: {}", if passed { "PASS" } else { "FAIL" });
            Ok(passed)
        }
        Command::Optimize { delta, draw, dump } => optimize(c, *delta, *draw, *dump),
    }
}

fn load_config(c: &Common, default: SystemConfig) -> Result<SystemConfig, Error> {
    let cfg = match &c.config {
        Some(path) => load_scenario(path)?,
        None => default,
    };
    let cfg = apply_env_overrides(cfg)?;
    cfg.with(|p| {
        if let Some(s) = c.seed {
            p.seed = s;
        }
        p.orthogonal_pilots |= c.orthogonal_pilots;
    })
}

fn execution(c: &Common) -> Execution {
    if c.sequential {
        Execution::Sequential
    } else {
        Execution::Parallel
    }
}

fn print_report(r: &ScenarioReport) {
    println!("[{}]", r.name);
    for (k, v) in &r.summary {
        println!("  {k} = {v}");
    }
    for check in &r.checks {
        println!("  {check}");
    }
    for f in &r.files {
        println!("  wrote {}", f.display());
    }
}

fn optimize(c: &Common, delta: f64, draw: usize, dump: bool) -> Result<bool, Error> {
    let cfg = load_config(c, SystemConfig::table_one())?;
    let env = Environment::new(&cfg, cfg.seed)?;
    let d = env.draw(draw)?;
    let coeffs = sinr_coeffs_cellfree(&d.cache, d.beta(), cfg.antennas_per_ap, cfg.rho_u)?;
    let dir = c.out_dir.join("optimize");
    create_dir(&dir)?;
    if dump {
        d.fading.write_csv(&dir.join("fading.csv"))?;
        d.fading.write_topology_csv(&dir.join("topology.csv"))?;
        env.pilots.write_binary(&dir.join("pilots.bin"))?;
    }
    let targets = TargetSpec::uniform(cfg.num_sensors, delta, &cfg);
    let sol = match joint_optimize(&coeffs, &d.cache.gamma, &targets, &cfg) {
        Ok(s) => s,
        Err(e @ Error::InfeasibleTarget { .. }) => {
            if let Some(ceiling) = max_uniform_target(&coeffs) {
                println!("largest reachable uniform target on draw {draw}: {ceiling:.4}");
            }
            return Err(e);
        }
        Err(e) => return Err(e),
    };
    sol.write_csv(&dir, "ledger")?;
    println!("draw {draw}, target SINR {delta}");
    println!("lambda* = {}", sol.downlink.lambda_star);
    println!("energies in noise power x symbol durations");
    println!("Xi_tr = {}", sol.ledger.xi_tr);
    println!("E0 = {}", targets.e0);
    println!("{:>4} {:>14} {:>14} {:>14} {:>14}", "k", "xi*", "E_up", "E_harv_lb", "rate_bps");
    for k in 0..cfg.num_sensors {
        println!(
            "{k:>4} {:>14.6e} {:>14.6e} {:>14.6e} {:>14.6e}",
            sol.uplink.xi_star[k], sol.ledger.e_up[k], sol.ledger.e_harv[k], sol.ledger.rate[k]
        );
    }
    println!("wrote {}", dir.display());
    Ok(true)
}

fn create_dir(dir: &Path) -> Result<(), Error> {
    std::fs::create_dir_all(dir).map_err(Error::from)
}
