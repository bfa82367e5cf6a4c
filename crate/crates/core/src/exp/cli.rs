//! Command-line front end. [`run`] returns the process exit status.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use super::config::{Profile, SystemConfig};
use super::records::{self, RunRecord, CURVE_COLUMNS, STEP_COLUMNS, SWEEP_COLUMNS, SCHEMA_VERSION};
use super::runner::{
    build_scenario, evaluate_scheme, mean_by_point, run_sweep, train_scheme, PolicyCache, Scheme, SweepAxis, SweepSpec,
};
use super::verify::{verify_bound, BoundSuite};
use crate::agents::Agent;
use crate::error::{Error, Result};
use crate::oracle::{exhaustive_solve, OracleCertificate};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_INFEASIBLE: i32 = 3;

/// Tiny oracle instance shipped with the binary.
pub const TINY_FIXTURE: &str = include_str!("../../fixtures/tiny.toml");

#[derive(Debug, Parser)]
#[command(name = "risfl", version, about = "Secure RIS-assisted federated learning experiments")]
pub struct Cli {
    /// TOML overrides applied on top of the profile.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Profile::Desk)]
    pub profile: Profile,
    /// Overrides `run.seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true, default_value = "out")]
    pub out_dir: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ExportFormat {
    Csv,
    Json,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a scheme and write its curve, steps, checkpoint and manifest.
    Train {
        #[arg(long, value_enum, default_value_t = Scheme::Proposed)]
        scheme: Scheme,
        /// Overrides `run.episodes`.
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Evaluate a saved checkpoint with the greedy policy.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Overrides `run.eval_steps`.
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Solve a tiny instance exhaustively and write the certificate.
    Oracle,
    /// Sweep one axis over several values, seeds and schemes.
    Sweep {
        #[arg(long, value_enum)]
        axis: SweepAxis,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "0")]
        seeds: Vec<u64>,
        #[arg(long, value_enum, value_delimiter = ',', default_value = "proposed,fba,rds,random-phase")]
        schemes: Vec<Scheme>,
        /// Retrain at every value even where the base policy transfers.
        #[arg(long)]
        no_reuse: bool,
    },
    /// Check the convergence bound against toy FedSGD runs.
    VerifyBound {
        #[arg(long, default_value_t = 50)]
        seeds: u64,
        #[arg(long, default_value_t = 100)]
        rounds: u32,
    },
    /// Convert a run manifest to a learning-curve CSV or print it as JSON.
    Export {
        #[arg(long)]
        run: PathBuf,
        #[arg(long, value_enum, default_value_t = ExportFormat::Csv)]
        format: ExportFormat,
    },
}

fn load(cli: &Cli, base: SystemConfig) -> Result<SystemConfig> {
    let mut cfg = match &cli.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::config("--config", format!("{}: {e}", p.display())))?;
            SystemConfig::from_toml_str(&text, &base)?
        }
        None => base,
    };
    if let Some(s) = cli.seed {
        cfg.run.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config { .. } | Error::Toml(_) => EXIT_CONFIG,
        _ => EXIT_FAILURE,
    }
}

/// Parses `argv` (including the program name) and runs the command.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn execute(cli: &Cli) -> Result<i32> {
    match &cli.command {
        Command::Train { scheme, episodes } => {
            let mut cfg = load(cli, cli.profile.config())?;
            if let Some(e) = episodes {
                cfg.run.episodes = *e;
            }
            train(cli, &cfg, *scheme)
        }
        Command::Eval { checkpoint, steps } => eval(cli, checkpoint, *steps),
        Command::Oracle => {
            let base = match &cli.config {
                Some(_) => Profile::Tiny.config(),
                None => SystemConfig::from_toml_str(TINY_FIXTURE, &Profile::Tiny.config())?,
            };
            let cfg = load(cli, base)?;
            oracle(cli, &cfg)
        }
        Command::Sweep {
            axis,
            values,
            seeds,
            schemes,
            no_reuse,
        } => {
            let cfg = load(cli, cli.profile.config())?;
            let spec = SweepSpec {
                axis: *axis,
                values: values.clone(),
                seeds: seeds.clone(),
                schemes: schemes.clone(),
                reuse_policies: !no_reuse,
            };
            let rows = run_sweep(&cfg, &spec, &mut PolicyCache::default())?;
            fs::create_dir_all(&cli.out_dir)?;
            let path = cli.out_dir.join(format!("sweep_{}.csv", axis.name()));
            records::write_csv_with_header(&path, SWEEP_COLUMNS, &rows)?;
            for (v, s, l) in mean_by_point(&rows) {
                println!("{} = {v}\t{s}\tmean latency {l:.6} s", axis.name());
            }
            println!("wrote {}", path.display());
            Ok(EXIT_OK)
        }
        Command::VerifyBound { seeds, rounds } => {
            let suite = BoundSuite {
                seeds: *seeds,
                rounds: *rounds,
                ..BoundSuite::default()
            };
            let report = verify_bound(&suite)?;
            for c in &report.cases {
                println!(
                    "seed {}\t|A| = {}\tmeasured {:.6e}\tbound {:.6e}\t{}",
                    c.seed,
                    c.participants,
                    c.measured,
                    c.bound,
                    if c.holds() { "ok" } else { "VIOLATED" }
                );
            }
            println!("{}/{} cases within the bound", report.passed(), report.cases.len());
            Ok(if report.all_hold() { EXIT_OK } else { EXIT_FAILURE })
        }
        Command::Export { run, format } => {
            let rec = RunRecord::read(run)?;
            match format {
                ExportFormat::Json => println!("{}", serde_json::to_string_pretty(&rec)?),
                ExportFormat::Csv => {
                    fs::create_dir_all(&cli.out_dir)?;
                    let rows: Vec<records::CurveRow> = rec
                        .episode_rewards
                        .iter()
                        .enumerate()
                        .map(|(episode, &mean_reward)| records::CurveRow {
                            schema_version: SCHEMA_VERSION,
                            scheme: rec.scheme.to_string(),
                            seed: rec.seed,
                            episode,
                            mean_reward,
                            mean_latency: f64::NAN,
                        })
                        .collect();
                    let path = cli.out_dir.join("export_curve.csv");
                    records::write_csv_with_header(&path, CURVE_COLUMNS, &rows)?;
                    println!("wrote {}", path.display());
                }
            }
            Ok(EXIT_OK)
        }
    }
}

fn train(cli: &Cli, cfg: &SystemConfig, scheme: Scheme) -> Result<i32> {
    let seed = cfg.run.seed;
    let run = train_scheme(cfg, scheme, seed, cfg.run.episodes)?;
    let dir = cli.out_dir.join(format!("{scheme}_seed{seed}"));
    fs::create_dir_all(&dir)?;
    records::write_csv_with_header(&dir.join("curve.csv"), CURVE_COLUMNS, &run.curve_rows())?;
    records::write_csv_with_header(&dir.join("steps.csv"), STEP_COLUMNS, &run.steps)?;
    let checkpoint = match &run.agent {
        Some(a) => {
            let p = dir.join("agent.ckpt");
            a.write_checkpoint(&mut std::io::BufWriter::new(fs::File::create(&p)?))?;
            Some(p)
        }
        None => None,
    };
    let rec = RunRecord {
        schema_version: SCHEMA_VERSION,
        config_hash: cfg.hash(),
        seed,
        scheme,
        episodes: run.outcome.episode_rewards.len(),
        episode_rewards: run.outcome.episode_rewards.clone(),
        wall_clock_s: run.wall_clock_s,
        checkpoint,
        config: cfg.clone(),
    };
    rec.write(&dir.join("manifest.json"))?;
    match run.outcome.episode_rewards.last() {
        Some(r) => println!("{scheme} seed {seed}: {} episodes, final mean reward {r:.6}", rec.episodes),
        None => println!("{scheme} seed {seed}: 0 episodes"),
    }
    println!("wrote {}", dir.display());
    Ok(EXIT_OK)
}

fn eval(cli: &Cli, checkpoint: &Path, steps: Option<usize>) -> Result<i32> {
    let manifest = checkpoint.with_file_name("manifest.json");
    let (cfg, scheme) = if manifest.exists() {
        let rec = RunRecord::read(&manifest)?;
        let mut cfg = rec.config;
        if let Some(s) = cli.seed {
            cfg.run.seed = s;
        }
        (cfg, rec.scheme)
    } else {
        (load(cli, cli.profile.config())?, Scheme::Proposed)
    };
    let file = fs::File::open(checkpoint)?;
    let agent = Agent::read_checkpoint(&mut std::io::BufReader::new(file), cfg.agent.clone())?;
    let s = evaluate_scheme(&cfg, scheme, Some(&agent), cfg.run.seed, steps.unwrap_or(cfg.run.eval_steps))?;
    println!("{}", serde_json::to_string_pretty(&s)?);
    Ok(EXIT_OK)
}

fn oracle(cli: &Cli, cfg: &SystemConfig) -> Result<i32> {
    let scenario = build_scenario(cfg, cfg.run.seed)?;
    let sol = exhaustive_solve(&scenario.instance, &cfg.oracle)?;
    let cert = OracleCertificate::new(&scenario.instance, &cfg.oracle, sol.as_ref())?;
    fs::create_dir_all(&cli.out_dir)?;
    let path = cli.out_dir.join("oracle_certificate.json");
    fs::write(&path, serde_json::to_string_pretty(&cert)?)?;
    match sol {
        Some(s) => {
            println!("optimum latency {:.9} s", s.latency);
            println!("selection {:?}", s.decision.selection.x);
            println!("shares {:?}", s.decision.alloc.shares);
            println!("phases {:?}", s.decision.ris.phases());
            println!("wrote {}", path.display());
            Ok(EXIT_OK)
        }
        None => {
            println!("infeasible: no grid point satisfies the constraints");
            println!("wrote {}", path.display());
            Ok(EXIT_INFEASIBLE)
        }
    }
}
