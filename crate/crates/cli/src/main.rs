//! Experiment runner: simulate sessions, sweep rate-distance curves, test the
//! sync layer, or replay recorded event logs.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use uwqkd_core::channel::WaterType;
use uwqkd_core::config::Mode;
use uwqkd_core::decoy::{cutoff_distance, rate_vs_distance, SweepSpec};
use uwqkd_core::io;
use uwqkd_core::session::{run_round, run_simulation, run_sync_test};
use uwqkd_core::sync::TagParams;
use uwqkd_core::ExperimentConfig;

#[derive(Parser)]
#[command(
    name = "uwqkd",
    about = "Decoy-state BB84 QKD simulator for high-loss underwater optical links",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// Experiment config file (flat `key = value` format).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed; overrides the config file.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (created if missing).
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Attack: none | intercept | pns.
    #[arg(long)]
    attack: Option<String>,
    /// Water distance in metres.
    #[arg(long)]
    distance: Option<f64>,
    /// Water type: measured | jerlov_i | jerlov_ii | jerlov_iii_1c | jerlov_iii_3c.
    #[arg(long)]
    water: Option<String>,
    /// Rounds to run.
    #[arg(long)]
    rounds: Option<u32>,
    /// Pulses per round.
    #[arg(long)]
    pulses: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full pipeline for the configured number of rounds.
    Simulate {
        #[command(flatten)]
        common: CommonArgs,
        /// Also export round 0 as events.csv / emissions.csv for replay.
        #[arg(long)]
        export: bool,
    },
    /// Emit analytic rate-vs-distance curves (one CSV per water type).
    Sweep {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Exercise beacon recovery and time tagging alone.
    SyncTest {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Replay a recorded session through sync recovery and post-processing.
    Analyze {
        #[command(flatten)]
        common: CommonArgs,
        /// Event log (detector,timestamp_ps).
        #[arg(long)]
        events: PathBuf,
        /// Emission log (index,polarization,class).
        #[arg(long)]
        emissions: PathBuf,
    },
}

fn load_config(common: &CommonArgs, mode: Mode) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::from_config_file(path)
            .with_context(|| format!("loading config {}", path.display()))?,
        None => ExperimentConfig::default(),
    };
    cfg.mode = mode;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(attack) = &common.attack {
        cfg.attack.kind = attack.parse().map_err(anyhow::Error::from)?;
    }
    if let Some(d) = common.distance {
        cfg.distance_m = d;
    }
    if let Some(water) = &common.water {
        cfg.water = water.parse().map_err(anyhow::Error::from)?;
    }
    if let Some(rounds) = common.rounds {
        cfg.rounds = rounds;
    }
    if let Some(pulses) = common.pulses {
        cfg.round_pulses = pulses;
    }
    cfg.validate().map_err(anyhow::Error::from)?;
    Ok(cfg)
}

fn ensure_out(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Simulate { common, export } => {
            let cfg = load_config(&common, Mode::Simulate)?;
            ensure_out(&common.out)?;
            let run = run_simulation(&cfg)?;
            io::write_reports_jsonl(&common.out.join("rounds.jsonl"), &run.reports)?;
            let summary = serde_json::to_string_pretty(&run.summary)?;
            std::fs::write(common.out.join("summary.json"), format!("{summary}\n"))?;
            if export {
                let round0 = run_round(&cfg, 0)?;
                io::write_events_csv(&common.out.join("events.csv"), &round0.events)?;
                io::write_emissions_csv(&common.out.join("emissions.csv"), &round0.train)?;
            }
            println!("{summary}");
        }
        Command::Sweep { common } => {
            let cfg = load_config(&common, Mode::Sweep)?;
            ensure_out(&common.out)?;
            let spec = SweepSpec {
                system_db: cfg.system_db,
                step_m: cfg.sweep.step_m,
                max_distance_m: cfg.sweep.max_distance_m,
                q: match cfg.rate_q {
                    uwqkd_core::config::RateQ::Fixed(q) => q,
                    uwqkd_core::config::RateQ::Measured => 0.5,
                },
                f_ec: cfg.post.f_ec,
                window_ps: TagParams::default().window_ps,
            };
            let waters: Vec<WaterType> = match &common.water {
                Some(w) => vec![w.parse().map_err(anyhow::Error::from)?],
                None => WaterType::ALL.to_vec(),
            };
            for water in waters {
                let points = rate_vs_distance(
                    &cfg.water_table,
                    water,
                    cfg.wavelength_nm,
                    &cfg.detector,
                    &cfg.source,
                    &spec,
                )?;
                let path = common.out.join(format!("sweep_{}.csv", water.name()));
                io::write_curve_csv(&path, &points)?;
                match cutoff_distance(&points) {
                    Some(d) => println!("{}: cutoff at {d:.0} m -> {}", water.name(), path.display()),
                    None => println!(
                        "{}: no cutoff within {} m -> {}",
                        water.name(),
                        spec.max_distance_m,
                        path.display()
                    ),
                }
            }
        }
        Command::SyncTest { common } => {
            let cfg = load_config(&common, Mode::SyncTest)?;
            ensure_out(&common.out)?;
            // An unrecoverable grid is a protocol outcome, not a crash.
            let payload = match run_sync_test(&cfg) {
                Ok(report) => serde_json::to_string_pretty(&report)?,
                Err(e @ uwqkd_core::Error::UnrecoverableGrid { .. }) => {
                    serde_json::to_string_pretty(&serde_json::json!({
                        "grid_exact": false,
                        "error": e.to_string(),
                    }))?
                }
                Err(e) => return Err(e.into()),
            };
            std::fs::write(common.out.join("sync_test.json"), format!("{payload}\n"))?;
            println!("{payload}");
        }
        Command::Analyze {
            common,
            events,
            emissions,
        } => {
            let cfg = load_config(&common, Mode::Analyze)?;
            ensure_out(&common.out)?;
            let processed = io::analyze_session(&cfg, &events, &emissions)?;
            io::write_reports_jsonl(
                &common.out.join("analysis.jsonl"),
                std::slice::from_ref(&processed.report),
            )?;
            println!("{}", serde_json::to_string_pretty(&processed.report)?);
        }
    }
    Ok(())
}
