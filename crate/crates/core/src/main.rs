use std::fs;
use std::io::{self, BufReader};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use herdlink::codec::{duty_cycle_min_period, time_on_air, LoraParams};
use herdlink::energy::{
    daily_consumption, energy_report_csv, lifetime_report, reference_budgets, BatteryModel, HarvestModel,
};
use herdlink::ingest::{
    analyze, ingest_reader, run_end_to_end, write_analysis, ExitStatus, FrameStore, IngestError, LogStore,
    PipelineConfig,
};
use herdlink::simulator::{run_simulation, FollowParams, SimConfig};

/// Cattle collar telemetry: simulation, backend and analysis.
#[derive(Parser)]
#[command(name = "herdlink", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a herd and write the gateway frame log and ground truth.
    Simulate(SimArgs),
    /// Load a frame log into a persistent store.
    Ingest {
        /// Frame log, `-` for stdin.
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "store.log")]
        store: PathBuf,
        /// Pipeline configuration (TOML).
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Analyse a store and write activity, correlation and energy tables.
    Analyze {
        #[arg(long, default_value = "store.log")]
        store: PathBuf,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Print the reference energy budget and lifetime estimates.
    Energy {
        #[arg(long, default_value_t = herdlink::energy::DEFAULT_HARVEST_EFFICIENCY)]
        efficiency: f64,
        /// Solar cell area relative to the reference cell.
        #[arg(long, default_value_t = 1.0)]
        area_scale: f64,
    },
    /// LoRa time-on-air and duty-cycle limited transmit period.
    Airtime {
        #[arg(long, default_value_t = 8)]
        sf: u8,
        #[arg(long, default_value_t = 125_000)]
        bandwidth_hz: u32,
        /// Application payload in bytes.
        #[arg(long, default_value_t = 31)]
        payload: u32,
        #[arg(long, default_value_t = 0.01)]
        duty_cycle: f64,
    },
    /// Simulate, ingest and analyse in one run.
    E2e {
        #[command(flatten)]
        sim: SimArgs,
        #[arg(long)]
        pipeline_config: Option<PathBuf>,
    },
}

#[derive(Args)]
struct SimArgs {
    /// Simulation configuration (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    hours: Option<f64>,
    #[arg(long)]
    animals: Option<usize>,
    #[arg(long)]
    loss: Option<f64>,
    /// Make every animal follow the first one with this lag in seconds.
    #[arg(long)]
    follow_lag: Option<f64>,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
}

#[derive(Debug)]
enum CliError {
    Config(String),
    Run(String),
}

impl From<IngestError> for CliError {
    fn from(e: IngestError) -> Self {
        match e.exit_status() {
            ExitStatus::ConfigError => CliError::Config(e.to_string()),
            _ => CliError::Run(e.to_string()),
        }
    }
}

fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn sim_config(args: &SimArgs) -> Result<SimConfig, CliError> {
    let mut c = match &args.config {
        Some(p) => SimConfig::from_toml(&read_text(p)?).map_err(|e| CliError::Config(e.to_string()))?,
        None => SimConfig::default(),
    };
    if let Some(s) = args.seed {
        c.seed = s;
    }
    if let Some(h) = args.hours {
        c.duration_s = h * 3600.0;
    }
    if let Some(n) = args.animals {
        c.animals = n;
    }
    if let Some(l) = args.loss {
        c.loss_probability = l;
    }
    if let Some(lag) = args.follow_lag {
        c.follow = Some(FollowParams {
            lag_s: lag,
            ..c.follow.unwrap_or_default()
        });
    }
    c.validate().map_err(|e| CliError::Config(e.to_string()))?;
    Ok(c)
}

fn pipeline_config(path: Option<&Path>) -> Result<PipelineConfig, CliError> {
    match path {
        Some(p) => Ok(PipelineConfig::from_toml(&read_text(p)?)?),
        None => Ok(PipelineConfig::default()),
    }
}

fn write(dir: &Path, name: &str, text: &str) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Run(format!("{}: {e}", dir.display())))?;
    let p = dir.join(name);
    fs::write(&p, text).map_err(|e| CliError::Run(format!("{}: {e}", p.display())))
}

fn run(cli: Cli) -> Result<ExitStatus, CliError> {
    match cli.command {
        Command::Simulate(args) => {
            let config = sim_config(&args)?;
            let out = run_simulation(&config).map_err(|e| CliError::from(IngestError::from(e)))?;
            write(&args.out_dir, "frames.log", &out.frame_log_text())?;
            write(&args.out_dir, "truth.csv", &out.truth_csv())?;
            for a in &out.animals {
                let observed = a.firmware.ledger.observed_budgets(a.firmware.elapsed_s);
                let csv = energy_report_csv(&observed).map_err(|e| CliError::Run(e.to_string()))?;
                write(&args.out_dir, &format!("energy_observed_{}.csv", a.device_id), &csv)?;
            }
            println!(
                "emitted={} delivered={} out_dir={}",
                out.emitted_frames(),
                out.frame_log.len(),
                args.out_dir.display()
            );
            Ok(ExitStatus::Success)
        }
        Command::Ingest { input, store, config } => {
            let config = pipeline_config(config.as_deref())?;
            let store = LogStore::open(&store)?;
            let stats = if input.as_os_str() == "-" {
                ingest_reader(&store, io::stdin().lock())?
            } else {
                let f = fs::File::open(&input).map_err(|e| CliError::Run(format!("{}: {e}", input.display())))?;
                ingest_reader(&store, BufReader::new(f))?
            };
            println!(
                "ingested={} stored={} duplicates={} dead_lettered={} total_in_store={}",
                stats.ingested,
                stats.stored,
                stats.duplicates,
                stats.dead_lettered,
                store.len()
            );
            Ok(if stats.dead_letter_fraction() > config.max_dead_letter_fraction {
                ExitStatus::DeadLetterThreshold
            } else {
                ExitStatus::Success
            })
        }
        Command::Analyze { store, out_dir, config } => {
            let config = pipeline_config(config.as_deref())?;
            if !store.exists() {
                return Err(CliError::Config(format!("store {} does not exist", store.display())));
            }
            let store = LogStore::open(&store)?;
            let analysis = analyze(&store, &config)?;
            write_analysis(&analysis, &out_dir)?;
            for (device, g) in &analysis.grazing_s {
                println!("device={device} grazing_h={:.2}", g / 3600.0);
            }
            for p in &analysis.peaks {
                println!(
                    "series={} peak_lag_s={:.0} coefficient={:.3}",
                    p.series_name,
                    p.lag_seconds,
                    p.coefficient.unwrap_or(f64::NAN)
                );
            }
            Ok(ExitStatus::Success)
        }
        Command::Energy { efficiency, area_scale } => {
            let budgets = reference_budgets();
            let err = |e: herdlink::energy::EnergyError| CliError::Config(e.to_string());
            let harvest = HarvestModel::default().with_efficiency(efficiency).with_area_scale(area_scale);
            let consumption = daily_consumption(&budgets).map_err(err)?;
            print!("{}", energy_report_csv(&budgets).map_err(err)?);
            print!("{}", lifetime_report(&BatteryModel::default(), consumption, &harvest).map_err(err)?);
            Ok(ExitStatus::Success)
        }
        Command::Airtime {
            sf,
            bandwidth_hz,
            payload,
            duty_cycle,
        } => {
            let params = LoraParams::eu868(sf).with_bandwidth(bandwidth_hz);
            let err = |e: herdlink::codec::CodecError| CliError::Config(e.to_string());
            let toa = time_on_air(&params, payload).map_err(err)?;
            let min = duty_cycle_min_period(&params, payload, duty_cycle).map_err(err)?;
            println!("{params}");
            println!("time_on_air_s={toa:.6}");
            println!("min_period_s={min:.3}");
            Ok(ExitStatus::Success)
        }
        Command::E2e { sim, pipeline_config: p } => {
            let config = sim_config(&sim)?;
            let pipeline = pipeline_config(p.as_deref())?;
            let e2e = run_end_to_end(&config, &pipeline, &sim.out_dir)?;
            let s = e2e.report.stats;
            println!(
                "emitted={} ingested={} stored={} duplicates={} dead_lettered={}",
                e2e.simulation.emitted_frames(),
                s.ingested,
                s.stored,
                s.duplicates,
                s.dead_lettered
            );
            for p in &e2e.report.analysis.peaks {
                println!(
                    "series={} peak_lag_s={:.0} coefficient={:.3}",
                    p.series_name,
                    p.lag_seconds,
                    p.coefficient.unwrap_or(f64::NAN)
                );
            }
            Ok(e2e.report.status)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(status) => {
            if status == ExitStatus::DeadLetterThreshold {
                eprintln!("dead-letter threshold exceeded");
            }
            ExitCode::from(status as u8)
        }
        Err(CliError::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(ExitStatus::ConfigError as u8)
        }
        Err(CliError::Run(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(ExitStatus::Failure as u8)
        }
    }
}
