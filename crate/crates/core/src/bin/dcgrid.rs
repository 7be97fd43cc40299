use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use dcgrid::model::{ScenarioConfig, TrafficClass};
use dcgrid::netem::TrafficClassModel;
use dcgrid::orchestrator::{
    self, calibrate_netem, compare_runs, realtime, write_calibration_csv, OrchestratorError, RunMetrics, RunMode,
    RunOptions, METRICS,
};

#[derive(Parser)]
#[command(name = "dcgrid", version, about = "DC microgrid co-simulation with Modbus-TCP and traffic-class delays")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one simulated day and write traces and metrics.
    Run {
        scenario: PathBuf,
        #[arg(long, default_value = "virtual")]
        mode: RunMode,
        #[arg(long)]
        class: Option<TrafficClass>,
        #[arg(long)]
        congestion: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        /// Override the simulated duration, hours.
        #[arg(long)]
        hours: Option<f64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Sweep every traffic class and congestion level.
    Calibrate {
        #[arg(long, default_value = "calibration.csv")]
        out: PathBuf,
        #[arg(long, default_value_t = 100_000)]
        messages: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Compare two runs (metrics files or run directories).
    Compare { a: PathBuf, b: PathBuf },
    /// Write the bundled four-bus scenario.
    Scenario {
        #[arg(long, default_value = "table1.toml")]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Plant and Modbus slave component (real-time mode).
    Plant {
        scenario: PathBuf,
        #[arg(long, default_value = "127.0.0.1:5020")]
        listen: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Delay proxy component (real-time mode).
    Proxy {
        #[arg(long)]
        scenario: Option<PathBuf>,
        #[arg(long)]
        listen: String,
        #[arg(long)]
        target: SocketAddr,
        #[arg(long)]
        class: Option<TrafficClass>,
        #[arg(long)]
        congestion: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        records: PathBuf,
    },
    /// EMS and Modbus master component (real-time mode).
    Ems {
        scenario: PathBuf,
        #[arg(long)]
        target: SocketAddr,
        #[arg(long)]
        out: PathBuf,
    },
}

fn metrics_path(p: &Path) -> PathBuf {
    if p.is_dir() {
        p.join(METRICS)
    } else {
        p.to_path_buf()
    }
}

fn execute(cmd: Cmd) -> Result<ExitCode, OrchestratorError> {
    match cmd {
        Cmd::Run { scenario, mode, class, congestion, seed, hours, out } => {
            let mut config = ScenarioConfig::load(&scenario)?;
            if let Some(c) = class {
                config.traffic_class = c;
            }
            if let Some(r) = congestion {
                config.congestion = r;
            }
            if let Some(s) = seed {
                config.rng_seed = s;
            }
            if let Some(h) = hours {
                config.sim.duration_s = h * 3600.0;
            }
            let metrics = orchestrator::run_scenario(&config, &out, &RunOptions { mode, executable: None })?;
            print!("{}", metrics.to_toml_string()?);
            if metrics.invariant_violations() > 0 {
                log::error!("{} invariant violations", metrics.invariant_violations());
                return Ok(ExitCode::from(1));
            }
        }
        Cmd::Calibrate { out, messages, seed } => {
            let rows = calibrate_netem(messages, seed)?;
            write_calibration_csv(&rows, &out)?;
            println!("{:<5} {:>5} {:>10} {:>10} {:>8} {:>12}", "class", "rho", "mean_ms", "ref_ms", "err_%", "jitter_us");
            for r in &rows {
                println!(
                    "{:<5} {:>5.2} {:>10.3} {:>10.3} {:>8.2} {:>12.1}",
                    r.class.to_string(),
                    r.congestion,
                    r.mean_ms,
                    r.reference_ms,
                    100.0 * r.rel_error,
                    r.jitter_us
                );
            }
        }
        Cmd::Compare { a, b } => {
            let a = RunMetrics::load(&metrics_path(&a))?;
            let b = RunMetrics::load(&metrics_path(&b))?;
            print!("{}", compare_runs(&a, &b)?);
        }
        Cmd::Scenario { out, seed } => {
            ScenarioConfig::table1(seed).save(&out)?;
            println!("{}", out.display());
        }
        Cmd::Plant { scenario, listen, out } => {
            let config = ScenarioConfig::load(&scenario)?;
            realtime::plant_component(&config, &listen, &out, realtime::stdin_control())?;
        }
        Cmd::Proxy { scenario, listen, target, class, congestion, seed, records } => {
            let base = scenario.map(ScenarioConfig::load).transpose()?;
            let mut model = match &base {
                Some(c) => TrafficClassModel::from_scenario(c, c.rng_seed.wrapping_mul(2)),
                None => TrafficClassModel::new(TrafficClass::DS3, 0.0, 0),
            };
            if let Some(c) = class {
                model.link_rate = c.link_rate_bps();
                model.class = c;
            }
            if let Some(r) = congestion {
                model.congestion = r;
            }
            if let Some(s) = seed {
                model.seed = s;
            }
            let min_bytes = base.map_or(0, |c| c.network.min_message_bytes as usize);
            realtime::proxy_component(model, &listen, target, min_bytes, &records, realtime::stdin_control())?;
        }
        Cmd::Ems { scenario, target, out } => {
            let config = ScenarioConfig::load(&scenario)?;
            realtime::ems_component(&config, target, &out, realtime::stdin_control())?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
