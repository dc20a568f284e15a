use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use epfde::harness::{
    exit_rates, exit_rows, run_exit, run_experiment, run_sweep, set_dotted, with_workers,
    write_results, ExperimentConfig, Metadata, OutputFormat, Record, ScenarioKind,
};

/// Link-level simulator for EP-based frequency-domain turbo receivers.
#[derive(Parser)]
#[command(name = "epfde", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a BER/BLER simulation.
    Run(Common),
    /// Measure receiver EXIT curves.
    Exit(Common),
    /// Run a simulation once per value of a config key.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Dotted config key, e.g. `receiver.turbo_iterations`.
        #[arg(long)]
        param: String,
        /// Values to assign, parsed as TOML values.
        #[arg(long, num_args = 1.., value_delimiter = ',', required = true)]
        values: Vec<String>,
    },
}

#[derive(Args)]
struct Common {
    /// Experiment file (TOML).
    config: PathBuf,
    /// Override the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    workers: usize,
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value = "csv")]
    format: OutputFormat,
}

fn load_table(common: &Common) -> epfde::Result<toml::Table> {
    let text = std::fs::read_to_string(&common.config)?;
    let mut table = text
        .parse::<toml::Table>()
        .map_err(|e| epfde::Error::Config {
            key: "<file>".into(),
            reason: e.to_string().trim_end().into(),
        })?;
    if let Some(seed) = common.seed {
        set_dotted(&mut table, "seed", &seed.to_string())?;
    }
    Ok(table)
}

fn emit<R: Record>(rows: &[R], common: &Common, meta: &Metadata) -> epfde::Result<()> {
    match &common.out {
        Some(path) => {
            let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
            write_results(rows, common.format, meta, &mut f)?;
            f.flush()?;
            eprintln!("wrote {} rows to {}", rows.len(), path.display());
        }
        None => write_results(rows, common.format, meta, &mut std::io::stdout().lock())?,
    }
    Ok(())
}

fn run(cli: Cli) -> epfde::Result<()> {
    match cli.command {
        Command::Run(common) => {
            let cfg = ExperimentConfig::from_table(load_table(&common)?)?;
            let rows = with_workers(common.workers, || run_experiment(&cfg))??;
            let last_tau = rows.iter().map(|r| r.tau).max().unwrap_or(0);
            for r in rows.iter().filter(|r| r.tau == last_tau) {
                eprintln!(
                    "Eb/N0 {:>6} dB  BER {:.3e}  BLER {:.3e}  ({} blocks)",
                    r.snr_db, r.ber, r.bler, r.blocks_run
                );
            }
            emit(&rows, &common, &Metadata::for_config(&cfg))
        }
        Command::Exit(common) => {
            let cfg = ExperimentConfig::from_table(load_table(&common)?)?;
            if cfg.kind != ScenarioKind::Exit {
                return Err(epfde::Error::Config {
                    key: "kind".into(),
                    reason: "the exit command needs kind = \"exit\"".into(),
                });
            }
            let curves = with_workers(common.workers, || run_exit(&cfg))??;
            for (snr, s, rate) in exit_rates(&cfg, &curves) {
                if let Some(rate) = rate {
                    eprintln!("Eb/N0 {snr} dB  S={s}  achievable rate {rate:.4} bits/symbol");
                }
            }
            emit(
                &exit_rows(cfg.receiver.mode, &curves),
                &common,
                &Metadata::for_config(&cfg),
            )
        }
        Command::Sweep {
            common,
            param,
            values,
        } => {
            let table = load_table(&common)?;
            let cfg = ExperimentConfig::from_table(table.clone())?;
            let rows = with_workers(common.workers, || run_sweep(&table, &param, &values))??;
            emit(&rows, &common, &Metadata::for_config(&cfg))
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
