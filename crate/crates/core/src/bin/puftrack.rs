use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use puftrack::experiments::{
    self, builtin_scenarios, load_config, run_attack_matrix, run_prototype, run_tuning, Check, ExperimentError,
    PrototypeConfig, TuningConfig, EXIT_CONFIG,
};
use puftrack::ledger::export::write_jsonl;
use puftrack::scenario::Scenario;

#[derive(Parser)]
#[command(name = "puftrack", version, about = "PUF-based supply-chain tracking experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Master seed; overrides the one in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// TOML configuration (for `attacks`, a scenario file or a directory of them).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory for output files; stdout when absent.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    format: Format,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Sweep the match threshold R and report TAR/FAR/TRR/FRR.
    Tune,
    /// Run the three-organisation prototype, honest and with a substituting logistic party.
    Prototype,
    /// Run attack scenarios over many seeds.
    Attacks {
        /// Runs per scenario; defaults to each scenario's `seeds`.
        #[arg(long)]
        runs: Option<u64>,
    },
    /// Run one scenario and export an honest replica's committed log as JSON lines.
    ExportLedger,
}

fn emit(out: &Option<PathBuf>, name: &str, body: &str) -> Result<(), ExperimentError> {
    match out {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            fs::write(dir.join(name), body)?;
        }
        None => io::stdout().write_all(body.as_bytes())?,
    }
    Ok(())
}

fn report(checks: &[Check]) -> u8 {
    for c in checks {
        eprintln!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    experiments::exit_code(checks)
}

fn scenarios(config: Option<&Path>) -> Result<Vec<Scenario>, ExperimentError> {
    match config {
        None => Ok(builtin_scenarios()),
        Some(p) if p.is_dir() => Ok(Scenario::load_dir(p)?),
        Some(p) => Ok(vec![Scenario::load(p)?]),
    }
}

fn run(cli: Cli) -> Result<u8, ExperimentError> {
    match cli.command {
        Command::Tune => {
            let mut config: TuningConfig = cli.config.as_deref().map(load_config).transpose()?.unwrap_or_default();
            config.seed = cli.seed.unwrap_or(config.seed);
            let r = run_tuning(&config)?;
            match cli.format {
                Format::Csv => emit(&cli.out, "tuning.csv", &r.to_csv())?,
                Format::Json => emit(&cli.out, "tuning.json", &r.to_json())?,
            }
            Ok(report(&r.checks()))
        }
        Command::Prototype => {
            let mut config: PrototypeConfig = cli.config.as_deref().map(load_config).transpose()?.unwrap_or_default();
            config.seed = cli.seed.unwrap_or(config.seed);
            let r = run_prototype(&config)?;
            match cli.format {
                Format::Csv => {
                    let mut w = csv::Writer::from_writer(Vec::new());
                    let csv_err = |e: csv::Error| ExperimentError::Run(e.to_string());
                    w.write_record(["phase", "item", "supplier", "buyer", "result", "match_count"])
                        .map_err(csv_err)?;
                    for (phase, s) in [("honest", &r.honest), ("adversary", &r.adversary)] {
                        for row in &s.verifications {
                            w.write_record([
                                phase.to_string(),
                                row.item.clone(),
                                row.supplier.to_string(),
                                row.buyer.to_string(),
                                row.result.to_string(),
                                row.match_count.map(|m| m.to_string()).unwrap_or_default(),
                            ])
                            .map_err(csv_err)?;
                        }
                    }
                    let body = w.into_inner().map_err(|e| ExperimentError::Run(e.to_string()))?;
                    emit(&cli.out, "prototype.csv", &String::from_utf8_lossy(&body))?
                }
                Format::Json => emit(&cli.out, "prototype.json", &r.to_json())?,
            }
            Ok(report(&r.checks))
        }
        Command::Attacks { runs } => {
            let r = run_attack_matrix(&scenarios(cli.config.as_deref())?, cli.seed, runs)?;
            match cli.format {
                Format::Csv => emit(&cli.out, "attacks.csv", &r.to_csv())?,
                Format::Json => emit(&cli.out, "attacks.json", &r.to_json())?,
            }
            Ok(report(&r.checks))
        }
        Command::ExportLedger => {
            if cli.format == Format::Csv {
                return Err(ExperimentError::Config("the ledger export is JSON lines only".into()));
            }
            let scenario = scenarios(cli.config.as_deref())?
                .into_iter()
                .next()
                .ok_or_else(|| ExperimentError::Config("no scenario found".into()))?;
            let seed = cli.seed.unwrap_or(scenario.seed);
            let (sim, _) = scenario.execute(seed)?;
            let ledger = sim.system().ledger();
            let node = ledger.honest_nodes().next().expect("at least one honest replica");
            let mut body = Vec::new();
            write_jsonl(ledger.log(node), ledger.pki(), &mut body)?;
            emit(&cli.out, "ledger.jsonl", &String::from_utf8_lossy(&body))?;
            Ok(experiments::EXIT_OK)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
