use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use medledger_cli::bench::{self, BenchOptions};
use medledger_core::block::MAX_DIFFICULTY_BITS;
use medledger_core::chain_log;
use medledger_core::ledger::init_deployment;
use medledger_core::sim::parse_scenario;
use medledger_core::{Config, KeyPair, Ledger, Role};
use rand::rngs::OsRng;

/// Exit codes: 0 success, 1 verification/convergence failure, 2 usage/IO.
const EXIT_FAILED: u8 = 1;
const EXIT_ERROR: u8 = 2;

#[derive(Parser)]
#[command(
    name = "medledger",
    version,
    about = "Blockchain-anchored health-record ledger"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Scaffold a deployment: config, genesis chain log, vault, keystore, node key.
    Init {
        #[arg(long, default_value = ".")]
        dir: PathBuf,
        #[arg(long, default_value_t = 12, value_parser = clap::value_parser!(u8).range(0..=MAX_DIFFICULTY_BITS as i64))]
        difficulty: u8,
    },
    /// Generate a keypair file and print its identity id.
    Keygen {
        #[arg(long)]
        role: Role,
        #[arg(long)]
        name: String,
        /// Defaults to `<name>.key`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Register a key file's identity on a local deployment (admin-signed).
    Register {
        #[arg(long, default_value = ".")]
        dir: PathBuf,
        #[arg(long)]
        key: PathBuf,
        #[arg(long)]
        patient_id: Option<u64>,
    },
    /// Run the HTTP service.
    Serve {
        #[arg(long, default_value = ".")]
        dir: PathBuf,
        /// Overrides `listen_addr` from the config.
        #[arg(long)]
        listen: Option<String>,
    },
    /// Fully verify a chain log; exit 1 on any failure.
    Verify {
        #[arg(long)]
        chain: PathBuf,
    },
    /// Run a network simulation scenario and write its event CSV.
    Sim {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "events.csv")]
        out: PathBuf,
    },
    /// Upload vs download latency per record size.
    Bench {
        #[arg(long, default_value_t = 5)]
        records: usize,
        #[arg(long, default_value = "1KB,64KB,1MB")]
        sizes: String,
        #[arg(long, default_value_t = 12, value_parser = clap::value_parser!(u8).range(0..=MAX_DIFFICULTY_BITS as i64))]
        difficulty: u8,
        /// Benchmark a running service instead of an embedded deployment.
        #[arg(long)]
        url: Option<String>,
        /// Also write the CSV here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_config(dir: &Path) -> anyhow::Result<Config> {
    Config::load_default(dir).with_context(|| format!("loading config for {}", dir.display()))
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::Init { dir, difficulty } => {
            let cfg = init_deployment(&dir, difficulty)?;
            println!("initialized {} (difficulty {difficulty})", dir.display());
            println!("chain log: {}", cfg.chain_log.display());
            println!("node key:  {}", cfg.node_key.display());
        }
        Command::Keygen { role, name, out } => {
            let out = out.unwrap_or_else(|| PathBuf::from(format!("{name}.key")));
            let key = KeyPair::generate(&mut OsRng, role, name);
            key.save(&out)?;
            println!("{}", key.identity_id());
            eprintln!("wrote {} ({role})", out.display());
        }
        Command::Register {
            dir,
            key,
            patient_id,
        } => {
            let key = KeyPair::load(&key)?;
            let ledger = Ledger::open(load_config(&dir)?)?;
            let out = ledger.register(&key.public_key(), key.role, &key.name, patient_id)?;
            println!("identity {} registered as {}", key.identity_id(), key.role);
            println!("tx {}", out.tx_id);
            match out.mined {
                Some(m) => println!("mined block {} {}", m.block_index, m.digest),
                None => println!("pending (auto_mine off)"),
            }
        }
        Command::Serve { dir, listen } => {
            tracing_subscriber::fmt()
                .with_env_filter(
                    tracing_subscriber::EnvFilter::try_from_default_env()
                        .unwrap_or_else(|_| "medledger_service=info,tower_http=info".into()),
                )
                .init();
            let mut cfg = load_config(&dir)?;
            if let Some(addr) = listen {
                cfg.listen_addr = addr;
            }
            tokio::runtime::Runtime::new()?.block_on(medledger_service::serve(cfg))?;
        }
        Command::Verify { chain } => {
            let records = chain_log::read_records(&chain)?;
            let report = records.verify();
            println!("{report}");
            if !report.ok {
                return Ok(ExitCode::from(EXIT_FAILED));
            }
        }
        Command::Sim {
            scenario,
            seed,
            out,
        } => {
            let text = fs::read_to_string(&scenario)
                .with_context(|| format!("reading {}", scenario.display()))?;
            let parsed =
                parse_scenario(&text).map_err(|e| anyhow::anyhow!("{}:{e}", scenario.display()))?;
            let max_ticks = parsed.max_ticks;
            let mut world = parsed.into_world(seed)?;
            let outcome = world.run_until_quiescent(max_ticks).map(|_| ());
            fs::write(&out, world.log().to_csv())?;
            println!("{}", world.summary());
            if let Err(e) = outcome {
                eprintln!("{e}");
                return Ok(ExitCode::from(EXIT_FAILED));
            }
            if !world.converged() {
                return Ok(ExitCode::from(EXIT_FAILED));
            }
        }
        Command::Bench {
            records,
            sizes,
            difficulty,
            url,
            out,
        } => {
            anyhow::ensure!(records > 0, "--records must be > 0");
            let opts = BenchOptions {
                records,
                sizes: bench::parse_sizes(&sizes)?,
                difficulty_bits: difficulty,
            };
            let report = match url {
                Some(u) => bench::run_remote(&u, &opts)?,
                None => bench::run_embedded(&opts)?,
            };
            let csv = report.to_csv();
            print!("{csv}");
            if let Some(path) = out {
                fs::write(path, &csv)?;
            }
            for (size, growth) in &report.log_growth {
                eprintln!("size {size}: chain log +{growth:?} bytes per record");
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            // Most library errors already embed their source in the message;
            // only print causes that add something.
            let mut msg = e.to_string();
            for cause in e.chain().skip(1) {
                let c = cause.to_string();
                if !msg.contains(&c) {
                    msg = format!("{msg}: {c}");
                }
            }
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_ERROR)
        }
    }
}
