use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gedf_core::features::Variant;
use gedf_core::pipeline::{self, ExperimentConfig, Method};
use gedf_core::{par, Error};

#[derive(Parser, Debug)]
#[command(name = "gedf", version, about = "Transient stability assessment with graph-embedded features")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct Common {
    /// Experiment configuration (TOML); defaults apply when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Overrides the master seed.
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,
    /// Worker threads; 0 means all available cores.
    #[arg(long, global = true, value_name = "N")]
    workers: Option<usize>,
}

#[derive(Args, Debug, Clone, Default)]
struct Selection {
    /// Window length in seconds; defaults to every configured window.
    #[arg(long, value_parser = parse_window)]
    window: Option<f64>,
    #[arg(long, value_parser = ["gedf", "raw"])]
    variant: Option<String>,
    #[arg(long, value_parser = ["scl", "sl"])]
    method: Option<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate altered topologies.
    GenTopologies,
    /// Simulate every scenario of every topology.
    Simulate,
    /// Extract gedf and raw samples and write split manifests.
    Extract,
    /// Train models and save checkpoints.
    Train(Selection),
    /// Fine-tune saved encoders on the edge-removal datasets.
    Finetune(Selection),
    /// Evaluate saved models on T1 and T2.
    Eval(Selection),
    /// Collect every saved report into one table.
    Report,
}

fn parse_window(s: &str) -> Result<f64, String> {
    pipeline::parse_window(s).map_err(|e| e.to_string())
}

fn load_config(common: &Common) -> gedf_core::Result<ExperimentConfig> {
    let mut config = match &common.config {
        Some(path) => ExperimentConfig::from_toml(&std::fs::read_to_string(path)?)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    if let Some(w) = common.workers {
        config.workers = Some(w);
    }
    config.validate()?;
    Ok(config)
}

impl Selection {
    fn windows(&self, config: &ExperimentConfig) -> Vec<f64> {
        self.window.map_or_else(|| config.windows.clone(), |w| vec![w])
    }

    fn variants(&self) -> Vec<Variant> {
        match self.variant.as_deref().and_then(Variant::parse) {
            Some(v) => vec![v],
            None => vec![Variant::Gedf, Variant::Raw],
        }
    }

    fn methods(&self) -> Vec<Method> {
        match self.method.as_deref().and_then(Method::parse) {
            Some(m) => vec![m],
            None => vec![Method::Scl, Method::Sl],
        }
    }
}

fn run(command: &Command, config: &ExperimentConfig) -> gedf_core::Result<()> {
    match command {
        Command::GenTopologies => {
            let topologies = pipeline::cmd_gen_topologies(config)?;
            log::info!("wrote {} topologies", topologies.len());
        }
        Command::Simulate => {
            let summary = pipeline::cmd_simulate(config)?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
        }
        Command::Extract => {
            let split = pipeline::cmd_extract(config)?;
            log::info!(
                "train {} validation {} T1 {} T2 {}",
                split.train.len(),
                split.validation.len(),
                split.t1.len(),
                split.t2.len()
            );
        }
        Command::Train(sel) => {
            for w in sel.windows(config) {
                for v in sel.variants() {
                    for m in sel.methods() {
                        log::info!("training {} {} {}", m.as_str(), v.as_str(), pipeline::window_tag(w));
                        pipeline::cmd_train(config, m, v, w)?;
                    }
                }
            }
        }
        Command::Eval(sel) => {
            let mut reports = Vec::new();
            for w in sel.windows(config) {
                for v in sel.variants() {
                    for m in sel.methods() {
                        reports.extend(pipeline::cmd_eval(config, m, v, w)?);
                    }
                }
            }
            print!("{}", gedf_core::eval::format_table(&reports));
        }
        Command::Finetune(sel) => {
            if sel.window.is_some_and(|w| (w - config.transfer.window).abs() > 1e-9) {
                return Err(Error::Configuration(format!(
                    "fine-tuning uses the configured transfer window {}",
                    config.transfer.window
                )));
            }
            let mut reports = Vec::new();
            for v in sel.variants() {
                for m in sel.methods() {
                    for o in pipeline::cmd_finetune(config, m, v)? {
                        reports.push(o.transferred);
                        reports.push(o.random_encoder);
                    }
                }
            }
            print!("{}", gedf_core::eval::format_table(&reports));
        }
        Command::Report => print!("{}", pipeline::cmd_report(config)?),
    }
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::GenerationExhausted { .. } => 2,
        Error::Numerical(_) | Error::Divergence(_) => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = load_config(&cli.common)
        .and_then(|config| par::with_workers(config.workers.unwrap_or(0), || run(&cli.command, &config)));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
