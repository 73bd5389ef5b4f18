use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fleet_prism::config::{ConfigOverrides, RunConfig};
use fleet_prism::pipeline;

#[derive(Parser)]
#[command(name = "fleet-prism", version, about = "Fleet maintenance tensor analysis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct StageArgs {
    /// JSON run config; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    overrides: ConfigOverrides,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic fleet from a planted-structure spec.
    Gen {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build the tensor and fit the nonnegative CP model.
    Decompose(StageArgs),
    /// Find in-groups and characteristic subsequences per factor.
    Prism(StageArgs),
    /// Frequentist i-ratio baseline on the PRISM in-groups.
    Dsm(StageArgs),
    /// Rolling-origin ARIMA forecasts of monthly cost per vehicle.
    ForecastCost(StageArgs),
    /// Next-job sequence models scored by perplexity.
    ForecastSeq(StageArgs),
    /// AIC grid search over ARIMA orders.
    SelectOrder {
        #[command(flatten)]
        stage: StageArgs,
        #[arg(long, default_value_t = 8)]
        max_p: usize,
        #[arg(long, default_value_t = 6)]
        max_q: usize,
    },
    /// decompose, prism, dsm, forecast-cost and forecast-seq in order.
    RunAll(StageArgs),
}

fn resolve(args: &StageArgs) -> fleet_prism::Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(path) => RunConfig::load_json(path)?,
        None => RunConfig::default(),
    };
    cfg.apply(&args.overrides);
    log::info!("resolved config: {}", serde_json::to_string(&cfg)?);
    Ok(cfg)
}

fn run(cli: Cli) -> fleet_prism::Result<()> {
    match cli.command {
        Command::Gen { spec, out } => {
            for p in pipeline::gen(&spec, &out)? {
                println!("{}", p.display());
            }
        }
        Command::Decompose(a) => {
            pipeline::decompose(&resolve(&a)?)?;
        }
        Command::Prism(a) => {
            pipeline::prism(&resolve(&a)?)?;
        }
        Command::Dsm(a) => {
            pipeline::dsm(&resolve(&a)?)?;
        }
        Command::ForecastCost(a) => {
            let summary = pipeline::forecast_cost(&resolve(&a)?)?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
        }
        Command::ForecastSeq(a) => {
            let summary = pipeline::forecast_seq(&resolve(&a)?)?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
        }
        Command::SelectOrder { stage, max_p, max_q } => {
            let summary = pipeline::select_order_stage(&resolve(&stage)?, max_p, max_q)?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
        }
        Command::RunAll(a) => pipeline::run_all(&resolve(&a)?)?,
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
