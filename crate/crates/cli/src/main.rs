use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};

use raggedshard::planner::TensorOrdering;
use raggedshard_cli::commands::{self, CliError, PlanDocument, PlanRequest, SimRequest};
use raggedshard_cli::config::ModelConfig;

#[derive(Debug, Clone, Copy, ValueEnum)]
enum OrderingArg {
    Default,
    Block,
    Shape,
}

impl From<OrderingArg> for TensorOrdering {
    fn from(o: OrderingArg) -> Self {
        match o {
            OrderingArg::Default => TensorOrdering::Default,
            OrderingArg::Block => TensorOrdering::ByBlockSize,
            OrderingArg::Shape => TensorOrdering::ByShape,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum DemoArg {
    Muon,
    Quant,
}

#[derive(Parser)]
#[command(
    name = "raggedshard",
    version,
    about = "Grouped-buffer layout planning and simulated sharded training"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Plan every group of a model config and report padding
    Plan {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        devices: u32,
        /// Collective alignment in bytes
        #[arg(long, default_value_t = 16)]
        gcoll_bytes: u64,
        #[arg(long, value_enum, default_value_t = OrderingArg::Default)]
        ordering: OrderingArg,
        /// Row granularity override for sweep-marked tensors
        #[arg(long)]
        granularity: Option<u64>,
        /// Write the plan document (JSON) here
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-validate a plan document against its config
    Validate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        plan: PathBuf,
    },
    /// Plan a grid of device counts and granularities; CSV output
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Device counts, comma separated
        #[arg(long, value_delimiter = ',', default_values_t = [8u32, 16, 32, 64, 128, 256, 512])]
        devices: Vec<u32>,
        /// Row granularities for sweep-marked tensors, comma separated
        #[arg(long, value_delimiter = ',', default_values_t = [1u64, 16, 128])]
        granularity: Vec<u64>,
        #[arg(long, default_value_t = 16)]
        gcoll_bytes: u64,
        #[arg(long, value_enum, default_value_t = OrderingArg::Default)]
        ordering: OrderingArg,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Drive a training-style demo on the simulated mesh; CSV output
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        demo: DemoArg,
        #[arg(long, default_value_t = 4)]
        devices: u32,
        #[arg(long, default_value_t = 16)]
        gcoll_bytes: u64,
        #[arg(long, value_enum, default_value_t = OrderingArg::Default)]
        ordering: OrderingArg,
        /// Optimizer steps (muon demo)
        #[arg(long, default_value_t = 5)]
        steps: u32,
        /// Square quantization tile edge (quant demo)
        #[arg(long, default_value_t = 32)]
        quant_block: u64,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn write_out(path: &PathBuf, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text)
        .map_err(|e| CliError::Document(format!("cannot write {}: {e}", path.display())))
}

fn run(cli: Cli) -> Result<i32, CliError> {
    match cli.cmd {
        Cmd::Plan {
            config,
            devices,
            gcoll_bytes,
            ordering,
            granularity,
            out,
        } => {
            let cfg = ModelConfig::from_path(&config)?;
            let req = PlanRequest {
                devices,
                gcoll_bytes,
                ordering: ordering.into(),
                rows_override: granularity,
            };
            let (doc, output) = commands::cmd_plan(&cfg, &req)?;
            if let Some(path) = &out {
                write_out(path, &doc.to_json())?;
            }
            print!("{}", output.stdout);
            Ok(output.exit)
        }
        Cmd::Validate { config, plan } => {
            let cfg = ModelConfig::from_path(&config)?;
            let text = std::fs::read_to_string(&plan)
                .map_err(|e| CliError::Document(format!("cannot read {}: {e}", plan.display())))?;
            let doc = PlanDocument::from_json(&text)?;
            let output = commands::cmd_validate(&cfg, &doc)?;
            print!("{}", output.stdout);
            Ok(output.exit)
        }
        Cmd::Sweep {
            config,
            devices,
            granularity,
            gcoll_bytes,
            ordering,
            out,
        } => {
            let cfg = ModelConfig::from_path(&config)?;
            let output =
                commands::cmd_sweep(&cfg, &devices, &granularity, gcoll_bytes, ordering.into())?;
            match &out {
                Some(path) => write_out(path, &output.stdout)?,
                None => print!("{}", output.stdout),
            }
            Ok(output.exit)
        }
        Cmd::Simulate {
            config,
            demo,
            devices,
            gcoll_bytes,
            ordering,
            steps,
            quant_block,
            seed,
            out,
        } => {
            let cfg = ModelConfig::from_path(&config)?;
            let req = SimRequest {
                devices,
                gcoll_bytes,
                ordering: ordering.into(),
                steps,
                quant_block,
                seed,
            };
            let output = match demo {
                DemoArg::Muon => commands::cmd_simulate_muon(&cfg, &req)?,
                DemoArg::Quant => commands::cmd_simulate_quant(&cfg, &req)?,
            };
            match &out {
                Some(path) => write_out(path, &output.stdout)?,
                None => print!("{}", output.stdout),
            }
            Ok(output.exit)
        }
    }
}

fn main() {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => std::process::exit(code),
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(3);
        }
    }
}
