use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use tangram_cli::commands::{self, GenerateKind, IrlRequest};
use tangram_cli::config::RunConfig;
use tangram_cli::{files, serve, CliError, EXIT_INVALID};
use tangram_core::irl::Method;
use tangram_core::report::IrlTask;

#[derive(Parser)]
#[command(name = "tangram", version, about = "Tangram-trace pre-training experiments")]
struct Cli {
    /// Base seed, overriding the config's.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    Tangram,
    Folding,
    Room,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Sl,
    MeIrl,
    Gail,
}

#[derive(Clone, Copy, ValueEnum)]
enum TaskArg {
    Folding,
    Room,
}

#[derive(Subcommand)]
enum Command {
    /// Write synthetic trace documents.
    Generate {
        kind: KindArg,
        /// Number of tangram traces (default from config).
        #[arg(long)]
        count: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pre-train the extractor on tangram traces.
    Pretrain {
        #[arg(long)]
        out: PathBuf,
        /// Trace directory (overrides config).
        #[arg(long)]
        traces: Option<PathBuf>,
        /// Word-vector text file (overrides config).
        #[arg(long)]
        embeddings: Option<PathBuf>,
    },
    /// Train scoring models on folding or room demonstrations.
    TrainIrl {
        #[arg(long, value_enum)]
        method: Option<MethodArg>,
        #[arg(long, value_enum, default_value = "folding")]
        task: TaskArg,
        /// Every method with and without pre-training.
        #[arg(long)]
        matrix: bool,
        #[arg(long)]
        pretrained_weights: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Few-shot recognition report.
    Fewshot {
        #[arg(long)]
        pretrained_weights: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the trace-collection service.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        /// Where accepted traces are stored.
        #[arg(long, default_value = "traces")]
        traces: PathBuf,
    },
    /// Check trace documents.
    Validate {
        #[arg(required = true)]
        files: Vec<PathBuf>,
    },
    /// Write the effective configuration.
    InitConfig {
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<String, CliError> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    match cli.command {
        Command::Generate { kind, count, out } => {
            let kind = match kind {
                KindArg::Tangram => GenerateKind::Tangram,
                KindArg::Folding => GenerateKind::Folding,
                KindArg::Room => GenerateKind::Room,
            };
            commands::generate(kind, count.unwrap_or(cfg.tangram_traces), cfg.seed, &out)
        }
        Command::Pretrain { out, traces, embeddings } => {
            cfg.paths.traces = traces.or(cfg.paths.traces);
            cfg.paths.embeddings = embeddings.or(cfg.paths.embeddings);
            commands::pretrain(&cfg, &out)
        }
        Command::TrainIrl { method, task, matrix, pretrained_weights, out } => {
            let req = IrlRequest {
                method: method.map(|m| match m {
                    MethodArg::Sl => Method::Sl,
                    MethodArg::MeIrl => Method::MeIrl,
                    MethodArg::Gail => Method::Gail,
                }),
                task: match task {
                    TaskArg::Folding => IrlTask::Folding,
                    TaskArg::Room => IrlTask::Room,
                },
                matrix,
                pretrained_weights: pretrained_weights.as_deref(),
            };
            commands::train_irl(&cfg, &req, &out)
        }
        Command::Fewshot { pretrained_weights, out } => commands::fewshot(&cfg, pretrained_weights.as_deref(), &out),
        Command::Serve { port, traces } => serve::serve(port, &traces).map(|_| String::new()),
        Command::Validate { files } => commands::validate(&files),
        Command::InitConfig { out } => {
            files::write_atomic(&out, cfg.to_json().as_bytes())?;
            Ok(String::new())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_INVALID as u8 } else { 0 });
        }
    };
    match run(cli) {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
