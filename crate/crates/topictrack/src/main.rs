use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use topictrack::commands::{
    eval_cmd, pretrain_cmd, rank_cmd, synth, train_cmd, EvalArgs, PretrainArgs, RankArgs, SynthArgs, TrainArgs,
};
use topictrack::core::eval::DEFAULT_NO_ANSWER_THRESHOLD;

/// Topic-tracking models for multi-party dialogue.
///
/// Reports and metrics are printed to stdout as JSON; progress and errors go to
/// stderr. Randomness comes only from --seed, which defaults to 0.
#[derive(Parser)]
#[command(name = "topictrack", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic entangled-conversation corpus.
    Synth {
        /// SyntheticSpec JSON; defaults apply to omitted fields.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Pretrain with masked-LM and same-topic prediction.
    Pretrain {
        /// Single-topic conversations (JSONL).
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Overrides train.epochs from the config.
        #[arg(long)]
        epochs: Option<usize>,
        /// Step log path; defaults to <out>.steps.jsonl.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Multi-task fine-tuning.
    Train {
        #[arg(long)]
        selection: Option<PathBuf>,
        /// Conversations with reply-to links (JSONL).
        #[arg(long)]
        windows: Option<PathBuf>,
        /// Dev selection set for --grid; defaults to the training selection.
        #[arg(long)]
        dev: Option<PathBuf>,
        /// Starting model; a fresh one is built when omitted.
        #[arg(long)]
        init: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Search the loss-weight grid and keep the best model.
        #[arg(long)]
        grid: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Print metrics for a model.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        selection: Option<PathBuf>,
        #[arg(long)]
        windows: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        /// No-answer threshold; overrides the config.
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Rank the candidates of one selection record.
    Rank {
        #[arg(long)]
        model: PathBuf,
        #[arg(long = "context-json")]
        context_json: PathBuf,
        #[arg(long, default_value_t = DEFAULT_NO_ANSWER_THRESHOLD)]
        threshold: f64,
        #[arg(long, default_value_t = topictrack::core::corpus::DEFAULT_MAX_KEPT)]
        max_kept: usize,
    },
}

fn run(cli: Cli) -> Result<(), topictrack::Error> {
    let mut out = std::io::stdout().lock();
    match cli.command {
        Command::Synth { spec, out: dir, seed } => synth(&SynthArgs { spec, out: dir, seed }, &mut out),
        Command::Pretrain {
            corpus,
            config,
            out: path,
            seed,
            epochs,
            log,
        } => pretrain_cmd(
            &PretrainArgs {
                corpus,
                config,
                out: path,
                seed,
                epochs,
                log,
            },
            &mut out,
        ),
        Command::Train {
            selection,
            windows,
            dev,
            init,
            config,
            out: path,
            grid,
            seed,
            log,
        } => train_cmd(
            &TrainArgs {
                selection,
                windows,
                dev,
                init,
                config,
                out: path,
                grid,
                seed,
                log,
            },
            &mut out,
        ),
        Command::Eval {
            model,
            selection,
            windows,
            config,
            threshold,
        } => eval_cmd(
            &EvalArgs {
                model,
                selection,
                windows,
                config,
                threshold,
            },
            &mut out,
        ),
        Command::Rank {
            model,
            context_json,
            threshold,
            max_kept,
        } => rank_cmd(
            &RankArgs {
                model,
                context_json,
                threshold,
                max_kept,
            },
            &mut out,
        ),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let message = e.to_string();
            let first = message.lines().next().unwrap_or("invalid arguments");
            eprintln!("{}", serde_json::json!({ "error": "usage", "message": first }));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json_line());
            ExitCode::FAILURE
        }
    }
}
