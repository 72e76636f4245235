//! Implementations of the CLI verbs. Reports go to `out`; progress and
//! warnings go to stderr.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::json;
use topictrack_core::corpus::{
    build_stp_pairs, generate_synthetic, sliding_windows, Conversation, DisentangleWindow,
    SelectionInstance, SyntheticSpec, DEFAULT_WINDOW,
};
use topictrack_core::eval::{apply_no_answer, DEFAULT_NO_ANSWER_THRESHOLD};
use topictrack_core::model::{score_instance, TopicModel};
use topictrack_core::optim::{grid_search, pretrain, train_multitask, TrainLog};
use topictrack_core::report::{evaluate, EvalOptions};
use topictrack_core::textenc::Vocab;
use topictrack_core::{seeded_rng, Rng};

use crate::artifact::{load_model, save_model};
use crate::config::{read_json, read_or_default, RunConfig};
use crate::io::{load_conversations, load_selection, write_conversations, write_jsonl, write_selection, Record};
use crate::Error;

/// ChaCha stream for drawing negative same-topic pairs, kept apart from the
/// stream that initializes parameters.
const PAIR_STREAM: u64 = 2;

pub const CONVERSATIONS_FILE: &str = "conversations.jsonl";
pub const STREAMS_FILE: &str = "streams.jsonl";
pub const SELECTION_FILE: &str = "selection.jsonl";

fn emit<T: Serialize>(out: &mut dyn Write, value: &T) -> Result<(), Error> {
    let line = serde_json::to_string(value).map_err(|e| Error::Format(e.to_string()))?;
    writeln!(out, "{line}").map_err(|e| Error::io(Path::new("<stdout>"), e))
}

fn write_log(path: &Path, log: &TrainLog) -> Result<(), Error> {
    for w in &log.warnings {
        eprintln!("warning: {w}");
    }
    write_jsonl(path, &log.steps)
}

/// Default step-log path: the model path with `.steps.jsonl` appended.
pub fn default_log_path(model: &Path) -> PathBuf {
    let mut s = model.as_os_str().to_owned();
    s.push(".steps.jsonl");
    PathBuf::from(s)
}

#[derive(Clone, Debug, Default)]
pub struct SynthArgs {
    pub spec: Option<PathBuf>,
    pub out: PathBuf,
    pub seed: u64,
}

/// Writes detached single-topic conversations, linked entangled streams and
/// selection instances under `args.out`.
pub fn synth(args: &SynthArgs, out: &mut dyn Write) -> Result<(), Error> {
    let spec: SyntheticSpec = read_or_default(args.spec.as_deref())?;
    let corpus = generate_synthetic(&spec, &mut seeded_rng(args.seed))?;
    std::fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    write_conversations(&args.out.join(CONVERSATIONS_FILE), &corpus.conversations)?;
    write_conversations(&args.out.join(STREAMS_FILE), &corpus.streams)?;
    write_selection(&args.out.join(SELECTION_FILE), &corpus.selection)?;
    emit(
        out,
        &json!({
            "conversations": corpus.conversations.len(),
            "streams": corpus.streams.len(),
            "selection": corpus.selection.len(),
        }),
    )
}

fn vocab_from<'a>(utterances: impl Iterator<Item = &'a topictrack_core::corpus::Utterance>, min_count: usize) -> Vocab {
    Vocab::build(
        utterances.flat_map(|u| u.tokens.iter().map(String::as_str)),
        min_count,
    )
}

fn fresh_model(cfg: &RunConfig, vocab: Vocab, seed: u64) -> Result<TopicModel<f32>, Error> {
    Ok(TopicModel::new(cfg.encoder.clone(), vocab, &mut seeded_rng(seed))?)
}

#[derive(Clone, Debug, Default)]
pub struct PretrainArgs {
    pub corpus: PathBuf,
    pub config: Option<PathBuf>,
    pub out: PathBuf,
    pub seed: u64,
    pub epochs: Option<usize>,
    pub log: Option<PathBuf>,
}

/// Builds same-topic pairs from single-topic conversations, pretrains a fresh
/// model on them and saves it with its step log.
pub fn pretrain_cmd(args: &PretrainArgs, out: &mut dyn Write) -> Result<(), Error> {
    let mut cfg: RunConfig = read_or_default(args.config.as_deref())?;
    cfg.train.seed = args.seed;
    if let Some(e) = args.epochs {
        cfg.train.epochs = e;
        cfg.train.total_steps = None;
    }
    cfg.validate()?;
    let conversations = load_conversations(&args.corpus, false)?;
    let vocab = vocab_from(
        conversations.iter().flat_map(|c| &c.utterances),
        cfg.vocab_min_count,
    );
    let mut model = fresh_model(&cfg, vocab, args.seed)?;
    let mut pair_rng: Rng = seeded_rng(args.seed);
    pair_rng.set_stream(PAIR_STREAM);
    let pairs = build_stp_pairs(
        &conversations,
        topictrack_core::corpus::DEFAULT_NEGATIVES_PER_POSITIVE,
        &mut pair_rng,
    )?;
    eprintln!("pretrain: {} pairs, vocabulary of {}", pairs.len(), model.vocab.len());
    let log = pretrain(&mut model, &pairs, &cfg.train)?;
    save_model(&args.out, &model)?;
    write_log(&args.log.clone().unwrap_or_else(|| default_log_path(&args.out)), &log)?;
    emit(
        out,
        &json!({
            "pairs": pairs.len(),
            "steps": log.steps.len(),
            "final_loss": log.steps.last().map(|s| s.loss),
        }),
    )
}

#[derive(Clone, Debug, Default)]
pub struct TrainArgs {
    pub selection: Option<PathBuf>,
    pub windows: Option<PathBuf>,
    pub dev: Option<PathBuf>,
    pub init: Option<PathBuf>,
    pub config: Option<PathBuf>,
    pub out: PathBuf,
    pub grid: bool,
    pub seed: u64,
    pub log: Option<PathBuf>,
}

/// Windows over every linked conversation, with the number of targets dropped
/// because their parent fell outside the window.
pub fn windows_of(conversations: &[Conversation], window: usize) -> Result<(Vec<DisentangleWindow>, usize), Error> {
    let mut all = Vec::new();
    let mut dropped = 0;
    for c in conversations {
        let set = sliding_windows(c, window)?;
        dropped += set.dropped;
        all.extend(set.windows);
    }
    Ok((all, dropped))
}

fn load_optional_selection(path: Option<&Path>) -> Result<Vec<SelectionInstance>, Error> {
    path.map_or_else(|| Ok(Vec::new()), load_selection)
}

fn load_optional_conversations(path: Option<&Path>) -> Result<Vec<Conversation>, Error> {
    path.map_or_else(|| Ok(Vec::new()), |p| load_conversations(p, true))
}

/// Multi-task fine-tuning from `--init` or a fresh model; `--grid` trains one
/// model per weight triple and keeps the best by dev Recall@1.
pub fn train_cmd(args: &TrainArgs, out: &mut dyn Write) -> Result<(), Error> {
    let mut cfg: RunConfig = read_or_default(args.config.as_deref())?;
    cfg.train.seed = args.seed;
    cfg.train.grid_search |= args.grid;
    cfg.validate()?;
    let selection = load_optional_selection(args.selection.as_deref())?;
    let conversations = load_optional_conversations(args.windows.as_deref())?;
    let (windows, dropped) = windows_of(&conversations, DEFAULT_WINDOW)?;
    if selection.is_empty() && windows.is_empty() {
        return Err(Error::Usage("all training datasets are empty".into()));
    }
    if dropped > 0 {
        eprintln!("train: dropped {dropped} targets whose parent lies outside the window");
    }
    let mut model = match &args.init {
        Some(path) => load_model(path)?,
        None => {
            let utterances = selection
                .iter()
                .flat_map(|s| s.context.utterances.iter().chain(&s.candidates))
                .chain(conversations.iter().flat_map(|c| &c.utterances));
            fresh_model(&cfg, vocab_from(utterances, cfg.vocab_min_count), args.seed)?
        }
    };

    if cfg.train.grid_search {
        let dev = match &args.dev {
            Some(p) => load_selection(p)?,
            None => selection.clone(),
        };
        let result = grid_search(&model, &selection, &windows, &dev, &cfg.train)?;
        save_model(&args.out, &result.best_model)?;
        let best = &result.rows[result.best];
        return emit(out, &json!({ "rows": result.rows, "best": best }));
    }

    let log = train_multitask(&mut model, &selection, &windows, &cfg.train)?;
    save_model(&args.out, &model)?;
    write_log(&args.log.clone().unwrap_or_else(|| default_log_path(&args.out)), &log)?;
    emit(
        out,
        &json!({
            "selection": selection.len(),
            "windows": windows.len(),
            "dropped_links": dropped,
            "steps": log.steps.len(),
            "final_loss": log.steps.last().map(|s| s.loss),
        }),
    )
}

#[derive(Clone, Debug, Default)]
pub struct EvalArgs {
    pub model: PathBuf,
    pub selection: Option<PathBuf>,
    pub windows: Option<PathBuf>,
    pub config: Option<PathBuf>,
    /// Overrides the config's no-answer threshold.
    pub threshold: Option<f64>,
}

pub fn eval_cmd(args: &EvalArgs, out: &mut dyn Write) -> Result<(), Error> {
    let cfg: RunConfig = read_or_default(args.config.as_deref())?;
    let model = load_model(&args.model)?;
    let selection = load_optional_selection(args.selection.as_deref())?;
    let conversations = load_optional_conversations(args.windows.as_deref())?;
    let opts = EvalOptions {
        no_answer_threshold: args.threshold.unwrap_or(cfg.train.no_answer_threshold),
        max_kept: cfg.train.max_kept,
        window: DEFAULT_WINDOW,
    };
    let ev = evaluate(&model, &selection, &conversations, &opts)?;
    emit(out, &ev.report)
}

#[derive(Clone, Debug)]
pub struct RankArgs {
    pub model: PathBuf,
    pub context_json: PathBuf,
    pub threshold: f64,
    pub max_kept: usize,
}

impl Default for RankArgs {
    fn default() -> Self {
        Self {
            model: PathBuf::new(),
            context_json: PathBuf::new(),
            threshold: DEFAULT_NO_ANSWER_THRESHOLD,
            max_kept: topictrack_core::corpus::DEFAULT_MAX_KEPT,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RankedCandidate {
    pub candidate: usize,
    pub speaker: String,
    pub text: String,
    pub score: f64,
}

/// Ranks the candidates of one selection record (its `label` is optional).
/// `prediction` is the top candidate, or `"none"` when every score falls
/// below the threshold.
pub fn rank_cmd(args: &RankArgs, out: &mut dyn Write) -> Result<(), Error> {
    let model = load_model(&args.model)?;
    let mut record: Record = read_json(&args.context_json)?;
    record.label.get_or_insert(-1);
    let inst = record.to_selection().map_err(|e| match e {
        topictrack_core::Error::Invalid { field, reason } => Error::Schema {
            line: 1,
            field: field.to_string(),
            reason,
        },
        other => other.into(),
    })?;
    let scores = score_instance(&model, &inst, args.max_kept)?.scores;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let ranked: Vec<RankedCandidate> = order
        .iter()
        .map(|&j| RankedCandidate {
            candidate: j,
            speaker: inst.candidates[j].speaker.clone(),
            text: inst.candidates[j].text.clone(),
            score: scores[j],
        })
        .collect();
    let none = apply_no_answer(&scores, args.threshold);
    let prediction = if none { json!("none") } else { json!(order[0]) };
    emit(out, &json!({ "ranked": ranked, "prediction": prediction }))
}
