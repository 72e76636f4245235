//! Acceptance suite. Each test prints one `PASS`/`FAIL criterion N` line and
//! then asserts it. Tests are serialized so the runtime budgets measure one
//! criterion at a time.

use std::io::Write as _;
use std::path::Path;
use std::process::Command;
use std::sync::{Mutex, MutexGuard, OnceLock};
use std::time::{Duration, Instant};

use rand::Rng as _;
use topictrack::commands::windows_of;
use topictrack_core::corpus::{
    generate_synthetic, sliding_windows, Conversation, DisentangleWindow, SelectionInstance, SyntheticCorpus,
    SyntheticSpec, DEFAULT_MAX_KEPT, DEFAULT_WINDOW,
};
use topictrack_core::encoder::EncoderConfig;
use topictrack_core::eval::{cluster_by_links, exact_match_f1, mrr, recall_at_n, RankingResult};
use topictrack_core::graph::Graph;
use topictrack_core::heads::{esim_features, multitask_loss, self_attend, MultiTaskWeights};
use topictrack_core::model::{predict_parent, TopicModel};
use topictrack_core::optim::{
    check_gradients, evaluate_multitask_loss, pretrain, pretrain_pair_losses, selection_losses, train_multitask,
    window_loss, TrainConfig, DEFAULT_MASK_PROB,
};
use topictrack_core::report::{evaluate, EvalOptions, Evaluation};
use topictrack_core::textenc::{mask_for_mlm, EncodedPair, Vocab, MASK, NUM_SPECIAL};
use topictrack_core::topic::encode_context;
use topictrack_core::{seeded_rng, Rng};

static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

/// Writes to the raw stderr handle so the line shows up even when the test
/// harness captures output.
fn verdict(criterion: u32, pass: bool, detail: &str) {
    let status = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr().lock(), "{status} criterion {criterion}: {detail}");
    assert!(pass, "criterion {criterion} failed: {detail}");
}

fn vocab_of(corpus: &SyntheticCorpus) -> Vocab {
    let tokens = corpus.streams.iter().flat_map(|s| &s.utterances).flat_map(|u| u.tokens.iter());
    Vocab::build(tokens.map(String::as_str), 1)
}

fn tiny_config() -> EncoderConfig {
    EncoderConfig {
        d_model: 8,
        n_layers: 1,
        n_heads: 2,
        d_ff: 16,
        dropout: 0.0,
        ..EncoderConfig::default()
    }
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    xs[xs.len() / 2]
}

// ---------------------------------------------------------------- criterion 1

const GRAD_BUDGET: Duration = Duration::from_secs(120);
const GRAD_TOLERANCE: f64 = 1e-4;

#[test]
fn criterion_01_gradient_suite() {
    let _guard = serial();
    let start = Instant::now();
    let spec = SyntheticSpec {
        n_streams: 2,
        context_len: 3,
        pool_size: 2,
        ..SyntheticSpec::default()
    };
    let corpus = generate_synthetic(&spec, &mut seeded_rng(3)).unwrap();
    let model = TopicModel::<f64>::new(tiny_config(), vocab_of(&corpus), &mut seeded_rng(1)).unwrap();
    let inst = &corpus.selection[0];
    // Three utterances ending at a target that replies to an earlier one.
    let window = windows_of(&corpus.streams, DEFAULT_WINDOW)
        .unwrap()
        .0
        .into_iter()
        .filter(|w| w.utterances.len() >= 3 && w.gold_parent + 3 >= w.utterances.len() && w.gold_parent != w.target())
        .map(|w| {
            let cut = w.utterances.len() - 3;
            DisentangleWindow {
                utterances: w.utterances[cut..].to_vec(),
                gold_parent: w.gold_parent - cut,
                start: w.start + cut,
                ..w
            }
        })
        .next()
        .unwrap();
    let pair = corpus
        .stp_pairs
        .iter()
        .find(|p| p.label == topictrack_core::corpus::StpLabel::Positive)
        .unwrap();
    let mask_rng = seeded_rng(5);

    let mut worst: Vec<(&str, f64, bool)> = Vec::new();
    let mut record = |name, report: topictrack_core::optim::GradCheckReport| {
        worst.push((name, report.max_relative_error, report.checked > 0));
    };
    for (name, mlm) in [("mlm", true), ("stp", false)] {
        let report = check_gradients(&model.params, 12, |g| {
            let (stp, m) = pretrain_pair_losses(g, &model, pair, 0.5, &mut mask_rng.clone(), None)?;
            Ok(if mlm { m.unwrap() } else { stp })
        })
        .unwrap();
        record(name, report);
    }
    let tasks = [
        ("topic", MultiTaskWeights::new(0.0, 1.0, 0.0).unwrap()),
        ("response", MultiTaskWeights::RESPONSE_ONLY),
        ("disentangle", MultiTaskWeights::new(0.0, 0.0, 1.0).unwrap()),
        ("composite", MultiTaskWeights::new(0.7, 0.5, 0.3).unwrap()),
    ];
    for (name, weights) in tasks {
        let report = check_gradients(&model.params, 12, |g| {
            let (rs, tp) = selection_losses(g, &model, inst, &MultiTaskWeights::default(), DEFAULT_MAX_KEPT, None)?;
            let dis = (weights.gamma > 0.0).then(|| window_loss(g, &model, &window, None)).transpose()?;
            multitask_loss(g, &weights, rs, tp, dis)
        })
        .unwrap();
        record(name, report);
    }
    let elapsed = start.elapsed();
    let max = worst.iter().map(|w| w.1).fold(0.0, f64::max);
    let pass = worst.iter().all(|w| w.2 && w.1 <= GRAD_TOLERANCE) && elapsed < GRAD_BUDGET;
    let per_loss: Vec<String> = worst.iter().map(|(n, e, _)| format!("{n} {e:.1e}")).collect();
    verdict(
        1,
        pass,
        &format!(
            "max rel err {max:.2e} <= {GRAD_TOLERANCE:.0e} [{}], {:.1}s < {}s",
            per_loss.join(", "),
            elapsed.as_secs_f64(),
            GRAD_BUDGET.as_secs()
        ),
    );
}

// ---------------------------------------------------------------- criterion 2

/// Full-sort oracle: descending score, ties to the smaller index. Returns
/// `(hit@1, hit@5, hit@10, reciprocal rank)`.
fn oracle_pool(scores: &[f64], label: i64, threshold: Option<f64>) -> ([bool; 3], f64) {
    let best = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let none = threshold.is_some_and(|t| best < t);
    if label < 0 {
        return ([none; 3], if none { 1.0 } else { 0.0 });
    }
    if none {
        return ([false; 3], 0.0);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
    let rank = order.iter().position(|&i| i as i64 == label).unwrap() + 1;
    ([rank <= 1, rank <= 5, rank <= 10], 1.0 / rank as f64)
}

#[test]
fn criterion_02_metric_oracle() {
    let _guard = serial();
    let mut rng = seeded_rng(2024);
    let mut results = Vec::new();
    let (mut hits, mut rr) = ([0usize; 3], 0.0);
    for _ in 0..1000 {
        // Coarse score levels guarantee ties in every pool.
        let scores: Vec<f64> = (0..100).map(|_| f64::from(rng.gen_range(0..20u8)) / 20.0).collect();
        let label = if rng.gen_bool(0.1) { -1 } else { rng.gen_range(0..100) };
        let threshold = rng.gen_bool(0.3).then(|| rng.gen_range(0.80..1.0));
        let (h, r) = oracle_pool(&scores, label, threshold);
        for (total, hit) in hits.iter_mut().zip(h) {
            *total += usize::from(hit);
        }
        rr += r;
        results.push(RankingResult::new(scores, label, threshold));
    }
    let oracle = [hits[0] as f64 / 1000.0, hits[1] as f64 / 1000.0, hits[2] as f64 / 1000.0, rr / 1000.0];
    let got = [recall_at_n(&results, 1), recall_at_n(&results, 5), recall_at_n(&results, 10), mrr(&results)];
    let unlabeled = results.iter().filter(|r| r.label < 0).count();
    verdict(
        2,
        got == oracle,
        &format!(
            "R@1/5/10/MRR {:?} == oracle {:?} on 1000 pools of 100 ({unlabeled} unlabeled)",
            got, oracle
        ),
    );
}

// ---------------------------------------------------------------- criterion 3

const MLM_MIN_TOKENS: usize = 100_000;

#[test]
fn criterion_03_mlm_statistics() {
    let _guard = serial();
    let vocab_size = 50_000;
    let mut rng = seeded_rng(3);
    let mut mask_rng = seeded_rng(4);
    let (mut maskable, mut selected, mut to_mask, mut random, mut kept) = (0usize, 0usize, 0, 0, 0);
    while maskable < MLM_MIN_TOKENS {
        let (a, b) = (rng.gen_range(1..60), rng.gen_range(1..60));
        let mut token_ids = vec![topictrack_core::textenc::CLS];
        token_ids.extend((0..a).map(|_| rng.gen_range(NUM_SPECIAL..vocab_size)));
        token_ids.push(topictrack_core::textenc::SEP);
        token_ids.extend((0..b).map(|_| rng.gen_range(NUM_SPECIAL..vocab_size)));
        token_ids.push(topictrack_core::textenc::SEP);
        let n = token_ids.len();
        let pair = EncodedPair {
            segment_ids: (0..n).map(|i| u8::from(i > a + 1)).collect(),
            attention_mask: vec![1; n],
            token_ids,
        };
        maskable += a + b;
        let batch = mask_for_mlm(&pair, vocab_size, &mut mask_rng, DEFAULT_MASK_PROB);
        for (i, original) in batch.labeled_positions() {
            selected += 1;
            match batch.inputs.token_ids[i] {
                MASK => to_mask += 1,
                id if id == original => kept += 1,
                _ => random += 1,
            }
        }
    }
    let frac = selected as f64 / maskable as f64;
    let share = |k: usize| k as f64 / selected as f64;
    let (m, r, k) = (share(to_mask), share(random), share(kept));
    let pass = (0.14..=0.16).contains(&frac)
        && (m - 0.8).abs() <= 0.02
        && (r - 0.1).abs() <= 0.02
        && (k - 0.1).abs() <= 0.02;
    verdict(
        3,
        pass,
        &format!(
            "{maskable} tokens, masked fraction {frac:.4} in [0.14, 0.16]; mask/random/keep {m:.4}/{r:.4}/{k:.4} within 0.02 of 0.8/0.1/0.1"
        ),
    );
}

// ---------------------------------------------------------------- criterion 4

const OVERFIT_TARGET: f64 = 0.05;
const OVERFIT_MAX_STEPS: usize = 2000;
const OVERFIT_BUDGET: Duration = Duration::from_secs(300);

#[test]
fn criterion_04_overfit_frozen_batch() {
    let _guard = serial();
    let start = Instant::now();
    let corpus = generate_synthetic(&SyntheticSpec::default(), &mut seeded_rng(0)).unwrap();
    let selection: Vec<SelectionInstance> = corpus.selection[..8].to_vec();
    let windows: Vec<DisentangleWindow> = windows_of(&corpus.streams, DEFAULT_WINDOW).unwrap().0[..8].to_vec();
    let mut model = TopicModel::<f32>::new(EncoderConfig::default(), vocab_of(&corpus), &mut seeded_rng(1)).unwrap();
    let cfg = TrainConfig {
        total_steps: Some(OVERFIT_MAX_STEPS),
        batch_size: 8,
        dropout: Some(0.0),
        target_loss: Some(OVERFIT_TARGET),
        ..TrainConfig::default()
    };
    let log = train_multitask(&mut model, &selection, &windows, &cfg).unwrap();
    let last = log.steps.last().unwrap();
    let recomputed =
        evaluate_multitask_loss(&model, &selection, &windows, &cfg.weights, cfg.max_kept).unwrap();
    let elapsed = start.elapsed();
    let pass = recomputed < OVERFIT_TARGET && log.steps.len() <= OVERFIT_MAX_STEPS && elapsed < OVERFIT_BUDGET;
    verdict(
        4,
        pass,
        &format!(
            "combined loss {recomputed:.4} (logged {:.4}) < {OVERFIT_TARGET} after {} steps <= {OVERFIT_MAX_STEPS}, {:.1}s < {}s",
            last.loss,
            log.steps.len(),
            elapsed.as_secs_f64(),
            OVERFIT_BUDGET.as_secs()
        ),
    );
}

// ------------------------------------------------------------ criteria 5 to 7

const E2E_TRAIN_STREAMS: usize = 48;
const E2E_TEST_SEED: u64 = 100;
const E2E_INIT_SEED: u64 = 1;
const E2E_PRETRAIN_EPOCHS: usize = 6;
const E2E_FINETUNE_EPOCHS: usize = 6;
const E2E_BATCH: usize = 8;
const E2E_BUDGET: Duration = Duration::from_secs(15 * 60);
const TP_F1_MIN: f64 = 0.95;
const R1_MIN: f64 = 0.90;
const LINK_ACC_MIN: f64 = 0.90;
const ABLATION_SEEDS: u64 = 5;
const ABLATION_EPOCHS: usize = 1;
const PRETRAIN_GAIN_MIN: f64 = 0.05;

struct Benchmark {
    train: SyntheticCorpus,
    test: SyntheticCorpus,
    vocab: Vocab,
    train_windows: Vec<DisentangleWindow>,
    pretrained: TopicModel<f32>,
    pretrain_time: Duration,
}

/// Synthetic benchmark with an STP-pretrained model, built once and shared.
fn benchmark() -> &'static Benchmark {
    static CELL: OnceLock<Benchmark> = OnceLock::new();
    CELL.get_or_init(|| {
        let start = Instant::now();
        let spec = SyntheticSpec {
            n_streams: E2E_TRAIN_STREAMS,
            ..SyntheticSpec::default()
        };
        let train = generate_synthetic(&spec, &mut seeded_rng(0)).unwrap();
        let test = generate_synthetic(&SyntheticSpec::default(), &mut seeded_rng(E2E_TEST_SEED)).unwrap();
        let vocab = vocab_of(&train);
        let train_windows = windows_of(&train.streams, DEFAULT_WINDOW).unwrap().0;
        let mut pretrained =
            TopicModel::new(EncoderConfig::default(), vocab.clone(), &mut seeded_rng(E2E_INIT_SEED)).unwrap();
        let cfg = TrainConfig {
            epochs: E2E_PRETRAIN_EPOCHS,
            batch_size: 4,
            ..TrainConfig::default()
        };
        pretrain(&mut pretrained, &train.stp_pairs, &cfg).unwrap();
        Benchmark {
            train,
            test,
            vocab,
            train_windows,
            pretrained,
            pretrain_time: start.elapsed(),
        }
    })
}

fn fine_tune(b: &Benchmark, init: &TopicModel<f32>, weights: MultiTaskWeights, epochs: usize, seed: u64) -> TopicModel<f32> {
    let mut model = init.clone();
    let cfg = TrainConfig {
        epochs,
        batch_size: E2E_BATCH,
        dropout: Some(0.1),
        weights,
        seed,
        ..TrainConfig::default()
    };
    train_multitask(&mut model, &b.train.selection, &b.train_windows, &cfg).unwrap();
    model
}

fn test_metrics(b: &Benchmark, model: &TopicModel<f32>, links: bool) -> Evaluation {
    test_metrics_with(b, model, links, &EvalOptions::default())
}

fn test_metrics_with(b: &Benchmark, model: &TopicModel<f32>, links: bool, opts: &EvalOptions) -> Evaluation {
    let conversations: &[Conversation] = if links { &b.test.streams } else { &[] };
    evaluate(model, &b.test.selection, conversations, opts).unwrap()
}

#[test]
fn criterion_05_synthetic_end_to_end() {
    let _guard = serial();
    let b = benchmark();
    let start = Instant::now();
    let tuned = fine_tune(b, &b.pretrained, MultiTaskWeights::default(), E2E_FINETUNE_EPOCHS, 0);
    let ev = test_metrics(b, &tuned, true);
    let elapsed = b.pretrain_time + start.elapsed();
    let r = &ev.report;
    let (tp, r1, link) = (r.tp_f1.unwrap(), r.recall_at_1.unwrap(), r.link_accuracy.unwrap());
    let pool = b.test.selection[0].candidates.len();
    println!(
        "criterion 5 detail: R@5 {:.3} MRR {:.3} link F1 {:.3} self-link F1 {:.3} exact-match F1 {:.3}, {} test windows",
        r.recall_at_5.unwrap(),
        r.mrr.unwrap(),
        r.link_f1.unwrap(),
        r.self_link_f1.unwrap(),
        r.exact_match_f1.unwrap(),
        ev.links.len()
    );
    let pass = tp >= TP_F1_MIN && r1 >= R1_MIN && link >= LINK_ACC_MIN && elapsed < E2E_BUDGET;
    verdict(
        5,
        pass,
        &format!(
            "TP F1 {tp:.3} >= {TP_F1_MIN}; R@1 {r1:.3} >= {R1_MIN} (chance {:.2}); link accuracy {link:.3} >= {LINK_ACC_MIN}; {:.0}s < {}s",
            1.0 / pool as f64,
            elapsed.as_secs_f64(),
            E2E_BUDGET.as_secs()
        ),
    );
}

#[test]
fn criterion_06_ablation_direction() {
    let _guard = serial();
    let b = benchmark();
    // Every test pool holds its true response, so rank without a no-answer
    // cutoff; otherwise under-confident variants score 0 regardless of order.
    assert!(b.test.selection.iter().all(|s| s.label >= 0));
    let ranking = EvalOptions {
        no_answer_threshold: f64::NEG_INFINITY,
        ..EvalOptions::default()
    };
    let variants = [
        ("-TP-D", MultiTaskWeights::new(1.0, 0.0, 0.0).unwrap()),
        ("-D", MultiTaskWeights::new(1.0, 1.0, 0.0).unwrap()),
        ("-TP", MultiTaskWeights::new(1.0, 0.0, 1.0).unwrap()),
        ("full", MultiTaskWeights::new(1.0, 1.0, 1.0).unwrap()),
    ];
    let medians: Vec<(&str, f64)> = variants
        .iter()
        .map(|&(name, w)| {
            let r1s = (0..ABLATION_SEEDS)
                .map(|seed| {
                    let model = fine_tune(b, &b.pretrained, w, ABLATION_EPOCHS, seed);
                    test_metrics_with(b, &model, false, &ranking).report.recall_at_1.unwrap()
                })
                .collect();
            (name, median(r1s))
        })
        .collect();
    let inversions: Vec<String> = medians
        .windows(2)
        .filter(|w| w[0].1 > w[1].1)
        .map(|w| format!("{} > {}", w[0].0, w[1].0))
        .collect();
    let table: Vec<String> = medians.iter().map(|(n, r)| format!("{n} {r:.3}")).collect();
    let (single, full) = (medians[0].1, medians[3].1);
    verdict(
        6,
        full >= single,
        &format!(
            "median R@1 over {ABLATION_SEEDS} seeds [{}]; full {full:.3} >= single-task {single:.3}; inversions: {}",
            table.join(", "),
            if inversions.is_empty() { "none".to_string() } else { inversions.join(", ") }
        ),
    );
}

#[test]
fn criterion_07_pretraining_effect() {
    let _guard = serial();
    let b = benchmark();
    let (mut pre, mut rand) = (Vec::new(), Vec::new());
    for seed in 0..ABLATION_SEEDS {
        let tuned = fine_tune(b, &b.pretrained, MultiTaskWeights::default(), ABLATION_EPOCHS, seed);
        pre.push(test_metrics(b, &tuned, false).report.tp_f1.unwrap());
        let fresh = TopicModel::new(EncoderConfig::default(), b.vocab.clone(), &mut seeded_rng(seed)).unwrap();
        let tuned = fine_tune(b, &fresh, MultiTaskWeights::default(), ABLATION_EPOCHS, seed);
        rand.push(test_metrics(b, &tuned, false).report.tp_f1.unwrap());
    }
    let (p, r) = (median(pre.clone()), median(rand.clone()));
    verdict(
        7,
        p - r >= PRETRAIN_GAIN_MIN,
        &format!(
            "median TP F1 pretrained {p:.3} vs random init {r:.3}, gain {:.3} >= {PRETRAIN_GAIN_MIN} (per seed {pre:.3?} vs {rand:.3?})",
            p - r
        ),
    );
}

// ---------------------------------------------------------------- criterion 8

#[test]
fn criterion_08_clustering() {
    let _guard = serial();
    let specs = [
        SyntheticSpec::default(),
        SyntheticSpec {
            conversations_per_stream: 3,
            interleave_prob: 0.9,
            ..SyntheticSpec::default()
        },
        SyntheticSpec {
            n_streams: 40,
            conversations_per_stream: 4,
            utterances_per_conversation: (2, 9),
            ..SyntheticSpec::default()
        },
    ];
    let (mut corpora, mut streams, mut exact) = (0, 0, 0);
    for (i, spec) in specs.iter().enumerate() {
        for seed in 0..5 {
            let corpus = generate_synthetic(spec, &mut seeded_rng(seed * 10 + i as u64)).unwrap();
            corpora += 1;
            for stream in &corpus.streams {
                let predicted = cluster_by_links(&stream.parents().unwrap()).unwrap();
                // Gold partition: conversations are the topic groups of a stream.
                let topics = stream.topic_ids.as_ref().unwrap();
                let mut gold: Vec<Vec<usize>> = Vec::new();
                for (k, t) in topics.iter().enumerate() {
                    match gold.iter_mut().find(|g| topics[g[0]] == *t) {
                        Some(g) => g.push(k),
                        None => gold.push(vec![k]),
                    }
                }
                let em = exact_match_f1(&predicted, &gold);
                streams += 1;
                exact += usize::from(predicted == gold && (em.precision, em.recall, em.f1) == (1.0, 1.0, 1.0));
            }
        }
    }
    let n = 17;
    let singletons = cluster_by_links(&(0..n).collect::<Vec<_>>()).unwrap();
    let all_single = singletons.len() == n && singletons.iter().enumerate().all(|(i, c)| c == &vec![i]);
    verdict(
        8,
        exact == streams && all_single,
        &format!(
            "gold links reproduce the gold partition with exact-match F1 (1,1,1) on {exact}/{streams} streams of {corpora} corpora; all-self input of {n} gives {} singletons",
            singletons.len()
        ),
    );
}

// ---------------------------------------------------------------- criterion 9

fn cli(args: &[&str], dir: &Path) -> Vec<u8> {
    let out = Command::new(env!("CARGO_BIN_EXE_topictrack"))
        .args(args)
        .current_dir(dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out.stdout
}

/// synth, pretrain, train and eval through the CLI in `dir`.
fn pipeline(dir: &Path) -> (Vec<u8>, Vec<u8>, Vec<u8>) {
    std::fs::write(
        dir.join("spec.json"),
        r#"{"n_streams": 4, "context_len": 3, "pool_size": 3}"#,
    )
    .unwrap();
    std::fs::write(
        dir.join("config.json"),
        r#"{"encoder": {"d_model": 8, "n_layers": 1, "n_heads": 2, "d_ff": 16}, "train": {"epochs": 2, "batch_size": 4}}"#,
    )
    .unwrap();
    cli(&["synth", "--spec", "spec.json", "--out", "data", "--seed", "7"], dir);
    cli(
        &["pretrain", "--corpus", "data/conversations.jsonl", "--config", "config.json", "--out", "pre.bin", "--seed", "7"],
        dir,
    );
    cli(
        &[
            "train", "--selection", "data/selection.jsonl", "--windows", "data/streams.jsonl", "--init", "pre.bin",
            "--config", "config.json", "--out", "model.bin", "--seed", "7",
        ],
        dir,
    );
    let report = cli(
        &["eval", "--model", "model.bin", "--selection", "data/selection.jsonl", "--windows", "data/streams.jsonl"],
        dir,
    );
    let pre = std::fs::read(dir.join("pre.bin")).unwrap();
    let model = std::fs::read(dir.join("model.bin")).unwrap();
    (pre, model, report)
}

#[test]
fn criterion_09_determinism() {
    let _guard = serial();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let first = pipeline(a.path());
    let second = pipeline(b.path());
    let same_data = ["conversations.jsonl", "streams.jsonl", "selection.jsonl"]
        .iter()
        .all(|f| std::fs::read(a.path().join("data").join(f)).unwrap() == std::fs::read(b.path().join("data").join(f)).unwrap());
    let trained = first.0 != first.1;
    verdict(
        9,
        first == second && same_data && trained,
        &format!(
            "two CLI runs with seed 7: corpora identical {same_data}, pretrained artifact identical {} ({} bytes), fine-tuned artifact identical {}, report identical {}",
            first.0 == second.0,
            first.0.len(),
            first.1 == second.1,
            first.2 == second.2
        ),
    );
}

// --------------------------------------------------------------- criterion 10

#[test]
fn criterion_10_self_link_mechanics() {
    let _guard = serial();
    let corpus = generate_synthetic(&SyntheticSpec::default(), &mut seeded_rng(10)).unwrap();
    let vocab = vocab_of(&corpus);
    let (mut rows_checked, mut zero_blocks, mut singles, mut certain) = (0, 0, 0, 0);
    for seed in 0..3 {
        let model = TopicModel::<f32>::new(EncoderConfig::default(), vocab.clone(), &mut seeded_rng(seed)).unwrap();
        for stream in corpus.streams.iter().take(4) {
            for w in sliding_windows(stream, DEFAULT_WINDOW).unwrap().windows {
                let mut g = Graph::new(&model.params);
                let context = Conversation {
                    id: w.source_conversation_id.clone(),
                    utterances: w.utterances.clone(),
                    topic_ids: None,
                    links: None,
                };
                let target = &w.utterances[w.target()];
                let topic = encode_context(&mut g, &model, &context, target, None::<&mut Rng>).unwrap();
                let attended = self_attend(&mut g, topic, &model.ids.heads);
                let features = esim_features(&mut g, attended);
                let m = g.value(features);
                let width = m.cols() / 4;
                rows_checked += 1;
                zero_blocks += usize::from(m.row(m.rows() - 1)[3 * width..].iter().all(|&x| x == 0.0));

                let single = DisentangleWindow {
                    utterances: vec![target.clone()],
                    gold_parent: 0,
                    start: w.target_index(),
                    ..w.clone()
                };
                let (parent, dist) = predict_parent(&model, &single).unwrap();
                singles += 1;
                certain += usize::from(parent == 0 && dist == vec![1.0]);
            }
        }
    }
    verdict(
        10,
        zero_blocks == rows_checked && certain == singles,
        &format!(
            "self-row difference block exactly zero in {zero_blocks}/{rows_checked} windows; size-1 windows give probability 1 to self in {certain}/{singles}"
        ),
    );
}
