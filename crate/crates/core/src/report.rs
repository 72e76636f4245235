//! Model-level evaluation over selection instances and linked conversations.

use alloc::vec::Vec;

use crate::corpus::{sliding_windows, Conversation, DisentangleWindow, SelectionInstance};
use crate::eval::{
    binary_prf1, cluster_by_links, exact_match_f1, link_metrics, LinkPrediction, MetricsReport,
    RankingResult,
};
use crate::model::{predict_parent, score_instance, InstanceScores, TopicModel};
use crate::tensor::Real;
use crate::Error;

/// Same-topic probability at or above which a pair is predicted on-topic.
pub const TOPIC_THRESHOLD: f64 = 0.5;

/// Anything that can score selection pools and pick reply-to parents.
pub trait Scorer {
    fn score(&self, instance: &SelectionInstance, max_kept: usize) -> Result<InstanceScores, Error>;
    /// Parent of the window's target, in window coordinates.
    fn parent(&self, window: &DisentangleWindow) -> Result<usize, Error>;
}

impl<T: Real> Scorer for TopicModel<T> {
    fn score(&self, instance: &SelectionInstance, max_kept: usize) -> Result<InstanceScores, Error> {
        score_instance(self, instance, max_kept)
    }

    fn parent(&self, window: &DisentangleWindow) -> Result<usize, Error> {
        predict_parent(self, window).map(|(p, _)| p)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalOptions {
    pub no_answer_threshold: f64,
    pub max_kept: usize,
    pub window: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            no_answer_threshold: crate::eval::DEFAULT_NO_ANSWER_THRESHOLD,
            max_kept: crate::corpus::DEFAULT_MAX_KEPT,
            window: crate::corpus::DEFAULT_WINDOW,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub report: MetricsReport,
    pub rankings: Vec<RankingResult>,
    pub links: Vec<LinkPrediction>,
    /// Targets skipped because their gold parent fell outside the window.
    pub dropped_links: usize,
}

/// Scores every selection instance and every window of the linked
/// conversations. Ranking metrics are omitted without selection data, topic
/// metrics without topic labels, and link metrics without linked conversations.
pub fn evaluate<S: Scorer + ?Sized>(
    scorer: &S,
    selection: &[SelectionInstance],
    conversations: &[Conversation],
    opts: &EvalOptions,
) -> Result<Evaluation, Error> {
    let mut rankings = Vec::with_capacity(selection.len());
    let (mut topic_probs, mut topic_labels) = (Vec::new(), Vec::new());
    for inst in selection {
        let scores = scorer.score(inst, opts.max_kept)?;
        for (j, kept) in scores.kept_context.iter().enumerate() {
            if let Some(labels) = inst.topic_labels(j) {
                topic_probs.extend_from_slice(&scores.topic_probs[j]);
                topic_labels.extend(kept.iter().map(|&k| labels[k]));
            }
        }
        rankings.push(RankingResult::new(
            scores.scores,
            inst.label,
            Some(opts.no_answer_threshold),
        ));
    }

    let mut links = Vec::new();
    let mut dropped_links = 0;
    let (mut pred_clusters, mut gold_clusters) = (Vec::new(), Vec::new());
    let mut offset = 0;
    let mut any_linked = false;
    for conv in conversations {
        let Some(gold) = conv.parents() else {
            continue;
        };
        any_linked = true;
        let set = sliding_windows(conv, opts.window)?;
        dropped_links += set.dropped;
        let mut predicted: Vec<usize> = (0..conv.len()).collect();
        for w in &set.windows {
            let parent = scorer.parent(w)?;
            predicted[w.target_index()] = w.to_source(parent);
            links.push(LinkPrediction {
                window: links.len(),
                predicted_parent: parent,
                gold_parent: w.gold_parent,
                target: w.target(),
            });
        }
        let shift = |clusters: Vec<Vec<usize>>| {
            clusters
                .into_iter()
                .map(|c| c.into_iter().map(|i| i + offset).collect::<Vec<_>>())
        };
        pred_clusters.extend(shift(cluster_by_links(&predicted)?));
        gold_clusters.extend(shift(cluster_by_links(&gold)?));
        offset += conv.len();
    }

    let mut report = MetricsReport::default().with_ranking(&rankings);
    if !topic_labels.is_empty() {
        report = report.with_topic(binary_prf1(&topic_probs, &topic_labels, TOPIC_THRESHOLD));
    }
    if any_linked {
        report = report
            .with_links(&link_metrics(&links))
            .with_exact_match(exact_match_f1(&pred_clusters, &gold_clusters));
    }
    Ok(Evaluation {
        report,
        rankings,
        links,
        dropped_links,
    })
}
