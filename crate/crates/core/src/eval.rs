//! Ranking, classification, link and clustering metrics, plus sentence BLEU.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::Error;

pub const DEFAULT_NO_ANSWER_THRESHOLD: f64 = 0.90;
/// Candidate no-answer thresholds: 0.70, 0.75, …, 0.95.
pub const NO_ANSWER_THRESHOLDS: [f64; 6] = [0.70, 0.75, 0.80, 0.85, 0.90, 0.95];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankingResult {
    pub scores: Vec<f64>,
    /// Gold candidate index, or -1 when the pool has no correct response.
    pub label: i64,
    pub predicted_none: bool,
}

impl RankingResult {
    pub fn new(scores: Vec<f64>, label: i64, threshold: Option<f64>) -> Self {
        let predicted_none = threshold.is_some_and(|t| apply_no_answer(&scores, t));
        Self {
            scores,
            label,
            predicted_none,
        }
    }

    /// Rank of the gold candidate (1-based), `None` for unlabeled pools.
    pub fn gold_rank(&self) -> Option<usize> {
        let gold = usize::try_from(self.label).ok()?;
        Some(rank_of(&self.scores, gold))
    }

    /// Whether the instance counts as correct at cut-off `n`.
    pub fn hit_at(&self, n: usize) -> bool {
        match self.gold_rank() {
            None => self.predicted_none,
            Some(_) if self.predicted_none => false,
            Some(rank) => rank <= n,
        }
    }

    pub fn reciprocal_rank(&self) -> f64 {
        match self.gold_rank() {
            None => f64::from(u8::from(self.predicted_none)),
            Some(_) if self.predicted_none => 0.0,
            Some(rank) => 1.0 / rank as f64,
        }
    }
}

/// `1 + #{strictly higher} + #{equal score at a smaller index}`.
pub fn rank_of(scores: &[f64], gold: usize) -> usize {
    let g = scores[gold];
    1 + scores
        .iter()
        .enumerate()
        .filter(|&(i, &s)| s > g || (s == g && i < gold))
        .count()
}

pub fn recall_at_n(results: &[RankingResult], n: usize) -> f64 {
    mean(results.iter().map(|r| f64::from(u8::from(r.hit_at(n)))))
}

pub fn mrr(results: &[RankingResult]) -> f64 {
    mean(results.iter().map(RankingResult::reciprocal_rank))
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, count) = values.fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

/// "No correct response in the pool" when the best score is strictly below
/// `threshold`.
pub fn apply_no_answer(scores: &[f64], threshold: f64) -> bool {
    scores.iter().fold(f64::NEG_INFINITY, |m, &s| m.max(s)) < threshold
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Prf1 {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Precision, recall and F1 with `0/0 = 0`.
pub fn prf1(tp: usize, fp: usize, fn_: usize) -> Prf1 {
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Prf1 {
        precision,
        recall,
        f1,
    }
}

/// Binary P/R/F1 of same-topic predictions (`p >= threshold` is positive).
pub fn binary_prf1(probs: &[f64], labels: &[bool], threshold: f64) -> Prf1 {
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for (&p, &y) in probs.iter().zip(labels) {
        match (p >= threshold, y) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    prf1(tp, fp, fn_)
}

struct DisjointSet {
    parent: Vec<usize>,
    rank: Vec<u8>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            rank: vec![0; n],
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return;
        }
        match self.rank[ra].cmp(&self.rank[rb]) {
            core::cmp::Ordering::Less => self.parent[ra] = rb,
            core::cmp::Ordering::Greater => self.parent[rb] = ra,
            core::cmp::Ordering::Equal => {
                self.parent[rb] = ra;
                self.rank[ra] += 1;
            }
        }
    }
}

/// Conversations implied by reply-to links: `parents[i]` is the parent of
/// utterance `i` (itself for a self-link). Clusters are returned sorted, each
/// ordered by its smallest member.
pub fn cluster_by_links(parents: &[usize]) -> Result<Vec<Vec<usize>>, Error> {
    let n = parents.len();
    let mut set = DisjointSet::new(n);
    for (child, &parent) in parents.iter().enumerate() {
        if parent > child {
            return Err(Error::invalid("links", "parent index exceeds child index"));
        }
        if parent != child {
            set.union(child, parent);
        }
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..n {
        let root = set.find(i);
        groups.entry(root).or_default().push(i);
    }
    let mut clusters: Vec<Vec<usize>> = groups.into_values().collect();
    clusters.sort_by_key(|c| c[0]);
    Ok(clusters)
}

/// Conversation-level exact-match P/R/F1, singletons excluded on both sides.
pub fn exact_match_f1(predicted: &[Vec<usize>], gold: &[Vec<usize>]) -> Prf1 {
    let normalize = |clusters: &[Vec<usize>]| -> Vec<Vec<usize>> {
        let mut out: Vec<Vec<usize>> = clusters
            .iter()
            .filter(|c| c.len() >= 2)
            .map(|c| {
                let mut c = c.clone();
                c.sort_unstable();
                c
            })
            .collect();
        out.sort();
        out
    };
    let pred = normalize(predicted);
    let gold = normalize(gold);
    let matches = pred.iter().filter(|c| gold.binary_search(c).is_ok()).count();
    prf1(matches, pred.len() - matches, gold.len() - matches)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkPrediction {
    pub window: usize,
    pub predicted_parent: usize,
    pub gold_parent: usize,
    /// Target position; a parent equal to it is a self-link.
    pub target: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LinkMetrics {
    pub accuracy: f64,
    /// Reply links (parent ≠ self): a prediction is a true positive when it
    /// names the gold parent.
    pub reply: Prf1,
    /// Self-links treated as their own class.
    pub self_link: Prf1,
}

pub fn link_metrics(predictions: &[LinkPrediction]) -> LinkMetrics {
    let mut correct = 0;
    let (mut r_tp, mut r_pred, mut r_gold) = (0, 0, 0);
    let (mut s_tp, mut s_pred, mut s_gold) = (0, 0, 0);
    for p in predictions {
        let hit = p.predicted_parent == p.gold_parent;
        correct += usize::from(hit);
        let pred_self = p.predicted_parent == p.target;
        let gold_self = p.gold_parent == p.target;
        if pred_self {
            s_pred += 1;
        } else {
            r_pred += 1;
        }
        if gold_self {
            s_gold += 1;
            s_tp += usize::from(pred_self);
        } else {
            r_gold += 1;
            r_tp += usize::from(hit);
        }
    }
    LinkMetrics {
        accuracy: ratio(correct, predictions.len()),
        reply: prf1(r_tp, r_pred - r_tp, r_gold - r_tp),
        self_link: prf1(s_tp, s_pred - s_tp, s_gold - s_tp),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bleu {
    pub bleu: f64,
    /// Clipped n-gram precisions for n = 1..4, unsmoothed.
    pub precisions: [f64; 4],
    pub brevity_penalty: f64,
}

/// Added to zero precisions so the geometric mean stays defined.
pub const BLEU_EPSILON: f64 = 1e-9;

/// Sentence BLEU-4 with clipped n-gram counts and brevity penalty.
pub fn bleu4<S: AsRef<str> + Ord>(candidate: &[S], reference: &[S]) -> Bleu {
    if candidate.is_empty() {
        return Bleu {
            bleu: 0.0,
            precisions: [0.0; 4],
            brevity_penalty: 0.0,
        };
    }
    let mut precisions = [0.0; 4];
    for (n, p) in (1..=4).zip(precisions.iter_mut()) {
        let cand = ngram_counts(candidate, n);
        let refr = ngram_counts(reference, n);
        let total: usize = cand.values().sum();
        let clipped: usize = cand
            .iter()
            .map(|(g, &c)| c.min(refr.get(g).copied().unwrap_or(0)))
            .sum();
        *p = ratio(clipped, total);
    }
    let (c, r) = (candidate.len() as f64, reference.len() as f64);
    let brevity_penalty = if c > r { 1.0 } else { libm::exp(1.0 - r / c) };
    let log_mean = precisions
        .iter()
        .map(|&p| libm::log(if p == 0.0 { BLEU_EPSILON } else { p }))
        .sum::<f64>()
        / 4.0;
    Bleu {
        bleu: brevity_penalty * libm::exp(log_mean),
        precisions,
        brevity_penalty,
    }
}

fn ngram_counts<S: AsRef<str> + Ord>(tokens: &[S], n: usize) -> BTreeMap<&[S], usize> {
    let mut counts = BTreeMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Metrics report; sections whose data was absent are omitted.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    #[serde(rename = "recall@1", skip_serializing_if = "Option::is_none")]
    pub recall_at_1: Option<f64>,
    #[serde(rename = "recall@5", skip_serializing_if = "Option::is_none")]
    pub recall_at_5: Option<f64>,
    #[serde(rename = "recall@10", skip_serializing_if = "Option::is_none")]
    pub recall_at_10: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mrr: Option<f64>,
    /// Mean of Recall@10 and MRR.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub composite: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tp_precision: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tp_recall: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tp_f1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub link_accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub link_precision: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub link_recall: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub link_f1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub self_link_f1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub exact_match_precision: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub exact_match_recall: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub exact_match_f1: Option<f64>,
}

impl MetricsReport {
    pub fn with_ranking(mut self, results: &[RankingResult]) -> Self {
        if results.is_empty() {
            return self;
        }
        let r10 = recall_at_n(results, 10);
        let m = mrr(results);
        self.recall_at_1 = Some(recall_at_n(results, 1));
        self.recall_at_5 = Some(recall_at_n(results, 5));
        self.recall_at_10 = Some(r10);
        self.mrr = Some(m);
        self.composite = Some((r10 + m) / 2.0);
        self
    }

    pub fn with_topic(mut self, topic: Prf1) -> Self {
        self.tp_precision = Some(topic.precision);
        self.tp_recall = Some(topic.recall);
        self.tp_f1 = Some(topic.f1);
        self
    }

    pub fn with_links(mut self, links: &LinkMetrics) -> Self {
        self.link_accuracy = Some(links.accuracy);
        self.link_precision = Some(links.reply.precision);
        self.link_recall = Some(links.reply.recall);
        self.link_f1 = Some(links.reply.f1);
        self.self_link_f1 = Some(links.self_link.f1);
        self
    }

    pub fn with_exact_match(mut self, em: Prf1) -> Self {
        self.exact_match_precision = Some(em.precision);
        self.exact_match_recall = Some(em.recall);
        self.exact_match_f1 = Some(em.f1);
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-9
    }

    #[test]
    fn rank_and_recall_examples() {
        let r = RankingResult::new(vec![0.1, 0.9, 0.5], 2, None);
        assert_eq!(r.gold_rank(), Some(2));
        assert!(!r.hit_at(1));
        assert!(r.hit_at(2));
        let unique = RankingResult::new(vec![0.2, 0.7, 0.1], 1, None);
        assert_eq!(recall_at_n(&[unique], 1), 1.0);
        let tied = RankingResult::new(vec![0.8, 0.8, 0.1], 1, None);
        assert_eq!(tied.gold_rank(), Some(2));
    }

    #[test]
    fn mrr_examples() {
        let at = |rank: usize| {
            let mut scores = vec![0.0; 5];
            for s in scores.iter_mut().take(rank - 1) {
                *s = 1.0;
            }
            RankingResult::new(scores, rank as i64 - 1, None)
        };
        assert_eq!(mrr(&[at(1)]), 1.0);
        assert_eq!(mrr(&[at(4)]), 0.25);
        assert!(close(mrr(&[at(1), at(3)]), 2.0 / 3.0));
    }

    #[test]
    fn no_answer_threshold_is_strict() {
        assert!(apply_no_answer(&[0.89, 0.1], 0.90));
        assert!(!apply_no_answer(&[0.90, 0.1], 0.90));
        let none = RankingResult::new(vec![0.3, 0.2], -1, Some(0.9));
        assert!(none.predicted_none);
        assert_eq!(recall_at_n(core::slice::from_ref(&none), 1), 1.0);
        assert_eq!(mrr(&[none]), 1.0);
        let missed = RankingResult::new(vec![0.3, 0.2], 0, Some(0.9));
        assert_eq!(recall_at_n(core::slice::from_ref(&missed), 10), 0.0);
        assert_eq!(mrr(&[missed]), 0.0);
    }

    #[test]
    fn prf1_examples() {
        assert_eq!(prf1(1, 0, 0), Prf1 { precision: 1.0, recall: 1.0, f1: 1.0 });
        assert_eq!(prf1(0, 3, 4), Prf1::default());
        let p = prf1(3, 1, 2);
        assert!(close(p.precision, 0.75) && close(p.recall, 0.6));
        assert!(close(p.f1, 2.0 * 0.75 * 0.6 / 1.35));
    }

    #[test]
    fn clustering_examples() {
        assert_eq!(cluster_by_links(&[0, 1, 2]).unwrap(), [[0], [1], [2]]);
        assert_eq!(cluster_by_links(&[0, 0, 1]).unwrap(), [vec![0, 1, 2]]);
        assert_eq!(cluster_by_links(&[0, 0, 2, 2]).unwrap(), [[0, 1], [2, 3]]);
        assert!(cluster_by_links(&[1, 1]).is_err());
    }

    #[test]
    fn exact_match_examples() {
        let gold = vec![vec![0, 1], vec![2, 3]];
        assert_eq!(exact_match_f1(&gold, &gold).f1, 1.0);
        let singles = vec![vec![0], vec![1]];
        assert_eq!(exact_match_f1(&singles, &singles), Prf1::default());
        let pred = vec![vec![0, 1], vec![2], vec![3]];
        let em = exact_match_f1(&pred, &gold);
        assert_eq!((em.precision, em.recall), (1.0, 0.5));
        assert!(close(em.f1, 2.0 / 3.0));
    }

    #[test]
    fn link_metrics_split_self_and_reply() {
        let p = |pred, gold, target| LinkPrediction {
            window: 0,
            predicted_parent: pred,
            gold_parent: gold,
            target,
        };
        let m = link_metrics(&[p(0, 0, 0), p(0, 0, 1), p(2, 1, 2), p(1, 0, 3)]);
        assert_eq!(m.accuracy, 0.5);
        // Reply class: 2 predicted, 3 gold, 1 hit. Self class: 2 predicted, 1 gold, 1 hit.
        assert!(close(m.reply.precision, 0.5));
        assert!(close(m.reply.recall, 1.0 / 3.0));
        assert_eq!((m.self_link.precision, m.self_link.recall), (0.5, 1.0));
    }

    #[test]
    fn bleu_examples() {
        let s = ["a", "b", "c", "d", "e"];
        let b = bleu4(&s, &s);
        assert_eq!(b.precisions, [1.0; 4]);
        assert!(close(b.bleu, 1.0));

        let disjoint = bleu4(&["x", "y", "z", "w"], &["a", "b", "c", "d"]);
        assert!(disjoint.bleu < 1e-8);

        let short = bleu4(&["a", "b", "c"], &["a", "b", "c", "d"]);
        assert_eq!(&short.precisions[..3], &[1.0, 1.0, 1.0]);
        assert!(close(short.brevity_penalty, libm::exp(1.0 - 4.0 / 3.0)));

        let empty: [&str; 0] = [];
        assert_eq!(bleu4(&empty, &["a"]).bleu, 0.0);
    }

    #[test]
    fn clipping_limits_repeated_ngrams() {
        let b = bleu4(&["the", "the", "the", "the"], &["the", "cat"]);
        assert!(close(b.precisions[0], 0.25));
    }
}
