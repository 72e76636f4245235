//! Conversations, selection instances, self-supervised pair construction,
//! disentanglement windows and the synthetic entangled-conversation generator.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::textenc::tokenize;
use crate::Error;

/// Default cap on context utterances kept by [`hard_context_filter`].
pub const DEFAULT_MAX_KEPT: usize = 10;
pub const DEFAULT_WINDOW: usize = 10;
pub const DEFAULT_NEGATIVES_PER_POSITIVE: usize = 4;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Utterance {
    pub speaker: String,
    pub text: String,
    pub tokens: Vec<String>,
    pub index: usize,
}

impl Utterance {
    pub fn new(speaker: impl Into<String>, text: impl Into<String>, index: usize) -> Self {
        let text = text.into();
        Self {
            speaker: speaker.into(),
            tokens: tokenize(&text),
            text,
            index,
        }
    }

    fn reindexed(&self, index: usize) -> Self {
        Self {
            index,
            ..self.clone()
        }
    }

    /// True when the tokenized `speaker` name occurs as a contiguous token run
    /// in this utterance's text.
    pub fn mentions(&self, speaker: &str) -> bool {
        let name = tokenize(speaker);
        !name.is_empty() && self.tokens.windows(name.len()).any(|w| w == name.as_slice())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Conversation {
    pub id: String,
    pub utterances: Vec<Utterance>,
    pub topic_ids: Option<Vec<u32>>,
    /// `(child, parent)` pairs with `parent <= child`.
    pub links: Option<Vec<(usize, usize)>>,
}

impl Conversation {
    /// Builds a conversation from `(speaker, text)` turns, indexing them from 0.
    pub fn from_turns<S: AsRef<str>, T: AsRef<str>>(
        id: impl Into<String>,
        turns: &[(S, T)],
    ) -> Self {
        Self {
            id: id.into(),
            utterances: turns
                .iter()
                .enumerate()
                .map(|(i, (s, t))| Utterance::new(s.as_ref(), t.as_ref(), i))
                .collect(),
            topic_ids: None,
            links: None,
        }
    }

    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    pub fn validate(&self) -> Result<(), Error> {
        for (i, u) in self.utterances.iter().enumerate() {
            if u.speaker.is_empty() {
                return Err(Error::invalid("speaker", "speaker must be non-empty"));
            }
            if u.index != i {
                return Err(Error::invalid("index", "indices must be contiguous from 0"));
            }
        }
        if let Some(topics) = &self.topic_ids {
            if topics.len() != self.len() {
                return Err(Error::invalid("topic_ids", "one topic id per utterance"));
            }
        }
        if let Some(links) = &self.links {
            let mut seen = BTreeSet::new();
            for &(child, parent) in links {
                if child >= self.len() {
                    return Err(Error::invalid("links", "child index out of range"));
                }
                if parent > child {
                    return Err(Error::invalid("links", "parent must not follow child"));
                }
                if !seen.insert(child) {
                    return Err(Error::invalid("links", "child appears in more than one link"));
                }
            }
        }
        Ok(())
    }

    /// Parent of every utterance; utterances without a link are self-links.
    pub fn parents(&self) -> Option<Vec<usize>> {
        let links = self.links.as_ref()?;
        let mut parents: Vec<usize> = (0..self.len()).collect();
        for &(c, p) in links {
            parents[c] = p;
        }
        Some(parents)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SelectionInstance {
    pub context: Conversation,
    pub candidates: Vec<Utterance>,
    /// Index of the correct candidate, or -1 when the pool has none.
    pub label: i64,
    /// Gold topic of each candidate, when known. Enables topic-prediction
    /// labels for the `(context utterance, candidate)` pairs.
    pub candidate_topic_ids: Option<Vec<u32>>,
}

impl SelectionInstance {
    pub fn validate(&self) -> Result<(), Error> {
        self.context.validate()?;
        if self.candidates.is_empty() {
            return Err(Error::invalid("candidates", "candidate pool must be non-empty"));
        }
        if self.label < -1 || self.label >= self.candidates.len() as i64 {
            return Err(Error::invalid("label", "label must be -1 or a candidate index"));
        }
        if let Some(t) = &self.candidate_topic_ids {
            if t.len() != self.candidates.len() {
                return Err(Error::invalid(
                    "candidate_topic_ids",
                    "one topic id per candidate",
                ));
            }
        }
        Ok(())
    }

    pub fn gold(&self) -> Option<usize> {
        usize::try_from(self.label).ok()
    }

    /// Same-topic labels of every context utterance against candidate `j`.
    pub fn topic_labels(&self, j: usize) -> Option<Vec<bool>> {
        let ctx = self.context.topic_ids.as_ref()?;
        let cand = self.candidate_topic_ids.as_ref()?.get(j)?;
        Some(ctx.iter().map(|t| t == cand).collect())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum StpLabel {
    Positive,
    Negative,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StpPair {
    pub first: Utterance,
    pub second: Utterance,
    pub label: StpLabel,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DisentangleWindow {
    /// Up to `window` utterances ending at the target.
    pub utterances: Vec<Utterance>,
    /// Parent of the target in window coordinates; the last position is a self-link.
    pub gold_parent: usize,
    pub source_conversation_id: String,
    /// Position of the window's first utterance in the source conversation.
    pub start: usize,
}

impl DisentangleWindow {
    pub fn target(&self) -> usize {
        self.utterances.len() - 1
    }

    /// Index of the target utterance in its source conversation.
    pub fn target_index(&self) -> usize {
        self.start + self.target()
    }

    /// Maps a window position back to the source conversation.
    pub fn to_source(&self, position: usize) -> usize {
        self.start + position
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct WindowSet {
    pub windows: Vec<DisentangleWindow>,
    /// Targets whose non-self gold parent fell outside the window.
    pub dropped: usize,
}

/// Every same-conversation ordered pair `(u_m, u_n)`, `m < n`, as a positive,
/// each followed by `negatives_per_positive` negatives pairing `u_m` with an
/// utterance drawn uniformly from all other conversations.
pub fn build_stp_pairs<R: Rng + ?Sized>(
    conversations: &[Conversation],
    negatives_per_positive: usize,
    rng: &mut R,
) -> Result<Vec<StpPair>, Error> {
    if conversations.len() < 2 {
        return Err(Error::invalid(
            "conversations",
            "at least two conversations are needed to draw negatives",
        ));
    }
    let mut offsets = Vec::with_capacity(conversations.len() + 1);
    let mut total = 0;
    for c in conversations {
        offsets.push(total);
        total += c.len();
    }
    offsets.push(total);
    let locate = |flat: usize| -> (usize, usize) {
        let conv = offsets.partition_point(|&o| o <= flat) - 1;
        (conv, flat - offsets[conv])
    };

    let mut pairs = Vec::new();
    for (ci, conv) in conversations.iter().enumerate() {
        let foreign = total - conv.len();
        for m in 0..conv.len() {
            for n in m + 1..conv.len() {
                pairs.push(StpPair {
                    first: conv.utterances[m].clone(),
                    second: conv.utterances[n].clone(),
                    label: StpLabel::Positive,
                });
                for _ in 0..negatives_per_positive {
                    if foreign == 0 {
                        return Err(Error::invalid(
                            "conversations",
                            "other conversations contain no utterances",
                        ));
                    }
                    // Sample among foreign utterances by skipping this conversation's block.
                    let mut flat = rng.gen_range(0..foreign);
                    if flat >= offsets[ci] {
                        flat += conv.len();
                    }
                    let (oc, ou) = locate(flat);
                    pairs.push(StpPair {
                        first: conv.utterances[m].clone(),
                        second: conversations[oc].utterances[ou].clone(),
                        label: StpLabel::Negative,
                    });
                }
            }
        }
    }
    Ok(pairs)
}

/// Keeps the context utterances speaker-related to `candidate`: same speaker,
/// mentioned by the candidate, or mentioning the candidate's speaker. At most
/// the last `max_kept` survivors are returned, reindexed from 0. When nothing
/// survives, the last `max_kept` utterances are returned unfiltered.
pub fn hard_context_filter(
    context: &Conversation,
    candidate: &Utterance,
    max_kept: usize,
) -> Conversation {
    let kept = hard_context_indices(context, candidate, max_kept);
    Conversation {
        id: context.id.clone(),
        utterances: kept
            .iter()
            .enumerate()
            .map(|(i, &k)| context.utterances[k].reindexed(i))
            .collect(),
        topic_ids: context
            .topic_ids
            .as_ref()
            .map(|t| kept.iter().map(|&k| t[k]).collect()),
        links: None,
    }
}

/// Original positions of the utterances [`hard_context_filter`] keeps.
pub fn hard_context_indices(
    context: &Conversation,
    candidate: &Utterance,
    max_kept: usize,
) -> Vec<usize> {
    let related = |u: &Utterance| {
        u.speaker == candidate.speaker
            || candidate.mentions(&u.speaker)
            || u.mentions(&candidate.speaker)
    };
    let mut kept: Vec<usize> = (0..context.len())
        .filter(|&k| related(&context.utterances[k]))
        .collect();
    if kept.is_empty() {
        kept = (0..context.len()).collect();
    }
    kept.split_off(kept.len().saturating_sub(max_kept))
}

/// One window per utterance, holding up to `window` utterances ending at it.
pub fn sliding_windows(conversation: &Conversation, window: usize) -> Result<WindowSet, Error> {
    let parents = conversation
        .parents()
        .ok_or_else(|| Error::invalid("links", "conversation has no gold links"))?;
    if window == 0 {
        return Err(Error::invalid("window", "window must be at least 1"));
    }
    let mut set = WindowSet::default();
    for (n, &parent) in parents.iter().enumerate() {
        let start = (n + 1).saturating_sub(window);
        if parent < start {
            set.dropped += 1;
            continue;
        }
        set.windows.push(DisentangleWindow {
            utterances: conversation.utterances[start..=n]
                .iter()
                .enumerate()
                .map(|(i, u)| u.reindexed(i))
                .collect(),
            gold_parent: parent - start,
            source_conversation_id: conversation.id.clone(),
            start,
        });
    }
    Ok(set)
}

/// Parameters of the synthetic entangled-conversation generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    /// K: number of topics, each with its own content vocabulary.
    pub n_topics: usize,
    /// M: content words per topic.
    pub words_per_topic: usize,
    /// Size of the function-word pool shared by all topics.
    pub function_words: usize,
    /// Number of entangled streams.
    pub n_streams: usize,
    /// S: simultaneous conversations per stream, each on a distinct topic.
    pub conversations_per_stream: usize,
    pub utterances_per_conversation: (usize, usize),
    pub speakers_per_conversation: (usize, usize),
    /// Fresh content words per utterance.
    pub content_words: (usize, usize),
    pub function_words_per_utterance: (usize, usize),
    /// Content words each reply repeats from its parent.
    pub echo_words: usize,
    /// Probability that a reply addresses its parent's speaker by name.
    pub mention_prob: f64,
    /// Probability of switching to another conversation at each stream step.
    pub interleave_prob: f64,
    /// Utterances of stream history given as selection context.
    pub context_len: usize,
    /// P: candidates per selection instance.
    pub pool_size: usize,
    pub selection_per_stream: usize,
    /// Probability that an instance's pool omits the true response (label -1).
    pub no_answer_prob: f64,
    pub negatives_per_positive: usize,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_topics: 4,
            words_per_topic: 32,
            function_words: 12,
            n_streams: 24,
            conversations_per_stream: 2,
            utterances_per_conversation: (4, 7),
            speakers_per_conversation: (2, 3),
            content_words: (2, 4),
            function_words_per_utterance: (0, 2),
            echo_words: 2,
            mention_prob: 0.5,
            interleave_prob: 0.5,
            context_len: 6,
            pool_size: 5,
            selection_per_stream: 2,
            no_answer_prob: 0.0,
            negatives_per_positive: DEFAULT_NEGATIVES_PER_POSITIVE,
        }
    }
}

const FUNCTION_WORDS: [&str; 16] = [
    "the", "a", "is", "to", "it", "and", "of", "in", "on", "for", "with", "that", "this", "can",
    "you", "i",
];

const SPEAKER_NAMES: [&str; 16] = [
    "ana", "ben", "cai", "dov", "eli", "fay", "gus", "hal", "ivo", "jan", "kim", "lou", "max",
    "ned", "oli", "pia",
];

impl SyntheticSpec {
    pub fn validate(&self) -> Result<(), Error> {
        let range = |field: &'static str, (lo, hi): (usize, usize)| {
            if lo > hi {
                Err(Error::invalid(field, "lower bound exceeds upper bound"))
            } else {
                Ok(())
            }
        };
        if self.n_topics < 2 {
            return Err(Error::invalid("n_topics", "need at least 2 topics"));
        }
        if self.words_per_topic < 4 {
            return Err(Error::invalid("words_per_topic", "need at least 4 words per topic"));
        }
        if self.pool_size < 2 {
            return Err(Error::invalid("pool_size", "need at least 2 candidates"));
        }
        if self.function_words == 0 {
            return Err(Error::invalid("function_words", "need at least 1 function word"));
        }
        if self.n_streams == 0 {
            return Err(Error::invalid("n_streams", "need at least 1 stream"));
        }
        if self.conversations_per_stream == 0 || self.conversations_per_stream > self.n_topics {
            return Err(Error::invalid(
                "conversations_per_stream",
                "must be between 1 and n_topics",
            ));
        }
        range("utterances_per_conversation", self.utterances_per_conversation)?;
        range("speakers_per_conversation", self.speakers_per_conversation)?;
        range("content_words", self.content_words)?;
        range("function_words_per_utterance", self.function_words_per_utterance)?;
        if self.utterances_per_conversation.0 < 1 {
            return Err(Error::invalid(
                "utterances_per_conversation",
                "conversations need at least 1 utterance",
            ));
        }
        let (s_lo, s_hi) = self.speakers_per_conversation;
        if s_lo < 2 || s_hi > 4 {
            return Err(Error::invalid("speakers_per_conversation", "must lie in [2, 4]"));
        }
        if self.conversations_per_stream * s_hi > SPEAKER_NAMES.len() {
            return Err(Error::invalid(
                "speakers_per_conversation",
                "too many speakers per stream for the name pool",
            ));
        }
        if self.content_words.0 < 1 {
            return Err(Error::invalid("content_words", "need at least 1 content word"));
        }
        if self.echo_words > self.content_words.0 {
            return Err(Error::invalid(
                "echo_words",
                "cannot exceed the minimum content words",
            ));
        }
        if self.context_len == 0 {
            return Err(Error::invalid("context_len", "must be at least 1"));
        }
        for (field, p) in [
            ("mention_prob", self.mention_prob),
            ("interleave_prob", self.interleave_prob),
            ("no_answer_prob", self.no_answer_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::invalid(field, "probability must lie in [0, 1]"));
            }
        }
        Ok(())
    }

    pub fn topic_word(topic: usize, word: usize) -> String {
        format!("t{topic}w{word}")
    }

    pub fn function_word(i: usize) -> String {
        FUNCTION_WORDS
            .get(i)
            .map_or_else(|| format!("fw{i}"), |w| w.to_string())
    }

    /// Content vocabulary of `topic`.
    pub fn topic_vocabulary(&self, topic: usize) -> Vec<String> {
        (0..self.words_per_topic)
            .map(|w| Self::topic_word(topic, w))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticCorpus {
    /// Entangled streams with per-utterance topics and gold reply-to links.
    pub streams: Vec<Conversation>,
    /// The same conversations detached from their streams, one topic each.
    pub conversations: Vec<Conversation>,
    pub selection: Vec<SelectionInstance>,
    pub stp_pairs: Vec<StpPair>,
}

struct Draft {
    topic: usize,
    turns: Vec<(String, String)>,
}

fn sample_range<R: Rng + ?Sized>(rng: &mut R, (lo, hi): (usize, usize)) -> usize {
    rng.gen_range(lo..=hi)
}

fn draft_conversation<R: Rng + ?Sized>(
    spec: &SyntheticSpec,
    topic: usize,
    speakers: &[&str],
    rng: &mut R,
) -> Draft {
    let len = sample_range(rng, spec.utterances_per_conversation);
    let mut turns: Vec<(String, String)> = Vec::with_capacity(len);
    let mut fresh_prev: Vec<String> = Vec::new();
    let mut prev_speaker: Option<usize> = None;
    for _ in 0..len {
        let speaker = match prev_speaker {
            None => rng.gen_range(0..speakers.len()),
            Some(p) => {
                let s = rng.gen_range(0..speakers.len() - 1);
                if s >= p {
                    s + 1
                } else {
                    s
                }
            }
        };
        let mut words: Vec<String> = Vec::new();
        if !fresh_prev.is_empty() {
            words.extend(
                fresh_prev
                    .choose_multiple(rng, spec.echo_words.min(fresh_prev.len()))
                    .cloned(),
            );
        }
        let fresh: Vec<String> = (0..sample_range(rng, spec.content_words))
            .map(|_| SyntheticSpec::topic_word(topic, rng.gen_range(0..spec.words_per_topic)))
            .collect();
        words.extend(fresh.iter().cloned());
        for _ in 0..sample_range(rng, spec.function_words_per_utterance) {
            words.push(SyntheticSpec::function_word(
                rng.gen_range(0..spec.function_words),
            ));
        }
        words.shuffle(rng);
        let mut text = words.join(" ");
        if let Some(p) = prev_speaker {
            if rng.gen::<f64>() < spec.mention_prob {
                text = format!("{}: {}", speakers[p], text);
            }
        }
        turns.push((speakers[speaker].to_string(), text));
        fresh_prev = fresh;
        prev_speaker = Some(speaker);
    }
    Draft { topic, turns }
}

/// Generates entangled streams of single-topic conversations with gold topics
/// and reply-to links, response-selection instances over the streams, and
/// same-topic pairs over the detached conversations. Deterministic in `rng`.
pub fn generate_synthetic<R: Rng + ?Sized>(
    spec: &SyntheticSpec,
    rng: &mut R,
) -> Result<SyntheticCorpus, Error> {
    spec.validate()?;
    let mut streams = Vec::with_capacity(spec.n_streams);
    let mut conversations = Vec::new();

    for s in 0..spec.n_streams {
        let topics: Vec<usize> = rand::seq::index::sample(rng, spec.n_topics, spec.conversations_per_stream)
            .into_iter()
            .collect();
        let mut names: Vec<&str> = SPEAKER_NAMES.to_vec();
        names.shuffle(rng);
        let mut name_iter = names.into_iter();
        let drafts: Vec<Draft> = topics
            .iter()
            .map(|&t| {
                let n = sample_range(rng, spec.speakers_per_conversation);
                let speakers: Vec<&str> = name_iter.by_ref().take(n).collect();
                draft_conversation(spec, t, &speakers, rng)
            })
            .collect();

        // Interleave the drafts into one stream.
        let mut cursor = vec![0usize; drafts.len()];
        let mut active: Vec<usize> = (0..drafts.len()).collect();
        let mut current = active[rng.gen_range(0..active.len())];
        let mut order: Vec<(usize, usize)> = Vec::new();
        while !active.is_empty() {
            if active.len() > 1 && rng.gen::<f64>() < spec.interleave_prob {
                let others: Vec<usize> = active.iter().copied().filter(|&a| a != current).collect();
                current = others[rng.gen_range(0..others.len())];
            }
            order.push((current, cursor[current]));
            cursor[current] += 1;
            if cursor[current] == drafts[current].turns.len() {
                active.retain(|&a| a != current);
                if !active.is_empty() {
                    current = active[rng.gen_range(0..active.len())];
                }
            }
        }

        let mut stream_pos = vec![Vec::new(); drafts.len()];
        let mut utterances = Vec::with_capacity(order.len());
        let mut topic_ids = Vec::with_capacity(order.len());
        let mut links = Vec::with_capacity(order.len());
        for (i, &(c, k)) in order.iter().enumerate() {
            let (speaker, text) = &drafts[c].turns[k];
            utterances.push(Utterance::new(speaker.as_str(), text.as_str(), i));
            topic_ids.push(drafts[c].topic as u32);
            let parent = if k == 0 { i } else { stream_pos[c][k - 1] };
            links.push((i, parent));
            stream_pos[c].push(i);
        }
        streams.push(Conversation {
            id: format!("stream{s}"),
            utterances,
            topic_ids: Some(topic_ids),
            links: Some(links),
        });
        for (c, d) in drafts.iter().enumerate() {
            let mut conv = Conversation::from_turns(format!("stream{s}/conv{c}"), &d.turns);
            conv.topic_ids = Some(vec![d.topic as u32; conv.len()]);
            conv.links = Some((0..conv.len()).map(|i| (i, i.saturating_sub(1))).collect());
            conversations.push(conv);
        }
    }

    let selection = build_selection(spec, &streams, rng)?;
    let stp_pairs = build_stp_pairs(&conversations, spec.negatives_per_positive, rng)?;
    Ok(SyntheticCorpus {
        streams,
        conversations,
        selection,
        stp_pairs,
    })
}

fn build_selection<R: Rng + ?Sized>(
    spec: &SyntheticSpec,
    streams: &[Conversation],
    rng: &mut R,
) -> Result<Vec<SelectionInstance>, Error> {
    // (stream, position, topic) of every utterance, for negative sampling.
    let all: Vec<(usize, usize, u32)> = streams
        .iter()
        .enumerate()
        .flat_map(|(s, c)| {
            let topics = c.topic_ids.as_ref().expect("synthetic streams carry topics");
            topics.iter().enumerate().map(move |(i, &t)| (s, i, t))
        })
        .collect();

    let mut out = Vec::new();
    for stream in streams.iter() {
        let parents = stream.parents().expect("synthetic streams carry links");
        let eligible: Vec<usize> = (1..stream.len())
            .filter(|&t| parents[t] != t && t - parents[t] <= spec.context_len)
            .collect();
        let take = spec.selection_per_stream.min(eligible.len());
        let mut targets: Vec<usize> = rand::seq::index::sample(rng, eligible.len(), take)
            .into_iter()
            .map(|i| eligible[i])
            .collect();
        targets.sort_unstable();
        let topics = stream.topic_ids.as_ref().expect("synthetic streams carry topics");

        for t in targets {
            let start = t.saturating_sub(spec.context_len);
            let context = Conversation {
                id: format!("{}/t{t}", stream.id),
                utterances: stream.utterances[start..t]
                    .iter()
                    .enumerate()
                    .map(|(i, u)| u.reindexed(i))
                    .collect(),
                topic_ids: Some(topics[start..t].to_vec()),
                links: None,
            };
            let target_topic = topics[t];
            // Negatives come from topics absent from the context, or from any
            // non-target topic when every topic already appears there.
            let absent = |topic: u32| topic != target_topic && !topics[start..t].contains(&topic);
            let mut foreign: Vec<&(usize, usize, u32)> =
                all.iter().filter(|&&(_, _, topic)| absent(topic)).collect();
            if foreign.is_empty() {
                foreign = all.iter().filter(|&&(_, _, topic)| topic != target_topic).collect();
            }
            let no_answer = rng.gen::<f64>() < spec.no_answer_prob;
            let n_neg = if no_answer {
                spec.pool_size
            } else {
                spec.pool_size - 1
            };
            if foreign.len() < n_neg {
                return Err(Error::invalid("pool_size", "not enough foreign-topic utterances"));
            }
            let mut pool: Vec<(Utterance, u32, bool)> =
                rand::seq::index::sample(rng, foreign.len(), n_neg)
                    .into_iter()
                    .map(|i| {
                        let &(fs, fi, ft) = foreign[i];
                        (streams[fs].utterances[fi].clone(), ft, false)
                    })
                    .collect();
            if !no_answer {
                pool.push((stream.utterances[t].clone(), target_topic, true));
            }
            pool.shuffle(rng);
            let label = pool
                .iter()
                .position(|p| p.2)
                .map_or(-1, |i| i as i64);
            out.push(SelectionInstance {
                context,
                candidate_topic_ids: Some(pool.iter().map(|p| p.1).collect()),
                candidates: pool
                    .into_iter()
                    .enumerate()
                    .map(|(i, p)| p.0.reindexed(i))
                    .collect(),
                label,
            });
        }
    }
    Ok(out)
}
