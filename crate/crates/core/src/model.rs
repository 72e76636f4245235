//! The full parameter set (encoder, pretraining heads, topic attention, task
//! heads) and the per-instance forward passes shared by training and inference.

use alloc::vec::Vec;

use crate::corpus::{
    hard_context_filter, hard_context_indices, DisentangleWindow, SelectionInstance, Utterance,
};
use crate::encoder::{EncoderConfig, EncoderIds, PretrainHeads};
use crate::graph::{Graph, Var};
use crate::heads::{self, HeadIds};
use crate::params::{ParamBuilder, ParamStore};
use crate::tensor::Real;
use crate::textenc::{encode_pair_with, EncodedPair, Vocab, MAX_PAIR_LEN, MAX_RESPONSE_TOKENS};
use crate::topic::{encode_context, TopicAttentionIds};
use crate::{Error, Rng};

#[derive(Clone, Debug, PartialEq)]
pub struct ModelIds {
    pub encoder: EncoderIds,
    pub pretrain: PretrainHeads,
    pub topic: TopicAttentionIds,
    pub heads: HeadIds,
}

impl ModelIds {
    fn declare<T: Real, R: rand::Rng + ?Sized>(
        b: &mut ParamBuilder<'_, T, R>,
        cfg: &EncoderConfig,
    ) -> Result<Self, Error> {
        Ok(Self {
            encoder: EncoderIds::declare(b, cfg)?,
            pretrain: PretrainHeads::declare(b, cfg)?,
            topic: TopicAttentionIds::declare(b, cfg.d_model)?,
            heads: HeadIds::declare(b, cfg.d_model)?,
        })
    }

    /// Parameters belonging to the encoder body (embeddings and layers).
    pub fn encoder_params(&self) -> Vec<crate::params::ParamId> {
        let e = &self.encoder;
        let mut ids = alloc::vec![e.token_embedding, e.position_embedding, e.segment_embedding];
        for l in &e.layers {
            for (w, b) in [
                l.query, l.key, l.value, l.output, l.attn_norm, l.ffn_in, l.ffn_out, l.ffn_norm,
            ] {
                ids.push(w);
                ids.push(b);
            }
        }
        ids
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TopicModel<T> {
    pub config: EncoderConfig,
    pub vocab: Vocab,
    pub params: ParamStore<T>,
    pub ids: ModelIds,
}

impl<T: Real> TopicModel<T> {
    /// Fresh model; `config.vocab_size` is taken from `vocab`.
    pub fn new(mut config: EncoderConfig, vocab: Vocab, rng: &mut Rng) -> Result<Self, Error> {
        config.vocab_size = vocab.len();
        config.validate()?;
        let mut params = ParamStore::new();
        let ids = ModelIds::declare(
            &mut ParamBuilder::Init {
                store: &mut params,
                rng,
            },
            &config,
        )?;
        Ok(Self {
            config,
            vocab,
            params,
            ids,
        })
    }

    /// Reassembles a model from stored tensors, checking names and shapes.
    pub fn from_parts(config: EncoderConfig, vocab: Vocab, params: ParamStore<T>) -> Result<Self, Error> {
        config.validate()?;
        if config.vocab_size != vocab.len() {
            return Err(Error::invalid("vocab_size", "does not match the vocabulary"));
        }
        let ids = ModelIds::declare(&mut ParamBuilder::<T, Rng>::Resolve { store: &params }, &config)?;
        if params.len() != count_params(&config) {
            return Err(Error::invalid("params", "unexpected extra parameters"));
        }
        Ok(Self {
            config,
            vocab,
            params,
            ids,
        })
    }

    pub fn cast<U: Real>(&self) -> TopicModel<U> {
        TopicModel {
            config: self.config.clone(),
            vocab: self.vocab.clone(),
            params: self.params.cast(),
            ids: self.ids.clone(),
        }
    }

    pub fn max_pair_len(&self) -> usize {
        self.config.max_positions.min(MAX_PAIR_LEN)
    }

    pub fn encode(&self, first: &Utterance, second: &Utterance) -> EncodedPair {
        let max_len = self.max_pair_len();
        encode_pair_with(
            &first.tokens,
            &second.tokens,
            &self.vocab,
            max_len,
            MAX_RESPONSE_TOKENS.min(max_len.saturating_sub(3)),
        )
    }
}

fn count_params(cfg: &EncoderConfig) -> usize {
    // 3 embeddings + 16 per layer + 4 pretraining + 3 topic + 6 heads
    3 + 16 * cfg.n_layers + 4 + 3 + 6
}

/// Graph handles for one candidate of a selection instance.
pub struct CandidateForward {
    /// Hard-filtered context the candidate was scored against.
    pub context_len: usize,
    /// `n × 2d` topic matrix.
    pub topic: Var,
    /// `n × 1` same-topic logits.
    pub topic_logits: Var,
    /// `1 × 2` relevance logits.
    pub response_logits: Var,
}

/// Scores every candidate of `instance` against its hard-filtered context.
pub fn selection_forward<T: Real>(
    g: &mut Graph<'_, T>,
    model: &TopicModel<T>,
    instance: &SelectionInstance,
    max_kept: usize,
    mut rng: Option<&mut Rng>,
) -> Result<Vec<CandidateForward>, Error> {
    instance
        .candidates
        .iter()
        .map(|cand| {
            let context = hard_context_filter(&instance.context, cand, max_kept);
            let topic = encode_context(g, model, &context, cand, rng.as_deref_mut())?;
            let topic_logits = heads::topic_logits(g, topic, &model.ids.heads);
            let attended = heads::self_attend(g, topic, &model.ids.heads);
            let response_logits = heads::response_logits(g, attended, &model.ids.heads);
            Ok(CandidateForward {
                context_len: context.len(),
                topic,
                topic_logits,
                response_logits,
            })
        })
        .collect()
}

/// Reply-to logits (`1 × n`) for a window: every utterance, the target
/// included, is paired with the target.
pub fn window_forward<T: Real>(
    g: &mut Graph<'_, T>,
    model: &TopicModel<T>,
    window: &DisentangleWindow,
    rng: Option<&mut Rng>,
) -> Result<Var, Error> {
    let target = &window.utterances[window.target()];
    let context = crate::corpus::Conversation {
        id: window.source_conversation_id.clone(),
        utterances: window.utterances.clone(),
        topic_ids: None,
        links: None,
    };
    let topic = encode_context(g, model, &context, target, rng)?;
    let attended = heads::self_attend(g, topic, &model.ids.heads);
    let features = heads::esim_features(g, attended);
    Ok(heads::reply_logits(g, features, &model.ids.heads))
}

/// Inference output for one selection instance.
#[derive(Clone, Debug, PartialEq)]
pub struct InstanceScores {
    /// Relevance probability of each candidate.
    pub scores: Vec<f64>,
    /// Same-topic probability of each `(context utterance, candidate)` pair,
    /// grouped by candidate.
    pub topic_probs: Vec<Vec<f64>>,
    /// Context utterance indices (original numbering) each candidate was
    /// scored against.
    pub kept_context: Vec<Vec<usize>>,
}

pub fn score_instance<T: Real>(
    model: &TopicModel<T>,
    instance: &SelectionInstance,
    max_kept: usize,
) -> Result<InstanceScores, Error> {
    let mut g = Graph::new(&model.params);
    let outs = selection_forward(&mut g, model, instance, max_kept, None)?;
    let mut scores = Vec::with_capacity(outs.len());
    let mut topic_probs = Vec::with_capacity(outs.len());
    let mut kept_context = Vec::with_capacity(outs.len());
    for (cand, out) in instance.candidates.iter().zip(&outs) {
        scores.push(heads::response_probabilities(&g, out.response_logits).0.to_f64());
        topic_probs.push(
            heads::topic_probabilities(&g, out.topic_logits)
                .into_iter()
                .map(Real::to_f64)
                .collect(),
        );
        kept_context.push(hard_context_indices(&instance.context, cand, max_kept));
    }
    Ok(InstanceScores {
        scores,
        topic_probs,
        kept_context,
    })
}

/// Predicted parent (window coordinates) and the full reply-to distribution.
pub fn predict_parent<T: Real>(
    model: &TopicModel<T>,
    window: &DisentangleWindow,
) -> Result<(usize, Vec<f64>), Error> {
    let mut g = Graph::new(&model.params);
    let logits = window_forward(&mut g, model, window, None)?;
    let dist: Vec<f64> = heads::reply_distribution(&g, logits)
        .into_iter()
        .map(Real::to_f64)
        .collect();
    Ok((heads::argmax(&dist), dist))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_synthetic, Conversation, SyntheticSpec};
    use crate::seeded_rng;
    use crate::tensor::Matrix;
    use alloc::string::String;
    use alloc::vec;

    fn setup() -> (crate::corpus::SyntheticCorpus, TopicModel<f64>) {
        let spec = SyntheticSpec {
            n_streams: 2,
            ..SyntheticSpec::default()
        };
        let c = generate_synthetic(&spec, &mut seeded_rng(0)).unwrap();
        let cfg = EncoderConfig {
            d_model: 8,
            n_layers: 2,
            n_heads: 2,
            d_ff: 16,
            ..EncoderConfig::default()
        };
        let tokens = c.streams.iter().flat_map(|s| &s.utterances).flat_map(|u| u.tokens.iter());
        let vocab = Vocab::build(tokens.map(String::as_str), 1);
        let model = TopicModel::new(cfg, vocab, &mut seeded_rng(1)).unwrap();
        (c, model)
    }

    #[test]
    fn parts_round_trip_and_mismatches_are_rejected() {
        let (_, model) = setup();
        assert_eq!(model.params.len(), count_params(&model.config));
        let back = TopicModel::from_parts(model.config.clone(), model.vocab.clone(), model.params.clone()).unwrap();
        assert_eq!(back, model);

        let mut extra = model.params.clone();
        extra.insert("stray", Matrix::scalar(0.0)).unwrap();
        assert!(TopicModel::from_parts(model.config.clone(), model.vocab.clone(), extra).is_err());

        let mut wrong = model.config.clone();
        wrong.d_ff = 32;
        assert!(TopicModel::from_parts(wrong, model.vocab.clone(), model.params.clone()).is_err());

        let mut off_by_one = model.config.clone();
        off_by_one.vocab_size += 1;
        assert!(TopicModel::from_parts(off_by_one, model.vocab.clone(), model.params.clone()).is_err());
    }

    #[test]
    fn instance_scores_cover_every_candidate() {
        let (c, model) = setup();
        let inst = &c.selection[0];
        let out = score_instance(&model, inst, 10).unwrap();
        assert_eq!(out.scores.len(), inst.candidates.len());
        for (probs, kept) in out.topic_probs.iter().zip(&out.kept_context) {
            assert_eq!(probs.len(), kept.len());
            assert!(probs.iter().all(|p| (0.0..=1.0).contains(p)));
        }
        assert!(out.scores.iter().all(|p| (0.0..=1.0).contains(p)));
        let f32_scores = score_instance(&model.cast::<f32>(), inst, 10).unwrap().scores;
        for (a, b) in out.scores.iter().zip(&f32_scores) {
            assert!((a - b).abs() < 1e-4);
        }
    }

    #[test]
    fn lone_utterance_links_to_itself() {
        let (_, model) = setup();
        let conv = Conversation::from_turns("c", &[("a", "t0w1 t0w2")]);
        let window = DisentangleWindow {
            utterances: conv.utterances,
            gold_parent: 0,
            source_conversation_id: "c".into(),
            start: 0,
        };
        assert_eq!(predict_parent(&model, &window).unwrap(), (0, vec![1.0]));
    }
}
