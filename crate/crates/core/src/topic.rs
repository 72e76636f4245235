//! Additive topic attention with the `[CLS]` state as query, and the
//! context-against-candidate topic matrix built from it.

use alloc::vec::Vec;

use crate::corpus::{Conversation, Utterance};
use crate::graph::{Graph, Var};
use crate::model::TopicModel;
use crate::params::{Init, ParamBuilder, ParamId, INIT_STD};
use crate::tensor::Real;
use crate::textenc::EncodedPair;
use crate::{Error, Rng};

/// `v_a` (stored `1×d`), `W_a` and `U_a` (`d×d`), applied as
/// `e_j = v_aᵀ tanh(W_a T_cls + U_a T_j)`. Shared by all three tasks.
#[derive(Clone, Debug, PartialEq)]
pub struct TopicAttentionIds {
    pub v: ParamId,
    pub w: ParamId,
    pub u: ParamId,
}

impl TopicAttentionIds {
    pub fn declare<T: Real, R: rand::Rng + ?Sized>(
        b: &mut ParamBuilder<'_, T, R>,
        d_model: usize,
    ) -> Result<Self, Error> {
        Ok(Self {
            v: b.param("topic.v", 1, d_model, Init::Normal(INIT_STD))?,
            w: b.param("topic.w", d_model, d_model, Init::Normal(INIT_STD))?,
            u: b.param("topic.u", d_model, d_model, Init::Normal(INIT_STD))?,
        })
    }
}

pub struct TopicOutput {
    /// `[T_cls ; T_topic]`, a `1 × 2d` row.
    pub vector: Var,
    /// Attention weights over the attendable positions (`1 × K`); `None`
    /// when the pair has no content token and `T_topic` falls back to `T_cls`.
    pub weights: Option<Var>,
    pub attended: Vec<usize>,
}

impl TopicOutput {
    pub fn fell_back(&self) -> bool {
        self.weights.is_none()
    }
}

/// Attends from `T_cls` (row 0 of `hidden`) over every real token that is not
/// `[CLS]`, `[SEP]` or `[PAD]`.
pub fn topic_attention<T: Real>(
    g: &mut Graph<'_, T>,
    hidden: Var,
    pair: &EncodedPair,
    ids: &TopicAttentionIds,
) -> TopicOutput {
    let attended = pair.content_positions();
    let cls = g.select_rows(hidden, &[0]);
    if attended.is_empty() {
        let vector = g.concat_cols(&[cls, cls]);
        return TopicOutput {
            vector,
            weights: None,
            attended,
        };
    }
    let tokens = g.select_rows(hidden, &attended);
    let (v, w, u) = (g.param(ids.v), g.param(ids.w), g.param(ids.u));
    let query = g.matmul_t(cls, w);
    let keys = g.matmul_t(tokens, u);
    let mixed = g.add_row(keys, query);
    let activated = g.tanh(mixed);
    let energies = g.matmul_t(v, activated);
    let weights = g.softmax(energies);
    let topic = g.matmul(weights, tokens);
    let vector = g.concat_cols(&[cls, topic]);
    TopicOutput {
        vector,
        weights: Some(weights),
        attended,
    }
}

/// Topic vector of one `(first, second)` pair.
pub fn pair_topic_vector<T: Real>(
    g: &mut Graph<'_, T>,
    model: &TopicModel<T>,
    first: &Utterance,
    second: &Utterance,
    rng: Option<&mut Rng>,
) -> Result<TopicOutput, Error> {
    let pair = model.encode(first, second);
    let out = crate::encoder::encoder_forward(g, &model.ids.encoder, &model.config, &pair, rng)?;
    Ok(topic_attention(g, out.hidden, &pair, &model.ids.topic))
}

/// `n × 2d` matrix whose row `k` is the topic vector of `(u_k, candidate)`.
/// The context is expected to be hard-filtered already.
pub fn encode_context<T: Real>(
    g: &mut Graph<'_, T>,
    model: &TopicModel<T>,
    context: &Conversation,
    candidate: &Utterance,
    mut rng: Option<&mut Rng>,
) -> Result<Var, Error> {
    if context.is_empty() {
        return Err(Error::Empty("context"));
    }
    let rows = context
        .utterances
        .iter()
        .map(|u| pair_topic_vector(g, model, u, candidate, rng.as_deref_mut()).map(|o| o.vector))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(if rows.len() == 1 {
        rows[0]
    } else {
        g.concat_rows(&rows)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::EncoderConfig;
    use crate::params::ParamStore;
    use crate::seeded_rng;
    use crate::tensor::Matrix;
    use crate::textenc::{Vocab, CLS, SEP};
    use alloc::vec;
    use proptest::prelude::*;

    fn attention_store(v: &[f64], w: &[f64], u: &[f64]) -> (ParamStore<f64>, TopicAttentionIds) {
        let d = v.len();
        let mut s = ParamStore::new();
        let ids = TopicAttentionIds {
            v: s.insert("v", Matrix::from_vec(1, d, v.to_vec())).unwrap(),
            w: s.insert("w", Matrix::from_vec(d, d, w.to_vec())).unwrap(),
            u: s.insert("u", Matrix::from_vec(d, d, u.to_vec())).unwrap(),
        };
        (s, ids)
    }

    /// `[CLS] a.. [SEP] b.. [SEP]` with `k1 + k2` content positions.
    fn pair(k1: usize, k2: usize) -> EncodedPair {
        let mut token_ids = vec![CLS];
        token_ids.extend((0..k1).map(|i| 10 + i));
        token_ids.push(SEP);
        token_ids.extend((0..k2).map(|i| 20 + i));
        token_ids.push(SEP);
        let n = token_ids.len();
        EncodedPair {
            segment_ids: (0..n).map(|i| u8::from(i > k1 + 1)).collect(),
            attention_mask: vec![1; n],
            token_ids,
        }
    }

    fn run(
        s: &ParamStore<f64>,
        ids: &TopicAttentionIds,
        hidden: Matrix<f64>,
        pair: &EncodedPair,
    ) -> (Vec<f64>, Option<Vec<f64>>) {
        let mut g = Graph::new(s);
        let h = g.constant(hidden);
        let out = topic_attention(&mut g, h, pair, ids);
        let weights = out.weights.map(|w| g.value(w).data().to_vec());
        (g.value(out.vector).data().to_vec(), weights)
    }

    #[test]
    fn identical_tokens_attend_uniformly() {
        let (s, ids) = attention_store(&[0.4, -1.2], &[0.3, 0.1, -0.7, 2.0], &[1.0, 0.5, -0.5, 0.2]);
        let p = pair(2, 1);
        let tok = [0.8, -0.6];
        let mut rows = vec![vec![5.0, 7.0]];
        for i in 1..p.len() {
            rows.push(if p.content_positions().contains(&i) { tok.to_vec() } else { vec![-9.0, 9.0] });
        }
        let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        let (vector, weights) = run(&s, &ids, Matrix::from_rows(&refs), &p);
        for w in weights.unwrap() {
            assert!((w - 1.0 / 3.0).abs() < 1e-12);
        }
        assert_eq!(&vector[..2], &[5.0, 7.0]);
        assert!((vector[2] - tok[0]).abs() < 1e-12 && (vector[3] - tok[1]).abs() < 1e-12);
    }

    #[test]
    fn zero_projections_attend_uniformly() {
        let (s, ids) = attention_store(&[3.0, -4.0], &[0.0; 4], &[0.0; 4]);
        let p = pair(1, 3);
        let hidden = Matrix::from_vec(p.len(), 2, (0..2 * p.len()).map(|i| i as f64 * 0.37 - 1.0).collect());
        let (_, weights) = run(&s, &ids, hidden, &p);
        assert_eq!(weights.unwrap(), vec![0.25; 4]);
    }

    #[test]
    fn two_dim_two_token_case_matches_oracle() {
        let (v, w, u) = ([0.7, -0.4], [0.5, -1.0, 0.25, 2.0], [1.5, 0.3, -0.8, 0.6]);
        let (s, ids) = attention_store(&v, &w, &u);
        let p = pair(1, 1);
        let cls = [0.2, -0.9];
        let t1 = [1.1, 0.4];
        let t2 = [-0.3, 0.8];
        let sep = [4.0, 4.0];
        let hidden = Matrix::from_rows(&[&cls, &t1, &sep, &t2, &sep]);
        let (vector, weights) = run(&s, &ids, hidden, &p);

        let mv = |m: &[f64; 4], x: &[f64; 2]| [m[0] * x[0] + m[1] * x[1], m[2] * x[0] + m[3] * x[1]];
        let energy = |t: &[f64; 2]| {
            let (a, b) = (mv(&w, &cls), mv(&u, t));
            v[0] * (a[0] + b[0]).tanh() + v[1] * (a[1] + b[1]).tanh()
        };
        let (e1, e2) = (energy(&t1), energy(&t2));
        let a1 = 1.0 / (1.0 + (e2 - e1).exp());
        let a2 = 1.0 - a1;
        let weights = weights.unwrap();
        assert!((weights[0] - a1).abs() < 1e-12 && (weights[1] - a2).abs() < 1e-12);
        let topic = [a1 * t1[0] + a2 * t2[0], a1 * t1[1] + a2 * t2[1]];
        assert_eq!(&vector[..2], &cls);
        assert!((vector[2] - topic[0]).abs() < 1e-12 && (vector[3] - topic[1]).abs() < 1e-12);
    }

    #[test]
    fn pair_without_content_falls_back_to_cls() {
        let (s, ids) = attention_store(&[1.0, 1.0], &[1.0; 4], &[1.0; 4]);
        let p = pair(0, 0);
        let (vector, weights) = run(&s, &ids, Matrix::from_rows(&[&[0.5, -0.5], &[1.0, 2.0], &[3.0, 4.0]]), &p);
        assert!(weights.is_none());
        assert_eq!(vector, vec![0.5, -0.5, 0.5, -0.5]);
    }

    fn tiny_model() -> TopicModel<f64> {
        let cfg = EncoderConfig {
            d_model: 8,
            n_layers: 1,
            n_heads: 2,
            d_ff: 16,
            dropout: 0.0,
            ..EncoderConfig::default()
        };
        let vocab = Vocab::build("alpha beta gamma delta eps".split(' '), 1);
        TopicModel::new(cfg, vocab, &mut seeded_rng(3)).unwrap()
    }

    #[test]
    fn context_rows_follow_context_order() {
        let model = tiny_model();
        let candidate = Utterance::new("x", "gamma delta", 3);
        let forward = Conversation::from_turns("c", &[("a", "alpha beta"), ("b", "eps"), ("a", "alpha beta")]);
        let mut reversed = forward.clone();
        reversed.utterances.reverse();
        let rows = |c: &Conversation| {
            let mut g = Graph::new(&model.params);
            let t = encode_context(&mut g, &model, c, &candidate, None).unwrap();
            let m = g.value(t);
            assert_eq!(m.shape(), (c.len(), 16));
            (0..m.rows()).map(|r| m.row(r).to_vec()).collect::<Vec<_>>()
        };
        let a = rows(&forward);
        let mut b = rows(&reversed);
        assert_eq!(a[0], a[2]);
        b.reverse();
        assert_eq!(a, b);

        let single = Conversation::from_turns("s", &[("a", "beta")]);
        assert_eq!(rows(&single).len(), 1);
        let mut g = Graph::new(&model.params);
        assert!(encode_context(&mut g, &model, &Conversation::from_turns::<&str, &str>("e", &[]), &candidate, None).is_err());
    }

    proptest! {
        #[test]
        fn weights_sum_to_one_and_topic_stays_in_hull(
            k1 in 0usize..4,
            k2 in 1usize..4,
            params in prop::collection::vec(-2.0f64..2.0, 10),
            hidden in prop::collection::vec(-3.0f64..3.0, 18),
        ) {
            let (s, ids) = attention_store(&params[..2], &params[2..6], &params[6..]);
            let p = pair(k1, k2);
            let h = Matrix::from_vec(p.len(), 2, hidden[..2 * p.len()].to_vec());
            let content = p.content_positions();
            let (vector, weights) = run(&s, &ids, h.clone(), &p);
            let weights = weights.unwrap();
            prop_assert_eq!(weights.len(), content.len());
            prop_assert!(weights.iter().all(|&w| w >= 0.0));
            prop_assert!((weights.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            for c in 0..2 {
                let col = content.iter().map(|&j| h.get(j, c));
                let lo = col.clone().fold(f64::INFINITY, f64::min);
                let hi = col.fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(vector[2 + c] >= lo - 1e-9 && vector[2 + c] <= hi + 1e-9);
            }
        }
    }
}
