//! Task-specific layers over the topic matrix `T` (`n × 2d`):
//! topic prediction, response selection and reply-to disentanglement, plus
//! the weighted multi-task objective.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::graph::{sigmoid, Graph, Var};
use crate::params::{Init, ParamBuilder, ParamId, INIT_STD};
use crate::tensor::{lit, softmax_in_place, Real};
use crate::Error;

/// Class index of "relevant" in response-selection logits.
pub const RS_POSITIVE: usize = 0;

/// Head parameters. `d2` below is the topic-vector width `2·d_model`.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadIds {
    /// `w_p`, `1 × d2`.
    pub topic: ParamId,
    /// `W_q`, `W_k`, `W_v`, each `d2 × d2`.
    pub query: ParamId,
    pub key: ParamId,
    pub value: ParamId,
    /// `W_r`, `2 × d2`.
    pub response: ParamId,
    /// `w_d`, `1 × 4·d2`.
    pub reply: ParamId,
}

impl HeadIds {
    pub fn declare<T: Real, R: rand::Rng + ?Sized>(
        b: &mut ParamBuilder<'_, T, R>,
        d_model: usize,
    ) -> Result<Self, Error> {
        let d2 = 2 * d_model;
        let w = Init::Normal(INIT_STD);
        Ok(Self {
            topic: b.param("heads.topic", 1, d2, w)?,
            query: b.param("heads.query", d2, d2, w)?,
            key: b.param("heads.key", d2, d2, w)?,
            value: b.param("heads.value", d2, d2, w)?,
            response: b.param("heads.response", 2, d2, w)?,
            reply: b.param("heads.reply", 1, 4 * d2, w)?,
        })
    }
}

/// Same-topic logits `T · w_p` (`n × 1`); probabilities are their sigmoid.
pub fn topic_logits<T: Real>(g: &mut Graph<'_, T>, topic: Var, ids: &HeadIds) -> Var {
    let w = g.param(ids.topic);
    g.matmul_t(topic, w)
}

pub fn topic_probabilities<T: Real>(g: &Graph<'_, T>, logits: Var) -> Vec<T> {
    g.value(logits).data().iter().map(|&z| sigmoid(z)).collect()
}

/// Mean binary cross-entropy of same-topic predictions.
pub fn topic_loss<T: Real>(g: &mut Graph<'_, T>, logits: Var, labels: &[bool]) -> Var {
    let targets: Vec<T> = labels
        .iter()
        .map(|&y| if y { T::one() } else { T::zero() })
        .collect();
    g.bce_with_logits(logits, &targets)
}

/// `softmax((T W_q)(T W_k)ᵀ / √w) (T W_v)` with `w` the topic-vector width.
pub fn self_attend<T: Real>(g: &mut Graph<'_, T>, topic: Var, ids: &HeadIds) -> Var {
    let width = g.value(topic).cols();
    let (wq, wk, wv) = (g.param(ids.query), g.param(ids.key), g.param(ids.value));
    let q = g.matmul(topic, wq);
    let k = g.matmul(topic, wk);
    let v = g.matmul(topic, wv);
    let scores = g.matmul_t(q, k);
    let scores = g.scale(scores, lit(1.0 / libm::sqrt(width as f64)));
    let weights = g.softmax(scores);
    g.matmul(weights, v)
}

/// `W_r · maxpool(T′)` as a `1×2` row; index [`RS_POSITIVE`] is "relevant".
pub fn response_logits<T: Real>(g: &mut Graph<'_, T>, attended: Var, ids: &HeadIds) -> Var {
    let pooled = g.max_pool_cols(attended);
    let w = g.param(ids.response);
    g.matmul_t(pooled, w)
}

/// `(p_relevant, p_irrelevant)` of a response-logit row.
pub fn response_probabilities<T: Real>(g: &Graph<'_, T>, logits: Var) -> (T, T) {
    let mut row = g.value(logits).data().to_vec();
    softmax_in_place(&mut row);
    (row[RS_POSITIVE], row[1 - RS_POSITIVE])
}

pub fn response_loss<T: Real>(g: &mut Graph<'_, T>, logits: Var, relevant: bool) -> Var {
    let target = if relevant { RS_POSITIVE } else { 1 - RS_POSITIVE };
    g.cross_entropy(logits, &[target])
}

/// Rows `[t′_n ; t′_c ; t′_n ⊙ t′_c ; t′_n − t′_c]` for every `c`, the last
/// (self) row included.
pub fn esim_features<T: Real>(g: &mut Graph<'_, T>, attended: Var) -> Var {
    let n = g.value(attended).rows();
    let last = g.select_rows(attended, &[n - 1]);
    let response = g.broadcast_rows(last, n);
    let product = g.mul(response, attended);
    let difference = g.sub(response, attended);
    g.concat_cols(&[response, attended, product, difference])
}

/// Reply-to logits `w_d · T″ᵀ` as a `1 × n` row.
pub fn reply_logits<T: Real>(g: &mut Graph<'_, T>, features: Var, ids: &HeadIds) -> Var {
    let w = g.param(ids.reply);
    g.matmul_t(w, features)
}

pub fn reply_distribution<T: Real>(g: &Graph<'_, T>, logits: Var) -> Vec<T> {
    let mut row = g.value(logits).data().to_vec();
    softmax_in_place(&mut row);
    row
}

pub fn reply_loss<T: Real>(g: &mut Graph<'_, T>, logits: Var, gold_parent: usize) -> Var {
    g.cross_entropy(logits, &[gold_parent])
}

/// Index of the maximum, ties resolved toward the smallest index.
pub fn argmax<T: Real>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// `α`, `β`, `γ` of `α·L_rs + β·L_topic + γ·L_dis`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultiTaskWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for MultiTaskWeights {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 1.0,
            gamma: 1.0,
        }
    }
}

impl MultiTaskWeights {
    pub const RESPONSE_ONLY: Self = Self {
        alpha: 1.0,
        beta: 0.0,
        gamma: 0.0,
    };

    pub fn new(alpha: f64, beta: f64, gamma: f64) -> Result<Self, Error> {
        let w = Self { alpha, beta, gamma };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<(), Error> {
        for (field, v) in [("alpha", self.alpha), ("beta", self.beta), ("gamma", self.gamma)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::invalid(field, "weight must lie in [0, 1]"));
            }
        }
        if self.alpha == 0.0 && self.beta == 0.0 && self.gamma == 0.0 {
            return Err(Error::invalid("weights", "at least one weight must be positive"));
        }
        Ok(())
    }

    /// Combines component losses; `None` marks a task absent from the batch.
    pub fn combine(&self, rs: Option<f64>, topic: Option<f64>, dis: Option<f64>) -> Result<f64, Error> {
        self.validate()?;
        Ok(self.alpha * rs.unwrap_or(0.0)
            + self.beta * topic.unwrap_or(0.0)
            + self.gamma * dis.unwrap_or(0.0))
    }

    /// Every triple over `values³` except the all-zero one, in lexicographic
    /// `(α, β, γ)` order.
    pub fn grid(values: &[f64]) -> Vec<Self> {
        let mut out = Vec::new();
        for &alpha in values {
            for &beta in values {
                for &gamma in values {
                    if alpha != 0.0 || beta != 0.0 || gamma != 0.0 {
                        out.push(Self { alpha, beta, gamma });
                    }
                }
            }
        }
        out
    }

    /// `0, 0.1, …, 1`.
    pub fn default_grid_values() -> Vec<f64> {
        (0..=10).map(|i| i as f64 / 10.0).collect()
    }
}

/// Weighted sum on the tape; absent or zero-weighted tasks contribute nothing.
pub fn multitask_loss<T: Real>(
    g: &mut Graph<'_, T>,
    weights: &MultiTaskWeights,
    rs: Option<Var>,
    topic: Option<Var>,
    dis: Option<Var>,
) -> Result<Var, Error> {
    weights.validate()?;
    let mut total: Option<Var> = None;
    for (w, term) in [(weights.alpha, rs), (weights.beta, topic), (weights.gamma, dis)] {
        let Some(term) = term else { continue };
        if w == 0.0 {
            continue;
        }
        let scaled = if w == 1.0 { term } else { g.scale(term, lit(w)) };
        total = Some(match total {
            Some(t) => g.add(t, scaled),
            None => scaled,
        });
    }
    total.ok_or(Error::Empty("no weighted task in batch"))
}
