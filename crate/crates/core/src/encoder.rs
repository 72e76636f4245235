//! Post-norm transformer encoder and its two pretraining heads: masked
//! language modeling and same-topic prediction over the `[CLS]` state.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::graph::{Graph, Var};
use crate::params::{Init, ParamBuilder, ParamId, INIT_STD};
use crate::tensor::{lit, Matrix, Real};
use crate::textenc::{EncodedPair, MaskedBatch, MAX_PAIR_LEN};
use crate::{Error, Rng};

/// Class index of "same topic" in the STP logits; the other class is 1.
pub const STP_POSITIVE: usize = 0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub dropout: f64,
    pub vocab_size: usize,
    pub max_positions: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            d_model: 64,
            n_layers: 2,
            n_heads: 4,
            d_ff: 256,
            dropout: 0.1,
            vocab_size: 0,
            max_positions: MAX_PAIR_LEN,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<(), Error> {
        if self.d_model == 0 || self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::invalid("d_model", "must be a positive multiple of n_heads"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::invalid("dropout", "must lie in [0, 1)"));
        }
        if self.vocab_size < crate::textenc::NUM_SPECIAL {
            return Err(Error::invalid("vocab_size", "must include the special tokens"));
        }
        if self.max_positions == 0 || self.d_ff == 0 {
            return Err(Error::invalid("max_positions", "dimensions must be positive"));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerIds {
    pub query: (ParamId, ParamId),
    pub key: (ParamId, ParamId),
    pub value: (ParamId, ParamId),
    pub output: (ParamId, ParamId),
    pub attn_norm: (ParamId, ParamId),
    pub ffn_in: (ParamId, ParamId),
    pub ffn_out: (ParamId, ParamId),
    pub ffn_norm: (ParamId, ParamId),
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderIds {
    pub token_embedding: ParamId,
    pub position_embedding: ParamId,
    pub segment_embedding: ParamId,
    pub layers: Vec<LayerIds>,
}

/// MLM projection `d_model × vocab` and STP projection `d_model × 2`.
#[derive(Clone, Debug, PartialEq)]
pub struct PretrainHeads {
    pub mlm: (ParamId, ParamId),
    pub stp: (ParamId, ParamId),
}

fn linear<T: Real, R: rand::Rng + ?Sized>(
    b: &mut ParamBuilder<'_, T, R>,
    name: &str,
    inputs: usize,
    outputs: usize,
) -> Result<(ParamId, ParamId), Error> {
    Ok((
        b.param(&format!("{name}.weight"), inputs, outputs, Init::Normal(INIT_STD))?,
        b.param(&format!("{name}.bias"), 1, outputs, Init::Zeros)?,
    ))
}

fn norm<T: Real, R: rand::Rng + ?Sized>(
    b: &mut ParamBuilder<'_, T, R>,
    name: &str,
    width: usize,
) -> Result<(ParamId, ParamId), Error> {
    Ok((
        b.param(&format!("{name}.gamma"), 1, width, Init::Ones)?,
        b.param(&format!("{name}.beta"), 1, width, Init::Zeros)?,
    ))
}

impl EncoderIds {
    pub fn declare<T: Real, R: rand::Rng + ?Sized>(
        b: &mut ParamBuilder<'_, T, R>,
        cfg: &EncoderConfig,
    ) -> Result<Self, Error> {
        let d = cfg.d_model;
        let token_embedding = b.param("embeddings.token", cfg.vocab_size, d, Init::Normal(INIT_STD))?;
        let position_embedding =
            b.param("embeddings.position", cfg.max_positions, d, Init::Normal(INIT_STD))?;
        let segment_embedding = b.param("embeddings.segment", 2, d, Init::Normal(INIT_STD))?;
        let layers = (0..cfg.n_layers)
            .map(|i| {
                let p = format!("layer{i}");
                Ok(LayerIds {
                    query: linear(b, &format!("{p}.attn.query"), d, d)?,
                    key: linear(b, &format!("{p}.attn.key"), d, d)?,
                    value: linear(b, &format!("{p}.attn.value"), d, d)?,
                    output: linear(b, &format!("{p}.attn.output"), d, d)?,
                    attn_norm: norm(b, &format!("{p}.attn_norm"), d)?,
                    ffn_in: linear(b, &format!("{p}.ffn.in"), d, cfg.d_ff)?,
                    ffn_out: linear(b, &format!("{p}.ffn.out"), cfg.d_ff, d)?,
                    ffn_norm: norm(b, &format!("{p}.ffn_norm"), d)?,
                })
            })
            .collect::<Result<_, Error>>()?;
        Ok(Self {
            token_embedding,
            position_embedding,
            segment_embedding,
            layers,
        })
    }
}

impl PretrainHeads {
    pub fn declare<T: Real, R: rand::Rng + ?Sized>(
        b: &mut ParamBuilder<'_, T, R>,
        cfg: &EncoderConfig,
    ) -> Result<Self, Error> {
        Ok(Self {
            mlm: linear(b, "mlm", cfg.d_model, cfg.vocab_size)?,
            stp: linear(b, "stp", cfg.d_model, 2)?,
        })
    }
}

/// Hidden states of one pair plus the per-layer, per-head attention maps.
pub struct EncoderOutput {
    pub hidden: Var,
    pub attention: Vec<Vec<Var>>,
}

fn affine<T: Real>(g: &mut Graph<'_, T>, x: Var, (w, b): (ParamId, ParamId)) -> Var {
    let w = g.param(w);
    let b = g.param(b);
    let y = g.matmul(x, w);
    g.add_row(y, b)
}

fn maybe_dropout<T: Real>(g: &mut Graph<'_, T>, x: Var, p: f64, rng: &mut Option<&mut Rng>) -> Var {
    match rng {
        Some(rng) if p > 0.0 => {
            let keep = lit::<T>(1.0 / (1.0 - p));
            let n = g.value(x).len();
            let mask = (0..n)
                .map(|_| if rng.gen::<f64>() < p { T::zero() } else { keep })
                .collect();
            g.dropout(x, mask)
        }
        _ => x,
    }
}

/// Runs the encoder over one pair. Dropout is active only when `rng` is
/// supplied (training mode).
pub fn encoder_forward<T: Real>(
    g: &mut Graph<'_, T>,
    ids: &EncoderIds,
    cfg: &EncoderConfig,
    pair: &EncodedPair,
    mut rng: Option<&mut Rng>,
) -> Result<EncoderOutput, Error> {
    let len = pair.len();
    if len == 0 {
        return Err(Error::Empty("encoded pair"));
    }
    if len > cfg.max_positions {
        return Err(Error::SequenceTooLong {
            len,
            max: cfg.max_positions,
        });
    }
    if let Some(&id) = pair.token_ids.iter().find(|&&id| id >= cfg.vocab_size) {
        return Err(Error::TokenOutOfRange {
            id,
            vocab_size: cfg.vocab_size,
        });
    }
    let segments: Vec<usize> = pair.segment_ids.iter().map(|&s| s as usize).collect();
    let positions: Vec<usize> = (0..len).collect();

    let tok_table = g.param(ids.token_embedding);
    let pos_table = g.param(ids.position_embedding);
    let seg_table = g.param(ids.segment_embedding);
    let tok = g.gather(tok_table, &pair.token_ids);
    let pos = g.gather(pos_table, &positions);
    let seg = g.gather(seg_table, &segments);
    let x = g.add(tok, pos);
    let x = g.add(x, seg);
    let mut x = maybe_dropout(g, x, cfg.dropout, &mut rng);

    let key_mask = g.constant(Matrix::row_vector(
        pair.attention_mask
            .iter()
            .map(|&m| if m == 1 { T::zero() } else { T::neg_infinity() })
            .collect(),
    ));
    let dh = cfg.head_dim();
    let scale = lit::<T>(1.0 / libm::sqrt(dh as f64));
    let mut attention = Vec::with_capacity(cfg.n_layers);

    for layer in &ids.layers {
        let q = affine(g, x, layer.query);
        let k = affine(g, x, layer.key);
        let v = affine(g, x, layer.value);
        let mut heads = Vec::with_capacity(cfg.n_heads);
        let mut maps = Vec::with_capacity(cfg.n_heads);
        for h in 0..cfg.n_heads {
            let qh = g.slice_cols(q, h * dh, dh);
            let kh = g.slice_cols(k, h * dh, dh);
            let vh = g.slice_cols(v, h * dh, dh);
            let scores = g.matmul_t(qh, kh);
            let scores = g.scale(scores, scale);
            let scores = g.add_row(scores, key_mask);
            let weights = g.softmax(scores);
            maps.push(weights);
            heads.push(g.matmul(weights, vh));
        }
        attention.push(maps);
        let merged = if heads.len() == 1 {
            heads[0]
        } else {
            g.concat_cols(&heads)
        };
        let attn_out = affine(g, merged, layer.output);
        let attn_out = maybe_dropout(g, attn_out, cfg.dropout, &mut rng);
        let residual = g.add(x, attn_out);
        let (gamma, beta) = (g.param(layer.attn_norm.0), g.param(layer.attn_norm.1));
        x = g.layer_norm(residual, gamma, beta);

        let hidden = affine(g, x, layer.ffn_in);
        let hidden = g.gelu(hidden);
        let ff = affine(g, hidden, layer.ffn_out);
        let ff = maybe_dropout(g, ff, cfg.dropout, &mut rng);
        let residual = g.add(x, ff);
        let (gamma, beta) = (g.param(layer.ffn_norm.0), g.param(layer.ffn_norm.1));
        x = g.layer_norm(residual, gamma, beta);
    }
    Ok(EncoderOutput {
        hidden: x,
        attention,
    })
}

/// Mean cross-entropy of the MLM head at labeled positions; a constant 0 when
/// nothing is labeled.
pub fn mlm_loss<T: Real>(
    g: &mut Graph<'_, T>,
    hidden: Var,
    batch: &MaskedBatch,
    heads: &PretrainHeads,
) -> Var {
    let (positions, targets): (Vec<usize>, Vec<usize>) = batch.labeled_positions().unzip();
    if positions.is_empty() {
        return g.constant(Matrix::scalar(T::zero()));
    }
    let rows = g.select_rows(hidden, &positions);
    let logits = affine(g, rows, heads.mlm);
    g.cross_entropy(logits, &targets)
}

/// `T_cls · W_stp + b`, a `1×2` row: index [`STP_POSITIVE`] is "same topic".
pub fn stp_logits<T: Real>(g: &mut Graph<'_, T>, hidden: Var, heads: &PretrainHeads) -> Var {
    let cls = g.select_rows(hidden, &[0]);
    affine(g, cls, heads.stp)
}

/// Two-class STP cross-entropy for one pair.
pub fn stp_loss<T: Real>(g: &mut Graph<'_, T>, logits: Var, positive: bool) -> Var {
    let target = if positive { STP_POSITIVE } else { 1 - STP_POSITIVE };
    g.cross_entropy(logits, &[target])
}
