//! Tokenization, vocabulary and `[CLS] u1 [SEP] u2 [SEP]` pair encoding.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::Error;

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const CLS: usize = 2;
pub const SEP: usize = 3;
pub const MASK: usize = 4;
pub const NUM_SPECIAL: usize = 5;
pub const SPECIAL_TOKENS: [&str; NUM_SPECIAL] = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"];

/// Maximum encoded pair length, specials included.
pub const MAX_PAIR_LEN: usize = 192;
/// Maximum number of second-utterance tokens, excluding its `[SEP]`.
pub const MAX_RESPONSE_TOKENS: usize = 95;

/// Label value for positions that carry no MLM target.
pub const IGNORE_LABEL: i32 = -1;

/// Lowercases, splits on whitespace and emits every punctuation character as
/// its own token. Punctuation is any character that is neither alphanumeric
/// nor whitespace.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    for ch in text.chars() {
        if ch.is_whitespace() {
            flush(&mut current, &mut tokens);
        } else if ch.is_alphanumeric() {
            current.extend(ch.to_lowercase());
        } else {
            flush(&mut current, &mut tokens);
            tokens.push(ch.to_lowercase().collect());
        }
    }
    flush(&mut current, &mut tokens);
    tokens
}

fn flush(current: &mut String, tokens: &mut Vec<String>) {
    if !current.is_empty() {
        tokens.push(core::mem::take(current));
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    token_to_id: BTreeMap<String, usize>,
    id_to_token: Vec<String>,
}

impl Default for Vocab {
    fn default() -> Self {
        Self::specials_only()
    }
}

impl Vocab {
    pub fn specials_only() -> Self {
        let id_to_token: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
        let token_to_id = id_to_token
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Self {
            token_to_id,
            id_to_token,
        }
    }

    /// Counts tokens and assigns ids from 5 upward to every token seen at
    /// least `min_count` times, most frequent first, ties lexicographic.
    pub fn build<'a>(tokens: impl IntoIterator<Item = &'a str>, min_count: usize) -> Self {
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for t in tokens {
            *counts.entry(t).or_default() += 1;
        }
        let mut kept: Vec<(&str, usize)> = counts
            .into_iter()
            .filter(|&(t, c)| c >= min_count.max(1) && !SPECIAL_TOKENS.contains(&t))
            .collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        let mut vocab = Self::specials_only();
        for (t, _) in kept {
            vocab.push(t);
        }
        vocab
    }

    /// Rebuilds a vocabulary from its `{token: id}` map.
    pub fn from_map(map: &BTreeMap<String, usize>) -> Result<Self, Error> {
        let mut id_to_token = vec![None; map.len()];
        for (token, &id) in map {
            let slot = id_to_token
                .get_mut(id)
                .ok_or_else(|| Error::invalid("vocab", "ids must be contiguous from 0"))?;
            if slot.is_some() {
                return Err(Error::invalid("vocab", "duplicate id"));
            }
            *slot = Some(token.clone());
        }
        let id_to_token: Vec<String> = id_to_token
            .into_iter()
            .map(|t| t.ok_or_else(|| Error::invalid("vocab", "ids must be contiguous from 0")))
            .collect::<Result<_, _>>()?;
        if id_to_token.len() < NUM_SPECIAL
            || id_to_token[..NUM_SPECIAL]
                .iter()
                .zip(SPECIAL_TOKENS)
                .any(|(a, b)| a != b)
        {
            return Err(Error::invalid("vocab", "special tokens must occupy ids 0-4"));
        }
        Ok(Self {
            token_to_id: map.clone(),
            id_to_token,
        })
    }

    fn push(&mut self, token: &str) {
        self.token_to_id
            .insert(token.to_string(), self.id_to_token.len());
        self.id_to_token.push(token.to_string());
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        self.id_to_token.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.token_to_id.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.id_to_token.get(id).map(String::as_str)
    }

    pub fn to_map(&self) -> BTreeMap<String, usize> {
        self.token_to_id.clone()
    }

    pub fn decode(&self, ids: &[usize]) -> Vec<&str> {
        ids.iter().map(|&i| self.token(i).unwrap_or("[UNK]")).collect()
    }
}

/// Encoder input for one utterance pair.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodedPair {
    pub token_ids: Vec<usize>,
    pub segment_ids: Vec<u8>,
    pub attention_mask: Vec<u8>,
}

impl EncodedPair {
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }

    pub fn positions(&self) -> core::ops::Range<usize> {
        0..self.len()
    }

    /// Number of non-padding positions.
    pub fn real_len(&self) -> usize {
        self.attention_mask.iter().filter(|&&m| m == 1).count()
    }

    /// Appends `[PAD]` up to `len` positions.
    pub fn pad_to(&mut self, len: usize) {
        while self.token_ids.len() < len {
            self.token_ids.push(PAD);
            self.segment_ids.push(0);
            self.attention_mask.push(0);
        }
    }

    /// Real, non-special positions: the tokens of both utterances.
    pub fn content_positions(&self) -> Vec<usize> {
        self.token_ids
            .iter()
            .zip(&self.attention_mask)
            .enumerate()
            .filter(|(_, (&id, &m))| m == 1 && !is_structural(id))
            .map(|(i, _)| i)
            .collect()
    }
}

/// `[PAD]`, `[CLS]` and `[SEP]`: positions that never carry content.
#[inline]
pub fn is_structural(id: usize) -> bool {
    id == PAD || id == CLS || id == SEP
}

/// Encodes `[CLS] u1 [SEP] u2 [SEP]` under the default 192/95 budget.
pub fn encode_pair(u1: &[String], u2: &[String], vocab: &Vocab) -> EncodedPair {
    encode_pair_with(u1, u2, vocab, MAX_PAIR_LEN, MAX_RESPONSE_TOKENS)
}

/// `u2` is cut from the right to `max_response`; `u1` keeps its most recent
/// tokens so the whole pair fits `max_len`.
pub fn encode_pair_with(
    u1: &[String],
    u2: &[String],
    vocab: &Vocab,
    max_len: usize,
    max_response: usize,
) -> EncodedPair {
    let u2 = &u2[..u2.len().min(max_response)];
    let u1_budget = max_len.saturating_sub(3 + u2.len());
    let u1 = &u1[u1.len().saturating_sub(u1_budget)..];

    let len = u1.len() + u2.len() + 3;
    let mut token_ids = Vec::with_capacity(len);
    let mut segment_ids = Vec::with_capacity(len);
    token_ids.push(CLS);
    token_ids.extend(u1.iter().map(|t| vocab.id(t)));
    token_ids.push(SEP);
    segment_ids.resize(token_ids.len(), 0);
    token_ids.extend(u2.iter().map(|t| vocab.id(t)));
    token_ids.push(SEP);
    segment_ids.resize(token_ids.len(), 1);
    EncodedPair {
        attention_mask: vec![1; token_ids.len()],
        token_ids,
        segment_ids,
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaskedBatch {
    pub inputs: EncodedPair,
    /// Original id at selected positions, [`IGNORE_LABEL`] elsewhere.
    pub mlm_labels: Vec<i32>,
}

impl MaskedBatch {
    pub fn labeled_positions(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.mlm_labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l != IGNORE_LABEL)
            .map(|(i, &l)| (i, l as usize))
    }
}

/// BERT-style masking: each real non-special token is selected with
/// probability `mask_prob`; a selected token becomes `[MASK]` 80% of the time,
/// a random non-special id 10% of the time and stays unchanged otherwise.
pub fn mask_for_mlm<R: Rng + ?Sized>(
    pair: &EncodedPair,
    vocab_size: usize,
    rng: &mut R,
    mask_prob: f64,
) -> MaskedBatch {
    let mut inputs = pair.clone();
    let mut mlm_labels = vec![IGNORE_LABEL; pair.len()];
    for i in 0..pair.len() {
        let id = pair.token_ids[i];
        if pair.attention_mask[i] == 0 || id < NUM_SPECIAL {
            continue;
        }
        if rng.gen::<f64>() >= mask_prob {
            continue;
        }
        mlm_labels[i] = id as i32;
        let action: f64 = rng.gen();
        if action < 0.8 {
            inputs.token_ids[i] = MASK;
        } else if action < 0.9 {
            if vocab_size > NUM_SPECIAL {
                inputs.token_ids[i] = rng.gen_range(NUM_SPECIAL..vocab_size);
            }
        }
    }
    MaskedBatch { inputs, mlm_labels }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeded_rng;

    fn toks(s: &str) -> Vec<String> {
        tokenize(s)
    }

    #[test]
    fn tokenize_examples() {
        assert_eq!(toks("Hello, world"), ["hello", ",", "world"]);
        assert!(toks("").is_empty());
        assert_eq!(
            toks("opt/lampp/lampp start"),
            ["opt", "/", "lampp", "/", "lampp", "start"]
        );
    }

    #[test]
    fn vocab_orders_by_frequency_then_lexicographic() {
        let corpus = ["b", "a", "c", "a", "b", "a", "b", "a", "b", "a", "b"];
        let v = Vocab::build(corpus.iter().copied(), 2);
        assert_eq!(v.id("a"), 5);
        assert_eq!(v.id("b"), 6);
        assert_eq!(v.id("c"), UNK);
        assert_eq!(v.len(), 7);
        assert_eq!(Vocab::build(corpus.iter().copied(), 2), v);
    }

    #[test]
    fn empty_corpus_gives_specials_only() {
        let v = Vocab::build(core::iter::empty(), 1);
        assert_eq!(v.len(), NUM_SPECIAL);
        for (i, s) in SPECIAL_TOKENS.iter().enumerate() {
            assert_eq!(v.id(s), i);
        }
    }

    #[test]
    fn vocab_map_roundtrip_and_validation() {
        let v = Vocab::build(["x", "y", "y"].iter().copied(), 1);
        assert_eq!(Vocab::from_map(&v.to_map()).unwrap(), v);
        let mut broken = v.to_map();
        broken.insert("z".into(), 42);
        assert!(Vocab::from_map(&broken).is_err());
    }

    #[test]
    fn encode_pair_layout() {
        let v = Vocab::build(["hi", "hello"].iter().copied(), 1);
        let p = encode_pair(&toks("hi"), &toks("hello"), &v);
        assert_eq!(p.token_ids, [CLS, v.id("hi"), SEP, v.id("hello"), SEP]);
        assert_eq!(p.segment_ids, [0, 0, 0, 1, 1]);
        assert_eq!(p.attention_mask, [1; 5]);
        assert_eq!(p.positions(), 0..5);
    }

    fn words(n: usize, prefix: &str) -> Vec<String> {
        (0..n).map(|i| alloc::format!("{prefix}{i}")).collect()
    }

    #[test]
    fn response_is_capped_at_95_tokens() {
        let v = Vocab::default();
        let p = encode_pair(&toks("hi"), &words(200, "w"), &v);
        let seg1 = p.segment_ids.iter().filter(|&&s| s == 1).count();
        assert_eq!(seg1, MAX_RESPONSE_TOKENS + 1);
    }

    #[test]
    fn context_keeps_most_recent_tokens() {
        let u1 = words(300, "c");
        let v = Vocab::build(u1.iter().map(String::as_str), 1);
        let p = encode_pair(&u1, &words(95, "r"), &v);
        assert_eq!(p.len(), MAX_PAIR_LEN);
        let first_sep = p.token_ids.iter().position(|&t| t == SEP).unwrap();
        assert_eq!(first_sep - 1, 94);
        assert_eq!(p.token_ids[1], v.id("c206"));
        assert_eq!(p.token_ids[first_sep - 1], v.id("c299"));
    }

    #[test]
    fn padding_extends_all_three_sequences() {
        let v = Vocab::default();
        let mut p = encode_pair(&toks("a b"), &toks("c"), &v);
        p.pad_to(9);
        assert_eq!(p.len(), 9);
        assert_eq!(p.segment_ids.len(), 9);
        assert_eq!(&p.attention_mask[6..], &[0, 0, 0]);
        assert_eq!(p.real_len(), 6);
    }

    #[test]
    fn zero_mask_prob_is_identity() {
        let v = Vocab::build(["a", "b"].iter().copied(), 1);
        let p = encode_pair(&toks("a b"), &toks("b a"), &v);
        let mut rng = seeded_rng(1);
        let m = mask_for_mlm(&p, v.len(), &mut rng, 0.0);
        assert_eq!(m.inputs, p);
        assert!(m.mlm_labels.iter().all(|&l| l == IGNORE_LABEL));
    }

    #[test]
    fn structural_positions_are_never_masked() {
        let v = Vocab::build(["a", "b"].iter().copied(), 1);
        let mut p = encode_pair(&toks("a b a"), &toks("b a"), &v);
        p.pad_to(12);
        let mut rng = seeded_rng(2);
        for _ in 0..200 {
            let m = mask_for_mlm(&p, v.len(), &mut rng, 1.0);
            for (i, &id) in p.token_ids.iter().enumerate() {
                if id < NUM_SPECIAL {
                    assert_eq!(m.mlm_labels[i], IGNORE_LABEL);
                    assert_eq!(m.inputs.token_ids[i], id);
                } else {
                    assert_eq!(m.mlm_labels[i], id as i32);
                }
            }
            assert_eq!(m.inputs.segment_ids, p.segment_ids);
            assert_eq!(m.inputs.attention_mask, p.attention_mask);
        }
    }
}
