//! Topic-conditioned sentence generation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Array, ParamStore, Tape};
use crate::corpus::{Vocabulary, EOS_ID, PAD_ID, UNK_ID};
use crate::error::{Error, Result};
use crate::model::{with_lm, Model};
use crate::nlm::{Input, LanguageModel};

/// Topic vector for generation: one-hot for a single id, otherwise the
/// normalized `weights` (uniform when absent) over `ids`.
pub fn topic_mixture(ids: &[usize], weights: Option<&[f64]>, topics: usize) -> Result<Array> {
    if ids.is_empty() {
        return Err(Error::EmptyTopicSet);
    }
    if let Some(&bad) = ids.iter().find(|&&i| i >= topics) {
        return Err(Error::Invalid(format!("topic {bad} out of range 0..{topics}")));
    }
    let w: Vec<f64> = match weights {
        Some(w) if w.len() != ids.len() => {
            return Err(Error::Invalid(format!("{} weights for {} topics", w.len(), ids.len())));
        }
        Some(w) if w.iter().any(|&x| !(x > 0.0) || !x.is_finite()) => {
            return Err(Error::Invalid("topic weights must be positive".into()));
        }
        Some(w) => w.to_vec(),
        None => vec![1.0; ids.len()],
    };
    let total: f64 = w.iter().sum();
    let mut t = Array::zeros(topics, 1);
    for (&i, &x) in ids.iter().zip(&w) {
        t.set(i, 0, t.get(i, 0) + x / total);
    }
    Ok(t)
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub enum Decoding {
    /// Argmax at every step, ties to the lowest id.
    #[default]
    Greedy,
    /// Draw from `softmax(log p / temperature)`.
    Sample { temperature: f64, seed: u64 },
}

fn is_banned(id: usize) -> bool {
    id == PAD_ID || id == UNK_ID
}

/// Decodes from a zero state and `<bos>` until `<eos>` or `max_len` tokens.
/// `<eos>` is not returned; `<pad>` and `<unk>` are never emitted.
pub fn generate_sentence<M: LanguageModel>(
    lm: &M,
    store: &ParamStore,
    t: Option<&Array>,
    max_len: usize,
    decoding: Decoding,
) -> Result<Vec<usize>> {
    if max_len == 0 {
        return Err(Error::Invalid("max_len must be at least 1".into()));
    }
    let mut rng = match decoding {
        Decoding::Sample { temperature, seed } => {
            if !(temperature > 0.0) {
                return Err(Error::Invalid("temperature must be positive".into()));
            }
            Some((temperature, ChaCha8Rng::seed_from_u64(seed)))
        }
        Decoding::Greedy => None,
    };
    let mut tape = Tape::new(store);
    let tv = t.map(|t| tape.constant(t.clone()));
    let mut state = lm.start(&mut tape, tv)?;
    let mut input = Input::Bos;
    let mut out = Vec::new();
    while out.len() < max_len {
        let logp = lm.step(&mut tape, &mut state, input, None)?;
        let logp = tape.value(logp).data();
        let next = match &mut rng {
            None => argmax_allowed(logp),
            Some((temp, r)) => sample_allowed(logp, *temp, r),
        };
        if next == EOS_ID {
            break;
        }
        out.push(next);
        input = Input::Token(next);
    }
    Ok(out)
}

fn argmax_allowed(logp: &[f64]) -> usize {
    let mut best = EOS_ID;
    for (i, &v) in logp.iter().enumerate() {
        if !is_banned(i) && (v > logp[best] || (v == logp[best] && i < best)) {
            best = i;
        }
    }
    best
}

fn sample_allowed(logp: &[f64], temperature: f64, rng: &mut ChaCha8Rng) -> usize {
    let max = logp
        .iter()
        .enumerate()
        .filter(|(i, _)| !is_banned(*i))
        .map(|(_, &v)| v)
        .fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logp
        .iter()
        .enumerate()
        .map(|(i, &v)| if is_banned(i) { 0.0 } else { ((v - max) / temperature).exp() })
        .collect();
    let mut u = rng.random::<f64>() * w.iter().sum::<f64>();
    for (i, &x) in w.iter().enumerate() {
        if u < x {
            return i;
        }
        u -= x;
    }
    EOS_ID
}

impl Model {
    /// Generates with whichever language model this holds.
    pub fn generate(&self, t: Option<&Array>, max_len: usize, decoding: Decoding) -> Result<Vec<usize>> {
        if self.kind().has_topics() && t.is_none() {
            return Err(Error::Invalid(format!("{} model needs a topic vector", self.kind())));
        }
        with_lm!(&self.lm, m => generate_sentence(m, &self.store, t, max_len, decoding))
    }
}

/// `topic <ids>: w1 w2 ...`
pub fn format_generation(topic_ids: &[usize], sentence: &[usize], vocab: &Vocabulary) -> String {
    let ids: Vec<String> = topic_ids.iter().map(usize::to_string).collect();
    let words: Vec<&str> = sentence.iter().map(|&i| vocab.lm_token(i)).collect();
    format!("topic {}: {}", ids.join(","), words.join(" "))
}
