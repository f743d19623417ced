//! Synthetic multi-topic corpus with known topical vocabularies.
//!
//! Every paragraph draws one topic; its sentences mix words from that
//! topic's private vocabulary with shared function words. The output uses
//! the plain-text corpus layout: one sentence per line, blank line between
//! paragraphs.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Shared words; all are stopwords, so they stay out of the topic vocabulary.
pub const FUNCTION_WORDS: [&str; 10] = ["the", "a", "of", "and", "to", "in", "is", "was", "for", "on"];

const ONSETS: &[u8] = b"bdfgklmnprstvz";
const VOWELS: &[u8] = b"aeiou";

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticConfig {
    pub topics: usize,
    pub words_per_topic: usize,
    pub paragraphs: usize,
    pub sentences: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// Chance that a non-initial word is topical rather than a function word.
    pub topical_prob: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            topics: 2,
            words_per_topic: 30,
            paragraphs: 400,
            sentences: 3,
            min_len: 3,
            max_len: 6,
            topical_prob: 0.6,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticCorpus {
    pub text: String,
    /// Private vocabulary of every topic.
    pub topic_words: Vec<Vec<String>>,
    /// Topic of every paragraph, in order.
    pub labels: Vec<usize>,
}

impl SyntheticCorpus {
    /// Index of the topic vocabulary containing `word`.
    pub fn topic_of(&self, word: &str) -> Option<usize> {
        self.topic_words.iter().position(|ws| ws.iter().any(|w| w == word))
    }
}

/// Pronounceable pseudo-word, unique per `(topic, index)`.
pub fn topic_word(topic: usize, index: usize) -> String {
    let c = |i: usize| ONSETS[i % ONSETS.len()] as char;
    let v = |i: usize| VOWELS[i % VOWELS.len()] as char;
    let mut w = String::new();
    w.push(c(topic));
    w.push(v(index));
    w.push(c(index / VOWELS.len()));
    w.push(v(topic / ONSETS.len()));
    let mut rest = index / (VOWELS.len() * ONSETS.len());
    while rest > 0 {
        w.push(c(rest));
        rest /= ONSETS.len();
    }
    w
}

pub fn generate(cfg: &SyntheticConfig) -> Result<SyntheticCorpus> {
    if cfg.topics == 0 || cfg.words_per_topic == 0 || cfg.paragraphs == 0 || cfg.sentences == 0 {
        return Err(Error::Config("synthetic corpus sizes must be positive".into()));
    }
    if cfg.topics > ONSETS.len() * VOWELS.len() {
        return Err(Error::Config(format!("at most {} topics", ONSETS.len() * VOWELS.len())));
    }
    if cfg.min_len == 0 || cfg.min_len > cfg.max_len {
        return Err(Error::Config("sentence lengths need 1 <= min_len <= max_len".into()));
    }
    if !(0.0..=1.0).contains(&cfg.topical_prob) {
        return Err(Error::Config("topical_prob must lie in [0, 1]".into()));
    }
    let topic_words: Vec<Vec<String>> = (0..cfg.topics)
        .map(|k| (0..cfg.words_per_topic).map(|j| topic_word(k, j)).collect())
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut text = String::new();
    let mut labels = Vec::with_capacity(cfg.paragraphs);
    for p in 0..cfg.paragraphs {
        if p > 0 {
            text.push('\n');
        }
        let k = rng.random_range(0..cfg.topics);
        labels.push(k);
        for _ in 0..cfg.sentences {
            let len = rng.random_range(cfg.min_len..=cfg.max_len);
            let words: Vec<&str> = (0..len)
                .map(|i| {
                    if i == 0 || rng.random::<f64>() < cfg.topical_prob {
                        topic_words[k].choose(&mut rng).expect("non-empty").as_str()
                    } else {
                        FUNCTION_WORDS.choose(&mut rng).expect("non-empty")
                    }
                })
                .collect();
            text.push_str(&words.join(" "));
            text.push('\n');
        }
    }
    Ok(SyntheticCorpus {
        text,
        topic_words,
        labels,
    })
}
