//! Perplexity and NPMI topic coherence.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;

use crate::corpus::TrainingInstance;
use crate::error::{Error, Result};
use crate::model::Model;

pub const DEFAULT_WINDOW: usize = 10;
/// Added to every pair count before normalizing.
pub const NPMI_SMOOTHING: f64 = 1e-12;
/// Top-n sizes averaged by [`topic_coherence`].
pub const COHERENCE_SIZES: [usize; 4] = [5, 10, 15, 20];

/// `exp(Σ NLL / Σ tokens)` with posterior-mean topics and dropout off.
/// Token counts include the closing `<eos>`.
pub fn perplexity(model: &Model, instances: &[TrainingInstance]) -> Result<f64> {
    if instances.is_empty() {
        return Err(Error::EmptyInstances);
    }
    let mut nll = 0.0;
    let mut tokens = 0usize;
    for inst in instances {
        nll += model.instance_nll(inst)?;
        tokens += inst.token_count();
    }
    Ok(perplexity_from_nll(nll, tokens))
}

/// `exp(total_nll / tokens)`.
pub fn perplexity_from_nll(total_nll: f64, tokens: usize) -> f64 {
    (total_nll / tokens as f64).exp()
}

/// Sliding-window document frequencies of words and unordered word pairs.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CooccurrenceStats {
    window: usize,
    total_windows: u64,
    words: HashMap<String, u64>,
    pairs: HashMap<(String, String), u64>,
}

fn pair_key(a: &str, b: &str) -> (String, String) {
    if a <= b {
        (a.to_string(), b.to_string())
    } else {
        (b.to_string(), a.to_string())
    }
}

impl CooccurrenceStats {
    /// Counts over `docs`; windows never cross a document boundary and a
    /// document shorter than the window is one window. With `keep`, only
    /// those words are counted.
    pub fn build<S: AsRef<str>>(docs: &[Vec<S>], window: usize, keep: Option<&HashSet<String>>) -> Result<Self> {
        if window < 2 {
            return Err(Error::Invalid(format!("window must be at least 2, got {window}")));
        }
        let mut stats = Self {
            window,
            ..Self::default()
        };
        for doc in docs {
            if doc.is_empty() {
                continue;
            }
            let tokens: Vec<Option<&str>> = doc
                .iter()
                .map(|t| t.as_ref())
                .map(|t| keep.is_none_or(|k| k.contains(t)).then_some(t))
                .collect();
            let n_windows = tokens.len().saturating_sub(window) + 1;
            for start in 0..n_windows {
                let end = (start + window).min(tokens.len());
                let mut set: Vec<&str> = tokens[start..end].iter().flatten().copied().collect();
                set.sort_unstable();
                set.dedup();
                stats.total_windows += 1;
                for (i, &a) in set.iter().enumerate() {
                    *stats.words.entry(a.to_string()).or_default() += 1;
                    for &b in &set[i + 1..] {
                        *stats.pairs.entry((a.to_string(), b.to_string())).or_default() += 1;
                    }
                }
            }
        }
        Ok(stats)
    }

    /// Stats from explicit counts, checked against the count invariants.
    pub fn from_counts(
        window: usize,
        total_windows: u64,
        words: impl IntoIterator<Item = (String, u64)>,
        pairs: impl IntoIterator<Item = ((String, String), u64)>,
    ) -> Result<Self> {
        let words: HashMap<String, u64> = words.into_iter().collect();
        let mut stats = Self {
            window,
            total_windows,
            words,
            pairs: HashMap::new(),
        };
        if let Some((w, _)) = stats.words.iter().find(|(_, &c)| c > total_windows) {
            return Err(Error::Invalid(format!("count of '{w}' exceeds window total")));
        }
        for ((a, b), c) in pairs {
            if c > stats.word_count(&a).min(stats.word_count(&b)) {
                return Err(Error::Invalid(format!("pair ({a}, {b}) exceeds a member count")));
            }
            stats.pairs.insert(pair_key(&a, &b), c);
        }
        Ok(stats)
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn total_windows(&self) -> u64 {
        self.total_windows
    }

    pub fn contains(&self, w: &str) -> bool {
        self.word_count(w) > 0
    }

    pub fn word_count(&self, w: &str) -> u64 {
        self.words.get(w).copied().unwrap_or(0)
    }

    pub fn pair_count(&self, a: &str, b: &str) -> u64 {
        if a == b {
            return self.word_count(a);
        }
        self.pairs.get(&pair_key(a, b)).copied().unwrap_or(0)
    }
}

/// Normalized PMI from window probabilities, in `[-1, 1]`.
pub fn npmi(w1: &str, w2: &str, stats: &CooccurrenceStats) -> Result<f64> {
    for w in [w1, w2] {
        if !stats.contains(w) {
            return Err(Error::UnknownWord(w.to_string()));
        }
    }
    let total = stats.total_windows() as f64;
    let p1 = stats.word_count(w1) as f64 / total;
    let p2 = stats.word_count(w2) as f64 / total;
    let p12 = (stats.pair_count(w1, w2) as f64 + NPMI_SMOOTHING) / total;
    let denom = -p12.ln();
    if denom <= 0.0 {
        return Ok(1.0);
    }
    Ok(((p12 / (p1 * p2)).ln() / denom).clamp(-1.0, 1.0))
}

/// Coherence of one topic at each of [`COHERENCE_SIZES`].
#[derive(Clone, Debug, PartialEq)]
pub struct TopicCoherence {
    pub by_size: [f64; 4],
    pub mean: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CoherenceReport {
    pub topics: Vec<TopicCoherence>,
    pub coherence: f64,
    /// Ranked words absent from the statistics, summed over topics.
    pub skipped: usize,
}

impl CoherenceReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (i, t) in self.topics.iter().enumerate() {
            for (n, v) in COHERENCE_SIZES.iter().zip(t.by_size) {
                writeln!(s, "topic {i} n={n} npmi {v:.6}").expect("string write");
            }
        }
        writeln!(s, "coherence {:.6}", self.coherence).expect("string write");
        s
    }
}

fn mean_pairwise_npmi(words: &[&str], stats: &CooccurrenceStats) -> Result<f64> {
    let mut sum = 0.0;
    let mut pairs = 0usize;
    for i in 0..words.len() {
        for j in i + 1..words.len() {
            sum += npmi(words[i], words[j], stats)?;
            pairs += 1;
        }
    }
    Ok(if pairs == 0 { 0.0 } else { sum / pairs as f64 })
}

/// Mean pairwise NPMI of each topic's top-n words for every n in
/// [`COHERENCE_SIZES`], averaged over the sizes and then over topics.
///
/// `topics` holds ranked word lists. Words missing from `stats` are skipped
/// and counted; a size with fewer than two usable words scores 0.
pub fn topic_coherence<S: AsRef<str>>(topics: &[Vec<S>], stats: &CooccurrenceStats) -> Result<CoherenceReport> {
    if topics.is_empty() {
        return Err(Error::EmptyTopicSet);
    }
    let mut skipped = 0;
    let mut out = Vec::with_capacity(topics.len());
    for ranked in topics {
        let present: Vec<&str> = ranked.iter().map(AsRef::as_ref).filter(|w| stats.contains(w)).collect();
        skipped += ranked.len() - present.len();
        let mut by_size = [0.0; 4];
        for (slot, &n) in by_size.iter_mut().zip(&COHERENCE_SIZES) {
            *slot = mean_pairwise_npmi(&present[..n.min(present.len())], stats)?;
        }
        let mean = by_size.iter().sum::<f64>() / by_size.len() as f64;
        out.push(TopicCoherence { by_size, mean });
    }
    let coherence = out.iter().map(|t| t.mean).sum::<f64>() / out.len() as f64;
    Ok(CoherenceReport {
        topics: out,
        coherence,
        skipped,
    })
}

/// Ranked topic words of a model, at most `k` per topic.
pub fn model_topic_words(model: &Model, vocab: &crate::corpus::Vocabulary, k: usize) -> Result<Vec<Vec<String>>> {
    let ntm = model
        .ntm
        .as_ref()
        .ok_or_else(|| Error::Invalid(format!("{} model has no topics", model.kind())))?;
    ntm.top_words(&model.store, vocab, k.min(vocab.tm_size()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Array;
    use crate::model::{ModelKind, ModelSpec};
    use crate::nlm::ExpertCell;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    fn stats(total: u64, words: &[(&str, u64)], pairs: &[(&str, &str, u64)]) -> CooccurrenceStats {
        CooccurrenceStats::from_counts(
            10,
            total,
            words.iter().map(|(w, c)| (w.to_string(), *c)),
            pairs.iter().map(|(a, b, c)| ((a.to_string(), b.to_string()), *c)),
        )
        .unwrap()
    }

    #[test]
    fn single_window_corpus() {
        let s = CooccurrenceStats::build(&[toks("a b")], 2, None).unwrap();
        assert_eq!(s.total_windows(), 1);
        assert_eq!((s.word_count("a"), s.word_count("b"), s.pair_count("a", "b")), (1, 1, 1));
    }

    #[test]
    fn sliding_windows_use_set_semantics() {
        let s = CooccurrenceStats::build(&[toks("a b a")], 2, None).unwrap();
        assert_eq!(s.total_windows(), 2);
        assert_eq!((s.word_count("a"), s.word_count("b"), s.pair_count("b", "a")), (2, 2, 2));
        let s = CooccurrenceStats::build(&[toks("a a a")], 3, None).unwrap();
        assert_eq!(s.word_count("a"), 1);
    }

    #[test]
    fn short_document_is_one_window_and_disjoint_words_never_pair() {
        let s = CooccurrenceStats::build(&[toks("a b c"), toks("x y")], 10, None).unwrap();
        assert_eq!(s.total_windows(), 2);
        assert_eq!(s.pair_count("a", "x"), 0);
        assert_eq!(s.pair_count("a", "c"), 1);
        assert!(CooccurrenceStats::build(&[toks("a b")], 1, None).is_err());
    }

    #[test]
    fn keep_filter_drops_words_but_not_windows() {
        let keep: HashSet<String> = ["a".to_string(), "c".to_string()].into();
        let s = CooccurrenceStats::build(&[toks("a b c d")], 2, Some(&keep)).unwrap();
        assert_eq!(s.total_windows(), 3);
        assert_eq!(s.word_count("b"), 0);
        assert_eq!(s.pair_count("a", "c"), 0);
        assert_eq!(s.word_count("c"), 2);
    }

    #[test]
    fn npmi_hand_cases() {
        let perfect = stats(10, &[("a", 1), ("b", 1)], &[("a", "b", 1)]);
        assert!((npmi("a", "b", &perfect).unwrap() - 1.0).abs() < 1e-12);
        let indep = stats(4, &[("a", 2), ("b", 2)], &[("a", "b", 1)]);
        assert!(npmi("a", "b", &indep).unwrap().abs() < 1e-12);
        let never = stats(4, &[("a", 2), ("b", 2)], &[]);
        let v = npmi("a", "b", &never).unwrap();
        assert!((-1.0..-0.9).contains(&v), "{v}");
        assert!(matches!(npmi("a", "zzz", &indep), Err(Error::UnknownWord(w)) if w == "zzz"));
    }

    #[test]
    fn npmi_is_symmetric() {
        let s = CooccurrenceStats::build(&[toks("a b c a d b e c a")], 3, None).unwrap();
        for a in ["a", "b", "c", "d", "e"] {
            for b in ["a", "b", "c", "d", "e"] {
                assert_eq!(npmi(a, b, &s).unwrap().to_bits(), npmi(b, a, &s).unwrap().to_bits());
            }
        }
    }

    #[test]
    fn from_counts_enforces_bounds() {
        let bad = CooccurrenceStats::from_counts(
            10,
            3,
            [("a".to_string(), 2), ("b".to_string(), 1)],
            [(("a".to_string(), "b".to_string()), 2)],
        );
        assert!(bad.is_err());
        assert!(CooccurrenceStats::from_counts(10, 1, [("a".to_string(), 2)], []).is_err());
    }

    #[test]
    fn coherence_anchors() {
        let words = ["a", "b", "c", "d", "e"];
        let all: Vec<(&str, u64)> = words.iter().map(|w| (*w, 3)).collect();
        let mut pairs = vec![];
        for i in 0..5 {
            for j in i + 1..5 {
                pairs.push((words[i], words[j], 3));
            }
        }
        let perfect = stats(30, &all, &pairs);
        let r = topic_coherence(&[words.to_vec()], &perfect).unwrap();
        assert!((r.coherence - 1.0).abs() < 1e-12);

        let indep_pairs: Vec<_> = pairs.iter().map(|&(a, b, _)| (a, b, 1)).collect();
        let half: Vec<(&str, u64)> = words.iter().map(|w| (*w, 2)).collect();
        let indep = stats(4, &half, &indep_pairs);
        let r = topic_coherence(&[words.to_vec()], &indep).unwrap();
        assert!(r.coherence.abs() < 1e-12);
        assert!(topic_coherence::<&str>(&[], &indep).is_err());
    }

    #[test]
    fn coherence_skips_missing_words() {
        let s = stats(4, &[("a", 2), ("b", 2)], &[("a", "b", 1)]);
        let r = topic_coherence(&[vec!["a", "zz", "b"]], &s).unwrap();
        assert_eq!(r.skipped, 1);
        assert!(r.coherence.abs() < 1e-12);
        let lone = topic_coherence(&[vec!["a"]], &s).unwrap();
        assert_eq!(lone.coherence, 0.0);
        let text = r.to_text();
        assert_eq!(text.lines().count(), 5);
        assert!(text.starts_with("topic 0 n=5 npmi "));
        assert!(text.ends_with("coherence 0.000000\n"));
    }

    fn spec() -> ModelSpec {
        ModelSpec {
            kind: ModelKind::Tcnlm,
            lm_vocab: 11,
            tm_vocab: 4,
            embed: 3,
            hidden: 4,
            factors: 2,
            topics: 2,
            layers: 1,
            encoder: [5, 3],
            candidate_tanh: false,
            expert_cell: ExpertCell::Rnn,
            prior_mu: 0.0,
            prior_sigma: 1.0,
        }
    }

    fn instances() -> Vec<TrainingInstance> {
        vec![
            TrainingInstance {
                target: vec![3, 4, 2],
                context_bow: vec![1, 0, 1, 0],
            },
            TrainingInstance {
                target: vec![7, 2],
                context_bow: vec![0, 2, 0, 1],
            },
        ]
    }

    #[test]
    fn uniform_model_perplexity_is_vocabulary_size() {
        let mut m = Model::new(spec(), 1).unwrap();
        let crate::model::Lm::Factored(lm) = &m.lm else { unreachable!() };
        let out = lm.output;
        m.store.set(out, Array::zeros(11, 4)).unwrap();
        let ppl = perplexity(&m, &instances()).unwrap();
        assert!((ppl - 11.0).abs() < 1e-9, "{ppl}");
        assert!(matches!(perplexity(&m, &[]), Err(Error::EmptyInstances)));
    }

    #[test]
    fn perplexity_is_order_invariant() {
        let m = Model::new(spec(), 2).unwrap();
        let mut insts = instances();
        let a = perplexity(&m, &insts).unwrap();
        insts.reverse();
        let b = perplexity(&m, &insts).unwrap();
        assert!((a - b).abs() < 1e-12);
        assert!(a > 1.0);
    }

    #[test]
    fn perplexity_from_token_probabilities() {
        let nll = -(0.5f64.ln()) - 0.125f64.ln();
        assert!((perplexity_from_nll(nll, 2) - 4.0).abs() < 1e-12);
        assert_eq!(perplexity_from_nll(0.0, 5), 1.0);
    }
}
