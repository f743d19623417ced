//! Text ingestion: tokenization, the two vocabularies, bag-of-words and
//! sequence encoding, and assembly of training instances from paragraphs.
//!
//! Input text has one sentence per line and a blank line between
//! paragraphs.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;

use crate::error::{Error, Result};

pub const PAD: &str = "<pad>";
pub const UNK: &str = "<unk>";
pub const EOS: &str = "<eos>";

pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
pub const EOS_ID: usize = 2;
pub const RESERVED: [&str; 3] = [PAD, UNK, EOS];

pub const VOCAB_MAGIC: &str = "TCNLM-VOCAB-1";

pub const DEFAULT_SEQ_LEN: usize = 30;
pub const DEFAULT_MAX_PARAGRAPH_WORDS: usize = 300;

/// Bundled English stopword list, one word per line.
pub const DEFAULT_STOPWORDS: &str = include_str!("../assets/stopwords.txt");

fn is_punct(c: char) -> bool {
    c.is_ascii_punctuation()
        || matches!(
            c,
            '\u{2018}' | '\u{2019}' | '\u{201C}' | '\u{201D}' | '\u{2026}' | '\u{2013}' | '\u{2014}' | '\u{00AB}' | '\u{00BB}'
        )
}

/// Lowercases, splits on whitespace, and peels leading and trailing
/// punctuation characters off each chunk as one-character tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for chunk in text.split_whitespace() {
        let lower = chunk.to_lowercase();
        let chars: Vec<char> = lower.chars().collect();
        let mut start = 0;
        while start < chars.len() && is_punct(chars[start]) {
            start += 1;
        }
        let mut end = chars.len();
        while end > start && is_punct(chars[end - 1]) {
            end -= 1;
        }
        out.extend(chars[..start].iter().map(|c| c.to_string()));
        if start < end {
            out.push(chars[start..end].iter().collect());
        }
        out.extend(chars[end..].iter().map(|c| c.to_string()));
    }
    out
}

/// Splits raw text into paragraphs of tokenized sentences.
pub fn parse_paragraphs(text: &str) -> Vec<Vec<Vec<String>>> {
    let mut paragraphs = Vec::new();
    let mut current: Vec<Vec<String>> = Vec::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            if !current.is_empty() {
                paragraphs.push(std::mem::take(&mut current));
            }
            continue;
        }
        let toks = tokenize(line);
        if !toks.is_empty() {
            current.push(toks);
        }
    }
    if !current.is_empty() {
        paragraphs.push(current);
    }
    paragraphs
}

pub fn parse_stopwords(text: &str) -> HashSet<String> {
    text.lines()
        .map(|l| l.trim().to_lowercase())
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .collect()
}

/// Frequency thresholds for vocabulary construction.
#[derive(Clone, Debug, PartialEq)]
pub struct VocabConfig {
    pub lm_min_count: u64,
    pub tm_min_count: u64,
    /// Fraction of the most frequent topic-vocabulary candidates to drop.
    pub tm_max_frac: f64,
    pub tm_min_doc_freq: u64,
    pub stopwords: HashSet<String>,
}

impl Default for VocabConfig {
    fn default() -> Self {
        Self {
            lm_min_count: 2,
            tm_min_count: 2,
            tm_max_frac: 0.001,
            tm_min_doc_freq: 2,
            stopwords: parse_stopwords(DEFAULT_STOPWORDS),
        }
    }
}

/// Language-model and topic-model vocabularies.
#[derive(Clone, Debug, PartialEq)]
pub struct Vocabulary {
    lm_tokens: Vec<String>,
    tm_tokens: Vec<String>,
    lm_index: HashMap<String, usize>,
    tm_index: HashMap<String, usize>,
    /// Corpus frequency and document frequency per lm id; zero for reserved
    /// tokens and for vocabularies loaded from disk.
    pub lm_counts: Vec<(u64, u64)>,
    pub tm_counts: Vec<(u64, u64)>,
}

fn index_of(tokens: &[String]) -> HashMap<String, usize> {
    tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect()
}

fn sort_by_count(mut entries: Vec<(&str, u64, u64)>) -> Vec<(&str, u64, u64)> {
    entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    entries
}

impl Vocabulary {
    pub fn from_tokens(lm_tokens: Vec<String>, tm_tokens: Vec<String>) -> Result<Self> {
        if lm_tokens.len() < RESERVED.len() || lm_tokens[..RESERVED.len()] != RESERVED {
            return Err(Error::format("vocabulary", "lm vocabulary must start with <pad> <unk> <eos>"));
        }
        if tm_tokens.is_empty() {
            return Err(Error::EmptyTopicVocabulary);
        }
        let lm_index = index_of(&lm_tokens);
        let tm_index = index_of(&tm_tokens);
        if lm_index.len() != lm_tokens.len() || tm_index.len() != tm_tokens.len() {
            return Err(Error::format("vocabulary", "duplicate token"));
        }
        Ok(Self {
            lm_counts: vec![(0, 0); lm_tokens.len()],
            tm_counts: vec![(0, 0); tm_tokens.len()],
            lm_tokens,
            tm_tokens,
            lm_index,
            tm_index,
        })
    }

    pub fn lm_size(&self) -> usize {
        self.lm_tokens.len()
    }

    pub fn tm_size(&self) -> usize {
        self.tm_tokens.len()
    }

    pub fn lm_tokens(&self) -> &[String] {
        &self.lm_tokens
    }

    pub fn tm_tokens(&self) -> &[String] {
        &self.tm_tokens
    }

    pub fn lm_id(&self, token: &str) -> Option<usize> {
        self.lm_index.get(token).copied()
    }

    pub fn tm_id(&self, token: &str) -> Option<usize> {
        self.tm_index.get(token).copied()
    }

    pub fn lm_token(&self, id: usize) -> &str {
        &self.lm_tokens[id]
    }

    pub fn tm_token(&self, id: usize) -> &str {
        &self.tm_tokens[id]
    }

    pub fn is_reserved(id: usize) -> bool {
        id < RESERVED.len()
    }

    /// Serializes to the line-oriented vocabulary file format.
    pub fn to_file_string(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{VOCAB_MAGIC}");
        let _ = writeln!(s, "{}", self.lm_tokens.len());
        let _ = writeln!(s, "{}", self.tm_tokens.len());
        for t in self.lm_tokens.iter().chain(&self.tm_tokens) {
            let _ = writeln!(s, "{t}");
        }
        s
    }

    pub fn from_file_str(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(VOCAB_MAGIC) {
            return Err(Error::format("vocabulary", "missing magic header"));
        }
        let mut size = |what: &str| -> Result<usize> {
            lines
                .next()
                .and_then(|l| l.trim().parse().ok())
                .ok_or_else(|| Error::format("vocabulary", format!("bad {what} size")))
        };
        let d_lm = size("lm")?;
        let d_tm = size("tm")?;
        let toks: Vec<String> = lines.map(str::to_string).collect();
        if toks.len() != d_lm + d_tm {
            return Err(Error::format(
                "vocabulary",
                format!("expected {} tokens, found {}", d_lm + d_tm, toks.len()),
            ));
        }
        Self::from_tokens(toks[..d_lm].to_vec(), toks[d_lm..].to_vec())
    }
}

/// Builds both vocabularies from tokenized documents.
///
/// The lm vocabulary keeps tokens seen at least `lm_min_count` times. The tm
/// vocabulary independently keeps tokens seen at least `tm_min_count` times,
/// then drops stopwords, the top `tm_max_frac` most frequent remaining
/// candidates, and tokens present in fewer than `tm_min_doc_freq` documents.
/// Both are ordered by count descending, ties lexicographic.
pub fn build_vocabularies(docs: &[Vec<String>], cfg: &VocabConfig) -> Result<Vocabulary> {
    let mut counts: HashMap<&str, (u64, u64)> = HashMap::new();
    for doc in docs {
        let mut seen: HashSet<&str> = HashSet::new();
        for tok in doc {
            let e = counts.entry(tok.as_str()).or_insert((0, 0));
            e.0 += 1;
            if seen.insert(tok.as_str()) {
                e.1 += 1;
            }
        }
    }
    let reserved: HashSet<&str> = RESERVED.iter().copied().collect();

    let lm = sort_by_count(
        counts
            .iter()
            .filter(|(t, (c, _))| *c >= cfg.lm_min_count && !reserved.contains(**t))
            .map(|(t, (c, d))| (*t, *c, *d))
            .collect(),
    );

    let candidates = sort_by_count(
        counts
            .iter()
            .filter(|(t, (c, _))| {
                *c >= cfg.tm_min_count && !reserved.contains(**t) && !cfg.stopwords.contains(**t)
            })
            .map(|(t, (c, d))| (*t, *c, *d))
            .collect(),
    );
    let drop_top = (cfg.tm_max_frac * candidates.len() as f64).floor() as usize;
    let tm: Vec<_> = candidates
        .into_iter()
        .skip(drop_top)
        .filter(|(_, _, d)| *d >= cfg.tm_min_doc_freq)
        .collect();
    if tm.is_empty() {
        return Err(Error::EmptyTopicVocabulary);
    }

    let lm_tokens: Vec<String> = RESERVED
        .iter()
        .map(|s| s.to_string())
        .chain(lm.iter().map(|(t, _, _)| t.to_string()))
        .collect();
    let tm_tokens: Vec<String> = tm.iter().map(|(t, _, _)| t.to_string()).collect();
    let mut vocab = Vocabulary::from_tokens(lm_tokens, tm_tokens)?;
    for (i, (_, c, d)) in lm.iter().enumerate() {
        vocab.lm_counts[RESERVED.len() + i] = (*c, *d);
    }
    vocab.tm_counts = tm.iter().map(|(_, c, d)| (*c, *d)).collect();
    Ok(vocab)
}

/// Count vector over the tm vocabulary; out-of-vocabulary tokens are dropped.
pub fn to_bow<S: AsRef<str>>(tokens: &[S], vocab: &Vocabulary) -> Vec<u32> {
    let mut bow = vec![0u32; vocab.tm_size()];
    for t in tokens {
        if let Some(id) = vocab.tm_id(t.as_ref()) {
            bow[id] += 1;
        }
    }
    bow
}

/// Lm ids with `<eos>` appended, capped at `cap` ids in total.
pub fn to_sequence<S: AsRef<str>>(tokens: &[S], vocab: &Vocabulary, cap: usize) -> Vec<usize> {
    let keep = tokens.len().min(cap.saturating_sub(1));
    let mut ids: Vec<usize> = tokens[..keep]
        .iter()
        .map(|t| vocab.lm_id(t.as_ref()).unwrap_or(UNK_ID))
        .collect();
    ids.push(EOS_ID);
    ids
}

/// An encoded paragraph.
#[derive(Clone, Debug, PartialEq)]
pub struct Document {
    /// Lm id sequences, each terminated by `<eos>`.
    pub sentences: Vec<Vec<usize>>,
    /// Bag-of-words of the whole paragraph over the tm vocabulary.
    pub bow: Vec<u32>,
    /// Per sentence, the tm id (if any) of every surface word.
    tm_words: Vec<Vec<Option<usize>>>,
}

impl Document {
    pub fn encode(paragraph: &[Vec<String>], vocab: &Vocabulary, seq_len: usize) -> Self {
        let sentences = paragraph.iter().map(|s| to_sequence(s, vocab, seq_len)).collect();
        let tm_words: Vec<Vec<Option<usize>>> = paragraph
            .iter()
            .map(|s| s.iter().map(|t| vocab.tm_id(t)).collect())
            .collect();
        let mut bow = vec![0u32; vocab.tm_size()];
        for id in tm_words.iter().flatten().flatten() {
            bow[*id] += 1;
        }
        Self {
            sentences,
            bow,
            tm_words,
        }
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }
}

/// A target sentence paired with the bag-of-words of the rest of its
/// paragraph.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingInstance {
    pub target: Vec<usize>,
    pub context_bow: Vec<u32>,
}

impl TrainingInstance {
    /// Number of predicted tokens, `<eos>` included.
    pub fn token_count(&self) -> usize {
        self.target.len()
    }
}

/// One instance per sentence. The context counts words from every other
/// sentence, in order, up to `max_paragraph_words` words.
pub fn make_instances(doc: &Document, max_paragraph_words: usize) -> Vec<TrainingInstance> {
    let d = doc.bow.len();
    (0..doc.sentences.len())
        .map(|i| {
            let mut bow = vec![0u32; d];
            let words = doc
                .tm_words
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .flat_map(|(_, s)| s.iter())
                .take(max_paragraph_words);
            for id in words.flatten() {
                bow[*id] += 1;
            }
            TrainingInstance {
                target: doc.sentences[i].clone(),
                context_bow: bow,
            }
        })
        .collect()
}

/// Line format: space-separated target ids, a tab, then `id:count` pairs.
pub fn format_instance(inst: &TrainingInstance) -> String {
    let ids: Vec<String> = inst.target.iter().map(|i| i.to_string()).collect();
    let bow: Vec<String> = inst
        .context_bow
        .iter()
        .enumerate()
        .filter(|(_, c)| **c > 0)
        .map(|(i, c)| format!("{i}:{c}"))
        .collect();
    format!("{}\t{}", ids.join(" "), bow.join(" "))
}

pub fn write_instances(instances: &[TrainingInstance]) -> String {
    let mut s = String::new();
    for inst in instances {
        s.push_str(&format_instance(inst));
        s.push('\n');
    }
    s
}

pub fn parse_instance(line: &str, tm_size: usize, lm_size: usize) -> Result<TrainingInstance> {
    let bad = |d: String| Error::format("instance line", d);
    let (ids, bow) = line.split_once('\t').ok_or_else(|| bad("missing tab".into()))?;
    let target = ids
        .split_whitespace()
        .map(|t| match t.parse::<usize>() {
            Ok(v) if v < lm_size => Ok(v),
            _ => Err(bad(format!("bad token id {t:?}"))),
        })
        .collect::<Result<Vec<_>>>()?;
    if target.is_empty() {
        return Err(bad("empty target".into()));
    }
    let mut context_bow = vec![0u32; tm_size];
    for pair in bow.split_whitespace() {
        let (i, c) = pair.split_once(':').ok_or_else(|| bad(format!("bad pair {pair:?}")))?;
        let i: usize = i.parse().map_err(|_| bad(format!("bad bow id {i:?}")))?;
        let c: u32 = c.parse().map_err(|_| bad(format!("bad count {c:?}")))?;
        if i >= tm_size {
            return Err(bad(format!("bow id {i} out of range {tm_size}")));
        }
        context_bow[i] += c;
    }
    Ok(TrainingInstance { target, context_bow })
}

pub fn read_instances(text: &str, vocab: &Vocabulary) -> Result<Vec<TrainingInstance>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| parse_instance(l, vocab.tm_size(), vocab.lm_size()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    fn cfg(lm_min: u64, stop: &[&str], min_df: u64) -> VocabConfig {
        VocabConfig {
            lm_min_count: lm_min,
            tm_min_count: 1,
            tm_max_frac: 0.001,
            tm_min_doc_freq: min_df,
            stopwords: stop.iter().map(|s| s.to_string()).collect(),
        }
    }

    #[test]
    fn tokenizer_rules() {
        assert_eq!(tokenize("The Cat sat."), vec!["the", "cat", "sat", "."]);
        assert!(tokenize("").is_empty());
        assert_eq!(tokenize("A-B 42"), vec!["a-b", "42"]);
        assert_eq!(tokenize("(Hi), \"there\"!"), vec!["(", "hi", ")", ",", "\"", "there", "\"", "!"]);
        assert_eq!(tokenize("3.14 ..."), vec!["3.14", ".", ".", "."]);
    }

    #[test]
    fn lm_count_filter() {
        let docs = vec![toks("a a b"), toks("a c")];
        let v = build_vocabularies(&docs, &cfg(2, &[], 1)).unwrap();
        assert_eq!(v.lm_tokens(), &["<pad>", "<unk>", "<eos>", "a"]);
    }

    #[test]
    fn tm_stopword_filter() {
        let docs = vec![toks("a a b"), toks("a c")];
        let v = build_vocabularies(&docs, &cfg(1, &["a"], 1)).unwrap();
        assert_eq!(v.tm_tokens(), &["b", "c"]);
        assert_eq!(v.lm_tokens(), &["<pad>", "<unk>", "<eos>", "a", "b", "c"]);
        assert_eq!(v.lm_counts[3], (3, 2));
    }

    #[test]
    fn empty_topic_vocabulary_is_an_error() {
        let docs = vec![toks("a a b"), toks("a c")];
        let err = build_vocabularies(&docs, &cfg(1, &["a"], 2)).unwrap_err();
        assert!(matches!(err, Error::EmptyTopicVocabulary));
        assert_eq!(err.to_string(), "empty topic vocabulary");
    }

    #[test]
    fn top_frequency_exclusion() {
        let docs = vec![toks("x x x y y z"), toks("x y z w")];
        let mut c = cfg(1, &[], 1);
        c.tm_max_frac = 0.5;
        let v = build_vocabularies(&docs, &c).unwrap();
        // candidates x(4) y(3) z(2) w(1): the top two go.
        assert_eq!(v.tm_tokens(), &["z", "w"]);
    }

    #[test]
    fn bow_and_sequence_encoding() {
        let docs = vec![toks("b b c the cat"), toks("b c the cat")];
        let v = build_vocabularies(&docs, &cfg(1, &["the"], 1)).unwrap();
        let b = v.tm_id("b").unwrap();
        let c = v.tm_id("c").unwrap();
        let mut bow = to_bow(&toks("b b c"), &v);
        assert_eq!((bow[b], bow[c]), (2, 1));
        bow = to_bow(&toks("x"), &v);
        assert!(bow.iter().all(|&n| n == 0));
        assert!(to_bow::<String>(&[], &v).iter().all(|&n| n == 0));

        assert_eq!(
            to_sequence(&toks("the cat"), &v, 30),
            vec![v.lm_id("the").unwrap(), v.lm_id("cat").unwrap(), EOS_ID]
        );
        assert_eq!(to_sequence(&toks("zzz-unseen"), &v, 30), vec![UNK_ID, EOS_ID]);
        let long: Vec<String> = (0..40).map(|_| "cat".to_string()).collect();
        let seq = to_sequence(&long, &v, 30);
        assert_eq!(seq.len(), 30);
        assert_eq!(*seq.last().unwrap(), EOS_ID);
    }

    fn paragraph(lines: &[&str]) -> Vec<Vec<String>> {
        lines.iter().map(|l| tokenize(l)).collect()
    }

    #[test]
    fn instances_exclude_their_target() {
        let para = paragraph(&["apple banana", "cherry apple", "banana banana date"]);
        let flat: Vec<String> = para.iter().flatten().cloned().collect();
        let v = build_vocabularies(&[flat.clone()], &cfg(1, &[], 1)).unwrap();
        let doc = Document::encode(&para, &v, 30);
        let inst = make_instances(&doc, 300);
        assert_eq!(inst.len(), 3);
        let whole = to_bow(&flat, &v);
        for (i, it) in inst.iter().enumerate() {
            let own = to_bow(&para[i], &v);
            let sum: Vec<u32> = it.context_bow.iter().zip(&own).map(|(a, b)| a + b).collect();
            assert_eq!(sum, whole, "instance {i}");
        }
    }

    #[test]
    fn single_sentence_paragraph_has_empty_context() {
        let para = paragraph(&["apple banana"]);
        let v = build_vocabularies(&[para[0].clone()], &cfg(1, &[], 1)).unwrap();
        let inst = make_instances(&Document::encode(&para, &v, 30), 300);
        assert_eq!(inst.len(), 1);
        assert!(inst[0].context_bow.iter().all(|&c| c == 0));
    }

    #[test]
    fn context_is_capped_at_max_paragraph_words() {
        let line: String = (0..100).map(|i| format!("w{} ", i % 20)).collect();
        let para: Vec<Vec<String>> = (0..5).map(|_| tokenize(&line)).collect();
        let v = build_vocabularies(&[para.concat()], &cfg(1, &[], 1)).unwrap();
        let doc = Document::encode(&para, &v, 30);
        assert_eq!(doc.bow.iter().sum::<u32>(), 500);
        for inst in make_instances(&doc, 300) {
            assert_eq!(inst.context_bow.iter().sum::<u32>(), 300);
        }
    }

    #[test]
    fn vocabulary_file_round_trip() {
        let docs = vec![toks("b b c the cat"), toks("b c the cat")];
        let v = build_vocabularies(&docs, &cfg(1, &["the"], 1)).unwrap();
        let text = v.to_file_string();
        assert!(text.starts_with("TCNLM-VOCAB-1\n7\n3\n"), "{text}");
        let back = Vocabulary::from_file_str(&text).unwrap();
        assert_eq!(back.lm_tokens(), v.lm_tokens());
        assert_eq!(back.tm_tokens(), v.tm_tokens());
        assert!(Vocabulary::from_file_str("nope\n1\n1\n").is_err());
    }

    #[test]
    fn instance_line_format() {
        let inst = TrainingInstance {
            target: vec![5, 7, EOS_ID],
            context_bow: vec![0, 2, 0, 1],
        };
        let line = format_instance(&inst);
        assert_eq!(line, "5 7 2\t1:2 3:1");
        assert_eq!(parse_instance(&line, 4, 10).unwrap(), inst);
        let empty = TrainingInstance {
            target: vec![EOS_ID],
            context_bow: vec![0; 4],
        };
        assert_eq!(format_instance(&empty), "2\t");
        assert_eq!(parse_instance("2\t", 4, 10).unwrap(), empty);
        assert!(parse_instance("2\t9:1", 4, 10).is_err());
        assert!(parse_instance("2 3", 4, 10).is_err());
    }

    #[test]
    fn paragraphs_split_on_blank_lines() {
        let text = "One two.\nThree four\n\n\nFive six\n";
        let p = parse_paragraphs(text);
        assert_eq!(p.len(), 2);
        assert_eq!(p[0].len(), 2);
        assert_eq!(p[1][0], vec!["five", "six"]);
    }
}
