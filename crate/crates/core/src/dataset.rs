//! From raw text to vocabulary plus train and dev instances, and the
//! on-disk layout written by `preprocess`.

use std::fs;
use std::path::Path;

use crate::corpus::{
    build_vocabularies, make_instances, parse_paragraphs, read_instances, write_instances, Document,
    TrainingInstance, VocabConfig, Vocabulary, DEFAULT_MAX_PARAGRAPH_WORDS, DEFAULT_SEQ_LEN,
};
use crate::error::{Error, Result};

pub const VOCAB_FILE: &str = "vocab.txt";
pub const TRAIN_FILE: &str = "train.tsv";
pub const DEV_FILE: &str = "dev.tsv";

#[derive(Clone, Debug, PartialEq)]
pub struct PrepConfig {
    pub vocab: VocabConfig,
    /// Trailing fraction of paragraphs held out as the dev split.
    pub dev_frac: f64,
    pub seq_len: usize,
    pub max_paragraph_words: usize,
}

impl Default for PrepConfig {
    fn default() -> Self {
        Self {
            vocab: VocabConfig::default(),
            dev_frac: 0.2,
            seq_len: DEFAULT_SEQ_LEN,
            max_paragraph_words: DEFAULT_MAX_PARAGRAPH_WORDS,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub vocab: Vocabulary,
    pub train: Vec<TrainingInstance>,
    pub dev: Vec<TrainingInstance>,
}

/// Splits paragraphs in order, builds both vocabularies on the train part
/// only, and encodes each split.
pub fn prepare(text: &str, cfg: &PrepConfig) -> Result<Dataset> {
    if !(0.0..1.0).contains(&cfg.dev_frac) {
        return Err(Error::Config("dev_frac must lie in [0, 1)".into()));
    }
    let paragraphs = parse_paragraphs(text);
    if paragraphs.is_empty() {
        return Err(Error::EmptyInstances);
    }
    let n_dev = (paragraphs.len() as f64 * cfg.dev_frac).floor() as usize;
    let (train_p, dev_p) = paragraphs.split_at(paragraphs.len() - n_dev);
    let docs: Vec<Vec<String>> = train_p.iter().map(|p| p.concat()).collect();
    let vocab = build_vocabularies(&docs, &cfg.vocab)?;
    let encode = |ps: &[Vec<Vec<String>>]| -> Vec<TrainingInstance> {
        ps.iter()
            .flat_map(|p| make_instances(&Document::encode(p, &vocab, cfg.seq_len), cfg.max_paragraph_words))
            .collect()
    };
    let train = encode(train_p);
    let dev = encode(dev_p);
    Ok(Dataset { vocab, train, dev })
}

impl Dataset {
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(VOCAB_FILE), self.vocab.to_file_string())?;
        fs::write(dir.join(TRAIN_FILE), write_instances(&self.train))?;
        fs::write(dir.join(DEV_FILE), write_instances(&self.dev))?;
        Ok(())
    }

    /// Reads a directory written by [`Dataset::write_dir`]; a missing dev
    /// file means an empty dev split.
    pub fn read_dir(dir: &Path) -> Result<Self> {
        let vocab = Vocabulary::from_file_str(&fs::read_to_string(dir.join(VOCAB_FILE))?)?;
        let train = read_instances(&fs::read_to_string(dir.join(TRAIN_FILE))?, &vocab)?;
        let dev_path = dir.join(DEV_FILE);
        let dev = if dev_path.exists() {
            read_instances(&fs::read_to_string(dev_path)?, &vocab)?
        } else {
            Vec::new()
        };
        Ok(Self { vocab, train, dev })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::{generate, SyntheticConfig};

    #[test]
    fn synthetic_split_and_vocabularies() {
        let c = generate(&SyntheticConfig::default()).unwrap();
        let d = prepare(&c.text, &PrepConfig::default()).unwrap();
        assert_eq!(d.train.len(), 320 * 3);
        assert_eq!(d.dev.len(), 80 * 3);
        assert_eq!(d.vocab.tm_size(), 60);
        assert_eq!(d.vocab.lm_size(), 3 + 60 + 10);
        assert!(d.vocab.tm_tokens().iter().all(|w| c.topic_of(w).is_some()));
    }

    #[test]
    fn directory_round_trip() {
        let c = generate(&SyntheticConfig {
            paragraphs: 30,
            ..Default::default()
        })
        .unwrap();
        let d = prepare(&c.text, &PrepConfig::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        d.write_dir(dir.path()).unwrap();
        let back = Dataset::read_dir(dir.path()).unwrap();
        assert_eq!(back.vocab.lm_tokens(), d.vocab.lm_tokens());
        assert_eq!(back.vocab.tm_tokens(), d.vocab.tm_tokens());
        assert_eq!((back.train, back.dev), (d.train, d.dev));
    }

    #[test]
    fn rejects_bad_split_and_empty_text() {
        let cfg = PrepConfig {
            dev_frac: 1.0,
            ..Default::default()
        };
        assert!(prepare("a b\n", &cfg).is_err());
        assert!(prepare("\n\n", &PrepConfig::default()).is_err());
    }
}
