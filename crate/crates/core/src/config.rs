//! Flat `key = value` configuration with named presets.
//!
//! Lines are `key = value`; `#` starts a comment. A `preset = <name>` line
//! selects the base values, which the other keys then override regardless
//! of line order.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::corpus::{VocabConfig, Vocabulary};
use crate::dataset::PrepConfig;
use crate::error::{Error, Result};
use crate::eval::DEFAULT_WINDOW;
use crate::model::{ModelKind, ModelSpec};
use crate::nlm::ExpertCell;
use crate::ntm::PairAveraging;
use crate::trainer::TrainConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    /// Desk-scale dimensions for the synthetic corpus.
    Toy,
    /// One layer of 600 hidden units.
    Small,
    /// Two layers of 900 hidden units.
    Large,
}

impl Preset {
    pub const ALL: [Preset; 3] = [Preset::Toy, Preset::Small, Preset::Large];

    pub fn name(self) -> &'static str {
        match self {
            Self::Toy => "toy",
            Self::Small => "small",
            Self::Large => "large",
        }
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown preset '{s}'")))
    }
}

/// Model sizes that do not depend on the data.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub embed: usize,
    pub hidden: usize,
    pub factors: usize,
    pub topics: usize,
    pub layers: usize,
    pub encoder: [usize; 2],
    pub candidate_tanh: bool,
    pub expert_cell: ExpertCell,
    pub prior_mu: f64,
    pub prior_sigma: f64,
}

impl ModelConfig {
    /// Full sizes once the vocabularies are known.
    pub fn spec(&self, vocab: &Vocabulary) -> ModelSpec {
        ModelSpec {
            kind: self.kind,
            lm_vocab: vocab.lm_size(),
            tm_vocab: vocab.tm_size(),
            embed: self.embed,
            hidden: self.hidden,
            factors: self.factors,
            topics: self.topics,
            layers: self.layers,
            encoder: self.encoder,
            candidate_tanh: self.candidate_tanh,
            expert_cell: self.expert_cell,
            prior_mu: self.prior_mu,
            prior_sigma: self.prior_sigma,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Config {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub prep: PrepConfig,
    /// Sliding-window width for coherence statistics.
    pub window: usize,
}

impl Config {
    pub fn preset(p: Preset) -> Self {
        let train = TrainConfig::default();
        let prep = PrepConfig::default();
        match p {
            Preset::Toy => Self {
                model: ModelConfig {
                    kind: ModelKind::Tcnlm,
                    embed: 16,
                    hidden: 32,
                    factors: 16,
                    topics: 2,
                    layers: 1,
                    encoder: [64, 64],
                    candidate_tanh: false,
                    expert_cell: ExpertCell::Lstm,
                    prior_mu: 0.0,
                    prior_sigma: 1.0,
                },
                train: TrainConfig {
                    lr: 5e-3,
                    batch_size: 16,
                    epochs: 40,
                    kl_warmup: 10,
                    ..train
                },
                prep,
                window: DEFAULT_WINDOW,
            },
            Preset::Small | Preset::Large => {
                let (hidden, layers) = if p == Preset::Small { (600, 1) } else { (900, 2) };
                Self {
                    model: ModelConfig {
                        kind: ModelKind::Tcnlm,
                        embed: 300,
                        hidden,
                        factors: hidden,
                        topics: 50,
                        layers,
                        encoder: [256, 256],
                        candidate_tanh: false,
                        expert_cell: ExpertCell::Lstm,
                        prior_mu: 0.0,
                        prior_sigma: 1.0,
                    },
                    train: TrainConfig {
                        batch_size: 64,
                        epochs: 20,
                        ..train
                    },
                    prep,
                    window: DEFAULT_WINDOW,
                }
            }
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected 'key = value'", n + 1)))?;
            entries.push((n + 1, k.trim().to_string(), v.trim().to_string()));
        }
        let preset = match entries.iter().rfind(|(_, k, _)| k == "preset") {
            Some((_, _, v)) => v.parse()?,
            None => Preset::Toy,
        };
        let mut cfg = Self::preset(preset);
        for (line, k, v) in &entries {
            if k != "preset" {
                cfg.set(k, v).map_err(|e| Error::Config(format!("line {line}: {e}")))?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// A preset name, or the path of a config file.
    pub fn load(name_or_path: &str) -> Result<Self> {
        let path = Path::new(name_or_path);
        if path.is_file() {
            return Self::parse(&std::fs::read_to_string(path)?);
        }
        match name_or_path.parse::<Preset>() {
            Ok(p) => Ok(Self::preset(p)),
            Err(_) => Err(Error::Config(format!("'{name_or_path}' is neither a config file nor a preset"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.window < 2 {
            return Err(Error::Config("window must be at least 2".into()));
        }
        let m = &self.model;
        if [m.embed, m.hidden, m.factors, m.topics, m.layers, m.encoder[0], m.encoder[1]].contains(&0) {
            return Err(Error::Config("model sizes must be positive".into()));
        }
        if !(m.prior_sigma > 0.0) {
            return Err(Error::Config("prior_sigma must be positive".into()));
        }
        Ok(())
    }

    /// Sets one key from its text value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse().map_err(|_| Error::Config(format!("bad value '{v}' for {key}")))
        }
        fn flag(key: &str, v: &str) -> Result<bool> {
            match v {
                "true" | "1" | "yes" => Ok(true),
                "false" | "0" | "no" => Ok(false),
                _ => Err(Error::Config(format!("bad value '{v}' for {key}"))),
            }
        }
        let (m, t, p) = (&mut self.model, &mut self.train, &mut self.prep);
        match key {
            "kind" => m.kind = value.parse()?,
            "embed" => m.embed = num(key, value)?,
            "hidden" => m.hidden = num(key, value)?,
            "factors" => m.factors = num(key, value)?,
            "topics" => m.topics = num(key, value)?,
            "layers" => m.layers = num(key, value)?,
            "encoder1" => m.encoder[0] = num(key, value)?,
            "encoder2" => m.encoder[1] = num(key, value)?,
            "candidate_tanh" => m.candidate_tanh = flag(key, value)?,
            "expert_cell" => {
                m.expert_cell = match value {
                    "rnn" => ExpertCell::Rnn,
                    "lstm" => ExpertCell::Lstm,
                    _ => return Err(Error::Config(format!("bad value '{value}' for {key}"))),
                }
            }
            "prior_mu" => m.prior_mu = num(key, value)?,
            "prior_sigma" => m.prior_sigma = num(key, value)?,
            "lambda" => t.lambda = num(key, value)?,
            "lr" => t.lr = num(key, value)?,
            "beta1" => t.beta1 = num(key, value)?,
            "beta2" => t.beta2 = num(key, value)?,
            "adam_eps" => t.adam_eps = num(key, value)?,
            "batch_size" => t.batch_size = num(key, value)?,
            "epochs" => t.epochs = num(key, value)?,
            "dropout" => t.dropout = num(key, value)?,
            "clip" => t.clip = num(key, value)?,
            "seed" => t.seed = num(key, value)?,
            "seq_len" => {
                t.seq_len = num(key, value)?;
                p.seq_len = t.seq_len;
            }
            "eval_every" => t.eval_every = num(key, value)?,
            "kl_warmup" => t.kl_warmup = num(key, value)?,
            "pair_averaging" => {
                t.pair_averaging = match value {
                    "all" => PairAveraging::AllPairs,
                    "offdiag" => PairAveraging::OffDiagonal,
                    _ => return Err(Error::Config(format!("bad value '{value}' for {key}"))),
                }
            }
            "lm_min_count" => p.vocab.lm_min_count = num(key, value)?,
            "tm_min_count" => p.vocab.tm_min_count = num(key, value)?,
            "tm_max_frac" => p.vocab.tm_max_frac = num(key, value)?,
            "tm_min_doc_freq" => p.vocab.tm_min_doc_freq = num(key, value)?,
            "dev_frac" => p.dev_frac = num(key, value)?,
            "max_paragraph_words" => p.max_paragraph_words = num(key, value)?,
            "window" => self.window = num(key, value)?,
            _ => return Err(Error::Config(format!("unknown key '{key}'"))),
        }
        Ok(())
    }
}

impl fmt::Display for Config {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (m, t, p) = (&self.model, &self.train, &self.prep);
        let v: &VocabConfig = &p.vocab;
        writeln!(f, "kind = {}", m.kind)?;
        writeln!(f, "embed = {}", m.embed)?;
        writeln!(f, "hidden = {}", m.hidden)?;
        writeln!(f, "factors = {}", m.factors)?;
        writeln!(f, "topics = {}", m.topics)?;
        writeln!(f, "layers = {}", m.layers)?;
        writeln!(f, "encoder1 = {}", m.encoder[0])?;
        writeln!(f, "encoder2 = {}", m.encoder[1])?;
        writeln!(f, "candidate_tanh = {}", m.candidate_tanh)?;
        let cell = match m.expert_cell {
            ExpertCell::Rnn => "rnn",
            ExpertCell::Lstm => "lstm",
        };
        writeln!(f, "expert_cell = {cell}")?;
        writeln!(f, "prior_mu = {}", m.prior_mu)?;
        writeln!(f, "prior_sigma = {}", m.prior_sigma)?;
        writeln!(f, "lambda = {}", t.lambda)?;
        writeln!(f, "lr = {}", t.lr)?;
        writeln!(f, "beta1 = {}", t.beta1)?;
        writeln!(f, "beta2 = {}", t.beta2)?;
        writeln!(f, "adam_eps = {}", t.adam_eps)?;
        writeln!(f, "batch_size = {}", t.batch_size)?;
        writeln!(f, "epochs = {}", t.epochs)?;
        writeln!(f, "dropout = {}", t.dropout)?;
        writeln!(f, "clip = {}", t.clip)?;
        writeln!(f, "seed = {}", t.seed)?;
        writeln!(f, "seq_len = {}", t.seq_len)?;
        writeln!(f, "eval_every = {}", t.eval_every)?;
        writeln!(f, "kl_warmup = {}", t.kl_warmup)?;
        let avg = match t.pair_averaging {
            PairAveraging::AllPairs => "all",
            PairAveraging::OffDiagonal => "offdiag",
        };
        writeln!(f, "pair_averaging = {avg}")?;
        writeln!(f, "lm_min_count = {}", v.lm_min_count)?;
        writeln!(f, "tm_min_count = {}", v.tm_min_count)?;
        writeln!(f, "tm_max_frac = {}", v.tm_max_frac)?;
        writeln!(f, "tm_min_doc_freq = {}", v.tm_min_doc_freq)?;
        writeln!(f, "dev_frac = {}", p.dev_frac)?;
        writeln!(f, "max_paragraph_words = {}", p.max_paragraph_words)?;
        writeln!(f, "window = {}", self.window)
    }
}
