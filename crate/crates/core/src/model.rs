//! A topic model paired with one of the language models, and its
//! checkpoint format.
//!
//! Checkpoint layout, all integers little-endian:
//!
//! ```text
//! "TCNLM-CKPT-1"
//! u64 D_lm, D, n_x, n_h, n_f, T, layers
//! u8  candidate_tanh
//! u8  kind (0 tcnlm, 1 lstm, 2 moe), u8 expert cell (0 rnn, 1 lstm)
//! u64 encoder widths h1, h2
//! f64 prior mean, prior std
//! u64 scalar count, then every parameter tensor in declaration order as f64
//! u64 vocabulary byte length, then the vocabulary file (length 0 if absent)
//! ```

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Array, ParamStore, Tape, Var};
use crate::corpus::{TrainingInstance, Vocabulary};
use crate::error::{Error, Result};
use crate::nlm::{
    sequence_nll, BasicLstm, DropoutMasks, ExpertCell, LmDims, NaiveMoe, TcLstm,
};
use crate::ntm::{NtmDims, NtmParams, TopicPass};

pub const CHECKPOINT_MAGIC: &[u8; 12] = b"TCNLM-CKPT-1";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ModelKind {
    /// Topic model plus factored topic-compositional LSTM.
    #[default]
    Tcnlm,
    /// Plain LSTM language model without a topic model.
    Lstm,
    /// Topic model plus a naive mixture of per-topic experts.
    Moe,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Tcnlm => "tcnlm",
            Self::Lstm => "lstm",
            Self::Moe => "moe",
        }
    }

    pub fn has_topics(self) -> bool {
        !matches!(self, Self::Lstm)
    }

    fn code(self) -> u8 {
        match self {
            Self::Tcnlm => 0,
            Self::Lstm => 1,
            Self::Moe => 2,
        }
    }

    fn from_code(c: u8) -> Result<Self> {
        match c {
            0 => Ok(Self::Tcnlm),
            1 => Ok(Self::Lstm),
            2 => Ok(Self::Moe),
            _ => Err(Error::format("checkpoint", format!("unknown model kind {c}"))),
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tcnlm" => Ok(Self::Tcnlm),
            "lstm" | "basic" => Ok(Self::Lstm),
            "moe" | "naive-moe" => Ok(Self::Moe),
            _ => Err(Error::Config(format!("unknown model kind '{s}'"))),
        }
    }
}

/// Every size needed to allocate a model.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub lm_vocab: usize,
    pub tm_vocab: usize,
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

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        let sizes = [
            ("lm vocabulary", self.lm_vocab),
            ("embed", self.embed),
            ("hidden", self.hidden),
            ("layers", self.layers),
        ];
        let topic_sizes = [
            ("tm vocabulary", self.tm_vocab),
            ("factors", self.factors),
            ("topics", self.topics),
            ("encoder width", self.encoder[0]),
            ("encoder width", self.encoder[1]),
        ];
        for (name, v) in sizes.iter().chain(if self.kind.has_topics() { &topic_sizes[..] } else { &[] }) {
            if *v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !(self.prior_sigma > 0.0) || !self.prior_mu.is_finite() || !self.prior_sigma.is_finite() {
            return Err(Error::Config("prior std must be positive and finite".into()));
        }
        Ok(())
    }

    fn lm_dims(&self) -> LmDims {
        LmDims {
            vocab: self.lm_vocab,
            embed: self.embed,
            hidden: self.hidden,
            factors: self.factors,
            topics: self.topics,
            layers: self.layers,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Lm {
    Factored(TcLstm),
    Basic(BasicLstm),
    Moe(NaiveMoe),
}

/// Runs `$body` with `$m` bound to the concrete language model.
macro_rules! with_lm {
    ($lm:expr, $m:ident => $body:expr) => {
        match $lm {
            $crate::model::Lm::Factored($m) => $body,
            $crate::model::Lm::Basic($m) => $body,
            $crate::model::Lm::Moe($m) => $body,
        }
    };
}
pub(crate) use with_lm;

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub spec: ModelSpec,
    pub store: ParamStore,
    pub ntm: Option<NtmParams>,
    pub lm: Lm,
}

impl Model {
    /// Allocates and initializes all parameters from `seed`.
    pub fn new(spec: ModelSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let ntm = spec.kind.has_topics().then(|| {
            let mut p = NtmParams::new(
                &mut store,
                NtmDims {
                    vocab: spec.tm_vocab,
                    hidden: spec.encoder,
                    topics: spec.topics,
                },
                &mut rng,
            );
            p.prior_mu = spec.prior_mu;
            p.prior_sigma = spec.prior_sigma;
            p
        });
        let dims = spec.lm_dims();
        let lm = match spec.kind {
            ModelKind::Tcnlm => Lm::Factored(TcLstm::new(&mut store, dims, spec.candidate_tanh, &mut rng)),
            ModelKind::Lstm => Lm::Basic(BasicLstm::new(&mut store, dims, spec.candidate_tanh, &mut rng)),
            ModelKind::Moe => Lm::Moe(NaiveMoe::new(
                &mut store,
                dims,
                spec.expert_cell,
                spec.candidate_tanh,
                &mut rng,
            )),
        };
        Ok(Self { spec, store, ntm, lm })
    }

    pub fn kind(&self) -> ModelKind {
        self.spec.kind
    }

    /// Layer count of the dropout masks one step needs.
    pub fn mask_layers(&self) -> usize {
        match &self.lm {
            Lm::Moe(_) => 1,
            _ => self.spec.layers,
        }
    }

    /// Topic pass on a context bag-of-words; `None` for topic-free models.
    pub fn topic_pass(&self, tape: &mut Tape, bow: &[u32], eps: Option<&[f64]>) -> Result<Option<TopicPass>> {
        self.ntm.as_ref().map(|n| n.infer(tape, bow, eps)).transpose()
    }

    /// Teacher-forced `Σ −log p(y_m | y_{<m}, t)`.
    pub fn sequence_nll(&self, tape: &mut Tape, t: Option<Var>, ids: &[usize], masks: Option<&DropoutMasks>) -> Result<Var> {
        with_lm!(&self.lm, m => sequence_nll(m, tape, t, ids, masks))
    }

    /// Deterministic negative log-likelihood of one instance: posterior-mean
    /// topics, no dropout.
    pub fn instance_nll(&self, inst: &TrainingInstance) -> Result<f64> {
        let mut tape = Tape::new(&self.store);
        let t = self.topic_pass(&mut tape, &inst.context_bow, None)?.map(|p| p.t);
        let nll = self.sequence_nll(&mut tape, t, &inst.target, None)?;
        Ok(tape.scalar(nll))
    }

    /// Posterior-mean topic mixture of a context.
    pub fn topic_mixture_of(&self, bow: &[u32]) -> Result<Option<Array>> {
        let mut tape = Tape::new(&self.store);
        Ok(self.topic_pass(&mut tape, bow, None)?.map(|p| tape.value(p.t).clone()))
    }

    /// Topic-word matrix `β`, or `None` without a topic model.
    pub fn beta(&self) -> Option<Array> {
        self.ntm.as_ref().map(|n| n.beta_value(&self.store))
    }

    pub fn to_bytes(&self, vocab: Option<&Vocabulary>) -> Vec<u8> {
        let s = &self.spec;
        let mut out = Vec::with_capacity(64 + 8 * self.store.scalar_count());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        for v in [s.lm_vocab, s.tm_vocab, s.embed, s.hidden, s.factors, s.topics, s.layers] {
            out.extend_from_slice(&(v as u64).to_le_bytes());
        }
        out.push(s.candidate_tanh as u8);
        out.push(s.kind.code());
        out.push(match s.expert_cell {
            ExpertCell::Rnn => 0,
            ExpertCell::Lstm => 1,
        });
        for v in s.encoder {
            out.extend_from_slice(&(v as u64).to_le_bytes());
        }
        out.extend_from_slice(&s.prior_mu.to_le_bytes());
        out.extend_from_slice(&s.prior_sigma.to_le_bytes());
        out.extend_from_slice(&(self.store.scalar_count() as u64).to_le_bytes());
        for a in self.store.values() {
            for v in a.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let vocab = vocab.map(Vocabulary::to_file_string).unwrap_or_default();
        out.extend_from_slice(&(vocab.len() as u64).to_le_bytes());
        out.extend_from_slice(vocab.as_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<(Self, Option<Vocabulary>)> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(CHECKPOINT_MAGIC.len())? != CHECKPOINT_MAGIC {
            return Err(Error::format("checkpoint", "bad magic"));
        }
        let mut dims = [0usize; 7];
        for d in &mut dims {
            *d = r.usize()?;
        }
        let [lm_vocab, tm_vocab, embed, hidden, factors, topics, layers] = dims;
        let candidate_tanh = match r.u8()? {
            0 => false,
            1 => true,
            b => return Err(Error::format("checkpoint", format!("bad candidate flag {b}"))),
        };
        let kind = ModelKind::from_code(r.u8()?)?;
        let expert_cell = match r.u8()? {
            0 => ExpertCell::Rnn,
            1 => ExpertCell::Lstm,
            b => return Err(Error::format("checkpoint", format!("bad expert cell {b}"))),
        };
        let encoder = [r.usize()?, r.usize()?];
        let prior_mu = r.f64()?;
        let prior_sigma = r.f64()?;
        let spec = ModelSpec {
            kind,
            lm_vocab,
            tm_vocab,
            embed,
            hidden,
            factors,
            topics,
            layers,
            encoder,
            candidate_tanh,
            expert_cell,
            prior_mu,
            prior_sigma,
        };
        let mut model = Model::new(spec, 0)?;
        let count = r.usize()?;
        if count != model.store.scalar_count() {
            return Err(Error::format(
                "checkpoint",
                format!("{count} scalars, dims imply {}", model.store.scalar_count()),
            ));
        }
        let ids: Vec<_> = model.store.ids().collect();
        for id in ids {
            let (rows, cols) = model.store.get(id).shape();
            let data = (0..rows * cols).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            let value = Array::new(rows, cols, data)
                .map_err(|e| Error::format("checkpoint", format!("{}: {e}", model.store.name(id))))?;
            model.store.set(id, value)?;
        }
        let vlen = r.usize()?;
        let vbytes = r.take(vlen)?;
        if r.pos != bytes.len() {
            return Err(Error::format("checkpoint", "trailing bytes"));
        }
        let vocab = if vlen == 0 {
            None
        } else {
            let text = std::str::from_utf8(vbytes).map_err(|e| Error::format("checkpoint", e.to_string()))?;
            let v = Vocabulary::from_file_str(text)?;
            if v.lm_size() != lm_vocab || (kind.has_topics() && v.tm_size() != tm_vocab) {
                return Err(Error::format("checkpoint", "embedded vocabulary does not match dims"));
            }
            Some(v)
        };
        Ok((model, vocab))
    }

    pub fn save(&self, path: &Path, vocab: Option<&Vocabulary>) -> Result<()> {
        std::fs::write(path, self.to_bytes(vocab))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<(Self, Option<Vocabulary>)> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::format("checkpoint", "truncated"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn usize(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::format("checkpoint", "size overflow"))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}
