//! Gaussian neural topic model.
//!
//! The encoder maps a bag-of-words to a diagonal Gaussian over `θ ∈ R^T`;
//! a reparameterized sample is pushed through `softmax(Ŵθ + b̂)` to give the
//! topic mixture `t`, and the document likelihood uses the marginal word
//! distribution `βᵀt`, with `β` the row-softmax of a free `T x D` matrix.

use rand::Rng;

use crate::autodiff::{Array, ParamId, ParamStore, Tape, Var};
use crate::corpus::Vocabulary;
use crate::error::{Error, Result};
use crate::init;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NtmDims {
    /// Topic-model vocabulary size `D`.
    pub vocab: usize,
    pub hidden: [usize; 2],
    pub topics: usize,
}

/// How the diversity regularizer averages pairwise topic angles.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum PairAveraging {
    /// Mean over all `T²` ordered pairs, self-pairs included.
    #[default]
    AllPairs,
    /// Mean over the `T(T-1)` ordered pairs with `i != j`.
    OffDiagonal,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Affine {
    pub w: ParamId,
    pub b: ParamId,
}

impl Affine {
    fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, out: usize, inp: usize, rng: &mut R) -> Self {
        Self {
            w: store.add(format!("{name}.w"), init::scaled_normal(out, inp, rng)),
            b: store.add(format!("{name}.b"), Array::zeros(out, 1)),
        }
    }

    pub fn apply(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let w = tape.param(self.w);
        let b = tape.param(self.b);
        let wx = tape.matmul(w, x)?;
        tape.add(wx, b)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NtmParams {
    pub dims: NtmDims,
    pub enc: [Affine; 2],
    pub mu_head: Affine,
    pub logvar_head: Affine,
    /// `Ŵ` and `b̂` of the topic map.
    pub topic_map: Affine,
    pub beta_logits: ParamId,
    pub prior_mu: f64,
    pub prior_sigma: f64,
}

/// Intermediate values of one encoder pass.
#[derive(Clone, Copy, Debug)]
pub struct TopicPass {
    pub mu: Var,
    pub logvar: Var,
    pub theta: Var,
    pub t: Var,
}

impl NtmParams {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, dims: NtmDims, rng: &mut R) -> Self {
        let [h1, h2] = dims.hidden;
        let enc = [
            Affine::new(store, "ntm.enc1", h1, dims.vocab, rng),
            Affine::new(store, "ntm.enc2", h2, h1, rng),
        ];
        let mu_head = Affine::new(store, "ntm.mu", dims.topics, h2, rng);
        let logvar_head = Affine::new(store, "ntm.logvar", dims.topics, h2, rng);
        let topic_map = Affine::new(store, "ntm.topic_map", dims.topics, dims.topics, rng);
        let beta_logits = store.add("ntm.beta_logits", init::normal(dims.topics, dims.vocab, 1.0, rng));
        Self {
            dims,
            enc,
            mu_head,
            logvar_head,
            topic_map,
            beta_logits,
            prior_mu: 0.0,
            prior_sigma: 1.0,
        }
    }

    /// `(μ, log σ²)` of `q(θ | d)`.
    pub fn encode(&self, tape: &mut Tape, bow: &[u32]) -> Result<(Var, Var)> {
        if bow.len() != self.dims.vocab {
            return Err(Error::shape(
                "encode",
                format!("bag-of-words length {} != vocabulary {}", bow.len(), self.dims.vocab),
            ));
        }
        let x = tape.constant(Array::from_vec(bow.iter().map(|&c| c as f64).collect())?);
        let mut h = x;
        for layer in &self.enc {
            let a = layer.apply(tape, h)?;
            h = tape.relu(a)?;
        }
        let mu = self.mu_head.apply(tape, h)?;
        let logvar = self.logvar_head.apply(tape, h)?;
        Ok((mu, logvar))
    }

    /// `softmax(Ŵθ + b̂)`.
    pub fn topic_embed(&self, tape: &mut Tape, theta: Var) -> Result<Var> {
        let z = self.topic_map.apply(tape, theta)?;
        tape.softmax(z)
    }

    /// Encoder, reparameterization and topic map. `eps = None` uses the
    /// posterior mean.
    pub fn infer(&self, tape: &mut Tape, bow: &[u32], eps: Option<&[f64]>) -> Result<TopicPass> {
        let (mu, logvar) = self.encode(tape, bow)?;
        let theta = match eps {
            Some(e) => reparameterize(tape, mu, logvar, e)?,
            None => mu,
        };
        let t = self.topic_embed(tape, theta)?;
        Ok(TopicPass { mu, logvar, theta, t })
    }

    /// `β`, rows on the simplex.
    pub fn beta(&self, tape: &mut Tape) -> Result<Var> {
        let logits = tape.param(self.beta_logits);
        tape.row_softmax(logits)
    }

    pub fn beta_value(&self, store: &ParamStore) -> Array {
        row_softmax(store.get(self.beta_logits))
    }

    pub fn kl_divergence(&self, tape: &mut Tape, mu: Var, logvar: Var) -> Result<Var> {
        kl_divergence(tape, mu, logvar, self.prior_mu, self.prior_sigma)
    }

    /// Per topic, the `k` highest-probability tm words; ties by lower id.
    pub fn top_words(&self, store: &ParamStore, vocab: &Vocabulary, k: usize) -> Result<Vec<Vec<String>>> {
        let beta = self.beta_value(store);
        top_word_ids(&beta, k).map(|rows| {
            rows.into_iter()
                .map(|ids| ids.into_iter().map(|i| vocab.tm_token(i).to_string()).collect())
                .collect()
        })
    }
}

/// `θ = μ + exp(logvar / 2) ⊙ ε`, with `ε` a constant.
pub fn reparameterize(tape: &mut Tape, mu: Var, logvar: Var, eps: &[f64]) -> Result<Var> {
    let half = tape.scale(logvar, 0.5)?;
    let sigma = tape.exp(half)?;
    let e = tape.constant(Array::from_vec(eps.to_vec())?);
    let noise = tape.mul(sigma, e)?;
    tape.add(mu, noise)
}

/// `log p(d | β, t) = Σ_n bow_n · log (βᵀt)_n`.
pub fn decode_loglik(tape: &mut Tape, beta: Var, t: Var, bow: &[u32]) -> Result<Var> {
    let bt = tape.transpose(beta)?;
    let p = tape.matmul(bt, t)?;
    if tape.value(p).len() != bow.len() {
        return Err(Error::shape(
            "decode_loglik",
            format!("word distribution {} vs bag-of-words {}", tape.value(p).len(), bow.len()),
        ));
    }
    let logp = tape.log(p)?;
    let counts = tape.constant(Array::from_vec(bow.iter().map(|&c| c as f64).collect())?);
    let weighted = tape.mul(counts, logp)?;
    tape.sum(weighted)
}

/// `KL(N(μ, diag σ²) ‖ N(μ0, σ0² I))`.
pub fn kl_divergence(tape: &mut Tape, mu: Var, logvar: Var, prior_mu: f64, prior_sigma: f64) -> Result<Var> {
    let k = tape.value(mu).len();
    let inv_var0 = 1.0 / (prior_sigma * prior_sigma);
    let centered = tape.offset(mu, -prior_mu)?;
    let sq = tape.mul(centered, centered)?;
    let var = tape.exp(logvar)?;
    let spread = tape.add(var, sq)?;
    let scaled = tape.scale(spread, inv_var0)?;
    let inner = tape.sub(scaled, logvar)?;
    let total = tape.sum(inner)?;
    let shifted = tape.offset(total, k as f64 * (2.0 * prior_sigma.ln() - 1.0))?;
    tape.scale(shifted, 0.5)
}

/// Mean minus variance of the pairwise angles between rows of `beta`.
pub fn diversity_regularizer(tape: &mut Tape, beta: Var, averaging: PairAveraging) -> Result<Var> {
    let t = tape.value(beta).rows();
    let pairs = match averaging {
        PairAveraging::AllPairs => (t * t) as f64,
        PairAveraging::OffDiagonal => (t * t.saturating_sub(1)) as f64,
    };
    if pairs == 0.0 {
        return Ok(tape.constant(Array::zeros(1, 1)));
    }
    let angles = tape.pairwise_angles(beta)?;
    // The diagonal is exactly zero, so off-diagonal sums are plain sums.
    let total = tape.sum(angles)?;
    let mean = tape.scale(total, 1.0 / pairs)?;
    let sq = tape.mul(angles, angles)?;
    let sq_total = tape.sum(sq)?;
    let second = tape.scale(sq_total, 1.0 / pairs)?;
    let mean_sq = tape.mul(mean, mean)?;
    let variance = tape.sub(second, mean_sq)?;
    tape.sub(mean, variance)
}

pub fn row_softmax(logits: &Array) -> Array {
    let (r, c) = logits.shape();
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        let row = logits.row(i);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = row.iter().map(|v| (v - max).exp()).sum();
        for j in 0..c {
            out[i * c + j] = (row[j] - max).exp() / z;
        }
    }
    Array::new(r, c, out).expect("finite softmax")
}

/// Ranked column ids per row, ties by lower id.
pub fn top_word_ids(beta: &Array, k: usize) -> Result<Vec<Vec<usize>>> {
    let d = beta.cols();
    if k == 0 || k > d {
        return Err(Error::Invalid(format!("top-k must be in 1..={d}, got {k}")));
    }
    Ok((0..beta.rows())
        .map(|i| {
            let row = beta.row(i);
            let mut ids: Vec<usize> = (0..d).collect();
            ids.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
            ids.truncate(k);
            ids
        })
        .collect())
}

/// `topic <i>: w1 w2 ... wk` per topic.
pub fn format_topic_report(topics: &[Vec<String>]) -> String {
    topics
        .iter()
        .enumerate()
        .map(|(i, words)| format!("topic {i}: {}\n", words.join(" ")))
        .collect()
}
