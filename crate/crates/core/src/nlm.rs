//! Recurrent language models conditioned on a topic mixture `t`.
//!
//! [`TcLstm`] composes every gate weight from three factors,
//! `W(t) = W_a · diag(W_b t) · W_c`, evaluated without materializing
//! `W(t)` as `W_a ((W_b t) ⊙ (W_c x))`. [`BasicLstm`] is the same stack
//! with dense, topic-free gates, and [`NaiveMoe`] runs one expert per topic
//! and mixes their output distributions with `t`.

use rand::Rng;

use crate::autodiff::{Array, ParamId, ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::init::{self, RECURRENT_INIT};

pub const GATE_NAMES: [&str; 4] = ["i", "f", "o", "c"];
const CANDIDATE: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LmDims {
    /// Language-model vocabulary size `D_lm`.
    pub vocab: usize,
    pub embed: usize,
    pub hidden: usize,
    pub factors: usize,
    pub topics: usize,
    pub layers: usize,
}

impl LmDims {
    fn layer_input(&self, layer: usize) -> usize {
        if layer == 0 {
            self.embed
        } else {
            self.hidden
        }
    }
}

/// `4 · n_f · (n_x + 2T + 3 n_h)`: the factor matrices of one factored LSTM
/// layer with input width `n_x`.
pub fn parameter_count(factors: usize, input: usize, topics: usize, hidden: usize) -> usize {
    4 * factors * (input + 2 * topics + 3 * hidden)
}

/// Explicit `W_a · diag(W_b t) · W_c`.
pub fn compose_weight(wa: &Array, wb: &Array, wc: &Array, t: &Array) -> Result<Array> {
    let nf = wa.cols();
    if wb.rows() != nf || wc.rows() != nf || !t.is_vector() || wb.cols() != t.rows() {
        return Err(Error::shape(
            "compose_weight",
            format!(
                "W_a {:?}, W_b {:?}, W_c {:?}, t {:?}",
                wa.shape(),
                wb.shape(),
                wc.shape(),
                t.shape()
            ),
        ));
    }
    let scale = wb.matmul(t)?;
    let mut scaled_c = wc.clone();
    for f in 0..nf {
        let s = scale.get(f, 0);
        for j in 0..wc.cols() {
            scaled_c.set(f, j, s * wc.get(f, j));
        }
    }
    wa.matmul(&scaled_c)
}

/// Pre-sampled inverted-dropout masks, indexed `[step][layer]`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DropoutMasks {
    pub steps: Vec<Vec<Array>>,
}

impl DropoutMasks {
    /// Bernoulli keep-masks scaled by `1 / (1 - rate)`.
    pub fn sample<R: Rng + ?Sized>(steps: usize, layers: usize, width: usize, rate: f64, rng: &mut R) -> Self {
        let keep = 1.0 - rate;
        let steps = (0..steps)
            .map(|_| {
                (0..layers)
                    .map(|_| {
                        let data = (0..width)
                            .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
                            .collect();
                        Array::new(width, 1, data).expect("finite mask")
                    })
                    .collect()
            })
            .collect();
        Self { steps }
    }

    pub fn at(&self, step: usize) -> Option<&[Array]> {
        self.steps.get(step).map(Vec::as_slice)
    }
}

/// Input fed at one step.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Input {
    /// The learned start-of-sequence embedding.
    Bos,
    Token(usize),
}

/// Hidden and cell state of a stack of LSTM layers.
#[derive(Clone, Debug)]
pub struct StackState<P> {
    pub h: Vec<Var>,
    pub c: Vec<Var>,
    prep: Vec<P>,
}

/// A model producing next-token log-probabilities step by step.
pub trait LanguageModel {
    type State;

    fn vocab_size(&self) -> usize;

    fn uses_topics(&self) -> bool;

    /// Zero hidden state; `t` is fixed for the whole sequence.
    fn start(&self, tape: &mut Tape, t: Option<Var>) -> Result<Self::State>;

    /// Log-probabilities (`D_lm x 1`) of the next token after `input`.
    fn step(&self, tape: &mut Tape, state: &mut Self::State, input: Input, masks: Option<&[Array]>) -> Result<Var>;
}

/// `Σ_m −log p(y_m | y_{<m}, t)` under teacher forcing.
pub fn sequence_nll<M: LanguageModel>(
    model: &M,
    tape: &mut Tape,
    t: Option<Var>,
    ids: &[usize],
    masks: Option<&DropoutMasks>,
) -> Result<Var> {
    if ids.is_empty() {
        return Err(Error::EmptySequence);
    }
    let mut state = model.start(tape, t)?;
    let mut input = Input::Bos;
    let mut total: Option<Var> = None;
    for (m, &y) in ids.iter().enumerate() {
        let step_masks = masks.and_then(|mk| mk.at(m));
        let logp = model.step(tape, &mut state, input, step_masks)?;
        let picked = tape.gather(logp, y)?;
        total = Some(match total {
            Some(acc) => tape.add(acc, picked)?,
            None => picked,
        });
        input = Input::Token(y);
    }
    tape.scale(total.expect("non-empty"), -1.0)
}

/// One layer of an LSTM stack.
pub trait Cell {
    /// Per-sequence values derived from `t`.
    type Prep: Clone;

    fn prepare(&self, tape: &mut Tape, t: Option<Var>) -> Result<Self::Prep>;

    /// Gate pre-activations in `i, f, o, c` order.
    fn preactivations(&self, tape: &mut Tape, prep: &Self::Prep, x: Var, h: Var) -> Result<[Var; 4]>;

    fn uses_topics(&self) -> bool;
}

/// `c = i ⊙ c̃ + f ⊙ c_prev`, `h = o ⊙ tanh(c)`.
fn lstm_update(tape: &mut Tape, pre: [Var; 4], c_prev: Var, candidate_tanh: bool) -> Result<(Var, Var)> {
    let i = tape.sigmoid(pre[0])?;
    let f = tape.sigmoid(pre[1])?;
    let o = tape.sigmoid(pre[2])?;
    let cand = if candidate_tanh {
        tape.tanh(pre[CANDIDATE])?
    } else {
        tape.sigmoid(pre[CANDIDATE])?
    };
    let ic = tape.mul(i, cand)?;
    let fc = tape.mul(f, c_prev)?;
    let c = tape.add(ic, fc)?;
    let tc = tape.tanh(c)?;
    let h = tape.mul(o, tc)?;
    Ok((h, c))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FactoredGate {
    pub wa: ParamId,
    pub wb: ParamId,
    pub wc: ParamId,
    pub ua: ParamId,
    pub ub: ParamId,
    pub uc: ParamId,
    pub bias: ParamId,
}

/// Factored topic-compositional LSTM layer.
#[derive(Clone, Debug, PartialEq)]
pub struct FactoredLayer {
    pub gates: [FactoredGate; 4],
}

/// `W_{*b} t` and `U_{*b} t` for the four gates.
#[derive(Clone, Copy, Debug)]
pub struct TopicFactors {
    wbt: [Var; 4],
    ubt: [Var; 4],
}

impl FactoredLayer {
    fn new<R: Rng + ?Sized>(store: &mut ParamStore, prefix: &str, input: usize, d: &LmDims, rng: &mut R) -> Self {
        let (nh, nf, nt) = (d.hidden, d.factors, d.topics);
        let gates = GATE_NAMES.map(|g| {
            let p = format!("{prefix}.{g}");
            FactoredGate {
                wa: store_uniform(store, format!("{p}.wa"), nh, nf, rng),
                wb: store_uniform(store, format!("{p}.wb"), nf, nt, rng),
                wc: store_uniform(store, format!("{p}.wc"), nf, input, rng),
                ua: store_uniform(store, format!("{p}.ua"), nh, nf, rng),
                ub: store_uniform(store, format!("{p}.ub"), nf, nt, rng),
                uc: store_uniform(store, format!("{p}.uc"), nf, nh, rng),
                bias: store.add(format!("{p}.bias"), Array::zeros(nh, 1)),
            }
        });
        Self { gates }
    }

    /// Entries allocated to the six factor matrices of all gates.
    pub fn factor_entries(&self, store: &ParamStore) -> usize {
        self.gates
            .iter()
            .flat_map(|g| [g.wa, g.wb, g.wc, g.ua, g.ub, g.uc])
            .map(|id| store.get(id).len())
            .sum()
    }
}

fn store_uniform<R: Rng + ?Sized>(store: &mut ParamStore, name: String, r: usize, c: usize, rng: &mut R) -> ParamId {
    store.add(name, init::uniform(r, c, RECURRENT_INIT, rng))
}

impl Cell for FactoredLayer {
    type Prep = TopicFactors;

    fn prepare(&self, tape: &mut Tape, t: Option<Var>) -> Result<TopicFactors> {
        let t = t.ok_or_else(|| Error::Invalid("factored LSTM needs a topic vector".into()))?;
        let mut wbt = [t; 4];
        let mut ubt = [t; 4];
        for (k, g) in self.gates.iter().enumerate() {
            let wb = tape.param(g.wb);
            wbt[k] = tape.matmul(wb, t)?;
            let ub = tape.param(g.ub);
            ubt[k] = tape.matmul(ub, t)?;
        }
        Ok(TopicFactors { wbt, ubt })
    }

    fn preactivations(&self, tape: &mut Tape, prep: &TopicFactors, x: Var, h: Var) -> Result<[Var; 4]> {
        let mut out = [x; 4];
        for (k, g) in self.gates.iter().enumerate() {
            let wc = tape.param(g.wc);
            let wcx = tape.matmul(wc, x)?;
            let x_tilde = tape.mul(prep.wbt[k], wcx)?;
            let uc = tape.param(g.uc);
            let uch = tape.matmul(uc, h)?;
            let h_tilde = tape.mul(prep.ubt[k], uch)?;
            let wa = tape.param(g.wa);
            let a = tape.matmul(wa, x_tilde)?;
            let ua = tape.param(g.ua);
            let b = tape.matmul(ua, h_tilde)?;
            let s = tape.add(a, b)?;
            let bias = tape.param(g.bias);
            out[k] = tape.add(s, bias)?;
        }
        Ok(out)
    }

    fn uses_topics(&self) -> bool {
        true
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DenseGate {
    pub w: ParamId,
    pub u: ParamId,
    pub bias: ParamId,
}

/// Standard LSTM layer with full gate matrices.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmLayer {
    pub gates: [DenseGate; 4],
}

impl LstmLayer {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, prefix: &str, input: usize, hidden: usize, rng: &mut R) -> Self {
        let gates = GATE_NAMES.map(|g| {
            let p = format!("{prefix}.{g}");
            let w = store_uniform(store, format!("{p}.w"), hidden, input, rng);
            let u = store_uniform(store, format!("{p}.u"), hidden, hidden, rng);
            let bias = store.add(format!("{p}.bias"), Array::zeros(hidden, 1));
            DenseGate { w, u, bias }
        });
        Self { gates }
    }

    /// One standard LSTM step, used directly by experts.
    pub fn step(&self, tape: &mut Tape, x: Var, h: Var, c: Var, candidate_tanh: bool) -> Result<(Var, Var)> {
        let pre = self.preactivations(tape, &(), x, h)?;
        lstm_update(tape, pre, c, candidate_tanh)
    }
}

impl Cell for LstmLayer {
    type Prep = ();

    fn prepare(&self, _tape: &mut Tape, _t: Option<Var>) -> Result<()> {
        Ok(())
    }

    fn preactivations(&self, tape: &mut Tape, _prep: &(), x: Var, h: Var) -> Result<[Var; 4]> {
        let mut out = [x; 4];
        for (k, g) in self.gates.iter().enumerate() {
            let w = tape.param(g.w);
            let wx = tape.matmul(w, x)?;
            let u = tape.param(g.u);
            let uh = tape.matmul(u, h)?;
            let s = tape.add(wx, uh)?;
            let bias = tape.param(g.bias);
            out[k] = tape.add(s, bias)?;
        }
        Ok(out)
    }

    fn uses_topics(&self) -> bool {
        false
    }
}

/// Embedding, a stack of LSTM layers, and the output projection `V`.
#[derive(Clone, Debug, PartialEq)]
pub struct RecurrentLm<C> {
    pub dims: LmDims,
    /// `D_lm x n_x`.
    pub embeddings: ParamId,
    /// Start-of-sequence input embedding, `n_x x 1`.
    pub bos: ParamId,
    pub layers: Vec<C>,
    /// `V`, `D_lm x n_h`.
    pub output: ParamId,
    pub candidate_tanh: bool,
}

/// The topic-compositional LSTM language model.
pub type TcLstm = RecurrentLm<FactoredLayer>;
/// Topic-free baseline with matched hidden width.
pub type BasicLstm = RecurrentLm<LstmLayer>;

fn embedding_params<R: Rng + ?Sized>(store: &mut ParamStore, d: &LmDims, rng: &mut R) -> (ParamId, ParamId) {
    let emb = store.add("lm.embeddings", init::scaled_normal(d.vocab, d.embed, rng));
    let bos = store.add("lm.bos", init::scaled_normal(d.embed, 1, rng));
    (emb, bos)
}

fn embed(tape: &mut Tape, embeddings: ParamId, bos: ParamId, input: Input) -> Result<Var> {
    match input {
        Input::Bos => Ok(tape.param(bos)),
        Input::Token(id) => {
            let e = tape.param(embeddings);
            tape.gather(e, id)
        }
    }
}

impl RecurrentLm<FactoredLayer> {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, dims: LmDims, candidate_tanh: bool, rng: &mut R) -> Self {
        let (embeddings, bos) = embedding_params(store, &dims, rng);
        let layers = (0..dims.layers)
            .map(|l| FactoredLayer::new(store, &format!("lm.l{l}"), dims.layer_input(l), &dims, rng))
            .collect();
        let output = store_uniform(store, "lm.output".into(), dims.vocab, dims.hidden, rng);
        Self {
            dims,
            embeddings,
            bos,
            layers,
            output,
            candidate_tanh,
        }
    }

    /// One step of the first layer: `(h, c)` from `x_prev`, `h_prev`, `c_prev`.
    pub fn tclstm_step(&self, tape: &mut Tape, t: Var, x_prev: Var, h_prev: Var, c_prev: Var) -> Result<(Var, Var)> {
        let layer = &self.layers[0];
        let prep = layer.prepare(tape, Some(t))?;
        let pre = layer.preactivations(tape, &prep, x_prev, h_prev)?;
        lstm_update(tape, pre, c_prev, self.candidate_tanh)
    }

    /// Factor-matrix entries over all layers.
    pub fn factor_entries(&self, store: &ParamStore) -> usize {
        self.layers.iter().map(|l| l.factor_entries(store)).sum()
    }
}

impl RecurrentLm<LstmLayer> {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, dims: LmDims, candidate_tanh: bool, rng: &mut R) -> Self {
        let (embeddings, bos) = embedding_params(store, &dims, rng);
        let layers = (0..dims.layers)
            .map(|l| LstmLayer::new(store, &format!("lm.l{l}"), dims.layer_input(l), dims.hidden, rng))
            .collect();
        let output = store_uniform(store, "lm.output".into(), dims.vocab, dims.hidden, rng);
        Self {
            dims,
            embeddings,
            bos,
            layers,
            output,
            candidate_tanh,
        }
    }
}

impl<C: Cell> RecurrentLm<C> {
    /// `softmax(V h)`.
    pub fn output_distribution(&self, tape: &mut Tape, h: Var) -> Result<Var> {
        let v = tape.param(self.output);
        let logits = tape.matmul(v, h)?;
        tape.softmax(logits)
    }
}

impl<C: Cell> LanguageModel for RecurrentLm<C> {
    type State = StackState<C::Prep>;

    fn vocab_size(&self) -> usize {
        self.dims.vocab
    }

    fn uses_topics(&self) -> bool {
        self.layers.first().is_some_and(Cell::uses_topics)
    }

    fn start(&self, tape: &mut Tape, t: Option<Var>) -> Result<Self::State> {
        let n = self.layers.len();
        let zero = tape.constant(Array::zeros(self.dims.hidden, 1));
        let prep = self
            .layers
            .iter()
            .map(|l| l.prepare(tape, t))
            .collect::<Result<Vec<_>>>()?;
        Ok(StackState {
            h: vec![zero; n],
            c: vec![zero; n],
            prep,
        })
    }

    fn step(&self, tape: &mut Tape, state: &mut Self::State, input: Input, masks: Option<&[Array]>) -> Result<Var> {
        let mut x = embed(tape, self.embeddings, self.bos, input)?;
        for (l, layer) in self.layers.iter().enumerate() {
            let pre = layer.preactivations(tape, &state.prep[l], x, state.h[l])?;
            let (h, c) = lstm_update(tape, pre, state.c[l], self.candidate_tanh)?;
            state.h[l] = h;
            state.c[l] = c;
            x = match masks {
                Some(m) => tape.dropout(h, &m[l])?,
                None => h,
            };
        }
        let v = tape.param(self.output);
        let logits = tape.matmul(v, x)?;
        tape.log_softmax(logits)
    }
}

/// Expert recurrence of the naive mixture.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum ExpertCell {
    /// `h = σ(W[k] x + U[k] h_prev + b[k])`.
    #[default]
    Rnn,
    /// A standard LSTM per expert.
    Lstm,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Expert {
    Rnn { w: ParamId, u: ParamId, bias: ParamId },
    Lstm(LstmLayer),
}

/// Per-expert recurrent state.
#[derive(Clone, Debug)]
pub struct ExpertState {
    pub h: Var,
    pub c: Var,
}

/// Output-level mixture of `T` independent recurrent experts.
#[derive(Clone, Debug, PartialEq)]
pub struct NaiveMoe {
    pub dims: LmDims,
    pub embeddings: ParamId,
    pub bos: ParamId,
    pub experts: Vec<Expert>,
    /// Shared `V`.
    pub output: ParamId,
    pub cell: ExpertCell,
    pub candidate_tanh: bool,
}

/// Naive mixture state: the topic vector and one state per expert.
#[derive(Clone, Debug)]
pub struct MoeState {
    t: Var,
    pub experts: Vec<ExpertState>,
}

impl NaiveMoe {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        dims: LmDims,
        cell: ExpertCell,
        candidate_tanh: bool,
        rng: &mut R,
    ) -> Self {
        let (embeddings, bos) = embedding_params(store, &dims, rng);
        let (nh, nx) = (dims.hidden, dims.embed);
        let experts = (0..dims.topics)
            .map(|k| match cell {
                ExpertCell::Rnn => Expert::Rnn {
                    w: store_uniform(store, format!("moe.e{k}.w"), nh, nx, rng),
                    u: store_uniform(store, format!("moe.e{k}.u"), nh, nh, rng),
                    bias: store.add(format!("moe.e{k}.bias"), Array::zeros(nh, 1)),
                },
                ExpertCell::Lstm => Expert::Lstm(LstmLayer::new(store, &format!("moe.e{k}"), nx, nh, rng)),
            })
            .collect();
        let output = store_uniform(store, "lm.output".into(), dims.vocab, nh, rng);
        Self {
            dims,
            embeddings,
            bos,
            experts,
            output,
            cell,
            candidate_tanh,
        }
    }

    fn expert_step(&self, tape: &mut Tape, k: usize, x: Var, s: &ExpertState) -> Result<ExpertState> {
        match &self.experts[k] {
            Expert::Rnn { w, u, bias } => {
                let w = tape.param(*w);
                let wx = tape.matmul(w, x)?;
                let u = tape.param(*u);
                let uh = tape.matmul(u, s.h)?;
                let a = tape.add(wx, uh)?;
                let b = tape.param(*bias);
                let a = tape.add(a, b)?;
                let h = tape.sigmoid(a)?;
                Ok(ExpertState { h, c: s.c })
            }
            Expert::Lstm(layer) => {
                let (h, c) = layer.step(tape, x, s.h, s.c, self.candidate_tanh)?;
                Ok(ExpertState { h, c })
            }
        }
    }

    /// `p(y_m) = Σ_k t_k · softmax(V h_m^{(k)})`, advancing every expert.
    pub fn naive_moe_step(
        &self,
        tape: &mut Tape,
        t: Var,
        x_prev: Var,
        states: &[ExpertState],
        mask: Option<&Array>,
    ) -> Result<(Var, Vec<ExpertState>)> {
        let n = self.experts.len();
        if tape.value(t).shape() != (n, 1) {
            return Err(Error::shape(
                "naive_moe_step",
                format!("t is {:?}, expected {} experts", tape.value(t).shape(), n),
            ));
        }
        let v = tape.param(self.output);
        let mut mix: Option<Var> = None;
        let mut next = Vec::with_capacity(n);
        for k in 0..n {
            let s = self.expert_step(tape, k, x_prev, &states[k])?;
            let h = match mask {
                Some(m) => tape.dropout(s.h, m)?,
                None => s.h,
            };
            let logits = tape.matmul(v, h)?;
            let p = tape.softmax(logits)?;
            let tk = tape.gather(t, k)?;
            let weighted = tape.matmul(p, tk)?;
            mix = Some(match mix {
                Some(acc) => tape.add(acc, weighted)?,
                None => weighted,
            });
            next.push(s);
        }
        Ok((mix.expect("at least one expert"), next))
    }
}

impl LanguageModel for NaiveMoe {
    type State = MoeState;

    fn vocab_size(&self) -> usize {
        self.dims.vocab
    }

    fn uses_topics(&self) -> bool {
        true
    }

    fn start(&self, tape: &mut Tape, t: Option<Var>) -> Result<MoeState> {
        let t = t.ok_or_else(|| Error::Invalid("naive mixture needs a topic vector".into()))?;
        let zero = tape.constant(Array::zeros(self.dims.hidden, 1));
        Ok(MoeState {
            t,
            experts: vec![ExpertState { h: zero, c: zero }; self.experts.len()],
        })
    }

    fn step(&self, tape: &mut Tape, state: &mut MoeState, input: Input, masks: Option<&[Array]>) -> Result<Var> {
        let x = embed(tape, self.embeddings, self.bos, input)?;
        let (p, next) = self.naive_moe_step(tape, state.t, x, &state.experts, masks.map(|m| &m[0]))?;
        state.experts = next;
        tape.log(p)
    }
}
