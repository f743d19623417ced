//! Joint training of the topic model and the language model.
//!
//! Each minibatch builds one tape holding every instance's lower bound
//! `L = log p(d | t) + Σ log p(y_m | y_{<m}, t) − KL`, the batch objective
//! `J = mean L + λ R`, and Adam descends `−J`.

use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Array, Gradients, ParamStore, Tape, Var};
use crate::corpus::{TrainingInstance, DEFAULT_SEQ_LEN};
use crate::error::{Error, Result};
use crate::eval::perplexity;
use crate::init::standard_normal_vec;
use crate::model::Model;
use crate::nlm::DropoutMasks;
use crate::ntm::{decode_loglik, diversity_regularizer, PairAveraging};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    /// Diversity weight `λ`.
    pub lambda: f64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub dropout: f64,
    /// Global gradient-norm ceiling.
    pub clip: f64,
    pub seed: u64,
    pub seq_len: usize,
    /// Dev perplexity is measured every this many epochs and after the last.
    pub eval_every: usize,
    /// Linear KL warm-up length in epochs; 0 disables it.
    pub kl_warmup: usize,
    pub pair_averaging: PairAveraging,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: 0.1,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            batch_size: 32,
            epochs: 10,
            dropout: 0.4,
            clip: 5.0,
            seed: 0,
            seq_len: DEFAULT_SEQ_LEN,
            eval_every: 1,
            kl_warmup: 0,
            pair_averaging: PairAveraging::AllPairs,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return bad("lambda must be finite and non-negative");
        }
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return bad("learning rate must be finite and non-negative");
        }
        for (name, r) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(r > 0.0 && r < 1.0) {
                return Err(Error::Config(format!("{name} must lie in (0, 1)")));
            }
        }
        if !(self.dropout >= 0.0 && self.dropout < 1.0) {
            return bad("dropout must lie in [0, 1)");
        }
        if !(self.adam_eps > 0.0) {
            return bad("adam epsilon must be positive");
        }
        if !(self.clip > 0.0) {
            return bad("clip must be positive");
        }
        if self.batch_size == 0 || self.seq_len < 2 || self.eval_every == 0 {
            return bad("batch size and eval cadence must be positive, sequence cap at least 2");
        }
        Ok(())
    }
}

/// The three parts of one instance's bound, and their sum.
#[derive(Clone, Copy, Debug)]
pub struct ElboTerms {
    /// `log p(d | t)`; absent without a topic model.
    pub loglik: Option<Var>,
    pub kl: Option<Var>,
    /// `Σ −log p(y_m | y_{<m}, t)`.
    pub nll: Var,
    /// `loglik − kl_weight · kl − nll`.
    pub total: Var,
}

/// Per-instance noise: `ε` for the reparameterization and dropout masks.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Noise {
    /// `None` uses the posterior mean.
    pub eps: Option<Vec<f64>>,
    pub masks: Option<DropoutMasks>,
}

/// Lower bound of one instance on `tape`. The same `t` feeds the document
/// likelihood and the language model.
pub fn elbo(model: &Model, tape: &mut Tape, inst: &TrainingInstance, noise: &Noise, kl_weight: f64) -> Result<ElboTerms> {
    let pass = model.topic_pass(tape, &inst.context_bow, noise.eps.as_deref())?;
    let nll = model.sequence_nll(tape, pass.map(|p| p.t), &inst.target, noise.masks.as_ref())?;
    let Some(pass) = pass else {
        let total = tape.scale(nll, -1.0)?;
        return Ok(ElboTerms {
            loglik: None,
            kl: None,
            nll,
            total,
        });
    };
    let ntm = model.ntm.as_ref().expect("topic pass implies a topic model");
    let beta = ntm.beta(tape)?;
    let loglik = decode_loglik(tape, beta, pass.t, &inst.context_bow)?;
    let kl = ntm.kl_divergence(tape, pass.mu, pass.logvar)?;
    let wkl = tape.scale(kl, kl_weight)?;
    let a = tape.sub(loglik, wkl)?;
    let total = tape.sub(a, nll)?;
    Ok(ElboTerms {
        loglik: Some(loglik),
        kl: Some(kl),
        nll,
        total,
    })
}

#[derive(Clone, Copy, Debug)]
pub struct ObjectiveTerms {
    /// `J = mean L + λ R`.
    pub j: Var,
    pub r: Option<Var>,
}

/// Weights applied inside [`objective`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ObjectiveWeights {
    pub lambda: f64,
    pub kl_weight: f64,
    pub averaging: PairAveraging,
}

impl Default for ObjectiveWeights {
    fn default() -> Self {
        Self {
            lambda: 0.1,
            kl_weight: 1.0,
            averaging: PairAveraging::AllPairs,
        }
    }
}

/// Batch objective; `R` is computed once per batch.
pub fn objective(
    model: &Model,
    tape: &mut Tape,
    batch: &[&TrainingInstance],
    noise: &[Noise],
    w: &ObjectiveWeights,
) -> Result<ObjectiveTerms> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if noise.len() != batch.len() {
        return Err(Error::Invalid(format!("{} noise draws for {} instances", noise.len(), batch.len())));
    }
    let mut sum: Option<Var> = None;
    for (inst, n) in batch.iter().zip(noise) {
        let l = elbo(model, tape, inst, n, w.kl_weight)?.total;
        sum = Some(match sum {
            Some(acc) => tape.add(acc, l)?,
            None => l,
        });
    }
    let mean = tape.scale(sum.expect("non-empty batch"), 1.0 / batch.len() as f64)?;
    let Some(ntm) = &model.ntm else {
        return Ok(ObjectiveTerms { j: mean, r: None });
    };
    let beta = ntm.beta(tape)?;
    let r = diversity_regularizer(tape, beta, w.averaging)?;
    let lr = tape.scale(r, w.lambda)?;
    let j = tape.add(mean, lr)?;
    Ok(ObjectiveTerms { j, r: Some(r) })
}

/// Adam moments.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<Array>,
    pub v: Vec<Array>,
    pub step: u64,
}

impl AdamState {
    pub fn new(store: &ParamStore) -> Self {
        let zeros: Vec<Array> = store.values().iter().map(|a| Array::zeros(a.rows(), a.cols())).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }
}

/// Clips `grads` to global norm `cfg.clip`, then applies one bias-corrected
/// Adam update. Returns the pre-clip norm.
pub fn adam_step(store: &mut ParamStore, grads: &mut Gradients, state: &mut AdamState, cfg: &TrainConfig) -> Result<f64> {
    for id in store.ids() {
        if !grads.get(id).is_finite() {
            return Err(Error::Diverged(store.name(id).to_string()));
        }
    }
    let norm = grads.global_norm();
    if norm > cfg.clip {
        grads.scale(cfg.clip / norm);
    }
    state.step += 1;
    let bc1 = 1.0 - cfg.beta1.powi(state.step as i32);
    let bc2 = 1.0 - cfg.beta2.powi(state.step as i32);
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let k = id.index();
        let g = grads.get(id).data();
        let m = state.m[k].data_mut();
        let v = state.v[k].data_mut();
        let p = store.get_mut(id).data_mut();
        for i in 0..p.len() {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            p[i] -= cfg.lr * (m[i] / bc1) / ((v[i] / bc2).sqrt() + cfg.adam_eps);
        }
    }
    Ok(norm)
}

/// One line of the training log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean batch objective over the epoch.
    pub j: f64,
    pub dev_ppl: Option<f64>,
    /// Diversity of `β` after the epoch; 0 without a topic model.
    pub r: f64,
}

impl fmt::Display for EpochRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "epoch {} J {:.6} dev_ppl {:.6} R {:.6}",
            self.epoch,
            self.j,
            self.dev_ppl.unwrap_or(f64::NAN),
            self.r
        )
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were kept.
    pub best_epoch: Option<usize>,
    pub best_dev_ppl: Option<f64>,
}

impl TrainLog {
    pub fn to_text(&self) -> String {
        self.epochs.iter().map(|r| format!("{r}\n")).collect()
    }
}

/// Current diversity of `β`.
pub fn diversity_of(model: &Model, averaging: PairAveraging) -> Result<f64> {
    let Some(ntm) = &model.ntm else { return Ok(0.0) };
    let mut tape = Tape::new(&model.store);
    let beta = ntm.beta(&mut tape)?;
    let r = diversity_regularizer(&mut tape, beta, averaging)?;
    Ok(tape.scalar(r))
}

fn draw_noise(model: &Model, inst: &TrainingInstance, cfg: &TrainConfig, rng: &mut ChaCha8Rng) -> Noise {
    let eps = model.ntm.as_ref().map(|n| standard_normal_vec(n.dims.topics, rng));
    let masks = (cfg.dropout > 0.0).then(|| {
        DropoutMasks::sample(inst.target.len(), model.mask_layers(), model.spec.hidden, cfg.dropout, rng)
    });
    Noise { eps, masks }
}

/// Trains `model` in place, calling `on_epoch` after every epoch. With a
/// dev split the parameters of the best dev-perplexity epoch are kept.
pub fn train(
    model: &mut Model,
    train_set: &[TrainingInstance],
    dev_set: &[TrainingInstance],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainLog> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::EmptyInstances);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = AdamState::new(&model.store);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut log = TrainLog::default();
    let mut best: Option<ParamStore> = None;

    for epoch in 1..=cfg.epochs {
        let kl_weight = if cfg.kl_warmup == 0 {
            1.0
        } else {
            (epoch as f64 / cfg.kl_warmup as f64).min(1.0)
        };
        let weights = ObjectiveWeights {
            lambda: cfg.lambda,
            kl_weight,
            averaging: cfg.pair_averaging,
        };
        order.shuffle(&mut rng);
        let mut j_sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&TrainingInstance> = chunk.iter().map(|&i| &train_set[i]).collect();
            let noise: Vec<Noise> = batch.iter().map(|inst| draw_noise(model, inst, cfg, &mut rng)).collect();
            let mut grads = {
                let mut tape = Tape::new(&model.store);
                let terms = objective(model, &mut tape, &batch, &noise, &weights)?;
                j_sum += tape.scalar(terms.j);
                let loss = tape.scale(terms.j, -1.0)?;
                tape.backward(loss)?
            };
            adam_step(&mut model.store, &mut grads, &mut adam, cfg)?;
            batches += 1;
        }

        let evaluate = !dev_set.is_empty() && (epoch % cfg.eval_every == 0 || epoch == cfg.epochs);
        let dev_ppl = if evaluate { Some(perplexity(model, dev_set)?) } else { None };
        if let Some(p) = dev_ppl {
            if log.best_dev_ppl.is_none_or(|b| p < b) {
                log.best_dev_ppl = Some(p);
                log.best_epoch = Some(epoch);
                best = Some(model.store.clone());
            }
        }
        let record = EpochRecord {
            epoch,
            j: j_sum / batches as f64,
            dev_ppl,
            r: diversity_of(model, cfg.pair_averaging)?,
        };
        on_epoch(&record);
        log.epochs.push(record);
    }
    match best {
        Some(store) => model.store = store,
        None => log.best_epoch = (cfg.epochs > 0).then_some(cfg.epochs),
    }
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelKind, ModelSpec};
    use crate::nlm::ExpertCell;
    use crate::ntm::kl_divergence;

    fn spec(kind: ModelKind) -> ModelSpec {
        ModelSpec {
            kind,
            lm_vocab: 6,
            tm_vocab: 4,
            embed: 3,
            hidden: 4,
            factors: 3,
            topics: 2,
            layers: 1,
            encoder: [5, 4],
            candidate_tanh: false,
            expert_cell: ExpertCell::Lstm,
            prior_mu: 0.0,
            prior_sigma: 1.0,
        }
    }

    fn inst(target: &[usize], bow: &[u32]) -> TrainingInstance {
        TrainingInstance {
            target: target.to_vec(),
            context_bow: bow.to_vec(),
        }
    }

    fn noise(model: &Model, seed: u64, len: usize) -> Noise {
        let cfg = TrainConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut n = draw_noise(model, &inst(&vec![2; len], &[0; 4]), &cfg, &mut rng);
        assert_eq!(n.masks.as_ref().unwrap().steps.len(), len);
        n.eps = n.eps.map(|e| e.iter().map(|v| v * 0.5).collect());
        n
    }

    #[test]
    fn elbo_is_sum_of_independently_computed_parts() {
        let model = Model::new(spec(ModelKind::Tcnlm), 1).unwrap();
        let x = inst(&[3, 4, 2], &[1, 0, 2, 1]);
        let nz = noise(&model, 5, 3);
        let mut tape = Tape::new(&model.store);
        let terms = elbo(&model, &mut tape, &x, &nz, 1.0).unwrap();
        let total = tape.scalar(terms.total);

        let ntm = model.ntm.as_ref().unwrap();
        let mut t2 = Tape::new(&model.store);
        let pass = ntm.infer(&mut t2, &x.context_bow, nz.eps.as_deref()).unwrap();
        let beta = ntm.beta(&mut t2).unwrap();
        let ll = decode_loglik(&mut t2, beta, pass.t, &x.context_bow).unwrap();
        let kl = kl_divergence(&mut t2, pass.mu, pass.logvar, 0.0, 1.0).unwrap();
        let nll = model.sequence_nll(&mut t2, Some(pass.t), &x.target, nz.masks.as_ref()).unwrap();
        let parts = t2.scalar(ll) - t2.scalar(kl) - t2.scalar(nll);
        assert!((total - parts).abs() < 1e-10);

        let mut t3 = Tape::new(&model.store);
        let again = elbo(&model, &mut t3, &x, &nz, 1.0).unwrap();
        assert_eq!(t3.scalar(again.total).to_bits(), total.to_bits());
    }

    #[test]
    fn basic_lstm_bound_is_negative_nll() {
        let model = Model::new(spec(ModelKind::Lstm), 1).unwrap();
        let x = inst(&[3, 2], &[1, 0, 0, 0]);
        let mut tape = Tape::new(&model.store);
        let terms = elbo(&model, &mut tape, &x, &Noise::default(), 1.0).unwrap();
        assert!(terms.loglik.is_none());
        assert_eq!(tape.scalar(terms.total), -tape.scalar(terms.nll));
    }

    #[test]
    fn objective_mean_and_regularizer() {
        let model = Model::new(spec(ModelKind::Tcnlm), 2).unwrap();
        let x = inst(&[3, 4, 2], &[1, 0, 2, 1]);
        let nz = noise(&model, 6, 3);
        let off = ObjectiveWeights {
            lambda: 0.0,
            ..Default::default()
        };
        let mut tape = Tape::new(&model.store);
        let single = objective(&model, &mut tape, &[&x], &[nz.clone()], &off).unwrap();
        let l = elbo(&model, &mut tape, &x, &nz, 1.0).unwrap().total;
        assert!((tape.scalar(single.j) - tape.scalar(l)).abs() < 1e-12);

        let twice = objective(&model, &mut tape, &[&x, &x], &[nz.clone(), nz.clone()], &off).unwrap();
        assert!((tape.scalar(twice.j) - tape.scalar(single.j)).abs() < 1e-12);

        let on = ObjectiveWeights::default();
        let reg = objective(&model, &mut tape, &[&x], &[nz.clone()], &on).unwrap();
        let r = tape.scalar(reg.r.unwrap());
        assert!((tape.scalar(reg.j) - (tape.scalar(single.j) + 0.1 * r)).abs() < 1e-12);

        assert!(matches!(objective(&model, &mut tape, &[], &[], &on), Err(Error::EmptyBatch)));
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let mut store = ParamStore::new();
        let id = store.add("p", Array::scalar(1.0).unwrap());
        let mut grads = Gradients::zeros_like(&store);
        grads.get_mut(id).data_mut()[0] = 0.3;
        let mut st = AdamState::new(&store);
        let cfg = TrainConfig {
            lr: 0.01,
            ..Default::default()
        };
        adam_step(&mut store, &mut grads, &mut st, &cfg).unwrap();
        let moved = 1.0 - store.get(id).item();
        assert!((moved - 0.01 * 0.3 / (0.3 + 1e-8)).abs() < 1e-12);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn adam_zero_gradient_leaves_parameters() {
        let mut store = ParamStore::new();
        let id = store.add("p", Array::from_vec(vec![1.0, -2.0]).unwrap());
        let mut st = AdamState::new(&store);
        st.m[0] = Array::from_vec(vec![0.0, 0.0]).unwrap();
        let mut grads = Gradients::zeros_like(&store);
        let before = store.clone();
        adam_step(&mut store, &mut grads, &mut st, &TrainConfig::default()).unwrap();
        assert_eq!(store, before);

        st.m[0] = Array::from_vec(vec![0.5, 0.5]).unwrap();
        let mut store2 = before.clone();
        adam_step(&mut store2, &mut grads, &mut st, &TrainConfig::default()).unwrap();
        assert!((st.m[0].get(0, 0) - 0.45).abs() < 1e-15);
        assert_ne!(store2.get(id), before.get(id));
    }

    #[test]
    fn adam_clips_to_global_norm() {
        let mut store = ParamStore::new();
        let a = store.add("a", Array::zeros(2, 1));
        let b = store.add("b", Array::zeros(1, 1));
        let mut grads = Gradients::zeros_like(&store);
        grads.get_mut(a).data_mut().copy_from_slice(&[60.0, 0.0]);
        grads.get_mut(b).data_mut()[0] = 80.0;
        let mut st = AdamState::new(&store);
        let norm = adam_step(&mut store, &mut grads, &mut st, &TrainConfig::default()).unwrap();
        assert!((norm - 100.0).abs() < 1e-12);
        assert!((grads.global_norm() - 5.0).abs() < 1e-9);
    }

    #[test]
    fn adam_names_the_diverged_parameter() {
        let mut store = ParamStore::new();
        store.add("ok", Array::zeros(1, 1));
        let bad = store.add("lm.output", Array::zeros(1, 1));
        let mut grads = Gradients::zeros_like(&store);
        grads.get_mut(bad).data_mut()[0] = f64::NAN;
        let mut st = AdamState::new(&store);
        let err = adam_step(&mut store, &mut grads, &mut st, &TrainConfig::default()).unwrap_err();
        assert!(matches!(&err, Error::Diverged(n) if n == "lm.output"));
        assert!(err.to_string().contains("diverged"));
    }

    fn toy_data() -> Vec<TrainingInstance> {
        vec![
            inst(&[3, 3, 2], &[2, 0, 1, 0]),
            inst(&[4, 5, 2], &[0, 2, 0, 1]),
            inst(&[3, 2], &[1, 0, 1, 0]),
            inst(&[5, 4, 2], &[0, 1, 0, 2]),
        ]
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let mut model = Model::new(spec(ModelKind::Tcnlm), 3).unwrap();
        let before = model.store.clone();
        let cfg = TrainConfig {
            lr: 0.0,
            epochs: 1,
            batch_size: 2,
            ..Default::default()
        };
        train(&mut model, &toy_data(), &[], &cfg, |_| {}).unwrap();
        assert_eq!(model.store, before);
    }

    #[test]
    fn training_is_deterministic_and_improves_j() {
        let cfg = TrainConfig {
            lr: 0.02,
            epochs: 30,
            batch_size: 2,
            seed: 11,
            ..Default::default()
        };
        let data = toy_data();
        let run = || {
            let mut model = Model::new(spec(ModelKind::Tcnlm), 4).unwrap();
            let log = train(&mut model, &data, &data[..2], &cfg, |_| {}).unwrap();
            (model, log)
        };
        let (m1, l1) = run();
        let (m2, l2) = run();
        assert_eq!(l1.to_text(), l2.to_text());
        assert_eq!(m1.store, m2.store);
        assert!(l1.epochs.last().unwrap().j > l1.epochs[0].j, "{}", l1.to_text());
        let line = l1.epochs[0].to_string();
        assert!(line.starts_with("epoch 1 J "));
        assert!(line.contains(" dev_ppl ") && line.contains(" R "));
    }

    #[test]
    fn best_dev_parameters_are_restored() {
        let cfg = TrainConfig {
            lr: 0.05,
            epochs: 8,
            batch_size: 4,
            ..Default::default()
        };
        let data = toy_data();
        let mut model = Model::new(spec(ModelKind::Moe), 5).unwrap();
        let log = train(&mut model, &data, &data[2..], &cfg, |_| {}).unwrap();
        let best = log.best_dev_ppl.unwrap();
        assert!((perplexity(&model, &data[2..]).unwrap() - best).abs() < 1e-12);
        let min = log.epochs.iter().filter_map(|r| r.dev_ppl).fold(f64::INFINITY, f64::min);
        assert_eq!(best, min);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        for cfg in [
            TrainConfig { lambda: -1.0, ..Default::default() },
            TrainConfig { dropout: 1.0, ..Default::default() },
            TrainConfig { clip: 0.0, ..Default::default() },
            TrainConfig { beta1: 1.0, ..Default::default() },
            TrainConfig { batch_size: 0, ..Default::default() },
        ] {
            assert!(matches!(cfg.validate(), Err(Error::Config(_))), "{cfg:?}");
        }
    }
}
