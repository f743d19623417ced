//! The batch objective of a tiny hand-built instance against a plain scalar
//! forward pass that shares no code with the tape.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tcnlm::autodiff::{Array, Tape};
use tcnlm::corpus::TrainingInstance;
use tcnlm::model::{Model, ModelKind, ModelSpec};
use tcnlm::nlm::ExpertCell;
use tcnlm::ntm::PairAveraging;
use tcnlm::trainer::{objective, Noise, ObjectiveWeights};

type Mat = Vec<Vec<f64>>;

fn spec() -> ModelSpec {
    ModelSpec {
        kind: ModelKind::Tcnlm,
        lm_vocab: 3,
        tm_vocab: 2,
        embed: 2,
        hidden: 2,
        factors: 2,
        topics: 2,
        layers: 1,
        encoder: [3, 2],
        candidate_tanh: false,
        expert_cell: ExpertCell::Rnn,
        prior_mu: 0.0,
        prior_sigma: 1.0,
    }
}

fn params(model: &Model) -> HashMap<String, Mat> {
    model
        .store
        .ids()
        .map(|id| {
            let a = model.store.get(id);
            let (r, c) = a.shape();
            let m = (0..r).map(|i| (0..c).map(|j| a.get(i, j)).collect()).collect();
            (model.store.name(id).to_string(), m)
        })
        .collect()
}

fn mv(m: &Mat, x: &[f64]) -> Vec<f64> {
    m.iter().map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum()).collect()
}

fn affine(p: &HashMap<String, Mat>, name: &str, x: &[f64]) -> Vec<f64> {
    let b = &p[&format!("{name}.b")];
    mv(&p[&format!("{name}.w")], x).iter().zip(b).map(|(v, b)| v + b[0]).collect()
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `Wa diag(Wb t) Wc x`, entry by entry.
fn factored(a: &Mat, b: &Mat, c: &Mat, t: &[f64], x: &[f64]) -> Vec<f64> {
    (0..a.len())
        .map(|i| {
            let mut s = 0.0;
            for f in 0..b.len() {
                let bt: f64 = (0..t.len()).map(|k| b[f][k] * t[k]).sum();
                for j in 0..x.len() {
                    s += a[i][f] * bt * c[f][j] * x[j];
                }
            }
            s
        })
        .collect()
}

fn oracle(p: &HashMap<String, Mat>, inst: &TrainingInstance, eps: &[f64], lambda: f64, offdiag: bool) -> f64 {
    // Topic model.
    let x: Vec<f64> = inst.context_bow.iter().map(|&c| c as f64).collect();
    let h1: Vec<f64> = affine(p, "ntm.enc1", &x).iter().map(|v| v.max(0.0)).collect();
    let h2: Vec<f64> = affine(p, "ntm.enc2", &h1).iter().map(|v| v.max(0.0)).collect();
    let mu = affine(p, "ntm.mu", &h2);
    let lv = affine(p, "ntm.logvar", &h2);
    let theta: Vec<f64> = (0..2).map(|k| mu[k] + (0.5 * lv[k]).exp() * eps[k]).collect();
    let t = softmax(&affine(p, "ntm.topic_map", &theta));
    let beta: Mat = p["ntm.beta_logits"].iter().map(|r| softmax(r)).collect();
    let loglik: f64 = (0..2)
        .map(|n| x[n] * (0..2).map(|k| beta[k][n] * t[k]).sum::<f64>().ln())
        .sum();
    let kl: f64 = (0..2).map(|k| 0.5 * (lv[k].exp() + mu[k] * mu[k] - 1.0 - lv[k])).sum();

    // Language model.
    let emb = &p["lm.embeddings"];
    let mut h = vec![0.0; 2];
    let mut c = vec![0.0; 2];
    let mut nll = 0.0;
    for (m, &y) in inst.target.iter().enumerate() {
        let input: Vec<f64> = if m == 0 {
            p["lm.bos"].iter().map(|r| r[0]).collect()
        } else {
            emb[inst.target[m - 1]].clone()
        };
        let pre: Vec<Vec<f64>> = ["i", "f", "o", "c"]
            .iter()
            .map(|g| {
                let q = |s: &str| &p[&format!("lm.l0.{g}.{s}")];
                let w = factored(q("wa"), q("wb"), q("wc"), &t, &input);
                let u = factored(q("ua"), q("ub"), q("uc"), &t, &h);
                (0..2).map(|i| w[i] + u[i] + q("bias")[i][0]).collect()
            })
            .collect();
        for i in 0..2 {
            c[i] = sigmoid(pre[1][i]) * c[i] + sigmoid(pre[0][i]) * sigmoid(pre[3][i]);
            h[i] = sigmoid(pre[2][i]) * c[i].tanh();
        }
        nll -= softmax(&mv(&p["lm.output"], &h))[y].ln();
    }

    // Diversity of the topic-word rows.
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let mut angles = Vec::new();
    for i in 0..2 {
        for j in 0..2 {
            if offdiag && i == j {
                continue;
            }
            let cos = dot(&beta[i], &beta[j]) / (dot(&beta[i], &beta[i]) * dot(&beta[j], &beta[j])).sqrt();
            angles.push(if i == j { 0.0 } else { cos.abs().min(1.0).acos() });
        }
    }
    let n = angles.len() as f64;
    let mean = angles.iter().sum::<f64>() / n;
    let var = angles.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;

    loglik - kl - nll + lambda * (mean - var)
}

#[test]
fn objective_matches_scalar_oracle() {
    let inst = TrainingInstance {
        target: vec![1, 0, 2],
        context_bow: vec![2, 1],
    };
    for seed in 0..10 {
        let mut model = Model::new(spec(), seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 1000);
        let ids: Vec<_> = model.store.ids().collect();
        for id in ids {
            let (r, c) = model.store.get(id).shape();
            let v = (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect();
            model.store.set(id, Array::new(r, c, v).unwrap()).unwrap();
        }
        let eps = vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        let p = params(&model);
        for (lambda, averaging) in [
            (0.0, PairAveraging::AllPairs),
            (0.1, PairAveraging::AllPairs),
            (0.7, PairAveraging::OffDiagonal),
        ] {
            let noise = Noise {
                eps: Some(eps.clone()),
                masks: None,
            };
            let w = ObjectiveWeights {
                lambda,
                kl_weight: 1.0,
                averaging,
            };
            let mut tape = Tape::new(&model.store);
            let j = objective(&model, &mut tape, &[&inst], &[noise], &w).unwrap().j;
            let got = tape.scalar(j);
            let want = oracle(&p, &inst, &eps, lambda, averaging == PairAveraging::OffDiagonal);
            assert!(
                (got - want).abs() <= 1e-12 * want.abs().max(1.0),
                "seed {seed} lambda {lambda}: {got} vs {want}"
            );
        }
    }
}
