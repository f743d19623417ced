//! Training dynamics on a small synthetic corpus.

use tcnlm::compare::train_kind;
use tcnlm::config::{Config, Preset};
use tcnlm::dataset::prepare;
use tcnlm::model::ModelKind;
use tcnlm::synthetic::{generate, SyntheticConfig};

#[test]
fn smoothed_objective_rises_over_every_ten_epoch_window() {
    let corpus = generate(&SyntheticConfig {
        paragraphs: 120,
        seed: 5,
        ..Default::default()
    })
    .unwrap();
    let mut cfg = Config::preset(Preset::Toy);
    // A fixed KL weight keeps the objective itself unchanged across epochs.
    cfg.train.kl_warmup = 0;
    cfg.train.epochs = 25;
    cfg.train.seed = 5;
    cfg.model.hidden = 16;
    let data = prepare(&corpus.text, &cfg.prep).unwrap();
    let mut js = Vec::new();
    train_kind(&data, &cfg, ModelKind::Tcnlm, |r| js.push(r.j)).unwrap();
    let mut ema = Vec::with_capacity(js.len());
    for (i, &j) in js.iter().enumerate() {
        ema.push(if i == 0 { j } else { 0.7 * ema[i - 1] + 0.3 * j });
    }
    for i in 10..ema.len() {
        assert!(ema[i] >= ema[i - 10], "epoch {}: {} < {}", i + 1, ema[i], ema[i - 10]);
    }
    assert!(ema[ema.len() - 1] > ema[0]);
}
