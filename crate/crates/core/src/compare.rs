//! Basic LSTM, naive MoE and TCNLM trained on the same data with the same
//! hidden size, epochs and optimizer settings.

use crate::config::Config;
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::model::{Model, ModelKind};
use crate::trainer::{train, EpochRecord, TrainLog};

/// Row order of the comparison table.
pub const COMPARED: [ModelKind; 3] = [ModelKind::Lstm, ModelKind::Moe, ModelKind::Tcnlm];

#[derive(Clone, Debug)]
pub struct ComparisonRow {
    pub kind: ModelKind,
    /// Best dev perplexity over the run.
    pub dev_ppl: f64,
    pub log: TrainLog,
    pub model: Model,
}

/// Trains one model of `cfg.model` with its kind replaced by `kind`.
pub fn train_kind(
    data: &Dataset,
    cfg: &Config,
    kind: ModelKind,
    on_epoch: impl FnMut(&EpochRecord),
) -> Result<(Model, TrainLog)> {
    let mut mc = cfg.model.clone();
    mc.kind = kind;
    let mut model = Model::new(mc.spec(&data.vocab), cfg.train.seed)?;
    let log = train(&mut model, &data.train, &data.dev, &cfg.train, on_epoch)?;
    Ok((model, log))
}

pub fn compare_moe(
    data: &Dataset,
    cfg: &Config,
    mut progress: impl FnMut(ModelKind, &EpochRecord),
) -> Result<Vec<ComparisonRow>> {
    if data.dev.is_empty() {
        return Err(Error::Invalid("compare-moe needs a non-empty dev split".into()));
    }
    COMPARED
        .iter()
        .map(|&kind| {
            let (model, log) = train_kind(data, cfg, kind, |r| progress(kind, r))?;
            let dev_ppl = log.best_dev_ppl.ok_or(Error::EmptyInstances)?;
            Ok(ComparisonRow {
                kind,
                dev_ppl,
                log,
                model,
            })
        })
        .collect()
}

pub fn table_label(kind: ModelKind) -> &'static str {
    match kind {
        ModelKind::Lstm => "basic-LSTM",
        ModelKind::Moe => "naive-MoE",
        ModelKind::Tcnlm => "TCNLM",
    }
}

/// Header plus one `label ppl` row per model.
pub fn format_table(rows: &[ComparisonRow]) -> String {
    let mut s = format!("{:<12}{}\n", "model", "dev_ppl");
    for r in rows {
        s.push_str(&format!("{:<12}{:.4}\n", table_label(r.kind), r.dev_ppl));
    }
    s
}
