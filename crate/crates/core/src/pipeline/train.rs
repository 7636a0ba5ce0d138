use serde::{Deserialize, Serialize};

use crate::augment::{CartesianCandidates, PairCandidates};
use crate::domain::{count_sample_frequencies, Sample};
use crate::eval::{closed_world_eval, EvalError, EvalReport};
use crate::io::Dataset;
use crate::numerics::{Graph, ParamStore, SeededRng, Tensor2};

use super::losses::{batch_losses, CompCandidates, LossContext, LossParts};
use super::model::DefaModel;
use super::optimizer::{Adam, AdamConfig};
use super::PipelineError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub adam: AdamConfig,
    pub comp_candidates: CompCandidates,
    pub pair_candidates: PairCandidates,
    pub cartesian_candidates: CartesianCandidates,
    /// Evaluate on the validation split every epoch and keep the best epoch.
    pub validate: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 128,
            seed: 0,
            adam: AdamConfig::default(),
            comp_candidates: CompCandidates::Full,
            pair_candidates: PairCandidates::Seen,
            cartesian_candidates: CartesianCandidates::Batch,
            validate: true,
        }
    }
}

/// Validation metrics of one epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValMetrics {
    pub auc: f64,
    pub hm: f64,
    pub seen: f64,
    pub unseen: f64,
}

impl From<&EvalReport> for ValMetrics {
    fn from(r: &EvalReport) -> Self {
        Self {
            auc: r.auc,
            hm: r.hm,
            seen: r.seen,
            unseen: r.unseen,
        }
    }
}

/// Sample-weighted epoch means of every loss term.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss_total: f64,
    pub parts: LossParts,
    pub val: Option<ValMetrics>,
}

impl EpochLog {
    pub const CSV_HEADER: &'static str =
        "epoch,loss_total,l_cla,l_dis,l_rec,l_pair,l_cts,val_auc,val_hm,val_seen,val_unseen";

    pub fn csv_row(&self) -> String {
        let p = &self.parts;
        let v = |f: fn(&ValMetrics) -> f64| self.val.as_ref().map_or(String::new(), |m| f(m).to_string());
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            self.epoch,
            self.loss_total,
            p.l_cla,
            p.l_dis,
            p.l_rec,
            p.l_pair,
            p.l_cts,
            v(|m| m.auc),
            v(|m| m.hm),
            v(|m| m.seen),
            v(|m| m.unseen)
        )
    }
}

pub fn logs_to_csv(logs: &[EpochLog]) -> String {
    let mut out = String::from(EpochLog::CSV_HEADER);
    out.push('\n');
    for l in logs {
        out.push_str(&l.csv_row());
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub logs: Vec<EpochLog>,
    /// Epoch whose parameters the model holds after training.
    pub best_epoch: usize,
    pub best_val_auc: Option<f64>,
}

/// Mini-batches of sample indices for one epoch: a fresh permutation, split in
/// order, with the final short batch kept.
pub fn epoch_batches(n: usize, batch_size: usize, rng: &mut SeededRng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut order);
    order.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect()
}

fn batch_tensor(samples: &[Sample], idx: &[usize]) -> Result<Tensor2, PipelineError> {
    let rows: Vec<Vec<f64>> = idx.iter().map(|&i| samples[i].feature.clone()).collect();
    Ok(Tensor2::from_rows(&rows)?)
}

/// Trains `model` on the training split. With validation enabled the model
/// ends holding the parameters of the epoch with the best closed-world
/// validation AUC (earliest on ties); otherwise those of the last epoch.
pub fn train(model: &mut DefaModel, data: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome, PipelineError> {
    if data.train.is_empty() {
        return Err(PipelineError::EmptyDataset("training split is empty"));
    }
    if cfg.epochs == 0 || cfg.batch_size == 0 {
        return Err(PipelineError::Config("epochs and batch size must be positive".into()));
    }
    if data.dim != model.config.d_backbone {
        return Err(PipelineError::Config(format!(
            "embeddings have dim {}, model expects {}",
            data.dim, model.config.d_backbone
        )));
    }
    let freq = count_sample_frequencies(&data.train, &data.train_space)?;
    let ctx = LossContext::new(
        &data.train_space,
        &freq,
        &model.weights,
        cfg.comp_candidates,
        cfg.pair_candidates,
        cfg.cartesian_candidates,
    )?;
    let mut opt = Adam::new(&model.store, cfg.adam);
    let mut rng = SeededRng::derive(cfg.seed, 11);
    let mut logs = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, ParamStore)> = None;
    let lambdas = [
        1.0,
        model.weights.lambda2,
        model.weights.lambda3,
        model.weights.lambda4,
        model.weights.lambda5,
    ];

    for epoch in 1..=cfg.epochs {
        let mut sums = [0.0f64; 5];
        let mut total = 0.0;
        for (step, idx) in epoch_batches(data.train.len(), cfg.batch_size, &mut rng)
            .into_iter()
            .enumerate()
        {
            let feats = batch_tensor(&data.train, &idx)?;
            let labels: Vec<_> = idx.iter().map(|&i| data.train[i].pair).collect();
            let mut g = Graph::new();
            let losses = batch_losses(&mut g, model, &ctx, feats, &labels)?;
            let parts = LossParts::read(&g, &losses);
            for (k, v) in parts.values().into_iter().enumerate() {
                if lambdas[k] != 0.0 && !v.is_finite() {
                    return Err(PipelineError::NonFinite {
                        component: LossParts::NAMES[k],
                        epoch,
                        step,
                    });
                }
            }
            model.store.zero_grads();
            g.backward(losses.total, &mut model.store);
            if !model.store.grads_finite() {
                return Err(PipelineError::NonFinite {
                    component: "gradient",
                    epoch,
                    step,
                });
            }
            opt.step(&mut model.store);
            let n = idx.len() as f64;
            for (s, v) in sums.iter_mut().zip(parts.values()) {
                *s += n * v;
            }
            total += n * g.value(losses.total).item();
        }
        let n = data.train.len() as f64;
        let parts = LossParts {
            l_cla: sums[0] / n,
            l_dis: sums[1] / n,
            l_rec: sums[2] / n,
            l_pair: sums[3] / n,
            l_cts: sums[4] / n,
        };
        let val = if cfg.validate {
            match closed_world_eval(model, &data.val, &data.val_space) {
                Ok(r) => Some(ValMetrics::from(&r)),
                Err(EvalError::NoSeenImages | EvalError::NoUnseenImages) => None,
                Err(e) => return Err(e.into()),
            }
        } else {
            None
        };
        if let Some(v) = val {
            if best.as_ref().is_none_or(|(auc, _, _)| v.auc > *auc) {
                best = Some((v.auc, epoch, model.store.clone()));
            }
        }
        logs.push(EpochLog {
            epoch,
            loss_total: total / n,
            parts,
            val,
        });
    }

    let (best_epoch, best_val_auc) = match best {
        Some((auc, epoch, store)) => {
            model.store = store;
            (epoch, Some(auc))
        }
        None => (cfg.epochs, None),
    };
    model.store.zero_grads();
    Ok(TrainOutcome {
        logs,
        best_epoch,
        best_val_auc,
    })
}
