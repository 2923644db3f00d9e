//! Negative sampling, Adam and the full-batch training loop.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::evaluate;
use crate::graph::{Hypergraphs, InteractionGraph, SplitGraph};
use crate::model::{forward, EmbeddingTable, Hyperparams, BLOCK_NAMES};
use crate::objectives::{backward, total_loss, LossBreakdown, TrainTriple};

/// Above this many users the O(|U|²) contrastive term needs an explicit opt-in.
pub const MAX_USERS_WITHOUT_OVERRIDE: usize = 50_000;

/// One triple per training edge, negatives uniform over the user's
/// non-positive groups. The stream depends only on `(seed, epoch)`.
pub fn sample_negatives(train: &InteractionGraph, seed: u64, epoch: u64) -> Result<Vec<TrainTriple>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch);
    let groups = train.groups_by_user();
    let mut out = Vec::with_capacity(train.user_group_edges().len());
    for (u, pos) in groups.iter().enumerate() {
        if pos.is_empty() {
            continue;
        }
        if pos.len() >= train.num_groups {
            return Err(Error::NoNegative(u));
        }
        for &g in pos {
            let neg = loop {
                let cand = rng.gen_range(0..train.num_groups);
                if pos.binary_search(&cand).is_err() {
                    break cand;
                }
            };
            out.push(TrainTriple {
                user: u,
                pos_group: g,
                neg_group: neg,
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: EmbeddingTable,
    pub v: EmbeddingTable,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(like: &EmbeddingTable) -> Self {
        Self {
            m: like.zeros_like(),
            v: like.zeros_like(),
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam update on all three blocks.
pub fn adam_step(
    emb: &mut EmbeddingTable,
    grads: &EmbeddingTable,
    state: &mut AdamState,
    lr: f64,
) -> Result<()> {
    if !emb.same_shape(grads) || !emb.same_shape(&state.m) {
        return Err(Error::shape(
            "adam_step",
            format!("{} params", emb.num_params()),
            format!("{} params", grads.num_params()),
        ));
    }
    for (b, block) in grads.blocks().iter().enumerate() {
        if let Some(index) = block.values().iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteGradient {
                block: BLOCK_NAMES[b],
                index,
            });
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let blocks = emb
        .blocks_mut()
        .into_iter()
        .zip(grads.blocks())
        .zip(state.m.blocks_mut())
        .zip(state.v.blocks_mut());
    for (((p, g), m), v) in blocks {
        let it = p
            .values_mut()
            .iter_mut()
            .zip(g.values())
            .zip(m.values_mut().iter_mut().zip(v.values_mut().iter_mut()));
        for ((p, &g), (m, v)) in it {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Loop-level settings that are not model hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub eval_every: usize,
    pub max_epochs: usize,
    /// Cutoff of the validation recall used for early stopping.
    pub early_stop_k: usize,
    pub allow_large: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            eval_every: 5,
            max_epochs: 300,
            early_stop_k: 20,
            allow_large: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    EarlyStopping,
    MaxEpochs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: LossBreakdown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub epoch: usize,
    pub validation_recall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub evaluations: Vec<EvalRecord>,
    /// Epoch whose parameters were returned.
    pub best_epoch: usize,
    pub best_validation_recall: Option<f64>,
    pub stop_reason: StopReason,
    pub optimizer_steps: u64,
}

impl TrainHistory {
    /// One row per epoch; the validation column is empty between evaluations.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,total,bpr,cssl,group_reg,l2,validation_recall\n");
        for r in &self.epochs {
            let val = self
                .evaluations
                .iter()
                .find(|e| e.epoch == r.epoch)
                .map(|e| e.validation_recall.to_string())
                .unwrap_or_default();
            s.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.epoch, r.loss.total, r.loss.bpr, r.loss.cssl, r.loss.group_reg, r.loss.l2, val
            ));
        }
        s
    }
}

fn validation_recall(
    emb: &EmbeddingTable,
    hg: &Hypergraphs,
    hp: &Hyperparams,
    train_pos: &[Vec<usize>],
    targets: &[Vec<usize>],
    k: usize,
) -> Result<f64> {
    let trace = forward(emb, hg, hp)?;
    let report = evaluate(
        trace.scoring_users(hp.score_view),
        &trace.group,
        train_pos,
        targets,
        &[k],
    )?;
    Ok(report.metrics[0].recall)
}

/// Full-batch training: one Adam step per epoch over all triples.
///
/// Validation Recall@`early_stop_k` is checked every `eval_every` epochs
/// and after the last epoch; training stops after `hp.patience`
/// evaluations without improvement and the best parameters are returned.
/// Without any validation positives the final parameters are returned.
pub fn train(
    split: &SplitGraph,
    hp: &Hyperparams,
    cfg: &TrainConfig,
) -> Result<(EmbeddingTable, TrainHistory)> {
    hp.validate()?;
    if cfg.eval_every == 0 || cfg.early_stop_k == 0 {
        return Err(Error::InvalidParam("eval_every and early_stop_k must be >= 1".into()));
    }
    let data = &split.train;
    if data.num_users > MAX_USERS_WITHOUT_OVERRIDE && !cfg.allow_large {
        return Err(Error::InvalidParam(format!(
            "{} users exceeds the {MAX_USERS_WITHOUT_OVERRIDE}-user limit of the full contrastive loss; set allow_large to override",
            data.num_users
        )));
    }
    let hg = Hypergraphs::build(data);
    let train_pos = data.groups_by_user();
    let has_validation = split.validation.iter().any(|v| !v.is_empty());

    let mut emb = EmbeddingTable::init_normal(data.num_users, data.num_groups, hp.d, hp.seed);
    let mut adam = AdamState::new(&emb);
    let mut history = TrainHistory {
        epochs: Vec::new(),
        evaluations: Vec::new(),
        best_epoch: 0,
        best_validation_recall: None,
        stop_reason: StopReason::MaxEpochs,
        optimizer_steps: 0,
    };
    let mut best = emb.clone();
    let mut stale = 0usize;

    for epoch in 1..=cfg.max_epochs {
        let triples = sample_negatives(data, hp.seed, epoch as u64)?;
        let trace = forward(&emb, &hg, hp)?;
        let loss = total_loss(&trace, &triples, &emb, hp)?;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                epoch,
                breakdown: loss.to_string(),
            });
        }
        let grads = backward(&trace, &hg, &triples, &emb, hp)?;
        adam_step(&mut emb, &grads, &mut adam, hp.lr)?;
        history.epochs.push(EpochRecord { epoch, loss });
        history.optimizer_steps = adam.step;
        log::debug!("epoch {epoch}: {loss}");

        if !has_validation {
            best = emb.clone();
            history.best_epoch = epoch;
            continue;
        }
        if epoch % cfg.eval_every != 0 && epoch != cfg.max_epochs {
            continue;
        }
        let recall = validation_recall(&emb, &hg, hp, &train_pos, &split.validation, cfg.early_stop_k)?;
        history.evaluations.push(EvalRecord {
            epoch,
            validation_recall: recall,
        });
        log::info!("epoch {epoch}: loss {:.6}, validation recall@{} {recall:.4}", loss.total, cfg.early_stop_k);
        if history.best_validation_recall.is_none_or(|b| recall > b) {
            history.best_validation_recall = Some(recall);
            history.best_epoch = epoch;
            best = emb.clone();
            stale = 0;
        } else {
            stale += 1;
            if stale >= hp.patience {
                history.stop_reason = StopReason::EarlyStopping;
                break;
            }
        }
    }
    Ok((best, history))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forced_negative() {
        let g = InteractionGraph::new(1, 2, 1, vec![(0, 0)], vec![(0, 0)]).unwrap();
        for epoch in 0..20 {
            let t = sample_negatives(&g, 3, epoch).unwrap();
            assert_eq!(t, vec![TrainTriple { user: 0, pos_group: 0, neg_group: 1 }]);
        }
    }

    #[test]
    fn no_negative_available() {
        let g = InteractionGraph::new(1, 2, 1, vec![(0, 0), (0, 1)], vec![(0, 0)]).unwrap();
        assert!(matches!(sample_negatives(&g, 0, 0), Err(Error::NoNegative(0))));
    }

    #[test]
    fn zero_gradient_keeps_params() {
        let mut emb = EmbeddingTable::init_normal(2, 2, 2, 1);
        let before = emb.clone();
        let mut st = AdamState::new(&emb);
        let zero = emb.zeros_like();
        adam_step(&mut emb, &zero, &mut st, 0.1).unwrap();
        assert_eq!(emb, before);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn first_step_is_signed_lr() {
        let mut emb = EmbeddingTable::zeros(1, 1, 2);
        let mut g = emb.zeros_like();
        g.group.set(0, 0, 3.0);
        g.group.set(0, 1, -0.02);
        let mut st = AdamState::new(&emb);
        adam_step(&mut emb, &g, &mut st, 0.01).unwrap();
        assert!((emb.group.get(0, 0) + 0.01).abs() < 1e-9);
        assert!((emb.group.get(0, 1) - 0.01).abs() < 1e-8);
    }

    #[test]
    fn non_finite_gradient_named() {
        let mut emb = EmbeddingTable::zeros(1, 1, 2);
        let mut g = emb.zeros_like();
        g.group_view_user.set(0, 1, f64::NAN);
        let mut st = AdamState::new(&emb);
        let err = adam_step(&mut emb, &g, &mut st, 0.01).unwrap_err();
        assert!(matches!(
            err,
            Error::NonFiniteGradient { block: "group_view_user", index: 1 }
        ));
        assert_eq!(st.step, 0);
    }
}
