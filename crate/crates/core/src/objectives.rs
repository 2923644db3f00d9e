//! Ranking and self-supervised losses with hand-derived gradients.
//!
//! All losses are sums (over triples, users or groups), not means.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Hypergraphs;
use crate::model::{backprop, dot, forward, EmbeddingTable, ForwardTrace, Hyperparams, OutputGrads};
use crate::sparse::DenseMatrix;

/// Norms below this are treated as zero by the cosine convention.
pub const COSINE_EPS: f64 = 1e-12;

/// One BPR training example.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainTriple {
    pub user: usize,
    pub pos_group: usize,
    pub neg_group: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub bpr: f64,
    pub cssl: f64,
    pub group_reg: f64,
    pub l2: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        [self.bpr, self.cssl, self.group_reg, self.l2, self.total]
            .iter()
            .all(|v| v.is_finite())
    }
}

impl std::fmt::Display for LossBreakdown {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "total={} bpr={} cssl={} group_reg={} l2={}",
            self.total, self.bpr, self.cssl, self.group_reg, self.l2
        )
    }
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Cosine similarity; 0 when either norm is below [`COSINE_EPS`].
pub fn cosine_sim(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (norm(a), norm(b));
    if na < COSINE_EPS || nb < COSINE_EPS {
        0.0
    } else {
        dot(a, b) / (na * nb)
    }
}

/// `log(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `Σ −log σ(y_pos − y_neg)` over `(y_pos, y_neg)` pairs.
pub fn bpr_loss(scores: &[(f64, f64)]) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::InvalidParam("BPR loss over an empty triple set".into()));
    }
    Ok(scores.iter().map(|&(p, n)| softplus(-(p - n))).sum())
}

/// Row-normalized copy plus the original norms (zero rows stay zero).
fn normalize_rows(x: &DenseMatrix) -> (DenseMatrix, Vec<f64>) {
    let mut out = x.clone();
    let mut norms = Vec::with_capacity(x.rows());
    for r in 0..x.rows() {
        let n = norm(x.row(r));
        norms.push(n);
        let row = out.row_mut(r);
        if n < COSINE_EPS {
            row.iter_mut().for_each(|v| *v = 0.0);
        } else {
            row.iter_mut().for_each(|v| *v /= n);
        }
    }
    (out, norms)
}

/// Gradient through `x ↦ x/‖x‖` for every row.
fn normalize_rows_backward(unit: &DenseMatrix, norms: &[f64], d_unit: &DenseMatrix) -> DenseMatrix {
    let mut out = DenseMatrix::zeros(unit.rows(), unit.cols());
    for r in 0..unit.rows() {
        if norms[r] < COSINE_EPS {
            continue;
        }
        let u = unit.row(r);
        let g = d_unit.row(r);
        let proj = dot(u, g);
        for ((o, gi), ui) in out.row_mut(r).iter_mut().zip(g).zip(u) {
            *o = (gi - proj * ui) / norms[r];
        }
    }
    out
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Logits `cos(a_r, b_c)/τ` for one row `r` of the normalized `a`.
fn logits_row(a_unit: &DenseMatrix, b_unit: &DenseMatrix, r: usize, tau: f64, out: &mut [f64]) {
    let ar = a_unit.row(r);
    for (c, o) in out.iter_mut().enumerate() {
        *o = dot(ar, b_unit.row(c)) / tau;
    }
}

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParam(format!("temperature {tau} must be > 0")))
    }
}

/// Cross-view InfoNCE: each user's item view against every user's group
/// view, the same user being the positive.
pub fn cssl_loss(user_item: &DenseMatrix, user_group: &DenseMatrix, tau_u: f64) -> Result<f64> {
    Ok(cssl_forward_backward(user_item, user_group, tau_u, false)?.0)
}

fn cssl_forward_backward(
    user_item: &DenseMatrix,
    user_group: &DenseMatrix,
    tau: f64,
    want_grad: bool,
) -> Result<(f64, Option<(DenseMatrix, DenseMatrix)>)> {
    if !user_item.same_shape(user_group) {
        return Err(Error::shape(
            "cssl_loss",
            format!("{}x{}", user_item.rows(), user_item.cols()),
            format!("{}x{}", user_group.rows(), user_group.cols()),
        ));
    }
    check_tau(tau)?;
    let n = user_item.rows();
    let (a, na) = normalize_rows(user_item);
    let (b, nb) = normalize_rows(user_group);
    let mut loss = 0.0;
    let mut da = DenseMatrix::zeros(n, a.cols());
    let mut db = DenseMatrix::zeros(n, b.cols());
    let mut logits = vec![0.0; n];
    for u in 0..n {
        logits_row(&a, &b, u, tau, &mut logits);
        let lse = log_sum_exp(&logits);
        loss += lse - logits[u];
        if want_grad {
            // dL/dlogit_v = softmax_v − [v == u]; dlogit/dâ_u = b̂_v/τ.
            for v in 0..n {
                let w = ((logits[v] - lse).exp() - if v == u { 1.0 } else { 0.0 }) / tau;
                if w == 0.0 {
                    continue;
                }
                for (o, x) in da.row_mut(u).iter_mut().zip(b.row(v)) {
                    *o += w * x;
                }
                for (o, x) in db.row_mut(v).iter_mut().zip(a.row(u)) {
                    *o += w * x;
                }
            }
        }
    }
    let grads = want_grad.then(|| {
        (
            normalize_rows_backward(&a, &na, &da),
            normalize_rows_backward(&b, &nb, &db),
        )
    });
    Ok((loss, grads))
}

/// Group uniformity term: `Σ_g −log(exp(1/τ) / Σ_k exp(cos(e_g, e_k)/τ))`.
pub fn group_reg_loss(groups: &DenseMatrix, tau_g: f64) -> Result<f64> {
    Ok(group_reg_forward_backward(groups, tau_g, false)?.0)
}

fn group_reg_forward_backward(
    groups: &DenseMatrix,
    tau: f64,
    want_grad: bool,
) -> Result<(f64, Option<DenseMatrix>)> {
    check_tau(tau)?;
    let n = groups.rows();
    let (e, norms) = normalize_rows(groups);
    let mut loss = 0.0;
    let mut de = DenseMatrix::zeros(n, e.cols());
    let mut logits = vec![0.0; n];
    for g in 0..n {
        logits_row(&e, &e, g, tau, &mut logits);
        // The k = g summand is the numerator exp(1/τ) itself.
        logits[g] = 1.0 / tau;
        let lse = log_sum_exp(&logits);
        loss += lse - 1.0 / tau;
        if want_grad {
            for k in (0..n).filter(|&k| k != g) {
                let w = (logits[k] - lse).exp() / tau;
                for (o, x) in de.row_mut(g).iter_mut().zip(e.row(k)) {
                    *o += w * x;
                }
                for (o, x) in de.row_mut(k).iter_mut().zip(e.row(g)) {
                    *o += w * x;
                }
            }
        }
    }
    let grad = want_grad.then(|| normalize_rows_backward(&e, &norms, &de));
    Ok((loss, grad))
}

/// Sum of squares over all three parameter blocks.
pub fn l2_penalty(emb: &EmbeddingTable) -> f64 {
    emb.blocks().iter().map(|b| b.frobenius_sq()).sum()
}

fn triple_scores(trace: &ForwardTrace, triples: &[TrainTriple], hp: &Hyperparams) -> Vec<(f64, f64)> {
    let users = trace.scoring_users(hp.score_view);
    triples
        .iter()
        .map(|t| {
            let eu = users.row(t.user);
            (
                dot(eu, trace.group.row(t.pos_group)),
                dot(eu, trace.group.row(t.neg_group)),
            )
        })
        .collect()
}

fn check_triples(trace: &ForwardTrace, triples: &[TrainTriple]) -> Result<()> {
    let (nu, ng) = (trace.user.rows(), trace.group.rows());
    match triples
        .iter()
        .find(|t| t.user >= nu || t.pos_group >= ng || t.neg_group >= ng)
    {
        Some(t) => Err(Error::InvalidParam(format!(
            "triple {t:?} out of range for {nu} users / {ng} groups"
        ))),
        None => Ok(()),
    }
}

/// `bpr + λ·(cssl + group_reg) + λ_Θ·l2`. Switched-off terms are reported
/// as zero. An empty triple set contributes zero BPR.
pub fn total_loss(
    trace: &ForwardTrace,
    triples: &[TrainTriple],
    emb: &EmbeddingTable,
    hp: &Hyperparams,
) -> Result<LossBreakdown> {
    check_triples(trace, triples)?;
    let bpr = if triples.is_empty() {
        0.0
    } else {
        bpr_loss(&triple_scores(trace, triples, hp))?
    };
    let cssl = if hp.use_cssl && hp.lambda_ssl != 0.0 {
        cssl_loss(&trace.user_item, &trace.user_group, hp.tau_u)?
    } else {
        0.0
    };
    let group_reg = if hp.use_group_reg && hp.lambda_ssl != 0.0 {
        group_reg_loss(&trace.group, hp.tau_g)?
    } else {
        0.0
    };
    let l2 = l2_penalty(emb);
    Ok(LossBreakdown {
        bpr,
        cssl,
        group_reg,
        l2,
        total: bpr + hp.lambda_ssl * (cssl + group_reg) + hp.lambda_reg * l2,
    })
}

/// Exact gradient of [`total_loss`] with respect to every parameter.
pub fn backward(
    trace: &ForwardTrace,
    hg: &Hypergraphs,
    triples: &[TrainTriple],
    emb: &EmbeddingTable,
    hp: &Hyperparams,
) -> Result<EmbeddingTable> {
    check_triples(trace, triples)?;
    let mut out = OutputGrads::zeros_for(trace);

    let users = trace.scoring_users(hp.score_view);
    let d_users = {
        let mut d = DenseMatrix::zeros(users.rows(), users.cols());
        for t in triples {
            let eu = users.row(t.user).to_vec();
            let (gp, gn) = (trace.group.row(t.pos_group).to_vec(), trace.group.row(t.neg_group).to_vec());
            let x = dot(&eu, &gp) - dot(&eu, &gn);
            // d softplus(−x)/dx = −σ(−x)
            let c = -sigmoid(-x);
            for ((o, p), n) in d.row_mut(t.user).iter_mut().zip(&gp).zip(&gn) {
                *o += c * (p - n);
            }
            for (o, u) in out.group.row_mut(t.pos_group).iter_mut().zip(&eu) {
                *o += c * u;
            }
            for (o, u) in out.group.row_mut(t.neg_group).iter_mut().zip(&eu) {
                *o -= c * u;
            }
        }
        d
    };
    match hp.score_view {
        crate::model::ScoreView::Combined => out.user = d_users,
        crate::model::ScoreView::Item => out.user_item = d_users,
    }

    if hp.use_cssl && hp.lambda_ssl != 0.0 {
        let (_, g) = cssl_forward_backward(&trace.user_item, &trace.user_group, hp.tau_u, true)?;
        let (da, db) = g.expect("gradient requested");
        out.user_item.axpy(hp.lambda_ssl, &da)?;
        out.user_group.axpy(hp.lambda_ssl, &db)?;
    }
    if hp.use_group_reg && hp.lambda_ssl != 0.0 {
        let (_, g) = group_reg_forward_backward(&trace.group, hp.tau_g, true)?;
        out.group.axpy(hp.lambda_ssl, &g.expect("gradient requested"))?;
    }

    let mut grads = backprop(trace, hg, &out)?;
    if hp.lambda_reg != 0.0 {
        for (g, p) in grads.blocks_mut().into_iter().zip(emb.blocks()) {
            g.axpy(2.0 * hp.lambda_reg, p)?;
        }
    }
    Ok(grads)
}

/// Forward pass, loss and gradient in one call.
pub fn loss_and_grad(
    emb: &EmbeddingTable,
    hg: &Hypergraphs,
    triples: &[TrainTriple],
    hp: &Hyperparams,
) -> Result<(LossBreakdown, EmbeddingTable)> {
    let trace = forward(emb, hg, hp)?;
    let loss = total_loss(&trace, triples, emb, hp)?;
    let grad = backward(&trace, hg, triples, emb, hp)?;
    Ok((loss, grad))
}

/// Comparison of analytic and central-difference gradients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiniteDiffReport {
    pub num_params: usize,
    pub step: f64,
    pub max_rel_error: f64,
    pub mean_rel_error: f64,
    pub max_abs_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// `|a − b| / max(|a|, |b|, 1e-8)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Central differences over every parameter, compared with [`backward`].
pub fn finite_diff_check(
    emb: &EmbeddingTable,
    hg: &Hypergraphs,
    triples: &[TrainTriple],
    hp: &Hyperparams,
    h: f64,
    tolerance: f64,
) -> Result<FiniteDiffReport> {
    let (_, analytic) = loss_and_grad(emb, hg, triples, hp)?;
    let eval = |p: &EmbeddingTable| -> Result<f64> {
        let trace = forward(p, hg, hp)?;
        Ok(total_loss(&trace, triples, p, hp)?.total)
    };
    let n = emb.num_params();
    let mut probe = emb.clone();
    let (mut max_rel, mut sum_rel, mut max_abs) = (0.0f64, 0.0, 0.0f64);
    for idx in 0..n {
        let orig = probe.param(idx);
        *probe.param_mut(idx) = orig + h;
        let up = eval(&probe)?;
        *probe.param_mut(idx) = orig - h;
        let down = eval(&probe)?;
        *probe.param_mut(idx) = orig;
        let numeric = (up - down) / (2.0 * h);
        let a = analytic.param(idx);
        let rel = relative_error(a, numeric);
        max_rel = max_rel.max(rel);
        max_abs = max_abs.max((a - numeric).abs());
        sum_rel += rel;
    }
    Ok(FiniteDiffReport {
        num_params: n,
        step: h,
        max_rel_error: max_rel,
        mean_rel_error: if n == 0 { 0.0 } else { sum_rel / n as f64 },
        max_abs_error: max_abs,
        tolerance,
        passed: max_rel < tolerance,
    })
}
