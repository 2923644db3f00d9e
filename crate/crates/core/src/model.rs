//! Transitional hypergraph convolution and the three-hypergraph forward
//! pass.
//!
//! Every layer is linear in the embeddings: a THC layer computes
//! `D⁻¹H·(B⁻¹Hᵀ·X + γ·C)`. Gradients are therefore obtained by running the
//! adjoint operators backwards ([`backprop`]), with no autodiff machinery.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Hypergraphs, IncidenceMatrix};
use crate::sparse::{
    dense_reference_product, hyperedge_gather, hyperedge_gather_adjoint, incidence_to_dense,
    node_scatter, node_scatter_adjoint, DenseMatrix, Normalize,
};

/// Standard deviation of the normal initializer.
pub const INIT_STD: f64 = 0.1;

/// All trainable parameters: two embeddings per user and one per group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingTable {
    pub d: usize,
    /// `E_u^{i,(0)}`, |U| x d.
    pub item_view_user: DenseMatrix,
    /// `E_u^{g,(0)}`, |U| x d.
    pub group_view_user: DenseMatrix,
    /// `E_g^{(0)}`, |G| x d.
    pub group: DenseMatrix,
}

/// Names of the three parameter blocks, in storage order.
pub const BLOCK_NAMES: [&str; 3] = ["item_view_user", "group_view_user", "group"];

impl EmbeddingTable {
    pub fn zeros(num_users: usize, num_groups: usize, d: usize) -> Self {
        Self {
            d,
            item_view_user: DenseMatrix::zeros(num_users, d),
            group_view_user: DenseMatrix::zeros(num_users, d),
            group: DenseMatrix::zeros(num_groups, d),
        }
    }

    /// Entries drawn i.i.d. from N(0, 0.1²) with a seeded ChaCha8 stream,
    /// filling the blocks in storage order.
    pub fn init_normal(num_users: usize, num_groups: usize, d: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        let mut t = Self::zeros(num_users, num_groups, d);
        for block in t.blocks_mut() {
            block
                .values_mut()
                .iter_mut()
                .for_each(|v| *v = normal.sample(&mut rng));
        }
        t
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.num_users(), self.num_groups(), self.d)
    }

    pub fn num_users(&self) -> usize {
        self.item_view_user.rows()
    }

    pub fn num_groups(&self) -> usize {
        self.group.rows()
    }

    /// `d·(2|U| + |G|)`.
    pub fn num_params(&self) -> usize {
        self.blocks().iter().map(|b| b.values().len()).sum()
    }

    pub fn blocks(&self) -> [&DenseMatrix; 3] {
        [&self.item_view_user, &self.group_view_user, &self.group]
    }

    pub fn blocks_mut(&mut self) -> [&mut DenseMatrix; 3] {
        [
            &mut self.item_view_user,
            &mut self.group_view_user,
            &mut self.group,
        ]
    }

    /// Flat view of parameter `idx` across the three blocks.
    pub fn param(&self, idx: usize) -> f64 {
        let (b, i) = self.locate(idx);
        self.blocks()[b].values()[i]
    }

    pub fn param_mut(&mut self, idx: usize) -> &mut f64 {
        let (b, i) = self.locate(idx);
        &mut self.blocks_mut()[b].values_mut()[i]
    }

    fn locate(&self, mut idx: usize) -> (usize, usize) {
        for (b, block) in self.blocks().iter().enumerate() {
            let n = block.values().len();
            if idx < n {
                return (b, idx);
            }
            idx -= n;
        }
        panic!("parameter index out of range");
    }

    pub fn is_finite(&self) -> bool {
        self.blocks().iter().all(|b| b.is_finite())
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.d == other.d
            && self
                .blocks()
                .iter()
                .zip(other.blocks())
                .all(|(a, b)| a.same_shape(b))
    }
}

/// Which construction feeds the item-view user embeddings.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Items as hyperedges over users.
    #[default]
    Default,
    /// One symmetric-normalized bipartite aggregation of item means to users.
    #[serde(alias = "L")]
    GcnItem,
    /// A single user hypergraph with item and group hyperedges together.
    #[serde(alias = "J1")]
    JointSimultaneous,
    /// Item hyperedges first, then group hyperedges, in every layer.
    #[serde(alias = "J2")]
    JointSequential,
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "default" => Ok(Variant::Default),
            "gcn_item" | "L" => Ok(Variant::GcnItem),
            "joint_simultaneous" | "J1" => Ok(Variant::JointSimultaneous),
            "joint_sequential" | "J2" => Ok(Variant::JointSequential),
            other => Err(Error::InvalidParam(format!("unknown variant mode {other:?}"))),
        }
    }
}

/// User embedding used for scoring.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreView {
    /// `β·E_u^i + (1−β)·E_u^g`.
    #[default]
    Combined,
    /// `E_u^i` alone.
    Item,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    /// Transition intensity.
    pub gamma: f64,
    /// Weight of the item view in the combined user embedding.
    pub beta: f64,
    pub tau_u: f64,
    pub tau_g: f64,
    /// Weight of both self-supervised terms.
    pub lambda_ssl: f64,
    /// L2 weight on all parameters.
    pub lambda_reg: f64,
    pub lr: f64,
    pub d: usize,
    pub layers: usize,
    pub seed: u64,
    pub patience: usize,
    pub k_list: Vec<usize>,
    #[serde(default = "default_true")]
    pub use_cssl: bool,
    #[serde(default = "default_true")]
    pub use_group_reg: bool,
    #[serde(default)]
    pub variant: Variant,
    #[serde(default)]
    pub score_view: ScoreView,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            gamma: 1.0,
            beta: 0.5,
            tau_u: 0.2,
            tau_g: 0.2,
            lambda_ssl: 0.1,
            lambda_reg: 1e-5,
            lr: 0.05,
            d: 64,
            layers: 1,
            seed: 0,
            patience: 10,
            k_list: vec![10, 20],
            use_cssl: true,
            use_group_reg: true,
            variant: Variant::Default,
            score_view: ScoreView::Combined,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParam(m));
        let finite = [
            self.gamma,
            self.beta,
            self.tau_u,
            self.tau_g,
            self.lambda_ssl,
            self.lambda_reg,
            self.lr,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite {
            return bad("hyperparameters must be finite".into());
        }
        if self.gamma < 0.0 {
            return bad(format!("gamma = {} must be >= 0", self.gamma));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return bad(format!("beta = {} must lie in [0, 1]", self.beta));
        }
        if self.tau_u <= 0.0 || self.tau_g <= 0.0 {
            return bad("temperatures must be > 0".into());
        }
        if self.lambda_ssl < 0.0 || self.lambda_reg < 0.0 {
            return bad("loss weights must be >= 0".into());
        }
        if self.lr < 0.0 {
            return bad(format!("lr = {} must be >= 0", self.lr));
        }
        if self.d == 0 || self.layers == 0 {
            return bad("d and layers must be >= 1".into());
        }
        if self.k_list.is_empty()
            || self.k_list.contains(&0)
            || !self.k_list.windows(2).all(|w| w[0] < w[1])
        {
            return bad(format!(
                "k_list {:?} must be non-empty, positive and strictly increasing",
                self.k_list
            ));
        }
        Ok(())
    }

    /// Weight actually applied to the contrastive user term.
    pub fn cssl_weight(&self) -> f64 {
        if self.use_cssl {
            self.lambda_ssl
        } else {
            0.0
        }
    }

    /// Weight actually applied to the group regularizer.
    pub fn group_reg_weight(&self) -> f64 {
        if self.use_group_reg {
            self.lambda_ssl
        } else {
            0.0
        }
    }
}

/// Intermediates of one convolution stage.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerTrace {
    /// Hyperedge means `t`.
    pub gathered: DenseMatrix,
    /// Fused hyperedge embeddings `q = t + γ·c`.
    pub fused: DenseMatrix,
    /// Node outputs.
    pub output: DenseMatrix,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PipelineTrace {
    pub stages: Vec<LayerTrace>,
}

impl PipelineTrace {
    fn output(&self) -> Option<&DenseMatrix> {
        self.stages.last().map(|s| &s.output)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub variant: Variant,
    pub layers: usize,
    pub gamma: f64,
    pub beta: f64,
    pub item_view: PipelineTrace,
    pub group_view: PipelineTrace,
    pub group_pipeline: PipelineTrace,
    /// `E_u^i`.
    pub user_item: DenseMatrix,
    /// `E_u^g`.
    pub user_group: DenseMatrix,
    /// `E_u = β·E_u^i + (1−β)·E_u^g`.
    pub user: DenseMatrix,
    /// `E_g`.
    pub group: DenseMatrix,
}

impl ForwardTrace {
    /// User rows used for scoring under `view`.
    pub fn scoring_users(&self, view: ScoreView) -> &DenseMatrix {
        match view {
            ScoreView::Combined => &self.user,
            ScoreView::Item => &self.user_item,
        }
    }
}

/// One THC layer: `D⁻¹H·(B⁻¹Hᵀ·X + γ·C)`. A missing intrinsic is zero.
pub fn thc_layer(
    node_emb: &DenseMatrix,
    inc: &IncidenceMatrix,
    gamma: f64,
    intrinsic: Option<&DenseMatrix>,
) -> Result<(DenseMatrix, LayerTrace)> {
    let gathered = hyperedge_gather(inc, node_emb)?;
    let mut fused = gathered.clone();
    if let Some(c) = intrinsic {
        if c.rows() != inc.num_hyperedges() || c.cols() != node_emb.cols() {
            return Err(Error::shape(
                "thc_layer intrinsic",
                format!("{}x{}", inc.num_hyperedges(), node_emb.cols()),
                format!("{}x{}", c.rows(), c.cols()),
            ));
        }
        fused.axpy(gamma, c)?;
    }
    let output = node_scatter(inc, &fused)?;
    Ok((
        output.clone(),
        LayerTrace {
            gathered,
            fused,
            output,
        },
    ))
}

fn hyperconv_stack(
    x: &DenseMatrix,
    inc: &IncidenceMatrix,
    layers: usize,
    trace: &mut PipelineTrace,
) -> Result<DenseMatrix> {
    let mut cur = x.clone();
    for _ in 0..layers {
        let (out, t) = thc_layer(&cur, inc, 0.0, None)?;
        trace.stages.push(t);
        cur = out;
    }
    Ok(cur)
}

fn hyperconv_stack_adjoint(
    grad: &DenseMatrix,
    inc: &IncidenceMatrix,
    layers: usize,
) -> Result<DenseMatrix> {
    let mut g = grad.clone();
    for _ in 0..layers {
        g = hyperedge_gather_adjoint(inc, &node_scatter_adjoint(inc, &g)?)?;
    }
    Ok(g)
}

/// `L` parameter-free THC layers (γ = 0) on each user hypergraph.
pub fn propagate_user_views(
    emb: &EmbeddingTable,
    user_by_item: &IncidenceMatrix,
    user_by_group: &IncidenceMatrix,
    layers: usize,
) -> Result<(DenseMatrix, DenseMatrix, PipelineTrace, PipelineTrace)> {
    if layers == 0 {
        return Err(Error::InvalidParam("layers must be >= 1".into()));
    }
    let mut ti = PipelineTrace::default();
    let mut tg = PipelineTrace::default();
    let ei = hyperconv_stack(&emb.item_view_user, user_by_item, layers, &mut ti)?;
    let eg = hyperconv_stack(&emb.group_view_user, user_by_group, layers, &mut tg)?;
    Ok((ei, eg, ti, tg))
}

/// `L` THC layers on the group hypergraph, injecting `γ·E_u^i` as the
/// intrinsic embedding of every user hyperedge at every layer.
pub fn propagate_groups(
    emb: &EmbeddingTable,
    group_hg: &IncidenceMatrix,
    user_item: &DenseMatrix,
    gamma: f64,
    layers: usize,
) -> Result<(DenseMatrix, PipelineTrace)> {
    if user_item.rows() != group_hg.num_hyperedges() {
        return Err(Error::shape(
            "propagate_groups",
            group_hg.num_hyperedges(),
            user_item.rows(),
        ));
    }
    let mut trace = PipelineTrace::default();
    let mut cur = emb.group.clone();
    for _ in 0..layers {
        let (out, t) = thc_layer(&cur, group_hg, gamma, Some(user_item))?;
        trace.stages.push(t);
        cur = out;
    }
    Ok((cur, trace))
}

/// `β·E_u^i + (1−β)·E_u^g`.
pub fn combine_user_views(
    user_item: &DenseMatrix,
    user_group: &DenseMatrix,
    beta: f64,
) -> Result<DenseMatrix> {
    DenseMatrix::lin_comb(beta, user_item, 1.0 - beta, user_group)
}

/// One LightGCN-style layer from item rows to users:
/// `out[u] = Σ_{i∈N(u)} x[i] / sqrt(|N(u)|·|N(i)|)`.
fn symmetric_item_to_user(inc: &IncidenceMatrix, items: &DenseMatrix) -> DenseMatrix {
    let mut out = DenseMatrix::zeros(inc.num_nodes(), items.cols());
    for u in 0..inc.num_nodes() {
        let du = inc.node_degree(u) as f64;
        let dst = out.row_mut(u);
        for &i in inc.hyperedges_of(u) {
            let w = 1.0 / (du * inc.hyperedge_degree(i) as f64).sqrt();
            for (o, x) in dst.iter_mut().zip(items.row(i)) {
                *o += w * x;
            }
        }
    }
    out
}

fn symmetric_item_to_user_adjoint(inc: &IncidenceMatrix, grad: &DenseMatrix) -> DenseMatrix {
    let mut out = DenseMatrix::zeros(inc.num_hyperedges(), grad.cols());
    for i in 0..inc.num_hyperedges() {
        let di = inc.hyperedge_degree(i) as f64;
        let dst = out.row_mut(i);
        for &u in inc.nodes_of(i) {
            let w = 1.0 / (di * inc.node_degree(u) as f64).sqrt();
            for (o, g) in dst.iter_mut().zip(grad.row(u)) {
                *o += w * g;
            }
        }
    }
    out
}

fn item_view_forward(
    x: &DenseMatrix,
    hg: &Hypergraphs,
    variant: Variant,
    layers: usize,
    trace: &mut PipelineTrace,
) -> Result<DenseMatrix> {
    match variant {
        Variant::Default => hyperconv_stack(x, &hg.user_by_item, layers, trace),
        Variant::JointSimultaneous => hyperconv_stack(x, hg.joint_user(), layers, trace),
        Variant::JointSequential => {
            let mut cur = x.clone();
            for _ in 0..layers {
                cur = hyperconv_stack(&cur, &hg.user_by_item, 1, trace)?;
                if hg.user_by_group.num_incidences() > 0 {
                    cur = hyperconv_stack(&cur, &hg.user_by_group, 1, trace)?;
                }
            }
            Ok(cur)
        }
        Variant::GcnItem => {
            let gathered = hyperedge_gather(&hg.user_by_item, x)?;
            let output = symmetric_item_to_user(&hg.user_by_item, &gathered);
            trace.stages.push(LayerTrace {
                fused: gathered.clone(),
                gathered,
                output: output.clone(),
            });
            Ok(output)
        }
    }
}

fn item_view_adjoint(
    grad: &DenseMatrix,
    hg: &Hypergraphs,
    variant: Variant,
    layers: usize,
) -> Result<DenseMatrix> {
    match variant {
        Variant::Default => hyperconv_stack_adjoint(grad, &hg.user_by_item, layers),
        Variant::JointSimultaneous => hyperconv_stack_adjoint(grad, hg.joint_user(), layers),
        Variant::JointSequential => {
            let mut g = grad.clone();
            for _ in 0..layers {
                if hg.user_by_group.num_incidences() > 0 {
                    g = hyperconv_stack_adjoint(&g, &hg.user_by_group, 1)?;
                }
                g = hyperconv_stack_adjoint(&g, &hg.user_by_item, 1)?;
            }
            Ok(g)
        }
        Variant::GcnItem => {
            let items = symmetric_item_to_user_adjoint(&hg.user_by_item, grad);
            hyperedge_gather_adjoint(&hg.user_by_item, &items)
        }
    }
}

fn check_counts(emb: &EmbeddingTable, hg: &Hypergraphs) -> Result<()> {
    if emb.num_users() != hg.num_users()
        || emb.num_groups() != hg.num_groups()
        || hg.user_by_item.num_nodes() != hg.num_users()
        || hg.group.num_hyperedges() != hg.num_users()
    {
        return Err(Error::CountMismatch(format!(
            "embeddings hold {} users / {} groups, hypergraphs {} users / {} groups",
            emb.num_users(),
            emb.num_groups(),
            hg.num_users(),
            hg.num_groups()
        )));
    }
    Ok(())
}

/// Full forward pass with the construction selected by `hp.variant`.
pub fn forward(emb: &EmbeddingTable, hg: &Hypergraphs, hp: &Hyperparams) -> Result<ForwardTrace> {
    variant_forward(hp.variant, emb, hg, hp)
}

/// Forward pass with an explicit item-view construction.
pub fn variant_forward(
    mode: Variant,
    emb: &EmbeddingTable,
    hg: &Hypergraphs,
    hp: &Hyperparams,
) -> Result<ForwardTrace> {
    check_counts(emb, hg)?;
    if hp.layers == 0 {
        return Err(Error::InvalidParam("layers must be >= 1".into()));
    }
    let mut item_view = PipelineTrace::default();
    let user_item = item_view_forward(&emb.item_view_user, hg, mode, hp.layers, &mut item_view)?;
    let mut group_view = PipelineTrace::default();
    let user_group = hyperconv_stack(
        &emb.group_view_user,
        &hg.user_by_group,
        hp.layers,
        &mut group_view,
    )?;
    let (group, group_pipeline) = propagate_groups(emb, &hg.group, &user_item, hp.gamma, hp.layers)?;
    let user = combine_user_views(&user_item, &user_group, hp.beta)?;
    Ok(ForwardTrace {
        variant: mode,
        layers: hp.layers,
        gamma: hp.gamma,
        beta: hp.beta,
        item_view,
        group_view,
        group_pipeline,
        user_item,
        user_group,
        user,
        group,
    })
}

/// Upstream gradients with respect to the final embeddings of a forward pass.
#[derive(Debug, Clone)]
pub struct OutputGrads {
    pub user_item: DenseMatrix,
    pub user_group: DenseMatrix,
    pub user: DenseMatrix,
    pub group: DenseMatrix,
}

impl OutputGrads {
    pub fn zeros_for(trace: &ForwardTrace) -> Self {
        Self {
            user_item: DenseMatrix::zeros(trace.user_item.rows(), trace.user_item.cols()),
            user_group: DenseMatrix::zeros(trace.user_group.rows(), trace.user_group.cols()),
            user: DenseMatrix::zeros(trace.user.rows(), trace.user.cols()),
            group: DenseMatrix::zeros(trace.group.rows(), trace.group.cols()),
        }
    }
}

/// Pulls output gradients back to the parameter blocks through the
/// β-combination, the group pipeline (including the intrinsic path into
/// the item view) and both user pipelines.
pub fn backprop(
    trace: &ForwardTrace,
    hg: &Hypergraphs,
    grads: &OutputGrads,
) -> Result<EmbeddingTable> {
    let expected_group = trace.layers;
    let expected_item = match trace.variant {
        Variant::GcnItem => 1,
        Variant::JointSequential if hg.user_by_group.num_incidences() > 0 => 2 * trace.layers,
        _ => trace.layers,
    };
    if trace.group_pipeline.stages.len() != expected_group
        || trace.group_view.stages.len() != expected_group
        || trace.item_view.stages.len() != expected_item
    {
        return Err(Error::MissingTrace(format!(
            "expected {expected_item} item-view / {expected_group} group stages, found {} / {} / {}",
            trace.item_view.stages.len(),
            trace.group_view.stages.len(),
            trace.group_pipeline.stages.len()
        )));
    }
    if trace.item_view.output() != Some(&trace.user_item)
        || trace.group_pipeline.output() != Some(&trace.group)
    {
        return Err(Error::MissingTrace(
            "final embeddings do not match the recorded stages".into(),
        ));
    }

    let mut d_user_item = grads.user_item.clone();
    d_user_item.axpy(trace.beta, &grads.user)?;
    let mut d_user_group = grads.user_group.clone();
    d_user_group.axpy(1.0 - trace.beta, &grads.user)?;

    // Group pipeline: E^{l+1} = S(G·E^l + γ·C).
    let mut d_group = grads.group.clone();
    for _ in 0..trace.layers {
        let d_fused = node_scatter_adjoint(&hg.group, &d_group)?;
        d_user_item.axpy(trace.gamma, &d_fused)?;
        d_group = hyperedge_gather_adjoint(&hg.group, &d_fused)?;
    }

    let d_item_param = item_view_adjoint(&d_user_item, hg, trace.variant, trace.layers)?;
    let d_group_view_param = hyperconv_stack_adjoint(&d_user_group, &hg.user_by_group, trace.layers)?;
    Ok(EmbeddingTable {
        d: d_group.cols(),
        item_view_user: d_item_param,
        group_view_user: d_group_view_param,
        group: d_group,
    })
}

/// Full |U| x |G| score matrix `E_u·E_gᵀ`.
pub fn predict_scores(users: &DenseMatrix, groups: &DenseMatrix) -> Result<DenseMatrix> {
    if users.cols() != groups.cols() {
        return Err(Error::shape("predict_scores", users.cols(), groups.cols()));
    }
    let mut out = DenseMatrix::zeros(users.rows(), groups.rows());
    for u in 0..users.rows() {
        let row = score_row(users, groups, u);
        out.row_mut(u).copy_from_slice(&row);
    }
    Ok(out)
}

/// Scores of user `u` against every group.
pub fn score_row(users: &DenseMatrix, groups: &DenseMatrix, u: usize) -> Vec<f64> {
    let eu = users.row(u);
    (0..groups.rows()).map(|g| dot(eu, groups.row(g))).collect()
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Plain hypergraph convolution `D⁻¹H·B⁻¹Hᵀ·X`.
pub fn oracle_hypergraph_conv(node_emb: &DenseMatrix, inc: &IncidenceMatrix) -> Result<DenseMatrix> {
    let h = incidence_to_dense(inc);
    let gathered = dense_reference_product(&h, node_emb, Normalize::Hyperedge)?;
    dense_reference_product(&h, &gathered, Normalize::Node)
}

fn dense_degrees(m: &DenseMatrix) -> Vec<f64> {
    (0..m.rows()).map(|r| m.row(r).iter().sum()).collect()
}

fn scale_rows(m: &mut DenseMatrix, w: &[f64]) {
    for (r, &w) in w.iter().enumerate() {
        m.row_mut(r).iter_mut().for_each(|v| *v *= w);
    }
}

fn check_adjacency(group_emb: &DenseMatrix, adjacency: &IncidenceMatrix, op: &'static str) -> Result<()> {
    if group_emb.rows() != adjacency.num_nodes() {
        return Err(Error::shape(op, adjacency.num_nodes(), group_emb.rows()));
    }
    Ok(())
}

/// Group-user-group propagation over the bipartite adjacency `A`
/// (groups x users) as two dense graph convolutions:
/// users `D_u⁻¹Aᵀ·E_g`, then groups `D_g⁻¹A·E_u`.
pub fn oracle_lightgcn_two_layer(
    group_emb: &DenseMatrix,
    adjacency: &IncidenceMatrix,
) -> Result<DenseMatrix> {
    check_adjacency(group_emb, adjacency, "oracle_lightgcn_two_layer")?;
    let a = incidence_to_dense(adjacency);
    let at = a.transpose();
    let inv = |d: f64| if d == 0.0 { 0.0 } else { 1.0 / d };
    let dg: Vec<f64> = dense_degrees(&a).into_iter().map(inv).collect();
    let du: Vec<f64> = dense_degrees(&at).into_iter().map(inv).collect();
    let mut users = at.matmul(group_emb)?;
    scale_rows(&mut users, &du);
    let mut groups = a.matmul(&users)?;
    scale_rows(&mut groups, &dg);
    Ok(groups)
}

/// The same two layers with symmetric normalization,
/// `(D_g^{-1/2} A D_u^{-1/2})(D_u^{-1/2} Aᵀ D_g^{-1/2})·E_g`.
///
/// This equals `D_g^{1/2}·P·D_g^{-1/2}·E_g` with `P` the one-sided operator
/// of [`oracle_lightgcn_two_layer`]; the two agree without the similarity
/// only when all group degrees within a component are equal.
pub fn oracle_lightgcn_symmetric(
    group_emb: &DenseMatrix,
    adjacency: &IncidenceMatrix,
) -> Result<DenseMatrix> {
    check_adjacency(group_emb, adjacency, "oracle_lightgcn_symmetric")?;
    let a = incidence_to_dense(adjacency);
    let at = a.transpose();
    let inv_sqrt = |d: f64| if d == 0.0 { 0.0 } else { 1.0 / d.sqrt() };
    let dg: Vec<f64> = dense_degrees(&a).into_iter().map(inv_sqrt).collect();
    let du: Vec<f64> = dense_degrees(&at).into_iter().map(inv_sqrt).collect();
    let mut group_to_user = at;
    let mut user_to_group = a;
    for u in 0..group_to_user.rows() {
        for g in 0..group_to_user.cols() {
            let v = group_to_user.get(u, g) * du[u] * dg[g];
            group_to_user.set(u, g, v);
            user_to_group.set(g, u, v);
        }
    }
    let users = group_to_user.matmul(group_emb)?;
    user_to_group.matmul(&users)
}

/// On-disk model: parameters plus everything needed to rebuild scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub num_users: usize,
    pub num_groups: usize,
    pub num_items: usize,
    pub init_seed: u64,
    pub hyperparams: Hyperparams,
    pub embeddings: EmbeddingTable,
}

impl Checkpoint {
    pub const FORMAT_VERSION: u32 = 1;

    pub fn new(num_items: usize, hyperparams: Hyperparams, embeddings: EmbeddingTable) -> Self {
        Self {
            format_version: Self::FORMAT_VERSION,
            num_users: embeddings.num_users(),
            num_groups: embeddings.num_groups(),
            num_items,
            init_seed: hyperparams.seed,
            hyperparams,
            embeddings,
        }
    }

    /// Writes to a sibling temp file and renames it into place.
    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, serde_json::to_string(self)?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ck: Self = serde_json::from_str(&text)?;
        if ck.format_version != Self::FORMAT_VERSION {
            return Err(Error::InvalidParam(format!(
                "unsupported checkpoint format {}",
                ck.format_version
            )));
        }
        if ck.embeddings.num_users() != ck.num_users || ck.embeddings.num_groups() != ck.num_groups {
            return Err(Error::CountMismatch(
                "checkpoint header disagrees with its embedding blocks".into(),
            ));
        }
        Ok(ck)
    }
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}
