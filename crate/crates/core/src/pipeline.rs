//! Run configuration and the steps behind each command: prepare a split,
//! train, evaluate, sweep cold-start caps, analyze a checkpoint and run
//! the gradient and equivalence checks.
//!
//! A prepared directory is self-contained: it holds both edge lists, the
//! split manifest, dataset statistics and the effective configuration.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::evaluation::{
    consistency, evaluate, group_relatedness_analysis, top_groups, Consistency, MetricsReport,
    RelatednessAnalysis,
};
use crate::graph::{
    cap_group_degree, generate_synthetic, load_interactions_with_counts, split_train_test,
    EntityCounts, GraphStats, Hypergraphs, InteractionGraph, SplitGraph, SplitManifest,
    SyntheticSpec,
};
use crate::model::{
    forward, score_row, write_atomic, Checkpoint, EmbeddingTable, Hyperparams, ScoreView, Variant, INIT_STD,
};
use crate::objectives::{finite_diff_check, FiniteDiffReport};
use crate::sparse::DenseMatrix;
use crate::training::{sample_negatives, train, StopReason, TrainConfig, TrainHistory};

pub const USER_GROUP_FILE: &str = "user_group.tsv";
pub const USER_ITEM_FILE: &str = "user_item.tsv";
pub const SPLIT_FILE: &str = "split.json";
pub const STATS_FILE: &str = "stats.json";
pub const CONFIG_FILE: &str = "config.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const HISTORY_FILE: &str = "history.csv";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const METRICS_FILE: &str = "metrics.json";

/// Every setting of a run, as one flat JSON object.
///
/// Layers are merged in order: built-in defaults, the prepared
/// directory's `config.json`, a `--config` file, then `--set key=value`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub user_group_path: Option<PathBuf>,
    pub user_item_path: Option<PathBuf>,
    pub num_users: Option<usize>,
    pub num_groups: Option<usize>,
    pub num_items: Option<usize>,
    /// Use the planted-cluster generator instead of edge-list files.
    pub synthetic: bool,
    pub synthetic_clusters: usize,
    pub synthetic_users_per_cluster: usize,
    pub synthetic_groups_per_cluster: usize,
    pub synthetic_items_per_cluster: usize,
    pub synthetic_in_cluster_prob: f64,
    pub synthetic_noise_prob: f64,
    pub synthetic_seed: u64,

    pub test_ratio: f64,
    pub val_ratio: f64,
    pub split_seed: u64,

    pub gamma: f64,
    pub beta: f64,
    pub tau_u: f64,
    pub tau_g: f64,
    pub lambda_ssl: f64,
    pub lambda_reg: f64,
    pub lr: f64,
    pub d: usize,
    pub layers: usize,
    pub seed: u64,
    pub patience: usize,
    pub k_list: Vec<usize>,
    pub variant: Variant,
    pub score_view: ScoreView,
    pub disable_cssl: bool,
    pub disable_group_reg: bool,
    /// Sets γ = 0.
    pub disable_thc: bool,

    pub eval_every: usize,
    pub max_epochs: usize,
    pub early_stop_k: usize,
    pub allow_large: bool,

    pub coldstart_k: Vec<usize>,
    pub analysis_bins: usize,
    pub output_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let hp = Hyperparams::default();
        let syn = SyntheticSpec::default();
        let tc = TrainConfig::default();
        Self {
            user_group_path: None,
            user_item_path: None,
            num_users: None,
            num_groups: None,
            num_items: None,
            synthetic: false,
            synthetic_clusters: syn.num_clusters,
            synthetic_users_per_cluster: syn.users_per_cluster,
            synthetic_groups_per_cluster: syn.groups_per_cluster,
            synthetic_items_per_cluster: syn.items_per_cluster,
            synthetic_in_cluster_prob: syn.in_cluster_prob,
            synthetic_noise_prob: syn.noise_prob,
            synthetic_seed: syn.seed,
            test_ratio: 0.3,
            val_ratio: 0.2,
            split_seed: 0,
            gamma: hp.gamma,
            beta: hp.beta,
            tau_u: hp.tau_u,
            tau_g: hp.tau_g,
            lambda_ssl: hp.lambda_ssl,
            lambda_reg: hp.lambda_reg,
            lr: hp.lr,
            d: hp.d,
            layers: hp.layers,
            seed: hp.seed,
            patience: hp.patience,
            k_list: hp.k_list,
            variant: hp.variant,
            score_view: hp.score_view,
            disable_cssl: false,
            disable_group_reg: false,
            disable_thc: false,
            eval_every: tc.eval_every,
            max_epochs: tc.max_epochs,
            early_stop_k: tc.early_stop_k,
            allow_large: tc.allow_large,
            coldstart_k: vec![1, 2, 3, 4],
            analysis_bins: 100,
            output_dir: None,
        }
    }
}

fn overlay(target: &mut Map<String, Value>, layer: &Map<String, Value>, origin: &str) -> Result<()> {
    for (k, v) in layer {
        if !target.contains_key(k) {
            return Err(Error::InvalidParam(format!("unknown config key {k:?} in {origin}")));
        }
        target.insert(k.clone(), v.clone());
    }
    Ok(())
}

fn as_object(v: Value, origin: &str) -> Result<Map<String, Value>> {
    match v {
        Value::Object(m) => Ok(m),
        _ => Err(Error::InvalidParam(format!("{origin} must be a JSON object"))),
    }
}

/// Parses `key=value`. The value is read as JSON when possible and as a
/// bare string otherwise, so `variant=J2` and `k_list=[5,10]` both work.
pub fn parse_set(arg: &str) -> Result<(String, Value)> {
    let (k, v) = arg
        .split_once('=')
        .ok_or_else(|| Error::InvalidParam(format!("expected key=value, got {arg:?}")))?;
    let value = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()));
    Ok((k.trim().to_string(), value))
}

impl RunConfig {
    /// Merges defaults, `base`, an optional file and `--set` overrides.
    pub fn layered(base: Option<&RunConfig>, file: Option<&Path>, sets: &[String]) -> Result<Self> {
        let mut merged = as_object(serde_json::to_value(RunConfig::default())?, "defaults")?;
        if let Some(b) = base {
            overlay(&mut merged, &as_object(serde_json::to_value(b)?, "base")?, "prepared config")?;
        }
        if let Some(path) = file {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let origin = path.display().to_string();
            overlay(&mut merged, &as_object(serde_json::from_str(&text)?, &origin)?, &origin)?;
        }
        let mut cli = Map::new();
        for s in sets {
            let (k, v) = parse_set(s)?;
            cli.insert(k, v);
        }
        overlay(&mut merged, &cli, "--set")?;
        let cfg: RunConfig = serde_json::from_value(Value::Object(merged))?;
        Ok(cfg.normalized())
    }

    /// Applies the switches that override other fields.
    pub fn normalized(mut self) -> Self {
        if self.disable_thc {
            self.gamma = 0.0;
        }
        self
    }

    pub fn validate_source(&self) -> Result<()> {
        let has_paths = self.user_group_path.is_some() || self.user_item_path.is_some();
        match (self.synthetic, has_paths) {
            (true, true) => Err(Error::InvalidParam(
                "set either synthetic=true or the edge-list paths, not both".into(),
            )),
            (false, false) => Err(Error::InvalidParam(
                "no data source: set synthetic=true or user_group_path and user_item_path".into(),
            )),
            (false, true) if self.user_group_path.is_none() || self.user_item_path.is_none() => {
                Err(Error::InvalidParam(
                    "both user_group_path and user_item_path are required".into(),
                ))
            }
            _ => Ok(()),
        }
    }

    pub fn synthetic_spec(&self) -> SyntheticSpec {
        SyntheticSpec {
            num_clusters: self.synthetic_clusters,
            users_per_cluster: self.synthetic_users_per_cluster,
            groups_per_cluster: self.synthetic_groups_per_cluster,
            items_per_cluster: self.synthetic_items_per_cluster,
            in_cluster_prob: self.synthetic_in_cluster_prob,
            noise_prob: self.synthetic_noise_prob,
            seed: self.synthetic_seed,
        }
    }

    pub fn hyperparams(&self) -> Hyperparams {
        Hyperparams {
            gamma: if self.disable_thc { 0.0 } else { self.gamma },
            beta: self.beta,
            tau_u: self.tau_u,
            tau_g: self.tau_g,
            lambda_ssl: self.lambda_ssl,
            lambda_reg: self.lambda_reg,
            lr: self.lr,
            d: self.d,
            layers: self.layers,
            seed: self.seed,
            patience: self.patience,
            k_list: self.k_list.clone(),
            use_cssl: !self.disable_cssl,
            use_group_reg: !self.disable_group_reg,
            variant: self.variant,
            score_view: self.score_view,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            eval_every: self.eval_every,
            max_epochs: self.max_epochs,
            early_stop_k: self.early_stop_k,
            allow_large: self.allow_large,
        }
    }

    /// The config as echoed into manifests: output location removed so
    /// identical runs in different directories compare equal.
    pub fn echoed(&self) -> Self {
        Self {
            output_dir: None,
            ..self.clone()
        }
    }

    fn output_dir(&self) -> Result<&Path> {
        self.output_dir
            .as_deref()
            .ok_or_else(|| Error::InvalidParam("output_dir is not set".into()))
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpectedCounts {
    pub user_group_edges: f64,
    pub user_item_edges: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub dataset_sha256: String,
    pub full: GraphStats,
    pub train: GraphStats,
    pub validation_edges: usize,
    pub test_edges: usize,
    /// Generator expectation, synthetic data only.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub expected: Option<ExpectedCounts>,
}

/// Loads or generates the dataset named by `cfg`.
pub fn source_graph(cfg: &RunConfig) -> Result<InteractionGraph> {
    cfg.validate_source()?;
    if cfg.synthetic {
        return Ok(generate_synthetic(&cfg.synthetic_spec())?.graph);
    }
    let counts = EntityCounts {
        users: cfg.num_users,
        groups: cfg.num_groups,
        items: cfg.num_items,
    };
    load_interactions_with_counts(
        cfg.user_group_path.as_deref().expect("validated"),
        cfg.user_item_path.as_deref().expect("validated"),
        counts,
    )
}

/// Splits the source data and writes a prepared directory to `output_dir`.
pub fn prepare(cfg: &RunConfig) -> Result<DatasetStats> {
    let out = cfg.output_dir()?;
    let graph = source_graph(cfg)?;
    let split = split_train_test(&graph, cfg.test_ratio, cfg.val_ratio, cfg.split_seed)?;
    create_dir(out)?;
    graph.write_tsv(&out.join(USER_GROUP_FILE), &out.join(USER_ITEM_FILE))?;
    write_json(&out.join(SPLIT_FILE), &split.manifest(&graph))?;
    let count = |sets: &[Vec<usize>]| sets.iter().map(Vec::len).sum();
    let stats = DatasetStats {
        dataset_sha256: graph.content_hash(),
        full: graph.stats(),
        train: split.train.stats(),
        validation_edges: count(&split.validation),
        test_edges: count(&split.test),
        expected: cfg.synthetic.then(|| {
            let (ug, ui) = cfg.synthetic_spec().expected_edges();
            ExpectedCounts {
                user_group_edges: ug,
                user_item_edges: ui,
            }
        }),
    };
    write_json(&out.join(STATS_FILE), &stats)?;
    write_json(&out.join(CONFIG_FILE), &cfg.echoed())?;
    Ok(stats)
}

/// A prepared directory loaded back into memory.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub dir: PathBuf,
    pub graph: InteractionGraph,
    pub split: SplitGraph,
    pub config: RunConfig,
}

impl Prepared {
    pub fn load(dir: &Path) -> Result<Self> {
        let manifest: SplitManifest = read_json(&dir.join(SPLIT_FILE))?;
        let config: RunConfig = read_json(&dir.join(CONFIG_FILE))?;
        let graph = load_interactions_with_counts(
            &dir.join(USER_GROUP_FILE),
            &dir.join(USER_ITEM_FILE),
            EntityCounts {
                users: Some(manifest.num_users),
                groups: Some(manifest.num_groups),
                items: Some(manifest.num_items),
            },
        )?;
        let split = SplitGraph::from_manifest(&graph, &manifest)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            graph,
            split,
            config,
        })
    }

    /// Effective config for a command run on this directory.
    pub fn config_with(&self, file: Option<&Path>, sets: &[String]) -> Result<RunConfig> {
        RunConfig::layered(Some(&self.config), file, sets)
    }
}

/// Which held-out set to score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalTarget {
    Validation,
    Test,
}

impl std::str::FromStr for EvalTarget {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "validation" | "val" => Ok(Self::Validation),
            "test" => Ok(Self::Test),
            other => Err(Error::InvalidParam(format!("unknown evaluation target {other:?}"))),
        }
    }
}

fn check_counts(ck: &Checkpoint, g: &InteractionGraph) -> Result<()> {
    let a = (ck.num_users, ck.num_groups, ck.num_items);
    let b = (g.num_users, g.num_groups, g.num_items);
    if a != b {
        return Err(Error::CountMismatch(format!(
            "checkpoint has (users, groups, items) = {a:?}, split has {b:?}"
        )));
    }
    Ok(())
}

/// Full ranking of every group for every user with held-out positives.
pub fn evaluate_embeddings(
    split: &SplitGraph,
    emb: &EmbeddingTable,
    hp: &Hyperparams,
    target: EvalTarget,
    k_list: &[usize],
) -> Result<MetricsReport> {
    let hg = Hypergraphs::build(&split.train);
    let trace = forward(emb, &hg, hp)?;
    let positives = match target {
        EvalTarget::Validation => &split.validation,
        EvalTarget::Test => &split.test,
    };
    evaluate(
        trace.scoring_users(hp.score_view),
        &trace.group,
        &split.train.groups_by_user(),
        positives,
        k_list,
    )
}

pub fn evaluate_checkpoint(
    prepared: &Prepared,
    ck: &Checkpoint,
    target: EvalTarget,
    k_list: &[usize],
) -> Result<MetricsReport> {
    check_counts(ck, &prepared.graph)?;
    evaluate_embeddings(&prepared.split, &ck.embeddings, &ck.hyperparams, target, k_list)
}

/// Final scoring embeddings of a checkpoint on its prepared split.
#[derive(Debug, Clone)]
pub struct Scorer {
    pub users: DenseMatrix,
    pub groups: DenseMatrix,
    pub train_positives: Vec<Vec<usize>>,
}

impl Scorer {
    pub fn new(prepared: &Prepared, ck: &Checkpoint) -> Result<Self> {
        check_counts(ck, &prepared.graph)?;
        let hg = Hypergraphs::build(&prepared.split.train);
        let trace = forward(&ck.embeddings, &hg, &ck.hyperparams)?;
        Ok(Self {
            users: trace.scoring_users(ck.hyperparams.score_view).clone(),
            groups: trace.group,
            train_positives: prepared.split.train.groups_by_user(),
        })
    }

    pub fn num_users(&self) -> usize {
        self.users.rows()
    }

    pub fn num_groups(&self) -> usize {
        self.groups.rows()
    }

    /// Scores of every group for `user`, training positives included.
    pub fn scores(&self, user: usize) -> Result<Vec<f64>> {
        self.check_user(user)?;
        Ok(score_row(&self.users, &self.groups, user))
    }

    /// Best `k` groups the user has not joined in training.
    pub fn top_k(&self, user: usize, k: usize) -> Result<Vec<(usize, f64)>> {
        self.check_user(user)?;
        Ok(top_groups(&self.users, &self.groups, user, &self.train_positives[user], k))
    }

    fn check_user(&self, user: usize) -> Result<()> {
        if user >= self.num_users() {
            return Err(Error::InvalidParam(format!(
                "user {user} out of range for {} users",
                self.num_users()
            )));
        }
        Ok(())
    }
}

/// Everything a training run records besides the parameters themselves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: RunConfig,
    pub dataset_sha256: String,
    pub num_users: usize,
    pub num_groups: usize,
    pub num_items: usize,
    pub train_user_group_edges: usize,
    pub init_std: f64,
    pub init_seed: u64,
    pub epochs_run: usize,
    pub optimizer_steps: u64,
    pub best_epoch: usize,
    pub best_validation_recall: Option<f64>,
    pub stop_reason: StopReason,
    pub test_metrics: MetricsReport,
    pub checkpoint_sha256: String,
    pub history_sha256: String,
}

#[derive(Debug, Clone)]
pub struct TrainOutputs {
    pub checkpoint: Checkpoint,
    pub history: TrainHistory,
    pub test_metrics: MetricsReport,
    pub manifest: RunManifest,
}

/// Trains on `split` and scores the returned parameters on its test set.
pub fn train_split(split: &SplitGraph, cfg: &RunConfig) -> Result<TrainOutputs> {
    let hp = cfg.hyperparams();
    let (emb, history) = train(split, &hp, &cfg.train_config())?;
    let test_metrics = evaluate_embeddings(split, &emb, &hp, EvalTarget::Test, &hp.k_list)?;
    let g = &split.train;
    let checkpoint = Checkpoint::new(g.num_items, hp.clone(), emb);
    let manifest = RunManifest {
        command: "train".into(),
        config: cfg.echoed(),
        dataset_sha256: g.content_hash(),
        num_users: g.num_users,
        num_groups: g.num_groups,
        num_items: g.num_items,
        train_user_group_edges: g.user_group_edges().len(),
        init_std: INIT_STD,
        init_seed: hp.seed,
        epochs_run: history.epochs.len(),
        optimizer_steps: history.optimizer_steps,
        best_epoch: history.best_epoch,
        best_validation_recall: history.best_validation_recall,
        stop_reason: history.stop_reason,
        test_metrics: test_metrics.clone(),
        checkpoint_sha256: sha256_hex(serde_json::to_string(&checkpoint)?.as_bytes()),
        history_sha256: sha256_hex(history.to_csv().as_bytes()),
    };
    Ok(TrainOutputs {
        checkpoint,
        history,
        test_metrics,
        manifest,
    })
}

/// Trains on a prepared directory and writes checkpoint, history,
/// manifest and test metrics to `cfg.output_dir`.
pub fn train_prepared(prepared: &Prepared, cfg: &RunConfig) -> Result<TrainOutputs> {
    let out = cfg.output_dir()?.to_path_buf();
    let outputs = train_split(&prepared.split, cfg)?;
    create_dir(&out)?;
    outputs.checkpoint.save(&out.join(CHECKPOINT_FILE))?;
    write_atomic(&out.join(HISTORY_FILE), outputs.history.to_csv().as_bytes())?;
    write_json(&out.join(METRICS_FILE), &outputs.test_metrics)?;
    write_json(&out.join(MANIFEST_FILE), &outputs.manifest)?;
    Ok(outputs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColdStartRow {
    /// `None` for the uncapped reference run.
    pub k: Option<usize>,
    pub remaining_edges: usize,
    pub best_epoch: usize,
    pub metrics: MetricsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColdStartTable {
    pub rows: Vec<ColdStartRow>,
}

impl ColdStartTable {
    pub fn uncapped(&self) -> Option<&ColdStartRow> {
        self.rows.iter().find(|r| r.k.is_none())
    }

    pub fn at(&self, k: usize) -> Option<&ColdStartRow> {
        self.rows.iter().find(|r| r.k == Some(k))
    }

    /// Recall@`k_metric` at cap `k` over the uncapped recall.
    pub fn retention(&self, k: usize, k_metric: usize) -> Option<f64> {
        let base = self.uncapped()?.metrics.recall(k_metric)?;
        let capped = self.at(k)?.metrics.recall(k_metric)?;
        (base > 0.0).then(|| capped / base)
    }

    pub fn to_csv(&self) -> String {
        let ks: Vec<usize> = self
            .rows
            .first()
            .map(|r| r.metrics.metrics.iter().map(|m| m.k).collect())
            .unwrap_or_default();
        let mut s = String::from("k,remaining_edges,best_epoch");
        for k in &ks {
            s.push_str(&format!(",recall@{k},ndcg@{k}"));
        }
        s.push('\n');
        for r in &self.rows {
            let k = r.k.map(|k| k.to_string()).unwrap_or_else(|| "all".into());
            s.push_str(&format!("{k},{},{}", r.remaining_edges, r.best_epoch));
            for m in &r.metrics.metrics {
                s.push_str(&format!(",{},{}", m.recall, m.ndcg));
            }
            s.push('\n');
        }
        s
    }
}

/// Retrains from scratch for the uncapped split and for every cap `k`,
/// always scoring on the untouched test set.
pub fn coldstart_split(split: &SplitGraph, cfg: &RunConfig, k_values: &[usize]) -> Result<ColdStartTable> {
    if k_values.is_empty() {
        return Err(Error::InvalidParam("cold-start needs at least one k".into()));
    }
    let mut rows = Vec::with_capacity(k_values.len() + 1);
    let mut run = |k: Option<usize>, capped: SplitGraph| -> Result<()> {
        let out = train_split(&capped, cfg)?;
        log::info!(
            "cold-start k={k:?}: {} edges, {:?}",
            capped.train.user_group_edges().len(),
            out.test_metrics.metrics
        );
        rows.push(ColdStartRow {
            k,
            remaining_edges: capped.train.user_group_edges().len(),
            best_epoch: out.history.best_epoch,
            metrics: out.test_metrics,
        });
        Ok(())
    };
    run(None, split.clone())?;
    for &k in k_values {
        let capped = SplitGraph {
            train: cap_group_degree(&split.train, k, cfg.split_seed)?,
            ..split.clone()
        };
        run(Some(k), capped)?;
    }
    Ok(ColdStartTable { rows })
}

pub fn coldstart_prepared(prepared: &Prepared, cfg: &RunConfig, k_values: &[usize]) -> Result<ColdStartTable> {
    let out = cfg.output_dir()?.to_path_buf();
    let table = coldstart_split(&prepared.split, cfg, k_values)?;
    create_dir(&out)?;
    write_atomic(&out.join("coldstart.csv"), table.to_csv().as_bytes())?;
    write_json(&out.join("coldstart.json"), &table)?;
    Ok(table)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Analysis {
    pub consistency: Consistency,
    pub relatedness: RelatednessAnalysis,
}

pub fn analyze_embeddings(
    split: &SplitGraph,
    emb: &EmbeddingTable,
    hp: &Hyperparams,
    bins: usize,
) -> Result<Analysis> {
    let hg = Hypergraphs::build(&split.train);
    let trace = forward(emb, &hg, hp)?;
    Ok(Analysis {
        consistency: consistency(&trace.user_item, &trace.user_group)?,
        relatedness: group_relatedness_analysis(&trace.group, &split.train.members_by_group(), bins)?,
    })
}

/// Writes `consistency.json`, `relatedness.csv` and `relatedness.json`.
pub fn analyze_checkpoint(prepared: &Prepared, ck: &Checkpoint, bins: usize, out: &Path) -> Result<Analysis> {
    check_counts(ck, &prepared.graph)?;
    let a = analyze_embeddings(&prepared.split, &ck.embeddings, &ck.hyperparams, bins)?;
    create_dir(out)?;
    write_json(&out.join("consistency.json"), &a.consistency)?;
    a.relatedness.write_csv(&out.join("relatedness.csv"))?;
    write_json(&out.join("relatedness.json"), &a.relatedness)?;
    Ok(a)
}

/// A small random full-model instance for gradient checking.
#[derive(Debug, Clone)]
pub struct GradcheckInstance {
    pub graph: InteractionGraph,
    pub emb: EmbeddingTable,
    pub hp: Hyperparams,
}

/// Every user has 1-3 of `num_groups` groups and 1-3 items; every group
/// and item has a member. Parameters are drawn at unit scale.
pub fn gradcheck_instance(
    num_users: usize,
    num_groups: usize,
    num_items: usize,
    hp: Hyperparams,
    seed: u64,
) -> Result<GradcheckInstance> {
    if num_groups < 2 || num_users == 0 || num_items == 0 {
        return Err(Error::InvalidParam("gradcheck needs >= 2 groups, >= 1 user and item".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // per-user degree stays below `limit` so a negative always exists
    let mut pick = |n: usize, max_per: usize, limit: usize| -> Result<Vec<(usize, usize)>> {
        let mut sets: Vec<Vec<usize>> = (0..num_users)
            .map(|_| {
                let mut ids: Vec<usize> = (0..n).collect();
                ids.shuffle(&mut rng);
                ids.truncate(rng.gen_range(1..=max_per.min(n)));
                ids
            })
            .collect();
        for x in 0..n {
            if sets.iter().any(|s| s.contains(&x)) {
                continue;
            }
            let open: Vec<usize> = (0..num_users).filter(|&u| sets[u].len() + 1 < limit).collect();
            let u = *open
                .choose(&mut rng)
                .ok_or_else(|| Error::InvalidParam("too few users to cover every id".into()))?;
            sets[u].push(x);
        }
        Ok(sets
            .into_iter()
            .enumerate()
            .flat_map(|(u, s)| s.into_iter().map(move |x| (u, x)))
            .collect())
    };
    let ug = pick(num_groups, 3.min(num_groups - 1), num_groups)?;
    let ui = pick(num_items, 3, usize::MAX)?;
    let graph = InteractionGraph::new(num_users, num_groups, num_items, ug, ui)?;
    let mut emb = EmbeddingTable::init_normal(num_users, num_groups, hp.d, seed ^ 0x5EED);
    for block in emb.blocks_mut() {
        block.scale(1.0 / INIT_STD);
    }
    Ok(GradcheckInstance { graph, emb, hp })
}

/// The ten instances of the standard battery: γ and β each over
/// {0, 0.5, 1}, L over {1, 2}, 5 users, 4 groups, 6 items, d = 3.
pub fn gradcheck_battery_instances(seed: u64) -> Result<Vec<GradcheckInstance>> {
    let grid = [0.0, 0.5, 1.0];
    (0..10)
        .map(|i| {
            let hp = Hyperparams {
                gamma: grid[i % 3],
                beta: grid[(i / 3) % 3],
                layers: 1 + i % 2,
                d: 3,
                lambda_reg: 1e-3,
                ..Hyperparams::default()
            };
            gradcheck_instance(5, 4, 6, hp, seed.wrapping_add(i as u64))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckCase {
    pub gamma: f64,
    pub beta: f64,
    pub layers: usize,
    pub variant: Variant,
    pub report: FiniteDiffReport,
}

pub fn run_gradcheck(instances: &[GradcheckInstance], h: f64, tolerance: f64) -> Result<Vec<GradcheckCase>> {
    instances
        .iter()
        .map(|inst| {
            let hg = Hypergraphs::build(&inst.graph);
            let triples = sample_negatives(&inst.graph, inst.hp.seed, 1)?;
            let report = finite_diff_check(&inst.emb, &hg, &triples, &inst.hp, h, tolerance)?;
            Ok(GradcheckCase {
                gamma: inst.hp.gamma,
                beta: inst.hp.beta,
                layers: inst.hp.layers,
                variant: inst.hp.variant,
                report,
            })
        })
        .collect()
}
