//! Interaction graphs, per-user splits and the three hypergraph incidence
//! structures built from them.
//!
//! Users, groups and items live in separate dense id spaces `0..count`.
//! Every hypergraph is stored twice (node-major and hyperedge-major CSR) so
//! both halves of a convolution can walk contiguous slices.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::OnceLock;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Users, groups, items and the two bipartite edge sets between them.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InteractionGraph {
    pub num_users: usize,
    pub num_groups: usize,
    pub num_items: usize,
    user_group: Vec<(usize, usize)>,
    user_item: Vec<(usize, usize)>,
}

/// Optional overrides for entity counts when loading edge lists.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityCounts {
    pub users: Option<usize>,
    pub groups: Option<usize>,
    pub items: Option<usize>,
}

impl InteractionGraph {
    /// Builds a graph, sorting and deduplicating both edge lists.
    pub fn new(
        num_users: usize,
        num_groups: usize,
        num_items: usize,
        mut user_group: Vec<(usize, usize)>,
        mut user_item: Vec<(usize, usize)>,
    ) -> Result<Self> {
        for &(u, g) in &user_group {
            if u >= num_users || g >= num_groups {
                return Err(Error::InvalidParam(format!(
                    "user-group edge ({u}, {g}) out of range for {num_users} users / {num_groups} groups"
                )));
            }
        }
        for &(u, i) in &user_item {
            if u >= num_users || i >= num_items {
                return Err(Error::InvalidParam(format!(
                    "user-item edge ({u}, {i}) out of range for {num_users} users / {num_items} items"
                )));
            }
        }
        user_group.sort_unstable();
        user_group.dedup();
        user_item.sort_unstable();
        user_item.dedup();
        Ok(Self {
            num_users,
            num_groups,
            num_items,
            user_group,
            user_item,
        })
    }

    pub fn user_group_edges(&self) -> &[(usize, usize)] {
        &self.user_group
    }

    pub fn user_item_edges(&self) -> &[(usize, usize)] {
        &self.user_item
    }

    /// Sorted group ids per user.
    pub fn groups_by_user(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.num_users];
        for &(u, g) in &self.user_group {
            out[u].push(g);
        }
        out
    }

    /// Sorted member ids per group.
    pub fn members_by_group(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.num_groups];
        for &(u, g) in &self.user_group {
            out[g].push(u);
        }
        out
    }

    pub fn items_by_user(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.num_users];
        for &(u, i) in &self.user_item {
            out[u].push(i);
        }
        out
    }

    /// Writes both edge lists in the TSV edge-list format.
    pub fn write_tsv(&self, ug_path: &Path, ui_path: &Path) -> Result<()> {
        write_edges(ug_path, &self.user_group)?;
        write_edges(ui_path, &self.user_item)
    }

    /// SHA-256 over counts and both edge lists, hex encoded.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        for n in [self.num_users, self.num_groups, self.num_items] {
            h.update((n as u64).to_le_bytes());
        }
        for edges in [&self.user_group, &self.user_item] {
            h.update((edges.len() as u64).to_le_bytes());
            for &(a, b) in edges.iter() {
                h.update((a as u64).to_le_bytes());
                h.update((b as u64).to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    pub fn stats(&self) -> GraphStats {
        GraphStats::from_counts(
            self.num_users,
            self.num_groups,
            self.num_items,
            self.user_group.len(),
            self.user_item.len(),
        )
    }
}

fn write_edges(path: &Path, edges: &[(usize, usize)]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for &(a, b) in edges {
        writeln!(w, "{a}\t{b}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_edges(path: &Path) -> Result<Vec<(usize, usize)>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut edges = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let lineno = idx + 1;
        let line = line.strip_suffix('\r').unwrap_or(&line);
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 2 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: lineno,
                msg: format!("expected 2 tab-separated fields, found {}", fields.len()),
            });
        }
        let parse = |s: &str| {
            s.parse::<usize>().map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                line: lineno,
                msg: format!("not a non-negative integer: {s:?}"),
            })
        };
        edges.push((parse(fields[0])?, parse(fields[1])?));
    }
    Ok(edges)
}

/// Loads a user-group and a user-item TSV edge list. Entity counts are
/// max id + 1 per type.
pub fn load_interactions(ug_path: &Path, ui_path: &Path) -> Result<InteractionGraph> {
    load_interactions_with_counts(ug_path, ui_path, EntityCounts::default())
}

pub fn load_interactions_with_counts(
    ug_path: &Path,
    ui_path: &Path,
    counts: EntityCounts,
) -> Result<InteractionGraph> {
    let ug = read_edges(ug_path)?;
    if ug.is_empty() {
        return Err(Error::EmptyEdges("user-group"));
    }
    let ui = read_edges(ui_path)?;
    if ui.is_empty() {
        return Err(Error::EmptyEdges("user-item"));
    }
    let max_user = ug.iter().chain(ui.iter()).map(|e| e.0).max().unwrap_or(0);
    let max_group = ug.iter().map(|e| e.1).max().unwrap_or(0);
    let max_item = ui.iter().map(|e| e.1).max().unwrap_or(0);
    let pick = |over: Option<usize>, max: usize, what: &str| -> Result<usize> {
        match over {
            Some(n) if n <= max => Err(Error::InvalidParam(format!(
                "{what} count override {n} is below max id + 1 = {}",
                max + 1
            ))),
            Some(n) => Ok(n),
            None => Ok(max + 1),
        }
    };
    InteractionGraph::new(
        pick(counts.users, max_user, "user")?,
        pick(counts.groups, max_group, "group")?,
        pick(counts.items, max_item, "item")?,
        ug,
        ui,
    )
}

/// Entity counts and the average-degree columns of a dataset summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphStats {
    pub num_users: usize,
    pub num_groups: usize,
    pub num_items: usize,
    pub user_group_edges: usize,
    pub user_item_edges: usize,
    pub avg_groups_per_user: f64,
    pub avg_users_per_group: f64,
    pub avg_items_per_user: f64,
    pub avg_users_per_item: f64,
}

impl GraphStats {
    pub fn from_counts(
        num_users: usize,
        num_groups: usize,
        num_items: usize,
        user_group_edges: usize,
        user_item_edges: usize,
    ) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        Self {
            num_users,
            num_groups,
            num_items,
            user_group_edges,
            user_item_edges,
            avg_groups_per_user: ratio(user_group_edges, num_users),
            avg_users_per_group: ratio(user_group_edges, num_groups),
            avg_items_per_user: ratio(user_item_edges, num_users),
            avg_users_per_item: ratio(user_item_edges, num_items),
        }
    }
}

/// Training graph plus held-out per-user validation and test group sets.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitGraph {
    pub train: InteractionGraph,
    pub validation: Vec<Vec<usize>>,
    pub test: Vec<Vec<usize>>,
    pub seed: u64,
    pub test_ratio: f64,
    pub val_ratio: f64,
}

/// Splits each user's groups into test, validation and train.
///
/// Per user with `n` groups: `floor(test_ratio * n)` go to test, then
/// `floor(val_ratio * (n - test))` of the remainder go to validation.
/// User-item edges all stay in train.
pub fn split_train_test(
    g: &InteractionGraph,
    test_ratio: f64,
    val_ratio: f64,
    seed: u64,
) -> Result<SplitGraph> {
    if !(0.0..1.0).contains(&test_ratio) || !(0.0..1.0).contains(&val_ratio) {
        return Err(Error::InvalidParam(format!(
            "split ratios must lie in [0, 1): test {test_ratio}, validation {val_ratio}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train_edges = Vec::with_capacity(g.user_group.len());
    let mut validation = vec![Vec::new(); g.num_users];
    let mut test = vec![Vec::new(); g.num_users];
    for (u, mut groups) in g.groups_by_user().into_iter().enumerate() {
        let n = groups.len();
        let n_test = (test_ratio * n as f64).floor() as usize;
        let n_val = (val_ratio * (n - n_test) as f64).floor() as usize;
        groups.shuffle(&mut rng);
        let mut t = groups[..n_test].to_vec();
        let mut v = groups[n_test..n_test + n_val].to_vec();
        t.sort_unstable();
        v.sort_unstable();
        train_edges.extend(groups[n_test + n_val..].iter().map(|&gid| (u, gid)));
        test[u] = t;
        validation[u] = v;
    }
    let train = InteractionGraph::new(
        g.num_users,
        g.num_groups,
        g.num_items,
        train_edges,
        g.user_item.clone(),
    )?;
    Ok(SplitGraph {
        train,
        validation,
        test,
        seed,
        test_ratio,
        val_ratio,
    })
}

/// Shareable record of a split. Together with the source graph it
/// reproduces the [`SplitGraph`] exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub seed: u64,
    pub test_ratio: f64,
    pub val_ratio: f64,
    pub num_users: usize,
    pub num_groups: usize,
    pub num_items: usize,
    pub dataset_sha256: String,
    pub test: Vec<Vec<usize>>,
    pub validation: Vec<Vec<usize>>,
}

impl SplitGraph {
    pub fn manifest(&self, source: &InteractionGraph) -> SplitManifest {
        SplitManifest {
            seed: self.seed,
            test_ratio: self.test_ratio,
            val_ratio: self.val_ratio,
            num_users: source.num_users,
            num_groups: source.num_groups,
            num_items: source.num_items,
            dataset_sha256: source.content_hash(),
            test: self.test.clone(),
            validation: self.validation.clone(),
        }
    }

    /// Rebuilds a split from the full graph and a manifest.
    pub fn from_manifest(source: &InteractionGraph, m: &SplitManifest) -> Result<Self> {
        if source.content_hash() != m.dataset_sha256 {
            return Err(Error::CountMismatch(
                "dataset hash differs from the one recorded in the split manifest".into(),
            ));
        }
        if m.test.len() != source.num_users || m.validation.len() != source.num_users {
            return Err(Error::CountMismatch(format!(
                "manifest lists {} users, dataset has {}",
                m.test.len(),
                source.num_users
            )));
        }
        let held: BTreeSet<(usize, usize)> = m
            .test
            .iter()
            .chain(m.validation.iter())
            .enumerate()
            .flat_map(|(idx, gs)| gs.iter().map(move |&g| (idx % source.num_users, g)))
            .collect();
        let train_edges = source
            .user_group
            .iter()
            .copied()
            .filter(|e| !held.contains(e))
            .collect();
        let train = InteractionGraph::new(
            source.num_users,
            source.num_groups,
            source.num_items,
            train_edges,
            source.user_item.clone(),
        )?;
        Ok(Self {
            train,
            validation: m.validation.clone(),
            test: m.test.clone(),
            seed: m.seed,
            test_ratio: m.test_ratio,
            val_ratio: m.val_ratio,
        })
    }
}

/// Binary node-by-hyperedge incidence with both CSR orientations and
/// cached degree vectors.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IncidenceMatrix {
    num_nodes: usize,
    num_hyperedges: usize,
    node_ptr: Vec<usize>,
    node_idx: Vec<usize>,
    edge_ptr: Vec<usize>,
    edge_idx: Vec<usize>,
}

fn csr(rows: usize, mut pairs: Vec<(usize, usize)>) -> (Vec<usize>, Vec<usize>) {
    pairs.sort_unstable();
    let mut ptr = vec![0usize; rows + 1];
    for &(r, _) in &pairs {
        ptr[r + 1] += 1;
    }
    for r in 0..rows {
        ptr[r + 1] += ptr[r];
    }
    (ptr, pairs.into_iter().map(|(_, c)| c).collect())
}

impl IncidenceMatrix {
    /// Builds from `(node, hyperedge)` incidences; duplicates collapse.
    pub fn from_incidences(
        num_nodes: usize,
        num_hyperedges: usize,
        incidences: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self> {
        let mut pairs: Vec<(usize, usize)> = incidences.into_iter().collect();
        if let Some(&(n, e)) = pairs
            .iter()
            .find(|&&(n, e)| n >= num_nodes || e >= num_hyperedges)
        {
            return Err(Error::InvalidParam(format!(
                "incidence ({n}, {e}) outside {num_nodes} nodes x {num_hyperedges} hyperedges"
            )));
        }
        pairs.sort_unstable();
        pairs.dedup();
        let flipped = pairs.iter().map(|&(n, e)| (e, n)).collect();
        let (node_ptr, node_idx) = csr(num_nodes, pairs);
        let (edge_ptr, edge_idx) = csr(num_hyperedges, flipped);
        Ok(Self {
            num_nodes,
            num_hyperedges,
            node_ptr,
            node_idx,
            edge_ptr,
            edge_idx,
        })
    }

    /// Each node is its own single hyperedge.
    pub fn identity(n: usize) -> Self {
        Self::from_incidences(n, n, (0..n).map(|i| (i, i))).expect("in range")
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_hyperedges(&self) -> usize {
        self.num_hyperedges
    }

    pub fn num_incidences(&self) -> usize {
        self.node_idx.len()
    }

    /// Sorted hyperedges containing `node`.
    pub fn hyperedges_of(&self, node: usize) -> &[usize] {
        &self.node_idx[self.node_ptr[node]..self.node_ptr[node + 1]]
    }

    /// Sorted nodes of `hyperedge`.
    pub fn nodes_of(&self, hyperedge: usize) -> &[usize] {
        &self.edge_idx[self.edge_ptr[hyperedge]..self.edge_ptr[hyperedge + 1]]
    }

    pub fn node_degree(&self, node: usize) -> usize {
        self.node_ptr[node + 1] - self.node_ptr[node]
    }

    pub fn hyperedge_degree(&self, hyperedge: usize) -> usize {
        self.edge_ptr[hyperedge + 1] - self.edge_ptr[hyperedge]
    }

    pub fn node_degrees(&self) -> Vec<usize> {
        (0..self.num_nodes).map(|n| self.node_degree(n)).collect()
    }

    pub fn hyperedge_degrees(&self) -> Vec<usize> {
        (0..self.num_hyperedges)
            .map(|e| self.hyperedge_degree(e))
            .collect()
    }

    /// All `(node, hyperedge)` incidences in node-major order.
    pub fn incidences(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.num_nodes).flat_map(move |n| self.hyperedges_of(n).iter().map(move |&e| (n, e)))
    }

    /// Swaps the roles of nodes and hyperedges.
    pub fn transpose(&self) -> Self {
        Self {
            num_nodes: self.num_hyperedges,
            num_hyperedges: self.num_nodes,
            node_ptr: self.edge_ptr.clone(),
            node_idx: self.edge_idx.clone(),
            edge_ptr: self.node_ptr.clone(),
            edge_idx: self.node_idx.clone(),
        }
    }

    /// Column-wise concatenation `[self | other]` over a shared node set.
    /// Hyperedges of `other` are renumbered after those of `self`.
    pub fn concat_hyperedges(&self, other: &Self) -> Result<Self> {
        if self.num_nodes != other.num_nodes {
            return Err(Error::shape(
                "concat_hyperedges",
                format!("{} nodes", self.num_nodes),
                format!("{} nodes", other.num_nodes),
            ));
        }
        let offset = self.num_hyperedges;
        Self::from_incidences(
            self.num_nodes,
            self.num_hyperedges + other.num_hyperedges,
            self.incidences()
                .chain(other.incidences().map(|(n, e)| (n, e + offset))),
        )
    }

    /// Dense `num_nodes x num_hyperedges` 0/1 matrix, row-major.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut m = vec![vec![0.0; self.num_hyperedges]; self.num_nodes];
        for (n, e) in self.incidences() {
            m[n][e] = 1.0;
        }
        m
    }
}

/// Groups as nodes, users as hyperedges (`H`, |G| x |U|).
pub fn build_user_view_group_hypergraph(train: &InteractionGraph) -> IncidenceMatrix {
    IncidenceMatrix::from_incidences(
        train.num_groups,
        train.num_users,
        train.user_group.iter().map(|&(u, g)| (g, u)),
    )
    .expect("graph ids validated on construction")
}

/// Users as nodes, groups as hyperedges (`U_g`, |U| x |G|).
pub fn build_group_view_user_hypergraph(train: &InteractionGraph) -> IncidenceMatrix {
    IncidenceMatrix::from_incidences(
        train.num_users,
        train.num_groups,
        train.user_group.iter().copied(),
    )
    .expect("graph ids validated on construction")
}

/// Users as nodes, items as hyperedges (`U_i`, |U| x |I|).
pub fn build_item_view_user_hypergraph(train: &InteractionGraph) -> IncidenceMatrix {
    IncidenceMatrix::from_incidences(
        train.num_users,
        train.num_items,
        train.user_item.iter().copied(),
    )
    .expect("graph ids validated on construction")
}

/// The three hypergraphs a model runs on.
#[derive(Debug, Clone)]
pub struct Hypergraphs {
    /// Groups x users.
    pub group: IncidenceMatrix,
    /// Users x groups.
    pub user_by_group: IncidenceMatrix,
    /// Users x items.
    pub user_by_item: IncidenceMatrix,
    joint: OnceLock<IncidenceMatrix>,
}

impl Hypergraphs {
    pub fn build(train: &InteractionGraph) -> Self {
        Self::from_parts(
            build_user_view_group_hypergraph(train),
            build_group_view_user_hypergraph(train),
            build_item_view_user_hypergraph(train),
        )
    }

    pub fn from_parts(
        group: IncidenceMatrix,
        user_by_group: IncidenceMatrix,
        user_by_item: IncidenceMatrix,
    ) -> Self {
        Self {
            group,
            user_by_group,
            user_by_item,
            joint: OnceLock::new(),
        }
    }

    /// `[U_i | U_g]`: users with item hyperedges followed by group hyperedges.
    pub fn joint_user(&self) -> &IncidenceMatrix {
        self.joint.get_or_init(|| {
            self.user_by_item
                .concat_hyperedges(&self.user_by_group)
                .expect("both user hypergraphs share the user node set")
        })
    }

    pub fn num_users(&self) -> usize {
        self.user_by_group.num_nodes()
    }

    pub fn num_groups(&self) -> usize {
        self.group.num_nodes()
    }
}

/// Keeps at most `k` uniformly chosen training groups per user.
pub fn cap_group_degree(train: &InteractionGraph, k: usize, seed: u64) -> Result<InteractionGraph> {
    if k == 0 {
        return Err(Error::InvalidParam("group-degree cap must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges = Vec::with_capacity(train.user_group.len());
    for (u, groups) in train.groups_by_user().into_iter().enumerate() {
        if groups.len() > k {
            edges.extend(groups.choose_multiple(&mut rng, k).map(|&g| (u, g)));
        } else {
            edges.extend(groups.into_iter().map(|g| (u, g)));
        }
    }
    InteractionGraph::new(
        train.num_users,
        train.num_groups,
        train.num_items,
        edges,
        train.user_item.clone(),
    )
}

/// Parameters of the planted-cluster generator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub num_clusters: usize,
    pub users_per_cluster: usize,
    pub groups_per_cluster: usize,
    pub items_per_cluster: usize,
    pub in_cluster_prob: f64,
    pub noise_prob: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            num_clusters: 5,
            users_per_cluster: 100,
            groups_per_cluster: 40,
            items_per_cluster: 60,
            in_cluster_prob: 0.2,
            noise_prob: 0.01,
            seed: 7,
        }
    }
}

impl SyntheticSpec {
    /// Expected user-group and user-item edge counts before the top-up
    /// draws, which add a small positive bias.
    pub fn expected_edges(&self) -> (f64, f64) {
        let users = (self.num_clusters * self.users_per_cluster) as f64;
        let foreign = self.num_clusters.saturating_sub(1) as f64;
        let per_user = |per: usize| {
            per as f64 * self.in_cluster_prob + foreign * per as f64 * self.noise_prob
        };
        (
            users * per_user(self.groups_per_cluster),
            users * per_user(self.items_per_cluster),
        )
    }
}

/// A generated graph together with its planted cluster labels.
#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub graph: InteractionGraph,
    pub spec: SyntheticSpec,
}

impl SyntheticDataset {
    pub fn user_cluster(&self, u: usize) -> usize {
        u / self.spec.users_per_cluster
    }

    pub fn group_cluster(&self, g: usize) -> usize {
        g / self.spec.groups_per_cluster
    }

    pub fn item_cluster(&self, i: usize) -> usize {
        i / self.spec.items_per_cluster
    }
}

/// Planted-cluster generator. Entities of cluster `c` occupy the contiguous
/// id block `c * per_cluster ..`. Each user joins each own-cluster group
/// (item) with `in_cluster_prob` and each foreign one with `noise_prob`.
/// Users short of 2 groups or 1 item are topped up by drawing from the same
/// weights, which keeps the `in == noise` case free of cluster signal.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticDataset> {
    let &SyntheticSpec {
        num_clusters,
        users_per_cluster,
        groups_per_cluster,
        items_per_cluster,
        in_cluster_prob,
        noise_prob,
        seed,
    } = spec;
    for (name, p) in [("in_cluster_prob", in_cluster_prob), ("noise_prob", noise_prob)] {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidParam(format!("{name} = {p} is not in [0, 1]")));
        }
    }
    if num_clusters == 0 || users_per_cluster == 0 {
        return Err(Error::InvalidParam("generator needs at least one user".into()));
    }
    if groups_per_cluster < 2 && !(noise_prob > 0.0 && num_clusters * groups_per_cluster >= 2) {
        return Err(Error::InvalidParam(
            "cannot guarantee two groups per user: need >= 2 groups per cluster or reachable foreign groups".into(),
        ));
    }
    if items_per_cluster == 0 {
        return Err(Error::InvalidParam("cannot guarantee one item per user".into()));
    }

    let num_users = num_clusters * users_per_cluster;
    let num_groups = num_clusters * groups_per_cluster;
    let num_items = num_clusters * items_per_cluster;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ug = Vec::new();
    let mut ui = Vec::new();

    let draw = |rng: &mut ChaCha8Rng,
                    cluster: usize,
                    per: usize,
                    total: usize,
                    min: usize|
     -> Vec<usize> {
        let mut chosen: Vec<usize> = (0..total)
            .filter(|&x| {
                let p = if x / per == cluster { in_cluster_prob } else { noise_prob };
                rng.gen::<f64>() < p
            })
            .collect();
        while chosen.len() < min {
            let weight = |x: usize| {
                if x / per == cluster {
                    in_cluster_prob
                } else {
                    noise_prob
                }
            };
            let free: Vec<usize> = (0..total).filter(|x| !chosen.contains(x)).collect();
            let mut pool: Vec<(usize, f64)> = free.iter().map(|&x| (x, weight(x))).collect();
            if pool.iter().all(|&(_, w)| w <= 0.0) {
                pool = free
                    .iter()
                    .filter(|&&x| x / per == cluster)
                    .map(|&x| (x, 1.0))
                    .collect();
            }
            let sum: f64 = pool.iter().map(|p| p.1).sum();
            let mut r = rng.gen::<f64>() * sum;
            let mut pick = pool.last().map(|p| p.0).expect("non-empty pool");
            for &(x, w) in &pool {
                if r < w {
                    pick = x;
                    break;
                }
                r -= w;
            }
            chosen.push(pick);
        }
        chosen
    };

    for u in 0..num_users {
        let c = u / users_per_cluster;
        for g in draw(&mut rng, c, groups_per_cluster, num_groups, 2) {
            ug.push((u, g));
        }
        for i in draw(&mut rng, c, items_per_cluster, num_items, 1) {
            ui.push((u, i));
        }
    }
    let graph = InteractionGraph::new(num_users, num_groups, num_items, ug, ui)?;
    Ok(SyntheticDataset { graph, spec: *spec })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> InteractionGraph {
        InteractionGraph::new(2, 3, 1, vec![(0, 0), (0, 1), (1, 1)], vec![(0, 0), (1, 0)]).unwrap()
    }

    #[test]
    fn dedup_and_sort() {
        let g = InteractionGraph::new(2, 3, 1, vec![(1, 2), (0, 0), (0, 0)], vec![(0, 0)]).unwrap();
        assert_eq!(g.user_group_edges(), &[(0, 0), (1, 2)]);
    }

    #[test]
    fn out_of_range_rejected() {
        assert!(InteractionGraph::new(1, 1, 1, vec![(1, 0)], vec![]).is_err());
    }

    #[test]
    fn split_counts_follow_floor_rule() {
        let g = InteractionGraph::new(
            2,
            10,
            1,
            (0..10).map(|g| (0, g)).chain([(1, 3)]).collect(),
            vec![(0, 0)],
        )
        .unwrap();
        let s = split_train_test(&g, 0.3, 0.2, 1).unwrap();
        assert_eq!(s.test[0].len(), 3);
        assert_eq!(s.validation[0].len(), 1);
        assert_eq!(s.train.groups_by_user()[0].len(), 6);
        // floor(0.3 * 1) = 0
        assert!(s.test[1].is_empty());
        assert_eq!(s.train.groups_by_user()[1], vec![3]);
        assert_eq!(s, split_train_test(&g, 0.3, 0.2, 1).unwrap());
    }

    #[test]
    fn split_rejects_bad_ratio() {
        assert!(split_train_test(&toy(), 1.0, 0.0, 0).is_err());
    }

    #[test]
    fn user_view_group_hypergraph_toy() {
        let h = build_user_view_group_hypergraph(&toy());
        assert_eq!(h.num_nodes(), 3);
        assert_eq!(h.num_hyperedges(), 2);
        assert_eq!(h.num_incidences(), 3);
        assert_eq!(h.hyperedge_degrees(), vec![2, 1]);
        assert_eq!(h.node_degrees()[2], 0);
    }

    #[test]
    fn group_view_is_transpose() {
        let g = toy();
        let h = build_user_view_group_hypergraph(&g);
        let ug = build_group_view_user_hypergraph(&g);
        for u in 0..g.num_users {
            assert_eq!(ug.hyperedges_of(u), h.nodes_of(u));
        }
        assert_eq!(ug, h.transpose());
    }

    #[test]
    fn item_hyperedge_members() {
        let ui = build_item_view_user_hypergraph(&toy());
        assert_eq!(ui.nodes_of(0), &[0, 1]);
    }

    #[test]
    fn concat_adds_degrees() {
        let g = toy();
        let a = build_item_view_user_hypergraph(&g);
        let b = build_group_view_user_hypergraph(&g);
        let j = a.concat_hyperedges(&b).unwrap();
        assert_eq!(j.num_hyperedges(), 4);
        for u in 0..2 {
            assert_eq!(j.node_degree(u), a.node_degree(u) + b.node_degree(u));
        }
        assert_eq!(j.nodes_of(1 + 1), b.nodes_of(1));
    }

    #[test]
    fn cap_examples() {
        let g = InteractionGraph::new(
            2,
            6,
            1,
            (0..6).map(|g| (0, g)).chain([(1, 0), (1, 1)]).collect(),
            vec![(0, 0)],
        )
        .unwrap();
        let capped = cap_group_degree(&g, 1, 3).unwrap();
        let by_user = capped.groups_by_user();
        assert_eq!(by_user[0].len(), 1);
        assert_eq!(by_user[1].len(), 1);
        let loose = cap_group_degree(&g, 4, 3).unwrap();
        assert_eq!(loose.groups_by_user()[1], vec![0, 1]);
        assert_eq!(loose.user_item_edges(), g.user_item_edges());
        assert!(cap_group_degree(&g, 0, 3).is_err());
    }

    #[test]
    fn synthetic_zero_noise_stays_in_cluster() {
        let spec = SyntheticSpec {
            num_clusters: 3,
            users_per_cluster: 20,
            groups_per_cluster: 8,
            items_per_cluster: 5,
            in_cluster_prob: 0.3,
            noise_prob: 0.0,
            seed: 11,
        };
        let d = generate_synthetic(&spec).unwrap();
        for &(u, g) in d.graph.user_group_edges() {
            assert_eq!(d.user_cluster(u), d.group_cluster(g));
        }
        for groups in d.graph.groups_by_user() {
            assert!(groups.len() >= 2);
        }
        for items in d.graph.items_by_user() {
            assert!(!items.is_empty());
        }
    }

    #[test]
    fn synthetic_impossible_guarantee() {
        let spec = SyntheticSpec {
            groups_per_cluster: 1,
            noise_prob: 0.0,
            ..SyntheticSpec::default()
        };
        assert!(generate_synthetic(&spec).is_err());
    }

    #[test]
    fn stats_match_published_steam_ratios() {
        let s = GraphStats::from_counts(19_608, 46_587, 3_951, 105_271, 1_209_979);
        assert!((s.avg_groups_per_user - 5.37).abs() < 5e-3);
        assert!((s.avg_users_per_group - 2.26).abs() < 5e-3);
        assert!((s.avg_items_per_user - 61.71).abs() < 5e-3);
        assert!((s.avg_users_per_item - 306.25).abs() < 5e-3);
    }
}
