//! Full-ranking evaluation, cross-view consistency and the group
//! relatedness analysis.

use std::cmp::Ordering;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{dot, score_row};
use crate::objectives::{cosine_sim, COSINE_EPS};
use crate::sparse::DenseMatrix;

/// Per-user candidate lists, best first, plus the held-out positives.
#[derive(Debug, Clone, PartialEq)]
pub struct RankingResult {
    /// Candidate groups ordered by descending score, ties by ascending id.
    /// Truncated to `depth` entries when `depth` is set.
    pub lists: Vec<Vec<usize>>,
    pub positives: Vec<Vec<usize>>,
    pub depth: Option<usize>,
}

/// Descending score, then ascending id. `+ 0.0` folds -0.0 into +0.0 so
/// signed zeros tie.
#[inline]
fn rank_order(a: &(f64, usize), b: &(f64, usize)) -> Ordering {
    (b.0 + 0.0).total_cmp(&(a.0 + 0.0)).then(a.1.cmp(&b.1))
}

fn candidates(
    users: &DenseMatrix,
    groups: &DenseMatrix,
    u: usize,
    train_positives: &[usize],
) -> Vec<(f64, usize)> {
    score_row(users, groups, u)
        .into_iter()
        .enumerate()
        .filter(|(g, _)| train_positives.binary_search(g).is_err())
        .map(|(g, s)| (s, g))
        .collect()
}

/// Ranks every non-training group for every user.
///
/// `train_positives[u]` and `positives[u]` must be sorted.
pub fn rank_groups(
    users: &DenseMatrix,
    groups: &DenseMatrix,
    train_positives: &[Vec<usize>],
    positives: &[Vec<usize>],
) -> Result<RankingResult> {
    rank_groups_impl(users, groups, train_positives, positives, None)
}

/// Like [`rank_groups`] but keeps only the first `depth` entries per user.
/// Metrics at `K <= depth` are identical to the full ranking.
pub fn rank_groups_top(
    users: &DenseMatrix,
    groups: &DenseMatrix,
    train_positives: &[Vec<usize>],
    positives: &[Vec<usize>],
    depth: usize,
) -> Result<RankingResult> {
    rank_groups_impl(users, groups, train_positives, positives, Some(depth))
}

/// The `k` best non-excluded groups for user `u` with their scores, in
/// ranking order. `exclude` must be sorted.
pub fn top_groups(
    users: &DenseMatrix,
    groups: &DenseMatrix,
    u: usize,
    exclude: &[usize],
    k: usize,
) -> Vec<(usize, f64)> {
    let mut c = candidates(users, groups, u, exclude);
    if k < c.len() {
        if k > 0 {
            c.select_nth_unstable_by(k - 1, rank_order);
        }
        c.truncate(k);
    }
    c.sort_unstable_by(rank_order);
    c.into_iter().map(|(s, g)| (g, s)).collect()
}

fn rank_groups_impl(
    users: &DenseMatrix,
    groups: &DenseMatrix,
    train_positives: &[Vec<usize>],
    positives: &[Vec<usize>],
    depth: Option<usize>,
) -> Result<RankingResult> {
    if users.cols() != groups.cols() {
        return Err(Error::shape("rank_groups", users.cols(), groups.cols()));
    }
    if train_positives.len() != users.rows() || positives.len() != users.rows() {
        return Err(Error::CountMismatch(format!(
            "{} users but {} train / {} target lists",
            users.rows(),
            train_positives.len(),
            positives.len()
        )));
    }
    let lists = (0..users.rows())
        .map(|u| {
            let mut c = candidates(users, groups, u, &train_positives[u]);
            match depth {
                Some(k) if k < c.len() => {
                    if k > 0 {
                        c.select_nth_unstable_by(k - 1, rank_order);
                    }
                    c.truncate(k);
                    c.sort_unstable_by(rank_order);
                }
                _ => c.sort_unstable_by(rank_order),
            }
            c.into_iter().map(|(_, g)| g).collect()
        })
        .collect();
    Ok(RankingResult {
        lists,
        positives: positives.to_vec(),
        depth,
    })
}

fn check_depth(r: &RankingResult, k: usize) {
    if let Some(depth) = r.depth {
        assert!(k <= depth, "metric cutoff {k} exceeds ranking depth {depth}");
    }
}

fn hits_in_top<'a>(list: &'a [usize], positives: &'a [usize], k: usize) -> impl Iterator<Item = usize> + 'a {
    list.iter()
        .take(k)
        .enumerate()
        .filter(move |(_, g)| positives.binary_search(g).is_ok())
        .map(|(p, _)| p)
}

/// Mean over users with at least one positive of `|top-K ∩ P| / |P|`.
pub fn recall_at_k(r: &RankingResult, k: usize) -> f64 {
    check_depth(r, k);
    mean_over_evaluated(r, |list, pos| {
        hits_in_top(list, pos, k).count() as f64 / pos.len() as f64
    })
}

/// Binary-relevance NDCG with `1/log2(p + 1)` discounts, 1-based `p`.
pub fn ndcg_at_k(r: &RankingResult, k: usize) -> f64 {
    check_depth(r, k);
    mean_over_evaluated(r, |list, pos| {
        let dcg: f64 = hits_in_top(list, pos, k)
            .map(|p| 1.0 / ((p + 2) as f64).log2())
            .sum();
        let idcg: f64 = (0..k.min(pos.len()))
            .map(|p| 1.0 / ((p + 2) as f64).log2())
            .sum();
        dcg / idcg
    })
}

fn mean_over_evaluated(r: &RankingResult, f: impl Fn(&[usize], &[usize]) -> f64) -> f64 {
    let (sum, n) = r
        .lists
        .iter()
        .zip(&r.positives)
        .filter(|(_, p)| !p.is_empty())
        .fold((0.0, 0usize), |(s, n), (l, p)| (s + f(l, p), n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

pub fn evaluated_users(r: &RankingResult) -> usize {
    r.positives.iter().filter(|p| !p.is_empty()).count()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricAtK {
    pub k: usize,
    pub recall: f64,
    pub ndcg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub metrics: Vec<MetricAtK>,
    pub evaluated_users: usize,
    /// Averaging unit for recall and NDCG.
    pub averaging: String,
}

impl MetricsReport {
    pub fn from_ranking(r: &RankingResult, k_list: &[usize]) -> Self {
        Self {
            metrics: k_list
                .iter()
                .map(|&k| MetricAtK {
                    k,
                    recall: recall_at_k(r, k),
                    ndcg: ndcg_at_k(r, k),
                })
                .collect(),
            evaluated_users: evaluated_users(r),
            averaging: "per_user".into(),
        }
    }

    pub fn recall(&self, k: usize) -> Option<f64> {
        self.metrics.iter().find(|m| m.k == k).map(|m| m.recall)
    }

    pub fn ndcg(&self, k: usize) -> Option<f64> {
        self.metrics.iter().find(|m| m.k == k).map(|m| m.ndcg)
    }
}

/// Ranks to the largest cutoff and reports every `k` in `k_list`.
pub fn evaluate(
    users: &DenseMatrix,
    groups: &DenseMatrix,
    train_positives: &[Vec<usize>],
    positives: &[Vec<usize>],
    k_list: &[usize],
) -> Result<MetricsReport> {
    let depth = k_list.iter().copied().max().unwrap_or(0);
    let r = rank_groups_top(users, groups, train_positives, positives, depth)?;
    Ok(MetricsReport::from_ranking(&r, k_list))
}

/// Expected Recall@K of a uniformly random ranking: `min(1, K / |candidates|)`
/// per evaluated user, averaged.
pub fn random_recall_baseline(
    num_groups: usize,
    train_positives: &[Vec<usize>],
    positives: &[Vec<usize>],
    k: usize,
) -> f64 {
    let (sum, n) = train_positives
        .iter()
        .zip(positives)
        .filter(|(_, p)| !p.is_empty())
        .fold((0.0, 0usize), |(s, n), (t, _)| {
            let cands = num_groups - t.len();
            (s + (k as f64 / cands as f64).min(1.0), n + 1)
        });
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Ratio of mean same-user cross-view similarity to mean item-view
/// similarity over all ordered user pairs (self pairs included).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Consistency {
    pub numerator: f64,
    pub denominator: f64,
    /// `None` when the denominator is too close to zero.
    pub value: Option<f64>,
}

pub fn consistency(user_item: &DenseMatrix, user_group: &DenseMatrix) -> Result<Consistency> {
    if !user_item.same_shape(user_group) || user_item.rows() == 0 {
        return Err(Error::shape(
            "consistency",
            format!("{}x{} (non-empty)", user_item.rows(), user_item.cols()),
            format!("{}x{}", user_group.rows(), user_group.cols()),
        ));
    }
    let n = user_item.rows() as f64;
    let numerator = (0..user_item.rows())
        .map(|u| cosine_sim(user_item.row(u), user_group.row(u)))
        .sum::<f64>()
        / n;
    // Σ_{u,v} cos(a_u, a_v) = ‖Σ_u â_u‖²
    let mut acc = vec![0.0; user_item.cols()];
    for u in 0..user_item.rows() {
        let row = user_item.row(u);
        let nr = dot(row, row).sqrt();
        if nr < COSINE_EPS {
            continue;
        }
        for (a, x) in acc.iter_mut().zip(row) {
            *a += x / nr;
        }
    }
    let denominator = dot(&acc, &acc) / (n * n);
    Ok(Consistency {
        numerator,
        denominator,
        value: (denominator.abs() >= 1e-9).then(|| numerator / denominator),
    })
}

/// Jaccard overlap of two sorted member lists.
pub fn common_user_ratio(a: &[usize], b: &[usize]) -> f64 {
    let (mut i, mut j, mut inter) = (0, 0, 0usize);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            Ordering::Less => i += 1,
            Ordering::Greater => j += 1,
            Ordering::Equal => {
                inter += 1;
                i += 1;
                j += 1;
            }
        }
    }
    let union = a.len() + b.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelatednessBin {
    pub relatedness: f64,
    pub common_user_ratio: f64,
    pub pairs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelatednessAnalysis {
    pub bins: Vec<RelatednessBin>,
    pub num_pairs: usize,
    pub requested_bins: usize,
    /// `None` when either binned axis has zero variance.
    pub pearson: Option<f64>,
}

impl RelatednessAnalysis {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        writeln!(buf, "bin,relatedness,common_user_ratio,pairs").expect("vec write");
        for (i, b) in self.bins.iter().enumerate() {
            writeln!(buf, "{i},{},{},{}", b.relatedness, b.common_user_ratio, b.pairs)
                .expect("vec write");
        }
        std::fs::write(path, buf).map_err(|e| Error::io(path, e))
    }
}

pub fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let n = xs.len();
    if n < 2 || ys.len() != n {
        return None;
    }
    let mx = xs.iter().sum::<f64>() / n as f64;
    let my = ys.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        None
    } else {
        Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
    }
}

/// Sorts all pairs of non-empty groups by embedding cosine similarity,
/// cuts them into `num_bins` contiguous bins (the last one takes the
/// remainder) and correlates bin means of similarity and Jaccard overlap.
pub fn group_relatedness_analysis(
    groups: &DenseMatrix,
    memberships: &[Vec<usize>],
    num_bins: usize,
) -> Result<RelatednessAnalysis> {
    if memberships.len() != groups.rows() {
        return Err(Error::CountMismatch(format!(
            "{} group embeddings but {} member lists",
            groups.rows(),
            memberships.len()
        )));
    }
    if num_bins == 0 {
        return Err(Error::InvalidParam("num_bins must be >= 1".into()));
    }
    let live: Vec<usize> = (0..groups.rows())
        .filter(|&g| !memberships[g].is_empty())
        .collect();
    if live.len() < 2 {
        return Err(Error::InvalidParam(
            "relatedness analysis needs at least two groups with members".into(),
        ));
    }
    let mut pairs = Vec::with_capacity(live.len() * (live.len() - 1) / 2);
    for (i, &a) in live.iter().enumerate() {
        for &b in &live[i + 1..] {
            pairs.push((
                cosine_sim(groups.row(a), groups.row(b)),
                common_user_ratio(&memberships[a], &memberships[b]),
            ));
        }
    }
    pairs.sort_by(|x, y| x.0.total_cmp(&y.0));
    let bins_used = if pairs.len() < num_bins {
        log::warn!(
            "only {} group pairs for {num_bins} bins; using one bin per pair",
            pairs.len()
        );
        pairs.len()
    } else {
        num_bins
    };
    let size = pairs.len() / bins_used;
    let bins: Vec<RelatednessBin> = (0..bins_used)
        .map(|b| {
            let end = if b + 1 == bins_used { pairs.len() } else { (b + 1) * size };
            let chunk = &pairs[b * size..end];
            let n = chunk.len() as f64;
            RelatednessBin {
                relatedness: chunk.iter().map(|p| p.0).sum::<f64>() / n,
                common_user_ratio: chunk.iter().map(|p| p.1).sum::<f64>() / n,
                pairs: chunk.len(),
            }
        })
        .collect();
    let xs: Vec<f64> = bins.iter().map(|b| b.relatedness).collect();
    let ys: Vec<f64> = bins.iter().map(|b| b.common_user_ratio).collect();
    Ok(RelatednessAnalysis {
        pearson: pearson(&xs, &ys),
        num_pairs: pairs.len(),
        requested_bins: num_bins,
        bins,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ranking(lists: Vec<Vec<usize>>, positives: Vec<Vec<usize>>) -> RankingResult {
        RankingResult {
            lists,
            positives,
            depth: None,
        }
    }

    #[test]
    fn recall_examples() {
        let all: Vec<usize> = (0..20).collect();
        let r = ranking(vec![all.clone()], vec![vec![0, 3]]);
        assert_eq!(recall_at_k(&r, 10), 1.0);
        let r = ranking(vec![all.clone()], vec![vec![15]]);
        assert_eq!(recall_at_k(&r, 10), 0.0);
        // positives at ranks 1 and 15, second user at rank 3
        let r = ranking(vec![all.clone(), all.clone()], vec![vec![0, 14], vec![2]]);
        assert!((recall_at_k(&r, 10) - 0.75).abs() < 1e-15);
    }

    #[test]
    fn ndcg_examples() {
        let all: Vec<usize> = (0..20).collect();
        let r = ranking(vec![all.clone()], vec![vec![0, 1, 2]]);
        assert!((ndcg_at_k(&r, 10) - 1.0).abs() < 1e-15);
        let r = ranking(vec![all.clone()], vec![vec![1]]);
        assert!((ndcg_at_k(&r, 10) - 0.630_929_753_571_457_5).abs() < 1e-12);
        let r = ranking(vec![all], vec![vec![12]]);
        assert_eq!(ndcg_at_k(&r, 10), 0.0);
    }

    #[test]
    fn users_without_positives_excluded() {
        let r = ranking(vec![vec![0, 1], vec![1, 0]], vec![vec![0], vec![]]);
        assert_eq!(recall_at_k(&r, 1), 1.0);
        assert_eq!(evaluated_users(&r), 1);
    }

    #[test]
    fn ties_break_by_id() {
        let users = DenseMatrix::from_rows(&[vec![1.0]]).unwrap();
        let groups = DenseMatrix::from_rows(&[vec![0.5], vec![2.0], vec![0.5]]).unwrap();
        let r = rank_groups(&users, &groups, &[vec![]], &[vec![]]).unwrap();
        assert_eq!(r.lists[0], vec![1, 0, 2]);
        let r = rank_groups(&users, &groups, &[vec![0, 1]], &[vec![]]).unwrap();
        assert_eq!(r.lists[0], vec![2]);
    }

    #[test]
    fn consistency_examples() {
        let same = DenseMatrix::filled(3, 2, 1.0);
        assert!((consistency(&same, &same).unwrap().value.unwrap() - 1.0).abs() < 1e-12);
        let ortho = DenseMatrix::from_rows(&[
            vec![1.0, 0.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0, 0.0],
            vec![0.0, 0.0, 1.0, 0.0],
            vec![0.0, 0.0, 0.0, 1.0],
        ])
        .unwrap();
        let c = consistency(&ortho, &ortho).unwrap();
        assert!((c.value.unwrap() - 4.0).abs() < 1e-12);
        let z = DenseMatrix::zeros(2, 2);
        assert_eq!(consistency(&z, &z).unwrap().value, None);
    }

    #[test]
    fn jaccard_examples() {
        assert_eq!(common_user_ratio(&[1, 2, 3], &[1, 2, 3]), 1.0);
        assert_eq!(common_user_ratio(&[1, 2], &[3, 4]), 0.0);
        assert!((common_user_ratio(&[1, 2, 3], &[2, 3, 4]) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn bins_shrink_to_pair_count() {
        let g = DenseMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]]).unwrap();
        let members = vec![vec![0], vec![1], vec![0, 1]];
        let a = group_relatedness_analysis(&g, &members, 100).unwrap();
        assert_eq!(a.bins.len(), 3);
        assert_eq!(a.num_pairs, 3);
        assert!(group_relatedness_analysis(&g, &[vec![0], vec![], vec![]], 10).is_err());
    }

    #[test]
    fn pearson_bounds() {
        assert!((pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!((pearson(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-15);
        assert_eq!(pearson(&[1.0, 1.0], &[0.0, 1.0]), None);
    }
}
