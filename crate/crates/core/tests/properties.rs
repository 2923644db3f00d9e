//! Randomized structural properties of the graph, convolution and
//! ranking code, each checked against a brute-force or dense oracle.

use groupid::evaluation::{ndcg_at_k, rank_groups, rank_groups_top, recall_at_k};
use groupid::graph::{
    build_group_view_user_hypergraph, build_user_view_group_hypergraph, cap_group_degree,
    split_train_test, IncidenceMatrix, InteractionGraph,
};
use groupid::model::{oracle_hypergraph_conv, oracle_lightgcn_two_layer, thc_layer};
use groupid::sparse::{
    dense_reference_product, hyperedge_gather, hyperedge_gather_adjoint, incidence_to_dense,
    node_scatter, node_scatter_adjoint, DenseMatrix, Normalize,
};
use proptest::collection::vec;
use proptest::prelude::*;

fn incidence() -> impl Strategy<Value = IncidenceMatrix> {
    (1usize..12, 1usize..12).prop_flat_map(|(n, e)| {
        vec(any::<bool>(), n * e).prop_map(move |bits| {
            let pairs = bits
                .iter()
                .enumerate()
                .filter(|(_, &b)| b)
                .map(|(i, _)| (i / e, i % e));
            IncidenceMatrix::from_incidences(n, e, pairs).unwrap()
        })
    })
}

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = DenseMatrix> {
    vec(-3.0f64..3.0, rows * cols).prop_map(move |v| DenseMatrix::from_vec(rows, cols, v).unwrap())
}

fn with_emb(d: usize) -> impl Strategy<Value = (IncidenceMatrix, DenseMatrix, DenseMatrix)> {
    incidence().prop_flat_map(move |inc| {
        let (n, e) = (inc.num_nodes(), inc.num_hyperedges());
        (Just(inc), matrix(n, d), matrix(e, d))
    })
}

fn graph() -> impl Strategy<Value = InteractionGraph> {
    (1usize..10, 2usize..10, 1usize..5).prop_flat_map(|(u, g, i)| {
        (
            vec((0..u, 0..g), 0..30),
            vec((0..u, 0..i), 0..20),
        )
            .prop_map(move |(ug, ui)| InteractionGraph::new(u, g, i, ug, ui).unwrap())
    })
}

fn frob_dot(a: &DenseMatrix, b: &DenseMatrix) -> f64 {
    a.values().iter().zip(b.values()).map(|(x, y)| x * y).sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sparse_products_match_dense((inc, x, c) in with_emb(3)) {
        let h = incidence_to_dense(&inc);
        let g = hyperedge_gather(&inc, &x).unwrap();
        prop_assert!(g.max_abs_diff(&dense_reference_product(&h, &x, Normalize::Hyperedge).unwrap()) < 1e-12);
        let s = node_scatter(&inc, &c).unwrap();
        prop_assert!(s.max_abs_diff(&dense_reference_product(&h, &c, Normalize::Node).unwrap()) < 1e-12);
    }

    #[test]
    fn adjoints_satisfy_inner_product_identity((inc, x, c) in with_emb(2)) {
        // <G x, c> = <x, G* c> and <S c, x> = <c, S* x>
        let gx = hyperedge_gather(&inc, &x).unwrap();
        let gtc = hyperedge_gather_adjoint(&inc, &c).unwrap();
        prop_assert!((frob_dot(&gx, &c) - frob_dot(&x, &gtc)).abs() < 1e-10);
        let sc = node_scatter(&inc, &c).unwrap();
        let stx = node_scatter_adjoint(&inc, &x).unwrap();
        prop_assert!((frob_dot(&sc, &x) - frob_dot(&c, &stx)).abs() < 1e-10);
    }

    #[test]
    fn gather_rows_lie_in_member_hull((inc, x, _c) in with_emb(2)) {
        let g = hyperedge_gather(&inc, &x).unwrap();
        for e in 0..inc.num_hyperedges() {
            let members = inc.nodes_of(e);
            for col in 0..x.cols() {
                let v = g.get(e, col);
                if members.is_empty() {
                    prop_assert_eq!(v, 0.0);
                    continue;
                }
                let lo = members.iter().map(|&n| x.get(n, col)).fold(f64::INFINITY, f64::min);
                let hi = members.iter().map(|&n| x.get(n, col)).fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
            }
        }
    }

    #[test]
    fn reduction_chain((inc, x, _c) in with_emb(4)) {
        let (thc, _) = thc_layer(&x, &inc, 0.0, None).unwrap();
        let hyper = oracle_hypergraph_conv(&x, &inc).unwrap();
        let two = oracle_lightgcn_two_layer(&x, &inc).unwrap();
        prop_assert!(thc.max_abs_diff(&hyper) < 1e-10);
        prop_assert!(hyper.max_abs_diff(&two) < 1e-10);
    }

    #[test]
    fn affine_in_intrinsic((inc, x, c1) in with_emb(3), gamma in 0.0f64..2.0, seed in any::<u64>()) {
        let c2 = {
            let mut m = c1.clone();
            for (i, v) in m.values_mut().iter_mut().enumerate() {
                *v = ((seed.wrapping_add(i as u64) % 97) as f64 - 48.0) / 17.0;
            }
            m
        };
        let mut sum = c1.clone();
        sum.axpy(1.0, &c2).unwrap();
        let zero = DenseMatrix::zeros(c1.rows(), c1.cols());
        let out = |c: &DenseMatrix| thc_layer(&x, &inc, gamma, Some(c)).unwrap().0;
        let mut rhs = out(&c1);
        rhs.axpy(1.0, &out(&c2)).unwrap();
        rhs.axpy(-1.0, &out(&zero)).unwrap();
        prop_assert!(out(&sum).max_abs_diff(&rhs) < 1e-10);
    }

    #[test]
    fn permutation_equivariance((inc, x, c) in with_emb(2), gamma in 0.0f64..1.5, seed in any::<u64>()) {
        let n = inc.num_nodes();
        let e = inc.num_hyperedges();
        // rotations are enough to exercise relabeling
        let pn = |i: usize| (i + seed as usize % n) % n;
        let pe = |j: usize| (j + (seed >> 8) as usize % e) % e;
        let inc_p = IncidenceMatrix::from_incidences(n, e, inc.incidences().map(|(a, b)| (pn(a), pe(b)))).unwrap();
        let mut x_p = DenseMatrix::zeros(n, x.cols());
        for i in 0..n { x_p.row_mut(pn(i)).copy_from_slice(x.row(i)); }
        let mut c_p = DenseMatrix::zeros(e, c.cols());
        for j in 0..e { c_p.row_mut(pe(j)).copy_from_slice(c.row(j)); }
        let (out, _) = thc_layer(&x, &inc, gamma, Some(&c)).unwrap();
        let (out_p, _) = thc_layer(&x_p, &inc_p, gamma, Some(&c_p)).unwrap();
        for i in 0..n {
            for k in 0..x.cols() {
                prop_assert!((out.get(i, k) - out_p.get(pn(i), k)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn incidence_duality(inc in incidence()) {
        let nd: usize = inc.node_degrees().iter().sum();
        let ed: usize = inc.hyperedge_degrees().iter().sum();
        prop_assert_eq!(nd, inc.num_incidences());
        prop_assert_eq!(ed, inc.num_incidences());
        let t = inc.transpose();
        for n in 0..inc.num_nodes() {
            prop_assert_eq!(t.nodes_of(n), inc.hyperedges_of(n));
        }
    }

    #[test]
    fn group_hypergraph_is_transpose_of_user_view(g in graph()) {
        let h = build_user_view_group_hypergraph(&g);
        let ug = build_group_view_user_hypergraph(&g);
        for grp in 0..g.num_groups {
            prop_assert_eq!(ug.nodes_of(grp), h.hyperedges_of(grp));
        }
    }

    #[test]
    fn split_soundness(g in graph(), t in 0.0f64..0.9, v in 0.0f64..0.9, seed in any::<u64>()) {
        let s = split_train_test(&g, t, v, seed).unwrap();
        let train = s.train.groups_by_user();
        for (u, orig) in g.groups_by_user().iter().enumerate() {
            let n = orig.len();
            let nt = (t * n as f64).floor() as usize;
            let nv = (v * (n - nt) as f64).floor() as usize;
            prop_assert_eq!(s.test[u].len(), nt);
            prop_assert_eq!(s.validation[u].len(), nv);
            let mut all: Vec<usize> = train[u].iter().chain(&s.test[u]).chain(&s.validation[u]).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(&all, orig);
        }
        prop_assert_eq!(s.train.user_item_edges(), g.user_item_edges());
    }

    #[test]
    fn cap_never_grows(g in graph(), k in 1usize..5, seed in any::<u64>()) {
        let c = cap_group_degree(&g, k, seed).unwrap();
        let before = g.groups_by_user();
        for (u, after) in c.groups_by_user().iter().enumerate() {
            prop_assert_eq!(after.len(), before[u].len().min(k));
            prop_assert!(after.iter().all(|x| before[u].contains(x)));
        }
        prop_assert_eq!(c.user_item_edges(), g.user_item_edges());
    }

    #[test]
    fn tsv_round_trip(g in graph()) {
        prop_assume!(!g.user_group_edges().is_empty() && !g.user_item_edges().is_empty());
        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("ug.tsv"), dir.path().join("ui.tsv"));
        g.write_tsv(&a, &b).unwrap();
        let counts = groupid::graph::EntityCounts {
            users: Some(g.num_users),
            groups: Some(g.num_groups),
            items: Some(g.num_items),
        };
        let back = groupid::graph::load_interactions_with_counts(&a, &b, counts).unwrap();
        prop_assert_eq!(back, g);
    }
}

/// Exhaustive reference: scores every candidate, sorts by (score desc,
/// id asc) with a stable sort, and computes both metrics directly.
fn brute_force(
    users: &DenseMatrix,
    groups: &DenseMatrix,
    train: &[Vec<usize>],
    test: &[Vec<usize>],
    k: usize,
) -> (Vec<Vec<usize>>, f64, f64) {
    let mut lists = Vec::new();
    let (mut rsum, mut nsum, mut n) = (0.0, 0.0, 0usize);
    for u in 0..users.rows() {
        let mut cands: Vec<(usize, f64)> = (0..groups.rows())
            .filter(|g| !train[u].contains(g))
            .map(|g| (g, (0..users.cols()).map(|c| users.get(u, c) * groups.get(g, c)).sum()))
            .collect();
        cands.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        let list: Vec<usize> = cands.iter().map(|c| c.0).collect();
        if !test[u].is_empty() {
            let top = &list[..k.min(list.len())];
            let hits = top.iter().filter(|g| test[u].contains(g)).count();
            rsum += hits as f64 / test[u].len() as f64;
            let dcg: f64 = top
                .iter()
                .enumerate()
                .filter(|(_, g)| test[u].contains(g))
                .map(|(r, _)| 1.0 / ((r + 2) as f64).log2())
                .sum();
            let idcg: f64 = (0..test[u].len().min(k)).map(|r| 1.0 / ((r + 2) as f64).log2()).sum();
            nsum += dcg / idcg;
            n += 1;
        }
        lists.push(list);
    }
    let avg = |s: f64| if n == 0 { 0.0 } else { s / n as f64 };
    (lists, avg(rsum), avg(nsum))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(20))]

    #[test]
    fn metrics_match_brute_force(seed in any::<u64>(), k in 1usize..25, quantize in any::<bool>()) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let (nu, ng, d) = (50, 50, 4);
        // quantized scores produce many ties
        let val = |rng: &mut rand_chacha::ChaCha8Rng| {
            let v: f64 = rng.gen_range(-1.0..1.0);
            if quantize { (v * 2.0).round() / 2.0 } else { v }
        };
        let users = DenseMatrix::from_vec(nu, d, (0..nu * d).map(|_| val(&mut rng)).collect()).unwrap();
        let groups = DenseMatrix::from_vec(ng, d, (0..ng * d).map(|_| val(&mut rng)).collect()).unwrap();
        let mut train = Vec::new();
        let mut test = Vec::new();
        for _ in 0..nu {
            let mut ids: Vec<usize> = (0..ng).filter(|_| rng.gen_bool(0.15)).collect();
            let cut = rng.gen_range(0..=ids.len());
            let t = ids.split_off(cut);
            train.push(ids);
            test.push(t);
        }
        let (lists, recall, ndcg) = brute_force(&users, &groups, &train, &test, k);
        let full = rank_groups(&users, &groups, &train, &test).unwrap();
        prop_assert_eq!(&full.lists, &lists);
        prop_assert!((recall_at_k(&full, k) - recall).abs() < 1e-12);
        prop_assert!((ndcg_at_k(&full, k) - ndcg).abs() < 1e-12);
        let top = rank_groups_top(&users, &groups, &train, &test, k).unwrap();
        for (a, b) in top.lists.iter().zip(&lists) {
            prop_assert_eq!(a.as_slice(), &b[..k.min(b.len())]);
        }
        prop_assert_eq!(recall_at_k(&top, k).to_bits(), recall_at_k(&full, k).to_bits());
        prop_assert_eq!(ndcg_at_k(&top, k).to_bits(), ndcg_at_k(&full, k).to_bits());
    }
}
