//! Acceptance criteria, one PASS/FAIL line each. Exits non-zero if any
//! criterion fails.

use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use groupid::equivalence::{check_thc_vs_hyperconv, check_thc_vs_lightgcn, EquivalenceCase};
use groupid::evaluation::{ndcg_at_k, random_recall_baseline, rank_groups, recall_at_k};
use groupid::graph::{generate_synthetic, Hypergraphs, SyntheticDataset};
use groupid::model::forward;
use groupid::objectives::{bpr_loss, cssl_loss, group_reg_loss, total_loss, TrainTriple};
use groupid::pipeline::{
    analyze_embeddings, coldstart_split, gradcheck_battery_instances, prepare, run_gradcheck,
    train_prepared, Prepared, RunConfig, TrainOutputs, HISTORY_FILE, MANIFEST_FILE, METRICS_FILE,
};
use groupid::sparse::DenseMatrix;
use groupid::training::sample_negatives;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DenseMatrix {
    DenseMatrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn equivalence_battery() -> Outcome {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut hyper, mut lgcn) = (Vec::new(), Vec::new());
    for seed in 0..30u64 {
        let d = [1, 8, 64][seed as usize % 3];
        let density = [0.05, 0.2, 0.5][(seed / 3) as usize % 3];
        let mut case = EquivalenceCase::new(rng.gen_range(2..=40), rng.gen_range(1..=40), density, seed, d);
        case.tolerance = 1e-10;
        hyper.push(check_thc_vs_hyperconv(&case).unwrap());
        lgcn.push(check_thc_vs_lightgcn(&case).unwrap());
    }
    let secs = t0.elapsed().as_secs_f64();
    let max = |v: &[groupid::equivalence::CheckOutcome]| v.iter().map(|o| o.max_deviation).fold(0.0, f64::max);
    let pass_h = hyper.iter().filter(|o| o.passed).count();
    let pass_l = lgcn.iter().filter(|o| o.passed).count();
    outcome(
        pass_h == 30 && pass_l == 30 && secs < 10.0,
        format!(
            "thc_vs_hyperconv {pass_h}/30 (max dev {:.2e}), thc_vs_lightgcn {pass_l}/30 (max dev {:.2e}), tol 1e-10, {secs:.2}s < 10s",
            max(&hyper),
            max(&lgcn)
        ),
    )
}

fn gradient_check() -> Outcome {
    let t0 = Instant::now();
    let instances = gradcheck_battery_instances(0).unwrap();
    let shapes_ok = instances.iter().all(|i| {
        i.graph.num_users <= 5 && i.graph.num_groups == 4 && i.graph.num_items == 6 && i.hp.d == 3
    });
    let cases = run_gradcheck(&instances, 1e-5, 1e-4).unwrap();
    let secs = t0.elapsed().as_secs_f64();
    let worst = cases.iter().map(|c| c.report.max_rel_error).fold(0.0, f64::max);
    let passed = cases.iter().filter(|c| c.report.passed && c.report.max_rel_error < 1e-4).count();
    outcome(
        shapes_ok && cases.len() == 10 && passed == 10 && secs < 60.0,
        format!("{passed}/10 instances, max rel error {worst:.2e} < 1e-4, {secs:.2}s < 60s"),
    )
}

fn loss_identities() -> Outcome {
    let mut notes = Vec::new();
    let mut ok = true;
    let mut rng = ChaCha8Rng::seed_from_u64(3);

    let n = 7;
    let row: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let same = DenseMatrix::from_vec(n, 5, row.iter().cycle().take(n * 5).copied().collect()).unwrap();
    let c = cssl_loss(&same, &same, 0.2).unwrap();
    let want = n as f64 * (n as f64).ln();
    ok &= (c - want).abs() < 1e-9;
    notes.push(format!("cssl |{c:.12} - N ln N| = {:.1e}", (c - want).abs()));

    let single = matrix(1, 5, &mut rng);
    let g = group_reg_loss(&single, 0.2).unwrap();
    ok &= g == 0.0;
    notes.push(format!("group_reg single = {g}"));

    let ties: Vec<(f64, f64)> = (0..9).map(|_| { let s = rng.gen_range(-3.0..3.0); (s, s) }).collect();
    let b = bpr_loss(&ties).unwrap();
    let want = 9.0 * std::f64::consts::LN_2;
    ok &= (b - want).abs() < 1e-12;
    notes.push(format!("bpr ties |diff| = {:.1e}", (b - want).abs()));

    // total identity on a small random full-model instance
    let inst = &gradcheck_battery_instances(5).unwrap()[4];
    let hg = Hypergraphs::build(&inst.graph);
    let triples: Vec<TrainTriple> = sample_negatives(&inst.graph, 0, 1).unwrap();
    let trace = forward(&inst.emb, &hg, &inst.hp).unwrap();
    let l = total_loss(&trace, &triples, &inst.emb, &inst.hp).unwrap();
    let sum = l.bpr + inst.hp.lambda_ssl * (l.cssl + l.group_reg) + inst.hp.lambda_reg * l.l2;
    ok &= (l.total - sum).abs() < 1e-9;
    notes.push(format!("total identity |diff| = {:.1e}", (l.total - sum).abs()));
    outcome(ok, notes.join(", "))
}

/// Exhaustive scorer: every candidate's dot product, stable sort by
/// (score desc, id asc), metrics computed directly.
fn brute_force(
    users: &DenseMatrix,
    groups: &DenseMatrix,
    train: &[Vec<usize>],
    test: &[Vec<usize>],
    k: usize,
) -> (Vec<Vec<usize>>, f64, f64) {
    let mut lists = Vec::new();
    let (mut rs, mut ns, mut n) = (0.0, 0.0, 0usize);
    for u in 0..users.rows() {
        let mut c: Vec<(usize, f64)> = (0..groups.rows())
            .filter(|g| !train[u].contains(g))
            .map(|g| (g, (0..users.cols()).map(|j| users.get(u, j) * groups.get(g, j)).sum()))
            .collect();
        c.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        let list: Vec<usize> = c.into_iter().map(|x| x.0).collect();
        if !test[u].is_empty() {
            let top = &list[..k.min(list.len())];
            rs += top.iter().filter(|g| test[u].contains(g)).count() as f64 / test[u].len() as f64;
            let dcg: f64 = top
                .iter()
                .enumerate()
                .filter(|(_, g)| test[u].contains(g))
                .map(|(r, _)| 1.0 / ((r + 2) as f64).log2())
                .sum();
            let idcg: f64 = (0..test[u].len().min(k)).map(|r| 1.0 / ((r + 2) as f64).log2()).sum();
            ns += dcg / idcg;
            n += 1;
        }
        lists.push(list);
    }
    (lists, rs / n as f64, ns / n as f64)
}

fn metric_oracles() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut ranks_equal = 0;
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let quantize = seed % 2 == 1;
        let mut m = matrix(50, 4, &mut rng);
        let mut g = matrix(50, 4, &mut rng);
        if quantize {
            for x in m.values_mut().iter_mut().chain(g.values_mut().iter_mut()) {
                *x = (*x * 2.0).round() / 2.0;
            }
        }
        let (mut train, mut test) = (Vec::new(), Vec::new());
        for _ in 0..50 {
            let mut ids: Vec<usize> = (0..50).filter(|_| rng.gen_bool(0.15)).collect();
            let t = ids.split_off(rng.gen_range(0..=ids.len()));
            train.push(ids);
            test.push(t);
        }
        let k = rng.gen_range(1..=20);
        let (lists, r, nd) = brute_force(&m, &g, &train, &test, k);
        let got = rank_groups(&m, &g, &train, &test).unwrap();
        if got.lists == lists {
            ranks_equal += 1;
        }
        worst = worst.max((recall_at_k(&got, k) - r).abs()).max((ndcg_at_k(&got, k) - nd).abs());
    }
    outcome(
        ranks_equal == 20 && worst < 1e-12,
        format!("{ranks_equal}/20 instances with identical ranks, max metric diff {worst:.1e} < 1e-12"),
    )
}

/// Criterion-5 configuration: planted benchmark, 70/30 split and the
/// stated defaults.
fn benchmark_sets() -> Vec<String> {
    [
        "synthetic=true",
        "synthetic_clusters=5",
        "synthetic_users_per_cluster=100",
        "synthetic_groups_per_cluster=40",
        "synthetic_items_per_cluster=60",
        "synthetic_in_cluster_prob=0.2",
        "synthetic_noise_prob=0.01",
        "synthetic_seed=7",
        "test_ratio=0.3",
        "d=32",
        "layers=1",
        "gamma=1",
        "beta=0.5",
        "tau_u=0.2",
        "tau_g=0.2",
        "lambda_ssl=0.1",
        "lr=0.05",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

fn variant(prepared: &Prepared, extra: &[&str]) -> RunConfig {
    let sets: Vec<String> = extra.iter().map(|s| s.to_string()).collect();
    prepared.config_with(None, &sets).unwrap()
}

/// Expected Recall@10 of a ranking that knows every planted cluster label:
/// own-cluster candidates first in random order.
fn cluster_oracle(data: &SyntheticDataset, prepared: &Prepared) -> f64 {
    let split = &prepared.split;
    let train = split.train.groups_by_user();
    let (mut sum, mut n) = (0.0, 0);
    for u in 0..split.train.num_users {
        let t = &split.test[u];
        if t.is_empty() {
            continue;
        }
        let c = data.user_cluster(u);
        let own = (0..split.train.num_groups)
            .filter(|g| data.group_cluster(*g) == c && train[u].binary_search(g).is_err())
            .count() as f64;
        let hits = t.iter().filter(|g| data.group_cluster(**g) == c).count() as f64;
        sum += (10.0 / own).min(1.0) * hits / t.len() as f64;
        n += 1;
    }
    sum / n as f64
}

struct Benchmark {
    prepared: Prepared,
    full: TrainOutputs,
    train_eval_secs: f64,
}

fn synthetic_end_to_end(root: &Path) -> (Outcome, Benchmark) {
    let mut sets = benchmark_sets();
    sets.push(format!("output_dir={:?}", root.join("prepared").display().to_string()));
    prepare(&RunConfig::layered(None, None, &sets).unwrap()).unwrap();
    let prepared = Prepared::load(&root.join("prepared")).unwrap();
    let data = generate_synthetic(&prepared.config.synthetic_spec()).unwrap();

    let run = |name: &str, extra: &[&str]| {
        let out = format!("output_dir={:?}", root.join(name).display().to_string());
        let mut e: Vec<&str> = extra.to_vec();
        e.push(&out);
        let t0 = Instant::now();
        let o = train_prepared(&prepared, &variant(&prepared, &e)).unwrap();
        (o, t0.elapsed().as_secs_f64())
    };
    let (full, secs) = run("full", &[]);
    let (no_thc, _) = run("no_thc", &["disable_thc=true"]);
    let (no_ssl, _) = run("no_ssl", &["disable_cssl=true", "disable_group_reg=true"]);

    let split = &prepared.split;
    let baseline = random_recall_baseline(split.train.num_groups, &split.train.groups_by_user(), &split.test, 10);
    let r = |o: &TrainOutputs| o.test_metrics.recall(10).unwrap();
    let (rf, rt, rs) = (r(&full), r(&no_thc), r(&no_ssl));
    let ratio = rf / baseline;
    let a = ratio >= 5.0;
    let b = rf >= rt && rf >= rs;
    let c = secs < 120.0;
    let oracle = cluster_oracle(&data, &prepared);
    let pf = |p: bool| if p { "PASS" } else { "FAIL" };
    let detail = format!(
        "(a) {} Recall@10 {rf:.4} = {ratio:.2}x random {baseline:.4} (need 5x; cluster-label oracle reaches {oracle:.4} = {:.2}x); \
         (b) {} full {rf:.4} vs disable_thc {rt:.4}, disable-all-SSL {rs:.4}; \
         (c) {} train+eval {secs:.1}s < 120s",
        pf(a),
        oracle / baseline,
        pf(b),
        pf(c)
    );
    (
        outcome(a && b && c, detail),
        Benchmark {
            prepared,
            full,
            train_eval_secs: secs,
        },
    )
}

fn cold_start(bench: &Benchmark) -> Outcome {
    let p = &bench.prepared;
    let full = coldstart_split(&p.split, &variant(p, &[]), &[1]).unwrap();
    let plain = coldstart_split(
        &p.split,
        &variant(p, &["disable_thc=true", "disable_cssl=true", "disable_group_reg=true"]),
        &[1],
    )
    .unwrap();
    let rf = full.retention(1, 10).unwrap();
    let rp = plain.retention(1, 10).unwrap();
    let recall = |t: &groupid::pipeline::ColdStartTable, k: Option<usize>| {
        let row = match k {
            Some(k) => t.at(k),
            None => t.uncapped(),
        };
        row.unwrap().metrics.recall(10).unwrap()
    };
    outcome(
        rf >= 0.6 && rf > rp,
        format!(
            "k=1 retains {:.1}% ({:.4}/{:.4}) >= 60%; plain variant retains {:.1}% ({:.4}/{:.4})",
            100.0 * rf,
            recall(&full, Some(1)),
            recall(&full, None),
            100.0 * rp,
            recall(&plain, Some(1)),
            recall(&plain, None)
        ),
    )
}

fn analysis_direction(bench: &Benchmark) -> Outcome {
    let ck = &bench.full.checkpoint;
    let a = analyze_embeddings(&bench.prepared.split, &ck.embeddings, &ck.hyperparams, 100).unwrap();
    let p = a.relatedness.pearson;
    outcome(
        a.relatedness.bins.len() == 100 && p.is_some_and(|p| p > 0.0),
        format!("Pearson {p:?} over {} bins ({} group pairs)", a.relatedness.bins.len(), a.relatedness.num_pairs),
    )
}

fn determinism(root: &Path, bench: &Benchmark) -> Outcome {
    let p = &bench.prepared;
    let again = root.join("full_again");
    let sets = [format!("output_dir={:?}", again.display().to_string())];
    train_prepared(p, &p.config_with(None, &sets).unwrap()).unwrap();
    let files = [MANIFEST_FILE, HISTORY_FILE, METRICS_FILE];
    let same: Vec<bool> = files
        .iter()
        .map(|f| fs::read(root.join("full").join(f)).unwrap() == fs::read(again.join(f)).unwrap())
        .collect();
    outcome(
        same.iter().all(|&s| s),
        files
            .iter()
            .zip(&same)
            .map(|(f, s)| format!("{f} {}", if *s { "identical" } else { "DIFFERS" }))
            .collect::<Vec<_>>()
            .join(", "),
    )
}

fn main() -> ExitCode {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let mut results: Vec<(u8, &str, Outcome)> = vec![
        (1, "equivalence battery", equivalence_battery()),
        (2, "gradient correctness", gradient_check()),
        (3, "loss identities", loss_identities()),
        (4, "metric oracles", metric_oracles()),
    ];
    let (five, bench) = synthetic_end_to_end(root);
    results.push((5, "synthetic end-to-end", five));
    results.push((6, "cold-start direction", cold_start(&bench)));
    results.push((7, "analysis direction", analysis_direction(&bench)));
    results.push((8, "determinism", determinism(root, &bench)));

    println!();
    for (id, name, o) in &results {
        println!("{} criterion {id} ({name}): {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
    }
    let failed = results.iter().filter(|r| !r.2.pass).count();
    println!(
        "\nacceptance: {} passed, {failed} failed (benchmark train+eval {:.1}s)",
        results.len() - failed,
        bench.train_eval_secs
    );
    if failed > 0 {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
