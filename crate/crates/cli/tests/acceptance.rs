//! Acceptance criteria. Each test prints one PASS/FAIL line to stdout
//! (bypassing output capture) and fails when its criterion is not met.
//!
//! Converted Cornell files (`edges.tsv`, `features.tsv`, `labels.tsv`) are
//! used when `WAVEBANK_CORNELL` names a directory holding them.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, OnceLock};
use std::time::Instant;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wavebank::autodiff::grad_check;
use wavebank::eval::{homogeneity_completeness, single_linkage_cluster};
use wavebank::graph::LoadOptions;
use wavebank::model::{corrupt, Model};
use wavebank::synth::{assemble_cycle, ShapeSpec};
use wavebank::wavelet::{build_filters, build_view_set, lazy_diffusion};
use wavebank::{column_normalize, homophily, EncoderMode, Graph, ModelConfig, SparseMatrix};
use wavebank_cli::config::{preset, DatasetSource, EvalMode};
use wavebank_cli::run::{run_experiment, to_json, RunOutput};
use wavebank_cli::ExperimentConfig;

const SEEDS3: [u64; 3] = [0, 1, 2];
const SEEDS5: [u64; 5] = [0, 1, 2, 3, 4];

fn report(id: u32, name: &str, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let line = format!("criterion {id:>2} {verdict} {name}: {detail}\n");
    let mut out = std::io::stdout().lock();
    out.write_all(line.as_bytes()).unwrap();
    out.flush().unwrap();
}

fn skip(id: u32, name: &str, detail: &str) {
    let line = format!("criterion {id:>2} SKIP {name}: {detail}\n");
    std::io::stdout().lock().write_all(line.as_bytes()).unwrap();
}

fn cornell_dir() -> Option<PathBuf> {
    let dir = PathBuf::from(std::env::var_os("WAVEBANK_CORNELL")?);
    dir.join("edges.tsv").exists().then_some(dir)
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

struct Run {
    output: RunOutput,
    metrics_json: String,
    embeddings_tsv: String,
    seconds: f64,
}

impl Run {
    fn execute(cfg: &ExperimentConfig) -> Run {
        let started = Instant::now();
        let output = run_experiment(cfg).unwrap_or_else(|e| panic!("run failed: {e:#}"));
        Run {
            metrics_json: to_json(&output.metrics).unwrap(),
            embeddings_tsv: wavebank::io::format_dense(output.embedding.view()),
            seconds: started.elapsed().as_secs_f64(),
            output,
        }
    }

    fn homogeneity(&self) -> f64 {
        self.output.metrics.clustering.as_ref().unwrap().homogeneity
    }

    fn accuracy(&self) -> f64 {
        self.output.metrics.probe.as_ref().unwrap().accuracy_mean
    }

    fn losses(&self) -> (f64, f64) {
        let t = self.output.metrics.training.as_ref().unwrap();
        (t.initial_loss.unwrap(), t.best_loss.unwrap())
    }
}

/// Training runs shared between criteria, keyed by their configuration echo.
/// The lock is held while training so concurrent tests never repeat a run.
fn cached(cfg: &ExperimentConfig) -> Arc<Run> {
    static RUNS: OnceLock<Mutex<HashMap<String, Arc<Run>>>> = OnceLock::new();
    let key = wavebank_cli::config::echo(cfg).to_string();
    let mut runs = RUNS.get_or_init(Default::default).lock().unwrap_or_else(|e| e.into_inner());
    runs.entry(key).or_insert_with(|| Arc::new(Run::execute(cfg))).clone()
}

fn preset_config(name: &str, seed: u64) -> ExperimentConfig {
    let mut cfg = preset(name).unwrap();
    cfg.model.seed = seed;
    cfg
}

/// The ablation setting: the local adjacency plus `k` wavelet views.
fn ablation_config(name: &str, seed: u64, k: usize, eval: EvalMode) -> ExperimentConfig {
    let mut cfg = preset_config(name, seed);
    cfg.model.k = k;
    cfg.model.include_local_adjacency = true;
    cfg.eval = eval;
    cfg
}

fn erdos_renyi(rng: &mut ChaCha8Rng, n: usize, p: f64) -> Graph {
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.gen_bool(p) {
                edges.push((i, j));
            }
        }
    }
    Graph::from_edges(n, &edges, Array2::zeros((n, 1)), None, LoadOptions::default()).unwrap()
}

fn random_graphs() -> Vec<Graph> {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    (0..50)
        .map(|_| {
            let n = rng.gen_range(10..=200);
            erdos_renyi(&mut rng, n, 0.05)
        })
        .collect()
}

fn max_abs(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    (a - b).iter().fold(0.0, |m, v| m.max(v.abs()))
}

#[test]
fn c01_telescoping_identity() {
    let started = Instant::now();
    let mut worst: f64 = 0.0;
    for g in random_graphs() {
        let t = lazy_diffusion(&column_normalize(g.adjacency()).unwrap(), 0.2).unwrap();
        let dense = t.matrix.to_dense();
        let n = g.n_nodes();
        for k in 1..=5usize {
            let bank = build_filters(&t, k).unwrap();
            let mut sum = Array2::zeros((n, n));
            for phi in &bank.filters {
                sum += &phi.to_dense();
            }
            let mut power = Array2::eye(n);
            for _ in 0..1u32 << (k - 1) {
                power = power.dot(&dense);
            }
            worst = worst.max(max_abs(&sum, &(Array2::eye(n) - power)));
        }
    }
    let secs = started.elapsed().as_secs_f64();
    let pass = worst < 1e-9 && secs < 30.0;
    report(1, "telescoping identity", pass, &format!("max error {worst:.2e} over 50 graphs x K=1..5 in {secs:.1}s"));
    assert!(pass);
}

#[test]
fn c02_operator_stochasticity() {
    let mut graphs = random_graphs();
    graphs.push(Graph::from_edges(6, &[(0, 1), (1, 2)], Array2::zeros((6, 1)), None, LoadOptions::default()).unwrap());
    graphs.push(Graph::from_edges(3, &[], Array2::zeros((3, 1)), None, LoadOptions::default()).unwrap());
    for name in wavebank::synth::PRESET_NAMES {
        for seed in SEEDS3 {
            let params = wavebank::synth::SynthParams::preset(name).unwrap();
            graphs.push(params.generate(seed).unwrap().graph);
        }
    }
    let mut worst: f64 = 0.0;
    let mut isolated = 0;
    for g in &graphs {
        isolated += g.degrees().iter().filter(|&&d| d == 0.0).count();
        for alpha in [0.2, 0.5, 0.9] {
            let t = lazy_diffusion(&column_normalize(g.adjacency()).unwrap(), alpha).unwrap();
            for s in t.matrix.column_sums() {
                worst = worst.max((s - 1.0).abs());
            }
        }
    }
    let pass = worst <= 1e-12 && isolated > 0;
    report(
        2,
        "operator stochasticity",
        pass,
        &format!("max |colsum - 1| {worst:.2e} over {} graphs with {isolated} isolated nodes", graphs.len()),
    );
    assert!(pass);
}

#[test]
fn c03_gradient_fidelity() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let g = assemble_cycle(&[ShapeSpec::House], 7, 0).unwrap().graph;
    assert_eq!(g.n_nodes(), 12);
    // Random attributes and biases keep pre-activations off the PReLU kink.
    let g = g.with_features(Array2::from_shape_fn((12, 4), |_| rng.gen_range(-1.0..1.0))).unwrap();
    let mut errors = Vec::new();
    for mode in [EncoderMode::Shared, EncoderMode::Dedicated] {
        let config = ModelConfig {
            k: 2,
            embed_dim: 4,
            proj_dim: 4,
            encoder_mode: mode,
            ..ModelConfig::default()
        };
        let views = build_view_set(&g, &config).unwrap();
        assert_eq!(views.len(), 2);
        let mut model = Model::new(4, views.len(), &config).unwrap();
        for id in [model.projection.b1, model.projection.b2] {
            model.store.value_mut(id).mapv_inplace(|_| rng.gen_range(-0.5..0.5));
        }
        let (xc, _) = corrupt(g.features(), 1).unwrap();
        let ids: Vec<_> = model.store.ids().collect();
        let frozen = model.clone();
        let err = grad_check(&mut model.store, &ids, 1e-5, |tape, store| {
            let m = Model {
                store: store.clone(),
                ..frozen.clone()
            };
            m.loss(tape, &views.views, g.features(), &xc)
        })
        .unwrap();
        errors.push((mode, err));
    }
    let secs = started.elapsed().as_secs_f64();
    let pass = errors.iter().all(|&(_, e)| e < 1e-4) && secs < 60.0;
    let detail: Vec<String> = errors.iter().map(|(m, e)| format!("{m:?} {e:.2e}")).collect();
    report(3, "gradient fidelity", pass, &format!("max relative error {} in {secs:.1}s", detail.join(", ")));
    assert!(pass);
}

#[test]
fn c04_house_clustering() {
    let runs: Vec<_> = SEEDS3.iter().map(|&s| cached(&preset_config("house", s))).collect();
    let mut hits = 0;
    let mut detail = Vec::new();
    for (seed, run) in SEEDS3.iter().zip(&runs) {
        let c = run.output.metrics.clustering.as_ref().unwrap();
        if c.homogeneity >= 0.99 && c.completeness >= 0.99 && c.silhouette >= 0.95 {
            hits += 1;
        }
        detail.push(format!(
            "seed {seed} h={:.3} c={:.3} s={:.3}",
            c.homogeneity, c.completeness, c.silhouette
        ));
    }
    let secs: f64 = runs.iter().map(|r| r.seconds).sum();
    let pass = hits >= 2 && secs < 600.0;
    report(
        4,
        "House clustering (h>=0.99, c>=0.99, s>=0.95 on 2 of 3 seeds)",
        pass,
        &format!("{hits}/3 seeds; {}; {secs:.0}s", detail.join("; ")),
    );
    assert!(pass);
}

#[test]
fn c05_varied_clustering() {
    let hs: Vec<f64> = SEEDS3.iter().map(|&s| cached(&preset_config("varied", s)).homogeneity()).collect();
    let m = median(hs.clone());
    let pass = m >= 0.80;
    report(5, "Varied clustering (median homogeneity >= 0.80)", pass, &format!("median {m:.3} of {hs:.3?}"));
    assert!(pass);
}

#[test]
fn c06_more_views_help_on_house_perturbed() {
    let score = |k| {
        let hs: Vec<f64> = SEEDS3
            .iter()
            .map(|&s| cached(&ablation_config("house-perturbed", s, k, EvalMode::Cluster)).homogeneity())
            .collect();
        (median(hs.clone()), hs)
    };
    let (one, one_all) = score(1);
    let (three, three_all) = score(3);
    let pass = three > one;
    report(
        6,
        "House-Perturbed K=3 beats K=1 (median homogeneity)",
        pass,
        &format!("K=3 {three:.3} {three_all:.3?} vs K=1 {one:.3} {one_all:.3?}"),
    );
    assert!(pass);
}

#[test]
fn c07_multiview_probe_beats_single_view() {
    let score = |k| {
        let acc: Vec<f64> = SEEDS3
            .iter()
            .map(|&s| cached(&ablation_config("varied-perturbed", s, k, EvalMode::Classify)).accuracy())
            .collect();
        (median(acc.clone()), acc)
    };
    let (one, one_all) = score(1);
    let (three, three_all) = score(3);
    let pass = three - one >= 0.05;
    report(
        7,
        "Varied-Perturbed probe, K=3 beats K=1 by >= 5 points",
        pass,
        &format!("K=3 {three:.3} {three_all:.3?} vs K=1 {one:.3} {one_all:.3?}"),
    );
    if let Some(dir) = cornell_dir() {
        for mode in [EncoderMode::Shared, EncoderMode::Dedicated] {
            let mut cfg = preset_config("structural", 0);
            cfg.dataset = Some(DatasetSource::Directory(dir.clone()));
            cfg.model.encoder_mode = mode;
            let acc = Run::execute(&cfg).accuracy();
            let line = format!("criterion  7 INFO Cornell probe ({mode:?}, stretch goal 0.60): {acc:.3}\n");
            std::io::stdout().lock().write_all(line.as_bytes()).unwrap();
        }
    }
    assert!(pass);
}

#[test]
fn c08_loss_sanity() {
    let ln2 = std::f64::consts::LN_2;
    let mut pass = true;
    let mut detail = Vec::new();
    for name in wavebank_cli::config::PRESET_NAMES {
        let mut near_ln2 = 0;
        let mut decreased = 0;
        for seed in SEEDS5 {
            let mut cfg = preset_config(name, seed);
            if cfg.dataset.is_none() {
                // Real-data presets train on a generated heterophilic graph
                // unless converted Cornell files are supplied.
                cfg.dataset = Some(match cornell_dir() {
                    Some(dir) => DatasetSource::Directory(dir),
                    None => DatasetSource::Preset("varied-perturbed".into()),
                });
                cfg.eval = EvalMode::None;
            }
            let (initial, best) = cached(&cfg).losses();
            near_ln2 += usize::from((initial - ln2).abs() <= 0.15);
            decreased += usize::from(best < initial);
        }
        pass &= near_ln2 == SEEDS5.len() && decreased >= 4;
        detail.push(format!("{name} {near_ln2}/5 near ln2, {decreased}/5 decreased"));
    }
    report(8, "loss sanity", pass, &detail.join("; "));
    assert!(pass);
}

/// Single linkage by Kruskal: drop the `k - 1` heaviest minimum spanning
/// tree edges and number components by smallest member.
fn mst_cut(h: &Array2<f64>, k: usize) -> Vec<usize> {
    let n = h.nrows();
    let mut pairs = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let d = (&h.row(i) - &h.row(j)).mapv(|x| x * x).sum().sqrt();
            pairs.push((d, i, j));
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then((a.1, a.2).cmp(&(b.1, b.2))));
    fn find(p: &mut [usize], x: usize) -> usize {
        if p[x] != x {
            let r = find(p, p[x]);
            p[x] = r;
        }
        p[x]
    }
    let mut parent: Vec<usize> = (0..n).collect();
    let mut tree = Vec::new();
    for &(_, i, j) in &pairs {
        let (a, b) = (find(&mut parent, i), find(&mut parent, j));
        if a != b {
            parent[a.max(b)] = a.min(b);
            tree.push((i, j));
        }
    }
    let mut parent: Vec<usize> = (0..n).collect();
    for &(i, j) in &tree[..n - k] {
        let (a, b) = (find(&mut parent, i), find(&mut parent, j));
        parent[a.max(b)] = a.min(b);
    }
    let mut ids = HashMap::new();
    (0..n)
        .map(|v| {
            let root = find(&mut parent, v);
            let next = ids.len();
            *ids.entry(root).or_insert(next)
        })
        .collect()
}

fn entropy_oracle(truth: &[usize], pred: &[usize]) -> (f64, f64) {
    let n = truth.len() as f64;
    let mut table: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for (&t, &p) in truth.iter().zip(pred) {
        *table.entry((t, p)).or_default() += 1.0;
    }
    let (mut mt, mut mp): (BTreeMap<usize, f64>, BTreeMap<usize, f64>) = Default::default();
    for (&(t, p), &c) in &table {
        *mt.entry(t).or_default() += c;
        *mp.entry(p).or_default() += c;
    }
    let h = |m: &BTreeMap<usize, f64>| -m.values().map(|c| c / n * (c / n).ln()).sum::<f64>();
    let (ht, hp) = (h(&mt), h(&mp));
    let ht_given_p = -table.iter().map(|(&(_, p), c)| c / n * (c / mp[&p]).ln()).sum::<f64>();
    let hp_given_t = -table.iter().map(|(&(t, _), c)| c / n * (c / mt[&t]).ln()).sum::<f64>();
    (
        if ht == 0.0 { 1.0 } else { 1.0 - ht_given_p / ht },
        if hp == 0.0 { 1.0 } else { 1.0 - hp_given_t / hp },
    )
}

fn random_sparse(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| if rng.gen_bool(0.4) { rng.gen_range(-2.0..2.0) } else { 0.0 })
}

#[test]
fn c09_oracle_equivalence() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut linkage_mismatches = 0;
    for _ in 0..100 {
        let n = rng.gen_range(2..=40);
        let d = rng.gen_range(1..=4);
        let h = Array2::from_shape_fn((n, d), |_| rng.gen_range(-5.0..5.0));
        let k = rng.gen_range(1..=n);
        if single_linkage_cluster(h.view(), k).unwrap() != mst_cut(&h, k) {
            linkage_mismatches += 1;
        }
    }

    let mut hc_error: f64 = 0.0;
    for _ in 0..100 {
        let n = rng.gen_range(1..=60);
        let truth: Vec<usize> = (0..n).map(|_| rng.gen_range(0..4)).collect();
        let pred: Vec<usize> = (0..n).map(|_| rng.gen_range(0..5)).collect();
        let (h, c) = homogeneity_completeness(&truth, &pred).unwrap();
        let (oh, oc) = entropy_oracle(&truth, &pred);
        hc_error = hc_error.max((h - oh).abs()).max((c - oc).abs());
    }

    let mut sparse_error: f64 = 0.0;
    for _ in 0..100 {
        let (r, m, c) = (rng.gen_range(1..12), rng.gen_range(1..12), rng.gen_range(1..12));
        let a = random_sparse(&mut rng, r, m);
        let b = random_sparse(&mut rng, m, c);
        let sa = SparseMatrix::from_dense(a.view());
        let sb = SparseMatrix::from_dense(b.view());
        let want = a.dot(&b);
        sparse_error = sparse_error
            .max(max_abs(&sa.matmul(&sb).unwrap().to_dense(), &want))
            .max(max_abs(&sa.spmm(b.view()).unwrap(), &want));
    }

    let pass = linkage_mismatches == 0 && hc_error < 1e-12 && sparse_error < 1e-12;
    report(
        9,
        "oracle equivalence",
        pass,
        &format!(
            "single linkage {}/100 match MST cut; h/c error {hc_error:.1e}; sparse product error {sparse_error:.1e}",
            100 - linkage_mismatches
        ),
    );
    assert!(pass);
}

#[test]
fn c10_determinism() {
    let mut identical = Vec::new();
    for name in ["house", "varied-perturbed"] {
        let cfg = preset_config(name, 0);
        let first = cached(&cfg);
        let second = Run::execute(&cfg);
        identical.push((
            name,
            first.metrics_json == second.metrics_json && first.embeddings_tsv == second.embeddings_tsv,
        ));
    }
    let pass = identical.iter().all(|&(_, same)| same);
    let detail: Vec<String> = identical
        .iter()
        .map(|(n, same)| format!("{n} {}", if *same { "identical" } else { "differs" }))
        .collect();
    report(10, "determinism (metrics.json and embeddings.tsv bytes)", pass, &detail.join("; "));
    assert!(pass);
}

#[test]
fn c11_homophily() {
    let triangle = Graph::from_edges(
        3,
        &[(0, 1), (1, 2), (2, 0)],
        Array2::ones((3, 1)),
        Some(vec![0, 0, 0]),
        LoadOptions::default(),
    )
    .unwrap();
    let value = homophily(&triangle).unwrap().value;
    let mut pass = value == 1.0;
    let mut detail = format!("triangle {value}");
    if let Some(dir) = cornell_dir() {
        let g = wavebank::load_graph(&dir.join("edges.tsv"), &dir.join("features.tsv"), Some(&dir.join("labels.tsv"))).unwrap();
        let cornell = homophily(&g).unwrap().value;
        pass &= (cornell - 0.11).abs() <= 0.02;
        detail.push_str(&format!("; Cornell {cornell:.4}"));
        report(11, "homophily", pass, &detail);
    } else {
        report(11, "homophily", pass, &detail);
        skip(11, "homophily on Cornell", "set WAVEBANK_CORNELL to a converted dataset directory");
    }
    assert!(pass);
}
