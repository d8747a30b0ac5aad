use std::ffi::OsString;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;
use wavebank::eval::pca2;
use wavebank::io::format_dense;
use wavebank::model::{Model, SavedParams};
use wavebank::wavelet::{build_filters, build_view_set, filter_stats, lazy_diffusion, FilterStats, ViewStats};
use wavebank::{column_normalize, homophily, EncoderMode, SparseMatrix};

use crate::config::{self, DatasetSource, EvalMode, ExperimentConfig};
use crate::run::{
    evaluate, format_pca, load_dataset, read_embeddings, read_label_file, run_experiment, synthetic, to_json,
    write_graph, write_run, ClusterMetrics, DatasetSummary, OutputDir, ProbeMetrics,
};

#[derive(Parser, Debug)]
#[command(name = "wavebank", version, about = "Multi-resolution diffusion-wavelet contrastive graph embeddings")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum EncoderArg {
    Shared,
    Dedicated,
}

impl From<EncoderArg> for EncoderMode {
    fn from(e: EncoderArg) -> Self {
        match e {
            EncoderArg::Shared => EncoderMode::Shared,
            EncoderArg::Dedicated => EncoderMode::Dedicated,
        }
    }
}

#[derive(Args, Debug, Default)]
struct RunArgs {
    /// JSON experiment configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Named preset applied before the configuration file.
    #[arg(long)]
    preset: Option<String>,
    /// Dataset directory (edges.tsv, features.tsv, labels.tsv) or synthetic preset name.
    #[arg(long)]
    dataset: Option<String>,
    /// Seed for data generation, initialization, corruption and splits
    #[arg(long)]
    seed: Option<u64>,
    /// One GCN shared by all views or one per view
    #[arg(long, value_enum)]
    encoder: Option<EncoderArg>,
    /// Output directory
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic benchmark as TSV files.
    Synth {
        #[arg(long, default_value = "house")]
        preset: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Report statistics of the diffusion-wavelet filters and views.
    Filters {
        #[command(flatten)]
        run: RunArgs,
        /// Number of wavelet filters
        #[arg(long)]
        k: Option<usize>,
    },
    /// Train the encoder and write embeddings, parameters and metrics.
    Train {
        #[command(flatten)]
        run: RunArgs,
        /// Number of wavelet filters
        #[arg(long)]
        k: Option<usize>,
        /// Evaluation applied to the trained embeddings
        #[arg(long, value_enum)]
        eval: Option<EvalMode>,
    },
    /// Recompute embeddings from saved parameters.
    Embed {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        params: PathBuf,
    },
    /// Single-linkage clustering scores of saved embeddings.
    EvalCluster {
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Logistic-probe accuracy of saved embeddings over ten random splits.
    EvalClassify {
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Edge homophily of a labelled graph.
    Homophily {
        #[command(flatten)]
        run: RunArgs,
    },
    /// First two principal components of saved embeddings.
    Pca {
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sweep the number of wavelet views on top of the local adjacency.
    Ablate {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated view counts.
        #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5")]
        k: Vec<usize>,
        /// Evaluation applied to each trained embedding
        #[arg(long, value_enum)]
        eval: Option<EvalMode>,
    },
}

/// Parses `argv` (program name first), runs the subcommand and returns the
/// process exit status.
pub fn run_command<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

fn resolve(args: &RunArgs, k: Option<usize>, eval: Option<EvalMode>) -> Result<ExperimentConfig> {
    let mut cfg = match &args.config {
        Some(path) => config::load_config(path, args.preset.as_deref())
            .with_context(|| format!("loading configuration {}", path.display()))?,
        None => config::from_value(serde_json::json!({}), args.preset.as_deref())?,
    };
    if let Some(d) = &args.dataset {
        let path = Path::new(d);
        cfg.dataset = Some(if !path.exists() && wavebank::synth::SynthParams::preset(d).is_some() {
            DatasetSource::Preset(d.clone())
        } else {
            DatasetSource::Directory(path.to_path_buf())
        });
    }
    if let Some(seed) = args.seed {
        cfg.model.seed = seed;
    }
    if let Some(e) = args.encoder {
        cfg.model.encoder_mode = e.into();
    }
    if let Some(k) = k {
        cfg.model.k = k;
    }
    if let Some(e) = eval {
        cfg.eval = e;
    }
    config::revalidate(&cfg)?;
    Ok(cfg)
}

fn out_dir(args: &RunArgs, cfg: &ExperimentConfig) -> Result<PathBuf> {
    args.out
        .clone()
        .or_else(|| cfg.out_dir.clone())
        .context("no output directory; pass --out DIR or set \"out_dir\"")
}

fn worker_count() -> usize {
    match std::env::var("WAVEBANK_THREADS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => n,
            _ => {
                log::warn!("ignoring WAVEBANK_THREADS={v:?}");
                default_workers()
            }
        },
        Err(_) => default_workers(),
    }
}

fn default_workers() -> usize {
    std::thread::available_parallelism().map_or(1, usize::from)
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Synth { preset, seed, out } => synth(&preset, seed, &out),
        Command::Filters { run, k } => filters(&run, k),
        Command::Train { run, k, eval } => {
            let cfg = resolve(&run, k, eval)?;
            let dir = out_dir(&run, &cfg)?;
            let mut out = OutputDir::create(&dir)?;
            let result = run_experiment(&cfg)?;
            write_run(&mut out, &result)?;
            print_summary(&result.metrics.clustering, &result.metrics.probe);
            out.finish("train", cfg.model.seed, result.generation)
        }
        Command::Embed { run, params } => embed(&run, &params),
        Command::EvalCluster { embeddings, labels, out } => {
            let h = read_embeddings(&embeddings)?;
            let y = read_label_file(&labels, h.nrows())?;
            let eval = evaluate(&h, Some(&y), EvalMode::Cluster, 0)?;
            report("eval-cluster", out.as_deref(), 0, &EvalReport::from(eval))
        }
        Command::EvalClassify { embeddings, labels, seed, out } => {
            let h = read_embeddings(&embeddings)?;
            let y = read_label_file(&labels, h.nrows())?;
            let eval = evaluate(&h, Some(&y), EvalMode::Classify, seed)?;
            report("eval-classify", out.as_deref(), seed, &EvalReport::from(eval))
        }
        Command::Homophily { run } => {
            let cfg = resolve(&run, None, None)?;
            let data = load_dataset(cfg.dataset.as_ref(), cfg.model.seed)?;
            let score = homophily(&data.graph)?;
            report("homophily", run.out.as_deref(), cfg.model.seed, &score)
        }
        Command::Pca { embeddings, labels, out } => {
            let h = read_embeddings(&embeddings)?;
            let y = labels.map(|p| read_label_file(&p, h.nrows())).transpose()?;
            let mut dir = OutputDir::create(&out)?;
            dir.write("pca.tsv", &format_pca(&pca2(h.view())?, y.as_deref()))?;
            dir.finish("pca", 0, None)
        }
        Command::Ablate { run, k, eval } => ablate(&run, &k, eval),
    }
}

fn print_summary(clustering: &Option<ClusterMetrics>, probe: &Option<ProbeMetrics>) {
    if let Some(c) = clustering {
        println!(
            "homogeneity {:.4}  completeness {:.4}  silhouette {:.4}",
            c.homogeneity, c.completeness, c.silhouette
        );
    }
    if let Some(p) = probe {
        println!("accuracy {:.4} ± {:.4}", p.accuracy_mean, p.accuracy_std);
    }
}

#[derive(Serialize)]
struct EvalReport {
    clustering: Option<ClusterMetrics>,
    probe: Option<ProbeMetrics>,
}

impl From<crate::run::Evaluation> for EvalReport {
    fn from(e: crate::run::Evaluation) -> Self {
        EvalReport {
            clustering: e.clustering,
            probe: e.probe,
        }
    }
}

/// Prints `value` as JSON and, with an output directory, writes it as
/// `metrics.json` alongside a manifest.
fn report<T: Serialize>(command: &str, out: Option<&Path>, seed: u64, value: &T) -> Result<()> {
    print!("{}", to_json(value)?);
    if let Some(dir) = out {
        let mut dir = OutputDir::create(dir)?;
        dir.write_json("metrics.json", value)?;
        dir.finish(command, seed, None)?;
    }
    Ok(())
}

fn synth(preset: &str, seed: u64, out: &Path) -> Result<()> {
    let (params, ds) = synthetic(&DatasetSource::Preset(preset.to_string()), seed)?.expect("preset source");
    let mut dir = OutputDir::create(out)?;
    write_graph(&mut dir, &ds.graph)?;
    println!(
        "{preset}: {} nodes, {} edges, {} roles",
        ds.graph.n_nodes(),
        ds.graph.n_edges(),
        ds.n_roles()
    );
    dir.finish("synth", seed, Some(params))
}

#[derive(Serialize)]
struct FiltersReport {
    config: serde_json::Value,
    dataset: DatasetSummary,
    alpha: f64,
    filters: Vec<FilterStats>,
    /// `max |Σ Φ_j − (I − residual)|` over all entries.
    telescoping_error: f64,
    views: Vec<ViewStats>,
}

fn filters(run: &RunArgs, k: Option<usize>) -> Result<()> {
    let cfg = resolve(run, k, None)?;
    let dir = out_dir(run, &cfg)?;
    let data = load_dataset(cfg.dataset.as_ref(), cfg.model.seed)?;
    let g = &data.graph;
    let t = lazy_diffusion(&column_normalize(g.adjacency())?, cfg.model.alpha)?;
    let bank = build_filters(&t, cfg.model.k)?;
    let n = g.n_nodes();
    let mut sum = SparseMatrix::zeros(n, n);
    for phi in &bank.filters {
        sum = sum.linear_combination(1.0, phi, 1.0)?;
    }
    let identity_minus_residual = SparseMatrix::identity(n).linear_combination(1.0, &bank.residual, -1.0)?;
    let report = FiltersReport {
        config: config::echo(&cfg),
        dataset: DatasetSummary::of(g),
        alpha: cfg.model.alpha,
        filters: filter_stats(&bank)?,
        telescoping_error: sum.max_abs_diff(&identity_minus_residual)?,
        views: build_view_set(g, &cfg.model)?.stats(),
    };
    for f in &report.filters {
        println!("filter {} (scale {}): nnz {}, density {:.4}", f.index, f.scale, f.nnz, f.density);
    }
    let mut out = OutputDir::create(&dir)?;
    out.write_json("config.json", &report.config)?;
    out.write_json("filters.json", &report)?;
    out.finish("filters", cfg.model.seed, data.generation)
}

fn embed(run: &RunArgs, params: &Path) -> Result<()> {
    let cfg = resolve(run, None, None)?;
    let dir = out_dir(run, &cfg)?;
    let text = std::fs::read_to_string(params).with_context(|| format!("reading {}", params.display()))?;
    let saved: SavedParams = serde_json::from_str(&text).with_context(|| format!("parsing {}", params.display()))?;
    let data = load_dataset(cfg.dataset.as_ref(), cfg.model.seed)?;
    let views = build_view_set(&data.graph, &cfg.model)?;
    if views.len() != saved.n_views {
        bail!(
            "parameters were trained on {} views but the configuration builds {}",
            saved.n_views,
            views.len()
        );
    }
    let model = Model::from_saved(&saved, &cfg.model)?;
    let h = model.embed(&views.views, data.graph.features())?;
    let mut out = OutputDir::create(&dir)?;
    out.write("embeddings.tsv", &format_dense(h.view()))?;
    out.finish("embed", cfg.model.seed, data.generation)
}

#[derive(Debug, Serialize)]
struct AblationRow {
    k: usize,
    n_views: usize,
    epochs_run: usize,
    best_loss: Option<f64>,
    accuracy_mean: Option<f64>,
    accuracy_std: Option<f64>,
    homogeneity: Option<f64>,
    completeness: Option<f64>,
    silhouette: Option<f64>,
}

fn ablate(run: &RunArgs, ks: &[usize], eval: Option<EvalMode>) -> Result<()> {
    let mut cfg = resolve(run, None, eval)?;
    if ks.is_empty() {
        bail!("--k needs at least one view count");
    }
    // K = 1 alone cannot be contrasted, so every K runs on top of the local adjacency.
    if !cfg.model.include_local_adjacency {
        log::info!("ablation adds the local adjacency view to every configuration");
        cfg.model.include_local_adjacency = true;
    }
    let dir = out_dir(run, &cfg)?;
    let mut out = OutputDir::create(&dir)?;
    let configs: Vec<ExperimentConfig> = ks
        .iter()
        .map(|&k| {
            let mut c = cfg.clone();
            c.model.k = k;
            config::revalidate(&c).map(|_| c)
        })
        .collect::<std::result::Result<_, _>>()?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(worker_count())
        .build()
        .context("building the worker pool")?;
    let results: Vec<_> = pool.install(|| configs.par_iter().map(run_experiment).collect());

    let mut rows = Vec::new();
    let mut generation = None;
    for (c, result) in configs.iter().zip(results) {
        let result = result.with_context(|| format!("run with k = {}", c.model.k))?;
        let mut sub = OutputDir::create(&dir.join(format!("k{}", c.model.k)))?;
        write_run(&mut sub, &result)?;
        sub.finish("ablate", c.model.seed, result.generation.clone())?;
        let m = &result.metrics;
        rows.push(AblationRow {
            k: c.model.k,
            n_views: c.model.n_views(),
            epochs_run: m.training.as_ref().map_or(0, |t| t.epochs_run),
            best_loss: m.training.as_ref().and_then(|t| t.best_loss),
            accuracy_mean: m.probe.as_ref().map(|p| p.accuracy_mean),
            accuracy_std: m.probe.as_ref().map(|p| p.accuracy_std),
            homogeneity: m.clustering.as_ref().map(|c| c.homogeneity),
            completeness: m.clustering.as_ref().map(|c| c.completeness),
            silhouette: m.clustering.as_ref().map(|c| c.silhouette),
        });
        generation = result.generation;
    }

    let fmt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.4}"));
    let mut table = String::from("k\tviews\taccuracy_mean\taccuracy_std\thomogeneity\tcompleteness\tsilhouette\n");
    for r in &rows {
        table.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
            r.k,
            r.n_views,
            fmt(r.accuracy_mean),
            fmt(r.accuracy_std),
            fmt(r.homogeneity),
            fmt(r.completeness),
            fmt(r.silhouette)
        ));
    }
    print!("{table}");
    out.write_json("config.json", &config::echo(&cfg))?;
    out.write("ablation.tsv", &table)?;
    out.write_json("metrics.json", &serde_json::json!({ "config": config::echo(&cfg), "ablation": rows }))?;
    out.finish("ablate", cfg.model.seed, generation)
}
