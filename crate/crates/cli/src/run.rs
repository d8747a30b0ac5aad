//! The experiment pipeline behind the subcommands and the files each run writes.

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use ndarray::Array2;
use serde::Serialize;
use serde_json::Value;
use wavebank::eval::{evaluate_clustering, pca2, probe_with_resampling, ClusterResult, ProbeResult};
use wavebank::io::{format_dense, format_edges, format_labels, read_dense, read_labels, write_atomic};
use wavebank::model::{train, SavedParams, StopReason, TrainHistory};
use wavebank::synth::{SynthParams, SyntheticDataset};
use wavebank::wavelet::{build_view_set, ViewStats};
use wavebank::{homophily, load_graph, Graph, HomophilyScore};

use crate::config::{echo, DatasetSource, EvalMode, ExperimentConfig, FileDataset};

pub struct Dataset {
    pub graph: Graph,
    /// Construction parameters for generated data, echoed into manifests.
    pub generation: Option<SynthParams>,
}

impl Dataset {
    pub fn labels(&self) -> Option<&[usize]> {
        self.graph.labels()
    }
}

pub fn synthetic(name_or_params: &DatasetSource, seed: u64) -> Result<Option<(SynthParams, SyntheticDataset)>> {
    let params = match name_or_params {
        DatasetSource::Preset(name) => SynthParams::preset(name)
            .with_context(|| format!("unknown synthetic preset {name:?}; expected one of {:?}", wavebank::synth::PRESET_NAMES))?,
        DatasetSource::Synthetic(p) => p.clone(),
        _ => return Ok(None),
    };
    let ds = params.generate(seed)?;
    Ok(Some((params, ds)))
}

/// Loads or generates the configured dataset. Synthetic data is generated
/// from `seed`.
pub fn load_dataset(source: Option<&DatasetSource>, seed: u64) -> Result<Dataset> {
    let source = source.context("no dataset configured; pass --dataset DIR, --preset NAME or a \"dataset\" key")?;
    if let Some((params, ds)) = synthetic(source, seed)? {
        return Ok(Dataset {
            graph: ds.graph,
            generation: Some(params),
        });
    }
    let files = match source {
        DatasetSource::Files(f) => f.clone(),
        DatasetSource::Directory(dir) => FileDataset::in_directory(dir),
        _ => unreachable!("synthetic sources handled above"),
    };
    let graph = load_graph(&files.edges, &files.features, files.labels.as_deref())
        .with_context(|| format!("loading graph from {}", files.edges.display()))?;
    Ok(Dataset {
        graph,
        generation: None,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetSummary {
    pub n_nodes: usize,
    pub n_edges: usize,
    pub n_features: usize,
    pub n_classes: Option<usize>,
}

impl DatasetSummary {
    pub fn of(g: &Graph) -> DatasetSummary {
        DatasetSummary {
            n_nodes: g.n_nodes(),
            n_edges: g.n_edges(),
            n_features: g.features().ncols(),
            n_classes: g.labels().map(|_| g.n_classes()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainingSummary {
    pub epochs_run: usize,
    pub best_epoch: Option<usize>,
    pub initial_loss: Option<f64>,
    pub best_loss: Option<f64>,
    pub final_loss: Option<f64>,
    pub stop_reason: StopReason,
    pub losses: Vec<f64>,
}

impl TrainingSummary {
    pub fn of(h: &TrainHistory) -> TrainingSummary {
        TrainingSummary {
            epochs_run: h.losses.len(),
            best_epoch: h.best_epoch,
            initial_loss: h.losses.first().copied(),
            best_loss: h.best_loss(),
            final_loss: h.losses.last().copied(),
            stop_reason: h.stop_reason,
            losses: h.losses.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClusterMetrics {
    pub n_clusters: usize,
    pub homogeneity: f64,
    pub completeness: f64,
    pub silhouette: f64,
}

impl From<&ClusterResult> for ClusterMetrics {
    fn from(c: &ClusterResult) -> Self {
        ClusterMetrics {
            n_clusters: c.n_clusters,
            homogeneity: c.homogeneity,
            completeness: c.completeness,
            silhouette: c.silhouette,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeMetrics {
    pub accuracy_mean: f64,
    pub accuracy_std: f64,
    pub per_split: Vec<f64>,
    /// Seed each repetition was drawn from after any degenerate-split redraws.
    pub split_seeds: Vec<u64>,
}

impl ProbeMetrics {
    fn new(p: &ProbeResult, split_seeds: Vec<u64>) -> ProbeMetrics {
        ProbeMetrics {
            accuracy_mean: p.mean,
            accuracy_std: p.std,
            per_split: p.per_split.clone(),
            split_seeds,
        }
    }
}

/// Everything a run measured. Contains no timing, so identical runs give
/// byte-identical files.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub config: Value,
    pub dataset: Option<DatasetSummary>,
    pub homophily: Option<HomophilyScore>,
    pub training: Option<TrainingSummary>,
    pub views: Vec<ViewStats>,
    pub clustering: Option<ClusterMetrics>,
    pub probe: Option<ProbeMetrics>,
}

#[derive(Debug, Clone, Default)]
pub struct Evaluation {
    pub clustering: Option<ClusterMetrics>,
    pub probe: Option<ProbeMetrics>,
}

/// Scores embeddings against labels in the requested modes.
pub fn evaluate(embedding: &Array2<f64>, labels: Option<&[usize]>, mode: EvalMode, seed: u64) -> Result<Evaluation> {
    if mode == EvalMode::None {
        return Ok(Evaluation::default());
    }
    let labels = labels.context("evaluation needs node labels")?;
    let clustering = if mode.clusters() {
        Some(ClusterMetrics::from(&evaluate_clustering(embedding.view(), labels)?))
    } else {
        None
    };
    let probe = if mode.classifies() {
        let (p, split_seeds) = probe_with_resampling(embedding.view(), labels, seed)?;
        Some(ProbeMetrics::new(&p, split_seeds))
    } else {
        None
    };
    Ok(Evaluation { clustering, probe })
}

pub struct RunOutput {
    pub metrics: MetricsReport,
    pub embedding: Array2<f64>,
    pub params: SavedParams,
    pub labels: Option<Vec<usize>>,
    pub generation: Option<SynthParams>,
}

/// Builds views, trains, and evaluates according to `config`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunOutput> {
    let data = load_dataset(config.dataset.as_ref(), config.model.seed)?;
    let g = &data.graph;
    let views = build_view_set(g, &config.model)?;
    let outcome = train(g, &views, &config.model)?;
    let eval = evaluate(&outcome.embedding, data.labels(), config.eval, config.model.seed)?;
    let metrics = MetricsReport {
        config: echo(config),
        dataset: Some(DatasetSummary::of(g)),
        homophily: homophily(g).ok(),
        training: Some(TrainingSummary::of(&outcome.history)),
        views: views.stats(),
        clustering: eval.clustering,
        probe: eval.probe,
    };
    Ok(RunOutput {
        metrics,
        params: outcome.model.saved(),
        embedding: outcome.embedding,
        labels: data.labels().map(<[usize]>::to_vec),
        generation: data.generation,
    })
}

pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    Ok(text)
}

/// Per-run provenance: everything not needed to reproduce metrics,
/// including wall-clock time.
#[derive(Debug, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub seed: u64,
    pub wall_clock_seconds: f64,
    pub generation: Option<SynthParams>,
    pub files: Vec<String>,
}

pub struct OutputDir {
    dir: PathBuf,
    written: Vec<String>,
    started: Instant,
}

impl OutputDir {
    pub fn create(dir: &Path) -> Result<OutputDir> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(OutputDir {
            dir: dir.to_path_buf(),
            written: Vec::new(),
            started: Instant::now(),
        })
    }

    pub fn path(&self) -> &Path {
        &self.dir
    }

    pub fn write(&mut self, name: &str, contents: &str) -> Result<()> {
        write_atomic(&self.dir.join(name), contents).with_context(|| format!("writing {name}"))?;
        self.written.push(name.to_string());
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        self.write(name, &to_json(value)?)
    }

    /// Writes `manifest.json` listing every file written so far.
    pub fn finish(mut self, command: &str, seed: u64, generation: Option<SynthParams>) -> Result<()> {
        let manifest = Manifest {
            tool: "wavebank",
            version: env!("CARGO_PKG_VERSION"),
            command: command.to_string(),
            seed,
            wall_clock_seconds: self.started.elapsed().as_secs_f64(),
            generation,
            files: std::mem::take(&mut self.written),
        };
        self.write_json("manifest.json", &manifest)
    }
}

/// `node_id  pc1  pc2  label` rows with a header line.
pub fn format_pca(coords: &Array2<f64>, labels: Option<&[usize]>) -> String {
    let mut out = String::from("node_id\tpc1\tpc2\tlabel\n");
    for (i, row) in coords.rows().into_iter().enumerate() {
        let label = labels.map_or(String::new(), |l| l[i].to_string());
        out.push_str(&format!("{i}\t{}\t{}\t{label}\n", row[0], row[1]));
    }
    out
}

/// Writes the artifacts of a training run: config echo, embeddings,
/// parameters, PCA coordinates and metrics.
pub fn write_run(out: &mut OutputDir, run: &RunOutput) -> Result<()> {
    out.write_json("config.json", &run.metrics.config)?;
    out.write("embeddings.tsv", &format_dense(run.embedding.view()))?;
    out.write_json("params.json", &run.params)?;
    if run.embedding.nrows() >= 2 {
        out.write("pca.tsv", &format_pca(&pca2(run.embedding.view())?, run.labels.as_deref()))?;
    }
    out.write_json("metrics.json", &run.metrics)
}

/// Writes `edges.tsv`, `features.tsv` and `labels.tsv` for a graph.
pub fn write_graph(out: &mut OutputDir, g: &Graph) -> Result<()> {
    out.write("edges.tsv", &format_edges(&g.edges()))?;
    out.write("features.tsv", &format_dense(g.features().view()))?;
    if let Some(labels) = g.labels() {
        out.write("labels.tsv", &format_labels(labels))?;
    }
    Ok(())
}

pub fn read_embeddings(path: &Path) -> Result<Array2<f64>> {
    read_dense(path).with_context(|| format!("reading embeddings from {}", path.display()))
}

pub fn read_label_file(path: &Path, n: usize) -> Result<Vec<usize>> {
    let labels = read_labels(path).with_context(|| format!("reading labels from {}", path.display()))?;
    if labels.len() != n {
        bail!("{} has {} labels for {n} rows", path.display(), labels.len());
    }
    Ok(labels)
}
