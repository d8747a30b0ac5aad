//! Multi-view GCN encoder, readout, projection head, feature-shuffling
//! corruption, dot-product discriminator, the local–global contrastive
//! objective, and the training loop.
//!
//! For views `Ã_1 … Ã_V` and attributes `X`:
//!
//! ```text
//! H_k  = prelu(Ã_k · prelu(Ã_k · X · W1, a1) · W2, a2)
//! v_k  = mean over nodes of H_k
//! z_k  = prelu(v_k · M1 + b1, a_p) · M2 + b2
//! ```
//!
//! Every ordered pair `(k, j)`, `j ≠ k`, scores the clean rows of `H_j`
//! (target 1) and the corrupted rows of `Hc_j` (target 0) against `z_k`
//! with `σ(⟨h, z⟩)`, under binary cross-entropy.

use ndarray::{Array2, ArrayView1};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{adam_step, sigmoid, AdamState, ParamId, ParamStore, Tape, Var};
use crate::config::{EncoderMode, LossScaling, ModelConfig, Readout};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::seed::{self, Stream};
use crate::sparse::SparseMatrix;
use crate::wavelet::ViewSet;

/// Initial PReLU slope.
pub const PRELU_INIT: f64 = 0.25;

/// Parameter ids of one two-layer GCN.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncoderParams {
    pub w1: ParamId,
    pub slope1: ParamId,
    pub w2: ParamId,
    pub slope2: ParamId,
}

/// Parameter ids of the projection MLP shared by every view.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProjectionParams {
    pub m1: ParamId,
    pub b1: ParamId,
    pub slope: ParamId,
    pub m2: ParamId,
    pub b2: ParamId,
}

/// Encoder parameters recorded on a tape.
#[derive(Debug, Clone, Copy)]
pub struct EncoderVars {
    pub w1: Var,
    pub slope1: Var,
    pub w2: Var,
    pub slope2: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct ProjectionVars {
    pub m1: Var,
    pub b1: Var,
    pub slope: Var,
    pub m2: Var,
    pub b2: Var,
}

impl EncoderParams {
    pub fn record(&self, tape: &mut Tape<'_>, store: &ParamStore) -> EncoderVars {
        EncoderVars {
            w1: tape.param(store, self.w1),
            slope1: tape.param(store, self.slope1),
            w2: tape.param(store, self.w2),
            slope2: tape.param(store, self.slope2),
        }
    }
}

impl ProjectionParams {
    pub fn record(&self, tape: &mut Tape<'_>, store: &ParamStore) -> ProjectionVars {
        ProjectionVars {
            m1: tape.param(store, self.m1),
            b1: tape.param(store, self.b1),
            slope: tape.param(store, self.slope),
            m2: tape.param(store, self.m2),
            b2: tape.param(store, self.b2),
        }
    }
}

fn glorot(rng: &mut impl Rng, fan_in: usize, fan_out: usize) -> Array2<f64> {
    let s = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Array2::from_shape_fn((fan_in, fan_out), |_| rng.gen_range(-s..=s))
}

/// `H = prelu(view · prelu(view · X · W1, a1) · W2, a2)`.
pub fn gcn_encode<'a>(
    tape: &mut Tape<'a>,
    view: &'a SparseMatrix,
    x: Var,
    enc: &EncoderVars,
) -> Result<Var> {
    let n = tape.value(x).nrows();
    if view.n_rows() != n || view.n_cols() != n {
        return Err(Error::shape(format!(
            "view is {}x{} but the attribute matrix has {n} rows",
            view.n_rows(),
            view.n_cols()
        )));
    }
    let propagated = tape.spmm_const(view, x)?;
    let hidden = tape.matmul(propagated, enc.w1)?;
    let hidden = tape.prelu(hidden, enc.slope1)?;
    let propagated = tape.spmm_const(view, hidden)?;
    let out = tape.matmul(propagated, enc.w2)?;
    tape.prelu(out, enc.slope2)
}

/// Column mean over nodes, optionally squashed by a sigmoid.
pub fn readout(tape: &mut Tape<'_>, h: Var, mode: Readout) -> Result<Var> {
    let mean = tape.row_mean(h)?;
    Ok(match mode {
        Readout::Mean => mean,
        Readout::SigmoidMean => tape.sigmoid(mean),
    })
}

/// `z = prelu(v · M1 + b1, a) · M2 + b2`.
pub fn project(tape: &mut Tape<'_>, v: Var, proj: &ProjectionVars) -> Result<Var> {
    if tape.value(v).nrows() != 1 {
        return Err(Error::shape("projection input must be a single row"));
    }
    let hidden = tape.matmul(v, proj.m1)?;
    let hidden = tape.add_bias(hidden, proj.b1)?;
    let hidden = tape.prelu(hidden, proj.slope)?;
    let out = tape.matmul(hidden, proj.m2)?;
    tape.add_bias(out, proj.b2)
}

/// Shuffles the rows of `X` with a uniformly random permutation. Returns the
/// shuffled matrix and the permutation (`row i` of the output is `perm[i]` of the input).
pub fn corrupt(x: &Array2<f64>, seed: u64) -> Result<(Array2<f64>, Vec<usize>)> {
    let n = x.nrows();
    if n < 2 {
        return Err(Error::contract("corruption needs at least two nodes"));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut seed::rng(seed, Stream::Corruption, 0));
    let out = x.select(ndarray::Axis(0), &perm);
    Ok((out, perm))
}

/// `σ(⟨h, z⟩)`.
pub fn discriminate(h: ArrayView1<'_, f64>, z: ArrayView1<'_, f64>) -> Result<f64> {
    if h.len() != z.len() {
        return Err(Error::contract(format!(
            "discriminator needs equal widths, got {} and {}",
            h.len(),
            z.len()
        )));
    }
    Ok(sigmoid(h.dot(&z)))
}

/// Binary cross-entropy over all ordered view pairs. `clean[j]` and
/// `corrupted[j]` are node embeddings of view `j`; `summaries[k]` the
/// projected summary of view `k`.
pub fn contrastive_loss(
    tape: &mut Tape<'_>,
    clean: &[Var],
    corrupted: &[Var],
    summaries: &[Var],
    scaling: LossScaling,
) -> Result<Var> {
    let v = clean.len();
    if corrupted.len() != v || summaries.len() != v {
        return Err(Error::contract("clean, corrupted and summary lists differ in length"));
    }
    if v < 2 {
        return Err(Error::contract(format!(
            "the contrastive objective needs at least two views, got {v}"
        )));
    }
    let n = tape.value(clean[0]).nrows();
    let mut terms = Vec::with_capacity(2 * v * (v - 1));
    for (k, &z) in summaries.iter().enumerate() {
        let zt = tape.transpose(z);
        for j in (0..v).filter(|&j| j != k) {
            for (nodes, target) in [(clean[j], 1.0), (corrupted[j], 0.0)] {
                let scores = tape.matmul(nodes, zt)?;
                let p = tape.sigmoid(scores);
                terms.push(tape.binary_cross_entropy(p, target)?);
            }
        }
    }
    let mean = tape.scalar_mean(&terms)?;
    let loss = match scaling {
        LossScaling::Mean => mean,
        LossScaling::NodesPlusViews => {
            let count = (2 * n * v * (v - 1)) as f64;
            tape.scale(mean, count / (n + v) as f64)
        }
    };
    let value = tape.scalar(loss)?;
    if !value.is_finite() {
        return Err(Error::numeric(format!("contrastive loss is {value}")));
    }
    Ok(loss)
}

/// Elementwise mean of the per-view node embeddings.
pub fn pooled_embedding(hs: &[Array2<f64>]) -> Result<Array2<f64>> {
    let first = hs
        .first()
        .ok_or_else(|| Error::contract("pooling needs at least one view"))?;
    let mut sum = Array2::zeros(first.raw_dim());
    for h in hs {
        if h.dim() != first.dim() {
            return Err(Error::shape("per-view embeddings differ in shape"));
        }
        sum += h;
    }
    Ok(sum / hs.len() as f64)
}

/// Trainable state: encoders (one, or one per view), projection head, and
/// the static settings that shape the forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub store: ParamStore,
    pub encoders: Vec<EncoderParams>,
    pub projection: ProjectionParams,
    pub encoder_mode: EncoderMode,
    pub n_views: usize,
    pub input_dim: usize,
    pub embed_dim: usize,
    pub readout: Readout,
    pub loss_scaling: LossScaling,
}

impl Model {
    /// Glorot-uniform weights, zero biases and PReLU slopes of 0.25, drawn
    /// from the init stream of `config.seed`.
    pub fn new(input_dim: usize, n_views: usize, config: &ModelConfig) -> Result<Model> {
        if input_dim == 0 {
            return Err(Error::shape("the attribute matrix has no columns"));
        }
        if n_views == 0 {
            return Err(Error::contract("the model needs at least one view"));
        }
        let (d, dz) = (config.embed_dim, config.proj_dim);
        let mut rng = seed::rng(config.seed, Stream::Init, 0);
        let mut store = ParamStore::new();
        let n_encoders = match config.encoder_mode {
            EncoderMode::Shared => 1,
            EncoderMode::Dedicated => n_views,
        };
        let encoders = (0..n_encoders)
            .map(|e| EncoderParams {
                w1: store.add(format!("encoder{e}.w1"), glorot(&mut rng, input_dim, d)),
                slope1: store.add(format!("encoder{e}.slope1"), Array2::from_elem((1, 1), PRELU_INIT)),
                w2: store.add(format!("encoder{e}.w2"), glorot(&mut rng, d, d)),
                slope2: store.add(format!("encoder{e}.slope2"), Array2::from_elem((1, 1), PRELU_INIT)),
            })
            .collect();
        let projection = ProjectionParams {
            m1: store.add("projection.m1", glorot(&mut rng, d, dz)),
            b1: store.add("projection.b1", Array2::zeros((1, dz))),
            slope: store.add("projection.slope", Array2::from_elem((1, 1), PRELU_INIT)),
            m2: store.add("projection.m2", glorot(&mut rng, dz, dz)),
            b2: store.add("projection.b2", Array2::zeros((1, dz))),
        };
        Ok(Model {
            store,
            encoders,
            projection,
            encoder_mode: config.encoder_mode,
            n_views,
            input_dim,
            embed_dim: d,
            readout: config.readout,
            loss_scaling: config.loss_scaling,
        })
    }

    /// Index of the encoder that processes `view`.
    pub fn encoder_index(&self, view: usize) -> usize {
        match self.encoder_mode {
            EncoderMode::Shared => 0,
            EncoderMode::Dedicated => view,
        }
    }

    fn check_views(&self, views: &[SparseMatrix]) -> Result<()> {
        if views.len() != self.n_views {
            return Err(Error::contract(format!(
                "model was built for {} views, got {}",
                self.n_views,
                views.len()
            )));
        }
        Ok(())
    }

    /// Records the full contrastive objective for clean attributes `x` and
    /// corrupted attributes `xc`.
    pub fn loss<'a>(
        &self,
        tape: &mut Tape<'a>,
        views: &'a [SparseMatrix],
        x: &Array2<f64>,
        xc: &Array2<f64>,
    ) -> Result<Var> {
        self.check_views(views)?;
        let encoders: Vec<EncoderVars> = self.encoders.iter().map(|e| e.record(tape, &self.store)).collect();
        let projection = self.projection.record(tape, &self.store);
        let xv = tape.constant(x.clone());
        let xcv = tape.constant(xc.clone());

        let mut clean = Vec::with_capacity(views.len());
        let mut corrupted = Vec::with_capacity(views.len());
        let mut summaries = Vec::with_capacity(views.len());
        for (k, view) in views.iter().enumerate() {
            let enc = &encoders[self.encoder_index(k)];
            let h = gcn_encode(tape, view, xv, enc)?;
            let hc = gcn_encode(tape, view, xcv, enc)?;
            let v = readout(tape, h, self.readout)?;
            summaries.push(project(tape, v, &projection)?);
            clean.push(h);
            corrupted.push(hc);
        }
        contrastive_loss(tape, &clean, &corrupted, &summaries, self.loss_scaling)
    }

    /// Node embeddings of every view under the current parameters.
    pub fn view_embeddings(&self, views: &[SparseMatrix], x: &Array2<f64>) -> Result<Vec<Array2<f64>>> {
        self.check_views(views)?;
        let mut tape = Tape::new();
        let encoders: Vec<EncoderVars> = self.encoders.iter().map(|e| e.record(&mut tape, &self.store)).collect();
        let xv = tape.constant(x.clone());
        views
            .iter()
            .enumerate()
            .map(|(k, view)| {
                let h = gcn_encode(&mut tape, view, xv, &encoders[self.encoder_index(k)])?;
                Ok(tape.value(h).clone())
            })
            .collect()
    }

    /// Pooled embedding `Σ_k H_k / V`.
    pub fn embed(&self, views: &[SparseMatrix], x: &Array2<f64>) -> Result<Array2<f64>> {
        pooled_embedding(&self.view_embeddings(views, x)?)
    }

    pub fn saved(&self) -> SavedParams {
        SavedParams {
            format: SAVED_FORMAT.to_string(),
            encoder_mode: self.encoder_mode,
            n_views: self.n_views,
            input_dim: self.input_dim,
            embed_dim: self.embed_dim,
            params: self
                .store
                .iter()
                .map(|p| SavedArray {
                    name: p.name.clone(),
                    shape: [p.value.nrows(), p.value.ncols()],
                    values: p.value.iter().copied().collect(),
                })
                .collect(),
        }
    }

    /// Rebuilds a model for `config` and overwrites its parameters with `saved`.
    pub fn from_saved(saved: &SavedParams, config: &ModelConfig) -> Result<Model> {
        if saved.format != SAVED_FORMAT {
            return Err(Error::contract(format!("unknown parameter format {:?}", saved.format)));
        }
        let config = ModelConfig {
            encoder_mode: saved.encoder_mode,
            embed_dim: saved.embed_dim,
            proj_dim: saved.embed_dim,
            ..config.clone()
        };
        let mut model = Model::new(saved.input_dim, saved.n_views, &config)?;
        if model.store.len() != saved.params.len() {
            return Err(Error::shape("saved parameter list does not match the model layout"));
        }
        for (id, array) in model.store.ids().zip(&saved.params) {
            let expected = model.store.get(id);
            if expected.name != array.name || [expected.value.nrows(), expected.value.ncols()] != array.shape {
                return Err(Error::shape(format!(
                    "saved parameter {} {:?} does not match {} {:?}",
                    array.name,
                    array.shape,
                    expected.name,
                    expected.value.dim()
                )));
            }
            let value = Array2::from_shape_vec((array.shape[0], array.shape[1]), array.values.clone())
                .map_err(|e| Error::shape(e.to_string()))?;
            model.store.value_mut(id).assign(&value);
        }
        Ok(model)
    }
}

pub const SAVED_FORMAT: &str = "wavebank-params-v1";

/// JSON layout of trained parameters: one row-major array per parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SavedParams {
    pub format: String,
    pub encoder_mode: EncoderMode,
    pub n_views: usize,
    pub input_dim: usize,
    pub embed_dim: usize,
    pub params: Vec<SavedArray>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SavedArray {
    pub name: String,
    pub shape: [usize; 2],
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    NoEpochs,
    MaxEpochs,
    EarlyStopping,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainHistory {
    /// Loss at the start of each epoch, before that epoch's update.
    pub losses: Vec<f64>,
    pub best_epoch: Option<usize>,
    pub stop_reason: StopReason,
}

impl TrainHistory {
    pub fn best_loss(&self) -> Option<f64> {
        self.best_epoch.map(|e| self.losses[e])
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    pub history: TrainHistory,
    /// Pooled clean embedding under the best parameters.
    pub embedding: Array2<f64>,
}

/// Full-batch training with Adam and patience-based early stopping. Each
/// epoch draws a fresh corruption from `(config.seed, epoch)`. The returned
/// model holds the parameters of the best epoch.
pub fn train(g: &Graph, views: &ViewSet, config: &ModelConfig) -> Result<TrainOutcome> {
    config.validate()?;
    let n = g.n_nodes();
    if views.len() < 2 {
        return Err(Error::contract(format!(
            "training needs at least two views, got {}",
            views.len()
        )));
    }
    if let Some(bad) = views.views.iter().find(|v| v.n_rows() != n || v.n_cols() != n) {
        return Err(Error::shape(format!(
            "view is {}x{} for a graph of {n} nodes",
            bad.n_rows(),
            bad.n_cols()
        )));
    }
    let x = g.features();
    let mut model = Model::new(x.ncols(), views.len(), config)?;
    let mut adam = AdamState::new(&model.store, config.lr);

    let mut losses = Vec::new();
    let mut best: Option<(usize, f64, Vec<Array2<f64>>)> = None;
    let mut since_improvement = 0;
    let mut stop_reason = if config.max_epochs == 0 {
        StopReason::NoEpochs
    } else {
        StopReason::MaxEpochs
    };

    for epoch in 0..config.max_epochs {
        let (xc, _) = corrupt(x, seed::derive(config.seed, Stream::Corruption, epoch as u64))?;
        model.store.zero_grad();
        let mut tape = Tape::new();
        let loss = model
            .loss(&mut tape, &views.views, x, &xc)
            .map_err(|e| with_epoch(e, epoch))?;
        let value = tape.scalar(loss)?;
        losses.push(value);

        let improved = match &best {
            None => true,
            Some((_, best_loss, _)) => value < best_loss - config.min_delta,
        };
        if improved {
            best = Some((epoch, value, model.store.snapshot()));
            since_improvement = 0;
        } else {
            since_improvement += 1;
            if since_improvement >= config.patience {
                stop_reason = StopReason::EarlyStopping;
                break;
            }
        }

        tape.backward(loss, &mut model.store)?;
        adam_step(&mut model.store, &mut adam).map_err(|e| with_epoch(e, epoch))?;
    }

    let best_epoch = best.as_ref().map(|(e, _, _)| *e);
    if let Some((_, _, values)) = &best {
        model.store.restore(values)?;
    }
    let embedding = model.embed(&views.views, x)?;
    Ok(TrainOutcome {
        model,
        history: TrainHistory {
            losses,
            best_epoch,
            stop_reason,
        },
        embedding,
    })
}

fn with_epoch(e: Error, epoch: usize) -> Error {
    match e {
        Error::Numeric(msg) => Error::Numeric(format!("epoch {epoch}: {msg}")),
        other => other,
    }
}
