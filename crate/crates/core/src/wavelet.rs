//! Lazy diffusion operator, dyadic diffusion-wavelet filter bank, and the
//! sparsified/normalized views consumed by the encoder.
//!
//! With `T = αI + (1−α)Ã₁` and `P_j = T^(2^(j−1))` obtained by repeated
//! squaring, the bank is
//!
//! ```text
//! Φ₁ = I − T,    Φ_(j+1) = P_j (I − P_j) = P_j − P_(j+1)
//! ```
//!
//! so `Σ_{j≤K} Φ_j = I − P_K` telescopes exactly.

use ndarray::Array2;
use serde::Serialize;

use crate::config::{ModelConfig, ThresholdMode};
use crate::error::{Error, Result};
use crate::graph::{column_normalize, Graph};
use crate::sparse::SparseMatrix;

/// Density above which a filter triggers a densification warning.
pub const DENSITY_WARNING: f64 = 0.3;

const STOCHASTIC_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionOperator {
    pub matrix: SparseMatrix,
    pub alpha: f64,
}

/// `T = alpha·I + (1 − alpha)·adj_col_norm` for a column-stochastic input.
pub fn lazy_diffusion(adj_col_norm: &SparseMatrix, alpha: f64) -> Result<DiffusionOperator> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::contract(format!("alpha = {alpha} is outside (0, 1)")));
    }
    if !adj_col_norm.is_square() {
        return Err(Error::shape("diffusion operator needs a square matrix"));
    }
    if let Some((c, s)) = adj_col_norm
        .column_sums()
        .into_iter()
        .enumerate()
        .find(|(_, s)| (s - 1.0).abs() > STOCHASTIC_TOLERANCE)
    {
        return Err(Error::contract(format!(
            "input is not column-stochastic: column {c} sums to {s}"
        )));
    }
    if alpha < 0.5 {
        log::info!("alpha = {alpha} is below the customary [0.5, 1] laziness range");
    }
    let identity = SparseMatrix::identity(adj_col_norm.n_rows());
    let matrix = identity.linear_combination(alpha, adj_col_norm, 1.0 - alpha)?;
    Ok(DiffusionOperator { matrix, alpha })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterBank {
    /// `Φ₁ … Φ_K`, fine to coarse.
    pub filters: Vec<SparseMatrix>,
    /// Diffusion time at the coarse end of each filter: `2^(j−1)` for `Φ_j`.
    pub scales: Vec<u64>,
    /// `T^(2^(K−1))`; `Σ Φ_j + residual = I`.
    pub residual: SparseMatrix,
}

/// Builds `K` dyadic filters by repeated squaring of `T`.
pub fn build_filters(t: &DiffusionOperator, k: usize) -> Result<FilterBank> {
    if k < 1 {
        return Err(Error::contract("the filter bank needs K >= 1"));
    }
    let n = t.matrix.n_rows();
    let identity = SparseMatrix::identity(n);
    let mut filters = Vec::with_capacity(k);
    let mut scales = Vec::with_capacity(k);
    filters.push(identity.linear_combination(1.0, &t.matrix, -1.0)?);
    scales.push(1);

    let mut power = t.matrix.clone();
    for j in 2..=k {
        let squared = power.matmul(&power)?;
        if squared.density() > DENSITY_WARNING {
            log::warn!(
                "diffusion power T^{} has density {:.3}; filters past this scale are dense",
                1u64 << (j - 1),
                squared.density()
            );
        }
        filters.push(power.linear_combination(1.0, &squared, -1.0)?);
        scales.push(1u64 << (j - 1));
        power = squared;
    }
    Ok(FilterBank {
        filters,
        scales,
        residual: power,
    })
}

/// Zeroes the entries of a filter that fall below `epsilon` and re-compacts.
pub fn sparsify(phi: &SparseMatrix, epsilon: f64, mode: ThresholdMode) -> SparseMatrix {
    match mode {
        ThresholdMode::Absolute => phi.retain(|_, _, v| v.abs() >= epsilon),
        ThresholdMode::Signed => phi.retain(|_, _, v| v >= epsilon),
    }
}

/// L1 column normalization; empty columns become unit coordinate columns.
pub fn normalize_view(a_k: &SparseMatrix) -> Result<SparseMatrix> {
    if !a_k.is_square() {
        return Err(Error::shape("views must be square"));
    }
    let norms = a_k.column_abs_sums();
    let factors: Vec<f64> = norms
        .iter()
        .map(|&s| if s > 0.0 { 1.0 / s } else { 0.0 })
        .collect();
    let scaled = a_k.scale_columns(&factors)?;
    let empty: Vec<usize> = (0..norms.len()).filter(|&c| norms[c] == 0.0).collect();
    if empty.is_empty() {
        return Ok(scaled);
    }
    let patch = SparseMatrix::from_triplets(a_k.n_rows(), a_k.n_cols(), empty.into_iter().map(|c| (c, c, 1.0)))?;
    scaled.linear_combination(1.0, &patch, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ViewKind {
    /// The column-normalized adjacency.
    LocalAdjacency,
    /// Normalized, sparsified wavelet filter `Φ_index` (1-based).
    Wavelet { index: usize, scale: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViewSet {
    pub views: Vec<SparseMatrix>,
    pub kinds: Vec<ViewKind>,
    pub includes_local_adjacency: bool,
    pub epsilon: f64,
    pub threshold_mode: ThresholdMode,
}

impl ViewSet {
    pub fn len(&self) -> usize {
        self.views.len()
    }

    pub fn is_empty(&self) -> bool {
        self.views.is_empty()
    }

    pub fn stats(&self) -> Vec<ViewStats> {
        self.views
            .iter()
            .zip(&self.kinds)
            .enumerate()
            .map(|(i, (v, kind))| ViewStats {
                view: i,
                kind: *kind,
                nnz: v.nnz(),
                density: v.density(),
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ViewStats {
    pub view: usize,
    #[serde(flatten)]
    pub kind: ViewKind,
    pub nnz: usize,
    pub density: f64,
}

/// Column normalization → lazy diffusion → filter bank → per-filter
/// sparsify → L1 normalization, optionally prefixed by the local adjacency view.
pub fn build_view_set(g: &Graph, config: &ModelConfig) -> Result<ViewSet> {
    let a1 = column_normalize(g.adjacency())?;
    let t = lazy_diffusion(&a1, config.alpha)?;
    let bank = build_filters(&t, config.k)?;

    let mut views = Vec::with_capacity(config.n_views());
    let mut kinds = Vec::with_capacity(config.n_views());
    if config.include_local_adjacency {
        views.push(a1);
        kinds.push(ViewKind::LocalAdjacency);
    }
    for (j, (phi, &scale)) in bank.filters.iter().zip(&bank.scales).enumerate() {
        let sparse = sparsify(phi, config.epsilon, config.threshold_mode);
        views.push(normalize_view(&sparse)?);
        kinds.push(ViewKind::Wavelet { index: j + 1, scale });
    }
    Ok(ViewSet {
        views,
        kinds,
        includes_local_adjacency: config.include_local_adjacency,
        epsilon: config.epsilon,
        threshold_mode: config.threshold_mode,
    })
}

/// Inspection summary of one raw filter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FilterStats {
    pub index: usize,
    pub scale: u64,
    pub nnz: usize,
    pub density: f64,
    /// `max_c |Σ_r Φ[r, c]|`; zero for an exact band-pass filter of a stochastic `T`.
    pub column_sum_drift: f64,
    /// Power-iteration estimate of the spectral norm.
    pub spectral_norm_estimate: f64,
}

pub fn filter_stats(bank: &FilterBank) -> Result<Vec<FilterStats>> {
    bank.filters
        .iter()
        .zip(&bank.scales)
        .enumerate()
        .map(|(j, (phi, &scale))| {
            Ok(FilterStats {
                index: j + 1,
                scale,
                nnz: phi.nnz(),
                density: phi.density(),
                column_sum_drift: phi.column_sums().into_iter().fold(0.0f64, |m, s| m.max(s.abs())),
                spectral_norm_estimate: spectral_norm_estimate(phi, 200)?,
            })
        })
        .collect()
}

/// Largest singular value by power iteration on `SᵀS` from a fixed start vector.
pub fn spectral_norm_estimate(s: &SparseMatrix, iterations: usize) -> Result<f64> {
    let n = s.n_cols();
    if n == 0 || s.nnz() == 0 {
        return Ok(0.0);
    }
    let mut x = Array2::from_shape_fn((n, 1), |(i, _)| 1.0 + 0.1 * ((i % 7) as f64));
    let mut sigma = 0.0;
    for _ in 0..iterations {
        let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Ok(0.0);
        }
        x /= norm;
        let y = s.spmm(x.view())?;
        sigma = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        x = s.spmm_transpose(y.view())?;
    }
    Ok(sigma)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::LoadOptions;
    use ndarray::array;

    fn edge_graph() -> Graph {
        Graph::from_edges(2, &[(0, 1)], Array2::ones((2, 1)), None, LoadOptions::default()).unwrap()
    }

    fn close(a: &SparseMatrix, b: Array2<f64>, tol: f64) -> bool {
        (a.to_dense() - b).iter().all(|d| d.abs() <= tol)
    }

    #[test]
    fn two_node_operator_and_filters() {
        let a1 = column_normalize(edge_graph().adjacency()).unwrap();
        let t = lazy_diffusion(&a1, 0.5).unwrap();
        assert!(close(&t.matrix, array![[0.5, 0.5], [0.5, 0.5]], 1e-15));

        let bank = build_filters(&t, 2).unwrap();
        assert!(close(&bank.filters[0], array![[0.5, -0.5], [-0.5, 0.5]], 1e-15));
        // T is idempotent here, so T − T² vanishes.
        assert_eq!(bank.filters[1].nnz(), 0);
        assert_eq!(bank.scales, vec![1, 2]);
    }

    #[test]
    fn nearly_lazy_operator_is_identity() {
        let a1 = column_normalize(edge_graph().adjacency()).unwrap();
        let t = lazy_diffusion(&a1, 0.999).unwrap();
        assert!(close(&t.matrix, Array2::eye(2), 1e-3 + 1e-12));
    }

    #[test]
    fn alpha_and_stochasticity_contracts() {
        let a1 = column_normalize(edge_graph().adjacency()).unwrap();
        for alpha in [0.0, 1.0, -0.1, f64::NAN] {
            assert!(matches!(lazy_diffusion(&a1, alpha), Err(Error::Contract(_))));
        }
        let not_stochastic = SparseMatrix::from_dense(array![[0.0, 2.0], [1.0, 0.0]].view());
        assert!(matches!(lazy_diffusion(&not_stochastic, 0.2), Err(Error::Contract(_))));
        let t = lazy_diffusion(&a1, 0.2).unwrap();
        assert!(matches!(build_filters(&t, 0), Err(Error::Contract(_))));
    }

    #[test]
    fn sparsify_modes() {
        let phi = SparseMatrix::from_dense(array![[0.5, -0.5], [-0.5, 0.5]].view());
        assert_eq!(sparsify(&phi, 0.0, ThresholdMode::Absolute), phi);
        assert_eq!(sparsify(&phi, 0.1, ThresholdMode::Absolute), phi);
        let signed = sparsify(&phi, 0.1, ThresholdMode::Signed);
        assert_eq!(signed.to_dense(), array![[0.5, 0.0], [0.0, 0.5]]);
    }

    #[test]
    fn normalize_view_examples() {
        let stochastic = SparseMatrix::from_dense(array![[0.25, 1.0], [0.75, 0.0]].view());
        assert_eq!(normalize_view(&stochastic).unwrap(), stochastic);

        let half = SparseMatrix::from_dense(array![[0.5, 0.0], [0.0, 0.5]].view());
        assert_eq!(normalize_view(&half).unwrap(), SparseMatrix::identity(2));

        let signed = SparseMatrix::from_dense(array![[0.3, 0.0], [-0.1, 0.0]].view());
        let n = normalize_view(&signed).unwrap();
        assert!((n.get(0, 0) - 0.75).abs() < 1e-15);
        assert!((n.get(1, 0) + 0.25).abs() < 1e-15);
        assert_eq!(n.get(1, 1), 1.0);
    }

    #[test]
    fn single_filter_view_is_normalized_high_pass() {
        let g = edge_graph();
        let config = ModelConfig {
            k: 1,
            epsilon: 0.0,
            ..Default::default()
        };
        let views = build_view_set(&g, &config).unwrap();
        assert_eq!(views.len(), 1);
        let t = lazy_diffusion(&column_normalize(g.adjacency()).unwrap(), config.alpha).unwrap();
        let high_pass = SparseMatrix::identity(2).linear_combination(1.0, &t.matrix, -1.0).unwrap();
        assert_eq!(views.views[0], normalize_view(&high_pass).unwrap());
    }

    #[test]
    fn view_set_sizes() {
        let g = Graph::from_edges(
            4,
            &[(0, 1), (1, 2), (2, 3)],
            Array2::ones((4, 1)),
            None,
            LoadOptions::default(),
        )
        .unwrap();
        let structural = ModelConfig {
            k: 4,
            ..Default::default()
        };
        let vs = build_view_set(&g, &structural).unwrap();
        assert_eq!(vs.len(), 4);
        assert!(!vs.includes_local_adjacency);

        let proximal = ModelConfig {
            k: 2,
            include_local_adjacency: true,
            ..Default::default()
        };
        let vs = build_view_set(&g, &proximal).unwrap();
        assert_eq!(vs.len(), 3);
        assert_eq!(vs.kinds[0], ViewKind::LocalAdjacency);
        assert_eq!(vs.views[0], column_normalize(g.adjacency()).unwrap());
    }

    #[test]
    fn spectral_norm_of_identity() {
        let est = spectral_norm_estimate(&SparseMatrix::identity(5), 10).unwrap();
        assert!((est - 1.0).abs() < 1e-12);
    }
}
