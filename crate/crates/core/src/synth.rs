//! Synthetic structural-role benchmarks: small shapes (house, fan, star)
//! attached along a cycle, optionally perturbed by random extra edges.
//!
//! Role ids: `0` is the cycle; every distinct `(shape kind, local role)` pair
//! gets the next id in order of first appearance. A shape's anchor keeps its
//! within-shape role even though the attaching edge raises its degree.

use std::collections::{BTreeMap, HashSet};

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, LoadOptions};
use crate::seed::{self, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", content = "size", rename_all = "lowercase")]
pub enum ShapeSpec {
    House,
    Fan(usize),
    Star(usize),
}

impl ShapeSpec {
    fn kind_id(self) -> u8 {
        match self {
            ShapeSpec::House => 0,
            ShapeSpec::Fan(_) => 1,
            ShapeSpec::Star(_) => 2,
        }
    }
}

/// A shape in local coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Shape {
    pub n_nodes: usize,
    pub edges: Vec<(usize, usize)>,
    pub roles: Vec<usize>,
    pub anchor: usize,
}

/// House: square `0-1-2-3` with roof apex `4` on `2, 3`; roles bottom/top/roof.
/// Star(s): hub `0` and `s` leaves. Fan(s): a star whose leaves are chained
/// into a path; roles hub / path end / path interior. The anchor is node 0.
pub fn make_shape(spec: ShapeSpec) -> Result<Shape> {
    match spec {
        ShapeSpec::House => Ok(Shape {
            n_nodes: 5,
            edges: vec![(0, 1), (1, 2), (2, 3), (3, 0), (3, 4), (2, 4)],
            roles: vec![0, 0, 1, 1, 2],
            anchor: 0,
        }),
        ShapeSpec::Star(s) | ShapeSpec::Fan(s) if s < 2 => Err(Error::contract(format!(
            "{spec:?} needs at least 2 leaves"
        ))),
        ShapeSpec::Star(s) => Ok(Shape {
            n_nodes: s + 1,
            edges: (1..=s).map(|leaf| (0, leaf)).collect(),
            roles: std::iter::once(0).chain(std::iter::repeat_n(1, s)).collect(),
            anchor: 0,
        }),
        ShapeSpec::Fan(s) => {
            let mut edges: Vec<_> = (1..=s).map(|leaf| (0, leaf)).collect();
            edges.extend((1..s).map(|leaf| (leaf, leaf + 1)));
            let roles = (0..=s)
                .map(|i| match i {
                    0 => 0,
                    i if i == 1 || i == s => 1,
                    _ => 2,
                })
                .collect();
            Ok(Shape {
                n_nodes: s + 1,
                edges,
                roles,
                anchor: 0,
            })
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub graph: Graph,
    pub roles: Vec<usize>,
    pub generation_seed: u64,
    pub perturbation_rate: f64,
}

impl SyntheticDataset {
    pub fn n_roles(&self) -> usize {
        self.roles.iter().max().map_or(0, |m| m + 1)
    }
}

/// Attaches `shapes` at evenly spaced positions of a `cycle_len` cycle, each by
/// one edge from its anchor. The seed picks the rotation of the attachment points.
pub fn assemble_cycle(shapes: &[ShapeSpec], cycle_len: usize, seed: u64) -> Result<SyntheticDataset> {
    if cycle_len < 3 {
        return Err(Error::contract("the backbone cycle needs at least 3 nodes"));
    }
    if shapes.len() > cycle_len {
        return Err(Error::contract(format!(
            "{} shapes do not fit on a cycle of {cycle_len} positions",
            shapes.len()
        )));
    }
    let mut edges: Vec<(usize, usize)> = (0..cycle_len).map(|i| (i, (i + 1) % cycle_len)).collect();
    let mut roles = vec![0usize; cycle_len];
    let mut role_ids: BTreeMap<(u8, usize), usize> = BTreeMap::new();
    let mut next_role = 1;

    let offset = if shapes.is_empty() {
        0
    } else {
        seed::rng(seed, Stream::Placement, 0).gen_range(0..cycle_len)
    };
    for (i, &spec) in shapes.iter().enumerate() {
        let shape = make_shape(spec)?;
        let base = roles.len();
        let position = (offset + i * cycle_len / shapes.len()) % cycle_len;
        edges.extend(shape.edges.iter().map(|&(a, b)| (base + a, base + b)));
        edges.push((position, base + shape.anchor));
        for &local in &shape.roles {
            let id = *role_ids.entry((spec.kind_id(), local)).or_insert_with(|| {
                next_role += 1;
                next_role - 1
            });
            roles.push(id);
        }
    }

    let n = roles.len();
    let graph = Graph::from_edges(n, &edges, Array2::zeros((n, 1)), Some(roles.clone()), LoadOptions::default())?;
    let features = degree_attributes(&graph);
    Ok(SyntheticDataset {
        graph: graph.with_features(features)?,
        roles,
        generation_seed: seed,
        perturbation_rate: 0.0,
    })
}

/// Adds `⌈p·|E|⌉` uniformly random edges between distinct non-adjacent nodes and
/// recomputes the degree attributes. Roles are unchanged.
pub fn perturb(ds: &SyntheticDataset, p: f64, seed: u64) -> Result<SyntheticDataset> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::contract(format!("perturbation rate {p} is outside [0, 1)")));
    }
    let g = &ds.graph;
    let n = g.n_nodes();
    let mut edges = g.edges();
    let n_new = (p * edges.len() as f64 - 1e-9).ceil().max(0.0) as usize;
    if n_new == 0 {
        return Ok(SyntheticDataset {
            perturbation_rate: p,
            ..ds.clone()
        });
    }
    let available = n * n.saturating_sub(1) / 2 - edges.iter().filter(|(a, b)| a != b).count();
    if n_new > available {
        return Err(Error::contract(format!(
            "{n_new} new edges requested but only {available} node pairs are free"
        )));
    }
    let mut present: HashSet<(usize, usize)> = edges.iter().copied().collect();
    let mut rng = seed::rng(seed, Stream::Perturbation, 0);
    let mut added = 0;
    while added < n_new {
        let a = rng.gen_range(0..n);
        let b = rng.gen_range(0..n);
        if a == b {
            continue;
        }
        let key = (a.min(b), a.max(b));
        if present.insert(key) {
            edges.push(key);
            added += 1;
        }
    }
    let graph = Graph::from_edges(n, &edges, Array2::zeros((n, 1)), Some(ds.roles.clone()), LoadOptions::default())?;
    let features = degree_attributes(&graph);
    Ok(SyntheticDataset {
        graph: graph.with_features(features)?,
        roles: ds.roles.clone(),
        generation_seed: ds.generation_seed,
        perturbation_rate: p,
    })
}

/// Node degree divided by the maximum degree, as an `N × 1` matrix.
pub fn degree_attributes(g: &Graph) -> Array2<f64> {
    let degrees = g.degrees();
    let max = degrees.iter().copied().fold(0.0f64, f64::max);
    Array2::from_shape_fn((degrees.len(), 1), |(i, _)| {
        if max > 0.0 {
            degrees[i] / max
        } else {
            0.0
        }
    })
}

/// Construction parameters of a synthetic benchmark, echoed into the
/// generation manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthParams {
    pub shapes: Vec<ShapeSpec>,
    pub cycle_len: usize,
    pub perturbation: f64,
}

pub const PRESET_NAMES: [&str; 4] = ["house", "house-perturbed", "varied", "varied-perturbed"];

impl SynthParams {
    /// House: 10 houses on a 30-cycle. Varied: 8 shapes cycling through
    /// house / fan(6) / star(6) on a 40-cycle. Perturbed variants add 10% edges.
    pub fn preset(name: &str) -> Option<SynthParams> {
        let houses = || vec![ShapeSpec::House; 10];
        let varied = || {
            [ShapeSpec::House, ShapeSpec::Fan(6), ShapeSpec::Star(6)]
                .into_iter()
                .cycle()
                .take(8)
                .collect()
        };
        let (shapes, cycle_len, perturbation) = match name {
            "house" => (houses(), 30, 0.0),
            "house-perturbed" => (houses(), 30, 0.1),
            "varied" => (varied(), 40, 0.0),
            "varied-perturbed" => (varied(), 40, 0.1),
            _ => return None,
        };
        Some(SynthParams {
            shapes,
            cycle_len,
            perturbation,
        })
    }

    pub fn generate(&self, seed: u64) -> Result<SyntheticDataset> {
        let base = assemble_cycle(&self.shapes, self.cycle_len, seed)?;
        if self.perturbation > 0.0 {
            perturb(&base, self.perturbation, seed)
        } else {
            Ok(base)
        }
    }
}
