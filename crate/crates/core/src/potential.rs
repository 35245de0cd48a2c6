//! Domain types, penalty functions and the clique labeling cost.
//!
//! A clique `V^k` with weight `λ` and labels `X^k` costs
//! `λ·G₁(η₀) + (1−λ)·G₀(η₁)` where `η_c` counts members labeled `c` and
//! `G_c` is a learnable penalty on the number of labels disagreeing with
//! hypothesis `c`. The probabilistic model is `p(X) ∝ exp(−Σ cost)`, so the
//! log-linear features carry a leading minus sign.

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A candidate correspondence `(a_l, a_r)`; one hypergraph node.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CandidateMatch {
    pub left_index: usize,
    pub right_index: usize,
    pub appearance_weight: f64,
}

impl CandidateMatch {
    pub fn new(left_index: usize, right_index: usize, appearance_weight: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&appearance_weight) {
            return Err(Error::InvalidConfig(format!(
                "appearance weight {appearance_weight} outside [0, 1]"
            )));
        }
        Ok(Self {
            left_index,
            right_index,
            appearance_weight,
        })
    }
}

/// A weighted subset of candidate matches.
#[derive(Debug, Clone, PartialEq)]
pub struct Hyperedge {
    node_ids: Vec<usize>,
    weight: f64,
}

impl Hyperedge {
    pub fn new(node_ids: Vec<usize>, weight: f64) -> Result<Self> {
        if node_ids.len() < 2 {
            return Err(Error::InvalidEdge(format!(
                "hyperedge needs at least 2 nodes, got {}",
                node_ids.len()
            )));
        }
        if !(0.0..=1.0).contains(&weight) {
            return Err(Error::InvalidEdge(format!(
                "weight {weight} outside [0, 1]"
            )));
        }
        let mut seen = HashSet::with_capacity(node_ids.len());
        if !node_ids.iter().all(|id| seen.insert(*id)) {
            return Err(Error::InvalidEdge(format!("repeated node in {node_ids:?}")));
        }
        Ok(Self { node_ids, weight })
    }

    pub fn node_ids(&self) -> &[usize] {
        &self.node_ids
    }

    /// `λ(V^k)`.
    pub fn weight(&self) -> f64 {
        self.weight
    }

    /// `λ_c(V^k)`: `λ` for class 1, `1 − λ` for class 0.
    pub fn class_weight(&self, class: usize) -> f64 {
        class_weight(self.weight, class)
    }

    pub fn len(&self) -> usize {
        self.node_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.node_ids.is_empty()
    }
}

#[inline]
pub(crate) fn class_weight(lambda: f64, class: usize) -> f64 {
    if class == 1 {
        lambda
    } else {
        1.0 - lambda
    }
}

/// Candidate matches plus weighted hyperedges over them.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchHypergraph {
    nodes: Vec<CandidateMatch>,
    edges: Vec<Hyperedge>,
    left_groups: BTreeMap<usize, Vec<usize>>,
}

impl MatchHypergraph {
    pub fn new(nodes: Vec<CandidateMatch>, edges: Vec<Hyperedge>) -> Result<Self> {
        let mut pairs = HashSet::with_capacity(nodes.len());
        let mut left_groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (id, node) in nodes.iter().enumerate() {
            if !pairs.insert((node.left_index, node.right_index)) {
                return Err(Error::InvalidConfig(format!(
                    "duplicate candidate match ({}, {})",
                    node.left_index, node.right_index
                )));
            }
            left_groups.entry(node.left_index).or_default().push(id);
        }
        for edge in &edges {
            if let Some(bad) = edge.node_ids().iter().find(|&&id| id >= nodes.len()) {
                return Err(Error::InvalidEdge(format!(
                    "node id {bad} out of range for {} nodes",
                    nodes.len()
                )));
            }
        }
        Ok(Self {
            nodes,
            edges,
            left_groups,
        })
    }

    pub fn nodes(&self) -> &[CandidateMatch] {
        &self.nodes
    }

    pub fn edges(&self) -> &[Hyperedge] {
        &self.edges
    }

    /// `μ(a_l)` for every left feature that has candidates, keyed by left index.
    pub fn left_groups(&self) -> &BTreeMap<usize, Vec<usize>> {
        &self.left_groups
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn left_count(&self) -> usize {
        self.left_groups.len()
    }

    pub fn right_count(&self) -> usize {
        self.nodes
            .iter()
            .map(|n| n.right_index)
            .collect::<HashSet<_>>()
            .len()
    }

    pub fn max_clique_size(&self) -> usize {
        self.edges.iter().map(Hyperedge::len).max().unwrap_or(0)
    }
}

/// Binary labels, one per node. `1` marks a correct correspondence.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Labeling {
    labels: Vec<u8>,
}

impl Labeling {
    pub fn new(labels: Vec<u8>) -> Result<Self> {
        check_binary(&labels)?;
        Ok(Self { labels })
    }

    pub fn all(value: u8, len: usize) -> Result<Self> {
        Self::new(vec![value; len])
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Labels restricted to the members of `edge`, in edge order.
    pub fn restrict(&self, edge: &Hyperedge) -> Vec<u8> {
        edge.node_ids().iter().map(|&i| self.labels[i]).collect()
    }
}

fn check_binary(labels: &[u8]) -> Result<()> {
    match labels.iter().position(|&v| v > 1) {
        Some(position) => Err(Error::InvalidLabel {
            position,
            value: labels[position],
        }),
        None => Ok(()),
    }
}

/// `(η₀, η₁)`: the number of 0-labels and 1-labels in a clique.
pub fn count_labels(labels: &[u8]) -> Result<(usize, usize)> {
    if labels.is_empty() {
        return Err(Error::InvalidEdge("empty clique".into()));
    }
    check_binary(labels)?;
    let ones = labels.iter().filter(|&&v| v == 1).count();
    Ok((labels.len() - ones, ones))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Discrete,
    Polynomial,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Discrete => "discrete",
            Variant::Polynomial => "polynomial",
        })
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "discrete" => Ok(Variant::Discrete),
            "polynomial" => Ok(Variant::Polynomial),
            other => Err(Error::InvalidConfig(format!("unknown variant `{other}`"))),
        }
    }
}

/// Identifies one learnable parameter: `w_c^α` (discrete, `index = α`) or
/// `g_c^(e)` (polynomial, `index = e`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamKey {
    pub class: usize,
    pub index: usize,
}

impl ParamKey {
    pub const fn new(class: usize, index: usize) -> Self {
        Self { class, index }
    }
}

const POLY_ORDER: usize = 3;
const FACTORIAL: [f64; POLY_ORDER] = [1.0, 1.0, 2.0];

/// Shape of the parameter vector: which variant and which clique sizes it covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamLayout {
    pub variant: Variant,
    pub k_max: usize,
}

impl ParamLayout {
    pub fn new(variant: Variant, k_max: usize) -> Self {
        Self { variant, k_max }
    }

    pub fn per_class(&self) -> usize {
        match self.variant {
            Variant::Discrete => self.k_max + 1,
            Variant::Polynomial => POLY_ORDER,
        }
    }

    pub fn len(&self) -> usize {
        2 * self.per_class()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn index_of(&self, key: ParamKey) -> usize {
        debug_assert!(key.class < 2 && key.index < self.per_class());
        key.class * self.per_class() + key.index
    }

    pub fn key_of(&self, flat: usize) -> ParamKey {
        ParamKey::new(flat / self.per_class(), flat % self.per_class())
    }

    pub fn keys(&self) -> impl Iterator<Item = ParamKey> + '_ {
        (0..self.len()).map(|i| self.key_of(i))
    }

    fn check_size(&self, size: usize) -> Result<()> {
        if size > self.k_max {
            Err(Error::ModelSize {
                size,
                k_max: self.k_max,
            })
        } else {
            Ok(())
        }
    }

    /// Adds `scale · φ(clique)` into a dense accumulator, for a clique of size
    /// `k` with weight `lambda` and `eta0` zero labels.
    pub(crate) fn accumulate_features(
        &self,
        lambda: f64,
        k: usize,
        eta0: usize,
        scale: f64,
        out: &mut [f64],
    ) {
        let eta1 = k - eta0;
        for class in 0..2 {
            let lc = class_weight(lambda, class);
            let disagree = if class == 1 { eta0 } else { eta1 };
            match self.variant {
                Variant::Discrete => {
                    out[self.index_of(ParamKey::new(class, disagree))] -= scale * lc;
                }
                Variant::Polynomial => {
                    let a = disagree as f64;
                    let mut pow = 1.0;
                    for e in 0..POLY_ORDER {
                        out[self.index_of(ParamKey::new(class, e))] -=
                            scale * lc * pow / FACTORIAL[e];
                        pow *= a;
                    }
                }
            }
        }
    }
}

/// Learnable penalty functions `G₀`, `G₁`.
///
/// The per-class balancing factor `β_c` is folded into the parameters. For the
/// discrete variant `G_c(α) = w_c^α`; for the polynomial variant
/// `G_c(α) = g_c^(0) + α·g_c^(1) + α²/2·g_c^(2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyModel {
    layout: ParamLayout,
    params: Vec<f64>,
}

impl PenaltyModel {
    pub fn zeros(variant: Variant, k_max: usize) -> Self {
        let layout = ParamLayout::new(variant, k_max);
        Self {
            layout,
            params: vec![0.0; layout.len()],
        }
    }

    /// Discrete tables `w_0` and `w_1`, each of length `k_max + 1`.
    pub fn discrete(w0: Vec<f64>, w1: Vec<f64>) -> Result<Self> {
        if w0.len() != w1.len() || w0.is_empty() {
            return Err(Error::InvalidModel(format!(
                "discrete tables must be nonempty and of equal length, got {} and {}",
                w0.len(),
                w1.len()
            )));
        }
        let layout = ParamLayout::new(Variant::Discrete, w0.len() - 1);
        Self::from_params(layout, w0.into_iter().chain(w1).collect())
    }

    /// Taylor coefficients `(g^(0), g^(1), g^(2))` for class 0 and class 1.
    pub fn polynomial(g0: [f64; 3], g1: [f64; 3], k_max: usize) -> Result<Self> {
        let layout = ParamLayout::new(Variant::Polynomial, k_max);
        Self::from_params(layout, g0.into_iter().chain(g1).collect())
    }

    pub fn from_params(layout: ParamLayout, params: Vec<f64>) -> Result<Self> {
        if params.len() != layout.len() {
            return Err(Error::InvalidModel(format!(
                "expected {} parameters, got {}",
                layout.len(),
                params.len()
            )));
        }
        if let Some(bad) = params.iter().find(|p| !p.is_finite()) {
            return Err(Error::InvalidModel(format!("non-finite parameter {bad}")));
        }
        Ok(Self { layout, params })
    }

    pub fn layout(&self) -> ParamLayout {
        self.layout
    }

    pub fn variant(&self) -> Variant {
        self.layout.variant
    }

    pub fn k_max(&self) -> usize {
        self.layout.k_max
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn param(&self, key: ParamKey) -> f64 {
        self.params[self.layout.index_of(key)]
    }

    pub fn class_params(&self, class: usize) -> &[f64] {
        let n = self.layout.per_class();
        &self.params[class * n..(class + 1) * n]
    }

    /// `G_c(count)`.
    pub fn penalty(&self, class: usize, count: usize) -> f64 {
        let p = self.class_params(class);
        match self.layout.variant {
            Variant::Discrete => p[count],
            Variant::Polynomial => {
                let a = count as f64;
                p[0] + a * p[1] + a * a * p[2] / FACTORIAL[2]
            }
        }
    }

    /// Penalty curves over `0..=k_max` shifted so that `G_c(0) = 0`.
    pub fn normalized_penalties(&self) -> [Vec<f64>; 2] {
        let curve = |class: usize| {
            let base = self.penalty(class, 0);
            (0..=self.k_max())
                .map(|a| self.penalty(class, a) - base)
                .collect::<Vec<_>>()
        };
        [curve(0), curve(1)]
    }

    /// Adds `delta` to every `G_c(α)` of one class. This leaves `p(X|V)`
    /// unchanged.
    pub fn gauge_shifted(&self, class: usize, delta: f64) -> Self {
        let mut out = self.clone();
        match self.layout.variant {
            Variant::Discrete => {
                let n = self.layout.per_class();
                for p in &mut out.params[class * n..(class + 1) * n] {
                    *p += delta;
                }
            }
            Variant::Polynomial => {
                out.params[self.layout.index_of(ParamKey::new(class, 0))] += delta;
            }
        }
        out
    }

    /// Cost of a clique of size `k` with weight `lambda` and `eta0` zeros.
    #[inline]
    pub fn cost_by_count(&self, lambda: f64, k: usize, eta0: usize) -> f64 {
        lambda * self.penalty(1, eta0) + (1.0 - lambda) * self.penalty(0, k - eta0)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

#[derive(Serialize, Deserialize)]
struct ModelParamsRepr {
    class0: Vec<f64>,
    class1: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ModelRepr {
    variant: Variant,
    k_max: usize,
    parameters: ModelParamsRepr,
}

impl Serialize for PenaltyModel {
    fn serialize<S: serde::Serializer>(
        &self,
        serializer: S,
    ) -> std::result::Result<S::Ok, S::Error> {
        ModelRepr {
            variant: self.variant(),
            k_max: self.k_max(),
            parameters: ModelParamsRepr {
                class0: self.class_params(0).to_vec(),
                class1: self.class_params(1).to_vec(),
            },
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for PenaltyModel {
    fn deserialize<D: serde::Deserializer<'de>>(
        deserializer: D,
    ) -> std::result::Result<Self, D::Error> {
        let repr = ModelRepr::deserialize(deserializer)?;
        let layout = ParamLayout::new(repr.variant, repr.k_max);
        let ModelParamsRepr { class0, class1 } = repr.parameters;
        if class0.len() != layout.per_class() || class1.len() != layout.per_class() {
            return Err(serde::de::Error::custom(format!(
                "{} model with k_max {} needs {} parameters per class",
                repr.variant,
                repr.k_max,
                layout.per_class()
            )));
        }
        PenaltyModel::from_params(layout, class0.into_iter().chain(class1).collect())
            .map_err(serde::de::Error::custom)
    }
}

/// Sparse log-linear feature map of one clique; exact zeros are omitted.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureMap {
    entries: BTreeMap<ParamKey, f64>,
}

impl FeatureMap {
    pub fn get(&self, key: ParamKey) -> f64 {
        self.entries.get(&key).copied().unwrap_or(0.0)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamKey, f64)> + '_ {
        self.entries.iter().map(|(k, v)| (*k, *v))
    }

    /// `Σ w·φ`, which equals `−clique_cost`.
    pub fn dot(&self, model: &PenaltyModel) -> f64 {
        self.iter().map(|(k, v)| v * model.param(k)).sum()
    }
}

fn check_clique(edge: &Hyperedge, labels: &[u8], layout: ParamLayout) -> Result<(usize, usize)> {
    if labels.len() != edge.len() {
        return Err(Error::DimensionMismatch(format!(
            "clique has {} members but {} labels were given",
            edge.len(),
            labels.len()
        )));
    }
    layout.check_size(edge.len())?;
    count_labels(labels)
}

/// Clique cost `λ·G₁(η₀) + (1−λ)·G₀(η₁)`.
pub fn clique_cost(edge: &Hyperedge, labels: &[u8], model: &PenaltyModel) -> Result<f64> {
    let (eta0, _) = check_clique(edge, labels, model.layout())?;
    Ok(model.cost_by_count(edge.weight(), edge.len(), eta0))
}

pub fn feature_vector(edge: &Hyperedge, labels: &[u8], layout: ParamLayout) -> Result<FeatureMap> {
    let (eta0, _) = check_clique(edge, labels, layout)?;
    let mut dense = vec![0.0; layout.len()];
    layout.accumulate_features(edge.weight(), edge.len(), eta0, 1.0, &mut dense);
    let entries = dense
        .into_iter()
        .enumerate()
        .filter(|(_, v)| *v != 0.0)
        .map(|(i, v)| (layout.key_of(i), v))
        .collect();
    Ok(FeatureMap { entries })
}

/// Sum of clique costs over every hyperedge.
pub fn total_energy(
    graph: &MatchHypergraph,
    labeling: &Labeling,
    model: &PenaltyModel,
) -> Result<f64> {
    if labeling.len() != graph.node_count() {
        return Err(Error::LabelingLength {
            expected: graph.node_count(),
            got: labeling.len(),
        });
    }
    graph
        .edges()
        .iter()
        .map(|edge| clique_cost(edge, &labeling.restrict(edge), model))
        .sum()
}
