//! Approximate maximum-likelihood estimation of penalty parameters.
//!
//! The log-likelihood of labeled hypergraphs under `p(X|V) ∝ exp(Σ w·φ)` is
//! `Σ_j [w·φ(X_j) − log Z(V_j)]`; its gradient is observed minus expected
//! features. On loopy graphs the expectations come from sum-product beliefs and
//! `log Z` from the Bethe approximation, both exact on trees. An L2 penalty
//! `(l2/2)·‖w‖²` is subtracted.
//!
//! Matching hypergraphs are dense enough that the raw gradient is badly
//! scaled: features of the two classes differ in magnitude and the surrogate
//! has sharp ridges where sum-product changes fixed point. By default each
//! step is therefore taken along the gradient premultiplied by the inverse of
//! the summed per-clique feature covariance (see [`Preconditioner`]).
//!
//! Those graphs also tend to have several sum-product fixed points, so by
//! default the surrogate pools every distinct fixed point reached from a few
//! seeded starts (see [`FixedPoints`]). On trees there is only one.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::inference::{
    bethe_from_messages, build_factor_graph, run_sum_product_from, BeliefState, BpOptions,
    FactorGraph, FactorMessages,
};
use crate::potential::{Labeling, MatchHypergraph, ParamKey, ParamLayout, PenaltyModel, Variant};

#[derive(Debug, Clone)]
pub struct TrainingInstance {
    pub graph: MatchHypergraph,
    pub truth: Labeling,
}

impl TrainingInstance {
    pub fn new(graph: MatchHypergraph, truth: Labeling) -> Result<Self> {
        if truth.len() != graph.node_count() {
            return Err(Error::LabelingLength {
                expected: graph.node_count(),
                got: truth.len(),
            });
        }
        Ok(Self { graph, truth })
    }
}

/// Direction of each training step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Preconditioner {
    /// The raw gradient.
    Identity,
    /// The gradient premultiplied by `(C + r·I)⁻¹`, where `C` sums each
    /// clique's feature covariance under its count marginal: the curvature
    /// of the objective if cliques were independent. `r` is `l2` plus a small
    /// multiple of `C`'s mean diagonal, which keeps gauge directions finite.
    #[default]
    CliqueFisher,
}

impl std::fmt::Display for Preconditioner {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Preconditioner::Identity => "identity",
            Preconditioner::CliqueFisher => "clique-fisher",
        })
    }
}

impl std::str::FromStr for Preconditioner {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(Preconditioner::Identity),
            "clique-fisher" => Ok(Preconditioner::CliqueFisher),
            _ => Err(Error::InvalidConfig(format!(
                "unknown preconditioner `{s}` (expected identity or clique-fisher)"
            ))),
        }
    }
}

/// Ridge added to the clique curvature, relative to its mean diagonal.
const CURVATURE_RIDGE: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    /// Largest step; halved whenever a step would lower the objective and
    /// doubled back (up to this value) after each accepted step.
    pub step_size: f64,
    pub max_iters: usize,
    /// Stop once the gradient max-norm drops below this.
    pub grad_tolerance: f64,
    pub l2_strength: f64,
    pub variant: Variant,
    pub k_max: usize,
    pub preconditioner: Preconditioner,
    pub fixed_points: FixedPoints,
    pub bp: BpOptions,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            step_size: 0.1,
            max_iters: 200,
            grad_tolerance: 1e-3,
            l2_strength: 1e-2,
            variant: Variant::Discrete,
            k_max: 3,
            preconditioner: Preconditioner::default(),
            fixed_points: FixedPoints::default(),
            bp: BpOptions::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "step size {} must be positive",
                self.step_size
            )));
        }
        if !(self.grad_tolerance > 0.0) {
            return Err(Error::InvalidConfig(
                "gradient tolerance must be positive".into(),
            ));
        }
        if !(self.l2_strength >= 0.0) {
            return Err(Error::InvalidConfig(
                "l2 strength must be non-negative".into(),
            ));
        }
        if self.k_max < 2 {
            return Err(Error::InvalidConfig("k_max must be at least 2".into()));
        }
        self.bp.validate()
    }

    pub fn layout(&self) -> ParamLayout {
        ParamLayout::new(self.variant, self.k_max)
    }
}

/// Dense parameter-keyed vector of feature sums.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureAccumulator {
    layout: ParamLayout,
    values: Vec<f64>,
}

impl FeatureAccumulator {
    pub fn zeros(layout: ParamLayout) -> Self {
        Self {
            layout,
            values: vec![0.0; layout.len()],
        }
    }

    pub fn layout(&self) -> ParamLayout {
        self.layout
    }

    pub fn get(&self, key: ParamKey) -> f64 {
        self.values[self.layout.index_of(key)]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn max_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    fn add(&mut self, other: &FeatureAccumulator) {
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += b;
        }
    }

    pub fn is_empty(&self) -> bool {
        self.values.iter().all(|v| *v == 0.0)
    }
}

fn check_instance(inst: &TrainingInstance, layout: ParamLayout) -> Result<()> {
    if inst.truth.len() != inst.graph.node_count() {
        return Err(Error::LabelingLength {
            expected: inst.graph.node_count(),
            got: inst.truth.len(),
        });
    }
    let k = inst.graph.max_clique_size();
    if k > layout.k_max {
        return Err(Error::ModelSize {
            size: k,
            k_max: layout.k_max,
        });
    }
    Ok(())
}

/// `Σ_j Σ_V φ(V; X_j)` at the ground-truth labels.
pub fn observed_features(
    instances: &[TrainingInstance],
    layout: ParamLayout,
) -> Result<FeatureAccumulator> {
    let mut acc = FeatureAccumulator::zeros(layout);
    for inst in instances {
        check_instance(inst, layout)?;
        let labels = inst.truth.labels();
        for edge in inst.graph.edges() {
            let eta0 = edge.node_ids().iter().filter(|&&i| labels[i] == 0).count();
            layout.accumulate_features(edge.weight(), edge.len(), eta0, 1.0, &mut acc.values);
        }
    }
    Ok(acc)
}

/// Row-major sum over cliques of the feature covariance under each clique's
/// count marginal.
fn clique_curvature(
    graph: &MatchHypergraph,
    beliefs: &BeliefState,
    layout: ParamLayout,
) -> Vec<f64> {
    let n = layout.len();
    let mut out = vec![0.0; n * n];
    let mut states: Vec<Vec<f64>> = Vec::new();
    let mut mean = vec![0.0; n];
    for (edge, counts) in graph.edges().iter().zip(&beliefs.clique_count_marginals) {
        let k = edge.len();
        states.clear();
        mean.iter_mut().for_each(|m| *m = 0.0);
        for (eta1, p) in counts.iter().enumerate() {
            let mut v = vec![0.0; n];
            layout.accumulate_features(edge.weight(), k, k - eta1, 1.0, &mut v);
            for (m, x) in mean.iter_mut().zip(&v) {
                *m += p * x;
            }
            states.push(v);
        }
        for (v, p) in states.iter().zip(counts) {
            for a in 0..n {
                let da = v[a] - mean[a];
                if da == 0.0 {
                    continue;
                }
                for b in 0..n {
                    out[a * n + b] += p * da * (v[b] - mean[b]);
                }
            }
        }
    }
    out
}

fn expected_from_beliefs(
    graph: &MatchHypergraph,
    beliefs: &BeliefState,
    layout: ParamLayout,
) -> FeatureAccumulator {
    let mut acc = FeatureAccumulator::zeros(layout);
    for (edge, counts) in graph.edges().iter().zip(&beliefs.clique_count_marginals) {
        let k = edge.len();
        for (eta1, p) in counts.iter().enumerate() {
            layout.accumulate_features(edge.weight(), k, k - eta1, *p, &mut acc.values);
        }
    }
    acc
}

/// `Σ_V Σ_X φ(V; X)·p(X|V)` under `model`, with clique marginals from
/// sum-product.
pub fn expected_features(
    inst: &TrainingInstance,
    model: &PenaltyModel,
    bp: &BpOptions,
) -> Result<FeatureAccumulator> {
    let fg = build_factor_graph(&inst.graph, model)?;
    let beliefs = run_sum_product_from(&fg, bp, FactorMessages::uniform(&fg))?;
    Ok(expected_from_beliefs(&inst.graph, &beliefs, model.layout()))
}

/// Which sum-product fixed points enter the surrogate.
///
/// Dense matching hypergraphs often have several stable fixed points: one
/// close to the observed labeling and others near "everything correct" or
/// "everything wrong". A single run from uniform messages lands in whichever
/// basin contains the start, so the surrogate jumps wherever that basin
/// boundary moves and ignores modes it never visits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FixedPoints {
    /// One run from uniform messages.
    Uniform,
    /// Runs from uniform messages and from messages leaning toward the
    /// observed, all-zero and all-one labelings. Each distinct converged fixed
    /// point contributes its Bethe partition function, so `log Z` is their
    /// log-sum-exp and expectations are the matching mixture.
    #[default]
    Pooled,
}

impl std::fmt::Display for FixedPoints {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FixedPoints::Uniform => "uniform",
            FixedPoints::Pooled => "pooled",
        })
    }
}

impl std::str::FromStr for FixedPoints {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(FixedPoints::Uniform),
            "pooled" => Ok(FixedPoints::Pooled),
            _ => Err(Error::InvalidConfig(format!(
                "unknown fixed-point search `{s}` (expected uniform or pooled)"
            ))),
        }
    }
}

/// Mass a seeded start puts on its target label.
const SEED_CONFIDENCE: f64 = 0.9;

/// Two fixed points are the same if no node belief differs by this much.
const SAME_FIXED_POINT: f64 = 0.1;

fn seed_messages(
    fg: &FactorGraph,
    inst: &TrainingInstance,
    search: FixedPoints,
) -> Result<Vec<FactorMessages>> {
    let mut seeds = vec![FactorMessages::uniform(fg)];
    if search == FixedPoints::Pooled {
        let n = inst.truth.len();
        seeds.push(FactorMessages::toward(
            fg,
            inst.truth.labels(),
            SEED_CONFIDENCE,
        )?);
        seeds.push(FactorMessages::toward(fg, &vec![0; n], SEED_CONFIDENCE)?);
        seeds.push(FactorMessages::toward(fg, &vec![1; n], SEED_CONFIDENCE)?);
    }
    Ok(seeds)
}

/// Objective value, gradient and sum-product state at one parameter point.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub objective: f64,
    pub gradient: FeatureAccumulator,
    /// Row-major clique curvature; see [`Preconditioner::CliqueFisher`].
    pub curvature: Vec<f64>,
    /// Instances where no start reached a converged fixed point.
    pub bp_nonconverged: usize,
    /// Distinct fixed points pooled per instance.
    pub fixed_points: Vec<usize>,
}

struct InstanceEval {
    log_z: f64,
    expected: FeatureAccumulator,
    curvature: Vec<f64>,
    converged: bool,
    fixed_points: usize,
}

fn same_fixed_point(a: &BeliefState, b: &BeliefState) -> bool {
    a.node_beliefs
        .iter()
        .zip(&b.node_beliefs)
        .all(|(x, y)| (x[1] - y[1]).abs() < SAME_FIXED_POINT)
}

fn evaluate_instance(
    inst: &TrainingInstance,
    model: &PenaltyModel,
    bp: &BpOptions,
    search: FixedPoints,
) -> Result<InstanceEval> {
    let fg = build_factor_graph(&inst.graph, model)?;
    let seeds = seed_messages(&fg, inst, search)?;
    let mut runs = Vec::with_capacity(seeds.len());
    for seed in seeds {
        let beliefs = run_sum_product_from(&fg, bp, seed)?;
        let log_z = bethe_from_messages(&fg, &beliefs.messages)?;
        runs.push((log_z, beliefs));
    }

    // Unconverged runs are transients unless nothing converged.
    let converged = runs.iter().any(|r| r.1.converged);
    let mut pool: Vec<(f64, BeliefState)> = Vec::new();
    for (log_z, beliefs) in runs {
        if converged && !beliefs.converged {
            continue;
        }
        if pool.iter().any(|(_, b)| same_fixed_point(b, &beliefs)) {
            continue;
        }
        pool.push((log_z, beliefs));
    }

    let layout = model.layout();
    let n = layout.len();
    let top = pool.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = pool.iter().map(|p| (p.0 - top).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut expected = FeatureAccumulator::zeros(layout);
    let mut curvature = vec![0.0; n * n];
    let mut means = Vec::with_capacity(pool.len());
    for ((_, beliefs), w) in pool.iter().zip(&weights) {
        let w = w / total;
        let e = expected_from_beliefs(&inst.graph, beliefs, layout);
        for (acc, x) in expected.values.iter_mut().zip(&e.values) {
            *acc += w * x;
        }
        for (acc, x) in curvature
            .iter_mut()
            .zip(clique_curvature(&inst.graph, beliefs, layout))
        {
            *acc += w * x;
        }
        means.push((w, e));
    }
    // Spread between fixed points adds to the curvature of the mixture.
    if means.len() > 1 {
        for (w, e) in &means {
            let d: Vec<f64> = e
                .values
                .iter()
                .zip(&expected.values)
                .map(|(a, b)| a - b)
                .collect();
            for a in 0..n {
                for b in 0..n {
                    curvature[a * n + b] += w * d[a] * d[b];
                }
            }
        }
    }
    Ok(InstanceEval {
        log_z: top + total.ln(),
        expected,
        curvature,
        converged,
        fixed_points: pool.len(),
    })
}

/// Evaluates objective and gradient together. Every call restarts
/// sum-product from its seeds, so the value depends only on the parameters.
pub fn evaluate(
    instances: &[TrainingInstance],
    model: &PenaltyModel,
    l2_strength: f64,
    bp: &BpOptions,
    search: FixedPoints,
) -> Result<Evaluation> {
    let layout = model.layout();
    let observed = observed_features(instances, layout)?;
    let per: Vec<InstanceEval> = instances
        .par_iter()
        .map(|inst| evaluate_instance(inst, model, bp, search))
        .collect::<Result<_>>()?;

    let w = model.params();
    let mut expected = FeatureAccumulator::zeros(layout);
    let mut log_z = 0.0;
    let mut curvature = vec![0.0; layout.len() * layout.len()];
    for e in &per {
        expected.add(&e.expected);
        log_z += e.log_z;
        for (c, x) in curvature.iter_mut().zip(&e.curvature) {
            *c += x;
        }
    }
    let fit: f64 = observed.values.iter().zip(w).map(|(o, p)| o * p).sum();
    let norm2: f64 = w.iter().map(|p| p * p).sum();
    let gradient = FeatureAccumulator {
        layout,
        values: observed
            .values
            .iter()
            .zip(&expected.values)
            .zip(w)
            .map(|((o, e), p)| o - e - l2_strength * p)
            .collect(),
    };
    Ok(Evaluation {
        objective: fit - log_z - 0.5 * l2_strength * norm2,
        gradient,
        curvature,
        bp_nonconverged: per.iter().filter(|e| !e.converged).count(),
        fixed_points: per.iter().map(|e| e.fixed_points).collect(),
    })
}

/// Regularized (surrogate) log-likelihood.
pub fn objective(
    instances: &[TrainingInstance],
    model: &PenaltyModel,
    config: &TrainConfig,
) -> Result<f64> {
    Ok(evaluate(
        instances,
        model,
        config.l2_strength,
        &config.bp,
        config.fixed_points,
    )?
    .objective)
}

/// Observed minus expected features minus `l2·w`.
pub fn gradient(
    instances: &[TrainingInstance],
    model: &PenaltyModel,
    config: &TrainConfig,
) -> Result<FeatureAccumulator> {
    Ok(evaluate(
        instances,
        model,
        config.l2_strength,
        &config.bp,
        config.fixed_points,
    )?
    .gradient)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainLogRow {
    pub iteration: usize,
    pub objective: f64,
    pub grad_max_norm: f64,
    pub step_size: f64,
    pub bp_nonconverged_count: usize,
}

pub fn write_train_log_csv<W: Write>(rows: &[TrainLogRow], mut out: W) -> Result<()> {
    writeln!(
        out,
        "iteration,objective,grad_max_norm,step_size,bp_nonconverged_count"
    )?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{}",
            r.iteration, r.objective, r.grad_max_norm, r.step_size, r.bp_nonconverged_count
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: PenaltyModel,
    /// Row 0 is the starting point; each later row is an accepted step.
    pub log: Vec<TrainLogRow>,
    pub converged: bool,
}

/// Smallest step, relative to the configured one, before giving up.
const MIN_STEP_RATIO: f64 = 1e-12;

/// Gradient ascent from the uniform model (all parameters zero).
pub fn train(instances: &[TrainingInstance], config: &TrainConfig) -> Result<TrainOutcome> {
    train_from(
        instances,
        config,
        PenaltyModel::zeros(config.variant, config.k_max),
    )
}

/// Step direction at `eval` under `pre`; falls back to the gradient when the
/// curvature cannot be factored.
pub fn step_direction(eval: &Evaluation, pre: Preconditioner, l2_strength: f64) -> Vec<f64> {
    let g = eval.gradient.values();
    match pre {
        Preconditioner::Identity => g.to_vec(),
        Preconditioner::CliqueFisher => {
            let n = g.len();
            let mut c = DMatrix::from_row_slice(n, n, &eval.curvature);
            let ridge = CURVATURE_RIDGE * c.trace() / n as f64 + l2_strength;
            if !(ridge > 0.0) {
                return g.to_vec();
            }
            for i in 0..n {
                c[(i, i)] += ridge;
            }
            match c.cholesky() {
                Some(chol) => chol
                    .solve(&DVector::from_row_slice(g))
                    .iter()
                    .copied()
                    .collect(),
                None => g.to_vec(),
            }
        }
    }
}

/// Gradient ascent from `init`. A proposed step that would decrease the
/// objective is retried at half the step; the step doubles again, up to the
/// configured size, after each accepted move.
pub fn train_from(
    instances: &[TrainingInstance],
    config: &TrainConfig,
    init: PenaltyModel,
) -> Result<TrainOutcome> {
    config.validate()?;
    if instances.is_empty() {
        return Err(Error::InvalidConfig("no training instances".into()));
    }
    if init.layout() != config.layout() {
        return Err(Error::InvalidModel(
            "initial model does not match the training layout".into(),
        ));
    }
    let layout = config.layout();
    let mut model = init;
    let mut current = evaluate(
        instances,
        &model,
        config.l2_strength,
        &config.bp,
        config.fixed_points,
    )?;
    let mut step = config.step_size;
    let mut log = vec![TrainLogRow {
        iteration: 0,
        objective: current.objective,
        grad_max_norm: current.gradient.max_norm(),
        step_size: step,
        bp_nonconverged_count: current.bp_nonconverged,
    }];
    let mut converged = false;

    'outer: for iteration in 1..=config.max_iters {
        if current.gradient.max_norm() < config.grad_tolerance {
            converged = true;
            break;
        }
        let direction = step_direction(&current, config.preconditioner, config.l2_strength);
        loop {
            let proposal: Vec<f64> = model
                .params()
                .iter()
                .zip(&direction)
                .map(|(w, g)| w + step * g)
                .collect();
            let candidate = PenaltyModel::from_params(layout, proposal)?;
            let next = evaluate(
                instances,
                &candidate,
                config.l2_strength,
                &config.bp,
                config.fixed_points,
            )?;
            if next.objective >= current.objective
                && next.bp_nonconverged <= current.bp_nonconverged
            {
                model = candidate;
                current = next;
                log.push(TrainLogRow {
                    iteration,
                    objective: current.objective,
                    grad_max_norm: current.gradient.max_norm(),
                    step_size: step,
                    bp_nonconverged_count: current.bp_nonconverged,
                });
                step = (2.0 * step).min(config.step_size);
                break;
            }
            step *= 0.5;
            if step < config.step_size * MIN_STEP_RATIO {
                break 'outer;
            }
        }
    }
    if !converged && current.gradient.max_norm() < config.grad_tolerance {
        converged = true;
    }
    Ok(TrainOutcome {
        model,
        log,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inference::exact_marginals;
    use crate::potential::{CandidateMatch, Hyperedge};
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn exact_bp() -> BpOptions {
        BpOptions {
            max_iters: 1000,
            tolerance: 1e-13,
            damping: 0.0,
            ..Default::default()
        }
    }

    fn graph(n: usize, edges: Vec<(Vec<usize>, f64)>) -> MatchHypergraph {
        MatchHypergraph::new(
            (0..n)
                .map(|i| CandidateMatch::new(i, i, 1.0).unwrap())
                .collect(),
            edges
                .into_iter()
                .map(|(v, w)| Hyperedge::new(v, w).unwrap())
                .collect(),
        )
        .unwrap()
    }

    /// Random tree: every new clique shares one existing node.
    fn random_tree(rng: &mut ChaCha8Rng, cliques: usize, k_max: usize) -> MatchHypergraph {
        let mut n = 1;
        let mut edges = Vec::new();
        for _ in 0..cliques {
            let k = rng.random_range(2..=k_max);
            let mut members = vec![rng.random_range(0..n)];
            members.extend(n..n + k - 1);
            n += k - 1;
            edges.push((members, rng.random::<f64>()));
        }
        graph(n, edges)
    }

    fn random_labels(rng: &mut ChaCha8Rng, n: usize) -> Labeling {
        Labeling::new((0..n).map(|_| rng.random_range(0..2u8)).collect()).unwrap()
    }

    fn random_model(rng: &mut ChaCha8Rng, variant: Variant, k_max: usize) -> PenaltyModel {
        let layout = ParamLayout::new(variant, k_max);
        PenaltyModel::from_params(
            layout,
            (0..layout.len())
                .map(|_| rng.random_range(-3.0..3.0))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn observed_examples() {
        let layout = ParamLayout::new(Variant::Discrete, 3);
        let inst = TrainingInstance::new(
            graph(3, vec![(vec![0, 1, 2], 1.0)]),
            Labeling::all(1, 3).unwrap(),
        )
        .unwrap();
        let obs = observed_features(std::slice::from_ref(&inst), layout).unwrap();
        assert_eq!(obs.get(ParamKey::new(1, 0)), -1.0);
        assert_eq!(obs.values().iter().filter(|v| **v != 0.0).count(), 1);
        let twice = observed_features(&[inst.clone(), inst], layout).unwrap();
        assert_eq!(twice.get(ParamKey::new(1, 0)), -2.0);
        let empty = TrainingInstance::new(graph(4, vec![]), Labeling::all(0, 4).unwrap()).unwrap();
        assert!(observed_features(&[empty], layout).unwrap().is_empty());
        assert!(TrainingInstance::new(graph(4, vec![]), Labeling::all(0, 3).unwrap()).is_err());
    }

    #[test]
    fn expected_under_uniform_model() {
        let inst = TrainingInstance::new(
            graph(3, vec![(vec![0, 1, 2], 1.0)]),
            Labeling::all(1, 3).unwrap(),
        )
        .unwrap();
        let model = PenaltyModel::zeros(Variant::Discrete, 3);
        let exp = expected_features(&inst, &model, &exact_bp()).unwrap();
        let binom = [1.0, 3.0, 3.0, 1.0];
        for a in 0..=3 {
            // φ₁(α) fires when η₀ = α, i.e. η₁ = 3 − α
            assert_abs_diff_eq!(
                exp.get(ParamKey::new(1, a)),
                -binom[3 - a] / 8.0,
                epsilon = 1e-12
            );
            assert_abs_diff_eq!(exp.get(ParamKey::new(0, a)), 0.0, epsilon = 1e-15);
        }
        let fg = build_factor_graph(&inst.graph, &model).unwrap();
        let ex = exact_marginals(&fg).unwrap();
        for (a, p) in ex.clique_count_marginals[0].iter().enumerate() {
            assert_abs_diff_eq!(*p, binom[a] / 8.0, epsilon = 1e-12);
        }

        let zero = TrainingInstance::new(
            graph(3, vec![(vec![0, 1, 2], 0.0)]),
            Labeling::all(1, 3).unwrap(),
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let exp = expected_features(
            &zero,
            &random_model(&mut rng, Variant::Discrete, 3),
            &exact_bp(),
        )
        .unwrap();
        assert!((0..=3).all(|a| exp.get(ParamKey::new(1, a)) == 0.0));
    }

    /// Expected features from brute-force enumeration of the joint.
    fn exact_expected(inst: &TrainingInstance, model: &PenaltyModel) -> Vec<f64> {
        let fg = build_factor_graph(&inst.graph, model).unwrap();
        let ex = exact_marginals(&fg).unwrap();
        let layout = model.layout();
        let mut out = vec![0.0; layout.len()];
        for (edge, counts) in inst.graph.edges().iter().zip(&ex.clique_count_marginals) {
            for (eta1, p) in counts.iter().enumerate() {
                layout.accumulate_features(
                    edge.weight(),
                    edge.len(),
                    edge.len() - eta1,
                    *p,
                    &mut out,
                );
            }
        }
        out
    }

    #[test]
    fn tree_expectations_match_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for variant in [Variant::Discrete, Variant::Polynomial] {
            for _ in 0..5 {
                let g = random_tree(&mut rng, 5, 4);
                let n = g.node_count();
                let inst = TrainingInstance::new(g, random_labels(&mut rng, n)).unwrap();
                let model = random_model(&mut rng, variant, 4);
                let bp = expected_features(&inst, &model, &exact_bp()).unwrap();
                for (a, b) in bp.values().iter().zip(exact_expected(&inst, &model)) {
                    assert_abs_diff_eq!(*a, b, epsilon = 1e-8);
                }
            }
        }
    }

    fn exact_log_likelihood(inst: &TrainingInstance, model: &PenaltyModel) -> f64 {
        let fg = build_factor_graph(&inst.graph, model).unwrap();
        let energy = crate::potential::total_energy(&inst.graph, &inst.truth, model).unwrap();
        -energy - exact_marginals(&fg).unwrap().log_z
    }

    #[test]
    fn objective_examples() {
        let cfg = TrainConfig {
            bp: exact_bp(),
            ..Default::default()
        };
        let inst = TrainingInstance::new(graph(5, vec![]), Labeling::all(0, 5).unwrap()).unwrap();
        let m0 = PenaltyModel::zeros(Variant::Discrete, 3);
        assert_abs_diff_eq!(
            objective(&[inst], &m0, &cfg).unwrap(),
            -5.0 * std::f64::consts::LN_2,
            epsilon = 1e-12
        );

        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..5 {
            let g = random_tree(&mut rng, 4, 3);
            let n = g.node_count();
            let inst = TrainingInstance::new(g, random_labels(&mut rng, n)).unwrap();
            let model = random_model(&mut rng, Variant::Discrete, 3);
            let norm2: f64 = model.params().iter().map(|p| p * p).sum();
            let obj = objective(std::slice::from_ref(&inst), &model, &cfg).unwrap();
            assert_abs_diff_eq!(
                obj + 0.5 * cfg.l2_strength * norm2,
                exact_log_likelihood(&inst, &model),
                epsilon = 1e-8
            );

            // a gauge shift changes only the regularizer
            let shifted = model.gauge_shifted(1, 0.7);
            let norm2s: f64 = shifted.params().iter().map(|p| p * p).sum();
            let objs = objective(std::slice::from_ref(&inst), &shifted, &cfg).unwrap();
            assert_abs_diff_eq!(
                objs + 0.5 * cfg.l2_strength * norm2s,
                obj + 0.5 * cfg.l2_strength * norm2,
                epsilon = 1e-8
            );
        }
    }

    #[test]
    fn fixed_point_search_names() {
        for fp in [FixedPoints::Uniform, FixedPoints::Pooled] {
            assert_eq!(fp.to_string().parse::<FixedPoints>().unwrap(), fp);
        }
        assert_eq!(FixedPoints::default(), FixedPoints::Pooled);
        assert!(matches!(
            "random".parse::<FixedPoints>(),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn pooling_changes_nothing_on_trees() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let bp = exact_bp();
        for _ in 0..5 {
            let g = random_tree(&mut rng, 5, 3);
            let n = g.node_count();
            let inst = [TrainingInstance::new(g, random_labels(&mut rng, n)).unwrap()];
            let model = random_model(&mut rng, Variant::Discrete, 3);
            let one = evaluate(&inst, &model, 0.0, &bp, FixedPoints::Uniform).unwrap();
            let pooled = evaluate(&inst, &model, 0.0, &bp, FixedPoints::Pooled).unwrap();
            assert_eq!(pooled.fixed_points, vec![1]);
            assert_abs_diff_eq!(one.objective, pooled.objective, epsilon = 1e-9);
            for (a, b) in one.gradient.values().iter().zip(pooled.gradient.values()) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn pooling_keeps_both_modes_of_a_bistable_graph() {
        // every triangle of six nodes, penalizing any mixed labeling
        let mut edges = Vec::new();
        for a in 0..6 {
            for b in a + 1..6 {
                for c in b + 1..6 {
                    edges.push((vec![a, b, c], 0.5));
                }
            }
        }
        let layout = ParamLayout::new(Variant::Discrete, 3);
        let mut params = vec![4.0; layout.len()];
        params[layout.index_of(ParamKey::new(1, 0))] = 0.0;
        params[layout.index_of(ParamKey::new(0, 0))] = 0.0;
        let model = PenaltyModel::from_params(layout, params).unwrap();
        let inst = [TrainingInstance::new(graph(6, edges), Labeling::all(1, 6).unwrap()).unwrap()];
        let bp = BpOptions::default();
        let one = evaluate(&inst, &model, 0.0, &bp, FixedPoints::Uniform).unwrap();
        let pooled = evaluate(&inst, &model, 0.0, &bp, FixedPoints::Pooled).unwrap();
        assert_eq!(one.fixed_points, vec![1]);
        assert!(pooled.fixed_points[0] >= 2, "{:?}", pooled.fixed_points);
        assert_eq!(pooled.bp_nonconverged, 0);
        // more partition mass, so a lower likelihood of the observed labeling
        assert!(pooled.objective < one.objective);
    }

    #[test]
    fn gradient_without_data_is_regularizer() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let model = random_model(&mut rng, Variant::Discrete, 3);
        let cfg = TrainConfig::default();
        let g = gradient(&[], &model, &cfg).unwrap();
        for (gv, w) in g.values().iter().zip(model.params()) {
            assert_abs_diff_eq!(*gv, -cfg.l2_strength * w, epsilon = 1e-15);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let h = 1e-5;
        for variant in [Variant::Discrete, Variant::Polynomial] {
            let cfg = TrainConfig {
                bp: exact_bp(),
                variant,
                k_max: 4,
                ..Default::default()
            };
            let instances: Vec<_> = (0..2)
                .map(|_| {
                    let g = random_tree(&mut rng, 4, 4);
                    let n = g.node_count();
                    TrainingInstance::new(g, random_labels(&mut rng, n)).unwrap()
                })
                .collect();
            let model = random_model(&mut rng, variant, 4);
            let grad = gradient(&instances, &model, &cfg).unwrap();
            for i in 0..model.params().len() {
                let mut plus = model.params().to_vec();
                let mut minus = plus.clone();
                plus[i] += h;
                minus[i] -= h;
                let fp = objective(
                    &instances,
                    &PenaltyModel::from_params(model.layout(), plus).unwrap(),
                    &cfg,
                )
                .unwrap();
                let fm = objective(
                    &instances,
                    &PenaltyModel::from_params(model.layout(), minus).unwrap(),
                    &cfg,
                )
                .unwrap();
                let fd = (fp - fm) / (2.0 * h);
                let g = grad.values()[i];
                let rel = (g - fd).abs() / g.abs().max(fd.abs()).max(1e-8);
                assert!(rel <= 1e-4, "{variant} param {i}: analytic {g} vs fd {fd}");
            }
        }
    }

    #[test]
    fn clique_curvature_is_exact_hessian_for_disjoint_cliques() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for variant in [Variant::Discrete, Variant::Polynomial] {
            let cfg = TrainConfig {
                bp: exact_bp(),
                variant,
                l2_strength: 0.0,
                ..Default::default()
            };
            let g = graph(
                8,
                vec![
                    (vec![0, 1, 2], 0.7),
                    (vec![3, 4, 5], 0.2),
                    (vec![6, 7], 0.5),
                ],
            );
            let inst = vec![TrainingInstance::new(g, random_labels(&mut rng, 8)).unwrap()];
            let model = random_model(&mut rng, variant, 3);
            let at = evaluate(&inst, &model, 0.0, &cfg.bp, cfg.fixed_points).unwrap();
            let n = model.params().len();
            let h = 1e-5;
            for j in 0..n {
                let mut plus = model.params().to_vec();
                let mut minus = plus.clone();
                plus[j] += h;
                minus[j] -= h;
                let gp = gradient(
                    &inst,
                    &PenaltyModel::from_params(model.layout(), plus).unwrap(),
                    &cfg,
                )
                .unwrap();
                let gm = gradient(
                    &inst,
                    &PenaltyModel::from_params(model.layout(), minus).unwrap(),
                    &cfg,
                )
                .unwrap();
                for i in 0..n {
                    let hess = (gp.values()[i] - gm.values()[i]) / (2.0 * h);
                    assert_abs_diff_eq!(-hess, at.curvature[i * n + j], epsilon = 1e-6);
                }
            }
        }
    }

    #[test]
    fn preconditioners() {
        let inst = TrainingInstance::new(
            graph(3, vec![(vec![0, 1, 2], 0.6)]),
            Labeling::new(vec![1, 1, 0]).unwrap(),
        )
        .unwrap();
        let model = PenaltyModel::zeros(Variant::Discrete, 3);
        let eval = evaluate(
            std::slice::from_ref(&inst),
            &model,
            0.0,
            &exact_bp(),
            FixedPoints::Pooled,
        )
        .unwrap();
        assert_eq!(
            step_direction(&eval, Preconditioner::Identity, 0.0),
            eval.gradient.values()
        );
        let d = step_direction(&eval, Preconditioner::CliqueFisher, 0.0);
        // ascent direction
        let dot: f64 = d
            .iter()
            .zip(eval.gradient.values())
            .map(|(a, b)| a * b)
            .sum();
        assert!(dot > 0.0);
        // no cliques: nothing to factor, plain gradient
        let empty = TrainingInstance::new(graph(2, vec![]), Labeling::all(0, 2).unwrap()).unwrap();
        let eval = evaluate(&[empty], &model, 0.0, &exact_bp(), FixedPoints::Pooled).unwrap();
        assert_eq!(
            step_direction(&eval, Preconditioner::CliqueFisher, 0.0),
            eval.gradient.values()
        );
        for p in [Preconditioner::Identity, Preconditioner::CliqueFisher] {
            assert_eq!(p.to_string().parse::<Preconditioner>().unwrap(), p);
        }
        assert!("newton".parse::<Preconditioner>().is_err());
    }

    /// Draws `count` exact samples of the joint by inverse-CDF over all labelings.
    fn exact_samples(
        inst: &TrainingInstance,
        model: &PenaltyModel,
        count: usize,
        rng: &mut ChaCha8Rng,
    ) -> Vec<Labeling> {
        let n = inst.graph.node_count();
        let weights: Vec<f64> = (0..1usize << n)
            .map(|bits| {
                let l = Labeling::new((0..n).map(|i| ((bits >> i) & 1) as u8).collect()).unwrap();
                (-crate::potential::total_energy(&inst.graph, &l, model).unwrap()).exp()
            })
            .collect();
        let mut cdf = Vec::with_capacity(weights.len());
        let mut acc = 0.0;
        for w in &weights {
            acc += w;
            cdf.push(acc);
        }
        (0..count)
            .map(|_| {
                let u = rng.random::<f64>() * acc;
                let bits = cdf.partition_point(|c| *c < u).min(weights.len() - 1);
                Labeling::new((0..n).map(|i| ((bits >> i) & 1) as u8).collect()).unwrap()
            })
            .collect()
    }

    #[test]
    fn sampled_observed_features_approach_expected() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = graph(
            7,
            vec![
                (vec![0, 1, 2], 0.8),
                (vec![2, 3, 4], 0.3),
                (vec![4, 5, 6], 0.6),
            ],
        );
        let model =
            PenaltyModel::discrete(vec![0.0, 0.4, 1.4, 1.5], vec![0.0, 1.1, 1.5, 2.4]).unwrap();
        let base = TrainingInstance::new(g.clone(), Labeling::all(0, 7).unwrap()).unwrap();
        let expected = expected_features(&base, &model, &exact_bp()).unwrap();
        let mut gaps = Vec::new();
        for count in [1_000usize, 100_000] {
            let samples = exact_samples(&base, &model, count, &mut rng);
            let instances: Vec<_> = samples
                .into_iter()
                .map(|l| TrainingInstance::new(g.clone(), l).unwrap())
                .collect();
            let obs = observed_features(&instances, model.layout()).unwrap();
            let mut gap: f64 = 0.0;
            for (o, e) in obs.values().iter().zip(expected.values()) {
                if e.abs() > 0.05 {
                    gap = gap.max((o / count as f64 - e).abs() / e.abs());
                }
            }
            gaps.push(gap);
        }
        assert!(gaps[1] < gaps[0]);
        assert!(gaps[1] <= 0.05, "relative gap {}", gaps[1]);
    }

    #[test]
    fn training_log_is_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let instances: Vec<_> = (0..4)
            .map(|_| {
                let g = random_tree(&mut rng, 6, 3);
                let n = g.node_count();
                TrainingInstance::new(g, random_labels(&mut rng, n)).unwrap()
            })
            .collect();
        for preconditioner in [Preconditioner::Identity, Preconditioner::CliqueFisher] {
            let cfg = TrainConfig {
                bp: exact_bp(),
                max_iters: 2000,
                preconditioner,
                ..Default::default()
            };
            let out = train(&instances, &cfg).unwrap();
            for w in out.log.windows(2) {
                assert!(w[1].objective >= w[0].objective);
            }
            assert!(
                out.converged,
                "final grad norm {}",
                out.log.last().unwrap().grad_max_norm
            );
            assert!(out.log.last().unwrap().grad_max_norm < 1e-3);
            let mut csv = Vec::new();
            write_train_log_csv(&out.log, &mut csv).unwrap();
            assert!(String::from_utf8(csv).unwrap().starts_with(
                "iteration,objective,grad_max_norm,step_size,bp_nonconverged_count\n0,"
            ));
            assert!(train(&[], &cfg).is_err());
        }
    }

    #[test]
    fn gauge_shifted_start_reaches_same_distribution() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let instances: Vec<_> = (0..3)
            .map(|_| {
                let g = random_tree(&mut rng, 5, 3);
                let n = g.node_count();
                TrainingInstance::new(g, random_labels(&mut rng, n)).unwrap()
            })
            .collect();
        let cfg = TrainConfig {
            bp: exact_bp(),
            max_iters: 50,
            l2_strength: 0.0,
            ..Default::default()
        };
        let zero = PenaltyModel::zeros(Variant::Discrete, 3);
        let a = train_from(&instances, &cfg, zero.clone()).unwrap();
        let b = train_from(
            &instances,
            &cfg,
            zero.gauge_shifted(0, 1.3).gauge_shifted(1, -0.4),
        )
        .unwrap();
        for (x, y) in a
            .model
            .normalized_penalties()
            .iter()
            .zip(b.model.normalized_penalties().iter())
        {
            for (p, q) in x.iter().zip(y) {
                assert_abs_diff_eq!(p, q, epsilon = 1e-6);
            }
        }
        let held_out = random_tree(&mut rng, 5, 3);
        let bp = |m: &PenaltyModel| {
            let fg = build_factor_graph(&held_out, m).unwrap();
            crate::inference::run_sum_product(&fg, &exact_bp()).unwrap()
        };
        let (ba, bb) = (bp(&a.model), bp(&b.model));
        for (p, q) in ba.node_beliefs.iter().zip(&bb.node_beliefs) {
            assert_abs_diff_eq!(p[1], q[1], epsilon = 1e-6);
        }
    }

    #[test]
    fn polynomial_training_recovers_quadratic_generator() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let table = |g: [f64; 3]| {
            (0..=3)
                .map(|a| g[0] + a as f64 * g[1] + (a * a) as f64 * g[2] / 2.0)
                .collect::<Vec<_>>()
        };
        let g1 = [0.0, 1.6, -0.4];
        let g0 = [0.0, 0.3, 0.5];
        let generator = PenaltyModel::discrete(table(g0), table(g1)).unwrap();
        let mut instances = Vec::new();
        for _ in 0..1000 {
            let g = random_tree(&mut rng, 6, 3);
            let n = g.node_count();
            let probe = TrainingInstance::new(g.clone(), Labeling::all(0, n).unwrap()).unwrap();
            let label = exact_samples(&probe, &generator, 1, &mut rng)
                .pop()
                .unwrap();
            instances.push(TrainingInstance::new(g, label).unwrap());
        }
        let cfg = TrainConfig {
            bp: exact_bp(),
            variant: Variant::Polynomial,
            l2_strength: 1e-3,
            max_iters: 3000,
            step_size: 0.01,
            ..Default::default()
        };
        let learned = train(&instances, &cfg).unwrap().model;
        let mut worst: f64 = 0.0;
        for _ in 0..10 {
            let held_out = random_tree(&mut rng, 6, 3);
            let marg = |m: &PenaltyModel| {
                let fg = build_factor_graph(&held_out, m).unwrap();
                crate::inference::run_sum_product(&fg, &exact_bp())
                    .unwrap()
                    .clique_count_marginals
            };
            for (p, q) in marg(&learned).iter().zip(marg(&generator).iter()) {
                let tv: f64 = 0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>();
                worst = worst.max(tv);
            }
        }
        assert!(worst <= 0.02, "worst total variation {worst}");
    }
}
