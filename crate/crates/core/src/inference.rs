//! Sum-product belief propagation over count-symmetric factors.
//!
//! Every factor produced from a hyperedge depends on its members' labels only
//! through `η₀`, the number of zeros. Messages out of such a factor are
//! computed by multiplying the incoming messages as polynomials in a
//! "zero-count" indeterminate, which costs `O(k²)` instead of the `2^(k−1)`
//! terms of the defining sum.
//!
//! Messages are kept in the log domain and normalized so that
//! `log Σ_x exp(m(x)) = 0`.

use std::io::Write;

use crate::error::{Error, Result};
use crate::potential::{MatchHypergraph, PenaltyModel};

/// A factor over `vars` whose value is `exp(log_table[η₀])`.
#[derive(Debug, Clone, PartialEq)]
pub struct Factor {
    vars: Vec<usize>,
    log_table: Vec<f64>,
    // table divided by its largest entry, and the log of that entry
    scaled: Vec<f64>,
    log_scale: f64,
}

impl Factor {
    pub fn new(vars: Vec<usize>, log_table: Vec<f64>) -> Result<Self> {
        if vars.is_empty() {
            return Err(Error::InvalidEdge("factor without variables".into()));
        }
        if log_table.len() != vars.len() + 1 {
            return Err(Error::InvalidEdge(format!(
                "factor over {} variables needs {} table entries, got {}",
                vars.len(),
                vars.len() + 1,
                log_table.len()
            )));
        }
        if let Some(bad) = log_table.iter().find(|v| !v.is_finite()) {
            return Err(Error::NumericalDomain(format!(
                "non-finite log factor value {bad}"
            )));
        }
        let log_scale = log_table.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let scaled = log_table.iter().map(|v| (v - log_scale).exp()).collect();
        Ok(Self {
            vars,
            log_table,
            scaled,
            log_scale,
        })
    }

    /// Builds a factor from a strictly positive table indexed by `η₀`.
    pub fn from_table(vars: Vec<usize>, table: &[f64]) -> Result<Self> {
        if let Some(bad) = table.iter().find(|v| !(**v > 0.0) || !v.is_finite()) {
            return Err(Error::NumericalDomain(format!(
                "factor entry {bad} is not positive"
            )));
        }
        Self::new(vars, table.iter().map(|v| v.ln()).collect())
    }

    pub fn vars(&self) -> &[usize] {
        &self.vars
    }

    pub fn log_table(&self) -> &[f64] {
        &self.log_table
    }

    /// `f(η₀)` for `η₀ = 0..=k`.
    pub fn table(&self) -> Vec<f64> {
        self.log_table.iter().map(|v| v.exp()).collect()
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }

    /// The table rescaled so its largest entry is 1, and the log of the scale.
    fn scaled_table(&self) -> (&[f64], f64) {
        (&self.scaled, self.log_scale)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FactorGraph {
    variable_count: usize,
    factors: Vec<Factor>,
    // For each variable: the message slots (factor, position) touching it.
    adjacency: Vec<Vec<Slot>>,
    slot_offsets: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Slot {
    factor: usize,
    position: usize,
    index: usize,
}

impl FactorGraph {
    pub fn new(variable_count: usize, factors: Vec<Factor>) -> Result<Self> {
        let mut adjacency = vec![Vec::new(); variable_count];
        let mut slot_offsets = Vec::with_capacity(factors.len() + 1);
        let mut next = 0;
        for (f, factor) in factors.iter().enumerate() {
            slot_offsets.push(next);
            for (position, &v) in factor.vars.iter().enumerate() {
                if v >= variable_count {
                    return Err(Error::InvalidEdge(format!(
                        "factor {f} references variable {v} of {variable_count}"
                    )));
                }
                if factor.vars[..position].contains(&v) {
                    return Err(Error::InvalidEdge(format!(
                        "factor {f} repeats variable {v}"
                    )));
                }
                adjacency[v].push(Slot {
                    factor: f,
                    position,
                    index: next,
                });
                next += 1;
            }
        }
        slot_offsets.push(next);
        Ok(Self {
            variable_count,
            factors,
            adjacency,
            slot_offsets,
        })
    }

    pub fn variable_count(&self) -> usize {
        self.variable_count
    }

    pub fn factors(&self) -> &[Factor] {
        &self.factors
    }

    pub fn degree(&self, var: usize) -> usize {
        self.adjacency[var].len()
    }

    fn slot_count(&self) -> usize {
        *self.slot_offsets.last().unwrap_or(&0)
    }

    fn slots_of(&self, factor: usize) -> std::ops::Range<usize> {
        self.slot_offsets[factor]..self.slot_offsets[factor + 1]
    }

    /// True when the variable/factor bipartite graph has no cycle.
    pub fn is_forest(&self) -> bool {
        let n = self.variable_count + self.factors.len();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        for (f, factor) in self.factors.iter().enumerate() {
            for &v in &factor.vars {
                let a = find(&mut parent, v);
                let b = find(&mut parent, self.variable_count + f);
                if a == b {
                    return false;
                }
                parent[a] = b;
            }
        }
        true
    }
}

/// One factor per hyperedge with `f(η₀) = exp(−clique_cost)`.
pub fn build_factor_graph(graph: &MatchHypergraph, model: &PenaltyModel) -> Result<FactorGraph> {
    let factors = graph
        .edges()
        .iter()
        .map(|edge| {
            let k = edge.len();
            if k > model.k_max() {
                return Err(Error::ModelSize {
                    size: k,
                    k_max: model.k_max(),
                });
            }
            let table = (0..=k)
                .map(|eta0| -model.cost_by_count(edge.weight(), k, eta0))
                .collect();
            Factor::new(edge.node_ids().to_vec(), table)
        })
        .collect::<Result<Vec<_>>>()?;
    FactorGraph::new(graph.node_count(), factors)
}

/// Coefficients of `Π_j (p_j(1) + p_j(0)·z)`: entry `t` is the total weight
/// of configurations with exactly `t` zeros.
fn zero_count_coefficients<I>(pairs: I, len_hint: usize) -> Vec<f64>
where
    I: IntoIterator<Item = [f64; 2]>,
{
    let mut coeffs = Vec::with_capacity(len_hint + 1);
    zero_count_coefficients_into(pairs, &mut coeffs);
    coeffs
}

fn zero_count_coefficients_into<I>(pairs: I, coeffs: &mut Vec<f64>)
where
    I: IntoIterator<Item = [f64; 2]>,
{
    coeffs.clear();
    coeffs.push(1.0);
    for [p0, p1] in pairs {
        coeffs.push(0.0);
        for t in (1..coeffs.len()).rev() {
            coeffs[t] = coeffs[t] * p1 + coeffs[t - 1] * p0;
        }
        coeffs[0] *= p1;
    }
}

/// Reusable buffers for the per-factor kernels.
#[derive(Default)]
struct KernelScratch {
    probs: Vec<[f64; 2]>,
    coeffs: Vec<f64>,
    out: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MessagePair {
    pub unnormalized: [f64; 2],
    pub normalized: [f64; 2],
}

/// Message from `factor` to its member at `position`, given one positive
/// incoming message per other member (in member order, skipping `position`).
pub fn factor_to_variable_message(
    factor: &Factor,
    position: usize,
    incoming: &[[f64; 2]],
) -> Result<MessagePair> {
    if position >= factor.len() || incoming.len() + 1 != factor.len() {
        return Err(Error::DimensionMismatch(format!(
            "factor of size {} needs {} incoming messages for position {position}, got {}",
            factor.len(),
            factor.len() - 1,
            incoming.len()
        )));
    }
    if let Some(bad) = incoming
        .iter()
        .flatten()
        .find(|v| !(**v > 0.0) || !v.is_finite())
    {
        return Err(Error::NumericalDomain(format!(
            "incoming message entry {bad} is not positive"
        )));
    }
    let table = factor.table();
    let coeffs = zero_count_coefficients(incoming.iter().copied(), incoming.len());
    let mut out = [0.0; 2];
    for (t, c) in coeffs.iter().enumerate() {
        out[0] += c * table[t + 1];
        out[1] += c * table[t];
    }
    let total = out[0] + out[1];
    Ok(MessagePair {
        unnormalized: out,
        normalized: [out[0] / total, out[1] / total],
    })
}

#[inline]
fn log_normalize(pair: [f64; 2]) -> [f64; 2] {
    let top = pair[0].max(pair[1]);
    let lse = top + ((pair[0] - top).exp() + (pair[1] - top).exp()).ln();
    [pair[0] - lse, pair[1] - lse]
}

#[inline]
fn shifted_probs(log_pair: [f64; 2]) -> ([f64; 2], f64) {
    let top = log_pair[0].max(log_pair[1]);
    ([(log_pair[0] - top).exp(), (log_pair[1] - top).exp()], top)
}

/// Normalized outgoing messages for every member of `factor`, given
/// variable-to-factor messages `probs` in any positive scale.
fn factor_messages(
    factor: &Factor,
    probs: &[[f64; 2]],
    out: &mut [[f64; 2]],
    coeffs: &mut Vec<f64>,
) {
    let (table, _) = factor.scaled_table();
    if let ([a, b, c], [t0, t1, t2, t3]) = (probs, table) {
        // triangles: zero-count polynomial of each member's two partners
        for (slot, [p, q]) in out.iter_mut().zip([[b, c], [a, c], [a, b]]) {
            let z0 = p[1] * q[1];
            let z1 = p[0] * q[1] + p[1] * q[0];
            let z2 = p[0] * q[0];
            let m = [z0 * t1 + z1 * t2 + z2 * t3, z0 * t0 + z1 * t1 + z2 * t2];
            let s = m[0] + m[1];
            *slot = [m[0] / s, m[1] / s];
        }
        return;
    }
    for (i, slot) in out.iter_mut().enumerate() {
        coeffs.clear();
        coeffs.push(1.0);
        for (j, &[p0, p1]) in probs.iter().enumerate() {
            if j == i {
                continue;
            }
            let top = coeffs[coeffs.len() - 1];
            for t in (1..coeffs.len()).rev() {
                coeffs[t] = coeffs[t] * p1 + coeffs[t - 1] * p0;
            }
            coeffs[0] *= p1;
            coeffs.push(top * p0);
        }
        let mut m = [0.0; 2];
        for (t, c) in coeffs.iter().enumerate() {
            m[0] += c * table[t + 1];
            m[1] += c * table[t];
        }
        let s = m[0] + m[1];
        *slot = [m[0] / s, m[1] / s];
    }
}

/// Distribution of `η₁` under the factor belief `b_f ∝ f·Π μ`, and `log Σ f·Π μ`.
fn factor_count_marginal(factor: &Factor, mu: &[[f64; 2]]) -> (Vec<f64>, f64) {
    let (table, table_top) = factor.scaled_table();
    let mut offset = table_top;
    let probs = mu.iter().map(|m| {
        let (p, top) = shifted_probs(*m);
        offset += top;
        p
    });
    let coeffs = zero_count_coefficients(probs.collect::<Vec<_>>(), factor.len());
    let k = factor.len();
    let weights: Vec<f64> = (0..=k)
        .map(|eta1| coeffs[k - eta1] * table[k - eta1])
        .collect();
    let total: f64 = weights.iter().sum();
    (
        weights.iter().map(|w| w / total).collect(),
        total.ln() + offset,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Schedule {
    /// All messages updated synchronously from the previous iteration.
    #[default]
    Flooding,
    /// Factors updated one at a time in index order using the latest messages.
    Sequential,
}

impl std::str::FromStr for Schedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "flooding" => Ok(Schedule::Flooding),
            "sequential" => Ok(Schedule::Sequential),
            other => Err(Error::InvalidConfig(format!("unknown schedule `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BpOptions {
    pub max_iters: usize,
    /// Convergence threshold on the largest absolute change of a normalized
    /// message entry.
    pub tolerance: f64,
    /// Weight on the previous message, in `[0, 1)`.
    pub damping: f64,
    pub schedule: Schedule,
    /// Record per-iteration residual and Bethe `log Z`.
    pub trace: bool,
}

impl Default for BpOptions {
    fn default() -> Self {
        Self {
            max_iters: 200,
            tolerance: 1e-6,
            damping: 0.5,
            schedule: Schedule::Flooding,
            trace: false,
        }
    }
}

impl BpOptions {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.damping) {
            return Err(Error::InvalidConfig(format!(
                "damping {} outside [0, 1)",
                self.damping
            )));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "tolerance {} must be positive",
                self.tolerance
            )));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidConfig("max_iters must be at least 1".into()));
        }
        Ok(())
    }
}

/// Factor-to-variable messages, one per (factor, member) slot, kept as the
/// log-odds `ln(m(1)/m(0))` alongside the normalized pair it stands for.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorMessages {
    log_odds: Vec<f64>,
    probs: Vec<[f64; 2]>,
}

impl FactorMessages {
    pub fn uniform(fg: &FactorGraph) -> Self {
        Self {
            log_odds: vec![0.0; fg.slot_count()],
            probs: vec![[0.5, 0.5]; fg.slot_count()],
        }
    }

    /// Every message into variable `v` puts mass `confidence` on `labels[v]`.
    pub fn toward(fg: &FactorGraph, labels: &[u8], confidence: f64) -> Result<Self> {
        if labels.len() != fg.variable_count {
            return Err(Error::DimensionMismatch(format!(
                "{} labels for {} variables",
                labels.len(),
                fg.variable_count
            )));
        }
        if !(confidence > 0.0 && confidence < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "seed confidence {confidence} outside (0, 1)"
            )));
        }
        let odds = (confidence / (1.0 - confidence)).ln();
        let mut out = Self::uniform(fg);
        for (f, factor) in fg.factors.iter().enumerate() {
            for (slot, &v) in fg.slots_of(f).zip(&factor.vars) {
                if labels[v] == 1 {
                    out.log_odds[slot] = odds;
                    out.probs[slot] = [1.0 - confidence, confidence];
                } else {
                    out.log_odds[slot] = -odds;
                    out.probs[slot] = [confidence, 1.0 - confidence];
                }
            }
        }
        Ok(out)
    }

    pub fn len(&self) -> usize {
        self.log_odds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_odds.is_empty()
    }

    fn fits(&self, fg: &FactorGraph) -> bool {
        self.log_odds.len() == fg.slot_count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub iteration: usize,
    pub max_residual: f64,
    pub bethe_log_z: f64,
}

pub fn write_trace_csv<W: Write>(rows: &[TraceRow], mut out: W) -> Result<()> {
    writeln!(out, "iteration,max_residual,bethe_log_z")?;
    for r in rows {
        writeln!(out, "{},{},{}", r.iteration, r.max_residual, r.bethe_log_z)?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeliefState {
    /// `(b_i(0), b_i(1))` per variable.
    pub node_beliefs: Vec<[f64; 2]>,
    /// Per factor, `P(η₁ = α)` for `α = 0..=k`.
    pub clique_count_marginals: Vec<Vec<f64>>,
    pub converged: bool,
    pub iterations: usize,
    pub max_residual: f64,
    pub messages: FactorMessages,
    pub trace: Vec<TraceRow>,
}

/// Per-variable sums of incoming message log-odds.
fn variable_totals(fg: &FactorGraph, msgs: &FactorMessages) -> Vec<f64> {
    fg.adjacency
        .iter()
        .map(|slots| slots.iter().map(|s| msgs.log_odds[s.index]).sum())
        .collect()
}

/// Normalized log variable-to-factor messages into `factor`.
fn incoming_to_factor(
    fg: &FactorGraph,
    factor: usize,
    totals: &[f64],
    msgs: &FactorMessages,
) -> Vec<[f64; 2]> {
    let f = &fg.factors[factor];
    fg.slots_of(factor)
        .zip(&f.vars)
        .map(|(slot, &v)| log_normalize([0.0, totals[v] - msgs.log_odds[slot]]))
        .collect()
}

/// Variable-to-factor messages into `factor`, scaled so the larger entry is 1.
fn incoming_probs_into(
    fg: &FactorGraph,
    factor: usize,
    totals: &[f64],
    msgs: &FactorMessages,
    probs: &mut Vec<[f64; 2]>,
) {
    let f = &fg.factors[factor];
    probs.clear();
    probs.extend(fg.slots_of(factor).zip(&f.vars).map(|(slot, &v)| {
        let r = totals[v] - msgs.log_odds[slot];
        if r <= 0.0 {
            [1.0, r.exp()]
        } else {
            [(-r).exp(), 1.0]
        }
    }));
}

/// Blends the normalized messages `fresh` into the stored messages and
/// returns the largest change in probability.
fn apply_update(
    log_odds: &mut [f64],
    probs: &mut [[f64; 2]],
    fresh: &[[f64; 2]],
    damping: f64,
) -> f64 {
    let mut residual: f64 = 0.0;
    for ((odds, old), new) in log_odds.iter_mut().zip(probs.iter_mut()).zip(fresh) {
        let blended = if damping == 0.0 {
            *new
        } else {
            let b = [
                damping * old[0] + (1.0 - damping) * new[0],
                damping * old[1] + (1.0 - damping) * new[1],
            ];
            let s = b[0] + b[1];
            [b[0] / s, b[1] / s]
        };
        residual = residual
            .max((blended[0] - old[0]).abs())
            .max((blended[1] - old[1]).abs());
        // floor keeps messages finite when one state is numerically impossible
        *odds = (blended[1].max(f64::MIN_POSITIVE) / blended[0].max(f64::MIN_POSITIVE)).ln();
        *old = blended;
    }
    residual
}

fn node_beliefs_from_totals(totals: &[f64]) -> Vec<[f64; 2]> {
    totals
        .iter()
        .map(|&t| {
            let n = log_normalize([0.0, t]);
            [n[0].exp(), n[1].exp()]
        })
        .collect()
}

pub fn run_sum_product(fg: &FactorGraph, opts: &BpOptions) -> Result<BeliefState> {
    run_sum_product_from(fg, opts, FactorMessages::uniform(fg))
}

/// Runs sum-product starting from the given factor-to-variable messages.
pub fn run_sum_product_from(
    fg: &FactorGraph,
    opts: &BpOptions,
    init: FactorMessages,
) -> Result<BeliefState> {
    opts.validate()?;
    if !init.fits(fg) {
        return Err(Error::DimensionMismatch(format!(
            "{} initial messages for {} slots",
            init.len(),
            fg.slot_count()
        )));
    }
    let mut msgs = init;
    let mut trace = Vec::new();
    let mut iterations = 0;
    let mut residual = f64::INFINITY;
    let mut scratch = KernelScratch::default();
    let mut fresh = vec![[0.0; 2]; fg.slot_count()];

    while iterations < opts.max_iters {
        iterations += 1;
        residual = 0.0;
        match opts.schedule {
            Schedule::Flooding => {
                let totals = variable_totals(fg, &msgs);
                for f in 0..fg.factors.len() {
                    incoming_probs_into(fg, f, &totals, &msgs, &mut scratch.probs);
                    factor_messages(
                        &fg.factors[f],
                        &scratch.probs,
                        &mut fresh[fg.slots_of(f)],
                        &mut scratch.coeffs,
                    );
                }
                residual = apply_update(&mut msgs.log_odds, &mut msgs.probs, &fresh, opts.damping);
            }
            Schedule::Sequential => {
                let mut totals = variable_totals(fg, &msgs);
                for f in 0..fg.factors.len() {
                    incoming_probs_into(fg, f, &totals, &msgs, &mut scratch.probs);
                    let range = fg.slots_of(f);
                    scratch.out.clear();
                    scratch.out.resize(range.len(), [0.0; 2]);
                    factor_messages(
                        &fg.factors[f],
                        &scratch.probs,
                        &mut scratch.out,
                        &mut scratch.coeffs,
                    );
                    let before: Vec<f64> = msgs.log_odds[range.clone()].to_vec();
                    let r = apply_update(
                        &mut msgs.log_odds[range.clone()],
                        &mut msgs.probs[range.clone()],
                        &scratch.out,
                        opts.damping,
                    );
                    residual = residual.max(r);
                    for ((&v, old), new) in fg.factors[f]
                        .vars
                        .iter()
                        .zip(&before)
                        .zip(&msgs.log_odds[range])
                    {
                        totals[v] += new - old;
                    }
                }
            }
        }
        if opts.trace {
            trace.push(TraceRow {
                iteration: iterations,
                max_residual: residual,
                bethe_log_z: bethe_from_messages(fg, &msgs)?,
            });
        }
        if residual < opts.tolerance {
            break;
        }
    }

    let totals = variable_totals(fg, &msgs);
    let clique_count_marginals = (0..fg.factors.len())
        .map(|f| {
            let mu = incoming_to_factor(fg, f, &totals, &msgs);
            factor_count_marginal(&fg.factors[f], &mu).0
        })
        .collect();
    Ok(BeliefState {
        node_beliefs: node_beliefs_from_totals(&totals),
        clique_count_marginals,
        converged: residual < opts.tolerance,
        iterations,
        max_residual: residual,
        messages: msgs,
        trace,
    })
}

/// Bethe approximation of `log Z` from a sum-product result. Exact at the
/// fixed point of a tree-structured graph.
pub fn bethe_log_z(fg: &FactorGraph, beliefs: &BeliefState) -> Result<f64> {
    if beliefs.node_beliefs.len() != fg.variable_count || !beliefs.messages.fits(fg) {
        return Err(Error::DimensionMismatch(
            "beliefs do not belong to this factor graph".into(),
        ));
    }
    if let Some(bad) = beliefs.node_beliefs.iter().flatten().find(|b| !(**b > 0.0)) {
        return Err(Error::NumericalDomain(format!(
            "belief {bad} is not positive"
        )));
    }
    bethe_from_messages(fg, &beliefs.messages)
}

/// Bethe `log Z` evaluated directly from log-domain messages, for callers
/// whose probability-domain beliefs may underflow.
pub(crate) fn bethe_from_messages(fg: &FactorGraph, msgs: &FactorMessages) -> Result<f64> {
    let totals = variable_totals(fg, msgs);
    let mut log_z = 0.0;

    for (f, factor) in fg.factors.iter().enumerate() {
        let mu = incoming_to_factor(fg, f, &totals, msgs);
        let (_, log_zf) = factor_count_marginal(factor, &mu);
        let (table, _) = factor.scaled_table();
        let probs: Vec<[f64; 2]> = mu.iter().map(|m| [m[0].exp(), m[1].exp()]).collect();
        // Σ_X b_f (log b_f − log f) = Σ_i E_{b_f}[log μ_i] − log Z_f
        let mut expected_log_mu = 0.0;
        for i in 0..factor.len() {
            let others = probs
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, p)| *p);
            let coeffs = zero_count_coefficients(others, factor.len() - 1);
            let mut m = [0.0; 2];
            for (t, c) in coeffs.iter().enumerate() {
                m[0] += c * table[t + 1];
                m[1] += c * table[t];
            }
            let joint = [probs[i][0] * m[0], probs[i][1] * m[1]];
            let s = joint[0] + joint[1];
            if !(s > 0.0) {
                return Err(Error::NumericalDomain("vanishing factor belief".into()));
            }
            for c in 0..2 {
                if joint[c] > 0.0 {
                    expected_log_mu += joint[c] / s * mu[i][c];
                }
            }
        }
        log_z -= expected_log_mu - log_zf;
    }

    for (v, &t) in totals.iter().enumerate() {
        let n = log_normalize([0.0, t]);
        let entropy: f64 = n
            .iter()
            .map(|l| if l.exp() > 0.0 { -l.exp() * l } else { 0.0 })
            .sum();
        log_z -= (fg.degree(v) as f64 - 1.0) * entropy;
    }
    if !log_z.is_finite() {
        return Err(Error::NumericalDomain("Bethe log Z is not finite".into()));
    }
    Ok(log_z)
}

/// Exact marginals and partition function by enumeration.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactMarginals {
    pub node_beliefs: Vec<[f64; 2]>,
    pub clique_count_marginals: Vec<Vec<f64>>,
    pub log_z: f64,
}

pub const MAX_EXACT_VARIABLES: usize = 20;

pub fn exact_marginals(fg: &FactorGraph) -> Result<ExactMarginals> {
    let n = fg.variable_count;
    if n > MAX_EXACT_VARIABLES {
        return Err(Error::TooManyVariables {
            got: n,
            max: MAX_EXACT_VARIABLES,
        });
    }
    let configs = 1usize << n;
    let log_weight = |bits: usize| -> f64 {
        fg.factors
            .iter()
            .map(|f| {
                let zeros = f.vars.iter().filter(|&&v| (bits >> v) & 1 == 0).count();
                f.log_table[zeros]
            })
            .sum()
    };
    let logs: Vec<f64> = (0..configs).map(log_weight).collect();
    let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);

    let mut total = 0.0;
    let mut ones = vec![0.0; n];
    let mut counts: Vec<Vec<f64>> = fg.factors.iter().map(|f| vec![0.0; f.len() + 1]).collect();
    for (bits, lw) in logs.iter().enumerate() {
        let w = (lw - top).exp();
        total += w;
        for (v, acc) in ones.iter_mut().enumerate() {
            if (bits >> v) & 1 == 1 {
                *acc += w;
            }
        }
        for (f, acc) in fg.factors.iter().zip(counts.iter_mut()) {
            let eta1 = f.vars.iter().filter(|&&v| (bits >> v) & 1 == 1).count();
            acc[eta1] += w;
        }
    }
    Ok(ExactMarginals {
        node_beliefs: ones.iter().map(|o| [1.0 - o / total, o / total]).collect(),
        clique_count_marginals: counts
            .into_iter()
            .map(|c| c.into_iter().map(|x| x / total).collect())
            .collect(),
        log_z: top + total.ln(),
    })
}
