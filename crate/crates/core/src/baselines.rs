//! Comparison matchers: fixed linear penalties, appearance-only argmax, and
//! pairwise spectral matching.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matching::{candidate_matches, MatchAssignment, PointSet};
use crate::potential::{CandidateMatch, PenaltyModel};

/// Penalty tables `w_c^α = α` for both classes.
///
/// # Panics
/// If `k_max < 2`.
pub fn linear_penalty_model(k_max: usize) -> PenaltyModel {
    assert!(k_max >= 2, "k_max must be at least 2");
    let table: Vec<f64> = (0..=k_max).map(|a| a as f64).collect();
    PenaltyModel::discrete(table.clone(), table).expect("linear table is finite")
}

/// Each left feature takes its most similar right feature by appearance.
/// Not one-to-one.
pub fn greedy_appearance(left: &PointSet, right: &PointSet) -> Result<MatchAssignment> {
    let mut out = MatchAssignment::default();
    for group in candidate_matches(left, right, 1)? {
        let best = group[0];
        out.push(best.left_index, best.right_index, best.appearance_weight);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralParams {
    /// Candidates kept per left feature.
    pub m: usize,
    /// Width of the distance-agreement kernel.
    pub sigma: f64,
    /// Left pairs farther apart than this get no pairwise term.
    pub distance_threshold: f64,
    pub tolerance: f64,
    pub max_iters: usize,
}

impl Default for SpectralParams {
    fn default() -> Self {
        Self {
            m: 3,
            sigma: 0.5,
            distance_threshold: 0.3,
            tolerance: 1e-8,
            max_iters: 1000,
        }
    }
}

impl SpectralParams {
    pub fn validate(&self) -> Result<()> {
        if self.m == 0 {
            return Err(Error::InvalidConfig("m must be at least 1".into()));
        }
        if !(self.sigma > 0.0) || !(self.distance_threshold > 0.0) || !(self.tolerance > 0.0) {
            return Err(Error::InvalidConfig(
                "spectral sigma, threshold and tolerance must be positive".into(),
            ));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidConfig("max_iters must be at least 1".into()));
        }
        Ok(())
    }
}

/// Symmetric non-negative affinity over candidate matches, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct CompatibilityMatrix {
    candidates: Vec<CandidateMatch>,
    values: Vec<f64>,
}

fn conflicting(a: &CandidateMatch, b: &CandidateMatch) -> bool {
    a.left_index == b.left_index || a.right_index == b.right_index
}

impl CompatibilityMatrix {
    pub fn new(candidates: Vec<CandidateMatch>, values: Vec<f64>) -> Result<Self> {
        let n = candidates.len();
        if values.len() != n * n {
            return Err(Error::DimensionMismatch(format!(
                "{} entries for {n} candidates",
                values.len()
            )));
        }
        for i in 0..n {
            for j in 0..n {
                let v = values[i * n + j];
                if !(v.is_finite() && v >= 0.0) {
                    return Err(Error::NumericalDomain(format!("entry ({i},{j}) = {v}")));
                }
                if v != values[j * n + i] {
                    return Err(Error::InvalidConfig(
                        "compatibility matrix must be symmetric".into(),
                    ));
                }
            }
        }
        Ok(Self { candidates, values })
    }

    /// Appearance on the diagonal, `exp(−(d_L − d_R)²/σ²)` for compatible
    /// pairs whose left features lie within the distance threshold.
    pub fn build(left: &PointSet, right: &PointSet, params: &SpectralParams) -> Result<Self> {
        params.validate()?;
        let candidates: Vec<CandidateMatch> = candidate_matches(left, right, params.m)?
            .into_iter()
            .flatten()
            .collect();
        let n = candidates.len();
        let (lp, rp) = (left.points(), right.points());
        let dist =
            |p: [f64; 2], q: [f64; 2]| ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt();
        let mut values = vec![0.0; n * n];
        for i in 0..n {
            let a = candidates[i];
            values[i * n + i] = a.appearance_weight;
            for j in i + 1..n {
                let b = candidates[j];
                if conflicting(&a, &b) {
                    continue;
                }
                let dl = dist(lp[a.left_index], lp[b.left_index]);
                if dl > params.distance_threshold {
                    continue;
                }
                let dr = dist(rp[a.right_index], rp[b.right_index]);
                let v = (-(dl - dr).powi(2) / (params.sigma * params.sigma)).exp();
                values[i * n + j] = v;
                values[j * n + i] = v;
            }
        }
        Ok(Self { candidates, values })
    }

    pub fn candidates(&self) -> &[CandidateMatch] {
        &self.candidates
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.len() + j]
    }

    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(
            self.candidates.clone(),
            self.values.iter().map(|v| v * factor).collect(),
        )
    }

    /// Pairwise concurrence score `Σ_{i,j ∈ S} M_ij` of a candidate subset.
    pub fn score(&self, selected: &[usize]) -> f64 {
        selected
            .iter()
            .flat_map(|&i| selected.iter().map(move |&j| (i, j)))
            .map(|(i, j)| self.get(i, j))
            .sum()
    }

    /// Whether a subset uses every left and right feature at most once.
    pub fn is_one_to_one(&self, selected: &[usize]) -> bool {
        let mut ls = BTreeSet::new();
        let mut rs = BTreeSet::new();
        selected.iter().all(|&i| {
            let c = self.candidates[i];
            ls.insert(c.left_index) && rs.insert(c.right_index)
        })
    }

    fn mul(&self, x: &[f64], out: &mut [f64]) {
        let n = self.len();
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.values[i * n..(i + 1) * n]
                .iter()
                .zip(x)
                .map(|(a, b)| a * b)
                .sum();
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PowerIteration {
    /// Unit-norm principal eigenvector estimate (best iterate on failure).
    pub vector: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Power iteration from the uniform vector; stops when successive iterates
/// differ by less than `tolerance` in max-norm.
pub fn principal_eigenvector(
    matrix: &CompatibilityMatrix,
    tolerance: f64,
    max_iters: usize,
) -> PowerIteration {
    let n = matrix.len();
    if n == 0 {
        return PowerIteration {
            vector: vec![],
            iterations: 0,
            converged: true,
        };
    }
    let mut x = vec![1.0 / (n as f64).sqrt(); n];
    let mut next = vec![0.0; n];
    for it in 1..=max_iters {
        matrix.mul(&x, &mut next);
        let norm = next.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return PowerIteration {
                vector: x,
                iterations: it,
                converged: true,
            };
        }
        next.iter_mut().for_each(|v| *v /= norm);
        let change = x
            .iter()
            .zip(&next)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        std::mem::swap(&mut x, &mut next);
        if change < tolerance {
            return PowerIteration {
                vector: x,
                iterations: it,
                converged: true,
            };
        }
    }
    PowerIteration {
        vector: x,
        iterations: max_iters,
        converged: false,
    }
}

/// Accepts candidates in descending `scores` order while both endpoints
/// are free. Returns candidate indices in acceptance order.
pub fn greedy_one_to_one(matrix: &CompatibilityMatrix, scores: &[f64]) -> Vec<usize> {
    let c = matrix.candidates();
    let mut order: Vec<usize> = (0..c.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut ls = BTreeSet::new();
    let mut rs = BTreeSet::new();
    let mut accepted = Vec::new();
    for i in order {
        if scores[i] <= 0.0 {
            break;
        }
        if !ls.contains(&c[i].left_index) && !rs.contains(&c[i].right_index) {
            ls.insert(c[i].left_index);
            rs.insert(c[i].right_index);
            accepted.push(i);
        }
    }
    accepted
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralOutcome {
    pub assignment: MatchAssignment,
    /// Accepted candidate indices into the compatibility matrix.
    pub selected: Vec<usize>,
    pub converged: bool,
    pub iterations: usize,
}

pub fn spectral_match_matrix(
    matrix: &CompatibilityMatrix,
    params: &SpectralParams,
) -> SpectralOutcome {
    let power = principal_eigenvector(matrix, params.tolerance, params.max_iters);
    let selected = greedy_one_to_one(matrix, &power.vector);
    let mut assignment = MatchAssignment::default();
    for &i in &selected {
        let c = matrix.candidates()[i];
        assignment.push(c.left_index, c.right_index, power.vector[i]);
    }
    SpectralOutcome {
        assignment: assignment.sorted(),
        selected,
        converged: power.converged,
        iterations: power.iterations,
    }
}

pub fn spectral_match(
    left: &PointSet,
    right: &PointSet,
    params: &SpectralParams,
) -> Result<SpectralOutcome> {
    let matrix = CompatibilityMatrix::build(left, right, params)?;
    Ok(spectral_match_matrix(&matrix, params))
}
