//! Correct/incorrect match counting against ground truth.

use std::collections::BTreeSet;

use serde::Serialize;

use crate::error::Result;
use crate::matching::{candidate_matches, GroundTruth, MatchAssignment, PointSet};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PairMetrics {
    /// Left features whose true match is among their appearance candidates.
    pub n_truth_available: usize,
    pub n_correct: usize,
    pub n_incorrect: usize,
    /// Percentage of available left features not matched correctly.
    pub pct_incorrect: f64,
}

/// Left features whose ground-truth partner is in their top-`m` candidates.
pub fn truth_available(
    left: &PointSet,
    right: &PointSet,
    truth: &GroundTruth,
    m: usize,
) -> Result<BTreeSet<usize>> {
    Ok(candidate_matches(left, right, m)?
        .into_iter()
        .flatten()
        .filter(|c| truth.get(&c.left_index) == Some(&c.right_index))
        .map(|c| c.left_index)
        .collect())
}

/// A pair counts as correct iff it equals the ground truth. An empty
/// assignment scores 100% incorrect; with nothing available the rate is 0.
pub fn score_assignment(
    assignment: &MatchAssignment,
    truth: &GroundTruth,
    available: &BTreeSet<usize>,
) -> PairMetrics {
    let mut n_correct = 0;
    let mut correct_available = 0;
    for &(l, r) in &assignment.pairs {
        if truth.get(&l) == Some(&r) {
            n_correct += 1;
            if available.contains(&l) {
                correct_available += 1;
            }
        }
    }
    let pct_incorrect = if available.is_empty() {
        0.0
    } else {
        100.0 * (1.0 - correct_available as f64 / available.len() as f64)
    };
    PairMetrics {
        n_truth_available: available.len(),
        n_correct,
        n_incorrect: assignment.len() - n_correct,
        pct_incorrect,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation (n − 1 denominator); 0 for fewer than two values.
    pub std: f64,
}

pub fn mean_std(values: &[f64]) -> MeanStd {
    let n = values.len();
    if n == 0 {
        return MeanStd {
            mean: f64::NAN,
            std: f64::NAN,
        };
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = if n < 2 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    };
    MeanStd { mean, std }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricsSummary {
    pub pairs: usize,
    pub n_correct: MeanStd,
    pub n_incorrect: MeanStd,
    pub pct_incorrect: MeanStd,
}

pub fn summarize(metrics: &[PairMetrics]) -> MetricsSummary {
    let col = |f: fn(&PairMetrics) -> f64| mean_std(&metrics.iter().map(f).collect::<Vec<_>>());
    MetricsSummary {
        pairs: metrics.len(),
        n_correct: col(|m| m.n_correct as f64),
        n_incorrect: col(|m| m.n_incorrect as f64),
        pct_incorrect: col(|m| m.pct_incorrect),
    }
}
