//! File formats: point sets and models as JSON, correspondences and metrics
//! as CSV, and dataset bundles as a directory of pairs.
//!
//! Bundle layout:
//!
//! ```text
//! <dir>/bundle.json               manifest: pair names and train/test split
//! <dir>/pair_0000/left.json
//! <dir>/pair_0000/right.json
//! <dir>/pair_0000/truth.csv       left_index,right_index
//! <dir>/pair_0000/config.json     generator settings, if synthetic
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::PairMetrics;
use crate::matching::{GroundTruth, MatchAssignment, PointSet};
use crate::potential::PenaltyModel;
use crate::synth::{generate_pair, SynthConfig, SynthPair};

pub fn read_point_set(path: &Path) -> Result<PointSet> {
    PointSet::from_json(&fs::read_to_string(path)?)
}

pub fn write_point_set(path: &Path, set: &PointSet) -> Result<()> {
    Ok(fs::write(path, set.to_json()? + "\n")?)
}

pub fn read_model(path: &Path) -> Result<PenaltyModel> {
    PenaltyModel::from_json(&fs::read_to_string(path)?)
}

pub fn write_model(path: &Path, model: &PenaltyModel) -> Result<()> {
    Ok(fs::write(path, model.to_json()? + "\n")?)
}

#[derive(Debug, Serialize, Deserialize)]
struct TruthRow {
    left_index: usize,
    right_index: usize,
}

pub fn read_truth_csv(path: &Path) -> Result<GroundTruth> {
    let mut truth = GroundTruth::new();
    for row in csv::Reader::from_path(path)?.deserialize() {
        let row: TruthRow = row?;
        if truth.insert(row.left_index, row.right_index).is_some() {
            return Err(Error::Data(format!(
                "{}: left index {} listed twice",
                path.display(),
                row.left_index
            )));
        }
    }
    Ok(truth)
}

pub fn write_truth_csv(path: &Path, truth: &GroundTruth) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for (&left_index, &right_index) in truth {
        w.serialize(TruthRow {
            left_index,
            right_index,
        })?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct AssignmentRow {
    left_index: usize,
    right_index: usize,
    score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    is_correct: Option<bool>,
}

/// Writes `left_index,right_index,score`, plus `is_correct` when truth is given.
pub fn write_assignment_csv(
    path: &Path,
    assignment: &MatchAssignment,
    truth: Option<&GroundTruth>,
) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for (&(left_index, right_index), &score) in assignment.pairs.iter().zip(&assignment.scores) {
        w.serialize(AssignmentRow {
            left_index,
            right_index,
            score,
            is_correct: truth.map(|t| t.get(&left_index) == Some(&right_index)),
        })?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_assignment_csv(path: &Path) -> Result<MatchAssignment> {
    let mut out = MatchAssignment::default();
    for row in csv::Reader::from_path(path)?.deserialize() {
        let row: AssignmentRow = row?;
        if out.get(row.left_index).is_some() {
            return Err(Error::Data(format!(
                "{}: left index {} assigned twice",
                path.display(),
                row.left_index
            )));
        }
        out.pairs.push((row.left_index, row.right_index));
        out.scores.push(row.score);
    }
    Ok(out)
}

#[derive(Debug, Serialize)]
struct MetricsRow<'a> {
    pair: &'a str,
    method: &'a str,
    n_truth_available: usize,
    n_correct: usize,
    n_incorrect: usize,
    pct_incorrect: f64,
}

/// One row per `(pair, method, metrics)`, in the given order.
pub fn write_metrics_csv(path: &Path, rows: &[(String, String, PairMetrics)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for (pair, method, m) in rows {
        w.serialize(MetricsRow {
            pair,
            method,
            n_truth_available: m.n_truth_available,
            n_correct: m.n_correct,
            n_incorrect: m.n_incorrect,
            pct_incorrect: m.pct_incorrect,
        })?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairEntry {
    pub name: String,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Manifest {
    pub pairs: Vec<PairEntry>,
}

impl Manifest {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &PairEntry> {
        self.pairs.iter().filter(move |p| p.split == split)
    }
}

pub const MANIFEST_FILE: &str = "bundle.json";

#[derive(Debug, Clone, PartialEq)]
pub struct LoadedPair {
    pub name: String,
    pub split: Split,
    pub left: PointSet,
    pub right: PointSet,
    pub truth: Option<GroundTruth>,
}

fn pair_dir(root: &Path, name: &str) -> Result<PathBuf> {
    if name.is_empty() || name.contains(['/', '\\']) || name == "." || name == ".." {
        return Err(Error::Data(format!("invalid pair name `{name}`")));
    }
    Ok(root.join(name))
}

pub fn read_manifest(root: &Path) -> Result<Manifest> {
    Ok(serde_json::from_str(&fs::read_to_string(
        root.join(MANIFEST_FILE),
    )?)?)
}

pub fn write_manifest(root: &Path, manifest: &Manifest) -> Result<()> {
    Ok(fs::write(
        root.join(MANIFEST_FILE),
        serde_json::to_string_pretty(manifest)? + "\n",
    )?)
}

pub fn write_pair(
    root: &Path,
    name: &str,
    pair: &SynthPair,
    config: Option<&SynthConfig>,
) -> Result<()> {
    let dir = pair_dir(root, name)?;
    fs::create_dir_all(&dir)?;
    write_point_set(&dir.join("left.json"), &pair.left)?;
    write_point_set(&dir.join("right.json"), &pair.right)?;
    write_truth_csv(&dir.join("truth.csv"), &pair.truth)?;
    if let Some(c) = config {
        fs::write(
            dir.join("config.json"),
            serde_json::to_string_pretty(c)? + "\n",
        )?;
    }
    Ok(())
}

/// Loads one pair; a missing `truth.csv` yields `truth: None`.
pub fn load_pair(root: &Path, entry: &PairEntry) -> Result<LoadedPair> {
    let dir = pair_dir(root, &entry.name)?;
    let truth_path = dir.join("truth.csv");
    Ok(LoadedPair {
        name: entry.name.clone(),
        split: entry.split,
        left: read_point_set(&dir.join("left.json"))?,
        right: read_point_set(&dir.join("right.json"))?,
        truth: if truth_path.exists() {
            Some(read_truth_csv(&truth_path)?)
        } else {
            None
        },
    })
}

pub fn load_split(root: &Path, split: Split) -> Result<Vec<LoadedPair>> {
    let manifest = read_manifest(root)?;
    manifest.split(split).map(|e| load_pair(root, e)).collect()
}

/// Generates and writes every configured pair, named `pair_0000`, `pair_0001`, ...
pub fn write_synthetic_bundle(root: &Path, configs: &[(Split, SynthConfig)]) -> Result<Manifest> {
    fs::create_dir_all(root)?;
    let mut manifest = Manifest::default();
    for (i, (split, config)) in configs.iter().enumerate() {
        let name = format!("pair_{i:04}");
        let pair = generate_pair(config)?;
        write_pair(root, &name, &pair, Some(config))?;
        manifest.pairs.push(PairEntry {
            name,
            split: *split,
        });
    }
    write_manifest(root, &manifest)?;
    Ok(manifest)
}
