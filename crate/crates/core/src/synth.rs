//! Ground-truthed synthetic matching problems.
//!
//! Left points are uniform in the unit square. The right image is a sheared
//! and/or rotated copy with coordinate jitter, optional distractor points and a
//! random order. Descriptors are Gaussian; a true correspondent's right
//! descriptor is its left descriptor plus noise, so the noise level controls
//! how ambiguous appearance-only matching is.
//!
//! Shear convention: `(x, y) → (x + s·y, y)` with `s = factor − 1`, so a factor
//! of 2 maps the unit square onto a parallelogram twice as wide as it is tall.
//! Rotations are about the centre of the unit square.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matching::{GroundTruth, Point, PointSet};
use crate::potential::{Labeling, MatchHypergraph};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Transform {
    Shear { factor: f64 },
    Rotate { degrees: f64 },
    Composite { factor: f64, degrees: f64 },
}

impl Transform {
    fn check(&self) -> Result<()> {
        let (factor, degrees) = match *self {
            Transform::Shear { factor } => (factor, 0.0),
            Transform::Rotate { degrees } => (1.0, degrees),
            Transform::Composite { factor, degrees } => (factor, degrees),
        };
        if !(1.0..=2.0).contains(&factor) {
            return Err(Error::InvalidConfig(format!(
                "shear factor {factor} outside [1, 2]"
            )));
        }
        if !(0.0..=90.0).contains(&degrees) {
            return Err(Error::InvalidConfig(format!(
                "rotation {degrees}° outside [0°, 90°]"
            )));
        }
        Ok(())
    }

    pub fn apply(&self, p: Point) -> Point {
        let shear = |p: Point, factor: f64| [p[0] + (factor - 1.0) * p[1], p[1]];
        let rotate = |p: Point, degrees: f64| {
            let (s, c) = degrees.to_radians().sin_cos();
            let (x, y) = (p[0] - 0.5, p[1] - 0.5);
            [0.5 + c * x - s * y, 0.5 + s * x + c * y]
        };
        match *self {
            Transform::Shear { factor } => shear(p, factor),
            Transform::Rotate { degrees } => rotate(p, degrees),
            Transform::Composite { factor, degrees } => rotate(shear(p, factor), degrees),
        }
    }

    /// Short bucket label such as `shear-1.5` or `rotate-60`.
    pub fn label(&self) -> String {
        match *self {
            Transform::Shear { factor } => format!("shear-{factor}"),
            Transform::Rotate { degrees } => format!("rotate-{degrees}"),
            Transform::Composite { factor, degrees } => format!("shear-{factor}-rotate-{degrees}"),
        }
    }
}

impl std::str::FromStr for Transform {
    type Err = Error;

    /// Parses `shear:F`, `rotate:DEG` or `composite:F:DEG`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        let num = |t: &str| {
            t.parse::<f64>()
                .map_err(|_| Error::InvalidConfig(format!("bad number `{t}` in transform `{s}`")))
        };
        let t = match parts.as_slice() {
            ["shear", f] => Transform::Shear { factor: num(f)? },
            ["rotate", d] => Transform::Rotate { degrees: num(d)? },
            ["composite", f, d] => Transform::Composite {
                factor: num(f)?,
                degrees: num(d)?,
            },
            _ => {
                return Err(Error::InvalidConfig(format!(
                    "unrecognized transform `{s}`"
                )))
            }
        };
        t.check()?;
        Ok(t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_points: usize,
    pub transform: Transform,
    pub jitter_sigma: f64,
    pub descriptor_dim: usize,
    pub descriptor_noise_sigma: f64,
    pub distractor_count: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_points: 30,
            transform: Transform::Shear { factor: 1.5 },
            jitter_sigma: 0.005,
            descriptor_dim: 8,
            descriptor_noise_sigma: 0.9,
            distractor_count: 0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_points == 0 {
            return Err(Error::InvalidConfig("n_points must be at least 1".into()));
        }
        if self.descriptor_dim == 0 {
            return Err(Error::InvalidConfig(
                "descriptor_dim must be at least 1".into(),
            ));
        }
        if !(self.jitter_sigma >= 0.0) || !(self.descriptor_noise_sigma >= 0.0) {
            return Err(Error::InvalidConfig(
                "noise levels must be non-negative".into(),
            ));
        }
        self.transform.check()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthPair {
    pub left: PointSet,
    pub right: PointSet,
    pub truth: GroundTruth,
}

fn gaussian_vec(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    (0..dim).map(|_| normal.sample(rng)).collect()
}

/// Generates a point-set pair from `config`; deterministic in `config.seed`.
pub fn generate_pair(config: &SynthConfig) -> Result<SynthPair> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let n = config.n_points;

    let left_points: Vec<Point> = (0..n)
        .map(|_| [rng.random::<f64>(), rng.random::<f64>()])
        .collect();
    let left_desc: Vec<Vec<f64>> = (0..n)
        .map(|_| gaussian_vec(&mut rng, config.descriptor_dim))
        .collect();

    let jitter =
        Normal::new(0.0, config.jitter_sigma).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let noise = Normal::new(0.0, config.descriptor_noise_sigma)
        .map_err(|e| Error::InvalidConfig(e.to_string()))?;

    // (point, descriptor, left source)
    let mut right: Vec<(Point, Vec<f64>, Option<usize>)> =
        Vec::with_capacity(n + config.distractor_count);
    for (i, (p, d)) in left_points.iter().zip(&left_desc).enumerate() {
        let q = config.transform.apply(*p);
        let q = [
            q[0] + jitter.sample(&mut rng),
            q[1] + jitter.sample(&mut rng),
        ];
        let desc = d.iter().map(|x| x + noise.sample(&mut rng)).collect();
        right.push((q, desc, Some(i)));
    }
    for _ in 0..config.distractor_count {
        let p = config
            .transform
            .apply([rng.random::<f64>(), rng.random::<f64>()]);
        right.push((p, gaussian_vec(&mut rng, config.descriptor_dim), None));
    }
    right.shuffle(&mut rng);

    let mut truth = GroundTruth::new();
    for (r, (_, _, src)) in right.iter().enumerate() {
        if let Some(l) = src {
            truth.insert(*l, r);
        }
    }
    let (rp, rd): (Vec<Point>, Vec<Vec<f64>>) = right.into_iter().map(|(p, d, _)| (p, d)).unzip();
    Ok(SynthPair {
        left: PointSet::new(left_points, Some(left_desc))?,
        right: PointSet::new(rp, Some(rd))?,
        truth,
    })
}

/// Label 1 for exactly the candidates that agree with the ground truth.
pub fn label_candidates(graph: &MatchHypergraph, truth: &GroundTruth) -> Result<Labeling> {
    let labels = graph
        .nodes()
        .iter()
        .map(|n| match truth.get(&n.left_index) {
            Some(&r) => Ok(u8::from(r == n.right_index)),
            None => Err(Error::MissingGroundTruth(n.left_index)),
        })
        .collect::<Result<Vec<_>>>()?;
    Labeling::new(labels)
}
