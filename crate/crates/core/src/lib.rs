//! Supervised hypergraph labeling for feature correspondence.
//!
//! Candidate matches are binary nodes of a hypergraph whose hyperedges are
//! geometrically consistent triangle pairs. Each hyperedge carries a
//! count-based penalty on how many of its members disagree with the "all
//! correct" or "all wrong" hypothesis; those penalties are learned by
//! maximum likelihood and inferred over with sum-product belief propagation.
//!
//! - [`potential`]: clique costs, penalty models, feature maps
//! - [`inference`]: factor graphs, sum-product, Bethe free energy, exact oracle
//! - [`matching`]: hypergraph construction and discretization
//! - [`learning`]: gradient-ascent estimation of penalty parameters
//! - [`synth`]: ground-truthed synthetic point-set pairs
//! - [`baselines`]: linear penalties, appearance-only and spectral matching
//! - [`registry`]: matchers selectable by name
//! - [`eval`], [`io`]: metrics and file formats

pub mod baselines;
pub mod error;
pub mod eval;
pub mod inference;
pub mod io;
pub mod learning;
pub mod matching;
pub mod potential;
pub mod registry;
pub mod synth;

pub use error::{Error, Result};
pub use inference::{BeliefState, BpOptions, Schedule};
pub use learning::{train, FixedPoints, Preconditioner, TrainConfig, TrainingInstance};
pub use matching::{
    match_pipeline, GroundTruth, HypergraphParams, MatchAssignment, PipelineParams, PointSet,
};
pub use potential::{Hyperedge, Labeling, MatchHypergraph, PenaltyModel, Variant};
pub use registry::{Matcher, MatcherConfig, MatcherRegistry};
pub use synth::{generate_pair, SynthConfig, Transform};
