//! Matching methods behind one trait, looked up by name.

use std::collections::BTreeMap;

use crate::baselines::{greedy_appearance, linear_penalty_model, spectral_match, SpectralParams};
use crate::error::{Error, Result};
use crate::matching::{match_pipeline, MatchAssignment, PipelineParams, PointSet};
use crate::potential::PenaltyModel;

pub trait Matcher: Send + Sync {
    fn name(&self) -> &str;
    fn match_pair(&self, left: &PointSet, right: &PointSet) -> Result<MatchAssignment>;
}

/// Settings shared by all factories; each method reads what it needs.
#[derive(Debug, Clone, Default)]
pub struct MatcherConfig {
    /// Penalty model for the `learned` method.
    pub model: Option<PenaltyModel>,
    pub pipeline: PipelineParams,
    pub spectral: SpectralParams,
}

/// Hypergraph labeling under a fixed penalty model.
pub struct HypergraphMatcher {
    name: String,
    model: PenaltyModel,
    params: PipelineParams,
}

impl HypergraphMatcher {
    pub fn new(name: impl Into<String>, model: PenaltyModel, params: PipelineParams) -> Self {
        Self {
            name: name.into(),
            model,
            params,
        }
    }

    pub fn model(&self) -> &PenaltyModel {
        &self.model
    }
}

impl Matcher for HypergraphMatcher {
    fn name(&self) -> &str {
        &self.name
    }

    fn match_pair(&self, left: &PointSet, right: &PointSet) -> Result<MatchAssignment> {
        Ok(match_pipeline(left, right, &self.model, &self.params)?.assignment)
    }
}

pub struct GreedyAppearanceMatcher;

impl Matcher for GreedyAppearanceMatcher {
    fn name(&self) -> &str {
        "greedy"
    }

    fn match_pair(&self, left: &PointSet, right: &PointSet) -> Result<MatchAssignment> {
        greedy_appearance(left, right)
    }
}

pub struct SpectralMatcher {
    params: SpectralParams,
}

impl SpectralMatcher {
    pub fn new(params: SpectralParams) -> Self {
        Self { params }
    }
}

impl Matcher for SpectralMatcher {
    fn name(&self) -> &str {
        "spectral"
    }

    fn match_pair(&self, left: &PointSet, right: &PointSet) -> Result<MatchAssignment> {
        Ok(spectral_match(left, right, &self.params)?.assignment)
    }
}

type Factory = Box<dyn Fn(&MatcherConfig) -> Result<Box<dyn Matcher>> + Send + Sync>;

#[derive(Default)]
pub struct MatcherRegistry {
    factories: BTreeMap<String, Factory>,
}

impl MatcherRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// `learned`, `linear`, `greedy` and `spectral`.
    pub fn with_builtins() -> Self {
        let mut reg = Self::new();
        reg.register("learned", |cfg| {
            let model = cfg
                .model
                .clone()
                .ok_or_else(|| Error::InvalidConfig("method `learned` needs a model".into()))?;
            Ok(Box::new(HypergraphMatcher::new(
                "learned",
                model,
                cfg.pipeline,
            )))
        });
        reg.register("linear", |cfg| {
            let k_max = cfg.model.as_ref().map_or(3, |m| m.k_max());
            Ok(Box::new(HypergraphMatcher::new(
                "linear",
                linear_penalty_model(k_max),
                cfg.pipeline,
            )))
        });
        reg.register("greedy", |_| Ok(Box::new(GreedyAppearanceMatcher)));
        reg.register("spectral", |cfg| {
            let mut params = cfg.spectral;
            params.m = cfg.pipeline.hypergraph.m;
            Ok(Box::new(SpectralMatcher::new(params)))
        });
        reg
    }

    /// Adds or replaces a method.
    pub fn register<F>(&mut self, name: &str, factory: F)
    where
        F: Fn(&MatcherConfig) -> Result<Box<dyn Matcher>> + Send + Sync + 'static,
    {
        self.factories.insert(name.to_string(), Box::new(factory));
    }

    pub fn names(&self) -> Vec<&str> {
        self.factories.keys().map(String::as_str).collect()
    }

    pub fn create(&self, name: &str, config: &MatcherConfig) -> Result<Box<dyn Matcher>> {
        match self.factories.get(name) {
            Some(f) => f(config),
            None => Err(Error::UnknownMethod {
                name: name.to_string(),
                available: self.names().join(", "),
            }),
        }
    }
}
