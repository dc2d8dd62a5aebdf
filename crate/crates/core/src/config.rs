//! Run configuration: one section per model family plus experiment settings.
//!
//! ```yaml
//! model:
//!   two_state:
//!     theta_star: 0.7
//!     mu: 0.05
//!     T: 32
//! experiment:
//!   grid: [[8, 8], [32, 8]]
//!   n_reps: 64
//! seed: 7
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::attention::AttentionModel;
use crate::error::{Error, Result};
use crate::markov::{MixtureModel, TwoStateModel};
use crate::model::ModelSpec;
use crate::noise::{make_noise, NoiseKind};
use crate::regression::{FeatureMap, RegressionModel};
use crate::sin_glm::SinGlmModel;

fn default_mu() -> f64 {
    0.05
}

fn default_radius() -> f64 {
    2.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TwoStateConfig {
    pub theta_star: f64,
    #[serde(default = "default_mu")]
    pub mu: f64,
    #[serde(rename = "T")]
    pub horizon: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureConfig {
    pub theta_star: [f64; 2],
    #[serde(default = "default_mu")]
    pub mu: f64,
    #[serde(rename = "T")]
    pub horizon: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseKindName {
    Gaussian,
    BangBang,
    SmoothedLaplace,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    pub kind: NoiseKindName,
    pub nu: f64,
    #[serde(default)]
    pub c: Option<f64>,
}

impl NoiseConfig {
    pub fn to_kind(&self) -> Result<NoiseKind> {
        match (self.kind, self.c) {
            (NoiseKindName::Gaussian, None) => Ok(NoiseKind::Gaussian { nu: self.nu }),
            (NoiseKindName::BangBang, None) => Ok(NoiseKind::BangBang { nu: self.nu }),
            (NoiseKindName::SmoothedLaplace, Some(c)) => Ok(NoiseKind::SmoothedLaplace { c, nu: self.nu }),
            (NoiseKindName::SmoothedLaplace, None) => Err(Error::Config {
                path: "model.regression.noise.c".into(),
                msg: "smoothed_laplace requires c".into(),
            }),
            (_, Some(_)) => Err(Error::Config {
                path: "model.regression.noise.c".into(),
                msg: "c applies only to smoothed_laplace".into(),
            }),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureMapName {
    /// `M(z) = zᵀ ⊗ I_d`.
    Linear,
    /// `M(z) = sin(z)ᵀ ⊗ I_d`.
    BoundedSin,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegressionConfig {
    pub d: usize,
    #[serde(rename = "T")]
    pub horizon: usize,
    pub theta_star: Vec<f64>,
    pub noise: NoiseConfig,
    pub feature_map: FeatureMapName,
    #[serde(rename = "R", default = "default_radius")]
    pub radius: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SinGlmConfig {
    pub d: usize,
    pub sigma: f64,
    #[serde(rename = "T")]
    pub horizon: usize,
    pub theta_star: Vec<f64>,
    #[serde(rename = "R", default = "default_radius")]
    pub radius: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialLaw {
    #[default]
    UniformPairs,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttentionConfig {
    #[serde(rename = "K")]
    pub k: usize,
    pub d: usize,
    #[serde(rename = "R")]
    pub radius: f64,
    #[serde(rename = "T")]
    pub horizon: usize,
    pub theta_star: Vec<f64>,
    pub embeddings_seed: u64,
    #[serde(default)]
    pub rho1: InitialLaw,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelConfig {
    TwoState(TwoStateConfig),
    Mixture(MixtureConfig),
    Regression(RegressionConfig),
    SinGlm(SinGlmConfig),
    Attention(AttentionConfig),
}

impl ModelConfig {
    pub fn family(&self) -> &'static str {
        match self {
            ModelConfig::TwoState(_) => "two_state",
            ModelConfig::Mixture(_) => "mixture",
            ModelConfig::Regression(_) => "regression",
            ModelConfig::SinGlm(_) => "sin_glm",
            ModelConfig::Attention(_) => "attention",
        }
    }

    pub fn horizon(&self) -> usize {
        match self {
            ModelConfig::TwoState(c) => c.horizon,
            ModelConfig::Mixture(c) => c.horizon,
            ModelConfig::Regression(c) => c.horizon,
            ModelConfig::SinGlm(c) => c.horizon,
            ModelConfig::Attention(c) => c.horizon,
        }
    }

    pub fn theta_star(&self) -> Vec<f64> {
        match self {
            ModelConfig::TwoState(c) => vec![c.theta_star],
            ModelConfig::Mixture(c) => c.theta_star.to_vec(),
            ModelConfig::Regression(c) => c.theta_star.clone(),
            ModelConfig::SinGlm(c) => c.theta_star.clone(),
            ModelConfig::Attention(c) => c.theta_star.clone(),
        }
    }

    /// Same family and parameters with horizon `t`.
    pub fn with_horizon(&self, t: usize) -> ModelConfig {
        let mut c = self.clone();
        match &mut c {
            ModelConfig::TwoState(c) => c.horizon = t,
            ModelConfig::Mixture(c) => c.horizon = t,
            ModelConfig::Regression(c) => c.horizon = t,
            ModelConfig::SinGlm(c) => c.horizon = t,
            ModelConfig::Attention(c) => c.horizon = t,
        }
        c
    }

    /// Desk-scale configuration for a family, used when no config file is given.
    pub fn desk_default(family: &str) -> Result<ModelConfig> {
        Ok(match family {
            "two_state" => ModelConfig::TwoState(TwoStateConfig {
                theta_star: 0.7,
                mu: 0.05,
                horizon: 8,
            }),
            "mixture" => ModelConfig::Mixture(MixtureConfig {
                theta_star: [0.8, 0.2],
                mu: 0.05,
                horizon: 64,
            }),
            "regression" => ModelConfig::Regression(RegressionConfig {
                d: 2,
                horizon: 16,
                theta_star: vec![0.5, -0.1, 0.2, 0.4],
                noise: NoiseConfig {
                    kind: NoiseKindName::SmoothedLaplace,
                    nu: 1.0,
                    c: Some(5.0),
                },
                feature_map: FeatureMapName::Linear,
                radius: 2.0,
            }),
            "sin_glm" => ModelConfig::SinGlm(SinGlmConfig {
                d: 2,
                sigma: 1.0,
                horizon: 16,
                theta_star: vec![0.6, 0.48, 0.0, 0.64],
                radius: 2.0,
            }),
            "attention" => ModelConfig::Attention(AttentionConfig {
                k: 5,
                d: 2,
                radius: 1.0,
                horizon: 8,
                theta_star: vec![0.5, -0.3, 0.2, 0.4],
                embeddings_seed: 7,
                rho1: InitialLaw::UniformPairs,
            }),
            other => {
                return Err(Error::Config {
                    path: "model".into(),
                    msg: format!("unknown family {other:?}; expected two_state, mixture, regression, sin_glm or attention"),
                })
            }
        })
    }

    /// Same family with `theta_star` replaced.
    pub fn with_theta(&self, theta: &[f64]) -> Result<ModelConfig> {
        let mut out = self.clone();
        let bad = || Error::Config {
            path: format!("model.{}.theta_star", self.family()),
            msg: format!("expected {} coordinates, got {}", self.theta_star().len(), theta.len()),
        };
        if theta.len() != self.theta_star().len() {
            return Err(bad());
        }
        match &mut out {
            ModelConfig::TwoState(c) => c.theta_star = theta[0],
            ModelConfig::Mixture(c) => c.theta_star = [theta[0], theta[1]],
            ModelConfig::Regression(c) => c.theta_star = theta.to_vec(),
            ModelConfig::SinGlm(c) => c.theta_star = theta.to_vec(),
            ModelConfig::Attention(c) => c.theta_star = theta.to_vec(),
        }
        Ok(out)
    }

    pub fn build(&self) -> Result<Box<dyn ModelSpec>> {
        let tag = |e: Error| Error::Config {
            path: format!("model.{}", self.family()),
            msg: e.to_string(),
        };
        let model: Box<dyn ModelSpec> = match self {
            ModelConfig::TwoState(c) => Box::new(TwoStateModel::new(c.theta_star, c.mu, c.horizon).map_err(tag)?),
            ModelConfig::Mixture(c) => Box::new(MixtureModel::new(c.theta_star, c.mu, c.horizon).map_err(tag)?),
            ModelConfig::Regression(c) => {
                let noise = make_noise(c.noise.to_kind()?).map_err(tag)?;
                let map = match c.feature_map {
                    FeatureMapName::Linear => FeatureMap::Linear,
                    FeatureMapName::BoundedSin => FeatureMap::BoundedSin,
                };
                Box::new(RegressionModel::new(c.d, c.horizon, c.theta_star.clone(), noise, map, c.radius).map_err(tag)?)
            }
            ModelConfig::SinGlm(c) => Box::new(SinGlmModel::new(c.d, c.sigma, c.horizon, c.theta_star.clone(), c.radius).map_err(tag)?),
            ModelConfig::Attention(c) => Box::new(
                AttentionModel::from_seed(c.k, c.d, c.radius, c.horizon, c.theta_star.clone(), c.embeddings_seed).map_err(tag)?,
            ),
        };
        Ok(model)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    #[default]
    Continuous,
    Discretized,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[derive(Default)]
pub enum EpsilonRule {
    /// `ε = δ / (2√(2m))`.
    #[default]
    Auto,
    Fixed(f64),
}


impl EpsilonRule {
    pub fn epsilon(&self, m: usize, delta: f64) -> f64 {
        match *self {
            EpsilonRule::Auto => delta / (2.0 * (2.0 * m as f64).sqrt()),
            EpsilonRule::Fixed(e) => e,
        }
    }
}

fn default_reps() -> usize {
    16
}

fn default_delta() -> f64 {
    0.05
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// `(m, T)` cells; empty means the default desk grid.
    #[serde(default)]
    pub grid: Vec<(usize, usize)>,
    #[serde(default = "default_reps")]
    pub n_reps: usize,
    #[serde(default)]
    pub estimator: EstimatorKind,
    #[serde(default, with = "serde_yaml::with::singleton_map")]
    pub epsilon_rule: EpsilonRule,
    #[serde(default = "default_delta")]
    pub delta: f64,
    /// Trajectory count for `simulate`, `fit` and `localize`.
    #[serde(default)]
    pub m: Option<usize>,
    /// Record wall-clock time per cell (makes CSV output run-dependent).
    #[serde(default)]
    pub record_timing: bool,
    /// Replicates per cell that also get localization predicates.
    #[serde(default)]
    pub predicate_subsample: Option<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            grid: Vec::new(),
            n_reps: default_reps(),
            estimator: EstimatorKind::default(),
            epsilon_rule: EpsilonRule::default(),
            delta: default_delta(),
            m: None,
            record_timing: false,
            predicate_subsample: None,
        }
    }
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(with = "serde_yaml::with::singleton_map")]
    pub model: ModelConfig,
    #[serde(default)]
    pub experiment: ExperimentConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out_dir: PathBuf,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<RunConfig> {
        let cfg: RunConfig = serde_yaml::from_str(text).map_err(|e| Error::Config {
            path: e.location().map_or("<root>".into(), |l| format!("line {} column {}", l.line(), l.column())),
            msg: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RunConfig::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |path: &str, msg: &str| Err(Error::Config { path: path.into(), msg: msg.into() });
        if self.experiment.n_reps == 0 {
            return bad("experiment.n_reps", "must be at least 1");
        }
        if !(self.experiment.delta > 0.0 && self.experiment.delta < 1.0) {
            return bad("experiment.delta", "must lie in (0, 1)");
        }
        if let EpsilonRule::Fixed(e) = self.experiment.epsilon_rule {
            if !(e > 0.0) {
                return bad("experiment.epsilon_rule", "fixed epsilon must be positive");
            }
        }
        if self.experiment.grid.iter().any(|&(m, t)| m == 0 || t < 2) {
            return bad("experiment.grid", "cells need m ≥ 1 and T ≥ 2");
        }
        self.model.build().map(|_| ())
    }

    /// Configured grid, or the desk default for the family.
    pub fn grid(&self) -> Vec<(usize, usize)> {
        if !self.experiment.grid.is_empty() {
            return self.experiment.grid.clone();
        }
        default_grid(&self.model)
    }
}

/// `m ∈ {8, 32, 128} × T ∈ {8, 32, 128}` for scalar families, a smaller grid otherwise.
pub fn default_grid(model: &ModelConfig) -> Vec<(usize, usize)> {
    let (ms, ts): (&[usize], &[usize]) = match model {
        ModelConfig::TwoState(_) => (&[8, 32, 128], &[8, 32, 128]),
        ModelConfig::Mixture(_) => (&[64, 256, 1024], &[64]),
        ModelConfig::Regression(_) => (&[16, 64, 256], &[16, 64]),
        ModelConfig::SinGlm(_) => (&[32, 128, 512], &[16, 64]),
        ModelConfig::Attention(_) => (&[32, 128, 512], &[8, 32]),
    };
    ts.iter().flat_map(|&t| ms.iter().map(move |&m| (m, t))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_minimal_two_state() {
        let c = RunConfig::parse("model:\n  two_state:\n    theta_star: 0.7\n    T: 16\nseed: 3\n").unwrap();
        assert_eq!(c.model.theta_star(), vec![0.7]);
        assert_eq!(c.grid().len(), 9);
        assert_eq!(c.seed, 3);
    }

    #[test]
    fn rejects_unknown_and_missing_keys() {
        assert!(RunConfig::parse("model:\n  two_state:\n    theta_star: 0.7\n    T: 16\n    muu: 0.1\n").is_err());
        assert!(RunConfig::parse("model:\n  two_state:\n    theta_star: 0.7\n").is_err());
        assert!(RunConfig::parse("model:\n  two_state:\n    theta_star: 0.7\n    T: 16\nexperiment:\n  n_rep: 3\n").is_err());
        assert!(RunConfig::parse("model:\n  two_state:\n    theta_star: 1.7\n    T: 16\n").is_err());
    }

    #[test]
    fn noise_section() {
        let text = "model:\n  regression:\n    d: 1\n    T: 8\n    theta_star: [0.5]\n    noise: {kind: smoothed_laplace, nu: 1.0, c: 5.0}\n    feature_map: linear\n";
        let c = RunConfig::parse(text).unwrap();
        assert_eq!(c.model.family(), "regression");
        let text = "model:\n  regression:\n    d: 1\n    T: 8\n    theta_star: [0.5]\n    noise: {kind: gaussian, nu: 1.0, c: 5.0}\n    feature_map: linear\n";
        assert!(RunConfig::parse(text).is_err());
    }

    #[test]
    fn every_family_section_parses() {
        let sections = [
            "mixture: {theta_star: [0.8, 0.2], mu: 0.05, T: 64}",
            "regression: {d: 1, T: 16, theta_star: [0.5], noise: {kind: gaussian, nu: 1.0}, feature_map: bounded_sin, R: 2.0}",
            "sin_glm: {d: 1, sigma: 1.0, T: 16, theta_star: [0.5], R: 2.0}",
            "attention: {K: 5, d: 2, R: 1.0, T: 8, theta_star: [0.5, -0.3, 0.2, 0.4], embeddings_seed: 7}",
        ];
        for s in sections {
            let c = RunConfig::parse(&format!("model:\n  {s}\n")).unwrap_or_else(|e| panic!("{s}: {e}"));
            assert!(s.starts_with(c.model.family()));
        }
    }

    #[test]
    fn epsilon_rules() {
        let base = "model:\n  two_state:\n    theta_star: 0.7\n    T: 16\nexperiment:\n  epsilon_rule: ";
        let c = RunConfig::parse(&format!("{base}auto\n")).unwrap();
        assert_eq!(c.experiment.epsilon_rule, EpsilonRule::Auto);
        let c = RunConfig::parse(&format!("{base}{{fixed: 0.01}}\n")).unwrap();
        assert_eq!(c.experiment.epsilon_rule, EpsilonRule::Fixed(0.01));
        assert!((EpsilonRule::Auto.epsilon(8, 0.05) - 0.00625).abs() < 1e-15);
    }
}
