//! Run configuration and the per-dataset hyperparameter presets.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::augment::{CartesianCandidates, PairCandidates};
use crate::pipeline::{AdamConfig, CompCandidates, LossWeights, ModelConfig, PipelineError, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    MitStates,
    UtZappos,
    Cgqa,
}

impl Preset {
    pub const ALL: [Preset; 3] = [Preset::MitStates, Preset::UtZappos, Preset::Cgqa];

    pub fn name(self) -> &'static str {
        match self {
            Preset::MitStates => "mit-states",
            Preset::UtZappos => "ut-zappos",
            Preset::Cgqa => "c-gqa",
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "mit-states" | "mit_states" | "mitstates" => Ok(Preset::MitStates),
            "ut-zappos" | "ut_zappos" | "utzappos" => Ok(Preset::UtZappos),
            "c-gqa" | "cgqa" | "c_gqa" => Ok(Preset::Cgqa),
            other => Err(format!(
                "unknown preset {other:?} (expected mit-states, ut-zappos or c-gqa)"
            )),
        }
    }
}

/// Every hyperparameter of a training run. Unknown keys are rejected when
/// deserialising.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub lambda4: f64,
    pub lambda5: f64,
    pub alpha: f64,
    pub beta: f64,
    pub rho: f64,
    pub mu: f64,
    pub tau: f64,
    pub d: usize,
    pub proj_layers: usize,
    pub proj_hidden: Option<usize>,
    pub fusion_layers: usize,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub comp_candidates: CompCandidates,
    pub pair_candidates: PairCandidates,
    pub cartesian_candidates: CartesianCandidates,
    pub validate: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::preset(Preset::UtZappos)
    }
}

impl RunConfig {
    pub fn preset(p: Preset) -> Self {
        let base = Self {
            lambda1: 0.9,
            lambda2: 10.0,
            lambda3: 10.0,
            lambda4: 0.9,
            lambda5: 0.1,
            alpha: 0.8,
            beta: 0.5,
            rho: 0.5,
            mu: 0.8,
            tau: 0.01,
            d: 64,
            proj_layers: 2,
            proj_hidden: None,
            fusion_layers: 1,
            lr: 5e-4,
            epochs: 20,
            batch_size: 128,
            seed: 0,
            comp_candidates: CompCandidates::Full,
            pair_candidates: PairCandidates::Seen,
            cartesian_candidates: CartesianCandidates::Batch,
            validate: true,
        };
        match p {
            Preset::UtZappos => base,
            Preset::MitStates => Self {
                lambda1: 0.3,
                lambda2: 10.0,
                lambda3: 100.0,
                lambda4: 0.7,
                lambda5: 0.1,
                alpha: 0.8,
                mu: 0.9,
                epochs: 50,
                batch_size: 128,
                fusion_layers: 3,
                ..base
            },
            Preset::Cgqa => Self {
                lambda1: 0.2,
                lambda2: 3.0,
                lambda3: 1.0,
                lambda4: 0.1,
                lambda5: 0.1,
                alpha: 0.9,
                mu: 0.9,
                epochs: 20,
                batch_size: 32,
                fusion_layers: 3,
                ..base
            },
        }
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights {
            lambda1: self.lambda1,
            lambda2: self.lambda2,
            lambda3: self.lambda3,
            lambda4: self.lambda4,
            lambda5: self.lambda5,
            alpha: self.alpha,
            beta: self.beta,
            rho: self.rho,
            mu: self.mu,
            tau: self.tau,
        }
    }

    pub fn model_config(&self, d_backbone: usize) -> ModelConfig {
        ModelConfig {
            d_backbone,
            d: self.d,
            proj_layers: self.proj_layers,
            proj_hidden: self.proj_hidden.unwrap_or(self.d),
            fusion_layers: self.fusion_layers,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed: self.seed,
            adam: AdamConfig {
                lr: self.lr,
                ..AdamConfig::default()
            },
            comp_candidates: self.comp_candidates,
            pair_candidates: self.pair_candidates,
            cartesian_candidates: self.cartesian_candidates,
            validate: self.validate,
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        self.weights().validate()?;
        self.model_config(1).validate()?;
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(PipelineError::Config(format!("lr = {} must be non-negative", self.lr)));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(PipelineError::Config("epochs and batch_size must be positive".into()));
        }
        Ok(())
    }

    /// Applies a named ablation.
    pub fn ablate(&mut self, a: Ablation) {
        match a {
            Ablation::Baseline => {
                self.lambda2 = 0.0;
                self.lambda3 = 0.0;
                self.lambda4 = 0.0;
                self.lambda5 = 0.0;
                self.beta = 1.0;
            }
            Ablation::NoRec => self.lambda3 = 0.0,
            Ablation::NoPair => self.lambda4 = 0.0,
            Ablation::NoCts => self.lambda5 = 0.0,
            Ablation::NoFusion => self.alpha = 0.0,
        }
    }
}

/// Component removals for ablation runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ablation {
    /// Classification loss only, `β = 1`.
    Baseline,
    /// `λ3 = 0`.
    NoRec,
    /// `λ4 = 0`.
    NoPair,
    /// `λ5 = 0`.
    NoCts,
    /// `α = 0`: pseudo features are `v^a + v^o`.
    NoFusion,
}

impl Ablation {
    pub const ALL: [Ablation; 5] = [
        Ablation::Baseline,
        Ablation::NoRec,
        Ablation::NoPair,
        Ablation::NoCts,
        Ablation::NoFusion,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::Baseline => "baseline",
            Ablation::NoRec => "no-rec",
            Ablation::NoPair => "no-pair",
            Ablation::NoCts => "no-cts",
            Ablation::NoFusion => "no-fusion",
        }
    }
}

impl FromStr for Ablation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ablation::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| format!("unknown ablation {s:?}"))
    }
}
