use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use defa_core::config::{Ablation, Preset, RunConfig};

#[derive(Debug, Parser)]
#[command(
    name = "defa",
    version,
    about = "Debiased feature augmentation on precomputed image embeddings",
    args_override_self = true
)]
pub struct Cli {
    /// Worker threads for scoring; defaults to all cores.
    #[arg(long, env = "DEFA_THREADS", global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset (embeddings + manifest).
    Synth(SynthArgs),
    /// Train a model and write a checkpoint and per-epoch log.
    #[command(after_help = presets_help())]
    Train(TrainArgs),
    /// Train with one component removed.
    #[command(after_help = presets_help())]
    Ablate(AblateArgs),
    /// Evaluate a checkpoint in the closed and optionally the open world.
    Eval(EvalArgs),
    /// Print the frequency-aware debias weights of a training split.
    InspectWeights(InspectArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long = "na", default_value_t = 8)]
    pub n_attrs: usize,
    #[arg(long = "no", default_value_t = 10)]
    pub n_objs: usize,
    /// Backbone embedding dimension.
    #[arg(long, default_value_t = 32)]
    pub dim: usize,
    /// Fraction of A×O used as seen pairs, in (0, 1].
    #[arg(long, default_value_t = 0.6, value_parser = unit_fraction)]
    pub seen_frac: f64,
    /// Mean training samples per seen pair.
    #[arg(long, default_value_t = 40)]
    pub samples_per_pair: usize,
    /// Samples per pair in each of val and test.
    #[arg(long, default_value_t = 10)]
    pub eval_per_pair: usize,
    /// Power-law exponent for long-tailed training counts.
    #[arg(long)]
    pub tail: Option<f64>,
    #[arg(long, default_value_t = 0.15)]
    pub sigma: f64,
    #[arg(long, default_value_t = 0.3)]
    pub gamma: f64,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// Dataset directory holding `manifest.tsv` and `embeddings.defa`.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Manifest path (overrides `--data`).
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Embedding file path (overrides `--data`).
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Output directory for `checkpoint.defc`, `log.csv` and `config.toml`.
    #[arg(long)]
    pub out: PathBuf,
    /// Hyperparameter preset; flags and `--config` override it.
    #[arg(long, default_value = "ut-zappos")]
    pub preset: Preset,
    /// TOML file of hyperparameters applied over the preset.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Remove one component after all other settings are applied.
    #[arg(long)]
    pub ablate: Option<Ablation>,
    #[command(flatten)]
    pub hyper: HyperArgs,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    /// baseline, no-rec, no-pair, no-cts or no-fusion.
    pub variant: Ablation,
    #[command(flatten)]
    pub train: TrainArgs,
}

#[derive(Debug, Clone, Args, Default)]
pub struct HyperArgs {
    #[arg(long)]
    pub lambda1: Option<f64>,
    #[arg(long)]
    pub lambda2: Option<f64>,
    #[arg(long)]
    pub lambda3: Option<f64>,
    #[arg(long)]
    pub lambda4: Option<f64>,
    #[arg(long)]
    pub lambda5: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long)]
    pub mu: Option<f64>,
    /// Softmax temperature.
    #[arg(long)]
    pub tau: Option<f64>,
    /// Joint embedding dimension.
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub proj_layers: Option<usize>,
    #[arg(long)]
    pub proj_hidden: Option<usize>,
    #[arg(long)]
    pub fusion_layers: Option<usize>,
    /// Skip per-epoch validation and keep the last epoch.
    #[arg(long)]
    pub no_validate: bool,
}

impl HyperArgs {
    pub fn apply(&self, c: &mut RunConfig) {
        macro_rules! set {
            ($($f:ident),*) => {$(
                if let Some(v) = self.$f {
                    c.$f = v;
                }
            )*};
        }
        set!(lambda1, lambda2, lambda3, lambda4, lambda5, alpha, beta, rho, mu, tau, d, lr, epochs, batch_size, seed);
        set!(proj_layers, fusion_layers);
        if self.proj_hidden.is_some() {
            c.proj_hidden = self.proj_hidden;
        }
        if self.no_validate {
            c.validate = false;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum World {
    Closed,
    Open,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Val,
    Test,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitArg,
    /// `open` also scores every feasible pair of A×O.
    #[arg(long, value_enum, default_value = "closed")]
    pub world: World,
    /// Open world over all of A×O without a feasibility filter.
    #[arg(long)]
    pub open_all: bool,
    /// Feasibility scores (`attr<TAB>obj<TAB>score` per line).
    #[arg(long)]
    pub feasibility: Option<PathBuf>,
    /// Feasibility threshold; chosen on the validation split when omitted.
    #[arg(long, allow_hyphen_values = true)]
    pub threshold: Option<f64>,
    /// Directory for `closed.csv` / `open.csv` reports.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value = "ut-zappos")]
    pub preset: Preset,
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long)]
    pub mu: Option<f64>,
}

fn unit_fraction(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v > 0.0 && v <= 1.0 {
        Ok(v)
    } else {
        Err(format!("{v} is not in (0, 1]"))
    }
}

/// The preset table shown under `train --help`.
pub fn presets_help() -> String {
    let mut out = String::from(
        "Presets (flag defaults):\n  preset       lambda1 lambda2 lambda3 lambda4 lambda5 alpha beta rho  mu   tau   d   lr      epochs batch-size fusion-layers\n",
    );
    for p in Preset::ALL {
        let c = RunConfig::preset(p);
        out.push_str(&format!(
            "  {:<12} {:<7} {:<7} {:<7} {:<7} {:<7} {:<5} {:<4} {:<4} {:<4} {:<5} {:<3} {:<7} {:<6} {:<10} {}\n",
            p.name(),
            c.lambda1,
            c.lambda2,
            c.lambda3,
            c.lambda4,
            c.lambda5,
            c.alpha,
            c.beta,
            c.rho,
            c.mu,
            c.tau,
            c.d,
            c.lr,
            c.epochs,
            c.batch_size,
            c.fusion_layers
        ));
    }
    out
}
