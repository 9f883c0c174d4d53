use std::net::SocketAddr;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "hypcbm", version, about = "Entailment-cone concept bottleneck pipelines")]
pub struct Cli {
    /// TOML file with run settings; flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check bank, image, hierarchy and head files and report aperture diagnostics.
    Validate(Validate),
    /// Norm filter and de-duplicate a concept bank.
    Filter(Filter),
    /// Build an activation matrix.
    Activate(Activate),
    /// Fit one sparse head.
    Train(Train),
    /// Lambda sweep and accuracy at fixed concept budgets.
    Anec(Anec),
    /// Choose the image strictness threshold.
    CalibrateEta(CalibrateEta),
    /// Fit the text-side scaling law on hierarchy pairs.
    FitLaw(FitLaw),
    /// Hierarchical consistency of activations, with a cosine baseline.
    Consistency(Consistency),
    /// Jaccard stability of active sets under Gaussian embedding noise.
    Stability(Stability),
    /// Progressive concept suppression on misclassified samples.
    Intervene(Intervene),
    /// Generate a synthetic hierarchy with images.
    Synth(Synth),
    /// Run the HTTP service.
    Serve(Serve),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Validate(_) => "validate",
            Command::Filter(_) => "filter",
            Command::Activate(_) => "activate",
            Command::Train(_) => "train",
            Command::Anec(_) => "anec",
            Command::CalibrateEta(_) => "calibrate-eta",
            Command::FitLaw(_) => "fit-law",
            Command::Consistency(_) => "consistency",
            Command::Stability(_) => "stability",
            Command::Intervene(_) => "intervene",
            Command::Synth(_) => "synth",
            Command::Serve(_) => "serve",
        }
    }

    pub fn run_config(&self) -> &RunConfig {
        match self {
            Command::Validate(a) => &a.run,
            Command::Filter(a) => &a.run,
            Command::Activate(a) => &a.run,
            Command::Train(a) => &a.run,
            Command::Anec(a) => &a.run,
            Command::CalibrateEta(a) => &a.run,
            Command::FitLaw(a) => &a.run,
            Command::Consistency(a) => &a.run,
            Command::Stability(a) => &a.run,
            Command::Intervene(a) => &a.run,
            Command::Synth(a) => &a.run,
            Command::Serve(a) => &a.run,
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct Validate {
    #[command(flatten)]
    #[serde(skip)]
    pub run: RunConfig,
    /// Cone constants to report aperture saturation for.
    #[arg(long, value_delimiter = ',', default_value = "0.01,0.02,0.04,0.1")]
    pub k_values: Vec<f64>,
}

#[derive(Debug, Args, Serialize)]
pub struct Filter {
    #[command(flatten)]
    #[serde(skip)]
    pub run: RunConfig,
    /// Class-name embeddings; concepts too close to any are dropped.
    #[arg(long)]
    pub classes: Option<PathBuf>,
    #[arg(long, default_value_t = hypcbm::bank::DEFAULT_CLASS_SIM)]
    pub class_sim: f64,
    #[arg(long, default_value_t = hypcbm::bank::DEFAULT_CONCEPT_SIM)]
    pub concept_sim: f64,
    /// Only apply the norm filter.
    #[arg(long)]
    pub no_dedup: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Entailment,
    Cosine,
}

impl Mode {
    pub fn kernel_name(self) -> &'static str {
        match self {
            Mode::Entailment => "entailment",
            Mode::Cosine => "cosine",
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct Activate {
    #[command(flatten)]
    #[serde(skip)]
    pub run: RunConfig,
    #[arg(long, value_enum, default_value_t = Mode::Entailment)]
    pub mode: Mode,
}

#[derive(Debug, Args, Serialize)]
pub struct Train {
    #[command(flatten)]
    #[serde(skip)]
    pub run: RunConfig,
    #[arg(long, value_enum, default_value_t = Mode::Entailment)]
    pub mode: Mode,
}

#[derive(Debug, Args, Serialize)]
pub struct Anec {
    #[command(flatten)]
    #[serde(skip)]
    pub run: RunConfig,
    /// Also sweep a head on cosine activations and add it as a second row.
    #[arg(long)]
    pub cosine_baseline: bool,
    #[arg(long, default_value_t = 2)]
    pub refine_rounds: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CalibrationMethod {
    /// ROC over entailed and random (image, concept) pairs.
    Youden,
    /// Held-out accuracy over candidate thresholds.
    Sweep,
}

#[derive(Debug, Args, Serialize)]
pub struct CalibrateEta {
    #[command(flatten)]
    #[serde(skip)]
    pub run: RunConfig,
    #[arg(long, value_enum, default_value_t = CalibrationMethod::Youden)]
    pub method: CalibrationMethod,
    /// TSV of `sample_id TAB concept_name` entailed pairs.
    #[arg(long)]
    pub positives: Option<PathBuf>,
    /// Generator ground truth; every concept on an image's chain is a positive.
    #[arg(long)]
    pub ground_truth: Option<PathBuf>,
    /// Random negative pairs drawn per positive.
    #[arg(long, default_value_t = 1)]
    pub negatives_per_positive: usize,
    #[arg(long, default_value_t = 0.0)]
    pub grid_start: f64,
    #[arg(long, default_value_t = 3.0)]
    pub grid_stop: f64,
    #[arg(long, default_value_t = 0.001)]
    pub grid_step: f64,
    /// Candidate thresholds for `--method sweep`.
    #[arg(long, value_delimiter = ',', default_value = "1.0,1.1,1.2,1.3,1.4,1.5")]
    pub candidates: Vec<f64>,
}

#[derive(Debug, Args, Serialize)]
pub struct FitLaw {
    #[command(flatten)]
    #[serde(skip)]
    pub run: RunConfig,
    /// Both norms of a pair must reach this value.
    #[arg(long, default_value_t = hypcbm::bank::DEFAULT_TAU)]
    pub min_norm: f64,
}

#[derive(Debug, Args, Serialize)]
pub struct Consistency {
    #[command(flatten)]
    #[serde(skip)]
    pub run: RunConfig,
    /// Score every ancestor-descendant pair, not only direct edges.
    #[arg(long)]
    pub transitive: bool,
    /// Skip the sparsity-matched cosine baseline.
    #[arg(long)]
    pub no_baseline: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct Stability {
    #[command(flatten)]
    #[serde(skip)]
    pub run: RunConfig,
    /// Standard deviation of the additive noise on spatial coordinates.
    #[arg(long)]
    pub sigma: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    /// Text-side threshold from the scaling law.
    Law,
    /// One threshold for every parent.
    Constant,
}

#[derive(Debug, Args, Serialize, Clone)]
pub struct PropagationArgs {
    #[arg(long, value_enum, default_value_t = Rule::Law)]
    pub rule: Rule,
    /// Scaling law JSON from `fit-law`; the published law when absent.
    #[arg(long)]
    pub law: Option<PathBuf>,
    /// Threshold for `--rule constant`.
    #[arg(long, default_value_t = 1.0)]
    pub eta_text: f64,
}

#[derive(Debug, Args, Serialize)]
pub struct Intervene {
    #[command(flatten)]
    #[serde(skip)]
    pub run: RunConfig,
    #[arg(long, default_value = "top_contributing")]
    pub strategy: String,
    #[arg(long, default_value_t = 0.1)]
    pub delta: f64,
    #[arg(long, default_value_t = 10)]
    pub steps: usize,
    /// Also suppress every concept the target entails.
    #[arg(long)]
    pub propagate: bool,
    /// Keep deepening the first target instead of re-selecting each step.
    #[arg(long)]
    pub no_reselect: bool,
    /// Generator ground truth; needed by `manual_oracle`.
    #[arg(long)]
    pub ground_truth: Option<PathBuf>,
    #[command(flatten)]
    pub propagation: PropagationArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct Synth {
    #[command(flatten)]
    #[serde(skip)]
    pub run: RunConfig,
    /// Generator spec (TOML or JSON); flags override it.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub depth: Option<usize>,
    #[arg(long)]
    pub branching: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
    /// Concept norm per level, root first.
    #[arg(long, value_delimiter = ',')]
    pub norms: Option<Vec<f64>>,
    #[arg(long)]
    pub image_norm: Option<f64>,
    #[arg(long)]
    pub images_per_leaf: Option<usize>,
    #[arg(long)]
    pub test_images_per_leaf: Option<usize>,
    #[arg(long)]
    pub noise_scale: Option<f64>,
}

#[derive(Debug, Args, Serialize)]
pub struct Serve {
    #[command(flatten)]
    #[serde(skip)]
    pub run: RunConfig,
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: SocketAddr,
    /// Static frontend directory mounted at `/ui`.
    #[arg(long)]
    pub ui_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 30)]
    pub ttl_minutes: u64,
    #[command(flatten)]
    pub propagation: PropagationArgs,
}
