use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use dualxda::baselines::DEFAULT_TRAK_PROJ_DIM;
use dualxda::netlrp::DEFAULT_EPSILON;
use dualxda::svm::{DEFAULT_C, DEFAULT_MAX_EPOCHS, DEFAULT_TOL};

#[derive(Debug, Parser)]
#[command(name = "dualxda", version, about = "Sparse data attribution with an SVM surrogate and paired LRP heatmaps")]
pub struct Cli {
    /// Worker threads; overrides DXDA_THREADS. 0 uses every core.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// Print structured JSON on stdout instead of a summary.
    #[arg(long, global = true)]
    pub json: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(tag = "name", rename_all = "kebab-case")]
pub enum Command {
    /// Fit the SVM surrogate on a feature cache and write a .dxda model.
    Solve(SolveArgs),
    /// DualDA attributions of test points against the training set.
    Attribute(AttributeArgs),
    /// Reference attribution methods on the classifier head.
    #[command(subcommand)]
    Baselines(BaselineCommand),
    /// Paired test/train heatmaps explaining one attribution.
    Xda(XdaArgs),
    /// Evaluation metrics for attribution matrices.
    #[command(subcommand)]
    Eval(EvalCommand),
    /// Cumulative share of |attribution| held by the top training points.
    Sparsity(SparsityArgs),
    /// Agreement between the classifier head and the surrogate.
    Faithfulness(FaithfulnessArgs),
    /// LRP heatmap of a network output (or surrogate logit) for one input.
    ExportHeatmap(ExportHeatmapArgs),
    /// Write seeded synthetic caches (and optionally a small network with inputs).
    Synth(SynthArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct SolveArgs {
    /// Training feature cache (.dxfc).
    #[arg(long)]
    pub features: PathBuf,
    /// Sparsity hyperparameter.
    #[arg(long = "C", default_value_t = DEFAULT_C, allow_negative_numbers = true)]
    #[serde(rename = "C")]
    pub c: f64,
    /// KKT tolerance.
    #[arg(long, default_value_t = DEFAULT_TOL)]
    pub tol: f64,
    #[arg(long, default_value_t = DEFAULT_MAX_EPOCHS)]
    pub max_epochs: usize,
    /// Seed of the coordinate order.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Keep the raw optimal dual instead of the minimum-norm one.
    #[arg(long)]
    pub no_canonicalize: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct MatrixOutput {
    /// Attribution matrix (.dxat).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write scores as CSV: dense T x N, or top-k rows with --top-k.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[arg(long)]
    pub top_k: Option<usize>,
}

#[derive(Debug, Args, Serialize)]
pub struct AttributeArgs {
    /// Surrogate model (.dxda).
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
    /// Explained class: `predicted`, `label` or a class index.
    #[arg(long, default_value = "predicted")]
    pub target: String,
    #[command(flatten)]
    #[serde(flatten)]
    pub output: MatrixOutput,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct HeadArgs {
    /// Head weights as raw little-endian f32, K x d row-major. Retrained when omitted.
    #[arg(long)]
    pub head: Option<PathBuf>,
    /// Weight decay of the retrained head.
    #[arg(long, default_value_t = 1e-3)]
    pub weight_decay: f64,
}

#[derive(Debug, Args, Serialize)]
pub struct BaselineArgs {
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
    /// Explained class: `predicted` (by the head), `label` or a class index.
    #[arg(long, default_value = "predicted")]
    pub target: String,
    #[command(flatten)]
    #[serde(flatten)]
    pub head: HeadArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub output: MatrixOutput,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(tag = "method", rename_all = "kebab-case")]
pub enum BaselineCommand {
    GradDot(BaselineArgs),
    GradCos(BaselineArgs),
    Representer(BaselineArgs),
    Influence {
        #[command(flatten)]
        #[serde(flatten)]
        common: BaselineArgs,
        #[arg(long, default_value_t = 1e-3)]
        damping: f64,
        /// Replace the Hessian by the identity.
        #[arg(long)]
        identity_hessian: bool,
    },
    Trak {
        #[command(flatten)]
        #[serde(flatten)]
        common: BaselineArgs,
        /// Projection dimension; 0 disables the projection.
        #[arg(long, default_value_t = DEFAULT_TRAK_PROJ_DIM)]
        proj_dim: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    Tracin {
        #[command(flatten)]
        #[serde(flatten)]
        common: BaselineArgs,
        /// Training gradient caches (.dxgc), one per checkpoint.
        #[arg(long, required = true, num_args = 1..)]
        train_grads: Vec<PathBuf>,
        /// Test gradient caches (.dxgc), in the same checkpoint order.
        #[arg(long, required = true, num_args = 1..)]
        test_grads: Vec<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CompositeArg {
    EpsilonPlusFlat,
    Epsilon,
    ZPlus,
    Flat,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct RuleArgs {
    #[arg(long, value_enum, default_value_t = CompositeArg::EpsilonPlusFlat)]
    pub composite: CompositeArg,
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    pub epsilon: f64,
}

#[derive(Debug, Args, Serialize)]
pub struct XdaArgs {
    /// Network manifest (.toml).
    #[arg(long)]
    pub network: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    /// Test input as raw little-endian f32 in the network input shape.
    #[arg(long)]
    pub test_input: PathBuf,
    #[arg(long)]
    pub train_input: PathBuf,
    /// Index of the training input in the training cache.
    #[arg(long)]
    pub train_index: usize,
    /// Explained class; defaults to the surrogate prediction.
    #[arg(long)]
    pub class: Option<usize>,
    #[command(flatten)]
    #[serde(flatten)]
    pub rule: RuleArgs,
    /// Output stem; writes <stem>.test.{f32,ppm,pgm} and <stem>.train.{f32,ppm,pgm}.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum RetrainArg {
    Head,
    Surrogate,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct RetrainArgs {
    /// Counterfactual model refitted on training subsets.
    #[arg(long, value_enum, default_value_t = RetrainArg::Head)]
    pub retrain: RetrainArg,
    #[arg(long, default_value_t = 1e-3)]
    pub weight_decay: f64,
    /// C of the surrogate when --retrain surrogate.
    #[arg(long = "C", default_value_t = DEFAULT_C, allow_negative_numbers = true)]
    #[serde(rename = "C")]
    pub c: f64,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(tag = "metric", rename_all = "kebab-case")]
pub enum EvalCommand {
    /// Share of top-10 attributed training points sharing the explained class.
    IdenticalClass {
        #[arg(long)]
        attr: PathBuf,
        #[arg(long)]
        train: PathBuf,
    },
    /// Share of top-10 attributed training points from the test point's subclass.
    IdenticalSubclass {
        #[arg(long)]
        attr: PathBuf,
        /// Subclass of every training point, whitespace or comma separated.
        #[arg(long)]
        train_groups: PathBuf,
        #[arg(long)]
        test_groups: PathBuf,
    },
    /// Detection of flipped labels by DualDA self-influence.
    Mislabel {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        train: PathBuf,
        /// Indices of the mislabeled training points.
        #[arg(long)]
        poisoned: PathBuf,
    },
    /// Retrieval of shortcut-carrying training points.
    Shortcut {
        #[arg(long)]
        attr: PathBuf,
        /// Indices of the perturbed training points.
        #[arg(long)]
        perturbed: PathBuf,
    },
    /// Linear datamodeling score against retrained heads.
    Lds {
        #[arg(long)]
        attr: PathBuf,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long, default_value_t = 32)]
        subsets: usize,
        #[arg(long, default_value_t = 0.5)]
        fraction: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        #[serde(flatten)]
        retrain: RetrainArgs,
    },
    /// Test loss after retraining on the most important training points.
    Coreset(CurveArgs),
    /// Test loss after removing the most important training points.
    Pruning(CurveArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct CurveArgs {
    #[arg(long)]
    pub attr: PathBuf,
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
    /// Comma-separated fractions of the training set.
    #[arg(long, value_delimiter = ',', default_values_t = [0.1, 0.2, 0.3, 0.4, 0.5])]
    pub fractions: Vec<f64>,
    #[command(flatten)]
    #[serde(flatten)]
    pub retrain: RetrainArgs,
    /// Write the curve as CSV.
    #[arg(long)]
    pub curve_csv: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct SparsityArgs {
    #[arg(long)]
    pub attr: PathBuf,
    /// Comma-separated fractions of the training set.
    #[arg(long, value_delimiter = ',', default_values_t = [0.01, 0.02, 0.05, 0.1, 0.2, 0.5, 1.0])]
    pub grid: Vec<f64>,
    #[arg(long)]
    pub curve_csv: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct FaithfulnessArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Training cache, used to retrain the head when --head is omitted.
    #[arg(long)]
    pub train: PathBuf,
    /// Test cache; its stored logits are used as the original logits when present.
    #[arg(long)]
    pub test: PathBuf,
    #[command(flatten)]
    #[serde(flatten)]
    pub head: HeadArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct ExportHeatmapArgs {
    #[arg(long)]
    pub network: PathBuf,
    /// Input as raw little-endian f32 in the network input shape.
    #[arg(long)]
    pub input: PathBuf,
    /// Explained output; defaults to the argmax.
    #[arg(long)]
    pub class: Option<usize>,
    /// Explain the surrogate logit of this model instead of the network output.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub rule: RuleArgs,
    /// Output stem; writes <stem>.{f32,ppm,pgm}.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct SynthArgs {
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 200)]
    pub n_train: usize,
    #[arg(long, default_value_t = 20)]
    pub n_test: usize,
    #[arg(long, default_value_t = 3)]
    pub classes: usize,
    /// Feature dimension of blob data.
    #[arg(long, default_value_t = 8)]
    pub dim: usize,
    #[arg(long, default_value_t = 4.0)]
    pub separation: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Generate 1 x 8 x 8 images and a small conv net; caches hold its features.
    #[arg(long)]
    pub images: bool,
}
