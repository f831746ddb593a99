use std::path::PathBuf;

use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};

/// Part-by-part mesh generation from point clouds.
#[derive(Debug, Parser)]
#[command(name = "meshrag", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Split a point cloud into parts.
    Segment(SegmentArgs),
    /// Generate a mesh part by part and assemble it.
    Generate(GenerateArgs),
    /// Add the parts of an edited point cloud to an existing mesh.
    Edit(EditArgs),
    /// Compare predicted meshes with ground truth.
    Eval(EvalArgs),
    /// Segment, generate and assemble in one run, optionally scoring the result.
    Run(RunArgs),
    /// Serve ground-truth parts as a deterministic generator backend.
    MockBackend(MockBackendArgs),
}

#[derive(Debug, Args, Default)]
pub struct CommonArgs {
    /// JSON configuration file; flags take precedence over its values.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Root seed; per-part seeds are derived from it.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args, Default)]
pub struct SegmentationArgs {
    /// Number of farthest-point prompts.
    #[arg(long)]
    pub n_prompts: Option<usize>,
    /// Mask IoU threshold for clustering.
    #[arg(long)]
    pub tau_nms: Option<f64>,
    /// Oriented-box IoU threshold for merging clusters.
    #[arg(long)]
    pub tau_merge: Option<f64>,
    /// Unassigned fraction above which a discarded mask is reinstated.
    #[arg(long)]
    pub tau_recover: Option<f64>,
    /// Ask the backend for masks instead of the built-in segmenter.
    #[arg(long)]
    pub remote_segmenter: bool,
}

#[derive(Debug, Args, Default)]
pub struct IcpArgs {
    /// Maximum ICP iterations per round.
    #[arg(long)]
    pub icp_iterations: Option<usize>,
    /// Correspondences farther apart than this are ignored.
    #[arg(long)]
    pub icp_max_distance: Option<f64>,
    /// Surface samples drawn from each generated part.
    #[arg(long)]
    pub icp_samples: Option<usize>,
    /// Box re-fit rounds after the first ICP pass.
    #[arg(long)]
    pub refinement_rounds: Option<usize>,
}

#[derive(Debug, Args, Default)]
pub struct BackendArgs {
    /// Generator backend URL (falls back to MESHRAG_BACKEND_URL).
    #[arg(long, value_name = "URL", conflicts_with = "backend_cmd")]
    pub backend: Option<String>,
    /// Generator backend command speaking NDJSON on stdin/stdout.
    #[arg(long, value_name = "COMMAND", value_parser = parse_command)]
    pub backend_cmd: Option<CommandWords>,
    /// Parts dispatched concurrently.
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Per-request backend timeout in seconds.
    #[arg(long, value_name = "SECS")]
    pub timeout: Option<f64>,
}

/// A shell-style command line split into program and arguments.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommandWords(pub Vec<String>);

fn parse_command(s: &str) -> Result<CommandWords, String> {
    match shlex::split(s) {
        Some(words) if !words.is_empty() => Ok(CommandWords(words)),
        _ => Err(format!("cannot split command {s:?}")),
    }
}

#[derive(Debug, Args)]
pub struct SegmentArgs {
    /// Point cloud with normals (PLY).
    pub input: PathBuf,
    /// Labels JSON output.
    #[arg(short, long)]
    pub output: PathBuf,
    /// Part-colored PLY output; defaults to the labels path with a .ply extension.
    #[arg(long)]
    pub colored: Option<PathBuf>,
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub segmentation: SegmentationArgs,
    #[command(flatten)]
    pub backend: BackendArgs,
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("parts").required(true).args(["labels", "auto_segment"])))]
pub struct GenerateArgs {
    /// Point cloud with normals (PLY).
    pub input: PathBuf,
    /// Part labels: JSON, or a PLY with a part_id property.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Segment the cloud first.
    #[arg(long)]
    pub auto_segment: bool,
    /// Assembled mesh output (OBJ).
    #[arg(short, long)]
    pub output: PathBuf,
    /// Pipeline report JSON output.
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub segmentation: SegmentationArgs,
    #[command(flatten)]
    pub icp: IcpArgs,
    #[command(flatten)]
    pub backend: BackendArgs,
}

#[derive(Debug, Args)]
pub struct EditArgs {
    /// Mesh to extend (OBJ or PLY).
    pub initial: PathBuf,
    /// Edited point cloud with normals (PLY).
    pub edited: PathBuf,
    /// Merged mesh output (OBJ).
    #[arg(short, long)]
    pub output: PathBuf,
    /// Edit report JSON output.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Distance beyond which edited points count as new geometry
    /// (default: 2% of the edited cloud's bounding-box diagonal).
    #[arg(long)]
    pub residual_threshold: Option<f64>,
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub segmentation: SegmentationArgs,
    #[command(flatten)]
    pub icp: IcpArgs,
    #[command(flatten)]
    pub backend: BackendArgs,
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("inputs").required(true).args(["pred", "pred_dir"])))]
pub struct EvalArgs {
    /// Predicted mesh.
    #[arg(requires = "gt")]
    pub pred: Option<PathBuf>,
    /// Ground-truth mesh.
    pub gt: Option<PathBuf>,
    /// Directory of predicted meshes, paired with --gt-dir by file stem.
    #[arg(long, requires = "gt_dir", conflicts_with = "pred")]
    pub pred_dir: Option<PathBuf>,
    /// Directory of ground-truth meshes.
    #[arg(long)]
    pub gt_dir: Option<PathBuf>,
    /// CSV output; written to stdout when neither --csv nor --json is given.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// JSON output with per-object rows and the aggregate.
    #[arg(long)]
    pub json: Option<PathBuf>,
    /// JSON object mapping object names to generation times in seconds.
    #[arg(long)]
    pub times: Option<PathBuf>,
    /// Surface samples per mesh.
    #[arg(long)]
    pub samples: Option<usize>,
    /// F-score distance threshold.
    #[arg(long)]
    pub tau_f1: Option<f64>,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Point cloud with normals (PLY).
    pub input: PathBuf,
    /// Assembled mesh output (OBJ).
    #[arg(short, long)]
    pub output: PathBuf,
    /// Pipeline report JSON output.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Ground-truth mesh to score the result against.
    #[arg(long)]
    pub gt: Option<PathBuf>,
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub segmentation: SegmentationArgs,
    #[command(flatten)]
    pub icp: IcpArgs,
    #[command(flatten)]
    pub backend: BackendArgs,
}

#[derive(Debug, Clone, Copy, Default, ValueEnum)]
pub enum MatchArg {
    /// Part id k returns the k-th library mesh.
    #[default]
    ById,
    /// Return the library mesh whose shape best fits the prompt.
    ByShape,
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("transport").required(true).args(["listen", "stdio"])))]
pub struct MockBackendArgs {
    /// Library meshes; the k-th file answers part id k.
    #[arg(required = true)]
    pub parts: Vec<PathBuf>,
    /// Serve HTTP on this address (port 0 picks a free port).
    #[arg(long, value_name = "ADDR")]
    pub listen: Option<String>,
    /// Serve NDJSON on stdin/stdout.
    #[arg(long)]
    pub stdio: bool,
    #[arg(long = "match", value_enum, default_value_t)]
    pub match_mode: MatchArg,
    /// Perturb answers with a small seeded rotation and vertex noise.
    #[arg(long)]
    pub jitter: bool,
    /// Fixed delay per request in milliseconds.
    #[arg(long, default_value_t = 0)]
    pub latency_ms: u64,
    /// Part ids that always fail.
    #[arg(long = "fail", value_name = "PART_ID")]
    pub failures: Vec<u32>,
}
