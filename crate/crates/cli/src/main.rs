//! `docnav`: synthetic corpora, episode runs, evaluation and training-side
//! utilities for the document-navigation harness.

mod commands;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "docnav", version, about = "Closed-loop harness for multi-page document QA agents")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a seeded synthetic corpus with planted evidence.
    Synth(SynthArgs),
    /// Render the thumbnail overview of one document.
    Overview(OverviewArgs),
    /// Run one episode per QA item and write trajectories.
    Run(RunArgs),
    /// Score trajectories: report.json and predictions.jsonl.
    Eval(EvalArgs),
    /// Split trajectories into kept and rejected sets for fine-tuning.
    Filter(FilterArgs),
    /// Group-normalized advantages and clipped objective for groups JSONL.
    Grpo(GrpoArgs),
    /// Pretty-print one trajectory.
    Inspect(InspectArgs),
}

/// Harness settings shared by commands; each flag overrides the config file.
#[derive(Args, Debug, Clone, Default)]
pub struct ConfigArgs {
    /// JSON file with harness settings; missing fields take built-in defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Turn budget T.
    #[arg(long = "max-steps", alias = "max-turns")]
    pub max_steps: Option<usize>,
    /// Pages per overview composite (G).
    #[arg(long)]
    pub group_capacity: Option<usize>,
    /// Header band height in pixels (h).
    #[arg(long)]
    pub header_height: Option<u32>,
    /// Reward weights as `ans,evi,fmt`.
    #[arg(long)]
    pub weights: Option<String>,
    /// ANLS threshold of the answer reward.
    #[arg(long)]
    pub answer_threshold: Option<f64>,
    /// ANLS threshold of the trajectory filter.
    #[arg(long)]
    pub filter_anls_threshold: Option<f64>,
    /// Clip range of the GRPO objective.
    #[arg(long)]
    pub clip_range: Option<f64>,
    /// Smoothing constant for F-score and advantage denominators.
    #[arg(long)]
    pub epsilon: Option<f64>,
}

#[derive(Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 20)]
    pub docs: usize,
    /// Pages per document (lower bound when --pages-max is larger).
    #[arg(long, default_value_t = 12)]
    pub pages: usize,
    #[arg(long)]
    pub pages_max: Option<usize>,
    /// QA items per document.
    #[arg(long, default_value_t = 4)]
    pub facts: usize,
    #[arg(long, default_value_t = 0.25)]
    pub multi_hop: f64,
    #[arg(long, default_value_t = 0.25)]
    pub unanswerable: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1024)]
    pub width: u32,
    #[arg(long, default_value_t = 768)]
    pub height: u32,
}

#[derive(Args)]
pub struct OverviewArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub doc: String,
    /// Directory for `overview_<k>.png`.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Args)]
pub struct RunArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// oracle | greedy | always-retrieve | random[:<seed>] | bridge:cmd:<command> | bridge:tcp:<addr>
    #[arg(long, default_value = "oracle")]
    pub agent: String,
    /// bm25 | oracle | noisy:<p>:<seed>[:<base>] | bridge:<addr>
    #[arg(long, default_value = "bm25")]
    pub retriever: String,
    /// Trajectory JSONL; the resolved settings go to `<out>.config.json`.
    #[arg(long)]
    pub out: PathBuf,
    /// Parallel episodes. Output order always follows the QA file.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Run only the first N QA items.
    #[arg(long)]
    pub limit: Option<usize>,
    /// Run only these QA ids (comma-separated).
    #[arg(long, value_delimiter = ',')]
    pub qa_ids: Vec<String>,
    /// How bridge agents receive images: path | b64.
    #[arg(long, default_value = "path")]
    pub image_mode: String,
    /// Where bridge images are written in path mode (default: next to --out).
    #[arg(long)]
    pub image_dir: Option<PathBuf>,
    /// Per-reply timeout for bridges, in seconds.
    #[arg(long, default_value_t = 60.0)]
    pub timeout: f64,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub trajectories: PathBuf,
    /// Directory for report.json and predictions.jsonl.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Args)]
pub struct FilterArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub trajectories: PathBuf,
    #[arg(long)]
    pub kept: PathBuf,
    #[arg(long)]
    pub rejected: PathBuf,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Args)]
pub struct GrpoArgs {
    /// Lines of `{group_id, rewards: [..], tokens: {logp_new, logp_old, mask}}`.
    #[arg(long)]
    pub groups: PathBuf,
    /// Output JSONL (default: stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Args)]
pub struct InspectArgs {
    #[arg(long)]
    pub trajectories: PathBuf,
    /// Trajectory to show by QA id.
    #[arg(long)]
    pub qa_id: Option<String>,
    /// Trajectory to show by 0-based line position.
    #[arg(long, default_value_t = 0)]
    pub index: usize,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Overview(a) => commands::overview(a),
        Command::Run(a) => commands::run(a),
        Command::Eval(a) => commands::eval(a),
        Command::Filter(a) => commands::filter(a),
        Command::Grpo(a) => commands::grpo(a),
        Command::Inspect(a) => commands::inspect(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
