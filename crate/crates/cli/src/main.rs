mod commands;
mod config;
mod metadata;
mod setup;

use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use searchdet::ErrorKind;

use config::ConfigArgs;

/// Training-free open-vocabulary detection from web-retrieved exemplars.
#[derive(Debug, Parser)]
#[command(name = "searchdet", version)]
struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fetch exemplars for a label and pin them in a manifest.
    Retrieve(RetrieveArgs),
    /// Detect one label in one image.
    Detect(DetectArgs),
    /// Run every category of a COCO-format dataset and score it.
    Eval(EvalArgs),
    /// Compare the full method against its ablations.
    Ablate(AblateArgs),
    /// mAP as a function of exemplar count.
    Stability(StabilityArgs),
    /// Inspect or clear the exemplar cache.
    Cache(CacheArgs),
    /// Write a synthetic benchmark with fixture backends to disk.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct RetrieveArgs {
    #[arg(long)]
    pub label: String,
    /// Extra words appended to the search text.
    #[arg(long)]
    pub context_hint: Option<String>,
    /// Manifest file to write (default: <out-dir>/manifests/<label>.json).
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long, default_value = "searchdet-out")]
    pub out_dir: PathBuf,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    #[arg(long)]
    pub label: String,
    #[arg(long)]
    pub image: PathBuf,
    /// Extra words appended to the search text.
    #[arg(long)]
    pub context_hint: Option<String>,
    /// Replay exemplars from this manifest (written here after a fresh fetch).
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Also write a heatmap and box overlay image.
    #[arg(long)]
    pub overlay: bool,
    #[arg(long, default_value = "searchdet-out")]
    pub out_dir: PathBuf,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Clone, Args)]
pub struct DatasetArgs {
    /// COCO-format annotation file.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Image directory (default: `images/` next to the annotation file).
    #[arg(long)]
    pub images: Option<PathBuf>,
    /// One manifest per label (default: <out-dir>/manifests).
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// JSON object of category name to search hint; the key `*` applies to
    /// categories without their own entry.
    #[arg(long)]
    pub context_hints: Option<PathBuf>,
    /// Query only the categories annotated on each image.
    #[arg(long)]
    pub present_only: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub data: DatasetArgs,
    /// Run each listed ablation instead of a single evaluation (`all` for every one).
    #[arg(long, value_name = "LIST")]
    pub ablate: Option<String>,
    #[arg(long, default_value = "searchdet-out")]
    pub out_dir: PathBuf,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub data: DatasetArgs,
    /// Comma-separated ablations, or `all`.
    #[arg(long, default_value = "all")]
    pub ablate: String,
    /// Use freshly generated synthetic benchmarks instead of a dataset.
    #[arg(long)]
    pub synthetic: bool,
    /// Synthetic seeds, starting at --seed.
    #[arg(long, default_value_t = 20)]
    pub repeats: u64,
    #[arg(long, default_value = "searchdet-out")]
    pub out_dir: PathBuf,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct StabilityArgs {
    #[command(flatten)]
    pub data: DatasetArgs,
    /// Largest exemplar count; every count from 1 is evaluated.
    #[arg(long, default_value_t = 10)]
    pub max_count: usize,
    #[arg(long)]
    pub synthetic: bool,
    #[arg(long, default_value_t = 20)]
    pub repeats: u64,
    #[arg(long, default_value = "searchdet-out")]
    pub out_dir: PathBuf,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct CacheArgs {
    #[arg(value_enum)]
    pub action: CacheAction,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum CacheAction {
    /// List cached queries.
    Inspect,
    /// Delete every cached query, negative answer and embedding.
    Clear,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value = "searchdet-synth")]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Scenes containing the object, per class.
    #[arg(long, default_value_t = 6)]
    pub present: usize,
    /// Scenes with only a lookalike, per class.
    #[arg(long, default_value_t = 3)]
    pub lookalike: usize,
    /// Exemplars generated per class and polarity.
    #[arg(long, default_value_t = 10)]
    pub exemplars: usize,
}

/// Raised when Ctrl-C cut a run short after its partial outputs were written.
#[derive(Debug)]
pub struct Interrupted;

impl std::fmt::Display for Interrupted {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("interrupted; partial results were written and marked incomplete")
    }
}

impl std::error::Error for Interrupted {}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<Interrupted>().is_some() {
        return 130;
    }
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<searchdet::Error>() {
            return match e.kind() {
                ErrorKind::Config => 2,
                ErrorKind::Retrieval => 3,
                ErrorKind::Backend => 4,
                ErrorKind::Evaluation => 5,
                _ => 1,
            };
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let interrupt = Arc::new(AtomicBool::new(false));
    let flag = interrupt.clone();
    if let Err(e) = ctrlc::set_handler(move || {
        if flag.swap(true, Ordering::SeqCst) {
            std::process::exit(130);
        }
        eprintln!("interrupt received; finishing in-flight images (press again to abort)");
    }) {
        log::warn!("cannot install Ctrl-C handler: {e}");
    }

    let result = match cli.command {
        Command::Retrieve(a) => commands::retrieve(&a),
        Command::Detect(a) => commands::detect(&a),
        Command::Eval(a) => commands::eval(&a, &interrupt),
        Command::Ablate(a) => commands::ablate(&a, &interrupt),
        Command::Stability(a) => commands::stability(&a, &interrupt),
        Command::Cache(a) => commands::cache(&a),
        Command::Synth(a) => commands::synth(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn exit_codes_follow_error_kind() {
        let code = |e: searchdet::Error| exit_code(&anyhow::Error::new(e));
        assert_eq!(code(searchdet::Error::Config("x".into())), 2);
        assert_eq!(code(searchdet::Error::Retrieval("x".into())), 3);
        assert_eq!(code(searchdet::Error::EmptyResult { query: "x".into() }), 3);
        assert_eq!(code(searchdet::Error::Backend("x".into())), 4);
        assert_eq!(code(searchdet::Error::Validation(vec!["x".into()])), 5);
        assert_eq!(code(searchdet::Error::Backend("x".into()).at_stage("embed")), 4);
        assert_eq!(code(searchdet::Error::Input("x".into())), 1);
        assert_eq!(exit_code(&anyhow::Error::new(Interrupted)), 130);
        let wrapped = anyhow::Error::new(searchdet::Error::Config("x".into())).context("loading");
        assert_eq!(exit_code(&wrapped), 2);
    }
}
