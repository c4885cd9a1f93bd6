//! `semprune` command-line interface.
//!
//! Exit codes: 0 success, 2 input or domain error, 3 unreachable sweep
//! target. Failures print `error: stage=<stage>: <message>` on stderr.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::kmeans::{self, KMeansConfig, KSpec};
use crate::metrics::{self, RetentionRatio};
use crate::prune::{self, PruneConfig, SweepStatus, DEFAULT_EPSILON};
use crate::store;
use crate::synth::{self, SynthSpec};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_UNREACHABLE: i32 = 3;

pub const MANIFEST_FILE: &str = "prune_manifest.json";
pub const KEEP_LIST_FILE: &str = "keep_list.txt";
pub const CLUSTERS_FILE: &str = "clusters.json";
pub const CENTROIDS_FILE: &str = "centroids.emb";
pub const RESOLVED_CONFIG_FILE: &str = "resolved_config.json";
pub const SYNTH_EMB_FILE: &str = "embeddings.emb";
pub const SYNTH_ITEMS_FILE: &str = "items.jsonl";
pub const SYNTH_TRUTH_FILE: &str = "ground_truth.json";

#[derive(Debug, Parser)]
#[command(name = "semprune", version, about = "Embedding-space dataset pruning and data-efficiency scoring")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Cluster, drop outliers and semantic duplicates at a fixed eta.
    Prune(PruneArgs),
    /// Search eta for a target retention ratio.
    Sweep(SweepArgs),
    /// Random-subset baseline at a given retention ratio.
    Random(RandomArgs),
    /// DEL / NormDEL for a downstream mIoU and retention ratio.
    Score(ScoreArgs),
    /// Equal-compute epoch budget for a retention ratio.
    Budget(BudgetArgs),
    /// GPU-hour and storage savings for a frame volume.
    Savings(SavingsArgs),
    /// Write a synthetic dataset with planted duplicates and outliers.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct InputArgs {
    /// Embedding file (.emb).
    #[arg(long)]
    pub emb: PathBuf,
    /// Item manifest (JSON lines).
    #[arg(long)]
    pub items: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ClusterArgs {
    /// Cluster count or `auto` (round(sqrt(n/2))).
    #[arg(long, default_value = "auto")]
    pub k: KSpec,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 100)]
    pub kmeans_max_iters: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub rel_tol: f64,
}

impl ClusterArgs {
    fn config(&self) -> KMeansConfig {
        KMeansConfig {
            k: self.k,
            max_iters: self.kmeans_max_iters,
            rel_tol: self.rel_tol,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Args)]
pub struct PruneArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    pub epsilon: f64,
    #[arg(long, allow_hyphen_values = true)]
    pub eta: f64,
    #[arg(long, default_value_t = 1)]
    pub max_iterations: usize,
    #[command(flatten)]
    pub cluster: ClusterArgs,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    pub epsilon: f64,
    #[arg(long)]
    pub target_ratio: f64,
    #[arg(long, default_value_t = 0.01)]
    pub tol: f64,
    #[command(flatten)]
    pub cluster: ClusterArgs,
}

#[derive(Debug, Args)]
pub struct RandomArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long)]
    pub ratio: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    /// Downstream mIoU as a fraction in [0, 1].
    #[arg(long)]
    pub miou: f64,
    /// Retention ratio in [0, 1].
    #[arg(long)]
    pub ratio: f64,
    #[arg(long, default_value_t = metrics::DEFAULT_ALPHA)]
    pub alpha: f64,
}

#[derive(Debug, Args)]
pub struct BudgetArgs {
    #[arg(long, default_value_t = metrics::DEFAULT_BASE_EPOCHS)]
    pub base_epochs: u64,
    /// Exact ratio such as `1/3`, or a decimal.
    #[arg(long)]
    pub ratio: String,
}

#[derive(Debug, Args)]
pub struct SavingsArgs {
    #[arg(long)]
    pub frames: u64,
    #[arg(long)]
    pub fps: f64,
    #[arg(long, default_value_t = 1920)]
    pub width: u64,
    #[arg(long, default_value_t = 1080)]
    pub height: u64,
    #[arg(long, default_value_t = 3)]
    pub bpp: u64,
    /// Fraction of the data kept, exact ratio or decimal.
    #[arg(long, default_value = "1")]
    pub retained: String,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// JSON synthesis spec; omitted fields take defaults.
    #[arg(long)]
    pub spec: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

/// An error tagged with the pipeline stage that produced it.
struct StageError {
    stage: &'static str,
    error: Error,
}

trait AtStage<T> {
    fn at(self, stage: &'static str) -> std::result::Result<T, StageError>;
}

impl<T> AtStage<T> for Result<T> {
    fn at(self, stage: &'static str) -> std::result::Result<T, StageError> {
        self.map_err(|error| StageError { stage, error })
    }
}

type StageResult = std::result::Result<i32, StageError>;

/// Parses arguments and runs the command, returning the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
        }
    };
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    execute(&cli, &mut stdout.lock(), &mut stderr.lock())
}

/// Runs a parsed command, writing reports to `out` and diagnostics to `err`.
pub fn execute(cli: &Cli, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let result = match &cli.command {
        Command::Prune(a) => cmd_prune(a, out),
        Command::Sweep(a) => cmd_sweep(a, out, err),
        Command::Random(a) => cmd_random(a, out),
        Command::Score(a) => cmd_score(a, out),
        Command::Budget(a) => cmd_budget(a, out),
        Command::Savings(a) => cmd_savings(a, out),
        Command::Synth(a) => cmd_synth(a, out),
    };
    match result {
        Ok(code) => code,
        Err(StageError { stage, error }) => {
            let _ = writeln!(err, "error: stage={stage}: {error}");
            EXIT_INPUT
        }
    }
}

fn print_json<T: Serialize>(out: &mut dyn Write, value: &T) -> Result<()> {
    serde_json::to_writer(&mut *out, value)?;
    writeln!(out).map_err(|e| Error::io("<stdout>", e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn prepare_out(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

#[derive(Serialize)]
struct ResolvedInputs<'a> {
    emb: &'a Path,
    items: &'a Path,
    out: &'a Path,
}

impl<'a> From<&'a InputArgs> for ResolvedInputs<'a> {
    fn from(a: &'a InputArgs) -> Self {
        ResolvedInputs {
            emb: &a.emb,
            items: &a.items,
            out: &a.out,
        }
    }
}

fn load_and_cluster(
    input: &InputArgs,
    kcfg: &KMeansConfig,
) -> std::result::Result<(store::EmbeddingMatrix, store::ItemManifest, kmeans::ClusterModel), StageError> {
    let (matrix, items) = store::load(&input.emb, &input.items, true).at("load")?;
    let model = kmeans::fit(&matrix, kcfg).at("cluster")?;
    Ok((matrix, items, model))
}

fn write_cluster_outputs(dir: &Path, model: &kmeans::ClusterModel) -> Result<()> {
    model.dump(&dir.join(CLUSTERS_FILE), &dir.join(CENTROIDS_FILE))
}

fn write_manifest_outputs(dir: &Path, manifest: &prune::PruneManifest) -> Result<()> {
    manifest.save_json(&dir.join(MANIFEST_FILE))?;
    manifest.save_keep_list(&dir.join(KEEP_LIST_FILE))
}

fn cmd_prune(a: &PruneArgs, out: &mut dyn Write) -> StageResult {
    let kcfg = a.cluster.config();
    let config = PruneConfig {
        epsilon: a.epsilon,
        eta: a.eta,
        max_iterations: a.max_iterations,
        kmeans: kcfg.clone(),
    };
    config.validate().at("config")?;
    let (matrix, items, model) = load_and_cluster(&a.input, &kcfg)?;
    let manifest = prune::prune(&matrix, &items, &model, &config).at("prune")?;

    prepare_out(&a.input.out).at("write")?;
    #[derive(Serialize)]
    struct Resolved<'a> {
        command: &'static str,
        inputs: ResolvedInputs<'a>,
        config: &'a PruneConfig,
        resolved_k: usize,
    }
    write_json(
        &a.input.out.join(RESOLVED_CONFIG_FILE),
        &Resolved {
            command: "prune",
            inputs: (&a.input).into(),
            config: &config,
            resolved_k: model.k,
        },
    )
    .at("write")?;
    write_cluster_outputs(&a.input.out, &model).at("write")?;
    write_manifest_outputs(&a.input.out, &manifest).at("write")?;

    #[derive(Serialize)]
    struct Summary {
        n: usize,
        retained: usize,
        retention_ratio: f64,
        outliers: usize,
        duplicates: usize,
        k: usize,
    }
    print_json(
        out,
        &Summary {
            n: manifest.decisions.len(),
            retained: manifest.retained,
            retention_ratio: manifest.retention_ratio,
            outliers: manifest.count(prune::Status::Outlier),
            duplicates: manifest.count(prune::Status::Duplicate),
            k: model.k,
        },
    )
    .at("write")?;
    Ok(EXIT_OK)
}

fn cmd_sweep(a: &SweepArgs, out: &mut dyn Write, err: &mut dyn Write) -> StageResult {
    let kcfg = a.cluster.config();
    let base = PruneConfig {
        epsilon: a.epsilon,
        eta: 1.0,
        max_iterations: 1,
        kmeans: kcfg.clone(),
    };
    base.validate().at("config")?;
    if !(a.target_ratio > 0.0 && a.target_ratio <= 1.0) || a.tol.is_nan() || a.tol <= 0.0 {
        return Err(StageError {
            stage: "config",
            error: Error::Domain(format!(
                "target ratio must be in (0, 1] and tol > 0, got {} and {}",
                a.target_ratio, a.tol
            )),
        });
    }
    let (matrix, items, model) = load_and_cluster(&a.input, &kcfg)?;
    let outcome =
        prune::sweep_eta(&matrix, &items, &model, &base, a.target_ratio, a.tol).at("sweep")?;

    prepare_out(&a.input.out).at("write")?;
    #[derive(Serialize)]
    struct Resolved<'a> {
        command: &'static str,
        inputs: ResolvedInputs<'a>,
        epsilon: f64,
        target_ratio: f64,
        tol: f64,
        kmeans: &'a KMeansConfig,
        resolved_k: usize,
    }
    write_json(
        &a.input.out.join(RESOLVED_CONFIG_FILE),
        &Resolved {
            command: "sweep",
            inputs: (&a.input).into(),
            epsilon: a.epsilon,
            target_ratio: a.target_ratio,
            tol: a.tol,
            kmeans: &kcfg,
            resolved_k: model.k,
        },
    )
    .at("write")?;
    write_cluster_outputs(&a.input.out, &model).at("write")?;
    write_manifest_outputs(&a.input.out, &outcome.manifest).at("write")?;

    #[derive(Serialize)]
    struct Summary {
        eta: f64,
        achieved: f64,
        target_ratio: f64,
        steps: usize,
        floor: f64,
        ceiling: f64,
        retained: usize,
        #[serde(flatten)]
        status: SweepStatus,
    }
    print_json(
        out,
        &Summary {
            eta: outcome.eta,
            achieved: outcome.achieved,
            target_ratio: a.target_ratio,
            steps: outcome.steps,
            floor: outcome.floor,
            ceiling: outcome.ceiling,
            retained: outcome.manifest.retained,
            status: outcome.status,
        },
    )
    .at("write")?;

    match outcome.status {
        SweepStatus::Converged => Ok(EXIT_OK),
        SweepStatus::Approximate => {
            let _ = writeln!(
                err,
                "warning: target {} not reached within {}; closest retention {} at eta {}",
                a.target_ratio, a.tol, outcome.achieved, outcome.eta
            );
            Ok(EXIT_OK)
        }
        SweepStatus::Unreachable { floor } => {
            let _ = writeln!(
                err,
                "error: stage=sweep: target {} unreachable, floor retention is {floor}",
                a.target_ratio
            );
            Ok(EXIT_UNREACHABLE)
        }
    }
}

fn cmd_random(a: &RandomArgs, out: &mut dyn Write) -> StageResult {
    let (matrix, items) = store::load(&a.input.emb, &a.input.items, false).at("load")?;
    let manifest = prune::prune_random(&matrix, &items, a.ratio, a.seed).at("prune")?;
    prepare_out(&a.input.out).at("write")?;
    #[derive(Serialize)]
    struct Resolved<'a> {
        command: &'static str,
        inputs: ResolvedInputs<'a>,
        ratio: f64,
        seed: u64,
    }
    write_json(
        &a.input.out.join(RESOLVED_CONFIG_FILE),
        &Resolved {
            command: "random",
            inputs: (&a.input).into(),
            ratio: a.ratio,
            seed: a.seed,
        },
    )
    .at("write")?;
    write_manifest_outputs(&a.input.out, &manifest).at("write")?;
    #[derive(Serialize)]
    struct Summary {
        n: usize,
        retained: usize,
        retention_ratio: f64,
    }
    print_json(
        out,
        &Summary {
            n: manifest.decisions.len(),
            retained: manifest.retained,
            retention_ratio: manifest.retention_ratio,
        },
    )
    .at("write")?;
    Ok(EXIT_OK)
}

fn cmd_score(a: &ScoreArgs, out: &mut dyn Write) -> StageResult {
    let score = metrics::del_score(a.miou, a.ratio, a.alpha).at("score")?;
    print_json(out, &score.report()).at("write")?;
    Ok(EXIT_OK)
}

fn cmd_budget(a: &BudgetArgs, out: &mut dyn Write) -> StageResult {
    let ratio: RetentionRatio = a.ratio.parse().at("budget")?;
    let budget = metrics::compute_budget(a.base_epochs, ratio).at("budget")?;
    print_json(out, &budget).at("write")?;
    Ok(EXIT_OK)
}

fn cmd_savings(a: &SavingsArgs, out: &mut dyn Write) -> StageResult {
    let retained: RetentionRatio = a.retained.parse().at("savings")?;
    let report = metrics::savings(a.frames, a.fps, a.width, a.height, a.bpp, retained).at("savings")?;
    print_json(out, &report).at("write")?;
    Ok(EXIT_OK)
}

fn cmd_synth(a: &SynthArgs, out: &mut dyn Write) -> StageResult {
    let bytes = std::fs::read(&a.spec).map_err(|e| Error::io(&a.spec, e)).at("load")?;
    let spec: SynthSpec = serde_json::from_slice(&bytes).map_err(Error::from).at("load")?;
    let (matrix, items, truth) = synth::synthesize(&spec).at("synth")?;
    prepare_out(&a.out).at("write")?;
    store::save(&matrix, &items, &a.out.join(SYNTH_EMB_FILE), &a.out.join(SYNTH_ITEMS_FILE))
        .at("write")?;
    write_json(&a.out.join(SYNTH_TRUTH_FILE), &truth).at("write")?;
    write_json(&a.out.join(RESOLVED_CONFIG_FILE), &spec).at("write")?;
    #[derive(Serialize)]
    struct Summary {
        n: usize,
        d: usize,
        duplicate_groups: usize,
        outliers: usize,
    }
    print_json(
        out,
        &Summary {
            n: matrix.n(),
            d: matrix.d(),
            duplicate_groups: truth.duplicate_groups.len(),
            outliers: truth.outliers.len(),
        },
    )
    .at("write")?;
    Ok(EXIT_OK)
}
