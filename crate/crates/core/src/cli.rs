// SPDX-License-Identifier: MIT OR Apache-2.0

//! Command-line front end. One subcommand per pipeline stage; every stage
//! reads its inputs from disk and writes one artifact.
//!
//! Exit codes: 0 success, 1 usage, 2 data or validation, 3 numerical failure.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use crate::activation_io::{
    generate_synthetic_layers, read_activation_set, read_manifest, write_activation_set, ActivationSet, Label,
    SyntheticConfig,
};
use crate::detector::{
    calibrate_ensemble, load_detector, CleanDevSet, DetectorProfile, Histogram, LayerDetector,
    LayerEntry, PredictionsFile, DEFAULT_BINS,
};
use crate::error::{Error, Result};
use crate::eval::{compute_metrics, run_experiment, sweep, ExperimentSpec, SweepParam};
use crate::json::{read_json, write_json};
use crate::method::MethodRegistry;
use crate::ranker::{load_ranking, ranking_overlap, save_ranking, FeatureRanking};
use crate::sae::{load_model, save_model, train_with_observer, SaeModel, TrainConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "saegis", version, about = "Detect adversarial inputs from sparse autoencoder features")]
pub struct Cli {
    /// Default seed for subcommands that take one.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    /// Suppress progress output on stderr.
    #[arg(long, short, global = true)]
    pub quiet: bool,

    /// Default output path for subcommands that take one.
    #[arg(long)]
    pub out: Option<PathBuf>,

    /// Worker threads (default: available cores). Results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a planted-feature synthetic benchmark, already split for the pipeline.
    GenSynthetic(GenArgs),
    /// Train a top-k SAE on one or more activation dumps.
    Train(TrainArgs),
    /// Rank SAE features by attack relevance and keep the top K.
    SelectFeatures(SelectArgs),
    /// Fit the detection threshold on clean dev activations.
    Calibrate(CalibrateArgs),
    /// Classify activation dumps with a calibrated profile.
    Detect(DetectArgs),
    /// Score predictions against the labels stored in a dump.
    Evaluate(EvaluateArgs),
    /// Run one experiment per parameter value and write a CSV table.
    Sweep(SweepArgs),
    /// Overlap between the feature sets of several rankings.
    Overlap(OverlapArgs),
    /// Run a whole experiment spec end to end.
    Run(RunArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub dim: usize,
    #[arg(long)]
    pub clean: usize,
    #[arg(long)]
    pub adv: usize,
    #[arg(long)]
    pub dict: usize,
    #[arg(long)]
    pub planted: usize,
    #[arg(long)]
    pub strength: f64,
    #[arg(long)]
    pub noise: f64,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of capture layers; more than one writes a subdirectory per
    /// layer inside each split directory.
    #[arg(long, default_value_t = 1)]
    pub layers: usize,
    /// Seed for the planted attack atoms (default: `--seed`).
    #[arg(long)]
    pub planted_seed: Option<u64>,
    /// Token count range per sample, `MIN-MAX`.
    #[arg(long, default_value = "16-24")]
    pub tokens: String,
    /// Non-planted atoms active per token.
    #[arg(long, default_value_t = 4)]
    pub sparsity: usize,
    /// Planted atoms switched on per adversarial sample.
    #[arg(long, default_value_t = 4)]
    pub attack_atoms: usize,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Activation dump; repeat to pool several.
    #[arg(long, required = true)]
    pub acts: Vec<PathBuf>,
    #[arg(long)]
    pub d_sae: usize,
    #[arg(long)]
    pub k: usize,
    #[arg(long)]
    pub steps: usize,
    #[arg(long)]
    pub lr: f64,
    #[arg(long)]
    pub batch: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SelectArgs {
    #[arg(long)]
    pub sae: PathBuf,
    #[arg(long)]
    pub clean: PathBuf,
    #[arg(long)]
    pub adv: PathBuf,
    #[arg(long)]
    pub top_k: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    /// Clean dev dump, one per layer in `--layer` order, or one directory
    /// holding a subdirectory per layer id.
    #[arg(long, required = true)]
    pub dev: Vec<PathBuf>,
    #[arg(long)]
    pub alpha: f64,
    /// `ID:SAE:RANKING`; repeat for an ensemble.
    #[arg(long, required = true)]
    pub layer: Vec<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    #[arg(long)]
    pub profile: PathBuf,
    /// Dump to classify, one per profile layer, or one directory holding a
    /// subdirectory per layer id.
    #[arg(long, required = true)]
    pub acts: Vec<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub pred: PathBuf,
    /// Dump whose manifest holds the ground-truth labels.
    #[arg(long)]
    pub acts: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub spec: PathBuf,
    /// K, alpha, adversarial_sample_count or layer.
    #[arg(long)]
    pub param: String,
    /// Comma-separated values.
    #[arg(long)]
    pub values: String,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct OverlapArgs {
    #[arg(long, required = true)]
    pub ranking: Vec<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub spec: PathBuf,
    /// Directory for report.json, predictions.json and histogram.json.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Failures the CLI distinguishes by exit code.
#[derive(Debug)]
enum Failure {
    Usage(String),
    Run(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Run(e)
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

struct Ctx {
    seed: u64,
    quiet: bool,
    out: Option<PathBuf>,
}

impl Ctx {
    fn out(&self, local: &Option<PathBuf>) -> CliResult<PathBuf> {
        local
            .clone()
            .or_else(|| self.out.clone())
            .ok_or_else(|| Failure::Usage("--out is required".into()))
    }

    fn progress(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            eprintln!("{}", msg.as_ref());
        }
    }
}

/// Parse `args` (including the program name) and run. Returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be positive");
            return EXIT_USAGE;
        }
        // Fails only if a pool already exists, e.g. when called twice in one process.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let ctx = Ctx {
        seed: cli.seed,
        quiet: cli.quiet,
        out: cli.out,
    };
    match dispatch(&ctx, cli.command) {
        Ok(()) => EXIT_OK,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            EXIT_USAGE
        }
        Err(Failure::Run(e)) => {
            eprintln!("error: {e}");
            if e.is_numeric() {
                EXIT_NUMERIC
            } else {
                EXIT_DATA
            }
        }
    }
}

fn dispatch(ctx: &Ctx, cmd: Command) -> CliResult<()> {
    match cmd {
        Command::GenSynthetic(a) => gen_synthetic(ctx, a),
        Command::Train(a) => train(ctx, a),
        Command::SelectFeatures(a) => select_features(ctx, a),
        Command::Calibrate(a) => calibrate(ctx, a),
        Command::Detect(a) => detect(ctx, a),
        Command::Evaluate(a) => evaluate(ctx, a),
        Command::Sweep(a) => run_sweep(ctx, a),
        Command::Overlap(a) => overlap(ctx, a),
        Command::Run(a) => run_spec(ctx, a),
    }
}

fn parse_tokens(s: &str) -> CliResult<(usize, usize)> {
    let bad = || Failure::Usage(format!("--tokens expects MIN-MAX, got `{s}`"));
    match s.split_once('-') {
        Some((a, b)) => Ok((a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?)),
        None => {
            let n = s.trim().parse().map_err(|_| bad())?;
            Ok((n, n))
        }
    }
}

/// Names of the directories `gen-synthetic` writes for each layer.
pub const SPLIT_DIRS: [&str; 6] = ["train-clean", "train-adv", "dev-clean", "test-clean", "test-adv", "test"];

fn gen_synthetic(ctx: &Ctx, a: GenArgs) -> CliResult<()> {
    let out = ctx.out(&a.out)?;
    if a.layers == 0 {
        return Err(Failure::Usage("--layers must be positive".into()));
    }
    let cfg = SyntheticConfig {
        dim: a.dim,
        num_clean: a.clean,
        num_adversarial: a.adv,
        tokens_per_sample: parse_tokens(&a.tokens)?,
        dictionary_size: a.dict,
        code_sparsity: a.sparsity,
        planted_attack_atoms: a.planted,
        attack_atoms_per_sample: a.attack_atoms,
        attack_strength: a.strength,
        noise_sigma: a.noise,
        seed: a.seed.unwrap_or(ctx.seed),
        planted_seed: a.planted_seed,
    };
    let ids: Vec<String> = if a.layers == 1 {
        vec!["synthetic".to_string()]
    } else {
        (0..a.layers).map(|i| format!("layer{i}")).collect()
    };
    let id_refs: Vec<&str> = ids.iter().map(String::as_str).collect();
    let layers = generate_synthetic_layers(&cfg, &id_refs)?;
    // One layer: `<out>/<split>`. Several: `<out>/<split>/<layer id>`, the
    // layout `--dev` and `--acts` accept as a single directory.
    for (id, layer) in ids.iter().zip(&layers) {
        let s = layer.protocol_split();
        let test = s.test_clean.concat(&s.test_adversarial)?;
        let sets = [&s.train_clean, &s.train_adversarial, &s.dev_clean, &s.test_clean, &s.test_adversarial, &test];
        for (name, set) in SPLIT_DIRS.iter().zip(sets) {
            let dir = if a.layers == 1 { out.join(name) } else { out.join(name).join(id) };
            write_activation_set(set, dir)?;
        }
    }
    write_json(&out.join("config.json"), &cfg)?;
    ctx.progress(format!(
        "wrote {} clean / {} adversarial samples for {} layer(s) to {}",
        cfg.num_clean,
        cfg.num_adversarial,
        ids.len(),
        out.display()
    ));
    Ok(())
}

fn read_sets(dirs: &[PathBuf]) -> Result<Vec<ActivationSet>> {
    dirs.iter().map(read_activation_set).collect()
}

/// Sidecar path for the training report: `sae.bin` → `sae.train.json`.
pub fn train_report_path(model_path: &Path) -> PathBuf {
    model_path.with_extension("train.json")
}

fn train(ctx: &Ctx, a: TrainArgs) -> CliResult<()> {
    let out = ctx.out(&a.out)?;
    let sets = read_sets(&a.acts)?;
    let data = if sets.len() == 1 {
        sets.into_iter().next().expect("one set")
    } else {
        let refs: Vec<&ActivationSet> = sets.iter().collect();
        ActivationSet::pooled(sets[0].layer_id.clone(), &refs)?
    };
    let seed = a.seed.unwrap_or(ctx.seed);
    let cfg = TrainConfig {
        steps: a.steps,
        batch_size: a.batch,
        learning_rate: a.lr,
        seed,
        ..TrainConfig::default()
    };
    let init = SaeModel::init(data.dim(), a.d_sae, a.k, seed)?;
    let every = (cfg.steps / 10).max(1);
    let (model, report) = train_with_observer(&init, &data, &cfg, |step, _| {
        if step % every == 0 {
            ctx.progress(format!("step {step}/{}", cfg.steps));
        }
    })?;
    save_model(&model, &out)?;
    write_json(&train_report_path(&out), &report)?;
    ctx.progress(format!(
        "held-out loss {:.6} -> {:.6}, {} dead features",
        report.initial_held_out_loss, report.final_held_out_loss, report.dead_features
    ));
    Ok(())
}

fn select_features(ctx: &Ctx, a: SelectArgs) -> CliResult<()> {
    let out = ctx.out(&a.out)?;
    let model = load_model(&a.sae)?;
    let clean = read_activation_set(&a.clean)?;
    let adv = read_activation_set(&a.adv)?;
    let ranking = FeatureRanking::fit(&clean, &adv, &model, a.top_k)?;
    save_ranking(&ranking, &out)?;
    ctx.progress(format!("selected {} of {} features", ranking.k(), ranking.d_sae));
    Ok(())
}

fn parse_layer(spec: &str) -> CliResult<LayerEntry> {
    let parts: Vec<&str> = spec.splitn(3, ':').collect();
    match parts.as_slice() {
        [id, sae, ranking] if !id.is_empty() && !sae.is_empty() && !ranking.is_empty() => Ok(LayerEntry {
            layer_id: id.to_string(),
            sae_path: sae.to_string(),
            ranking_path: ranking.to_string(),
        }),
        _ => Err(Failure::Usage(format!("--layer expects ID:SAE:RANKING, got `{spec}`"))),
    }
}

/// One dump per layer: either given one-to-one, or a single directory with
/// a subdirectory per layer id. Each set takes the layer's id.
fn layer_dumps(dirs: &[PathBuf], layer_ids: &[String], flag: &str) -> CliResult<Vec<ActivationSet>> {
    let paths: Vec<PathBuf> = if dirs.len() == layer_ids.len() {
        dirs.to_vec()
    } else if dirs.len() == 1 {
        layer_ids.iter().map(|id| dirs[0].join(id)).collect()
    } else {
        return Err(Failure::Usage(format!(
            "{} {flag} directories for {} layers",
            dirs.len(),
            layer_ids.len()
        )));
    };
    let mut sets = read_sets(&paths)?;
    for (set, id) in sets.iter_mut().zip(layer_ids) {
        set.layer_id = id.clone();
    }
    Ok(sets)
}

fn calibrate(ctx: &Ctx, a: CalibrateArgs) -> CliResult<()> {
    let out = ctx.out(&a.out)?;
    let entries = a.layer.iter().map(|s| parse_layer(s)).collect::<CliResult<Vec<_>>>()?;
    let ids: Vec<String> = entries.iter().map(|e| e.layer_id.clone()).collect();
    let dev = layer_dumps(&a.dev, &ids, "--dev")?;
    let layers = entries
        .iter()
        .map(|e| {
            let model = Arc::new(load_model(&e.sae_path)?);
            let ranking = load_ranking(&e.ranking_path)?;
            LayerDetector::new(e.layer_id.clone(), model, ranking)
        })
        .collect::<Result<Vec<_>>>()?;
    let detector = calibrate_ensemble(layers, CleanDevSet::new(&dev)?, a.alpha)?;
    let profile = DetectorProfile::new(&detector, entries)?;
    profile.save(&out)?;
    ctx.progress(format!(
        "tau = {} from {} clean samples",
        profile.tau, profile.calibration_size
    ));
    Ok(())
}

fn detect(ctx: &Ctx, a: DetectArgs) -> CliResult<()> {
    let out = ctx.out(&a.out)?;
    let (profile, detector) = load_detector(&a.profile)?;
    let ids: Vec<String> = profile.layers.iter().map(|l| l.layer_id.clone()).collect();
    let sets = layer_dumps(&a.acts, &ids, "--acts")?;
    let predictions = detector.classify_sets(&sets)?;
    let scored: Vec<(f64, Label)> = predictions.iter().map(|p| (p.score, Label::Unknown)).collect();
    let file = PredictionsFile {
        tau: detector.tau,
        histogram: Histogram::build(&scored, DEFAULT_BINS)?,
        predictions,
    };
    write_json(&out, &file)?;
    let flagged = file.predictions.iter().filter(|p| p.verdict.is_adversarial()).count();
    ctx.progress(format!("{flagged} of {} samples flagged", file.predictions.len()));
    Ok(())
}

fn evaluate(ctx: &Ctx, a: EvaluateArgs) -> CliResult<()> {
    let out = ctx.out(&a.out)?;
    let preds: PredictionsFile = read_json(&a.pred)?;
    let manifest = read_manifest(&a.acts)?;
    let labels: Vec<(String, Label)> = manifest.samples.iter().map(|s| (s.id.clone(), s.label)).collect();
    let report = compute_metrics(&preds.predictions, &labels, preds.tau)?;
    write_json(&out, &report)?;
    let show = |x: Option<f64>| x.map_or("undefined".to_string(), |v| format!("{v:.1}"));
    ctx.progress(format!(
        "P {} R {} F1 {}",
        show(report.precision_1dp),
        show(report.recall_1dp),
        show(report.f1_1dp)
    ));
    Ok(())
}

fn spec_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn run_sweep(ctx: &Ctx, a: SweepArgs) -> CliResult<()> {
    let out = ctx.out(&a.out)?;
    let param: SweepParam = a.param.parse().map_err(|e: Error| Failure::Usage(e.to_string()))?;
    let values: Vec<String> = a.values.split(',').map(|v| v.trim().to_string()).filter(|v| !v.is_empty()).collect();
    if values.is_empty() {
        return Err(Failure::Usage("--values is empty".into()));
    }
    let spec = ExperimentSpec::load(&a.spec)?;
    let data = spec.load_data(&spec_dir(&a.spec))?;
    let table = sweep(&spec, &data, param, &values, &MethodRegistry::with_builtins())?;
    table.write_csv(&out)?;
    ctx.progress(format!("{} runs written to {}", table.rows.len(), out.display()));
    Ok(())
}

fn overlap(ctx: &Ctx, a: OverlapArgs) -> CliResult<()> {
    let out = ctx.out(&a.out)?;
    let rankings = a.ranking.iter().map(load_ranking).collect::<Result<Vec<_>>>()?;
    let report = ranking_overlap(&rankings)?;
    write_json(&out, &report)?;
    ctx.progress(format!("{} features shared by all rankings", report.intersection_all.len()));
    Ok(())
}

fn run_spec(ctx: &Ctx, a: RunArgs) -> CliResult<()> {
    let out = ctx.out(&a.out)?;
    let spec = ExperimentSpec::load(&a.spec)?;
    let data = spec.load_data(&spec_dir(&a.spec))?;
    let outcome = run_experiment(&spec, &data)?;
    outcome.write(&out)?;
    let show = |x: Option<f64>| x.map_or("undefined".to_string(), |v| format!("{v:.1}"));
    ctx.progress(format!(
        "{}: P {} R {} F1 {}",
        spec.name,
        show(outcome.report.precision_1dp),
        show(outcome.report.recall_1dp),
        show(outcome.report.f1_1dp)
    ));
    Ok(())
}
