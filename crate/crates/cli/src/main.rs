//! `ksalsa` command-line interface.
//!
//! Exit codes: 0 success, 1 usage error, 2 runtime error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use ksalsa::alignment::AlignmentMode;
use ksalsa::clustering::LeftoverPolicy;
use ksalsa::config::{Augmentation, LambdaSetting, Method, RunConfig};
use ksalsa::evaluation::{
    image_frechet, mia_instance, mia_topk_accuracy, split_members, CosineScorer, EvaluationReport, ReportSeeds,
};
use ksalsa::exec::{with_jobs, Execution};
use ksalsa::latent::LatentCode;
use ksalsa::numerics::{finite_diff_gradient, relative_l2_error, Rng};
use ksalsa::objective::{ClusterObjective, LambdaSchedule, Models};
use ksalsa::pipeline::release::{
    average_clusters, cluster_codes, invert_dataset, load_inversions, load_partition, obtain_codes, save_inversions,
    save_partition,
};
use ksalsa::pipeline::{run_release, LabeledDataset, Release, ReleaseOptions};
use ksalsa::synthesis::Profile;
use ksalsa::toydata::{self, ToyDataOptions};

const GRAD_CHECK_TOL: f64 = 1e-4;
const GRAD_CHECK_H: f64 = 1e-5;

#[derive(Debug, Parser)]
#[command(name = "ksalsa", version, about = "k-anonymous synthetic averaging with local style alignment")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a labeled toy dataset with planted local textures.
    GenToyData(GenArgs),
    /// Invert every record into the generator's latent space.
    Invert(StageArgs),
    /// Invert (or reuse stored codes) and partition records into clusters of exactly k.
    Cluster(StageArgs),
    /// Average the clusters stored by a previous `cluster` run and write the release.
    Average(StageArgs),
    /// Invert, cluster, average and write the release in one go.
    Release(StageArgs),
    /// Fréchet distance between pooled features of the dataset and its release.
    EvalFd(EvalArgs),
    /// Top-k membership inference against a release of a random half of the dataset.
    EvalMia(EvalArgs),
    /// Compare the analytic gradient of the total loss with central differences.
    GradCheck(GradArgs),
}

#[derive(Debug, Args)]
struct GenArgs {
    /// Output dataset directory.
    #[arg(long)]
    out: PathBuf,
    /// Number of records.
    #[arg(long, default_value_t = 60)]
    records: usize,
    /// Number of texture groups.
    #[arg(long, default_value_t = 6)]
    groups: usize,
    /// Image profile (toy-16 or toy-32).
    #[arg(long, default_value = "toy-16")]
    profile: Profile,
    /// Cells per side of the lesion layout.
    #[arg(long, default_value_t = 4)]
    grid: usize,
    /// Standard deviation of pixel noise.
    #[arg(long, default_value_t = 0.05)]
    noise: f64,
    /// Seed for groups, grades, lesion positions and noise.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// Settings that make up the run configuration. Each flag overrides the
/// value from `--config`.
#[derive(Debug, Args, Default)]
struct RunArgs {
    /// JSON run configuration; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Cluster size.
    #[arg(long)]
    k: Option<usize>,
    /// Content weight in [0, 1], or "auto" for the per-k table.
    #[arg(long)]
    lambda: Option<LambdaSetting>,
    /// Table behind --lambda auto (aptos or eyepacs).
    #[arg(long = "lambda-profile")]
    lambda_profile: Option<LambdaSchedule>,
    /// Adam iterations per cluster.
    #[arg(long = "T")]
    iterations: Option<usize>,
    /// Averaging method (ksalsa, centroid, pixel or pca).
    #[arg(long)]
    method: Option<Method>,
    /// Seed for the models, augmentation and PCA.
    #[arg(long)]
    seed: Option<u64>,
    /// Generator profile (toy-16 or toy-32).
    #[arg(long)]
    profile: Option<Profile>,
    /// Patches per side for local style features.
    #[arg(long)]
    grid: Option<usize>,
    /// Patch alignment (cosine-argmax or none).
    #[arg(long)]
    alignment: Option<AlignmentMode>,
    /// What to do with records that cannot fill a cluster (error or truncate).
    #[arg(long)]
    policy: Option<LeftoverPolicy>,
    /// Noisy latent views released per cluster.
    #[arg(long = "augment-count")]
    augment_count: Option<usize>,
    /// Standard deviation of augmentation noise (default 0.1 when a count is given).
    #[arg(long = "augment-scale")]
    augment_scale: Option<f64>,
    /// PCA rank for --method pca.
    #[arg(long = "pca-components")]
    pca_components: Option<usize>,
    /// Worker threads; 0 uses all available cores.
    #[arg(long, default_value_t = 0)]
    jobs: usize,
}

#[derive(Debug, Args)]
struct StageArgs {
    /// Dataset directory.
    #[arg(long = "in")]
    input: PathBuf,
    /// Working and release directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    run: RunArgs,
    /// Write per-cluster loss traces to traces.jsonl.
    #[arg(long)]
    trace: bool,
    /// Write final target Gram stacks as styles_XXXX.kstn.
    #[arg(long = "dump-styles")]
    dump_styles: bool,
    /// Write final patch correspondences as alignment_XXXX.json.
    #[arg(long = "dump-alignment")]
    dump_alignment: bool,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Dataset directory.
    #[arg(long = "in")]
    input: PathBuf,
    /// Report file; the report is always printed to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Debug, Args)]
struct GradArgs {
    /// Generator profile (toy-16 or toy-32).
    #[arg(long, default_value = "toy-16")]
    profile: Profile,
    /// Seed of the first instance; later instances add 1, 2, ...
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Cluster size of each instance.
    #[arg(long, default_value_t = 5)]
    k: usize,
    /// Patches per side for local style features.
    #[arg(long, default_value_t = 4)]
    grid: usize,
    /// Content weight in [0, 1], or "auto".
    #[arg(long, default_value = "auto")]
    lambda: LambdaSetting,
    /// Number of seeded instances to audit.
    #[arg(long, default_value_t = 3)]
    instances: u64,
}

/// Marks errors that should exit with the usage code.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

impl RunArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path).map_err(|e| Usage(e.to_string()))?,
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($($flag:ident => $field:ident),*) => {
                $(if let Some(v) = self.$flag { cfg.$field = v; })*
            };
        }
        set!(k => k, lambda => lambda, lambda_profile => lambda_schedule, iterations => iterations,
             method => method, seed => seed, profile => profile, grid => grid, alignment => alignment,
             policy => policy);
        if let Some(r) = self.pca_components {
            cfg.pca_components = Some(r);
        }
        match (self.augment_count, self.augment_scale) {
            (Some(count), scale) => {
                cfg.augmentation = Some(Augmentation {
                    count,
                    scale: scale.or(cfg.augmentation.map(|a| a.scale)).unwrap_or(0.1),
                })
            }
            (None, Some(scale)) => match &mut cfg.augmentation {
                Some(a) => a.scale = scale,
                None => return Err(Usage("--augment-scale needs --augment-count".into()).into()),
            },
            (None, None) => {}
        }
        cfg.validate().map_err(|e| Usage(e.to_string()))?;
        Ok(cfg)
    }
}

fn load_dataset(dir: &Path, cfg: &RunConfig) -> Result<LabeledDataset> {
    let ds = LabeledDataset::load(dir).with_context(|| format!("loading dataset from {}", dir.display()))?;
    if ds.profile != cfg.profile.to_string() {
        bail!("dataset profile {} does not match --profile {}", ds.profile, cfg.profile);
    }
    Ok(ds)
}

fn require_out(out: &Option<PathBuf>, command: &str) -> Result<PathBuf> {
    out.clone()
        .ok_or_else(|| Usage(format!("{command} needs --out")).into())
}

fn print_json(value: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(value).expect("json"));
}

fn release_summary(release: &Release, out: Option<&Path>) -> serde_json::Value {
    json!({
        "entries": release.manifest.entries.len(),
        "k": release.manifest.k,
        "method": release.manifest.method,
        "config_hash": release.manifest.config_hash,
        "dropped": release.manifest.dropped_ids.len(),
        "resumed": release.resumed,
        "out": out.map(|p| p.display().to_string()),
    })
}

fn gen_toy_data(args: &GenArgs) -> Result<()> {
    let ds = toydata::generate(&ToyDataOptions {
        profile: args.profile,
        records: args.records,
        groups: args.groups,
        grid: args.grid,
        noise: args.noise,
        seed: args.seed,
    })
    .map_err(|e| Usage(e.to_string()))?;
    ds.save(&args.out)?;
    print_json(&json!({"records": ds.len(), "profile": ds.profile, "out": args.out.display().to_string()}));
    Ok(())
}

fn invert(args: &StageArgs) -> Result<()> {
    let cfg = args.run.resolve()?;
    let out = require_out(&args.out, "invert")?;
    let ds = load_dataset(&args.input, &cfg)?;
    let models = Models::toy(cfg.seed, cfg.profile);
    let inversions = invert_dataset(&models, &ds, &cfg, Execution::Parallel)?;
    save_inversions(&out, &cfg, &ds, &inversions)?;
    let worst = inversions.iter().map(|i| i.mse).fold(0.0, f64::max);
    let mean = inversions.iter().map(|i| i.mse).sum::<f64>() / inversions.len() as f64;
    print_json(&json!({"records": inversions.len(), "mean_mse": mean, "max_mse": worst}));
    Ok(())
}

fn cluster(args: &StageArgs) -> Result<()> {
    let cfg = args.run.resolve()?;
    let ds = load_dataset(&args.input, &cfg)?;
    let models = Models::toy(cfg.seed, cfg.profile);
    let codes = obtain_codes(&models, &ds, &cfg, Execution::Parallel, args.out.as_deref())?;
    let partition = cluster_codes(&codes, &cfg, Execution::Parallel)?;
    if let Some(out) = &args.out {
        save_partition(out, &cfg, &ds, &partition)?;
    }
    print_json(&json!({
        "k": cfg.k,
        "clusters": partition.clusters.len(),
        "dropped": partition.dropped.len(),
    }));
    Ok(())
}

fn release_options(args: &StageArgs, out: Option<PathBuf>) -> ReleaseOptions {
    ReleaseOptions {
        exec: Execution::Parallel,
        out_dir: out,
        trace: args.trace,
        dump_styles: args.dump_styles,
        dump_alignment: args.dump_alignment,
    }
}

fn average(args: &StageArgs) -> Result<()> {
    let cfg = args.run.resolve()?;
    let out = require_out(&args.out, "average")?;
    let ds = load_dataset(&args.input, &cfg)?;
    let models = Models::toy(cfg.seed, cfg.profile);
    let codes: Vec<LatentCode> = load_inversions(&out, &cfg, &ds)?
        .ok_or_else(|| anyhow!("no matching inverted codes in {}; run `ksalsa invert` first", out.display()))?;
    let partition = load_partition(&out, &cfg, &ds)?
        .ok_or_else(|| anyhow!("no partition for k = {} in {}; run `ksalsa cluster` first", cfg.k, out.display()))?;
    let release = average_clusters(&models, &ds, &codes, &partition, &cfg, &release_options(args, Some(out.clone())))?;
    print_json(&release_summary(&release, Some(&out)));
    Ok(())
}

fn release(args: &StageArgs) -> Result<()> {
    let cfg = args.run.resolve()?;
    let ds = load_dataset(&args.input, &cfg)?;
    let release = run_release(&ds, &cfg, &release_options(args, args.out.clone()))?;
    print_json(&release_summary(&release, args.out.as_deref()));
    Ok(())
}

fn emit_report(report: &EvaluationReport, out: &Option<PathBuf>) -> Result<()> {
    let text = serde_json::to_string_pretty(report)?;
    println!("{text}");
    if let Some(path) = out {
        std::fs::write(path, format!("{text}\n")).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn eval_fd(args: &EvalArgs) -> Result<()> {
    let cfg = args.run.resolve()?;
    let ds = load_dataset(&args.input, &cfg)?;
    let release = run_release(&ds, &cfg, &ReleaseOptions::default())?;
    let models = Models::toy(cfg.seed, cfg.profile);
    let frechet = image_frechet(&models.extractor, &ds.images(), &release.images, Execution::Parallel)?;
    emit_report(
        &EvaluationReport {
            frechet: Some(frechet),
            mia_topk: None,
            k: cfg.k,
            method: cfg.method,
            n_clusters: release.images.len(),
            seeds: ReportSeeds {
                run: cfg.seed,
                split: None,
            },
            config_hash: cfg.hash(),
        },
        &args.out,
    )
}

fn eval_mia(args: &EvalArgs) -> Result<()> {
    let cfg = args.run.resolve()?;
    let ds = load_dataset(&args.input, &cfg)?;
    let (members, non_members) = split_members(&ds, cfg.seed)?;
    let release = run_release(&members, &cfg, &ReleaseOptions::default())?;
    let models = Models::toy(cfg.seed, cfg.profile);
    let instance = mia_instance(&members, &release, &non_members);
    let accuracy = mia_topk_accuracy(&instance, &CosineScorer::new(models.encoder.clone()), Execution::Parallel)?;
    emit_report(
        &EvaluationReport {
            frechet: None,
            mia_topk: Some(accuracy),
            k: cfg.k,
            method: cfg.method,
            n_clusters: release.images.len(),
            seeds: ReportSeeds {
                run: cfg.seed,
                split: Some(cfg.seed),
            },
            config_hash: cfg.hash(),
        },
        &args.out,
    )
}

fn grad_check(args: &GradArgs) -> Result<bool> {
    let cfg = RunConfig {
        profile: args.profile,
        k: args.k,
        grid: args.grid,
        lambda: args.lambda,
        seed: args.seed,
        ..Default::default()
    };
    cfg.validate().map_err(|e| Usage(e.to_string()))?;
    let shape = args.profile.shape();
    let mut worst: f64 = 0.0;
    for inst in 0..args.instances {
        let seed = args.seed.wrapping_add(inst);
        let models = Models::toy(seed, args.profile);
        let images = toydata::generate(&ToyDataOptions {
            profile: args.profile,
            records: args.k,
            groups: 1,
            seed,
            ..Default::default()
        })?
        .images();
        let mut rng = Rng::new(seed).split(1);
        let w0 = LatentCode::random(shape.latent_rows, shape.latent_dim, &mut rng);
        let objective = ClusterObjective::new(&models, &images, &w0, &cfg.loss_config())?;
        let w = LatentCode::random(shape.latent_rows, shape.latent_dim, &mut rng);
        let (_, analytic) = objective.gradient(&w)?;
        let numeric = finite_diff_gradient(
            |x| objective.total_loss(&LatentCode::new(x.clone())?),
            w.tensor(),
            GRAD_CHECK_H,
        )?;
        worst = worst.max(relative_l2_error(analytic.data(), numeric.data()));
    }
    let pass = worst <= GRAD_CHECK_TOL;
    println!("max relative error: {worst:.3e} ({})", if pass { "ok" } else { "FAILED" });
    Ok(pass)
}

fn run(cli: &Cli) -> Result<bool> {
    let jobs = match &cli.command {
        Command::Invert(a) | Command::Cluster(a) | Command::Average(a) | Command::Release(a) => a.run.jobs,
        Command::EvalFd(a) | Command::EvalMia(a) => a.run.jobs,
        _ => 0,
    };
    with_jobs(jobs, || {
        match &cli.command {
            Command::GenToyData(a) => gen_toy_data(a),
            Command::Invert(a) => invert(a),
            Command::Cluster(a) => cluster(a),
            Command::Average(a) => average(a),
            Command::Release(a) => release(a),
            Command::EvalFd(a) => eval_fd(a),
            Command::EvalMia(a) => eval_mia(a),
            Command::GradCheck(a) => return grad_check(a),
        }
        .map(|_| true)
    })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<Usage>().is_some() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
