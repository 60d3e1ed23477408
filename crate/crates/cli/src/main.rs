use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use abutment_core::mesh::load_mesh;
use abutment_core::model::{AbutmentNet, AbutmentParams};
use abutment_core::objectives::IouReport;
use abutment_core::remesh::RemeshConfig;
use abutment_core::synth::{
    build_dataset_with, load_manifest, manifest_checksum, write_dataset, DatasetOptions, Split,
};
use abutment_core::text::{EncodeMode, HashEncoder};
use abutment_core::trainer::{
    evaluate_checkpoint, load_sample, load_samples, make_encoder, predict_mesh, render_sweep, run_training, sweep,
    Paradigm, PromptFields, SweepKind, TrainConfig, RESOLVED_CONFIG_FILE,
};
use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

mod table;

use table::Table;

/// Abutment parameter prediction from implant-site meshes.
#[derive(Parser)]
#[command(name = "abutment", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset: one OBJ per case plus a manifest.
    Generate {
        #[arg(long, default_value_t = 100)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Train share, applied per category.
        #[arg(long, default_value_t = 0.85)]
        split: f64,
        /// Surface perturbation amplitude in millimeters.
        #[arg(long, default_value_t = 0.5)]
        noise: f64,
    },
    /// Remesh every manifest entry into the packed sample cache.
    Preprocess {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value_t = 500)]
        base_faces: usize,
        #[arg(long, default_value_t = 3)]
        levels: u32,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model and write checkpoint, run log and resolved config.
    Train(TrainArgs),
    /// Score a checkpoint on one split of a manifest.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value_t = SplitArg::Test)]
        split: SplitArg,
        #[command(flatten)]
        source: SourceArgs,
    },
    /// Predict the three parameters for a single mesh.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        mesh: PathBuf,
        #[arg(long)]
        location: String,
        #[arg(long)]
        system: String,
        #[arg(long)]
        series: String,
        /// Config for the text encoder and remeshing; defaults to the one saved with the checkpoint.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Retrain once per value and report test IoU for each.
    Sweep {
        #[command(flatten)]
        values: SweepValues,
        #[command(flatten)]
        train: TrainArgs,
    },
}

#[derive(Args)]
struct TrainArgs {
    /// TOML config; missing fields take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    paradigm: Option<ParadigmArg>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    pretrain_epochs: Option<usize>,
    #[arg(long)]
    max_steps: Option<usize>,
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct SweepValues {
    #[arg(long, value_delimiter = ',')]
    fractions: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    mask_ratios: Option<Vec<f64>>,
}

#[derive(Args)]
struct SourceArgs {
    /// Defaults to the config saved next to the checkpoint.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    cache_dir: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Test,
}

#[derive(Clone, Copy, ValueEnum)]
enum ParadigmArg {
    Ssat,
    SslFt,
}

/// An input file that does not exist; reported with exit code 2.
#[derive(Debug)]
struct MissingInput(&'static str, PathBuf);

impl fmt::Display for MissingInput {
    fn fmt(&self, f: &mut fmt::Formatter) -> fmt::Result {
        write!(f, "{} not found: {}", self.0, self.1.display())
    }
}

impl std::error::Error for MissingInput {}

fn require(what: &'static str, path: &Path) -> Result<()> {
    if !path.is_file() {
        return Err(MissingInput(what, path.to_path_buf()).into());
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("ABUTMENT_LOG", "warn")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<MissingInput>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Generate { n, seed, out, split, noise } => generate(n, seed, &out, split, noise),
        Command::Preprocess { manifest, base_faces, levels, out } => preprocess(&manifest, base_faces, levels, &out),
        Command::Train(args) => train(&args),
        Command::Eval { checkpoint, split, source } => eval(&checkpoint, split, &source),
        Command::Predict { checkpoint, mesh, location, system, series, config } => {
            predict(&checkpoint, &mesh, PromptFields { location: &location, system: &system, series: &series }, config)
        }
        Command::Sweep { values, train } => run_sweep(&values, &train),
    }
}

fn print_tables(t: &Table) {
    print!("\n{}\n{}", t.human(), t.csv());
}

fn print_config(cfg: &TrainConfig) {
    println!("# resolved config\n{}", cfg.to_toml());
}

fn iou_table(label: &str, r: &IouReport) -> Table {
    let mut t = Table::new(&["split", "n", "iou_transgingival", "iou_diameter", "iou_height", "iou_mean"]);
    t.row(vec![
        label.to_string(),
        r.count.to_string(),
        format!("{:.3}", r.transgingival),
        format!("{:.3}", r.diameter),
        format!("{:.3}", r.height),
        format!("{:.3}", r.mean()),
    ]);
    t
}

fn generate(n: usize, seed: u64, out: &Path, split: f64, noise: f64) -> Result<()> {
    println!(
        "# generate\nn = {n}\nseed = {seed}\nsplit = {split}\nnoise = {noise}\nout = {:?}",
        out.display().to_string()
    );
    let opts = DatasetOptions { noise, ..DatasetOptions::default() };
    let manifest = build_dataset_with(n, split, seed, &opts)?;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write_dataset(&manifest, out, &opts.resolution)?;
    let path = out.join("manifest.jsonl");
    let mut t = Table::new(&["manifest", "train", "test", "sha256"]);
    t.row(vec![
        path.display().to_string(),
        manifest.count(Split::Train).to_string(),
        manifest.count(Split::Test).to_string(),
        manifest_checksum(&path)?,
    ]);
    print_tables(&t);
    Ok(())
}

fn preprocess(manifest: &Path, base_faces: usize, levels: u32, out: &Path) -> Result<()> {
    require("manifest", manifest)?;
    let remesh = RemeshConfig { base_faces, subdivision_levels: levels, ..RemeshConfig::default() };
    remesh.validate()?;
    println!(
        "# preprocess\nmanifest = {:?}\nbase_faces = {base_faces}\nlevels = {levels}\nout = {:?}",
        manifest.display().to_string(),
        out.display().to_string()
    );
    let (m, root) = load_manifest(manifest)?;
    // The cache holds mesh features only; the prompt embedding is recomputed at load time.
    let enc = HashEncoder::default();
    let mut t = Table::new(&["id", "split", "faces", "patches", "faces_per_patch"]);
    for r in &m.records {
        let s = load_sample(r, &root, &remesh, &enc, EncodeMode::Sentence, Some(out))?;
        let per = 4usize.pow(s.pfs.levels);
        let split = match r.split {
            Split::Train => "train",
            Split::Test => "test",
        };
        log::info!("sample {} cached", r.id);
        t.row(vec![
            r.id.to_string(),
            split.into(),
            (s.pfs.patch_count() * per).to_string(),
            s.pfs.patch_count().to_string(),
            per.to_string(),
        ]);
    }
    print_tables(&t);
    Ok(())
}

fn train_config(args: &TrainArgs) -> Result<TrainConfig> {
    let mut cfg = match &args.config {
        Some(p) => {
            require("config", p)?;
            TrainConfig::load(p)?
        }
        None => TrainConfig::default(),
    };
    if let Some(p) = args.paradigm {
        cfg.paradigm = match p {
            ParadigmArg::Ssat => Paradigm::Ssat,
            ParadigmArg::SslFt => Paradigm::SslFt,
        };
    }
    if let Some(m) = &args.manifest {
        cfg.manifest = Some(m.clone());
    }
    if let Some(c) = &args.cache_dir {
        cfg.cache_dir = Some(c.clone());
    }
    if let Some(o) = &args.out {
        cfg.output_dir = o.clone();
    }
    cfg.seed = args.seed.unwrap_or(cfg.seed);
    cfg.epochs = args.epochs.unwrap_or(cfg.epochs);
    cfg.pretrain_epochs = args.pretrain_epochs.unwrap_or(cfg.pretrain_epochs);
    cfg.max_steps = args.max_steps.unwrap_or(cfg.max_steps);
    cfg.validate()?;
    match &cfg.manifest {
        Some(m) => require("manifest", m)?,
        None => bail!("no manifest given (--manifest or `manifest` in the config)"),
    }
    Ok(cfg)
}

fn train(args: &TrainArgs) -> Result<()> {
    let cfg = train_config(args)?;
    print_config(&cfg);
    let log = run_training(&cfg)?;
    let mut t = Table::new(&["phase", "steps", "seconds"]);
    for p in &log.phases {
        t.row(vec![p.phase.clone(), p.steps.to_string(), format!("{:.2}", p.seconds)]);
    }
    print_tables(&t);
    if let Some(r) = &log.final_eval {
        print_tables(&iou_table("test", r));
    }
    if let Some(c) = &log.checkpoint {
        println!("\ncheckpoint: {}", c.display());
    }
    Ok(())
}

/// Explicit config, else the one saved beside the checkpoint, else defaults.
fn checkpoint_config(checkpoint: &Path, config: Option<&Path>) -> Result<TrainConfig> {
    if let Some(p) = config {
        require("config", p)?;
        return Ok(TrainConfig::load(p)?);
    }
    let saved = checkpoint.with_file_name(RESOLVED_CONFIG_FILE);
    Ok(if saved.is_file() { TrainConfig::load(&saved)? } else { TrainConfig::default() })
}

fn eval(checkpoint: &Path, split: SplitArg, source: &SourceArgs) -> Result<()> {
    require("checkpoint", checkpoint)?;
    let mut cfg = checkpoint_config(checkpoint, source.config.as_deref())?;
    if let Some(m) = &source.manifest {
        cfg.manifest = Some(m.clone());
    }
    if let Some(c) = &source.cache_dir {
        cfg.cache_dir = Some(c.clone());
    }
    if let Some(m) = &cfg.manifest {
        require("manifest", m)?;
    }
    print_config(&cfg);
    let (split, label) = match split {
        SplitArg::Train => (Split::Train, "train"),
        SplitArg::Test => (Split::Test, "test"),
    };
    let report = evaluate_checkpoint(&cfg, checkpoint, split)?;
    print_tables(&iou_table(label, &report));
    Ok(())
}

fn predict(checkpoint: &Path, mesh: &Path, prompt: PromptFields, config: Option<PathBuf>) -> Result<()> {
    require("checkpoint", checkpoint)?;
    require("mesh", mesh)?;
    let mut cfg = checkpoint_config(checkpoint, config.as_deref())?;
    let net = AbutmentNet::load_for_inference(checkpoint)?;
    cfg.model = net.config().clone();
    cfg.remesh.subdivision_levels = cfg.model.levels;
    print_config(&cfg);
    let enc = make_encoder(&cfg)?;
    let m = load_mesh(mesh)?;
    let p: AbutmentParams = predict_mesh(&net, &m, &cfg.remesh, prompt, enc.as_ref(), cfg.model.text_mode)?;
    let mut t = Table::new(&["mesh", "transgingival", "diameter", "height"]);
    t.row(vec![
        mesh.display().to_string(),
        format!("{:.3}", p.transgingival),
        format!("{:.3}", p.diameter),
        format!("{:.3}", p.height),
    ]);
    print_tables(&t);
    Ok(())
}

fn run_sweep(values: &SweepValues, args: &TrainArgs) -> Result<()> {
    let (kind, vals) = match (&values.fractions, &values.mask_ratios) {
        (Some(v), _) => (SweepKind::TrainFraction, v),
        (_, Some(v)) => (SweepKind::MaskRatio, v),
        _ => unreachable!("clap requires one sweep"),
    };
    let cfg = train_config(args)?;
    print_config(&cfg);
    let (train_set, test_set) = load_samples(&cfg)?;
    if test_set.is_empty() {
        bail!("the manifest has no test split to score the sweep on");
    }
    let rows = sweep(&cfg, kind, vals, &train_set, &test_set)?;
    let mut t = Table::new(&[kind.column(), "iou_transgingival", "iou_diameter", "iou_height", "iou_mean", "seconds"]);
    for r in &rows {
        t.row(vec![
            r.value.to_string(),
            format!("{:.3}", r.iou.transgingival),
            format!("{:.3}", r.iou.diameter),
            format!("{:.3}", r.iou.height),
            format!("{:.3}", r.iou.mean()),
            format!("{:.2}", r.seconds),
        ]);
    }
    print!("\n{}\n{}", t.human(), render_sweep(kind, &rows));
    Ok(())
}
