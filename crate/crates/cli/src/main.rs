//! `textseg`: train prompt and visual banks, segment, evaluate and sweep
//! ablations from the command line.

mod plot;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use textseg_core::afa::{read_prompt_meta, PromptFeatureBank, TrainStatus};
use textseg_core::artifact;
use textseg_core::data::{read_image, read_mask, synth_generate, write_mask, PreprocessConfig, Split};
use textseg_core::inference::{segment, Branches, Fusion};
use textseg_core::metrics::{EvalReport, ImageMetrics};
use textseg_core::pipeline::{
    ablation_variants, run_ablation, score_results, segment_queries, train_seed, write_ablation_csv,
    AblationAxis, BackendSpec, DataSpec, Dataset, MultiSeedReport, Preset, RunConfig, SweepConfig,
    TrainedRun,
};
use textseg_core::prompt_space::Ratio;
use textseg_core::visual_bank::{read_visual_meta, VisualFeatureBank};
use textseg_core::Error;

const DEFAULT_OUTPUT_ROOT: &str = "runs";

#[derive(Parser)]
#[command(name = "textseg", version, about = "Few-shot scene text segmentation")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root directory for run directories.
    #[arg(long, global = true, env = "TEXTSEG_OUTPUT_ROOT")]
    output: Option<PathBuf>,
    /// Worker threads for query evaluation.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// More log output; repeat for debug level.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Subcommand)]
enum Command {
    /// Build visual banks, train prompts and persist both per seed.
    Train {
        #[command(flatten)]
        flags: RunFlags,
    },
    /// Segment the query set with trained banks and write reports.
    Eval {
        #[command(flatten)]
        flags: RunFlags,
        /// Run directory holding the banks; defaults to the one named by the
        /// configuration hash.
        #[arg(long)]
        run: Option<PathBuf>,
        /// Also write score-map heatmaps and masks per query.
        #[arg(long)]
        heatmaps: bool,
    },
    /// Segment a single image with trained banks.
    Segment {
        #[command(flatten)]
        flags: RunFlags,
        /// Run directory holding `config.json` and the seed directories.
        #[arg(long)]
        run: PathBuf,
        /// Seed whose banks to use; defaults to the first configured seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        image: PathBuf,
        /// Ground-truth mask; adds FgIoU and AUROC to the result.
        #[arg(long)]
        mask: Option<PathBuf>,
        /// Output directory; defaults to `<run>/segment/<image stem>`.
        #[arg(long = "out")]
        out: Option<PathBuf>,
        #[arg(long)]
        heatmaps: bool,
    },
    /// Sweep one ablation axis and write a CSV and a plot.
    Ablate {
        #[command(flatten)]
        flags: RunFlags,
        /// components, fg-attributes, bg-attributes, counts, tokens or suppression.
        #[arg(long, value_parser = parse_axis)]
        axis: AblationAxis,
        /// JSON sweep values; defaults cover every axis.
        #[arg(long)]
        sweep: Option<PathBuf>,
    },
    /// Write a synthetic image/mask dataset with a manifest.
    Synth {
        #[arg(long, value_enum, default_value_t = PresetArg::Separable)]
        preset: PresetArg,
        #[arg(long, default_value_t = 20)]
        count: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = SplitArg::Query)]
        split: SplitArg,
        #[arg(long = "out")]
        out: PathBuf,
    },
    /// Print the metadata of saved banks and verify their checksums.
    BanksInspect {
        /// A bank directory or a directory containing `visual_bank/` and
        /// `prompt_bank/`.
        path: PathBuf,
    },
}

#[derive(Args, Default)]
struct RunFlags {
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Support shots per seed.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Skip prompt training; prompts stay at their initialization.
    #[arg(long)]
    no_afa: bool,
    /// Mask threshold on the fused score map.
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    no_suppress: bool,
    #[arg(long)]
    no_edge_filter: bool,
    #[arg(long, value_enum)]
    branches: Option<BranchesArg>,
    #[arg(long, value_enum)]
    fusion: Option<FusionArg>,
    /// Directory of saved linear backend weights.
    #[arg(long)]
    backend_weights: Option<PathBuf>,
    #[arg(long)]
    support_manifest: Option<PathBuf>,
    #[arg(long)]
    query_manifest: Option<PathBuf>,
    /// Query preset for generated data.
    #[arg(long, value_enum)]
    query_preset: Option<PresetArg>,
    #[arg(long)]
    lexicon: Option<PathBuf>,
    #[arg(long)]
    seed_table: Option<PathBuf>,
    #[arg(long)]
    input_size: Option<usize>,
    /// Total foreground prompts (learnable plus prototypes).
    #[arg(long)]
    fg_prompts: Option<usize>,
    /// Total background prompts (learnable plus prototypes).
    #[arg(long)]
    bg_prompts: Option<usize>,
    /// Prototype to learnable ratio for both roles, as `a/b`.
    #[arg(long, value_parser = parse_ratio)]
    ratio: Option<Ratio>,
    /// Attribute token budget of foreground prompts.
    #[arg(long)]
    fg_tokens: Option<usize>,
    /// Attribute token budget of background prompts.
    #[arg(long)]
    bg_tokens: Option<usize>,
    /// Aggregate metrics over all pixels instead of per image.
    #[arg(long)]
    pooled_metrics: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum BranchesArg {
    Both,
    Visual,
    Prompt,
}

#[derive(Clone, Copy, ValueEnum)]
enum FusionArg {
    Literal,
    Doubled,
}

#[derive(Clone, Copy, ValueEnum)]
enum PresetArg {
    Separable,
    Noisy,
    Negative,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Support,
    Query,
}

impl From<PresetArg> for Preset {
    fn from(p: PresetArg) -> Self {
        match p {
            PresetArg::Separable => Preset::Separable,
            PresetArg::Noisy => Preset::Noisy,
            PresetArg::Negative => Preset::Negative,
        }
    }
}

fn parse_axis(s: &str) -> Result<AblationAxis, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_ratio(s: &str) -> Result<Ratio, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

#[derive(Debug)]
enum CliError {
    Core(Error),
    Plot(String),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Plot(e) => write!(f, "plot: {e}"),
        }
    }
}

impl CliError {
    /// 2 usage, 3 data, 4 backend, 1 anything else.
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(e) if e.is_backend_error() => 4,
            CliError::Core(e) if e.is_data_error() => 3,
            CliError::Core(Error::Shape(_) | Error::Build(_)) => 3,
            CliError::Core(Error::Argument(_) | Error::Config(_) | Error::Overflow { .. }) => 2,
            _ => 1,
        }
    }
}

type CliResult<T = ()> = Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Core(Error::Argument(msg.into()))
}

fn missing(path: &Path, what: &str) -> CliError {
    CliError::Core(Error::Io {
        path: path.to_path_buf(),
        source: std::io::Error::new(std::io::ErrorKind::NotFound, what.to_string()),
    })
}

impl RunFlags {
    fn apply(&self, cfg: &mut RunConfig) -> CliResult {
        if let Some(s) = &self.seeds {
            cfg.seeds = s.clone();
        }
        if let Some(k) = self.k {
            cfg.k = k;
        }
        if let Some(e) = self.epochs {
            cfg.train.epochs = e;
        }
        if let Some(lr) = self.lr {
            cfg.train.lr = lr;
        }
        if self.no_afa {
            cfg.afa = false;
        }
        if let Some(t) = self.threshold {
            cfg.inference.mask.threshold = t;
        }
        if self.no_suppress {
            cfg.inference.suppress = false;
        }
        if self.no_edge_filter {
            cfg.inference.mask.edge_filter = false;
        }
        if let Some(b) = self.branches {
            cfg.inference.branches = match b {
                BranchesArg::Both => Branches::Both,
                BranchesArg::Visual => Branches::Visual,
                BranchesArg::Prompt => Branches::Prompt,
            };
        }
        if let Some(f) = self.fusion {
            cfg.inference.fusion = match f {
                FusionArg::Literal => Fusion::Literal,
                FusionArg::Doubled => Fusion::Doubled,
            };
        }
        if let Some(dir) = &self.backend_weights {
            cfg.backend = BackendSpec::Weights { dir: dir.clone() };
        }
        match (&self.support_manifest, &mut cfg.data) {
            (Some(support), data) => {
                let query = match (&self.query_manifest, &*data) {
                    (Some(q), _) => Some(q.clone()),
                    (None, DataSpec::Manifest { query, .. }) => query.clone(),
                    (None, DataSpec::Synthetic { .. }) => None,
                };
                *data = DataSpec::Manifest {
                    support: support.clone(),
                    query,
                };
            }
            (None, DataSpec::Manifest { query, .. }) => {
                if let Some(q) = &self.query_manifest {
                    *query = Some(q.clone());
                }
            }
            (None, DataSpec::Synthetic { .. }) if self.query_manifest.is_some() => {
                return Err(usage("--query-manifest needs --support-manifest"));
            }
            _ => {}
        }
        if let Some(p) = self.query_preset {
            match &mut cfg.data {
                DataSpec::Synthetic { query_preset, .. } => *query_preset = p.into(),
                DataSpec::Manifest { .. } => {
                    return Err(usage("--query-preset only applies to generated data"));
                }
            }
        }
        if let Some(l) = &self.lexicon {
            cfg.lexicon = Some(l.clone());
        }
        if let Some(t) = &self.seed_table {
            cfg.seed_table = Some(t.clone());
        }
        if let Some(s) = self.input_size {
            cfg.input_size = s;
        }
        if let Some(n) = self.fg_prompts {
            cfg.fg_prompts.total = Some(n);
        }
        if let Some(n) = self.bg_prompts {
            cfg.bg_prompts.total = Some(n);
        }
        if let Some(r) = self.ratio {
            cfg.fg_prompts.ratio = Some(r);
            cfg.bg_prompts.ratio = Some(r);
        }
        if let Some(b) = self.fg_tokens {
            cfg.fg_prompts.token_budget = Some(b);
            cfg.fg_prompts.allocation = None;
        }
        if let Some(b) = self.bg_tokens {
            cfg.bg_prompts.token_budget = Some(b);
            cfg.bg_prompts.allocation = None;
        }
        if self.pooled_metrics {
            cfg.pooled_metrics = true;
        }
        Ok(())
    }
}

/// Loads the base configuration, applies flag overrides and validates.
fn resolve(global: &Global, base: Option<&Path>, flags: &RunFlags) -> CliResult<RunConfig> {
    let mut cfg = match base.or(global.config.as_deref()) {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    flags.apply(&mut cfg)?;
    if let Some(w) = global.workers {
        cfg.workers = w;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn output_root(global: &Global, cfg: &RunConfig) -> PathBuf {
    global
        .output
        .clone()
        .or_else(|| cfg.output.clone())
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_ROOT))
}

fn run_dir(global: &Global, cfg: &RunConfig) -> PathBuf {
    output_root(global, cfg).join(cfg.hash())
}

fn seed_dir(run: &Path, seed: u64) -> PathBuf {
    run.join(format!("seed-{seed}"))
}

fn cmd_train(global: &Global, flags: &RunFlags) -> CliResult {
    let cfg = resolve(global, None, flags)?;
    let backend = cfg.backend.build()?;
    let data = Dataset::load(&cfg)?;
    let dir = run_dir(global, &cfg);
    artifact::write_json(&dir.join("config.json"), &cfg)?;
    for &seed in &cfg.seeds {
        let supports = data.supports(&cfg, seed)?;
        let run = train_seed(&cfg, &backend, &supports, seed)?;
        let out = seed_dir(&dir, seed);
        let written = run.save(&out)?;
        let first = run.curve.first().map_or(f64::NAN, |r| r.total);
        let last = run.curve.last().map_or(f64::NAN, |r| r.total);
        println!(
            "seed {seed}: supports [{}], loss {first:.5} -> {last:.5}, {} artifacts in {}",
            run.support_ids.join(", "),
            written.len(),
            out.display()
        );
        if let TrainStatus::Diverged { epoch, step } = run.status {
            log::error!("seed {seed} diverged; saved the last finite prompts");
            return Err(Error::Divergence { epoch, step }.into());
        }
    }
    println!("run directory: {}", dir.display());
    Ok(())
}

fn load_trained(dir: &Path, backend: &dyn textseg_core::backend::Backend, seed: u64) -> CliResult<TrainedRun> {
    let sd = seed_dir(dir, seed);
    for bank in ["visual_bank", "prompt_bank"] {
        if !sd.join(bank).join("bank.json").is_file() {
            return Err(missing(
                &sd.join(bank),
                "bank not found; run `textseg train` with the same configuration first",
            ));
        }
    }
    Ok(TrainedRun::load(&sd, backend, seed)?)
}

fn cmd_eval(global: &Global, flags: &RunFlags, run: Option<&Path>, heatmaps: bool) -> CliResult {
    let base = run.map(|r| r.join("config.json"));
    if let Some(b) = &base {
        if !b.is_file() {
            return Err(missing(b, "run configuration not found"));
        }
    }
    let cfg = resolve(global, base.as_deref(), flags)?;
    let dir = match run {
        Some(r) => r.to_path_buf(),
        None => run_dir(global, &cfg),
    };
    let backend = cfg.backend.build()?;
    let data = Dataset::load(&cfg)?;
    if data.queries.is_empty() {
        return Err(CliError::Core(Error::Config(
            "no query images; pass --query-manifest".into(),
        )));
    }
    let trained_runs = cfg
        .seeds
        .iter()
        .map(|&seed| load_trained(&dir, &backend, seed))
        .collect::<CliResult<Vec<_>>>()?;
    let eval_dir = dir.join(format!("eval-{}", cfg.hash()));
    artifact::write_json(&eval_dir.join("config.json"), &cfg)?;
    let mut reports = Vec::new();
    for (&seed, trained) in cfg.seeds.iter().zip(&trained_runs) {
        let results = segment_queries(trained, &backend, &data.queries, &cfg.inference, cfg.workers)?;
        let report = score_results(&cfg, trained, &data.queries, &results)?;
        let out = seed_dir(&eval_dir, seed);
        report.save_json(&out.join("report.json"))?;
        report.save_csv(&out.join("report.csv"))?;
        if heatmaps {
            for (q, r) in data.queries.iter().zip(&results) {
                let hd = out.join("heatmaps").join(&q.id);
                r.write_heatmaps(&hd)?;
                write_mask(&hd.join("mask.png"), &r.mask)?;
                write_mask(&hd.join("gt.png"), &q.mask)?;
            }
        }
        log::info!("seed {seed}:\n{}", report.table());
        reports.push((seed, report));
    }
    let pairs: Vec<(u64, &EvalReport)> = reports.iter().map(|(s, r)| (*s, r)).collect();
    let summary = MultiSeedReport::new(cfg.hash(), &pairs);
    artifact::write_json(&eval_dir.join("summary.json"), &summary)?;
    print!("{}", summary.table());
    println!("reports: {}", eval_dir.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_segment(
    global: &Global,
    flags: &RunFlags,
    run: &Path,
    seed: Option<u64>,
    image: &Path,
    gt: Option<&Path>,
    out: Option<&Path>,
    heatmaps: bool,
) -> CliResult {
    let base = run.join("config.json");
    if !base.is_file() {
        return Err(missing(&base, "run configuration not found"));
    }
    let cfg = resolve(global, Some(&base), flags)?;
    let seed = seed.unwrap_or(cfg.seeds[0]);
    let backend = cfg.backend.build()?;
    let trained = load_trained(run, &backend, seed)?;
    let pre = PreprocessConfig { size: cfg.input_size };
    let img = read_image(image, &pre)?;
    let result = segment(&img, &trained.visual, &trained.prompts, &backend, &cfg.inference)?;
    let out = match out {
        Some(o) => o.to_path_buf(),
        None => {
            let stem = image.file_stem().map_or("image".into(), |s| s.to_string_lossy().into_owned());
            run.join("segment").join(stem)
        }
    };
    write_mask(&out.join("mask.png"), &result.mask)?;
    if heatmaps {
        result.write_heatmaps(&out)?;
    }
    let id = image.display().to_string();
    let gt_mask = match gt {
        Some(p) => textseg_core::data::preprocess_mask(&read_mask(p)?, &pre),
        None => textseg_core::data::Mask::zeros(result.mask.dim()),
    };
    let m = ImageMetrics::compute(&id, result.mask.view(), result.s.grid.view(), gt_mask.view())?;
    let mut summary = serde_json::json!({
        "image": id,
        "seed": seed,
        "pred_pixels": m.pred_pixels,
        "total_pixels": m.total_pixels,
        "density": m.density(),
    });
    if gt.is_some() {
        summary["fgiou"] = serde_json::json!(m.fgiou);
        summary["auroc"] = serde_json::json!(m.auroc);
    }
    artifact::write_json(&out.join("result.json"), &summary)?;
    println!("{}", serde_json::to_string_pretty(&summary).expect("json"));
    println!("mask: {}", out.join("mask.png").display());
    Ok(())
}

fn cmd_ablate(global: &Global, flags: &RunFlags, axis: AblationAxis, sweep: Option<&Path>) -> CliResult {
    let cfg = resolve(global, None, flags)?;
    let sweep = match sweep {
        Some(p) => artifact::read_json::<SweepConfig>(p).map_err(|e| match e {
            Error::Json { path, source } => Error::Config(format!("{}: {source}", path.display())),
            other => other,
        })?,
        None => SweepConfig::default(),
    };
    // expand first so an empty sweep fails before any data is touched
    ablation_variants(&cfg, axis, &sweep)?;
    let backend = cfg.backend.build()?;
    let data = Dataset::load(&cfg)?;
    let rows = run_ablation(&cfg, axis, &sweep, &backend, &data)?;
    let dir = run_dir(global, &cfg).join("ablate");
    artifact::write_json(&dir.join("config.json"), &cfg)?;
    let csv = dir.join(format!("{}.csv", axis.name()));
    let png = dir.join(format!("{}.png", axis.name()));
    write_ablation_csv(&csv, &rows)?;
    plot::plot_ablation(&png, &format!("ablation: {}", axis.name()), &rows)
        .map_err(|e| CliError::Plot(e.to_string()))?;
    let width = rows.iter().map(|r| r.label.len()).max().unwrap_or(5).max(5);
    println!("{:<width$}  {:>7}  {:>7}", "label", "FgIoU", "AUROC");
    for r in &rows {
        let a = r.auroc.map_or_else(|| "-".to_string(), |a| format!("{a:.4}"));
        println!("{:<width$}  {:>7.4}  {:>7}", r.label, r.fgiou, a);
    }
    println!("csv: {}\nplot: {}", csv.display(), png.display());
    Ok(())
}

fn cmd_synth(preset: PresetArg, count: usize, seed: u64, split: SplitArg, out: &Path) -> CliResult {
    let cfg = Preset::from(preset).config(seed, count);
    let split = match split {
        SplitArg::Support => Split::Support,
        SplitArg::Query => Split::Query,
    };
    let manifest = synth_generate(&cfg)?.write(out, split)?;
    println!(
        "{} images written; manifest: {}",
        manifest.len(),
        out.join("manifest.json").display()
    );
    Ok(())
}

fn inspect_one(dir: &Path) -> CliResult<serde_json::Value> {
    let head: serde_json::Value = artifact::read_json(&dir.join("bank.json"))?;
    match head.get("kind").and_then(|k| k.as_str()) {
        Some("visual") => {
            let meta = read_visual_meta(dir)?;
            let bank = VisualFeatureBank::load_unchecked(dir)?;
            Ok(serde_json::json!({
                "path": dir.display().to_string(),
                "kind": "visual",
                "checksum_ok": true,
                "dim": bank.dim(),
                "meta": meta,
            }))
        }
        Some("prompt") => {
            let meta = read_prompt_meta(dir)?;
            let bank = PromptFeatureBank::load_unchecked(dir)?;
            Ok(serde_json::json!({
                "path": dir.display().to_string(),
                "kind": "prompt",
                "checksum_ok": true,
                "dim": bank.dim(),
                "meta": meta,
            }))
        }
        other => Err(Error::Format(format!("{}: unknown bank kind {other:?}", dir.display())).into()),
    }
}

fn cmd_inspect(path: &Path) -> CliResult {
    let dirs: Vec<PathBuf> = if path.join("bank.json").is_file() {
        vec![path.to_path_buf()]
    } else {
        ["visual_bank", "prompt_bank"]
            .iter()
            .map(|b| path.join(b))
            .filter(|d| d.join("bank.json").is_file())
            .collect()
    };
    if dirs.is_empty() {
        return Err(missing(path, "no bank found"));
    }
    let info = dirs.iter().map(|d| inspect_one(d)).collect::<CliResult<Vec<_>>>()?;
    println!("{}", serde_json::to_string_pretty(&info).expect("json"));
    Ok(())
}

fn run(cli: Cli) -> CliResult {
    let g = &cli.global;
    match &cli.command {
        Command::Train { flags } => cmd_train(g, flags),
        Command::Eval { flags, run, heatmaps } => cmd_eval(g, flags, run.as_deref(), *heatmaps),
        Command::Segment {
            flags,
            run,
            seed,
            image,
            mask,
            out,
            heatmaps,
        } => cmd_segment(g, flags, run, *seed, image, mask.as_deref(), out.as_deref(), *heatmaps),
        Command::Ablate { flags, axis, sweep } => cmd_ablate(g, flags, *axis, sweep.as_deref()),
        Command::Synth {
            preset,
            count,
            seed,
            split,
            out,
        } => cmd_synth(*preset, *count, *seed, *split, out),
        Command::BanksInspect { path } => cmd_inspect(path),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.global.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .parse_default_env()
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
