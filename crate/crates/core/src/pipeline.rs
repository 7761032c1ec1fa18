//! End-to-end runs shared by the command line and the acceptance suite:
//! run configuration, support selection, training, evaluation and artifact
//! layout.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::afa::{self, CurveRow, PromptFeatureBank, TrainConfig, TrainStatus};
use crate::artifact;
use crate::backend::{make_toy_backend, Backend, LinearBackend};
use crate::data::{
    preprocess_mask, read_image, read_mask, select_support, select_support_ids, synth_generate,
    DatasetManifest, Image, Mask, PreprocessConfig, SeedTable, Split, SupportSample, SynthConfig,
    SynthDataset,
};
use crate::error::{Error, Result};
use crate::inference::{segment, Branches, FusedResult, InferenceConfig};
use crate::metrics::{EvalReport, ImageMetrics, PooledAccumulator};
use crate::prompt_space::{
    build_population, AttributeLexicon, PopulationConfig, Ratio, Role, Slot, TemplateConfig,
};
use crate::visual_bank::{build_bank, PatchRule, VisualFeatureBank};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum BackendSpec {
    /// Seeded linear toy backend.
    Toy { seed: u64, dim: usize, patch: usize },
    /// Linear backend saved with [`LinearBackend::save`].
    Weights { dir: PathBuf },
}

impl Default for BackendSpec {
    fn default() -> Self {
        BackendSpec::Toy {
            seed: 0,
            dim: 64,
            patch: 4,
        }
    }
}

impl BackendSpec {
    pub fn build(&self) -> Result<LinearBackend> {
        match self {
            BackendSpec::Toy { seed, dim, patch } => make_toy_backend(*seed, *dim, *patch),
            BackendSpec::Weights { dir } => LinearBackend::load(dir),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Separable,
    Noisy,
    Negative,
}

impl Preset {
    pub fn config(self, seed: u64, count: usize) -> SynthConfig {
        match self {
            Preset::Separable => SynthConfig::separable(seed, count),
            Preset::Noisy => SynthConfig::noisy(seed, count),
            Preset::Negative => SynthConfig::negative(seed, count),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DataSpec {
    /// Generated scenes: a support pool and a disjoint query set.
    Synthetic {
        support_preset: Preset,
        query_preset: Preset,
        seed: u64,
        pool: usize,
        queries: usize,
    },
    /// Image/mask manifests on disk.
    Manifest {
        support: PathBuf,
        query: Option<PathBuf>,
    },
}

impl Default for DataSpec {
    fn default() -> Self {
        DataSpec::Synthetic {
            support_preset: Preset::Separable,
            query_preset: Preset::Separable,
            seed: 7,
            pool: 8,
            queries: 20,
        }
    }
}

/// Partial template/population settings; unset fields take the role's
/// defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PromptSettings {
    pub prefix_len: Option<usize>,
    pub token_budget: Option<usize>,
    pub attributes: Option<Vec<Slot>>,
    pub allocation: Option<Vec<usize>>,
    pub total: Option<usize>,
    pub ratio: Option<Ratio>,
    pub init_noise: Option<f64>,
}

impl PromptSettings {
    pub fn resolve(&self, role: Role) -> PopulationConfig {
        let d = PopulationConfig::for_role(role);
        PopulationConfig {
            template: TemplateConfig {
                prefix_len: self.prefix_len.unwrap_or(d.template.prefix_len),
                token_budget: self.token_budget.unwrap_or(d.template.token_budget),
                attributes: self.attributes.clone().unwrap_or(d.template.attributes),
                allocation: self.allocation.clone().or(d.template.allocation),
            },
            total: self.total.unwrap_or(d.total),
            ratio: self.ratio.unwrap_or(d.ratio),
            init_noise: self.init_noise.unwrap_or(d.init_noise),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub backend: BackendSpec,
    pub data: DataSpec,
    /// Attribute lexicon; the built-in synthetic lexicon when unset.
    pub lexicon: Option<PathBuf>,
    /// Seed table for support selection; the manifest's own when unset.
    pub seed_table: Option<PathBuf>,
    pub k: usize,
    pub seeds: Vec<u64>,
    /// Input side for manifest images.
    pub input_size: usize,
    pub patch_rule: PatchRule,
    pub train: TrainConfig,
    /// Train the prompts; off keeps their initial values.
    pub afa: bool,
    pub fg_prompts: PromptSettings,
    pub bg_prompts: PromptSettings,
    pub inference: InferenceConfig,
    /// Score pooled pixels instead of averaging per image.
    pub pooled_metrics: bool,
    pub workers: usize,
    pub output: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            backend: BackendSpec::default(),
            data: DataSpec::default(),
            lexicon: None,
            seed_table: None,
            k: 1,
            seeds: vec![1],
            input_size: 64,
            patch_rule: PatchRule::default(),
            train: TrainConfig::default(),
            afa: true,
            fg_prompts: PromptSettings::default(),
            bg_prompts: PromptSettings::default(),
            inference: InferenceConfig::default(),
            pooled_metrics: false,
            workers: 1,
            output: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        artifact::read_json(path)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        if self.k == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        if self.workers == 0 {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        if self.input_size == 0 {
            return Err(Error::Config("input size must be positive".into()));
        }
        self.train.validate()?;
        self.inference.validate()?;
        for (role, s) in [(Role::Fg, &self.fg_prompts), (Role::Bg, &self.bg_prompts)] {
            let p = s.resolve(role);
            p.template.allocate()?;
            p.ratio.split(p.total)?;
        }
        Ok(())
    }

    /// Training settings as actually run: AFA off means zero epochs.
    pub fn effective_train(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: if self.afa { self.train.epochs } else { 0 },
            seed,
            ..self.train.clone()
        }
    }

    /// Short content hash of everything that affects results, used to name
    /// run directories. Output location and worker count are excluded.
    pub fn hash(&self) -> String {
        let identity = RunConfig {
            output: None,
            workers: 1,
            ..self.clone()
        };
        let json = serde_json::to_vec(&identity).expect("config serializes");
        artifact::sha256_hex(&json)[..12].to_string()
    }

    pub fn lexicon(&self) -> Result<AttributeLexicon> {
        match &self.lexicon {
            Some(p) => AttributeLexicon::load(p),
            None => Ok(AttributeLexicon::synthetic()),
        }
    }

    fn preprocess(&self) -> PreprocessConfig {
        PreprocessConfig {
            size: self.input_size,
        }
    }
}

/// One query image with its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Query {
    pub id: String,
    pub image: Image,
    pub mask: Mask,
}

/// Supports and queries resolved from a [`DataSpec`].
pub struct Dataset {
    pub support_manifest: DatasetManifest,
    support_pool: Option<Vec<SupportSample>>,
    pub queries: Vec<Query>,
}

fn queries_of(data: &SynthDataset) -> Vec<Query> {
    data.samples()
        .into_iter()
        .map(|s| Query {
            id: s.id,
            image: s.image,
            mask: s.mask,
        })
        .collect()
}

impl Dataset {
    pub fn load(cfg: &RunConfig) -> Result<Self> {
        match &cfg.data {
            DataSpec::Synthetic {
                support_preset,
                query_preset,
                seed,
                pool,
                queries,
            } => {
                let mut sc = support_preset.config(*seed, *pool);
                sc.name = format!("{}-support", sc.name);
                let support = synth_generate(&sc)?;
                let mut qc = query_preset.config(seed.wrapping_add(1_000_003), *queries);
                qc.name = format!("{}-query", qc.name);
                let query = synth_generate(&qc)?;
                Ok(Self {
                    support_manifest: support.manifest(Split::Support),
                    support_pool: Some(support.samples()),
                    queries: queries_of(&query),
                })
            }
            DataSpec::Manifest { support, query } => {
                let support_manifest = DatasetManifest::load(support)?;
                support_manifest.check_paths()?;
                let queries = match query {
                    Some(q) => load_queries(&DatasetManifest::load(q)?, &cfg.preprocess())?,
                    None => Vec::new(),
                };
                Ok(Self {
                    support_manifest,
                    support_pool: None,
                    queries,
                })
            }
        }
    }

    /// The `k` supports picked for `seed`.
    pub fn supports(&self, cfg: &RunConfig, seed: u64) -> Result<Vec<SupportSample>> {
        let table = match &cfg.seed_table {
            Some(p) => Some(artifact::read_json::<SeedTable>(p)?),
            None => self.support_manifest.load_seed_table()?,
        };
        match &self.support_pool {
            Some(pool) => {
                let ids = select_support_ids(&self.support_manifest, cfg.k, seed, table.as_ref())?;
                Ok(ids
                    .iter()
                    .map(|id| pool.iter().find(|s| &s.id == id).expect("id from pool").clone())
                    .collect())
            }
            None => select_support(
                &self.support_manifest,
                cfg.k,
                seed,
                table.as_ref(),
                &cfg.preprocess(),
            ),
        }
    }
}

pub fn load_queries(manifest: &DatasetManifest, pre: &PreprocessConfig) -> Result<Vec<Query>> {
    manifest.check_paths()?;
    manifest
        .entries
        .iter()
        .map(|e| {
            Ok(Query {
                id: e.id.clone(),
                image: read_image(&manifest.resolve(&e.image), pre)?,
                mask: preprocess_mask(&read_mask(&manifest.resolve(&e.mask))?, pre),
            })
        })
        .collect()
}

/// Banks and training record of one seed.
#[derive(Debug, Clone)]
pub struct TrainedRun {
    pub seed: u64,
    pub support_ids: Vec<String>,
    pub visual: VisualFeatureBank,
    pub prompts: PromptFeatureBank,
    pub curve: Vec<CurveRow>,
    pub status: TrainStatus,
}

pub fn train_seed(
    cfg: &RunConfig,
    backend: &dyn Backend,
    supports: &[SupportSample],
    seed: u64,
) -> Result<TrainedRun> {
    let visual = build_bank(supports, backend, &cfg.patch_rule)?;
    let lexicon = cfg.lexicon()?;
    let ids: Vec<String> = supports.iter().map(|s| s.id.clone()).collect();
    let fg = build_population(backend, Role::Fg, &cfg.fg_prompts.resolve(Role::Fg), &lexicon, seed, &ids)?;
    let bg = build_population(backend, Role::Bg, &cfg.bg_prompts.resolve(Role::Bg), &lexicon, seed, &ids)?;
    let out = afa::train(&visual, &fg, &bg, backend, &cfg.effective_train(seed))?;
    Ok(TrainedRun {
        seed,
        support_ids: ids,
        visual,
        prompts: out.bank,
        curve: out.curve,
        status: out.status,
    })
}

impl TrainedRun {
    /// Writes `visual_bank/`, `prompt_bank/` and `training_curve.csv`.
    pub fn save(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        let v = dir.join("visual_bank");
        let p = dir.join("prompt_bank");
        let c = dir.join("training_curve.csv");
        self.visual.save(&v)?;
        self.prompts.save(&p)?;
        afa::write_curve(&c, &self.curve)?;
        Ok(vec![v, p, c])
    }

    pub fn load(dir: &Path, backend: &dyn Backend, seed: u64) -> Result<Self> {
        let visual = VisualFeatureBank::load(&dir.join("visual_bank"), backend)?;
        let prompts = PromptFeatureBank::load(&dir.join("prompt_bank"), backend)?;
        Ok(Self {
            seed,
            support_ids: visual.support_ids.clone(),
            status: prompts.fingerprint.status,
            visual,
            prompts,
            curve: Vec::new(),
        })
    }
}

/// Runs `f` on a pool of `workers` threads, or inline for one worker.
pub fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    if workers <= 1 {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    Ok(pool.install(f))
}

/// Segments every query and scores it. Results come back in query order
/// regardless of the worker count.
pub fn segment_queries(
    run: &TrainedRun,
    backend: &dyn Backend,
    queries: &[Query],
    inference: &InferenceConfig,
    workers: usize,
) -> Result<Vec<FusedResult>> {
    with_workers(workers, || {
        queries
            .par_iter()
            .map(|q| segment(&q.image, &run.visual, &run.prompts, backend, inference))
            .collect::<Result<Vec<_>>>()
    })?
}

pub fn evaluate_run(
    cfg: &RunConfig,
    run: &TrainedRun,
    backend: &dyn Backend,
    queries: &[Query],
) -> Result<EvalReport> {
    let results = segment_queries(run, backend, queries, &cfg.inference, cfg.workers)?;
    score_results(cfg, run, queries, &results)
}

pub fn score_results(
    cfg: &RunConfig,
    run: &TrainedRun,
    queries: &[Query],
    results: &[FusedResult],
) -> Result<EvalReport> {
    let mut images = Vec::with_capacity(queries.len());
    let mut pooled = PooledAccumulator::default();
    for (q, r) in queries.iter().zip(results) {
        images.push(ImageMetrics::compute(&q.id, r.mask.view(), r.s.grid.view(), q.mask.view())?);
        if cfg.pooled_metrics {
            pooled.add(r.mask.view(), r.s.grid.view(), q.mask.view())?;
        }
    }
    let fingerprint = serde_json::json!({
        "config_hash": cfg.hash(),
        "seed": run.seed,
        "support_ids": run.support_ids,
        "backend": run.visual.backend_fingerprint,
        "inference": cfg.inference,
        "afa": cfg.afa,
    });
    let report = EvalReport::from_images(images, fingerprint);
    if cfg.pooled_metrics {
        report.pooled(&pooled)
    } else {
        Ok(report)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub mean_fgiou: f64,
    pub mean_auroc: Option<f64>,
}

/// Per-seed aggregates and their average.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiSeedReport {
    pub config_hash: String,
    pub seeds: Vec<SeedSummary>,
    pub mean_fgiou: f64,
    pub mean_auroc: Option<f64>,
}

impl MultiSeedReport {
    pub fn new(config_hash: String, reports: &[(u64, &EvalReport)]) -> Self {
        let seeds: Vec<SeedSummary> = reports
            .iter()
            .map(|(seed, r)| SeedSummary {
                seed: *seed,
                mean_fgiou: r.mean_fgiou,
                mean_auroc: r.mean_auroc,
            })
            .collect();
        let n = seeds.len().max(1) as f64;
        let mean_fgiou = seeds.iter().map(|s| s.mean_fgiou).sum::<f64>() / n;
        let aurocs: Vec<f64> = seeds.iter().filter_map(|s| s.mean_auroc).collect();
        let mean_auroc = (!aurocs.is_empty()).then(|| aurocs.iter().sum::<f64>() / aurocs.len() as f64);
        Self {
            config_hash,
            seeds,
            mean_fgiou,
            mean_auroc,
        }
    }

    pub fn table(&self) -> String {
        let fmt = |a: Option<f64>| a.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"));
        let mut s = format!("{:<8}  {:>7}  {:>7}\n", "seed", "FgIoU", "AUROC");
        for r in &self.seeds {
            s += &format!("{:<8}  {:>7.4}  {:>7}\n", r.seed, r.mean_fgiou, fmt(r.mean_auroc));
        }
        s += &format!("{:<8}  {:>7.4}  {:>7}\n", "mean", self.mean_fgiou, fmt(self.mean_auroc));
        s
    }
}

/// Everything a train-and-evaluate pass produced.
pub struct Experiment {
    pub runs: Vec<TrainedRun>,
    pub reports: Vec<EvalReport>,
    pub summary: MultiSeedReport,
}

/// Trains and evaluates every configured seed on an already-loaded dataset.
pub fn run_experiment(cfg: &RunConfig, backend: &dyn Backend, data: &Dataset) -> Result<Experiment> {
    cfg.validate()?;
    if data.queries.is_empty() {
        return Err(Error::Config("no query images to evaluate".into()));
    }
    let mut runs = Vec::new();
    let mut reports = Vec::new();
    for &seed in &cfg.seeds {
        let supports = data.supports(cfg, seed)?;
        let run = train_seed(cfg, backend, &supports, seed)?;
        if let TrainStatus::Diverged { epoch, step } = run.status {
            return Err(Error::Divergence { epoch, step });
        }
        reports.push(evaluate_run(cfg, &run, backend, &data.queries)?);
        runs.push(run);
    }
    let pairs: Vec<(u64, &EvalReport)> = cfg.seeds.iter().copied().zip(reports.iter()).collect();
    let summary = MultiSeedReport::new(cfg.hash(), &pairs);
    Ok(Experiment {
        runs,
        reports,
        summary,
    })
}

/// Axes swept by the ablation runner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AblationAxis {
    Components,
    FgAttributes,
    BgAttributes,
    Counts,
    Tokens,
    Suppression,
}

impl AblationAxis {
    pub const ALL: [AblationAxis; 6] = [
        Self::Components,
        Self::FgAttributes,
        Self::BgAttributes,
        Self::Counts,
        Self::Tokens,
        Self::Suppression,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Components => "components",
            Self::FgAttributes => "fg-attributes",
            Self::BgAttributes => "bg-attributes",
            Self::Counts => "counts",
            Self::Tokens => "tokens",
            Self::Suppression => "suppression",
        }
    }
}

impl std::str::FromStr for AblationAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|a| a.name() == s).ok_or_else(|| {
            Error::Argument(format!(
                "unknown ablation axis {s:?}; expected components, fg-attributes, \
                 bg-attributes, counts, tokens or suppression"
            ))
        })
    }
}

/// One configuration of a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct Variant {
    pub label: String,
    /// Numeric x position for line plots, if the axis is numeric.
    pub x: Option<f64>,
    /// Series name for grouped plots.
    pub series: String,
    pub config: RunConfig,
}

/// Values swept per axis; empty lists are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    pub counts: Vec<usize>,
    pub ratios: Vec<Ratio>,
    pub fg_budgets: Vec<usize>,
    pub fg_attribute_sets: Vec<Vec<Slot>>,
    pub bg_attribute_sets: Vec<Vec<Slot>>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        use Slot::*;
        Self {
            counts: vec![8, 16, 32, 64],
            ratios: vec![Ratio::new(1, 3), Ratio::ONE, Ratio::new(3, 1)],
            fg_budgets: vec![4, 8, 12, 16],
            fg_attribute_sets: vec![
                vec![Color],
                vec![Style],
                vec![Position],
                vec![Color, Style],
                vec![Color, Style, Position],
            ],
            bg_attribute_sets: vec![vec![Distal], vec![Proximal], vec![Proximal, Distal]],
        }
    }
}

fn slots_label(slots: &[Slot]) -> String {
    slots.iter().map(|s| s.name()).collect::<Vec<_>>().join("+")
}

/// Expands one axis into concrete run configurations.
pub fn ablation_variants(base: &RunConfig, axis: AblationAxis, sweep: &SweepConfig) -> Result<Vec<Variant>> {
    let empty = |what: &str| Error::Argument(format!("sweep over {what} is empty"));
    let v = |label: String, x: Option<f64>, series: &str, config: RunConfig| Variant {
        label,
        x,
        series: series.to_string(),
        config,
    };
    let mut out = Vec::new();
    match axis {
        AblationAxis::Components => {
            let mut c = base.clone();
            c.inference.branches = Branches::Visual;
            c.afa = false;
            out.push(v("visual".into(), None, "components", c));
            let mut c = base.clone();
            c.inference.branches = Branches::Prompt;
            out.push(v("prompt".into(), None, "components", c));
            let mut c = base.clone();
            c.inference.branches = Branches::Both;
            c.afa = false;
            out.push(v("visual+prompt".into(), None, "components", c));
            let mut c = base.clone();
            c.inference.branches = Branches::Both;
            c.afa = true;
            out.push(v("visual+prompt+afa".into(), None, "components", c));
        }
        AblationAxis::Suppression => {
            for on in [true, false] {
                let mut c = base.clone();
                c.inference.suppress = on;
                out.push(v(if on { "on" } else { "off" }.into(), None, "suppression", c));
            }
        }
        AblationAxis::FgAttributes => {
            if sweep.fg_attribute_sets.is_empty() {
                return Err(empty("foreground attributes"));
            }
            for set in &sweep.fg_attribute_sets {
                let mut c = base.clone();
                c.fg_prompts.attributes = Some(set.clone());
                c.fg_prompts.allocation = None;
                out.push(v(slots_label(set), None, "fg-attributes", c));
            }
        }
        AblationAxis::BgAttributes => {
            if sweep.bg_attribute_sets.is_empty() {
                return Err(empty("background attributes"));
            }
            for set in &sweep.bg_attribute_sets {
                let mut c = base.clone();
                c.bg_prompts.attributes = Some(set.clone());
                c.bg_prompts.allocation = None;
                out.push(v(slots_label(set), None, "bg-attributes", c));
            }
        }
        AblationAxis::Counts => {
            if sweep.counts.is_empty() || sweep.ratios.is_empty() {
                return Err(empty("prompt counts"));
            }
            for ratio in &sweep.ratios {
                for &n in &sweep.counts {
                    let mut c = base.clone();
                    for s in [&mut c.fg_prompts, &mut c.bg_prompts] {
                        s.total = Some(n);
                        s.ratio = Some(*ratio);
                    }
                    out.push(v(format!("N={n} ratio={ratio}"), Some(n as f64), &format!("ratio {ratio}"), c));
                }
            }
        }
        AblationAxis::Tokens => {
            if sweep.fg_budgets.is_empty() {
                return Err(empty("token budgets"));
            }
            for &b in &sweep.fg_budgets {
                let mut c = base.clone();
                c.fg_prompts.token_budget = Some(b);
                c.fg_prompts.allocation = None;
                out.push(v(format!("{b} tokens"), Some(b as f64), "fg tokens", c));
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub axis: AblationAxis,
    pub label: String,
    pub series: String,
    pub x: Option<f64>,
    pub fgiou: f64,
    pub auroc: Option<f64>,
}

pub fn run_ablation(
    base: &RunConfig,
    axis: AblationAxis,
    sweep: &SweepConfig,
    backend: &dyn Backend,
    data: &Dataset,
) -> Result<Vec<AblationRow>> {
    let variants = ablation_variants(base, axis, sweep)?;
    let mut rows = Vec::with_capacity(variants.len());
    for var in variants {
        log::info!("ablation {axis:?}: {}", var.label);
        let exp = run_experiment(&var.config, backend, data)?;
        rows.push(AblationRow {
            axis,
            label: var.label,
            series: var.series,
            x: var.x,
            fgiou: exp.summary.mean_fgiou,
            auroc: exp.summary.mean_auroc,
        });
    }
    Ok(rows)
}

pub fn write_ablation_csv(path: &Path, rows: &[AblationRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| Error::Format(format!("ablation csv: {e}"));
    w.write_record(["label", "series", "x", "FgIoU", "AUROC"]).map_err(err)?;
    for r in rows {
        w.write_record([
            r.label.clone(),
            r.series.clone(),
            r.x.map(|x| x.to_string()).unwrap_or_default(),
            format!("{:.6}", r.fgiou),
            r.auroc.map(|a| format!("{a:.6}")).unwrap_or_default(),
        ])
        .map_err(err)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::Format(format!("ablation csv: {e}")))?;
    artifact::write_bytes(path, &bytes)
}
