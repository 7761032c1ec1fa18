//! Adaptive feature alignment: losses, analytic gradients, the SGD trainer
//! and the frozen prompt feature bank it emits.

use std::collections::BTreeSet;
use std::path::Path;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::artifact;
use crate::backend::Backend;
use crate::error::{Error, Result};
use crate::linalg;
use crate::prompt_space::{PromptInstance, PromptPopulation, Ratio, Role, TemplateConfig};
use crate::visual_bank::VisualFeatureBank;

pub const PROMPT_BANK_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub align: f64,
    pub vp: f64,
    pub tri: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            align: 1.0,
            vp: 1.0,
            tri: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    /// Softmax temperature; `None` takes the backend's.
    pub tau: Option<f64>,
    pub weights: LossWeights,
    pub seed: u64,
    /// Average prototype features into `p^f`/`p^b` as well.
    pub include_prototypes: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.002,
            momentum: 0.9,
            weight_decay: 0.0005,
            epochs: 20,
            tau: None,
            weights: LossWeights::default(),
            seed: 0,
            include_prototypes: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let finite_nonneg = |name: &str, v: f64| {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be finite and non-negative, got {v}")))
            }
        };
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        finite_nonneg("momentum", self.momentum)?;
        finite_nonneg("weight_decay", self.weight_decay)?;
        finite_nonneg("align weight", self.weights.align)?;
        finite_nonneg("vp weight", self.weights.vp)?;
        finite_nonneg("tri weight", self.weights.tri)?;
        if let Some(t) = self.tau {
            if !(t.is_finite() && t > 0.0) {
                return Err(Error::Config(format!("tau must be positive, got {t}")));
            }
        }
        Ok(())
    }

    pub fn tau_for(&self, backend: &dyn Backend) -> f64 {
        self.tau.unwrap_or(backend.descriptor().temperature)
    }
}

/// `log(1 + exp(x))` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Two-way InfoNCE `-log softmax` of the foreground similarity, in its
/// stable softplus form.
pub fn loss_vp(z: ArrayView1<f64>, p_f: ArrayView1<f64>, p_b: ArrayView1<f64>, tau: f64) -> Result<f64> {
    if tau.is_nan() || tau <= 0.0 {
        return Err(Error::Argument(format!("temperature must be positive, got {tau}")));
    }
    let (a, b) = (z.dot(&p_f), z.dot(&p_b));
    if !(a.is_finite() && b.is_finite()) {
        return Err(Error::Numeric("loss_vp inputs".into()));
    }
    Ok(softplus((b - a) / tau))
}

/// Hinge on the squared-distance gap `|z - p_f|^2 - |z - p_b|^2`.
pub fn loss_tri(z: ArrayView1<f64>, p_f: ArrayView1<f64>, p_b: ArrayView1<f64>) -> Result<f64> {
    let h = linalg::sq_dist(z, p_f) - linalg::sq_dist(z, p_b);
    if !h.is_finite() {
        return Err(Error::Numeric("loss_tri inputs".into()));
    }
    Ok(h.max(0.0))
}

/// Mean Euclidean distance between each encoded learnable prompt and its
/// encoded prototype.
pub fn loss_align(population: &PromptPopulation, backend: &dyn Backend) -> Result<f64> {
    if population.learnable.is_empty() {
        return Err(Error::Argument("empty prompt population".into()));
    }
    let enc = Encoded::new(population, backend)?;
    Ok(enc.align_loss())
}

/// Encodes a prompt into a unit text feature.
pub fn encode_instance(inst: &PromptInstance, backend: &dyn Backend) -> Result<Array1<f64>> {
    let e = inst.embeddings(backend)?;
    Ok(backend.encode_text(e.view())?.vec)
}

struct Encoded {
    embeds: Vec<Array2<f64>>,
    learnable: Vec<Array1<f64>>,
    prototypes: Vec<Array1<f64>>,
    pairing: Vec<usize>,
}

impl Encoded {
    fn new(pop: &PromptPopulation, backend: &dyn Backend) -> Result<Self> {
        let embeds = pop
            .learnable
            .iter()
            .map(|l| l.embeddings(backend))
            .collect::<Result<Vec<_>>>()?;
        let learnable = embeds
            .iter()
            .map(|e| Ok(backend.encode_text(e.view())?.vec))
            .collect::<Result<Vec<_>>>()?;
        let prototypes = pop
            .prototypes
            .iter()
            .map(|p| encode_instance(p, backend))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            embeds,
            learnable,
            prototypes,
            pairing: pop.pairing.clone(),
        })
    }

    fn align_loss(&self) -> f64 {
        let n = self.learnable.len() as f64;
        self.learnable
            .iter()
            .zip(&self.pairing)
            .map(|(u, &j)| linalg::sq_dist(u.view(), self.prototypes[j].view()).sqrt())
            .sum::<f64>()
            / n
    }

    fn align_grads(&self) -> Vec<Array1<f64>> {
        let n = self.learnable.len() as f64;
        self.learnable
            .iter()
            .zip(&self.pairing)
            .map(|(u, &j)| {
                let diff = u - &self.prototypes[j];
                let d = linalg::norm(diff.view());
                if d > 0.0 {
                    diff / (d * n)
                } else {
                    Array1::zeros(u.len())
                }
            })
            .collect()
    }

    fn average(&self, include_prototypes: bool) -> (Array1<f64>, usize) {
        let dim = self.learnable[0].len();
        let mut sum = Array1::zeros(dim);
        for u in &self.learnable {
            sum += u;
        }
        let mut count = self.learnable.len();
        if include_prototypes {
            for v in &self.prototypes {
                sum += v;
            }
            count += self.prototypes.len();
        }
        (sum / count as f64, count)
    }
}

/// Pooled visual features the objective is evaluated against.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Targets {
    pub fg: Vec<Array1<f64>>,
    pub bg: Vec<Array1<f64>>,
}

impl Targets {
    /// Every pooled vector of the bank's last tapped layer.
    pub fn from_bank(bank: &VisualFeatureBank) -> Self {
        let last = bank.layers.last().expect("bank has layers");
        Self {
            fg: last.pooled_fg.rows().into_iter().map(|r| r.to_owned()).collect(),
            bg: last.pooled_bg.rows().into_iter().map(|r| r.to_owned()).collect(),
        }
    }

    /// The pooled vectors of one support.
    pub fn for_support(bank: &VisualFeatureBank, id: &str) -> Self {
        let last = bank.layers.last().expect("bank has layers");
        let pick = |ids: &[String], m: &Array2<f64>| -> Vec<Array1<f64>> {
            ids.iter()
                .enumerate()
                .filter(|(_, s)| s.as_str() == id)
                .map(|(i, _)| m.row(i).to_owned())
                .collect()
        };
        Self {
            fg: pick(&bank.pooled_fg_ids, &last.pooled_fg),
            bg: pick(&bank.pooled_bg_ids, &last.pooled_bg),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.fg.is_empty() && self.bg.is_empty()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    /// Foreground plus background terms, unweighted.
    pub align: f64,
    pub vp: f64,
    pub tri: f64,
    /// Weighted total.
    pub total: f64,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        self.align.is_finite() && self.vp.is_finite() && self.tri.is_finite() && self.total.is_finite()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Objective {
    pub loss: LossBreakdown,
    /// Gradient per learnable prompt, one row per learnable position.
    pub fg_grads: Vec<Array2<f64>>,
    pub bg_grads: Vec<Array2<f64>>,
}

/// Accumulates the visual-prompt and triplet terms of one branch and their
/// gradients with respect to the raw averages.
struct Branch {
    vp: f64,
    tri: f64,
    grad_own: Array1<f64>,
    grad_other: Array1<f64>,
}

fn branch(
    zs: &[Array1<f64>],
    own: &Array1<f64>,
    other: &Array1<f64>,
    tau: f64,
    w: &LossWeights,
) -> Result<Branch> {
    let dim = own.len();
    let mut out = Branch {
        vp: 0.0,
        tri: 0.0,
        grad_own: Array1::zeros(dim),
        grad_other: Array1::zeros(dim),
    };
    if zs.is_empty() {
        return Ok(out);
    }
    let n = zs.len() as f64;
    let own_n = linalg::norm(own.view());
    let other_n = linalg::norm(other.view());
    if own_n == 0.0 || other_n == 0.0 {
        return Err(Error::Numeric("zero prompt average".into()));
    }
    let own_hat = own / own_n;
    let other_hat = other / other_n;
    let mut g_own_hat = Array1::zeros(dim);
    let mut g_other_hat = Array1::zeros(dim);
    for z in zs {
        let a = z.dot(&own_hat);
        let b = z.dot(&other_hat);
        let x = (b - a) / tau;
        out.vp += softplus(x) / n;
        let s = sigmoid(x) / (tau * n);
        g_own_hat.scaled_add(-s * w.vp, z);
        g_other_hat.scaled_add(s * w.vp, z);

        let h = linalg::sq_dist(z.view(), own.view()) - linalg::sq_dist(z.view(), other.view());
        if h > 0.0 {
            out.tri += h / n;
            out.grad_own.scaled_add(2.0 * w.tri / n, &(own - z));
            out.grad_other.scaled_add(2.0 * w.tri / n, &(z - other));
        }
    }
    // back through the normalization
    let back = |g: Array1<f64>, hat: &Array1<f64>, nrm: f64| (&g - &(hat * hat.dot(&g))) / nrm;
    out.grad_own += &back(g_own_hat, &own_hat, own_n);
    out.grad_other += &back(g_other_hat, &other_hat, other_n);
    Ok(out)
}

fn check_population(pop: &PromptPopulation, role: Role) -> Result<()> {
    if pop.role != role {
        return Err(Error::Argument(format!("expected a {role} population, got {}", pop.role)));
    }
    if pop.learnable.is_empty() || pop.prototypes.is_empty() {
        return Err(Error::Argument(format!("empty {role} population")));
    }
    if pop.pairing.len() != pop.learnable.len() || pop.pairing.iter().any(|&j| j >= pop.prototypes.len()) {
        return Err(Error::Argument(format!("{role} pairing is not total")));
    }
    Ok(())
}

/// Weighted objective over both populations and its gradient with respect
/// to every learnable slot embedding. Background terms swap the roles of
/// the two averages and use pooled background features.
pub fn evaluate(
    fg: &PromptPopulation,
    bg: &PromptPopulation,
    targets: &Targets,
    backend: &dyn Backend,
    cfg: &TrainConfig,
    with_grad: bool,
) -> Result<Objective> {
    check_population(fg, Role::Fg)?;
    check_population(bg, Role::Bg)?;
    if with_grad && !backend.descriptor().supports_text_gradients {
        return Err(Error::Capability(format!(
            "backend {} does not expose text gradients",
            backend.descriptor().name
        )));
    }
    let tau = cfg.tau_for(backend);
    if tau.is_nan() || tau <= 0.0 {
        return Err(Error::Argument(format!("temperature must be positive, got {tau}")));
    }
    let w = &cfg.weights;
    let ef = Encoded::new(fg, backend)?;
    let eb = Encoded::new(bg, backend)?;
    let (pf, nf) = ef.average(cfg.include_prototypes);
    let (pb, nb) = eb.average(cfg.include_prototypes);
    let bf = branch(&targets.fg, &pf, &pb, tau, w)?;
    let bb = branch(&targets.bg, &pb, &pf, tau, w)?;

    let align = ef.align_loss() + eb.align_loss();
    let vp = bf.vp + bb.vp;
    let tri = bf.tri + bb.tri;
    let loss = LossBreakdown {
        align,
        vp,
        tri,
        total: w.align * align + w.vp * vp + w.tri * tri,
    };
    if !with_grad {
        return Ok(Objective {
            loss,
            fg_grads: Vec::new(),
            bg_grads: Vec::new(),
        });
    }
    let g_pf = &bf.grad_own + &bb.grad_other;
    let g_pb = &bf.grad_other + &bb.grad_own;
    let grads = |enc: &Encoded, pop: &PromptPopulation, g_avg: &Array1<f64>, count: usize| {
        let share = g_avg / count as f64;
        enc.align_grads()
            .into_iter()
            .zip(&enc.embeds)
            .zip(&pop.learnable)
            .map(|((ga, emb), inst)| {
                let gu = ga * w.align + &share;
                let full = backend.encode_text_vjp(emb.view(), gu.view())?;
                Ok(learnable_rows(full.view(), inst))
            })
            .collect::<Result<Vec<_>>>()
    };
    Ok(Objective {
        loss,
        fg_grads: grads(&ef, fg, &g_pf, nf)?,
        bg_grads: grads(&eb, bg, &g_pb, nb)?,
    })
}

fn learnable_rows(full: ArrayView2<f64>, inst: &PromptInstance) -> Array2<f64> {
    let idx: Vec<usize> = inst
        .tokens
        .learnable_mask
        .iter()
        .enumerate()
        .filter(|(_, &m)| m)
        .map(|(i, _)| i)
        .collect();
    full.select(Axis(0), &idx)
}

/// Objective against every pooled vector in the bank.
pub fn total_loss(
    fg: &PromptPopulation,
    bg: &PromptPopulation,
    bank: &VisualFeatureBank,
    backend: &dyn Backend,
    cfg: &TrainConfig,
) -> Result<Objective> {
    bank.check_backend(backend)?;
    let targets = Targets::from_bank(bank);
    if targets.fg.is_empty() {
        return Err(Error::Argument("visual bank has no pooled foreground features".into()));
    }
    evaluate(fg, bg, &targets, backend, cfg, true)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub epoch: usize,
    pub l_align: f64,
    pub l_vp: f64,
    pub l_tri: f64,
    pub total: f64,
}

impl CurveRow {
    fn new(epoch: usize, l: &LossBreakdown) -> Self {
        Self {
            epoch,
            l_align: l.align,
            l_vp: l.vp,
            l_tri: l.tri,
            total: l.total,
        }
    }
}

pub fn write_curve(path: &Path, rows: &[CurveRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)
            .map_err(|e| Error::Format(format!("training curve: {e}")))?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::Format(format!("training curve: {e}")))?;
    artifact::write_bytes(path, &bytes)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "lowercase")]
pub enum TrainStatus {
    Completed,
    /// Stopped on a non-finite loss; parameters are the last finite ones.
    Diverged { epoch: usize, step: usize },
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub bank: PromptFeatureBank,
    pub fg: PromptPopulation,
    pub bg: PromptPopulation,
    /// Row 0 holds the initial objective, row `e` the objective after epoch `e`.
    pub curve: Vec<CurveRow>,
    pub status: TrainStatus,
}

impl TrainOutcome {
    pub fn into_result(self) -> Result<Self> {
        match self.status {
            TrainStatus::Completed => Ok(self),
            TrainStatus::Diverged { epoch, step } => Err(Error::Divergence { epoch, step }),
        }
    }
}

struct Sgd {
    lr: f64,
    momentum: f64,
    weight_decay: f64,
    buffers: Vec<Option<Array2<f64>>>,
}

impl Sgd {
    fn new(cfg: &TrainConfig, n: usize) -> Self {
        Self {
            lr: cfg.lr,
            momentum: cfg.momentum,
            weight_decay: cfg.weight_decay,
            buffers: vec![None; n],
        }
    }

    /// Heavy-ball update with coupled weight decay: the first step seeds the
    /// momentum buffer with the raw gradient.
    fn step(&mut self, i: usize, param: &mut Array2<f64>, grad: &Array2<f64>) {
        let g = grad + &(&*param * self.weight_decay);
        let buf = match self.buffers[i].take() {
            Some(mut b) => {
                b *= self.momentum;
                b += &g;
                b
            }
            None => g,
        };
        param.scaled_add(-self.lr, &buf);
        self.buffers[i] = Some(buf);
    }
}

fn finite(pop: &PromptPopulation) -> bool {
    pop.learnable
        .iter()
        .all(|l| l.params.iter().all(|v| v.is_finite()))
}

/// Optimizes the learnable slot embeddings with momentum SGD, one step per
/// support per epoch in support-id order, and freezes the result.
pub fn train(
    bank: &VisualFeatureBank,
    fg: &PromptPopulation,
    bg: &PromptPopulation,
    backend: &dyn Backend,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let all = Targets::from_bank(bank);
    let init = total_loss(fg, bg, bank, backend, cfg)?;
    let mut curve = vec![CurveRow::new(0, &init.loss)];
    if !init.loss.is_finite() {
        return Err(Error::Numeric("initial objective".into()));
    }
    let order: Vec<String> = bank
        .support_ids
        .iter()
        .cloned()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let steps: Vec<Targets> = order
        .iter()
        .map(|id| Targets::for_support(bank, id))
        .filter(|t| !t.is_empty())
        .collect();

    let mut fg = fg.clone();
    let mut bg = bg.clone();
    let mut opt_f = Sgd::new(cfg, fg.learnable.len());
    let mut opt_b = Sgd::new(cfg, bg.learnable.len());
    let mut status = TrainStatus::Completed;
    // populations whose objective last evaluated finite
    let mut good = (fg.clone(), bg.clone());
    'epochs: for epoch in 1..=cfg.epochs {
        for (step, targets) in steps.iter().enumerate() {
            let obj = match evaluate(&fg, &bg, targets, backend, cfg, true) {
                Ok(obj) => obj,
                Err(Error::Numeric(_)) => {
                    status = TrainStatus::Diverged { epoch, step };
                    break 'epochs;
                }
                Err(e) => return Err(e),
            };
            let grads_ok = obj
                .fg_grads
                .iter()
                .chain(&obj.bg_grads)
                .all(|g| g.iter().all(|v| v.is_finite()));
            if !(obj.loss.is_finite() && grads_ok) {
                status = TrainStatus::Diverged { epoch, step };
                break 'epochs;
            }
            good = (fg.clone(), bg.clone());
            for (i, g) in obj.fg_grads.iter().enumerate() {
                opt_f.step(i, &mut fg.learnable[i].params, g);
            }
            for (i, g) in obj.bg_grads.iter().enumerate() {
                opt_b.step(i, &mut bg.learnable[i].params, g);
            }
            if !(finite(&fg) && finite(&bg)) {
                status = TrainStatus::Diverged { epoch, step };
                break 'epochs;
            }
        }
        let l = match evaluate(&fg, &bg, &all, backend, cfg, false) {
            Ok(obj) if obj.loss.is_finite() => obj.loss,
            Ok(_) | Err(Error::Numeric(_)) => {
                status = TrainStatus::Diverged {
                    epoch,
                    step: steps.len(),
                };
                break 'epochs;
            }
            Err(e) => return Err(e),
        };
        good = (fg.clone(), bg.clone());
        log::debug!("epoch {epoch}: total {:.6}", l.total);
        curve.push(CurveRow::new(epoch, &l));
    }
    if let TrainStatus::Diverged { epoch, step } = status {
        log::warn!("objective diverged at epoch {epoch}, step {step}; keeping last finite prompts");
        (fg, bg) = good;
    }
    let bank = PromptFeatureBank::from_populations(&fg, &bg, backend, cfg, bank, status)?;
    Ok(TrainOutcome {
        bank,
        fg,
        bg,
        curve,
        status,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PopulationCounts {
    pub learnable: usize,
    pub prototypes: usize,
}

/// Everything that determined a prompt bank.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptBankFingerprint {
    pub backend_fingerprint: String,
    pub train: TrainConfig,
    pub tau: f64,
    pub fg_template: TemplateConfig,
    pub bg_template: TemplateConfig,
    pub fg_counts: PopulationCounts,
    pub bg_counts: PopulationCounts,
    pub fg_ratio: Option<Ratio>,
    pub bg_ratio: Option<Ratio>,
    pub support_ids: Vec<String>,
    pub fg_prototypes: Vec<String>,
    pub bg_prototypes: Vec<String>,
    pub status: TrainStatus,
}

/// Frozen unit-norm prompt features. Values are stored at float32
/// precision so a saved bank reloads bit-identically.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptFeatureBank {
    pub fg_learnable: Array2<f64>,
    pub fg_prototypes: Array2<f64>,
    pub bg_learnable: Array2<f64>,
    pub bg_prototypes: Array2<f64>,
    pub p_f: Array1<f64>,
    pub p_b: Array1<f64>,
    pub fingerprint: PromptBankFingerprint,
}

fn stack(rows: &[Array1<f64>], dim: usize) -> Array2<f64> {
    let mut out = Array2::zeros((rows.len(), dim));
    for (i, r) in rows.iter().enumerate() {
        out.row_mut(i).assign(r);
    }
    out
}

fn round_f32(mut a: Array2<f64>) -> Array2<f64> {
    a.mapv_inplace(|v| v as f32 as f64);
    a
}

impl PromptFeatureBank {
    pub fn from_populations(
        fg: &PromptPopulation,
        bg: &PromptPopulation,
        backend: &dyn Backend,
        cfg: &TrainConfig,
        visual: &VisualFeatureBank,
        status: TrainStatus,
    ) -> Result<Self> {
        let dim = backend.descriptor().feature_dim;
        let ef = Encoded::new(fg, backend)?;
        let eb = Encoded::new(bg, backend)?;
        let (pf, _) = ef.average(cfg.include_prototypes);
        let (pb, _) = eb.average(cfg.include_prototypes);
        let texts = |p: &PromptPopulation| {
            p.prototypes
                .iter()
                .map(|x| x.text.clone().unwrap_or_default())
                .collect()
        };
        let counts = |p: &PromptPopulation| PopulationCounts {
            learnable: p.learnable.len(),
            prototypes: p.prototypes.len(),
        };
        let ratio = |p: &PromptPopulation| {
            let (l, k) = (p.learnable.len(), p.prototypes.len());
            let g = gcd(l, k).max(1);
            Some(Ratio::new(k / g, l / g))
        };
        let template_cfg = |inst: &PromptInstance| TemplateConfig {
            prefix_len: inst.span(crate::prompt_space::Slot::Prefix).map_or(0, |s| s.len),
            token_budget: inst
                .slots
                .iter()
                .filter(|s| s.slot != crate::prompt_space::Slot::Prefix)
                .map(|s| s.len)
                .sum(),
            attributes: inst
                .slots
                .iter()
                .filter(|s| s.slot != crate::prompt_space::Slot::Prefix)
                .map(|s| s.slot)
                .collect(),
            allocation: Some(
                inst.slots
                    .iter()
                    .filter(|s| s.slot != crate::prompt_space::Slot::Prefix)
                    .map(|s| s.len)
                    .collect(),
            ),
        };
        let row = |v: &Array1<f64>| round_f32(v.clone().insert_axis(Axis(0))).row(0).to_owned();
        Ok(Self {
            fg_learnable: round_f32(stack(&ef.learnable, dim)),
            fg_prototypes: round_f32(stack(&ef.prototypes, dim)),
            bg_learnable: round_f32(stack(&eb.learnable, dim)),
            bg_prototypes: round_f32(stack(&eb.prototypes, dim)),
            p_f: row(&pf),
            p_b: row(&pb),
            fingerprint: PromptBankFingerprint {
                backend_fingerprint: backend.fingerprint().to_string(),
                train: cfg.clone(),
                tau: cfg.tau_for(backend),
                fg_template: template_cfg(&fg.learnable[0]),
                bg_template: template_cfg(&bg.learnable[0]),
                fg_counts: counts(fg),
                bg_counts: counts(bg),
                fg_ratio: ratio(fg),
                bg_ratio: ratio(bg),
                support_ids: visual.support_ids.clone(),
                fg_prototypes: texts(fg),
                bg_prototypes: texts(bg),
                status,
            },
        })
    }

    /// Learnable and prototype foreground features, stacked.
    pub fn fg_features(&self) -> Array2<f64> {
        ndarray::concatenate(Axis(0), &[self.fg_learnable.view(), self.fg_prototypes.view()])
            .expect("same width")
    }

    pub fn bg_features(&self) -> Array2<f64> {
        ndarray::concatenate(Axis(0), &[self.bg_learnable.view(), self.bg_prototypes.view()])
            .expect("same width")
    }

    pub fn dim(&self) -> usize {
        self.p_f.len()
    }

    pub fn tau(&self) -> f64 {
        self.fingerprint.tau
    }

    pub fn check_backend(&self, backend: &dyn Backend) -> Result<()> {
        if self.fingerprint.backend_fingerprint != backend.fingerprint() {
            return Err(Error::BackendMismatch {
                expected: self.fingerprint.backend_fingerprint.clone(),
                found: backend.fingerprint().to_string(),
            });
        }
        Ok(())
    }

    fn blocks(&self) -> [ArrayView2<'_, f64>; 6] {
        [
            self.fg_learnable.view(),
            self.fg_prototypes.view(),
            self.bg_learnable.view(),
            self.bg_prototypes.view(),
            self.p_f.view().insert_axis(Axis(0)),
            self.p_b.view().insert_axis(Axis(0)),
        ]
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let bytes = artifact::f32_bytes(self.blocks());
        let meta = PromptBankMeta {
            format_version: PROMPT_BANK_FORMAT_VERSION,
            kind: "prompt".into(),
            dim: self.dim(),
            fingerprint: self.fingerprint.clone(),
            vectors_sha256: artifact::sha256_hex(&bytes),
        };
        artifact::write_bytes(&dir.join("vectors.f32"), &bytes)?;
        artifact::write_json(&dir.join("bank.json"), &meta)
    }

    pub fn load(dir: &Path, backend: &dyn Backend) -> Result<Self> {
        let bank = Self::load_unchecked(dir)?;
        bank.check_backend(backend)?;
        Ok(bank)
    }

    pub fn load_unchecked(dir: &Path) -> Result<Self> {
        let meta = read_prompt_meta(dir)?;
        let f = &meta.fingerprint;
        let d = meta.dim;
        let shapes = [
            (f.fg_counts.learnable, d),
            (f.fg_counts.prototypes, d),
            (f.bg_counts.learnable, d),
            (f.bg_counts.prototypes, d),
            (1, d),
            (1, d),
        ];
        let path = dir.join("vectors.f32");
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        if artifact::sha256_hex(&bytes) != meta.vectors_sha256 {
            return Err(Error::Format(format!("{}: checksum mismatch", path.display())));
        }
        let mut b = artifact::read_f32_blocks(&path, &shapes)?.into_iter();
        let mut next = || b.next().unwrap();
        Ok(Self {
            fg_learnable: next(),
            fg_prototypes: next(),
            bg_learnable: next(),
            bg_prototypes: next(),
            p_f: next().slice(s![0, ..]).to_owned(),
            p_b: next().slice(s![0, ..]).to_owned(),
            fingerprint: meta.fingerprint,
        })
    }
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PromptBankMeta {
    pub format_version: u32,
    pub kind: String,
    pub dim: usize,
    pub fingerprint: PromptBankFingerprint,
    pub vectors_sha256: String,
}

pub fn read_prompt_meta(dir: &Path) -> Result<PromptBankMeta> {
    let meta: PromptBankMeta = artifact::read_json(&dir.join("bank.json"))?;
    if meta.format_version != PROMPT_BANK_FORMAT_VERSION || meta.kind != "prompt" {
        return Err(Error::Format(format!(
            "{}: not a version-{PROMPT_BANK_FORMAT_VERSION} prompt bank",
            dir.display()
        )));
    }
    Ok(meta)
}
