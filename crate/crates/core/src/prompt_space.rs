//! Prompt templates with learnable slots, prototype prompts and populations.
//!
//! Foreground template: `[A]..[A] [color] [style] text [position]`.
//! Background template: `[A]..[A] [proximal] with [distal]`.
//! Start/end markers are the frozen boundary tokens of every sequence.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::artifact;
use crate::backend::{Backend, TokenSequence, END_ID, START_ID};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Fg,
    Bg,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::Fg => "fg",
            Role::Bg => "bg",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptKind {
    Learnable,
    Prototype,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Slot {
    Prefix,
    Color,
    Style,
    Position,
    Proximal,
    Distal,
}

impl Slot {
    pub fn name(self) -> &'static str {
        match self {
            Slot::Prefix => "A",
            Slot::Color => "color",
            Slot::Style => "style",
            Slot::Position => "position",
            Slot::Proximal => "proximal",
            Slot::Distal => "distal",
        }
    }

    pub fn role(self) -> Option<Role> {
        match self {
            Slot::Prefix => None,
            Slot::Color | Slot::Style | Slot::Position => Some(Role::Fg),
            Slot::Proximal | Slot::Distal => Some(Role::Bg),
        }
    }
}

/// Template layout for one role, in sequence order.
fn layout(role: Role) -> (&'static [Slot], usize, &'static str) {
    // (attribute order, index of the fixed word among attributes, fixed word)
    match role {
        Role::Fg => (&[Slot::Color, Slot::Style, Slot::Position], 2, "text"),
        Role::Bg => (&[Slot::Proximal, Slot::Distal], 1, "with"),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotSpan {
    pub slot: Slot,
    pub start: usize,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplateConfig {
    /// Length of the adaptive prefix `[A]`.
    pub prefix_len: usize,
    /// Trainable tokens shared by the attribute slots.
    pub token_budget: usize,
    /// Attribute slots present, a subset of the role's attributes.
    pub attributes: Vec<Slot>,
    /// Explicit per-attribute token counts; overrides the even split.
    #[serde(default)]
    pub allocation: Option<Vec<usize>>,
}

impl TemplateConfig {
    pub fn foreground() -> Self {
        Self {
            prefix_len: 2,
            token_budget: 8,
            attributes: vec![Slot::Color, Slot::Style, Slot::Position],
            allocation: None,
        }
    }

    pub fn background() -> Self {
        Self {
            prefix_len: 2,
            token_budget: 4,
            attributes: vec![Slot::Proximal, Slot::Distal],
            allocation: None,
        }
    }

    pub fn for_role(role: Role) -> Self {
        match role {
            Role::Fg => Self::foreground(),
            Role::Bg => Self::background(),
        }
    }

    /// Token count per present attribute: an even split of the budget with
    /// the remainder going to earlier slots (8 -> 3/3/2, 4 -> 2/2).
    pub fn allocate(&self) -> Result<Vec<usize>> {
        let n = self.attributes.len();
        if let Some(a) = &self.allocation {
            if a.len() != n || a.iter().sum::<usize>() != self.token_budget || a.contains(&0) {
                return Err(Error::Argument(format!(
                    "allocation {a:?} does not split {} tokens over {n} slots",
                    self.token_budget
                )));
            }
            return Ok(a.clone());
        }
        if self.token_budget < n {
            return Err(Error::Argument(format!(
                "token budget {} is smaller than the {n} attribute slots",
                self.token_budget
            )));
        }
        if n == 0 {
            return Ok(Vec::new());
        }
        let base = self.token_budget / n;
        let extra = self.token_budget % n;
        Ok((0..n).map(|i| base + usize::from(i < extra)).collect())
    }

    fn check_role(&self, role: Role) -> Result<()> {
        let (order, _, _) = layout(role);
        for s in &self.attributes {
            if !order.contains(s) {
                return Err(Error::Argument(format!("slot {} is not a {role} attribute", s.name())));
            }
        }
        let mut seen = self.attributes.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.attributes.len() {
            return Err(Error::Argument("repeated attribute slot".into()));
        }
        Ok(())
    }

    fn present_in_order(&self, role: Role) -> Vec<Slot> {
        let (order, _, _) = layout(role);
        order
            .iter()
            .copied()
            .filter(|s| self.attributes.contains(s))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptInstance {
    pub role: Role,
    pub kind: PromptKind,
    pub tokens: TokenSequence,
    pub slots: Vec<SlotSpan>,
    /// One row per learnable position, in sequence order. Empty for prototypes.
    pub params: Array2<f64>,
    /// Source text of a prototype.
    pub text: Option<String>,
    pub fine_grained: bool,
}

impl PromptInstance {
    pub fn learnable_count(&self) -> usize {
        self.tokens.learnable_count()
    }

    pub fn span(&self, slot: Slot) -> Option<&SlotSpan> {
        self.slots.iter().find(|s| s.slot == slot)
    }

    /// Placeholder rendering such as `<A><A> <color> <style> text <position>`.
    pub fn skeleton(&self, backend: &dyn Backend) -> String {
        let mut parts: Vec<String> = Vec::new();
        let mut prefix = String::new();
        let mut i = 0;
        while i < self.tokens.len() {
            if let Some(span) = self.slots.iter().find(|s| s.start == i && s.len > 0) {
                if span.slot == Slot::Prefix {
                    prefix = "⟨A⟩".repeat(span.len);
                } else {
                    parts.push(format!("⟨{}⟩", span.slot.name()));
                }
                i += span.len;
                continue;
            }
            let id = self.tokens.ids[i];
            if id != START_ID && id != END_ID {
                let word = backend.vocabulary().word(id).unwrap_or("<unk>");
                parts.push(word.to_string());
            }
            i += 1;
        }
        if !prefix.is_empty() {
            parts.insert(0, prefix);
        }
        parts.join(" ")
    }

    /// Embedding rows fed to the text encoder.
    pub fn embeddings(&self, backend: &dyn Backend) -> Result<Array2<f64>> {
        backend.embed_tokens(&self.tokens, self.params.view())
    }
}

fn build_template(backend: &dyn Backend, role: Role, cfg: &TemplateConfig) -> Result<PromptInstance> {
    cfg.check_role(role)?;
    let alloc = cfg.allocate()?;
    let present = cfg.present_in_order(role);
    let (order, word_at, word) = layout(role);
    let word_id = backend.vocabulary().word_id(word);
    let by_slot: BTreeMap<Slot, usize> = cfg
        .attributes
        .iter()
        .copied()
        .zip(alloc.iter().copied())
        .collect();

    let mut seq = TokenSequence::default();
    let mut slots = Vec::new();
    seq.push_fixed(START_ID);
    let mut push_slot = |seq: &mut TokenSequence, slot: Slot, len: usize| {
        slots.push(SlotSpan {
            slot,
            start: seq.len(),
            len,
        });
        for _ in 0..len {
            seq.push_learnable();
        }
    };
    push_slot(&mut seq, Slot::Prefix, cfg.prefix_len);
    for (i, slot) in order.iter().enumerate() {
        if i == word_at {
            seq.push_fixed(word_id);
        }
        if present.contains(slot) {
            push_slot(&mut seq, *slot, by_slot[slot]);
        }
    }
    if word_at >= order.len() {
        seq.push_fixed(word_id);
    }
    seq.push_fixed(END_ID);
    seq.validate(backend.descriptor().context_length)?;
    let n = seq.learnable_count();
    Ok(PromptInstance {
        role,
        kind: PromptKind::Learnable,
        tokens: seq,
        slots,
        params: Array2::zeros((n, backend.descriptor().feature_dim)),
        text: None,
        fine_grained: false,
    })
}

/// Foreground template `[A]x prefix, color, style, "text", position` with
/// zero-initialized parameters.
pub fn build_fg_template(backend: &dyn Backend, cfg: &TemplateConfig) -> Result<PromptInstance> {
    build_template(backend, Role::Fg, cfg)
}

/// Background template `[A]x prefix, proximal, "with", distal`.
pub fn build_bg_template(backend: &dyn Backend, cfg: &TemplateConfig) -> Result<PromptInstance> {
    build_template(backend, Role::Bg, cfg)
}

/// Phrase per attribute for one image, as produced offline by a text
/// generator. Every slot of the active template must be filled.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Description {
    pub color: Option<String>,
    pub style: Option<String>,
    pub position: Option<String>,
    pub proximal: Option<String>,
    pub distal: Option<String>,
}

impl Description {
    pub fn get(&self, slot: Slot) -> Option<&str> {
        match slot {
            Slot::Prefix => None,
            Slot::Color => self.color.as_deref(),
            Slot::Style => self.style.as_deref(),
            Slot::Position => self.position.as_deref(),
            Slot::Proximal => self.proximal.as_deref(),
            Slot::Distal => self.distal.as_deref(),
        }
    }

    fn fills(&self, slots: &[Slot]) -> bool {
        slots
            .iter()
            .all(|s| self.get(*s).is_some_and(|p| !p.trim().is_empty()))
    }
}

/// Candidate words per attribute plus per-support fine-grained descriptions.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttributeLexicon {
    pub color: Vec<String>,
    pub style: Vec<String>,
    pub position: Vec<String>,
    pub proximal: Vec<String>,
    pub distal: Vec<String>,
    pub fine_grained: BTreeMap<String, Description>,
}

impl AttributeLexicon {
    pub fn load(path: &Path) -> Result<Self> {
        artifact::read_json(path)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        artifact::write_json(path, self)
    }

    pub fn candidates(&self, slot: Slot) -> &[String] {
        match slot {
            Slot::Prefix => &[],
            Slot::Color => &self.color,
            Slot::Style => &self.style,
            Slot::Position => &self.position,
            Slot::Proximal => &self.proximal,
            Slot::Distal => &self.distal,
        }
    }

    /// Lexicon matching the colors of the bundled synthetic scenes.
    pub fn synthetic() -> Self {
        let v = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect::<Vec<_>>();
        Self {
            color: v(&["red", "yellow", "orange", "bright red", "bright yellow"]),
            style: v(&["bold", "thick", "painted", "printed", "handwritten"]),
            position: v(&["in the center", "at the top", "on the left", "on the right", "at the bottom"]),
            proximal: v(&[
                "dark blue wall",
                "green board",
                "dark gray wall",
                "blue banner",
                "green fabric",
                "gray metal",
                "dark brick wall",
                "blue poster",
            ]),
            distal: v(&[
                "blue sky",
                "green trees",
                "dark buildings",
                "gray buildings",
                "green field",
                "blue water",
                "dark street",
                "gray clouds",
            ]),
            fine_grained: BTreeMap::new(),
        }
    }
}

/// Source of fine-grained descriptions for a support image. Descriptions
/// are produced offline; implementations here only read them back.
pub trait DescriptionSource {
    fn describe(&self, support_id: &str) -> Option<&Description>;
}

impl DescriptionSource for AttributeLexicon {
    fn describe(&self, support_id: &str) -> Option<&Description> {
        self.fine_grained.get(support_id)
    }
}

fn compose(role: Role, present: &[Slot], phrase: impl Fn(Slot) -> String) -> String {
    let (order, word_at, word) = layout(role);
    let mut parts = vec!["a".to_string()];
    for (i, slot) in order.iter().enumerate() {
        if i == word_at {
            parts.push(word.to_string());
        }
        if present.contains(slot) {
            parts.push(phrase(*slot));
        }
    }
    if word_at >= order.len() {
        parts.push(word.to_string());
    }
    parts.join(" ")
}

/// Tokenizes a prototype sentence and records the span of each phrase.
fn prototype_instance(
    backend: &dyn Backend,
    role: Role,
    present: &[Slot],
    phrase: impl Fn(Slot) -> String,
    fine_grained: bool,
) -> Result<PromptInstance> {
    let text = compose(role, present, &phrase);
    let tokens = backend.tokenize(&text)?;
    let vocab = backend.vocabulary();
    let (order, word_at, _) = layout(role);
    let mut slots = vec![SlotSpan {
        slot: Slot::Prefix,
        start: 1,
        len: 1,
    }];
    let mut pos = 2;
    for (i, slot) in order.iter().enumerate() {
        if i == word_at {
            pos += 1;
        }
        if present.contains(slot) {
            let len = vocab.words_of(&phrase(*slot)).len();
            slots.push(SlotSpan {
                slot: *slot,
                start: pos,
                len,
            });
            pos += len;
        }
    }
    Ok(PromptInstance {
        role,
        kind: PromptKind::Prototype,
        tokens,
        slots,
        params: Array2::zeros((0, backend.descriptor().feature_dim)),
        text: Some(text),
        fine_grained,
    })
}

/// Frozen prototype prompts: every fine-grained description of the active
/// supports first, then a seeded sample of attribute-word combinations.
pub fn instantiate_prototypes(
    backend: &dyn Backend,
    lexicon: &AttributeLexicon,
    role: Role,
    template: &TemplateConfig,
    count: usize,
    seed: u64,
    active_supports: &[String],
) -> Result<Vec<PromptInstance>> {
    template.check_role(role)?;
    let present = template.present_in_order(role);
    for slot in &present {
        if lexicon.candidates(*slot).is_empty() {
            return Err(Error::Config(format!("lexicon has no {} candidates", slot.name())));
        }
    }
    let mut out = Vec::with_capacity(count);
    for id in active_supports {
        if out.len() == count {
            break;
        }
        if let Some(desc) = lexicon.describe(id) {
            if !desc.fills(&present) {
                return Err(Error::Config(format!(
                    "description for {id} does not fill every {role} slot"
                )));
            }
            out.push(prototype_instance(
                backend,
                role,
                &present,
                |s| desc.get(s).unwrap().trim().to_string(),
                true,
            )?);
        }
    }
    let remaining = count - out.len();
    let radices: Vec<usize> = present
        .iter()
        .map(|s| lexicon.candidates(*s).len())
        .collect();
    let combos = radices
        .iter()
        .try_fold(1usize, |acc, &r| acc.checked_mul(r))
        .unwrap_or(usize::MAX);
    if remaining > combos {
        return Err(Error::Argument(format!(
            "{count} {role} prototypes requested but only {} combinations and {} descriptions exist",
            combos,
            out.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ role_salt(role));
    let mut picks = rand::seq::index::sample(&mut rng, combos, remaining).into_vec();
    picks.sort_unstable();
    for mut code in picks {
        let mut choice = BTreeMap::new();
        for (slot, &r) in present.iter().zip(&radices).rev() {
            choice.insert(*slot, lexicon.candidates(*slot)[code % r].clone());
            code /= r;
        }
        out.push(prototype_instance(
            backend,
            role,
            &present,
            |s| choice[&s].clone(),
            false,
        )?);
    }
    Ok(out)
}

fn role_salt(role: Role) -> u64 {
    match role {
        Role::Fg => 0x5eed_f00d,
        Role::Bg => 0x5eed_b00c,
    }
}

/// Ratio of prototypes to learnable prompts, as a fraction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ratio {
    pub num: usize,
    pub den: usize,
}

impl Ratio {
    pub const ONE: Ratio = Ratio { num: 1, den: 1 };

    pub fn new(num: usize, den: usize) -> Self {
        Self { num, den }
    }

    pub fn value(&self) -> f64 {
        self.num as f64 / self.den as f64
    }

    /// Splits `total` into (learnable, prototypes).
    pub fn split(&self, total: usize) -> Result<(usize, usize)> {
        if self.num == 0 || self.den == 0 {
            return Err(Error::Argument("prototype ratio must be positive".into()));
        }
        let parts = self.num + self.den;
        if total == 0 || !total.is_multiple_of(parts) {
            let step = parts;
            let lower = (total / step) * step;
            let upper = lower + step;
            let suggestion = if lower == 0 {
                format!("{upper}")
            } else {
                format!("{lower} or {upper}")
            };
            return Err(Error::Argument(format!(
                "{total} prompts cannot be split {}:{} into prototypes and learnable prompts; try {suggestion}",
                self.num, self.den
            )));
        }
        let unit = total / parts;
        Ok((unit * self.den, unit * self.num))
    }
}

impl std::str::FromStr for Ratio {
    type Err = Error;

    /// Parses `a/b` or a whole number `a` (meaning `a/1`).
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Argument(format!("bad ratio {s:?}; expected a/b"));
        let (num, den) = match s.split_once('/') {
            Some((a, b)) => (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?),
            None => (s.trim().parse().map_err(|_| bad())?, 1),
        };
        if num == 0 || den == 0 {
            return Err(bad());
        }
        Ok(Ratio { num, den })
    }
}

impl fmt::Display for Ratio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.num, self.den)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationConfig {
    pub template: TemplateConfig,
    /// Learnable plus prototype prompts.
    pub total: usize,
    pub ratio: Ratio,
    /// Standard deviation of the Gaussian noise added to initial slots.
    pub init_noise: f64,
}

impl PopulationConfig {
    pub fn for_role(role: Role) -> Self {
        Self {
            template: TemplateConfig::for_role(role),
            total: 32,
            ratio: Ratio::ONE,
            init_noise: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptPopulation {
    pub role: Role,
    pub learnable: Vec<PromptInstance>,
    pub prototypes: Vec<PromptInstance>,
    /// Prototype index paired with each learnable prompt.
    pub pairing: Vec<usize>,
}

impl PromptPopulation {
    pub fn paired(&self, i: usize) -> &PromptInstance {
        &self.prototypes[self.pairing[i]]
    }
}

/// Learnable prompts paired round-robin with seeded prototypes. Each
/// learnable prompt starts at its prototype: slots are filled with the
/// prototype's phrase embeddings, shifted so both mean embeddings coincide,
/// plus seeded Gaussian noise.
pub fn build_population(
    backend: &dyn Backend,
    role: Role,
    cfg: &PopulationConfig,
    lexicon: &AttributeLexicon,
    seed: u64,
    active_supports: &[String],
) -> Result<PromptPopulation> {
    let (n_learn, n_proto) = cfg.ratio.split(cfg.total)?;
    let prototypes = instantiate_prototypes(
        backend,
        lexicon,
        role,
        &cfg.template,
        n_proto,
        seed,
        active_supports,
    )?;
    let template = build_template(backend, role, &cfg.template)?;
    let noise = Normal::new(0.0, cfg.init_noise)
        .map_err(|_| Error::Argument(format!("bad init noise {}", cfg.init_noise)))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ role_salt(role));
    let mut learnable = Vec::with_capacity(n_learn);
    let pairing: Vec<usize> = (0..n_learn).map(|i| i % n_proto).collect();
    for &p in &pairing {
        let mut inst = template.clone();
        inst.params = init_from_prototype(backend, &template, &prototypes[p])?;
        if cfg.init_noise > 0.0 {
            inst.params.mapv_inplace(|v| v + noise.sample(&mut rng));
        }
        learnable.push(inst);
    }
    Ok(PromptPopulation {
        role,
        learnable,
        prototypes,
        pairing,
    })
}

fn init_from_prototype(
    backend: &dyn Backend,
    template: &PromptInstance,
    proto: &PromptInstance,
) -> Result<Array2<f64>> {
    let proto_emb = proto.embeddings(backend)?;
    let proto_mean = proto_emb.mean_axis(Axis(0)).expect("non-empty prototype");
    let dim = backend.descriptor().feature_dim;
    let mut rows: Vec<Array1<f64>> = Vec::with_capacity(template.learnable_count());
    for span in &template.slots {
        let phrase: Vec<Array1<f64>> = proto
            .span(span.slot)
            .map(|s| (s.start..s.start + s.len).map(|i| proto_emb.row(i).to_owned()).collect())
            .unwrap_or_default();
        for j in 0..span.len {
            rows.push(if phrase.is_empty() {
                proto_mean.clone()
            } else {
                phrase[j % phrase.len()].clone()
            });
        }
    }
    let mut params = Array2::zeros((rows.len(), dim));
    for (i, r) in rows.iter().enumerate() {
        params.row_mut(i).assign(r);
    }
    if params.nrows() == 0 {
        return Ok(params);
    }
    // shift slots so the template's mean embedding equals the prototype's
    let full = backend.embed_tokens(&template.tokens, params.view())?;
    let gap = &proto_mean * full.nrows() as f64 - full.sum_axis(Axis(0));
    let shift = gap / params.nrows() as f64;
    params += &shift;
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::make_toy_backend;
    use crate::linalg;

    fn toy() -> crate::backend::LinearBackend {
        make_toy_backend(1, 16, 4).unwrap()
    }

    #[test]
    fn default_fg_template() {
        let b = toy();
        let t = build_fg_template(&b, &TemplateConfig::foreground()).unwrap();
        assert_eq!(t.learnable_count(), 10);
        assert_eq!(t.skeleton(&b), "⟨A⟩⟨A⟩ ⟨color⟩ ⟨style⟩ text ⟨position⟩");
        let lens: Vec<_> = t.slots.iter().map(|s| (s.slot, s.len)).collect();
        assert_eq!(
            lens,
            vec![(Slot::Prefix, 2), (Slot::Color, 3), (Slot::Style, 3), (Slot::Position, 2)]
        );
        assert!(t.tokens.ids.contains(&b.vocabulary().word_id("text")));
    }

    #[test]
    fn default_bg_template() {
        let b = toy();
        let t = build_bg_template(&b, &TemplateConfig::background()).unwrap();
        assert_eq!(t.learnable_count(), 6);
        assert_eq!(t.skeleton(&b), "⟨A⟩⟨A⟩ ⟨proximal⟩ with ⟨distal⟩");
    }

    #[test]
    fn prefix_free_template() {
        let b = toy();
        let cfg = TemplateConfig {
            prefix_len: 0,
            ..TemplateConfig::foreground()
        };
        let t = build_fg_template(&b, &cfg).unwrap();
        assert_eq!(t.learnable_count(), 8);
        assert_eq!(t.skeleton(&b), "⟨color⟩ ⟨style⟩ text ⟨position⟩");
    }

    #[test]
    fn distal_only_background() {
        let b = toy();
        let cfg = TemplateConfig {
            attributes: vec![Slot::Distal],
            ..TemplateConfig::background()
        };
        let t = build_bg_template(&b, &cfg).unwrap();
        assert!(t.span(Slot::Proximal).is_none());
        assert_eq!(t.span(Slot::Distal).unwrap().len, 4);
        assert_eq!(t.skeleton(&b), "⟨A⟩⟨A⟩ with ⟨distal⟩");
    }

    #[test]
    fn small_budget_rejected() {
        let b = toy();
        let cfg = TemplateConfig {
            token_budget: 2,
            ..TemplateConfig::foreground()
        };
        assert!(matches!(build_fg_template(&b, &cfg), Err(Error::Argument(_))));
    }

    #[test]
    fn wrong_role_attribute_rejected() {
        let b = toy();
        let cfg = TemplateConfig {
            attributes: vec![Slot::Distal],
            ..TemplateConfig::foreground()
        };
        assert!(build_fg_template(&b, &cfg).is_err());
    }

    fn single(xs: &[&str]) -> Vec<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn prototype_sentences() {
        let b = toy();
        let lex = AttributeLexicon {
            color: single(&["Black"]),
            style: single(&["italic cursive"]),
            position: single(&["in the center"]),
            proximal: single(&["Large banner"]),
            distal: single(&["huge buildings"]),
            ..Default::default()
        };
        let fg = instantiate_prototypes(&b, &lex, Role::Fg, &TemplateConfig::foreground(), 1, 9, &[])
            .unwrap();
        assert_eq!(
            fg[0].text.as_deref().unwrap().to_lowercase(),
            "a black italic cursive text in the center"
        );
        assert_eq!(fg[0].span(Slot::Style).unwrap().len, 2);
        let bg = instantiate_prototypes(&b, &lex, Role::Bg, &TemplateConfig::background(), 1, 9, &[])
            .unwrap();
        assert_eq!(
            bg[0].text.as_deref().unwrap().to_lowercase(),
            "a large banner with huge buildings"
        );
        for seed in 0..5 {
            let again =
                instantiate_prototypes(&b, &lex, Role::Fg, &TemplateConfig::foreground(), 1, seed, &[])
                    .unwrap();
            assert_eq!(again, fg);
        }
    }

    #[test]
    fn fine_grained_descriptions_come_first() {
        let b = toy();
        let mut lex = AttributeLexicon::synthetic();
        lex.fine_grained.insert(
            "s1".into(),
            Description {
                color: Some("gold".into()),
                style: Some("neon".into()),
                position: Some("at the top".into()),
                ..Default::default()
            },
        );
        let p = instantiate_prototypes(
            &b,
            &lex,
            Role::Fg,
            &TemplateConfig::foreground(),
            4,
            1,
            &["s1".into(), "s2".into()],
        )
        .unwrap();
        assert_eq!(p.len(), 4);
        assert!(p[0].fine_grained);
        assert_eq!(p[0].text.as_deref(), Some("a gold neon text at the top"));
        assert!(p[1..].iter().all(|x| !x.fine_grained));
        // incomplete description for background slots
        assert!(instantiate_prototypes(
            &b,
            &lex,
            Role::Bg,
            &TemplateConfig::background(),
            2,
            1,
            &["s1".into()]
        )
        .is_err());
    }

    #[test]
    fn empty_attribute_is_config_error() {
        let b = toy();
        let mut lex = AttributeLexicon::synthetic();
        lex.style.clear();
        assert!(matches!(
            instantiate_prototypes(&b, &lex, Role::Fg, &TemplateConfig::foreground(), 1, 0, &[]),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn too_many_prototypes_rejected() {
        let b = toy();
        let lex = AttributeLexicon::synthetic();
        assert!(matches!(
            instantiate_prototypes(&b, &lex, Role::Bg, &TemplateConfig::background(), 65, 0, &[]),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn ratio_split() {
        assert_eq!(Ratio::ONE.split(32).unwrap(), (16, 16));
        assert_eq!(Ratio::new(1, 3).split(32).unwrap(), (24, 8));
        assert_eq!(Ratio::new(3, 1).split(8).unwrap(), (2, 6));
        assert_eq!(Ratio::ONE.split(2).unwrap(), (1, 1));
        let err = Ratio::new(1, 3).split(30).unwrap_err().to_string();
        assert!(err.contains("28 or 32"), "{err}");
    }

    #[test]
    fn default_populations() {
        let b = toy();
        let lex = AttributeLexicon::synthetic();
        for role in [Role::Fg, Role::Bg] {
            let pop = build_population(&b, role, &PopulationConfig::for_role(role), &lex, 1, &[])
                .unwrap();
            assert_eq!(pop.learnable.len(), 16);
            assert_eq!(pop.prototypes.len(), 16);
            assert!(pop.pairing.iter().enumerate().all(|(i, &p)| p == i % 16));
        }
        let tiny = PopulationConfig {
            total: 2,
            ..PopulationConfig::for_role(Role::Fg)
        };
        let pop = build_population(&b, Role::Fg, &tiny, &lex, 1, &[]).unwrap();
        assert_eq!((pop.learnable.len(), pop.prototypes.len()), (1, 1));
    }

    #[test]
    fn noiseless_init_matches_prototype_encoding() {
        let b = toy();
        let lex = AttributeLexicon::synthetic();
        for role in [Role::Fg, Role::Bg] {
            let cfg = PopulationConfig {
                init_noise: 0.0,
                total: 8,
                ..PopulationConfig::for_role(role)
            };
            let pop = build_population(&b, role, &cfg, &lex, 3, &[]).unwrap();
            for (i, l) in pop.learnable.iter().enumerate() {
                let gl = b.encode_text(l.embeddings(&b).unwrap().view()).unwrap().vec;
                let gp = b
                    .encode_text(pop.paired(i).embeddings(&b).unwrap().view())
                    .unwrap()
                    .vec;
                assert!(linalg::sq_dist(gl.view(), gp.view()).sqrt() < 1e-12);
            }
        }
    }

    #[test]
    fn prototypes_are_pure() {
        let b = toy();
        let lex = AttributeLexicon::synthetic();
        let cfg = TemplateConfig::foreground();
        let a = instantiate_prototypes(&b, &lex, Role::Fg, &cfg, 10, 42, &[]).unwrap();
        assert_eq!(a, instantiate_prototypes(&b, &lex, Role::Fg, &cfg, 10, 42, &[]).unwrap());
        assert_ne!(a, instantiate_prototypes(&b, &lex, Role::Fg, &cfg, 10, 43, &[]).unwrap());
    }
}
