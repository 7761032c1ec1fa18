//! Fixtures and brute-force oracles shared by the integration tests.
#![allow(dead_code)]

use std::collections::HashSet;

use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use textseg_core::afa::{evaluate, LossWeights, Targets, TrainConfig};
use textseg_core::backend::{make_toy_backend, LinearBackend};
use textseg_core::data::{synth_generate, Mask, SynthConfig};
use textseg_core::prompt_space::{build_population, AttributeLexicon, PopulationConfig, PromptPopulation, Role};
use textseg_core::visual_bank::{build_bank, PatchRule, VisualFeatureBank};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Small scenes so banks build quickly.
pub fn small_scenes(seed: u64, count: usize) -> SynthConfig {
    SynthConfig {
        canvas: 32,
        glyph_size: (10, 14),
        ..SynthConfig::separable(seed, count)
    }
}

pub struct GradFixture {
    pub backend: LinearBackend,
    pub bank: VisualFeatureBank,
    pub fg: PromptPopulation,
    pub bg: PromptPopulation,
    pub tau: f64,
}

/// A random toy configuration: backend, supports, population sizes, noise
/// and temperature all drawn from `seed`.
pub fn random_grad_fixture(seed: u64) -> GradFixture {
    let mut r = rng(seed);
    let dim = [8, 16, 32][r.random_range(0..3)];
    let backend = make_toy_backend(r.random_range(0..1000), dim, 4).unwrap();
    let supports = synth_generate(&small_scenes(r.random_range(0..1000), r.random_range(1..=3))).unwrap();
    let bank = build_bank(&supports.samples(), &backend, &PatchRule::default()).unwrap();
    let total = [2, 4, 8][r.random_range(0..3)];
    let noise = r.random_range(0.05..0.5);
    let lex = AttributeLexicon::synthetic();
    let pop_seed = r.random_range(0..1000);
    let pop = |role| {
        let cfg = PopulationConfig {
            total,
            init_noise: noise,
            ..PopulationConfig::for_role(role)
        };
        build_population(&backend, role, &cfg, &lex, pop_seed, &[]).unwrap()
    };
    let (fg, bg) = (pop(Role::Fg), pop(Role::Bg));
    let tau = [0.01, 0.05, 0.2, 1.0][r.random_range(0..4)];
    GradFixture {
        backend,
        bank,
        fg,
        bg,
        tau,
    }
}

fn shifted(pop: &PromptPopulation, dirs: &[Array2<f64>], h: f64) -> PromptPopulation {
    let mut out = pop.clone();
    for (l, d) in out.learnable.iter_mut().zip(dirs) {
        l.params.scaled_add(h, d);
    }
    out
}

/// Directional derivative along a random direction: analytic versus a
/// central difference with step `h`. Returns `(analytic, numeric)`.
pub fn directional_check(f: &GradFixture, weights: LossWeights, dir_seed: u64, h: f64) -> (f64, f64) {
    let cfg = TrainConfig {
        tau: Some(f.tau),
        weights,
        ..TrainConfig::default()
    };
    let targets = Targets::from_bank(&f.bank);
    let obj = evaluate(&f.fg, &f.bg, &targets, &f.backend, &cfg, true).unwrap();
    let mut r = rng(dir_seed);
    let mut dir = |pop: &PromptPopulation| -> Vec<Array2<f64>> {
        pop.learnable
            .iter()
            .map(|l| l.params.mapv(|_| StandardNormal.sample(&mut r)))
            .collect()
    };
    let df = dir(&f.fg);
    let db = dir(&f.bg);
    let dot = |gs: &[Array2<f64>], ds: &[Array2<f64>]| -> f64 { gs.iter().zip(ds).map(|(g, d)| (g * d).sum()).sum() };
    let analytic = dot(&obj.fg_grads, &df) + dot(&obj.bg_grads, &db);
    let at = |s: f64| {
        evaluate(&shifted(&f.fg, &df, s), &shifted(&f.bg, &db, s), &targets, &f.backend, &cfg, false)
            .unwrap()
            .loss
            .total
    };
    let numeric = (at(h) - at(-h)) / (2.0 * h);
    (analytic, numeric)
}

/// Relative error with an absolute floor for near-zero derivatives.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Pairwise AUROC oracle: twice the number of winning pairs plus ties, and
/// twice the pair count.
pub fn auroc_pairwise(scores: &[f64], labels: &[bool]) -> Option<(u128, u128)> {
    let pos: Vec<f64> = scores.iter().zip(labels).filter(|(_, &l)| l).map(|(&s, _)| s).collect();
    let neg: Vec<f64> = scores.iter().zip(labels).filter(|(_, &l)| !l).map(|(&s, _)| s).collect();
    if pos.is_empty() || neg.is_empty() {
        return None;
    }
    let mut twice = 0u128;
    for p in &pos {
        for n in &neg {
            twice += if p > n {
                2
            } else if p == n {
                1
            } else {
                0
            };
        }
    }
    Some((twice, 2 * pos.len() as u128 * neg.len() as u128))
}

/// IoU through explicit pixel sets.
pub fn fgiou_sets(pred: &Mask, gt: &Mask) -> f64 {
    let set = |m: &Mask| -> HashSet<(usize, usize)> {
        m.indexed_iter().filter(|(_, &v)| v != 0).map(|(i, _)| i).collect()
    };
    let (p, g) = (set(pred), set(gt));
    let union = p.union(&g).count();
    if union == 0 {
        1.0
    } else {
        p.intersection(&g).count() as f64 / union as f64
    }
}

/// Loop-based `(1 + max cos) / 2` per patch, averaged over layers.
pub fn brute_force_visual(layer_maps: &[Array3<f64>], memories: &[&Array2<f64>]) -> Array2<f64> {
    let (gh, gw, _) = layer_maps[0].dim();
    let mut out = Array2::zeros((gh, gw));
    for (map, mem) in layer_maps.iter().zip(memories) {
        for y in 0..gh {
            for x in 0..gw {
                let q = map.slice(ndarray::s![y, x, ..]);
                let qn = q.dot(&q).sqrt();
                let score = if mem.nrows() == 0 {
                    0.0
                } else {
                    let mut best = f64::NEG_INFINITY;
                    for m in mem.rows() {
                        let c = q.dot(&m) / (qn * m.dot(&m).sqrt());
                        best = best.max(c);
                    }
                    (1.0 + best) / 2.0
                };
                out[[y, x]] += score;
            }
        }
    }
    out / layer_maps.len() as f64
}

pub fn random_mask(r: &mut ChaCha8Rng, h: usize, w: usize, p: f64) -> Mask {
    Mask::from_shape_fn((h, w), |_| u8::from(r.random_bool(p)))
}
