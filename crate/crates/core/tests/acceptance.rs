//! Acceptance criteria, one line each. Runs without the libtest harness so
//! the PASS/FAIL lines always print; exits non-zero if any criterion fails.

mod common;

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use textseg_core::afa::{loss_align, loss_tri, loss_vp, sigmoid, LossWeights};
use textseg_core::backend::{make_toy_backend, Backend};
use textseg_core::data::{
    select_support_ids, synth_generate, DatasetManifest, ManifestEntry, SeedTable, Split,
};
use textseg_core::inference::{fuse_value, Fusion};
use textseg_core::metrics::{auroc, auroc_counts, fg_iou};
use textseg_core::pipeline::{
    run_ablation, run_experiment, train_seed, AblationAxis, AblationRow, Dataset, RunConfig,
    SweepConfig,
};
use textseg_core::prompt_space::{build_population, AttributeLexicon, PopulationConfig, Role};
use textseg_core::visual_bank::{build_bank, PatchRule};

type Outcome = Result<String, String>;

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn gradient_correctness() -> Outcome {
    let start = Instant::now();
    let weightings = [
        ("align", LossWeights { align: 1.0, vp: 0.0, tri: 0.0 }),
        ("vp", LossWeights { align: 0.0, vp: 1.0, tri: 0.0 }),
        ("tri", LossWeights { align: 0.0, vp: 0.0, tri: 1.0 }),
        ("total", LossWeights::default()),
    ];
    let mut worst: BTreeMap<&str, f64> = BTreeMap::new();
    for cfg in 0..100u64 {
        let f = common::random_grad_fixture(10_000 + cfg);
        for (name, w) in weightings {
            let (a, n) = common::directional_check(&f, w, cfg, 1e-6);
            let e = common::rel_err(a, n);
            let slot = worst.entry(name).or_insert(0.0);
            *slot = slot.max(e);
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let max = worst.values().cloned().fold(0.0, f64::max);
    let detail = format!(
        "100 configurations, worst relative error {} in {secs:.1}s",
        worst.iter().map(|(k, v)| format!("{k}={v:.1e}")).collect::<Vec<_>>().join(" ")
    );
    check(max <= 1e-4 && secs < 60.0, detail)
}

fn loss_closed_forms() -> Outcome {
    let mut r = common::rng(21);
    let mut worst = 0.0f64;
    let randv = |r: &mut rand_chacha::ChaCha8Rng, d: usize| -> Array1<f64> {
        Array1::from_shape_fn(d, |_| StandardNormal.sample(r))
    };
    for _ in 0..1000 {
        let d = r.random_range(2..64);
        let z = randv(&mut r, d);
        let pf = randv(&mut r, d);
        let pb = randv(&mut r, d);
        let tau = r.random_range(0.005..2.0);
        // symmetric similarities: identical prompt averages
        let v = loss_vp(z.view(), pf.view(), pf.view(), tau).unwrap();
        worst = worst.max((v - std::f64::consts::LN_2).abs());
        let t0 = loss_tri(pf.view(), pf.view(), pb.view()).unwrap();
        worst = worst.max(t0.abs());
        let tb = loss_tri(pb.view(), pf.view(), pb.view()).unwrap();
        let expect = (&pb - &pf).mapv(|x| x * x).sum();
        worst = worst.max((tb - expect).abs() / expect.max(1.0));
    }
    let backend = make_toy_backend(3, 32, 4).unwrap();
    let lex = AttributeLexicon::synthetic();
    let mut align = 0.0f64;
    for role in [Role::Fg, Role::Bg] {
        let cfg = PopulationConfig {
            init_noise: 0.0,
            ..PopulationConfig::for_role(role)
        };
        // noise-free initialization reproduces each paired prototype exactly
        let pop = build_population(&backend, role, &cfg, &lex, 1, &[]).unwrap();
        align = align.max(loss_align(&pop, &backend).unwrap());
    }
    check(
        worst <= 1e-9 && align <= 1e-9,
        format!("max deviation {worst:.1e} over 1000 draws, L_align on identical pairs {align:.1e}"),
    )
}

fn fusion_algebra() -> Outcome {
    let mut r = common::rng(31);
    let mut bad = Vec::new();
    for _ in 0..100_000 {
        let (f, b, v, p) = (r.random::<f64>(), r.random::<f64>(), r.random::<f64>(), r.random::<f64>());
        let df = r.random::<f64>() * (1.0 - f);
        let db = r.random::<f64>() * (1.0 - b);
        let sup = |f: f64, b: f64| f * (1.0 - b);
        if sup(f + df, b) < sup(f, b) - 1e-12 || sup(f, b + db) > sup(f, b) + 1e-12 {
            bad.push("suppress monotonicity");
        }
        let s = fuse_value(v, p, Fusion::Literal);
        if s > v.min(p) + 1e-12 {
            bad.push("fuse <= min");
        }
        if (s - fuse_value(p, v, Fusion::Literal)).abs() > 1e-12 {
            bad.push("fuse symmetry");
        }
        let x = (r.random::<f64>() - 0.5) * 4.0;
        let tau = r.random_range(0.005..1.0);
        if (sigmoid(x / tau) + sigmoid(-x / tau) - 1.0).abs() > 1e-12 {
            bad.push("P_f + P_b = 1");
        }
    }
    check(bad.is_empty(), format!("1e5 cells, {} violations {:?}", bad.len(), bad.first()))
}

fn metric_oracles() -> Outcome {
    let mut r = common::rng(41);
    let mut mismatches = 0;
    for _ in 0..200 {
        let n = r.random_range(2..=1000);
        let levels = r.random_range(2..50);
        let scores: Vec<f64> = (0..n).map(|_| r.random_range(0..levels) as f64 / levels as f64).collect();
        let labels: Vec<bool> = (0..n).map(|_| r.random_bool(0.4)).collect();
        if auroc_counts(&scores, &labels).unwrap() != common::auroc_pairwise(&scores, &labels) {
            mismatches += 1;
        }
        let (h, w) = (r.random_range(1..40), r.random_range(1..40));
        let pred = common::random_mask(&mut r, h, w, 0.3);
        let gt = common::random_mask(&mut r, h, w, 0.3);
        if fg_iou(pred.view(), gt.view()).unwrap() != common::fgiou_sets(&pred, &gt) {
            mismatches += 1;
        }
    }
    let worked = auroc(&[0.1, 0.4, 0.35, 0.8], &[false, false, true, true]).unwrap();
    check(
        mismatches == 0 && worked == Some(0.75),
        format!("200 instances, {mismatches} mismatches; worked example {worked:?}"),
    )
}

fn visual_bank_oracle() -> Outcome {
    let mut r = common::rng(51);
    let mut worst = 0.0f64;
    let mut growth_violations = 0;
    for trial in 0..50u64 {
        let backend = make_toy_backend(trial, [8, 16, 32][trial as usize % 3], 4).unwrap();
        let n = r.random_range(1..=3);
        let supports = synth_generate(&common::small_scenes(500 + trial, n + 1)).unwrap().samples();
        let query = synth_generate(&common::small_scenes(900 + trial, 1)).unwrap().samples();
        let enc = backend.encode_image(query[0].image.view()).unwrap();
        let small = build_bank(&supports[..n], &backend, &PatchRule::default()).unwrap();
        let (vf, vb) = small.patch_scores(&enc).unwrap();
        let fg: Vec<&Array2<f64>> = small.layers.iter().map(|l| &l.fg).collect();
        let bg: Vec<&Array2<f64>> = small.layers.iter().map(|l| &l.bg).collect();
        let of = common::brute_force_visual(&enc.layer_maps, &fg);
        let ob = common::brute_force_visual(&enc.layer_maps, &bg);
        for (a, b) in vf.grid.iter().zip(&of).chain(vb.grid.iter().zip(&ob)) {
            worst = worst.max((a - b).abs());
        }
        let big = build_bank(&supports, &backend, &PatchRule::default()).unwrap();
        let (gf, gb) = big.patch_scores(&enc).unwrap();
        let grew = vf.grid.iter().zip(&gf.grid).all(|(a, b)| b >= a)
            && vb.grid.iter().zip(&gb.grid).all(|(a, b)| b >= a);
        if !grew {
            growth_violations += 1;
        }
    }
    check(
        worst <= 1e-6 && growth_violations == 0,
        format!("50 banks, max |diff| {worst:.1e}; growth violations {growth_violations}/50"),
    )
}

fn end_to_end() -> Outcome {
    let start = Instant::now();
    let cfg = RunConfig::default();
    let backend = cfg.backend.build().unwrap();
    let data = Dataset::load(&cfg).unwrap();
    let exp = run_experiment(&cfg, &backend, &data).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    let (f, a) = (exp.summary.mean_fgiou, exp.summary.mean_auroc.unwrap_or(0.0));
    check(
        data.queries.len() == 20 && cfg.k == 1 && f >= 0.7 && a >= 0.9 && secs < 300.0,
        format!("{} queries, 1-shot: FgIoU {f:.4}, AUROC {a:.4} in {secs:.1}s", data.queries.len()),
    )
}

fn row<'a>(rows: &'a [AblationRow], label: &str) -> &'a AblationRow {
    rows.iter().find(|r| r.label == label).expect("ablation row")
}

fn directional_ablations() -> Outcome {
    let cfg = RunConfig {
        seeds: vec![1, 2, 3],
        ..RunConfig::default()
    };
    let backend = cfg.backend.build().unwrap();
    let data = Dataset::load(&cfg).unwrap();
    let sweep = SweepConfig::default();
    let comp = run_ablation(&cfg, AblationAxis::Components, &sweep, &backend, &data).map_err(|e| e.to_string())?;
    let supp = run_ablation(&cfg, AblationAxis::Suppression, &sweep, &backend, &data).map_err(|e| e.to_string())?;
    let full = row(&comp, "visual+prompt+afa").fgiou;
    let no_afa = row(&comp, "visual+prompt").fgiou;
    let visual = row(&comp, "visual").fgiou;
    let (on, off) = (row(&supp, "on").fgiou, row(&supp, "off").fgiou);
    let checks = [
        ("afa on>=off", full >= no_afa, format!("{full:.4} vs {no_afa:.4}")),
        ("suppression on>=off", on >= off, format!("{on:.4} vs {off:.4}")),
        ("visual+prompt>=visual", no_afa >= visual, format!("{no_afa:.4} vs {visual:.4}")),
    ];
    let detail = checks
        .iter()
        .map(|(n, ok, v)| format!("{n} {} ({v})", if *ok { "ok" } else { "NOT MET" }))
        .collect::<Vec<_>>()
        .join("; ");
    check(checks.iter().all(|c| c.1), format!("3 seeds: {detail}"))
}

fn files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().display().to_string();
                out.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn full_run(dir: &Path, workers: usize) -> BTreeMap<String, Vec<u8>> {
    let cfg = RunConfig {
        seeds: vec![1, 2],
        workers,
        ..RunConfig::default()
    };
    let backend = cfg.backend.build().unwrap();
    let data = Dataset::load(&cfg).unwrap();
    let exp = run_experiment(&cfg, &backend, &data).unwrap();
    for (run, report) in exp.runs.iter().zip(&exp.reports) {
        let sd = dir.join(format!("seed-{}", run.seed));
        run.save(&sd).unwrap();
        report.save_json(&sd.join("report.json")).unwrap();
        report.save_csv(&sd.join("report.csv")).unwrap();
    }
    files(dir)
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let a = full_run(&tmp.path().join("a"), 1);
    let b = full_run(&tmp.path().join("b"), 1);
    let c = full_run(&tmp.path().join("c"), 4);
    check(
        !a.is_empty() && a == b && a == c,
        format!("{} files compared across two runs and a 4-worker run", a.len()),
    )
}

fn seed_table_fidelity() -> Outcome {
    let table = SeedTable::textseg();
    let mut ids: Vec<String> = table.entries.iter().flat_map(|e| e.ids.clone()).collect();
    ids.extend((0..200).map(|i| format!("f{i:05}")));
    ids.sort();
    ids.dedup();
    let entries = ids
        .iter()
        .map(|id| ManifestEntry {
            id: id.clone(),
            image: format!("image/{id}.jpg").into(),
            mask: format!("semantic_label/{id}_maskfg.png").into(),
        })
        .collect();
    let m = DatasetManifest::new("TextSeg", Split::Support, entries).unwrap();
    let s1 = select_support_ids(&m, 1, 1, Some(&table)).unwrap();
    let s4 = select_support_ids(&m, 4, 4, Some(&table)).unwrap();
    let want4 = ["c03517", "b00170", "b00090", "c02384"];
    check(
        s1 == ["c03471"] && s4 == want4,
        format!("seed 1 -> {s1:?}; seed 4, 4-shot -> {s4:?}"),
    )
}

fn config_echo() -> Outcome {
    let cfg = RunConfig::default();
    let backend = cfg.backend.build().unwrap();
    let data = Dataset::load(&cfg).unwrap();
    let supports = data.supports(&cfg, 1).unwrap();
    let run = train_seed(&cfg, &backend, &supports, 1).unwrap();
    let tmp = tempfile::tempdir().unwrap();
    run.save(tmp.path()).unwrap();
    let bank: serde_json::Value =
        serde_json::from_slice(&std::fs::read(tmp.path().join("prompt_bank/bank.json")).unwrap()).unwrap();
    let fp = &bank["fingerprint"];
    let got = [
        ("lr", fp["train"]["lr"].clone(), serde_json::json!(0.002)),
        ("momentum", fp["train"]["momentum"].clone(), serde_json::json!(0.9)),
        ("weight_decay", fp["train"]["weight_decay"].clone(), serde_json::json!(0.0005)),
        ("epochs", fp["train"]["epochs"].clone(), serde_json::json!(20)),
        ("fg prefix", fp["fg_template"]["prefix_len"].clone(), serde_json::json!(2)),
        ("bg prefix", fp["bg_template"]["prefix_len"].clone(), serde_json::json!(2)),
        ("fg tokens", fp["fg_template"]["token_budget"].clone(), serde_json::json!(8)),
        ("bg tokens", fp["bg_template"]["token_budget"].clone(), serde_json::json!(4)),
        ("fg counts", fp["fg_counts"].clone(), serde_json::json!({"learnable": 16, "prototypes": 16})),
        ("bg counts", fp["bg_counts"].clone(), serde_json::json!({"learnable": 16, "prototypes": 16})),
    ];
    let wrong: Vec<String> = got
        .iter()
        .filter(|(_, g, w)| g != w)
        .map(|(n, g, w)| format!("{n}: {g} != {w}"))
        .collect();
    check(
        wrong.is_empty(),
        if wrong.is_empty() {
            "lr 0.002, momentum 0.9, wd 0.0005, epochs 20, prefix 2, tokens 8/4, prompts 16/16".into()
        } else {
            wrong.join("; ")
        },
    )
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 10] = [
        ("gradient correctness", gradient_correctness),
        ("loss closed forms", loss_closed_forms),
        ("fusion algebra", fusion_algebra),
        ("metric oracles", metric_oracles),
        ("visual bank oracle", visual_bank_oracle),
        ("end-to-end toy pipeline", end_to_end),
        ("directional ablations", directional_ablations),
        ("determinism", determinism),
        ("seed-table fidelity", seed_table_fidelity),
        ("config echo", config_echo),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        let outcome = std::panic::catch_unwind(f).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(d) => println!("PASS  {name}: {d}"),
            Err(d) => {
                failed += 1;
                println!("FAIL  {name}: {d}");
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
