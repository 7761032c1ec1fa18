//! Oracle run used to fix the mask threshold and the end-to-end acceptance
//! bounds: sweeps the threshold over the fused maps of the synthetic
//! separable suite, then reports the ablation directions.
//!
//! `cargo run --release -p textseg-core --example calibrate`

use textseg_core::inference::{generate_mask, Branches};
use textseg_core::metrics::fg_iou;
use textseg_core::pipeline::{run_experiment, segment_queries, train_seed, DataSpec, Dataset, Preset, RunConfig};

fn main() -> textseg_core::Result<()> {
    let base = RunConfig {
        seeds: vec![1, 2, 3],
        ..RunConfig::default()
    };
    let backend = base.backend.build()?;
    let data = Dataset::load(&base)?;

    println!("threshold sweep (separable, mean FgIoU over seeds 1-3)");
    let thresholds: Vec<f64> = (1..=16).map(|i| i as f64 * 0.0125).collect();
    let mut sums = vec![0.0; thresholds.len()];
    for &seed in &base.seeds {
        let run = train_seed(&base, &backend, &data.supports(&base, seed)?, seed)?;
        let results = segment_queries(&run, &backend, &data.queries, &base.inference, 1)?;
        for (i, &t) in thresholds.iter().enumerate() {
            let mut m = base.inference.mask;
            m.threshold = t;
            for (r, q) in results.iter().zip(&data.queries) {
                let mask = generate_mask(&r.s, &r.edges, &m)?;
                sums[i] += fg_iou(mask.view(), q.mask.view())? / (results.len() * base.seeds.len()) as f64;
            }
        }
    }
    for (t, s) in thresholds.iter().zip(&sums) {
        println!("  theta {t:.4}  FgIoU {s:.4}");
    }

    let report = |label: &str, cfg: &RunConfig, data: &Dataset| -> textseg_core::Result<()> {
        let exp = run_experiment(cfg, &backend, data)?;
        let density: f64 = exp
            .reports
            .iter()
            .flat_map(|r| r.images.iter().map(|m| m.density()))
            .sum::<f64>()
            / (exp.reports.len() * data.queries.len()) as f64;
        println!(
            "{label:<28} FgIoU {:.4}  AUROC {}  density {density:.4}",
            exp.summary.mean_fgiou,
            exp.summary.mean_auroc.map_or("-".into(), |a| format!("{a:.4}"))
        );
        Ok(())
    };

    report("separable default", &base, &data)?;
    report("separable afa off", &RunConfig { afa: false, ..base.clone() }, &data)?;
    let mut visual = base.clone();
    visual.inference.branches = Branches::Visual;
    report("separable visual only", &visual, &data)?;

    let noisy_cfg = RunConfig {
        data: DataSpec::Synthetic {
            support_preset: Preset::Noisy,
            query_preset: Preset::Noisy,
            seed: 7,
            pool: 8,
            queries: 20,
        },
        ..base.clone()
    };
    let noisy = Dataset::load(&noisy_cfg)?;
    report("noisy suppression on", &noisy_cfg, &noisy)?;
    let mut off = noisy_cfg.clone();
    off.inference.suppress = false;
    report("noisy suppression off", &off, &noisy)?;

    let neg_cfg = RunConfig {
        data: DataSpec::Synthetic {
            support_preset: Preset::Separable,
            query_preset: Preset::Negative,
            seed: 7,
            pool: 8,
            queries: 20,
        },
        ..base.clone()
    };
    let neg = Dataset::load(&neg_cfg)?;
    report("negative queries", &neg_cfg, &neg)?;
    Ok(())
}
