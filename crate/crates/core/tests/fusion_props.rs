mod common;

use ndarray::Array2;
use proptest::prelude::*;
use textseg_core::data::Mask;
use textseg_core::inference::{
    connected_components, fuse, fuse_value, generate_mask, suppress, Fusion, MaskGenConfig,
};
use textseg_core::score::{Polarity, ScoreMap, Source};

fn map(v: Vec<f64>, n: usize) -> ScoreMap {
    ScoreMap::new(Array2::from_shape_vec((n, n), v).unwrap(), Source::Visual, Polarity::Fg)
}

proptest! {
    #[test]
    fn suppress_is_monotone(f in 0.0..=1.0f64, b in 0.0..=1.0f64, df in 0.0..=1.0f64, db in 0.0..=1.0f64) {
        let f2 = f + df * (1.0 - f);
        let b2 = b + db * (1.0 - b);
        let s = |f: f64, b: f64| suppress(&map(vec![f], 1), &map(vec![b], 1)).unwrap().grid[[0, 0]];
        prop_assert!(s(f2, b) >= s(f, b));
        prop_assert!(s(f, b2) <= s(f, b));
        prop_assert!((0.0..=1.0).contains(&s(f, b)));
    }

    #[test]
    fn fusion_bounds_and_symmetry(v in 0.0..=1.0f64, p in 0.0..=1.0f64) {
        let h = fuse_value(v, p, Fusion::Literal);
        prop_assert!(h <= v.min(p) + 1e-12);
        prop_assert!(h >= 0.0);
        prop_assert_eq!(h, fuse_value(p, v, Fusion::Literal));
        let d = fuse_value(v, p, Fusion::Doubled);
        prop_assert!((d - 2.0 * h).abs() < 1e-15);
        prop_assert!(d <= v.max(p) + 1e-12);
        prop_assert!(d >= v.min(p) - 1e-12);
    }

    #[test]
    fn fused_map_matches_cellwise(vals in proptest::collection::vec(0.0..=1.0f64, 32)) {
        let (a, b) = vals.split_at(16);
        let s = fuse(&map(a.to_vec(), 4), &map(b.to_vec(), 4)).unwrap();
        for (i, v) in s.grid.iter().enumerate() {
            prop_assert_eq!(*v, fuse_value(a[i], b[i], Fusion::Literal));
        }
    }

    #[test]
    fn mask_shrinks_as_threshold_rises(seed in 0u64..500, t1 in 0.0..1.0f64, t2 in 0.0..1.0f64, edge_filter: bool) {
        let (lo, hi) = (t1.min(t2), t1.max(t2));
        let mut r = common::rng(seed);
        let grid = {
            use rand::Rng;
            // smooth-ish blobs so components are non-trivial
            let base = Array2::from_shape_fn((24, 24), |_| r.random::<f64>());
            Array2::from_shape_fn((24, 24), |(y, x)| {
                let mut s = 0.0;
                let mut n = 0.0;
                for dy in 0..3 {
                    for dx in 0..3 {
                        if let Some(v) = base.get((y + dy, x + dx)) {
                            s += v;
                            n += 1.0;
                        }
                    }
                }
                s / n
            })
        };
        let s = ScoreMap::new(grid, Source::Fused, Polarity::Fg);
        let edges = common::random_mask(&mut r, 24, 24, 0.02);
        let cfg = |t| MaskGenConfig { threshold: t, edge_filter, min_component_area: 4, ..MaskGenConfig::default() };
        let m_lo = generate_mask(&s, &edges, &cfg(lo)).unwrap();
        let m_hi = generate_mask(&s, &edges, &cfg(hi)).unwrap();
        for (a, b) in m_hi.iter().zip(&m_lo) {
            prop_assert!(a <= b);
        }
    }

    #[test]
    fn components_partition_the_mask(seed in 0u64..500, p in 0.05..0.7f64) {
        let mut r = common::rng(seed);
        let m = common::random_mask(&mut r, 20, 17, p);
        let comps = connected_components(&m);
        let mut cover = Mask::zeros(m.dim());
        for c in &comps {
            for &(y, x) in c {
                prop_assert_eq!(cover[[y, x]], 0);
                cover[[y, x]] = 1;
            }
        }
        prop_assert_eq!(cover, m);
    }
}

#[test]
fn small_components_and_edge_free_components_are_dropped() {
    let mut grid = Array2::zeros((12, 12));
    for y in 1..6 {
        for x in 1..6 {
            grid[[y, x]] = 0.9;
        }
    }
    grid[[10, 10]] = 0.9;
    let s = ScoreMap::new(grid, Source::Fused, Polarity::Fg);
    let cfg = MaskGenConfig {
        threshold: 0.5,
        min_component_area: 4,
        edge_dilation: 1,
        ..MaskGenConfig::default()
    };
    let mut edges = Mask::zeros((12, 12));
    let m = generate_mask(&s, &edges, &cfg).unwrap();
    assert_eq!(m.sum(), 0, "no edge nearby");
    edges[[0, 3]] = 1;
    let m = generate_mask(&s, &edges, &cfg).unwrap();
    assert_eq!(m.iter().map(|&v| v as usize).sum::<usize>(), 25);
    assert_eq!(m[[10, 10]], 0);
    let off = MaskGenConfig { edge_filter: false, ..cfg };
    assert_eq!(generate_mask(&s, &Mask::zeros((12, 12)), &off).unwrap().sum(), 25);
}
