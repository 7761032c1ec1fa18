mod common;

use ndarray::Array2;
use proptest::prelude::*;
use textseg_core::backend::{make_toy_backend, Backend};
use textseg_core::data::synth_generate;
use textseg_core::visual_bank::{build_bank, PatchRule, VisualFeatureBank};
use textseg_core::Error;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn scores_match_brute_force(backend_seed in 0u64..100, data_seed in 0u64..1000, n in 1usize..4) {
        let backend = make_toy_backend(backend_seed, 16, 4).unwrap();
        let supports = synth_generate(&common::small_scenes(data_seed, n)).unwrap().samples();
        let query = synth_generate(&common::small_scenes(data_seed + 7919, 1)).unwrap().samples();
        let bank = build_bank(&supports, &backend, &PatchRule::default()).unwrap();
        let enc = backend.encode_image(query[0].image.view()).unwrap();
        let (vf, vb) = bank.patch_scores(&enc).unwrap();
        let fg: Vec<&Array2<f64>> = bank.layers.iter().map(|l| &l.fg).collect();
        let bg: Vec<&Array2<f64>> = bank.layers.iter().map(|l| &l.bg).collect();
        let of = common::brute_force_visual(&enc.layer_maps, &fg);
        let ob = common::brute_force_visual(&enc.layer_maps, &bg);
        for (a, b) in vf.grid.iter().zip(&of).chain(vb.grid.iter().zip(&ob)) {
            prop_assert!((a - b).abs() <= 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn growing_the_bank_never_lowers_scores(data_seed in 0u64..1000, n in 1usize..4) {
        let backend = make_toy_backend(1, 16, 4).unwrap();
        let supports = synth_generate(&common::small_scenes(data_seed, n + 1)).unwrap().samples();
        let query = synth_generate(&common::small_scenes(data_seed + 104_729, 1)).unwrap().samples();
        let enc = backend.encode_image(query[0].image.view()).unwrap();
        let small = build_bank(&supports[..n], &backend, &PatchRule::default()).unwrap();
        let big = build_bank(&supports, &backend, &PatchRule::default()).unwrap();
        let (sf, sb) = small.patch_scores(&enc).unwrap();
        let (bf, bb) = big.patch_scores(&enc).unwrap();
        prop_assert!(sf.grid.iter().zip(&bf.grid).all(|(a, b)| b >= a));
        prop_assert!(sb.grid.iter().zip(&bb.grid).all(|(a, b)| b >= a));
    }
}

#[test]
fn round_trip_and_checksum() {
    let backend = make_toy_backend(2, 16, 4).unwrap();
    let supports = synth_generate(&common::small_scenes(4, 2)).unwrap().samples();
    let bank = build_bank(&supports, &backend, &PatchRule::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    bank.save(dir.path()).unwrap();
    let back = VisualFeatureBank::load(dir.path(), &backend).unwrap();
    assert_eq!(back.support_ids, bank.support_ids);
    assert_eq!(back.counts(), bank.counts());
    // a second save of the reloaded bank is byte-identical
    let again = tempfile::tempdir().unwrap();
    back.save(again.path()).unwrap();
    for f in ["bank.json", "vectors.f32"] {
        assert_eq!(
            std::fs::read(dir.path().join(f)).unwrap(),
            std::fs::read(again.path().join(f)).unwrap()
        );
    }
    let other = make_toy_backend(3, 16, 4).unwrap();
    assert!(matches!(
        VisualFeatureBank::load(dir.path(), &other),
        Err(Error::BackendMismatch { .. })
    ));
    let vec_path = dir.path().join("vectors.f32");
    let mut bytes = std::fs::read(&vec_path).unwrap();
    bytes[0] ^= 0x40;
    std::fs::write(&vec_path, bytes).unwrap();
    assert!(matches!(VisualFeatureBank::load(dir.path(), &backend), Err(Error::Format(_))));
}

#[test]
fn all_background_supports_cannot_build() {
    let backend = make_toy_backend(2, 16, 4).unwrap();
    let mut cfg = common::small_scenes(4, 2);
    cfg.glyphs = (0, 0);
    let supports = synth_generate(&cfg).unwrap().samples();
    assert!(matches!(
        build_bank(&supports, &backend, &PatchRule::default()),
        Err(Error::Build(_))
    ));
    assert!(matches!(build_bank(&[], &backend, &PatchRule::default()), Err(Error::Build(_))));
}
