use caap_core::analysis::*;
use caap_core::caap::SelectionOp;
use caap_core::io::{load_model, save_model};
use caap_core::toy::{gen_model, gen_planted_pair, ToySpec};
use caap_core::{ActivationCache, ModelBundle, SegMask};

fn seed7() -> (ModelBundle, caap_core::Image, caap_core::Image) {
    let spec = ToySpec::new(7);
    let model = gen_model(&spec).unwrap();
    let (x, x0) = gen_planted_pair(&spec, 6).unwrap();
    (model, x, x0)
}

fn mask_of(patches: impl Fn(usize) -> bool) -> SegMask {
    let p: Vec<bool> = (0..16).map(patches).collect();
    SegMask::from_patches(4, 4, &p).unwrap()
}

/// Softmax of scaled q·k in f64, straight from the cached projections.
fn alpha(cache: &ActivationCache, heads: usize, b: usize, h: usize, i: usize) -> Vec<f64> {
    let q = cache.queries[b].row(i);
    let dh = q.len() / heads;
    let cols = h * dh..(h + 1) * dh;
    let scores: Vec<f64> = (0..cache.keys[b].rows())
        .map(|j| {
            let k = cache.keys[b].row(j);
            cols.clone().map(|c| q[c] as f64 * k[c] as f64).sum::<f64>() / (dh as f64).sqrt()
        })
        .collect();
    let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.iter().map(|v| v / z).collect()
}

/// Group means by direct enumeration of (query, key) pairs.
fn oracle_stats(
    cache: &ActivationCache,
    model: &ModelBundle,
    owner: &[Option<usize>],
) -> Vec<[f64; 4]> {
    let cfg = &model.config;
    let n = cfg.num_patches();
    (0..cfg.layers)
        .map(|b| {
            let mut acc = [0.0; 4];
            let mut rows = 0.0;
            for h in 0..cfg.heads {
                for i in (0..n).filter(|&i| owner[i].is_some()) {
                    let a = alpha(cache, cfg.heads, b, h, i + 1);
                    let mean_over = |pred: &dyn Fn(usize) -> bool| {
                        let js: Vec<usize> = (0..n).filter(|&j| pred(j)).collect();
                        js.iter().map(|&j| a[j + 1]).sum::<f64>() / js.len() as f64
                    };
                    let intra = mean_over(&|j| owner[j] == owner[i]);
                    acc[0] += intra;
                    acc[1] += mean_over(&|j| owner[j].is_some() && owner[j] != owner[i]);
                    acc[2] += mean_over(&|j| owner[j].is_none());
                    acc[3] += intra - mean_over(&|j| owner[j] != owner[i]);
                    rows += 1.0;
                }
            }
            acc.map(|v| v / rows)
        })
        .collect()
}

#[test]
fn rows_reconstruct_to_one() {
    let (model, x, _) = seed7();
    let cache = model.forward_full(&x).unwrap();
    let owner = object_assignment(&[mask_of(|p| p % 4 < 2), mask_of(|p| p == 15)], 4, 4).unwrap();
    for b in 0..model.config.layers {
        for h in 0..model.config.heads {
            for i in 0..16 {
                let row = cache.attention_row(b, h, i + 1, model.config.heads);
                let s = split_row(&row, &owner, i);
                assert!((s.cls + s.own + s.other + s.background - 1.0).abs() <= 1e-6);
                assert!((s.total - 1.0).abs() <= 1e-6);
                let a = alpha(&cache, model.config.heads, b, h, i + 1);
                assert!(row
                    .iter()
                    .zip(&a)
                    .all(|(r, o)| (*r as f64 - o).abs() <= 1e-6));
            }
        }
    }
}

#[test]
fn group_means_match_enumeration() {
    let (model, x, _) = seed7();
    let cache = model.forward_full(&x).unwrap();
    let masks = [
        mask_of(|p| p < 6),
        mask_of(|p| p == 10 || p == 11 || p == 14),
    ];
    let owner = object_assignment(&masks, 4, 4).unwrap();
    let got = attention_group_stats(&cache, &model, &masks).unwrap();
    let want = oracle_stats(&cache, &model, &owner);
    for (l, w) in got.layers.iter().zip(&want) {
        assert!((l.intra - w[0]).abs() <= 1e-6);
        assert!((l.inter.unwrap() - w[1]).abs() <= 1e-6);
        assert!((l.obj_bg.unwrap() - w[2]).abs() <= 1e-6);
        assert!((l.gap.unwrap() - w[3]).abs() <= 1e-6);
        for v in [l.intra, l.inter.unwrap(), l.obj_bg.unwrap()] {
            assert!((0.0..=1.0).contains(&v));
        }
    }
}

#[test]
fn single_mask_stats_match_enumeration() {
    let (model, x, _) = seed7();
    let cache = model.forward_full(&x).unwrap();
    let half = mask_of(|p| p < 8);
    let owner = object_assignment(std::slice::from_ref(&half), 4, 4).unwrap();
    let got = attention_group_stats(&cache, &model, &[half]).unwrap();
    let want = oracle_stats(&cache, &model, &owner);
    assert_eq!(got.layers.len(), 6);
    for (k, (l, w)) in got.layers.iter().zip(&want).enumerate() {
        assert_eq!(l.layer, k + 1);
        assert_eq!(l.inter, None);
        assert!((l.intra - w[0]).abs() <= 1e-6);
        assert!((l.obj_bg.unwrap() - w[2]).abs() <= 1e-6);
        assert!((l.gap.unwrap() - w[3]).abs() <= 1e-6);
    }
    let csv = got.to_csv();
    assert!(csv.starts_with("layer,intra,inter,obj_bg,gap\n1,"));
    assert_eq!(csv.lines().count(), 7);
}

// Regression table for the seed-7 model, signal in patch 6, class 1.
const SWEEP: [(f64, f64); 6] = [
    (0.33924403320997953, 0.27367950417101383),
    (0.339659352786839, 0.2730215787887573),
    (0.34117700438946486, 0.27205614000558853),
    (0.3399413963779807, 0.27299001067876816),
    (0.3398323291912675, 0.2730070073157549),
    (0.3398323291912675, 0.2730070073157549),
];

#[test]
fn golden_layer_sweep() {
    let (model, x, x0) = seed7();
    let cutoffs: Vec<usize> = (1..=6).collect();
    let rows = layer_sweep(
        &model,
        &x,
        &x0,
        1,
        SelectionOp::default(),
        &cutoffs,
        0.5,
        None,
    )
    .unwrap();
    assert_eq!(rows.len(), 6);
    for (r, (del, ins)) in rows.iter().zip(SWEEP) {
        assert!((r.del_auc - del).abs() <= 1e-6, "{r:?}");
        assert!((r.ins_auc - ins).abs() <= 1e-6, "{r:?}");
        assert_eq!(r.ins_minus_del, r.ins_auc - r.del_auc);
    }
    let csv = sweep_to_csv(&rows);
    assert!(csv.starts_with("l_e,del_auc,ins_auc,ins_minus_del\n1,"));
}

#[test]
fn saved_model_reloads_identically() {
    let (model, x, _) = seed7();
    let dir = std::env::temp_dir().join(format!("caap-analysis-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("m.caap");
    save_model(&path, &model).unwrap();
    let back = load_model(&path).unwrap();
    assert_eq!(back.fingerprint(), model.fingerprint());
    assert_eq!(back.predict(&x).unwrap(), model.predict(&x).unwrap());
    std::fs::remove_dir_all(&dir).unwrap();
}
