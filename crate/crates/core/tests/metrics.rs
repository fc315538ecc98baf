use caap_core::metrics::*;
use caap_core::toy::{gen_model, gen_planted_pair, with_constant_head, ToySpec, XorShift64Star};
use caap_core::{Image, SegMask, ViTConfig};
use proptest::prelude::*;

fn random_map(rng: &mut XorShift64Star, n: usize, levels: u64) -> Vec<f64> {
    // A few discrete levels so ties actually occur.
    (0..n)
        .map(|_| (rng.next_u64() % levels) as f64 / levels as f64)
        .collect()
}

fn random_mask(rng: &mut XorShift64Star, side: usize) -> SegMask {
    loop {
        let px: Vec<bool> = (0..side * side)
            .map(|_| rng.next_u64().is_multiple_of(3))
            .collect();
        if px.iter().any(|&p| p) && px.iter().any(|&p| !p) {
            return SegMask::new(side, side, px).unwrap();
        }
    }
}

/// Precision at every distinct threshold, computed by counting from
/// scratch.
fn exhaustive_ap(conf: &[f64], labels: &[bool]) -> f64 {
    let mut thresholds: Vec<f64> = conf.to_vec();
    thresholds.sort_by(|a, b| b.partial_cmp(a).unwrap());
    thresholds.dedup();
    let pos = labels.iter().filter(|&&l| l).count() as f64;
    let mut prev_r = 0.0;
    let mut ap = 0.0;
    for t in thresholds {
        let tp = conf
            .iter()
            .zip(labels)
            .filter(|(c, l)| **c >= t && **l)
            .count() as f64;
        let predicted = conf.iter().filter(|c| **c >= t).count() as f64;
        let r = tp / pos;
        ap += (r - prev_r) * (tp / predicted);
        prev_r = r;
    }
    ap
}

#[test]
fn aupr_matches_exhaustive_thresholds() {
    let mut rng = XorShift64Star::new(2024);
    for _ in 0..50 {
        let map = random_map(&mut rng, 64, 7);
        let mask = random_mask(&mut rng, 16);
        let conf = upsample(&normalize(&map), 16, 16).unwrap();
        let fg = aupr(&map, &mask, Polarity::Foreground).unwrap();
        assert!((fg - exhaustive_ap(&conf, mask.pixels())).abs() <= 1e-9);
        let inv: Vec<f64> = conf.iter().map(|c| 1.0 - c).collect();
        let bg = aupr(&map, &mask, Polarity::Background).unwrap();
        assert!((bg - exhaustive_ap(&inv, mask.inverted().pixels())).abs() <= 1e-9);
        // Background AUPR is foreground AUPR of the complement.
        let flipped: Vec<f64> = map.iter().map(|s| 1.0 - s).collect();
        let via_fg = aupr(&flipped, &mask.inverted(), Polarity::Foreground).unwrap();
        assert!((bg - via_fg).abs() <= 1e-9);
    }
}

fn pairwise_gini(a: &[f64]) -> f64 {
    let n = a.len() as f64;
    let total: f64 = a.iter().sum();
    let diffs: f64 = a
        .iter()
        .flat_map(|x| a.iter().map(move |y| (x - y).abs()))
        .sum();
    diffs / (2.0 * n * total)
}

#[test]
fn gini_matches_pairwise_definition() {
    let mut rng = XorShift64Star::new(5);
    for _ in 0..50 {
        let a: Vec<f64> = (0..64).map(|_| rng.next_unit()).collect();
        assert!((gini_index(&a).unwrap() - pairwise_gini(&a)).abs() <= 1e-9);
        let min = a.iter().copied().fold(f64::INFINITY, f64::min);
        let shifted: Vec<f64> = a.iter().map(|x| x - min).collect();
        assert!((gini(&a).unwrap() - pairwise_gini(&shifted)).abs() <= 1e-9);
    }
}

#[test]
fn entropy_extremes_are_exact() {
    assert_eq!(entropy_norm(&[0.25; 16]).unwrap(), 1.0);
    let mut one_hot = vec![0.0; 16];
    one_hot[5] = 0.9;
    assert_eq!(entropy_norm(&one_hot).unwrap(), 0.0);
}

#[test]
fn ranking_matches_reference_sort() {
    let mut rng = XorShift64Star::new(8);
    for _ in 0..20 {
        let map = random_map(&mut rng, 49, 5);
        let mut keyed: Vec<(f64, usize)> = map
            .iter()
            .map(|&s| (-s, 0))
            .zip(0..)
            .map(|((s, _), i)| (s, i))
            .collect();
        keyed.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let want: Vec<usize> = keyed.into_iter().map(|(_, i)| i).collect();
        assert_eq!(rank_patches(&map), want);
    }
}

fn two_by_two() -> (caap_core::ModelBundle, Image) {
    let config = ViTConfig {
        grid: 2,
        ..ToySpec::DEFAULT_CONFIG
    };
    let spec = ToySpec::with_config(7, config);
    let model = gen_model(&spec).unwrap();
    let (x, _) = gen_planted_pair(&spec, 1).unwrap();
    (model, x)
}

/// Midpoint rectangles on the piecewise-linear interpolation of the curve.
fn rectangle_sum(c: &PerturbationCurve, m: usize) -> f64 {
    let n = c.fractions.len() - 1;
    (0..m)
        .map(|i| {
            let t = (i as f64 + 0.5) / m as f64;
            let k = ((t * n as f64).floor() as usize).min(n - 1);
            let w = t * n as f64 - k as f64;
            (c.scores[k] * (1.0 - w) + c.scores[k + 1] * w) / m as f64
        })
        .sum()
}

#[test]
fn curve_auc_matches_quadrature() {
    let (model, x) = two_by_two();
    let map = [0.2, 0.9, 0.4, 0.1];
    let (del, del_auc) = deletion_auc(&model, &x, &map, 0, 0.5).unwrap();
    let (ins, ins_auc) = insertion_auc(&model, &x, &map, 0, 5).unwrap();
    assert!((del_auc - rectangle_sum(&del, 400_000)).abs() <= 1e-9);
    assert!((ins_auc - rectangle_sum(&ins, 400_000)).abs() <= 1e-9);
}

#[test]
fn curve_endpoints_are_exact() {
    let (model, x) = two_by_two();
    let map = [0.2, 0.9, 0.4, 0.1];
    let px = model.predict(&x).unwrap()[3] as f64;
    let del = deletion_curve(&model, &x, &map, 3, 0.5).unwrap();
    assert_eq!(del.scores[0], px);
    let gray = Image::filled(8, 8, 1, 0.5);
    assert_eq!(del.scores[4], model.predict(&gray).unwrap()[3] as f64);
    let ins = insertion_curve(&model, &x, &map, 3, 5).unwrap();
    assert_eq!(
        ins.scores[0],
        model.predict(&x.box_blur(5, 2).unwrap()).unwrap()[3] as f64
    );
    assert_eq!(ins.scores[4], px);
}

#[test]
fn constant_model_gives_constant_auc() {
    let (model, x) = two_by_two();
    let flat = with_constant_head(&model, &[0.1, 0.2, -0.3, 1.0, 0.0]).unwrap();
    let c = flat.predict(&x).unwrap()[3] as f64;
    let map = [0.2, 0.9, 0.4, 0.1];
    assert!((deletion_auc(&flat, &x, &map, 3, 0.5).unwrap().1 - c).abs() <= 1e-9);
    assert!((insertion_auc(&flat, &x, &map, 3, 5).unwrap().1 - c).abs() <= 1e-9);
}

#[test]
fn map_equal_to_mask_scores_perfectly() {
    let patches: Vec<bool> = (0..16).map(|p| p % 5 == 0).collect();
    let mask = SegMask::from_patches(4, 4, &patches).unwrap();
    let map: Vec<f64> = patches.iter().map(|&p| p as u8 as f64).collect();
    assert_eq!(aupr(&map, &mask, Polarity::Foreground).unwrap(), 1.0);
    assert!(pointing_game(&map, &mask).unwrap());
}

proptest! {
    #[test]
    fn affine_rescaling_keeps_rank_metrics(
        map in proptest::collection::vec(0u8..6, 16),
        fg in proptest::collection::vec(any::<bool>(), 16),
        scale in 0.1f64..10.0,
        offset in -5.0f64..5.0,
    ) {
        prop_assume!(fg.iter().any(|&f| f) && fg.iter().any(|&f| !f));
        let a: Vec<f64> = map.iter().map(|&v| v as f64 / 5.0).collect();
        let b: Vec<f64> = a.iter().map(|v| scale * v + offset).collect();
        let mask = SegMask::from_patches(4, 2, &fg).unwrap();
        prop_assert_eq!(rank_patches(&a), rank_patches(&b));
        prop_assert_eq!(pointing_game(&a, &mask).unwrap(), pointing_game(&b, &mask).unwrap());
        let (fa, fb) = (
            aupr(&a, &mask, Polarity::Foreground).unwrap(),
            aupr(&b, &mask, Polarity::Foreground).unwrap(),
        );
        prop_assert!((fa - fb).abs() <= 1e-12);
        if a.iter().any(|&v| v != a[0]) {
            prop_assert!((gini(&a).unwrap() - gini(&b).unwrap()).abs() <= 1e-12);
        }
        // Pure scaling of a nonnegative map leaves entropy alone.
        let c: Vec<f64> = a.iter().map(|v| scale * v).collect();
        prop_assert!((entropy_norm(&a).unwrap() - entropy_norm(&c).unwrap()).abs() <= 1e-12);
    }

    #[test]
    fn gini_equals_pairwise_on_random_vectors(a in proptest::collection::vec(0.0f64..1.0, 2..40)) {
        prop_assume!(a.iter().sum::<f64>() > 0.0);
        prop_assert!((gini_index(&a).unwrap() - pairwise_gini(&a)).abs() <= 1e-9);
    }
}
