use convact_core::annotation::{cohen_kappa, per_label_kappa, AnnotationSet};
use convact_core::eval::{average_ranks, wilcoxon_signed_rank, EXACT_LIMIT};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn labels(n: usize) -> impl Strategy<Value = (Vec<u8>, Vec<u8>)> {
    (prop::collection::vec(0u8..4, n), prop::collection::vec(0u8..4, n))
}

proptest! {
    #[test]
    fn kappa_is_symmetric_and_bounded((a, b) in (5usize..80).prop_flat_map(labels)) {
        if let (Ok(ab), Ok(ba)) = (cohen_kappa(&a, &b), cohen_kappa(&b, &a)) {
            prop_assert_eq!(ab, ba);
            prop_assert!(ab <= 1.0 && ab >= -1.0);
        }
    }

    #[test]
    fn kappa_ignores_label_names((a, b) in (5usize..80).prop_flat_map(labels), shift in 1u8..4) {
        let rename = |v: &[u8]| v.iter().map(|x| format!("L{}", (x + shift) % 4)).collect::<Vec<_>>();
        let plain = cohen_kappa(&a, &b).ok();
        let renamed = cohen_kappa(&rename(&a), &rename(&b)).ok();
        prop_assert_eq!(plain, renamed);
    }

    #[test]
    fn self_agreement_is_one(a in prop::collection::vec(0u8..6, 1..60)) {
        prop_assert_eq!(cohen_kappa(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn per_label_kappas_match_binarised_sequences((a, b) in (10usize..60).prop_flat_map(labels)) {
        let table = per_label_kappa(&a, &b, &[0u8, 1, 2, 3]);
        prop_assume!(table.is_ok());
        let table = table.unwrap();
        for row in &table.per_label {
            let l: u8 = row.label.parse().unwrap();
            let bin = |v: &[u8]| v.iter().map(|&x| x == l).collect::<Vec<_>>();
            if a.contains(&l) || b.contains(&l) {
                prop_assert_eq!(row.kappa, cohen_kappa(&bin(&a), &bin(&b)).ok());
            } else {
                prop_assert_eq!(row.kappa, None);
            }
        }
    }

    #[test]
    fn wilcoxon_is_antisymmetric(pairs in prop::collection::vec((0u8..20, 0u8..20), 1..40)) {
        let x: Vec<f64> = pairs.iter().map(|p| p.0 as f64 / 20.0).collect();
        let y: Vec<f64> = pairs.iter().map(|p| p.1 as f64 / 20.0).collect();
        let r = wilcoxon_signed_rank(&x, &y).unwrap();
        let s = wilcoxon_signed_rank(&y, &x).unwrap();
        prop_assert_eq!(r.p_value, s.p_value);
        prop_assert_eq!(r.w_plus, s.w_minus);
        prop_assert_eq!(r.exact, r.n_effective <= EXACT_LIMIT);
        let n = r.n_effective as f64;
        prop_assert!((r.w_plus + r.w_minus - n * (n + 1.0) / 2.0).abs() < 1e-9);
        prop_assert!(r.p_value > 0.0 && r.p_value <= 1.0);
    }

    #[test]
    fn wilcoxon_ignores_common_shift(pairs in prop::collection::vec((0u8..10, 0u8..10), 1..20), shift in 1u8..5) {
        let x: Vec<f64> = pairs.iter().map(|p| p.0 as f64 / 10.0).collect();
        let y: Vec<f64> = pairs.iter().map(|p| p.1 as f64 / 10.0).collect();
        let xs: Vec<f64> = x.iter().map(|v| v + shift as f64 / 10.0).collect();
        let ys: Vec<f64> = y.iter().map(|v| v + shift as f64 / 10.0).collect();
        prop_assert_eq!(wilcoxon_signed_rank(&x, &y).unwrap().p_value, wilcoxon_signed_rank(&xs, &ys).unwrap().p_value);
    }

    #[test]
    fn ranks_sum_to_triangular_number(v in prop::collection::vec(0u8..8, 1..50)) {
        let values: Vec<f64> = v.iter().map(|&x| x as f64).collect();
        let n = values.len() as f64;
        prop_assert!((average_ranks(&values).iter().sum::<f64>() - n * (n + 1.0) / 2.0).abs() < 1e-9);
    }
}

#[test]
fn independent_annotators_average_near_zero_kappa() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let trials = 400;
    let mut total = 0.0;
    for _ in 0..trials {
        let a: Vec<u8> = (0..200).map(|_| rng.random_range(0..5)).collect();
        let b: Vec<u8> = (0..200).map(|_| rng.random_range(0..5)).collect();
        total += cohen_kappa(&a, &b).unwrap();
    }
    assert!((total / trials as f64).abs() < 0.01, "mean kappa {}", total / trials as f64);
}

#[test]
fn noisy_copy_kappa_tracks_noise_rate() {
    // With uniform labels over k classes and a fraction e of labels redrawn,
    // expected agreement is 1 - e + e/k and chance agreement is 1/k.
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (k, e) = (4u8, 0.3);
    let a: Vec<u8> = (0..20_000).map(|_| rng.random_range(0..k)).collect();
    let b: Vec<u8> = a.iter().map(|&x| if rng.random_bool(e) { rng.random_range(0..k) } else { x }).collect();
    let expected = 1.0 - e;
    assert!((cohen_kappa(&a, &b).unwrap() - expected).abs() < 0.02);
}

#[test]
fn annotation_set_pairs_annotators_per_item() {
    let mut set = AnnotationSet::default();
    for (item, a, b) in [("u1", "S1", "S1"), ("u2", "S1", "S2"), ("u3", "S2", "S2"), ("u4", "S2", "S2")] {
        set.insert(item, "ann-1", a);
        set.insert(item, "ann-2", b);
    }
    set.insert("u5", "ann-1", "S3");
    let table = set.agreement(&["S1", "S2", "S3"]).unwrap();
    let direct = cohen_kappa(&["S1", "S1", "S2", "S2"], &["S1", "S2", "S2", "S2"]).unwrap();
    assert_eq!(table.overall, direct);
}
