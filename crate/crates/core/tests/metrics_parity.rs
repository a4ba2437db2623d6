mod common;

use proptest::prelude::*;

use synthtask::metrics::{macro_f1, mean_stderr, micro_f1, squad_f1};

#[test]
fn squad_f1_matches_reference_bit_for_bit() {
    common::check_squad_parity().unwrap();
}

#[test]
fn worked_example() {
    assert_eq!(squad_f1("on the bar", &["on the bar under the shelf"]).unwrap(), 2.0 / 3.0);
}

#[test]
fn max_over_golds() {
    let f = squad_f1("red car", &["blue bike", "a red car", "car"]).unwrap();
    assert_eq!(f, 1.0);
}

#[test]
fn template_statistics() {
    common::check_statistics().unwrap();
}

fn brute_macro(preds: &[usize], golds: &[usize], k: usize) -> f64 {
    let mut total = 0.0;
    for c in 0..k {
        let tp = preds.iter().zip(golds).filter(|(p, g)| **p == c && **g == c).count() as f64;
        let fp = preds.iter().zip(golds).filter(|(p, g)| **p == c && **g != c).count() as f64;
        let fn_ = preds.iter().zip(golds).filter(|(p, g)| **p != c && **g == c).count() as f64;
        let f = if tp == 0.0 { 0.0 } else { 2.0 * tp / (2.0 * tp + fp + fn_) };
        total += f;
    }
    total / k as f64
}

fn labels(k: usize) -> impl Strategy<Value = (Vec<usize>, Vec<usize>)> {
    (1usize..40).prop_flat_map(move |n| (prop::collection::vec(0..k, n), prop::collection::vec(0..k, n)))
}

proptest! {
    #[test]
    fn macro_f1_matches_brute_force((p, g) in labels(4)) {
        let got = macro_f1(&p, &g, 4).unwrap();
        prop_assert!((got - brute_macro(&p, &g, 4)).abs() < 1e-12);
    }

    #[test]
    fn micro_f1_is_accuracy_for_single_label((p, g) in labels(3)) {
        let acc = p.iter().zip(&g).filter(|(a, b)| a == b).count() as f64 / p.len() as f64;
        prop_assert!((micro_f1(&p, &g, 3).unwrap() - acc).abs() < 1e-12);
    }

    #[test]
    fn squad_f1_is_bounded_and_reflexive(a in "[a-z ]{0,30}", b in "[a-z ]{1,30}") {
        let f = squad_f1(&a, &[b.as_str()]).unwrap();
        prop_assert!((0.0..=1.0).contains(&f));
        prop_assert_eq!(squad_f1(&b, &[b.as_str()]).unwrap(), 1.0);
    }

    #[test]
    fn stderr_is_shift_invariant(xs in prop::collection::vec(0.0f64..100.0, 2..10), c in -50.0f64..50.0) {
        let (m, s) = mean_stderr(&xs).unwrap();
        let shifted: Vec<f64> = xs.iter().map(|x| x + c).collect();
        let (m2, s2) = mean_stderr(&shifted).unwrap();
        prop_assert!((m2 - m - c).abs() < 1e-9);
        prop_assert!((s2 - s).abs() < 1e-9);
    }
}
