mod common;

use proptest::prelude::*;
use vabc::datasets::{make_moons, split_nu, Concept};
use vabc::models::{kl_gauss, stable_log1mexp};
use vabc::training::AnnealSchedule;

proptest! {
    #[test]
    fn split_never_marks_positives_unwanted(p in 0.0f64..=1.0, seed in any::<u64>(), n in 1usize..200) {
        let fold = split_nu(&make_moons(n, 0.1, seed).unwrap(), p, seed).unwrap();
        for ex in fold.iter() {
            if ex.concept == Concept::Positive {
                prop_assert_eq!(ex.y, 1);
            }
        }
        let c = fold.counts();
        prop_assert_eq!(c.unlabeled + c.unwanted, fold.len());
        prop_assert!(c.unwanted <= c.negative);
    }

    #[test]
    fn kl_is_nonnegative_and_permutation_invariant(
        pairs in prop::collection::vec((-4.0f64..4.0, 0.05f64..5.0), 1..8),
        rot in 0usize..8,
    ) {
        let (mu, sigma): (Vec<f64>, Vec<f64>) = pairs.iter().copied().unzip();
        let kl = kl_gauss(&mu, &sigma).unwrap();
        prop_assert!(kl >= 0.0);
        let k = rot % mu.len();
        let mut mu2 = mu.clone();
        let mut s2 = sigma.clone();
        mu2.rotate_left(k);
        s2.rotate_left(k);
        let kl2 = kl_gauss(&mu2, &s2).unwrap();
        prop_assert!((kl - kl2).abs() <= 1e-12 * kl.max(1.0));
    }

    #[test]
    fn log1mexp_negative_increasing_and_accurate(a in 1e-9f64..60.0, d in 1e-6f64..1.0) {
        let v = stable_log1mexp(a).unwrap();
        prop_assert!(v < 0.0);
        prop_assert!(stable_log1mexp(a + d).unwrap() >= v);
        let want = common::log1mexp_series(a);
        prop_assert!(((v - want) / want).abs() < 5e-7);
    }

    #[test]
    fn annealing_is_monotone_and_clamped(
        start in -10.0f64..10.0,
        end in -10.0f64..10.0,
        horizon in 1usize..50,
        e1 in 0.0f64..80.0,
        e2 in 0.0f64..80.0,
    ) {
        let s = AnnealSchedule::new(start, end, horizon);
        let (lo, hi) = if e1 <= e2 { (e1, e2) } else { (e2, e1) };
        let (a, b) = (s.value(lo), s.value(hi));
        if end <= start {
            prop_assert!(b <= a);
        } else {
            prop_assert!(b >= a);
        }
        if hi >= horizon as f64 {
            prop_assert_eq!(b, end);
        }
    }
}
