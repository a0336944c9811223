use czvar_core::sequence::*;
use czvar_core::C64;
use proptest::prelude::*;

fn values_strategy(max_len: usize) -> impl Strategy<Value = Vec<C64>> {
    prop::collection::vec((-3.0f64..3.0, -3.0f64..3.0).prop_map(|(a, b)| C64::new(a, b)), 1..=max_len)
}

/// Longest strictly-over-λ chain by subset enumeration, with a configurable comparison.
fn brute_jumps(v: &[C64], lambda: f64, at_least: bool) -> usize {
    let n = v.len();
    let mut best = 0;
    for mask in 1u32..(1 << n) {
        let idx: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
        let ok = idx.windows(2).all(|w| {
            let d = (v[w[1]] - v[w[0]]).norm();
            if at_least {
                d >= lambda
            } else {
                d > lambda
            }
        });
        if ok {
            best = best.max(idx.len() - 1);
        }
    }
    best
}

fn brute_variation(v: &[C64], q: f64) -> f64 {
    let n = v.len();
    let mut best = 0.0f64;
    for mask in 1u32..(1 << n) {
        let idx: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
        let d = idx.windows(2).map(|w| (v[w[1]] - v[w[0]]).norm());
        let val = if q.is_infinite() { d.fold(0.0, f64::max) } else { d.map(|x| x.powf(q)).sum::<f64>().powf(1.0 / q) };
        best = best.max(val);
    }
    best
}

const QS: [f64; 4] = [2.0, 2.5, 3.0, f64::INFINITY];

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn jump_count_matches_enumeration(v in values_strategy(12), lambda in 0.001f64..4.0, pick in 0usize..200) {
        let s = SampleSequence::from_values(v.clone()).unwrap();
        prop_assert_eq!(lambda_jump_count(&s, lambda).unwrap().count, brute_jumps(&v, lambda, false));
        // thresholds exactly at a pairwise distance exercise the strict comparison
        if v.len() > 1 {
            let i = pick % v.len();
            let j = (pick / v.len()) % v.len();
            let d = (v[i] - v[j]).norm();
            if d > 0.0 {
                prop_assert_eq!(lambda_jump_count(&s, d).unwrap().count, brute_jumps(&v, d, false));
                prop_assert_eq!(lambda_jump_count_bruteforce(&s, d).unwrap(), brute_jumps(&v, d, false));
            }
        }
    }

    #[test]
    fn jump_chain_realizes_its_count(v in values_strategy(12), lambda in 0.001f64..4.0) {
        let s = SampleSequence::from_values(v.clone()).unwrap();
        let r = lambda_jump_count(&s, lambda).unwrap();
        prop_assert_eq!(r.anchor_indices.len(), r.count + 1);
        prop_assert!(r.anchor_indices.windows(2).all(|w| w[0] < w[1] && (v[w[1]] - v[w[0]]).norm() > lambda));
    }

    #[test]
    fn variation_matches_enumeration(v in values_strategy(12)) {
        let s = SampleSequence::from_values(v.clone()).unwrap();
        for q in QS {
            let r = q_variation(&s, q).unwrap();
            let want = brute_variation(&v, q);
            prop_assert!((r.value - want).abs() <= 1e-12 * want.max(1e-300), "q={} {} vs {}", q, r.value, want);
            let along = variation_along(&v, &r.subsequence, q);
            prop_assert!((along - r.value).abs() <= 1e-12 * r.value.max(1e-300));
            let mut scratch = Vec::new();
            prop_assert!((q_variation_values(&v, q, &mut scratch) - r.value).abs() <= 1e-12 * r.value.max(1e-300));
        }
    }

    #[test]
    fn jump_variation_inequality(v in values_strategy(14), lambda in 0.01f64..4.0) {
        let s = SampleSequence::from_values(v).unwrap();
        let n = lambda_jump_count(&s, lambda).unwrap().count as f64;
        for q in QS {
            let vq = q_variation(&s, q).unwrap().value;
            let lhs = if q.is_infinite() { if n > 0.0 { lambda } else { 0.0 } } else { lambda * n.powf(1.0 / q) };
            prop_assert!(lhs <= vq * (1.0 + 1e-12), "q={} {} > {}", q, lhs, vq);
        }
    }

    #[test]
    fn adding_samples_never_decreases(v in values_strategy(10), extra in (-3.0f64..3.0, -3.0f64..3.0), at in 0usize..11, lambda in 0.001f64..3.0) {
        let s = SampleSequence::from_values(v.clone()).unwrap();
        let mut w = v.clone();
        w.insert(at.min(v.len()), C64::new(extra.0, extra.1));
        let t = SampleSequence::from_values(w).unwrap();
        prop_assert!(lambda_jump_count(&t, lambda).unwrap().count >= lambda_jump_count(&s, lambda).unwrap().count);
        for q in QS {
            prop_assert!(q_variation(&t, q).unwrap().value >= q_variation(&s, q).unwrap().value * (1.0 - 1e-12));
        }
    }

    #[test]
    fn jump_count_nonincreasing_in_lambda(v in values_strategy(14), a in 0.001f64..3.0, b in 0.001f64..3.0) {
        let s = SampleSequence::from_values(v).unwrap();
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        prop_assert!(lambda_jump_count(&s, lo).unwrap().count >= lambda_jump_count(&s, hi).unwrap().count);
    }

    #[test]
    fn variation_nonincreasing_in_q(v in values_strategy(14)) {
        let s = SampleSequence::from_values(v).unwrap();
        let vals: Vec<f64> = [2.0, 2.5, 3.0, 4.0, f64::INFINITY].iter().map(|&q| q_variation(&s, q).unwrap().value).collect();
        prop_assert!(vals.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12)), "{:?}", vals);
    }

    #[test]
    fn sup_jump_matches_breakpoint_scan(v in values_strategy(10)) {
        prop_assume!(v.len() >= 2);
        let s = SampleSequence::from_values(v.clone()).unwrap();
        let (_, value) = sup_lambda_jump(&s).unwrap();
        let mut want = 0.0f64;
        for i in 0..v.len() {
            for j in i + 1..v.len() {
                let d = (v[i] - v[j]).norm();
                if d > 0.0 {
                    want = want.max(d * (brute_jumps(&v, d, true) as f64).sqrt());
                }
            }
        }
        prop_assert!((value - want).abs() <= 1e-12 * want.max(1e-300), "{} vs {}", value, want);
        // no strict count exceeds it
        for lambda in [0.1, 0.5, 1.0, 2.0] {
            let n = lambda_jump_count(&s, lambda).unwrap().count as f64;
            prop_assert!(lambda * n.sqrt() <= value * (1.0 + 1e-12));
        }
    }

    #[test]
    fn short_variation_is_root_sum_of_squares(a in values_strategy(6), b in values_strategy(6)) {
        let block = |j: i32, v: &[C64]| {
            let lo = 2f64.powi(j);
            let n = v.len();
            let idx = (0..n).map(|k| if n == 1 { lo } else { lo * (1.0 + k as f64 / (n - 1) as f64) }).collect();
            DyadicBlock { j, seq: SampleSequence::new(idx, v.to_vec()).unwrap() }
        };
        let blocks = vec![block(-1, &a), block(0, &b)];
        let s2 = short_variation(&blocks).unwrap();
        let va = brute_variation(&a, 2.0);
        let vb = brute_variation(&b, 2.0);
        prop_assert!((s2 - (va * va + vb * vb).sqrt()).abs() <= 1e-12 * s2.max(1e-300));
    }

    #[test]
    fn thresholds_reproduce_every_count(v in values_strategy(12), lambda in 0.001f64..4.0, pick in 0usize..200) {
        let s = SampleSequence::from_values(v.clone()).unwrap();
        let dist = PairwiseDistances::new(&v);
        let th = dist.jump_thresholds();
        prop_assert!(th.windows(2).all(|w| w[1] <= w[0]));
        prop_assert_eq!(count_from_thresholds(&th, lambda), brute_jumps(&v, lambda, false));
        if v.len() > 1 {
            let d = (v[pick % v.len()] - v[(pick / v.len()) % v.len()]).norm();
            if d > 0.0 {
                prop_assert_eq!(count_from_thresholds(&th, d), brute_jumps(&v, d, false));
            }
            let (_, sup) = sup_lambda_jump(&s).unwrap();
            let (_, from_th) = sup_from_thresholds(&th);
            prop_assert!((sup - from_th).abs() <= 1e-12 * sup.max(1e-300), "{} vs {}", sup, from_th);
        }
    }
}
