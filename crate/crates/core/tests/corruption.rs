use std::collections::{BTreeMap, BTreeSet};

use dafe::corruption::{corrupt, corrupt_with, NoiseSpec};
use dafe::seed;
use proptest::prelude::*;

fn permutations_within(n: usize, k: usize) -> BTreeSet<Vec<usize>> {
    fn extend(n: usize, k: usize, prefix: &mut Vec<usize>, used: &mut Vec<bool>, out: &mut BTreeSet<Vec<usize>>) {
        if prefix.len() == n {
            out.insert(prefix.clone());
            return;
        }
        let j = prefix.len();
        for i in 0..n {
            if !used[i] && i.abs_diff(j) <= k {
                used[i] = true;
                prefix.push(i);
                extend(n, k, prefix, used, out);
                prefix.pop();
                used[i] = false;
            }
        }
    }
    let mut out = BTreeSet::new();
    extend(n, k, &mut Vec::new(), &mut vec![false; n], &mut out);
    out
}

/// P(i + U_i strictly increasing in i) for U_i iid uniform on [0, k+1),
/// by integrating the chain density on a fine grid.
fn identity_probability(n: usize, k: usize) -> f64 {
    let width = (k + 1) as f64;
    let bins = 30_000;
    let du = width / bins as f64;
    let mut density = vec![1.0 / width; bins];
    for _ in 1..n {
        let mut cdf = vec![0.0; bins + 1];
        for b in 0..bins {
            cdf[b + 1] = cdf[b] + density[b] * du;
        }
        // next offset u' must exceed u − 1
        density = (0..bins)
            .map(|b| {
                let u = (b as f64 + 0.5) * du + 1.0;
                let idx = ((u / du) as usize).min(bins);
                cdf[idx] / width
            })
            .collect();
    }
    density.iter().sum::<f64>() * du
}

#[test]
fn identity_noise() {
    let tokens: Vec<usize> = (10..30).collect();
    for s in 0..50 {
        let spec = NoiseSpec { p_drop: 0.0, k: 0, seed: s };
        assert_eq!(corrupt(&tokens, &spec).unwrap(), tokens);
    }
}

#[test]
fn full_drop_keeps_exactly_one_token() {
    let tokens = [4, 5, 6, 7, 8];
    for s in 0..50 {
        let mut rng = seed::rng(s, "t", 0);
        let c = corrupt_with(&tokens, 1.0, 3, &mut rng).unwrap();
        assert_eq!(c.tokens.len(), 1);
        assert!(c.forced_keep);
        assert!(tokens.contains(&c.tokens[0]));
    }
}

#[test]
fn invalid_noise_is_rejected() {
    let spec = NoiseSpec { p_drop: 1.5, k: 1, seed: 0 };
    assert!(corrupt(&[4, 5], &spec).is_err());
    assert!(corrupt(&[], &NoiseSpec::default()).is_err());
}

#[test]
fn shuffles_stay_inside_the_enumerated_permutation_set() {
    let (n, k) = (6, 2);
    let allowed = permutations_within(n, k);
    let tokens: Vec<usize> = (0..n).collect();
    let mut rng = seed::rng(2024, "shuffle", 0);
    let mut counts: BTreeMap<Vec<usize>, usize> = BTreeMap::new();
    let draws = 100_000;
    for _ in 0..draws {
        let c = corrupt_with(&tokens, 0.0, k, &mut rng).unwrap();
        assert!(allowed.contains(&c.tokens), "{:?}", c.tokens);
        *counts.entry(c.tokens).or_default() += 1;
    }
    let identity = counts.get(&tokens).copied().unwrap_or(0) as f64 / draws as f64;
    let expected = identity_probability(n, k);
    // 0.006 is more than four standard errors at this sample size
    assert!((identity - expected).abs() < 0.006, "identity rate {identity} vs exact {expected}");
    // Kendall-tau distance is positive exactly when the output is not the identity
    let moved = 1.0 - identity;
    assert!((moved - (1.0 - expected)).abs() < 0.006);
    assert!(counts.len() > 1);
}

#[test]
fn exact_identity_probability_checks() {
    // for n = 2: P = 1 − k²/(2(k+1)²)
    assert!((identity_probability(2, 1) - 0.875).abs() < 1e-3);
    assert!((identity_probability(2, 2) - (1.0 - 4.0 / 18.0)).abs() < 1e-3);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn output_is_a_sub_multiset_within_the_displacement_bound(
        tokens in prop::collection::vec(4usize..40, 1..30),
        p_drop in 0.0f64..=1.0,
        k in 0usize..6,
        s in any::<u64>(),
    ) {
        let mut rng = seed::rng(s, "prop", 0);
        let c = corrupt_with(&tokens, p_drop, k, &mut rng).unwrap();
        prop_assert!(!c.tokens.is_empty());
        let mut pool: BTreeMap<usize, usize> = BTreeMap::new();
        for &t in &tokens {
            *pool.entry(t).or_default() += 1;
        }
        for t in &c.tokens {
            let n = pool.get_mut(t).unwrap();
            prop_assert!(*n > 0);
            *n -= 1;
        }
        prop_assert!(c.displacements().iter().all(|&d| d <= k));
        let mut sorted = c.source_positions.clone();
        sorted.sort();
        prop_assert_eq!(&sorted, &c.survivors);
        for (t, &p) in c.tokens.iter().zip(&c.source_positions) {
            prop_assert_eq!(*t, tokens[p]);
        }
    }

    #[test]
    fn corruption_is_deterministic(
        tokens in prop::collection::vec(4usize..40, 1..30),
        p_drop in 0.0f64..=1.0,
        k in 0usize..6,
        s in any::<u64>(),
    ) {
        let spec = NoiseSpec { p_drop, k, seed: s };
        prop_assert_eq!(corrupt(&tokens, &spec).unwrap(), corrupt(&tokens, &spec).unwrap());
    }
}
