/// 1.0 when `target` is among the first `k` entries of `ranked`.
pub fn hit_at_k<S: AsRef<str>>(ranked: &[S], target: &str, k: usize) -> f64 {
    let found = ranked.iter().take(k).any(|r| r.as_ref() == target);
    if found {
        1.0
    } else {
        0.0
    }
}

/// NDCG@k with a single relevant item: `1 / log2(rank + 1)` for a 1-based
/// rank within the cutoff, else 0.
pub fn ndcg_at_k<S: AsRef<str>>(ranked: &[S], target: &str, k: usize) -> f64 {
    match ranked.iter().take(k).position(|r| r.as_ref() == target) {
        Some(i) => 1.0 / ((i + 2) as f64).log2(),
        None => 0.0,
    }
}

/// `Σ rel_i / log2(i + 1)` over the first `k` positions (1-based `i`).
pub fn dcg_at_k(relevance: &[f64], k: usize) -> f64 {
    relevance
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, r)| r / ((i + 2) as f64).log2())
        .sum()
}

/// DCG normalized by the DCG of the ideal (descending) ordering; 0 when
/// nothing is relevant.
pub fn ndcg_from_relevance(relevance: &[f64], k: usize) -> f64 {
    let mut ideal = relevance.to_vec();
    ideal.sort_by(|a, b| b.total_cmp(a));
    let idcg = dcg_at_k(&ideal, k);
    if idcg == 0.0 {
        0.0
    } else {
        dcg_at_k(relevance, k) / idcg
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn examples() {
        let r = ["a", "b", "c", "d", "e", "f"];
        assert_eq!(hit_at_k(&r, "a", 1), 1.0);
        assert_eq!(hit_at_k(&r, "f", 5), 0.0);
        assert_eq!(ndcg_at_k(&r, "a", 1), 1.0);
        assert!((ndcg_at_k(&r, "c", 5) - 0.5).abs() < 1e-15);
        let long: Vec<String> = (0..11).map(|i| i.to_string()).collect();
        assert_eq!(ndcg_at_k(&long, "10", 10), 0.0);
    }

    proptest! {
        #[test]
        fn closed_form_matches_generic(
            ranked in Just((0..20).map(|i| i.to_string()).collect::<Vec<_>>()).prop_shuffle(),
            target in 0..25usize,
            k in 1usize..25,
        ) {
            let target = target.to_string();
            let rel: Vec<f64> = ranked.iter().map(|r| if *r == target { 1.0 } else { 0.0 }).collect();
            let generic = if rel.iter().take(k).any(|&r| r > 0.0) { dcg_at_k(&rel, k) } else { 0.0 };
            prop_assert!((ndcg_at_k(&ranked, &target, k) - generic).abs() < 1e-12);
            if rel.contains(&1.0) {
                prop_assert!((ndcg_at_k(&ranked, &target, k) - ndcg_from_relevance(&rel, k)).abs() < 1e-12);
            }
            prop_assert!(ndcg_at_k(&ranked, &target, k) <= hit_at_k(&ranked, &target, k));
            prop_assert!(hit_at_k(&ranked, &target, k) <= hit_at_k(&ranked, &target, k + 1));
        }

        #[test]
        fn ndcg_bounded(rel in prop::collection::vec(prop_oneof![Just(0.0), Just(1.0)], 0..15), k in 1usize..20) {
            let v = ndcg_from_relevance(&rel, k);
            prop_assert!((0.0..=1.0 + 1e-12).contains(&v));
        }
    }
}
