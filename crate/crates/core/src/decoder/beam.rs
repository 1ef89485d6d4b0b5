use serde::{Deserialize, Serialize};

use super::Scorer;
use crate::error::{Error, Result};
use crate::tokens::TokenTrie;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub location_id: String,
    pub log_prob: f64,
    pub tokens: Vec<String>,
}

/// Completed locations, best first.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BeamResult {
    pub candidates: Vec<Candidate>,
}

impl BeamResult {
    pub fn ids(&self) -> Vec<&str> {
        self.candidates.iter().map(|c| c.location_id.as_str()).collect()
    }
}

struct Hypothesis<'t> {
    node: usize,
    tokens: Vec<&'t str>,
    score: f64,
}

/// Beam search restricted to trie paths. Partial hypotheses are ranked by
/// summed log probability (ties by token sequence) and the best `width` are
/// kept per depth; every leaf reached is collected. Returns the `topn` best
/// leaves, ties broken by location id.
pub fn beam_search<S: Scorer + ?Sized>(
    scorer: &S,
    context: &[&str],
    trie: &TokenTrie,
    width: usize,
    topn: usize,
) -> Result<BeamResult> {
    if width < 1 {
        return Err(Error::config("decode.width", "must be at least 1"));
    }
    if topn < 1 {
        return Err(Error::config("decode.topn", "must be at least 1"));
    }
    let mut beam = vec![Hypothesis {
        node: TokenTrie::ROOT,
        tokens: Vec::new(),
        score: 0.0,
    }];
    let mut completed: Vec<Candidate> = Vec::new();
    let mut ctx: Vec<&str> = Vec::with_capacity(context.len() + 8);
    while !beam.is_empty() {
        let mut next: Vec<Hypothesis> = Vec::new();
        for h in &beam {
            let children = trie.children(h.node);
            if children.is_empty() {
                continue;
            }
            ctx.clear();
            ctx.extend_from_slice(context);
            ctx.extend_from_slice(&h.tokens);
            let names: Vec<&str> = children.iter().map(|(t, _)| t.as_str()).collect();
            let lps = scorer.log_probs(&ctx, &names);
            for ((tok, child), lp) in children.iter().zip(lps) {
                let mut tokens = h.tokens.clone();
                tokens.push(tok.as_str());
                let score = h.score + lp;
                match trie.leaf(*child) {
                    Some(id) => completed.push(Candidate {
                        location_id: id.to_string(),
                        log_prob: score,
                        tokens: tokens.iter().map(|t| t.to_string()).collect(),
                    }),
                    None => next.push(Hypothesis {
                        node: *child,
                        tokens,
                        score,
                    }),
                }
            }
        }
        next.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.tokens.cmp(&b.tokens)));
        next.truncate(width);
        beam = next;
    }
    completed.sort_by(|a, b| {
        b.log_prob
            .total_cmp(&a.log_prob)
            .then_with(|| a.location_id.cmp(&b.location_id))
    });
    completed.truncate(topn);
    Ok(BeamResult { candidates: completed })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokens::{assign_tokens, build_trie};
    use std::collections::{BTreeMap, HashMap};

    /// Fixed per-token probabilities regardless of context (unnormalized
    /// over the vocabulary, which beam search does not require).
    struct Table(HashMap<String, f64>, Vec<String>);

    impl Scorer for Table {
        fn vocabulary(&self) -> &[String] {
            &self.1
        }
        fn log_prob(&self, _: &[&str], token: &str) -> f64 {
            self.0.get(token).copied().unwrap_or(1e-9).ln()
        }
    }

    fn trie(items: &[(&str, &[usize])]) -> TokenTrie {
        let raw: BTreeMap<String, Vec<usize>> = items.iter().map(|(k, v)| (k.to_string(), v.to_vec())).collect();
        build_trie(&assign_tokens(&raw).unwrap()).unwrap()
    }

    #[test]
    fn single_leaf_any_width() {
        let t = trie(&[("only", &[3, 1])]);
        let sc = Table(HashMap::new(), vec![]);
        for w in [1, 2, 15] {
            let r = beam_search(&sc, &[], &t, w, 10).unwrap();
            assert_eq!(r.ids(), ["only"]);
        }
    }

    #[test]
    fn three_leaves_match_enumeration() {
        // path products 0.5, 0.3, 0.2
        let t = trie(&[("A", &[0, 0]), ("B", &[1, 0]), ("C", &[1, 1])]);
        let p: HashMap<String, f64> = [("<a_0>", 0.5), ("<a_1>", 0.5), ("<b_0>", 0.6), ("<b_1>", 0.4)]
            .map(|(k, v)| (k.to_string(), v))
            .into();
        // A = 0.5 * 0.6 = 0.3, B = 0.5 * 0.6 = 0.3, C = 0.5 * 0.4 = 0.2
        let sc = Table(p, vec![]);
        let r = beam_search(&sc, &[], &t, 15, 10).unwrap();
        assert_eq!(r.ids(), ["A", "B", "C"]);
        let mut p2 = sc.0.clone();
        p2.insert("<a_0>".into(), 0.5 / 0.6 * 0.5);
        p2.insert("<a_1>".into(), 0.5);
        let sc2 = Table(p2, vec![]);
        // A = 0.4167 * 0.6 = 0.25 < B = 0.3
        assert_eq!(beam_search(&sc2, &[], &t, 15, 10).unwrap().ids(), ["B", "A", "C"]);
        assert_eq!(beam_search(&sc2, &[], &t, 15, 2).unwrap().ids(), ["B", "A"]);
    }

    #[test]
    fn width_one_is_greedy() {
        let t = trie(&[("A", &[0, 0]), ("B", &[1, 0]), ("C", &[1, 1])]);
        let p: HashMap<String, f64> = [("<a_0>", 0.4), ("<a_1>", 0.6), ("<b_0>", 0.1), ("<b_1>", 0.2)]
            .map(|(k, v)| (k.to_string(), v))
            .into();
        let r = beam_search(&Table(p, vec![]), &[], &t, 1, 10).unwrap();
        assert_eq!(r.ids(), ["C", "B"]);
    }

    #[test]
    fn bad_parameters() {
        let t = trie(&[("A", &[0])]);
        let sc = Table(HashMap::new(), vec![]);
        assert!(beam_search(&sc, &[], &t, 0, 1).unwrap_err().is_validation());
        assert!(beam_search(&sc, &[], &t, 1, 0).unwrap_err().is_validation());
    }
}
