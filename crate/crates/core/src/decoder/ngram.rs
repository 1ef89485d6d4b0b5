use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::{Scorer, BOUNDARY};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq)]
struct ContextCounts {
    total: u64,
    next: HashMap<u32, u64>,
}

/// Fixed-order n-gram model with add-k smoothing:
/// `P(t | ctx) = (count(ctx, t) + k) / (count(ctx) + k |V|)`.
#[derive(Debug, Clone, PartialEq)]
pub struct NgramScorer {
    order: usize,
    k: f64,
    vocab: Vec<String>,
    ids: HashMap<String, u32>,
    contexts: HashMap<Vec<u32>, ContextCounts>,
}

const UNKNOWN: u32 = u32::MAX;

/// Fits counts on `streams`. Each stream is left-padded with `order - 1`
/// boundary markers. The vocabulary is `extra_vocab`, every streamed token
/// and the boundary marker.
pub fn fit_ngram(streams: &[Vec<String>], order: usize, k: f64, extra_vocab: &[String]) -> Result<NgramScorer> {
    if order == 0 {
        return Err(Error::config("decode.order", "must be at least 1"));
    }
    if !(k.is_finite() && k >= 0.0) {
        return Err(Error::config("decode.k", "smoothing constant must be non-negative"));
    }
    if streams.iter().all(Vec::is_empty) {
        return Err(Error::Empty("n-gram training streams".into()));
    }
    let mut vocab: BTreeSet<String> = extra_vocab.iter().cloned().collect();
    vocab.insert(BOUNDARY.to_string());
    vocab.extend(streams.iter().flatten().cloned());
    let mut scorer = NgramScorer::empty(order, k, vocab.into_iter().collect());
    for s in streams.iter().filter(|s| !s.is_empty()) {
        let padded: Vec<u32> = std::iter::repeat_n(BOUNDARY, order - 1)
            .chain(s.iter().map(String::as_str))
            .map(|t| scorer.ids[t])
            .collect();
        for w in padded.windows(order) {
            scorer.add(w[..order - 1].to_vec(), w[order - 1], 1);
        }
    }
    Ok(scorer)
}

impl NgramScorer {
    fn empty(order: usize, k: f64, vocab: Vec<String>) -> Self {
        let ids = vocab.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        Self {
            order,
            k,
            vocab,
            ids,
            contexts: HashMap::new(),
        }
    }

    fn add(&mut self, ctx: Vec<u32>, next: u32, n: u64) {
        let c = self.contexts.entry(ctx).or_default();
        c.total += n;
        *c.next.entry(next).or_default() += n;
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn smoothing(&self) -> f64 {
        self.k
    }

    fn context_key(&self, context: &[&str]) -> Vec<u32> {
        let n = self.order - 1;
        let take = context.len().min(n);
        let mut key: Vec<u32> = std::iter::repeat_n(self.ids[BOUNDARY], n - take).collect();
        key.extend(
            context[context.len() - take..]
                .iter()
                .map(|t| self.ids.get(*t).copied().unwrap_or(UNKNOWN)),
        );
        key
    }

    fn prob(&self, counts: Option<&ContextCounts>, token: &str) -> f64 {
        let v = self.vocab.len() as f64;
        let Some(&id) = self.ids.get(token) else {
            return 0.0;
        };
        match counts {
            Some(c) => {
                let n = c.next.get(&id).copied().unwrap_or(0) as f64;
                (n + self.k) / (c.total as f64 + self.k * v)
            }
            // unseen context: the formula reduces to uniform (and k = 0 has
            // no other sensible limit)
            None => 1.0 / v,
        }
    }

    pub fn to_checkpoint(&self) -> NgramCheckpoint {
        let mut counts = BTreeMap::new();
        for (ctx, c) in &self.contexts {
            for (&next, &n) in &c.next {
                let gram: Vec<&str> = ctx
                    .iter()
                    .chain(std::iter::once(&next))
                    .map(|&i| self.vocab[i as usize].as_str())
                    .collect();
                counts.insert(gram.join(" "), n);
            }
        }
        NgramCheckpoint {
            format_version: crate::FORMAT_VERSION,
            order: self.order,
            k: self.k,
            vocabulary: self.vocab.clone(),
            counts,
        }
    }

    pub fn from_checkpoint(cp: &NgramCheckpoint) -> Result<Self> {
        if cp.order == 0 {
            return Err(Error::load("order", "must be at least 1"));
        }
        let mut s = Self::empty(cp.order, cp.k, cp.vocabulary.clone());
        if !s.ids.contains_key(BOUNDARY) {
            return Err(Error::load("vocabulary", "boundary marker missing"));
        }
        for (gram, &n) in &cp.counts {
            let toks: Vec<&str> = gram.split(' ').collect();
            if toks.len() != cp.order {
                return Err(Error::load("counts", format!("`{gram}` is not a {}-gram", cp.order)));
            }
            let ids: Vec<u32> = toks
                .iter()
                .map(|t| {
                    s.ids
                        .get(*t)
                        .copied()
                        .ok_or_else(|| Error::load("counts", format!("token `{t}` not in vocabulary")))
                })
                .collect::<Result<_>>()?;
            s.add(ids[..cp.order - 1].to_vec(), ids[cp.order - 1], n);
        }
        Ok(s)
    }
}

impl Scorer for NgramScorer {
    fn vocabulary(&self) -> &[String] {
        &self.vocab
    }

    fn log_prob(&self, context: &[&str], token: &str) -> f64 {
        let key = self.context_key(context);
        self.prob(self.contexts.get(&key), token).ln()
    }

    fn log_probs(&self, context: &[&str], candidates: &[&str]) -> Vec<f64> {
        let key = self.context_key(context);
        let counts = self.contexts.get(&key);
        candidates.iter().map(|t| self.prob(counts, t).ln()).collect()
    }
}

/// Serialized counts: space-joined n-gram → count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NgramCheckpoint {
    pub format_version: u32,
    pub order: usize,
    pub k: f64,
    pub vocabulary: Vec<String>,
    pub counts: BTreeMap<String, u64>,
}
