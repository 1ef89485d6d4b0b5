//! Sequence scoring and trie-constrained beam search over location tokens.

mod beam;
mod ngram;

pub use beam::{beam_search, BeamResult, Candidate};
pub use ngram::{fit_ngram, NgramCheckpoint, NgramScorer};

use crate::error::Result;
use crate::ingest::Visit;
use crate::tokens::TokenMap;

/// Marker placed between consecutive locations in a token stream. It also
/// pads the start of every stream.
pub const BOUNDARY: &str = "<sep>";

/// Next-token distribution over a fixed vocabulary.
pub trait Scorer {
    fn vocabulary(&self) -> &[String];

    /// Natural-log probability of `token` following `context`.
    fn log_prob(&self, context: &[&str], token: &str) -> f64;

    /// Log probabilities of several candidates after the same context.
    fn log_probs(&self, context: &[&str], candidates: &[&str]) -> Vec<f64> {
        candidates.iter().map(|t| self.log_prob(context, t)).collect()
    }
}

impl<S: Scorer + ?Sized> Scorer for &S {
    fn vocabulary(&self) -> &[String] {
        (**self).vocabulary()
    }

    fn log_prob(&self, context: &[&str], token: &str) -> f64 {
        (**self).log_prob(context, token)
    }

    fn log_probs(&self, context: &[&str], candidates: &[&str]) -> Vec<f64> {
        (**self).log_probs(context, candidates)
    }
}

/// Token stream of a trajectory: location sequences joined by
/// [`BOUNDARY`].
pub fn trajectory_stream(visits: &[Visit], map: &TokenMap) -> Result<Vec<String>> {
    let mut out = Vec::new();
    for (i, v) in visits.iter().enumerate() {
        if i > 0 {
            out.push(BOUNDARY.to_string());
        }
        out.extend_from_slice(map.tokens(&v.location_id)?);
    }
    Ok(out)
}

/// Scoring context for the location that follows `visible`: each visible
/// location followed by a boundary marker.
pub fn context_after<'a, I>(visible: I, map: &TokenMap) -> Result<Vec<String>>
where
    I: IntoIterator<Item = &'a Visit>,
{
    let mut out = Vec::new();
    for v in visible {
        out.extend_from_slice(map.tokens(&v.location_id)?);
        out.push(BOUNDARY.to_string());
    }
    Ok(out)
}
