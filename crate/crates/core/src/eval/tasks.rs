use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::metrics::{hit_at_k, ndcg_at_k};
use crate::decoder::{beam_search, context_after, Scorer};
use crate::error::{Error, Result};
use crate::ingest::Trajectory;
use crate::sft::mask_positions;
use crate::tokens::{TokenMap, TokenTrie};

pub const RECOVERY_NOTE: &str =
    "recovery context: only visible visits before each masked slot are given to the scorer (causal baseline)";

/// Ranked candidates for one evaluation instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub user_id: String,
    pub trajectory_index: usize,
    /// Position of the predicted visit inside its trajectory.
    pub position: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ratio: Option<f64>,
    pub target: String,
    pub ranked: Vec<String>,
    pub log_probs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricValue {
    pub name: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportConfig {
    pub ks: Vec<usize>,
    pub width: usize,
    pub topn: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub format_version: u32,
    pub task: String,
    pub instances: usize,
    pub metrics: Vec<MetricValue>,
    pub config: ReportConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl EvalReport {
    pub fn metric(&self, name: &str) -> Option<f64> {
        self.metrics.iter().find(|m| m.name == name).map(|m| m.value)
    }
}

/// Averages Hit@k for every k and N@k for every k > 1 over `predictions`, in
/// order.
pub fn report_from_predictions(task: &str, predictions: &[Prediction], config: ReportConfig) -> Result<EvalReport> {
    if predictions.is_empty() {
        return Err(Error::Empty(format!("{task} evaluation instances")));
    }
    if config.ks.contains(&0) {
        return Err(Error::config("eval.ks", "cutoffs must be at least 1"));
    }
    let n = predictions.len() as f64;
    let mut metrics = Vec::new();
    for &k in &config.ks {
        let sum: f64 = predictions.iter().map(|p| hit_at_k(&p.ranked, &p.target, k)).sum();
        metrics.push(MetricValue {
            name: format!("Hit@{k}"),
            value: sum / n,
        });
    }
    for &k in config.ks.iter().filter(|&&k| k > 1) {
        let sum: f64 = predictions.iter().map(|p| ndcg_at_k(&p.ranked, &p.target, k)).sum();
        metrics.push(MetricValue {
            name: format!("N@{k}"),
            value: sum / n,
        });
    }
    Ok(EvalReport {
        format_version: crate::FORMAT_VERSION,
        task: task.to_string(),
        instances: predictions.len(),
        metrics,
        config,
        note: None,
    })
}

fn rank(
    scorer: &(impl Scorer + ?Sized),
    context: &[String],
    trie: &TokenTrie,
    width: usize,
    topn: usize,
) -> Result<(Vec<String>, Vec<f64>)> {
    let ctx: Vec<&str> = context.iter().map(String::as_str).collect();
    let res = beam_search(scorer, &ctx, trie, width, topn)?;
    Ok(res.candidates.into_iter().map(|c| (c.location_id, c.log_prob)).unzip())
}

/// Ranks the last visit of every trajectory with at least two visits, given
/// the visits before it.
pub fn predict_next(
    scorer: &(impl Scorer + ?Sized),
    trie: &TokenTrie,
    map: &TokenMap,
    test: &[Trajectory],
    width: usize,
    topn: usize,
) -> Result<Vec<Prediction>> {
    let mut out = Vec::new();
    for (i, t) in test.iter().enumerate() {
        let n = t.len();
        if n < 2 {
            continue;
        }
        let ctx = context_after(&t.records[..n - 1], map)?;
        let (ranked, log_probs) = rank(scorer, &ctx, trie, width, topn)?;
        out.push(Prediction {
            user_id: t.user_id.clone(),
            trajectory_index: i,
            position: n - 1,
            ratio: None,
            target: t.records[n - 1].location_id.clone(),
            ranked,
            log_probs,
        });
    }
    Ok(out)
}

pub fn evaluate_next_location(
    scorer: &(impl Scorer + ?Sized),
    trie: &TokenTrie,
    map: &TokenMap,
    test: &[Trajectory],
    ks: &[usize],
    width: usize,
    topn: usize,
) -> Result<EvalReport> {
    if test.is_empty() {
        return Err(Error::Empty("test trajectories".into()));
    }
    let preds = predict_next(scorer, trie, map, test, width, topn)?;
    let config = ReportConfig {
        ks: ks.to_vec(),
        width,
        topn,
        seed: None,
        ratio: None,
    };
    report_from_predictions("next_location", &preds, config)
}

/// Masks every trajectory of at least three visits at `ratio` and ranks each
/// masked slot from the visible visits before it. Masks for trajectory `i`
/// come from `seed` on stream `(ratio_index << 32) | i`.
#[allow(clippy::too_many_arguments)]
pub fn predict_recovery(
    scorer: &(impl Scorer + ?Sized),
    trie: &TokenTrie,
    map: &TokenMap,
    test: &[Trajectory],
    ratio: f64,
    ratio_index: usize,
    seed: u64,
    width: usize,
    topn: usize,
) -> Result<Vec<Prediction>> {
    let mut out = Vec::new();
    for (i, t) in test.iter().enumerate() {
        if t.len() < 3 {
            continue;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(((ratio_index as u64) << 32) | i as u64);
        let masked = mask_positions(t.len(), ratio, &mut rng)?;
        for &p in &masked {
            let visible = t.records[..p]
                .iter()
                .enumerate()
                .filter(|(j, _)| masked.binary_search(j).is_err())
                .map(|(_, v)| v);
            let ctx = context_after(visible, map)?;
            let (ranked, log_probs) = rank(scorer, &ctx, trie, width, topn)?;
            out.push(Prediction {
                user_id: t.user_id.clone(),
                trajectory_index: i,
                position: p,
                ratio: Some(ratio),
                target: t.records[p].location_id.clone(),
                ranked,
                log_probs,
            });
        }
    }
    Ok(out)
}

/// One report per ratio, in the order given.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_recovery(
    scorer: &(impl Scorer + ?Sized),
    trie: &TokenTrie,
    map: &TokenMap,
    test: &[Trajectory],
    ratios: &[f64],
    ks: &[usize],
    seed: u64,
    width: usize,
    topn: usize,
) -> Result<Vec<EvalReport>> {
    if test.is_empty() {
        return Err(Error::Empty("test trajectories".into()));
    }
    let mut reports = Vec::new();
    for (ri, &ratio) in ratios.iter().enumerate() {
        let preds = predict_recovery(scorer, trie, map, test, ratio, ri, seed, width, topn)?;
        let config = ReportConfig {
            ks: ks.to_vec(),
            width,
            topn,
            seed: Some(seed),
            ratio: Some(ratio),
        };
        let mut rep = report_from_predictions("recovery", &preds, config)?;
        rep.note = Some(RECOVERY_NOTE.to_string());
        reports.push(rep);
    }
    Ok(reports)
}
