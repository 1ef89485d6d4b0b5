use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embed::EmbeddingTable;
use crate::error::{Error, Result};
use crate::geo::{haversine_km, Location};
use crate::scalar::cosine;

/// Mean cosine similarity to the reference location for each group:
/// `a` nearest, `b` farthest, `c` random same-category, `d` random
/// other-category.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct GroupMeans {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryConsistency {
    pub category: String,
    pub reference: String,
    pub means: GroupMeans,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub format_version: u32,
    pub seed: u64,
    pub group_size: usize,
    /// Averages over the studied categories.
    pub groups: GroupMeans,
    pub categories: Vec<CategoryConsistency>,
    /// Categories too small to form every group.
    pub skipped: Vec<String>,
}

fn mean_cosine(zhat: &EmbeddingTable<f64>, reference: &[f64], ids: &[&str]) -> Result<f64> {
    let mut sum = 0.0;
    for id in ids {
        let v = zhat.get(id).ok_or_else(|| Error::MissingLocation(id.to_string()))?;
        sum += cosine(reference, v);
    }
    Ok(sum / ids.len() as f64)
}

fn sample<'a>(pool: &[&'a str], n: usize, rng: &mut ChaCha8Rng) -> Vec<&'a str> {
    rand::seq::index::sample(rng, pool.len(), n)
        .into_iter()
        .map(|i| pool[i])
        .collect()
}

/// For every category (sorted by name) with more than `group_size` members,
/// picks a seeded reference and compares its quantized vector with four
/// groups of `group_size` other locations.
pub fn consistency_study(
    zhat: &EmbeddingTable<f64>,
    locations: &[Location],
    seed: u64,
    group_size: usize,
) -> Result<ConsistencyReport> {
    if group_size == 0 {
        return Err(Error::config("eval.group_size", "must be at least 1"));
    }
    let mut by_cat: BTreeMap<&str, Vec<&Location>> = BTreeMap::new();
    for l in locations {
        by_cat.entry(&l.category).or_default().push(l);
    }
    let mut categories = Vec::new();
    let mut skipped = Vec::new();
    for (ci, (cat, members)) in by_cat.iter().enumerate() {
        let others = locations.len() - members.len();
        if members.len() < group_size + 1 || others < group_size {
            log::warn!(
                "consistency: skipping category `{cat}` ({} members, {others} outside)",
                members.len()
            );
            skipped.push(cat.to_string());
            continue;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(ci as u64);
        let mut sorted: Vec<&Location> = members.clone();
        sorted.sort_by(|a, b| a.id.cmp(&b.id));
        let reference = sorted[rng.gen_range(0..sorted.len())];
        let ref_vec = zhat
            .get(&reference.id)
            .ok_or_else(|| Error::MissingLocation(reference.id.clone()))?;

        let mut by_dist: Vec<(f64, &str)> = locations
            .iter()
            .filter(|l| l.id != reference.id)
            .map(|l| (haversine_km(reference.position, l.position), l.id.as_str()))
            .collect();
        by_dist.sort_by(|x, y| x.0.total_cmp(&y.0).then_with(|| x.1.cmp(y.1)));
        let nearest: Vec<&str> = by_dist.iter().take(group_size).map(|x| x.1).collect();
        by_dist.sort_by(|x, y| y.0.total_cmp(&x.0).then_with(|| x.1.cmp(y.1)));
        let farthest: Vec<&str> = by_dist.iter().take(group_size).map(|x| x.1).collect();

        let same: Vec<&str> = sorted
            .iter()
            .filter(|l| l.id != reference.id)
            .map(|l| l.id.as_str())
            .collect();
        let mut diff: Vec<&str> = locations
            .iter()
            .filter(|l| l.category != *cat)
            .map(|l| l.id.as_str())
            .collect();
        diff.sort_unstable();
        let c = sample(&same, group_size, &mut rng);
        let d = sample(&diff, group_size, &mut rng);

        categories.push(CategoryConsistency {
            category: cat.to_string(),
            reference: reference.id.clone(),
            means: GroupMeans {
                a: mean_cosine(zhat, ref_vec, &nearest)?,
                b: mean_cosine(zhat, ref_vec, &farthest)?,
                c: mean_cosine(zhat, ref_vec, &c)?,
                d: mean_cosine(zhat, ref_vec, &d)?,
            },
        });
    }
    if categories.is_empty() {
        return Err(Error::Empty(format!(
            "no category has more than {group_size} locations for the consistency study"
        )));
    }
    let n = categories.len() as f64;
    let mut groups = GroupMeans::default();
    for c in &categories {
        groups.a += c.means.a / n;
        groups.b += c.means.b / n;
        groups.c += c.means.c / n;
        groups.d += c.means.d / n;
    }
    Ok(ConsistencyReport {
        format_version: crate::FORMAT_VERSION,
        seed,
        group_size,
        groups,
        categories,
        skipped,
    })
}
