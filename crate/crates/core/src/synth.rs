//! Seeded synthetic data: a small city with habitual users, clustered
//! vectors for quantizer checks, and a category/space layout for the
//! consistency study.

use chrono::{DateTime, Duration, TimeZone, Utc};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::geo::{LatLon, Location};
use crate::ingest::MobilityRecord;

const CATEGORIES: [(&str, &str); 8] = [
    ("Cafe", "Food"),
    ("Restaurant", "Food"),
    ("Office", "Professional & Other Places"),
    ("Gym", "Outdoors & Recreation"),
    ("Park", "Outdoors & Recreation"),
    ("Bar", "Nightlife Spot"),
    ("Grocery Store", "Shop & Service"),
    ("Museum", "Arts & Entertainment"),
];

const STREETS: [&str; 8] = [
    "Amsterdam",
    "Columbus",
    "Lexington",
    "Madison",
    "Park",
    "Broadway",
    "Hudson",
    "Grand",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CityConfig {
    pub locations: usize,
    pub users: usize,
    pub neighborhoods: usize,
    /// Activity sessions per user, one every other day.
    pub sessions: usize,
    pub favorites: usize,
    /// Probability of moving to the next favorite in the routine.
    pub p_routine: f64,
    /// Probability of jumping to a random favorite; the remainder goes to a
    /// uniformly random location.
    pub p_favorite: f64,
    pub seed: u64,
}

impl Default for CityConfig {
    fn default() -> Self {
        Self {
            locations: 200,
            users: 50,
            neighborhoods: 10,
            sessions: 30,
            favorites: 6,
            p_routine: 0.6,
            p_favorite: 0.3,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCity {
    pub locations: Vec<Location>,
    pub checkins: Vec<MobilityRecord>,
}

/// Locations scattered around neighborhood centers, and users who follow a
/// personal routine over a handful of favorite places near home.
pub fn synthetic_city(cfg: &CityConfig) -> Result<SyntheticCity> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let centers: Vec<(f64, f64)> = (0..cfg.neighborhoods.max(1))
        .map(|_| (40.70 + rng.gen::<f64>() * 0.12, -74.02 + rng.gen::<f64>() * 0.10))
        .collect();
    let mut locations = Vec::with_capacity(cfg.locations);
    let mut hood_of = Vec::with_capacity(cfg.locations);
    for i in 0..cfg.locations {
        let h = i % centers.len();
        let (lat, lon) = centers[h];
        let (cat, parent) = CATEGORIES[rng.gen_range(0..CATEGORIES.len())];
        let street = STREETS[rng.gen_range(0..STREETS.len())];
        let pos = LatLon::new(
            lat + (rng.gen::<f64>() - 0.5) * 0.01,
            lon + (rng.gen::<f64>() - 0.5) * 0.01,
        )?;
        locations.push(Location::new(
            format!("L{i:04}"),
            format!("{cat} {i}"),
            cat,
            Some(parent.to_string()),
            pos,
            Some(format!("{} {street} Street, New York, NY", 10 + rng.gen_range(0..900))),
        )?);
        hood_of.push(h);
    }

    let start: DateTime<Utc> = Utc.with_ymd_and_hms(2012, 4, 2, 0, 0, 0).unwrap();
    let mut checkins = Vec::new();
    for u in 0..cfg.users {
        let user = format!("U{u:03}");
        let home = rng.gen_range(0..centers.len());
        let near: Vec<usize> = (0..cfg.locations)
            .filter(|&i| hood_of[i] == home || hood_of[i] == (home + 1) % centers.len())
            .collect();
        let pool = if near.len() >= cfg.favorites {
            &near
        } else {
            &(0..cfg.locations).collect()
        };
        let favs: Vec<usize> = pool
            .choose_multiple(&mut rng, cfg.favorites.min(pool.len()))
            .copied()
            .collect();
        for s in 0..cfg.sessions {
            let day = start + Duration::days(2 * s as i64);
            let mut t = day + Duration::hours(7) + Duration::minutes(rng.gen_range(0..120));
            let len = rng.gen_range(3..=8);
            let first = rng.gen_range(0..favs.len());
            let (mut cur, mut loc) = (Some(first), favs[first]);
            for _ in 0..len {
                checkins.push(MobilityRecord {
                    user_id: user.clone(),
                    location_id: locations[loc].id.clone(),
                    timestamp: t,
                });
                t += Duration::minutes(rng.gen_range(45..150));
                let p: f64 = rng.gen();
                cur = if p < cfg.p_routine {
                    // after a detour the routine resumes at a random favorite
                    Some(cur.map_or_else(|| rng.gen_range(0..favs.len()), |j| (j + 1) % favs.len()))
                } else if p < cfg.p_routine + cfg.p_favorite {
                    Some(rng.gen_range(0..favs.len()))
                } else {
                    None
                };
                loc = match cur {
                    Some(j) => favs[j],
                    None => rng.gen_range(0..cfg.locations),
                };
            }
        }
    }
    Ok(SyntheticCity { locations, checkins })
}

/// `clusters × per_cluster` points in `R^dim`: centers uniform in
/// `[-1, 1]^dim`, members offset by uniform noise in `[-noise, noise]`.
/// Returns points and their cluster labels.
pub fn clustered_points(
    clusters: usize,
    per_cluster: usize,
    dim: usize,
    noise: f64,
    seed: u64,
) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers: Vec<Vec<f64>> = (0..clusters)
        .map(|_| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let mut points = Vec::with_capacity(clusters * per_cluster);
    let mut labels = Vec::with_capacity(clusters * per_cluster);
    for (c, center) in centers.iter().enumerate() {
        for _ in 0..per_cluster {
            points.push(center.iter().map(|x| x + rng.gen_range(-noise..=noise)).collect());
            labels.push(c);
        }
    }
    (points, labels)
}

/// An embedding row keyed by location id.
pub type LabeledRow = (String, Vec<f64>);

/// Locations in `2 × spatial_clusters` groups: two categories interleaved in
/// every spatial cluster. Each embedding is the sum of a category direction,
/// a spatial-cluster direction and uniform noise.
pub fn consistency_layout(
    spatial_clusters: usize,
    per_group: usize,
    dim: usize,
    noise: f64,
    seed: u64,
) -> Result<(Vec<Location>, Vec<LabeledRow>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let direction = |rng: &mut ChaCha8Rng| -> Vec<f64> { (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect() };
    let cats = [direction(&mut rng), direction(&mut rng)];
    let mut locations = Vec::new();
    let mut embeddings = Vec::new();
    for s in 0..spatial_clusters {
        let space = direction(&mut rng);
        let (lat, lon) = (10.0 + s as f64, 20.0 + s as f64);
        for (c, cat_vec) in cats.iter().enumerate() {
            for i in 0..per_group {
                let id = format!("s{s}c{c}n{i:02}");
                let pos = LatLon::new(lat + rng.gen_range(-0.01..0.01), lon + rng.gen_range(-0.01..0.01))?;
                locations.push(Location::new(&id, &id, format!("category-{c}"), None, pos, None)?);
                let v = cat_vec
                    .iter()
                    .zip(&space)
                    .map(|(a, b)| a + b + rng.gen_range(-noise..=noise))
                    .collect();
                embeddings.push((id, v));
            }
        }
    }
    Ok((locations, embeddings))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{build_trajectories, filter_sparse_locations};
    use std::collections::HashSet;

    #[test]
    fn city_is_seeded() {
        let cfg = CityConfig::default();
        assert_eq!(synthetic_city(&cfg).unwrap(), synthetic_city(&cfg).unwrap());
        let other = CityConfig { seed: 8, ..cfg.clone() };
        assert_ne!(
            synthetic_city(&cfg).unwrap().checkins,
            synthetic_city(&other).unwrap().checkins
        );
    }

    #[test]
    fn city_shape() {
        let cfg = CityConfig::default();
        let city = synthetic_city(&cfg).unwrap();
        assert_eq!(city.locations.len(), 200);
        let users: HashSet<&str> = city.checkins.iter().map(|r| r.user_id.as_str()).collect();
        assert_eq!(users.len(), 50);
        let mut recs = filter_sparse_locations(city.checkins.clone(), 5);
        recs.sort_by(|a, b| (&a.user_id, a.timestamp).cmp(&(&b.user_id, b.timestamp)));
        let trajs = build_trajectories(&recs, 24.0, 3);
        // sessions are separated by more than a day, so most survive
        assert!(trajs.len() > 50 * cfg.sessions * 3 / 4, "{}", trajs.len());
    }

    #[test]
    fn clusters_are_tight() {
        let (pts, labels) = clustered_points(4, 8, 3, 0.1, 1);
        assert_eq!(pts.len(), 32);
        for (p, &l) in pts.iter().zip(&labels) {
            let q = &pts[l * 8];
            assert!(p.iter().zip(q).all(|(a, b)| (a - b).abs() <= 0.2 + 1e-12));
        }
    }

    #[test]
    fn layout_sizes() {
        let (locs, emb) = consistency_layout(3, 8, 16, 0.1, 2).unwrap();
        assert_eq!(locs.len(), 48);
        assert_eq!(emb.len(), 48);
        assert!(emb.iter().all(|(_, v)| v.len() == 16));
    }
}
