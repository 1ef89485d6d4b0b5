//! Textual location descriptions built from intrinsic attributes and the
//! spatial / visit context around each location.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{geohash_encode, haversine_km, Location, EARTH_RADIUS_KM};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryCount {
    pub category: String,
    /// Locations of this category within the radius of the target.
    pub count: usize,
    /// Mean in-radius count of this category over every location's
    /// neighborhood, rounded.
    pub average: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoiDistance {
    pub location_id: String,
    pub name: String,
    pub distance_km: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextSummary {
    /// List length the summary was built for; rendered in section headers.
    pub k: usize,
    pub top_categories: Vec<CategoryCount>,
    pub nearest_pois: Vec<PoiDistance>,
    pub representative_pois: Vec<PoiDistance>,
}

impl ContextSummary {
    pub fn empty(k: usize) -> Self {
        Self {
            k,
            top_categories: Vec::new(),
            nearest_pois: Vec::new(),
            representative_pois: Vec::new(),
        }
    }
}

const KM_PER_DEGREE: f64 = std::f64::consts::PI * EARTH_RADIUS_KM / 180.0;

/// Uniform lat/lon bucket grid whose cells are at least `cell_km` across at
/// every latitude present in the data.
struct SpatialGrid {
    lat_step: f64,
    lon_step: f64,
    cells: HashMap<(i64, i64), Vec<usize>>,
    rows: (i64, i64),
    cols: (i64, i64),
}

impl SpatialGrid {
    fn new(locations: &[Location], cell_km: f64) -> Self {
        let lat_step = cell_km / KM_PER_DEGREE;
        let max_lat = locations.iter().map(|l| l.position.lat().abs()).fold(0.0f64, f64::max);
        let cos = (max_lat + lat_step).min(89.9).to_radians().cos();
        let lon_step = lat_step / cos;
        let mut grid = Self {
            lat_step,
            lon_step,
            cells: HashMap::new(),
            rows: (i64::MAX, i64::MIN),
            cols: (i64::MAX, i64::MIN),
        };
        for (i, l) in locations.iter().enumerate() {
            let (r, c) = grid.cell_of(l);
            grid.cells.entry((r, c)).or_default().push(i);
            grid.rows = (grid.rows.0.min(r), grid.rows.1.max(r));
            grid.cols = (grid.cols.0.min(c), grid.cols.1.max(c));
        }
        grid
    }

    fn cell_of(&self, l: &Location) -> (i64, i64) {
        (
            (l.position.lat() / self.lat_step).floor() as i64,
            (l.position.lon() / self.lon_step).floor() as i64,
        )
    }

    /// Indices in cells at Chebyshev distance exactly `ring` from `center`.
    fn ring(&self, center: (i64, i64), ring: i64, out: &mut Vec<usize>) {
        let (r0, c0) = center;
        for r in (r0 - ring)..=(r0 + ring) {
            for c in (c0 - ring)..=(c0 + ring) {
                if (r - r0).abs().max((c - c0).abs()) != ring {
                    continue;
                }
                if let Some(v) = self.cells.get(&(r, c)) {
                    out.extend_from_slice(v);
                }
            }
        }
    }

    /// Rings needed before every occupied cell has been visited.
    fn max_ring(&self, center: (i64, i64)) -> i64 {
        [
            (center.0 - self.rows.0).abs(),
            (self.rows.1 - center.0).abs(),
            (center.1 - self.cols.0).abs(),
            (self.cols.1 - center.1).abs(),
        ]
        .into_iter()
        .max()
        .unwrap_or(0)
    }
}

/// Precomputed spatial index and dataset-wide category averages. Built once,
/// then queried per location.
pub struct Neighborhood<'a> {
    locations: &'a [Location],
    by_id: HashMap<&'a str, usize>,
    visits: Vec<u64>,
    radius_km: f64,
    k: usize,
    grid: SpatialGrid,
    category_average: HashMap<String, u64>,
}

impl<'a> Neighborhood<'a> {
    pub fn new(locations: &'a [Location], visits: &HashMap<String, u64>, radius_km: f64, k: usize) -> Result<Self> {
        if !(radius_km.is_finite() && radius_km > 0.0) {
            return Err(Error::config("radius_km", "must be positive"));
        }
        let mut by_id = HashMap::with_capacity(locations.len());
        for (i, l) in locations.iter().enumerate() {
            if by_id.insert(l.id.as_str(), i).is_some() {
                return Err(Error::config("locations", format!("duplicate id `{}`", l.id)));
            }
        }
        let mut hood = Self {
            locations,
            by_id,
            visits: locations
                .iter()
                .map(|l| visits.get(&l.id).copied().unwrap_or(0))
                .collect(),
            radius_km,
            k,
            grid: SpatialGrid::new(locations, radius_km),
            category_average: HashMap::new(),
        };
        let mut totals: BTreeMap<&str, u64> = BTreeMap::new();
        for i in 0..locations.len() {
            for (cat, n) in hood.category_counts(i) {
                *totals.entry(cat).or_default() += n as u64;
            }
        }
        let n = locations.len().max(1) as f64;
        hood.category_average = totals
            .into_iter()
            .map(|(c, t)| (c.to_string(), (t as f64 / n).round() as u64))
            .collect();
        Ok(hood)
    }

    /// Other locations within the radius, with distances.
    fn within_radius(&self, i: usize) -> Vec<(usize, f64)> {
        let me = &self.locations[i];
        let center = self.grid.cell_of(me);
        let mut cand = Vec::new();
        for ring in 0..=2 {
            self.grid.ring(center, ring, &mut cand);
        }
        cand.into_iter()
            .filter(|&j| j != i)
            .map(|j| (j, haversine_km(me.position, self.locations[j].position)))
            .filter(|&(_, d)| d <= self.radius_km)
            .collect()
    }

    fn category_counts(&self, i: usize) -> HashMap<&'a str, usize> {
        let mut counts = HashMap::new();
        for (j, _) in self.within_radius(i) {
            *counts.entry(self.locations[j].category.as_str()).or_default() += 1;
        }
        counts
    }

    fn nearest(&self, i: usize) -> Vec<(usize, f64)> {
        let me = &self.locations[i];
        let center = self.grid.cell_of(me);
        let max_ring = self.grid.max_ring(center);
        let mut found: Vec<(usize, f64)> = Vec::new();
        let mut buf = Vec::new();
        for ring in 0..=max_ring {
            buf.clear();
            self.grid.ring(center, ring, &mut buf);
            found.extend(
                buf.iter()
                    .filter(|&&j| j != i)
                    .map(|&j| (j, haversine_km(me.position, self.locations[j].position))),
            );
            if found.len() >= self.k {
                sort_by_distance(&mut found, self.locations);
                // anything unseen is at least (ring) cells away; keep one
                // ring of slack for the lat/lon approximation
                let bound = (ring - 1) as f64 * self.radius_km;
                if found[self.k - 1].1 < bound {
                    break;
                }
            }
        }
        sort_by_distance(&mut found, self.locations);
        found.truncate(self.k);
        found
    }

    pub fn stats(&self, location_id: &str) -> Result<ContextSummary> {
        let &i = self
            .by_id
            .get(location_id)
            .ok_or_else(|| Error::MissingLocation(location_id.to_string()))?;
        if self.k == 0 {
            return Ok(ContextSummary::empty(0));
        }
        let mut cats: Vec<(&str, usize)> = self.category_counts(i).into_iter().collect();
        cats.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        let top_categories = cats
            .into_iter()
            .take(self.k)
            .map(|(c, n)| CategoryCount {
                category: c.to_string(),
                count: n,
                average: self.category_average.get(c).copied().unwrap_or(0),
            })
            .collect();

        let poi = |(j, d): (usize, f64)| PoiDistance {
            location_id: self.locations[j].id.clone(),
            name: self.locations[j].name.clone(),
            distance_km: d,
        };
        let nearest_pois = self.nearest(i).into_iter().map(poi).collect();

        let mut popular: Vec<(usize, f64)> = self
            .within_radius(i)
            .into_iter()
            .filter(|&(j, _)| self.visits[j] > 0)
            .collect();
        popular.sort_by(|a, b| {
            self.visits[b.0]
                .cmp(&self.visits[a.0])
                .then_with(|| self.locations[a.0].id.cmp(&self.locations[b.0].id))
        });
        popular.truncate(self.k);
        let representative_pois = popular.into_iter().map(poi).collect();

        Ok(ContextSummary {
            k: self.k,
            top_categories,
            nearest_pois,
            representative_pois,
        })
    }
}

fn sort_by_distance(v: &mut [(usize, f64)], locations: &[Location]) {
    v.sort_by(|a, b| {
        a.1.total_cmp(&b.1)
            .then_with(|| locations[a.0].id.cmp(&locations[b.0].id))
    });
}

/// Context of `target` within `all`. Builds a throwaway index; use
/// [`Neighborhood`] directly when describing many locations.
pub fn neighborhood_stats(
    target: &Location,
    all: &[Location],
    visits: &HashMap<String, u64>,
    radius_km: f64,
    k: usize,
) -> Result<ContextSummary> {
    Neighborhood::new(all, visits, radius_km, k)?.stats(&target.id)
}

/// Renders the fixed-layout description of a location.
pub fn render_description(loc: &Location, ctx: &ContextSummary, geohash_precision: usize) -> Result<String> {
    let geohash = geohash_encode(loc.position, geohash_precision)?;
    let mut s = String::new();
    // writes into a String never fail
    let _ = write!(
        s,
        "The name of this location is \"{}\" and its POI category is {}",
        loc.name, loc.category
    );
    match &loc.parent_category {
        Some(p) => {
            let _ = writeln!(s, ", belonging to the parent category {p}.");
        }
        None => s.push_str(".\n"),
    }
    let _ = writeln!(
        s,
        "The geographic coordinates for this location are ({:.6}, {:.6}), with the corresponding geohash code {geohash}.",
        loc.position.lat(),
        loc.position.lon()
    );
    match &loc.address {
        Some(a) => {
            let _ = writeln!(s, "The address is {a}.");
        }
        None => s.push_str("The address is unknown.\n"),
    }
    let _ = writeln!(
        s,
        "The top {} nearby points-of-interest (POI) categories and their counts are:",
        ctx.k
    );
    for c in &ctx.top_categories {
        let _ = writeln!(s, "- {}, {} (avg: {})", c.category, c.count, c.average);
    }
    let _ = writeln!(s, "The {} nearest POIs and their distances are:", ctx.k);
    for p in &ctx.nearest_pois {
        let _ = writeln!(s, "- {}, distance {:.2} km", p.name, p.distance_km);
    }
    let _ = writeln!(s, "The {} representative nearby POIs and their distances are:", ctx.k);
    for p in &ctx.representative_pois {
        let _ = writeln!(s, "- {}, distance {:.2} km", p.name, p.distance_km);
    }
    Ok(s)
}

/// One line of the descriptions file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescriptionRecord {
    pub location_id: String,
    pub description: String,
}

/// Describes every location, in input order.
pub fn describe_all(
    locations: &[Location],
    visits: &HashMap<String, u64>,
    radius_km: f64,
    k: usize,
    geohash_precision: usize,
) -> Result<Vec<DescriptionRecord>> {
    let hood = Neighborhood::new(locations, visits, radius_km, k)?;
    locations
        .iter()
        .map(|l| {
            let ctx = hood.stats(&l.id)?;
            Ok(DescriptionRecord {
                location_id: l.id.clone(),
                description: render_description(l, &ctx, geohash_precision)?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::LatLon;

    fn loc(id: &str, name: &str, cat: &str, lat: f64, lon: f64) -> Location {
        Location::new(id, name, cat, None, LatLon::new(lat, lon).unwrap(), None).unwrap()
    }

    /// Degrees of longitude at the equator spanning `km`.
    fn east(km: f64) -> f64 {
        km / KM_PER_DEGREE
    }

    #[test]
    fn single_location_has_empty_context() {
        let all = [loc("a", "A", "Bar", 0.0, 0.0)];
        let ctx = neighborhood_stats(&all[0], &all, &HashMap::new(), 2.0, 10).unwrap();
        assert_eq!(ctx, ContextSummary::empty(10));
    }

    #[test]
    fn nearest_sorted_on_a_line() {
        let all = [
            loc("p0", "Zero", "Bar", 0.0, 0.0),
            loc("p1", "One", "Bar", 0.0, east(1.0)),
            loc("p3", "Three", "Bar", 0.0, east(3.0)),
        ];
        let ctx = neighborhood_stats(&all[0], &all, &HashMap::new(), 2.0, 2).unwrap();
        let d: Vec<f64> = ctx.nearest_pois.iter().map(|p| p.distance_km).collect();
        assert_eq!(ctx.nearest_pois[0].location_id, "p1");
        assert!((d[0] - 1.0).abs() < 1e-9 && (d[1] - 3.0).abs() < 1e-9);
    }

    #[test]
    fn top_category_by_count_then_name() {
        let mut all = vec![loc("t", "Target", "Hotel", 0.0, 0.0)];
        for i in 0..47 {
            all.push(loc(
                &format!("b{i}"),
                &format!("Bar {i}"),
                "Bar",
                0.0,
                east(0.01 * (i + 1) as f64),
            ));
        }
        for i in 0..37 {
            all.push(loc(
                &format!("c{i}"),
                &format!("Cafe {i}"),
                "Coffee Shop",
                east(0.01 * (i + 1) as f64),
                0.0,
            ));
        }
        let ctx = neighborhood_stats(&all[0], &all, &HashMap::new(), 2.0, 10).unwrap();
        assert_eq!(ctx.top_categories[0].category, "Bar");
        assert_eq!(ctx.top_categories[0].count, 47);
        assert_eq!(ctx.top_categories[1].count, 37);
        assert!(ctx.nearest_pois.iter().all(|p| p.location_id != "t"));
    }

    #[test]
    fn representative_ranked_by_visits_within_radius() {
        let all = [
            loc("t", "Target", "Bar", 0.0, 0.0),
            loc("near_hot", "Hot", "Bar", 0.0, east(1.0)),
            loc("near_cold", "Cold", "Bar", 0.0, east(0.5)),
            loc("far", "Far", "Bar", 0.0, east(5.0)),
        ];
        let visits: HashMap<String, u64> = [("near_hot", 10), ("near_cold", 2), ("far", 100)]
            .map(|(k, v)| (k.to_string(), v))
            .into();
        let ctx = neighborhood_stats(&all[0], &all, &visits, 2.0, 10).unwrap();
        let ids: Vec<&str> = ctx.representative_pois.iter().map(|p| p.location_id.as_str()).collect();
        assert_eq!(ids, ["near_hot", "near_cold"]);
    }

    #[test]
    fn reference_description_fields() {
        let l = Location::new(
            "hl",
            "Hi-Life Bar & Grill",
            "Bar",
            Some("Nightlife Spot".into()),
            LatLon::new(40.785677, -73.976498).unwrap(),
            Some("6547 W 83rd St, New York, NY 10024, USA".into()),
        )
        .unwrap();
        let text = render_description(&l, &ContextSummary::empty(10), 12).unwrap();
        assert!(text.contains("The name of this location is \"Hi-Life Bar & Grill\""));
        assert!(text.contains("geohash code dr72h8gcy9m0"));
        assert!(text.contains("belonging to the parent category Nightlife Spot."));
        assert_eq!(text, render_description(&l, &ContextSummary::empty(10), 12).unwrap());
        // header sentences plus three empty sections
        assert_eq!(text.lines().count(), 6);
    }

    #[test]
    fn missing_address_keeps_sentence() {
        let l = loc("a", "A", "Bar", 0.0, 0.0);
        let text = render_description(&l, &ContextSummary::empty(10), 12).unwrap();
        assert!(text.contains("The address is unknown."));
    }

    #[test]
    fn describe_all_invariants_on_random_layout() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let cats = ["Bar", "Cafe", "Gym", "Office"];
        let all: Vec<Location> = (0..300)
            .map(|i| {
                loc(
                    &format!("l{i:03}"),
                    &format!("Place number {i:03}"),
                    cats[i % 4],
                    40.7 + rng.gen_range(-0.05..0.05),
                    -74.0 + rng.gen_range(-0.05..0.05),
                )
            })
            .collect();
        let visits: HashMap<String, u64> = all.iter().map(|l| (l.id.clone(), rng.gen_range(0..50))).collect();
        let hood = Neighborhood::new(&all, &visits, 2.0, 10).unwrap();
        for l in &all {
            let ctx = hood.stats(&l.id).unwrap();
            // brute-force nearest oracle
            let mut brute: Vec<(f64, &str)> = all
                .iter()
                .filter(|o| o.id != l.id)
                .map(|o| (haversine_km(l.position, o.position), o.id.as_str()))
                .collect();
            brute.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(b.1)));
            let got: Vec<&str> = ctx.nearest_pois.iter().map(|p| p.location_id.as_str()).collect();
            let want: Vec<&str> = brute.iter().take(10).map(|x| x.1).collect();
            assert_eq!(got, want);
            for p in ctx.nearest_pois.iter().chain(&ctx.representative_pois) {
                let other = all.iter().find(|o| o.id == p.location_id).unwrap();
                assert!((haversine_km(l.position, other.position) - p.distance_km).abs() < 0.005);
            }
            let text = render_description(l, &ctx, 12).unwrap();
            assert_eq!(text.matches(&l.name).count(), 1);
            let gh = geohash_encode(l.position, 12).unwrap();
            assert_eq!(text.matches(&gh).count(), 1);
        }
    }

    #[test]
    fn far_apart_points_found_by_ring_search() {
        let all = [
            loc("a", "A", "Bar", 10.0, 10.0),
            loc("b", "B", "Bar", 10.5, 10.0),
            loc("c", "C", "Bar", -10.0, -20.0),
        ];
        let ctx = neighborhood_stats(&all[0], &all, &HashMap::new(), 2.0, 5).unwrap();
        let ids: Vec<&str> = ctx.nearest_pois.iter().map(|p| p.location_id.as_str()).collect();
        assert_eq!(ids, ["b", "c"]);
    }
}
