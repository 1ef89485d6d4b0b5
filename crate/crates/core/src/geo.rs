//! Geographic primitives: coordinates, locations, great-circle distance and
//! geohash encoding.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mean Earth radius (IUGG), kilometers.
pub const EARTH_RADIUS_KM: f64 = 6371.0088;

const GEOHASH_ALPHABET: &[u8; 32] = b"0123456789bcdefghjkmnpqrstuvwxyz";

/// A validated WGS84 coordinate in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "(f64, f64)", into = "(f64, f64)")]
pub struct LatLon {
    lat: f64,
    lon: f64,
}

impl LatLon {
    pub fn new(lat: f64, lon: f64) -> Result<Self> {
        if !lat.is_finite() || !(-90.0..=90.0).contains(&lat) {
            return Err(Error::config("lat", format!("{lat} outside [-90, 90]")));
        }
        if !lon.is_finite() || !(-180.0..=180.0).contains(&lon) {
            return Err(Error::config("lon", format!("{lon} outside [-180, 180]")));
        }
        Ok(Self { lat, lon })
    }

    pub fn lat(&self) -> f64 {
        self.lat
    }

    pub fn lon(&self) -> f64 {
        self.lon
    }
}

impl TryFrom<(f64, f64)> for LatLon {
    type Error = Error;

    fn try_from((lat, lon): (f64, f64)) -> Result<Self> {
        LatLon::new(lat, lon)
    }
}

impl From<LatLon> for (f64, f64) {
    fn from(p: LatLon) -> Self {
        (p.lat, p.lon)
    }
}

impl fmt::Display for LatLon {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({:.6}, {:.6})", self.lat, self.lon)
    }
}

/// A point of interest (or a synthesized grid cell).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "LocationRecord", into = "LocationRecord")]
pub struct Location {
    pub id: String,
    pub name: String,
    pub category: String,
    pub parent_category: Option<String>,
    pub position: LatLon,
    pub address: Option<String>,
}

/// Flat JSONL shape of a location.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct LocationRecord {
    id: String,
    name: String,
    category: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    parent_category: Option<String>,
    lat: f64,
    lon: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    address: Option<String>,
}

impl TryFrom<LocationRecord> for Location {
    type Error = Error;

    fn try_from(r: LocationRecord) -> Result<Self> {
        Location::new(
            r.id,
            r.name,
            r.category,
            r.parent_category,
            LatLon::new(r.lat, r.lon)?,
            r.address,
        )
    }
}

impl From<Location> for LocationRecord {
    fn from(l: Location) -> Self {
        LocationRecord {
            id: l.id,
            name: l.name,
            category: l.category,
            parent_category: l.parent_category,
            lat: l.position.lat,
            lon: l.position.lon,
            address: l.address,
        }
    }
}

impl Location {
    pub fn new(
        id: impl Into<String>,
        name: impl Into<String>,
        category: impl Into<String>,
        parent_category: Option<String>,
        position: LatLon,
        address: Option<String>,
    ) -> Result<Self> {
        let (id, name, category) = (id.into(), name.into(), category.into());
        if id.is_empty() {
            return Err(Error::config("id", "location id is empty"));
        }
        if name.is_empty() {
            return Err(Error::config("name", format!("location `{id}` has no name")));
        }
        if category.is_empty() {
            return Err(Error::config("category", format!("location `{id}` has no category")));
        }
        Ok(Self {
            id,
            name,
            category,
            parent_category: parent_category.filter(|p| !p.is_empty()),
            position,
            address: address.filter(|a| !a.is_empty()),
        })
    }

    /// Location standing in for a square grid cell of `cell_m` meters that
    /// contains `p`. Cells are laid out on an equirectangular grid anchored at
    /// (0, 0) with the longitude step scaled at the cell's latitude.
    pub fn grid_cell(p: LatLon, cell_m: f64) -> Result<Self> {
        if !(cell_m.is_finite() && cell_m > 0.0) {
            return Err(Error::config("cell_m", "grid cell size must be positive"));
        }
        let deg_per_km = 180.0 / (std::f64::consts::PI * EARTH_RADIUS_KM);
        let lat_step = cell_m / 1000.0 * deg_per_km;
        let row = (p.lat / lat_step).floor();
        let center_lat = ((row + 0.5) * lat_step).clamp(-90.0, 90.0);
        let lon_step = lat_step / center_lat.to_radians().cos().max(1e-6);
        let col = (p.lon / lon_step).floor();
        let center_lon = ((col + 0.5) * lon_step).clamp(-180.0, 180.0);
        Location::new(
            format!("cell_{}_{}", row as i64, col as i64),
            format!("Grid cell {} {}", row as i64, col as i64),
            "grid-cell",
            None,
            LatLon::new(center_lat, center_lon)?,
            None,
        )
    }
}

/// Great-circle distance in kilometers.
pub fn haversine_km(a: LatLon, b: LatLon) -> f64 {
    let (phi1, phi2) = (a.lat.to_radians(), b.lat.to_radians());
    let dphi = phi2 - phi1;
    let dlambda = (b.lon - a.lon).to_radians();
    let h = (dphi / 2.0).sin().powi(2) + phi1.cos() * phi2.cos() * (dlambda / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * h.sqrt().min(1.0).asin()
}

/// Standard base-32 geohash with `precision` characters (1..=12).
pub fn geohash_encode(p: LatLon, precision: usize) -> Result<String> {
    if !(1..=12).contains(&precision) {
        return Err(Error::config(
            "geohash_precision",
            format!("{precision} outside [1, 12]"),
        ));
    }
    let (mut lat_lo, mut lat_hi) = (-90.0f64, 90.0f64);
    let (mut lon_lo, mut lon_hi) = (-180.0f64, 180.0f64);
    let mut out = String::with_capacity(precision);
    let mut even = true;
    let (mut bits, mut ch) = (0u8, 0usize);
    while out.len() < precision {
        let (lo, hi, v) = if even {
            (&mut lon_lo, &mut lon_hi, p.lon)
        } else {
            (&mut lat_lo, &mut lat_hi, p.lat)
        };
        let mid = (*lo + *hi) / 2.0;
        ch <<= 1;
        if v >= mid {
            ch |= 1;
            *lo = mid;
        } else {
            *hi = mid;
        }
        even = !even;
        bits += 1;
        if bits == 5 {
            out.push(GEOHASH_ALPHABET[ch] as char);
            bits = 0;
            ch = 0;
        }
    }
    Ok(out)
}

/// Bounds of a geohash cell. Used to check encodings; the pipeline never
/// decodes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeohashCell {
    pub lat_range: (f64, f64),
    pub lon_range: (f64, f64),
}

impl GeohashCell {
    pub fn center(&self) -> (f64, f64) {
        (
            (self.lat_range.0 + self.lat_range.1) / 2.0,
            (self.lon_range.0 + self.lon_range.1) / 2.0,
        )
    }

    pub fn contains(&self, p: LatLon) -> bool {
        (self.lat_range.0..=self.lat_range.1).contains(&p.lat) && (self.lon_range.0..=self.lon_range.1).contains(&p.lon)
    }
}

pub fn geohash_decode(hash: &str) -> Option<GeohashCell> {
    let mut lat = (-90.0f64, 90.0f64);
    let mut lon = (-180.0f64, 180.0f64);
    let mut even = true;
    for c in hash.bytes() {
        let idx = GEOHASH_ALPHABET.iter().position(|&a| a == c)?;
        for shift in (0..5).rev() {
            let bit = (idx >> shift) & 1 == 1;
            let range = if even { &mut lon } else { &mut lat };
            let mid = (range.0 + range.1) / 2.0;
            if bit {
                range.0 = mid;
            } else {
                range.1 = mid;
            }
            even = !even;
        }
    }
    Some(GeohashCell {
        lat_range: lat,
        lon_range: lon,
    })
}
