//! Check-in parsing and preprocessing: sparse-location filtering, gap-based
//! trajectory grouping and chronological per-user splitting.

use std::collections::HashMap;
use std::io::{BufRead, Read};
use std::str::FromStr;

use chrono::{DateTime, SubsecRound, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One check-in: user `user_id` visited `location_id` at `timestamp`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MobilityRecord {
    pub user_id: String,
    pub location_id: String,
    pub timestamp: DateTime<Utc>,
}

/// A visit inside a trajectory; the user is stored once on the trajectory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Visit {
    pub location_id: String,
    pub timestamp: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trajectory {
    pub user_id: String,
    pub records: Vec<Visit>,
}

/// Identity of a trajectory across files: user plus first and last instant.
pub type TrajectoryKey = (String, DateTime<Utc>, DateTime<Utc>);

impl Trajectory {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn start(&self) -> Option<DateTime<Utc>> {
        self.records.first().map(|v| v.timestamp)
    }

    pub fn end(&self) -> Option<DateTime<Utc>> {
        self.records.last().map(|v| v.timestamp)
    }

    pub fn key(&self) -> TrajectoryKey {
        (
            self.user_id.clone(),
            self.start().unwrap_or_default(),
            self.end().unwrap_or_default(),
        )
    }

    /// Checks ordering, gap and minimum-length invariants.
    pub fn validate(&self, gap_hours: f64, min_len: usize) -> Result<()> {
        if self.records.len() < min_len {
            return Err(Error::Internal(format!(
                "trajectory of {} has {} records (< {min_len})",
                self.user_id,
                self.records.len()
            )));
        }
        let gap = gap_seconds(gap_hours);
        for w in self.records.windows(2) {
            let dt = (w[1].timestamp - w[0].timestamp).num_seconds();
            if dt < 0 || dt as f64 >= gap {
                return Err(Error::Internal(format!(
                    "trajectory of {} breaks gap/order invariant ({dt} s)",
                    self.user_id
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<Trajectory>,
    pub validation: Vec<Trajectory>,
    pub test: Vec<Trajectory>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckinFormat {
    Csv,
    Jsonl,
}

impl FromStr for CheckinFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(CheckinFormat::Csv),
            "jsonl" | "ndjson" => Ok(CheckinFormat::Jsonl),
            other => Err(Error::config(
                "checkins_format",
                format!("unknown format `{other}` (expected csv or jsonl)"),
            )),
        }
    }
}

#[derive(Deserialize)]
struct RawCheckin {
    user_id: Option<String>,
    location_id: Option<String>,
    timestamp: Option<String>,
}

fn field(line: usize, name: &str, value: Option<String>) -> Result<String> {
    match value {
        Some(v) if !v.trim().is_empty() => Ok(v.trim().to_string()),
        _ => Err(Error::Parse {
            line,
            field: name.into(),
            message: "missing or empty".into(),
        }),
    }
}

fn record_from_raw(line: usize, raw: RawCheckin) -> Result<MobilityRecord> {
    let user_id = field(line, "user_id", raw.user_id)?;
    let location_id = field(line, "location_id", raw.location_id)?;
    let ts = field(line, "timestamp", raw.timestamp)?;
    let timestamp = DateTime::parse_from_rfc3339(&ts)
        .map_err(|e| Error::Parse {
            line,
            field: "timestamp".into(),
            message: format!("`{ts}`: {e}"),
        })?
        .with_timezone(&Utc)
        .trunc_subsecs(0);
    Ok(MobilityRecord {
        user_id,
        location_id,
        timestamp,
    })
}

/// Parses check-ins and returns them sorted by (user, timestamp). Equal keys
/// keep input order.
pub fn parse_checkins(source: impl Read, format: CheckinFormat) -> Result<Vec<MobilityRecord>> {
    let mut records = match format {
        CheckinFormat::Csv => {
            let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(source);
            let headers = rdr.headers().map_err(|e| Error::Parse {
                line: 1,
                field: "<header>".into(),
                message: e.to_string(),
            })?;
            if !headers.is_empty() {
                for col in ["user_id", "location_id", "timestamp"] {
                    if !headers.iter().any(|h| h == col) {
                        return Err(Error::Parse {
                            line: 1,
                            field: col.into(),
                            message: "missing column in header".into(),
                        });
                    }
                }
            }
            let mut out = Vec::new();
            for row in rdr.deserialize::<RawCheckin>() {
                let row = row.map_err(|e| Error::Parse {
                    line: e.position().map(|p| p.line() as usize).unwrap_or(0),
                    field: "<row>".into(),
                    message: e.to_string(),
                })?;
                // header occupies line 1
                let line = out.len() + 2;
                out.push(record_from_raw(line, row)?);
            }
            out
        }
        CheckinFormat::Jsonl => {
            let reader = std::io::BufReader::new(source);
            let mut out = Vec::new();
            for (i, line) in reader.lines().enumerate() {
                let line_no = i + 1;
                let line = line.map_err(|e| Error::Parse {
                    line: line_no,
                    field: "<line>".into(),
                    message: e.to_string(),
                })?;
                if line.trim().is_empty() {
                    continue;
                }
                let raw: RawCheckin = serde_json::from_str(&line).map_err(|e| Error::Parse {
                    line: line_no,
                    field: "<json>".into(),
                    message: e.to_string(),
                })?;
                out.push(record_from_raw(line_no, raw)?);
            }
            out
        }
    };
    records.sort_by(|a, b| a.user_id.cmp(&b.user_id).then(a.timestamp.cmp(&b.timestamp)));
    Ok(records)
}

/// Drops records of locations visited fewer than `min_visits` times in the
/// input. One pass; counts are taken before any removal.
pub fn filter_sparse_locations(records: Vec<MobilityRecord>, min_visits: usize) -> Vec<MobilityRecord> {
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for r in &records {
        *counts.entry(r.location_id.as_str()).or_default() += 1;
    }
    let keep: std::collections::HashSet<String> = counts
        .into_iter()
        .filter(|&(_, c)| c >= min_visits)
        .map(|(id, _)| id.to_string())
        .collect();
    records.into_iter().filter(|r| keep.contains(&r.location_id)).collect()
}

fn gap_seconds(gap_hours: f64) -> f64 {
    gap_hours * 3600.0
}

/// Groups per-user sorted records into trajectories. A new trajectory starts
/// when the user changes or the gap to the previous record is at least
/// `gap_hours`; pieces shorter than `min_len` are dropped.
pub fn build_trajectories(records: &[MobilityRecord], gap_hours: f64, min_len: usize) -> Vec<Trajectory> {
    let gap = gap_seconds(gap_hours);
    let mut out = Vec::new();
    let mut current: Option<Trajectory> = None;
    for r in records {
        let split = match &current {
            None => true,
            Some(t) => {
                t.user_id != r.user_id || (r.timestamp - t.end().expect("non-empty")).num_seconds() as f64 >= gap
            }
        };
        if split {
            if let Some(t) = current.take() {
                if t.len() >= min_len {
                    out.push(t);
                }
            }
            current = Some(Trajectory {
                user_id: r.user_id.clone(),
                records: Vec::new(),
            });
        }
        current.as_mut().expect("set above").records.push(Visit {
            location_id: r.location_id.clone(),
            timestamp: r.timestamp,
        });
    }
    if let Some(t) = current {
        if t.len() >= min_len {
            out.push(t);
        }
    }
    out
}

/// Flattens trajectories back to records (inverse of grouping).
pub fn flatten(trajectories: &[Trajectory]) -> Vec<MobilityRecord> {
    trajectories
        .iter()
        .flat_map(|t| {
            t.records.iter().map(move |v| MobilityRecord {
                user_id: t.user_id.clone(),
                location_id: v.location_id.clone(),
                timestamp: v.timestamp,
            })
        })
        .collect()
}

/// Sizes (train, validation, test) for a user with `n` trajectories.
pub fn split_sizes(n: usize, fractions: (f64, f64, f64)) -> (usize, usize, usize) {
    if n < 3 {
        return (n, 0, 0);
    }
    // the epsilon keeps 0.7 * 10 from flooring to 6
    let train = (fractions.0 * n as f64 + 1e-9).floor() as usize;
    let val = (fractions.1 * n as f64 + 1e-9).floor() as usize;
    let train = train.min(n);
    let val = val.min(n - train);
    (train, val, n - train - val)
}

/// Per-user chronological split. Users with fewer than 3 trajectories go
/// entirely to train.
pub fn chronological_split(trajectories: &[Trajectory], fractions: (f64, f64, f64)) -> Result<DatasetSplit> {
    let (a, b, c) = fractions;
    if !(a > 0.0 && b > 0.0 && c > 0.0) || ((a + b + c) - 1.0).abs() > 1e-9 {
        return Err(Error::config(
            "split",
            format!("fractions ({a}, {b}, {c}) must be positive and sum to 1"),
        ));
    }
    let mut by_user: Vec<&Trajectory> = trajectories.iter().collect();
    by_user.sort_by(|x, y| x.user_id.cmp(&y.user_id).then(x.start().cmp(&y.start())));

    let mut split = DatasetSplit::default();
    let mut i = 0;
    while i < by_user.len() {
        let user = &by_user[i].user_id;
        let j = i + by_user[i..].iter().take_while(|t| &t.user_id == user).count();
        let group = &by_user[i..j];
        let (n_train, n_val, _) = split_sizes(group.len(), fractions);
        for (k, t) in group.iter().enumerate() {
            let dest = if k < n_train {
                &mut split.train
            } else if k < n_train + n_val {
                &mut split.validation
            } else {
                &mut split.test
            };
            dest.push((*t).clone());
        }
        i = j;
    }
    Ok(split)
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::{Duration, TimeZone};
    use proptest::prelude::*;

    fn at(hours: i64) -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2012, 4, 3, 0, 0, 0).unwrap() + Duration::hours(hours)
    }

    fn rec(user: &str, loc: &str, hours: i64) -> MobilityRecord {
        MobilityRecord {
            user_id: user.into(),
            location_id: loc.into(),
            timestamp: at(hours),
        }
    }

    #[test]
    fn parse_empty_and_sorting() {
        assert!(parse_checkins("".as_bytes(), CheckinFormat::Csv).unwrap().is_empty());
        assert!(parse_checkins("".as_bytes(), CheckinFormat::Jsonl).unwrap().is_empty());
        let csv = "user_id,location_id,timestamp\n\
                   u1,b,2012-04-03T10:00:00Z\n\
                   u1,a,2012-04-03T08:00:00+00:00\n\
                   u1,c,2012-04-03T04:00:00-05:00\n";
        let recs = parse_checkins(csv.as_bytes(), CheckinFormat::Csv).unwrap();
        let locs: Vec<_> = recs.iter().map(|r| r.location_id.as_str()).collect();
        assert_eq!(locs, ["a", "c", "b"]);
        assert_eq!(recs[1].timestamp, at(9));
    }

    #[test]
    fn parse_reports_line_of_bad_timestamp() {
        let csv = "user_id,location_id,timestamp\nu1,a,2012-04-03T10:00:00Z\nu1,b,yesterday\n";
        match parse_checkins(csv.as_bytes(), CheckinFormat::Csv) {
            Err(Error::Parse { line, field, .. }) => {
                assert_eq!(line, 3);
                assert_eq!(field, "timestamp");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
        let jsonl = "{\"user_id\":\"u\",\"location_id\":\"a\",\"timestamp\":\"2012-04-03T10:00:00Z\"}\n\n{\"user_id\":\"u\",\"location_id\":\"a\",\"timestamp\":\"nope\"}\n";
        match parse_checkins(jsonl.as_bytes(), CheckinFormat::Jsonl) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_format_is_config_error() {
        assert!("parquet".parse::<CheckinFormat>().unwrap_err().is_validation());
        assert_eq!("JSONL".parse::<CheckinFormat>().unwrap(), CheckinFormat::Jsonl);
    }

    #[test]
    fn sparse_filter_examples() {
        let mut recs: Vec<_> = (0..5).map(|h| rec("u", "A", h)).collect();
        recs.extend((0..4).map(|h| rec("u", "B", h)));
        let kept = filter_sparse_locations(recs.clone(), 5);
        assert!(kept.iter().all(|r| r.location_id == "A"));
        assert_eq!(kept.len(), 5);
        assert_eq!(filter_sparse_locations(recs.clone(), 1), recs);
    }

    #[test]
    fn trajectory_gap_examples() {
        let one = build_trajectories(&[rec("u", "a", 0), rec("u", "b", 10), rec("u", "c", 30)], 24.0, 3);
        assert_eq!(one.len(), 1);
        assert_eq!(one[0].len(), 3);

        let none = build_trajectories(&[rec("u", "a", 0), rec("u", "b", 10), rec("u", "c", 36)], 24.0, 3);
        assert!(none.is_empty());

        let hours = [0, 1, 2, 40, 41, 42];
        let recs: Vec<_> = hours.iter().map(|&h| rec("u", "a", h)).collect();
        let two = build_trajectories(&recs, 24.0, 3);
        assert_eq!(two.iter().map(Trajectory::len).collect::<Vec<_>>(), [3, 3]);
    }

    #[test]
    fn exact_gap_splits() {
        let recs = [rec("u", "a", 0), rec("u", "b", 1), rec("u", "c", 25), rec("u", "d", 26)];
        let t = build_trajectories(&recs, 24.0, 2);
        assert_eq!(t.len(), 2);
    }

    #[test]
    fn split_size_examples() {
        let f = (0.7, 0.1, 0.2);
        assert_eq!(split_sizes(10, f), (7, 1, 2));
        assert_eq!(split_sizes(3, f), (2, 0, 1));
        assert_eq!(split_sizes(1, f), (1, 0, 0));
        assert_eq!(split_sizes(2, f), (2, 0, 0));
    }

    #[test]
    fn bad_fractions_rejected() {
        assert!(chronological_split(&[], (0.5, 0.5, 0.5)).unwrap_err().is_validation());
        assert!(chronological_split(&[], (0.8, 0.2, 0.0)).unwrap_err().is_validation());
        assert!(chronological_split(&[], (0.7, 0.1, 0.2)).is_ok());
    }

    fn arb_records() -> impl Strategy<Value = Vec<MobilityRecord>> {
        prop::collection::vec((0usize..4, 0usize..6, 0i64..2000), 0..120).prop_map(|raw| {
            let mut recs: Vec<_> = raw
                .into_iter()
                .map(|(u, l, h)| rec(&format!("u{u}"), &format!("l{l}"), h))
                .collect();
            recs.sort_by(|a, b| a.user_id.cmp(&b.user_id).then(a.timestamp.cmp(&b.timestamp)));
            recs
        })
    }

    proptest! {
        #[test]
        fn grouping_invariants(recs in arb_records(), min_len in 1usize..5) {
            let trajs = build_trajectories(&recs, 24.0, min_len);
            for t in &trajs {
                prop_assert!(t.validate(24.0, min_len).is_ok());
            }
            let again = build_trajectories(&flatten(&trajs), 24.0, min_len);
            prop_assert_eq!(&again, &trajs);

            let split = chronological_split(&trajs, (0.7, 0.1, 0.2)).unwrap();
            prop_assert_eq!(split.train.len() + split.validation.len() + split.test.len(), trajs.len());
            let all = [&split.train, &split.validation, &split.test];
            for user in trajs.iter().map(|t| &t.user_id) {
                let ends = |v: &Vec<Trajectory>| v.iter().filter(|t| &t.user_id == user).map(|t| (t.start().unwrap(), t.end().unwrap())).collect::<Vec<_>>();
                let (tr, va, te) = (ends(all[0]), ends(all[1]), ends(all[2]));
                for a in &tr { for b in va.iter().chain(&te) { prop_assert!(a.1 <= b.0); } }
                for a in &va { for b in &te { prop_assert!(a.1 <= b.0); } }
            }
        }
    }
}
