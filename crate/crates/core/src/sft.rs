//! Instruction-tuning datasets: next-location prediction with user profiles,
//! mobility recovery with masked visits, and the two location-alignment
//! directions between token sequences and descriptions.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;

use chrono::{DateTime, FixedOffset, Timelike, Utc};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{Trajectory, Visit};
use crate::tokens::{scan_tokens, TokenMap};

pub const MASK: &str = "[MASK]";
pub const PROFILE_TOP_K: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    NextPrediction,
    Recovery,
    TokenToText,
    TextToToken,
}

impl Task {
    pub const ALL: [Task; 4] = [
        Task::NextPrediction,
        Task::Recovery,
        Task::TokenToText,
        Task::TextToToken,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Task::NextPrediction => "next_prediction",
            Task::Recovery => "recovery",
            Task::TokenToText => "token_to_text",
            Task::TextToToken => "text_to_token",
        }
    }
}

/// Prompt wording for one task: instruction text and an input skeleton with
/// `{placeholder}` slots.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Template {
    pub instruction: String,
    pub input: String,
}

impl Template {
    fn parse(raw: &str) -> Self {
        let (instruction, input) = raw.split_once("\n---\n").unwrap_or((raw, ""));
        Template {
            instruction: instruction.trim().to_string(),
            input: input.trim_end().to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateSet {
    pub version: String,
    templates: BTreeMap<Task, Template>,
}

impl TemplateSet {
    pub fn load(version: &str) -> Result<Self> {
        let raw: [(Task, &str); 4] = match version {
            "v1" => [
                (
                    Task::NextPrediction,
                    include_str!("../templates/v1/next_prediction.txt"),
                ),
                (Task::Recovery, include_str!("../templates/v1/recovery.txt")),
                (Task::TokenToText, include_str!("../templates/v1/token_to_text.txt")),
                (Task::TextToToken, include_str!("../templates/v1/text_to_token.txt")),
            ],
            other => {
                return Err(Error::config(
                    "sft.template_version",
                    format!("unknown template version `{other}` (available: v1)"),
                ))
            }
        };
        Ok(Self {
            version: version.to_string(),
            templates: raw.into_iter().map(|(t, s)| (t, Template::parse(s))).collect(),
        })
    }

    pub fn get(&self, task: Task) -> &Template {
        &self.templates[&task]
    }
}

/// Frequency summary of a user's training history.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserProfile {
    pub hours: Vec<(u32, usize)>,
    /// Locations as rendered token strings.
    pub locations: Vec<(String, usize)>,
    pub categories: Vec<(String, usize)>,
}

fn top_k<K: Ord + Clone>(counts: HashMap<K, usize>, k: usize) -> Vec<(K, usize)> {
    let mut v: Vec<(K, usize)> = counts.into_iter().collect();
    v.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    v.truncate(k);
    v
}

/// Counts hours of day, locations and categories over `history` and keeps the
/// `k` most frequent of each.
pub fn build_user_profile(
    history: &[&Trajectory],
    map: &TokenMap,
    categories: &HashMap<String, String>,
    tz: Option<FixedOffset>,
    k: usize,
) -> Result<UserProfile> {
    let mut hours: HashMap<u32, usize> = HashMap::new();
    let mut locs: HashMap<String, usize> = HashMap::new();
    let mut cats: HashMap<String, usize> = HashMap::new();
    for v in history.iter().flat_map(|t| &t.records) {
        *hours.entry(local(v.timestamp, tz).hour()).or_default() += 1;
        *locs.entry(map.render(&v.location_id)?).or_default() += 1;
        let cat = categories
            .get(&v.location_id)
            .ok_or_else(|| Error::MissingLocation(v.location_id.clone()))?;
        *cats.entry(cat.clone()).or_default() += 1;
    }
    Ok(UserProfile {
        hours: top_k(hours, k),
        locations: top_k(locs, k),
        categories: top_k(cats, k),
    })
}

fn local(ts: DateTime<Utc>, tz: Option<FixedOffset>) -> DateTime<FixedOffset> {
    ts.with_timezone(&tz.unwrap_or_else(|| FixedOffset::east_opt(0).unwrap()))
}

/// Natural-language timestamp such as `Tuesday 09:15, 2012-04-03`.
pub fn render_time(ts: DateTime<Utc>, tz: Option<FixedOffset>) -> String {
    local(ts, tz).format("%A %H:%M, %Y-%m-%d").to_string()
}

pub fn parse_timezone(s: &str) -> Result<FixedOffset> {
    s.parse::<FixedOffset>()
        .map_err(|e| Error::config("sft.timezone", format!("`{s}`: {e}")))
}

fn visits_label(n: usize) -> String {
    if n == 1 {
        "1 visit".into()
    } else {
        format!("{n} visits")
    }
}

fn join_counts<I: IntoIterator<Item = (String, usize)>>(items: I) -> String {
    let parts: Vec<String> = items
        .into_iter()
        .map(|(k, n)| format!("{k} ({})", visits_label(n)))
        .collect();
    if parts.is_empty() {
        "none".into()
    } else {
        parts.join(", ")
    }
}

fn render_visit(out: &mut String, v: &Visit, tokens: &str, tz: Option<FixedOffset>) {
    if !out.is_empty() {
        out.push('\n');
    }
    let _ = write!(out, "{}: {tokens}", render_time(v.timestamp, tz));
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExampleMeta {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub user_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trajectory_index: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trajectory_start: Option<DateTime<Utc>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trajectory_end: Option<DateTime<Utc>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub mask_positions: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub location_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SftExample {
    pub task: Task,
    pub instruction: String,
    pub input: String,
    pub output: String,
    pub meta: ExampleMeta,
}

fn trajectory_meta(traj: &Trajectory, index: usize) -> ExampleMeta {
    ExampleMeta {
        user_id: Some(traj.user_id.clone()),
        trajectory_index: Some(index),
        trajectory_start: traj.start(),
        trajectory_end: traj.end(),
        ..Default::default()
    }
}

/// Prompt for predicting the last visit of `traj` from the ones before it.
/// `None` when the trajectory has fewer than two visits.
pub fn make_next_prediction_example(
    traj: &Trajectory,
    index: usize,
    profile: &UserProfile,
    map: &TokenMap,
    templates: &TemplateSet,
    tz: Option<FixedOffset>,
) -> Result<Option<SftExample>> {
    let n = traj.len();
    if n < 2 {
        return Ok(None);
    }
    let mut visits = String::new();
    for v in &traj.records[..n - 1] {
        render_visit(&mut visits, v, &map.render(&v.location_id)?, tz);
    }
    let hours = profile.hours.iter().map(|&(h, c)| (format!("{h:02}:00"), c));
    let t = templates.get(Task::NextPrediction);
    let input = t
        .input
        .replace("{hours}", &join_counts(hours))
        .replace("{locations}", &join_counts(profile.locations.iter().cloned()))
        .replace("{categories}", &join_counts(profile.categories.iter().cloned()))
        .replace("{visits}", &visits);
    Ok(Some(SftExample {
        task: Task::NextPrediction,
        instruction: t.instruction.clone(),
        input,
        output: map.render(&traj.records[n - 1].location_id)?,
        meta: trajectory_meta(traj, index),
    }))
}

/// Number of masked visits for a trajectory of `n` visits:
/// `max(1, round(ratio * n))`, capped at `n - 1`.
pub fn mask_count(n: usize, ratio: f64) -> usize {
    ((ratio * n as f64).round() as usize).max(1).min(n.saturating_sub(1))
}

/// Sorted positions to mask, drawn uniformly without replacement.
pub fn mask_positions<R: Rng + ?Sized>(n: usize, ratio: f64, rng: &mut R) -> Result<Vec<usize>> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::config("ratio", format!("{ratio} is outside (0, 1)")));
    }
    if n < 2 {
        return Err(Error::Internal(format!("cannot mask a trajectory of {n} visits")));
    }
    let mut pos = rand::seq::index::sample(rng, n, mask_count(n, ratio)).into_vec();
    pos.sort_unstable();
    Ok(pos)
}

/// Recovery prompt with a `ratio` share of visits replaced by `[MASK]`.
/// `None` when the trajectory has fewer than three visits.
pub fn make_recovery_example<R: Rng + ?Sized>(
    traj: &Trajectory,
    index: usize,
    ratio: f64,
    rng: &mut R,
    map: &TokenMap,
    templates: &TemplateSet,
    tz: Option<FixedOffset>,
) -> Result<Option<SftExample>> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::config("sft.ratios", format!("{ratio} is outside (0, 1)")));
    }
    if traj.len() < 3 {
        return Ok(None);
    }
    let masked = mask_positions(traj.len(), ratio, rng)?;
    let mut visits = String::new();
    let mut output = Vec::with_capacity(masked.len());
    for (i, v) in traj.records.iter().enumerate() {
        let tokens = map.render(&v.location_id)?;
        if masked.binary_search(&i).is_ok() {
            render_visit(&mut visits, v, MASK, tz);
            output.push(tokens);
        } else {
            render_visit(&mut visits, v, &tokens, tz);
        }
    }
    let t = templates.get(Task::Recovery);
    let mut meta = trajectory_meta(traj, index);
    meta.mask_positions = masked;
    Ok(Some(SftExample {
        task: Task::Recovery,
        instruction: t.instruction.clone(),
        input: t.input.replace("{visits}", &visits),
        output: output.join("\n"),
        meta,
    }))
}

/// The token→text and text→token pair for one location.
pub fn make_alignment_examples(
    location_id: &str,
    description: &str,
    map: &TokenMap,
    templates: &TemplateSet,
) -> Result<[SftExample; 2]> {
    let tokens = map.render(location_id)?;
    let meta = ExampleMeta {
        location_id: Some(location_id.to_string()),
        ..Default::default()
    };
    let tt = templates.get(Task::TokenToText);
    let xt = templates.get(Task::TextToToken);
    Ok([
        SftExample {
            task: Task::TokenToText,
            instruction: tt.instruction.clone(),
            input: tt.input.replace("{tokens}", &tokens),
            output: description.to_string(),
            meta: meta.clone(),
        },
        SftExample {
            task: Task::TextToToken,
            instruction: xt.instruction.clone(),
            input: xt.input.replace("{description}", description),
            output: tokens,
            meta,
        },
    ])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SftConfig {
    pub ratios: Vec<f64>,
    pub template_version: String,
    pub seed: u64,
    /// Fixed UTC offset such as `+08:00` used to render times.
    pub timezone: Option<String>,
}

impl Default for SftConfig {
    fn default() -> Self {
        Self {
            ratios: vec![0.2, 0.3, 0.4, 0.5],
            template_version: "v1".into(),
            seed: 42,
            timezone: None,
        }
    }
}

impl SftConfig {
    pub fn validate(&self) -> Result<()> {
        if self.ratios.is_empty() {
            return Err(Error::config("sft.ratios", "at least one ratio required"));
        }
        if let Some(r) = self.ratios.iter().find(|r| !(**r > 0.0 && **r < 1.0)) {
            return Err(Error::config("sft.ratios", format!("{r} is outside (0, 1)")));
        }
        TemplateSet::load(&self.template_version)?;
        if let Some(tz) = &self.timezone {
            parse_timezone(tz)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SftManifest {
    pub format_version: u32,
    pub template_version: String,
    pub seed: u64,
    pub counts: BTreeMap<Task, usize>,
    pub total: usize,
}

/// Builds the full dataset from training trajectories and location
/// descriptions. Examples are generated in a fixed order (task, then
/// trajectory index or location id) and then shuffled with `cfg.seed`.
pub fn build_dataset(
    train: &[Trajectory],
    descriptions: &BTreeMap<String, String>,
    categories: &HashMap<String, String>,
    map: &TokenMap,
    cfg: &SftConfig,
) -> Result<(Vec<SftExample>, SftManifest)> {
    cfg.validate()?;
    let templates = TemplateSet::load(&cfg.template_version)?;
    let tz = cfg.timezone.as_deref().map(parse_timezone).transpose()?;

    let mut by_user: BTreeMap<&str, Vec<&Trajectory>> = BTreeMap::new();
    for t in train {
        by_user.entry(&t.user_id).or_default().push(t);
    }
    let mut profiles = HashMap::new();
    for (user, hist) in &by_user {
        profiles.insert(*user, build_user_profile(hist, map, categories, tz, PROFILE_TOP_K)?);
    }

    let mut examples = Vec::new();
    for (i, t) in train.iter().enumerate() {
        let profile = &profiles[t.user_id.as_str()];
        match make_next_prediction_example(t, i, profile, map, &templates, tz)? {
            Some(ex) => examples.push(ex),
            None => log::warn!("sft: trajectory {i} too short for next-location prediction"),
        }
    }
    for (i, t) in train.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(i as u64 + 1);
        let ratio = cfg.ratios[rng.gen_range(0..cfg.ratios.len())];
        match make_recovery_example(t, i, ratio, &mut rng, map, &templates, tz)? {
            Some(ex) => examples.push(ex),
            None => log::warn!("sft: trajectory {i} too short for recovery"),
        }
    }
    let mut alignment = Vec::new();
    for id in map.ids() {
        let desc = descriptions
            .get(id)
            .ok_or_else(|| Error::MissingLocation(id.to_string()))?;
        alignment.extend(make_alignment_examples(id, desc, map, &templates)?);
    }
    alignment.sort_by_key(|e| e.task);
    examples.extend(alignment);

    let mut counts: BTreeMap<Task, usize> = Task::ALL.iter().map(|&t| (t, 0)).collect();
    for e in &examples {
        *counts.get_mut(&e.task).unwrap() += 1;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    examples.shuffle(&mut rng);
    let manifest = SftManifest {
        format_version: crate::FORMAT_VERSION,
        template_version: cfg.template_version.clone(),
        seed: cfg.seed,
        counts,
        total: examples.len(),
    };
    Ok((examples, manifest))
}

/// Checks an example against its type invariants: non-empty output, the
/// instruction of its task's template, and only known location tokens.
pub fn validate_example(ex: &SftExample, vocabulary: &HashSet<String>, templates: &TemplateSet) -> Result<()> {
    let bad = |msg: String| Error::Internal(format!("{} example: {msg}", ex.task.as_str()));
    if ex.output.trim().is_empty() {
        return Err(bad("empty output".into()));
    }
    if ex.instruction != templates.get(ex.task).instruction {
        return Err(bad(format!(
            "instruction does not match template {}",
            templates.version
        )));
    }
    for field in [&ex.instruction, &ex.input, &ex.output] {
        if let Some(t) = scan_tokens(field).into_iter().find(|t| !vocabulary.contains(*t)) {
            return Err(bad(format!("unknown location token {t}")));
        }
    }
    if ex.task == Task::Recovery {
        let n = ex.input.lines().filter(|l| l.contains(": ")).count();
        let m = ex.meta.mask_positions.len();
        if m == 0 || m >= n.max(1) {
            return Err(bad(format!("{m} masks for {n} visits")));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    fn at(d: u32, h: u32, m: u32) -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2012, 4, d, h, m, 0).unwrap()
    }

    fn traj(user: &str, visits: &[(&str, DateTime<Utc>)]) -> Trajectory {
        Trajectory {
            user_id: user.into(),
            records: visits
                .iter()
                .map(|(l, t)| Visit {
                    location_id: l.to_string(),
                    timestamp: *t,
                })
                .collect(),
        }
    }

    fn map() -> TokenMap {
        let raw: BTreeMap<String, Vec<usize>> = [
            ("A", vec![0, 1]),
            ("B", vec![1, 0]),
            ("C", vec![1, 2]),
            ("D", vec![2, 2]),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        crate::tokens::assign_tokens(&raw).unwrap()
    }

    fn cats() -> HashMap<String, String> {
        [("A", "Cafe"), ("B", "Office"), ("C", "Cafe"), ("D", "Gym")]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect()
    }

    #[test]
    fn time_rendering() {
        assert_eq!(render_time(at(3, 9, 15), None), "Tuesday 09:15, 2012-04-03");
        let tz = parse_timezone("+09:00").unwrap();
        assert_eq!(render_time(at(3, 20, 5), Some(tz)), "Wednesday 05:05, 2012-04-04");
        assert!(parse_timezone("nowhere").unwrap_err().is_validation());
    }

    #[test]
    fn empty_profile() {
        let p = build_user_profile(&[], &map(), &cats(), None, 5).unwrap();
        assert_eq!(p, UserProfile::default());
    }

    #[test]
    fn profile_counts_hours() {
        let t = traj("u", &[("A", at(3, 9, 0)), ("B", at(3, 9, 30)), ("C", at(3, 14, 0))]);
        let p = build_user_profile(&[&t], &map(), &cats(), None, 5).unwrap();
        assert_eq!(p.hours, vec![(9, 2), (14, 1)]);
        assert_eq!(p.categories, vec![("Cafe".to_string(), 2), ("Office".to_string(), 1)]);
        assert_eq!(p.locations[0], ("<a_0><b_1>".to_string(), 1));
    }

    #[test]
    fn two_record_trajectory() {
        let t = traj("u", &[("A", at(3, 9, 0)), ("B", at(3, 10, 0))]);
        let tpl = TemplateSet::load("v1").unwrap();
        let ex = make_next_prediction_example(&t, 0, &UserProfile::default(), &map(), &tpl, None)
            .unwrap()
            .unwrap();
        assert_eq!(ex.output, "<a_1><b_0>");
        assert!(ex.input.contains("Tuesday 09:00, 2012-04-03: <a_0><b_1>"));
        assert!(!ex.input.contains("<a_1><b_0>"));
        let one = traj("u", &[("A", at(3, 9, 0))]);
        assert!(
            make_next_prediction_example(&one, 0, &UserProfile::default(), &map(), &tpl, None)
                .unwrap()
                .is_none()
        );
    }

    #[test]
    fn mask_counts() {
        assert_eq!(mask_count(10, 0.2), 2);
        assert_eq!(mask_count(4, 0.5), 2);
        assert_eq!(mask_count(3, 0.2), 1);
        assert_eq!(mask_count(3, 0.9), 2);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(mask_positions(5, 1.0, &mut rng).unwrap_err().is_validation());
        assert!(mask_positions(5, 0.0, &mut rng).unwrap_err().is_validation());
    }

    #[test]
    fn masks_are_seeded() {
        let draw = |seed| mask_positions(20, 0.4, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        assert_eq!(draw(7), draw(7));
        assert_eq!(draw(7).len(), 8);
    }

    #[test]
    fn recovery_example_masks() {
        let t = traj(
            "u",
            &[
                ("A", at(3, 9, 0)),
                ("B", at(3, 10, 0)),
                ("C", at(3, 11, 0)),
                ("D", at(3, 12, 0)),
            ],
        );
        let tpl = TemplateSet::load("v1").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ex = make_recovery_example(&t, 0, 0.5, &mut rng, &map(), &tpl, None)
            .unwrap()
            .unwrap();
        assert_eq!(ex.meta.mask_positions.len(), 2);
        assert_eq!(ex.input.matches(MASK).count(), 2);
        let expect: Vec<String> = ex
            .meta
            .mask_positions
            .iter()
            .map(|&p| map().render(&t.records[p].location_id).unwrap())
            .collect();
        assert_eq!(ex.output, expect.join("\n"));
        assert!(make_recovery_example(&t, 0, 1.5, &mut rng, &map(), &tpl, None)
            .unwrap_err()
            .is_validation());
    }

    #[test]
    fn alignment_pair_mirrors() {
        let tpl = TemplateSet::load("v1").unwrap();
        let [a, b] = make_alignment_examples("C", "A cafe.", &map(), &tpl).unwrap();
        assert_eq!(a.output, "A cafe.");
        assert_eq!(b.output, "<a_1><b_2>");
        assert!(a.input.contains(&b.output));
        assert!(b.input.contains(&a.output));
        assert_eq!(map().resolve(&scan_tokens(&b.output)), Some("C"));
    }

    #[test]
    fn unknown_template_version() {
        assert!(TemplateSet::load("v9").unwrap_err().is_validation());
    }

    #[test]
    fn dataset_counts() {
        let descs: BTreeMap<String, String> = ["A", "B", "C", "D"]
            .iter()
            .map(|id| (id.to_string(), format!("Location {id}.")))
            .collect();
        let m = map();
        let (ex, man) = build_dataset(&[], &descs, &cats(), &m, &SftConfig::default()).unwrap();
        assert_eq!((ex.len(), man.total), (8, 8));

        let trajs: Vec<Trajectory> = (0..5)
            .map(|d| {
                traj(
                    "u",
                    &[("A", at(d + 1, 9, 0)), ("B", at(d + 1, 10, 0)), ("C", at(d + 1, 11, 0))],
                )
            })
            .collect();
        let (ex, man) = build_dataset(&trajs, &descs, &cats(), &m, &SftConfig::default()).unwrap();
        assert_eq!(man.counts[&Task::NextPrediction], 5);
        assert_eq!(man.counts[&Task::Recovery], 5);
        assert_eq!(man.counts[&Task::TokenToText] + man.counts[&Task::TextToToken], 8);
        assert_eq!(man.total, 18);
        let vocab: HashSet<String> = m.vocabulary().into_iter().collect();
        let tpl = TemplateSet::load("v1").unwrap();
        for e in &ex {
            validate_example(e, &vocab, &tpl).unwrap();
        }
        let (again, _) = build_dataset(&trajs, &descs, &cats(), &m, &SftConfig::default()).unwrap();
        assert_eq!(ex, again);
    }
}
