//! End-to-end orchestration: a single config drives every stage, and each
//! stage reads the artifacts of earlier ones from the output directory.

mod config;

pub use config::{
    DecodeConfig, DescribeConfig, EmbedConfig, EvalConfig, IngestConfig, PathsConfig, PipelineConfig, SweepConfig,
};

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::{Path, PathBuf};

use chrono::SecondsFormat;
use serde::{Deserialize, Serialize};

use crate::decoder::{fit_ngram, trajectory_stream, NgramCheckpoint, NgramScorer, Scorer};
use crate::describe::{describe_all, DescriptionRecord};
use crate::embed::{hash_featurize, load_embeddings, save_embeddings, EmbeddingTable};
use crate::error::{Error, Result};
use crate::eval::{
    consistency_study, evaluate_next_location, evaluate_recovery, predict_next, predict_recovery, ConsistencyReport,
    EvalReport,
};
use crate::geo::Location;
use crate::ingest::{
    build_trajectories, chronological_split, filter_sparse_locations, parse_checkins, CheckinFormat, Trajectory,
};
use crate::io;
use crate::quantizer::{load_checkpoint, save_checkpoint, tokenize_all, train, EpochStats, QuantizerConfig};
use crate::sft::{build_dataset, SftManifest};
use crate::synth::{synthetic_city, CityConfig};
use crate::tokens::{assign_tokens, build_trie, TokenMap, TokenTrie};
use crate::Embeddings;

/// Artifact locations under the output directory.
#[derive(Debug, Clone)]
pub struct Layout {
    root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn split(&self, name: &str) -> PathBuf {
        self.root.join("splits").join(format!("{name}.jsonl"))
    }

    pub fn split_manifest(&self) -> PathBuf {
        self.root.join("splits/manifest.json")
    }

    pub fn descriptions(&self) -> PathBuf {
        self.root.join("descriptions.jsonl")
    }

    pub fn embeddings(&self) -> PathBuf {
        self.root.join("embeddings.json")
    }

    pub fn model(&self) -> PathBuf {
        self.root.join("quantizer/model.json")
    }

    pub fn tokens(&self) -> PathBuf {
        self.root.join("tokens.json")
    }

    pub fn zhat(&self) -> PathBuf {
        self.root.join("zhat.json")
    }

    pub fn sft_dataset(&self) -> PathBuf {
        self.root.join("sft/dataset.jsonl")
    }

    pub fn sft_manifest(&self) -> PathBuf {
        self.root.join("sft/manifest.json")
    }

    pub fn scorer(&self) -> PathBuf {
        self.root.join("scorer.json")
    }

    pub fn predictions(&self, task: &str) -> PathBuf {
        self.root.join("predictions").join(format!("{task}.jsonl"))
    }

    pub fn predictions_manifest(&self, task: &str) -> PathBuf {
        self.root.join("predictions").join(format!("{task}.json"))
    }

    pub fn report(&self) -> PathBuf {
        self.root.join("reports/report.json")
    }

    pub fn report_csv(&self) -> PathBuf {
        self.root.join("reports/report.csv")
    }

    pub fn consistency(&self) -> PathBuf {
        self.root.join("reports/consistency.json")
    }

    pub fn sweep_cell(&self, k: usize, l: usize) -> PathBuf {
        self.root.join("sweep").join(format!("K{k}_L{l}"))
    }

    pub fn sweep_summary(&self) -> PathBuf {
        self.root.join("sweep/summary.csv")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestSummary {
    pub format_version: u32,
    pub records_read: usize,
    pub unknown_location: usize,
    pub records_kept: usize,
    pub trajectories: usize,
    pub train: usize,
    pub validation: usize,
    pub test: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokensFile {
    pub format_version: u32,
    pub levels: usize,
    pub codebook_size: usize,
    /// Locations that needed a disambiguation token.
    pub collisions: usize,
    /// Share of codes used at each level.
    pub utilization: Vec<f64>,
    pub tokens: TokenMap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionManifest {
    pub format_version: u32,
    pub task: String,
    pub instances: usize,
    pub width: usize,
    pub topn: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub ratios: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub format_version: u32,
    pub reports: Vec<EvalReport>,
}

/// One (K, L) cell of a parameter sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub format_version: u32,
    pub codebook_size: usize,
    pub levels: usize,
    pub collisions: usize,
    pub final_reconstruction: f64,
    pub reports: Vec<EvalReport>,
}

pub struct Pipeline {
    pub config: PipelineConfig,
    layout: Layout,
}

fn load_locations(path: &Path) -> Result<Vec<Location>> {
    let locs: Vec<Location> = io::read_jsonl(path)?;
    let mut seen = HashSet::new();
    for l in &locs {
        if !seen.insert(l.id.as_str()) {
            return Err(Error::config(
                "paths.locations",
                format!("duplicate location id `{}`", l.id),
            ));
        }
    }
    if locs.is_empty() {
        return Err(Error::Empty("locations file".into()));
    }
    Ok(locs)
}

fn write_reports_csv(path: &Path, reports: &[EvalReport], extra: &[(&str, String)]) -> Result<()> {
    let file = io::create(path)?;
    let mut w = csv::Writer::from_writer(file);
    let mut header: Vec<&str> = extra.iter().map(|(k, _)| *k).collect();
    header.extend(["task", "ratio", "metric", "value", "instances"]);
    let csv_err = |e: csv::Error| Error::Internal(format!("csv {}: {e}", path.display()));
    w.write_record(&header).map_err(csv_err)?;
    for r in reports {
        for m in &r.metrics {
            let mut row: Vec<String> = extra.iter().map(|(_, v)| v.clone()).collect();
            row.push(r.task.clone());
            row.push(r.config.ratio.map(|x| x.to_string()).unwrap_or_default());
            row.push(m.name.clone());
            row.push(format!("{:.6}", m.value));
            row.push(r.instances.to_string());
            w.write_record(&row).map_err(csv_err)?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn utilization(raw: &BTreeMap<String, Vec<usize>>, levels: usize, k: usize) -> Vec<f64> {
    (0..levels)
        .map(|l| {
            let used: HashSet<usize> = raw.values().map(|v| v[l]).collect();
            used.len() as f64 / k as f64
        })
        .collect()
}

impl Pipeline {
    pub fn new(config: PipelineConfig) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config.paths.output_dir);
        Ok(Self { config, layout })
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    fn locations(&self) -> Result<Vec<Location>> {
        load_locations(&self.config.paths.locations)
    }

    fn read_split(&self, name: &str) -> Result<Vec<Trajectory>> {
        io::read_jsonl(&self.layout.split(name))
    }

    fn token_map(&self) -> Result<TokenMap> {
        let file: TokensFile = io::read_json(&self.layout.tokens())?;
        file.tokens.validate()?;
        Ok(file.tokens)
    }

    fn scorer_and_trie(&self) -> Result<(NgramScorer, TokenMap, TokenTrie)> {
        let cp: NgramCheckpoint = io::read_json(&self.layout.scorer())?;
        let scorer = NgramScorer::from_checkpoint(&cp)?;
        let map = self.token_map()?;
        let trie = build_trie(&map)?;
        Ok((scorer, map, trie))
    }

    /// Parses check-ins, keeps those at known locations, filters sparse
    /// locations, groups trajectories and splits them per user.
    pub fn ingest(&self) -> Result<IngestSummary> {
        self.config.require_inputs()?;
        let paths = &self.config.paths;
        let format: CheckinFormat = match &paths.checkins_format {
            Some(f) => f.parse()?,
            None => match paths.checkins.extension().and_then(|e| e.to_str()) {
                Some("jsonl") | Some("ndjson") => CheckinFormat::Jsonl,
                _ => CheckinFormat::Csv,
            },
        };
        let known: HashSet<String> = self.locations()?.into_iter().map(|l| l.id).collect();
        let records = parse_checkins(io::open(&paths.checkins)?, format)?;
        let read = records.len();
        let records: Vec<_> = records.into_iter().filter(|r| known.contains(&r.location_id)).collect();
        let unknown = read - records.len();
        if unknown > 0 {
            log::warn!("ingest: dropped {unknown} check-ins at locations missing from the locations file");
        }
        let ing = &self.config.ingest;
        let records = filter_sparse_locations(records, ing.min_visits);
        let trajs = build_trajectories(&records, ing.gap_hours, ing.min_len);
        let split = chronological_split(&trajs, (ing.split[0], ing.split[1], ing.split[2]))?;
        for (name, part) in [
            ("train", &split.train),
            ("validation", &split.validation),
            ("test", &split.test),
        ] {
            io::write_jsonl(&self.layout.split(name), part.iter())?;
        }
        let summary = IngestSummary {
            format_version: crate::FORMAT_VERSION,
            records_read: read,
            unknown_location: unknown,
            records_kept: records.len(),
            trajectories: trajs.len(),
            train: split.train.len(),
            validation: split.validation.len(),
            test: split.test.len(),
        };
        io::write_json(&self.layout.split_manifest(), &summary)?;
        Ok(summary)
    }

    /// Describes every location; visit counts come from the training split.
    pub fn describe(&self) -> Result<usize> {
        let locs = self.locations()?;
        let mut visits: HashMap<String, u64> = HashMap::new();
        for v in self.read_split("train")?.iter().flat_map(|t| &t.records) {
            *visits.entry(v.location_id.clone()).or_default() += 1;
        }
        let d = &self.config.describe;
        let records = describe_all(&locs, &visits, d.radius_km, d.k, d.geohash_precision)?;
        io::write_jsonl(&self.layout.descriptions(), records.iter())?;
        Ok(records.len())
    }

    /// Writes the embedding table in location order, from the configured
    /// external file or by hashing descriptions.
    pub fn embed(&self) -> Result<usize> {
        let locs = self.locations()?;
        let table: Embeddings = match &self.config.paths.embeddings {
            Some(path) => {
                let ext: Embeddings = load_embeddings(path)?;
                EmbeddingTable::from_rows(
                    ext.dim(),
                    locs.iter()
                        .map(|l| {
                            ext.get(&l.id)
                                .map(|v| (l.id.clone(), v.to_vec()))
                                .ok_or_else(|| Error::MissingLocation(l.id.clone()))
                        })
                        .collect::<Result<Vec<_>>>()?,
                )?
            }
            None => {
                let descs: Vec<DescriptionRecord> = io::read_jsonl(&self.layout.descriptions())?;
                let by_id: HashMap<&str, &str> = descs
                    .iter()
                    .map(|d| (d.location_id.as_str(), d.description.as_str()))
                    .collect();
                let dim = self.config.embed.dim;
                let rows = locs
                    .iter()
                    .map(|l| {
                        let text = by_id
                            .get(l.id.as_str())
                            .ok_or_else(|| Error::MissingLocation(l.id.clone()))?;
                        Ok((l.id.clone(), hash_featurize(text, dim)?))
                    })
                    .collect::<Result<Vec<_>>>()?;
                EmbeddingTable::from_rows(dim, rows)?
            }
        };
        save_embeddings(&self.layout.embeddings(), &table)?;
        Ok(table.len())
    }

    fn train_with(&self, cfg: &QuantizerConfig, model_path: &Path) -> Result<Vec<EpochStats>> {
        let table: Embeddings = load_embeddings(&self.layout.embeddings())?;
        let (model, history) = train(&table, cfg)?;
        if let (Some(first), Some(last)) = (history.first(), history.last()) {
            log::info!(
                "train-quantizer: reconstruction {:.5} → {:.5} over {} epochs",
                first.reconstruction,
                last.reconstruction,
                history.len()
            );
        }
        save_checkpoint(model_path, &model, cfg, &history)?;
        Ok(history)
    }

    pub fn train_quantizer(&self) -> Result<Vec<EpochStats>> {
        self.train_with(&self.config.quantizer, &self.layout.model())
    }

    /// Tokenizes every location with the saved checkpoint; returns the token
    /// file and the quantized vectors.
    fn tokenize_with(&self, model_path: &Path) -> Result<(TokensFile, Embeddings)> {
        let (model, manifest) = load_checkpoint::<f64>(model_path)?;
        let table: Embeddings = load_embeddings(&self.layout.embeddings())?;
        let ids = table.ids().to_vec();
        let tokenized = tokenize_all(&table, &model, &ids)?;
        let raw: BTreeMap<String, Vec<usize>> = tokenized
            .iter()
            .map(|t| (t.location_id.clone(), t.indices.clone()))
            .collect();
        let map = assign_tokens(&raw)?;
        let collisions = map.iter().filter(|(_, t)| t.len() > manifest.config.levels).count();
        let zhat = EmbeddingTable::from_rows(model.code_dim(), tokenized.into_iter().map(|t| (t.location_id, t.zhat)))?;
        let file = TokensFile {
            format_version: crate::FORMAT_VERSION,
            levels: manifest.config.levels,
            codebook_size: manifest.config.codebook_size,
            collisions,
            utilization: utilization(&raw, manifest.config.levels, manifest.config.codebook_size),
            tokens: map,
        };
        Ok((file, zhat))
    }

    pub fn tokenize(&self) -> Result<TokensFile> {
        let (file, zhat) = self.tokenize_with(&self.layout.model())?;
        io::write_json(&self.layout.tokens(), &file)?;
        save_embeddings(&self.layout.zhat(), &zhat)?;
        Ok(file)
    }

    pub fn build_sft(&self) -> Result<SftManifest> {
        let train = self.read_split("train")?;
        let descs: Vec<DescriptionRecord> = io::read_jsonl(&self.layout.descriptions())?;
        let descs: BTreeMap<String, String> = descs.into_iter().map(|d| (d.location_id, d.description)).collect();
        let cats: HashMap<String, String> = self.locations()?.into_iter().map(|l| (l.id, l.category)).collect();
        let map = self.token_map()?;
        let (examples, manifest) = build_dataset(&train, &descs, &cats, &map, &self.config.sft)?;
        io::write_jsonl(&self.layout.sft_dataset(), examples.iter())?;
        io::write_json(&self.layout.sft_manifest(), &manifest)?;
        Ok(manifest)
    }

    fn fit(&self, train: &[Trajectory], map: &TokenMap) -> Result<NgramScorer> {
        let streams = train
            .iter()
            .map(|t| trajectory_stream(&t.records, map))
            .collect::<Result<Vec<_>>>()?;
        fit_ngram(
            &streams,
            self.config.decode.order,
            self.config.decode.k,
            &map.vocabulary(),
        )
    }

    pub fn fit_scorer(&self) -> Result<usize> {
        let map = self.token_map()?;
        let scorer = self.fit(&self.read_split("train")?, &map)?;
        io::write_json(&self.layout.scorer(), &scorer.to_checkpoint())?;
        Ok(scorer.vocabulary().len())
    }

    pub fn predict(&self) -> Result<usize> {
        let (scorer, map, trie) = self.scorer_and_trie()?;
        let d = &self.config.decode;
        let preds = predict_next(&scorer, &trie, &map, &self.read_split("test")?, d.width, d.topn)?;
        io::write_jsonl(&self.layout.predictions("next"), preds.iter())?;
        let manifest = PredictionManifest {
            format_version: crate::FORMAT_VERSION,
            task: "next_location".into(),
            instances: preds.len(),
            width: d.width,
            topn: d.topn,
            seed: None,
            ratios: Vec::new(),
        };
        io::write_json(&self.layout.predictions_manifest("next"), &manifest)?;
        Ok(preds.len())
    }

    pub fn recover(&self) -> Result<usize> {
        let (scorer, map, trie) = self.scorer_and_trie()?;
        let test = self.read_split("test")?;
        let (d, e) = (&self.config.decode, &self.config.eval);
        let mut all = Vec::new();
        for (i, &ratio) in e.ratios.iter().enumerate() {
            all.extend(predict_recovery(
                &scorer, &trie, &map, &test, ratio, i, e.seed, d.width, d.topn,
            )?);
        }
        io::write_jsonl(&self.layout.predictions("recovery"), all.iter())?;
        let manifest = PredictionManifest {
            format_version: crate::FORMAT_VERSION,
            task: "recovery".into(),
            instances: all.len(),
            width: d.width,
            topn: d.topn,
            seed: Some(e.seed),
            ratios: e.ratios.clone(),
        };
        io::write_json(&self.layout.predictions_manifest("recovery"), &manifest)?;
        Ok(all.len())
    }

    fn evaluate_with(&self, scorer: &NgramScorer, map: &TokenMap, trie: &TokenTrie) -> Result<Vec<EvalReport>> {
        let test = self.read_split("test")?;
        let (d, e) = (&self.config.decode, &self.config.eval);
        let mut reports = vec![evaluate_next_location(
            scorer, trie, map, &test, &e.ks, d.width, d.topn,
        )?];
        reports.extend(evaluate_recovery(
            scorer, trie, map, &test, &e.ratios, &e.ks, e.seed, d.width, d.topn,
        )?);
        Ok(reports)
    }

    /// Next-location and recovery reports on the test split.
    pub fn evaluate(&self) -> Result<Vec<EvalReport>> {
        let (scorer, map, trie) = self.scorer_and_trie()?;
        let reports = self.evaluate_with(&scorer, &map, &trie)?;
        let summary = EvalSummary {
            format_version: crate::FORMAT_VERSION,
            reports,
        };
        io::write_json(&self.layout.report(), &summary)?;
        write_reports_csv(&self.layout.report_csv(), &summary.reports, &[])?;
        Ok(summary.reports)
    }

    pub fn consistency(&self) -> Result<ConsistencyReport> {
        let zhat: Embeddings = load_embeddings(&self.layout.zhat())?;
        let e = &self.config.eval;
        let report = consistency_study(&zhat, &self.locations()?, e.seed, e.group_size)?;
        io::write_json(&self.layout.consistency(), &report)?;
        Ok(report)
    }

    /// Retrains, retokenizes, refits and evaluates for every (K, L) in the
    /// sweep grid. Needs the split and embedding artifacts.
    pub fn sweep(&self) -> Result<Vec<SweepCell>> {
        let train = self.read_split("train")?;
        let mut cells = Vec::new();
        for &k in &self.config.sweep.codebook_sizes {
            for &l in &self.config.sweep.levels {
                let dir = self.layout.sweep_cell(k, l);
                let mut qcfg = self.config.quantizer.clone();
                qcfg.codebook_size = k;
                qcfg.levels = l;
                log::info!("sweep: K={k} L={l}");
                let model_path = dir.join("model.json");
                let history = self.train_with(&qcfg, &model_path)?;
                let (tokens, _) = self.tokenize_with(&model_path)?;
                let scorer = self.fit(&train, &tokens.tokens)?;
                let trie = build_trie(&tokens.tokens)?;
                let reports = self.evaluate_with(&scorer, &tokens.tokens, &trie)?;
                let cell = SweepCell {
                    format_version: crate::FORMAT_VERSION,
                    codebook_size: k,
                    levels: l,
                    collisions: tokens.collisions,
                    final_reconstruction: history.last().map_or(f64::NAN, |h| h.reconstruction),
                    reports,
                };
                io::write_json(&dir.join("report.json"), &cell)?;
                cells.push(cell);
            }
        }
        let mut all = Vec::new();
        for c in &cells {
            for r in &c.reports {
                all.push((c.codebook_size, c.levels, r.clone()));
            }
        }
        let file = io::create(&self.layout.sweep_summary())?;
        let mut w = csv::Writer::from_writer(file);
        let csv_err = |e: csv::Error| Error::Internal(format!("csv: {e}"));
        w.write_record([
            "codebook_size",
            "levels",
            "task",
            "ratio",
            "metric",
            "value",
            "instances",
        ])
        .map_err(csv_err)?;
        for (k, l, r) in &all {
            for m in &r.metrics {
                w.write_record([
                    k.to_string(),
                    l.to_string(),
                    r.task.clone(),
                    r.config.ratio.map(|x| x.to_string()).unwrap_or_default(),
                    m.name.clone(),
                    format!("{:.6}", m.value),
                    r.instances.to_string(),
                ])
                .map_err(csv_err)?;
            }
        }
        w.flush().map_err(|e| Error::io(self.layout.sweep_summary(), e))?;
        Ok(cells)
    }

    /// Every stage from ingestion through evaluation plus the consistency
    /// study; returns the evaluation reports.
    pub fn run_all(&self) -> Result<Vec<EvalReport>> {
        self.ingest()?;
        self.describe()?;
        self.embed()?;
        self.train_quantizer()?;
        self.tokenize()?;
        self.build_sft()?;
        self.fit_scorer()?;
        self.predict()?;
        self.recover()?;
        let reports = self.evaluate()?;
        self.consistency()?;
        Ok(reports)
    }
}

/// Writes a synthetic city (`checkins.csv`, `locations.jsonl`) and a
/// matching `config.toml` into `dir`; returns the config path.
pub fn write_synthetic_city(dir: &Path, city: &CityConfig) -> Result<PathBuf> {
    let data = synthetic_city(city)?;
    io::write_jsonl(&dir.join("locations.jsonl"), data.locations.iter())?;
    let path = dir.join("checkins.csv");
    let mut w = csv::Writer::from_writer(io::create(&path)?);
    let csv_err = |e: csv::Error| Error::Internal(format!("csv {}: {e}", path.display()));
    w.write_record(["user_id", "location_id", "timestamp"])
        .map_err(csv_err)?;
    for r in &data.checkins {
        w.write_record([
            r.user_id.as_str(),
            r.location_id.as_str(),
            &r.timestamp.to_rfc3339_opts(SecondsFormat::Secs, true),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    let cfg_path = dir.join("config.toml");
    std::fs::write(&cfg_path, PipelineConfig::synthetic().to_toml()?).map_err(|e| Error::io(&cfg_path, e))?;
    Ok(cfg_path)
}
