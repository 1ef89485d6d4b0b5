use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quantizer::QuantizerConfig;
use crate::sft::SftConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub checkins: PathBuf,
    /// `csv` or `jsonl`; inferred from the extension when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkins_format: Option<String>,
    pub locations: PathBuf,
    /// Precomputed embedding manifest; descriptions are hash-featurized when
    /// absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub embeddings: Option<PathBuf>,
    pub output_dir: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            checkins: "checkins.csv".into(),
            checkins_format: None,
            locations: "locations.jsonl".into(),
            embeddings: None,
            output_dir: "out".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestConfig {
    pub min_visits: usize,
    pub gap_hours: f64,
    pub min_len: usize,
    /// Train, validation and test fractions.
    pub split: [f64; 3],
}

impl Default for IngestConfig {
    fn default() -> Self {
        Self {
            min_visits: 5,
            gap_hours: 24.0,
            min_len: 3,
            split: [0.7, 0.1, 0.2],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DescribeConfig {
    pub radius_km: f64,
    pub k: usize,
    pub geohash_precision: usize,
}

impl Default for DescribeConfig {
    fn default() -> Self {
        Self {
            radius_km: 2.0,
            k: 10,
            geohash_precision: 12,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbedConfig {
    /// Dimension of the hashing featurizer.
    pub dim: usize,
}

impl Default for EmbedConfig {
    fn default() -> Self {
        Self {
            dim: crate::embed::DEFAULT_HASH_DIM,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodeConfig {
    pub order: usize,
    pub k: f64,
    pub width: usize,
    pub topn: usize,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            order: 3,
            k: 0.1,
            width: 15,
            topn: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub ks: Vec<usize>,
    pub ratios: Vec<f64>,
    pub seed: u64,
    pub group_size: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            ks: vec![1, 5, 10],
            ratios: vec![0.2, 0.3, 0.4, 0.5],
            seed: 42,
            group_size: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub codebook_sizes: Vec<usize>,
    pub levels: Vec<usize>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            codebook_sizes: vec![64, 128, 256],
            levels: vec![4],
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub paths: PathsConfig,
    pub ingest: IngestConfig,
    pub describe: DescribeConfig,
    pub embed: EmbedConfig,
    pub quantizer: QuantizerConfig,
    pub sft: SftConfig,
    pub decode: DecodeConfig,
    pub eval: EvalConfig,
    pub sweep: SweepConfig,
}

/// Parses a `--set` value as a TOML value, falling back to a bare string.
fn parse_value(raw: &str) -> toml::Value {
    match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.into())),
        Err(_) => toml::Value::String(raw.into()),
    }
}

/// Applies `section.key=value` to a parsed config document.
fn apply_override(doc: &mut toml::Table, assignment: &str) -> Result<()> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::config(assignment, "override must look like section.key=value"))?;
    let keys: Vec<&str> = path.trim().split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(Error::config(path, "empty key in override"));
    }
    let (last, parents) = keys.split_last().expect("split yields at least one key");
    let mut table = doc;
    for k in parents {
        let entry = table
            .entry(k.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| Error::config(path, format!("`{k}` is not a section")))?;
    }
    table.insert(last.to_string(), parse_value(raw.trim()));
    Ok(())
}

/// False for NaN as well as non-positive values.
fn positive(x: f64) -> bool {
    x > 0.0
}

fn toml_error(e: toml::de::Error) -> Error {
    Error::config("config", e.message().to_string())
}

impl PipelineConfig {
    /// Parses TOML text, applies overrides and resolves relative paths
    /// against `base_dir`.
    pub fn from_toml(text: &str, overrides: &[String], base_dir: &Path) -> Result<Self> {
        let mut doc: toml::Table = text.parse().map_err(toml_error)?;
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        let mut cfg: PipelineConfig = doc.try_into().map_err(toml_error)?;
        cfg.resolve_paths(base_dir);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text, overrides, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Internal(format!("config serialization: {e}")))
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.paths.checkins);
        fix(&mut self.paths.locations);
        fix(&mut self.paths.output_dir);
        if let Some(e) = &mut self.paths.embeddings {
            fix(e);
        }
    }

    /// Uses one seed for every randomized stage.
    pub fn set_seed(&mut self, seed: u64) {
        self.quantizer.seed = seed;
        self.sft.seed = seed;
        self.eval.seed = seed;
    }

    pub fn validate(&self) -> Result<()> {
        self.quantizer.validate()?;
        self.sft.validate()?;
        if let Some(f) = &self.paths.checkins_format {
            f.parse::<crate::ingest::CheckinFormat>()?;
        }
        let ing = &self.ingest;
        if ing.min_len < 1 {
            return Err(Error::config("ingest.min_len", "must be at least 1"));
        }
        if !positive(ing.gap_hours) {
            return Err(Error::config("ingest.gap_hours", "must be positive"));
        }
        let sum: f64 = ing.split.iter().sum();
        if ing.split.iter().any(|&f| !positive(f)) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::config("ingest.split", "fractions must be positive and sum to 1"));
        }
        if !positive(self.describe.radius_km) {
            return Err(Error::config("describe.radius_km", "must be positive"));
        }
        if self.describe.k < 1 {
            return Err(Error::config("describe.k", "must be at least 1"));
        }
        if !(1..=12).contains(&self.describe.geohash_precision) {
            return Err(Error::config("describe.geohash_precision", "must be in 1..=12"));
        }
        if self.embed.dim < 8 {
            return Err(Error::config("embed.dim", "must be at least 8"));
        }
        let d = &self.decode;
        if d.order < 1 {
            return Err(Error::config("decode.order", "must be at least 1"));
        }
        if !(d.k >= 0.0 && d.k.is_finite()) {
            return Err(Error::config("decode.k", "must be non-negative"));
        }
        if d.width < 1 {
            return Err(Error::config("decode.width", "must be at least 1"));
        }
        if d.topn < 1 {
            return Err(Error::config("decode.topn", "must be at least 1"));
        }
        let e = &self.eval;
        if e.ks.is_empty() || e.ks.contains(&0) {
            return Err(Error::config("eval.ks", "cutoffs must be at least 1"));
        }
        if let Some(r) = e.ratios.iter().find(|r| !(**r > 0.0 && **r < 1.0)) {
            return Err(Error::config("eval.ratios", format!("{r} is outside (0, 1)")));
        }
        if e.group_size < 1 {
            return Err(Error::config("eval.group_size", "must be at least 1"));
        }
        if self.sweep.codebook_sizes.contains(&0) || self.sweep.levels.contains(&0) {
            return Err(Error::config("sweep", "grid values must be at least 1"));
        }
        Ok(())
    }

    /// Checks that the raw inputs exist.
    pub fn require_inputs(&self) -> Result<()> {
        let mut required = vec![
            ("paths.checkins", &self.paths.checkins),
            ("paths.locations", &self.paths.locations),
        ];
        if let Some(e) = &self.paths.embeddings {
            required.push(("paths.embeddings", e));
        }
        for (field, p) in required {
            if !p.exists() {
                return Err(Error::config(field, format!("{} does not exist", p.display())));
            }
        }
        Ok(())
    }

    /// Settings sized for the bundled synthetic city.
    pub fn synthetic() -> Self {
        let mut cfg = PipelineConfig::default();
        cfg.quantizer.levels = 3;
        cfg.quantizer.codebook_size = 16;
        cfg.quantizer.code_dim = 16;
        cfg.quantizer.encoder_hidden = vec![128];
        cfg.quantizer.batch_size = 32;
        cfg.quantizer.epochs = 100;
        cfg.decode.order = 6;
        cfg.sweep.codebook_sizes = vec![8, 16, 32];
        cfg.sweep.levels = vec![3];
        cfg
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        let cfg = PipelineConfig::from_toml("", &[], Path::new("/data")).unwrap();
        assert_eq!(cfg.quantizer, QuantizerConfig::default());
        assert_eq!(cfg.decode.width, 15);
        assert_eq!(cfg.paths.checkins, Path::new("/data/checkins.csv"));
    }

    #[test]
    fn overrides_are_typed() {
        let sets = [
            "quantizer.codebook_size=16".to_string(),
            "eval.ks=[1, 3]".to_string(),
            "paths.output_dir=/tmp/run".to_string(),
            "sft.template_version=v1".to_string(),
        ];
        let cfg = PipelineConfig::from_toml("[decode]\nwidth = 5\n", &sets, Path::new(".")).unwrap();
        assert_eq!(cfg.quantizer.codebook_size, 16);
        assert_eq!(cfg.eval.ks, vec![1, 3]);
        assert_eq!(cfg.paths.output_dir, Path::new("/tmp/run"));
        assert_eq!(cfg.decode.width, 5);
    }

    #[test]
    fn validation_names_the_field() {
        let err = PipelineConfig::from_toml("", &["decode.width=0".into()], Path::new(".")).unwrap_err();
        assert!(matches!(err, Error::Config { ref field, .. } if field == "decode.width"));
        let err = PipelineConfig::from_toml("[decode]\nbogus = 1\n", &[], Path::new(".")).unwrap_err();
        assert!(err.is_validation());
        assert!(err.to_string().contains("bogus"));
        assert!(PipelineConfig::from_toml("", &["nokey".into()], Path::new("."))
            .unwrap_err()
            .is_validation());
    }

    #[test]
    fn toml_round_trip() {
        let cfg = PipelineConfig::synthetic();
        let text = cfg.to_toml().unwrap();
        let back = PipelineConfig::from_toml(&text, &[], Path::new("")).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn seed_applies_everywhere() {
        let mut cfg = PipelineConfig::default();
        cfg.set_seed(9);
        assert_eq!((cfg.quantizer.seed, cfg.sft.seed, cfg.eval.seed), (9, 9, 9));
    }
}
