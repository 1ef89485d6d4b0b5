//! Model checkpoints: a JSON manifest plus a raw little-endian f32 blob of
//! all parameters in flat order (encoder layers, decoder layers, codebooks
//! level-major; each layer's row-major weights before its bias).

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::QuantizerConfig;
use super::model::RqVaeModel;
use super::train::EpochStats;
use crate::error::{Error, Result};
use crate::io;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format_version: u32,
    pub config: QuantizerConfig,
    pub input_dim: usize,
    pub epoch: usize,
    pub num_params: usize,
    pub blob: String,
    pub loss_history: Vec<EpochStats>,
}

/// Writes `<manifest_path>` and `<manifest_path>.bin`-style blob.
pub fn save_checkpoint<T: Scalar>(
    manifest_path: &Path,
    model: &RqVaeModel<T>,
    config: &QuantizerConfig,
    history: &[EpochStats],
) -> Result<()> {
    let blob = manifest_path.with_extension("bin");
    let bytes: Vec<u8> = model
        .params()
        .iter()
        .flat_map(|&p| (p.to_f64_lossy() as f32).to_le_bytes())
        .collect();
    io::write_bytes(&blob, &bytes)?;
    let manifest = CheckpointManifest {
        format_version: crate::FORMAT_VERSION,
        config: config.clone(),
        input_dim: model.input_dim(),
        epoch: history.last().map_or(0, |h| h.epoch),
        num_params: model.num_params(),
        blob: blob
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default(),
        loss_history: history.to_vec(),
    };
    io::write_json(manifest_path, &manifest)
}

pub fn load_checkpoint<T: Scalar>(manifest_path: &Path) -> Result<(RqVaeModel<T>, CheckpointManifest)> {
    let manifest: CheckpointManifest = io::read_json(manifest_path)?;
    manifest.config.validate()?;
    let cfg = &manifest.config;
    let mut model = RqVaeModel::zeros(
        manifest.input_dim,
        &cfg.encoder_hidden,
        cfg.code_dim,
        cfg.levels,
        cfg.codebook_size,
    );
    if model.num_params() != manifest.num_params {
        return Err(Error::load(
            "num_params",
            format!(
                "config implies {} parameters, manifest says {}",
                model.num_params(),
                manifest.num_params
            ),
        ));
    }
    let blob_path = manifest_path.parent().unwrap_or(Path::new("")).join(&manifest.blob);
    let bytes = io::read_bytes(&blob_path)?;
    if bytes.len() != manifest.num_params * 4 {
        return Err(Error::load(
            "blob",
            format!("{} bytes for {} parameters", bytes.len(), manifest.num_params),
        ));
    }
    let params: Vec<T> = bytes
        .chunks_exact(4)
        .map(|b| T::from_f64_lossy(f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64))
        .collect();
    if params.iter().any(|p| !p.is_finite()) {
        return Err(Error::load("blob", "non-finite parameter"));
    }
    model.set_params(params);
    Ok((model, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantizer::{init_model, CodebookInit};

    #[test]
    fn round_trip_through_f32() {
        let cfg = QuantizerConfig {
            levels: 2,
            codebook_size: 3,
            code_dim: 2,
            encoder_hidden: vec![5],
            codebook_init: CodebookInit::Random,
            ..Default::default()
        };
        let m: RqVaeModel<f32> = init_model(&cfg, 6, &[]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        let hist = vec![EpochStats {
            epoch: 1,
            reconstruction: 1.0,
            quantization: 0.5,
            utilization: vec![1.0, 0.5],
        }];
        save_checkpoint(&path, &m, &cfg, &hist).unwrap();
        let (back, manifest) = load_checkpoint::<f32>(&path).unwrap();
        assert_eq!(back, m);
        assert_eq!(manifest.epoch, 1);
        assert_eq!(manifest.loss_history, hist);

        std::fs::write(dir.path().join("model.bin"), [0u8; 8]).unwrap();
        assert!(load_checkpoint::<f32>(&path).is_err());
    }
}
