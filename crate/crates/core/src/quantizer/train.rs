use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::backprop::batch_gradients;
use super::config::{CodebookInit, QuantizerConfig};
use super::kmeans::kmeans;
use super::model::RqVaeModel;
use super::optim::AdamW;
use crate::embed::EmbeddingTable;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

// independent random streams derived from the configured seed
const STREAM_WEIGHTS: u64 = 0;
const STREAM_CODEBOOKS: u64 = 1;
const STREAM_SHUFFLE: u64 = 2;
const STREAM_RESEED: u64 = 3;

fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

/// Builds a model for `input_dim`-dimensional inputs. With k-means codebook
/// init, `sample` is encoded and each level is clustered on the residuals
/// left by the previous levels.
pub fn init_model<T: Scalar>(cfg: &QuantizerConfig, input_dim: usize, sample: &[&[T]]) -> Result<RqVaeModel<T>> {
    cfg.validate()?;
    if input_dim == 0 {
        return Err(Error::config("input_dim", "must be positive"));
    }
    let mut model = RqVaeModel::zeros(
        input_dim,
        &cfg.encoder_hidden,
        cfg.code_dim,
        cfg.levels,
        cfg.codebook_size,
    );
    model.init_dense(&mut rng(cfg.seed, STREAM_WEIGHTS));
    let mut crng = rng(cfg.seed, STREAM_CODEBOOKS);
    match cfg.codebook_init {
        CodebookInit::Random => {
            let bound = 1.0 / cfg.codebook_size as f64;
            let range = model.codebook_range();
            for p in &mut model.params_mut()[range] {
                *p = T::from_f64_lossy(crng.gen_range(-bound..=bound));
            }
        }
        CodebookInit::Kmeans => {
            if sample.is_empty() {
                return Err(Error::config(
                    "quantizer.codebook_init",
                    "k-means initialization needs a non-empty sample",
                ));
            }
            let mut residuals: Vec<Vec<T>> = sample.iter().map(|s| model.encode(s)).collect();
            for level in 0..cfg.levels {
                let refs: Vec<&[T]> = residuals.iter().map(Vec::as_slice).collect();
                let centroids = kmeans(&refs, cfg.codebook_size, cfg.kmeans_iterations, &mut crng);
                model.set_codebook(level, &centroids);
                let books = model.codebooks();
                for r in &mut residuals {
                    let c = books.nearest(level, r);
                    for (x, &v) in r.iter_mut().zip(books.vector(level, c)) {
                        *x -= v;
                    }
                }
            }
        }
    }
    Ok(model)
}

/// Batch-mean losses and the codes chosen for each example.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchMetrics {
    pub reconstruction: f64,
    pub quantization: f64,
    pub total: f64,
    pub codes: Vec<Vec<usize>>,
}

/// One AdamW update on the mean total loss of `batch`.
pub fn train_step<T: Scalar>(
    batch: &[&[T]],
    model: &mut RqVaeModel<T>,
    optimizer: &mut AdamW<T>,
    alpha: T,
    batch_index: usize,
) -> Result<BatchMetrics> {
    if batch.is_empty() {
        return Err(Error::Empty("training batch".into()));
    }
    let (grads, records) = batch_gradients(batch, model, alpha);
    let n = batch.len() as f64;
    let mut metrics = BatchMetrics {
        reconstruction: 0.0,
        quantization: 0.0,
        total: 0.0,
        codes: Vec::with_capacity(batch.len()),
    };
    for r in records {
        metrics.reconstruction += r.losses.reconstruction.to_f64_lossy() / n;
        metrics.quantization += r.losses.quantization.to_f64_lossy() / n;
        metrics.codes.push(r.quantized.indices);
    }
    metrics.total = metrics.reconstruction + metrics.quantization;
    let non_finite = |m: &RqVaeModel<T>| {
        let [e, d, c] = m.group_norms();
        Error::NonFinite {
            batch: batch_index,
            norms: format!("encoder {e:.4e}, decoder {d:.4e}, codebooks {c:.4e}"),
        }
    };
    if !metrics.total.is_finite() || grads.iter().any(|g| !g.is_finite()) {
        return Err(non_finite(model));
    }
    optimizer.step(model.params_mut(), &grads);
    if !model.is_finite() {
        return Err(non_finite(model));
    }
    Ok(metrics)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub reconstruction: f64,
    pub quantization: f64,
    /// Fraction of codes chosen at least once during the epoch, per level.
    pub utilization: Vec<f64>,
}

/// Model plus optimizer state, advanced one epoch at a time.
pub struct Trainer<'a, T> {
    pub model: RqVaeModel<T>,
    pub optimizer: AdamW<T>,
    cfg: &'a QuantizerConfig,
    shuffle: ChaCha8Rng,
    reseed: ChaCha8Rng,
    epoch: usize,
    batches_seen: usize,
}

impl<'a, T: Scalar> Trainer<'a, T> {
    pub fn new(model: RqVaeModel<T>, cfg: &'a QuantizerConfig) -> Self {
        let n = model.num_params();
        Self {
            model,
            optimizer: AdamW::new(n, cfg.learning_rate),
            cfg,
            shuffle: rng(cfg.seed, STREAM_SHUFFLE),
            reseed: rng(cfg.seed, STREAM_RESEED),
            epoch: 0,
            batches_seen: 0,
        }
    }

    /// Runs one pass over `data` in a freshly shuffled order. Dead codes are
    /// reseeded afterwards unless `reseed` is false.
    pub fn epoch(&mut self, data: &[&[T]], reseed: bool) -> Result<EpochStats> {
        if data.is_empty() {
            return Err(Error::Empty("training data".into()));
        }
        let alpha = T::from_f64_lossy(self.cfg.alpha);
        let (levels, size) = (self.model.levels(), self.model.codebook_size());
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut self.shuffle);
        let mut used = vec![vec![false; size]; levels];
        let (mut rec, mut rq) = (0.0, 0.0);
        let mut last: &[usize] = &[];
        for chunk in order.chunks(self.cfg.batch_size) {
            let batch: Vec<&[T]> = chunk.iter().map(|&i| data[i]).collect();
            let m = train_step(&batch, &mut self.model, &mut self.optimizer, alpha, self.batches_seen)?;
            self.batches_seen += 1;
            let w = chunk.len() as f64 / data.len() as f64;
            rec += m.reconstruction * w;
            rq += m.quantization * w;
            for codes in &m.codes {
                for (l, &c) in codes.iter().enumerate() {
                    used[l][c] = true;
                }
            }
            last = chunk;
        }
        self.epoch += 1;
        let utilization = used
            .iter()
            .map(|u| u.iter().filter(|&&x| x).count() as f64 / size as f64)
            .collect();

        if reseed {
            let last_batch: Vec<&[T]> = last.iter().map(|&i| data[i]).collect();
            self.reseed_dead_codes(&used, &last_batch);
        }
        Ok(EpochStats {
            epoch: self.epoch,
            reconstruction: rec,
            quantization: rq,
            utilization,
        })
    }

    fn reseed_dead_codes(&mut self, used: &[Vec<bool>], last_batch: &[&[T]]) {
        if last_batch.is_empty() {
            return;
        }
        for (level, u) in used.iter().enumerate() {
            for (code, _) in u.iter().enumerate().filter(|(_, &x)| !x) {
                let pick = last_batch[self.reseed.gen_range(0..last_batch.len())];
                // the residual this level sees for that example
                let q = self.model.quantize_input(pick);
                let v = q.residuals[level].clone();
                self.model.set_codevector(level, code, &v);
                let range = self.model.code_range(level, code);
                self.optimizer.reset(range);
            }
        }
    }
}

/// Trains from scratch on every row of `embeddings`.
pub fn train<T: Scalar>(
    embeddings: &EmbeddingTable<T>,
    cfg: &QuantizerConfig,
) -> Result<(RqVaeModel<T>, Vec<EpochStats>)> {
    cfg.validate()?;
    if embeddings.is_empty() {
        return Err(Error::Empty("embedding table".into()));
    }
    let data: Vec<&[T]> = embeddings.rows().map(|(_, v)| v).collect();
    let model = init_model(cfg, embeddings.dim(), &data)?;
    let mut trainer = Trainer::new(model, cfg);
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        // never reseed after the final epoch: codes must reflect training
        let reseed = cfg.reseed_dead_codes && epoch < cfg.epochs;
        history.push(trainer.epoch(&data, reseed)?);
        log::debug!(
            "epoch {epoch}: rec {:.5} rq {:.5}",
            history[epoch - 1].reconstruction,
            history[epoch - 1].quantization
        );
    }
    Ok((trainer.model, history))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TokenizedLocation<T> {
    pub location_id: String,
    pub indices: Vec<usize>,
    pub zhat: Vec<T>,
}

/// Code indices and quantized vectors for `ids`, in the given order.
pub fn tokenize_all<T: Scalar>(
    embeddings: &EmbeddingTable<T>,
    model: &RqVaeModel<T>,
    ids: &[String],
) -> Result<Vec<TokenizedLocation<T>>> {
    if embeddings.dim() != model.input_dim() {
        return Err(Error::config(
            "embeddings.dim",
            format!(
                "table dim {} != model input dim {}",
                embeddings.dim(),
                model.input_dim()
            ),
        ));
    }
    ids.iter()
        .map(|id| {
            let s = embeddings.get(id).ok_or_else(|| Error::MissingLocation(id.clone()))?;
            let q = model.quantize_input(s);
            Ok(TokenizedLocation {
                location_id: id.clone(),
                indices: q.indices,
                zhat: q.zhat,
            })
        })
        .collect()
}
