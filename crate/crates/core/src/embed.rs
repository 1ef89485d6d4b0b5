//! Initial location representations: externally computed embeddings loaded
//! from a manifest + raw blob, or a deterministic hashing featurizer.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;
use crate::scalar::Scalar;

/// Hidden size of the default external encoder.
pub const DEFAULT_EXTERNAL_DIM: usize = 2048;
pub const DEFAULT_HASH_DIM: usize = 256;

/// Fixed-width vectors keyed by location id, in insertion order.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable<T> {
    dim: usize,
    ids: Vec<String>,
    index: HashMap<String, usize>,
    data: Vec<T>,
}

impl<T: Scalar> EmbeddingTable<T> {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::config("dim", "embedding dimension must be positive"));
        }
        Ok(Self {
            dim,
            ids: Vec::new(),
            index: HashMap::new(),
            data: Vec::new(),
        })
    }

    pub fn from_rows(dim: usize, rows: impl IntoIterator<Item = (String, Vec<T>)>) -> Result<Self> {
        let mut t = Self::new(dim)?;
        for (id, v) in rows {
            t.push(id, &v)?;
        }
        Ok(t)
    }

    pub fn push(&mut self, id: String, v: &[T]) -> Result<()> {
        if v.len() != self.dim {
            return Err(Error::load(
                "dim",
                format!("vector for `{id}` has length {} (expected {})", v.len(), self.dim),
            ));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::load("values", format!("non-finite component for `{id}`")));
        }
        if self.index.contains_key(&id) {
            return Err(Error::load("ids", format!("duplicate id `{id}`")));
        }
        self.index.insert(id.clone(), self.ids.len());
        self.ids.push(id);
        self.data.extend_from_slice(v);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn get(&self, id: &str) -> Option<&[T]> {
        self.index.get(id).map(|&i| self.row(i))
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = (&str, &[T])> {
        self.ids
            .iter()
            .map(String::as_str)
            .zip(self.data.chunks_exact(self.dim))
    }

    pub fn cast<U: Scalar>(&self) -> EmbeddingTable<U> {
        EmbeddingTable {
            dim: self.dim,
            ids: self.ids.clone(),
            index: self.index.clone(),
            data: self.data.iter().map(|&x| U::from_f64_lossy(x.to_f64_lossy())).collect(),
        }
    }
}

/// JSON manifest describing a raw little-endian f32 blob.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingManifest {
    pub dim: usize,
    pub count: usize,
    pub ids: Vec<String>,
    /// Blob path relative to the manifest; defaults to the manifest path with
    /// a `.bin` extension.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub blob: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub format_version: Option<u32>,
}

fn blob_path(manifest_path: &Path, manifest: &EmbeddingManifest) -> PathBuf {
    match &manifest.blob {
        Some(b) => manifest_path.parent().unwrap_or(Path::new("")).join(b),
        None => manifest_path.with_extension("bin"),
    }
}

/// Decodes `count × dim` little-endian f32 values.
pub fn decode_blob<T: Scalar>(manifest: &EmbeddingManifest, bytes: &[u8]) -> Result<EmbeddingTable<T>> {
    if manifest.ids.len() != manifest.count {
        return Err(Error::load(
            "count",
            format!(
                "manifest lists {} ids but count is {}",
                manifest.ids.len(),
                manifest.count
            ),
        ));
    }
    let expected = manifest.count * manifest.dim * 4;
    if bytes.len() != expected {
        return Err(Error::load(
            "blob",
            format!("blob has {} bytes, expected {expected} (count × dim × 4)", bytes.len()),
        ));
    }
    let mut table = EmbeddingTable::new(manifest.dim)?;
    let mut row = Vec::with_capacity(manifest.dim);
    for (id, chunk) in manifest.ids.iter().zip(bytes.chunks_exact((manifest.dim * 4).max(1))) {
        row.clear();
        row.extend(
            chunk
                .chunks_exact(4)
                .map(|b| T::from_f64_lossy(f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)),
        );
        table.push(id.clone(), &row)?;
    }
    Ok(table)
}

pub fn encode_blob<T: Scalar>(table: &EmbeddingTable<T>) -> Vec<u8> {
    table
        .data
        .iter()
        .flat_map(|&x| (x.to_f64_lossy() as f32).to_le_bytes())
        .collect()
}

pub fn load_embeddings<T: Scalar>(manifest_path: &Path) -> Result<EmbeddingTable<T>> {
    let manifest: EmbeddingManifest = io::read_json(manifest_path)?;
    let blob = blob_path(manifest_path, &manifest);
    if !blob.exists() {
        return Err(Error::load("blob", format!("missing blob file {}", blob.display())));
    }
    decode_blob(&manifest, &io::read_bytes(&blob)?)
}

/// Writes `<manifest_path>` and its `.bin` blob.
pub fn save_embeddings<T: Scalar>(manifest_path: &Path, table: &EmbeddingTable<T>) -> Result<()> {
    let blob = manifest_path.with_extension("bin");
    let manifest = EmbeddingManifest {
        dim: table.dim,
        count: table.len(),
        ids: table.ids.clone(),
        blob: blob.file_name().map(|n| n.to_string_lossy().into_owned()),
        format_version: Some(crate::FORMAT_VERSION),
    };
    io::write_bytes(&blob, &encode_blob(table))?;
    io::write_json(manifest_path, &manifest)
}

/// 64-bit FNV-1a; stable across platforms and releases.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

const PAD_START: char = '\u{2}';
const PAD_END: char = '\u{3}';

/// Character trigrams of `text` padded with one start and one end marker.
pub fn char_trigrams(text: &str) -> Vec<String> {
    if text.is_empty() {
        return Vec::new();
    }
    let chars: Vec<char> = std::iter::once(PAD_START)
        .chain(text.chars())
        .chain(std::iter::once(PAD_END))
        .collect();
    chars.windows(3).map(|w| w.iter().collect()).collect()
}

/// Bucket and sign of a trigram under the signed hashing trick.
pub fn trigram_slot(trigram: &str, dim: usize) -> (usize, f64) {
    let h = fnv1a64(trigram.as_bytes());
    let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
    ((h % dim as u64) as usize, sign)
}

/// Signed-hashed, L2-normalized character-trigram counts.
pub fn hash_featurize<T: Scalar>(description: &str, dim: usize) -> Result<Vec<T>> {
    if dim < 8 {
        return Err(Error::config("dim", format!("hash dimension {dim} < 8")));
    }
    let mut v = vec![0.0f64; dim];
    for g in char_trigrams(description) {
        let (b, s) = trigram_slot(&g, dim);
        v[b] += s;
    }
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    Ok(v.into_iter().map(T::from_f64_lossy).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::{cosine, norm};

    fn manifest(dim: usize, ids: &[&str]) -> EmbeddingManifest {
        EmbeddingManifest {
            dim,
            count: ids.len(),
            ids: ids.iter().map(|s| s.to_string()).collect(),
            blob: None,
            format_version: None,
        }
    }

    #[test]
    fn empty_manifest_empty_table() {
        let t: EmbeddingTable<f64> = decode_blob(&manifest(4, &[]), &[]).unwrap();
        assert!(t.is_empty());
    }

    #[test]
    fn blob_size_arithmetic() {
        let vals: Vec<u8> = (0..8).flat_map(|i| (i as f32).to_le_bytes()).collect();
        assert_eq!(vals.len(), 32);
        let t: EmbeddingTable<f64> = decode_blob(&manifest(4, &["x", "y"]), &vals).unwrap();
        assert_eq!(t.get("y").unwrap(), &[4.0, 5.0, 6.0, 7.0]);
        assert_eq!(t.ids(), ["x", "y"]);
        match decode_blob::<f64>(&manifest(4, &["x", "y"]), &vals[..28]) {
            Err(Error::Load { field, .. }) => assert_eq!(field, "blob"),
            other => panic!("{other:?}"),
        }
        let mut bad = manifest(4, &["x", "y"]);
        bad.count = 3;
        assert!(decode_blob::<f64>(&bad, &vals).is_err());
    }

    #[test]
    fn save_load_round_trip_and_missing_blob() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.json");
        let t = EmbeddingTable::<f32>::from_rows(2, [("a".into(), vec![1.5, -2.0]), ("b".into(), vec![0.25, 8.0])])
            .unwrap();
        save_embeddings(&path, &t).unwrap();
        assert_eq!(load_embeddings::<f32>(&path).unwrap(), t);
        std::fs::remove_file(dir.path().join("emb.bin")).unwrap();
        match load_embeddings::<f32>(&path) {
            Err(Error::Load { field, .. }) => assert_eq!(field, "blob"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn featurizer_norms() {
        let z: Vec<f64> = hash_featurize("", 256).unwrap();
        assert!(z.iter().all(|&x| x == 0.0));
        for text in ["a", "Hi-Life Bar & Grill", "(40.785677, -73.976498)"] {
            let v: Vec<f64> = hash_featurize(text, 256).unwrap();
            assert!((norm(&v) - 1.0).abs() < 1e-9);
            assert!((cosine(&v, &v) - 1.0).abs() < 1e-9);
            assert_eq!(v, hash_featurize::<f64>(text, 256).unwrap());
        }
        assert!(hash_featurize::<f64>("x", 7).is_err());
    }

    #[test]
    fn disjoint_trigrams_are_orthogonal() {
        // brute force a pair of single-word texts whose trigram buckets do not
        // collide; such a pair must be exactly orthogonal
        let words = ["alpha", "bravo", "charlie", "delta", "echo", "foxtrot", "golf", "hotel"];
        let buckets = |w: &str| -> Vec<usize> { char_trigrams(w).iter().map(|g| trigram_slot(g, 256).0).collect() };
        let mut checked = 0;
        for (i, a) in words.iter().enumerate() {
            for b in &words[i + 1..] {
                let (ga, gb) = (char_trigrams(a), char_trigrams(b));
                if ga.iter().any(|g| gb.contains(g)) {
                    continue;
                }
                let (ba, bb) = (buckets(a), buckets(b));
                if ba.iter().any(|x| bb.contains(x)) {
                    continue;
                }
                let (va, vb): (Vec<f64>, Vec<f64>) = (hash_featurize(a, 256).unwrap(), hash_featurize(b, 256).unwrap());
                assert!(cosine(&va, &vb).abs() < 1e-9);
                checked += 1;
            }
        }
        assert!(checked > 0);
    }

    #[test]
    fn fnv_reference_values() {
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
    }
}
