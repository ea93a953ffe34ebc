//! Exhaustive Hamming-space nearest-neighbour store with material labels and
//! friction values.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::embed::{hamming_words, BinaryCode, CodeBatch};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntryMeta {
    pub surface_id: String,
    pub label: String,
    pub mu: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndexEntry {
    pub code: BinaryCode,
    pub label: String,
    pub mu: f64,
    pub surface_id: String,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor<'a> {
    pub entry: &'a IndexEntry,
    pub distance: u32,
    /// Insertion position, the tie-break between equal distances.
    pub position: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HashIndex {
    bit_count: usize,
    embedding_id: String,
    entries: Vec<IndexEntry>,
}

impl HashIndex {
    pub fn new(bit_count: usize, embedding_id: impl Into<String>) -> Self {
        Self { bit_count, embedding_id: embedding_id.into(), entries: Vec::new() }
    }

    pub fn bit_count(&self) -> usize {
        self.bit_count
    }

    pub fn embedding_id(&self) -> &str {
        &self.embedding_id
    }

    pub fn entries(&self) -> &[IndexEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn check_code(&self, code: &BinaryCode) -> Result<()> {
        if code.embedding_id != self.embedding_id {
            return Err(Error::EmbeddingMismatch { expected: self.embedding_id.clone(), actual: code.embedding_id.clone() });
        }
        if code.bit_count() != self.bit_count {
            return Err(Error::Shape(format!("{}-bit code for a {}-bit index", code.bit_count(), self.bit_count)));
        }
        Ok(())
    }

    pub fn insert(&mut self, code: BinaryCode, label: impl Into<String>, mu: f64, surface_id: impl Into<String>) -> Result<()> {
        self.check_code(&code)?;
        let surface_id = surface_id.into();
        if surface_id.is_empty() {
            return Err(Error::Domain("index entries need a surface id".into()));
        }
        if !mu.is_finite() {
            return Err(Error::Domain(format!("friction value {mu} is not finite")));
        }
        self.entries.push(IndexEntry { code, label: label.into(), mu, surface_id });
        Ok(())
    }

    /// The `min(k, len)` nearest entries, ordered by distance and then by insertion order.
    pub fn knn(&self, query: &BinaryCode, k: usize) -> Result<Vec<Neighbor<'_>>> {
        if k == 0 {
            return Err(Error::Domain("k must be at least 1".into()));
        }
        if self.entries.is_empty() {
            return Err(Error::Empty("the index has no entries".into()));
        }
        self.check_code(query)?;
        let mut keyed: Vec<(u32, usize)> = self
            .entries
            .iter()
            .enumerate()
            .map(|(i, e)| (hamming_words(e.code.words(), query.words()), i))
            .collect();
        let k = k.min(keyed.len());
        if k < keyed.len() {
            keyed.select_nth_unstable(k - 1);
            keyed.truncate(k);
        }
        keyed.sort_unstable();
        Ok(keyed
            .into_iter()
            .map(|(distance, position)| Neighbor { entry: &self.entries[position], distance, position })
            .collect())
    }

    /// Most frequent label among the `k` nearest entries. Equal counts go to
    /// the label with the smaller summed distance, then the smaller label.
    pub fn classify(&self, query: &BinaryCode, k: usize) -> Result<String> {
        Ok(vote(&self.knn(query, k)?))
    }

    /// Mean friction of the `k` nearest entries.
    pub fn predict_friction(&self, query: &BinaryCode, k: usize) -> Result<f64> {
        let nn = self.knn(query, k)?;
        Ok(nn.iter().map(|n| n.entry.mu).sum::<f64>() / nn.len() as f64)
    }

    fn csv_path(path: &Path) -> PathBuf {
        let mut os = path.as_os_str().to_owned();
        os.push(".csv");
        PathBuf::from(os)
    }

    /// Writes the codes to `path` (with its JSON sidecar) and the entry table to `<path>.csv`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut batch = CodeBatch::new(self.bit_count, self.embedding_id.clone());
        for e in &self.entries {
            batch.push(e.surface_id.clone(), e.code.clone())?;
        }
        batch.save(path)?;
        let csv_path = Self::csv_path(path);
        let mut w = csv::Writer::from_path(&csv_path).map_err(|e| Error::format(&csv_path, e.to_string()))?;
        for e in &self.entries {
            w.serialize(EntryMeta { surface_id: e.surface_id.clone(), label: e.label.clone(), mu: e.mu })
                .map_err(|err| Error::format(&csv_path, err.to_string()))?;
        }
        w.flush().map_err(|e| Error::io(&csv_path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let batch = CodeBatch::load(path)?;
        let csv_path = Self::csv_path(path);
        let mut r = csv::Reader::from_path(&csv_path).map_err(|e| Error::format(&csv_path, e.to_string()))?;
        let metas = r
            .deserialize()
            .collect::<std::result::Result<Vec<EntryMeta>, _>>()
            .map_err(|e| Error::format(&csv_path, e.to_string()))?;
        if metas.len() != batch.codes.len() {
            return Err(Error::format(&csv_path, "entry table and codes disagree in length"));
        }
        let mut index = Self::new(batch.bit_count, batch.embedding_id);
        for (meta, (code, id)) in metas.into_iter().zip(batch.codes.into_iter().zip(batch.ids)) {
            if meta.surface_id != id {
                return Err(Error::format(&csv_path, format!("row for `{id}` is labelled `{}`", meta.surface_id)));
            }
            index.insert(code, meta.label, meta.mu, meta.surface_id)?;
        }
        Ok(index)
    }
}

fn vote(neighbors: &[Neighbor<'_>]) -> String {
    let mut tally: BTreeMap<&str, (usize, u64)> = BTreeMap::new();
    for n in neighbors {
        let t = tally.entry(n.entry.label.as_str()).or_default();
        t.0 += 1;
        t.1 += u64::from(n.distance);
    }
    // BTreeMap iterates labels in ascending order, so the first best wins ties
    let mut best: Option<(&str, usize, u64)> = None;
    for (label, (count, dist)) in tally {
        let better = match best {
            None => true,
            Some((_, c, d)) => count > c || (count == c && dist < d),
        };
        if better {
            best = Some((label, count, dist));
        }
    }
    best.map(|b| b.0.to_string()).unwrap_or_default()
}

pub fn knn<'a>(index: &'a HashIndex, query: &BinaryCode, k: usize) -> Result<Vec<Neighbor<'a>>> {
    index.knn(query, k)
}

pub fn classify(index: &HashIndex, query: &BinaryCode, k: usize) -> Result<String> {
    index.classify(query, k)
}

pub fn predict_friction(index: &HashIndex, query: &BinaryCode, k: usize) -> Result<f64> {
    index.predict_friction(query, k)
}
