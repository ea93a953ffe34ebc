//! Pooling a bag of descriptors into one fixed-length vector.

mod fisher;
mod vlad;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::descriptors::{load_vectors, save_vectors, VectorMeta};
use crate::error::{Error, Result};

pub use fisher::{fisher_encode, fisher_encode_with, FisherOptions, FisherVector, Normalization, POSTERIOR_CUTOFF};
pub use vlad::{vlad_encode, VladVector};

/// Signed square root followed by L2 normalisation. Returns `false` when the
/// input is all zeros, in which case it is left untouched.
pub(crate) fn power_l2_normalize(values: &mut [f64]) -> bool {
    values.iter_mut().for_each(|v| *v = v.signum() * v.abs().sqrt());
    let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return false;
    }
    values.iter_mut().for_each(|v| *v /= norm);
    true
}

/// Rows in a canonical order so pooled sums do not depend on input order.
pub(crate) fn canonical_order(vectors: &[Vec<f64>]) -> Vec<&[f64]> {
    let mut rows: Vec<&[f64]> = vectors.iter().map(Vec::as_slice).collect();
    rows.sort_by(|a, b| {
        a.iter()
            .zip(b.iter())
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    rows
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncodingKind {
    Fv,
    Vlad,
}

impl EncodingKind {
    pub fn tag(self) -> &'static str {
        match self {
            Self::Fv => "fv",
            Self::Vlad => "vlad",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct EncodedExtra {
    ids: Vec<String>,
    degenerate: Vec<bool>,
}

/// A batch of pooled vectors with one identifier per row, as written by `encode`.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedVectors {
    pub kind: EncodingKind,
    pub model_id: String,
    pub ids: Vec<String>,
    pub vectors: Vec<Vec<f64>>,
    pub degenerate: Vec<bool>,
}

impl EncodedVectors {
    pub fn new(kind: EncodingKind, model_id: impl Into<String>) -> Self {
        Self { kind, model_id: model_id.into(), ids: Vec::new(), vectors: Vec::new(), degenerate: Vec::new() }
    }

    pub fn dim(&self) -> usize {
        self.vectors.first().map_or(0, Vec::len)
    }

    pub fn push(&mut self, id: impl Into<String>, values: Vec<f64>, degenerate: bool) -> Result<()> {
        if !self.vectors.is_empty() && values.len() != self.dim() {
            return Err(Error::Shape(format!("encoded vector of length {} in a batch of {}", values.len(), self.dim())));
        }
        self.ids.push(id.into());
        self.vectors.push(values);
        self.degenerate.push(degenerate);
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let extra = EncodedExtra { ids: self.ids.clone(), degenerate: self.degenerate.clone() };
        let meta = VectorMeta {
            kind: self.kind.tag().into(),
            source_surface: String::new(),
            positions: None,
            model_id: Some(self.model_id.clone()),
            extra: Some(serde_json::to_value(extra).expect("plain data serialises")),
        };
        save_vectors(path, self.kind.tag(), &self.vectors, self.dim(), &meta)
    }

    /// Loads a batch. Values are stored as `f32`, so reloaded vectors match
    /// the originals to single precision.
    pub fn load(path: &Path) -> Result<Self> {
        let (meta, _, vectors) = load_vectors(path, &["fv", "vlad"])?;
        let kind = if meta.kind == "fv" { EncodingKind::Fv } else { EncodingKind::Vlad };
        let extra: EncodedExtra = meta
            .extra
            .map(serde_json::from_value)
            .transpose()
            .map_err(|e| Error::format(path, e.to_string()))?
            .ok_or_else(|| Error::format(path, "missing row identifiers"))?;
        if extra.ids.len() != vectors.len() || extra.degenerate.len() != vectors.len() {
            return Err(Error::format(path, "row identifiers do not match the vector count"));
        }
        Ok(Self { kind, model_id: meta.model_id.unwrap_or_default(), ids: extra.ids, vectors, degenerate: extra.degenerate })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn power_normalisation() {
        let mut v = vec![4.0, -9.0, 0.0];
        assert!(power_l2_normalize(&mut v));
        let n = (4.0f64 + 9.0).sqrt();
        assert_eq!(v, vec![2.0 / n, -3.0 / n, 0.0]);
        let mut z = vec![0.0; 3];
        assert!(!power_l2_normalize(&mut z));
    }

    #[test]
    fn encoded_file_round_trip() {
        let mut e = EncodedVectors::new(EncodingKind::Vlad, "kmeans-1");
        e.push("a", vec![0.5, -0.25], false).unwrap();
        e.push("b", vec![0.0, 0.0], true).unwrap();
        assert!(e.push("c", vec![1.0], false).is_err());
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("v.bin");
        e.save(&p).unwrap();
        assert_eq!(EncodedVectors::load(&p).unwrap(), e);
    }
}
