//! Dense local descriptors, PCA reduction and the descriptor file format.

mod extract;
mod pca;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::container;
use crate::error::{Error, Result};

pub use extract::{extract_dense, patch_grid, ExtractParams};
pub use pca::{pca_apply, pca_fit, PcaModel};

pub const DESCRIPTOR_KIND: &str = "descriptor";

/// An orderless bag of equal-length vectors from one surface (or one disk).
#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorSet {
    dim: usize,
    pub vectors: Vec<Vec<f64>>,
    pub positions: Vec<(f64, f64)>,
    pub source_surface: String,
}

impl DescriptorSet {
    pub fn new(dim: usize, source_surface: impl Into<String>) -> Self {
        Self { dim, vectors: Vec::new(), positions: Vec::new(), source_surface: source_surface.into() }
    }

    /// Builds a set from rows; all rows must share one length.
    pub fn from_vectors(
        vectors: Vec<Vec<f64>>,
        positions: Vec<(f64, f64)>,
        source_surface: impl Into<String>,
    ) -> Result<Self> {
        let dim = vectors.first().map_or(0, Vec::len);
        let mut set = Self::new(dim, source_surface);
        if positions.len() != vectors.len() {
            return Err(Error::Shape(format!(
                "{} vectors but {} positions",
                vectors.len(),
                positions.len()
            )));
        }
        for (v, p) in vectors.into_iter().zip(positions) {
            set.push(v, p)?;
        }
        Ok(set)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn push(&mut self, v: Vec<f64>, position: (f64, f64)) -> Result<()> {
        if v.len() != self.dim {
            return Err(Error::Shape(format!("descriptor of length {} in a set of dimension {}", v.len(), self.dim)));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::Domain("descriptor contains non-finite values".into()));
        }
        self.vectors.push(v);
        self.positions.push(position);
        Ok(())
    }

    /// Appends every vector of `other`, which must have the same dimension.
    pub fn extend(&mut self, other: DescriptorSet) -> Result<()> {
        if other.dim != self.dim && !other.is_empty() {
            return Err(Error::Shape(format!("cannot merge dimension {} into {}", other.dim, self.dim)));
        }
        self.vectors.extend(other.vectors);
        self.positions.extend(other.positions);
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_vectors(path, DESCRIPTOR_KIND, &self.vectors, self.dim, &VectorMeta {
            kind: DESCRIPTOR_KIND.into(),
            source_surface: self.source_surface.clone(),
            positions: Some(self.positions.clone()),
            model_id: None,
            extra: None,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (meta, dim, vectors) = load_vectors(path, &[DESCRIPTOR_KIND])?;
        let positions = meta.positions.unwrap_or_else(|| vec![(0.0, 0.0); vectors.len()]);
        if positions.len() != vectors.len() {
            return Err(Error::format(path, "position count does not match vector count"));
        }
        let mut set = Self::new(dim, meta.source_surface);
        for (v, p) in vectors.into_iter().zip(positions) {
            set.push(v, p).map_err(|e| Error::format(path, e.to_string()))?;
        }
        Ok(set)
    }
}

/// Sidecar of a vector file (descriptors, Fisher vectors or VLAD vectors).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VectorMeta {
    pub kind: String,
    pub source_surface: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub positions: Option<Vec<(f64, f64)>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extra: Option<serde_json::Value>,
}

pub(crate) fn save_vectors(path: &Path, kind: &str, vectors: &[Vec<f64>], dim: usize, meta: &VectorMeta) -> Result<()> {
    debug_assert_eq!(meta.kind, kind);
    let flat: Vec<f32> = vectors.iter().flatten().map(|&v| v as f32).collect();
    container::write_array(path, (vectors.len() as u32, dim as u32), &flat)?;
    container::write_sidecar(path, meta)
}

pub(crate) fn load_vectors(path: &Path, kinds: &[&str]) -> Result<(VectorMeta, usize, Vec<Vec<f64>>)> {
    let meta: VectorMeta = container::read_sidecar(path)?;
    if !kinds.contains(&meta.kind.as_str()) {
        return Err(Error::format(path, format!("expected kind {kinds:?}, found `{}`", meta.kind)));
    }
    let ((count, dim), flat) = container::read_array(path)?;
    let dim = dim as usize;
    let vectors = if dim == 0 {
        vec![Vec::new(); count as usize]
    } else {
        flat.chunks(dim).map(|c| c.iter().map(|&v| v as f64).collect()).collect()
    };
    Ok((meta, dim, vectors))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_ragged_and_non_finite() {
        let mut s = DescriptorSet::new(2, "a");
        assert!(s.push(vec![1.0], (0.0, 0.0)).is_err());
        assert!(s.push(vec![1.0, f64::NAN], (0.0, 0.0)).is_err());
        s.push(vec![1.0, 2.0], (3.0, 4.0)).unwrap();
        assert_eq!(s.len(), 1);
        assert!(DescriptorSet::from_vectors(vec![vec![1.0], vec![1.0, 2.0]], vec![(0.0, 0.0); 2], "x").is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.bin");
        let set = DescriptorSet::from_vectors(
            vec![vec![0.5, -0.25, 1.0], vec![0.0, 0.125, 2.0]],
            vec![(10.0, 12.0), (30.5, 8.0)],
            "c00i00",
        )
        .unwrap();
        set.save(&path).unwrap();
        let back = DescriptorSet::load(&path).unwrap();
        assert_eq!(back, set);
        // a descriptor file is not accepted where a Fisher vector is expected
        assert!(load_vectors(&path, &["fv"]).is_err());
    }
}
