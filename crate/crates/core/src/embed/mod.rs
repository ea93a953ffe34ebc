//! Binary codes from pooled vectors: sign of a random projection, optionally
//! after a learned rotation.

mod code;
mod itq;
mod projection;

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::container;
use crate::error::{Error, Result};

pub use code::{hamming, sign_quantize, BinaryCode, CodeBatch};
pub(crate) use code::hamming_words;
pub use itq::{itq_fit, itq_rotate, quantization_loss, ItqModel};
pub use projection::{project, ProjectionModel};

/// Either embedding model; both map a `D`-vector to a `B`-bit code.
#[derive(Debug, Clone, PartialEq)]
pub enum Embedding {
    Lsh(ProjectionModel),
    Itq(ItqModel),
}

impl Embedding {
    pub fn embedding_id(&self) -> String {
        match self {
            Self::Lsh(p) => p.embedding_id(),
            Self::Itq(m) => m.embedding_id(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.projection().input_dim()
    }

    pub fn bits(&self) -> usize {
        self.projection().bits()
    }

    pub fn projection(&self) -> &ProjectionModel {
        match self {
            Self::Lsh(p) => p,
            Self::Itq(m) => &m.projection,
        }
    }

    /// The real-valued vector whose signs form the code.
    pub fn pre_quantization(&self, x: &[f64]) -> Result<Vec<f64>> {
        match self {
            Self::Lsh(p) => project(p, x),
            Self::Itq(m) => m.rotated(x),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let (p, kind, payload, iterations, trace, undersampled) = match self {
            Self::Lsh(p) => (p, "lsh", Vec::new(), 0, Vec::new(), false),
            Self::Itq(m) => {
                let mut payload: Vec<f64> = m.rotation.iter().copied().collect();
                payload.extend(&m.data_mean);
                (&m.projection, "itq", payload, m.iterations_run, m.objective_trace.clone(), m.undersampled)
            }
        };
        let header = EmbeddingHeader {
            kind: kind.into(),
            input_dim: p.input_dim(),
            bits: p.bits(),
            seed: p.seed,
            iterations,
            embedding_id: self.embedding_id(),
            objective_trace: trace,
            undersampled,
        };
        container::write_model(path, &header, &payload)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (h, payload): (EmbeddingHeader, Vec<f64>) = container::read_model(path)?;
        let projection = ProjectionModel::new(h.input_dim, h.bits, h.seed).map_err(|e| Error::format(path, e.to_string()))?;
        let model = match h.kind.as_str() {
            "lsh" if payload.is_empty() => Self::Lsh(projection),
            "itq" if payload.len() == h.bits * h.bits + h.input_dim => {
                let rotation = DMatrix::from_column_slice(h.bits, h.bits, &payload[..h.bits * h.bits]);
                Self::Itq(ItqModel {
                    projection,
                    rotation,
                    data_mean: payload[h.bits * h.bits..].to_vec(),
                    iterations_run: h.iterations,
                    objective_trace: h.objective_trace,
                    undersampled: h.undersampled,
                })
            }
            other => return Err(Error::format(path, format!("unknown embedding `{other}` or bad payload length"))),
        };
        if model.embedding_id() != h.embedding_id {
            return Err(Error::format(path, "embedding id does not match the stored parameters"));
        }
        Ok(model)
    }
}

#[derive(Serialize, Deserialize)]
struct EmbeddingHeader {
    kind: String,
    input_dim: usize,
    bits: usize,
    seed: u64,
    iterations: usize,
    embedding_id: String,
    objective_trace: Vec<f64>,
    undersampled: bool,
}

/// Sign of the (rotated) projection, tagged with the model's embedding id.
pub fn encode_binary(model: &Embedding, x: &[f64]) -> Result<BinaryCode> {
    let mut code = sign_quantize(&model.pre_quantization(x)?);
    code.embedding_id = model.embedding_id();
    Ok(code)
}
