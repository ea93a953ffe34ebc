use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::seed::rng_from_seed;

/// Gaussian random projection from `D` to `B` dimensions.
///
/// The matrix is drawn row by row from a ChaCha stream keyed by `seed`, so the
/// same `(D, B, seed)` always rebuilds the same matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionModel {
    /// `D × B`.
    pub matrix: DMatrix<f64>,
    pub seed: u64,
}

impl ProjectionModel {
    pub fn new(input_dim: usize, bits: usize, seed: u64) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::Domain("projection input dimension must be positive".into()));
        }
        if bits == 0 || !bits.is_multiple_of(64) {
            return Err(Error::Domain(format!("code length {bits} is not a positive multiple of 64")));
        }
        let mut rng = rng_from_seed(seed);
        let matrix = DMatrix::from_fn(bits, input_dim, |_, _| rng.sample::<f64, _>(StandardNormal)).transpose();
        Ok(Self { matrix, seed })
    }

    pub fn input_dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn bits(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn embedding_id(&self) -> String {
        format!("lsh-{}x{}-{:016x}", self.input_dim(), self.bits(), self.seed)
    }

    pub(crate) fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::Shape(format!("projection expects dimension {}, got {}", self.input_dim(), x.len())));
        }
        Ok(())
    }
}

/// `matrixᵀ · x`.
pub fn project(model: &ProjectionModel, x: &[f64]) -> Result<Vec<f64>> {
    model.check_input(x)?;
    let v = model.matrix.tr_mul(&DVector::from_column_slice(x));
    Ok(v.iter().copied().collect())
}
