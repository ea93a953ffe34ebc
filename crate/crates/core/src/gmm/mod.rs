//! Diagonal Gaussian mixtures fitted by EM, and plain k-means.

mod em;
mod kmeans;

pub use em::{gmm_fit, gmm_posteriors, GmmModel};
pub use kmeans::{kmeans_fit, KmeansModel};


use crate::error::{Error, Result};

/// Returns the common dimension of `data`, rejecting empty, ragged or non-finite input.
pub(crate) fn check_data(data: &[Vec<f64>]) -> Result<usize> {
    let d = data.first().map(Vec::len).ok_or_else(|| Error::Empty("no data points".into()))?;
    if d == 0 {
        return Err(Error::Shape("data points have dimension 0".into()));
    }
    for v in data {
        if v.len() != d {
            return Err(Error::Shape(format!("ragged data: dimensions {d} and {}", v.len())));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::Domain("data contains non-finite values".into()));
        }
    }
    Ok(d)
}
