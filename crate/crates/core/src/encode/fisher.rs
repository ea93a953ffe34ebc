use serde::{Deserialize, Serialize};

use super::{canonical_order, power_l2_normalize};
use crate::descriptors::DescriptorSet;
use crate::error::{Error, Result};
use crate::gmm::GmmModel;

/// Posteriors below this value are dropped (and the rest renormalised) unless
/// exact pooling is requested.
pub const POSTERIOR_CUTOFF: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Normalization {
    Raw,
    /// Signed square root, then L2.
    #[default]
    Improved,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FisherOptions {
    pub normalization: Normalization,
    /// Keep every posterior, however small.
    pub exact_posteriors: bool,
}

/// Gradient of the average log-likelihood with respect to the means and
/// standard deviations of a GMM, laid out per component as `[mean block,
/// variance block]`, `2·K·d` values in total.
#[derive(Debug, Clone, PartialEq)]
pub struct FisherVector {
    pub values: Vec<f64>,
    pub normalization: Normalization,
    pub model_id: String,
    /// All values are zero, so normalisation was impossible.
    pub degenerate: bool,
}

impl FisherVector {
    pub fn mean_block(&self, k: usize, d: usize) -> &[f64] {
        &self.values[2 * k * d..(2 * k + 1) * d]
    }

    pub fn variance_block(&self, k: usize, d: usize) -> &[f64] {
        &self.values[(2 * k + 1) * d..(2 * k + 2) * d]
    }
}

pub fn fisher_encode(model: &GmmModel, set: &DescriptorSet, normalization: Normalization) -> Result<FisherVector> {
    fisher_encode_with(model, set, &FisherOptions { normalization, exact_posteriors: false })
}

pub fn fisher_encode_with(model: &GmmModel, set: &DescriptorSet, opts: &FisherOptions) -> Result<FisherVector> {
    if set.is_empty() {
        return Err(Error::Empty(format!("no descriptors to pool for `{}`", set.source_surface)));
    }
    let (k, d) = (model.k(), model.dim());
    if set.dim() != d {
        return Err(Error::Shape(format!("descriptors of dimension {} against a GMM of dimension {d}", set.dim())));
    }
    let rows = canonical_order(&set.vectors);
    let posteriors = model.posteriors_batch(&rows)?;
    let sigma: Vec<Vec<f64>> = model.variances.iter().map(|v| v.iter().map(|s| s.sqrt()).collect()).collect();

    let mut values = vec![0.0; 2 * k * d];
    for (v, mut gamma) in rows.into_iter().zip(posteriors) {
        if !opts.exact_posteriors {
            gamma.iter_mut().for_each(|g| {
                if *g < POSTERIOR_CUTOFF {
                    *g = 0.0
                }
            });
            let total: f64 = gamma.iter().sum();
            gamma.iter_mut().for_each(|g| *g /= total);
        }
        for c in 0..k {
            let g = gamma[c];
            if g == 0.0 {
                continue;
            }
            let (mean_block, var_block) = values[2 * c * d..(2 * c + 2) * d].split_at_mut(d);
            for j in 0..d {
                let z = (v[j] - model.means[c][j]) / sigma[c][j];
                mean_block[j] += g * z;
                var_block[j] += g * (z * z - 1.0);
            }
        }
    }
    let n = set.len() as f64;
    for c in 0..k {
        let w = model.weights[c];
        let (mean_scale, var_scale) = (1.0 / (n * w.sqrt()), 1.0 / (n * (2.0 * w).sqrt()));
        values[2 * c * d..(2 * c + 1) * d].iter_mut().for_each(|x| *x *= mean_scale);
        values[(2 * c + 1) * d..(2 * c + 2) * d].iter_mut().for_each(|x| *x *= var_scale);
    }

    let degenerate = match opts.normalization {
        Normalization::Raw => values.iter().all(|&x| x == 0.0),
        Normalization::Improved => !power_l2_normalize(&mut values),
    };
    if degenerate {
        log::warn!("Fisher vector of `{}` is all zeros", set.source_surface);
    }
    Ok(FisherVector { values, normalization: opts.normalization, model_id: model.model_id(), degenerate })
}
