use super::{canonical_order, power_l2_normalize};
use crate::descriptors::DescriptorSet;
use crate::error::{Error, Result};
use crate::gmm::KmeansModel;

/// Residuals to the nearest centre summed per centre, `K·d` values,
/// signed-square-rooted and L2-normalised.
#[derive(Debug, Clone, PartialEq)]
pub struct VladVector {
    pub values: Vec<f64>,
    pub model_id: String,
    /// Every residual was zero, so the vector stays all zeros.
    pub degenerate: bool,
}

pub fn vlad_encode(model: &KmeansModel, set: &DescriptorSet) -> Result<VladVector> {
    if set.is_empty() {
        return Err(Error::Empty(format!("no descriptors to pool for `{}`", set.source_surface)));
    }
    let d = model.dim();
    if set.dim() != d {
        return Err(Error::Shape(format!("descriptors of dimension {} against centres of dimension {d}", set.dim())));
    }
    let mut values = vec![0.0; model.k() * d];
    for v in canonical_order(&set.vectors) {
        let (c, _) = model.nearest(v);
        for ((acc, x), m) in values[c * d..(c + 1) * d].iter_mut().zip(v).zip(&model.centers[c]) {
            *acc += x - m;
        }
    }
    let degenerate = !power_l2_normalize(&mut values);
    if degenerate {
        log::warn!("VLAD vector of `{}` is all zeros", set.source_surface);
    }
    Ok(VladVector { values, model_id: model.model_id(), degenerate })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from_seed;
    use rand::Rng;

    fn set_of(rows: Vec<Vec<f64>>) -> DescriptorSet {
        let n = rows.len();
        DescriptorSet::from_vectors(rows, vec![(0.0, 0.0); n], "s").unwrap()
    }

    fn km(centers: Vec<Vec<f64>>) -> KmeansModel {
        KmeansModel { centers, wcss_trace: vec![], seed: 0 }
    }

    #[test]
    fn descriptors_on_centres_are_degenerate() {
        let m = km(vec![vec![0.0, 1.0], vec![3.0, 3.0]]);
        let v = vlad_encode(&m, &set_of(vec![vec![0.0, 1.0], vec![3.0, 3.0], vec![3.0, 3.0]])).unwrap();
        assert!(v.degenerate);
        assert!(v.values.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn single_descriptor_single_centre() {
        let m = km(vec![vec![1.0, 1.0, 1.0]]);
        let v = vlad_encode(&m, &set_of(vec![vec![2.0, 1.0, -3.0]])).unwrap();
        // residual (1, 0, -4) after signed sqrt is (1, 0, -2), norm sqrt(5)
        let n = 5f64.sqrt();
        let expected = [1.0 / n, 0.0, -2.0 / n];
        for (a, b) in v.values.iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn matches_per_point_oracle() {
        let mut rng = rng_from_seed(1);
        for _ in 0..100 {
            let (k, d) = (rng.random_range(1..5), rng.random_range(1..6));
            let centers: Vec<Vec<f64>> = (0..k).map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
            let n = rng.random_range(1..30);
            let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
            let mut oracle = vec![0.0; k * d];
            for r in &rows {
                let mut best = 0;
                for c in 1..k {
                    let dc: f64 = (0..d).map(|j| (r[j] - centers[c][j]).powi(2)).sum();
                    let db: f64 = (0..d).map(|j| (r[j] - centers[best][j]).powi(2)).sum();
                    if dc < db {
                        best = c;
                    }
                }
                for j in 0..d {
                    oracle[best * d + j] += r[j] - centers[best][j];
                }
            }
            let ss: Vec<f64> = oracle.iter().map(|x| x.signum() * x.abs().sqrt()).collect();
            let norm = ss.iter().map(|x| x * x).sum::<f64>().sqrt();
            let v = vlad_encode(&km(centers), &set_of(rows)).unwrap();
            for (a, b) in v.values.iter().zip(&ss) {
                assert!((a - b / norm).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn contract_errors() {
        let m = km(vec![vec![0.0, 0.0]]);
        assert!(vlad_encode(&m, &DescriptorSet::new(2, "e")).is_err());
        assert!(vlad_encode(&m, &set_of(vec![vec![1.0]])).is_err());
    }
}
