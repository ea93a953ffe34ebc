use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::DescriptorSet;
use crate::container;
use crate::error::{Error, Result};

/// Eigenvalues below this fraction of the largest one count as missing rank.
const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// `D × d`, orthonormal columns in order of decreasing variance.
    pub basis: DMatrix<f64>,
    /// Variances along the basis columns, floored to stay positive.
    pub eigenvalues: Vec<f64>,
    pub whiten: bool,
    /// Fewer than `d` directions carry variance; the rest of the basis is an
    /// arbitrary orthonormal complement.
    pub rank_deficient: bool,
    pub total_variance: f64,
    /// Variance in the directions left out, i.e. the mean squared reconstruction error.
    pub discarded_variance: f64,
}

#[derive(Serialize, Deserialize)]
struct PcaHeader {
    kind: String,
    input_dim: usize,
    out_dim: usize,
    whiten: bool,
    rank_deficient: bool,
    total_variance: f64,
    discarded_variance: f64,
}

impl PcaModel {
    pub fn input_dim(&self) -> usize {
        self.mean.len()
    }

    pub fn out_dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn explained_variance_ratio(&self) -> f64 {
        if self.total_variance > 0.0 {
            1.0 - self.discarded_variance / self.total_variance
        } else {
            1.0
        }
    }

    pub fn project(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.input_dim() {
            return Err(Error::Shape(format!(
                "PCA expects dimension {}, got {}",
                self.input_dim(),
                v.len()
            )));
        }
        let centered: Vec<f64> = v.iter().zip(&self.mean).map(|(a, m)| a - m).collect();
        Ok((0..self.out_dim())
            .map(|j| {
                let dot: f64 = self.basis.column(j).iter().zip(&centered).map(|(b, c)| b * c).sum();
                if self.whiten {
                    dot / self.eigenvalues[j].sqrt()
                } else {
                    dot
                }
            })
            .collect())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let header = PcaHeader {
            kind: "pca".into(),
            input_dim: self.input_dim(),
            out_dim: self.out_dim(),
            whiten: self.whiten,
            rank_deficient: self.rank_deficient,
            total_variance: self.total_variance,
            discarded_variance: self.discarded_variance,
        };
        let mut payload = self.mean.clone();
        payload.extend(self.basis.iter());
        payload.extend(&self.eigenvalues);
        container::write_model(path, &header, &payload)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (h, payload): (PcaHeader, Vec<f64>) = container::read_model(path)?;
        if h.kind != "pca" {
            return Err(Error::format(path, format!("expected a pca model, found `{}`", h.kind)));
        }
        let (dd, d) = (h.input_dim, h.out_dim);
        if payload.len() != dd + dd * d + d {
            return Err(Error::format(path, "payload length does not match header"));
        }
        Ok(Self {
            mean: payload[..dd].to_vec(),
            basis: DMatrix::from_column_slice(dd, d, &payload[dd..dd + dd * d]),
            eigenvalues: payload[dd + dd * d..].to_vec(),
            whiten: h.whiten,
            rank_deficient: h.rank_deficient,
            total_variance: h.total_variance,
            discarded_variance: h.discarded_variance,
        })
    }
}

/// Fits PCA on all vectors of all sets pooled together.
pub fn pca_fit(sets: &[DescriptorSet], out_dim: usize, whiten: bool) -> Result<PcaModel> {
    let dim = sets
        .iter()
        .find(|s| !s.is_empty())
        .map(DescriptorSet::dim)
        .ok_or_else(|| Error::Empty("PCA needs at least one descriptor".into()))?;
    if sets.iter().any(|s| !s.is_empty() && s.dim() != dim) {
        return Err(Error::Shape("descriptor sets disagree on dimension".into()));
    }
    let n: usize = sets.iter().map(DescriptorSet::len).sum();
    if out_dim == 0 || out_dim > dim {
        return Err(Error::Domain(format!("PCA output dimension {out_dim} not in [1, {dim}]")));
    }
    if n <= out_dim {
        return Err(Error::Domain(format!("{n} descriptors are too few for {out_dim} components")));
    }

    let rows = || sets.iter().flat_map(|s| s.vectors.iter());
    let mut mean = vec![0.0; dim];
    for v in rows() {
        mean.iter_mut().zip(v).for_each(|(m, x)| *m += x);
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);

    let mut centered = DMatrix::<f64>::zeros(n, dim);
    for (i, v) in rows().enumerate() {
        for (j, (x, m)) in v.iter().zip(&mean).enumerate() {
            centered[(i, j)] = x - m;
        }
    }
    let cov = centered.tr_mul(&centered) / n as f64;
    let total_variance = cov.trace();
    let eig = SymmetricEigen::new(cov);

    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let top = eig.eigenvalues[order[0]].max(0.0);
    let floor = (top * 1e-12).max(f64::MIN_POSITIVE);

    let mut basis = DMatrix::<f64>::zeros(dim, out_dim);
    let mut eigenvalues = Vec::with_capacity(out_dim);
    let mut rank_deficient = false;
    for (j, &k) in order.iter().take(out_dim).enumerate() {
        let mut col = eig.eigenvectors.column(k).into_owned();
        // fix the sign so the largest-magnitude entry is positive
        let pivot = col.iter().copied().fold(0.0f64, |a, b| if b.abs() > a.abs() { b } else { a });
        if pivot < 0.0 {
            col.neg_mut();
        }
        basis.set_column(j, &col);
        let lambda = eig.eigenvalues[k];
        if lambda <= RANK_TOL * top || top == 0.0 {
            rank_deficient = true;
        }
        eigenvalues.push(lambda.max(floor));
    }
    let discarded_variance: f64 = order[out_dim..].iter().map(|&k| eig.eigenvalues[k].max(0.0)).sum();
    if rank_deficient {
        log::warn!("PCA: data spans fewer than {out_dim} directions; basis padded with an arbitrary complement");
    }
    Ok(PcaModel { mean, basis, eigenvalues, whiten, rank_deficient, total_variance, discarded_variance })
}

/// Projects every vector of `set`; positions and the source id are kept.
pub fn pca_apply(model: &PcaModel, set: &DescriptorSet) -> Result<DescriptorSet> {
    if set.dim() != model.input_dim() && !(set.is_empty() && set.dim() == 0) {
        return Err(Error::Shape(format!(
            "PCA fitted on dimension {} cannot be applied to dimension {}",
            model.input_dim(),
            set.dim()
        )));
    }
    let mut out = DescriptorSet::new(model.out_dim(), set.source_surface.clone());
    for (v, &p) in set.vectors.iter().zip(&set.positions) {
        out.push(model.project(v)?, p)?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from_seed;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn set_of(rows: Vec<Vec<f64>>) -> DescriptorSet {
        let n = rows.len();
        DescriptorSet::from_vectors(rows, vec![(0.0, 0.0); n], "s").unwrap()
    }

    fn gaussian_rows(n: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = rng_from_seed(seed);
        (0..n).map(|_| (0..d).map(|_| rng.sample(StandardNormal)).collect()).collect()
    }

    fn dist(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
    }

    #[test]
    fn basis_is_orthonormal_and_sorted() {
        let set = set_of(gaussian_rows(300, 12, 1));
        let m = pca_fit(&[set], 6, false).unwrap();
        let gram = m.basis.tr_mul(&m.basis);
        assert!((gram - DMatrix::identity(6, 6)).abs().max() < 1e-8);
        assert!(m.eigenvalues.windows(2).all(|w| w[0] >= w[1]));
        assert!(!m.rank_deficient);
    }

    #[test]
    fn subspace_data_is_projected_losslessly() {
        let mut rng = rng_from_seed(2);
        let dirs = gaussian_rows(3, 10, 3);
        let rows: Vec<Vec<f64>> = (0..100)
            .map(|_| {
                let c: [f64; 3] = [rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal)];
                (0..10).map(|j| (0..3).map(|k| c[k] * dirs[k][j]).sum::<f64>() + 5.0).collect()
            })
            .collect();
        let set = set_of(rows.clone());
        let m = pca_fit(std::slice::from_ref(&set), 3, false).unwrap();
        let p = pca_apply(&m, &set).unwrap();
        for i in 0..20 {
            for j in 0..20 {
                assert!((dist(&rows[i], &rows[j]) - dist(&p.vectors[i], &p.vectors[j])).abs() < 1e-8);
            }
        }
        // with one more component than the data spans the fit is flagged
        let m4 = pca_fit(&[set], 4, false).unwrap();
        assert!(m4.rank_deficient);
        assert!(m4.eigenvalues.iter().all(|&e| e > 0.0));
    }

    #[test]
    fn reconstruction_error_is_discarded_variance() {
        let mut rows = gaussian_rows(400, 8, 4);
        for (i, r) in rows.iter_mut().enumerate() {
            for (j, x) in r.iter_mut().enumerate() {
                *x *= 1.0 + j as f64 + (i % 3) as f64 * 0.1;
            }
        }
        let set = set_of(rows.clone());
        let m = pca_fit(std::slice::from_ref(&set), 3, false).unwrap();
        let mut err = 0.0;
        for r in &rows {
            let y = m.project(r).unwrap();
            let recon: Vec<f64> = (0..8).map(|i| m.mean[i] + (0..3).map(|j| m.basis[(i, j)] * y[j]).sum::<f64>()).collect();
            err += dist(r, &recon).powi(2);
        }
        err /= rows.len() as f64;
        assert!((err - m.discarded_variance).abs() <= 1e-6 * m.discarded_variance);
    }

    #[test]
    fn isotropic_data_has_flat_spectrum() {
        let set = set_of(gaussian_rows(20_000, 5, 5));
        let m = pca_fit(&[set], 5, false).unwrap();
        let ratio = m.eigenvalues[0] / m.eigenvalues[4];
        assert!(ratio < 1.1, "spread {ratio}");
    }

    #[test]
    fn noisy_line_is_one_dimensional() {
        let mut rng = rng_from_seed(6);
        let rows = (0..500)
            .map(|_| {
                let t: f64 = rng.sample(StandardNormal);
                let e: f64 = rng.sample(StandardNormal);
                vec![2.0 * t + 1e-3 * e, -t + 3.0]
            })
            .collect();
        let m = pca_fit(&[set_of(rows)], 1, false).unwrap();
        assert!(m.explained_variance_ratio() > 0.99);
    }

    #[test]
    fn apply_contracts() {
        let rows = gaussian_rows(100, 6, 7);
        let set = set_of(rows.clone());
        let m = pca_fit(std::slice::from_ref(&set), 3, false).unwrap();
        let at_mean = m.project(&m.mean).unwrap();
        assert!(at_mean.iter().all(|v| v.abs() < 1e-12));
        let p = pca_apply(&m, &set).unwrap();
        assert!(matches!(pca_apply(&m, &p), Err(Error::Shape(_))));
        for i in 0..50 {
            let j = (i * 7 + 3) % 100;
            assert!(dist(&p.vectors[i], &p.vectors[j]) <= dist(&rows[i], &rows[j]) + 1e-12);
        }
        let w = pca_fit(std::slice::from_ref(&set), 3, true).unwrap();
        let pw = pca_apply(&w, &set).unwrap();
        for j in 0..3 {
            let var = pw.vectors.iter().map(|v| v[j] * v[j]).sum::<f64>() / 100.0;
            assert!((var - 1.0).abs() < 1e-9);
        }
        assert!(pca_fit(&[set_of(gaussian_rows(3, 6, 1))], 3, false).is_err());
    }

    #[test]
    fn model_file_round_trip() {
        let set = set_of(gaussian_rows(50, 4, 8));
        let m = pca_fit(&[set], 2, true).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pca.model");
        m.save(&path).unwrap();
        assert_eq!(PcaModel::load(&path).unwrap(), m);
    }
}
