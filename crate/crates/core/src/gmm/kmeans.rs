use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::check_data;
use crate::container;
use crate::error::{Error, Result};
use crate::seed::rng_from_seed;

#[derive(Debug, Clone, PartialEq)]
pub struct KmeansModel {
    pub centers: Vec<Vec<f64>>,
    /// Within-cluster sum of squares of the centres at each iteration, nearest-centre assignment.
    pub wcss_trace: Vec<f64>,
    pub seed: u64,
}

#[derive(Serialize, Deserialize)]
struct KmeansHeader {
    kind: String,
    k: usize,
    d: usize,
    seed: u64,
    wcss_trace: Vec<f64>,
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

impl KmeansModel {
    pub fn k(&self) -> usize {
        self.centers.len()
    }

    pub fn dim(&self) -> usize {
        self.centers.first().map_or(0, Vec::len)
    }

    /// Index of the nearest centre; the lowest index wins ties.
    pub fn nearest(&self, v: &[f64]) -> (usize, f64) {
        nearest(&self.centers, v)
    }

    pub fn wcss(&self, data: &[Vec<f64>]) -> f64 {
        data.iter().map(|v| self.nearest(v).1).sum()
    }

    fn payload(&self) -> Vec<f64> {
        self.centers.iter().flatten().copied().collect()
    }

    pub fn model_id(&self) -> String {
        container::fingerprint("kmeans", &self.payload())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let header = KmeansHeader {
            kind: "kmeans".into(),
            k: self.k(),
            d: self.dim(),
            seed: self.seed,
            wcss_trace: self.wcss_trace.clone(),
        };
        container::write_model(path, &header, &self.payload())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (h, payload): (KmeansHeader, Vec<f64>) = container::read_model(path)?;
        if h.kind != "kmeans" || h.d == 0 || payload.len() != h.k * h.d {
            return Err(Error::format(path, "not a k-means model or payload size mismatch"));
        }
        Ok(Self {
            centers: payload.chunks(h.d).map(<[f64]>::to_vec).collect(),
            wcss_trace: h.wcss_trace,
            seed: h.seed,
        })
    }
}

fn nearest(centers: &[Vec<f64>], v: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (k, c) in centers.iter().enumerate() {
        let d = sq_dist(c, v);
        if d < best.1 {
            best = (k, d);
        }
    }
    best
}

fn plus_plus_seeding(data: &[Vec<f64>], k: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    let mut rng = rng_from_seed(seed);
    let mut centers = vec![data[rng.random_range(0..data.len())].clone()];
    let mut d2: Vec<f64> = data.iter().map(|v| sq_dist(v, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        if total <= 0.0 {
            return Err(Error::Domain(format!("data has fewer than {k} distinct points")));
        }
        let mut target = rng.random::<f64>() * total;
        let mut pick = d2.iter().rposition(|&x| x > 0.0).unwrap_or(0);
        for (i, &w) in d2.iter().enumerate() {
            if w > 0.0 && target < w {
                pick = i;
                break;
            }
            target -= w;
        }
        let c = data[pick].clone();
        for (dist, v) in d2.iter_mut().zip(data) {
            *dist = dist.min(sq_dist(v, &c));
        }
        centers.push(c);
    }
    Ok(centers)
}

/// Lloyd's algorithm from k-means++ seeding.
///
/// A centre left without points is moved onto the point farthest from its
/// own centre, which can only lower the objective.
pub fn kmeans_fit(data: &[Vec<f64>], k: usize, seed: u64, max_iter: usize) -> Result<KmeansModel> {
    let d = check_data(data)?;
    if k == 0 || data.len() < k {
        return Err(Error::Domain(format!("k-means needs 1 <= K <= {} points, got K = {k}", data.len())));
    }
    let mut centers = plus_plus_seeding(data, k, seed)?;
    let mut assign: Vec<usize> = vec![usize::MAX; data.len()];
    let mut wcss_trace = Vec::new();
    let mut converged = false;

    for _ in 0..max_iter.max(1) {
        let mut dists = vec![0.0; data.len()];
        let mut changed = false;
        for (i, v) in data.iter().enumerate() {
            let (c, dist) = nearest(&centers, v);
            changed |= assign[i] != c;
            assign[i] = c;
            dists[i] = dist;
        }
        wcss_trace.push(dists.iter().sum());
        if !changed {
            converged = true;
            break;
        }

        let mut counts = vec![0usize; k];
        assign.iter().for_each(|&c| counts[c] += 1);
        let empties: Vec<usize> = (0..k).filter(|&c| counts[c] == 0).collect();
        for empty in empties {
            let far = (0..data.len())
                .max_by(|&a, &b| dists[a].total_cmp(&dists[b]).then(b.cmp(&a)))
                .expect("data is non-empty");
            counts[assign[far]] -= 1;
            assign[far] = empty;
            counts[empty] = 1;
            dists[far] = 0.0;
            centers[empty] = data[far].clone();
        }

        let mut sums = vec![vec![0.0; d]; k];
        for (v, &c) in data.iter().zip(&assign) {
            sums[c].iter_mut().zip(v).for_each(|(s, x)| *s += x);
        }
        for ((center, sum), &n) in centers.iter_mut().zip(sums).zip(&counts) {
            if n > 0 {
                *center = sum.into_iter().map(|s| s / n as f64).collect();
            }
        }
    }
    if !converged {
        wcss_trace.push(data.iter().map(|v| nearest(&centers, v).1).sum());
    }
    Ok(KmeansModel { centers, wcss_trace, seed })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::StandardNormal;

    fn blobs(k: usize, per: usize, d: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let mut rng = rng_from_seed(seed);
        let mut data = Vec::new();
        let mut means = Vec::new();
        for c in 0..k {
            let center: Vec<f64> = (0..d).map(|j| if j == c % d { 100.0 * (c + 1) as f64 } else { 0.0 }).collect();
            let pts: Vec<Vec<f64>> = (0..per)
                .map(|_| center.iter().map(|x| x + rng.sample::<f64, _>(StandardNormal)).collect())
                .collect();
            means.push((0..d).map(|j| pts.iter().map(|p| p[j]).sum::<f64>() / per as f64).collect());
            data.extend(pts);
        }
        (data, means)
    }

    #[test]
    fn separated_clusters_give_their_means() {
        let (data, means) = blobs(4, 50, 3, 1);
        let m = kmeans_fit(&data, 4, 9, 100).unwrap();
        for mean in &means {
            let (c, _) = m.nearest(mean);
            assert!(sq_dist(&m.centers[c], mean).sqrt() < 1e-8);
        }
    }

    #[test]
    fn one_center_per_point() {
        let (data, _) = blobs(2, 5, 2, 2);
        let m = kmeans_fit(&data, data.len(), 3, 50).unwrap();
        assert_eq!(m.wcss(&data), 0.0);
        assert_eq!(*m.wcss_trace.last().unwrap(), 0.0);
    }

    #[test]
    fn wcss_trace_is_monotone_and_recomputable() {
        let mut rng = rng_from_seed(4);
        let data: Vec<Vec<f64>> = (0..400).map(|_| (0..5).map(|_| rng.random::<f64>()).collect()).collect();
        for seed in 0..5 {
            let m = kmeans_fit(&data, 7, seed, 100).unwrap();
            assert!(m.wcss_trace.windows(2).all(|w| w[1] <= w[0] + 1e-12));
            // independent recomputation of the final objective
            let oracle: f64 = data
                .iter()
                .map(|v| m.centers.iter().map(|c| sq_dist(c, v)).fold(f64::INFINITY, f64::min))
                .sum();
            assert!((oracle - m.wcss_trace.last().unwrap()).abs() < 1e-9);
            assert_eq!(kmeans_fit(&data, 7, seed, 100).unwrap(), m);
        }
    }

    #[test]
    fn infeasible_inputs() {
        let data = vec![vec![1.0, 2.0]; 5];
        assert!(kmeans_fit(&data, 2, 0, 10).is_err());
        assert!(kmeans_fit(&data[..1], 2, 0, 10).is_err());
        assert!(kmeans_fit(&[], 1, 0, 10).is_err());
    }

    #[test]
    fn model_file_round_trip() {
        let (data, _) = blobs(3, 10, 2, 5);
        let m = kmeans_fit(&data, 3, 1, 20).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("km.model");
        m.save(&p).unwrap();
        let back = KmeansModel::load(&p).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.model_id(), m.model_id());
    }
}
