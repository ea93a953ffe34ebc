//! Exact t-SNE for small point sets, on real vectors or binary codes.

use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::embed::{hamming, BinaryCode};
use crate::error::{Error, Result};
use crate::seed::rng_from_seed;

const ENTROPY_TOL: f64 = 1e-10;
const MAX_BISECTIONS: usize = 200;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TsneParams {
    pub perplexity: f64,
    pub iters: usize,
    pub seed: u64,
    /// Step size; `None` picks `N / (4 · exaggeration)`, which keeps the
    /// exaggerated attraction from overshooting on small inputs.
    pub learning_rate: Option<f64>,
    pub exaggeration: f64,
    pub exaggeration_iters: usize,
    pub initial_momentum: f64,
    pub final_momentum: f64,
}

impl Default for TsneParams {
    fn default() -> Self {
        Self {
            perplexity: 30.0,
            iters: 1000,
            seed: 0,
            learning_rate: None,
            exaggeration: 12.0,
            exaggeration_iters: 250,
            initial_momentum: 0.5,
            final_momentum: 0.8,
        }
    }
}

/// Points to embed: real vectors under Euclidean distance or codes under Hamming distance.
#[derive(Debug, Clone, Copy)]
pub enum TsneInput<'a> {
    Vectors(&'a [Vec<f64>]),
    Codes(&'a [BinaryCode]),
}

impl TsneInput<'_> {
    fn len(&self) -> usize {
        match self {
            Self::Vectors(v) => v.len(),
            Self::Codes(c) => c.len(),
        }
    }

    /// Full matrix of squared distances, row-major.
    fn squared_distances(&self) -> Result<Vec<f64>> {
        let n = self.len();
        let mut d = vec![0.0; n * n];
        for i in 0..n {
            for j in i + 1..n {
                let v = match self {
                    Self::Vectors(v) => {
                        if v[i].len() != v[0].len() || v[j].len() != v[0].len() {
                            return Err(Error::Shape("t-SNE vectors differ in length".into()));
                        }
                        v[i].iter().zip(&v[j]).map(|(a, b)| (a - b) * (a - b)).sum()
                    }
                    Self::Codes(c) => f64::from(hamming(&c[i], &c[j])?).powi(2),
                };
                if !v.is_finite() {
                    return Err(Error::Domain("t-SNE input contains non-finite values".into()));
                }
                d[i * n + j] = v;
                d[j * n + i] = v;
            }
        }
        Ok(d)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingResult {
    /// `N` rows of `(x, y)`.
    pub points: Vec<[f64; 2]>,
    /// KL divergence between the input affinities and the embedding after every iteration.
    pub kl_trace: Vec<f64>,
    pub perplexity: f64,
}

/// Row-stochastic conditional affinities `p_{j|i}` whose rows have the
/// requested perplexity, found by bisection on the Gaussian precision.
///
/// A row whose distances are all equal cannot reach a perplexity below
/// `N − 1` and stays uniform.
pub fn conditional_affinities(sq_dist: &[f64], n: usize, perplexity: f64) -> Vec<f64> {
    let target = perplexity.ln();
    let mut p = vec![0.0; n * n];
    let mut row = vec![0.0; n];
    for i in 0..n {
        let d: Vec<f64> = (0..n).map(|j| sq_dist[i * n + j]).collect();
        let d_min = (0..n).filter(|&j| j != i).map(|j| d[j]).fold(f64::INFINITY, f64::min);
        let entropy_at = |beta: f64, row: &mut [f64]| -> f64 {
            let mut sum = 0.0;
            for j in 0..n {
                row[j] = if j == i { 0.0 } else { (-beta * (d[j] - d_min)).exp() };
                sum += row[j];
            }
            let mut h = 0.0;
            for r in row.iter_mut() {
                *r /= sum;
                if *r > 0.0 {
                    h -= *r * r.ln();
                }
            }
            h
        };
        let (mut lo, mut hi) = (0.0f64, f64::INFINITY);
        let mut beta = 1.0;
        for _ in 0..MAX_BISECTIONS {
            let h = entropy_at(beta, &mut row);
            if (h - target).abs() < ENTROPY_TOL {
                break;
            }
            if h > target {
                lo = beta;
                beta = if hi.is_finite() { (beta + hi) / 2.0 } else { beta * 2.0 };
            } else {
                hi = beta;
                beta = (beta + lo) / 2.0;
            }
        }
        entropy_at(beta, &mut row);
        p[i * n..(i + 1) * n].copy_from_slice(&row);
    }
    p
}

fn kl_divergence(p: &[f64], q_num: &[f64], q_sum: f64) -> f64 {
    p.iter()
        .zip(q_num)
        .filter(|(pij, _)| **pij > 0.0)
        .map(|(pij, qn)| pij * (pij / (qn / q_sum).max(f64::MIN_POSITIVE)).ln())
        .sum::<f64>()
        .max(0.0)
}

/// Exact t-SNE with early exaggeration, momentum and per-coordinate gains.
pub fn tsne_embed(input: TsneInput<'_>, params: &TsneParams) -> Result<EmbeddingResult> {
    let n = input.len();
    if n < 10 {
        return Err(Error::Domain(format!("t-SNE needs at least 10 points, got {n}")));
    }
    let max_perp = (n - 1) as f64 / 3.0;
    if !(params.perplexity >= 5.0 && params.perplexity <= max_perp) {
        return Err(Error::Domain(format!(
            "perplexity {} outside [5, {max_perp:.3}] for {n} points",
            params.perplexity
        )));
    }
    if !(params.exaggeration >= 1.0 && params.exaggeration.is_finite()) {
        return Err(Error::Domain(format!("exaggeration must be a finite value >= 1, got {}", params.exaggeration)));
    }
    let learning_rate = params.learning_rate.unwrap_or(n as f64 / (4.0 * params.exaggeration));
    if !(learning_rate > 0.0 && learning_rate.is_finite()) {
        return Err(Error::Domain(format!("learning rate must be positive, got {learning_rate}")));
    }
    let sq = input.squared_distances()?;
    let cond = conditional_affinities(&sq, n, params.perplexity);
    let mut p = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            p[i * n + j] = (cond[i * n + j] + cond[j * n + i]) / (2.0 * n as f64);
        }
    }

    let mut rng = rng_from_seed(params.seed);
    let mut y: Vec<[f64; 2]> =
        (0..n).map(|_| [1e-4 * rng.sample::<f64, _>(StandardNormal), 1e-4 * rng.sample::<f64, _>(StandardNormal)]).collect();
    let mut update = vec![[0.0; 2]; n];
    let mut gains = vec![[1.0f64; 2]; n];
    let mut q_num = vec![0.0; n * n];
    let mut kl_trace = Vec::with_capacity(params.iters);

    for it in 0..params.iters {
        let exaggerating = it < params.exaggeration_iters;
        let exag = if exaggerating { params.exaggeration } else { 1.0 };
        let momentum = if exaggerating { params.initial_momentum } else { params.final_momentum };

        let mut q_sum = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                let dx = y[i][0] - y[j][0];
                let dy = y[i][1] - y[j][1];
                let v = 1.0 / (1.0 + dx * dx + dy * dy);
                q_num[i * n + j] = v;
                q_num[j * n + i] = v;
                q_sum += 2.0 * v;
            }
        }
        for i in 0..n {
            let mut grad = [0.0; 2];
            for j in 0..n {
                if i == j {
                    continue;
                }
                let w = q_num[i * n + j];
                let mult = 4.0 * (exag * p[i * n + j] - w / q_sum) * w;
                grad[0] += mult * (y[i][0] - y[j][0]);
                grad[1] += mult * (y[i][1] - y[j][1]);
            }
            for c in 0..2 {
                let same_sign = (grad[c] > 0.0) == (update[i][c] > 0.0);
                gains[i][c] = if same_sign { gains[i][c] * 0.8 } else { gains[i][c] + 0.2 };
                gains[i][c] = gains[i][c].max(0.01);
                update[i][c] = momentum * update[i][c] - learning_rate * gains[i][c] * grad[c];
            }
        }
        for (yi, u) in y.iter_mut().zip(&update) {
            yi[0] += u[0];
            yi[1] += u[1];
        }
        let mean = y.iter().fold([0.0; 2], |a, b| [a[0] + b[0], a[1] + b[1]]);
        for yi in &mut y {
            yi[0] -= mean[0] / n as f64;
            yi[1] -= mean[1] / n as f64;
        }

        // KL of the updated layout against the true affinities
        let mut q_sum = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                let dx = y[i][0] - y[j][0];
                let dy = y[i][1] - y[j][1];
                let v = 1.0 / (1.0 + dx * dx + dy * dy);
                q_num[i * n + j] = v;
                q_num[j * n + i] = v;
                q_sum += 2.0 * v;
            }
        }
        for i in 0..n {
            q_num[i * n + i] = 0.0;
        }
        let kl = kl_divergence(&p, &q_num, q_sum);
        if !kl.is_finite() || y.iter().any(|v| !v[0].is_finite() || !v[1].is_finite()) {
            return Err(Error::Numerical { reason: format!("t-SNE diverged at iteration {it}"), last_finite_loss: kl_trace.last().copied() });
        }
        kl_trace.push(kl);
    }
    Ok(EmbeddingResult { points: y, kl_trace, perplexity: params.perplexity })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TsneRow {
    pub surface_id: String,
    pub label: String,
    pub mu: f64,
    pub x: f64,
    pub y: f64,
}

/// Writes `surface_id,label,mu,x,y` rows.
pub fn write_tsne_csv(path: &Path, rows: &[TsneRow]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    for r in rows {
        w.serialize(r).map_err(|e| Error::format(path, e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Least-squares slope of `values` against their index.
pub fn trend_slope(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    if values.len() < 2 {
        return 0.0;
    }
    let mx = (n - 1.0) / 2.0;
    let my = values.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (i, v) in values.iter().enumerate() {
        sxy += (i as f64 - mx) * (v - my);
        sxx += (i as f64 - mx).powi(2);
    }
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_clusters(per: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = rng_from_seed(seed);
        (0..2 * per)
            .map(|i| {
                let off = if i < per { 0.0 } else { 50.0 };
                (0..5).map(|_| off + rng.sample::<f64, _>(StandardNormal)).collect()
            })
            .collect()
    }

    /// Mean silhouette, computed directly from its definition.
    fn silhouette(points: &[[f64; 2]], labels: &[usize]) -> f64 {
        let dist = |a: &[f64; 2], b: &[f64; 2]| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
        let mut total = 0.0;
        for i in 0..points.len() {
            let mut same = (0.0, 0);
            let mut other = (0.0, 0);
            for j in 0..points.len() {
                if i == j {
                    continue;
                }
                let d = dist(&points[i], &points[j]);
                if labels[i] == labels[j] {
                    same = (same.0 + d, same.1 + 1);
                } else {
                    other = (other.0 + d, other.1 + 1);
                }
            }
            let a = same.0 / same.1 as f64;
            let b = other.0 / other.1 as f64;
            total += (b - a) / a.max(b);
        }
        total / points.len() as f64
    }

    #[test]
    fn rows_hit_target_perplexity() {
        let data = two_clusters(30, 1);
        let sq = TsneInput::Vectors(&data).squared_distances().unwrap();
        let n = data.len();
        let p = conditional_affinities(&sq, n, 12.0);
        for i in 0..n {
            let row = &p[i * n..(i + 1) * n];
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-10);
            let h: f64 = row.iter().filter(|&&v| v > 0.0).map(|v| -v * v.ln()).sum();
            assert!((h.exp() - 12.0).abs() < 1e-3);
        }
    }

    #[test]
    fn separates_two_clusters() {
        let data = two_clusters(20, 2);
        let params = TsneParams { perplexity: 10.0, iters: 600, seed: 3, ..Default::default() };
        let r = tsne_embed(TsneInput::Vectors(&data), &params).unwrap();
        let labels: Vec<usize> = (0..40).map(|i| i / 20).collect();
        assert!(silhouette(&r.points, &labels) > 0.8);
        assert!(trend_slope(&r.kl_trace[r.kl_trace.len() - 200..]) <= 0.0);
        assert!(r.kl_trace.iter().all(|k| k.is_finite() && *k >= 0.0));
        assert_eq!(tsne_embed(TsneInput::Vectors(&data), &params).unwrap(), r);
    }

    #[test]
    fn identical_points_stay_together() {
        let data = vec![vec![1.0, 2.0, 3.0]; 16];
        let r = tsne_embed(TsneInput::Vectors(&data), &TsneParams { perplexity: 5.0, iters: 300, ..Default::default() }).unwrap();
        assert!(*r.kl_trace.last().unwrap() < 1e-6);
        // the blob must stay far below one step of the optimizer
        let step = 16.0 / (4.0 * 12.0);
        let spread = r.points.iter().map(|p| p[0].abs().max(p[1].abs())).fold(0.0, f64::max);
        assert!(spread < 1e-2 * step, "{spread}");
    }

    #[test]
    fn works_on_codes() {
        let mut rng = rng_from_seed(4);
        let codes: Vec<BinaryCode> = (0..24)
            .map(|i| {
                let bits: Vec<bool> = (0..64).map(|j| if j < 32 { i < 12 } else { rng.random::<f64>() < 0.1 }).collect();
                BinaryCode::from_bits(&bits, "e")
            })
            .collect();
        let r = tsne_embed(TsneInput::Codes(&codes), &TsneParams { perplexity: 5.0, iters: 400, ..Default::default() }).unwrap();
        let labels: Vec<usize> = (0..24).map(|i| (i < 12) as usize).collect();
        assert!(silhouette(&r.points, &labels) > 0.5);
    }

    #[test]
    fn rejects_infeasible_settings() {
        let data = two_clusters(5, 5);
        assert!(tsne_embed(TsneInput::Vectors(&data[..9]), &TsneParams::default()).is_err());
        assert!(tsne_embed(TsneInput::Vectors(&data), &TsneParams { perplexity: 4.0, ..Default::default() }).is_err());
        assert!(tsne_embed(TsneInput::Vectors(&data), &TsneParams { perplexity: 3.5, ..Default::default() }).is_err());
    }

    #[test]
    fn csv_output() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        write_tsne_csv(&p, &[TsneRow { surface_id: "s".into(), label: "a".into(), mu: 0.3, x: 1.0, y: -2.0 }]).unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "surface_id,label,mu,x,y\ns,a,0.3,1.0,-2.0\n");
    }
}
