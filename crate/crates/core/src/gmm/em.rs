use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{check_data, kmeans_fit};
use crate::container;
use crate::error::{Error, Result};
use crate::seed::derive_seed;

const WEIGHT_FLOOR: f64 = 1e-6;
const VARIANCE_FLOOR_RATIO: f64 = 1e-6;
const MIN_VARIANCE_FLOOR: f64 = 1e-12;
const KMEANS_INIT_ITERS: usize = 30;

/// Diagonal-covariance Gaussian mixture.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmModel {
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub variances: Vec<Vec<f64>>,
    pub variance_floor: f64,
    pub seed: u64,
    /// Average log-likelihood of the data under the parameters of each EM iteration.
    pub loglik_trace: Vec<f64>,
    pub converged: bool,
    /// Fewer than ten points per component were available.
    pub undersampled: bool,
}

#[derive(Serialize, Deserialize)]
struct GmmHeader {
    kind: String,
    k: usize,
    d: usize,
    variance_floor: f64,
    weight_floor: f64,
    seed: u64,
    converged: bool,
    undersampled: bool,
    loglik_trace: Vec<f64>,
}

/// Per-component constants for evaluating log densities quickly.
struct Evaluator<'a> {
    model: &'a GmmModel,
    log_norm: Vec<f64>,
    inv_var: Vec<Vec<f64>>,
}

impl<'a> Evaluator<'a> {
    fn new(model: &'a GmmModel) -> Self {
        let log_norm = model
            .weights
            .iter()
            .zip(&model.variances)
            .map(|(w, var)| w.ln() - 0.5 * var.iter().map(|s| (2.0 * PI * s).ln()).sum::<f64>())
            .collect();
        let inv_var = model.variances.iter().map(|v| v.iter().map(|s| 1.0 / s).collect()).collect();
        Self { model, log_norm, inv_var }
    }

    /// Fills `out` with normalised posteriors and returns `log p(v)`.
    fn posteriors(&self, v: &[f64], out: &mut [f64]) -> f64 {
        for (k, o) in out.iter_mut().enumerate() {
            let maha: f64 = v
                .iter()
                .zip(&self.model.means[k])
                .zip(&self.inv_var[k])
                .map(|((x, m), iv)| (x - m) * (x - m) * iv)
                .sum();
            *o = self.log_norm[k] - 0.5 * maha;
        }
        let max = out.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            // every component is infinitely far away: hard-assign to the least distant one
            let best = (0..out.len()).max_by(|&a, &b| out[a].total_cmp(&out[b]).then(b.cmp(&a))).unwrap_or(0);
            out.iter_mut().enumerate().for_each(|(k, o)| *o = (k == best) as u8 as f64);
            return max;
        }
        let mut sum = 0.0;
        for o in out.iter_mut() {
            *o = (*o - max).exp();
            sum += *o;
        }
        out.iter_mut().for_each(|o| *o /= sum);
        max + sum.ln()
    }
}

impl GmmModel {
    pub fn k(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means.first().map_or(0, Vec::len)
    }

    fn check_dim(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.dim() {
            return Err(Error::Shape(format!("GMM of dimension {} given a {}-vector", self.dim(), v.len())));
        }
        Ok(())
    }

    pub fn posteriors(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(v)?;
        let mut out = vec![0.0; self.k()];
        Evaluator::new(self).posteriors(v, &mut out);
        Ok(out)
    }

    /// Posteriors for many vectors; avoids recomputing per-component constants.
    pub fn posteriors_batch<V: AsRef<[f64]>>(&self, data: &[V]) -> Result<Vec<Vec<f64>>> {
        let eval = Evaluator::new(self);
        data.iter()
            .map(|v| {
                let v = v.as_ref();
                self.check_dim(v)?;
                let mut out = vec![0.0; self.k()];
                eval.posteriors(v, &mut out);
                Ok(out)
            })
            .collect()
    }

    pub fn avg_log_likelihood(&self, data: &[Vec<f64>]) -> Result<f64> {
        let eval = Evaluator::new(self);
        let mut buf = vec![0.0; self.k()];
        let mut total = 0.0;
        for v in data {
            self.check_dim(v)?;
            total += eval.posteriors(v, &mut buf);
        }
        Ok(total / data.len() as f64)
    }

    fn payload(&self) -> Vec<f64> {
        let mut p = self.weights.clone();
        p.extend(self.means.iter().flatten());
        p.extend(self.variances.iter().flatten());
        p
    }

    pub fn model_id(&self) -> String {
        container::fingerprint("gmm", &self.payload())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let header = GmmHeader {
            kind: "gmm".into(),
            k: self.k(),
            d: self.dim(),
            variance_floor: self.variance_floor,
            weight_floor: WEIGHT_FLOOR,
            seed: self.seed,
            converged: self.converged,
            undersampled: self.undersampled,
            loglik_trace: self.loglik_trace.clone(),
        };
        container::write_model(path, &header, &self.payload())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (h, p): (GmmHeader, Vec<f64>) = container::read_model(path)?;
        let (k, d) = (h.k, h.d);
        if h.kind != "gmm" || k == 0 || d == 0 || p.len() != k + 2 * k * d {
            return Err(Error::format(path, "not a GMM or payload size mismatch"));
        }
        let rows = |s: &[f64]| s.chunks(d).map(<[f64]>::to_vec).collect::<Vec<_>>();
        Ok(Self {
            weights: p[..k].to_vec(),
            means: rows(&p[k..k + k * d]),
            variances: rows(&p[k + k * d..]),
            variance_floor: h.variance_floor,
            seed: h.seed,
            loglik_trace: h.loglik_trace,
            converged: h.converged,
            undersampled: h.undersampled,
        })
    }
}

/// Normalised soft assignments of `v` to the components of `model`.
pub fn gmm_posteriors(model: &GmmModel, v: &[f64]) -> Result<Vec<f64>> {
    model.posteriors(v)
}

fn m_step(data: &[Vec<f64>], resp: &[Vec<f64>], prev: &GmmModel) -> (Vec<f64>, Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let (k, d, n) = (prev.k(), prev.dim(), data.len());
    let mut mass = vec![0.0; k];
    let mut means = vec![vec![0.0; d]; k];
    for (v, r) in data.iter().zip(resp) {
        for c in 0..k {
            mass[c] += r[c];
            if r[c] != 0.0 {
                means[c].iter_mut().zip(v).for_each(|(m, x)| *m += r[c] * x);
            }
        }
    }
    let mut variances = vec![vec![0.0; d]; k];
    for c in 0..k {
        if mass[c] > f64::MIN_POSITIVE {
            means[c].iter_mut().for_each(|m| *m /= mass[c]);
        } else {
            means[c] = prev.means[c].clone();
        }
    }
    for (v, r) in data.iter().zip(resp) {
        for c in 0..k {
            if r[c] != 0.0 {
                for ((s, x), m) in variances[c].iter_mut().zip(v).zip(&means[c]) {
                    *s += r[c] * (x - m) * (x - m);
                }
            }
        }
    }
    for c in 0..k {
        for (j, s) in variances[c].iter_mut().enumerate() {
            *s = if mass[c] > f64::MIN_POSITIVE { *s / mass[c] } else { prev.variances[c][j] };
            *s = s.max(prev.variance_floor);
        }
    }
    let mut weights: Vec<f64> = mass.iter().map(|m| (m / n as f64).max(WEIGHT_FLOOR)).collect();
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    (weights, means, variances)
}

/// Fits a diagonal GMM by EM, initialised from k-means followed by one M-step
/// on the hard assignments.
///
/// Stops when the relative gain of the average log-likelihood drops below
/// `tol` or after `max_iter` updates. The returned parameters are the ones
/// whose likelihood is the last entry of `loglik_trace`.
pub fn gmm_fit(data: &[Vec<f64>], k: usize, seed: u64, max_iter: usize, tol: f64) -> Result<GmmModel> {
    let d = check_data(data)?;
    let n = data.len();
    if k == 0 || n < k {
        return Err(Error::Domain(format!("GMM needs 1 <= K <= {n} points, got K = {k}")));
    }
    if !(tol >= 0.0) {
        return Err(Error::Domain(format!("tolerance {tol} must be non-negative")));
    }
    let undersampled = n < 10 * k;
    if undersampled {
        log::warn!("GMM: {n} points for {k} components is fewer than 10 per component");
    }

    let mut mean_var = 0.0;
    for j in 0..d {
        let mu = data.iter().map(|v| v[j]).sum::<f64>() / n as f64;
        mean_var += data.iter().map(|v| (v[j] - mu) * (v[j] - mu)).sum::<f64>() / n as f64;
    }
    let variance_floor = (VARIANCE_FLOOR_RATIO * mean_var / d as f64).max(MIN_VARIANCE_FLOOR);

    let km = kmeans_fit(data, k, derive_seed(seed, "gmm-init"), KMEANS_INIT_ITERS)?;
    let hard: Vec<Vec<f64>> = data
        .iter()
        .map(|v| {
            let c = km.nearest(v).0;
            (0..k).map(|i| (i == c) as u8 as f64).collect()
        })
        .collect();
    let mut model = GmmModel {
        weights: vec![1.0 / k as f64; k],
        means: km.centers.clone(),
        variances: vec![vec![variance_floor; d]; k],
        variance_floor,
        seed,
        loglik_trace: Vec::new(),
        converged: false,
        undersampled,
    };
    (model.weights, model.means, model.variances) = m_step(data, &hard, &model);

    let mut resp = vec![vec![0.0; k]; n];
    for it in 0..=max_iter {
        let eval = Evaluator::new(&model);
        let mut total = 0.0;
        for (v, r) in data.iter().zip(resp.iter_mut()) {
            total += eval.posteriors(v, r);
        }
        let ll = total / n as f64;
        if !ll.is_finite() {
            return Err(Error::Numerical {
                reason: "GMM log-likelihood is not finite".into(),
                last_finite_loss: model.loglik_trace.last().copied(),
            });
        }
        if let Some(&prev) = model.loglik_trace.last() {
            if ll - prev <= tol * prev.abs() {
                model.loglik_trace.push(ll);
                model.converged = true;
                break;
            }
        }
        model.loglik_trace.push(ll);
        if it == max_iter {
            break;
        }
        (model.weights, model.means, model.variances) = m_step(data, &resp, &model);
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from_seed;
    use rand::Rng;
    use rand_distr::StandardNormal;

    /// Direct evaluation of the mixture density, independent of the fitter.
    fn oracle_avg_loglik(m: &GmmModel, data: &[Vec<f64>]) -> f64 {
        let mut total = 0.0;
        for v in data {
            let terms: Vec<f64> = (0..m.k())
                .map(|k| {
                    let mut lp = m.weights[k].ln();
                    for j in 0..v.len() {
                        let s = m.variances[k][j];
                        lp += -0.5 * (2.0 * PI * s).ln() - (v[j] - m.means[k][j]).powi(2) / (2.0 * s);
                    }
                    lp
                })
                .collect();
            let mx = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            total += mx + terms.iter().map(|t| (t - mx).exp()).sum::<f64>().ln();
        }
        total / data.len() as f64
    }

    fn sample_mixture(n: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = rng_from_seed(seed);
        (0..n)
            .map(|i| {
                let off = if i % 3 == 0 { 20.0 } else { -20.0 };
                (0..2).map(|j| off * (j as f64 + 1.0) + rng.sample::<f64, _>(StandardNormal) * (1.0 + j as f64)).collect()
            })
            .collect()
    }

    #[test]
    fn single_component_is_closed_form() {
        let data = sample_mixture(300, 1);
        let m = gmm_fit(&data, 1, 0, 100, 1e-5).unwrap();
        assert_eq!(m.weights, vec![1.0]);
        for j in 0..2 {
            let mu = data.iter().map(|v| v[j]).sum::<f64>() / 300.0;
            let var = data.iter().map(|v| (v[j] - mu).powi(2)).sum::<f64>() / 300.0;
            assert!((m.means[0][j] - mu).abs() < 1e-10);
            assert!((m.variances[0][j] - var).abs() < 1e-10);
        }
        assert_eq!(m.posteriors(&[1e6, -1e6]).unwrap(), vec![1.0]);
    }

    #[test]
    fn recovers_two_separated_components() {
        let data = sample_mixture(3000, 2);
        let m = gmm_fit(&data, 2, 5, 100, 1e-8).unwrap();
        let truth = [[20.0, 40.0], [-20.0, -40.0]];
        let counts = [1000.0, 2000.0];
        for (t, n) in truth.iter().zip(counts) {
            let c = (0..2)
                .min_by(|&a, &b| (m.means[a][0] - t[0]).abs().total_cmp(&(m.means[b][0] - t[0]).abs()))
                .unwrap();
            for j in 0..2 {
                let se = (1.0 + j as f64) / f64::sqrt(n);
                assert!((m.means[c][j] - t[j]).abs() < 3.0 * se, "dim {j}: {} vs {}", m.means[c][j], t[j]);
            }
        }
        assert!((m.weights.iter().sum::<f64>() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn trace_matches_oracle_and_is_monotone() {
        let mut rng = rng_from_seed(3);
        let data: Vec<Vec<f64>> = (0..600).map(|_| (0..3).map(|_| rng.random::<f64>()).collect()).collect();
        let m = gmm_fit(&data, 4, 11, 40, 0.0).unwrap();
        assert!(m.loglik_trace.windows(2).all(|w| w[1] >= w[0] - 1e-9));
        let last = *m.loglik_trace.last().unwrap();
        assert!((oracle_avg_loglik(&m, &data) - last).abs() < 1e-9);
        assert_eq!(gmm_fit(&data, 4, 11, 40, 0.0).unwrap(), m);
    }

    #[test]
    fn posteriors_match_density_ratios() {
        let data = sample_mixture(400, 4);
        let m = gmm_fit(&data, 3, 1, 50, 1e-6).unwrap();
        let mut rng = rng_from_seed(9);
        for _ in 0..30 {
            let v: Vec<f64> = (0..2).map(|_| rng.random_range(-30.0..30.0)).collect();
            let dens: Vec<f64> = (0..3)
                .map(|k| {
                    let mut p = m.weights[k];
                    for j in 0..2 {
                        let s = m.variances[k][j];
                        p *= (-(v[j] - m.means[k][j]).powi(2) / (2.0 * s)).exp() / (2.0 * PI * s).sqrt();
                    }
                    p
                })
                .collect();
            let total: f64 = dens.iter().sum();
            if total < 1e-250 {
                continue;
            }
            let g = gmm_posteriors(&m, &v).unwrap();
            for k in 0..3 {
                assert!((g[k] - dens[k] / total).abs() < 1e-9);
            }
        }
        assert!(gmm_posteriors(&m, &[1.0]).is_err());
    }

    #[test]
    fn posteriors_survive_extreme_inputs() {
        let data = sample_mixture(200, 5);
        let m = gmm_fit(&data, 3, 2, 30, 1e-6).unwrap();
        let mut rng = rng_from_seed(10);
        for i in 0..10_000 {
            let scale = 10f64.powi(i % 7);
            let v: Vec<f64> = (0..2).map(|_| rng.random_range(-1.0..1.0) * scale).collect();
            let g = m.posteriors(&v).unwrap();
            assert!(g.iter().all(|x| x.is_finite() && *x >= 0.0));
            assert!((g.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn duplicate_points_floor_variance() {
        let mut data = vec![vec![0.0, 0.0]; 50];
        data.extend(vec![vec![5.0, 5.0]; 50]);
        data.push(vec![1.0, 1.0]);
        let m = gmm_fit(&data, 2, 0, 20, 1e-6).unwrap();
        assert!(m.variances.iter().flatten().all(|&s| s >= m.variance_floor && s > 0.0));
        assert!(m.loglik_trace.iter().all(|l| l.is_finite()));
        let few = [vec![0.0, 0.0], vec![5.0, 5.0], vec![0.0, 0.0], vec![1.0, 1.0]];
        assert!(gmm_fit(&few, 2, 0, 20, 1e-6).unwrap().undersampled);
        assert!(gmm_fit(&vec![vec![1.0, 1.0]; 30], 2, 0, 20, 1e-6).is_err());
    }

    #[test]
    fn model_file_round_trip() {
        let data = sample_mixture(100, 6);
        let m = gmm_fit(&data, 2, 3, 10, 1e-6).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.model");
        m.save(&p).unwrap();
        let back = GmmModel::load(&p).unwrap();
        assert_eq!(back, m);
        assert!((back.weights.iter().sum::<f64>() - 1.0).abs() <= 1e-10);
    }
}
