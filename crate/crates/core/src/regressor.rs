//! Small feed-forward network regressing friction from a projected pooled
//! vector: sigmoid hidden layers, linear output, squared-error training.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::container;
use crate::error::{Error, Result};
use crate::seed::{derive_seed, rng_from_seed};

pub const DEFAULT_SIZES: [usize; 4] = [1024, 16, 8, 1];

#[derive(Debug, Clone, PartialEq)]
pub struct RegressionNet {
    sizes: Vec<usize>,
    /// One `out × in` matrix per layer.
    weights: Vec<DMatrix<f64>>,
    biases: Vec<DVector<f64>>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl RegressionNet {
    /// Weights and biases uniform in `±1/√fan_in`.
    pub fn new(sizes: &[usize], seed: u64) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) || sizes[sizes.len() - 1] != 1 {
            return Err(Error::Domain(format!("invalid layer sizes {sizes:?}; the last layer must have one unit")));
        }
        let mut rng = rng_from_seed(seed);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for w in sizes.windows(2) {
            let bound = 1.0 / (w[0] as f64).sqrt();
            weights.push(DMatrix::from_fn(w[1], w[0], |_, _| rng.random_range(-bound..bound)));
            biases.push(DVector::from_fn(w[1], |_, _| rng.random_range(-bound..bound)));
        }
        Ok(Self { sizes: sizes.to_vec(), weights, biases })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn param_count(&self) -> usize {
        self.sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    /// Parameters flattened layer by layer: weights row-major, then biases.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            for r in 0..w.nrows() {
                out.extend(w.row(r).iter());
            }
            out.extend(b.iter());
        }
        out
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::Shape(format!("{} parameters for a net with {}", params.len(), self.param_count())));
        }
        let mut it = params.iter().copied();
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            for r in 0..w.nrows() {
                for c in 0..w.ncols() {
                    w[(r, c)] = it.next().expect("length checked");
                }
            }
            b.iter_mut().for_each(|v| *v = it.next().expect("length checked"));
        }
        Ok(())
    }

    /// Activations of every layer for a batch of rows, input included.
    fn activations(&self, x: &DMatrix<f64>) -> Vec<DMatrix<f64>> {
        let last = self.weights.len() - 1;
        let mut acts = vec![x.clone()];
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = acts[l].clone() * w.transpose();
            for mut row in z.row_iter_mut() {
                row += b.transpose();
            }
            if l < last {
                z.apply(|v| *v = sigmoid(*v));
            }
            acts.push(z);
        }
        acts
    }

    pub fn predict_batch(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        if x.ncols() != self.input_dim() {
            return Err(Error::Shape(format!("net expects {} inputs, got {}", self.input_dim(), x.ncols())));
        }
        Ok(self.activations(x).pop().expect("at least one layer").iter().copied().collect())
    }

    /// Sum of squared errors on a batch and its gradient in `params()` order.
    fn sse_and_gradient(&self, x: &DMatrix<f64>, t: &[f64]) -> (f64, Vec<f64>) {
        let acts = self.activations(x);
        let out = &acts[acts.len() - 1];
        let mut delta = DMatrix::from_fn(out.nrows(), 1, |i, _| 2.0 * (out[(i, 0)] - t[i]));
        let sse = out.iter().zip(t).map(|(y, t)| (y - t) * (y - t)).sum();

        let mut grads: Vec<(DMatrix<f64>, DVector<f64>)> = Vec::with_capacity(self.weights.len());
        for l in (0..self.weights.len()).rev() {
            let gw = delta.transpose() * &acts[l];
            let gb = DVector::from_iterator(delta.ncols(), delta.column_iter().map(|c| c.sum()));
            grads.push((gw, gb));
            if l > 0 {
                let mut back = &delta * &self.weights[l];
                back.zip_apply(&acts[l], |d, a| *d *= a * (1.0 - a));
                delta = back;
            }
        }
        grads.reverse();
        let mut flat = Vec::with_capacity(self.param_count());
        for (gw, gb) in grads {
            for r in 0..gw.nrows() {
                flat.extend(gw.row(r).iter());
            }
            flat.extend(gb.iter());
        }
        (sse, flat)
    }

    /// Sum of squared errors over `(input, target)` pairs and its gradient,
    /// flattened like [`RegressionNet::params`].
    pub fn sse_gradient(&self, data: &[(Vec<f64>, f64)]) -> Result<(f64, Vec<f64>)> {
        let (x, t) = to_matrix(data, self.input_dim())?;
        Ok(self.sse_and_gradient(&x, &t))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let header = NetHeader {
            kind: "regressor".into(),
            sizes: self.sizes.clone(),
            hidden_activation: "sigmoid".into(),
            output_activation: "identity".into(),
        };
        container::write_model(path, &header, &self.params())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (h, payload): (NetHeader, Vec<f64>) = container::read_model(path)?;
        if h.kind != "regressor" || h.hidden_activation != "sigmoid" || h.output_activation != "identity" {
            return Err(Error::format(path, "not a sigmoid regression net"));
        }
        let mut net = Self::new(&h.sizes, 0).map_err(|e| Error::format(path, e.to_string()))?;
        net.set_params(&payload).map_err(|e| Error::format(path, e.to_string()))?;
        Ok(net)
    }
}

#[derive(Serialize, Deserialize)]
struct NetHeader {
    kind: String,
    sizes: Vec<usize>,
    hidden_activation: String,
    output_activation: String,
}

fn to_matrix(data: &[(Vec<f64>, f64)], dim: usize) -> Result<(DMatrix<f64>, Vec<f64>)> {
    if let Some((x, _)) = data.iter().find(|(x, _)| x.len() != dim) {
        return Err(Error::Shape(format!("net expects {dim} inputs, got {}", x.len())));
    }
    let x = DMatrix::from_fn(data.len(), dim, |i, j| data[i].0[j]);
    Ok((x, data.iter().map(|d| d.1).collect()))
}

pub fn net_forward(net: &RegressionNet, x: &[f64]) -> Result<f64> {
    Ok(net.predict_batch(&DMatrix::from_row_slice(1, x.len(), x))?[0])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub sizes: Vec<usize>,
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { sizes: DEFAULT_SIZES.to_vec(), epochs: 2000, lr: 1e-3, momentum: 0.9, batch_size: 16, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub net: RegressionNet,
    /// Training SSE after every epoch.
    pub train_sse: Vec<f64>,
    /// Holdout SSE after every epoch, when a holdout was given.
    pub validation_sse: Vec<f64>,
    /// Epoch (1-based, 0 for the initial parameters) whose parameters were kept.
    pub best_epoch: usize,
}

/// Mini-batch SGD with momentum on the squared error. The network is sized by
/// the input dimension, with hidden layers 16 and 8.
pub fn net_train(data: &[(Vec<f64>, f64)], epochs: usize, lr: f64, seed: u64) -> Result<RegressionNet> {
    let dim = data.first().map_or(0, |d| d.0.len());
    let cfg = TrainConfig { sizes: vec![dim, 16, 8, 1], epochs, lr, seed, ..Default::default() };
    Ok(net_train_with(data, None, &cfg)?.net)
}

/// Trains and keeps the parameters with the lowest holdout SSE, or the lowest
/// training SSE when `validation` is `None`.
pub fn net_train_with(
    data: &[(Vec<f64>, f64)],
    validation: Option<&[(Vec<f64>, f64)]>,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    if data.len() < 2 {
        return Err(Error::Domain("training needs at least two samples".into()));
    }
    if !(cfg.lr > 0.0 && cfg.lr.is_finite()) || !(0.0..1.0).contains(&cfg.momentum) || cfg.batch_size == 0 {
        return Err(Error::Config("learning rate, momentum or batch size out of range".into()));
    }
    if data.iter().any(|(x, t)| !t.is_finite() || x.iter().any(|v| !v.is_finite())) {
        return Err(Error::Domain("training data contains non-finite values".into()));
    }
    let mut net = RegressionNet::new(&cfg.sizes, derive_seed(cfg.seed, "regressor-init"))?;
    let (x_all, t_all) = to_matrix(data, net.input_dim())?;
    let holdout = validation.map(|v| to_matrix(v, net.input_dim())).transpose()?;
    let sse_of = |net: &RegressionNet, x: &DMatrix<f64>, t: &[f64]| -> f64 {
        let y = net.predict_batch(x).expect("shapes checked");
        y.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum()
    };
    let score = |net: &RegressionNet| match &holdout {
        Some((x, t)) => sse_of(net, x, t),
        None => sse_of(net, &x_all, &t_all),
    };

    let mut rng = rng_from_seed(derive_seed(cfg.seed, "regressor-batches"));
    let mut params = net.params();
    let mut velocity = vec![0.0; params.len()];
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut best = (score(&net), 0, params.clone());
    let mut train_sse = Vec::with_capacity(cfg.epochs);
    let mut validation_sse = Vec::new();

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let xb = x_all.select_rows(chunk);
            let tb: Vec<f64> = chunk.iter().map(|&i| t_all[i]).collect();
            let (_, grad) = net.sse_and_gradient(&xb, &tb);
            for ((p, v), g) in params.iter_mut().zip(velocity.iter_mut()).zip(&grad) {
                *v = cfg.momentum * *v - cfg.lr * g;
                *p += *v;
            }
            net.set_params(&params)?;
        }
        let sse = sse_of(&net, &x_all, &t_all);
        if !sse.is_finite() || params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Numerical {
                reason: format!("training diverged at epoch {epoch}"),
                last_finite_loss: train_sse.last().copied(),
            });
        }
        train_sse.push(sse);
        let s = match &holdout {
            Some((x, t)) => {
                let v = sse_of(&net, x, t);
                validation_sse.push(v);
                v
            }
            None => sse,
        };
        if s < best.0 {
            best = (s, epoch, params.clone());
        }
    }
    net.set_params(&best.2)?;
    Ok(TrainReport { net, train_sse, validation_sse, best_epoch: best.1 })
}
