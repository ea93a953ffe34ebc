use nalgebra::DMatrix;

use super::projection::ProjectionModel;
use crate::container;
use crate::error::{Error, Result};
use crate::gmm::check_data;

/// Random projection followed by a learned rotation that reduces the
/// quantisation loss `Σ_i ‖b_i − v_i R‖²`, `b_i = sgn(v_i R)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ItqModel {
    pub projection: ProjectionModel,
    /// `B × B` orthogonal.
    pub rotation: DMatrix<f64>,
    pub data_mean: Vec<f64>,
    pub iterations_run: usize,
    /// Quantisation loss before the first update and after every iteration.
    pub objective_trace: Vec<f64>,
    /// Fitted on fewer points than code bits.
    pub undersampled: bool,
}

impl ItqModel {
    /// With no iterations the model is exactly the plain projection: no
    /// centring, identity rotation and the projection's embedding id.
    pub fn is_identity(&self) -> bool {
        self.iterations_run == 0
    }

    pub fn embedding_id(&self) -> String {
        if self.is_identity() {
            return self.projection.embedding_id();
        }
        let mut payload: Vec<f64> = self.rotation.iter().copied().collect();
        payload.extend(&self.data_mean);
        payload.push(self.projection.seed as f64);
        container::fingerprint(&format!("itq-{}x{}", self.projection.input_dim(), self.projection.bits()), &payload)
    }

    /// `(x − mean) · matrix · R`.
    pub fn rotated(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.projection.check_input(x)?;
        if self.is_identity() {
            return super::project(&self.projection, x);
        }
        let centered: Vec<f64> = x.iter().zip(&self.data_mean).map(|(a, m)| a - m).collect();
        let v = super::project(&self.projection, &centered)?;
        let row = DMatrix::from_row_slice(1, v.len(), &v) * &self.rotation;
        Ok(row.iter().copied().collect())
    }
}

/// `‖sgn(V R) − V R‖²_F` with `sgn(0) = −1`, matching the bit rule.
pub fn quantization_loss(v: &DMatrix<f64>, rotation: &DMatrix<f64>) -> f64 {
    sign_loss(&(v * rotation))
}

fn sign_loss(projected: &DMatrix<f64>) -> f64 {
    projected
        .iter()
        .map(|&x| {
            let b = if x > 0.0 { 1.0 } else { -1.0 };
            (b - x) * (b - x)
        })
        .sum()
}

fn signs(m: &DMatrix<f64>) -> DMatrix<f64> {
    m.map(|x| if x > 0.0 { 1.0 } else { -1.0 })
}

// singular values below this fraction of the largest count as zero
const RANK_TOL: f64 = 1e-10;

/// Rotation minimising `‖B − V R‖` for fixed codes `B`.
fn procrustes(v: &DMatrix<f64>, codes: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let svd = (v.transpose() * codes).svd(true, true);
    match (svd.u, svd.v_t) {
        (Some(u), Some(vt)) => Ok(u * vt),
        _ => Err(Error::numerical("SVD did not converge during rotation update")),
    }
}

fn push_loss(trace: &mut Vec<f64>, loss: f64) -> Result<()> {
    if !loss.is_finite() {
        return Err(Error::Numerical {
            reason: "quantisation loss is not finite".into(),
            last_finite_loss: trace.last().copied(),
        });
    }
    trace.push(loss);
    Ok(())
}

/// Alternating minimisation of the quantisation loss from `R = I`.
///
/// Returns the rotation and the loss at `R = I` followed by the loss after
/// each iteration.
pub fn itq_rotate(v: &DMatrix<f64>, iters: usize) -> Result<(DMatrix<f64>, Vec<f64>)> {
    if iters > 0 && v.nrows() < v.ncols() {
        itq_rotate_thin(v, iters)
    } else {
        itq_rotate_full(v, iters)
    }
}

fn itq_rotate_full(v: &DMatrix<f64>, iters: usize) -> Result<(DMatrix<f64>, Vec<f64>)> {
    let b = v.ncols();
    let mut rotation = DMatrix::<f64>::identity(b, b);
    let mut trace = vec![quantization_loss(v, &rotation)];
    for _ in 0..iters {
        rotation = procrustes(v, &signs(&(v * &rotation)))?;
        push_loss(&mut trace, quantization_loss(v, &rotation))?;
    }
    Ok((rotation, trace))
}

/// With fewer rows than bits, `V R` depends on `R` only through the row space
/// of `V = A Σ Gᵀ`. Writing `R`'s action there as `G P Qᵀ`, each update is the
/// SVD of the small matrix `Σ Aᵀ B = P S Qᵀ`, and `V R = A Σ P Qᵀ`. The last
/// iteration runs the full update so the returned rotation is square.
fn itq_rotate_thin(v: &DMatrix<f64>, iters: usize) -> Result<(DMatrix<f64>, Vec<f64>)> {
    let b = v.ncols();
    let svd = v.clone().svd(true, false);
    let u = svd.u.ok_or_else(|| Error::numerical("SVD of the projected data did not converge"))?;
    let s_max = svd.singular_values.max();
    let rank = svd.singular_values.iter().filter(|&&x| x > RANK_TOL * s_max).count();
    let mut trace = vec![sign_loss(v)];
    if rank == 0 {
        trace.resize(iters + 1, trace[0]);
        return Ok((DMatrix::identity(b, b), trace));
    }
    let mut scaled = u.columns(0, rank).into_owned();
    for (j, mut col) in scaled.column_iter_mut().enumerate() {
        col *= svd.singular_values[j];
    }

    let mut projected = v.clone();
    for _ in 1..iters {
        let small = (scaled.transpose() * signs(&projected)).svd(true, true);
        let (p, qt) = match (small.u, small.v_t) {
            (Some(p), Some(qt)) => (p, qt),
            _ => return Err(Error::numerical("SVD did not converge during rotation update")),
        };
        projected = &scaled * (p * qt);
        push_loss(&mut trace, sign_loss(&projected))?;
    }
    let rotation = procrustes(v, &signs(&projected))?;
    push_loss(&mut trace, quantization_loss(v, &rotation))?;
    Ok((rotation, trace))
}

/// Fits the rotation on centred, projected `data`. `iters == 0` returns the
/// plain projection model.
pub fn itq_fit(data: &[Vec<f64>], bits: usize, iters: usize, seed: u64) -> Result<ItqModel> {
    let dim = check_data(data)?;
    if data.iter().all(|v| v.iter().all(|&x| x == 0.0)) {
        return Err(Error::Domain("cannot fit a rotation to all-zero data".into()));
    }
    let projection = ProjectionModel::new(dim, bits, seed)?;
    let n = data.len();
    let undersampled = n < bits;
    if undersampled && iters > 0 {
        log::warn!("ITQ: {n} points for {bits} bits; the rotation is under-determined");
    }

    let data_mean: Vec<f64> = if iters == 0 {
        vec![0.0; dim]
    } else {
        (0..dim).map(|j| data.iter().map(|v| v[j]).sum::<f64>() / n as f64).collect()
    };
    let x = DMatrix::from_fn(n, dim, |i, j| data[i][j] - data_mean[j]);
    let v = x * &projection.matrix;
    let (rotation, objective_trace) = itq_rotate(&v, iters)?;
    Ok(ItqModel { projection, rotation, data_mean, iterations_run: iters, objective_trace, undersampled })
}
