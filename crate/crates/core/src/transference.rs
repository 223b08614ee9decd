//! Task-to-task transference.
//!
//! `z[i][j]` measures how much applying task `i`'s shared-encoder gradient
//! step changes task `j`'s loss on the common shared batch: positive means
//! task `i` helps task `j`. Two routes are provided: the exact loss-ratio
//! form (one re-evaluation per ordered pair) and the cheap first-order form
//! `z[i][j] = <g_j, g_i> / loss_j` computed from exchanged gradients. The
//! exact form doubles as the test oracle for the approximation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, DenseMatrix};
use crate::nn::ClientModel;

/// Loss at or below this is treated as a converged/degenerate task.
pub const DEGENERATE_LOSS_EPS: f64 = 1e-12;

/// Ordered-pair transference values for one epoch. Row `i` is the source
/// task, column `j` the affected task.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TransferenceMatrix {
    pub n: usize,
    pub z: DenseMatrix,
    pub epoch: u64,
}

impl TransferenceMatrix {
    pub fn new(z: DenseMatrix, epoch: u64) -> Result<Self> {
        if z.rows() != z.cols() {
            return Err(Error::Dimension("transference matrix must be square".into()));
        }
        if !z.is_finite() {
            return Err(Error::Numerical("transference matrix has non-finite entries".into()));
        }
        Ok(Self { n: z.rows(), z, epoch })
    }

    /// Entrywise positive rescaling (`transference_scale` in the config).
    pub fn scaled(&self, c: f64) -> Self {
        let mut z = self.z.clone();
        z.scale(c);
        Self { n: self.n, z, epoch: self.epoch }
    }
}

fn check_losses(losses: &[f64]) -> Result<()> {
    for (task, &loss) in losses.iter().enumerate() {
        if !(loss > DEGENERATE_LOSS_EPS) {
            return Err(Error::DegenerateLoss { task, loss });
        }
    }
    Ok(())
}

/// First-order transference from exchanged shared-encoder gradients
/// (`z[i][j] = <g_j, g_i> / loss_j`).
///
/// Errors on any non-positive loss; the trainer uses
/// [`approx_transference_lenient`] instead, which neutralizes such tasks.
pub fn approx_transference(
    grads: &[Vec<f64>],
    losses: &[f64],
    epoch: u64,
) -> Result<TransferenceMatrix> {
    check_grad_shapes(grads, losses)?;
    check_losses(losses)?;
    Ok(inner_product_matrix(grads, losses, epoch))
}

/// Same as [`approx_transference`] but a task with degenerate loss gets its
/// row and column zeroed (a fully converged task is treated as neutral)
/// instead of failing the epoch.
pub fn approx_transference_lenient(
    grads: &[Vec<f64>],
    losses: &[f64],
    epoch: u64,
) -> Result<TransferenceMatrix> {
    check_grad_shapes(grads, losses)?;
    let mut m = inner_product_matrix(grads, losses, epoch);
    for (t, &loss) in losses.iter().enumerate() {
        if !(loss > DEGENERATE_LOSS_EPS) {
            for k in 0..m.n {
                m.z.set(t, k, 0.0);
                m.z.set(k, t, 0.0);
            }
        }
    }
    Ok(m)
}

fn check_grad_shapes(grads: &[Vec<f64>], losses: &[f64]) -> Result<()> {
    if grads.len() != losses.len() {
        return Err(Error::Dimension(format!(
            "{} gradients vs {} losses",
            grads.len(),
            losses.len()
        )));
    }
    let len = grads.first().map_or(0, Vec::len);
    if grads.iter().any(|g| g.len() != len) {
        return Err(Error::Dimension(
            "shared-encoder gradients differ in length; encoder architectures must match".into(),
        ));
    }
    Ok(())
}

fn inner_product_matrix(grads: &[Vec<f64>], losses: &[f64], epoch: u64) -> TransferenceMatrix {
    let n = grads.len();
    let mut z = DenseMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let denom = if losses[j] > DEGENERATE_LOSS_EPS { losses[j] } else { 1.0 };
            z.set(i, j, dot(&grads[j], &grads[i]) / denom);
        }
    }
    TransferenceMatrix { n, z, epoch }
}

/// Exact transference by re-evaluation.
///
/// For each ordered pair `(i, j)`: take a plain-SGD step of task `i`'s
/// shared gradient (evaluated at client `j`'s encoder with task `i`'s head)
/// on a copy of client `j`'s encoder, re-evaluate task `j`'s loss on the
/// shared batch, and return `1 - loss_after / loss_before`. Client states
/// are never modified.
pub fn exact_transference(
    models: &[ClientModel],
    shared_x: &DenseMatrix,
    task_labels: &[Vec<u8>],
    lr: f64,
    epoch: u64,
) -> Result<TransferenceMatrix> {
    let n = models.len();
    if task_labels.len() != n {
        return Err(Error::Dimension(format!(
            "{n} models vs {} label sets",
            task_labels.len()
        )));
    }
    let mut base_loss = vec![0.0; n];
    for j in 0..n {
        base_loss[j] = models[j].loss(shared_x, &task_labels[j])?;
    }
    check_losses(&base_loss)?;

    let mut z = DenseMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            // gradient of task i's loss at client j's encoder
            let probe = ClientModel::new(models[j].encoder.clone(), models[i].head.clone())?;
            let (_, grad) = probe.encoder_gradient(shared_x, &task_labels[i])?;
            let mut stepped = models[j].encoder.flatten();
            for (p, g) in stepped.iter_mut().zip(&grad) {
                *p -= lr * g;
            }
            let mut enc = models[j].encoder.clone();
            enc.unflatten(&stepped)?;
            let after = ClientModel::new(enc, models[j].head.clone())?;
            let loss_after = after.loss(shared_x, &task_labels[j])?;
            z.set(i, j, 1.0 - loss_after / base_loss[j]);
        }
    }
    TransferenceMatrix::new(z, epoch)
}
