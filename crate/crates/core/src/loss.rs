//! Temperature-scaled similarity matrix and the symmetric cross-entropy
//! (two-way InfoNCE) objective.
//!
//! With `s = softplus(tau_raw)` and `M = s · h_b h_vᵀ`, the loss averages
//! the cross-entropy of the true pair over rows (brain → image) and over
//! columns (image → brain). Its gradient with respect to `M` is
//!
//! ```text
//! ∂L/∂M = (P_row - I) / N + (P_col - I) / N
//! ```
//!
//! where `P_row` / `P_col` are the row-wise / column-wise softmaxes of `M`.

use crate::error::{contract, Result};
use crate::numkernel::{Matrix, Real};

/// `ln(1 + e^x)` without overflow.
pub fn softplus<T: Real>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// `x` such that `softplus(x) = y`, for `y > 0`.
pub fn softplus_inverse(y: f64) -> f64 {
    y + (-(-y).exp_m1()).ln()
}

#[derive(Debug, Clone)]
pub struct LossOutput<T> {
    pub value: T,
    pub grad_hb: Matrix<T>,
    /// Zero when the vision side is frozen.
    pub grad_hv: Matrix<T>,
    pub grad_tau_raw: T,
    /// `M[i][i]`, the temperature-scaled score of each true pair.
    pub diag_scores: Vec<T>,
}

pub fn similarity_matrix<T: Real>(h_b: &Matrix<T>, h_v: &Matrix<T>, tau_raw: T) -> Result<Matrix<T>> {
    contract!(
        h_b.cols() == h_v.cols(),
        "brain embeddings have dim {}, vision embeddings {}",
        h_b.cols(),
        h_v.cols()
    );
    Ok(h_b.matmul_t(h_v)?.scale(softplus(tau_raw)))
}

fn log_sum_exp<T: Real>(values: impl Iterator<Item = T> + Clone) -> T {
    let max = values.clone().fold(T::neg_infinity(), T::max);
    max + values.map(|v| (v - max).exp()).sum::<T>().ln()
}

pub fn sce_loss<T: Real>(m: &Matrix<T>) -> Result<T> {
    let n = m.rows();
    contract!(m.cols() == n, "similarity matrix must be square, got {:?}", m.shape());
    contract!(n >= 2, "contrastive loss needs at least 2 pairs, got {n}");
    let mut row_term = T::zero();
    let mut col_term = T::zero();
    for i in 0..n {
        row_term = row_term + log_sum_exp(m.row(i).iter().copied()) - m.get(i, i);
        col_term = col_term + log_sum_exp((0..n).map(|r| m.get(r, i))) - m.get(i, i);
    }
    let nf = T::of(n as f64);
    Ok(row_term / nf + col_term / nf)
}

/// `∂L/∂M` for the symmetric loss.
pub fn sce_grad_wrt_m<T: Real>(m: &Matrix<T>) -> Result<Matrix<T>> {
    let n = m.rows();
    contract!(m.cols() == n, "similarity matrix must be square, got {:?}", m.shape());
    contract!(n >= 2, "contrastive loss needs at least 2 pairs, got {n}");
    let inv_n = T::one() / T::of(n as f64);
    let mut grad = Matrix::zeros(n, n);
    for i in 0..n {
        let row = m.row(i);
        let lse = log_sum_exp(row.iter().copied());
        for j in 0..n {
            grad.set(i, j, (row[j] - lse).exp() * inv_n);
        }
    }
    for j in 0..n {
        let lse = log_sum_exp((0..n).map(|r| m.get(r, j)));
        for i in 0..n {
            grad.set(i, j, grad.get(i, j) + (m.get(i, j) - lse).exp() * inv_n);
        }
    }
    for i in 0..n {
        grad.set(i, i, grad.get(i, i) - T::of(2.0) * inv_n);
    }
    Ok(grad)
}

/// Loss, gradients and diagonal scores for one batch. `m` must be
/// `similarity_matrix(h_b, h_v, tau_raw)`.
pub fn sce_backward<T: Real>(
    m: &Matrix<T>,
    h_b: &Matrix<T>,
    h_v: &Matrix<T>,
    tau_raw: T,
    vision_frozen: bool,
) -> Result<LossOutput<T>> {
    contract!(
        h_b.shape() == h_v.shape() && m.shape() == (h_b.rows(), h_v.rows()),
        "inconsistent shapes: M {:?}, h_b {:?}, h_v {:?}",
        m.shape(),
        h_b.shape(),
        h_v.shape()
    );
    let value = sce_loss(m)?;
    let grad_m = sce_grad_wrt_m(m)?;
    let scale = softplus(tau_raw);
    let grad_hb = grad_m.matmul(h_v)?.scale(scale);
    let grad_hv = if vision_frozen {
        Matrix::zeros(h_v.rows(), h_v.cols())
    } else {
        grad_m.t_matmul(h_b)?.scale(scale)
    };
    // M = scale · G, so ∂L/∂scale = Σ ∂L/∂M ⊙ M / scale
    let d_scale = grad_m
        .as_slice()
        .iter()
        .zip(m.as_slice())
        .fold(T::zero(), |acc, (&g, &v)| acc + g * v)
        / scale;
    Ok(LossOutput {
        value,
        grad_hb,
        grad_hv,
        grad_tau_raw: d_scale * sigmoid(tau_raw),
        diag_scores: m.diagonal(),
    })
}
