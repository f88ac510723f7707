//! AdamW with decoupled weight decay.

use crate::encoder::EncoderParams;
use crate::error::{contract, Result};
use crate::numkernel::Real;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct AdamWState<T> {
    pub m: EncoderParams<T>,
    pub v: EncoderParams<T>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl<T: Real> AdamWState<T> {
    pub fn new(like: &EncoderParams<T>) -> Self {
        Self {
            m: like.zeros_like(),
            v: like.zeros_like(),
            step: 0,
            beta1: BETA1,
            beta2: BETA2,
            eps: EPSILON,
        }
    }
}

/// One update of every tensor in `p`. Decay applies only to tensors whose
/// view is marked `decays` (the two weight matrices).
///
/// ```text
/// m ← β1·m + (1-β1)·g        v ← β2·v + (1-β2)·g²
/// θ ← θ - lr·(m̂ / (√v̂ + ε) + wd·θ)
/// ```
pub fn adamw_step<T: Real>(
    p: &mut EncoderParams<T>,
    g: &EncoderParams<T>,
    st: &mut AdamWState<T>,
    lr: f64,
    wd: f64,
) -> Result<()> {
    contract!(
        p.same_shape(g) && p.same_shape(&st.m) && p.same_shape(&st.v),
        "optimizer state, gradients and parameters differ in shape"
    );
    contract!(lr >= 0.0 && wd >= 0.0, "learning rate and weight decay must be non-negative");
    st.step += 1;
    let t = st.step as i32;
    let bc1 = 1.0 - st.beta1.powi(t);
    let bc2 = 1.0 - st.beta2.powi(t);
    let (b1, b2, eps) = (st.beta1, st.beta2, st.eps);
    let grads = g.flat();
    let mut offset = 0;
    for ((pv, mv), vv) in p.views_mut().into_iter().zip(st.m.views_mut()).zip(st.v.views_mut()) {
        let n = pv.values.len();
        let gs = &grads[offset..offset + n];
        let decay = if pv.decays { wd } else { 0.0 };
        for i in 0..n {
            let gi = gs[i].as_f64();
            let m = b1 * mv.values[i].as_f64() + (1.0 - b1) * gi;
            let v = b2 * vv.values[i].as_f64() + (1.0 - b2) * gi * gi;
            mv.values[i] = T::of(m);
            vv.values[i] = T::of(v);
            let theta = pv.values[i].as_f64();
            let update = (m / bc1) / ((v / bc2).sqrt() + eps) + decay * theta;
            pv.values[i] = T::of(theta - lr * update);
        }
        offset += n;
    }
    Ok(())
}
