//! Brain encoder: input projection, residual GELU block, layer norm.
//!
//! ```text
//! z = x W1 + b1
//! u = z + dropout(GELU(z) W2 + b2)
//! h = LayerNorm(u) ⊙ gain + bias          (optionally L2-normalized)
//! ```
//!
//! The backward pass is written out by hand. LayerNorm gradient, with
//! `x̂ = (u - mean) / sqrt(var + eps)` and `g = ∂L/∂x̂`:
//!
//! ```text
//! ∂L/∂u = (g - mean(g) - x̂ ⊙ mean(g ⊙ x̂)) / sqrt(var + eps)
//! ```
//!
//! and for the row normalization `h = y / |y|`:
//!
//! ```text
//! ∂L/∂y = (∂L/∂h - h (h · ∂L/∂h)) / |y|
//! ```

use std::io::{Read, Write};

use crate::binio;
use crate::error::{contract, Result, UbpError};
use crate::loss::softplus_inverse;
use crate::numkernel::{Matrix, Real, Rng};

pub const DROPOUT_RATE: f64 = 0.3;
pub const LAYER_NORM_EPS: f64 = 1e-5;
/// Softplus of the temperature parameter at initialization, ≈ 1 / 0.07.
pub const INIT_TEMPERATURE: f64 = 14.28;

/// Nonlinearity of the residual branch. `Identity` exists so tests can
/// check gradients against a closed form on the linearized network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Gelu,
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EncoderConfig {
    pub dropout: f64,
    pub normalize_embeddings: bool,
    pub ln_eps: f64,
    pub activation: Activation,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            dropout: DROPOUT_RATE,
            normalize_embeddings: true,
            ln_eps: LAYER_NORM_EPS,
            activation: Activation::Gelu,
        }
    }
}

/// All learnable weights, plus the raw (pre-softplus) temperature.
///
/// Gradients and optimizer moments reuse this type.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams<T> {
    pub w1: Matrix<T>,
    pub b1: Vec<T>,
    pub w2: Matrix<T>,
    pub b2: Vec<T>,
    pub ln_gain: Vec<T>,
    pub ln_bias: Vec<T>,
    pub tau_raw: T,
}

/// One named parameter tensor as a flat slice.
pub struct ParamView<'a, T> {
    pub name: &'static str,
    pub values: &'a mut [T],
    /// Weight decay applies to weight matrices only.
    pub decays: bool,
}

impl<T: Real> EncoderParams<T> {
    pub fn zeros(input_dim: usize, proj_dim: usize) -> Self {
        Self {
            w1: Matrix::zeros(input_dim, proj_dim),
            b1: vec![T::zero(); proj_dim],
            w2: Matrix::zeros(proj_dim, proj_dim),
            b2: vec![T::zero(); proj_dim],
            ln_gain: vec![T::zero(); proj_dim],
            ln_bias: vec![T::zero(); proj_dim],
            tau_raw: T::zero(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w1.rows()
    }

    pub fn proj_dim(&self) -> usize {
        self.w1.cols()
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.input_dim(), self.proj_dim())
    }

    /// Parameters in declared field order.
    pub fn views_mut(&mut self) -> [ParamView<'_, T>; 7] {
        [
            ParamView { name: "w1", values: self.w1.as_mut_slice(), decays: true },
            ParamView { name: "b1", values: &mut self.b1, decays: false },
            ParamView { name: "w2", values: self.w2.as_mut_slice(), decays: true },
            ParamView { name: "b2", values: &mut self.b2, decays: false },
            ParamView { name: "ln_gain", values: &mut self.ln_gain, decays: false },
            ParamView { name: "ln_bias", values: &mut self.ln_bias, decays: false },
            ParamView { name: "tau_raw", values: std::slice::from_mut(&mut self.tau_raw), decays: false },
        ]
    }

    pub fn flat(&self) -> Vec<T> {
        let mut out = Vec::new();
        out.extend_from_slice(self.w1.as_slice());
        out.extend_from_slice(&self.b1);
        out.extend_from_slice(self.w2.as_slice());
        out.extend_from_slice(&self.b2);
        out.extend_from_slice(&self.ln_gain);
        out.extend_from_slice(&self.ln_bias);
        out.push(self.tau_raw);
        out
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.w1.shape() == other.w1.shape()
            && self.w2.shape() == other.w2.shape()
            && self.b1.len() == other.b1.len()
            && self.b2.len() == other.b2.len()
            && self.ln_gain.len() == other.ln_gain.len()
            && self.ln_bias.len() == other.ln_bias.len()
    }

    pub fn is_finite(&self) -> bool {
        self.flat().iter().all(|v| v.is_finite())
    }

    pub fn cast<U: Real>(&self) -> EncoderParams<U> {
        let conv = |v: &[T]| v.iter().map(|x| U::of(x.as_f64())).collect::<Vec<U>>();
        EncoderParams {
            w1: self.w1.cast(),
            b1: conv(&self.b1),
            w2: self.w2.cast(),
            b2: conv(&self.b2),
            ln_gain: conv(&self.ln_gain),
            ln_bias: conv(&self.ln_bias),
            tau_raw: U::of(self.tau_raw.as_f64()),
        }
    }
}

/// Uniform `±1/sqrt(fan_in)` weights, zero biases, identity layer norm and a
/// temperature with `softplus(tau_raw) = INIT_TEMPERATURE`.
pub fn init_params<T: Real>(input_dim: usize, proj_dim: usize, rng: &mut Rng) -> Result<EncoderParams<T>> {
    contract!(
        input_dim >= 1 && proj_dim >= 1,
        "encoder dimensions must be positive ({input_dim}, {proj_dim})"
    );
    let mut init = |rows: usize, cols: usize| {
        let bound = 1.0 / (rows as f64).sqrt();
        Matrix::from_fn(rows, cols, |_, _| T::of(rng.uniform(-bound, bound)))
    };
    let w1 = init(input_dim, proj_dim);
    let w2 = init(proj_dim, proj_dim);
    Ok(EncoderParams {
        w1,
        b1: vec![T::zero(); proj_dim],
        w2,
        b2: vec![T::zero(); proj_dim],
        ln_gain: vec![T::one(); proj_dim],
        ln_bias: vec![T::zero(); proj_dim],
        tau_raw: T::of(softplus_inverse(INIT_TEMPERATURE)),
    })
}

/// Activations saved by [`forward`] for [`backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    pub x: Matrix<T>,
    pub z: Matrix<T>,
    pub activated: Matrix<T>,
    /// Inverted-dropout multipliers (0 or 1/(1-p)); `None` when inactive.
    pub mask: Option<Matrix<T>>,
    /// Residual sum before layer norm.
    pub pre_norm: Matrix<T>,
    pub x_hat: Matrix<T>,
    pub inv_std: Vec<T>,
    /// Layer norm output before the optional row normalization.
    pub ln_out: Matrix<T>,
    /// Row norms of `ln_out`, present when embeddings are normalized.
    pub row_norms: Option<Vec<T>>,
    pub output: Matrix<T>,
}

fn gelu<T: Real>(x: T) -> T {
    let half = T::of(0.5);
    half * x * (T::one() + (x * T::of(std::f64::consts::FRAC_1_SQRT_2)).erf())
}

fn gelu_grad<T: Real>(x: T) -> T {
    let cdf = T::of(0.5) * (T::one() + (x * T::of(std::f64::consts::FRAC_1_SQRT_2)).erf());
    let pdf = (-(x * x) * T::of(0.5)).exp() * T::of(1.0 / (2.0 * std::f64::consts::PI).sqrt());
    cdf + x * pdf
}

impl Activation {
    fn apply<T: Real>(self, x: T) -> T {
        match self {
            Activation::Gelu => gelu(x),
            Activation::Identity => x,
        }
    }

    fn derivative<T: Real>(self, x: T) -> T {
        match self {
            Activation::Gelu => gelu_grad(x),
            Activation::Identity => T::one(),
        }
    }
}

pub fn forward<T: Real>(
    p: &EncoderParams<T>,
    x: &Matrix<T>,
    cfg: &EncoderConfig,
    train: bool,
    rng: &mut Rng,
) -> Result<(Matrix<T>, ForwardCache<T>)> {
    contract!(
        x.cols() == p.input_dim(),
        "encoder input has {} features, parameters expect {}",
        x.cols(),
        p.input_dim()
    );
    let (n, d) = (x.rows(), p.proj_dim());
    let mut z = x.matmul(&p.w1)?;
    z.add_row_vector(&p.b1)?;
    let activated = z.map(|v| cfg.activation.apply(v));
    let mut branch = activated.matmul(&p.w2)?;
    branch.add_row_vector(&p.b2)?;

    let mask = (train && cfg.dropout > 0.0).then(|| {
        let keep = 1.0 - cfg.dropout;
        let scale = T::of(1.0 / keep);
        Matrix::from_fn(n, d, |_, _| if rng.bernoulli(keep) { scale } else { T::zero() })
    });
    if let Some(m) = &mask {
        for (b, &k) in branch.as_mut_slice().iter_mut().zip(m.as_slice()) {
            *b = *b * k;
        }
    }
    let pre_norm = z.add(&branch)?;

    let eps = T::of(cfg.ln_eps);
    let dim = T::of(d as f64);
    let mut x_hat = Matrix::zeros(n, d);
    let mut inv_std = Vec::with_capacity(n);
    let mut ln_out = Matrix::zeros(n, d);
    for i in 0..n {
        let row = pre_norm.row(i);
        let mean = row.iter().copied().sum::<T>() / dim;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / dim;
        let istd = T::one() / (var + eps).sqrt();
        inv_std.push(istd);
        for j in 0..d {
            let xh = (row[j] - mean) * istd;
            x_hat.set(i, j, xh);
            ln_out.set(i, j, xh * p.ln_gain[j] + p.ln_bias[j]);
        }
    }

    let (output, row_norms) = if cfg.normalize_embeddings {
        let mut out = ln_out.clone();
        let mut norms = Vec::with_capacity(n);
        for i in 0..n {
            let row = out.row_mut(i);
            let norm = row.iter().map(|&v| v * v).sum::<T>().sqrt();
            if norm == T::zero() {
                return Err(UbpError::Degenerate(format!(
                    "encoder output row {i} is all zeros and cannot be normalized"
                )));
            }
            row.iter_mut().for_each(|v| *v = *v / norm);
            norms.push(norm);
        }
        (out, Some(norms))
    } else {
        (ln_out.clone(), None)
    };

    let cache = ForwardCache {
        x: x.clone(),
        z,
        activated,
        mask,
        pre_norm,
        x_hat,
        inv_std,
        ln_out,
        row_norms,
        output: output.clone(),
    };
    Ok((output, cache))
}

/// Inference-mode forward pass without the cache.
pub fn encode<T: Real>(p: &EncoderParams<T>, x: &Matrix<T>, cfg: &EncoderConfig) -> Result<Matrix<T>> {
    // eval mode draws nothing from the stream
    let mut unused = Rng::new(0);
    forward(p, x, cfg, false, &mut unused).map(|(h, _)| h)
}

/// Gradients of all parameters (temperature slot left at zero) and of the
/// input, given `grad_h = ∂L/∂h`.
pub fn backward<T: Real>(
    p: &EncoderParams<T>,
    cache: &ForwardCache<T>,
    cfg: &EncoderConfig,
    grad_h: &Matrix<T>,
) -> Result<(EncoderParams<T>, Matrix<T>)> {
    let (n, d) = cache.output.shape();
    contract!(
        grad_h.shape() == (n, d),
        "grad_h is {:?}, encoder output is {:?}",
        grad_h.shape(),
        (n, d)
    );
    contract!(
        cache.x.cols() == p.input_dim() && d == p.proj_dim(),
        "forward cache does not match parameter shapes"
    );
    contract!(
        cache.row_norms.is_some() == cfg.normalize_embeddings,
        "forward cache was produced with a different normalization setting"
    );

    let grad_ln = match &cache.row_norms {
        Some(norms) => {
            let mut g = Matrix::zeros(n, d);
            for i in 0..n {
                let h = cache.output.row(i);
                let gh = grad_h.row(i);
                let proj = h.iter().zip(gh).fold(T::zero(), |a, (&x, &y)| a + x * y);
                for j in 0..d {
                    g.set(i, j, (gh[j] - h[j] * proj) / norms[i]);
                }
            }
            g
        }
        None => grad_h.clone(),
    };

    let mut grads = p.zeros_like();
    let dim = T::of(d as f64);
    let mut grad_u = Matrix::zeros(n, d);
    for i in 0..n {
        let g = grad_ln.row(i);
        let xh = cache.x_hat.row(i);
        let mut dxhat = vec![T::zero(); d];
        for j in 0..d {
            grads.ln_gain[j] = grads.ln_gain[j] + g[j] * xh[j];
            grads.ln_bias[j] = grads.ln_bias[j] + g[j];
            dxhat[j] = g[j] * p.ln_gain[j];
        }
        let mean_d = dxhat.iter().copied().sum::<T>() / dim;
        let mean_dx = dxhat.iter().zip(xh).fold(T::zero(), |a, (&u, &v)| a + u * v) / dim;
        let row = grad_u.row_mut(i);
        for j in 0..d {
            row[j] = cache.inv_std[i] * (dxhat[j] - mean_d - xh[j] * mean_dx);
        }
    }

    let grad_branch = match &cache.mask {
        Some(m) => {
            let mut gb = grad_u.clone();
            for (v, &k) in gb.as_mut_slice().iter_mut().zip(m.as_slice()) {
                *v = *v * k;
            }
            gb
        }
        None => grad_u.clone(),
    };
    grads.w2 = cache.activated.t_matmul(&grad_branch)?;
    grads.b2 = grad_branch.sum_rows();
    let grad_act = grad_branch.matmul_t(&p.w2)?;

    let mut grad_z = grad_u;
    for ((gz, &ga), &z) in grad_z
        .as_mut_slice()
        .iter_mut()
        .zip(grad_act.as_slice())
        .zip(cache.z.as_slice())
    {
        *gz = *gz + ga * cfg.activation.derivative(z);
    }
    grads.w1 = cache.x.t_matmul(&grad_z)?;
    grads.b1 = grad_z.sum_rows();
    let grad_x = grad_z.matmul_t(&p.w1)?;
    Ok((grads, grad_x))
}

const PARAMS_MAGIC: &[u8; 4] = b"UBPC";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Writes dims then every tensor in field order as little-endian f32.
pub(crate) fn write_param_block(w: &mut impl Write, p: &EncoderParams<f32>) -> std::io::Result<()> {
    binio::write_u32(w, p.input_dim() as u32)?;
    binio::write_u32(w, p.proj_dim() as u32)?;
    binio::write_f32s(w, &p.flat())
}

pub(crate) fn read_param_block(r: &mut impl Read) -> Result<EncoderParams<f32>> {
    let input_dim = binio::read_u32(r, "checkpoint dims")? as usize;
    let proj_dim = binio::read_u32(r, "checkpoint dims")? as usize;
    if input_dim == 0 || proj_dim == 0 {
        return Err(UbpError::Format("checkpoint has a zero dimension".into()));
    }
    let mut p = EncoderParams::<f32>::zeros(input_dim, proj_dim);
    for view in p.views_mut() {
        let vals = binio::read_f32s(r, view.values.len(), view.name)?;
        view.values.copy_from_slice(&vals);
    }
    if !p.is_finite() {
        return Err(UbpError::Format("checkpoint contains non-finite weights".into()));
    }
    Ok(p)
}

pub(crate) fn write_header(w: &mut impl Write) -> std::io::Result<()> {
    w.write_all(PARAMS_MAGIC)?;
    binio::write_u32(w, CHECKPOINT_VERSION)
}

pub(crate) fn read_header(r: &mut impl Read) -> Result<()> {
    binio::read_magic(r, PARAMS_MAGIC, "checkpoint")?;
    let version = binio::read_u32(r, "checkpoint version")?;
    if version != CHECKPOINT_VERSION {
        return Err(UbpError::Format(format!(
            "checkpoint version {version} is not supported (expected {CHECKPOINT_VERSION})"
        )));
    }
    Ok(())
}
