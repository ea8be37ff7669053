//! Elementwise and row-wise kernels with hand-written backward passes.
//!
//! Every forward op returns whatever the matching `*_backward` needs; the
//! backward functions accumulate parameter gradients into the leaves and
//! return the gradient with respect to the op's input.

use rand::Rng;

use super::tensor::{gemm_into, matmul, ParamLeaf, Tensor, Trans};
use crate::error::{Error, Result};
use crate::real::Real;

/// Layer-norm epsilon (biased variance).
pub const LN_EPS: f64 = 1e-5;

/// `y = x W^T + b` with `W: (out, in)` and `b: (1, out)`.
pub fn linear<T: Real>(x: &Tensor<T>, w: &ParamLeaf<T>, b: &ParamLeaf<T>) -> Result<Tensor<T>> {
    let (out_dim, in_dim) = w.shape();
    if x.cols() != in_dim {
        return Err(Error::Shape {
            op: "linear",
            left: x.shape(),
            right: w.shape(),
        });
    }
    if b.shape() != (1, out_dim) {
        return Err(Error::Shape {
            op: "linear bias",
            left: w.shape(),
            right: b.shape(),
        });
    }
    let mut y = Tensor::zeros(x.rows(), out_dim);
    let bias = b.value.row(0);
    for r in 0..x.rows() {
        y.row_mut(r).copy_from_slice(bias);
    }
    gemm_into(T::one(), x, Trans::No, &w.value, Trans::Yes, T::one(), &mut y)?;
    Ok(y)
}

/// Accumulates `dW += dy^T x`, `db += colsum(dy)` and returns `dx = dy W`.
pub fn linear_backward<T: Real>(
    x: &Tensor<T>,
    w: &mut ParamLeaf<T>,
    b: &mut ParamLeaf<T>,
    dy: &Tensor<T>,
) -> Result<Tensor<T>> {
    gemm_into(T::one(), dy, Trans::Yes, x, Trans::No, T::one(), &mut w.grad)?;
    dy.add_col_sums_into(b.grad.row_mut(0));
    matmul(dy, Trans::No, &w.value, Trans::No)
}

pub struct LayerNormCache<T> {
    xhat: Tensor<T>,
    rstd: Vec<T>,
}

impl<T: Real> LayerNormCache<T> {
    /// Standardized input before gain and bias.
    pub fn normalized(&self) -> &Tensor<T> {
        &self.xhat
    }
}

/// Per-row `(x - mean) / sqrt(var + eps) * gain + bias`, biased variance.
pub fn layer_norm<T: Real>(
    x: &Tensor<T>,
    gain: &ParamLeaf<T>,
    bias: &ParamLeaf<T>,
    eps: f64,
) -> Result<(Tensor<T>, LayerNormCache<T>)> {
    let d = x.cols();
    if gain.shape() != (1, d) || bias.shape() != (1, d) {
        return Err(Error::Shape {
            op: "layer_norm",
            left: x.shape(),
            right: gain.shape(),
        });
    }
    let n = T::from_usize(d).unwrap();
    let eps = T::lit(eps);
    let mut xhat = Tensor::zeros(x.rows(), d);
    let mut y = Tensor::zeros(x.rows(), d);
    let mut rstd = Vec::with_capacity(x.rows());
    let (g, b) = (gain.value.row(0), bias.value.row(0));
    for r in 0..x.rows() {
        let row = x.row(r);
        let mean = row.iter().copied().sum::<T>() / n;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
        let rs = (var + eps).sqrt().recip();
        rstd.push(rs);
        let xh = xhat.row_mut(r);
        for (h, &v) in xh.iter_mut().zip(row) {
            *h = (v - mean) * rs;
        }
        let yr = y.row_mut(r);
        for i in 0..d {
            yr[i] = xhat.get(r, i) * g[i] + b[i];
        }
    }
    Ok((y, LayerNormCache { xhat, rstd }))
}

pub fn layer_norm_backward<T: Real>(
    cache: &LayerNormCache<T>,
    gain: &mut ParamLeaf<T>,
    bias: &mut ParamLeaf<T>,
    dy: &Tensor<T>,
) -> Tensor<T> {
    let d = dy.cols();
    let n = T::from_usize(d).unwrap();
    let mut dx = Tensor::zeros(dy.rows(), d);
    for r in 0..dy.rows() {
        let xh = cache.xhat.row(r);
        let dyr = dy.row(r);
        let g = gain.value.row(0);
        {
            let dg = gain.grad.row_mut(0);
            for i in 0..d {
                dg[i] += dyr[i] * xh[i];
            }
        }
        {
            let db = bias.grad.row_mut(0);
            for i in 0..d {
                db[i] += dyr[i];
            }
        }
        let mut mean_dxh = T::zero();
        let mut mean_dxh_xh = T::zero();
        for i in 0..d {
            let dxh = dyr[i] * g[i];
            mean_dxh += dxh;
            mean_dxh_xh += dxh * xh[i];
        }
        mean_dxh /= n;
        mean_dxh_xh /= n;
        let rs = cache.rstd[r];
        let out = dx.row_mut(r);
        for i in 0..d {
            out[i] = rs * (dyr[i] * g[i] - mean_dxh - xh[i] * mean_dxh_xh);
        }
    }
    dx
}

/// Standard normal CDF.
#[inline]
pub fn normal_cdf<T: Real>(x: T) -> T {
    T::lit(0.5) * (T::one() + (x * T::lit(std::f64::consts::FRAC_1_SQRT_2)).erf())
}

/// Exact (erf) GELU: `x * Phi(x)`.
#[inline]
pub fn gelu_scalar<T: Real>(x: T) -> T {
    x * normal_cdf(x)
}

/// `d/dx [x Phi(x)] = Phi(x) + x phi(x)`.
#[inline]
pub fn gelu_grad_scalar<T: Real>(x: T) -> T {
    let pdf = (-(x * x) * T::lit(0.5)).exp() * T::lit(0.398_942_280_401_432_7);
    normal_cdf(x) + x * pdf
}

pub fn gelu<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(gelu_scalar)
}

pub fn gelu_backward<T: Real>(x: &Tensor<T>, dy: &Tensor<T>) -> Tensor<T> {
    let mut dx = dy.clone();
    for (d, &v) in dx.data_mut().iter_mut().zip(x.data()) {
        *d *= gelu_grad_scalar(v);
    }
    dx
}

/// `log(1 + e^z)` in the overflow-free form `max(z, 0) + log1p(e^{-|z|})`.
#[inline]
pub fn softplus<T: Real>(z: T) -> T {
    z.max(T::zero()) + (-z.abs()).exp().ln_1p()
}

#[inline]
pub fn sigmoid<T: Real>(z: T) -> T {
    if z >= T::zero() {
        (T::one() + (-z).exp()).recip()
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

/// Per-entry multiplier drawn by [`dropout`]; `None` means identity.
#[derive(Clone, Debug)]
pub struct DropoutMask<T> {
    keep: Option<Vec<T>>,
}

impl<T: Real> DropoutMask<T> {
    pub fn identity() -> Self {
        Self { keep: None }
    }

    pub fn is_identity(&self) -> bool {
        self.keep.is_none()
    }

    pub fn apply(&self, x: &mut Tensor<T>) {
        if let Some(keep) = &self.keep {
            for (v, &k) in x.data_mut().iter_mut().zip(keep) {
                *v *= k;
            }
        }
    }
}

/// Inverted dropout: zero with probability `p`, scale survivors by `1/(1-p)`.
/// Identity in eval mode or when `p == 0`.
pub fn dropout<T: Real, R: Rng + ?Sized>(
    x: &mut Tensor<T>,
    p: f64,
    training: bool,
    rng: &mut R,
) -> DropoutMask<T> {
    debug_assert!((0.0..1.0).contains(&p));
    if !training || p <= 0.0 {
        return DropoutMask::identity();
    }
    let scale = T::lit(1.0 / (1.0 - p));
    let keep: Vec<T> = (0..x.len())
        .map(|_| if rng.gen::<f64>() < p { T::zero() } else { scale })
        .collect();
    let mask = DropoutMask { keep: Some(keep) };
    mask.apply(x);
    mask
}

/// Backward of dropout is the same elementwise multiply.
pub fn dropout_backward<T: Real>(mask: &DropoutMask<T>, dy: &mut Tensor<T>) {
    mask.apply(dy);
}
