//! Direct and transposed 2-D convolution with zero padding.
//!
//! Both kernels lower to a column matrix indexed by `(ci, dy, dx)` and a
//! dense product, so every output element is summed in ci-major, then
//! dy, then dx order. For the transposed kernel each output element
//! gathers `input[n, ci, (oy + ph - dy) / sh, (ox + pw - dx) / sw]` for the
//! terms where the division is exact and in bounds.

use serde::{Deserialize, Serialize};

use super::matmul::{matmul, matmul_nt_acc};
use super::{Real, Tensor};
use crate::error::{Error, Result};

/// Upper bound on column-matrix elements materialized at once.
const COLUMN_BUDGET: usize = 1 << 22;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub padding: (usize, usize),
    pub transposed: bool,
    pub bias: bool,
}

impl ConvSpec {
    pub fn conv(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Self {
        ConvSpec {
            in_channels,
            out_channels,
            kernel: (kernel, kernel),
            stride: (stride, stride),
            padding: (padding, padding),
            transposed: false,
            bias: false,
        }
    }

    pub fn transposed(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Self {
        ConvSpec {
            transposed: true,
            ..Self::conv(in_channels, out_channels, kernel, stride, padding)
        }
    }

    /// The spec of the adjoint operator: channels swapped, direction flipped.
    /// Both share one weight tensor.
    pub fn adjoint(&self) -> Self {
        ConvSpec {
            in_channels: self.out_channels,
            out_channels: self.in_channels,
            transposed: !self.transposed,
            ..*self
        }
    }

    /// Weight shape: `Cout×Cin×kh×kw` for direct, `Cin×Cout×kh×kw` for transposed.
    pub fn weight_shape(&self) -> [usize; 4] {
        let (kh, kw) = self.kernel;
        if self.transposed {
            [self.in_channels, self.out_channels, kh, kw]
        } else {
            [self.out_channels, self.in_channels, kh, kw]
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.bias {
            return Err(Error::Spec("bias terms are not supported".into()));
        }
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::Spec(format!(
                "channel counts must be positive: {self:?}"
            )));
        }
        if self.kernel.0 == 0 || self.kernel.1 == 0 || self.stride.0 == 0 || self.stride.1 == 0 {
            return Err(Error::Spec(format!(
                "kernel and stride must be positive: {self:?}"
            )));
        }
        Ok(())
    }

    /// Spatial output extent for an input of `(h, w)`.
    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let oh = self.out_extent(h, self.kernel.0, self.stride.0, self.padding.0);
        let ow = self.out_extent(w, self.kernel.1, self.stride.1, self.padding.1);
        match (oh, ow) {
            (Some(oh), Some(ow)) if oh >= 1 && ow >= 1 => Ok((oh, ow)),
            _ => Err(Error::Spec(format!(
                "input {h}×{w} gives a non-positive output extent for {self:?}"
            ))),
        }
    }

    fn out_extent(&self, n: usize, k: usize, s: usize, p: usize) -> Option<usize> {
        let (n, k, s, p) = (n as isize, k as isize, s as isize, p as isize);
        let out = if self.transposed {
            (n - 1) * s - 2 * p + k
        } else {
            let span = n + 2 * p - k;
            if span < 0 {
                return None;
            }
            span / s + 1
        };
        (out >= 1).then_some(out as usize)
    }
}

/// Source index per (output position, kernel offset) along one axis.
fn axis_table(
    out: usize,
    k: usize,
    s: usize,
    p: usize,
    input: usize,
    transposed: bool,
) -> Vec<Option<usize>> {
    let mut table = Vec::with_capacity(out * k);
    for o in 0..out {
        for d in 0..k {
            let src = if transposed {
                let t = o as isize + p as isize - d as isize;
                if t >= 0 && t % s as isize == 0 && ((t / s as isize) as usize) < input {
                    Some((t / s as isize) as usize)
                } else {
                    None
                }
            } else {
                let i = (o * s + d) as isize - p as isize;
                (i >= 0 && (i as usize) < input).then_some(i as usize)
            };
            table.push(src);
        }
    }
    table
}

struct Lowering {
    n: usize,
    cin: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    rows: Vec<Option<usize>>,
    cols: Vec<Option<usize>>,
}

impl Lowering {
    fn new(
        n: usize,
        cin: usize,
        (h, w): (usize, usize),
        (oh, ow): (usize, usize),
        spec: &ConvSpec,
    ) -> Self {
        let (kh, kw) = spec.kernel;
        Lowering {
            n,
            cin,
            h,
            w,
            kh,
            kw,
            oh,
            ow,
            rows: axis_table(oh, kh, spec.stride.0, spec.padding.0, h, spec.transposed),
            cols: axis_table(ow, kw, spec.stride.1, spec.padding.1, w, spec.transposed),
        }
    }

    fn inner(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    fn positions(&self) -> usize {
        self.oh * self.ow
    }

    fn batch_chunk(&self) -> usize {
        (COLUMN_BUDGET / (self.inner() * self.positions()).max(1)).clamp(1, self.n)
    }

    /// Column matrix `[(ci, dy, dx), (n, oy, ox)]` for samples `n0..n1`.
    fn columns<T: Real>(&self, input: &[T], n0: usize, n1: usize, col: &mut Vec<T>) {
        let q = (n1 - n0) * self.positions();
        col.clear();
        col.resize(self.inner() * q, T::zero());
        let plane = self.h * self.w;
        for ci in 0..self.cin {
            for dy in 0..self.kh {
                for dx in 0..self.kw {
                    let k = (ci * self.kh + dy) * self.kw + dx;
                    let dst = &mut col[k * q..(k + 1) * q];
                    for (nl, n) in (n0..n1).enumerate() {
                        let src =
                            &input[(n * self.cin + ci) * plane..(n * self.cin + ci + 1) * plane];
                        for oy in 0..self.oh {
                            let Some(iy) = self.rows[oy * self.kh + dy] else {
                                continue;
                            };
                            let base = (nl * self.oh + oy) * self.ow;
                            for ox in 0..self.ow {
                                if let Some(ix) = self.cols[ox * self.kw + dx] {
                                    dst[base + ox] = src[iy * self.w + ix];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

fn check_input<T: Real>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    spec: &ConvSpec,
    transposed: bool,
) -> Result<(usize, usize, usize, usize)> {
    spec.validate()?;
    if spec.transposed != transposed {
        return Err(Error::Spec(format!(
            "{} kernel called with transposed = {}",
            if transposed { "transposed" } else { "direct" },
            spec.transposed
        )));
    }
    let (n, c, h, w) = input.dims4()?;
    if c != spec.in_channels {
        return Err(Error::Shape(format!(
            "input has {c} channels, layer expects {}",
            spec.in_channels
        )));
    }
    if weight.shape() != spec.weight_shape() {
        return Err(Error::Shape(format!(
            "weight shape {:?}, layer expects {:?}",
            weight.shape(),
            spec.weight_shape()
        )));
    }
    Ok((n, c, h, w))
}

/// Multiplies `[Cout, K]` weights against columns and writes N×Cout×P.
fn lowered_forward<T: Real>(input: &[T], wmat: &[T], low: &Lowering, cout: usize) -> Vec<T> {
    let p = low.positions();
    let k = low.inner();
    let mut out = vec![T::zero(); low.n * cout * p];
    let mut col = Vec::new();
    let mut prod = Vec::new();
    let chunk = low.batch_chunk();
    let mut n0 = 0;
    while n0 < low.n {
        let n1 = (n0 + chunk).min(low.n);
        let q = (n1 - n0) * p;
        low.columns(input, n0, n1, &mut col);
        prod.clear();
        prod.resize(cout * q, T::zero());
        matmul(wmat, &col, &mut prod, cout, k, q);
        for co in 0..cout {
            for (nl, n) in (n0..n1).enumerate() {
                out[(n * cout + co) * p..(n * cout + co + 1) * p]
                    .copy_from_slice(&prod[co * q + nl * p..co * q + (nl + 1) * p]);
            }
        }
        n0 = n1;
    }
    out
}

/// Reduces `Σ_{n,pos} grad[n, co, pos] · columns[k, (n, pos)]` into `[Cout, K]`.
fn lowered_weight_grad<T: Real>(input: &[T], grad: &[T], low: &Lowering, cout: usize) -> Vec<T> {
    let p = low.positions();
    let k = low.inner();
    let mut out = vec![T::zero(); cout * k];
    let mut col = Vec::new();
    let mut gmat = Vec::new();
    let chunk = low.batch_chunk();
    let mut n0 = 0;
    while n0 < low.n {
        let n1 = (n0 + chunk).min(low.n);
        let q = (n1 - n0) * p;
        low.columns(input, n0, n1, &mut col);
        gmat.clear();
        gmat.resize(cout * q, T::zero());
        for co in 0..cout {
            for (nl, n) in (n0..n1).enumerate() {
                gmat[co * q + nl * p..co * q + (nl + 1) * p]
                    .copy_from_slice(&grad[(n * cout + co) * p..(n * cout + co + 1) * p]);
            }
        }
        matmul_nt_acc(&gmat, &col, &mut out, cout, k, q);
        n0 = n1;
    }
    out
}

/// Direct convolution: `out[n,co,y,x] = Σ_{ci,dy,dx} input[n,ci,y·sh+dy−ph, x·sw+dx−pw] · weight[co,ci,dy,dx]`.
pub fn conv2d<T: Real>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    spec: &ConvSpec,
) -> Result<Tensor<T>> {
    let (n, c, h, w) = check_input(input, weight, spec, false)?;
    let (oh, ow) = spec.output_hw(h, w)?;
    let low = Lowering::new(n, c, (h, w), (oh, ow), spec);
    let data = lowered_forward(&input.data(), &weight.data(), &low, spec.out_channels);
    Tensor::from_vec(&[n, spec.out_channels, oh, ow], data)
}

/// Transposed convolution, the adjoint of [`conv2d`] with the same spec.
///
/// Output extent is `(H − 1)·sh − 2·ph + kh`.
pub fn conv_transpose2d<T: Real>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    spec: &ConvSpec,
) -> Result<Tensor<T>> {
    let (_, _, h, w) = input.dims4()?;
    let hw = spec.output_hw(h, w)?;
    conv_transpose2d_sized(input, weight, spec, hw)
}

/// Transposed convolution with an explicit output extent.
///
/// Needed when the matching direct convolution dropped trailing rows or
/// columns (`(in + 2p − k)` not divisible by the stride). The extent must
/// map back to the input extent under the direct convolution.
pub fn conv_transpose2d_sized<T: Real>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    spec: &ConvSpec,
    (oh, ow): (usize, usize),
) -> Result<Tensor<T>> {
    let (n, c, h, w) = check_input(input, weight, spec, true)?;
    match spec.adjoint().output_hw(oh, ow) {
        Ok(back) if back == (h, w) => {}
        _ => {
            return Err(Error::Spec(format!(
                "output extent {oh}×{ow} is inconsistent with input {h}×{w} for {spec:?}"
            )))
        }
    }
    let low = Lowering::new(n, c, (h, w), (oh, ow), spec);
    let wmat = weight.permute(&[1, 0, 2, 3])?.into_vec();
    let data = lowered_forward(&input.data(), &wmat, &low, spec.out_channels);
    Tensor::from_vec(&[n, spec.out_channels, oh, ow], data)
}

/// `∂loss/∂weight` of [`conv2d`], shape `Cout×Cin×kh×kw`.
pub fn conv2d_weight_grad<T: Real>(
    input: &Tensor<T>,
    grad_out: &Tensor<T>,
    spec: &ConvSpec,
) -> Result<Tensor<T>> {
    let probe = Tensor::zeros(&spec.weight_shape())?;
    let (n, c, h, w) = check_input(input, &probe, spec, false)?;
    let (oh, ow) = spec.output_hw(h, w)?;
    if grad_out.shape() != [n, spec.out_channels, oh, ow] {
        return Err(Error::Shape(format!(
            "gradient shape {:?} does not match conv output",
            grad_out.shape()
        )));
    }
    let low = Lowering::new(n, c, (h, w), (oh, ow), spec);
    let data = lowered_weight_grad(&input.data(), &grad_out.data(), &low, spec.out_channels);
    Tensor::from_vec(&spec.weight_shape(), data)
}

/// `∂loss/∂weight` of [`conv_transpose2d`], shape `Cin×Cout×kh×kw`.
pub fn conv_transpose2d_weight_grad<T: Real>(
    input: &Tensor<T>,
    grad_out: &Tensor<T>,
    spec: &ConvSpec,
) -> Result<Tensor<T>> {
    let probe = Tensor::zeros(&spec.weight_shape())?;
    let (n, c, h, w) = check_input(input, &probe, spec, true)?;
    let (gn, gc, oh, ow) = grad_out.dims4()?;
    if gn != n || gc != spec.out_channels {
        return Err(Error::Shape(format!(
            "gradient shape {:?} does not match transposed conv output",
            grad_out.shape()
        )));
    }
    let low = Lowering::new(n, c, (h, w), (oh, ow), spec);
    let (kh, kw) = spec.kernel;
    // lowered as [Cout, (ci, dy, dx)]
    let g = lowered_weight_grad(&input.data(), &grad_out.data(), &low, spec.out_channels);
    let g = Tensor::from_vec(&[spec.out_channels, c, kh, kw], g)?;
    Ok(g.permute(&[1, 0, 2, 3])?.contiguous())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn discriminator_first_layer_shape() {
        let spec = ConvSpec::conv(3, 64, 4, 2, 1);
        let x = Tensor::<f32>::zeros(&[1, 3, 64, 64]).unwrap();
        let w = Tensor::zeros(&spec.weight_shape()).unwrap();
        assert_eq!(conv2d(&x, &w, &spec).unwrap().shape(), &[1, 64, 32, 32]);
    }

    #[test]
    fn identity_kernel() {
        let spec = ConvSpec::conv(1, 1, 1, 1, 0);
        let x = Tensor::from_vec(&[1, 1, 2, 3], vec![1.0, -2.0, 3.5, 4.0, 5.0, 6.0]).unwrap();
        let w = Tensor::from_vec(&[1, 1, 1, 1], vec![1.0]).unwrap();
        assert_eq!(conv2d(&x, &w, &spec).unwrap(), x);
    }

    #[test]
    fn sum_of_entries() {
        let spec = ConvSpec::conv(1, 1, 2, 1, 0);
        let x = Tensor::from_vec(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let w = Tensor::full(&[1, 1, 2, 2], 1.0).unwrap();
        let y = conv2d(&x, &w, &spec).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 1]);
        assert_eq!(y.data()[0], 10.0);
    }

    #[test]
    fn generator_first_layer_shape() {
        let spec = ConvSpec::transposed(1000, 512, 4, 1, 0);
        let x = Tensor::<f32>::zeros(&[1, 1000, 1, 1]).unwrap();
        let w = Tensor::zeros(&spec.weight_shape()).unwrap();
        assert_eq!(
            conv_transpose2d(&x, &w, &spec).unwrap().shape(),
            &[1, 512, 4, 4]
        );
    }

    #[test]
    fn single_scatter() {
        let spec = ConvSpec::transposed(1, 1, 2, 1, 0);
        let x = Tensor::from_vec(&[1, 1, 1, 1], vec![3.0]).unwrap();
        let w = Tensor::from_vec(&[1, 1, 2, 2], vec![1.0, -2.0, 0.5, 4.0]).unwrap();
        let y = conv_transpose2d(&x, &w, &spec).unwrap();
        assert_eq!(y.data().as_ref(), &[3.0, -6.0, 1.5, 12.0]);
    }

    #[test]
    fn spec_and_shape_errors() {
        let spec = ConvSpec::conv(3, 4, 5, 1, 0);
        let x = Tensor::<f64>::zeros(&[1, 3, 4, 4]).unwrap();
        let w = Tensor::zeros(&spec.weight_shape()).unwrap();
        assert!(matches!(conv2d(&x, &w, &spec), Err(Error::Spec(_))));
        let wrong = Tensor::<f64>::zeros(&[1, 2, 8, 8]).unwrap();
        assert!(matches!(conv2d(&wrong, &w, &spec), Err(Error::Shape(_))));
        let tspec = ConvSpec::transposed(3, 4, 5, 1, 0);
        assert!(matches!(conv2d(&x, &w, &tspec), Err(Error::Spec(_))));
        let biased = ConvSpec {
            bias: true,
            ..ConvSpec::conv(3, 4, 1, 1, 0)
        };
        assert!(biased.validate().is_err());
    }

    #[test]
    fn output_extent_formulas() {
        assert_eq!(
            ConvSpec::conv(1, 1, 4, 2, 1).output_hw(64, 64).unwrap(),
            (32, 32)
        );
        assert_eq!(
            ConvSpec::conv(1, 1, 4, 1, 0).output_hw(4, 4).unwrap(),
            (1, 1)
        );
        assert_eq!(
            ConvSpec::transposed(1, 1, 4, 2, 1)
                .output_hw(32, 32)
                .unwrap(),
            (64, 64)
        );
        assert_eq!(
            ConvSpec::transposed(1, 1, 4, 1, 0).output_hw(1, 1).unwrap(),
            (4, 4)
        );
        // (1-1)*2 - 2 + 1 < 1
        assert!(ConvSpec::transposed(1, 1, 1, 2, 1).output_hw(1, 1).is_err());
    }
}
