//! Primitive differentiable operations.
//!
//! Binary arithmetic broadcasts trailing-aligned (a size-1 axis stretches to
//! match, missing leading axes are treated as size 1). Structured ops with
//! nontrivial shape contracts return `Result`; plain arithmetic panics on
//! incompatible shapes since that is always a programming error.

use super::linalg::{self, ConvDims};
use super::{dim_report, BackCtx, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

// ---------------------------------------------------------------------------
// broadcasting machinery

pub(crate) fn broadcast_shapes(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let ndim = a.len().max(b.len());
    let mut out = vec![0; ndim];
    for i in 0..ndim {
        let da = if i < ndim - a.len() { 1 } else { a[i - (ndim - a.len())] };
        let db = if i < ndim - b.len() { 1 } else { b[i - (ndim - b.len())] };
        out[i] = if da == db {
            da
        } else if da == 1 {
            db
        } else if db == 1 {
            da
        } else {
            return None;
        };
    }
    Some(out)
}

/// Row-major strides into `shape` when read through `out_shape`; broadcast
/// axes get stride 0.
fn bcast_strides(shape: &[usize], out_shape: &[usize]) -> Vec<usize> {
    let ndim = out_shape.len();
    let offset = ndim - shape.len();
    let mut strides = vec![0usize; ndim];
    let mut acc = 1;
    for i in (0..shape.len()).rev() {
        strides[offset + i] = if shape[i] == 1 { 0 } else { acc };
        acc *= shape[i];
    }
    strides
}

/// Calls `f(out_off, a_off, b_off)` for every element of `out_shape` in
/// row-major order, with offsets into the broadcast operands.
fn for_each_bcast2(
    out_shape: &[usize],
    a_shape: &[usize],
    b_shape: &[usize],
    mut f: impl FnMut(usize, usize, usize),
) {
    let n: usize = out_shape.iter().product();
    if out_shape == a_shape && out_shape == b_shape {
        for i in 0..n {
            f(i, i, i);
        }
        return;
    }
    let sa = bcast_strides(a_shape, out_shape);
    let sb = bcast_strides(b_shape, out_shape);
    let ndim = out_shape.len();
    let mut idx = vec![0usize; ndim];
    let (mut ao, mut bo) = (0usize, 0usize);
    for i in 0..n {
        f(i, ao, bo);
        for d in (0..ndim).rev() {
            idx[d] += 1;
            ao += sa[d];
            bo += sb[d];
            if idx[d] < out_shape[d] {
                break;
            }
            idx[d] = 0;
            ao -= sa[d] * out_shape[d];
            bo -= sb[d] * out_shape[d];
        }
    }
}

/// Sums `grad` (shaped `grad_shape`) over the axes that were broadcast from
/// `target_shape`, producing a gradient of the target's size.
pub(crate) fn reduce_to_shape<T: Scalar>(
    grad: &[T],
    grad_shape: &[usize],
    target_shape: &[usize],
    out: &mut [T],
) {
    if grad_shape == target_shape {
        for (o, &g) in out.iter_mut().zip(grad) {
            *o += g;
        }
        return;
    }
    let st = bcast_strides(target_shape, grad_shape);
    let ndim = grad_shape.len();
    let mut idx = vec![0usize; ndim];
    let mut to = 0usize;
    let n: usize = grad_shape.iter().product();
    for i in 0..n {
        out[to] += grad[i];
        for d in (0..ndim).rev() {
            idx[d] += 1;
            to += st[d];
            if idx[d] < grad_shape[d] {
                break;
            }
            idx[d] = 0;
            to -= st[d] * grad_shape[d];
        }
    }
}

#[derive(Clone, Copy, Debug)]
enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl<T: Scalar> Tensor<T> {
    fn binary(&self, rhs: &Tensor<T>, op: BinOp) -> Tensor<T> {
        let out_shape = broadcast_shapes(self.shape(), rhs.shape()).unwrap_or_else(|| {
            panic!(
                "{}",
                dim_report(
                    &format!("{op:?}: shapes do not broadcast"),
                    &[("lhs", self.shape()), ("rhs", rhs.shape())],
                )
            )
        });
        let n: usize = out_shape.iter().product();
        let mut data = vec![T::zero(); n];
        let (a, b) = (self.data(), rhs.data());
        for_each_bcast2(&out_shape, self.shape(), rhs.shape(), |o, ao, bo| {
            data[o] = match op {
                BinOp::Add => a[ao] + b[bo],
                BinOp::Sub => a[ao] - b[bo],
                BinOp::Mul => a[ao] * b[bo],
                BinOp::Div => a[ao] / b[bo],
            };
        });
        let out_shape_cl = out_shape.clone();
        Tensor::from_op(
            data,
            out_shape,
            vec![self.clone(), rhs.clone()],
            move |ctx: &BackCtx<'_, T>| {
                let (pa, pb) = (&ctx.parents[0], &ctx.parents[1]);
                let (a, b) = (pa.data(), pb.data());
                let mut ga = vec![T::zero(); ctx.grad.len()];
                let mut gb = vec![T::zero(); ctx.grad.len()];
                for_each_bcast2(&out_shape_cl, pa.shape(), pb.shape(), |o, ao, bo| {
                    let g = ctx.grad[o];
                    match op {
                        BinOp::Add => {
                            ga[o] = g;
                            gb[o] = g;
                        }
                        BinOp::Sub => {
                            ga[o] = g;
                            gb[o] = -g;
                        }
                        BinOp::Mul => {
                            ga[o] = g * b[bo];
                            gb[o] = g * a[ao];
                        }
                        BinOp::Div => {
                            let inv = T::one() / b[bo];
                            ga[o] = g * inv;
                            gb[o] = -g * a[ao] * inv * inv;
                        }
                    }
                });
                if pa.requires_grad() {
                    pa.with_grad_mut(|gp| reduce_to_shape(&ga, &out_shape_cl, pa.shape(), gp));
                }
                if pb.requires_grad() {
                    pb.with_grad_mut(|gp| reduce_to_shape(&gb, &out_shape_cl, pb.shape(), gp));
                }
            },
        )
    }

    pub fn add(&self, rhs: &Tensor<T>) -> Tensor<T> {
        self.binary(rhs, BinOp::Add)
    }

    pub fn sub(&self, rhs: &Tensor<T>) -> Tensor<T> {
        self.binary(rhs, BinOp::Sub)
    }

    pub fn mul(&self, rhs: &Tensor<T>) -> Tensor<T> {
        self.binary(rhs, BinOp::Mul)
    }

    pub fn div(&self, rhs: &Tensor<T>) -> Tensor<T> {
        self.binary(rhs, BinOp::Div)
    }

    /// k*x + c, elementwise with scalar constants.
    pub fn affine(&self, k: T, c: T) -> Tensor<T> {
        let data: Vec<T> = self.data().iter().map(|&v| k * v + c).collect();
        Tensor::from_op(data, self.shape().to_vec(), vec![self.clone()], move |ctx| {
            ctx.parents[0].with_grad_mut(|gp| {
                for (g, &go) in gp.iter_mut().zip(ctx.grad) {
                    *g += k * go;
                }
            });
        })
    }

    pub fn neg(&self) -> Tensor<T> {
        self.affine(-T::one(), T::zero())
    }

    // -----------------------------------------------------------------------
    // unary elementwise

    pub fn relu(&self) -> Tensor<T> {
        let data: Vec<T> = self.data().iter().map(|&v| v.max(T::zero())).collect();
        Tensor::from_op(data, self.shape().to_vec(), vec![self.clone()], |ctx| {
            // Subgradient 0 at the kink.
            ctx.parents[0].with_grad_mut(|gp| {
                for i in 0..gp.len() {
                    if ctx.out[i] > T::zero() {
                        gp[i] += ctx.grad[i];
                    }
                }
            });
        })
    }

    pub fn leaky_relu(&self, slope: T) -> Tensor<T> {
        let data: Vec<T> = self
            .data()
            .iter()
            .map(|&v| if v > T::zero() { v } else { slope * v })
            .collect();
        Tensor::from_op(data, self.shape().to_vec(), vec![self.clone()], move |ctx| {
            let x = ctx.parents[0].data().to_vec();
            ctx.parents[0].with_grad_mut(|gp| {
                for i in 0..gp.len() {
                    let d = if x[i] > T::zero() { T::one() } else { slope };
                    gp[i] += d * ctx.grad[i];
                }
            });
        })
    }

    pub fn tanh(&self) -> Tensor<T> {
        let data: Vec<T> = self.data().iter().map(|&v| v.tanh()).collect();
        Tensor::from_op(data, self.shape().to_vec(), vec![self.clone()], |ctx| {
            ctx.parents[0].with_grad_mut(|gp| {
                for i in 0..gp.len() {
                    gp[i] += ctx.grad[i] * (T::one() - ctx.out[i] * ctx.out[i]);
                }
            });
        })
    }

    pub fn sigmoid(&self) -> Tensor<T> {
        let one = T::one();
        let data: Vec<T> = self.data().iter().map(|&v| one / (one + (-v).exp())).collect();
        Tensor::from_op(data, self.shape().to_vec(), vec![self.clone()], |ctx| {
            ctx.parents[0].with_grad_mut(|gp| {
                for i in 0..gp.len() {
                    gp[i] += ctx.grad[i] * ctx.out[i] * (T::one() - ctx.out[i]);
                }
            });
        })
    }

    pub fn exp(&self) -> Tensor<T> {
        let data: Vec<T> = self.data().iter().map(|&v| v.exp()).collect();
        Tensor::from_op(data, self.shape().to_vec(), vec![self.clone()], |ctx| {
            ctx.parents[0].with_grad_mut(|gp| {
                for i in 0..gp.len() {
                    gp[i] += ctx.grad[i] * ctx.out[i];
                }
            });
        })
    }

    pub fn ln(&self) -> Tensor<T> {
        let data: Vec<T> = self.data().iter().map(|&v| v.ln()).collect();
        Tensor::from_op(data, self.shape().to_vec(), vec![self.clone()], |ctx| {
            let x = ctx.parents[0].data().to_vec();
            ctx.parents[0].with_grad_mut(|gp| {
                for i in 0..gp.len() {
                    gp[i] += ctx.grad[i] / x[i];
                }
            });
        })
    }

    pub fn sqrt(&self) -> Tensor<T> {
        let data: Vec<T> = self.data().iter().map(|&v| v.sqrt()).collect();
        Tensor::from_op(data, self.shape().to_vec(), vec![self.clone()], |ctx| {
            let two = T::from_f64(2.0);
            ctx.parents[0].with_grad_mut(|gp| {
                for i in 0..gp.len() {
                    gp[i] += ctx.grad[i] / (two * ctx.out[i]);
                }
            });
        })
    }

    pub fn square(&self) -> Tensor<T> {
        let data: Vec<T> = self.data().iter().map(|&v| v * v).collect();
        Tensor::from_op(data, self.shape().to_vec(), vec![self.clone()], |ctx| {
            let two = T::from_f64(2.0);
            let x = ctx.parents[0].data().to_vec();
            ctx.parents[0].with_grad_mut(|gp| {
                for i in 0..gp.len() {
                    gp[i] += two * x[i] * ctx.grad[i];
                }
            });
        })
    }

    /// |x|, subgradient 0 at 0.
    pub fn abs(&self) -> Tensor<T> {
        let data: Vec<T> = self.data().iter().map(|&v| v.abs()).collect();
        Tensor::from_op(data, self.shape().to_vec(), vec![self.clone()], |ctx| {
            let x = ctx.parents[0].data().to_vec();
            ctx.parents[0].with_grad_mut(|gp| {
                for i in 0..gp.len() {
                    let s = if x[i] > T::zero() {
                        T::one()
                    } else if x[i] < T::zero() {
                        -T::one()
                    } else {
                        T::zero()
                    };
                    gp[i] += s * ctx.grad[i];
                }
            });
        })
    }

    // -----------------------------------------------------------------------
    // reductions and shape ops

    pub fn sum_all(&self) -> Tensor<T> {
        let s = linalg::sum(self.data());
        Tensor::from_op(vec![s], vec![1], vec![self.clone()], |ctx| {
            let g = ctx.grad[0];
            ctx.parents[0].with_grad_mut(|gp| {
                for v in gp.iter_mut() {
                    *v += g;
                }
            });
        })
    }

    pub fn mean_all(&self) -> Tensor<T> {
        let n = T::from_usize(self.numel());
        self.sum_all().affine(T::one() / n, T::zero())
    }

    /// Sums along one axis, keeping it as size 1.
    pub fn sum_axis(&self, axis: usize) -> Result<Tensor<T>> {
        let shape = self.shape();
        if axis >= shape.len() {
            return Err(Error::InvalidArgument(format!(
                "sum_axis: axis {axis} out of range for shape {shape:?}"
            )));
        }
        let outer: usize = shape[..axis].iter().product();
        let len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let mut out_shape = shape.to_vec();
        out_shape[axis] = 1;
        let mut data = vec![T::zero(); outer * inner];
        let x = self.data();
        for o in 0..outer {
            for a in 0..len {
                let src = &x[(o * len + a) * inner..(o * len + a + 1) * inner];
                let dst = &mut data[o * inner..(o + 1) * inner];
                for (d, &s) in dst.iter_mut().zip(src) {
                    *d += s;
                }
            }
        }
        Ok(Tensor::from_op(
            data,
            out_shape,
            vec![self.clone()],
            move |ctx| {
                ctx.parents[0].with_grad_mut(|gp| {
                    for o in 0..outer {
                        let g = &ctx.grad[o * inner..(o + 1) * inner];
                        for a in 0..len {
                            let dst = &mut gp[(o * len + a) * inner..(o * len + a + 1) * inner];
                            for (d, &s) in dst.iter_mut().zip(g) {
                                *d += s;
                            }
                        }
                    }
                });
            },
        ))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor<T>> {
        let n: usize = shape.iter().product();
        if n != self.numel() {
            return Err(Error::shape(
                "reshape: element count mismatch",
                &[("input", self.shape()), ("requested", shape)],
            ));
        }
        Ok(Tensor::from_op(
            self.data().to_vec(),
            shape.to_vec(),
            vec![self.clone()],
            |ctx| ctx.parents[0].accumulate_grad(ctx.grad),
        ))
    }

    /// Contiguous slice `[start, start+len)` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Tensor<T>> {
        let shape = self.shape();
        if axis >= shape.len() || start + len > shape[axis] || len == 0 {
            return Err(Error::InvalidArgument(format!(
                "narrow: axis {axis} range {start}..{} invalid for shape {shape:?}",
                start + len
            )));
        }
        let outer: usize = shape[..axis].iter().product();
        let alen = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let mut out_shape = shape.to_vec();
        out_shape[axis] = len;
        let mut data = vec![T::zero(); outer * len * inner];
        let x = self.data();
        for o in 0..outer {
            let src = &x[(o * alen + start) * inner..(o * alen + start + len) * inner];
            data[o * len * inner..(o + 1) * len * inner].copy_from_slice(src);
        }
        Ok(Tensor::from_op(
            data,
            out_shape,
            vec![self.clone()],
            move |ctx| {
                ctx.parents[0].with_grad_mut(|gp| {
                    for o in 0..outer {
                        let dst = &mut gp[(o * alen + start) * inner..(o * alen + start + len) * inner];
                        let src = &ctx.grad[o * len * inner..(o + 1) * len * inner];
                        for (d, &s) in dst.iter_mut().zip(src) {
                            *d += s;
                        }
                    }
                });
            },
        ))
    }

    /// Concatenates along `axis`; all other dims must match.
    pub fn concat(parts: &[&Tensor<T>], axis: usize) -> Result<Tensor<T>> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("concat: empty input list".into()))?;
        let ndim = first.shape().len();
        if axis >= ndim {
            return Err(Error::InvalidArgument(format!(
                "concat: axis {axis} out of range for {ndim}-d tensors"
            )));
        }
        let mut axis_total = 0;
        for p in parts {
            if p.shape().len() != ndim {
                return Err(Error::shape(
                    "concat: rank mismatch",
                    &[("first", first.shape()), ("other", p.shape())],
                ));
            }
            for d in 0..ndim {
                if d != axis && p.shape()[d] != first.shape()[d] {
                    return Err(Error::shape(
                        "concat: non-axis dims differ",
                        &[("first", first.shape()), ("other", p.shape())],
                    ));
                }
            }
            axis_total += p.shape()[axis];
        }
        let outer: usize = first.shape()[..axis].iter().product();
        let inner: usize = first.shape()[axis + 1..].iter().product();
        let mut out_shape = first.shape().to_vec();
        out_shape[axis] = axis_total;
        let mut data = vec![T::zero(); outer * axis_total * inner];
        let mut offset = 0;
        for p in parts {
            let alen = p.shape()[axis];
            let x = p.data();
            for o in 0..outer {
                let dst_start = (o * axis_total + offset) * inner;
                data[dst_start..dst_start + alen * inner]
                    .copy_from_slice(&x[o * alen * inner..(o + 1) * alen * inner]);
            }
            offset += alen;
        }
        let lens: Vec<usize> = parts.iter().map(|p| p.shape()[axis]).collect();
        Ok(Tensor::from_op(
            data,
            out_shape,
            parts.iter().map(|&p| p.clone()).collect(),
            move |ctx| {
                let mut offset = 0;
                for (pi, p) in ctx.parents.iter().enumerate() {
                    let alen = lens[pi];
                    if p.requires_grad() {
                        p.with_grad_mut(|gp| {
                            for o in 0..outer {
                                let src_start = (o * axis_total + offset) * inner;
                                let src = &ctx.grad[src_start..src_start + alen * inner];
                                let dst = &mut gp[o * alen * inner..(o + 1) * alen * inner];
                                for (d, &s) in dst.iter_mut().zip(src) {
                                    *d += s;
                                }
                            }
                        });
                    }
                    offset += alen;
                }
            },
        ))
    }

    // -----------------------------------------------------------------------
    // convolution

    /// 2-d convolution over [N,C,H,W] with weight [OC,C,KH,KW] (square
    /// kernel) and optional bias [OC]. Zero padding.
    pub fn conv2d(
        &self,
        weight: &Tensor<T>,
        bias: Option<&Tensor<T>>,
        stride: usize,
        padding: usize,
        dilation: usize,
    ) -> Result<Tensor<T>> {
        let xs = self.shape();
        let ws = weight.shape();
        let valid = xs.len() == 4
            && ws.len() == 4
            && xs[1] == ws[1]
            && ws[2] == ws[3]
            && xs[2] > 0
            && xs[3] > 0
            && stride > 0
            && dilation > 0
            && bias.is_none_or(|b| b.shape() == [ws[0]]);
        if !valid {
            return Err(Error::shape(
                "conv2d: incompatible shapes",
                &[("input", xs), ("weight", ws)],
            ));
        }
        let (n, c, k, oc) = (xs[0], xs[1], ws[2], ws[0]);
        let dims = ConvDims {
            in_h: xs[2],
            in_w: xs[3],
            kernel: k,
            stride,
            padding,
            dilation,
        };
        let span = dilation * (k - 1) + 1;
        if xs[2] + 2 * padding < span || xs[3] + 2 * padding < span {
            return Err(Error::shape(
                "conv2d: kernel span exceeds padded input",
                &[("input", xs), ("weight", ws)],
            ));
        }
        let (oh, ow) = (dims.out_h(), dims.out_w());
        let (ck2, ohw) = (c * k * k, oh * ow);

        let mut out = vec![T::zero(); n * oc * ohw];
        if let Some(b) = bias {
            let bd = b.data();
            for s in 0..n {
                for o in 0..oc {
                    let row = &mut out[(s * oc + o) * ohw..(s * oc + o + 1) * ohw];
                    row.fill(bd[o]);
                }
            }
        }
        let mut col = vec![T::zero(); ck2 * ohw];
        let x = self.data();
        let w = weight.data();
        let plane = dims.in_h * dims.in_w;
        for s in 0..n {
            linalg::im2col(&x[s * c * plane..(s + 1) * c * plane], c, dims, &mut col);
            linalg::matmul_acc(&mut out[s * oc * ohw..(s + 1) * oc * ohw], w, &col, oc, ck2, ohw);
        }

        let mut parents = vec![self.clone(), weight.clone()];
        if let Some(b) = bias {
            parents.push(b.clone());
        }
        Ok(Tensor::from_op(
            out,
            vec![n, oc, oh, ow],
            parents,
            move |ctx| {
                let px = &ctx.parents[0];
                let pw = &ctx.parents[1];
                let x = px.data();
                let w = pw.data();
                let plane = dims.in_h * dims.in_w;
                if pw.requires_grad() {
                    let mut col = vec![T::zero(); ck2 * ohw];
                    pw.with_grad_mut(|gw| {
                        for s in 0..n {
                            linalg::im2col(&x[s * c * plane..(s + 1) * c * plane], c, dims, &mut col);
                            let gy = &ctx.grad[s * oc * ohw..(s + 1) * oc * ohw];
                            linalg::matmul_nt_acc(gw, gy, &col, oc, ohw, ck2);
                        }
                    });
                }
                if px.requires_grad() {
                    let mut gcol = vec![T::zero(); ck2 * ohw];
                    px.with_grad_mut(|gx| {
                        for s in 0..n {
                            gcol.fill(T::zero());
                            let gy = &ctx.grad[s * oc * ohw..(s + 1) * oc * ohw];
                            linalg::matmul_tn_acc(&mut gcol, w, gy, ck2, oc, ohw);
                            linalg::col2im_acc(&gcol, c, dims, &mut gx[s * c * plane..(s + 1) * c * plane]);
                        }
                    });
                }
                if let Some(pb) = ctx.parents.get(2) {
                    pb.with_grad_mut(|gb| {
                        for s in 0..n {
                            for o in 0..oc {
                                let row = &ctx.grad[(s * oc + o) * ohw..(s * oc + o + 1) * ohw];
                                gb[o] += linalg::sum(row);
                            }
                        }
                    });
                }
            },
        ))
    }

    /// Transposed 2-d convolution (adjoint of `conv2d` with the same
    /// geometry): input [N,IC,H,W], weight [IC,OC,KH,KW], output spatial size
    /// (H-1)*stride - 2*padding + k.
    pub fn conv_transpose2d(
        &self,
        weight: &Tensor<T>,
        bias: Option<&Tensor<T>>,
        stride: usize,
        padding: usize,
    ) -> Result<Tensor<T>> {
        let xs = self.shape();
        let ws = weight.shape();
        let valid = xs.len() == 4
            && ws.len() == 4
            && xs[1] == ws[0]
            && ws[2] == ws[3]
            && xs[2] > 0
            && xs[3] > 0
            && stride > 0
            && bias.is_none_or(|b| b.shape() == [ws[1]]);
        if !valid {
            return Err(Error::shape(
                "conv_transpose2d: incompatible shapes",
                &[("input", xs), ("weight", ws)],
            ));
        }
        let (n, ic, oc, k) = (xs[0], xs[1], ws[1], ws[2]);
        let (h, w_in) = (xs[2], xs[3]);
        if (h - 1) * stride + k < 2 * padding + 1 || (w_in - 1) * stride + k < 2 * padding + 1 {
            return Err(Error::shape(
                "conv_transpose2d: output collapses to zero size",
                &[("input", xs), ("weight", ws)],
            ));
        }
        let oh = linalg::conv_transpose_out(h, k, stride, padding);
        let ow = linalg::conv_transpose_out(w_in, k, stride, padding);
        // Geometry of the forward convolution this op is the adjoint of.
        let dims = ConvDims {
            in_h: oh,
            in_w: ow,
            kernel: k,
            stride,
            padding,
            dilation: 1,
        };
        debug_assert_eq!(dims.out_h(), h);
        debug_assert_eq!(dims.out_w(), w_in);
        let (ock2, hw) = (oc * k * k, h * w_in);
        let oplane = oh * ow;

        let mut out = vec![T::zero(); n * oc * oplane];
        let mut gcol = vec![T::zero(); ock2 * hw];
        let x = self.data();
        let wd = weight.data();
        for s in 0..n {
            gcol.fill(T::zero());
            let xn = &x[s * ic * hw..(s + 1) * ic * hw];
            linalg::matmul_tn_acc(&mut gcol, wd, xn, ock2, ic, hw);
            linalg::col2im_acc(&gcol, oc, dims, &mut out[s * oc * oplane..(s + 1) * oc * oplane]);
        }
        if let Some(b) = bias {
            let bd = b.data();
            for s in 0..n {
                for o in 0..oc {
                    let row = &mut out[(s * oc + o) * oplane..(s * oc + o + 1) * oplane];
                    for v in row.iter_mut() {
                        *v += bd[o];
                    }
                }
            }
        }

        let mut parents = vec![self.clone(), weight.clone()];
        if let Some(b) = bias {
            parents.push(b.clone());
        }
        Ok(Tensor::from_op(
            out,
            vec![n, oc, oh, ow],
            parents,
            move |ctx| {
                let px = &ctx.parents[0];
                let pw = &ctx.parents[1];
                let x = px.data();
                let wd = pw.data();
                let mut col = vec![T::zero(); ock2 * hw];
                for s in 0..n {
                    let gy = &ctx.grad[s * oc * oplane..(s + 1) * oc * oplane];
                    if px.requires_grad() || pw.requires_grad() {
                        linalg::im2col(gy, oc, dims, &mut col);
                    }
                    if px.requires_grad() {
                        px.with_grad_mut(|gx| {
                            linalg::matmul_acc(
                                &mut gx[s * ic * hw..(s + 1) * ic * hw],
                                wd,
                                &col,
                                ic,
                                ock2,
                                hw,
                            );
                        });
                    }
                    if pw.requires_grad() {
                        let xn = &x[s * ic * hw..(s + 1) * ic * hw];
                        pw.with_grad_mut(|gw| {
                            linalg::matmul_nt_acc(gw, xn, &col, ic, hw, ock2);
                        });
                    }
                    if let Some(pb) = ctx.parents.get(2) {
                        pb.with_grad_mut(|gb| {
                            for o in 0..oc {
                                gb[o] += linalg::sum(&gy[o * oplane..(o + 1) * oplane]);
                            }
                        });
                    }
                }
            },
        ))
    }

    // -----------------------------------------------------------------------
    // resampling

    /// 2x2 mean pooling with stride 2 on [N,C,H,W]; trailing odd row/column
    /// is dropped.
    pub fn avg_pool2(&self) -> Result<Tensor<T>> {
        let s = self.shape();
        if s.len() != 4 || s[2] < 2 || s[3] < 2 {
            return Err(Error::shape("avg_pool2: need [N,C,H>=2,W>=2]", &[("input", s)]));
        }
        let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
        let (oh, ow) = (h / 2, w / 2);
        let quarter = T::from_f64(0.25);
        let x = self.data();
        let mut data = vec![T::zero(); n * c * oh * ow];
        for p in 0..n * c {
            let src = &x[p * h * w..(p + 1) * h * w];
            let dst = &mut data[p * oh * ow..(p + 1) * oh * ow];
            for oy in 0..oh {
                for ox in 0..ow {
                    let (iy, ix) = (2 * oy, 2 * ox);
                    dst[oy * ow + ox] = (src[iy * w + ix]
                        + src[iy * w + ix + 1]
                        + src[(iy + 1) * w + ix]
                        + src[(iy + 1) * w + ix + 1])
                        * quarter;
                }
            }
        }
        Ok(Tensor::from_op(
            data,
            vec![n, c, oh, ow],
            vec![self.clone()],
            move |ctx| {
                let quarter = T::from_f64(0.25);
                ctx.parents[0].with_grad_mut(|gx| {
                    for p in 0..n * c {
                        let g = &ctx.grad[p * oh * ow..(p + 1) * oh * ow];
                        let dst = &mut gx[p * h * w..(p + 1) * h * w];
                        for oy in 0..oh {
                            for ox in 0..ow {
                                let gv = g[oy * ow + ox] * quarter;
                                let (iy, ix) = (2 * oy, 2 * ox);
                                dst[iy * w + ix] += gv;
                                dst[iy * w + ix + 1] += gv;
                                dst[(iy + 1) * w + ix] += gv;
                                dst[(iy + 1) * w + ix + 1] += gv;
                            }
                        }
                    }
                });
            },
        ))
    }

    /// Nearest-neighbour upsampling by integer factors per axis.
    pub fn upsample_nearest(&self, fy: usize, fx: usize) -> Result<Tensor<T>> {
        let s = self.shape();
        if s.len() != 4 || fy == 0 || fx == 0 {
            return Err(Error::shape("upsample_nearest: need [N,C,H,W] input", &[("input", s)]));
        }
        let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
        let (oh, ow) = (h * fy, w * fx);
        let x = self.data();
        let mut data = vec![T::zero(); n * c * oh * ow];
        for p in 0..n * c {
            let src = &x[p * h * w..(p + 1) * h * w];
            let dst = &mut data[p * oh * ow..(p + 1) * oh * ow];
            for oy in 0..oh {
                let sr = &src[(oy / fy) * w..(oy / fy + 1) * w];
                let dr = &mut dst[oy * ow..(oy + 1) * ow];
                for ox in 0..ow {
                    dr[ox] = sr[ox / fx];
                }
            }
        }
        Ok(Tensor::from_op(
            data,
            vec![n, c, oh, ow],
            vec![self.clone()],
            move |ctx| {
                ctx.parents[0].with_grad_mut(|gx| {
                    for p in 0..n * c {
                        let g = &ctx.grad[p * oh * ow..(p + 1) * oh * ow];
                        let dst = &mut gx[p * h * w..(p + 1) * h * w];
                        for oy in 0..oh {
                            let dr = &mut dst[(oy / fy) * w..(oy / fy + 1) * w];
                            let gr = &g[oy * ow..(oy + 1) * ow];
                            for ox in 0..ow {
                                dr[ox / fx] += gr[ox];
                            }
                        }
                    }
                });
            },
        ))
    }

    /// Bilinear upsampling by an integer factor, half-pixel centers, edges
    /// clamped.
    pub fn upsample_bilinear(&self, factor: usize) -> Result<Tensor<T>> {
        let s = self.shape();
        if s.len() != 4 || factor == 0 {
            return Err(Error::shape("upsample_bilinear: need [N,C,H,W] input", &[("input", s)]));
        }
        let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
        let (oh, ow) = (h * factor, w * factor);
        let ytab = bilinear_taps::<T>(h, oh);
        let xtab = bilinear_taps::<T>(w, ow);
        let x = self.data();
        let mut data = vec![T::zero(); n * c * oh * ow];
        for p in 0..n * c {
            let src = &x[p * h * w..(p + 1) * h * w];
            let dst = &mut data[p * oh * ow..(p + 1) * oh * ow];
            for oy in 0..oh {
                let (y0, y1, wy1) = ytab[oy];
                let wy0 = T::one() - wy1;
                let r0 = &src[y0 * w..(y0 + 1) * w];
                let r1 = &src[y1 * w..(y1 + 1) * w];
                let dr = &mut dst[oy * ow..(oy + 1) * ow];
                for ox in 0..ow {
                    let (x0, x1, wx1) = xtab[ox];
                    let wx0 = T::one() - wx1;
                    dr[ox] = wy0 * (wx0 * r0[x0] + wx1 * r0[x1]) + wy1 * (wx0 * r1[x0] + wx1 * r1[x1]);
                }
            }
        }
        Ok(Tensor::from_op(
            data,
            vec![n, c, oh, ow],
            vec![self.clone()],
            move |ctx| {
                ctx.parents[0].with_grad_mut(|gx| {
                    for p in 0..n * c {
                        let g = &ctx.grad[p * oh * ow..(p + 1) * oh * ow];
                        let dst = &mut gx[p * h * w..(p + 1) * h * w];
                        for oy in 0..oh {
                            let (y0, y1, wy1) = ytab[oy];
                            let wy0 = T::one() - wy1;
                            for ox in 0..ow {
                                let (x0, x1, wx1) = xtab[ox];
                                let wx0 = T::one() - wx1;
                                let gv = g[oy * ow + ox];
                                dst[y0 * w + x0] += wy0 * wx0 * gv;
                                dst[y0 * w + x1] += wy0 * wx1 * gv;
                                dst[y1 * w + x0] += wy1 * wx0 * gv;
                                dst[y1 * w + x1] += wy1 * wx1 * gv;
                            }
                        }
                    }
                });
            },
        ))
    }
}

/// Per-output-index source taps (i0, i1, weight of i1) for 1-d bilinear
/// resampling from `n_in` to `n_out` with half-pixel alignment.
fn bilinear_taps<T: Scalar>(n_in: usize, n_out: usize) -> Vec<(usize, usize, T)> {
    let scale = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (n_in - 1) as f64);
            let i0 = src.floor() as usize;
            let i1 = (i0 + 1).min(n_in - 1);
            (i0, i1, T::from_f64(src - i0 as f64))
        })
        .collect()
}
