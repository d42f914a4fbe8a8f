//! Dense kernels behind convolution and matrix ops.
//!
//! All kernels accumulate into their output (`+=`) and run a fixed sequential
//! element order, so results are reproducible bit for bit.

use crate::scalar::Scalar;

/// c[m,n] += a[m,k] * b[k,n], all row-major.
pub fn matmul_acc<T: Scalar>(c: &mut [T], a: &[T], b: &[T], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        let arow = &a[i * k..(i + 1) * k];
        for (kk, &aik) in arow.iter().enumerate() {
            let brow = &b[kk * n..(kk + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += aik * bv;
            }
        }
    }
}

/// c[m,n] += a[m,k] * b[n,k]^T. Both inner dims contiguous: row dots.
pub fn matmul_nt_acc<T: Scalar>(c: &mut [T], a: &[T], b: &[T], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(c.len(), m * n);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            c[i * n + j] += dot(arow, brow);
        }
    }
}

/// c[m,n] += a[k,m]^T * b[k,n].
pub fn matmul_tn_acc<T: Scalar>(c: &mut [T], a: &[T], b: &[T], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    for kk in 0..k {
        let brow = &b[kk * n..(kk + 1) * n];
        for i in 0..m {
            let aki = a[kk * m + i];
            let crow = &mut c[i * n..(i + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += aki * bv;
            }
        }
    }
}

/// Dot product with eight independent accumulator lanes combined in a fixed
/// tree. Lane count is constant, so the result does not depend on alignment
/// or vector width.
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    const LANES: usize = 8;
    let mut acc = [T::zero(); LANES];
    let chunks = a.len() / LANES;
    for c in 0..chunks {
        let base = c * LANES;
        for l in 0..LANES {
            acc[l] += a[base + l] * b[base + l];
        }
    }
    let mut tail = T::zero();
    for i in chunks * LANES..a.len() {
        tail += a[i] * b[i];
    }
    let s01 = acc[0] + acc[1];
    let s23 = acc[2] + acc[3];
    let s45 = acc[4] + acc[5];
    let s67 = acc[6] + acc[7];
    ((s01 + s23) + (s45 + s67)) + tail
}

/// Fixed-order sequential sum.
pub fn sum<T: Scalar>(a: &[T]) -> T {
    let mut s = T::zero();
    for &v in a {
        s += v;
    }
    s
}

/// Spatial geometry of one convolution axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvDims {
    pub in_h: usize,
    pub in_w: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
}

impl ConvDims {
    pub fn out_h(&self) -> usize {
        conv_out(self.in_h, self.kernel, self.stride, self.padding, self.dilation)
    }

    pub fn out_w(&self) -> usize {
        conv_out(self.in_w, self.kernel, self.stride, self.padding, self.dilation)
    }
}

/// floor((in + 2*pad - dilation*(k-1) - 1) / stride) + 1
pub fn conv_out(input: usize, kernel: usize, stride: usize, padding: usize, dilation: usize) -> usize {
    let span = dilation * (kernel - 1) + 1;
    (input + 2 * padding - span) / stride + 1
}

/// (in - 1)*stride - 2*pad + kernel
pub fn conv_transpose_out(input: usize, kernel: usize, stride: usize, padding: usize) -> usize {
    (input - 1) * stride + kernel - 2 * padding
}

/// Unrolls one sample's [C,H,W] input into a [C*k*k, OH*OW] patch matrix.
/// Out-of-bounds taps read zero.
pub fn im2col<T: Scalar>(x: &[T], channels: usize, d: ConvDims, col: &mut [T]) {
    let (h, w, k) = (d.in_h, d.in_w, d.kernel);
    let (oh, ow) = (d.out_h(), d.out_w());
    debug_assert_eq!(x.len(), channels * h * w);
    debug_assert_eq!(col.len(), channels * k * k * oh * ow);
    let mut row = 0;
    for c in 0..channels {
        let plane = &x[c * h * w..(c + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let dst = &mut col[row * oh * ow..(row + 1) * oh * ow];
                row += 1;
                for oy in 0..oh {
                    let iy = (oy * d.stride + ky * d.dilation) as isize - d.padding as isize;
                    if iy < 0 || iy >= h as isize {
                        for v in &mut dst[oy * ow..(oy + 1) * ow] {
                            *v = T::zero();
                        }
                        continue;
                    }
                    let src_row = &plane[iy as usize * w..(iy as usize + 1) * w];
                    for ox in 0..ow {
                        let ix = (ox * d.stride + kx * d.dilation) as isize - d.padding as isize;
                        dst[oy * ow + ox] = if ix < 0 || ix >= w as isize {
                            T::zero()
                        } else {
                            src_row[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of `im2col`: scatter-adds a patch matrix back onto [C,H,W].
pub fn col2im_acc<T: Scalar>(col: &[T], channels: usize, d: ConvDims, x: &mut [T]) {
    let (h, w, k) = (d.in_h, d.in_w, d.kernel);
    let (oh, ow) = (d.out_h(), d.out_w());
    debug_assert_eq!(x.len(), channels * h * w);
    debug_assert_eq!(col.len(), channels * k * k * oh * ow);
    let mut row = 0;
    for c in 0..channels {
        let plane = &mut x[c * h * w..(c + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let src = &col[row * oh * ow..(row + 1) * oh * ow];
                row += 1;
                for oy in 0..oh {
                    let iy = (oy * d.stride + ky * d.dilation) as isize - d.padding as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst_row = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    for ox in 0..ow {
                        let ix = (ox * d.stride + kx * d.dilation) as isize - d.padding as isize;
                        if ix >= 0 && ix < w as isize {
                            dst_row[ix as usize] += src[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_matches_by_hand() {
        // [2,3] * [3,2]
        let a = [1.0f64, 2.0, 3.0, 4.0, 5.0, 6.0];
        let b = [7.0f64, 8.0, 9.0, 10.0, 11.0, 12.0];
        let mut c = [0.0f64; 4];
        matmul_acc(&mut c, &a, &b, 2, 3, 2);
        assert_eq!(c, [58.0, 64.0, 139.0, 154.0]);

        // Same product through the transposed variants.
        let bt = [7.0f64, 9.0, 11.0, 8.0, 10.0, 12.0]; // [2,3] = b^T
        let mut c_nt = [0.0f64; 4];
        matmul_nt_acc(&mut c_nt, &a, &bt, 2, 3, 2);
        assert_eq!(c_nt, c);

        let at = [1.0f64, 4.0, 2.0, 5.0, 3.0, 6.0]; // [3,2] = a^T
        let mut c_tn = [0.0f64; 4];
        matmul_tn_acc(&mut c_tn, &at, &b, 2, 3, 2);
        assert_eq!(c_tn, c);
    }

    #[test]
    fn matmul_accumulates() {
        let a = [2.0f32];
        let b = [3.0f32];
        let mut c = [10.0f32];
        matmul_acc(&mut c, &a, &b, 1, 1, 1);
        assert_eq!(c[0], 16.0);
    }

    #[test]
    fn dot_handles_tail_and_large_lengths() {
        for len in [0usize, 1, 7, 8, 9, 31] {
            let a: Vec<f64> = (0..len).map(|i| i as f64 + 1.0).collect();
            let b: Vec<f64> = (0..len).map(|i| 2.0 * i as f64 - 3.0).collect();
            let expect: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
            assert_eq!(dot(&a, &b), expect, "len {len}");
        }
    }

    #[test]
    fn output_size_formulas() {
        assert_eq!(conv_out(32, 3, 1, 1, 1), 32);
        assert_eq!(conv_out(32, 3, 2, 1, 1), 16);
        assert_eq!(conv_out(32, 4, 2, 1, 1), 16);
        assert_eq!(conv_out(7, 3, 2, 1, 1), 4);
        assert_eq!(conv_out(32, 3, 1, 2, 2), 32);
        assert_eq!(conv_transpose_out(16, 4, 2, 1), 32);
        assert_eq!(conv_transpose_out(4, 4, 2, 1), 8);
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        // <im2col(x), c> == <x, col2im(c)> for every geometry.
        let d = ConvDims {
            in_h: 5,
            in_w: 4,
            kernel: 3,
            stride: 2,
            padding: 1,
            dilation: 1,
        };
        let channels = 2;
        let n_col = channels * 9 * d.out_h() * d.out_w();
        let x: Vec<f64> = (0..channels * 20).map(|i| (i as f64).sin()).collect();
        let c: Vec<f64> = (0..n_col).map(|i| (i as f64 * 0.7).cos()).collect();

        let mut col = vec![0.0; n_col];
        im2col(&x, channels, d, &mut col);
        let lhs = dot(&col, &c);

        let mut back = vec![0.0; x.len()];
        col2im_acc(&c, channels, d, &mut back);
        let rhs = dot(&x, &back);
        assert!((lhs - rhs).abs() < 1e-12, "{lhs} vs {rhs}");
    }
}
