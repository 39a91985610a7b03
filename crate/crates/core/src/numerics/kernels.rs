//! Raw compute kernels shared by the tape's forward and backward passes.

use super::linalg::{gemm, MatMut, MatRef};
use super::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    pub fn patch(&self) -> usize {
        self.c_in * self.kh * self.kw
    }

    pub fn out_pixels(&self) -> usize {
        self.ho * self.wo
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }
}

/// Output extent of a convolution along one axis, if non-empty.
pub(crate) fn conv_out_extent(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = input + 2 * pad;
    if padded < kernel {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

fn im2col<T: Scalar>(x: &[T], g: &ConvGeom) -> Vec<T> {
    let p = g.out_pixels();
    let mut cols = vec![T::zero(); g.patch() * p];
    for ci in 0..g.c_in {
        let plane = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (ci * g.kh + ki) * g.kw + kj;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let src_row = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    let dst_row = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                    for (ox, d) in dst_row.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            *d = src_row[ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im_add<T: Scalar>(cols: &[T], g: &ConvGeom, dx: &mut [T]) {
    let p = g.out_pixels();
    for ci in 0..g.c_in {
        let plane = &mut dx[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (ci * g.kh + ki) * g.kw + kj;
                let src = &cols[row * p..(row + 1) * p];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst_row = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..g.wo {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst_row[ix as usize] += src[oy * g.wo + ox];
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn conv2d_forward<T: Scalar>(x: &[T], k: &[T], bias: Option<&[T]>, g: &ConvGeom) -> Vec<T> {
    let p = g.out_pixels();
    let mut out = vec![T::zero(); g.c_out * p];
    if let Some(b) = bias {
        for (o, chunk) in out.chunks_mut(p).enumerate() {
            chunk.fill(b[o]);
        }
    }
    let beta = if bias.is_some() { T::one() } else { T::zero() };
    let kmat = MatRef::new(k, g.c_out, g.patch(), false);
    if g.is_pointwise() {
        gemm(T::one(), kmat, MatRef::new(x, g.c_in, p, false), beta, MatMut::new(&mut out, g.c_out, p, false));
    } else {
        let cols = im2col(x, g);
        gemm(T::one(), kmat, MatRef::new(&cols, g.patch(), p, false), beta, MatMut::new(&mut out, g.c_out, p, false));
    }
    out
}

/// Accumulates input, kernel and bias gradients for one convolution.
pub(crate) fn conv2d_backward<T: Scalar>(
    x: &[T],
    k: &[T],
    dout: &[T],
    g: &ConvGeom,
    dx: Option<&mut [T]>,
    dk: Option<&mut [T]>,
    dbias: Option<&mut [T]>,
) {
    let p = g.out_pixels();
    let dmat = MatRef::new(dout, g.c_out, p, false);
    if let Some(db) = dbias {
        for (o, chunk) in dout.chunks(p).enumerate() {
            db[o] += chunk.iter().copied().sum::<T>();
        }
    }
    let pointwise = g.is_pointwise();
    if let Some(dk) = dk {
        let out = MatMut::new(dk, g.c_out, g.patch(), false);
        if pointwise {
            gemm(T::one(), dmat, MatRef::new(x, g.c_in, p, true), T::one(), out);
        } else {
            let cols = im2col(x, g);
            gemm(T::one(), dmat, MatRef::new(&cols, g.patch(), p, true), T::one(), out);
        }
    }
    if let Some(dx) = dx {
        let kt = MatRef::new(k, g.c_out, g.patch(), true);
        if pointwise {
            gemm(T::one(), kt, dmat, T::one(), MatMut::new(dx, g.c_in, p, false));
        } else {
            let mut dcols = vec![T::zero(); g.patch() * p];
            gemm(T::one(), kt, dmat, T::zero(), MatMut::new(&mut dcols, g.patch(), p, false));
            col2im_add(&dcols, g, dx);
        }
    }
}

/// Source taps `(i0, i1, frac)` for one resized axis, align-corners-false.
pub(crate) fn resize_taps<T: Scalar>(input: usize, output: usize) -> Vec<(usize, usize, T)> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(input - 1);
            let i1 = (i0 + 1).min(input - 1);
            let frac = if i0 == i1 { 0.0 } else { src - i0 as f64 };
            (i0, i1, T::lit(frac))
        })
        .collect()
}

pub(crate) fn resize_forward<T: Scalar>(x: &[T], c: usize, h: usize, w: usize, oh: usize, ow: usize) -> Vec<T> {
    if oh == h && ow == w {
        return x.to_vec();
    }
    let ty = resize_taps::<T>(h, oh);
    let tx = resize_taps::<T>(w, ow);
    let mut out = Vec::with_capacity(c * oh * ow);
    for ci in 0..c {
        let plane = &x[ci * h * w..(ci + 1) * h * w];
        for &(y0, y1, fy) in &ty {
            for &(x0, x1, fx) in &tx {
                let top = plane[y0 * w + x0] * (T::one() - fx) + plane[y0 * w + x1] * fx;
                let bot = plane[y1 * w + x0] * (T::one() - fx) + plane[y1 * w + x1] * fx;
                out.push(top * (T::one() - fy) + bot * fy);
            }
        }
    }
    out
}

pub(crate) fn resize_backward<T: Scalar>(dout: &[T], c: usize, h: usize, w: usize, oh: usize, ow: usize, dx: &mut [T]) {
    if oh == h && ow == w {
        for (d, &g) in dx.iter_mut().zip(dout) {
            *d += g;
        }
        return;
    }
    let ty = resize_taps::<T>(h, oh);
    let tx = resize_taps::<T>(w, ow);
    for ci in 0..c {
        let plane = &mut dx[ci * h * w..(ci + 1) * h * w];
        let src = &dout[ci * oh * ow..(ci + 1) * oh * ow];
        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                let g = src[oy * ow + ox];
                let gt = g * (T::one() - fy);
                let gb = g * fy;
                plane[y0 * w + x0] += gt * (T::one() - fx);
                plane[y0 * w + x1] += gt * fx;
                plane[y1 * w + x0] += gb * (T::one() - fx);
                plane[y1 * w + x1] += gb * fx;
            }
        }
    }
}
