use crate::element::Element;
use crate::error::{shape_err, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeometry {
    pub c_in: usize,
    pub h_in: usize,
    pub w_in: usize,
    pub c_out: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub h_out: usize,
    pub w_out: usize,
}

impl ConvGeometry {
    pub fn new(x: &[usize], w: &[usize], stride: usize, pad: usize) -> Result<Self> {
        let (c_in, h_in, w_in) = match x[..] {
            [c, h, w] => (c, h, w),
            _ => return shape_err(format!("conv input must be C×H×W, got {x:?}")),
        };
        let (c_out, k) = match w[..] {
            [o, i, kh, kw] if i == c_in && kh == kw => (o, kh),
            _ => return shape_err(format!("conv weight {w:?} incompatible with input {x:?}")),
        };
        if stride == 0 || h_in + 2 * pad < k || w_in + 2 * pad < k {
            return shape_err(format!("conv kernel {k} stride {stride} pad {pad} on {h_in}×{w_in}"));
        }
        Ok(Self {
            c_in,
            h_in,
            w_in,
            c_out,
            k,
            stride,
            pad,
            h_out: (h_in + 2 * pad - k) / stride + 1,
            w_out: (w_in + 2 * pad - k) / stride + 1,
        })
    }

    fn patch(&self) -> usize {
        self.c_in * self.k * self.k
    }

    fn positions(&self) -> usize {
        self.h_out * self.w_out
    }

    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }

    /// Source offset for output position `(oy, ox)` under kernel tap `(ky, kx)`.
    #[inline]
    fn source(&self, oy: usize, ox: usize, ky: usize, kx: usize) -> Option<usize> {
        let y = (oy * self.stride + ky).checked_sub(self.pad)?;
        let x = (ox * self.stride + kx).checked_sub(self.pad)?;
        (y < self.h_in && x < self.w_in).then_some(y * self.w_in + x)
    }
}

fn im2col<T: Element>(geo: &ConvGeometry, x: &[T]) -> Vec<T> {
    let n = geo.positions();
    let mut cols = vec![T::zero(); geo.patch() * n];
    let plane = geo.h_in * geo.w_in;
    for ci in 0..geo.c_in {
        let src = &x[ci * plane..(ci + 1) * plane];
        for ky in 0..geo.k {
            for kx in 0..geo.k {
                let row = (ci * geo.k + ky) * geo.k + kx;
                let dst = &mut cols[row * n..(row + 1) * n];
                for oy in 0..geo.h_out {
                    for ox in 0..geo.w_out {
                        if let Some(s) = geo.source(oy, ox, ky, kx) {
                            dst[oy * geo.w_out + ox] = src[s];
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im_add<T: Element>(geo: &ConvGeometry, cols: &[T], dx: &mut [T]) {
    let n = geo.positions();
    let plane = geo.h_in * geo.w_in;
    for ci in 0..geo.c_in {
        let dst = &mut dx[ci * plane..(ci + 1) * plane];
        for ky in 0..geo.k {
            for kx in 0..geo.k {
                let row = (ci * geo.k + ky) * geo.k + kx;
                let src = &cols[row * n..(row + 1) * n];
                for oy in 0..geo.h_out {
                    for ox in 0..geo.w_out {
                        if let Some(s) = geo.source(oy, ox, ky, kx) {
                            dst[s] = dst[s] + src[oy * geo.w_out + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Returns the output and the column matrix kept for the weight gradient.
pub(crate) fn forward<T: Element>(geo: &ConvGeometry, x: &[T], w: &[T], bias: Option<&[T]>) -> (Vec<T>, Vec<T>) {
    let n = geo.positions();
    let kk = geo.patch();
    let cols = if geo.is_pointwise() { x.to_vec() } else { im2col(geo, x) };
    let mut out = vec![T::zero(); geo.c_out * n];
    if let Some(b) = bias {
        for (row, &bv) in out.chunks_exact_mut(n).zip(b) {
            row.iter_mut().for_each(|v| *v = bv);
        }
    }
    T::gemm(geo.c_out, kk, n, T::one(), w, kk as isize, 1, &cols, n as isize, 1, T::one(), &mut out, n as isize, 1);
    (out, cols)
}

pub(crate) fn backward_weight<T: Element>(geo: &ConvGeometry, g: &[T], cols: &[T], dw: &mut [T]) {
    let n = geo.positions();
    let kk = geo.patch();
    // dW[Co×K] += g[Co×N] · colsᵀ[N×K]
    T::gemm(geo.c_out, n, kk, T::one(), g, n as isize, 1, cols, 1, n as isize, T::one(), dw, kk as isize, 1);
}

pub(crate) fn backward_bias<T: Element>(geo: &ConvGeometry, g: &[T], db: &mut [T]) {
    let n = geo.positions();
    for (d, row) in db.iter_mut().zip(g.chunks_exact(n)) {
        *d = *d + row.iter().fold(T::zero(), |a, &v| a + v);
    }
}

pub(crate) fn backward_input<T: Element>(geo: &ConvGeometry, g: &[T], w: &[T], dx: &mut [T]) {
    let n = geo.positions();
    let kk = geo.patch();
    if geo.is_pointwise() {
        // dx[K×N] += Wᵀ[K×Co] · g[Co×N]
        T::gemm(kk, geo.c_out, n, T::one(), w, 1, kk as isize, g, n as isize, 1, T::one(), dx, n as isize, 1);
        return;
    }
    let mut dcols = vec![T::zero(); kk * n];
    T::gemm(kk, geo.c_out, n, T::one(), w, 1, kk as isize, g, n as isize, 1, T::zero(), &mut dcols, n as isize, 1);
    col2im_add(geo, &dcols, dx);
}
