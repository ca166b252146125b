//! Forward and backward kernels on raw buffers. Shapes are validated by the
//! tape before these are called.

use super::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }

    fn patch_len(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    fn out_plane(&self) -> usize {
        self.ho * self.wo
    }
}

/// Unfold one image `[Cin, H, W]` into `[Cin*kh*kw, Ho*Wo]` patch columns.
fn im2col<T: Scalar>(g: &ConvGeom, x: &[T], cols: &mut [T]) {
    let plane = g.out_plane();
    for ci in 0..g.cin {
        let xc = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (ci * g.kh + ki) * g.kw + kj;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    let line = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                    if iy < 0 || iy >= g.h as isize {
                        line.fill(T::zero());
                        continue;
                    }
                    let src = &xc[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, out) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        *out = if ix < 0 || ix >= g.w as isize {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-add patch columns back onto the image.
fn col2im<T: Scalar>(g: &ConvGeom, cols: &[T], dx: &mut [T]) {
    let plane = g.out_plane();
    for ci in 0..g.cin {
        let dxc = &mut dx[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (ci * g.kh + ki) * g.kw + kj;
                let src = &cols[row * plane..(row + 1) * plane];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut dxc[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..g.wo {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst[ix as usize] = dst[ix as usize] + src[oy * g.wo + ox];
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn conv2d_forward<T: Scalar>(g: &ConvGeom, x: &[T], w: &[T], b: &[T]) -> Vec<T> {
    let plane = g.out_plane();
    let k = g.patch_len();
    let in_img = g.cin * g.h * g.w;
    let out_img = g.cout * plane;
    let mut out = vec![T::zero(); g.n * out_img];
    let mut cols = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![T::zero(); k * plane]
    };
    for n in 0..g.n {
        let xn = &x[n * in_img..(n + 1) * in_img];
        let yn = &mut out[n * out_img..(n + 1) * out_img];
        for (co, row) in yn.chunks_exact_mut(plane).enumerate() {
            row.fill(b[co]);
        }
        let patches: &[T] = if g.is_pointwise() {
            xn
        } else {
            im2col(g, xn, &mut cols);
            &cols
        };
        T::gemm(
            g.cout,
            k,
            plane,
            T::one(),
            w,
            k as isize,
            1,
            patches,
            plane as isize,
            1,
            T::one(),
            yn,
            plane as isize,
            1,
        );
    }
    out
}

/// Accumulates into whichever of `dx`, `dw`, `db` are present.
pub(crate) fn conv2d_backward<T: Scalar>(
    g: &ConvGeom,
    x: &[T],
    w: &[T],
    dy: &[T],
    mut dx: Option<&mut [T]>,
    mut dw: Option<&mut [T]>,
    db: Option<&mut [T]>,
) {
    let plane = g.out_plane();
    let k = g.patch_len();
    let in_img = g.cin * g.h * g.w;
    let out_img = g.cout * plane;

    if let Some(db) = db {
        for n in 0..g.n {
            let dyn_ = &dy[n * out_img..(n + 1) * out_img];
            for (co, row) in dyn_.chunks_exact(plane).enumerate() {
                db[co] = db[co] + row.iter().copied().sum::<T>();
            }
        }
    }

    let mut cols = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![T::zero(); k * plane]
    };
    for n in 0..g.n {
        let dyn_ = &dy[n * out_img..(n + 1) * out_img];
        if let Some(dw) = dw.as_deref_mut() {
            let xn = &x[n * in_img..(n + 1) * in_img];
            let patches: &[T] = if g.is_pointwise() {
                xn
            } else {
                im2col(g, xn, &mut cols);
                &cols
            };
            // dW[Cout x K] += dY[Cout x P] * patches^T[P x K]
            T::gemm(
                g.cout,
                plane,
                k,
                T::one(),
                dyn_,
                plane as isize,
                1,
                patches,
                1,
                plane as isize,
                T::one(),
                dw,
                k as isize,
                1,
            );
        }
        if let Some(dx) = dx.as_deref_mut() {
            let dxn = &mut dx[n * in_img..(n + 1) * in_img];
            if g.is_pointwise() {
                // dX[Cin x P] += W^T[Cin x Cout] * dY[Cout x P]
                T::gemm(
                    g.cin,
                    g.cout,
                    plane,
                    T::one(),
                    w,
                    1,
                    k as isize,
                    dyn_,
                    plane as isize,
                    1,
                    T::one(),
                    dxn,
                    plane as isize,
                    1,
                );
            } else {
                T::gemm(
                    k,
                    g.cout,
                    plane,
                    T::one(),
                    w,
                    1,
                    k as isize,
                    dyn_,
                    plane as isize,
                    1,
                    T::zero(),
                    &mut cols,
                    plane as isize,
                    1,
                );
                col2im(g, &cols, dxn);
            }
        }
    }
}

/// Returns pooled values and, for each output, the flat input index that won
/// (first row-major occurrence on ties).
pub(crate) fn max_pool_forward<T: Scalar>(
    dims: (usize, usize, usize, usize),
    k: usize,
    x: &[T],
) -> (Vec<T>, Vec<u32>) {
    let (n, c, h, w) = dims;
    let (ho, wo) = (h / k, w / k);
    let mut out = Vec::with_capacity(n * c * ho * wo);
    let mut arg = Vec::with_capacity(n * c * ho * wo);
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..ho {
            for ox in 0..wo {
                let mut best = base + (oy * k) * w + ox * k;
                for dy in 0..k {
                    for dx in 0..k {
                        let idx = base + (oy * k + dy) * w + ox * k + dx;
                        if x[idx] > x[best] {
                            best = idx;
                        }
                    }
                }
                out.push(x[best]);
                arg.push(best as u32);
            }
        }
    }
    (out, arg)
}

pub(crate) fn upsample2x_forward<T: Scalar>(dims: (usize, usize, usize, usize), x: &[T]) -> Vec<T> {
    let (n, c, h, w) = dims;
    let (h2, w2) = (2 * h, 2 * w);
    let mut out = vec![T::zero(); n * c * h2 * w2];
    for plane in 0..n * c {
        let src = &x[plane * h * w..(plane + 1) * h * w];
        let dst = &mut out[plane * h2 * w2..(plane + 1) * h2 * w2];
        for y in 0..h2 {
            let srow = &src[(y / 2) * w..(y / 2 + 1) * w];
            let drow = &mut dst[y * w2..(y + 1) * w2];
            for (xo, v) in drow.iter_mut().enumerate() {
                *v = srow[xo / 2];
            }
        }
    }
    out
}

pub(crate) fn upsample2x_backward<T: Scalar>(
    dims: (usize, usize, usize, usize),
    dy: &[T],
    dx: &mut [T],
) {
    let (n, c, h, w) = dims;
    let (h2, w2) = (2 * h, 2 * w);
    for plane in 0..n * c {
        let src = &dy[plane * h2 * w2..(plane + 1) * h2 * w2];
        let dst = &mut dx[plane * h * w..(plane + 1) * h * w];
        for y in 0..h2 {
            for xo in 0..w2 {
                let d = &mut dst[(y / 2) * w + xo / 2];
                *d = *d + src[y * w2 + xo];
            }
        }
    }
}
