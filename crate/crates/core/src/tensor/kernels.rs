//! Raw array kernels behind the graph operations. All buffers are NCHW.

use super::Real;

#[derive(Clone, Copy, Debug)]
pub(crate) struct Dims4 {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Dims4 {
    pub fn from_shape(shape: &[usize]) -> Self {
        Self {
            n: shape[0],
            c: shape[1],
            h: shape[2],
            w: shape[3],
        }
    }

    pub fn plane(&self) -> usize {
        self.h * self.w
    }
}

/// Unfolds 3x3 neighbourhoods (zero padding of one) into a
/// `[c * 9, n * h * w]` matrix; row `(ci, ky, kx)`, column `(n, y, x)`.
pub(crate) fn im2col_3x3<T: Real>(input: &[T], d: Dims4) -> Vec<T> {
    let hw = d.plane();
    let cols_n = d.n * hw;
    let mut cols = vec![T::zero(); d.c * 9 * cols_n];
    for ci in 0..d.c {
        for ky in 0..3 {
            for kx in 0..3 {
                let row = (ci * 9 + ky * 3 + kx) * cols_n;
                for n in 0..d.n {
                    let src = &input[(n * d.c + ci) * hw..(n * d.c + ci + 1) * hw];
                    let dst = &mut cols[row + n * hw..row + (n + 1) * hw];
                    for y in 0..d.h {
                        let sy = y as isize + ky as isize - 1;
                        if sy < 0 || sy >= d.h as isize {
                            continue;
                        }
                        let sy = sy as usize;
                        for x in 0..d.w {
                            let sx = x as isize + kx as isize - 1;
                            if sx < 0 || sx >= d.w as isize {
                                continue;
                            }
                            dst[y * d.w + x] = src[sy * d.w + sx as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col_3x3`]: scatters matrix columns back onto the input.
pub(crate) fn col2im_3x3<T: Real>(cols: &[T], d: Dims4, out: &mut [T]) {
    let hw = d.plane();
    let cols_n = d.n * hw;
    for ci in 0..d.c {
        for ky in 0..3 {
            for kx in 0..3 {
                let row = (ci * 9 + ky * 3 + kx) * cols_n;
                for n in 0..d.n {
                    let src = &cols[row + n * hw..row + (n + 1) * hw];
                    let dst = &mut out[(n * d.c + ci) * hw..(n * d.c + ci + 1) * hw];
                    for y in 0..d.h {
                        let sy = y as isize + ky as isize - 1;
                        if sy < 0 || sy >= d.h as isize {
                            continue;
                        }
                        let sy = sy as usize;
                        for x in 0..d.w {
                            let sx = x as isize + kx as isize - 1;
                            if sx < 0 || sx >= d.w as isize {
                                continue;
                            }
                            let o = sy * d.w + sx as usize;
                            dst[o] = dst[o] + src[y * d.w + x];
                        }
                    }
                }
            }
        }
    }
}

/// 2x2 stride-2 max pooling; returns values and the flat input index of each
/// window maximum (first occurrence in row-major window order).
pub(crate) fn max_pool2<T: Real>(input: &[T], d: Dims4) -> (Vec<T>, Vec<usize>) {
    let (oh, ow) = (d.h / 2, d.w / 2);
    let mut out = Vec::with_capacity(d.n * d.c * oh * ow);
    let mut arg = Vec::with_capacity(out.capacity());
    for nc in 0..d.n * d.c {
        let base = nc * d.plane();
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + 2 * oy * d.w + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * oy + dy) * d.w + 2 * ox + dx;
                    if input[idx] > input[best] {
                        best = idx;
                    }
                }
                out.push(input[best]);
                arg.push(best);
            }
        }
    }
    (out, arg)
}
