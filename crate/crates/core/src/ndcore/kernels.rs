//! Raw array kernels behind the graph primitives.
//!
//! Images are laid out `[B, C, H, W]` row-major. Convolutions lower to GEMM
//! through an explicit column buffer; the GEMM blocking is fixed, so repeated
//! calls on the same inputs produce bitwise identical results.

use alloc::vec;
use alloc::vec::Vec;

/// Row-major matrix view described by base slice and strides.
#[derive(Clone, Copy)]
pub(crate) struct MatRef<'a> {
    pub data: &'a [f64],
    pub row_stride: usize,
    pub col_stride: usize,
}

impl<'a> MatRef<'a> {
    pub fn row_major(data: &'a [f64], cols: usize) -> Self {
        MatRef { data, row_stride: cols, col_stride: 1 }
    }

    /// Transposed view of a row-major `rows x cols` matrix.
    pub fn transposed(data: &'a [f64], cols: usize) -> Self {
        MatRef { data, row_stride: 1, col_stride: cols }
    }

    fn max_offset(&self, rows: usize, cols: usize) -> usize {
        (rows - 1) * self.row_stride + (cols - 1) * self.col_stride
    }
}

/// `c = a * b + beta * c` with `a: m x k`, `b: k x n`, `c: m x n` row-major.
pub(crate) fn gemm(m: usize, k: usize, n: usize, a: MatRef<'_>, b: MatRef<'_>, beta: f64, c: &mut [f64]) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(c.len() >= m * n);
    if k == 0 {
        for v in &mut c[..m * n] {
            *v *= beta;
        }
        return;
    }
    assert!(a.max_offset(m, k) < a.data.len());
    assert!(b.max_offset(k, n) < b.data.len());
    // SAFETY: the asserts above bound every offset dgemm reads or writes.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            a.row_stride as isize,
            a.col_stride as isize,
            b.data.as_ptr(),
            b.row_stride as isize,
            b.col_stride as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Geometry of a same-padded, stride-1 convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub batch: usize,
    pub cin: usize,
    pub cout: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
}

impl ConvGeom {
    fn pad(&self) -> isize {
        (self.k as isize - 1) / 2
    }

    fn hw(&self) -> usize {
        self.h * self.w
    }

    fn ck(&self) -> usize {
        self.cin * self.k * self.k
    }
}

/// Expands one `[cin, h, w]` image into a `[cin*k*k, h*w]` column matrix.
fn im2col(g: &ConvGeom, img: &[f64], col: &mut [f64]) {
    let (h, w, k, pad) = (g.h as isize, g.w as isize, g.k, g.pad());
    let hw = g.hw();
    for ci in 0..g.cin {
        let plane = &img[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let dst = &mut col[row * hw..(row + 1) * hw];
                let dy = ky as isize - pad;
                let dx = kx as isize - pad;
                for y in 0..h {
                    let sy = y + dy;
                    let out_row = &mut dst[(y * w) as usize..((y + 1) * w) as usize];
                    if sy < 0 || sy >= h {
                        out_row.iter_mut().for_each(|v| *v = 0.0);
                        continue;
                    }
                    let src_row = &plane[(sy * w) as usize..((sy + 1) * w) as usize];
                    for x in 0..w {
                        let sx = x + dx;
                        out_row[x as usize] = if sx < 0 || sx >= w { 0.0 } else { src_row[sx as usize] };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates a column matrix back into an image.
fn col2im(g: &ConvGeom, col: &[f64], img: &mut [f64]) {
    let (h, w, k, pad) = (g.h as isize, g.w as isize, g.k, g.pad());
    let hw = g.hw();
    for ci in 0..g.cin {
        let plane = &mut img[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let src = &col[row * hw..(row + 1) * hw];
                let dy = ky as isize - pad;
                let dx = kx as isize - pad;
                for y in 0..h {
                    let sy = y + dy;
                    if sy < 0 || sy >= h {
                        continue;
                    }
                    for x in 0..w {
                        let sx = x + dx;
                        if sx >= 0 && sx < w {
                            plane[(sy * w + sx) as usize] += src[(y * w + x) as usize];
                        }
                    }
                }
            }
        }
    }
}

/// Accumulates `conv(x, weight)` into `out` (`beta` scales the prior contents).
fn conv_gemm(g: &ConvGeom, x: &[f64], weight: &[f64], out: &mut [f64], beta: f64, col: &mut Vec<f64>) {
    let (hw, ck) = (g.hw(), g.ck());
    let in_sz = g.cin * hw;
    let out_sz = g.cout * hw;
    for b in 0..g.batch {
        let img = &x[b * in_sz..(b + 1) * in_sz];
        let dst = &mut out[b * out_sz..(b + 1) * out_sz];
        if g.k == 1 {
            gemm(g.cout, ck, hw, MatRef::row_major(weight, ck), MatRef::row_major(img, hw), beta, dst);
        } else {
            col.resize(ck * hw, 0.0);
            im2col(g, img, col);
            gemm(g.cout, ck, hw, MatRef::row_major(weight, ck), MatRef::row_major(col, hw), beta, dst);
        }
    }
}

fn add_bias(g: &ConvGeom, bias: &[f64], out: &mut [f64]) {
    for (plane, &bv) in out.chunks_exact_mut(g.hw()).zip(bias.iter().cycle()) {
        plane.iter_mut().for_each(|v| *v += bv);
    }
}

pub(crate) fn conv2d_forward(g: &ConvGeom, x: &[f64], weight: &[f64], bias: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; g.batch * g.cout * g.hw()];
    let mut col = Vec::new();
    conv_gemm(g, x, weight, &mut out, 0.0, &mut col);
    add_bias(g, bias, &mut out);
    out
}

/// Tangent of the convolution output given optional input, weight and bias tangents.
pub(crate) fn conv2d_tangent(
    g: &ConvGeom,
    x: &[f64],
    weight: &[f64],
    dx: Option<&[f64]>,
    dweight: Option<&[f64]>,
    dbias: Option<&[f64]>,
) -> Vec<f64> {
    let mut out = vec![0.0; g.batch * g.cout * g.hw()];
    let mut col = Vec::new();
    if let Some(dx) = dx {
        conv_gemm(g, dx, weight, &mut out, 1.0, &mut col);
    }
    if let Some(dw) = dweight {
        conv_gemm(g, x, dw, &mut out, 1.0, &mut col);
    }
    if let Some(db) = dbias {
        add_bias(g, db, &mut out);
    }
    out
}

pub(crate) struct ConvGrads {
    pub dx: Option<Vec<f64>>,
    pub dweight: Option<Vec<f64>>,
    pub dbias: Option<Vec<f64>>,
}

/// Vector-Jacobian products of the convolution for the requested operands.
pub(crate) fn conv2d_backward(
    g: &ConvGeom,
    x: &[f64],
    weight: &[f64],
    dout: &[f64],
    want: [bool; 3],
) -> ConvGrads {
    let (hw, ck) = (g.hw(), g.ck());
    let in_sz = g.cin * hw;
    let out_sz = g.cout * hw;
    let mut dx = want[0].then(|| vec![0.0; g.batch * in_sz]);
    let mut dweight = want[1].then(|| vec![0.0; g.cout * ck]);
    let mut dbias = want[2].then(|| vec![0.0; g.cout]);
    let mut col = Vec::new();
    let mut dcol = Vec::new();
    for b in 0..g.batch {
        let img = &x[b * in_sz..(b + 1) * in_sz];
        let go = &dout[b * out_sz..(b + 1) * out_sz];
        if let Some(dw) = dweight.as_mut() {
            let src: &[f64] = if g.k == 1 {
                img
            } else {
                col.resize(ck * hw, 0.0);
                im2col(g, img, &mut col);
                &col
            };
            gemm(g.cout, hw, ck, MatRef::row_major(go, hw), MatRef::transposed(src, hw), 1.0, dw);
        }
        if let Some(db) = dbias.as_mut() {
            for co in 0..g.cout {
                db[co] += go[co * hw..(co + 1) * hw].iter().fold(0.0, |a, v| a + v);
            }
        }
        if let Some(dx) = dx.as_mut() {
            let dst = &mut dx[b * in_sz..(b + 1) * in_sz];
            if g.k == 1 {
                gemm(ck, g.cout, hw, MatRef::transposed(weight, ck), MatRef::row_major(go, hw), 1.0, dst);
            } else {
                dcol.clear();
                dcol.resize(ck * hw, 0.0);
                gemm(ck, g.cout, hw, MatRef::transposed(weight, ck), MatRef::row_major(go, hw), 0.0, &mut dcol);
                col2im(g, &dcol, dst);
            }
        }
    }
    ConvGrads { dx, dweight, dbias }
}

/// 2x2 stride-2 max pooling over `[planes, h, w]`; returns values and the
/// flat input index selected for each output (first maximum in scan order).
pub(crate) fn maxpool2_forward(planes: usize, h: usize, w: usize, x: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(planes * oh * ow);
    let mut arg = Vec::with_capacity(planes * oh * ow);
    for p in 0..planes {
        let base = p * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + (2 * oy) * w + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * oy + dy) * w + 2 * ox + dx;
                    if x[idx] > x[best] {
                        best = idx;
                    }
                }
                out.push(x[best]);
                arg.push(best);
            }
        }
    }
    (out, arg)
}

/// Nearest-neighbour x2 upsampling over `[planes, h, w]`.
pub(crate) fn upsample2_forward(planes: usize, h: usize, w: usize, x: &[f64]) -> Vec<f64> {
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = vec![0.0; planes * oh * ow];
    for p in 0..planes {
        for y in 0..oh {
            let src = &x[p * h * w + (y / 2) * w..p * h * w + (y / 2 + 1) * w];
            let dst = &mut out[p * oh * ow + y * ow..p * oh * ow + (y + 1) * ow];
            for (xo, v) in dst.iter_mut().enumerate() {
                *v = src[xo / 2];
            }
        }
    }
    out
}

/// Adjoint of [`upsample2_forward`]: sums each 2x2 block.
pub(crate) fn upsample2_backward(planes: usize, h: usize, w: usize, g: &[f64]) -> Vec<f64> {
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = vec![0.0; planes * h * w];
    for p in 0..planes {
        for y in 0..h {
            for x in 0..w {
                let b = p * oh * ow + 2 * y * ow + 2 * x;
                out[p * h * w + y * w + x] = g[b] + g[b + 1] + g[b + ow] + g[b + ow + 1];
            }
        }
    }
    out
}

/// Joins `a: [outer, na*inner]` and `b: [outer, nb*inner]` along the middle axis.
pub(crate) fn concat_forward(outer: usize, a_len: usize, b_len: usize, a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(outer * (a_len + b_len));
    for o in 0..outer {
        out.extend_from_slice(&a[o * a_len..(o + 1) * a_len]);
        out.extend_from_slice(&b[o * b_len..(o + 1) * b_len]);
    }
    out
}

pub(crate) fn concat_split(outer: usize, a_len: usize, b_len: usize, g: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut ga = Vec::with_capacity(outer * a_len);
    let mut gb = Vec::with_capacity(outer * b_len);
    let row = a_len + b_len;
    for o in 0..outer {
        ga.extend_from_slice(&g[o * row..o * row + a_len]);
        gb.extend_from_slice(&g[o * row + a_len..(o + 1) * row]);
    }
    (ga, gb)
}

/// Softmax over the channel axis of `[batch, c, hw]`.
pub(crate) fn softmax_forward(batch: usize, c: usize, hw: usize, x: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for b in 0..batch {
        let base = b * c * hw;
        for p in 0..hw {
            let mut m = x[base + p];
            for k in 1..c {
                let v = x[base + k * hw + p];
                if v > m {
                    m = v;
                }
            }
            let mut s = 0.0;
            for k in 0..c {
                let e = libm::exp(x[base + k * hw + p] - m);
                out[base + k * hw + p] = e;
                s += e;
            }
            for k in 0..c {
                out[base + k * hw + p] /= s;
            }
        }
    }
    out
}

/// Shared softmax derivative: `p * (t - sum_k p_k t_k)` per pixel.
/// Serves as both the JVP and the VJP since the softmax Jacobian is symmetric.
pub(crate) fn softmax_jacobian_apply(batch: usize, c: usize, hw: usize, p: &[f64], t: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; p.len()];
    for b in 0..batch {
        let base = b * c * hw;
        for px in 0..hw {
            let mut dotp = 0.0;
            for k in 0..c {
                dotp += p[base + k * hw + px] * t[base + k * hw + px];
            }
            for k in 0..c {
                let i = base + k * hw + px;
                out[i] = p[i] * (t[i] - dotp);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_matches_naive() {
        let a: Vec<f64> = (0..6).map(|v| v as f64).collect(); // 2x3
        let b: Vec<f64> = (0..12).map(|v| (v as f64) * 0.5).collect(); // 3x4
        let mut c = vec![0.0; 8];
        gemm(2, 3, 4, MatRef::row_major(&a, 3), MatRef::row_major(&b, 4), 0.0, &mut c);
        for i in 0..2 {
            for j in 0..4 {
                let expect: f64 = (0..3).map(|t| a[i * 3 + t] * b[t * 4 + j]).sum();
                assert_eq!(c[i * 4 + j], expect);
            }
        }
    }

    #[test]
    fn im2col_col2im_are_adjoint() {
        let g = ConvGeom { batch: 1, cin: 2, cout: 1, h: 3, w: 4, k: 3 };
        let img: Vec<f64> = (0..24).map(|v| (v as f64).sin()).collect();
        let ck = g.ck() * g.hw();
        let cols: Vec<f64> = (0..ck).map(|v| (v as f64 * 0.7).cos()).collect();
        let mut col = vec![0.0; ck];
        im2col(&g, &img, &mut col);
        let lhs: f64 = col.iter().zip(&cols).map(|(a, b)| a * b).sum();
        let mut back = vec![0.0; 24];
        col2im(&g, &cols, &mut back);
        let rhs: f64 = back.iter().zip(&img).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn maxpool_picks_first_max() {
        let (v, arg) = maxpool2_forward(1, 2, 2, &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(v, vec![4.0]);
        assert_eq!(arg, vec![3]);
        let (_, arg) = maxpool2_forward(1, 2, 2, &[5.0, 5.0, 5.0, 5.0]);
        assert_eq!(arg, vec![0]);
    }
}
