//! Dense kernels for the patch network. Activations are stored channel-major
//! as `[channels, patches, height, width]`, so a 3x3 convolution over a group
//! of patches is one GEMM against an im2col buffer.

use std::fmt::Debug;
use std::ops::AddAssign;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Element type of a network. `f32` is the production type; `f64` exists
/// for finite-difference checks.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + AddAssign + Default + Send + Sync + Debug + 'static
{
    const DTYPE: &'static str;

    /// `c = alpha * a * b + beta * c` on raw strided storage.
    ///
    /// # Safety
    /// Every index reachable through the given shapes and strides must be in bounds.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );

    #[inline]
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("representable")
    }
}

impl Scalar for f32 {
    const DTYPE: &'static str = "f32";

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Scalar for f64 {
    const DTYPE: &'static str = "f64";

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

/// Strided read-only matrix view.
#[derive(Clone, Copy)]
pub(crate) struct MatRef<'a, T> {
    data: &'a [T],
    rows: usize,
    cols: usize,
    rs: usize,
    cs: usize,
}

impl<'a, T> MatRef<'a, T> {
    pub(crate) fn new(data: &'a [T], rows: usize, cols: usize, ld: usize) -> Self {
        let m = MatRef { data, rows, cols, rs: ld, cs: 1 };
        check_extent(data.len(), rows, cols, ld, 1);
        m
    }

    pub(crate) fn t(self) -> Self {
        MatRef {
            rows: self.cols,
            cols: self.rows,
            rs: self.cs,
            cs: self.rs,
            ..self
        }
    }
}

/// Strided mutable matrix view with row stride `ld`.
pub(crate) struct MatMut<'a, T> {
    data: &'a mut [T],
    rows: usize,
    cols: usize,
    ld: usize,
}

impl<'a, T> MatMut<'a, T> {
    pub(crate) fn new(data: &'a mut [T], rows: usize, cols: usize, ld: usize) -> Self {
        check_extent(data.len(), rows, cols, ld, 1);
        MatMut { data, rows, cols, ld }
    }
}

fn check_extent(len: usize, rows: usize, cols: usize, rs: usize, cs: usize) {
    if rows > 0 && cols > 0 {
        assert!(
            (rows - 1) * rs + (cols - 1) * cs < len,
            "matrix {rows}x{cols} (strides {rs},{cs}) exceeds buffer of {len}"
        );
    }
}

/// `c = alpha * a * b + beta * c`.
pub(crate) fn gemm<T: Scalar>(alpha: T, a: MatRef<T>, b: MatRef<T>, beta: T, c: MatMut<T>) {
    assert_eq!(a.cols, b.rows, "inner dimensions differ");
    assert_eq!((a.rows, b.cols), (c.rows, c.cols), "output shape differs");
    // SAFETY: the views were bounds-checked against their buffers on construction
    // and the output view does not alias the inputs (it is a unique borrow).
    unsafe {
        T::gemm_raw(
            a.rows,
            a.cols,
            b.cols,
            alpha,
            a.data.as_ptr(),
            a.rs as isize,
            a.cs as isize,
            b.data.as_ptr(),
            b.rs as isize,
            b.cs as isize,
            beta,
            c.data.as_mut_ptr(),
            c.ld as isize,
            1,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvShape {
    pub cin: usize,
    pub cout: usize,
    pub batch: usize,
    pub height: usize,
    pub width: usize,
}

impl ConvShape {
    fn plane(&self) -> usize {
        self.height * self.width
    }

    fn taps(&self) -> usize {
        self.cin * 9
    }

    /// Patches per im2col chunk, keeping the buffer near `COL_BUDGET` elements.
    fn chunk(&self) -> usize {
        (COL_BUDGET / (self.taps() * self.plane())).clamp(1, self.batch.max(1))
    }
}

const COL_BUDGET: usize = 1 << 21;

/// Lowers patches `b0..b1` of a `[cin, batch, h, w]` tensor into a
/// `[cin * 9, (b1 - b0) * h * w]` matrix with zero padding.
fn im2col<T: Scalar>(x: &[T], s: ConvShape, b0: usize, b1: usize, col: &mut Vec<T>) {
    let (h, w, hw) = (s.height, s.width, s.plane());
    let nc = (b1 - b0) * hw;
    col.clear();
    col.resize(s.taps() * nc, T::zero());
    for ci in 0..s.cin {
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut col[(ci * 9 + ky * 3 + kx) * nc..][..nc];
                for b in b0..b1 {
                    let src = &x[(ci * s.batch + b) * hw..][..hw];
                    let dst = &mut row[(b - b0) * hw..][..hw];
                    for y in 0..h {
                        let Some(sy) = (y + ky).checked_sub(1).filter(|&v| v < h) else {
                            continue;
                        };
                        let srow = &src[sy * w..][..w];
                        let drow = &mut dst[y * w..][..w];
                        match kx {
                            0 => drow[1..].copy_from_slice(&srow[..w - 1]),
                            1 => drow.copy_from_slice(srow),
                            _ => drow[..w - 1].copy_from_slice(&srow[1..]),
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters-and-adds a column matrix back into `dx`.
fn col2im<T: Scalar>(col: &[T], s: ConvShape, b0: usize, b1: usize, dx: &mut [T]) {
    let (h, w, hw) = (s.height, s.width, s.plane());
    let nc = (b1 - b0) * hw;
    for ci in 0..s.cin {
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &col[(ci * 9 + ky * 3 + kx) * nc..][..nc];
                for b in b0..b1 {
                    let dst = &mut dx[(ci * s.batch + b) * hw..][..hw];
                    let src = &row[(b - b0) * hw..][..hw];
                    for y in 0..h {
                        let Some(sy) = (y + ky).checked_sub(1).filter(|&v| v < h) else {
                            continue;
                        };
                        let drow = &mut dst[sy * w..][..w];
                        let srow = &src[y * w..][..w];
                        let (d, s) = match kx {
                            0 => (&mut drow[..w - 1], &srow[1..]),
                            1 => (&mut drow[..], &srow[..]),
                            _ => (&mut drow[1..], &srow[..w - 1]),
                        };
                        for (a, &b) in d.iter_mut().zip(s) {
                            *a += b;
                        }
                    }
                }
            }
        }
    }
}

/// 3x3 same-padding convolution followed by bias and ReLU.
pub(crate) fn conv_forward<T: Scalar>(
    x: &[T],
    weight: &[T],
    bias: &[T],
    s: ConvShape,
    col: &mut Vec<T>,
) -> Vec<T> {
    let hw = s.plane();
    let n = s.batch * hw;
    debug_assert_eq!(x.len(), s.cin * n);
    let mut out = vec![T::zero(); s.cout * n];
    let chunk = s.chunk();
    let w = MatRef::new(weight, s.cout, s.taps(), s.taps());
    for b0 in (0..s.batch).step_by(chunk) {
        let b1 = (b0 + chunk).min(s.batch);
        let nc = (b1 - b0) * hw;
        im2col(x, s, b0, b1, col);
        gemm(
            T::one(),
            w,
            MatRef::new(col, s.taps(), nc, nc),
            T::zero(),
            MatMut::new(&mut out[b0 * hw..], s.cout, nc, n),
        );
    }
    for (plane, &b) in out.chunks_exact_mut(n).zip(bias) {
        for v in plane {
            *v = (*v + b).max(T::zero());
        }
    }
    out
}

/// Backward pass of [`conv_forward`]. `dy` holds the gradient w.r.t. the
/// post-ReLU output and is overwritten with the pre-activation gradient.
/// Parameter gradients are accumulated; `dx`, if given, is accumulated too.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_backward<T: Scalar>(
    x: &[T],
    y: &[T],
    dy: &mut [T],
    weight: &[T],
    s: ConvShape,
    dweight: &mut [T],
    dbias: &mut [T],
    mut dx: Option<&mut [T]>,
    col: &mut Vec<T>,
    dcol: &mut Vec<T>,
) {
    let hw = s.plane();
    let n = s.batch * hw;
    for (g, &out) in dy.iter_mut().zip(y) {
        if out <= T::zero() {
            *g = T::zero();
        }
    }
    for (plane, db) in dy.chunks_exact(n).zip(dbias.iter_mut()) {
        *db += plane.iter().fold(T::zero(), |a, &v| a + v);
    }
    let chunk = s.chunk();
    let taps = s.taps();
    for b0 in (0..s.batch).step_by(chunk) {
        let b1 = (b0 + chunk).min(s.batch);
        let nc = (b1 - b0) * hw;
        im2col(x, s, b0, b1, col);
        let g = MatRef::new(&dy[b0 * hw..], s.cout, nc, n);
        gemm(
            T::one(),
            g,
            MatRef::new(col, taps, nc, nc).t(),
            T::one(),
            MatMut::new(dweight, s.cout, taps, taps),
        );
        if let Some(dx) = dx.as_deref_mut() {
            dcol.clear();
            dcol.resize(taps * nc, T::zero());
            gemm(
                T::one(),
                MatRef::new(weight, s.cout, taps, taps).t(),
                g,
                T::zero(),
                MatMut::new(dcol, taps, nc, nc),
            );
            col2im(dcol, s, b0, b1, dx);
        }
    }
}

/// 2x2 max pooling with stride 2 over every `h x w` plane.
pub(crate) fn pool_forward<T: Scalar>(x: &[T], planes: usize, h: usize, w: usize) -> Vec<T> {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(planes * oh * ow);
    for p in x.chunks_exact(h * w).take(planes) {
        for oy in 0..oh {
            let (r0, r1) = (&p[2 * oy * w..][..w], &p[(2 * oy + 1) * w..][..w]);
            for ox in 0..ow {
                let m = r0[2 * ox].max(r0[2 * ox + 1]).max(r1[2 * ox].max(r1[2 * ox + 1]));
                out.push(m);
            }
        }
    }
    out
}

/// Routes each pooled gradient to the first maximal input of its window.
pub(crate) fn pool_backward<T: Scalar>(x: &[T], dy: &[T], planes: usize, h: usize, w: usize) -> Vec<T> {
    let (oh, ow) = (h / 2, w / 2);
    let mut dx = vec![T::zero(); planes * h * w];
    for p in 0..planes {
        let xp = &x[p * h * w..][..h * w];
        let dxp = &mut dx[p * h * w..][..h * w];
        for oy in 0..oh {
            for ox in 0..ow {
                let candidates = [
                    2 * oy * w + 2 * ox,
                    2 * oy * w + 2 * ox + 1,
                    (2 * oy + 1) * w + 2 * ox,
                    (2 * oy + 1) * w + 2 * ox + 1,
                ];
                let mut best = candidates[0];
                for &c in &candidates[1..] {
                    if xp[c] > xp[best] {
                        best = c;
                    }
                }
                dxp[best] += dy[(p * oh + oy) * ow + ox];
            }
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct nested-loop convolution used as an oracle.
    fn conv_naive(x: &[f64], weight: &[f64], bias: &[f64], s: ConvShape) -> Vec<f64> {
        let (h, w) = (s.height, s.width);
        let mut out = vec![0.0; s.cout * s.batch * h * w];
        for co in 0..s.cout {
            for b in 0..s.batch {
                for y in 0..h {
                    for xx in 0..w {
                        let mut acc = bias[co];
                        for ci in 0..s.cin {
                            for ky in 0..3 {
                                for kx in 0..3 {
                                    let (sy, sx) = (y as isize + ky as isize - 1, xx as isize + kx as isize - 1);
                                    if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                                        continue;
                                    }
                                    let v = x[((ci * s.batch + b) * h + sy as usize) * w + sx as usize];
                                    acc += v * weight[((co * s.cin + ci) * 3 + ky) * 3 + kx];
                                }
                            }
                        }
                        out[((co * s.batch + b) * h + y) * w + xx] = acc.max(0.0);
                    }
                }
            }
        }
        out
    }

    fn pseudo(n: usize, seed: u64) -> Vec<f64> {
        use rand::Rng as _;
        let mut rng = crate::rng::rng_from_seed(seed);
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn conv_matches_naive() {
        let s = ConvShape { cin: 3, cout: 4, batch: 5, height: 6, width: 7 };
        let x = pseudo(s.cin * s.batch * 42, 1);
        let wt = pseudo(s.cout * s.cin * 9, 2);
        let b = pseudo(s.cout, 3);
        let got = conv_forward(&x, &wt, &b, s, &mut Vec::new());
        let want = conv_naive(&x, &wt, &b, s);
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-12);
        }
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        // <im2col(x), c> == <x, col2im(c)> for arbitrary x and c.
        let s = ConvShape { cin: 2, cout: 1, batch: 3, height: 4, width: 5 };
        let x = pseudo(s.cin * s.batch * 20, 4);
        let mut col = Vec::new();
        im2col(&x, s, 0, 3, &mut col);
        let c = pseudo(col.len(), 5);
        let lhs: f64 = col.iter().zip(&c).map(|(a, b)| a * b).sum();
        let mut back = vec![0.0; x.len()];
        col2im(&c, s, 0, 3, &mut back);
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn pooling_picks_window_maxima() {
        let x: Vec<f64> = (0..16).map(|v| v as f64).collect();
        let y = pool_forward(&x, 1, 4, 4);
        assert_eq!(y, vec![5.0, 7.0, 13.0, 15.0]);
        let dx = pool_backward(&x, &[1.0, 2.0, 3.0, 4.0], 1, 4, 4);
        assert_eq!(dx[5], 1.0);
        assert_eq!(dx[15], 4.0);
        assert_eq!(dx.iter().sum::<f64>(), 10.0);
    }

    #[test]
    fn pooling_ties_route_to_first() {
        let x = vec![1.0f64; 4];
        let dx = pool_backward(&x, &[1.0], 1, 2, 2);
        assert_eq!(dx, vec![1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn gemm_transposed_views() {
        // a: 2x3, b stored as 2x3 used transposed -> 2x2.
        let a = [1.0f64, 2.0, 3.0, 4.0, 5.0, 6.0];
        let b = [1.0f64, 0.0, 1.0, 0.0, 1.0, 0.0];
        let mut c = [0.0f64; 4];
        gemm(1.0, MatRef::new(&a, 2, 3, 3), MatRef::new(&b, 2, 3, 3).t(), 0.0, MatMut::new(&mut c, 2, 2, 2));
        assert_eq!(c, [4.0, 2.0, 10.0, 5.0]);
    }
}
