//! Raw compute kernels shared by the autodiff ops. All buffers are row-major.

/// `c = alpha * op(a) * op(b) + beta * c` where `op(a)` is `m x k` and `op(b)` is `k x n`.
///
/// `a_t` / `b_t` mean the operand is stored transposed (`k x m` / `n x k`).
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f32,
    a: &[f32],
    a_t: bool,
    b: &[f32],
    b_t: bool,
    beta: f32,
    c: &mut [f32],
) {
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the slices cover the full strided extents asserted above and `c`
    // does not alias `a` or `b` (distinct borrows).
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Geometry of a square-kernel strided convolution over one image.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeom {
    pub fn new(channels: usize, height: usize, width: usize, kernel: usize, stride: usize, pad: usize) -> Self {
        let out_h = (height + 2 * pad - kernel) / stride + 1;
        let out_w = (width + 2 * pad - kernel) / stride + 1;
        Self {
            channels,
            height,
            width,
            kernel,
            stride,
            pad,
            out_h,
            out_w,
        }
    }

    pub fn col_rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    pub fn col_cols(&self) -> usize {
        self.out_h * self.out_w
    }

    /// Output positions `lo..hi` whose source index `o*stride + k - pad` lies in `0..limit`.
    #[inline]
    fn valid_range(&self, k: usize, limit: usize, out: usize) -> (usize, usize) {
        let lo = self.pad.saturating_sub(k).div_ceil(self.stride);
        let hi = if limit + self.pad > k {
            ((limit + self.pad - k - 1) / self.stride + 1).min(out)
        } else {
            0
        };
        (lo.min(hi), hi)
    }

    #[inline]
    fn src_index(&self, o: usize, k: usize, limit: usize) -> Option<usize> {
        let i = (o * self.stride + k) as isize - self.pad as isize;
        if i >= 0 && (i as usize) < limit {
            Some(i as usize)
        } else {
            None
        }
    }
}

/// Unfold one `C x H x W` image into a `(C*k*k) x (oh*ow)` patch matrix
/// whose rows start `ld` elements apart.
pub(crate) fn im2col(x: &[f32], g: &ConvGeom, cols: &mut [f32], ld: usize) {
    let plane = g.out_h * g.out_w;
    let k = g.kernel;
    for c in 0..g.channels {
        let src = &x[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let dst = &mut cols[row * ld..row * ld + plane];
                let (lo, hi) = g.valid_range(kx, g.width, g.out_w);
                for oy in 0..g.out_h {
                    let line = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                    match g.src_index(oy, ky, g.height) {
                        None => line.fill(0.0),
                        Some(iy) => {
                            let srow = &src[iy * g.width..(iy + 1) * g.width];
                            line[..lo].fill(0.0);
                            line[hi..].fill(0.0);
                            if lo == hi {
                                continue;
                            }
                            let start = lo * g.stride + kx - g.pad;
                            for (v, &sv) in line[lo..hi].iter_mut().zip(srow[start..].iter().step_by(g.stride)) {
                                *v = sv;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-add a patch matrix back into an image buffer.
pub(crate) fn col2im(cols: &[f32], g: &ConvGeom, x: &mut [f32], ld: usize) {
    let plane = g.out_h * g.out_w;
    let k = g.kernel;
    for c in 0..g.channels {
        let dst = &mut x[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let src = &cols[row * ld..row * ld + plane];
                let (lo, hi) = g.valid_range(kx, g.width, g.out_w);
                for oy in 0..g.out_h {
                    let Some(iy) = g.src_index(oy, ky, g.height).filter(|_| lo < hi) else {
                        continue;
                    };
                    let drow = &mut dst[iy * g.width..(iy + 1) * g.width];
                    let sline = &src[oy * g.out_w..(oy + 1) * g.out_w];
                    let start = lo * g.stride + kx - g.pad;
                    for (d, &v) in drow[start..].iter_mut().step_by(g.stride).zip(&sline[lo..hi]) {
                        *d += v;
                    }
                }
            }
        }
    }
}

/// Patch matrix of a whole batch: `(C*k*k) x (n*oh*ow)`, sample `s` in
/// columns `s*oh*ow ..`.
pub(crate) fn im2col_batch(x: &[f32], n: usize, g: &ConvGeom, cols: &mut [f32]) {
    let plane = g.col_cols();
    let in_len = g.channels * g.height * g.width;
    for s in 0..n {
        im2col(&x[s * in_len..(s + 1) * in_len], g, &mut cols[s * plane..], n * plane);
    }
}

/// Adjoint of [`im2col_batch`], accumulating into `x`.
pub(crate) fn col2im_batch(cols: &[f32], n: usize, g: &ConvGeom, x: &mut [f32]) {
    let plane = g.col_cols();
    let in_len = g.channels * g.height * g.width;
    for s in 0..n {
        col2im(&cols[s * plane..], g, &mut x[s * in_len..(s + 1) * in_len], n * plane);
    }
}

/// `[n, c, plane]` to channel-major `[c, n*plane]`.
pub(crate) fn to_channel_major(x: &[f32], n: usize, c: usize, plane: usize) -> Vec<f32> {
    let mut out = vec![0f32; x.len()];
    for s in 0..n {
        for ch in 0..c {
            let src = &x[(s * c + ch) * plane..(s * c + ch + 1) * plane];
            out[(ch * n + s) * plane..(ch * n + s + 1) * plane].copy_from_slice(src);
        }
    }
    out
}

/// Inverse of [`to_channel_major`], adding into `out`.
pub(crate) fn add_from_channel_major(x: &[f32], n: usize, c: usize, plane: usize, out: &mut [f32]) {
    for s in 0..n {
        for ch in 0..c {
            let src = &x[(ch * n + s) * plane..(ch * n + s + 1) * plane];
            for (o, v) in out[(s * c + ch) * plane..(s * c + ch + 1) * plane].iter_mut().zip(src) {
                *o += v;
            }
        }
    }
}

/// Mirror index into `0..n` without repeating the edge sample.
pub(crate) fn reflect_index(i: usize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let r = i % period;
    if r < n {
        r
    } else {
        period - r
    }
}

/// Valid-mode separable blur of a single `h x w` plane with a 1-D kernel
/// applied along both axes. Output is `(h-k+1) x (w-k+1)`.
pub(crate) fn blur_valid_plane(src: &[f32], h: usize, w: usize, kern: &[f32], dst: &mut [f32]) {
    let k = kern.len();
    let ow = w + 1 - k;
    let oh = h + 1 - k;
    let mut tmp = vec![0f32; h * ow];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for x in 0..ow {
            let mut acc = 0f32;
            for (t, &kv) in kern.iter().enumerate() {
                acc += kv * row[x + t];
            }
            tmp[y * ow + x] = acc;
        }
    }
    for y in 0..oh {
        let out = &mut dst[y * ow..(y + 1) * ow];
        out.fill(0.0);
        for (t, &kv) in kern.iter().enumerate() {
            let trow = &tmp[(y + t) * ow..(y + t + 1) * ow];
            for (o, &v) in out.iter_mut().zip(trow) {
                *o += kv * v;
            }
        }
    }
}

/// Adjoint of [`blur_valid_plane`], accumulating into `dsrc`.
pub(crate) fn blur_valid_plane_adjoint(dout: &[f32], h: usize, w: usize, kern: &[f32], dsrc: &mut [f32]) {
    let k = kern.len();
    let ow = w + 1 - k;
    let oh = h + 1 - k;
    let mut dtmp = vec![0f32; h * ow];
    for y in 0..oh {
        let grow = &dout[y * ow..(y + 1) * ow];
        for (t, &kv) in kern.iter().enumerate() {
            let trow = &mut dtmp[(y + t) * ow..(y + t + 1) * ow];
            for (d, &g) in trow.iter_mut().zip(grow) {
                *d += kv * g;
            }
        }
    }
    for y in 0..h {
        let row = &mut dsrc[y * w..(y + 1) * w];
        for x in 0..ow {
            let g = dtmp[y * ow + x];
            for (t, &kv) in kern.iter().enumerate() {
                row[x + t] += kv * g;
            }
        }
    }
}

/// Normalized 1-D Gaussian window.
pub fn gaussian_window(size: usize, sigma: f64) -> Vec<f32> {
    let c = (size / 2) as f64;
    let raw: Vec<f64> = (0..size)
        .map(|i| {
            let d = i as f64 - c;
            (-(d * d) / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| (v / s) as f32).collect()
}
