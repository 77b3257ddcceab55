//! Raw numeric kernels over planar `[C, H, W]` buffers.
//!
//! These are shared by the tape ops and by the non-differentiable code paths
//! (true degradation models, metrics), so both compute bit-identical values.

// Lowers `x: [cin, h, w]` to `[cin * k * k, h * w]` patch columns (zero padded).
fn im2col(x: &[f64], cin: usize, k: usize, h: usize, w: usize) -> Vec<f64> {
    let plane = h * w;
    let pad = k / 2;
    let mut col = vec![0.0; cin * k * k * plane];
    for ci in 0..cin {
        let src = &x[ci * plane..(ci + 1) * plane];
        for ky in 0..k {
            for kx in 0..k {
                let row = &mut col[((ci * k + ky) * k + kx) * plane..][..plane];
                let (x0, x1) = valid_range(kx, pad, w);
                let (y0, y1) = valid_range(ky, pad, h);
                for y in y0..y1 {
                    let sy = y + ky - pad;
                    row[y * w + x0..y * w + x1].copy_from_slice(&src[sy * w + x0 + kx - pad..sy * w + x1 + kx - pad]);
                }
            }
        }
    }
    col
}

// Adjoint of `im2col`: scatter-adds patch columns back onto the image.
fn col2im(col: &[f64], cin: usize, k: usize, h: usize, w: usize) -> Vec<f64> {
    let plane = h * w;
    let pad = k / 2;
    let mut x = vec![0.0; cin * plane];
    for ci in 0..cin {
        let dst = &mut x[ci * plane..(ci + 1) * plane];
        for ky in 0..k {
            for kx in 0..k {
                let row = &col[((ci * k + ky) * k + kx) * plane..][..plane];
                let (x0, x1) = valid_range(kx, pad, w);
                let (y0, y1) = valid_range(ky, pad, h);
                for y in y0..y1 {
                    let sy = y + ky - pad;
                    let d = &mut dst[sy * w + x0 + kx - pad..sy * w + x1 + kx - pad];
                    for (dv, sv) in d.iter_mut().zip(&row[y * w + x0..y * w + x1]) {
                        *dv += sv;
                    }
                }
            }
        }
    }
    x
}

/// `c = a b` for row-major `a: [m, k]` (or its transpose when `ta`) and
/// `b: [k, n]` (or its transpose when `tb`).
fn gemm(a: &[f64], ta: bool, b: &[f64], tb: bool, m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: strides describe in-bounds views of `a` ([m, k]), `b` ([k, n])
    // and `c` ([m, n]); the slices outlive the call and `c` does not alias.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
    c
}

/// 3x3 or 1x1 convolution, stride 1, zero padding.
/// `x`: [cin, h, w], `wt`: [cout, cin, k, k] -> [cout, h, w].
pub fn conv2d(x: &[f64], wt: &[f64], cin: usize, cout: usize, k: usize, h: usize, w: usize) -> Vec<f64> {
    let kk = cin * k * k;
    if k == 1 {
        return gemm(wt, false, x, false, cout, kk, h * w);
    }
    gemm(wt, false, &im2col(x, cin, k, h, w), false, cout, kk, h * w)
}

/// Gradient of `conv2d` with respect to its input.
pub fn conv2d_grad_input(g: &[f64], wt: &[f64], cin: usize, cout: usize, k: usize, h: usize, w: usize) -> Vec<f64> {
    let cols = gemm(wt, true, g, false, cin * k * k, cout, h * w);
    if k == 1 {
        return cols;
    }
    col2im(&cols, cin, k, h, w)
}

/// Gradient of `conv2d` with respect to its filter bank.
pub fn conv2d_grad_weight(g: &[f64], x: &[f64], cin: usize, cout: usize, k: usize, h: usize, w: usize) -> Vec<f64> {
    let kk = cin * k * k;
    if k == 1 {
        return gemm(g, false, x, true, cout, h * w, kk);
    }
    gemm(g, false, &im2col(x, cin, k, h, w), true, cout, h * w, kk)
}

// Output positions whose tap `kk` lands inside [0, n).
#[inline]
fn valid_range(kk: usize, pad: usize, n: usize) -> (usize, usize) {
    let lo = pad.saturating_sub(kk);
    let hi = (n + pad).saturating_sub(kk).min(n);
    (lo, hi.max(lo))
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    // four accumulators so the loop vectorizes; order is fixed
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        for j in 0..4 {
            acc[j] += a[4 * i + j] * b[4 * i + j];
        }
    }
    let mut tail = 0.0;
    for i in chunks * 4..a.len() {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Mean over non-overlapping `f`x`f` windows. `h` and `w` must be multiples of `f`.
pub fn avg_pool(x: &[f64], c: usize, h: usize, w: usize, f: usize) -> Vec<f64> {
    let (oh, ow) = (h / f, w / f);
    let norm = 1.0 / (f * f) as f64;
    let mut out = vec![0.0; c * oh * ow];
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = 0.0;
                for dy in 0..f {
                    let row = (ch * h + oy * f + dy) * w + ox * f;
                    for dx in 0..f {
                        acc += x[row + dx];
                    }
                }
                out[(ch * oh + oy) * ow + ox] = acc * norm;
            }
        }
    }
    out
}

pub fn avg_pool_grad(g: &[f64], c: usize, h: usize, w: usize, f: usize) -> Vec<f64> {
    let (oh, ow) = (h / f, w / f);
    let norm = 1.0 / (f * f) as f64;
    let mut gx = vec![0.0; c * h * w];
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                gx[(ch * h + y) * w + x] = g[(ch * oh + y / f) * ow + x / f] * norm;
            }
        }
    }
    gx
}

/// Nearest-neighbour upsampling by integer factor `f`.
pub fn upsample_nearest(x: &[f64], c: usize, h: usize, w: usize, f: usize) -> Vec<f64> {
    let (oh, ow) = (h * f, w * f);
    let mut out = vec![0.0; c * oh * ow];
    for ch in 0..c {
        for y in 0..oh {
            for xo in 0..ow {
                out[(ch * oh + y) * ow + xo] = x[(ch * h + y / f) * w + xo / f];
            }
        }
    }
    out
}

pub fn upsample_nearest_grad(g: &[f64], c: usize, h: usize, w: usize, f: usize) -> Vec<f64> {
    let (oh, ow) = (h * f, w * f);
    let mut gx = vec![0.0; c * h * w];
    for ch in 0..c {
        for y in 0..oh {
            for xo in 0..ow {
                gx[(ch * h + y / f) * w + xo / f] += g[(ch * oh + y) * ow + xo];
            }
        }
    }
    gx
}

/// `[m, k] x [k, n]`.
pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            for (o, bv) in row.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *o += av * bv;
            }
        }
    }
    out
}

pub fn transpose(a: &[f64], m: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = a[i * n + j];
        }
    }
    out
}

/// Divides each spatial site's channel vector by `sqrt(sum of squares + eps)`.
pub fn channel_l2_normalize(x: &[f64], c: usize, plane: usize, eps: f64) -> (Vec<f64>, Vec<f64>) {
    let mut norms = vec![eps; plane];
    for ch in 0..c {
        for (n, v) in norms.iter_mut().zip(&x[ch * plane..(ch + 1) * plane]) {
            *n += v * v;
        }
    }
    for n in norms.iter_mut() {
        *n = n.sqrt();
    }
    let mut out = vec![0.0; c * plane];
    for ch in 0..c {
        for p in 0..plane {
            out[ch * plane + p] = x[ch * plane + p] / norms[p];
        }
    }
    (out, norms)
}

pub fn channel_l2_normalize_grad(g: &[f64], y: &[f64], norms: &[f64], c: usize, plane: usize) -> Vec<f64> {
    let mut proj = vec![0.0; plane];
    for ch in 0..c {
        for p in 0..plane {
            proj[p] += g[ch * plane + p] * y[ch * plane + p];
        }
    }
    let mut gx = vec![0.0; c * plane];
    for ch in 0..c {
        for p in 0..plane {
            let i = ch * plane + p;
            gx[i] = (g[i] - y[i] * proj[p]) / norms[p];
        }
    }
    gx
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_conv(x: &[f64], wt: &[f64], cin: usize, cout: usize, k: usize, h: usize, w: usize) -> Vec<f64> {
        let pad = k as isize / 2;
        let mut out = vec![0.0; cout * h * w];
        for co in 0..cout {
            for y in 0..h {
                for xx in 0..w {
                    let mut acc = 0.0;
                    for ci in 0..cin {
                        for ky in 0..k {
                            for kx in 0..k {
                                let sy = y as isize + ky as isize - pad;
                                let sx = xx as isize + kx as isize - pad;
                                if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                                    continue;
                                }
                                acc += wt[((co * cin + ci) * k + ky) * k + kx]
                                    * x[(ci * h + sy as usize) * w + sx as usize];
                            }
                        }
                    }
                    out[(co * h + y) * w + xx] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_naive_loop() {
        let (cin, cout, h, w) = (3, 4, 5, 7);
        let x: Vec<f64> = (0..cin * h * w).map(|i| ((i * 37) % 11) as f64 - 5.0).collect();
        for k in [1, 3] {
            let wt: Vec<f64> = (0..cout * cin * k * k)
                .map(|i| ((i * 13) % 7) as f64 * 0.25 - 0.7)
                .collect();
            let fast = conv2d(&x, &wt, cin, cout, k, h, w);
            let slow = naive_conv(&x, &wt, cin, cout, k, h, w);
            for (a, b) in fast.iter().zip(&slow) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn identity_filter_bank_is_identity() {
        let (c, h, w) = (3, 4, 4);
        let x: Vec<f64> = (0..c * h * w).map(|i| i as f64 * 0.1).collect();
        let mut wt = vec![0.0; c * c];
        for i in 0..c {
            wt[i * c + i] = 1.0;
        }
        assert_eq!(conv2d(&x, &wt, c, c, 1, h, w), x);
    }

    #[test]
    fn pool_of_two_by_two() {
        assert_eq!(avg_pool(&[1.0, 3.0, 5.0, 7.0], 1, 2, 2, 2), vec![4.0]);
    }
}
