//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use robust_inversion::degrade::jpeg::{jpeg_true, quant_tables, quantize_block};
use robust_inversion::degrade::noise::noise_true;
use robust_inversion::rng::Stream;
use robust_inversion::{Image, Tensor};

pub struct Check {
    pub ok: bool,
    pub detail: String,
}

impl Check {
    pub fn new(ok: bool, detail: impl Into<String>) -> Self {
        Self {
            ok,
            detail: detail.into(),
        }
    }

    pub fn all(parts: Vec<Check>) -> Check {
        let ok = parts.iter().all(|c| c.ok);
        let detail = parts
            .iter()
            .map(|c| format!("{}{}", if c.ok { "" } else { "!" }, c.detail))
            .collect::<Vec<_>>()
            .join("; ");
        Check { ok, detail }
    }
}

#[rustfmt::skip]
const LUMA: [i64; 64] = [
    16, 11, 10, 16, 24, 40, 51, 61, 12, 12, 14, 19, 26, 58, 60, 55,
    14, 13, 16, 24, 40, 57, 69, 56, 14, 17, 22, 29, 51, 87, 80, 62,
    18, 22, 37, 56, 68, 109, 103, 77, 24, 35, 55, 64, 81, 104, 113, 92,
    49, 64, 78, 87, 103, 121, 120, 101, 72, 92, 95, 98, 112, 100, 103, 99,
];

fn chroma_base(i: usize) -> i64 {
    const TOP: [[i64; 4]; 4] = [[17, 18, 24, 47], [18, 21, 26, 66], [24, 26, 56, 99], [47, 66, 99, 99]];
    let (r, c) = (i / 8, i % 8);
    if r < 4 && c < 4 {
        TOP[r][c]
    } else {
        99
    }
}

pub fn oracle_table(quality: i64, chroma: bool) -> [f64; 64] {
    let scale = if quality < 50 {
        5000 / quality
    } else {
        200 - 2 * quality
    };
    let mut t = [0.0; 64];
    for (i, v) in t.iter_mut().enumerate() {
        let base = if chroma { chroma_base(i) } else { LUMA[i] };
        *v = ((base * scale + 50) / 100).clamp(1, 255) as f64;
    }
    t
}

fn cu(u: usize) -> f64 {
    if u == 0 {
        std::f64::consts::FRAC_1_SQRT_2
    } else {
        1.0
    }
}

fn cosine(x: usize, u: usize) -> f64 {
    (((2 * x + 1) * u) as f64 * std::f64::consts::PI / 16.0).cos()
}

/// Textbook quadruple-sum forward DCT.
pub fn oracle_fdct(f: &[f64; 64]) -> [f64; 64] {
    let mut out = [0.0; 64];
    for v in 0..8 {
        for u in 0..8 {
            let mut s = 0.0;
            for y in 0..8 {
                for x in 0..8 {
                    s += f[y * 8 + x] * cosine(x, u) * cosine(y, v);
                }
            }
            out[v * 8 + u] = 0.25 * cu(u) * cu(v) * s;
        }
    }
    out
}

pub fn oracle_idct(c: &[f64; 64]) -> [f64; 64] {
    let mut out = [0.0; 64];
    for y in 0..8 {
        for x in 0..8 {
            let mut s = 0.0;
            for v in 0..8 {
                for u in 0..8 {
                    s += cu(u) * cu(v) * c[v * 8 + u] * cosine(x, u) * cosine(y, v);
                }
            }
            out[y * 8 + x] = 0.25 * s;
        }
    }
    out
}

fn round_half_away(x: f64) -> f64 {
    x.signum() * (x.abs() + 0.5).floor()
}

// For u, v in {0, 4} every basis value is +-1/sqrt(8), so on integer
// blocks those coefficients are exactly S/8 and may sit on a rounding tie.
fn exact_coefficient(f: &[f64; 64], u: usize, v: usize, q: f64) -> Option<i32> {
    if !(u.is_multiple_of(4) && v.is_multiple_of(4)) || f.iter().any(|p| p.fract() != 0.0) {
        return None;
    }
    let sign = |k: usize, x: usize| if k == 0 || matches!(x, 0 | 3 | 4 | 7) { 1 } else { -1 };
    let mut s: i64 = 0;
    for y in 0..8 {
        for x in 0..8 {
            s += sign(u, x) * sign(v, y) * f[y * 8 + x] as i64;
        }
    }
    // round(s / (8 q)) with halves away from zero, in integers
    let d = 8 * q as i64;
    let r = (2 * s.abs() + d) / (2 * d);
    Some((s.signum() * r) as i32)
}

pub fn oracle_quantize(f: &[f64; 64], table: &[f64; 64]) -> [i32; 64] {
    let c = oracle_fdct(f);
    let mut q = [0; 64];
    for i in 0..64 {
        let (v, u) = (i / 8, i % 8);
        q[i] = exact_coefficient(f, u, v, table[i]).unwrap_or_else(|| round_half_away(c[i] / table[i]) as i32);
    }
    q
}

/// Whole lossy chain, one pixel and one block at a time. H and W must be
/// multiples of 16.
pub fn oracle_jpeg(img: &Image, quality: i64) -> Image {
    let (h, w) = (img.height(), img.width());
    assert!(h % 16 == 0 && w % 16 == 0);
    let px = |c: usize, y: usize, x: usize| 255.0 * img.get(c, y, x);
    let mut planes = [vec![0.0; h * w], vec![0.0; h * w / 2], vec![0.0; h * w / 2]];
    for y in 0..h {
        for x in 0..w {
            let (r, g, b) = (px(0, y, x), px(1, y, x), px(2, y, x));
            planes[0][y * w + x] = 0.299 * r + 0.587 * g + 0.114 * b - 128.0;
        }
        for x in 0..w / 2 {
            let mut cb = 0.0;
            let mut cr = 0.0;
            for dx in 0..2 {
                let (r, g, b) = (px(0, y, 2 * x + dx), px(1, y, 2 * x + dx), px(2, y, 2 * x + dx));
                cb += -0.168736 * r - 0.331264 * g + 0.5 * b;
                cr += 0.5 * r - 0.418688 * g - 0.081312 * b;
            }
            planes[1][y * w / 2 + x] = cb / 2.0;
            planes[2][y * w / 2 + x] = cr / 2.0;
        }
    }
    for (p, plane) in planes.iter_mut().enumerate() {
        let pw = if p == 0 { w } else { w / 2 };
        let table = oracle_table(quality, p > 0);
        for by in (0..h).step_by(8) {
            for bx in (0..pw).step_by(8) {
                let mut block = [0.0; 64];
                for i in 0..64 {
                    block[i] = plane[(by + i / 8) * pw + bx + i % 8];
                }
                let q = oracle_quantize(&block, &table);
                let mut deq = [0.0; 64];
                for i in 0..64 {
                    deq[i] = q[i] as f64 * table[i];
                }
                let rec = oracle_idct(&deq);
                for i in 0..64 {
                    plane[(by + i / 8) * pw + bx + i % 8] = rec[i];
                }
            }
        }
    }
    let mut out = vec![0.0; 3 * h * w];
    for y in 0..h {
        for x in 0..w {
            let yy = planes[0][y * w + x];
            let cb = planes[1][y * w / 2 + x / 2];
            let cr = planes[2][y * w / 2 + x / 2];
            let rgb = [yy + 1.402 * cr, yy - 0.344136 * cb - 0.714136 * cr, yy + 1.772 * cb];
            for c in 0..3 {
                out[(c * h + y) * w + x] = ((rgb[c] + 128.0) / 255.0).clamp(0.0, 1.0);
            }
        }
    }
    Image::from_tensor(Tensor::new(&[3, h, w], out).unwrap()).unwrap()
}

pub fn random_image(h: usize, w: usize, stream: &mut Stream) -> Image {
    let data = (0..3 * h * w).map(|_| stream.uniform()).collect();
    Image::from_tensor(Tensor::new(&[3, h, w], data).unwrap()).unwrap()
}

/// Quantized coefficients of 1000 continuous random blocks must match the
/// oracle exactly. On 1000 8-bit blocks, where exact halves are common, the
/// coefficients the oracle computes in integers must match too.
pub fn jpeg_blocks_exact(seed: u64) -> Check {
    let mut s = Stream::new(seed);
    let (mut continuous, mut integer) = (0, 0);
    for i in 0..2000 {
        let quality = [6, 9, 12, 15, 18, 50, 90][i % 7];
        let chroma = i % 2 == 1;
        let tables = quant_tables(quality).unwrap();
        let table = if chroma { tables.chroma } else { tables.luma };
        let oracle_table = oracle_table(quality, chroma);
        let eight_bit = i >= 1000;
        let mut block = [0.0; 64];
        for v in block.iter_mut() {
            *v = if eight_bit {
                (s.below(256) as f64) - 128.0
            } else {
                255.0 * s.uniform() - 128.0
            };
        }
        let ours = quantize_block(&block, &table);
        if eight_bit {
            let exact =
                (0..64).filter_map(|k| exact_coefficient(&block, k % 8, k / 8, oracle_table[k]).map(|q| (k, q)));
            if exact.into_iter().any(|(k, q)| ours[k] != q) {
                integer += 1;
            }
        } else if ours != oracle_quantize(&block, &oracle_table) {
            continuous += 1;
        }
    }
    Check::new(
        continuous + integer == 0,
        format!("jpeg blocks: {continuous}/1000 continuous, {integer}/1000 8-bit mismatched"),
    )
}

/// Full chain against the scalar oracle over 1008 luma blocks.
pub fn jpeg_chain_matches(seed: u64) -> Check {
    let mut s = Stream::new(seed);
    let mut worst: f64 = 0.0;
    for i in 0..63 {
        let img = random_image(32, 32, &mut s);
        let quality = [6, 12, 18][i % 3];
        let ours = jpeg_true(&img, quality).unwrap();
        worst = worst.max(ours.max_abs_diff(&oracle_jpeg(&img, quality)));
    }
    Check::new(worst < 1e-9, format!("jpeg chain max diff {worst:.1e}"))
}

pub const N_SAMPLES: usize = 1_000_000;

/// Sample mean within 3 sigma / sqrt(N) of lambda for each rate.
pub fn poisson_means(seed: u64) -> Check {
    let mut parts = Vec::new();
    for (i, &lambda) in [0.5, 6.0, 12.0, 48.0, 96.0].iter().enumerate() {
        let mut s = Stream::new(seed ^ i as u64);
        let sum: u64 = (0..N_SAMPLES).map(|_| s.poisson(lambda)).sum();
        let mean = sum as f64 / N_SAMPLES as f64;
        let bound = 3.0 * lambda.sqrt() / (N_SAMPLES as f64).sqrt();
        parts.push(Check::new(
            (mean - lambda).abs() <= bound,
            format!("poisson({lambda}) mean {mean:.4}"),
        ));
    }
    Check::all(parts)
}

/// Dead-pixel rate of the true noise model within a 99.9% binomial interval.
pub fn kill_rate(seed: u64) -> Check {
    let side = 1000;
    let img = Image::filled(side, side, 1.0);
    let mut parts = Vec::new();
    for k_b in [0.04, 0.32] {
        let out = noise_true(&img, 96.0, k_b, seed).unwrap();
        let plane = side * side;
        let d = out.data();
        let killed = (0..plane).filter(|&p| (0..3).all(|c| d[c * plane + p] == 0.0)).count();
        let rate = killed as f64 / plane as f64;
        let half = 3.29 * (k_b * (1.0 - k_b) / plane as f64).sqrt();
        parts.push(Check::new(
            (rate - k_b).abs() <= half,
            format!("kill rate {rate:.5} vs {k_b}"),
        ));
    }
    Check::all(parts)
}
