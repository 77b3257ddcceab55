//! The lossy half of baseline JPEG: BT.601 full-range YCbCr, 4:2:2
//! horizontal chroma subsampling, 8x8 level-shifted orthonormal DCT,
//! quantization with round-half-away-from-zero, and the inverse chain.
//! Entropy coding is lossless and omitted.
//!
//! [`jpeg_graph`] builds the chain on the tape. The true model evaluates the
//! same graph on a constant input, so the approximate and true forwards are
//! identical; only the backward pass of rounding differs.

use std::sync::OnceLock;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::tape::{Graph, Surrogate, Var};
use crate::tensor::Tensor;

/// Interpolation weight of the straight-through rounding estimator.
pub const ROUND_ALPHA: f64 = 0.8;

#[rustfmt::skip]
const LUMA_BASE: [u16; 64] = [
    16, 11, 10, 16, 24, 40, 51, 61,
    12, 12, 14, 19, 26, 58, 60, 55,
    14, 13, 16, 24, 40, 57, 69, 56,
    14, 17, 22, 29, 51, 87, 80, 62,
    18, 22, 37, 56, 68, 109, 103, 77,
    24, 35, 55, 64, 81, 104, 113, 92,
    49, 64, 78, 87, 103, 121, 120, 101,
    72, 92, 95, 98, 112, 100, 103, 99,
];

#[rustfmt::skip]
const CHROMA_BASE: [u16; 64] = [
    17, 18, 24, 47, 99, 99, 99, 99,
    18, 21, 26, 66, 99, 99, 99, 99,
    24, 26, 56, 99, 99, 99, 99, 99,
    47, 66, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99,
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QuantTables {
    pub luma: [u16; 64],
    pub chroma: [u16; 64],
}

pub(crate) fn check_quality(q: i64) -> Result<()> {
    if !(1..=100).contains(&q) {
        return Err(Error::invalid(format!("JPEG quality {q} outside [1, 100]")));
    }
    Ok(())
}

/// Annex K tables scaled with the usual quality mapping.
pub fn quant_tables(quality: i64) -> Result<QuantTables> {
    check_quality(quality)?;
    let scale = if quality < 50 {
        5000 / quality
    } else {
        200 - 2 * quality
    };
    let scaled = |base: &[u16; 64]| {
        let mut t = [0u16; 64];
        for (o, &b) in t.iter_mut().zip(base) {
            *o = ((b as i64 * scale + 50) / 100).clamp(1, 255) as u16;
        }
        t
    };
    Ok(QuantTables {
        luma: scaled(&LUMA_BASE),
        chroma: scaled(&CHROMA_BASE),
    })
}

// basis[u * 8 + x] = sqrt(8) a(u) cos((2x + 1) u pi / 16). Rows 0 and 4 are
// exactly +-1, so their coefficients are exact on integer blocks and halves
// round the same way as in exact arithmetic.
fn dct_basis() -> &'static [f64; 64] {
    static BASIS: OnceLock<[f64; 64]> = OnceLock::new();
    BASIS.get_or_init(|| {
        let mut b = [0.0; 64];
        for u in 0..8 {
            for x in 0..8 {
                let c = (((2 * x + 1) * u) as f64 * std::f64::consts::PI / 16.0).cos();
                b[u * 8 + x] = if u % 4 == 0 {
                    c.signum()
                } else {
                    std::f64::consts::SQRT_2 * c
                };
            }
        }
        b
    })
}

/// 2-D DCT (or inverse) of one row-major 8x8 block.
pub fn dct8x8(block: &[f64; 64], inverse: bool) -> [f64; 64] {
    let c = dct_basis();
    let mut tmp = [0.0; 64];
    let mut out = [0.0; 64];
    // forward: K B K^T / 8 ; inverse: K^T D K / 8
    for i in 0..8 {
        for j in 0..8 {
            let mut acc = 0.0;
            for k in 0..8 {
                let m = if inverse { c[k * 8 + i] } else { c[i * 8 + k] };
                acc += m * block[k * 8 + j];
            }
            tmp[i * 8 + j] = acc;
        }
    }
    for i in 0..8 {
        for j in 0..8 {
            let mut acc = 0.0;
            for k in 0..8 {
                let m = if inverse { c[k * 8 + j] } else { c[j * 8 + k] };
                acc += tmp[i * 8 + k] * m;
            }
            out[i * 8 + j] = acc * 0.125;
        }
    }
    out
}

/// Blockwise DCT over a planar `[C, H, W]` buffer with H, W multiples of 8.
pub fn block_dct(x: &[f64], c: usize, h: usize, w: usize, inverse: bool) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    let mut block = [0.0; 64];
    for ch in 0..c {
        for by in (0..h).step_by(8) {
            for bx in (0..w).step_by(8) {
                for i in 0..8 {
                    let row = (ch * h + by + i) * w + bx;
                    block[i * 8..i * 8 + 8].copy_from_slice(&x[row..row + 8]);
                }
                let t = dct8x8(&block, inverse);
                for i in 0..8 {
                    let row = (ch * h + by + i) * w + bx;
                    out[row..row + 8].copy_from_slice(&t[i * 8..i * 8 + 8]);
                }
            }
        }
    }
    out
}

/// Quantized DCT coefficients of one level-shifted 8x8 block.
pub fn quantize_block(block: &[f64; 64], table: &[u16; 64]) -> [i32; 64] {
    let coeffs = dct8x8(block, false);
    let mut q = [0i32; 64];
    for i in 0..64 {
        q[i] = (coeffs[i] / table[i] as f64).round() as i32;
    }
    q
}

/// Rounding with the forward kept exact.
pub fn quantize(c: f64, q: f64) -> f64 {
    (c / q).round()
}

#[rustfmt::skip]
const RGB_TO_YCC: [f64; 9] = [
    0.299, 0.587, 0.114,
    -0.168736, -0.331264, 0.5,
    0.5, -0.418688, -0.081312,
];

#[rustfmt::skip]
const YCC_TO_RGB: [f64; 9] = [
    1.0, 0.0, 1.402,
    1.0, -0.344136, -0.714136,
    1.0, 1.772, 0.0,
];

fn tiled(table: &[u16; 64], c: usize, h: usize, w: usize) -> Tensor {
    let mut data = Vec::with_capacity(c * h * w);
    for _ in 0..c {
        for y in 0..h {
            for x in 0..w {
                data.push(table[(y % 8) * 8 + x % 8] as f64);
            }
        }
    }
    Tensor::new(&[c, h, w], data).expect("tile shape")
}

fn per_channel(values: [f64; 3], h: usize, w: usize) -> Tensor {
    let mut data = Vec::with_capacity(3 * h * w);
    for v in values {
        data.extend(std::iter::repeat_n(v, h * w));
    }
    Tensor::new(&[3, h, w], data).expect("channel shape")
}

/// The lossy chain and its inverse on the tape. `x` is `[3, H, W]` in [0, 1];
/// sizes that are not multiples of 16 are edge-padded and cropped back.
pub fn jpeg_graph(g: &mut Graph, x: Var, quality: i64) -> Result<Var> {
    let tables = quant_tables(quality)?;
    let (h, w) = match *g.shape(x) {
        [3, h, w] => (h, w),
        _ => {
            return Err(Error::shape(
                "jpeg",
                format!("expected [3, H, W], got {:?}", g.shape(x)),
            ))
        }
    };
    let (ph, pw) = (h.div_ceil(16) * 16, w.div_ceil(16) * 16);
    let padded = if (ph, pw) != (h, w) { g.pad_edge(x, ph, pw)? } else { x };

    let to_ycc = g.constant(Tensor::new(&[3, 3, 1, 1], RGB_TO_YCC.to_vec())?);
    let shift = g.constant(per_channel([-128.0, 0.0, 0.0], ph, pw));
    let s = g.scale(padded, 255.0);
    let ycc = g.conv2d(s, to_ycc)?;
    let ycc = g.add(ycc, shift)?;

    let luma = g.channels(ycc, 0, 1)?;
    let chroma = g.channels(ycc, 1, 2)?;
    let chroma = g.avg_pool(chroma, 1, 2)?;

    let round = Surrogate::StraightThroughRound { alpha: ROUND_ALPHA };
    let lossy = |g: &mut Graph, plane: Var, table: &[u16; 64]| -> Result<Var> {
        let (c, ph, pw) = (g.shape(plane)[0], g.shape(plane)[1], g.shape(plane)[2]);
        let q = g.constant(tiled(table, c, ph, pw));
        let coeffs = g.block_dct8(plane, false)?;
        let scaled = g.div(coeffs, q)?;
        let rounded = g.custom_surrogate(scaled, round);
        let deq = g.mul(rounded, q)?;
        g.block_dct8(deq, true)
    };
    let luma = lossy(g, luma, &tables.luma)?;
    let chroma = lossy(g, chroma, &tables.chroma)?;

    let chroma = g.upsample_nearest(chroma, 1, 2)?;
    let ycc = g.concat_channels(&[luma, chroma])?;
    let to_rgb = g.constant(Tensor::new(&[3, 3, 1, 1], YCC_TO_RGB.to_vec())?);
    let rgb = g.conv2d(ycc, to_rgb)?;
    let rgb = g.add_scalar(rgb, 128.0);
    let rgb = g.scale(rgb, 1.0 / 255.0);
    let rgb = g.clamp_exact(rgb, 0.0, 1.0);
    if (ph, pw) != (h, w) {
        g.crop(rgb, h, w)
    } else {
        Ok(rgb)
    }
}

pub fn jpeg_true(img: &Image, quality: i64) -> Result<Image> {
    let mut g = Graph::new();
    let x = g.constant(img.tensor().clone());
    let y = jpeg_graph(&mut g, x, quality)?;
    Image::from_tensor(g.value(y).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Stream;

    #[test]
    fn quantize_arithmetic() {
        assert_eq!(quantize(17.0, 5.0), 3.0);
        assert_eq!(quantize(-17.5, 5.0), -4.0);
        assert_eq!(quantize(2.5, 1.0), 3.0);
        assert_eq!(quantize(-2.5, 1.0), -3.0);
    }

    #[test]
    fn quality_fifty_is_base_table() {
        let t = quant_tables(50).unwrap();
        assert_eq!(t.luma, LUMA_BASE);
        assert_eq!(t.chroma, CHROMA_BASE);
    }

    #[test]
    fn tables_in_range_for_every_quality() {
        for q in 1..=100 {
            let t = quant_tables(q).unwrap();
            assert!(t.luma.iter().chain(&t.chroma).all(|&v| (1..=255).contains(&v)));
        }
        assert!(quant_tables(0).is_err());
        assert!(quant_tables(101).is_err());
        assert!(quant_tables(100).unwrap().luma.iter().all(|&v| v == 1));
    }

    #[test]
    fn lower_quality_tables_are_coarser() {
        let lo = quant_tables(6).unwrap();
        let hi = quant_tables(18).unwrap();
        for i in 0..64 {
            assert!(lo.luma[i] >= hi.luma[i] && lo.chroma[i] >= hi.chroma[i]);
        }
    }

    #[test]
    fn constant_block_is_dc_only() {
        let block = [37.5; 64];
        let d = dct8x8(&block, false);
        assert!((d[0] - 37.5 * 8.0).abs() < 1e-12);
        assert!(d[1..].iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn dct_inverts() {
        let mut s = Stream::new(9);
        let mut block = [0.0; 64];
        for v in block.iter_mut() {
            *v = s.uniform() * 255.0 - 128.0;
        }
        let back = dct8x8(&dct8x8(&block, false), true);
        for (a, b) in back.iter().zip(&block) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn quality_hundred_roundtrip_is_near_lossless() {
        // horizontal pixel pairs are equal, so 4:2:2 averaging is lossless
        // and only coefficient rounding (all Q = 1) remains
        for seed in 0..10 {
            let mut s = Stream::new(seed);
            let mut data = Vec::with_capacity(3 * 32 * 32);
            for _ in 0..3 * 32 * 16 {
                let v = s.uniform();
                data.extend([v, v]);
            }
            let img = Image::from_tensor(Tensor::new(&[3, 32, 32], data).unwrap()).unwrap();
            let out = jpeg_true(&img, 100).unwrap();
            assert!(out.max_abs_diff(&img) < 0.01, "{}", out.max_abs_diff(&img));
        }
    }

    #[test]
    fn pads_and_crops_non_multiple_sizes() {
        let img = Image::filled(8, 8, 0.6);
        let out = jpeg_true(&img, 12).unwrap();
        assert_eq!((out.height(), out.width()), (8, 8));
        assert!(out.is_in_unit_range());
    }
}
