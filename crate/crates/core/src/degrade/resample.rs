//! Separable downsampling with bilinear, bicubic and Lanczos kernels.
//!
//! Kernels are evaluated at source-pixel distances (no support stretching),
//! output sample `j` is centred on source coordinate `(j + 0.5) f - 0.5`,
//! taps are normalized to sum to one and out-of-range taps clamp to the edge.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Filter {
    Bilinear,
    Bicubic,
    Lanczos3,
}

impl Filter {
    pub const ALL: [Filter; 3] = [Filter::Bilinear, Filter::Bicubic, Filter::Lanczos3];

    pub fn support(self) -> f64 {
        match self {
            Filter::Bilinear => 1.0,
            Filter::Bicubic => 2.0,
            Filter::Lanczos3 => 3.0,
        }
    }

    pub fn weight(self, x: f64) -> f64 {
        let ax = x.abs();
        match self {
            Filter::Bilinear => (1.0 - ax).max(0.0),
            Filter::Bicubic => {
                // Keys cubic, a = -0.5 (Catmull-Rom)
                const A: f64 = -0.5;
                if ax < 1.0 {
                    ((A + 2.0) * ax - (A + 3.0)) * ax * ax + 1.0
                } else if ax < 2.0 {
                    ((A * ax - 5.0 * A) * ax + 8.0 * A) * ax - 4.0 * A
                } else {
                    0.0
                }
            }
            Filter::Lanczos3 => {
                if ax < 1e-12 {
                    1.0
                } else if ax < 3.0 {
                    let px = std::f64::consts::PI * ax;
                    3.0 * px.sin() * (px / 3.0).sin() / (px * px)
                } else {
                    0.0
                }
            }
        }
    }
}

/// Source taps and normalized weights for every output sample along one axis.
pub fn axis_taps(n_in: usize, factor: usize, filter: Filter) -> Vec<Vec<(usize, f64)>> {
    let n_out = n_in / factor;
    let support = filter.support();
    (0..n_out)
        .map(|j| {
            let center = (j as f64 + 0.5) * factor as f64 - 0.5;
            let lo = (center - support).floor() as i64;
            let hi = (center + support).ceil() as i64;
            let mut taps: Vec<(usize, f64)> = (lo..=hi)
                .filter_map(|i| {
                    let w = filter.weight(i as f64 - center);
                    (w != 0.0).then(|| (i.clamp(0, n_in as i64 - 1) as usize, w))
                })
                .collect();
            let total: f64 = taps.iter().map(|t| t.1).sum();
            for t in taps.iter_mut() {
                t.1 /= total;
            }
            taps
        })
        .collect()
}

/// The true downsampling model: separable resampling then clamp to [0, 1].
pub fn downsample_true(img: &Image, factor: usize, filter: Filter) -> Result<Image> {
    let (h, w) = (img.height(), img.width());
    if factor == 0 || h % factor != 0 || w % factor != 0 {
        return Err(Error::invalid(format!("factor {factor} does not divide {h}x{w}")));
    }
    let (oh, ow) = (h / factor, w / factor);
    let tx = axis_taps(w, factor, filter);
    let ty = axis_taps(h, factor, filter);
    let mut out = vec![0.0; 3 * oh * ow];
    let mut rows = vec![0.0; h * ow];
    for c in 0..3 {
        let src = &img.data()[c * h * w..(c + 1) * h * w];
        for y in 0..h {
            for (x, taps) in tx.iter().enumerate() {
                rows[y * ow + x] = taps.iter().map(|&(i, wt)| wt * src[y * w + i]).sum();
            }
        }
        for (y, taps) in ty.iter().enumerate() {
            for x in 0..ow {
                let v: f64 = taps.iter().map(|&(i, wt)| wt * rows[i * ow + x]).sum();
                out[(c * oh + y) * ow + x] = v.clamp(0.0, 1.0);
            }
        }
    }
    Image::from_tensor(Tensor::new(&[3, oh, ow], out)?)
}
