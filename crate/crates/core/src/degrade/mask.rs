//! Random thick-stroke masks for inpainting.

use crate::image::Image;
use crate::rng::Stream;
use crate::tensor::Tensor;

const WIDTH_FRACTION: f64 = 0.08;

#[derive(Debug, Clone, PartialEq)]
pub struct StrokeMask {
    pub height: usize,
    pub width: usize,
    /// Row-major, `true` where the pixel is masked.
    pub masked: Vec<bool>,
    /// `((y0, x0), (y1, x1))` in pixel units.
    pub strokes: Vec<((f64, f64), (f64, f64))>,
    pub stroke_width: f64,
}

/// `round(0.08 r)`, at least one pixel.
pub fn stroke_width(resolution: usize) -> f64 {
    (WIDTH_FRACTION * resolution as f64).round().max(1.0)
}

/// True when both coordinates fall in the central third, which stroke
/// endpoints must avoid.
pub fn in_central_third(y: f64, x: f64, h: usize, w: usize) -> bool {
    let central = |v: f64, n: usize| v >= n as f64 / 3.0 && v < 2.0 * n as f64 / 3.0;
    central(y, h) && central(x, w)
}

fn endpoint(s: &mut Stream, h: usize, w: usize) -> (f64, f64) {
    loop {
        let y = s.uniform() * h as f64;
        let x = s.uniform() * w as f64;
        if !in_central_third(y, x, h, w) {
            return (y, x);
        }
    }
}

fn segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dy, dx) = (b.0 - a.0, b.1 - a.1);
    let len2 = dy * dy + dx * dx;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p.0 - a.0) * dy + (p.1 - a.1) * dx) / len2).clamp(0.0, 1.0)
    };
    let (cy, cx) = (a.0 + t * dy, a.1 + t * dx);
    ((p.0 - cy).powi(2) + (p.1 - cx).powi(2)).sqrt()
}

/// Union of `strokes` thick segments whose endpoints lie outside the central
/// third. A pixel is masked when its centre is within half the stroke width
/// of a segment.
pub fn make_stroke_mask(height: usize, width: usize, strokes: usize, seed: u64) -> StrokeMask {
    let mut s = Stream::new(seed);
    let sw = stroke_width(height.max(width));
    let segs: Vec<_> = (0..strokes)
        .map(|_| (endpoint(&mut s, height, width), endpoint(&mut s, height, width)))
        .collect();
    let mut masked = vec![false; height * width];
    for y in 0..height {
        for x in 0..width {
            let p = (y as f64 + 0.5, x as f64 + 0.5);
            masked[y * width + x] = segs.iter().any(|&(a, b)| segment_distance(p, a, b) <= sw / 2.0);
        }
    }
    StrokeMask {
        height,
        width,
        masked,
        strokes: segs,
        stroke_width: sw,
    }
}

impl StrokeMask {
    pub fn fraction(&self) -> f64 {
        self.masked.iter().filter(|&&m| m).count() as f64 / self.masked.len() as f64
    }

    /// `[3, H, W]` tensor, 0 where masked and 1 elsewhere.
    pub fn keep_tensor(&self) -> Tensor {
        let plane: Vec<f64> = self.masked.iter().map(|&m| if m { 0.0 } else { 1.0 }).collect();
        let mut data = Vec::with_capacity(3 * plane.len());
        for _ in 0..3 {
            data.extend_from_slice(&plane);
        }
        Tensor::new(&[3, self.height, self.width], data).expect("mask shape")
    }

    /// `[3, H, W]` tensor, 1 where masked.
    pub fn hole_tensor(&self) -> Tensor {
        self.keep_tensor().map(|v| 1.0 - v)
    }

    pub fn apply(&self, img: &Image) -> Image {
        let keep = self.keep_tensor();
        let data = img.data().iter().zip(keep.data()).map(|(v, k)| v * k).collect();
        Image::from_tensor(Tensor::new(img.tensor().shape(), data).expect("same shape")).expect("image shape")
    }
}
