//! Camera noise: per-channel Poisson shot noise and per-pixel dead pixels,
//! serialized to 8 bits by clamping to [0, 255] and dividing by 255.

use crate::error::Result;
use crate::image::Image;
use crate::rng::Stream;
use crate::tape::{Graph, Surrogate, Var};
use crate::tensor::Tensor;

/// Added under the square root of the Gaussian surrogate so it stays
/// differentiable at zero intensity.
pub const SQRT_EPS: f64 = 1e-8;

pub const CLAMP_SURROGATE: Surrogate = Surrogate::SigmoidClamp { lo: 0.0, hi: 255.0 };

/// `clamp(p' m) / 255` with `p' ~ Poisson(k_p p)` per channel and one
/// keep/kill draw per pixel (probability `k_b` of killing all channels).
pub fn noise_true(img: &Image, k_p: f64, k_b: f64, seed: u64) -> Result<Image> {
    let (h, w) = (img.height(), img.width());
    let plane = h * w;
    let mut s = Stream::new(seed);
    let mut out = vec![0.0; 3 * plane];
    for p in 0..plane {
        let killed = s.bernoulli(k_b);
        for c in 0..3 {
            let count = s.poisson(k_p * img.data()[c * plane + p]) as f64;
            let m = if killed { 0.0 } else { 1.0 };
            out[c * plane + p] = (count * m).clamp(0.0, 255.0) / 255.0;
        }
    }
    Image::from_tensor(Tensor::new(&[3, h, w], out)?)
}

/// Standard-normal field for one evaluation of the surrogate.
pub fn gaussian_field(shape: &[usize], stream: &mut Stream) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| stream.normal()).collect()).expect("field shape")
}

/// Differentiable stand-in: `clamp(k_p x - 0.5 + sqrt(k_p x + eps) n) / 255`
/// with `n` a fixed standard-normal field, the clamp carrying a sigmoid
/// surrogate gradient. The dead-pixel mask is unknown and omitted.
pub fn noise_graph(g: &mut Graph, x: Var, k_p: f64, field: &Tensor) -> Result<Var> {
    let n = g.constant(field.clone());
    let mean = g.scale(x, k_p);
    let var = g.add_scalar(mean, SQRT_EPS);
    let std = g.sqrt(var);
    let jitter = g.mul(std, n)?;
    let shifted = g.add_scalar(mean, -0.5);
    let sample = g.add(shifted, jitter)?;
    let clamped = g.custom_surrogate(sample, CLAMP_SURROGATE);
    Ok(g.scale(clamped, 1.0 / 255.0))
}

pub fn noise_approx(img: &Image, k_p: f64, field: &Tensor) -> Result<Image> {
    let mut g = Graph::new();
    let x = g.constant(img.tensor().clone());
    let y = noise_graph(&mut g, x, k_p, field)?;
    Image::from_tensor(g.value(y).clone())
}
