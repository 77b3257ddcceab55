//! Chains of degradations, run either with the true models or with their
//! differentiable stand-ins on the tape.
//!
//! Stage randomness is derived from each stage's seed, so the inpainting mask
//! is the same in both modes. The Gaussian field of the noise stand-in comes
//! from an [`ApproxContext`] owned by the caller (one optimisation run).

use super::mask::{make_stroke_mask, StrokeMask};
use super::noise::{gaussian_field, noise_graph, noise_true};
use super::resample::downsample_true;
use super::{jpeg, CompositionSpec, DegradationSpec, Params};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::rng::{derive_seed, Stream};
use crate::tape::{Graph, Var};

const NOISE_TAG: u64 = 0x4e;
const MASK_TAG: u64 = 0x50;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    True,
    /// Stand-ins; the noise surrogate draws its field from this seed.
    Approx {
        noise_seed: u64,
    },
}

/// Source of the Gaussian fields used by the noise stand-in.
#[derive(Debug, Clone)]
pub enum ApproxContext {
    /// Fresh field on every call.
    Stream(Stream),
    /// Zero field: the surrogate's mean.
    Mean,
}

impl ApproxContext {
    pub fn new(seed: u64) -> Self {
        ApproxContext::Stream(Stream::new(seed))
    }

    fn field(&mut self, shape: &[usize]) -> crate::tensor::Tensor {
        match self {
            ApproxContext::Stream(s) => gaussian_field(shape, s),
            ApproxContext::Mean => crate::tensor::Tensor::zeros(shape),
        }
    }
}

fn noise_seed(op: &DegradationSpec) -> Result<u64> {
    Ok(derive_seed(op.seed()?, &[NOISE_TAG]))
}

/// The stroke mask of an inpainting stage for an `h` x `w` stage input.
pub fn stage_mask(op: &DegradationSpec, h: usize, w: usize) -> Result<Option<StrokeMask>> {
    Ok(match op.params()? {
        Params::Inpaint { strokes } => Some(make_stroke_mask(h, w, strokes, derive_seed(op.seed()?, &[MASK_TAG]))),
        _ => None,
    })
}

/// The mask applied by the inpainting stage of `spec` when the chain input
/// is `h` x `w`.
pub fn inpaint_mask(spec: &CompositionSpec, h: usize, w: usize) -> Result<Option<StrokeMask>> {
    let (mut h, mut w) = (h, w);
    for op in &spec.ops {
        match op.params()? {
            Params::Upsample { factor, .. } => {
                h /= factor;
                w /= factor;
            }
            Params::Inpaint { .. } => return stage_mask(op, h, w),
            _ => {}
        }
    }
    Ok(None)
}

pub fn downsample_approx_graph(g: &mut Graph, x: Var, factor: usize) -> Result<Var> {
    if factor.is_power_of_two() {
        let mut y = x;
        for _ in 0..factor.trailing_zeros() {
            y = g.avg_pool2(y)?;
        }
        Ok(y)
    } else {
        g.avg_pool(x, factor, factor)
    }
}

pub fn downsample_approx(img: &Image, factor: usize) -> Result<Image> {
    let mut g = Graph::new();
    let x = g.constant(img.tensor().clone());
    let y = downsample_approx_graph(&mut g, x, factor)?;
    Image::from_tensor(g.value(y).clone())
}

pub fn inpaint_true(img: &Image, mask: &StrokeMask) -> Result<Image> {
    if (mask.height, mask.width) != (img.height(), img.width()) {
        return Err(Error::shape(
            "inpaint",
            format!(
                "mask {}x{} vs image {}x{}",
                mask.height,
                mask.width,
                img.height(),
                img.width()
            ),
        ));
    }
    Ok(mask.apply(img))
}

pub fn inpaint_graph(g: &mut Graph, x: Var, mask: &StrokeMask) -> Result<Var> {
    let keep = g.constant(mask.keep_tensor());
    g.mul(x, keep)
}

/// Applies every stage's true model in degradation order.
pub fn compose_true(spec: &CompositionSpec, img: &Image) -> Result<Image> {
    spec.validate()?;
    let mut cur = img.clone();
    for op in &spec.ops {
        cur = match op.params()? {
            Params::Upsample { factor, .. } => {
                let filter = op.resolved_filter()?.expect("upsample has a filter");
                downsample_true(&cur, factor, filter)?
            }
            Params::Denoise { k_p, k_b } => noise_true(&cur, k_p, k_b, noise_seed(op)?)?,
            Params::Deartifact { quality } => jpeg::jpeg_true(&cur, quality as i64)?,
            Params::Inpaint { .. } => {
                let mask = stage_mask(op, cur.height(), cur.width())?.expect("inpaint stage");
                inpaint_true(&cur, &mask)?
            }
        };
    }
    Ok(cur)
}

/// Builds the differentiable chain on the tape.
pub fn compose_approx(g: &mut Graph, spec: &CompositionSpec, x: Var, ctx: &mut ApproxContext) -> Result<Var> {
    spec.validate()?;
    let mut cur = x;
    for op in &spec.ops {
        cur = match op.params()? {
            Params::Upsample { factor, .. } => {
                let (h, w) = (g.shape(cur)[1], g.shape(cur)[2]);
                if h % factor != 0 || w % factor != 0 {
                    return Err(Error::invalid(format!("factor {factor} does not divide {h}x{w}")));
                }
                downsample_approx_graph(g, cur, factor)?
            }
            Params::Denoise { k_p, .. } => {
                let field = ctx.field(g.shape(cur));
                noise_graph(g, cur, k_p, &field)?
            }
            Params::Deartifact { quality } => jpeg::jpeg_graph(g, cur, quality as i64)?,
            Params::Inpaint { .. } => {
                let (h, w) = (g.shape(cur)[1], g.shape(cur)[2]);
                let mask = stage_mask(op, h, w)?.expect("inpaint stage");
                inpaint_graph(g, cur, &mask)?
            }
        };
    }
    Ok(cur)
}

pub fn compose(spec: &CompositionSpec, img: &Image, mode: Mode) -> Result<Image> {
    match mode {
        Mode::True => compose_true(spec, img),
        Mode::Approx { noise_seed } => {
            let mut g = Graph::new();
            let x = g.constant(img.tensor().clone());
            let mut ctx = ApproxContext::new(noise_seed);
            let y = compose_approx(&mut g, spec, x, &mut ctx)?;
            Image::from_tensor(g.value(y).clone())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::degrade::{Filter, Kind, Level};
    use crate::tensor::Tensor;

    fn ramp(h: usize, w: usize) -> Image {
        let data = (0..3 * h * w).map(|i| ((i * 31) % 97) as f64 / 96.0).collect();
        Image::from_tensor(Tensor::new(&[3, h, w], data).unwrap()).unwrap()
    }

    #[test]
    fn empty_spec_is_identity() {
        let img = ramp(16, 16);
        assert_eq!(compose_true(&CompositionSpec::identity(), &img).unwrap(), img);
        assert_eq!(
            compose(&CompositionSpec::identity(), &img, Mode::Approx { noise_seed: 1 }).unwrap(),
            img
        );
    }

    #[test]
    fn upsample_m_is_factor_eight() {
        let img = ramp(64, 64);
        let op = DegradationSpec::at_level(Kind::Upsample, Level::M, 3);
        let filter = op.resolved_filter().unwrap().unwrap();
        let spec = CompositionSpec::new(vec![op]);
        let a = compose_true(&spec, &img).unwrap();
        let b = downsample_true(&img, 8, filter).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.height(), 8);
    }

    #[test]
    fn approx_downsample_matches_bilinear_at_two() {
        let img = ramp(16, 16);
        let a = downsample_approx(&img, 2).unwrap();
        let b = downsample_true(&img, 2, Filter::Bilinear).unwrap();
        assert!(a.max_abs_diff(&b) < 1e-15);
    }

    #[test]
    fn unap_masked_region_is_black() {
        let img = ramp(64, 64);
        let spec = CompositionSpec::new(
            Kind::CANONICAL
                .iter()
                .map(|&k| DegradationSpec::at_level(k, Level::M, 11))
                .collect(),
        );
        let out = compose_true(&spec, &img).unwrap();
        let mask = inpaint_mask(&spec, 64, 64).unwrap().unwrap();
        assert_eq!((mask.height, mask.width), (8, 8));
        for (p, &m) in mask.masked.iter().enumerate() {
            if m {
                for c in 0..3 {
                    assert_eq!(out.data()[c * 64 + p], 0.0);
                }
            }
        }
    }

    #[test]
    fn exact_forward_for_deterministic_stages() {
        let img = ramp(32, 32);
        for kind in [Kind::Deartifact, Kind::Inpaint] {
            let spec = CompositionSpec::new(vec![DegradationSpec::at_level(kind, Level::S, 4)]);
            let a = compose(&spec, &img, Mode::True).unwrap();
            let b = compose(&spec, &img, Mode::Approx { noise_seed: 0 }).unwrap();
            assert_eq!(a, b, "{kind}");
        }
    }
}
