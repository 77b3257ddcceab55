//! Perceptual distance, the multiresolution restoration loss, and the
//! evaluation metrics.
//!
//! The feature network is a fixed random convolution stack (3 -> 16 -> 32 ->
//! 64 channels, leaky ReLU and 2x average pooling after each conv). Its seed
//! is part of the benchmark definition: change it and every number changes.

use std::path::Path;
use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::degrade::{compose_true, CompositionSpec};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::rng::{derive_seed, Stream};
use crate::tape::{Graph, Var};
use crate::tensor::Tensor;

pub const FEATURE_SEED: u64 = 0x1f9e_57a6_e5ee_d001;
pub const STAGE_CHANNELS: [usize; 3] = [16, 32, 64];
pub const NORM_EPS: f64 = 1e-10;
pub const L1_WEIGHT: f64 = 0.1;
/// Smallest input the feature stack accepts.
pub const MIN_FEATURE_SIZE: usize = 16;
/// Smallest resolution with at least one pooled scale in the loss.
pub const MIN_LOSS_RESOLUTION: usize = 32;
pub const FID_REGULARIZER: f64 = 1e-6;
/// Mean of the noise injected into inpainting holes before comparison.
pub const HOLE_NOISE_MEAN: f64 = 0.5;

const LRELU_SLOPE: f64 = 0.2;

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureExtractor {
    stages: Vec<Tensor>,
}

impl FeatureExtractor {
    pub fn new(seed: u64) -> Self {
        let mut s = Stream::new(seed);
        let mut cin = 3;
        let stages = STAGE_CHANNELS
            .iter()
            .map(|&cout| {
                let std = (2.0 / (9 * cin) as f64).sqrt();
                let data = (0..cout * cin * 9).map(|_| s.normal() * std).collect();
                let t = Tensor::new(&[cout, cin, 3, 3], data).expect("filter shape");
                cin = cout;
                t
            })
            .collect();
        Self { stages }
    }

    /// The extractor built from [`FEATURE_SEED`], shared process-wide.
    pub fn standard() -> &'static FeatureExtractor {
        static STANDARD: OnceLock<FeatureExtractor> = OnceLock::new();
        STANDARD.get_or_init(|| FeatureExtractor::new(FEATURE_SEED))
    }

    pub fn feature_dim(&self) -> usize {
        STAGE_CHANNELS[STAGE_CHANNELS.len() - 1]
    }

    /// Post-activation features of every stage.
    pub fn features_on(&self, g: &mut Graph, x: Var) -> Result<Vec<Var>> {
        check_feature_input("features", g.shape(x))?;
        let mut out = Vec::with_capacity(self.stages.len());
        let mut cur = x;
        for (i, w) in self.stages.iter().enumerate() {
            let w = g.constant(w.clone());
            let y = g.conv2d(cur, w)?;
            let y = g.leaky_relu(y, LRELU_SLOPE);
            out.push(y);
            if i + 1 < self.stages.len() {
                cur = g.avg_pool2(y)?;
            }
        }
        Ok(out)
    }

    /// Sum over stages of the mean squared difference of channel-normalized
    /// features.
    pub fn distance_on(&self, g: &mut Graph, x: Var, y: Var) -> Result<Var> {
        if g.shape(x) != g.shape(y) {
            return Err(Error::shape(
                "perceptual_distance",
                format!("{:?} vs {:?}", g.shape(x), g.shape(y)),
            ));
        }
        let fx = self.features_on(g, x)?;
        let fy = self.features_on(g, y)?;
        let mut total: Option<Var> = None;
        for (a, b) in fx.into_iter().zip(fy) {
            let na = g.channel_l2_normalize(a, NORM_EPS)?;
            let nb = g.channel_l2_normalize(b, NORM_EPS)?;
            let d = g.sub(na, nb)?;
            let sq = g.square(d);
            let m = g.reduce_mean(sq);
            total = Some(match total {
                None => m,
                Some(t) => g.add(t, m)?,
            });
        }
        Ok(total.expect("at least one stage"))
    }

    pub fn distance(&self, x: &Image, y: &Image) -> Result<f64> {
        let mut g = Graph::new();
        let a = g.constant(x.tensor().clone());
        let b = g.constant(y.tensor().clone());
        let d = self.distance_on(&mut g, a, b)?;
        Ok(g.value(d).item())
    }

    /// Global average of the final stage: the patch-FID embedding.
    pub fn embedding(&self, img: &Image) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let x = g.constant(img.tensor().clone());
        let f = *self.features_on(&mut g, x)?.last().expect("stages");
        let t = g.value(f);
        let plane = t.shape()[1] * t.shape()[2];
        Ok(t.data()
            .chunks(plane)
            .map(|c| c.iter().sum::<f64>() / plane as f64)
            .collect())
    }
}

fn check_feature_input(op: &'static str, shape: &[usize]) -> Result<()> {
    match *shape {
        [3, h, w] if h == w && h >= MIN_FEATURE_SIZE => Ok(()),
        _ => Err(Error::shape(
            op,
            format!("need a square [3, N, N] input with N >= {MIN_FEATURE_SIZE}, got {shape:?}"),
        )),
    }
}

pub fn perceptual_distance(x: &Image, y: &Image) -> Result<f64> {
    FeatureExtractor::standard().distance(x, y)
}

/// Number of pooled scales for a square input: `log2(res) - 4`.
pub fn num_scales(resolution: usize) -> Result<usize> {
    if resolution < MIN_LOSS_RESOLUTION || !resolution.is_power_of_two() {
        return Err(Error::invalid(format!(
            "multiresolution loss needs a power-of-two resolution >= {MIN_LOSS_RESOLUTION}, got {resolution}"
        )));
    }
    Ok(resolution.trailing_zeros() as usize - 4)
}

/// Sum of perceptual distances between `x` and `y` pooled by 2, 4, ... 2^k.
/// The full-resolution pair is not compared.
pub fn multires_loss_on(fx: &FeatureExtractor, g: &mut Graph, x: Var, y: Var) -> Result<Var> {
    if g.shape(x) != g.shape(y) {
        return Err(Error::shape(
            "multires_loss",
            format!("{:?} vs {:?}", g.shape(x), g.shape(y)),
        ));
    }
    let shape = g.shape(x).to_vec();
    if shape.len() != 3 || shape[1] != shape[2] {
        return Err(Error::shape(
            "multires_loss",
            format!("need a square image, got {shape:?}"),
        ));
    }
    let k = num_scales(shape[1])?;
    let (mut px, mut py) = (x, y);
    let mut total: Option<Var> = None;
    for _ in 0..k {
        px = g.avg_pool2(px)?;
        py = g.avg_pool2(py)?;
        let d = fx.distance_on(g, px, py)?;
        total = Some(match total {
            None => d,
            Some(t) => g.add(t, d)?,
        });
    }
    Ok(total.expect("k >= 1"))
}

/// `0.1 * mean|x - y| + multires_loss(x, y)`.
pub fn full_loss_on(fx: &FeatureExtractor, g: &mut Graph, x: Var, y: Var) -> Result<Var> {
    let mr = multires_loss_on(fx, g, x, y)?;
    let l1 = l1_on(g, x, y)?;
    let l1 = g.scale(l1, L1_WEIGHT);
    g.add(l1, mr)
}

pub fn l1_on(g: &mut Graph, x: Var, y: Var) -> Result<Var> {
    let d = g.sub(x, y)?;
    let a = g.abs(d);
    Ok(g.reduce_mean(a))
}

fn constant_pair(x: &Image, y: &Image) -> (Graph, Var, Var) {
    let mut g = Graph::new();
    let a = g.constant(x.tensor().clone());
    let b = g.constant(y.tensor().clone());
    (g, a, b)
}

pub fn multires_loss(x: &Image, y: &Image) -> Result<f64> {
    let (mut g, a, b) = constant_pair(x, y);
    let l = multires_loss_on(FeatureExtractor::standard(), &mut g, a, b)?;
    Ok(g.value(l).item())
}

pub fn full_loss(x: &Image, y: &Image) -> Result<f64> {
    let (mut g, a, b) = constant_pair(x, y);
    let l = full_loss_on(FeatureExtractor::standard(), &mut g, a, b)?;
    Ok(g.value(l).item())
}

/// Nearest-neighbour upsampling of a square image below the loss resolution
/// up to [`MIN_LOSS_RESOLUTION`]; larger inputs pass through.
pub fn lift_on(g: &mut Graph, x: Var) -> Result<Var> {
    let shape = g.shape(x).to_vec();
    let n = shape.get(1).copied().unwrap_or(0);
    if shape.len() != 3 || shape[2] != n || n == 0 {
        return Err(Error::shape("lift", format!("need a square image, got {shape:?}")));
    }
    if n >= MIN_LOSS_RESOLUTION {
        return Ok(x);
    }
    if !MIN_LOSS_RESOLUTION.is_multiple_of(n) {
        return Err(Error::invalid(format!(
            "cannot lift {n} px to {MIN_LOSS_RESOLUTION} px"
        )));
    }
    let f = MIN_LOSS_RESOLUTION / n;
    g.upsample_nearest(x, f, f)
}

pub fn lift(img: &Image) -> Result<Image> {
    let mut g = Graph::new();
    let x = g.constant(img.tensor().clone());
    let y = lift_on(&mut g, x)?;
    Image::from_tensor(g.value(y).clone())
}

/// The restoration objective with its comparison-time preprocessing: the
/// optional hole noise is added to both sides, then small images are lifted
/// to the loss resolution.
#[derive(Debug, Clone)]
pub struct Objective<'a> {
    pub features: &'a FeatureExtractor,
    /// `hole ⊙ n` with `n ~ N(0.5, 1)`, fixed for one run.
    pub hole_noise: Option<Tensor>,
}

impl<'a> Objective<'a> {
    pub fn new(features: &'a FeatureExtractor) -> Self {
        Self {
            features,
            hole_noise: None,
        }
    }

    /// Draws the hole-noise field for `hole` (1 inside the mask).
    pub fn with_hole_noise(mut self, hole: &Tensor, seed: u64) -> Self {
        let mut s = Stream::new(seed);
        let data = hole
            .data()
            .iter()
            .map(|&m| m * (HOLE_NOISE_MEAN + s.normal()))
            .collect();
        self.hole_noise = Some(Tensor::new(hole.shape(), data).expect("same shape"));
        self
    }

    fn prepare(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let x = match &self.hole_noise {
            Some(n) => {
                let n = g.constant(n.clone());
                g.add(x, n)?
            }
            None => x,
        };
        lift_on(g, x)
    }

    pub fn evaluate_on(&self, g: &mut Graph, pred: Var, target: Var) -> Result<Var> {
        let a = self.prepare(g, pred)?;
        let b = self.prepare(g, target)?;
        full_loss_on(self.features, g, a, b)
    }

    pub fn evaluate(&self, pred: &Image, target: &Image) -> Result<f64> {
        let (mut g, a, b) = constant_pair(pred, target);
        let l = self.evaluate_on(&mut g, a, b)?;
        Ok(g.value(l).item())
    }
}

/// Perceptual distance between a prediction and the clean ground truth.
pub fn accuracy(pred: &Image, ground_truth: &Image) -> Result<f64> {
    perceptual_distance(pred, ground_truth)
}

/// Perceptual distance between the prediction pushed through the true
/// degradation and the degraded target. Targets smaller than the loss
/// resolution are compared after lifting.
pub fn fidelity(pred: &Image, target: &Image, spec: &CompositionSpec) -> Result<f64> {
    for op in &spec.ops {
        op.seed()?;
    }
    let degraded = compose_true(spec, pred)?;
    perceptual_distance(&lift(&degraded)?, &lift(target)?)
}

fn crop_embeddings(
    fx: &FeatureExtractor,
    set: &[Image],
    crops_per_image: usize,
    crop_size: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(set.len() * crops_per_image);
    for (i, img) in set.iter().enumerate() {
        let (h, w) = (img.height(), img.width());
        if crop_size > h || crop_size > w {
            return Err(Error::invalid(format!("crop {crop_size} exceeds image {h}x{w}")));
        }
        let mut s = Stream::new(derive_seed(seed, &[i as u64]));
        for _ in 0..crops_per_image {
            let y = s.below((h - crop_size + 1) as u64) as usize;
            let x = s.below((w - crop_size + 1) as u64) as usize;
            out.push(fx.embedding(&img.crop(y, x, crop_size, crop_size)?)?);
        }
    }
    Ok(out)
}

fn moments(rows: &[Vec<f64>]) -> (DVector<f64>, DMatrix<f64>) {
    let d = rows[0].len();
    let n = rows.len();
    let mut mu = DVector::zeros(d);
    for r in rows {
        mu += DVector::from_column_slice(r);
    }
    mu /= n as f64;
    let mut cov = DMatrix::zeros(d, d);
    for r in rows {
        let c = DVector::from_column_slice(r) - &mu;
        cov += &c * c.transpose();
    }
    if n > 1 {
        cov /= (n - 1) as f64;
    }
    for i in 0..d {
        cov[(i, i)] += FID_REGULARIZER;
    }
    (mu, cov)
}

fn psd_sqrt(m: DMatrix<f64>) -> DMatrix<f64> {
    let sym = (&m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let root = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&root) * eig.eigenvectors.transpose()
}

/// Fréchet distance between Gaussians fitted to two embedding sets.
pub fn frechet_distance(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::invalid("Fréchet distance needs non-empty sets"));
    }
    let (mu_a, cov_a) = moments(a);
    let (mu_b, cov_b) = moments(b);
    let ra = psd_sqrt(cov_a.clone());
    let cross = psd_sqrt(&ra * &cov_b * &ra);
    let diff = (mu_a - mu_b).norm_squared();
    let d = diff + cov_a.trace() + cov_b.trace() - 2.0 * cross.trace();
    if !d.is_finite() {
        return Err(Error::NonFinite("Fréchet distance".into()));
    }
    Ok(d.max(0.0))
}

/// Fréchet distance between final-stage embeddings of random crops. Crop
/// positions depend only on `seed` and the image index.
pub fn patch_fid(set_a: &[Image], set_b: &[Image], crops_per_image: usize, crop_size: usize, seed: u64) -> Result<f64> {
    if set_a.is_empty() || set_b.is_empty() || crops_per_image == 0 {
        return Err(Error::invalid("patch-FID needs non-empty sets and at least one crop"));
    }
    let fx = FeatureExtractor::standard();
    let a = crop_embeddings(fx, set_a, crops_per_image, crop_size, seed)?;
    let b = crop_embeddings(fx, set_b, crops_per_image, crop_size, seed)?;
    frechet_distance(&a, &b)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMetrics {
    pub run_id: String,
    pub task: String,
    pub level: String,
    pub image_id: usize,
    pub accuracy: f64,
    pub fidelity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub task: String,
    pub level: String,
    pub images: usize,
    pub failures: usize,
    pub accuracy_mean: f64,
    pub accuracy_std: f64,
    pub fidelity_mean: f64,
    pub fidelity_std: f64,
    pub patch_fid: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsReport {
    pub samples: Vec<SampleMetrics>,
    pub summary: Vec<CellSummary>,
}

/// Mean and population standard deviation; zeros for an empty slice.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

impl MetricsReport {
    pub fn check(&self) -> Result<()> {
        let sample_ok = self
            .samples
            .iter()
            .all(|s| s.accuracy.is_finite() && s.accuracy >= 0.0 && s.fidelity.is_finite() && s.fidelity >= 0.0);
        let summary_ok = self
            .summary
            .iter()
            .all(|c| c.patch_fid.is_finite() && c.patch_fid >= 0.0);
        if sample_ok && summary_ok {
            Ok(())
        } else {
            Err(Error::NonFinite(
                "metrics report holds negative or non-finite values".into(),
            ))
        }
    }

    pub fn write_samples_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for s in &self.samples {
            w.serialize(s)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_summary_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for c in &self.summary {
            w.serialize(c)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::degrade::{DegradationSpec, Kind, Level};

    fn noise_image(n: usize, seed: u64) -> Image {
        let mut s = Stream::new(seed);
        let data = (0..3 * n * n).map(|_| s.uniform()).collect();
        Image::from_tensor(Tensor::new(&[3, n, n], data).unwrap()).unwrap()
    }

    #[test]
    fn distance_is_a_pseudometric() {
        for seed in 0..20 {
            let x = noise_image(16, seed);
            let y = noise_image(16, seed + 100);
            assert_eq!(perceptual_distance(&x, &x).unwrap(), 0.0);
            let (a, b) = (
                perceptual_distance(&x, &y).unwrap(),
                perceptual_distance(&y, &x).unwrap(),
            );
            assert!(a > 0.0);
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_small_or_mismatched_inputs() {
        assert!(perceptual_distance(&noise_image(8, 1), &noise_image(8, 2)).is_err());
        assert!(perceptual_distance(&noise_image(16, 1), &noise_image(32, 2)).is_err());
        assert!(multires_loss(&noise_image(16, 1), &noise_image(16, 2)).is_err());
    }

    #[test]
    fn scale_count_rule() {
        assert_eq!(num_scales(1024).unwrap(), 6);
        assert_eq!(num_scales(64).unwrap(), 2);
        assert_eq!(num_scales(32).unwrap(), 1);
        assert!(num_scales(16).is_err());
        assert!(num_scales(48).is_err());
    }

    #[test]
    fn multires_at_64_sums_two_pooled_scales() {
        let x = noise_image(64, 3);
        let y = noise_image(64, 4);
        let pool = |img: &Image, f: usize| crate::degrade::downsample_approx(img, f).unwrap();
        let want = perceptual_distance(&pool(&x, 2), &pool(&y, 2)).unwrap()
            + perceptual_distance(&pool(&x, 4), &pool(&y, 4)).unwrap();
        assert!((multires_loss(&x, &y).unwrap() - want).abs() < 1e-12);
        assert_eq!(multires_loss(&x, &x).unwrap(), 0.0);
    }

    #[test]
    fn l1_term_in_isolation() {
        let x = noise_image(32, 5).tensor().map(|v| v * 0.8);
        let y = x.map(|v| v + 0.1);
        let mut g = Graph::new();
        let (a, b) = (g.constant(x), g.constant(y));
        let l = l1_on(&mut g, a, b).unwrap();
        let l = g.scale(l, L1_WEIGHT);
        assert!((g.value(l).item() - 0.01).abs() < 1e-15);
    }

    #[test]
    fn full_loss_gradient_matches_finite_differences() {
        let fx = FeatureExtractor::standard();
        let x0 = noise_image(32, 6).into_tensor();
        let y = noise_image(32, 7).into_tensor();
        let eval = |x: &Tensor| {
            let mut g = Graph::new();
            let (a, b) = (g.leaf(x.clone()), g.constant(y.clone()));
            let l = full_loss_on(fx, &mut g, a, b).unwrap();
            let grads = g.backward(l).unwrap();
            (g.value(l).item(), grads.get_or_zeros(a, x.shape()))
        };
        let (_, grad) = eval(&x0);
        let h = 1e-5;
        for idx in [0, 77, 1500, 3071] {
            let mut p = x0.clone();
            p.data_mut()[idx] += h;
            let mut m = x0.clone();
            m.data_mut()[idx] -= h;
            let fd = (eval(&p).0 - eval(&m).0) / (2.0 * h);
            let an = grad.data()[idx];
            assert!((fd - an).abs() <= 1e-5 * an.abs().max(1e-3), "{idx}: {fd} vs {an}");
        }
    }

    #[test]
    fn multires_shrinks_along_a_linear_path() {
        for seed in 0..3 {
            let x = noise_image(32, seed);
            let y = noise_image(32, seed + 50);
            let mut prev = f64::INFINITY;
            for i in 0..10 {
                let t = i as f64 / 9.0;
                let data = x.data().iter().zip(y.data()).map(|(a, b)| a + t * (b - a)).collect();
                let p = Image::from_tensor(Tensor::new(&[3, 32, 32], data).unwrap()).unwrap();
                let l = multires_loss(&p, &y).unwrap();
                assert!(l < prev || l == 0.0);
                prev = l;
            }
            assert_eq!(prev, 0.0);
        }
    }

    #[test]
    fn hole_noise_only_touches_holes() {
        let mut hole = Tensor::zeros(&[3, 32, 32]);
        hole.data_mut()[5] = 1.0;
        let obj = Objective::new(FeatureExtractor::standard()).with_hole_noise(&hole, 9);
        let n = obj.hole_noise.as_ref().unwrap();
        assert!(n.data().iter().enumerate().all(|(i, &v)| (i == 5) == (v != 0.0)));
        let x = noise_image(32, 1);
        assert_eq!(obj.evaluate(&x, &x).unwrap(), 0.0);
    }

    #[test]
    fn lift_reaches_loss_resolution() {
        let small = noise_image(8, 2);
        let big = lift(&small).unwrap();
        assert_eq!(big.height(), 32);
        assert_eq!(big.get(1, 5, 30), small.get(1, 1, 7));
        assert!((big.mean() - small.mean()).abs() < 1e-12);
    }

    #[test]
    fn fidelity_of_ground_truth_is_zero() {
        let gt = noise_image(64, 8);
        for kind in [Kind::Denoise, Kind::Deartifact, Kind::Inpaint, Kind::Upsample] {
            let spec = CompositionSpec::new(vec![DegradationSpec::at_level(kind, Level::M, 21)]);
            let target = compose_true(&spec, &gt).unwrap();
            assert_eq!(fidelity(&gt, &target, &spec).unwrap(), 0.0, "{kind}");
        }
    }

    #[test]
    fn fidelity_rejects_missing_seed() {
        let gt = noise_image(32, 8);
        let mut op = DegradationSpec::at_level(Kind::Denoise, Level::S, 1);
        op.seed = None;
        let spec = CompositionSpec::new(vec![op]);
        let err = fidelity(&gt, &gt, &spec).unwrap_err();
        assert!(err.is_validation());
    }

    #[test]
    fn fid_of_a_set_with_itself_vanishes() {
        let set: Vec<Image> = (0..4).map(|s| noise_image(32, s)).collect();
        assert!(patch_fid(&set, &set, 10, 16, 3).unwrap() < 1e-6);
    }

    #[test]
    fn fid_of_constant_sets_is_mean_gap() {
        let zeros = vec![Image::filled(32, 32, 0.0); 2];
        let ones = vec![Image::filled(32, 32, 1.0); 2];
        let fx = FeatureExtractor::standard();
        let ez = fx.embedding(&Image::filled(16, 16, 0.0)).unwrap();
        let eo = fx.embedding(&Image::filled(16, 16, 1.0)).unwrap();
        let gap: f64 = ez.iter().zip(&eo).map(|(a, b)| (a - b).powi(2)).sum();
        let d = patch_fid(&zeros, &ones, 5, 16, 1).unwrap();
        assert!((d - gap).abs() <= 1e-5, "{d} vs {gap}");
    }

    #[test]
    fn fid_is_symmetric() {
        let a: Vec<Image> = (0..3).map(|s| noise_image(32, s)).collect();
        let b: Vec<Image> = (10..13)
            .map(|s| noise_image(32, s).tensor().map(|v| v * v))
            .map(|t| Image::from_tensor(t).unwrap())
            .collect();
        let ab = patch_fid(&a, &b, 20, 16, 4).unwrap();
        let ba = patch_fid(&b, &a, 20, 16, 4).unwrap();
        assert!(ab > 0.0);
        assert!((ab - ba).abs() < 1e-8, "{ab} vs {ba}");
    }

    #[test]
    fn mean_std_basics() {
        assert_eq!(mean_std(&[1.0, 3.0]), (2.0, 1.0));
        assert_eq!(mean_std(&[]), (0.0, 0.0));
    }
}
