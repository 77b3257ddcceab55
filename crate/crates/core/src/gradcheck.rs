//! Finite-difference checks of every differentiable tape op, and closed-form
//! checks of the surrogate derivatives.
//!
//! Each op is wrapped as `L = sum(op(inputs) * R)` with a fixed random `R`,
//! so every output element carries a distinct upstream gradient. Central
//! differences with step [`FD_STEP`] are compared against the tape.

use std::fmt;

use crate::degrade::jpeg::ROUND_ALPHA;
use crate::error::Result;
use crate::generator::{GeneratorConfig, GeneratorWeights};
use crate::perceptual::{full_loss_on, FeatureExtractor};
use crate::rng::Stream;
use crate::tape::{Graph, Surrogate, Var};
use crate::tensor::Tensor;

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOLERANCE: f64 = 1e-5;
pub const SURROGATE_TOLERANCE: f64 = 1e-10;
pub const SURROGATE_POINTS: usize = 1000;
/// Gradients smaller than this are compared in absolute terms.
const REL_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub max_error: f64,
    pub tolerance: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.max_error.is_finite() && self.max_error < self.tolerance
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GradcheckReport {
    pub results: Vec<CheckResult>,
}

impl GradcheckReport {
    pub fn all_passed(&self) -> bool {
        self.results.iter().all(CheckResult::passed)
    }

    pub fn failures(&self) -> Vec<&CheckResult> {
        self.results.iter().filter(|r| !r.passed()).collect()
    }
}

impl fmt::Display for GradcheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for r in &self.results {
            let status = if r.passed() { "ok" } else { "FAIL" };
            writeln!(
                f,
                "{:<28} max err {:.3e} (tol {:.0e}) {status}",
                r.name, r.max_error, r.tolerance
            )?;
        }
        Ok(())
    }
}

fn random(shape: &[usize], lo: f64, hi: f64, s: &mut Stream) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| lo + (hi - lo) * s.uniform()).collect()).expect("shape")
}

/// Values bounded away from zero, either sign.
fn away_from_zero(shape: &[usize], s: &mut Stream) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let v = 0.3 + 1.2 * s.uniform();
            if s.bernoulli(0.5) {
                v
            } else {
                -v
            }
        })
        .collect();
    Tensor::new(shape, data).expect("shape")
}

/// Relative error with an absolute floor for tiny gradients.
pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

fn scalarize(g: &mut Graph, out: Var, weights: &Tensor) -> Result<Var> {
    let r = g.constant(weights.clone());
    let p = g.mul(out, r)?;
    Ok(g.reduce_sum(p))
}

/// Compares tape gradients of `build` against central differences over
/// every element of every input.
pub fn check_op<F>(name: &str, inputs: &[Tensor], seed: u64, build: F) -> Result<CheckResult>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let eval = |xs: &[Tensor], r: Option<&Tensor>| -> Result<(f64, Vec<Tensor>, Tensor)> {
        let mut g = Graph::new();
        let vars: Vec<Var> = xs.iter().map(|t| g.leaf(t.clone())).collect();
        let out = build(&mut g, &vars)?;
        let weights = match r {
            Some(r) => r.clone(),
            None => random(g.shape(out), -1.0, 1.0, &mut Stream::new(seed)),
        };
        let loss = scalarize(&mut g, out, &weights)?;
        let grads = g.backward(loss)?;
        let gs = vars
            .iter()
            .zip(xs)
            .map(|(&v, t)| grads.get_or_zeros(v, t.shape()))
            .collect();
        Ok((g.value(loss).item(), gs, weights))
    };
    let (_, analytic, weights) = eval(inputs, None)?;
    let mut worst: f64 = 0.0;
    for (i, x) in inputs.iter().enumerate() {
        for j in 0..x.len() {
            let mut xs = inputs.to_vec();
            xs[i].data_mut()[j] = x.data()[j] + FD_STEP;
            let plus = eval(&xs, Some(&weights))?.0;
            xs[i].data_mut()[j] = x.data()[j] - FD_STEP;
            let minus = eval(&xs, Some(&weights))?.0;
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            worst = worst.max(rel_error(analytic[i].data()[j], numeric));
        }
    }
    Ok(CheckResult {
        name: name.into(),
        max_error: worst,
        tolerance: FD_TOLERANCE,
    })
}

// Closed forms written out independently of `Surrogate::derivative`.
fn clamp_surrogate_closed_form(x: f64, lo: f64, hi: f64) -> f64 {
    let t = 2.0 * ((x - lo) / (hi - lo) - 0.5);
    let e = (-t).exp();
    2.0 * e / ((1.0 + e) * (1.0 + e))
}

fn round_surrogate_closed_form(x: f64, alpha: f64) -> f64 {
    // d/dx [ round(x) + (1 - alpha)(x - round x) + alpha (x - round x)^3 ] off the jumps
    let r = x - x.round();
    (1.0 - alpha) + alpha * 3.0 * r.powi(2)
}

/// Backward of a surrogate node at `points`, through the tape.
fn surrogate_grads(rule: Surrogate, points: &[f64]) -> Result<Vec<f64>> {
    let mut g = Graph::new();
    let x = g.leaf(Tensor::from_vec(points.to_vec()));
    let y = g.custom_surrogate(x, rule);
    let l = g.reduce_sum(y);
    let grads = g.backward(l)?;
    Ok(grads.get_or_zeros(x, &[points.len()]).into_data())
}

pub fn check_surrogates(seed: u64) -> Result<Vec<CheckResult>> {
    let mut s = Stream::new(seed);
    let mut out = Vec::new();
    for (name, lo, hi) in [
        ("surrogate clamp [0,1]", 0.0, 1.0),
        ("surrogate clamp [0,255]", 0.0, 255.0),
    ] {
        let span = hi - lo;
        let pts: Vec<f64> = (0..SURROGATE_POINTS)
            .map(|_| lo - 0.5 * span + 2.0 * span * s.uniform())
            .collect();
        let tape = surrogate_grads(Surrogate::SigmoidClamp { lo, hi }, &pts)?;
        let worst = pts
            .iter()
            .zip(&tape)
            .map(|(&p, &t)| (t - clamp_surrogate_closed_form(p, lo, hi)).abs())
            .fold(0.0, f64::max);
        out.push(CheckResult {
            name: name.into(),
            max_error: worst,
            tolerance: SURROGATE_TOLERANCE,
        });
    }
    let pts: Vec<f64> = (0..SURROGATE_POINTS).map(|_| -300.0 + 600.0 * s.uniform()).collect();
    let tape = surrogate_grads(Surrogate::StraightThroughRound { alpha: ROUND_ALPHA }, &pts)?;
    let worst = pts
        .iter()
        .zip(&tape)
        .map(|(&p, &t)| (t - round_surrogate_closed_form(p, ROUND_ALPHA)).abs())
        .fold(0.0, f64::max);
    out.push(CheckResult {
        name: "surrogate round".into(),
        max_error: worst,
        tolerance: SURROGATE_TOLERANCE,
    });

    // anchor values: 0.5 at the clamp midpoint, 1 - alpha at integers
    let anchors = [
        (
            surrogate_grads(Surrogate::SigmoidClamp { lo: 0.0, hi: 255.0 }, &[127.5])?[0],
            0.5,
        ),
        (
            surrogate_grads(Surrogate::StraightThroughRound { alpha: ROUND_ALPHA }, &[3.0])?[0],
            0.2,
        ),
    ];
    out.push(CheckResult {
        name: "surrogate anchors".into(),
        max_error: anchors.iter().map(|(a, b)| (a - b).abs()).fold(0.0, f64::max),
        tolerance: SURROGATE_TOLERANCE,
    });
    Ok(out)
}

/// Runs the full suite.
pub fn run_gradcheck() -> Result<GradcheckReport> {
    let mut s = Stream::new(0x6772_6164);
    let mut results = Vec::new();
    let mut push = |r: Result<CheckResult>| -> Result<()> {
        results.push(r?);
        Ok(())
    };
    let v = |s: &mut Stream| random(&[2, 3, 4], -1.0, 1.0, s);

    let (a, b) = (v(&mut s), v(&mut s));
    push(check_op("add", &[a.clone(), b.clone()], 1, |g, x| g.add(x[0], x[1])))?;
    push(check_op("sub", &[a.clone(), b.clone()], 2, |g, x| g.sub(x[0], x[1])))?;
    push(check_op("mul", &[a.clone(), b.clone()], 3, |g, x| g.mul(x[0], x[1])))?;
    let den = away_from_zero(&[2, 3, 4], &mut s);
    push(check_op("div", &[a.clone(), den.clone()], 4, |g, x| g.div(x[0], x[1])))?;
    push(check_op("scale", std::slice::from_ref(&a), 5, |g, x| {
        Ok(g.scale(x[0], -2.5))
    }))?;
    push(check_op("add_scalar", std::slice::from_ref(&a), 6, |g, x| {
        Ok(g.add_scalar(x[0], 0.75))
    }))?;
    push(check_op("abs", std::slice::from_ref(&den), 7, |g, x| Ok(g.abs(x[0]))))?;
    push(check_op("square", std::slice::from_ref(&a), 8, |g, x| {
        Ok(g.square(x[0]))
    }))?;
    let pos = random(&[2, 3, 4], 0.2, 2.0, &mut s);
    push(check_op("sqrt", std::slice::from_ref(&pos), 9, |g, x| Ok(g.sqrt(x[0]))))?;
    push(check_op("recip", std::slice::from_ref(&den), 10, |g, x| {
        Ok(g.recip(x[0]))
    }))?;
    push(check_op(
        "sigmoid",
        &[random(&[2, 3, 4], -3.0, 3.0, &mut s)],
        11,
        |g, x| Ok(g.sigmoid(x[0])),
    ))?;
    push(check_op("leaky_relu", std::slice::from_ref(&den), 12, |g, x| {
        Ok(g.leaky_relu(x[0], 0.2))
    }))?;
    let inner = random(&[2, 3, 4], 0.05, 0.95, &mut s);
    push(check_op("clamp_exact", &[inner], 13, |g, x| {
        Ok(g.clamp_exact(x[0], 0.0, 1.0))
    }))?;
    push(check_op("reduce_mean", std::slice::from_ref(&a), 14, |g, x| {
        Ok(g.reduce_mean(x[0]))
    }))?;
    push(check_op("reduce_sum", std::slice::from_ref(&a), 15, |g, x| {
        Ok(g.reduce_sum(x[0]))
    }))?;
    push(check_op("sum_trailing", std::slice::from_ref(&a), 16, |g, x| {
        g.sum_trailing(x[0], 1)
    }))?;
    push(check_op("reshape", std::slice::from_ref(&a), 17, |g, x| {
        g.reshape(x[0], &[6, 4])
    }))?;

    let m = random(&[3, 4], -1.0, 1.0, &mut s);
    let n = random(&[4, 5], -1.0, 1.0, &mut s);
    push(check_op("matmul", &[m.clone(), n], 18, |g, x| g.matmul(x[0], x[1])))?;
    push(check_op(
        "add_row",
        &[m.clone(), random(&[4], -1.0, 1.0, &mut s)],
        19,
        |g, x| g.add_row(x[0], x[1]),
    ))?;
    push(check_op(
        "mul_prefix",
        &[a.clone(), random(&[2, 3], -1.0, 1.0, &mut s)],
        20,
        |g, x| g.mul_prefix(x[0], x[1]),
    ))?;
    push(check_op(
        "repeat_rows",
        &[random(&[4], -1.0, 1.0, &mut s)],
        21,
        |g, x| g.repeat_rows(x[0], 3),
    ))?;
    push(check_op("select_row", &[m], 22, |g, x| g.select_row(x[0], 1)))?;

    let img = random(&[3, 8, 8], -1.0, 1.0, &mut s);
    for (k, seed) in [(1usize, 23u64), (3, 24)] {
        let w = random(&[4, 3, k, k], -1.0, 1.0, &mut s);
        push(check_op(&format!("conv2d {k}x{k}"), &[img.clone(), w], seed, |g, x| {
            g.conv2d(x[0], x[1])
        }))?;
    }
    push(check_op("avg_pool 2x2", std::slice::from_ref(&img), 25, |g, x| {
        g.avg_pool2(x[0])
    }))?;
    push(check_op("avg_pool 1x2", std::slice::from_ref(&img), 26, |g, x| {
        g.avg_pool(x[0], 1, 2)
    }))?;
    push(check_op(
        "upsample_nearest",
        &[random(&[3, 4, 4], -1.0, 1.0, &mut s)],
        27,
        |g, x| g.upsample_nearest(x[0], 2, 1),
    ))?;
    push(check_op(
        "channel_l2_normalize",
        std::slice::from_ref(&img),
        28,
        |g, x| g.channel_l2_normalize(x[0], 1e-10),
    ))?;
    push(check_op("channels", std::slice::from_ref(&img), 29, |g, x| {
        g.channels(x[0], 1, 2)
    }))?;
    push(check_op(
        "concat_channels",
        &[img.clone(), random(&[2, 8, 8], -1.0, 1.0, &mut s)],
        30,
        |g, x| g.concat_channels(&[x[0], x[1]]),
    ))?;
    push(check_op("block_dct8", std::slice::from_ref(&img), 31, |g, x| {
        g.block_dct8(x[0], false)
    }))?;
    push(check_op(
        "block_dct8 inverse",
        std::slice::from_ref(&img),
        32,
        |g, x| g.block_dct8(x[0], true),
    ))?;
    push(check_op(
        "pad_edge",
        &[random(&[3, 5, 6], -1.0, 1.0, &mut s)],
        33,
        |g, x| g.pad_edge(x[0], 8, 8),
    ))?;
    push(check_op("crop", std::slice::from_ref(&img), 34, |g, x| {
        g.crop(x[0], 5, 6)
    }))?;

    // composites
    let styles = random(&[4, 3], 0.5, 1.5, &mut s);
    let filters = random(&[4, 3, 3, 3], -1.0, 1.0, &mut s);
    push(check_op(
        "modulated_conv (demod)",
        &[img.clone(), filters, styles],
        35,
        |g, x| GeneratorWeights::modulated_conv(g, x[0], x[1], x[2], true),
    ))?;
    let fx = FeatureExtractor::new(5);
    let target = random(&[3, 32, 32], 0.0, 1.0, &mut s);
    let pred = random(&[3, 32, 32], 0.0, 1.0, &mut s);
    results.push(check_sampled("full_loss", &pred, 37, 48, |g, x| {
        let t = g.constant(target.clone());
        full_loss_on(&fx, g, x, t)
    })?);

    let cfg = GeneratorConfig {
        latent_dim: 8,
        channels: 4,
        resolution: 16,
        mapping_layers: 2,
        demodulate: true,
    };
    let gw = GeneratorWeights::generate(cfg, 9)?;
    let z = gw.sample_latent(&mut s)?;
    let lw = z.expand_to_layerwise(&cfg);
    let flat: Vec<f64> = lw.0.iter().flatten().copied().collect();
    let leaf = Tensor::new(&[cfg.num_style_layers(), cfg.latent_dim], flat)?;
    results.push(check_op("synthesis (layer codes)", &[leaf], 38, |g, x| {
        let codes = (0..cfg.num_style_layers())
            .map(|l| {
                let row = g.select_row(x[0], l)?;
                g.repeat_rows(row, cfg.filters(l))
            })
            .collect::<Result<Vec<_>>>()?;
        gw.synthesize_codes(g, &codes)
    })?);

    results.extend(check_surrogates(0x5u64)?);
    Ok(GradcheckReport { results })
}

/// Like [`check_op`] for a scalar-valued function of one large input,
/// differencing only `samples` seeded coordinates.
pub fn check_sampled<F>(name: &str, input: &Tensor, seed: u64, samples: usize, build: F) -> Result<CheckResult>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    let eval = |x: &Tensor| -> Result<(f64, Tensor)> {
        let mut g = Graph::new();
        let v = g.leaf(x.clone());
        let out = build(&mut g, v)?;
        let grads = g.backward(out)?;
        Ok((g.value(out).item(), grads.get_or_zeros(v, x.shape())))
    };
    let (_, analytic) = eval(input)?;
    let mut s = Stream::new(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..samples {
        let j = s.below(input.len() as u64) as usize;
        let mut x = input.clone();
        x.data_mut()[j] += FD_STEP;
        let plus = eval(&x)?.0;
        x.data_mut()[j] = input.data()[j] - FD_STEP;
        let minus = eval(&x)?.0;
        worst = worst.max(rel_error(analytic.data()[j], (plus - minus) / (2.0 * FD_STEP)));
    }
    Ok(CheckResult {
        name: name.into(),
        max_error: worst,
        tolerance: FD_TOLERANCE,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_forms_at_anchor_points() {
        assert_eq!(clamp_surrogate_closed_form(0.5, 0.0, 1.0), 0.5);
        assert!((round_surrogate_closed_form(7.0, 0.8) - 0.2).abs() < 1e-15);
        assert!((round_surrogate_closed_form(7.5, 0.8) - 0.8).abs() < 1e-15);
    }

    #[test]
    fn detects_a_surrogate_backward() {
        // rounding has a zero finite difference but a nonzero surrogate gradient
        let r = check_op("round", &[Tensor::from_vec(vec![2.3, 3.6])], 1, |g, x| {
            Ok(g.custom_surrogate(x[0], Surrogate::StraightThroughRound { alpha: 0.8 }))
        })
        .unwrap();
        assert!(!r.passed());
    }

    #[test]
    fn full_suite_passes() {
        let report = run_gradcheck().unwrap();
        eprint!("{report}");
        assert!(report.all_passed(), "{report}");
    }

    #[test]
    fn surrogate_checks_pass() {
        assert!(check_surrogates(3).unwrap().iter().all(CheckResult::passed));
    }
}
