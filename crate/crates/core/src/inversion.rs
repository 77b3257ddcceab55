//! Normalized gradient descent and the three-phase restoration pipeline.
//!
//! Phase I optimizes one global code from the mean latent, Phase II one code
//! per style layer, Phase III one code per filter. Each phase starts from the
//! previous result replicated into the larger space, so the first forward
//! pass of a phase reproduces the last image of the one before.

use serde::{Deserialize, Serialize};

use crate::degrade::{compose_approx, inpaint_mask, ApproxContext, CompositionSpec};
use crate::error::{Error, Result};
use crate::generator::{GeneratorWeights, Latent, LatentGlobal};
use crate::image::Image;
use crate::perceptual::{FeatureExtractor, Objective};
use crate::rng::derive_seed;
use crate::tape::Graph;

/// Samples behind the mean latent used as the Phase I start.
pub const MEAN_LATENT_SAMPLES: usize = 10_000;
pub const MEAN_LATENT_SEED: u64 = 0x6d65_616e;

const FIELD_TAG: u64 = 1;
const HOLE_TAG: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Phase {
    pub rate: f64,
    pub steps: usize,
}

/// Learning rate and step count of each phase. One value serves every task
/// and level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseSchedule {
    pub phases: [Phase; 3],
}

impl Default for PhaseSchedule {
    fn default() -> Self {
        Self {
            phases: [
                Phase { rate: 0.08, steps: 150 },
                Phase { rate: 0.02, steps: 150 },
                Phase {
                    rate: 0.005,
                    steps: 150,
                },
            ],
        }
    }
}

impl PhaseSchedule {
    /// Rates must be finite, positive and strictly decreasing. Zero-step
    /// phases are allowed and pass the latent through.
    pub fn validate(&self) -> Result<()> {
        let r: Vec<f64> = self.phases.iter().map(|p| p.rate).collect();
        if !r.iter().all(|v| v.is_finite() && *v > 0.0) {
            return Err(Error::invalid(format!(
                "learning rates must be positive and finite: {r:?}"
            )));
        }
        if !(r[0] > r[1] && r[1] > r[2]) {
            return Err(Error::invalid(format!(
                "learning rates must strictly decrease across phases: {r:?}"
            )));
        }
        Ok(())
    }

    pub fn total_steps(&self) -> usize {
        self.phases.iter().map(|p| p.steps).sum()
    }
}

/// `w <- w - rate * g / |g|` for every code on its own; codes with a zero
/// gradient stay put.
pub fn ngd_step(latent: &mut Latent, gradient: &[Vec<f64>], rate: f64) -> Result<()> {
    let mut codes = latent.codes_mut();
    if codes.len() != gradient.len() || codes.iter().zip(gradient).any(|(c, g)| c.len() != g.len()) {
        return Err(Error::shape(
            "ngd_step",
            "gradient does not match the latent".to_string(),
        ));
    }
    if let Some(i) = gradient.iter().position(|g| !g.iter().all(|v| v.is_finite())) {
        return Err(Error::NonFinite(format!("gradient of latent code {i}")));
    }
    for (code, g) in codes.iter_mut().zip(gradient) {
        let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            continue;
        }
        for (w, gv) in code.iter_mut().zip(g) {
            *w -= rate * (gv / norm);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    pub phase: usize,
    pub loss: f64,
}

#[derive(Debug, Clone)]
pub struct PhaseOutcome {
    pub latent: Latent,
    /// Image of the first forward pass (the start latent).
    pub first_image: Image,
    /// Image of the returned latent.
    pub image: Image,
    /// Loss of every step, evaluated before its update.
    pub losses: Vec<f64>,
}

/// Everything needed to score a latent against one target.
pub struct Problem<'a> {
    pub weights: &'a GeneratorWeights,
    pub spec: &'a CompositionSpec,
    pub target: &'a Image,
    pub objective: Objective<'a>,
}

impl<'a> Problem<'a> {
    /// Checks the target size against the spec and draws the hole noise for
    /// inpainting chains.
    pub fn new(
        weights: &'a GeneratorWeights,
        features: &'a FeatureExtractor,
        spec: &'a CompositionSpec,
        target: &'a Image,
        seed: u64,
    ) -> Result<Self> {
        spec.validate()?;
        let r = weights.config.resolution;
        let (h, w) = spec.output_size(r, r)?;
        if (target.height(), target.width()) != (h, w) {
            return Err(Error::shape(
                "invert",
                format!(
                    "target is {}x{}, spec {} maps {r}x{r} to {h}x{w}",
                    target.height(),
                    target.width(),
                    spec.code()
                ),
            ));
        }
        let mut objective = Objective::new(features);
        if let Some(mask) = inpaint_mask(spec, r, r)? {
            if (mask.height, mask.width) == (h, w) {
                objective = objective.with_hole_noise(&mask.hole_tensor(), derive_seed(seed, &[HOLE_TAG]));
            }
        }
        Ok(Self {
            weights,
            spec,
            target,
            objective,
        })
    }

    /// One forward/backward pass: the loss and the per-code gradient.
    pub fn loss_and_gradient(&self, latent: &Latent, ctx: &mut ApproxContext) -> Result<(f64, Vec<Vec<f64>>, Image)> {
        let mut g = Graph::new();
        let (vars, img) = self.weights.synthesize_on(&mut g, latent)?;
        let pred = compose_approx(&mut g, self.spec, img, ctx)?;
        let t = g.constant(self.target.tensor().clone());
        let loss = self.objective.evaluate_on(&mut g, pred, t)?;
        let value = g.value(loss).item();
        let image = Image::from_tensor(g.value(img).clone())?;
        if !value.is_finite() {
            return Ok((value, Vec::new(), image));
        }
        let grads = g.backward(loss)?;
        Ok((
            value,
            vars.gradient_codes(&g, &grads, self.weights.config.latent_dim),
            image,
        ))
    }

    /// Objective at `latent` with the noise stand-in at its mean.
    pub fn objective_value(&self, latent: &Latent) -> Result<f64> {
        let mut g = Graph::new();
        let (_, img) = self.weights.synthesize_on(&mut g, latent)?;
        let pred = compose_approx(&mut g, self.spec, img, &mut ApproxContext::Mean)?;
        let t = g.constant(self.target.tensor().clone());
        let loss = self.objective.evaluate_on(&mut g, pred, t)?;
        Ok(g.value(loss).item())
    }
}

/// Runs `steps` NGD updates of `latent`.
pub fn run_phase(
    problem: &Problem,
    latent: Latent,
    rate: f64,
    steps: usize,
    ctx: &mut ApproxContext,
) -> Result<PhaseOutcome> {
    let mut latent = latent;
    let mut losses = Vec::with_capacity(steps);
    let mut first_image = None;
    for step in 0..steps {
        let (loss, grad, image) = problem.loss_and_gradient(&latent, ctx)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("loss at step {step} is {loss}")));
        }
        first_image.get_or_insert(image);
        losses.push(loss);
        ngd_step(&mut latent, &grad, rate).map_err(|e| match e {
            Error::NonFinite(what) => Error::NonFinite(format!("{what} at step {step}")),
            other => other,
        })?;
    }
    let image = problem.weights.synthesize(&latent)?;
    Ok(PhaseOutcome {
        first_image: first_image.unwrap_or_else(|| image.clone()),
        latent,
        image,
        losses,
    })
}

#[derive(Debug, Clone)]
pub struct InversionRun {
    pub seed: u64,
    pub spec: CompositionSpec,
    pub schedule: PhaseSchedule,
    /// Loss of every step across the three phases.
    pub trace: Vec<TraceRow>,
    /// Objective (mean noise field) at the start latent and after each phase.
    pub initial_objective: f64,
    pub phase_objectives: [f64; 3],
    /// Images after Phase I, II and III; `x_plus_plus` is the restoration.
    pub x: Image,
    pub x_plus: Image,
    pub x_plus_plus: Image,
    /// First forward image of Phase II and III.
    pub phase_first_images: [Image; 2],
    pub latent: Latent,
}

impl InversionRun {
    pub fn losses(&self) -> Vec<f64> {
        self.trace.iter().map(|r| r.loss).collect()
    }

    pub fn write_trace_csv(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for r in &self.trace {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Inverts many targets against one generator with one schedule.
pub struct Inverter<'a> {
    pub weights: &'a GeneratorWeights,
    pub features: &'a FeatureExtractor,
    pub schedule: PhaseSchedule,
    pub mean_latent: LatentGlobal,
}

impl<'a> Inverter<'a> {
    pub fn new(weights: &'a GeneratorWeights, schedule: PhaseSchedule) -> Result<Self> {
        let mean = weights.mean_latent(MEAN_LATENT_SAMPLES, MEAN_LATENT_SEED)?;
        Self::with_mean_latent(weights, schedule, mean)
    }

    pub fn with_mean_latent(
        weights: &'a GeneratorWeights,
        schedule: PhaseSchedule,
        mean_latent: LatentGlobal,
    ) -> Result<Self> {
        schedule.validate()?;
        Ok(Self {
            weights,
            features: FeatureExtractor::standard(),
            schedule,
            mean_latent,
        })
    }

    pub fn mean_image(&self) -> Result<Image> {
        self.weights.synthesize(&Latent::Global(self.mean_latent.clone()))
    }

    pub fn problem<'b>(&'b self, target: &'b Image, spec: &'b CompositionSpec, seed: u64) -> Result<Problem<'b>> {
        Problem::new(self.weights, self.features, spec, target, seed)
    }

    pub fn invert(&self, target: &Image, spec: &CompositionSpec, seed: u64) -> Result<InversionRun> {
        let problem = self.problem(target, spec, seed)?;
        let cfg = &self.weights.config;
        let mut ctx = ApproxContext::new(derive_seed(seed, &[FIELD_TAG]));
        let [p1, p2, p3] = self.schedule.phases;
        let start = Latent::Global(self.mean_latent.clone());
        let initial_objective = problem.objective_value(&start)?;

        let one = run_phase(&problem, start, p1.rate, p1.steps, &mut ctx)?;
        let o1 = problem.objective_value(&one.latent)?;
        let Latent::Global(w) = &one.latent else {
            unreachable!("phase I keeps a global code")
        };
        let plus = Latent::Layerwise(w.expand_to_layerwise(cfg));

        let two = run_phase(&problem, plus, p2.rate, p2.steps, &mut ctx)?;
        let o2 = problem.objective_value(&two.latent)?;
        let Latent::Layerwise(w) = &two.latent else {
            unreachable!("phase II keeps layer codes")
        };
        let plus_plus = Latent::Filterwise(w.expand_to_filterwise(cfg));

        let three = run_phase(&problem, plus_plus, p3.rate, p3.steps, &mut ctx)?;
        let o3 = problem.objective_value(&three.latent)?;

        let mut trace = Vec::with_capacity(self.schedule.total_steps());
        for (phase, out) in [&one, &two, &three].into_iter().enumerate() {
            for &loss in &out.losses {
                trace.push(TraceRow {
                    step: trace.len(),
                    phase: phase + 1,
                    loss,
                });
            }
        }
        Ok(InversionRun {
            seed,
            spec: spec.clone(),
            schedule: self.schedule,
            trace,
            initial_objective,
            phase_objectives: [o1, o2, o3],
            phase_first_images: [two.first_image, three.first_image],
            x: one.image,
            x_plus: two.image,
            x_plus_plus: three.image,
            latent: three.latent,
        })
    }
}

/// One-shot inversion with the default schedule.
pub fn invert(target: &Image, spec: &CompositionSpec, weights: &GeneratorWeights, seed: u64) -> Result<InversionRun> {
    Inverter::new(weights, PhaseSchedule::default())?.invert(target, spec, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generator::GeneratorConfig;
    use crate::rng::Stream;

    fn small() -> GeneratorWeights {
        GeneratorWeights::generate(
            GeneratorConfig {
                latent_dim: 16,
                channels: 8,
                resolution: 32,
                mapping_layers: 2,
                demodulate: true,
            },
            3,
        )
        .unwrap()
    }

    fn short(steps: usize) -> PhaseSchedule {
        let mut s = PhaseSchedule::default();
        for p in &mut s.phases {
            p.steps = steps;
        }
        s
    }

    #[test]
    fn default_schedule_is_450_steps() {
        let s = PhaseSchedule::default();
        s.validate().unwrap();
        assert_eq!(s.total_steps(), 450);
        assert_eq!(s.phases.map(|p| p.rate), [0.08, 0.02, 0.005]);
    }

    #[test]
    fn rejects_non_decreasing_rates() {
        let mut s = PhaseSchedule::default();
        s.phases[2].rate = 0.02;
        assert!(s.validate().is_err());
        s.phases[2].rate = -1.0;
        assert!(s.validate().is_err());
    }

    #[test]
    fn unit_direction_for_3_4_gradient() {
        let mut l = Latent::Global(LatentGlobal(vec![0.0; 4]));
        ngd_step(&mut l, &[vec![3.0, 4.0, 0.0, 0.0]], 1.0).unwrap();
        assert_eq!(l.codes()[0], &[-0.6, -0.8, 0.0, 0.0]);
    }

    #[test]
    fn zero_gradient_code_does_not_move() {
        let mut l = Latent::Layerwise(crate::generator::LatentLayerwise(vec![vec![1.0, 2.0], vec![3.0, 4.0]]));
        ngd_step(&mut l, &[vec![0.0, 0.0], vec![0.0, 2.0]], 0.5).unwrap();
        assert_eq!(l.codes()[0], &[1.0, 2.0]);
        assert_eq!(l.codes()[1], &[3.0, 3.5]);
    }

    #[test]
    fn non_finite_gradient_is_an_error() {
        let mut l = Latent::Global(LatentGlobal(vec![0.0; 2]));
        assert!(matches!(
            ngd_step(&mut l, &[vec![f64::NAN, 1.0]], 0.1),
            Err(Error::NonFinite(_))
        ));
        assert!(ngd_step(&mut l, &[vec![1.0]], 0.1).is_err());
    }

    #[test]
    fn zero_steps_return_the_mean_image() {
        let w = small();
        let inv = Inverter::new(&w, short(0)).unwrap();
        let target = inv.mean_image().unwrap();
        let run = inv.invert(&target, &CompositionSpec::identity(), 1).unwrap();
        assert!(run.trace.is_empty());
        assert_eq!(run.x_plus_plus, target);
        assert_eq!(run.phase_objectives[2], 0.0);
    }

    #[test]
    fn phases_hand_off_bit_exactly() {
        let w = small();
        let inv = Inverter::new(&w, short(3)).unwrap();
        let z = w.sample_latent(&mut Stream::new(5)).unwrap();
        let target = w.synthesize(&Latent::Global(z)).unwrap();
        let run = inv.invert(&target, &CompositionSpec::identity(), 2).unwrap();
        assert_eq!(run.trace.len(), 9);
        assert_eq!(run.phase_first_images[0], run.x);
        assert_eq!(run.phase_first_images[1], run.x_plus);
        assert_eq!(
            run.trace.iter().map(|r| r.phase).collect::<Vec<_>>(),
            vec![1, 1, 1, 2, 2, 2, 3, 3, 3]
        );
    }

    #[test]
    fn target_size_must_match_spec() {
        let w = small();
        let inv = Inverter::new(&w, short(1)).unwrap();
        let err = inv
            .invert(&Image::filled(16, 16, 0.5), &CompositionSpec::identity(), 0)
            .unwrap_err();
        assert!(err.is_validation());
    }

    #[test]
    fn runs_are_reproducible() {
        let w = small();
        let inv = Inverter::new(&w, short(2)).unwrap();
        let spec = CompositionSpec::from_json(r#"{"ops":[{"kind":"denoise","level":"S","seed":4}]}"#).unwrap();
        let target = crate::degrade::compose_true(&spec, &inv.mean_image().unwrap()).unwrap();
        let a = inv.invert(&target, &spec, 9).unwrap();
        let b = inv.invert(&target, &spec, 9).unwrap();
        assert_eq!(a.losses(), b.losses());
        assert_eq!(a.x_plus_plus, b.x_plus_plus);
    }
}
