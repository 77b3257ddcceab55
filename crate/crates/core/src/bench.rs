//! Benchmark harness: generator-sample datasets, the composition table, and
//! the restore-and-score loop that writes the metric CSVs.
//!
//! Every cell of a plan is restored with the same [`PhaseSchedule`]; plans
//! cannot carry per-cell overrides.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::degrade::{compose_true, CompositionSpec, DegradationSpec, Kind, Level};
use crate::error::{Error, Result};
use crate::generator::{GeneratorWeights, Latent, LatentGlobal};
use crate::image::Image;
use crate::inversion::{Inverter, PhaseSchedule};
use crate::perceptual::{accuracy, fidelity, mean_std, patch_fid, CellSummary, MetricsReport, SampleMetrics};
use crate::rng::{derive_seed, Stream};

/// Worker threads for a benchmark; defaults to 1.
pub const WORKERS_ENV: &str = "RGI_WORKERS";

const DATASET_TAG: u64 = 0xda7a;
const SPEC_TAG: u64 = 0x5bec;
const CROP_TAG: u64 = 0xc809;

/// The eleven multi-stage chains scored by the composition benchmark.
pub const COMPOSITE_CODES: [&str; 11] = ["NA", "AP", "UA", "NP", "UN", "UP", "UNP", "UAP", "UNA", "NAP", "UNAP"];

/// `n` clean images from mapped standard-normal draws, with their latents.
pub fn make_dataset(weights: &GeneratorWeights, n: usize, seed: u64) -> Result<(Vec<Image>, Vec<LatentGlobal>)> {
    if n == 0 {
        return Err(Error::invalid("dataset needs at least one image"));
    }
    let mut s = Stream::new(seed);
    let mut images = Vec::with_capacity(n);
    let mut latents = Vec::with_capacity(n);
    for _ in 0..n {
        let w = weights.sample_latent(&mut s)?;
        images.push(weights.synthesize(&Latent::Global(w.clone()))?);
        latents.push(w);
    }
    Ok((images, latents))
}

/// Parses a letter code such as "UNP" into a chain with every stage at `level`.
pub fn composition_from_code(code: &str, level: Level, seed: u64) -> Result<CompositionSpec> {
    if code == "I" || code.is_empty() {
        return Ok(CompositionSpec::identity());
    }
    let ops = code
        .chars()
        .map(|c| {
            Kind::CANONICAL
                .into_iter()
                .find(|k| k.letter() == c)
                .map(|k| DegradationSpec::at_level(k, level, seed))
                .ok_or_else(|| Error::invalid(format!("unknown degradation letter {c:?} in {code:?}")))
        })
        .collect::<Result<Vec<_>>>()?;
    let spec = CompositionSpec::new(ops);
    spec.validate()?;
    Ok(spec)
}

/// The four single tasks followed by the eleven composites, all at M.
pub fn enumerate_compositions() -> Vec<CompositionSpec> {
    let singles = Kind::CANONICAL
        .into_iter()
        .map(|k| CompositionSpec::new(vec![DegradationSpec::at_level(k, Level::M, 0)]));
    let composites = COMPOSITE_CODES
        .iter()
        .map(|c| composition_from_code(c, Level::M, 0).expect("table codes are canonical"));
    singles.chain(composites).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
pub enum CellPlan {
    /// One task at each listed level.
    Task { task: Kind, levels: Vec<Level> },
    /// A letter-coded chain ("UNAP", or "I" for no degradation) at M.
    Composition { composition: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkPlan {
    pub cells: Vec<CellPlan>,
    #[serde(default = "default_images")]
    pub images: usize,
    pub base_seed: u64,
    /// The one schedule used for every cell; the default when absent.
    #[serde(default)]
    pub schedule: Option<PhaseSchedule>,
    #[serde(default = "default_crops")]
    pub crops_per_image: usize,
    #[serde(default = "default_crop_size")]
    pub crop_size: usize,
}

fn default_images() -> usize {
    20
}

fn default_crops() -> usize {
    100
}

fn default_crop_size() -> usize {
    32
}

/// One (task, level) cell with its template chain.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub task: String,
    pub level: String,
    pub spec: CompositionSpec,
}

impl BenchmarkPlan {
    pub fn from_json(s: &str) -> Result<Self> {
        let plan: Self = serde_json::from_str(s)?;
        plan.validate()?;
        Ok(plan)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.cells.is_empty() || self.images == 0 || self.crops_per_image == 0 {
            return Err(Error::invalid("plan needs at least one cell, one image and one crop"));
        }
        self.schedule().validate()?;
        self.expand().map(|_| ())
    }

    pub fn schedule(&self) -> PhaseSchedule {
        self.schedule.unwrap_or_default()
    }

    pub fn expand(&self) -> Result<Vec<Cell>> {
        let mut cells = Vec::new();
        for c in &self.cells {
            match c {
                CellPlan::Task { task, levels } => {
                    if levels.is_empty() {
                        return Err(Error::invalid(format!("{task} cell lists no levels")));
                    }
                    for &level in levels {
                        cells.push(Cell {
                            task: task.name().into(),
                            level: level.to_string(),
                            spec: CompositionSpec::new(vec![DegradationSpec::at_level(*task, level, 0)]),
                        });
                    }
                }
                CellPlan::Composition { composition } => {
                    let spec = composition_from_code(composition, Level::M, 0)?;
                    cells.push(Cell {
                        task: spec.code(),
                        level: Level::M.to_string(),
                        spec,
                    });
                }
            }
        }
        Ok(cells)
    }
}

/// Seed of the run restoring image `image` of cell `cell`.
pub fn run_seed(base_seed: u64, cell: usize, image: usize) -> u64 {
    derive_seed(base_seed, &[cell as u64, image as u64])
}

/// Per-run numbers kept in memory next to the CSV report.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub cell: usize,
    pub image: usize,
    pub seed: u64,
    pub spec: CompositionSpec,
    /// `None` when the run failed; the error text is in `error`.
    pub fidelity: Option<f64>,
    pub accuracy: Option<f64>,
    /// Same metrics for the mean-latent image.
    pub baseline_fidelity: f64,
    pub baseline_accuracy: f64,
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct BenchmarkOutcome {
    pub report: MetricsReport,
    pub runs: Vec<RunRecord>,
    /// The schedule each cell ran with, in cell order.
    pub cell_schedules: Vec<PhaseSchedule>,
}

fn workers() -> usize {
    std::env::var(WORKERS_ENV)
        .ok()
        .and_then(|v| v.parse().ok())
        .filter(|&n| n > 0)
        .unwrap_or(1)
}

struct Restored {
    record: RunRecord,
    image: Option<Image>,
    target: Image,
}

fn restore_one(
    inv: &Inverter,
    clean: &Image,
    mean_image: &Image,
    cell: usize,
    spec: &CompositionSpec,
    i: usize,
    base_seed: u64,
) -> Result<Restored> {
    let seed = run_seed(base_seed, cell, i);
    let spec = spec.reseeded(derive_seed(seed, &[SPEC_TAG]));
    let target = compose_true(&spec, clean)?;
    let baseline_fidelity = fidelity(mean_image, &target, &spec)?;
    let baseline_accuracy = accuracy(mean_image, clean)?;
    let mut record = RunRecord {
        cell,
        image: i,
        seed,
        spec: spec.clone(),
        fidelity: None,
        accuracy: None,
        baseline_fidelity,
        baseline_accuracy,
        error: None,
    };
    let image = match inv.invert(&target, &spec, seed) {
        Ok(run) => {
            record.fidelity = Some(fidelity(&run.x_plus_plus, &target, &spec)?);
            record.accuracy = Some(accuracy(&run.x_plus_plus, clean)?);
            Some(run.x_plus_plus)
        }
        Err(e) => {
            record.error = Some(e.to_string());
            None
        }
    };
    Ok(Restored { record, image, target })
}

/// Restores every image of every cell, scores the results, and writes
/// `samples.csv`, `summary.csv` and `images/<task>_<level>/` under `out_dir`.
pub fn run_benchmark(
    plan: &BenchmarkPlan,
    weights: &GeneratorWeights,
    out_dir: impl AsRef<Path>,
) -> Result<BenchmarkOutcome> {
    plan.validate()?;
    let out_dir = out_dir.as_ref();
    let cells = plan.expand()?;
    let schedule = plan.schedule();
    let inv = Inverter::new(weights, schedule)?;
    let mean_image = inv.mean_image()?;
    let (clean, _) = make_dataset(weights, plan.images, derive_seed(plan.base_seed, &[DATASET_TAG]))?;
    let n_workers = workers().min(plan.images);

    let mut report = MetricsReport::default();
    let mut runs = Vec::new();
    let mut cell_schedules = Vec::new();
    for (ci, cell) in cells.iter().enumerate() {
        // single-hyperparameter contract: one schedule for every cell
        assert_eq!(
            inv.schedule, schedule,
            "cell {} would run with a different schedule",
            cell.task
        );
        cell_schedules.push(inv.schedule);

        let mut slots: Vec<Option<Result<Restored>>> = (0..plan.images).map(|_| None).collect();
        std::thread::scope(|scope| {
            let chunks: Vec<_> = slots.chunks_mut(plan.images.div_ceil(n_workers)).enumerate().collect();
            let per = plan.images.div_ceil(n_workers);
            for (k, chunk) in chunks {
                let (inv, clean, mean_image) = (&inv, &clean, &mean_image);
                scope.spawn(move || {
                    for (j, slot) in chunk.iter_mut().enumerate() {
                        let i = k * per + j;
                        *slot = Some(restore_one(
                            inv,
                            &clean[i],
                            mean_image,
                            ci,
                            &cell.spec,
                            i,
                            plan.base_seed,
                        ));
                    }
                });
            }
        });

        let dir = out_dir.join("images").join(format!("{}_{}", cell.task, cell.level));
        fs::create_dir_all(&dir)?;
        let mut restored = Vec::new();
        let (mut accs, mut fids, mut failures) = (Vec::new(), Vec::new(), 0);
        for slot in slots {
            let r = slot.expect("every image slot is filled")?;
            let i = r.record.image;
            r.target.save(dir.join(format!("{i:03}_target.ppm")))?;
            match (&r.image, r.record.accuracy, r.record.fidelity) {
                (Some(img), Some(a), Some(f)) => {
                    img.save(dir.join(format!("{i:03}_restored.ppm")))?;
                    report.samples.push(SampleMetrics {
                        run_id: format!("{}-{}-{i:03}", cell.task, cell.level),
                        task: cell.task.clone(),
                        level: cell.level.clone(),
                        image_id: i,
                        accuracy: a,
                        fidelity: f,
                    });
                    accs.push(a);
                    fids.push(f);
                    restored.push(img.clone());
                }
                _ => failures += 1,
            }
            runs.push(r.record);
        }
        let pfid = if restored.is_empty() {
            f64::NAN
        } else {
            patch_fid(
                &restored,
                &clean,
                plan.crops_per_image,
                plan.crop_size,
                derive_seed(plan.base_seed, &[CROP_TAG]),
            )?
        };
        let (accuracy_mean, accuracy_std) = mean_std(&accs);
        let (fidelity_mean, fidelity_std) = mean_std(&fids);
        report.summary.push(CellSummary {
            task: cell.task.clone(),
            level: cell.level.clone(),
            images: restored.len(),
            failures,
            accuracy_mean,
            accuracy_std,
            fidelity_mean,
            fidelity_std,
            patch_fid: pfid,
        });
    }
    fs::create_dir_all(out_dir)?;
    report.write_samples_csv(out_dir.join("samples.csv"))?;
    report.write_summary_csv(out_dir.join("summary.csv"))?;
    Ok(BenchmarkOutcome {
        report,
        runs,
        cell_schedules,
    })
}
