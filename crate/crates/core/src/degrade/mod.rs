//! Degradation models: each family has a true forward model `f` and a
//! differentiable stand-in `f̂` built on the tape.

pub mod compose;
pub mod jpeg;
pub mod mask;
pub mod noise;
pub mod resample;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, Stream};

pub use compose::{compose, compose_approx, compose_true, downsample_approx, inpaint_mask, ApproxContext, Mode};
pub use mask::StrokeMask;
pub use resample::Filter;

/// Degradation families, listed in degradation order: an image is
/// downsampled, then noised, then JPEG-compressed, then masked.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Upsample,
    Denoise,
    Deartifact,
    Inpaint,
}

impl Kind {
    pub const CANONICAL: [Kind; 4] = [Kind::Upsample, Kind::Denoise, Kind::Deartifact, Kind::Inpaint];

    /// Single-letter code used in composition names (U, N, A, P).
    pub fn letter(self) -> char {
        match self {
            Kind::Upsample => 'U',
            Kind::Denoise => 'N',
            Kind::Deartifact => 'A',
            Kind::Inpaint => 'P',
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Kind::Upsample => "upsample",
            Kind::Denoise => "denoise",
            Kind::Deartifact => "deartifact",
            Kind::Inpaint => "inpaint",
        }
    }
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Level {
    XS,
    S,
    M,
    L,
    XL,
}

impl Level {
    pub const ALL: [Level; 5] = [Level::XS, Level::S, Level::M, Level::L, Level::XL];

    fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

impl FromStr for Level {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Level::ALL
            .into_iter()
            .find(|l| l.to_string() == s)
            .ok_or_else(|| Error::invalid(format!("unknown level {s:?} (expected XS, S, M, L or XL)")))
    }
}

/// Resolved parameters of one degradation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Params {
    /// `filter = None` draws the filter uniformly from the stage seed.
    Upsample {
        factor: usize,
        filter: Option<Filter>,
    },
    Denoise {
        k_p: f64,
        k_b: f64,
    },
    Deartifact {
        quality: u8,
    },
    Inpaint {
        strokes: usize,
    },
}

const K_DOWN: [usize; 5] = [2, 4, 8, 16, 32];
const K_P: [f64; 5] = [96.0, 48.0, 24.0, 12.0, 6.0];
const K_B: [f64; 5] = [0.04, 0.08, 0.16, 0.32, 0.64];
const K_JPEG: [u8; 5] = [18, 15, 12, 9, 6];
const K_STROKES: [usize; 5] = [1, 5, 9, 13, 17];

pub fn level_params(kind: Kind, level: Level) -> Params {
    let i = level.index();
    match kind {
        Kind::Upsample => Params::Upsample {
            factor: K_DOWN[i],
            filter: None,
        },
        Kind::Denoise => Params::Denoise {
            k_p: K_P[i],
            k_b: K_B[i],
        },
        Kind::Deartifact => Params::Deartifact { quality: K_JPEG[i] },
        Kind::Inpaint => Params::Inpaint { strokes: K_STROKES[i] },
    }
}

/// One degradation: kind, a level or explicit parameters, and the seed that
/// fixes every random draw of the true model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DegradationSpec {
    pub kind: Kind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub level: Option<Level>,
    /// Required when the true model is stochastic.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub factor: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub filter: Option<Filter>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_p: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_b: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quality: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strokes: Option<usize>,
}

impl DegradationSpec {
    pub fn at_level(kind: Kind, level: Level, seed: u64) -> Self {
        Self {
            kind,
            level: Some(level),
            seed: Some(seed),
            factor: None,
            filter: None,
            k_p: None,
            k_b: None,
            quality: None,
            strokes: None,
        }
    }

    /// Level parameters overridden by any explicit fields.
    pub fn params(&self) -> Result<Params> {
        let base = self.level.map(|l| level_params(self.kind, l));
        let missing = |what: &str| Error::invalid(format!("{} spec needs a level or an explicit {what}", self.kind));
        let p = match (self.kind, base) {
            (Kind::Upsample, b) => {
                let factor = match (self.factor, b) {
                    (Some(f), _) => f,
                    (None, Some(Params::Upsample { factor, .. })) => factor,
                    _ => return Err(missing("factor")),
                };
                if factor == 0 {
                    return Err(Error::invalid("downsampling factor must be positive"));
                }
                Params::Upsample {
                    factor,
                    filter: self.filter,
                }
            }
            (Kind::Denoise, b) => {
                let (lk_p, lk_b) = match b {
                    Some(Params::Denoise { k_p, k_b }) => (Some(k_p), Some(k_b)),
                    _ => (None, None),
                };
                let k_p = self.k_p.or(lk_p).ok_or_else(|| missing("k_p"))?;
                let k_b = self.k_b.or(lk_b).ok_or_else(|| missing("k_b"))?;
                if !(k_p > 0.0 && k_p.is_finite()) || !(0.0..=1.0).contains(&k_b) {
                    return Err(Error::invalid(format!(
                        "noise parameters out of range: k_p={k_p}, k_b={k_b}"
                    )));
                }
                Params::Denoise { k_p, k_b }
            }
            (Kind::Deartifact, b) => {
                let quality = match (self.quality, b) {
                    (Some(q), _) => q,
                    (None, Some(Params::Deartifact { quality })) => quality,
                    _ => return Err(missing("quality")),
                };
                jpeg::check_quality(quality as i64)?;
                Params::Deartifact { quality }
            }
            (Kind::Inpaint, b) => {
                let strokes = match (self.strokes, b) {
                    (Some(s), _) => s,
                    (None, Some(Params::Inpaint { strokes })) => strokes,
                    _ => return Err(missing("strokes")),
                };
                Params::Inpaint { strokes }
            }
        };
        Ok(p)
    }

    /// The stage seed; an error when a stochastic stage has none.
    pub fn seed(&self) -> Result<u64> {
        match self.seed {
            Some(s) => Ok(s),
            None if self.is_stochastic() => Err(Error::invalid(format!("{} stage needs a seed", self.kind))),
            None => Ok(0),
        }
    }

    /// The downsampling filter: explicit, or drawn uniformly from the seed.
    pub fn resolved_filter(&self) -> Result<Option<Filter>> {
        Ok(match self.params()? {
            Params::Upsample { filter: Some(f), .. } => Some(f),
            Params::Upsample { filter: None, .. } => {
                let mut s = Stream::new(derive_seed(self.seed()?, &[0xf1]));
                Some(Filter::ALL[s.below(3) as usize])
            }
            _ => None,
        })
    }

    /// Whether the true model draws random numbers.
    pub fn is_stochastic(&self) -> bool {
        matches!(self.kind, Kind::Denoise | Kind::Inpaint) || (self.kind == Kind::Upsample && self.filter.is_none())
    }
}

/// An ordered chain of degradations, in degradation order.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompositionSpec {
    pub ops: Vec<DegradationSpec>,
}

impl CompositionSpec {
    pub fn new(ops: Vec<DegradationSpec>) -> Self {
        Self { ops }
    }

    pub fn identity() -> Self {
        Self::default()
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(s)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("spec serializes")
    }

    /// The chain must be a subsequence of upsample, denoise, deartifact, inpaint.
    pub fn validate(&self) -> Result<()> {
        for pair in self.ops.windows(2) {
            if pair[0].kind >= pair[1].kind {
                return Err(Error::invalid(format!(
                    "degradations out of order: {} before {}; stages must follow the canonical \
                     degradation order upsample -> denoise -> deartifact -> inpaint \
                     (restored as inpaint ∘ deartifact ∘ denoise ∘ upsample)",
                    pair[0].kind, pair[1].kind
                )));
            }
        }
        for op in &self.ops {
            op.params()?;
        }
        Ok(())
    }

    /// Short name such as "UNAP"; "I" for the identity.
    pub fn code(&self) -> String {
        if self.ops.is_empty() {
            return "I".into();
        }
        self.ops.iter().map(|o| o.kind.letter()).collect()
    }

    pub fn contains(&self, kind: Kind) -> bool {
        self.ops.iter().any(|o| o.kind == kind)
    }

    /// The same chain with every stage seed replaced by a child of `seed`.
    pub fn reseeded(&self, seed: u64) -> Self {
        Self {
            ops: self
                .ops
                .iter()
                .enumerate()
                .map(|(i, op)| DegradationSpec {
                    seed: Some(derive_seed(seed, &[op.seed.unwrap_or(0), i as u64])),
                    ..op.clone()
                })
                .collect(),
        }
    }

    /// Output size for an `h` x `w` input.
    pub fn output_size(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let (mut h, mut w) = (h, w);
        for op in &self.ops {
            if let Params::Upsample { factor, .. } = op.params()? {
                if h % factor != 0 || w % factor != 0 {
                    return Err(Error::invalid(format!("factor {factor} does not divide {h}x{w}")));
                }
                h /= factor;
                w /= factor;
            }
        }
        Ok((h, w))
    }
}
