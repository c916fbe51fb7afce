//! JSON experiment configs and their conversion into library inputs.
//!
//! Every config names its experiment, its field model, and a seed. The seed
//! is mandatory so that a stored config can never pick up wall-clock state;
//! rerunning the same file reproduces the same report byte for byte.

use serde::Deserialize;
use splitfield::fields::{CellLaw, FieldModel};
use splitfield::mdp::{step_approximate, CgfMode, ContinuousTarget, ScanPoint, ScanSchedule, TailMethod};
use splitfield::measure::{Rect, TestFunction};

/// Machine-readable description of the accepted config document, printed
/// by the `schema` subcommand.
pub const CONFIG_SCHEMA: &str = r#"{
  "config": {
    "base_side": "number > 0, bounds only: side of the seed box (default 2)",
    "c": "number > 0, tail only: threshold multiplier",
    "c_prev": "number > 0, bounds only: lower-dimension constant in the leak term (default 1)",
    "cases": "integer > 0, properties only: randomized cases per suite (default 1000)",
    "doublings": "integer in [1, 30], bounds only: doublings per axis (default 6)",
    "experiment": "one of: sample | cgf | theorem1 | tail | clt | bounds | verify-split | properties",
    "lambdas": "array of finite numbers, cgf only",
    "method": "tail only: exact | tilted | plain (default exact)",
    "mode": "cgf and theorem1: analytic | mc (default analytic)",
    "model": {
      "kind": "centered_poisson | shot_noise | block_iid",
      "centered_poisson": {"dim": "integer >= 1", "intensity": "number > 0", "mass": "number > 0"},
      "shot_noise": {"dim": "integer >= 1", "intensity": "number > 0", "mass": "number > 0", "kernel": "phi block with support in [0, width)^dim"},
      "block_iid": {"dim": "integer >= 1", "law": {"kind": "rademacher | uniform", "rademacher": {"scale": "number > 0"}, "uniform": {"bound": "number > 0"}}}
    },
    "n": "integer: draws (cgf mc, theorem1 mc, tail tilted/plain, clt, verify-split) or sampled-suite draws (properties)",
    "out": "string: output directory (default reports; --out overrides)",
    "phi": {
      "continuous": {"shape": "tent | cosine_bump", "lo": "number", "hi": "number > lo", "height": "number != 0", "eps": "number > 0: sup error of the step approximation"},
      "pieces": "array of {box: [[lo, hi], ...], value: number}; exactly one of pieces/continuous"
    },
    "r": "number > 0: window scale (sample, cgf, tail, clt, verify-split)",
    "schedule": "theorem1 only: array of {r: [per-axis sides], lambda}; lambda * log^dim(effective side) must decrease strictly",
    "seed": "unsigned 64-bit integer, required; reports are deterministic in (config, seed)",
    "tolerance": "number: verdict tolerance (theorem1: relative final deviation, default 0.02; tail: absolute gap to the -1/2 rate, default off)"
  },
  "exit_codes": {
    "0": "every verdict in the report is pass",
    "1": "some verdict is fail",
    "2": "config or runtime error"
  },
  "outputs": "out_dir/<experiment>.json (sorted keys, 12-significant-digit floats) and out_dir/<experiment>.csv (fixed columns per experiment)"
}
"#;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Experiment {
    Sample,
    Cgf,
    Theorem1,
    Tail,
    Clt,
    Bounds,
    VerifySplit,
    Properties,
}

pub const EXPERIMENT_NAMES: [&str; 8] = [
    "sample",
    "cgf",
    "theorem1",
    "tail",
    "clt",
    "bounds",
    "verify-split",
    "properties",
];

impl Experiment {
    pub fn parse(name: &str) -> Result<Self, String> {
        Ok(match name {
            "sample" => Experiment::Sample,
            "cgf" => Experiment::Cgf,
            "theorem1" => Experiment::Theorem1,
            "tail" => Experiment::Tail,
            "clt" => Experiment::Clt,
            "bounds" => Experiment::Bounds,
            "verify-split" => Experiment::VerifySplit,
            "properties" => Experiment::Properties,
            other => {
                return Err(format!(
                    "/experiment: unknown experiment '{other}', expected one of {}",
                    EXPERIMENT_NAMES.join(", ")
                ))
            }
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Experiment::Sample => "sample",
            Experiment::Cgf => "cgf",
            Experiment::Theorem1 => "theorem1",
            Experiment::Tail => "tail",
            Experiment::Clt => "clt",
            Experiment::Bounds => "bounds",
            Experiment::VerifySplit => "verify-split",
            Experiment::Properties => "properties",
        }
    }
}

/// One experiment read from a JSON file. Unknown keys are rejected so a
/// typoed option fails loudly instead of silently using a default.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: String,
    pub seed: u64,
    pub model: ModelConfig,
    #[serde(default)]
    pub phi: Option<PhiConfig>,
    #[serde(default)]
    pub n: Option<usize>,
    #[serde(default)]
    pub r: Option<f64>,
    #[serde(default)]
    pub c: Option<f64>,
    #[serde(default)]
    pub method: Option<String>,
    #[serde(default)]
    pub mode: Option<String>,
    #[serde(default)]
    pub lambdas: Option<Vec<f64>>,
    #[serde(default)]
    pub schedule: Option<Vec<SchedulePointConfig>>,
    #[serde(default)]
    pub tolerance: Option<f64>,
    #[serde(default)]
    pub doublings: Option<usize>,
    #[serde(default)]
    pub base_side: Option<f64>,
    #[serde(default)]
    pub c_prev: Option<f64>,
    #[serde(default)]
    pub cases: Option<usize>,
    #[serde(default)]
    pub out: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelConfig {
    CenteredPoisson {
        dim: usize,
        intensity: f64,
        mass: f64,
    },
    ShotNoise {
        dim: usize,
        intensity: f64,
        mass: f64,
        kernel: PhiConfig,
    },
    BlockIid {
        dim: usize,
        law: LawConfig,
    },
}

#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LawConfig {
    Rademacher { scale: f64 },
    Uniform { bound: f64 },
}

/// A test function: either explicit step pieces or a continuous profile to
/// be replaced by a step approximation of sup error at most `eps`.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhiConfig {
    #[serde(default)]
    pub pieces: Option<Vec<PieceConfig>>,
    #[serde(default)]
    pub continuous: Option<ContinuousConfig>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PieceConfig {
    /// Per-axis [lo, hi) bounds.
    #[serde(rename = "box")]
    pub bounds: Vec<(f64, f64)>,
    pub value: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContinuousConfig {
    pub shape: String,
    pub lo: f64,
    pub hi: f64,
    pub height: f64,
    pub eps: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchedulePointConfig {
    pub r: Vec<f64>,
    pub lambda: f64,
}

pub fn phi_to_test_function(cfg: &PhiConfig, path: &str) -> Result<TestFunction, String> {
    match (&cfg.pieces, &cfg.continuous) {
        (Some(_), Some(_)) => Err(format!("{path}: give either pieces or continuous, not both")),
        (None, None) => Err(format!("{path}: needs either pieces or continuous")),
        (Some(pieces), None) => {
            if pieces.is_empty() {
                return Err(format!("{path}/pieces: needs at least one piece"));
            }
            let mut out = Vec::with_capacity(pieces.len());
            for (i, p) in pieces.iter().enumerate() {
                let rect = Rect::from_bounds(&p.bounds)
                    .map_err(|e| format!("{path}/pieces/{i}/box: {e}"))?;
                out.push((rect, p.value));
            }
            TestFunction::new(out, 0.0).map_err(|e| format!("{path}/pieces: {e}"))
        }
        (None, Some(c)) => {
            let target = match c.shape.as_str() {
                "tent" => ContinuousTarget::Tent {
                    lo: c.lo,
                    hi: c.hi,
                    height: c.height,
                },
                "cosine_bump" => ContinuousTarget::CosineBump {
                    lo: c.lo,
                    hi: c.hi,
                    height: c.height,
                },
                other => {
                    return Err(format!(
                        "{path}/continuous/shape: unknown shape '{other}', expected tent or cosine_bump"
                    ))
                }
            };
            step_approximate(&target, c.eps).map_err(|e| format!("{path}/continuous: {e}"))
        }
    }
}

pub fn build_model(cfg: &ModelConfig) -> Result<FieldModel, String> {
    match cfg {
        ModelConfig::CenteredPoisson {
            dim,
            intensity,
            mass,
        } => FieldModel::centered_poisson(*dim, *intensity, *mass)
            .map_err(|e| format!("/model: {e}")),
        ModelConfig::ShotNoise {
            dim,
            intensity,
            mass,
            kernel,
        } => {
            let k = phi_to_test_function(kernel, "/model/kernel")?;
            FieldModel::shot_noise(*dim, *intensity, *mass, k).map_err(|e| format!("/model: {e}"))
        }
        ModelConfig::BlockIid { dim, law } => {
            let law = match law {
                LawConfig::Rademacher { scale } => CellLaw::Rademacher { scale: *scale },
                LawConfig::Uniform { bound } => CellLaw::Uniform { bound: *bound },
            };
            FieldModel::block_iid(*dim, law).map_err(|e| format!("/model: {e}"))
        }
    }
}

impl ExperimentConfig {
    pub fn experiment(&self) -> Result<Experiment, String> {
        Experiment::parse(&self.experiment)
    }

    pub fn model(&self) -> Result<FieldModel, String> {
        build_model(&self.model)
    }

    pub fn phi(&self) -> Result<TestFunction, String> {
        match &self.phi {
            Some(p) => phi_to_test_function(p, "/phi"),
            None => Err(format!(
                "/phi: required for experiment {}",
                self.experiment
            )),
        }
    }

    pub fn require_r(&self) -> Result<f64, String> {
        match self.r {
            Some(r) if r.is_finite() && r > 0.0 => Ok(r),
            Some(_) => Err("/r: must be positive and finite".into()),
            None => Err(format!("/r: required for experiment {}", self.experiment)),
        }
    }

    pub fn require_c(&self) -> Result<f64, String> {
        match self.c {
            Some(c) if c.is_finite() && c > 0.0 => Ok(c),
            Some(_) => Err("/c: must be positive and finite".into()),
            None => Err(format!("/c: required for experiment {}", self.experiment)),
        }
    }

    pub fn require_n(&self) -> Result<usize, String> {
        match self.n {
            Some(n) if n > 0 => Ok(n),
            Some(_) => Err("/n: must be positive".into()),
            None => Err(format!("/n: required for experiment {}", self.experiment)),
        }
    }

    pub fn mode(&self) -> Result<CgfMode, String> {
        match self.mode.as_deref() {
            None | Some("analytic") => Ok(CgfMode::Analytic),
            Some("mc") => Ok(CgfMode::Mc),
            Some(other) => Err(format!(
                "/mode: unknown mode '{other}', expected analytic or mc"
            )),
        }
    }

    pub fn tail_method(&self) -> Result<TailMethod, String> {
        match self.method.as_deref() {
            None | Some("exact") => Ok(TailMethod::Exact),
            Some("tilted") => Ok(TailMethod::Tilted),
            Some("plain") => Ok(TailMethod::Plain),
            Some(other) => Err(format!(
                "/method: unknown method '{other}', expected exact, tilted or plain"
            )),
        }
    }

    pub fn lambdas(&self) -> Result<Vec<f64>, String> {
        match &self.lambdas {
            Some(l) if !l.is_empty() => {
                if l.iter().any(|x| !x.is_finite()) {
                    return Err("/lambdas: entries must be finite".into());
                }
                Ok(l.clone())
            }
            Some(_) => Err("/lambdas: needs at least one entry".into()),
            None => Err(format!(
                "/lambdas: required for experiment {}",
                self.experiment
            )),
        }
    }

    pub fn schedule(&self) -> Result<ScanSchedule, String> {
        let pts = match &self.schedule {
            Some(p) if !p.is_empty() => p,
            Some(_) => return Err("/schedule: needs at least one point".into()),
            None => {
                return Err(format!(
                    "/schedule: required for experiment {}",
                    self.experiment
                ))
            }
        };
        let points = pts
            .iter()
            .map(|p| ScanPoint {
                r: p.r.clone(),
                lambda: p.lambda,
            })
            .collect();
        ScanSchedule::new(points).map_err(|e| format!("/schedule: {e}"))
    }
}
