//! Scenario files: TOML experiment descriptions.
//!
//! Lengths are written either as bare numbers in meters or as strings with a
//! unit suffix (`"532nm"`, `"5um"`, `"10mm"`, `"0.395m"`). Angles are radians
//! or multiples of pi (`"pi"`, `"0.5pi"`). Any key can be overridden with a
//! dotted path (`source.D0=0.1mm`) before validation.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::de::{self, Deserializer, Visitor};
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::field::Grid;
use crate::io::Table;
use crate::objects::{
    AmplitudeObject, AmplitudeProfile, Diaphragm, Object, PhaseObject, PhaseProfile, DEFAULT_PHASE,
    DEFAULT_SEPARATION, DEFAULT_SLIT_WIDTH,
};
use crate::propagation::{ApertureShape, Element, OpticalTrain};
use crate::speckle::{check_extent, Envelope, SpeckleMethod, SpeckleSourceConfig};

pub const DEFAULT_FOCAL: f64 = 0.2;
pub const DEFAULT_DIAPHRAGM: f64 = 3e-3;
pub const DEFAULT_WINDOW: usize = 512;
pub const DEFAULT_SINGLE_SHOT_FRAMES: u64 = 100;
pub const DEFAULT_BLOCKS: usize = 20;
pub const DEFAULT_SEED: u64 = 1;
pub const DEFAULT_CORRELATION_FRAMES: u64 = 20_000;
/// Largest oracle grid; quadrature builds dense `n x n` kernels.
pub const ORACLE_MAX_SAMPLES: usize = 128;

/// Keys that hold a single number (possibly with a unit) and may be swept.
pub const NUMERIC_KEYS: &[&str] = &[
    "seed",
    "frames",
    "grid.n",
    "grid.dx",
    "source.D0",
    "source.z",
    "source.lambda",
    "source.target_speckle_size",
    "source.waist",
    "diaphragm.D",
    "object.phase",
    "object.slit_width",
    "object.separation",
    "object.width",
    "object.period",
    "object.length",
    "arms.focal",
    "analysis.window",
    "analysis.single_shot_frames",
    "analysis.blocks",
    "analysis.control_d0",
    "analysis.control_frames",
];

pub fn is_numeric_key(key: &str) -> bool {
    NUMERIC_KEYS.contains(&key)
}

/// Parse a length: a number in meters, optionally followed by `nm`, `um`,
/// `µm`, `mm`, `cm` or `m`.
pub fn parse_length(s: &str) -> std::result::Result<f64, String> {
    let t = s.trim();
    if let Ok(v) = t.parse::<f64>() {
        return finite_length(v, s);
    }
    const UNITS: &[(&str, f64)] = &[
        ("nm", 1e9),
        ("um", 1e6),
        ("µm", 1e6),
        ("mm", 1e3),
        ("cm", 1e2),
        ("m", 1.0),
    ];
    // Dividing by the exact per-meter count keeps "5um" == 5e-6.
    for (suffix, per_meter) in UNITS {
        if let Some(num) = t.strip_suffix(suffix) {
            if let Ok(v) = num.trim().parse::<f64>() {
                return finite_length(v / per_meter, s);
            }
        }
    }
    Err(format!("invalid length `{s}` (expected e.g. 0.002, \"2mm\", \"532nm\")"))
}

fn finite_length(v: f64, s: &str) -> std::result::Result<f64, String> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("invalid length `{s}`"))
    }
}

/// Parse an angle: radians, or a multiple of pi (`"pi"`, `"0.5pi"`, `"-pi"`).
pub fn parse_angle(s: &str) -> std::result::Result<f64, String> {
    let t = s.trim();
    if let Ok(v) = t.parse::<f64>() {
        return Ok(v);
    }
    if let Some(k) = t.strip_suffix("pi") {
        let k = k.trim();
        let factor = match k {
            "" | "+" => Ok(1.0),
            "-" => Ok(-1.0),
            _ => k.trim_end_matches('*').parse::<f64>(),
        };
        if let Ok(f) = factor {
            return Ok(f * std::f64::consts::PI);
        }
    }
    Err(format!("invalid angle `{s}` (expected radians or e.g. \"pi\", \"0.5pi\")"))
}

macro_rules! number_or_string {
    ($name:ident, $parse:path, $what:literal) => {
        #[derive(Debug, Clone, Copy, PartialEq)]
        struct $name(f64);

        impl<'de> Deserialize<'de> for $name {
            fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
                struct V;
                impl Visitor<'_> for V {
                    type Value = f64;
                    fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                        f.write_str($what)
                    }
                    fn visit_f64<E: de::Error>(self, v: f64) -> std::result::Result<f64, E> {
                        Ok(v)
                    }
                    fn visit_i64<E: de::Error>(self, v: i64) -> std::result::Result<f64, E> {
                        Ok(v as f64)
                    }
                    fn visit_u64<E: de::Error>(self, v: u64) -> std::result::Result<f64, E> {
                        Ok(v as f64)
                    }
                    fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<f64, E> {
                        $parse(v).map_err(E::custom)
                    }
                }
                d.deserialize_any(V).map($name)
            }
        }
    };
}

number_or_string!(Length, parse_length, "a length (number in meters or string with unit)");
number_or_string!(Angle, parse_angle, "an angle (radians or multiple of pi)");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    GhostDiffraction,
    CoherenceTransition,
    CoherentLimit,
    OracleSuite,
}

impl ExperimentKind {
    pub fn name(&self) -> &'static str {
        match self {
            ExperimentKind::GhostDiffraction => "ghost_diffraction",
            ExperimentKind::CoherenceTransition => "coherence_transition",
            ExperimentKind::CoherentLimit => "coherent_limit",
            ExperimentKind::OracleSuite => "oracle_suite",
        }
    }
}

/// Artifact selectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputKind {
    /// Single-shot arm-1 intensity (CSV profile and PGM in 2D).
    SingleShot,
    /// Frame-averaged arm-1 intensity.
    MeanI1,
    /// Full correlation map (CSV and PGM).
    GMap,
    /// x2-cut of the correlation map and its reference.
    GCut,
    /// Source-plane speckle statistics.
    SourceStats,
}

pub const ALL_OUTPUTS: &[OutputKind] = &[
    OutputKind::SingleShot,
    OutputKind::MeanI1,
    OutputKind::GMap,
    OutputKind::GCut,
    OutputKind::SourceStats,
];

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    name: Option<String>,
    experiment: ExperimentKind,
    seed: Option<u64>,
    frames: Option<u64>,
    grid: RawGrid,
    #[serde(default)]
    source: RawSource,
    #[serde(default)]
    diaphragm: RawDiaphragm,
    object: Option<RawObject>,
    #[serde(default)]
    arms: RawArms,
    #[serde(default)]
    analysis: RawAnalysis,
    outputs: Option<Vec<OutputKind>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGrid {
    dims: usize,
    n: usize,
    dx: Length,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSource {
    method: Option<RawMethod>,
    #[serde(rename = "D0")]
    d0: Option<Length>,
    z: Option<Length>,
    lambda: Option<Length>,
    target_speckle_size: Option<Length>,
    envelope: Option<RawEnvelope>,
    waist: Option<Length>,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(rename_all = "snake_case")]
enum RawMethod {
    Spectral,
    Physical,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(rename_all = "snake_case")]
enum RawEnvelope {
    Uniform,
    Gaussian,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(rename_all = "snake_case")]
enum RawShape {
    Circle,
    Slit,
}

impl From<RawShape> for ApertureShape {
    fn from(s: RawShape) -> Self {
        match s {
            RawShape::Circle => ApertureShape::Circle,
            RawShape::Slit => ApertureShape::Slit,
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDiaphragm {
    #[serde(rename = "D")]
    d: Option<Length>,
    shape: Option<RawShape>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawObject {
    kind: ObjectKind,
    phase: Option<Angle>,
    slit_width: Option<Length>,
    separation: Option<Length>,
    width: Option<Length>,
    period: Option<Length>,
    length: Option<Length>,
    file: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectKind {
    PhaseDoubleSlit,
    PhaseStep,
    PhaseGrating,
    AmplitudeDoubleSlit,
    AmplitudeSingleSlit,
    CustomPhase,
    CustomAmplitude,
    None,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawArms {
    focal: Option<Length>,
    arm1: Option<Vec<RawElement>>,
    arm2: Option<Vec<RawElement>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawElement {
    element: RawElementKind,
    f: Option<Length>,
    z: Option<Length>,
    #[serde(rename = "D")]
    d: Option<Length>,
    shape: Option<RawShape>,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(rename_all = "snake_case")]
enum RawElementKind {
    Diaphragm,
    Object,
    Fourier,
    FreeSpace,
    Lens,
    Aperture,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAnalysis {
    window: Option<usize>,
    d0_list: Option<Vec<Length>>,
    single_shot_frames: Option<u64>,
    blocks: Option<usize>,
    control_d0: Option<Length>,
    control_frames: Option<u64>,
    quick: Option<bool>,
}

/// Object descriptor, built on a grid when the trains are assembled.
#[derive(Debug, Clone, PartialEq)]
pub enum ObjectSpec {
    None,
    Phase {
        profile: PhaseProfile,
        length: Option<f64>,
    },
    Amplitude {
        profile: AmplitudeProfile,
        length: Option<f64>,
    },
}

impl ObjectSpec {
    pub fn build(&self, grid: Grid) -> Result<Option<Object>> {
        Ok(match self {
            ObjectSpec::None => None,
            ObjectSpec::Phase { profile, length } => {
                Some(PhaseObject::with_length(profile.clone(), grid, *length)?.into())
            }
            ObjectSpec::Amplitude { profile, length } => {
                Some(AmplitudeObject::with_length(profile.clone(), grid, *length)?.into())
            }
        })
    }
}

/// One element of an arm as written in the scenario.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ArmElement {
    /// The scenario's diaphragm.
    Diaphragm,
    /// The scenario's object.
    Object,
    Fourier { f: f64 },
    FreeSpace { z: f64 },
    Lens { f: f64 },
    Aperture { shape: ApertureShape, d: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisConfig {
    /// Detector samples per axis kept around the optical axis.
    pub window: usize,
    /// Source diameters for the coherence transition.
    pub d0_list: Vec<f64>,
    pub single_shot_frames: u64,
    /// Frame blocks for jackknife errors.
    pub blocks: usize,
    /// Coherent-limit control run with a large source, if set.
    pub control_d0: Option<f64>,
    pub control_frames: Option<u64>,
    /// Reduced-statistics mode with relaxed tolerances.
    pub quick: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub name: String,
    pub experiment: ExperimentKind,
    pub seed: u64,
    pub frames: u64,
    pub grid: Grid,
    pub source: SpeckleSourceConfig,
    pub diaphragm: Diaphragm,
    pub object: ObjectSpec,
    pub arm1: Vec<ArmElement>,
    pub arm2: Vec<ArmElement>,
    pub analysis: AnalysisConfig,
    pub outputs: Vec<OutputKind>,
    effective: String,
}

impl ScenarioConfig {
    /// Parse and validate a scenario. `overrides` are `(dotted.key, value)`
    /// pairs applied before validation; `base_dir` resolves relative file paths.
    pub fn from_toml_str(text: &str, overrides: &[(String, String)], base_dir: Option<&Path>) -> Result<Self> {
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| toml_error(text, text, &e))?;
        for (key, value) in overrides {
            apply_override(&mut table, key, value)?;
        }
        let effective = toml::to_string(&table).map_err(|e| Error::config("", e.to_string()))?;
        let raw: RawScenario = if overrides.is_empty() {
            toml::from_str(text).map_err(|e| toml_error(text, text, &e))?
        } else {
            toml::from_str(&effective).map_err(|e| toml_error(text, &effective, &e))?
        };
        resolve(raw, effective, base_dir).map_err(|e| anchor(text, e))
    }

    pub fn from_file(path: &Path, overrides: &[(String, String)]) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text, overrides, path.parent())
    }

    /// Canonical TOML of the scenario after overrides (input to the config hash).
    pub fn effective_toml(&self) -> &str {
        &self.effective
    }

    /// Built-in small 1D configuration for the oracle suite.
    pub fn oracle_default() -> Self {
        Self::oracle_with(&[]).expect("built-in oracle scenario is valid")
    }

    /// The built-in oracle configuration with overrides applied.
    pub fn oracle_with(overrides: &[(String, String)]) -> Result<Self> {
        Self::from_toml_str(ORACLE_DEFAULT, overrides, None)
    }

    pub fn object(&self) -> Result<Option<Object>> {
        self.object.build(self.grid)
    }

    /// Assemble both arms on the scenario grid.
    pub fn trains(&self) -> Result<(OpticalTrain, OpticalTrain)> {
        let object = self.object()?;
        let build = |arm: &[ArmElement]| -> Result<OpticalTrain> {
            let mut out = Vec::with_capacity(arm.len());
            for e in arm {
                out.push(match *e {
                    ArmElement::Diaphragm => self.diaphragm.element(),
                    ArmElement::Object => match &object {
                        Some(o) => Element::Object(o.clone()),
                        None => continue,
                    },
                    ArmElement::Fourier { f } => Element::FourierSystem { f },
                    ArmElement::FreeSpace { z } => Element::FreeSpace { z },
                    ArmElement::Lens { f } => Element::ThinLens { f },
                    ArmElement::Aperture { shape, d } => Element::Aperture { shape, d },
                });
            }
            OpticalTrain::new(out)
        };
        Ok((build(&self.arm1)?, build(&self.arm2)?))
    }

    /// Copy with a different source diameter.
    pub fn with_d0(&self, d0: f64) -> Self {
        let mut c = self.clone();
        c.source.d0 = d0;
        c
    }

    pub fn wants(&self, o: OutputKind) -> bool {
        self.outputs.contains(&o)
    }
}

const ORACLE_DEFAULT: &str = r#"
name = "oracle_small"
experiment = "oracle_suite"
seed = 7
frames = 20000

[grid]
dims = 1
n = 64
dx = "40um"

[source]
target_speckle_size = "160um"

[diaphragm]
D = "1.2mm"

[object]
kind = "phase_double_slit"
slit_width = "160um"
separation = "480um"

[arms]
focal = "0.2m"

[analysis]
window = 64
blocks = 100
"#;

fn resolve(raw: RawScenario, effective: String, base_dir: Option<&Path>) -> Result<ScenarioConfig> {
    let experiment = raw.experiment;
    let g = &raw.grid;
    let grid = Grid::new(g.dims, g.n, g.dx.0).map_err(|e| Error::config("grid", e.to_string()))?;

    let s = &raw.source;
    let defaults = SpeckleSourceConfig::default();
    let envelope = match s.envelope {
        None | Some(RawEnvelope::Uniform) => {
            if s.waist.is_some() {
                return Err(Error::config("source.waist", "only used with envelope = \"gaussian\""));
            }
            Envelope::Uniform
        }
        Some(RawEnvelope::Gaussian) => Envelope::Gaussian {
            waist: s
                .waist
                .ok_or_else(|| Error::config("source.waist", "required for a gaussian envelope"))?
                .0,
        },
    };
    let source = SpeckleSourceConfig {
        method: match s.method {
            None | Some(RawMethod::Spectral) => SpeckleMethod::Spectral,
            Some(RawMethod::Physical) => SpeckleMethod::Physical,
        },
        d0: s.d0.map_or(defaults.d0, |v| v.0),
        z: s.z.map_or(defaults.z, |v| v.0),
        wavelength: s.lambda.map_or(defaults.wavelength, |v| v.0),
        target_speckle_size: s.target_speckle_size.map(|v| v.0),
        envelope,
    };
    source.validate().map_err(|e| match e {
        Error::InvalidParameter { name, reason } => Error::config(format!("source.{}", source_key(name)), reason),
        other => other,
    })?;

    let shape = raw.diaphragm.shape.map(ApertureShape::from).unwrap_or(if grid.dims() == 1 {
        ApertureShape::Slit
    } else {
        ApertureShape::Circle
    });
    let d = raw.diaphragm.d.map_or(DEFAULT_DIAPHRAGM, |v| v.0);
    let diaphragm = Diaphragm::new(d, shape).map_err(|e| Error::config("diaphragm.D", e.to_string()))?;
    check_extent(&grid, d)?;

    let object = match raw.object {
        None => ObjectSpec::None,
        Some(o) => object_spec(o, base_dir)?,
    };
    if let Some(obj) = object.build(grid).map_err(|e| match e {
        Error::InvalidParameter { name, reason } => Error::config(format!("object.{name}"), reason),
        other => other,
    })? {
        if let Some(w) = obj.extent() {
            if w > d * (1.0 + 1e-9) {
                return Err(Error::config(
                    "object",
                    format!("object extent {w:e} m exceeds the diaphragm diameter {d:e} m"),
                ));
            }
        }
    }

    let focal = raw.arms.focal.map_or(DEFAULT_FOCAL, |v| v.0);
    if !(focal.is_finite() && focal > 0.0) {
        return Err(Error::config("arms.focal", "must be positive"));
    }
    let arm1 = match raw.arms.arm1 {
        Some(list) => arm_elements(list, "arms.arm1")?,
        None => vec![ArmElement::Diaphragm, ArmElement::Object, ArmElement::Fourier { f: focal }],
    };
    let arm2 = match raw.arms.arm2 {
        Some(list) => arm_elements(list, "arms.arm2")?,
        None => vec![ArmElement::Diaphragm, ArmElement::Fourier { f: focal }],
    };
    let count = |arm: &[ArmElement]| arm.iter().filter(|e| **e == ArmElement::Object).count();
    match (&object, count(&arm1)) {
        (ObjectSpec::None, 0) => {}
        (ObjectSpec::None, _) => {
            // The default arm 1 names the object slot; with no object it is empty.
            if raw_arm_given(&effective, "arm1") {
                return Err(Error::config("arms.arm1", "references an object but [object] is absent"));
            }
        }
        (_, 1) => {}
        (_, k) => {
            return Err(Error::config(
                "arms.arm1",
                format!("must contain the object exactly once, found {k}"),
            ))
        }
    }
    if count(&arm2) != 0 {
        return Err(Error::config("arms.arm2", "must not contain the object"));
    }
    if arm1.is_empty() || arm2.is_empty() {
        return Err(Error::config("arms", "arms must not be empty"));
    }

    let a = &raw.analysis;
    let window = a.window.unwrap_or(DEFAULT_WINDOW.min(grid.n()));
    if window < Grid::MIN_SAMPLES || window > grid.n() || !window.is_multiple_of(2) {
        return Err(Error::config(
            "analysis.window",
            format!("must be even and within [{}, {}], got {window}", Grid::MIN_SAMPLES, grid.n()),
        ));
    }
    let d0_list: Vec<f64> = match &a.d0_list {
        Some(list) => list.iter().map(|v| v.0).collect(),
        None => vec![source.d0],
    };
    if d0_list.is_empty() || d0_list.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(Error::config("analysis.d0_list", "must be a nonempty list of positive lengths"));
    }
    let single_shot_frames = a.single_shot_frames.unwrap_or(DEFAULT_SINGLE_SHOT_FRAMES);
    if single_shot_frames == 0 {
        return Err(Error::config("analysis.single_shot_frames", "must be at least 1"));
    }
    let blocks = a.blocks.unwrap_or(DEFAULT_BLOCKS);
    if blocks == 0 {
        return Err(Error::config("analysis.blocks", "must be at least 1"));
    }
    if let Some(c) = a.control_d0 {
        if !(c.0.is_finite() && c.0 > 0.0) {
            return Err(Error::config("analysis.control_d0", "must be positive"));
        }
    }

    let frames = raw.frames.unwrap_or(match experiment {
        ExperimentKind::CoherenceTransition => single_shot_frames,
        _ => DEFAULT_CORRELATION_FRAMES,
    });
    if frames == 0 {
        return Err(Error::config("frames", "must be at least 1"));
    }
    if experiment == ExperimentKind::OracleSuite {
        if grid.dims() != 1 || grid.n() > ORACLE_MAX_SAMPLES {
            return Err(Error::config(
                "grid",
                format!("the oracle suite needs a 1D grid with n <= {ORACLE_MAX_SAMPLES}"),
            ));
        }
        if window != grid.n() {
            return Err(Error::config("analysis.window", "the oracle suite uses the full grid"));
        }
    }

    Ok(ScenarioConfig {
        name: raw.name.unwrap_or_else(|| experiment.name().to_string()),
        experiment,
        seed: raw.seed.unwrap_or(DEFAULT_SEED),
        frames,
        grid,
        source,
        diaphragm,
        object,
        arm1,
        arm2,
        analysis: AnalysisConfig {
            window,
            d0_list,
            single_shot_frames,
            blocks,
            control_d0: a.control_d0.map(|v| v.0),
            control_frames: a.control_frames,
            quick: a.quick.unwrap_or(false),
        },
        outputs: raw.outputs.unwrap_or_else(|| ALL_OUTPUTS.to_vec()),
        effective,
    })
}

fn raw_arm_given(effective: &str, arm: &str) -> bool {
    effective
        .parse::<toml::Table>()
        .ok()
        .and_then(|t| t.get("arms").and_then(|a| a.get(arm)).map(|_| true))
        .unwrap_or(false)
}

fn source_key(param: &str) -> &str {
    match param {
        "d0" => "D0",
        "wavelength" => "lambda",
        other => other,
    }
}

fn object_spec(o: RawObject, base_dir: Option<&Path>) -> Result<ObjectSpec> {
    let allowed: &[&str] = match o.kind {
        ObjectKind::PhaseDoubleSlit => &["phase", "slit_width", "separation", "length"],
        ObjectKind::PhaseStep => &["phase", "width", "length"],
        ObjectKind::PhaseGrating => &["phase", "period", "width", "length"],
        ObjectKind::AmplitudeDoubleSlit => &["slit_width", "separation", "length"],
        ObjectKind::AmplitudeSingleSlit => &["width", "length"],
        ObjectKind::CustomPhase | ObjectKind::CustomAmplitude => &["file", "length"],
        ObjectKind::None => &[],
    };
    let present = [
        ("phase", o.phase.is_some()),
        ("slit_width", o.slit_width.is_some()),
        ("separation", o.separation.is_some()),
        ("width", o.width.is_some()),
        ("period", o.period.is_some()),
        ("length", o.length.is_some()),
        ("file", o.file.is_some()),
    ];
    for (key, set) in present {
        if set && !allowed.contains(&key) {
            return Err(Error::config(
                format!("object.{key}"),
                format!("not a parameter of kind {:?}", o.kind),
            ));
        }
    }
    let required = |v: Option<Length>, key: &str| -> Result<f64> {
        v.map(|l| l.0)
            .ok_or_else(|| Error::config(format!("object.{key}"), "required for this kind"))
    };
    let phase = o.phase.map_or(DEFAULT_PHASE, |a| a.0);
    let slit_width = o.slit_width.map_or(DEFAULT_SLIT_WIDTH, |v| v.0);
    let separation = o.separation.map_or(DEFAULT_SEPARATION, |v| v.0);
    let length = o.length.map(|v| v.0);
    let custom = |column: &str| -> Result<Vec<f64>> {
        let file = o.file.as_deref().ok_or_else(|| Error::config("object.file", "required for custom objects"))?;
        let path = match base_dir {
            Some(dir) => dir.join(file),
            None => PathBuf::from(file),
        };
        let table = Table::read(&path).map_err(|e| Error::config("object.file", format!("{}: {e}", path.display())))?;
        table
            .column(column)
            .ok_or_else(|| Error::config("object.file", format!("{} has no `{column}` column", path.display())))
    };
    Ok(match o.kind {
        ObjectKind::PhaseDoubleSlit => ObjectSpec::Phase {
            profile: PhaseProfile::DoubleSlit {
                phase,
                slit_width,
                separation,
            },
            length,
        },
        ObjectKind::PhaseStep => ObjectSpec::Phase {
            profile: PhaseProfile::Step {
                phase,
                width: required(o.width, "width")?,
            },
            length,
        },
        ObjectKind::PhaseGrating => ObjectSpec::Phase {
            profile: PhaseProfile::Grating {
                phase,
                period: required(o.period, "period")?,
                width: required(o.width, "width")?,
            },
            length,
        },
        ObjectKind::AmplitudeDoubleSlit => ObjectSpec::Amplitude {
            profile: AmplitudeProfile::DoubleSlit { slit_width, separation },
            length,
        },
        ObjectKind::AmplitudeSingleSlit => ObjectSpec::Amplitude {
            profile: AmplitudeProfile::SingleSlit {
                width: required(o.width, "width")?,
            },
            length,
        },
        ObjectKind::CustomPhase => ObjectSpec::Phase {
            profile: PhaseProfile::Custom(custom("phase")?),
            length,
        },
        ObjectKind::CustomAmplitude => ObjectSpec::Amplitude {
            profile: AmplitudeProfile::Custom(custom("transmission")?),
            length,
        },
        ObjectKind::None => ObjectSpec::None,
    })
}

fn arm_elements(list: Vec<RawElement>, key: &str) -> Result<Vec<ArmElement>> {
    let mut out = Vec::with_capacity(list.len());
    for (i, e) in list.into_iter().enumerate() {
        let at = |field: &str| format!("{key}[{i}].{field}");
        let need = |v: Option<Length>, field: &str| -> Result<f64> {
            v.map(|l| l.0).ok_or_else(|| Error::config(at(field), "required for this element"))
        };
        let unused = |set: bool, field: &str| -> Result<()> {
            if set {
                Err(Error::config(at(field), "not a parameter of this element"))
            } else {
                Ok(())
            }
        };
        let el = match e.element {
            RawElementKind::Diaphragm | RawElementKind::Object => {
                unused(e.f.is_some(), "f")?;
                unused(e.z.is_some(), "z")?;
                unused(e.d.is_some(), "D")?;
                unused(e.shape.is_some(), "shape")?;
                if matches!(e.element, RawElementKind::Diaphragm) {
                    ArmElement::Diaphragm
                } else {
                    ArmElement::Object
                }
            }
            RawElementKind::Fourier | RawElementKind::Lens => {
                unused(e.z.is_some(), "z")?;
                unused(e.d.is_some(), "D")?;
                unused(e.shape.is_some(), "shape")?;
                let f = need(e.f, "f")?;
                if !(f.is_finite() && f != 0.0) || (matches!(e.element, RawElementKind::Fourier) && f <= 0.0) {
                    return Err(Error::config(at("f"), "invalid focal length"));
                }
                if matches!(e.element, RawElementKind::Fourier) {
                    ArmElement::Fourier { f }
                } else {
                    ArmElement::Lens { f }
                }
            }
            RawElementKind::FreeSpace => {
                unused(e.f.is_some(), "f")?;
                unused(e.d.is_some(), "D")?;
                unused(e.shape.is_some(), "shape")?;
                ArmElement::FreeSpace { z: need(e.z, "z")? }
            }
            RawElementKind::Aperture => {
                unused(e.f.is_some(), "f")?;
                unused(e.z.is_some(), "z")?;
                let d = need(e.d, "D")?;
                if !(d.is_finite() && d > 0.0) {
                    return Err(Error::config(at("D"), "must be positive"));
                }
                ArmElement::Aperture {
                    shape: e.shape.map(ApertureShape::from).unwrap_or(ApertureShape::Circle),
                    d,
                }
            }
        };
        out.push(el);
    }
    Ok(out)
}

/// Parse a `key=value` override.
pub fn parse_override(s: &str) -> Result<(String, String)> {
    match s.split_once('=') {
        Some((k, v)) if !k.trim().is_empty() => Ok((k.trim().to_string(), v.trim().to_string())),
        _ => Err(Error::config(s, "override must look like key=value")),
    }
}

fn override_value(raw: &str) -> toml::Value {
    if let Ok(t) = format!("v = {raw}").parse::<toml::Table>() {
        if let Some(v) = t.get("v") {
            return v.clone();
        }
    }
    if let Some(inner) = raw.strip_prefix('[').and_then(|r| r.strip_suffix(']')) {
        return toml::Value::Array(
            inner
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(override_value)
                .collect(),
        );
    }
    toml::Value::String(raw.to_string())
}

/// Set `dotted.key` in a TOML table, creating intermediate tables.
pub fn apply_override(table: &mut toml::Table, key: &str, value: &str) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::config(key, "malformed key"));
    }
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::config(key, format!("`{p}` is not a section")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), override_value(value));
    Ok(())
}

/// 1-based line of `dotted.key` in a TOML document, or of its section header.
pub fn locate_key(text: &str, key: &str) -> Option<usize> {
    let (section, leaf) = match key.rsplit_once('.') {
        Some((s, l)) => (s, l),
        None => ("", key),
    };
    let leaf = leaf.split('[').next().unwrap_or(leaf);
    let section = section.split('[').next().unwrap_or(section);
    let mut current = String::new();
    let mut header_line = None;
    for (i, line) in text.lines().enumerate() {
        let t = line.trim();
        if let Some(h) = t.strip_prefix('[') {
            current = h.trim_start_matches('[').split(']').next().unwrap_or("").trim().to_string();
            if current == section && header_line.is_none() {
                header_line = Some(i + 1);
            }
            continue;
        }
        if current == section {
            if let Some(rest) = t.strip_prefix(leaf) {
                if rest.trim_start().starts_with('=') {
                    return Some(i + 1);
                }
            }
        }
    }
    header_line
}

/// Dotted key defined on 1-based `line`, from the enclosing section and the assignment.
fn key_at(text: &str, line: usize) -> Option<String> {
    let mut section = String::new();
    for (i, l) in text.lines().enumerate() {
        let t = l.trim();
        if let Some(h) = t.strip_prefix('[') {
            section = h.trim_start_matches('[').split(']').next().unwrap_or("").trim().to_string();
        }
        if i + 1 == line {
            let leaf = t.split_once('=').map(|(k, _)| k.trim().to_string());
            return Some(match (section.is_empty(), leaf) {
                (_, None) => section,
                (true, Some(k)) => k,
                (false, Some(k)) => format!("{section}.{k}"),
            });
        }
    }
    None
}

fn line_of_offset(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

fn toml_error(original: &str, parsed: &str, e: &toml::de::Error) -> Error {
    let mut key = String::new();
    let mut line = None;
    if let Some(span) = e.span() {
        let l = line_of_offset(parsed, span.start);
        key = key_at(parsed, l).unwrap_or_default();
        line = if std::ptr::eq(original, parsed) {
            Some(l)
        } else {
            locate_key(original, &key)
        };
    }
    let message = e.message().trim().to_string();
    // Unknown fields are reported on the enclosing table; name the field itself.
    if let Some(field) = message
        .strip_prefix("unknown field `")
        .and_then(|r| r.split('`').next())
    {
        let section = key.rsplit_once('.').map(|(s, _)| s.to_string());
        let full = match section {
            Some(s) if !key.ends_with(field) => format!("{s}.{field}"),
            _ if key.is_empty() || key.ends_with(field) => key.clone(),
            _ => format!("{key}.{field}"),
        };
        key = if key.ends_with(field) { key } else { full };
        if let Some(l) = locate_key(original, &key) {
            line = Some(l);
        }
    }
    let message = match line {
        Some(l) => format!("line {l}: {message}"),
        None => message,
    };
    Error::Config { key, message }
}

/// Attach the source line to a semantic config error.
fn anchor(text: &str, e: Error) -> Error {
    match e {
        Error::Config { key, message } => {
            let message = match locate_key(text, &key) {
                Some(l) if !message.starts_with("line ") => format!("line {l}: {message}"),
                _ => message,
            };
            Error::Config { key, message }
        }
        other => other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const GHOST: &str = r#"
experiment = "ghost_diffraction"
seed = 3
frames = 100

[grid]
dims = 1
n = 4096
dx = "5um"

[source]
D0 = "10mm"
z = 0.395
lambda = "532nm"

[diaphragm]
D = "3mm"

[object]
kind = "phase_double_slit"
"#;

    fn load(text: &str, overrides: &[(&str, &str)]) -> Result<ScenarioConfig> {
        let o: Vec<(String, String)> = overrides.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
        ScenarioConfig::from_toml_str(text, &o, None)
    }

    fn config_key(e: Error) -> (String, String) {
        match e {
            Error::Config { key, message } => (key, message),
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn lengths_and_angles() {
        assert_eq!(parse_length("10mm").unwrap(), 10e-3);
        assert!((parse_length("532nm").unwrap() - 532e-9).abs() < 1e-20);
        assert_eq!(parse_length("5 um").unwrap(), 5e-6);
        assert_eq!(parse_length("5µm").unwrap(), 5e-6);
        assert_eq!(parse_length("0.395m").unwrap(), 0.395);
        assert_eq!(parse_length("1e-3").unwrap(), 1e-3);
        assert_eq!(parse_length("2cm").unwrap(), 0.02);
        assert!(parse_length("3 furlongs").is_err());
        assert!(parse_length("inf").is_err());
        assert_eq!(parse_angle("pi").unwrap(), std::f64::consts::PI);
        assert_eq!(parse_angle("0.5pi").unwrap(), std::f64::consts::FRAC_PI_2);
        assert_eq!(parse_angle("-pi").unwrap(), -std::f64::consts::PI);
        assert_eq!(parse_angle("1.5").unwrap(), 1.5);
        assert!(parse_angle("tau").is_err());
    }

    #[test]
    fn defaults_fill_in() {
        let c = load(GHOST, &[]).unwrap();
        assert_eq!(c.experiment, ExperimentKind::GhostDiffraction);
        assert_eq!(c.seed, 3);
        assert_eq!(c.frames, 100);
        assert_eq!(c.diaphragm.shape, ApertureShape::Slit);
        assert_eq!(c.analysis.window, 512);
        assert_eq!(c.arm1.len(), 3);
        assert_eq!(c.arm2, vec![ArmElement::Diaphragm, ArmElement::Fourier { f: DEFAULT_FOCAL }]);
        let (t1, t2) = c.trains().unwrap();
        assert_eq!(t1.objects().count(), 1);
        assert_eq!(t2.objects().count(), 0);
        assert_eq!(
            c.object,
            ObjectSpec::Phase {
                profile: PhaseProfile::default(),
                length: None
            }
        );
    }

    #[test]
    fn overrides_apply_before_validation() {
        let c = load(GHOST, &[("source.D0", "0.1mm"), ("frames", "7"), ("analysis.d0_list", "[10mm, 1mm]")]).unwrap();
        assert_eq!(c.source.d0, 0.1e-3);
        assert_eq!(c.frames, 7);
        assert_eq!(c.analysis.d0_list, vec![10e-3, 1e-3]);
        assert!(c.effective_toml().contains("0.1mm"));
        let again = load(GHOST, &[("source.D0", "0.1mm"), ("frames", "7"), ("analysis.d0_list", "[10mm, 1mm]")]).unwrap();
        assert_eq!(c.effective_toml(), again.effective_toml());
    }

    #[test]
    fn unknown_key_is_named_with_line() {
        let text = GHOST.replace("z = 0.395", "zz = 0.395");
        let (key, msg) = config_key(load(&text, &[]).unwrap_err());
        assert_eq!(key, "source.zz");
        assert!(msg.starts_with("line 13:"), "{msg}");
    }

    #[test]
    fn bad_value_is_named_with_line() {
        let text = GHOST.replace("\"3mm\"", "\"3 parsecs\"");
        let (key, msg) = config_key(load(&text, &[]).unwrap_err());
        assert_eq!(key, "diaphragm.D");
        assert!(msg.contains("line 17"), "{msg}");
        assert!(msg.contains("3 parsecs"));
    }

    #[test]
    fn bad_override_is_named() {
        let (key, msg) = config_key(load(GHOST, &[("source.D0", "big")]).unwrap_err());
        assert_eq!(key, "source.D0");
        assert!(msg.contains("line 12"), "{msg}");
    }

    #[test]
    fn semantic_errors_are_anchored() {
        let (key, msg) = config_key(load(GHOST, &[("frames", "0")]).unwrap_err());
        assert_eq!(key, "frames");
        assert!(msg.contains("line 4"), "{msg}");
        let (key, _) = config_key(load(GHOST, &[("source.z", "-1")]).unwrap_err());
        assert_eq!(key, "source.z");
        let (key, _) = config_key(load(GHOST, &[("analysis.window", "513")]).unwrap_err());
        assert_eq!(key, "analysis.window");
        let (key, _) = config_key(load(GHOST, &[("object.width", "1mm")]).unwrap_err());
        assert_eq!(key, "object.width");
        let (key, _) = config_key(load(GHOST, &[("experiment", "\"fig9\"")]).unwrap_err());
        assert_eq!(key, "experiment");
    }

    #[test]
    fn object_must_fit_the_diaphragm() {
        let (key, _) = config_key(load(GHOST, &[("diaphragm.D", "0.5mm")]).unwrap_err());
        assert_eq!(key, "object");
    }

    #[test]
    fn extent_guard() {
        let e = load(GHOST, &[("grid.dx", "1um")]).unwrap_err();
        assert!(e.is_guard(), "{e:?}");
    }

    #[test]
    fn arm_rules() {
        let twice = format!(
            "{GHOST}\n[arms]\narm1 = [{{element = \"diaphragm\"}}, {{element = \"object\"}}, {{element = \"object\"}}, {{element = \"fourier\", f = 0.2}}]\n"
        );
        let (key, msg) = config_key(load(&twice, &[]).unwrap_err());
        assert_eq!(key, "arms.arm1");
        assert!(msg.contains("exactly once"));
        let in_arm2 = format!(
            "{GHOST}\n[arms]\narm2 = [{{element = \"object\"}}, {{element = \"fourier\", f = 0.2}}]\n"
        );
        let (key, _) = config_key(load(&in_arm2, &[]).unwrap_err());
        assert_eq!(key, "arms.arm2");
        let missing = format!("{GHOST}\n[arms]\narm1 = [{{element = \"fourier\"}}]\n");
        let (key, _) = config_key(load(&missing, &[]).unwrap_err());
        assert_eq!(key, "arms.arm1[0].f");
        let none = GHOST.replace("kind = \"phase_double_slit\"", "kind = \"none\"");
        let c = load(&none, &[]).unwrap();
        let (t1, _) = c.trains().unwrap();
        assert_eq!(t1.elements().len(), 2);
    }

    #[test]
    fn custom_object_from_csv() {
        let dir = tempfile::tempdir().unwrap();
        let n = 4096;
        let values: Vec<f64> = (0..n).map(|i| if (2000..2100).contains(&i) { 1.0 } else { 0.0 }).collect();
        Table::from_columns(&["phase"], &[&values]).write(&dir.path().join("obj.csv")).unwrap();
        let text = GHOST.replace("kind = \"phase_double_slit\"", "kind = \"custom_phase\"\nfile = \"obj.csv\"");
        let c = ScenarioConfig::from_toml_str(&text, &[], Some(dir.path())).unwrap();
        match &c.object {
            ObjectSpec::Phase {
                profile: PhaseProfile::Custom(v),
                ..
            } => assert_eq!(v, &values),
            other => panic!("{other:?}"),
        }
        let (key, _) = config_key(ScenarioConfig::from_toml_str(&text, &[], None).unwrap_err());
        assert_eq!(key, "object.file");
    }

    #[test]
    fn oracle_default_is_valid() {
        let c = ScenarioConfig::oracle_default();
        assert_eq!(c.grid.n(), 64);
        assert_eq!(c.experiment, ExperimentKind::OracleSuite);
        let (key, _) = config_key(
            ScenarioConfig::from_toml_str(ORACLE_DEFAULT, &[("grid.n".into(), "256".into()), ("analysis.window".into(), "256".into())], None)
                .unwrap_err(),
        );
        assert_eq!(key, "grid");
    }

    #[test]
    fn numeric_keys() {
        assert!(is_numeric_key("source.D0"));
        assert!(!is_numeric_key("source.method"));
        assert!(!is_numeric_key("object.kind"));
    }

    #[test]
    fn locate_keys() {
        assert_eq!(locate_key(GHOST, "seed"), Some(3));
        assert_eq!(locate_key(GHOST, "grid.dx"), Some(9));
        assert_eq!(locate_key(GHOST, "source.waist"), Some(11));
        assert_eq!(locate_key(GHOST, "nope.x"), None);
    }
}
