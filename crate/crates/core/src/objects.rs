//! Test objects (pure phase and amplitude masks) and the diaphragm.
//!
//! Profiles vary along x. On a 2D grid the object is a strip of `length` along y
//! (default: equal to the object's x extent); outside it the object is
//! transparent for phase objects and opaque for amplitude objects.
//! Region boundaries are inclusive and symmetric about zero.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::field::Grid;
use crate::propagation::{ApertureShape, Element};

/// Minimum number of samples an object must span.
pub const MIN_OBJECT_SAMPLES: usize = 8;

pub const DEFAULT_SLIT_WIDTH: f64 = 160e-6;
pub const DEFAULT_SEPARATION: f64 = 530e-6;
pub const DEFAULT_PHASE: f64 = std::f64::consts::PI;

#[derive(Debug, Clone, PartialEq)]
pub enum PhaseProfile {
    /// `phase` on `0 <= x <= width/2`, zero elsewhere. Use a width beyond the
    /// grid extent for an unbounded step.
    Step { phase: f64, width: f64 },
    /// Binary grating: `phase` where `cos(2 pi x / period) >= 0`, within `|x| <= width/2`.
    Grating { phase: f64, period: f64, width: f64 },
    /// Two slits of `slit_width`, centers `separation` apart, carrying `phase`.
    DoubleSlit {
        phase: f64,
        slit_width: f64,
        separation: f64,
    },
    /// Phase per sample along x (`n` values) or per grid sample.
    Custom(Vec<f64>),
}

impl Default for PhaseProfile {
    fn default() -> Self {
        PhaseProfile::DoubleSlit {
            phase: DEFAULT_PHASE,
            slit_width: DEFAULT_SLIT_WIDTH,
            separation: DEFAULT_SEPARATION,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum AmplitudeProfile {
    DoubleSlit { slit_width: f64, separation: f64 },
    SingleSlit { width: f64 },
    /// Transmission per sample along x (`n` values) or per grid sample, in `[0, 1]`.
    Custom(Vec<f64>),
}

impl Default for AmplitudeProfile {
    fn default() -> Self {
        AmplitudeProfile::DoubleSlit {
            slit_width: DEFAULT_SLIT_WIDTH,
            separation: DEFAULT_SEPARATION,
        }
    }
}

const EDGE_TOL: f64 = 1e-9;

fn within(x: f64, half: f64, dx: f64) -> bool {
    x.abs() <= half + EDGE_TOL * dx
}

fn in_double_slit(x: f64, slit_width: f64, separation: f64, dx: f64) -> bool {
    within(x.abs() - separation / 2.0, slit_width / 2.0, dx)
}

fn positive(name: &'static str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::param(name, format!("must be positive, got {v}")))
    }
}

fn finite(name: &'static str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::param(name, "must be finite"))
    }
}

/// Expand a profile of `n` values along x, or a full map, to a full map.
fn expand_custom(values: &[f64], grid: &Grid, length: f64, fill: f64) -> Result<Vec<f64>> {
    if values.len() == grid.len() {
        return Ok(values.to_vec());
    }
    if values.len() != grid.n() {
        return Err(Error::GridMismatch(format!(
            "custom map has {} values, expected {} or {}",
            values.len(),
            grid.n(),
            grid.len()
        )));
    }
    Ok(tile(grid, length, fill, |ix| values[ix]))
}

fn tile(grid: &Grid, length: f64, fill: f64, along_x: impl Fn(usize) -> f64) -> Vec<f64> {
    let n = grid.n();
    match grid.dims() {
        1 => (0..n).map(along_x).collect(),
        _ => {
            let row: Vec<f64> = (0..n).map(along_x).collect();
            let mut out = Vec::with_capacity(n * n);
            for iy in 0..n {
                if within(grid.coord(iy), length / 2.0, grid.dx()) {
                    out.extend_from_slice(&row);
                } else {
                    out.extend(std::iter::repeat_n(fill, n));
                }
            }
            out
        }
    }
}

/// Width along x of the region where `map` differs from `fill`, in samples.
fn support_samples(grid: &Grid, map: &[f64], fill: f64) -> usize {
    let n = grid.n();
    let rows = map.len() / n;
    let mut lo = n;
    let mut hi = 0;
    for r in 0..rows {
        for ix in 0..n {
            if map[r * n + ix] != fill {
                lo = lo.min(ix);
                hi = hi.max(ix);
            }
        }
    }
    if lo > hi {
        0
    } else {
        hi - lo + 1
    }
}

/// Pure phase mask, `|t| = 1` everywhere.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseObject {
    grid: Grid,
    phase: Vec<f64>,
    profile: PhaseProfile,
}

impl PhaseObject {
    pub fn new(profile: PhaseProfile, grid: Grid) -> Result<Self> {
        Self::with_length(profile, grid, None)
    }

    /// As [`PhaseObject::new`] with an explicit strip length along y (2D only).
    pub fn with_length(profile: PhaseProfile, grid: Grid, length: Option<f64>) -> Result<Self> {
        let dx = grid.dx();
        let coord = |ix| grid.coord(ix);
        let extent = phase_extent(&profile);
        let length = length.unwrap_or(extent.unwrap_or(f64::INFINITY));
        if !(length > 0.0) {
            return Err(Error::param("length", format!("must be positive, got {length}")));
        }
        let phase = match &profile {
            PhaseProfile::Step { phase, width } => {
                finite("phase", *phase)?;
                positive("width", *width)?;
                tile(&grid, length, 0.0, |ix| {
                    let x = coord(ix);
                    if x >= -EDGE_TOL * dx && within(x, width / 2.0, dx) {
                        *phase
                    } else {
                        0.0
                    }
                })
            }
            PhaseProfile::Grating { phase, period, width } => {
                finite("phase", *phase)?;
                positive("period", *period)?;
                positive("width", *width)?;
                tile(&grid, length, 0.0, |ix| {
                    let x = coord(ix);
                    let c = (2.0 * std::f64::consts::PI * x / period).cos();
                    if within(x, width / 2.0, dx) && c >= -1e-12 {
                        *phase
                    } else {
                        0.0
                    }
                })
            }
            PhaseProfile::DoubleSlit {
                phase,
                slit_width,
                separation,
            } => {
                finite("phase", *phase)?;
                positive("slit_width", *slit_width)?;
                positive("separation", *separation)?;
                if separation < slit_width {
                    return Err(Error::param("separation", "slits overlap"));
                }
                tile(&grid, length, 0.0, |ix| {
                    if in_double_slit(coord(ix), *slit_width, *separation, dx) {
                        *phase
                    } else {
                        0.0
                    }
                })
            }
            PhaseProfile::Custom(values) => {
                if values.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite("custom phase map"));
                }
                expand_custom(values, &grid, length, 0.0)?
            }
        };
        let samples = match extent {
            Some(w) => (w / dx).round() as usize + 1,
            None => support_samples(&grid, &phase, 0.0),
        };
        if samples < MIN_OBJECT_SAMPLES && !matches!(profile, PhaseProfile::Custom(_)) {
            return Err(Error::Guard(format!(
                "object spans {samples} samples, need at least {MIN_OBJECT_SAMPLES}"
            )));
        }
        Ok(Self {
            grid,
            phase,
            profile,
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn phase(&self) -> &[f64] {
        &self.phase
    }

    pub fn profile(&self) -> &PhaseProfile {
        &self.profile
    }

    pub fn transmission(&self) -> Vec<Complex64> {
        self.phase.iter().map(|&p| Complex64::from_polar(1.0, p)).collect()
    }

    /// Physical width along x, if the profile defines one.
    pub fn extent(&self) -> Option<f64> {
        phase_extent(&self.profile)
    }
}

fn phase_extent(p: &PhaseProfile) -> Option<f64> {
    match p {
        PhaseProfile::Step { width, .. } => Some(width / 2.0),
        PhaseProfile::Grating { width, .. } => Some(*width),
        PhaseProfile::DoubleSlit {
            slit_width,
            separation,
            ..
        } => Some(separation + slit_width),
        PhaseProfile::Custom(_) => None,
    }
}

fn amplitude_extent(p: &AmplitudeProfile) -> Option<f64> {
    match p {
        AmplitudeProfile::DoubleSlit {
            slit_width,
            separation,
        } => Some(separation + slit_width),
        AmplitudeProfile::SingleSlit { width } => Some(*width),
        AmplitudeProfile::Custom(_) => None,
    }
}

/// Real transmission mask with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AmplitudeObject {
    grid: Grid,
    transmission: Vec<f64>,
    profile: AmplitudeProfile,
}

impl AmplitudeObject {
    pub fn new(profile: AmplitudeProfile, grid: Grid) -> Result<Self> {
        Self::with_length(profile, grid, None)
    }

    pub fn with_length(profile: AmplitudeProfile, grid: Grid, length: Option<f64>) -> Result<Self> {
        let dx = grid.dx();
        let extent = amplitude_extent(&profile);
        let length = length.unwrap_or(extent.unwrap_or(f64::INFINITY));
        if !(length > 0.0) {
            return Err(Error::param("length", format!("must be positive, got {length}")));
        }
        let transmission = match &profile {
            AmplitudeProfile::DoubleSlit {
                slit_width,
                separation,
            } => {
                positive("slit_width", *slit_width)?;
                positive("separation", *separation)?;
                if separation < slit_width {
                    return Err(Error::param("separation", "slits overlap"));
                }
                tile(&grid, length, 0.0, |ix| {
                    if in_double_slit(grid.coord(ix), *slit_width, *separation, dx) {
                        1.0
                    } else {
                        0.0
                    }
                })
            }
            AmplitudeProfile::SingleSlit { width } => {
                positive("width", *width)?;
                tile(&grid, length, 0.0, |ix| {
                    if within(grid.coord(ix), width / 2.0, dx) {
                        1.0
                    } else {
                        0.0
                    }
                })
            }
            AmplitudeProfile::Custom(values) => {
                if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
                    return Err(Error::param("transmission", "values must lie in [0, 1]"));
                }
                expand_custom(values, &grid, length, 0.0)?
            }
        };
        let samples = match extent {
            Some(w) => (w / dx).round() as usize + 1,
            None => support_samples(&grid, &transmission, 0.0),
        };
        if samples < MIN_OBJECT_SAMPLES && !matches!(profile, AmplitudeProfile::Custom(_)) {
            return Err(Error::Guard(format!(
                "object spans {samples} samples, need at least {MIN_OBJECT_SAMPLES}"
            )));
        }
        Ok(Self {
            grid,
            transmission,
            profile,
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn profile(&self) -> &AmplitudeProfile {
        &self.profile
    }

    pub fn transmission(&self) -> Vec<Complex64> {
        self.transmission.iter().map(|&t| Complex64::new(t, 0.0)).collect()
    }

    pub fn extent(&self) -> Option<f64> {
        amplitude_extent(&self.profile)
    }
}

/// Either kind of object, as carried by an optical train.
#[derive(Debug, Clone, PartialEq)]
pub enum Object {
    Phase(PhaseObject),
    Amplitude(AmplitudeObject),
}

impl Object {
    pub fn grid(&self) -> &Grid {
        match self {
            Object::Phase(o) => o.grid(),
            Object::Amplitude(o) => o.grid(),
        }
    }

    pub fn transmission(&self) -> Vec<Complex64> {
        match self {
            Object::Phase(o) => o.transmission(),
            Object::Amplitude(o) => o.transmission(),
        }
    }

    pub fn extent(&self) -> Option<f64> {
        match self {
            Object::Phase(o) => o.extent(),
            Object::Amplitude(o) => o.extent(),
        }
    }

    /// True if the transmission is real (amplitude objects, or phases of 0 and pi).
    pub fn is_real(&self) -> bool {
        self.transmission().iter().all(|t| t.im.abs() <= 1e-12)
    }
}

impl From<PhaseObject> for Object {
    fn from(o: PhaseObject) -> Self {
        Object::Phase(o)
    }
}

impl From<AmplitudeObject> for Object {
    fn from(o: AmplitudeObject) -> Self {
        Object::Amplitude(o)
    }
}

pub fn make_phase_object(profile: PhaseProfile, grid: Grid) -> Result<PhaseObject> {
    PhaseObject::new(profile, grid)
}

pub fn make_amplitude_object(profile: AmplitudeProfile, grid: Grid) -> Result<AmplitudeObject> {
    AmplitudeObject::new(profile, grid)
}

pub fn transmission(obj: &Object) -> Vec<Complex64> {
    obj.transmission()
}

/// Field stop at the object plane: a disk of diameter `d` in 2D, an interval in 1D.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Diaphragm {
    pub d: f64,
    pub shape: ApertureShape,
}

impl Diaphragm {
    pub fn new(d: f64, shape: ApertureShape) -> Result<Self> {
        positive("diameter", d)?;
        Ok(Self { d, shape })
    }

    pub fn element(&self) -> Element {
        Element::Aperture {
            shape: self.shape,
            d: self.d,
        }
    }
}
