//! Sampled grids, complex fields, intensity maps and the speckle statistics
//! computed from them.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft::{self, Direction};
use crate::sum::{self, CompensatedSum};

/// Uniform square sampling grid, 1D or 2D, centered on zero.
///
/// Sample `i` along an axis sits at `(i - n/2) * dx`. `n` must be even so that
/// the coordinates are symmetric: index `i` and `(n - i) % n` are mirror images.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    dims: usize,
    n: usize,
    dx: f64,
}

impl Grid {
    pub const MIN_SAMPLES: usize = 8;

    pub fn new(dims: usize, n: usize, dx: f64) -> Result<Self> {
        if dims != 1 && dims != 2 {
            return Err(Error::InvalidGrid(format!("dims must be 1 or 2, got {dims}")));
        }
        if n < Self::MIN_SAMPLES {
            return Err(Error::InvalidGrid(format!(
                "need at least {} samples per axis, got {n}",
                Self::MIN_SAMPLES
            )));
        }
        if !n.is_multiple_of(2) {
            return Err(Error::InvalidGrid(format!("samples per axis must be even, got {n}")));
        }
        if !(dx.is_finite() && dx > 0.0) {
            return Err(Error::InvalidGrid(format!("spacing must be positive, got {dx}")));
        }
        Ok(Self { dims, n, dx })
    }

    pub fn one_d(n: usize, dx: f64) -> Result<Self> {
        Self::new(1, n, dx)
    }

    pub fn two_d(n: usize, dx: f64) -> Result<Self> {
        Self::new(2, n, dx)
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    /// Samples per axis.
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }

    /// Total number of samples.
    pub fn len(&self) -> usize {
        self.n.pow(self.dims as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn coord(&self, i: usize) -> f64 {
        (i as f64 - (self.n / 2) as f64) * self.dx
    }

    pub fn coords(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.coord(i)).collect()
    }

    /// Physical width covered by one axis.
    pub fn extent(&self) -> f64 {
        self.n as f64 * self.dx
    }

    /// Quadrature weight of one sample, `dx^dims`.
    pub fn cell(&self) -> f64 {
        self.dx.powi(self.dims as i32)
    }

    /// Index of the sample at coordinate zero.
    pub fn center(&self) -> usize {
        self.n / 2
    }

    /// Mirror index: coordinate of `reflect(i)` is minus the coordinate of `i`
    /// (modulo the grid period for `i == 0`).
    pub fn reflect(&self, i: usize) -> usize {
        (self.n - i) % self.n
    }

    /// Squared radius of flat sample `idx`.
    pub fn radius_sq(&self, idx: usize) -> f64 {
        match self.dims {
            1 => self.coord(idx).powi(2),
            _ => {
                let (iy, ix) = (idx / self.n, idx % self.n);
                self.coord(ix).powi(2) + self.coord(iy).powi(2)
            }
        }
    }

    /// Centered sub-grid of `m` samples per axis with the same spacing.
    pub fn crop(&self, m: usize) -> Result<Grid> {
        if m > self.n {
            return Err(Error::GridMismatch(format!(
                "cannot crop {m} samples from a {}-sample axis",
                self.n
            )));
        }
        Grid::new(self.dims, m, self.dx)
    }

    /// Offset of a centered `m`-sample crop along one axis.
    pub fn crop_offset(&self, m: usize) -> usize {
        self.n / 2 - m / 2
    }

    /// Equal up to floating rounding in `dx` (spacings derived through
    /// `lambda * f / (n * dx)` round differently along different paths).
    pub fn compatible(&self, other: &Grid) -> bool {
        self.dims == other.dims
            && self.n == other.n
            && (self.dx - other.dx).abs() <= 1e-12 * self.dx.max(other.dx)
    }

    pub(crate) fn ensure_compatible(&self, other: &Grid, what: &str) -> Result<()> {
        if self.compatible(other) {
            Ok(())
        } else {
            Err(Error::GridMismatch(format!(
                "{what}: {}D n={} dx={:e} vs {}D n={} dx={:e}",
                self.dims, self.n, self.dx, other.dims, other.n, other.dx
            )))
        }
    }

    /// Extract the centered `m`-per-axis window of a flat array on this grid.
    pub fn crop_values<T: Copy>(&self, values: &[T], m: usize) -> Vec<T> {
        let off = self.crop_offset(m);
        match self.dims {
            1 => values[off..off + m].to_vec(),
            _ => {
                let mut out = Vec::with_capacity(m * m);
                for iy in off..off + m {
                    let row = iy * self.n;
                    out.extend_from_slice(&values[row + off..row + off + m]);
                }
                out
            }
        }
    }
}

/// Sampled complex scalar field.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexField {
    grid: Grid,
    samples: Vec<Complex64>,
    wavelength: f64,
}

impl ComplexField {
    pub fn new(grid: Grid, samples: Vec<Complex64>, wavelength: f64) -> Result<Self> {
        if samples.len() != grid.len() {
            return Err(Error::GridMismatch(format!(
                "{} samples for a grid of {}",
                samples.len(),
                grid.len()
            )));
        }
        if !(wavelength.is_finite() && wavelength > 0.0) {
            return Err(Error::param("wavelength", format!("must be positive, got {wavelength}")));
        }
        Ok(Self {
            grid,
            samples,
            wavelength,
        })
    }

    pub fn zeros(grid: Grid, wavelength: f64) -> Result<Self> {
        Self::new(grid, vec![Complex64::new(0.0, 0.0); grid.len()], wavelength)
    }

    /// Unit-amplitude plane wave at normal incidence.
    pub fn plane_wave(grid: Grid, wavelength: f64) -> Result<Self> {
        Self::new(grid, vec![Complex64::new(1.0, 0.0); grid.len()], wavelength)
    }

    pub fn from_fn(grid: Grid, wavelength: f64, f: impl Fn(f64, f64) -> Complex64) -> Result<Self> {
        let n = grid.n();
        let samples = match grid.dims() {
            1 => (0..n).map(|i| f(grid.coord(i), 0.0)).collect(),
            _ => (0..n * n)
                .map(|idx| f(grid.coord(idx % n), grid.coord(idx / n)))
                .collect(),
        };
        Self::new(grid, samples, wavelength)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn samples(&self) -> &[Complex64] {
        &self.samples
    }

    pub fn samples_mut(&mut self) -> &mut [Complex64] {
        &mut self.samples
    }

    pub fn into_samples(self) -> Vec<Complex64> {
        self.samples
    }

    pub fn wavelength(&self) -> f64 {
        self.wavelength
    }

    pub(crate) fn with_samples(&self, grid: Grid, samples: Vec<Complex64>) -> ComplexField {
        debug_assert_eq!(samples.len(), grid.len());
        ComplexField {
            grid,
            samples,
            wavelength: self.wavelength,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.samples.iter().all(|c| c.re.is_finite() && c.im.is_finite())
    }

    pub fn scale(&mut self, s: f64) {
        for c in &mut self.samples {
            *c *= s;
        }
    }
}

/// Nonnegative intensity samples on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct IntensityMap {
    grid: Grid,
    values: Vec<f64>,
}

impl IntensityMap {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::GridMismatch(format!(
                "{} values for a grid of {}",
                values.len(),
                grid.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("intensity map"));
        }
        if values.iter().any(|&v| v < 0.0) {
            return Err(Error::param("values", "intensity must be nonnegative"));
        }
        Ok(Self { grid, values })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn mean(&self) -> f64 {
        sum::sum(self.values.iter().copied()) / self.values.len() as f64
    }

    /// The row through the grid center (a copy of the whole map in 1D).
    pub fn center_row(&self) -> Vec<f64> {
        match self.grid.dims() {
            1 => self.values.clone(),
            _ => {
                let n = self.grid.n();
                let c = self.grid.center();
                self.values[c * n..(c + 1) * n].to_vec()
            }
        }
    }
}

/// `|E|^2` sample by sample.
pub fn intensity(f: &ComplexField) -> IntensityMap {
    IntensityMap {
        grid: f.grid,
        values: f.samples.iter().map(|c| c.norm_sqr()).collect(),
    }
}

/// Integrated power, `sum(values) * dx^dims`.
pub fn total_power(m: &IntensityMap) -> f64 {
    sum::sum(m.values.iter().copied()) * m.grid.cell()
}

/// Sample selection for statistics.
#[derive(Debug, Clone, PartialEq)]
pub enum Region {
    Full,
    /// Samples within `radius` of the origin (an interval in 1D).
    Disk { radius: f64 },
    Indices(Vec<usize>),
}

impl Region {
    pub fn indices(&self, grid: &Grid) -> Vec<usize> {
        match self {
            Region::Full => (0..grid.len()).collect(),
            Region::Disk { radius } => (0..grid.len())
                .filter(|&i| grid.radius_sq(i) <= radius * radius)
                .collect(),
            Region::Indices(ix) => ix.iter().copied().filter(|&i| i < grid.len()).collect(),
        }
    }
}

/// Speckle contrast `sigma_I / <I>` pooled over all frames and region samples.
pub fn speckle_contrast(maps: &[IntensityMap], region: &Region) -> Result<f64> {
    if maps.len() < 2 {
        return Err(Error::InsufficientFrames {
            needed: 2,
            have: maps.len() as u64,
        });
    }
    let grid = maps[0].grid;
    for m in &maps[1..] {
        grid.ensure_compatible(&m.grid, "speckle_contrast")?;
    }
    let idx = region.indices(&grid);
    if idx.is_empty() {
        return Err(Error::EmptyRegion);
    }
    let count = (idx.len() * maps.len()) as f64;
    let mean = maps
        .iter()
        .flat_map(|m| idx.iter().map(move |&i| m.values[i]))
        .collect::<CompensatedSum>()
        .value()
        / count;
    if mean <= 0.0 {
        return Ok(0.0);
    }
    let var = maps
        .iter()
        .flat_map(|m| idx.iter().map(move |&i| (m.values[i] - mean).powi(2)))
        .collect::<CompensatedSum>()
        .value()
        / count;
    Ok(var.sqrt() / mean)
}

/// Streaming form of [`speckle_contrast`] for frame counts that do not fit in
/// memory (single pass over raw moments).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ContrastAccumulator {
    sum: CompensatedSum,
    sum_sq: CompensatedSum,
    count: u64,
    frames: u64,
}

impl ContrastAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    /// Add the samples of one frame at `indices`.
    pub fn add(&mut self, values: &[f64], indices: &[usize]) {
        for &i in indices {
            let v = values[i];
            self.sum.add(v);
            self.sum_sq.add(v * v);
        }
        self.count += indices.len() as u64;
        self.frames += 1;
    }

    pub fn merge(&mut self, other: &ContrastAccumulator) {
        self.sum.merge(&other.sum);
        self.sum_sq.merge(&other.sum_sq);
        self.count += other.count;
        self.frames += other.frames;
    }

    pub fn value(&self) -> Result<f64> {
        if self.frames < 2 {
            return Err(Error::InsufficientFrames {
                needed: 2,
                have: self.frames,
            });
        }
        if self.count == 0 {
            return Err(Error::EmptyRegion);
        }
        let n = self.count as f64;
        let mean = self.sum.value() / n;
        if mean <= 0.0 {
            return Ok(0.0);
        }
        let var = (self.sum_sq.value() / n - mean * mean).max(0.0);
        Ok(var.sqrt() / mean)
    }
}

/// FWHM of the background-subtracted, peak-normalized intensity
/// autocovariance of a single map (azimuthally averaged in 2D).
pub fn autocorrelation_width(m: &IntensityMap) -> Result<f64> {
    let mut acc = AutocovarianceAccumulator::new(m.grid);
    acc.add(m)?;
    acc.width()
}

/// Ensemble estimator of the intensity autocovariance.
///
/// Lags are computed without wraparound (zero padding to twice the grid) and
/// each lag is normalized by its overlap count. The background is the pooled
/// ensemble mean, which avoids the per-frame mean bias when a frame only holds a
/// few speckles.
#[derive(Debug, Clone)]
pub struct AutocovarianceAccumulator {
    grid: Grid,
    padded: usize,
    power: Vec<f64>,
    spectrum: Vec<Complex64>,
    total: CompensatedSum,
    frames: u64,
}

impl AutocovarianceAccumulator {
    pub fn new(grid: Grid) -> Self {
        let padded = 2 * grid.n();
        let len = padded.pow(grid.dims() as u32);
        Self {
            grid,
            padded,
            power: vec![0.0; len],
            spectrum: vec![Complex64::new(0.0, 0.0); len],
            total: CompensatedSum::new(),
            frames: 0,
        }
    }

    pub fn frames(&self) -> u64 {
        self.frames
    }

    fn padded_transform(&self, values: &[f64]) -> Vec<Complex64> {
        let n = self.grid.n();
        let p = self.padded;
        let mut buf = vec![Complex64::new(0.0, 0.0); self.power.len()];
        match self.grid.dims() {
            1 => {
                for (b, &v) in buf.iter_mut().zip(values) {
                    b.re = v;
                }
            }
            _ => {
                for iy in 0..n {
                    for ix in 0..n {
                        buf[iy * p + ix].re = values[iy * n + ix];
                    }
                }
            }
        }
        fft::fft_nd(&mut buf, p, self.grid.dims(), Direction::Forward);
        buf
    }

    pub fn add(&mut self, m: &IntensityMap) -> Result<()> {
        self.grid.ensure_compatible(&m.grid, "autocovariance")?;
        let spec = self.padded_transform(&m.values);
        for ((p, s), f) in self.power.iter_mut().zip(self.spectrum.iter_mut()).zip(&spec) {
            *p += f.norm_sqr();
            *s += f;
        }
        for &v in &m.values {
            self.total.add(v);
        }
        self.frames += 1;
        Ok(())
    }

    /// Fold in another accumulator over the same grid.
    pub fn merge(&mut self, other: &AutocovarianceAccumulator) -> Result<()> {
        self.grid.ensure_compatible(&other.grid, "autocovariance merge")?;
        for (a, b) in self.power.iter_mut().zip(&other.power) {
            *a += b;
        }
        for (a, b) in self.spectrum.iter_mut().zip(&other.spectrum) {
            *a += b;
        }
        self.total.merge(&other.total);
        self.frames += other.frames;
        Ok(())
    }

    /// Normalized autocovariance on the padded lag grid (lag 0 at index 0,
    /// negative lags wrapped). Values are `C(lag) / C(0)`.
    pub fn normalized(&self) -> Result<Vec<f64>> {
        if self.frames == 0 {
            return Err(Error::InsufficientFrames { needed: 1, have: 0 });
        }
        let dims = self.grid.dims();
        let p = self.padded;
        let frames = self.frames as f64;
        let mean = self.total.value() / (frames * self.grid.len() as f64);

        let ones = IntensityMap {
            grid: self.grid,
            values: vec![1.0; self.grid.len()],
        };
        let mask = self.padded_transform(&ones.values);

        let mut a: Vec<Complex64> = self.power.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        let mut b: Vec<Complex64> = self
            .spectrum
            .iter()
            .zip(&mask)
            .map(|(s, m)| s.conj() * m + m.conj() * s)
            .collect();
        let mut c: Vec<Complex64> = mask.iter().map(|m| Complex64::new(m.norm_sqr(), 0.0)).collect();
        for buf in [&mut a, &mut b, &mut c] {
            fft::fft_nd(buf, p, dims, Direction::Inverse);
        }
        let norm = 1.0 / self.power.len() as f64;
        let cov: Vec<f64> = (0..a.len())
            .map(|i| {
                let overlap = (c[i].re * norm).round();
                if overlap < 1.0 {
                    return 0.0;
                }
                let num = a[i].re * norm - mean * b[i].re * norm + mean * mean * overlap * frames;
                num / (overlap * frames)
            })
            .collect();
        let peak = cov[0];
        if !(peak > 1e-24 * mean.abs().max(f64::MIN_POSITIVE).powi(2)) || peak <= 0.0 {
            return Err(Error::UndefinedWidth);
        }
        Ok(cov.into_iter().map(|v| v / peak).collect())
    }

    /// Full width at half maximum of the normalized autocovariance, meters.
    pub fn width(&self) -> Result<f64> {
        let c = self.normalized()?;
        let n = self.grid.n();
        let p = self.padded;
        let profile: Vec<(f64, f64)> = match self.grid.dims() {
            1 => (0..n / 2)
                .map(|lag| (lag as f64, 0.5 * (c[lag] + c[(p - lag) % p])))
                .collect(),
            _ => radial_profile(&c, p, n / 2),
        };
        let half = half_max_radius(&profile).ok_or(Error::UndefinedWidth)?;
        Ok(2.0 * half * self.grid.dx())
    }
}

/// Azimuthal average of a wrapped 2D lag map in bins of half a sample.
fn radial_profile(c: &[f64], p: usize, max_lag: usize) -> Vec<(f64, f64)> {
    let nbins = 2 * max_lag + 1;
    let mut r_sum = vec![0.0; nbins];
    let mut c_sum = vec![0.0; nbins];
    let mut count = vec![0usize; nbins];
    let lags = |k: usize| -> Option<i64> {
        let s = crate::fft::signed_bin(k, p);
        (s.unsigned_abs() as usize <= max_lag).then_some(s)
    };
    for ky in 0..p {
        let Some(ly) = lags(ky) else { continue };
        for kx in 0..p {
            let Some(lx) = lags(kx) else { continue };
            let r = ((lx * lx + ly * ly) as f64).sqrt();
            let bin = (2.0 * r).round() as usize;
            if bin < nbins {
                r_sum[bin] += r;
                c_sum[bin] += c[ky * p + kx];
                count[bin] += 1;
            }
        }
    }
    (0..nbins)
        .filter(|&b| count[b] > 0)
        .map(|b| (r_sum[b] / count[b] as f64, c_sum[b] / count[b] as f64))
        .collect()
}

/// First crossing of 0.5 in a profile of `(radius, value)` pairs starting at
/// `(0, 1)`. Interpolates `ln c` against `r^2` when both neighbours are
/// positive (exact for Gaussian shapes), linearly otherwise.
fn half_max_radius(profile: &[(f64, f64)]) -> Option<f64> {
    for w in profile.windows(2) {
        let (r0, c0) = w[0];
        let (r1, c1) = w[1];
        if c0 >= 0.5 && c1 < 0.5 {
            if c1 > 0.0 && c0 > 0.0 && c0 > c1 {
                let t = (0.5f64.ln() - c0.ln()) / (c1.ln() - c0.ln());
                return Some((r0 * r0 + t * (r1 * r1 - r0 * r0)).sqrt());
            }
            let t = (c0 - 0.5) / (c0 - c1);
            return Some(r0 + t * (r1 - r0));
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Exp1, StandardNormal};

    fn g1(n: usize) -> Grid {
        Grid::one_d(n, 1.0).unwrap()
    }

    #[test]
    fn grid_rejects_bad_input() {
        assert!(Grid::one_d(4, 1.0).is_err());
        assert!(Grid::one_d(9, 1.0).is_err());
        assert!(Grid::one_d(8, 0.0).is_err());
        assert!(Grid::new(3, 8, 1.0).is_err());
    }

    #[test]
    fn coordinates_are_symmetric() {
        let g = Grid::one_d(16, 0.25).unwrap();
        assert_eq!(g.coord(0), -g.coord(15) - g.dx());
        assert_eq!(g.coord(g.center()), 0.0);
        for i in 1..16 {
            assert_eq!(g.coord(g.reflect(i)), -g.coord(i));
        }
    }

    #[test]
    fn intensity_cases() {
        let g = g1(8);
        let zero = ComplexField::zeros(g, 1e-6).unwrap();
        assert!(intensity(&zero).values().iter().all(|&v| v == 0.0));
        let one = ComplexField::plane_wave(g, 1e-6).unwrap();
        assert!(intensity(&one).values().iter().all(|&v| v == 1.0));
        let mut s = vec![Complex64::new(0.0, 0.0); 8];
        s[0] = Complex64::new(1.0, 1.0);
        let f = ComplexField::new(g, s, 1e-6).unwrap();
        assert_eq!(intensity(&f).values()[..2], [2.0, 0.0]);
    }

    #[test]
    fn total_power_cases() {
        let g = g1(8);
        assert_eq!(total_power(&IntensityMap::new(g, vec![0.0; 8]).unwrap()), 0.0);
        assert_eq!(total_power(&IntensityMap::new(g, vec![1.0; 8]).unwrap()), 8.0);
        let g2 = Grid::two_d(8, 0.5).unwrap();
        assert_eq!(total_power(&IntensityMap::new(g2, vec![1.0; 64]).unwrap()), 16.0);
    }

    #[test]
    fn contrast_of_constant_maps_is_zero() {
        let g = g1(8);
        let maps = vec![IntensityMap::new(g, vec![3.0; 8]).unwrap(); 3];
        assert_eq!(speckle_contrast(&maps, &Region::Full).unwrap(), 0.0);
    }

    #[test]
    fn contrast_errors() {
        let a = IntensityMap::new(g1(8), vec![1.0; 8]).unwrap();
        let b = IntensityMap::new(g1(16), vec![1.0; 16]).unwrap();
        assert!(speckle_contrast(&[a.clone()], &Region::Full).is_err());
        assert!(matches!(
            speckle_contrast(&[a.clone(), b], &Region::Full),
            Err(Error::GridMismatch(_))
        ));
        assert!(matches!(
            speckle_contrast(&[a.clone(), a], &Region::Indices(vec![])),
            Err(Error::EmptyRegion)
        ));
    }

    fn exponential_maps(rng: &mut ChaCha8Rng, frames: usize, n: usize) -> Vec<IntensityMap> {
        (0..frames)
            .map(|_| {
                let v = (0..n).map(|_| Exp1.sample(rng)).collect();
                IntensityMap::new(g1(n), v).unwrap()
            })
            .collect()
    }

    #[test]
    fn contrast_of_exponential_samples_is_one() {
        // 1e5 samples: estimator sd of sigma/mu is about 0.0045, tolerance 0.02 > 4 sd.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let maps = exponential_maps(&mut rng, 2, 50_000);
        let c = speckle_contrast(&maps, &Region::Full).unwrap();
        assert!((c - 1.0).abs() < 0.02, "contrast {c}");
    }

    #[test]
    fn streaming_contrast_matches_batch() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let maps = exponential_maps(&mut rng, 6, 4096);
        let region = Region::Disk { radius: 1000.0 };
        let idx = region.indices(maps[0].grid());
        let batch = speckle_contrast(&maps, &region).unwrap();
        let mut a = ContrastAccumulator::new();
        let mut b = ContrastAccumulator::new();
        for (k, m) in maps.iter().enumerate() {
            if k < 2 {
                a.add(m.values(), &idx);
            } else {
                b.add(m.values(), &idx);
            }
        }
        a.merge(&b);
        assert!((a.value().unwrap() - batch).abs() < 1e-12);
        assert!(ContrastAccumulator::new().value().is_err());
    }

    #[test]
    fn contrast_of_summed_independent_speckle() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let a = exponential_maps(&mut rng, 2, 50_000);
        let b = exponential_maps(&mut rng, 2, 50_000);
        let summed: Vec<IntensityMap> = a
            .iter()
            .zip(&b)
            .map(|(x, y)| {
                let v = x.values().iter().zip(y.values()).map(|(p, q)| p + q).collect();
                IntensityMap::new(*x.grid(), v).unwrap()
            })
            .collect();
        let c = speckle_contrast(&summed, &Region::Full).unwrap();
        assert!((c - std::f64::consts::FRAC_1_SQRT_2).abs() < 0.02, "contrast {c}");
    }

    #[test]
    fn width_of_flat_map_is_undefined() {
        let m = IntensityMap::new(g1(32), vec![2.0; 32]).unwrap();
        assert!(matches!(autocorrelation_width(&m), Err(Error::UndefinedWidth)));
    }

    #[test]
    fn width_of_delta_is_one_sample() {
        let g = Grid::one_d(64, 3e-6).unwrap();
        let mut v = vec![0.0; 64];
        v[20] = 1.0;
        let w = autocorrelation_width(&IntensityMap::new(g, v.clone()).unwrap()).unwrap();
        assert!((w / g.dx() - 1.0).abs() < 0.05, "width {w}");

        let g2 = Grid::two_d(32, 3e-6).unwrap();
        let mut v2 = vec![0.0; 32 * 32];
        v2[5 * 32 + 7] = 1.0;
        let w2 = autocorrelation_width(&IntensityMap::new(g2, v2).unwrap()).unwrap();
        assert!((w2 / g2.dx() - 1.0).abs() < 0.05, "width {w2}");
    }

    /// Field with Gaussian correlation g(d) = exp(-d^2 / (2 s^2)), synthesized by
    /// convolving white noise with a Gaussian kernel. The intensity
    /// autocovariance is |g|^2 = exp(-d^2 / s^2), whose FWHM is 2 s sqrt(ln 2).
    #[test]
    fn width_of_gaussian_correlated_field() {
        let n = 4096;
        let dx = 1.0;
        let s = 6.0;
        // Kernel k(x) = exp(-x^2 / s^2) autocorrelates to exp(-d^2 / (2 s^2)).
        let g = Grid::one_d(n, dx).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut kernel = vec![Complex64::new(0.0, 0.0); n];
        for (k, kv) in kernel.iter_mut().enumerate() {
            let x = crate::fft::signed_bin(k, n) as f64;
            kv.re = (-x * x / (s * s)).exp();
        }
        fft::fft_1d(&mut kernel, Direction::Forward);
        let mut acc = AutocovarianceAccumulator::new(g);
        for _ in 0..40 {
            let mut noise: Vec<Complex64> = (0..n)
                .map(|_| {
                    let re: f64 = StandardNormal.sample(&mut rng);
                    let im: f64 = StandardNormal.sample(&mut rng);
                    Complex64::new(re, im)
                })
                .collect();
            fft::fft_1d(&mut noise, Direction::Forward);
            for (a, k) in noise.iter_mut().zip(&kernel) {
                *a *= k;
            }
            fft::fft_1d(&mut noise, Direction::Inverse);
            let f = ComplexField::new(g, noise, 1e-6).unwrap();
            acc.add(&intensity(&f)).unwrap();
        }
        let expected = 2.0 * s * 2f64.ln().sqrt();
        let w = acc.width().unwrap();
        assert!((w / expected - 1.0).abs() < 0.05, "width {w} expected {expected}");
    }

    proptest! {
        #[test]
        fn intensity_is_nonnegative(re in proptest::collection::vec(-1e3f64..1e3, 8),
                                    im in proptest::collection::vec(-1e3f64..1e3, 8)) {
            let s: Vec<Complex64> = re.iter().zip(&im).map(|(&a, &b)| Complex64::new(a, b)).collect();
            let f = ComplexField::new(g1(8), s, 1e-6).unwrap();
            prop_assert!(intensity(&f).values().iter().all(|&v| v >= 0.0));
        }
    }
}
