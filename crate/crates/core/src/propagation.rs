//! Paraxial optics: angular-spectrum free space, thin lenses, apertures,
//! objects and the ideal f-f Fourier system, plus explicit impulse-response
//! matrices for 1D trains.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::fft::{self, Direction};
use crate::field::{ComplexField, Grid};
use crate::objects::Object;

/// Largest `n_in * n_out` accepted by [`impulse_matrix`].
pub const IMPULSE_MATRIX_LIMIT: usize = 1 << 22;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ApertureShape {
    /// Disk of diameter `d` in 2D.
    Circle,
    /// Band `|x| <= d/2`, unbounded along y.
    Slit,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Element {
    /// Angular-spectrum propagation over `z` (negative values back-propagate).
    FreeSpace { z: f64 },
    ThinLens { f: f64 },
    Aperture { shape: ApertureShape, d: f64 },
    Object(Object),
    /// Ideal lens-based optical Fourier transform with focal length `f`.
    FourierSystem { f: f64 },
}

impl Element {
    fn validate(&self) -> Result<()> {
        let ok = match self {
            Element::FreeSpace { z } => z.is_finite(),
            Element::ThinLens { f } => f.is_finite() && *f != 0.0,
            Element::Aperture { d, .. } => d.is_finite() && *d > 0.0,
            Element::FourierSystem { f } => f.is_finite() && *f > 0.0,
            Element::Object(_) => true,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::param("element", format!("invalid parameter in {self:?}")))
        }
    }

    /// Output grid for a given input grid.
    pub fn output_grid(&self, grid: &Grid, wavelength: f64) -> Result<Grid> {
        match self {
            Element::FourierSystem { f } => fourier_output_grid(grid, wavelength, *f),
            _ => Ok(*grid),
        }
    }
}

/// Ordered, nonempty element sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct OpticalTrain {
    elements: Vec<Element>,
}

impl OpticalTrain {
    pub fn new(elements: Vec<Element>) -> Result<Self> {
        if elements.is_empty() {
            return Err(Error::param("train", "must contain at least one element"));
        }
        for e in &elements {
            e.validate()?;
        }
        Ok(Self { elements })
    }

    pub fn elements(&self) -> &[Element] {
        &self.elements
    }

    pub fn objects(&self) -> impl Iterator<Item = &Object> {
        self.elements.iter().filter_map(|e| match e {
            Element::Object(o) => Some(o),
            _ => None,
        })
    }

    pub fn output_grid(&self, grid: &Grid, wavelength: f64) -> Result<Grid> {
        self.elements
            .iter()
            .try_fold(*grid, |g, e| e.output_grid(&g, wavelength))
    }
}

pub fn fourier_output_grid(grid: &Grid, wavelength: f64, focal: f64) -> Result<Grid> {
    Grid::new(
        grid.dims(),
        grid.n(),
        wavelength * focal / (grid.n() as f64 * grid.dx()),
    )
}

fn check_finite(f: &ComplexField) -> Result<()> {
    if f.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite("input field"))
    }
}

/// Widest field that can propagate over `z` without wrapping around the grid,
/// given the highest spatial frequency `f_max` it carries.
pub fn max_unaliased_extent(grid: &Grid, wavelength: f64, z: f64, f_max: f64) -> f64 {
    let s = (wavelength * f_max).min(1.0);
    let spread = if s >= 1.0 {
        f64::INFINITY
    } else {
        z.abs() * s / (1.0 - s * s).sqrt()
    };
    grid.extent() - 2.0 * spread
}

/// Cached angular-spectrum transfer function for one grid, wavelength and distance.
#[derive(Debug, Clone)]
pub struct AngularSpectrum {
    grid: Grid,
    wavelength: f64,
    z: f64,
    transfer: Vec<Complex64>,
    freq_sq: Vec<f64>,
}

impl AngularSpectrum {
    pub fn new(grid: Grid, wavelength: f64, z: f64) -> Result<Self> {
        if !z.is_finite() {
            return Err(Error::param("z", "must be finite"));
        }
        if !(wavelength.is_finite() && wavelength > 0.0) {
            return Err(Error::param("wavelength", "must be positive"));
        }
        let n = grid.n();
        let df = 1.0 / grid.extent();
        let inv_l2 = 1.0 / (wavelength * wavelength);
        let freq_sq: Vec<f64> = (0..grid.len())
            .map(|idx| {
                let fx = fft::signed_bin(idx % n, n) as f64 * df;
                let fy = if grid.dims() == 2 {
                    fft::signed_bin(idx / n, n) as f64 * df
                } else {
                    0.0
                };
                fx * fx + fy * fy
            })
            .collect();
        // kz - k written as -f^2 / (k + kz): keeps the phase small and exact
        // instead of losing ~1e-10 rad to the 2 pi z / lambda carrier.
        let inv_l = 1.0 / wavelength;
        let transfer = freq_sq
            .iter()
            .map(|&f2| {
                let arg = inv_l2 - f2;
                if arg < 0.0 {
                    Complex64::new(0.0, 0.0)
                } else {
                    Complex64::from_polar(1.0, -2.0 * PI * z * f2 / (inv_l + arg.sqrt()))
                }
            })
            .collect();
        Ok(Self {
            grid,
            wavelength,
            z,
            transfer,
            freq_sq,
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// Propagate samples in place. Returns the highest spatial frequency with
    /// non-negligible content, for the aliasing check.
    pub fn apply_in_place(&self, samples: &mut [Complex64]) -> f64 {
        let (n, dims) = (self.grid.n(), self.grid.dims());
        fft::fft_nd(samples, n, dims, Direction::Forward);
        let peak = samples.iter().map(|c| c.norm_sqr()).fold(0.0, f64::max);
        let mut f2_max: f64 = 0.0;
        for ((s, h), &f2) in samples.iter_mut().zip(&self.transfer).zip(&self.freq_sq) {
            if s.norm_sqr() > 1e-12 * peak {
                f2_max = f2_max.max(f2);
            }
            *s *= h;
        }
        fft::fft_nd(samples, n, dims, Direction::Inverse);
        let scale = 1.0 / self.grid.len() as f64;
        for s in samples.iter_mut() {
            *s *= scale;
        }
        f2_max.sqrt()
    }

    pub fn apply(&self, f: &ComplexField) -> Result<ComplexField> {
        check_finite(f)?;
        self.grid.ensure_compatible(f.grid(), "angular spectrum")?;
        if f.wavelength() != self.wavelength {
            return Err(Error::param("wavelength", "field and propagator differ"));
        }
        let mut samples = f.samples().to_vec();
        let f_max = self.apply_in_place(&mut samples);
        warn_if_aliased(f, self.z, f_max);
        Ok(f.with_samples(*f.grid(), samples))
    }
}

fn support_width(f: &ComplexField) -> f64 {
    let g = f.grid();
    let n = g.n();
    let peak = f.samples().iter().map(|c| c.norm_sqr()).fold(0.0, f64::max);
    let mut lo = n;
    let mut hi = 0;
    for (idx, c) in f.samples().iter().enumerate() {
        if c.norm_sqr() > 1e-12 * peak {
            let ix = idx % n;
            lo = lo.min(ix);
            hi = hi.max(ix);
            if g.dims() == 2 {
                let iy = idx / n;
                lo = lo.min(iy);
                hi = hi.max(iy);
            }
        }
    }
    if lo > hi {
        0.0
    } else {
        (hi - lo + 1) as f64 * g.dx()
    }
}

fn warn_if_aliased(f: &ComplexField, z: f64, f_max: f64) {
    if z == 0.0 {
        return;
    }
    let limit = max_unaliased_extent(f.grid(), f.wavelength(), z, f_max);
    let width = support_width(f);
    if width > limit {
        log::warn!(
            "free-space step z={z:e} m: field width {width:e} m exceeds the {limit:e} m that \
             propagates without wraparound on this grid"
        );
    }
}

/// Exact scalar angular-spectrum propagation over `z`, up to the constant
/// carrier phase `exp(2 pi i z / lambda)`. Evanescent components are dropped.
pub fn propagate_angular_spectrum(f: &ComplexField, z: f64) -> Result<ComplexField> {
    check_finite(f)?;
    if z == 0.0 {
        return Ok(f.clone());
    }
    AngularSpectrum::new(*f.grid(), f.wavelength(), z)?.apply(f)
}

/// Ideal f-f optical Fourier transform.
///
/// `E_out(x) = s * sum_j E_in(x_j) exp(-2 pi i x x_j / (lambda f))` on the output grid
/// `dx_out = lambda f / (n dx_in)`, with `s` chosen to preserve power. No constant
/// phase prefactor is applied, so the kernel is real-symmetric under `x -> -x`
/// conjugation: `h(-x, x') = h*(x, x')`.
pub fn apply_fourier_system(f: &ComplexField, focal: f64) -> Result<ComplexField> {
    check_finite(f)?;
    if !(focal.is_finite() && focal > 0.0) {
        return Err(Error::param("focal", "must be positive"));
    }
    let g = *f.grid();
    let out = fourier_output_grid(&g, f.wavelength(), focal)?;
    let mut samples = f.samples().to_vec();
    centered_dft(&mut samples, &g, &out);
    Ok(f.with_samples(out, samples))
}

fn fourier_scale(g: &Grid, out: &Grid) -> f64 {
    ((g.dx() / out.dx()) / g.n() as f64).powf(g.dims() as f64 / 2.0)
}

pub(crate) fn centered_dft(samples: &mut [Complex64], g: &Grid, out: &Grid) {
    centered_dft_scaled(samples, g, fourier_scale(g, out));
}

fn centered_dft_scaled(samples: &mut [Complex64], g: &Grid, scale: f64) {
    let (n, dims) = (g.n(), g.dims());
    fft::half_shift(samples, n, dims);
    fft::fft_nd(samples, n, dims, Direction::Forward);
    fft::half_shift(samples, n, dims);
    for s in samples.iter_mut() {
        *s *= scale;
    }
}

fn aperture_mask(grid: &Grid, shape: ApertureShape, d: f64) -> Vec<bool> {
    let half = d / 2.0;
    let tol = 1e-9 * grid.dx();
    let n = grid.n();
    (0..grid.len())
        .map(|idx| match (grid.dims(), shape) {
            (1, _) | (_, ApertureShape::Slit) => grid.coord(idx % n).abs() <= half + tol,
            _ => grid.radius_sq(idx).sqrt() <= half + tol,
        })
        .collect()
}

pub fn apply_element(f: &ComplexField, e: &Element) -> Result<ComplexField> {
    check_finite(f)?;
    e.validate()?;
    match e {
        Element::FreeSpace { z } => propagate_angular_spectrum(f, *z),
        Element::FourierSystem { f: focal } => apply_fourier_system(f, *focal),
        Element::ThinLens { f: focal } => {
            let g = *f.grid();
            let k = PI / (f.wavelength() * focal);
            let samples = f
                .samples()
                .iter()
                .enumerate()
                .map(|(idx, s)| s * Complex64::from_polar(1.0, -k * g.radius_sq(idx)))
                .collect();
            Ok(f.with_samples(g, samples))
        }
        Element::Aperture { shape, d } => {
            let g = *f.grid();
            let mask = aperture_mask(&g, *shape, *d);
            let samples = f
                .samples()
                .iter()
                .zip(mask)
                .map(|(s, m)| if m { *s } else { Complex64::new(0.0, 0.0) })
                .collect();
            Ok(f.with_samples(g, samples))
        }
        Element::Object(obj) => {
            obj.grid().ensure_compatible(f.grid(), "object")?;
            let samples = f
                .samples()
                .iter()
                .zip(obj.transmission())
                .map(|(s, t)| s * t)
                .collect();
            Ok(f.with_samples(*f.grid(), samples))
        }
    }
}

pub fn apply_train(f: &ComplexField, t: &OpticalTrain) -> Result<ComplexField> {
    let mut cur = f.clone();
    for e in t.elements() {
        cur = apply_element(&cur, e)?;
    }
    Ok(cur)
}

fn apply_stages(stages: &[Stage], samples: &mut [Complex64]) {
    for stage in stages {
        match stage {
            Stage::Multiply(m) => {
                for (s, f) in samples.iter_mut().zip(m) {
                    *s *= f;
                }
            }
            Stage::Propagate(p) => {
                p.apply_in_place(samples);
            }
            Stage::Fourier { from, to } => centered_dft(samples, from, to),
        }
    }
}

/// Per-sample multiplicative stages folded together, for repeated application of
/// a train to many fields on one grid.
#[derive(Debug, Clone)]
pub struct CompiledTrain {
    in_grid: Grid,
    out_grid: Grid,
    stages: Vec<Stage>,
}

#[derive(Debug, Clone)]
enum Stage {
    Multiply(Vec<Complex64>),
    Propagate(AngularSpectrum),
    Fourier { from: Grid, to: Grid },
}

impl CompiledTrain {
    pub fn new(t: &OpticalTrain, grid: Grid, wavelength: f64) -> Result<Self> {
        let mut stages: Vec<Stage> = Vec::new();
        let mut g = grid;
        for e in t.elements() {
            e.validate()?;
            let factor: Option<Vec<Complex64>> = match e {
                Element::FreeSpace { z } => {
                    if *z != 0.0 {
                        stages.push(Stage::Propagate(AngularSpectrum::new(g, wavelength, *z)?));
                    }
                    None
                }
                Element::FourierSystem { f } => {
                    let to = fourier_output_grid(&g, wavelength, *f)?;
                    stages.push(Stage::Fourier { from: g, to });
                    g = to;
                    None
                }
                Element::ThinLens { f } => {
                    let k = PI / (wavelength * f);
                    Some(
                        (0..g.len())
                            .map(|idx| Complex64::from_polar(1.0, -k * g.radius_sq(idx)))
                            .collect(),
                    )
                }
                Element::Aperture { shape, d } => Some(
                    aperture_mask(&g, *shape, *d)
                        .into_iter()
                        .map(|m| Complex64::new(if m { 1.0 } else { 0.0 }, 0.0))
                        .collect(),
                ),
                Element::Object(obj) => {
                    obj.grid().ensure_compatible(&g, "object")?;
                    Some(obj.transmission())
                }
            };
            if let Some(factor) = factor {
                if let Some(Stage::Multiply(prev)) = stages.last_mut() {
                    for (p, f) in prev.iter_mut().zip(&factor) {
                        *p *= f;
                    }
                } else {
                    stages.push(Stage::Multiply(factor));
                }
            }
        }
        Ok(Self {
            in_grid: grid,
            out_grid: g,
            stages,
        })
    }

    pub fn in_grid(&self) -> &Grid {
        &self.in_grid
    }

    pub fn out_grid(&self) -> &Grid {
        &self.out_grid
    }

    /// Apply in place; the sample count never changes, only the grid spacing.
    pub fn apply_in_place(&self, samples: &mut [Complex64]) {
        apply_stages(&self.stages, samples);
    }

    /// Central output row along x (the whole output in 1D). `samples` is used
    /// as scratch. In 2D a final Fourier stage is evaluated for that row only:
    /// the middle row of the centered DFT is the 1D transform of the column sums.
    pub fn apply_center_row(&self, samples: &mut [Complex64]) -> Vec<Complex64> {
        let n = self.out_grid.n();
        if self.out_grid.dims() == 1 {
            self.apply_in_place(samples);
            return samples.to_vec();
        }
        match self.stages.split_last() {
            Some((Stage::Fourier { from, to }, head)) => {
                apply_stages(head, samples);
                let mut row = vec![Complex64::new(0.0, 0.0); n];
                for r in samples.chunks_exact(n) {
                    for (a, b) in row.iter_mut().zip(r) {
                        *a += b;
                    }
                }
                let line = Grid::one_d(n, from.dx()).expect("grid side already validated");
                centered_dft_scaled(&mut row, &line, fourier_scale(from, to));
                row
            }
            _ => {
                self.apply_in_place(samples);
                samples[(n / 2) * n..(n / 2 + 1) * n].to_vec()
            }
        }
    }

    /// Apply the transpose (not the adjoint) of the train: `y = h^T x` with `x`
    /// on the output grid and `y` on the input grid. Every stage is a symmetric
    /// matrix (diagonal masks, an even transfer function, a symmetric DFT
    /// kernel), so the transpose is the stages in reverse order. Row `i` of
    /// `h` is `h^T` applied to a unit sample at `i`.
    pub fn transpose_apply_in_place(&self, samples: &mut [Complex64]) {
        for stage in self.stages.iter().rev() {
            match stage {
                Stage::Multiply(m) => {
                    for (s, f) in samples.iter_mut().zip(m) {
                        *s *= f;
                    }
                }
                Stage::Propagate(p) => {
                    p.apply_in_place(samples);
                }
                Stage::Fourier { from, to } => centered_dft_scaled(samples, to, fourier_scale(from, to)),
            }
        }
    }
}

/// Discretized impulse response `h[x_out][x_in]` of a 1D train, including the
/// input quadrature weight, so `h * field` reproduces [`apply_train`].
#[derive(Debug, Clone, PartialEq)]
pub struct ImpulseResponseMatrix {
    in_grid: Grid,
    out_grid: Grid,
    entries: Vec<Complex64>,
}

impl ImpulseResponseMatrix {
    pub fn in_grid(&self) -> &Grid {
        &self.in_grid
    }

    pub fn out_grid(&self) -> &Grid {
        &self.out_grid
    }

    pub fn rows(&self) -> usize {
        self.out_grid.n()
    }

    pub fn cols(&self) -> usize {
        self.in_grid.n()
    }

    /// Row-major entries, `rows() x cols()`.
    pub fn entries(&self) -> &[Complex64] {
        &self.entries
    }

    pub fn get(&self, out: usize, inp: usize) -> Complex64 {
        self.entries[out * self.cols() + inp]
    }

    pub fn identity(grid: Grid) -> Result<Self> {
        if grid.dims() != 1 {
            return Err(Error::InvalidGrid("impulse matrices are 1D only".into()));
        }
        let n = grid.n();
        let mut entries = vec![Complex64::new(0.0, 0.0); n * n];
        for i in 0..n {
            entries[i * n + i] = Complex64::new(1.0, 0.0);
        }
        Ok(Self {
            in_grid: grid,
            out_grid: grid,
            entries,
        })
    }

    pub fn apply(&self, samples: &[Complex64]) -> Result<Vec<Complex64>> {
        if samples.len() != self.cols() {
            return Err(Error::GridMismatch(format!(
                "vector of {} for a matrix with {} columns",
                samples.len(),
                self.cols()
            )));
        }
        Ok(self
            .entries
            .chunks_exact(self.cols())
            .map(|row| row.iter().zip(samples).map(|(h, e)| h * e).sum())
            .collect())
    }
}

/// Build the impulse matrix of `t` column by column from discrete deltas.
///
/// `out_grid` must equal the train's output grid or be a centered crop of it.
pub fn impulse_matrix(
    t: &OpticalTrain,
    in_grid: Grid,
    out_grid: Grid,
    wavelength: f64,
) -> Result<ImpulseResponseMatrix> {
    if in_grid.dims() != 1 || out_grid.dims() != 1 {
        return Err(Error::InvalidGrid("impulse matrices are 1D only".into()));
    }
    let (n_in, n_out) = (in_grid.n(), out_grid.n());
    if n_in * n_out > IMPULSE_MATRIX_LIMIT {
        return Err(Error::Guard(format!(
            "impulse matrix {n_out}x{n_in} exceeds the {IMPULSE_MATRIX_LIMIT}-entry limit"
        )));
    }
    let compiled = CompiledTrain::new(t, in_grid, wavelength)?;
    let full = *compiled.out_grid();
    let cropped = full.crop(n_out.min(full.n()))?;
    cropped.ensure_compatible(&out_grid, "impulse matrix output grid")?;
    let off = full.crop_offset(n_out);

    let mut entries = vec![Complex64::new(0.0, 0.0); n_out * n_in];
    let mut column = vec![Complex64::new(0.0, 0.0); n_in];
    for j in 0..n_in {
        column.fill(Complex64::new(0.0, 0.0));
        // Delta of unit integral (1/dx) times the quadrature weight dx.
        column[j] = Complex64::new(1.0, 0.0);
        compiled.apply_in_place(&mut column);
        for i in 0..n_out {
            entries[i * n_in + j] = column[off + i];
        }
    }
    if entries.iter().any(|c| !(c.re.is_finite() && c.im.is_finite())) {
        return Err(Error::NonFinite("impulse matrix"));
    }
    Ok(ImpulseResponseMatrix {
        in_grid,
        out_grid,
        entries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{intensity, total_power};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const LAMBDA: f64 = 532e-9;

    fn random_field(grid: Grid, seed: u64) -> ComplexField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = (0..grid.len())
            .map(|_| Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
            .collect();
        ComplexField::new(grid, s, LAMBDA).unwrap()
    }

    fn rel_rms(a: &[Complex64], b: &[Complex64]) -> f64 {
        let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum();
        let den: f64 = b.iter().map(|y| y.norm_sqr()).sum();
        (num / den).sqrt()
    }

    #[test]
    fn zero_distance_is_identity() {
        let f = random_field(Grid::one_d(64, 5e-6).unwrap(), 1);
        assert_eq!(propagate_angular_spectrum(&f, 0.0).unwrap(), f);
    }

    #[test]
    fn rejects_nan() {
        let g = Grid::one_d(8, 1e-6).unwrap();
        let mut f = ComplexField::zeros(g, LAMBDA).unwrap();
        f.samples_mut()[3] = Complex64::new(f64::NAN, 0.0);
        assert!(propagate_angular_spectrum(&f, 1e-3).is_err());
        assert!(apply_fourier_system(&f, 0.1).is_err());
    }

    #[test]
    fn forward_then_back_restores_field() {
        for grid in [Grid::one_d(256, 4e-6).unwrap(), Grid::two_d(64, 4e-6).unwrap()] {
            let f = random_field(grid, 2);
            let fwd = propagate_angular_spectrum(&f, 0.05).unwrap();
            let back = propagate_angular_spectrum(&fwd, -0.05).unwrap();
            assert!(rel_rms(back.samples(), f.samples()) < 1e-10);
        }
    }

    #[test]
    fn angular_spectrum_preserves_power() {
        let f = random_field(Grid::two_d(128, 3e-6).unwrap(), 3);
        let p0 = total_power(&intensity(&f));
        let p1 = total_power(&intensity(&propagate_angular_spectrum(&f, 0.2).unwrap()));
        assert!(((p1 - p0) / p0).abs() < 1e-10);
    }

    #[test]
    fn semigroup() {
        let g = Grid::one_d(512, 5e-6).unwrap();
        let f = random_field(g, 4);
        let two = OpticalTrain::new(vec![
            Element::FreeSpace { z: 0.03 },
            Element::FreeSpace { z: 0.07 },
        ])
        .unwrap();
        let one = OpticalTrain::new(vec![Element::FreeSpace { z: 0.1 }]).unwrap();
        let a = apply_train(&f, &two).unwrap();
        let b = apply_train(&f, &one).unwrap();
        assert!(rel_rms(a.samples(), b.samples()) < 1e-10);
    }

    #[test]
    fn fourier_system_preserves_power() {
        let f = random_field(Grid::two_d(64, 6e-6).unwrap(), 5);
        let out = apply_fourier_system(&f, 0.2).unwrap();
        let p0 = total_power(&intensity(&f));
        let p1 = total_power(&intensity(&out));
        assert!(((p1 - p0) / p0).abs() < 1e-8);
        assert!((out.grid().dx() - LAMBDA * 0.2 / (64.0 * 6e-6)).abs() < 1e-18);
    }

    #[test]
    fn double_fourier_is_inversion() {
        let g = Grid::one_d(128, 5e-6).unwrap();
        let f = random_field(g, 6);
        let ff = apply_fourier_system(&apply_fourier_system(&f, 0.2).unwrap(), 0.2).unwrap();
        assert!(ff.grid().compatible(&g));
        let reflected: Vec<Complex64> = (0..g.n()).map(|i| f.samples()[g.reflect(i)]).collect();
        assert!(rel_rms(ff.samples(), &reflected) < 1e-12);
    }

    #[test]
    fn empty_train_rejected() {
        assert!(OpticalTrain::new(vec![]).is_err());
    }

    #[test]
    fn large_aperture_is_identity() {
        let g = Grid::two_d(32, 1e-6).unwrap();
        let f = random_field(g, 7);
        let e = Element::Aperture {
            shape: ApertureShape::Circle,
            d: 1.0,
        };
        assert_eq!(apply_element(&f, &e).unwrap(), f);
    }

    #[test]
    fn identity_impulse_matrix() {
        let g = Grid::one_d(32, 5e-6).unwrap();
        let t = OpticalTrain::new(vec![Element::FreeSpace { z: 0.0 }]).unwrap();
        let h = impulse_matrix(&t, g, g, LAMBDA).unwrap();
        assert_eq!(h, ImpulseResponseMatrix::identity(g).unwrap());
    }

    #[test]
    fn transpose_matches_impulse_rows() {
        let g = Grid::one_d(64, 5e-6).unwrap();
        let t = OpticalTrain::new(vec![
            Element::Aperture {
                shape: ApertureShape::Slit,
                d: 200e-6,
            },
            Element::ThinLens { f: 0.05 },
            Element::FreeSpace { z: 1e-3 },
            Element::FourierSystem { f: 0.1 },
        ])
        .unwrap();
        let out = t.output_grid(&g, LAMBDA).unwrap();
        let h = impulse_matrix(&t, g, out, LAMBDA).unwrap();
        let compiled = CompiledTrain::new(&t, g, LAMBDA).unwrap();
        for i in [0, 17, 32, 63] {
            let mut row = vec![Complex64::new(0.0, 0.0); 64];
            row[i] = Complex64::new(1.0, 0.0);
            compiled.transpose_apply_in_place(&mut row);
            let expect: Vec<Complex64> = (0..64).map(|j| h.get(i, j)).collect();
            assert!(rel_rms(&row, &expect) < 1e-12, "row {i}");
        }
    }

    #[test]
    fn center_row_shortcut_matches_full_transform() {
        let g = Grid::two_d(64, 10e-6).unwrap();
        let field: Vec<Complex64> = (0..g.len())
            .map(|i| Complex64::new((i as f64 * 0.37).sin(), (i as f64 * 0.11).cos()))
            .collect();
        for elements in [
            vec![
                Element::Aperture {
                    shape: ApertureShape::Circle,
                    d: 400e-6,
                },
                Element::FourierSystem { f: 0.1 },
            ],
            vec![Element::FourierSystem { f: 0.1 }, Element::FreeSpace { z: 1e-3 }],
        ] {
            let t = CompiledTrain::new(&OpticalTrain::new(elements).unwrap(), g, LAMBDA).unwrap();
            let mut full = field.clone();
            t.apply_in_place(&mut full);
            let mut scratch = field.clone();
            let row = t.apply_center_row(&mut scratch);
            assert!(rel_rms(&row, &full[32 * 64..33 * 64]) < 1e-12);
        }
    }

    #[test]
    fn impulse_matrix_guard() {
        let g = Grid::one_d(4096, 5e-6).unwrap();
        let t = OpticalTrain::new(vec![Element::FourierSystem { f: 0.2 }]).unwrap();
        let out = t.output_grid(&g, LAMBDA).unwrap();
        assert!(impulse_matrix(&t, g, out, LAMBDA).unwrap_err().is_guard());
    }
}
