//! Pseudo-thermal speckle source.
//!
//! Two generators produce circular complex Gaussian fields at the diaphragm
//! plane:
//!
//! * spectral: random complex weights on a frequency lattice, shaped by the
//!   power spectrum that the Van Cittert-Zernike theorem assigns to a uniform
//!   source of diameter `d0` at distance `z` (or a Gaussian spectrum for an
//!   explicit target speckle size);
//! * physical: i.i.d. complex Gaussian samples across the source, propagated
//!   over `z` by the angular spectrum on an enlarged grid and cropped.
//!
//! Frame `i` of seed `s` always draws from ChaCha stream `i` of key `s`, so a
//! frame is reproducible on its own and independent of generation order.

use std::f64::consts::{LN_2, PI};

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::fft::{self, Direction};
use crate::field::{ComplexField, Grid};
use crate::propagation::AngularSpectrum;

pub const DEFAULT_WAVELENGTH: f64 = 532e-9;
pub const DEFAULT_DISTANCE: f64 = 0.395;
pub const DEFAULT_SOURCE_DIAMETER: f64 = 10e-3;

/// Intensity-autocovariance FWHM of speckle from a uniform slit source, in
/// units of `lambda z / d0` (half-maximum of `sinc^2`).
pub const FWHM_FACTOR_1D: f64 = 0.885_893;
/// Same for a uniform disk source (half-maximum of the Airy pattern `(2 J1(v)/v)^2`).
pub const FWHM_FACTOR_2D: f64 = 1.028_994;

/// Minimum resolvable speckle size in samples.
pub const MIN_SPECKLE_SAMPLES: f64 = 3.0;
/// Minimum grid extent in units of the diaphragm diameter.
pub const MIN_EXTENT_DIAPHRAGMS: f64 = 2.0;
/// Largest enlarged grid the physical method may allocate, in samples.
pub const PHYSICAL_GRID_LIMIT: usize = 1 << 24;

/// Frequency lattice spans at least this many coherence lengths.
const LATTICE_COHERENCE_SPAN: f64 = 32.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SpeckleMethod {
    Physical,
    #[default]
    Spectral,
}

/// Mean-intensity profile at the diaphragm plane.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Envelope {
    #[default]
    Uniform,
    /// Field amplitude `exp(-r^2 / w^2)`.
    Gaussian { waist: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpeckleSourceConfig {
    pub method: SpeckleMethod,
    pub d0: f64,
    pub z: f64,
    pub wavelength: f64,
    /// Spectral method only: impose this speckle size (intensity autocovariance
    /// FWHM) with a Gaussian spectrum instead of deriving it from `d0` and `z`.
    pub target_speckle_size: Option<f64>,
    pub envelope: Envelope,
}

impl Default for SpeckleSourceConfig {
    fn default() -> Self {
        Self {
            method: SpeckleMethod::Spectral,
            d0: DEFAULT_SOURCE_DIAMETER,
            z: DEFAULT_DISTANCE,
            wavelength: DEFAULT_WAVELENGTH,
            target_speckle_size: None,
            envelope: Envelope::Uniform,
        }
    }
}

fn positive(name: &'static str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::param(name, format!("must be positive, got {v}")))
    }
}

impl SpeckleSourceConfig {
    pub fn validate(&self) -> Result<()> {
        positive("d0", self.d0)?;
        positive("z", self.z)?;
        positive("wavelength", self.wavelength)?;
        if let Some(t) = self.target_speckle_size {
            positive("target_speckle_size", t)?;
            if self.method == SpeckleMethod::Physical {
                return Err(Error::param(
                    "target_speckle_size",
                    "only the spectral method accepts an explicit speckle size",
                ));
            }
        }
        if let Envelope::Gaussian { waist } = self.envelope {
            positive("waist", waist)?;
        }
        Ok(())
    }

    /// Characteristic coherence length: `lambda z / d0`, or the target size.
    pub fn speckle_size(&self) -> f64 {
        self.target_speckle_size
            .unwrap_or_else(|| expected_speckle_size(self.wavelength, self.z, self.d0))
    }

    /// Expected intensity-autocovariance FWHM on a grid of `dims` dimensions.
    pub fn expected_fwhm(&self, dims: usize) -> f64 {
        match self.target_speckle_size {
            Some(t) => t,
            None => {
                let factor = if dims == 1 { FWHM_FACTOR_1D } else { FWHM_FACTOR_2D };
                factor * expected_speckle_size(self.wavelength, self.z, self.d0)
            }
        }
    }
}

/// Van Cittert-Zernike coherence length `lambda z / d0`.
pub fn expected_speckle_size(wavelength: f64, z: f64, d0: f64) -> f64 {
    wavelength * z / d0
}

/// Number of speckles across a diaphragm, `(d / dx)^2`.
pub fn speckle_count(d: f64, speckle_size: f64) -> f64 {
    (d / speckle_size).powi(2)
}

/// Reject grids that cannot hold a diaphragm of diameter `d` with margin.
pub fn check_extent(grid: &Grid, d: f64) -> Result<()> {
    if grid.extent() < MIN_EXTENT_DIAPHRAGMS * d * (1.0 - 1e-12) {
        return Err(Error::Guard(format!(
            "grid extent {:e} m is less than {MIN_EXTENT_DIAPHRAGMS} x diaphragm {d:e} m",
            grid.extent()
        )));
    }
    Ok(())
}

/// Split a field into two equal halves, `f / sqrt(2)` each.
pub fn beamsplit(f: &ComplexField) -> (ComplexField, ComplexField) {
    let mut a = f.clone();
    a.scale(std::f64::consts::FRAC_1_SQRT_2);
    (a.clone(), a)
}

/// One realization of the speckle field.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeckleFrame {
    pub field: ComplexField,
    pub frame_index: u64,
    pub seed: u64,
}

/// Random stream of frame `frame_index` for `seed`.
pub fn frame_rng(seed: u64, frame_index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(frame_index);
    rng
}

/// Standard circular complex Gaussian, `<|c|^2> = 1`.
#[inline]
pub fn complex_normal(rng: &mut ChaCha8Rng) -> Complex64 {
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

#[derive(Debug, Clone)]
enum Synthesis {
    /// Lattice spacing equals the FFT bin: `amp` holds `sqrt(w_k)` times the
    /// centering sign, in FFT order.
    Fft {
        amp: Vec<Complex64>,
        weights: Vec<f64>,
    },
    /// Finer lattice evaluated directly. `bins` are the signed lattice indices
    /// along one axis, `phases[k][i] = exp(2 pi i f_k x_i)`, and `amp` the
    /// square-root weights (`kx` fastest in 2D).
    Direct {
        bins: Vec<i64>,
        phases: Vec<Vec<Complex64>>,
        amp: Vec<f64>,
    },
    Physical {
        gen_grid: Grid,
        support: Vec<usize>,
        propagator: Box<AngularSpectrum>,
        scale: f64,
    },
}

/// Precomputed speckle generator for one configuration and grid.
#[derive(Debug, Clone)]
pub struct SpeckleGenerator {
    cfg: SpeckleSourceConfig,
    grid: Grid,
    synthesis: Synthesis,
    envelope: Option<Vec<f64>>,
    /// Lattice frequency spacing and marginal weight per signed x bin (spectral only).
    df: f64,
    marginal: Vec<(i64, f64)>,
}

impl SpeckleGenerator {
    pub fn new(cfg: SpeckleSourceConfig, grid: Grid) -> Result<Self> {
        cfg.validate()?;
        let size = cfg.speckle_size();
        if size < MIN_SPECKLE_SAMPLES * grid.dx() {
            return Err(Error::Guard(format!(
                "speckle size {size:e} m is below {MIN_SPECKLE_SAMPLES} samples of {:e} m",
                grid.dx()
            )));
        }
        let envelope = match cfg.envelope {
            Envelope::Uniform => None,
            Envelope::Gaussian { waist } => Some(
                (0..grid.len())
                    .map(|i| (-grid.radius_sq(i) / (waist * waist)).exp())
                    .collect(),
            ),
        };
        let (synthesis, df, marginal) = match cfg.method {
            SpeckleMethod::Spectral => spectral_synthesis(&cfg, &grid)?,
            SpeckleMethod::Physical => (physical_synthesis(&cfg, &grid)?, 0.0, Vec::new()),
        };
        Ok(Self {
            cfg,
            grid,
            synthesis,
            envelope,
            df,
            marginal,
        })
    }

    pub fn config(&self) -> &SpeckleSourceConfig {
        &self.cfg
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// Lattice refinement factor relative to the FFT bin (spectral method).
    pub fn lattice_refinement(&self) -> Option<f64> {
        match self.synthesis {
            Synthesis::Physical { .. } => None,
            _ => Some(1.0 / (self.df * self.grid.extent())),
        }
    }

    /// Exact field coherence `<E*(x) E(x + lag)>` along x for the spectral
    /// method (uniform envelope). For the physical method, the continuous Van
    /// Cittert-Zernike model of a uniform source.
    pub fn coherence(&self, lag: f64) -> f64 {
        match self.synthesis {
            Synthesis::Physical { .. } => {
                let u = PI * self.cfg.d0 * lag / (self.cfg.wavelength * self.cfg.z);
                if self.grid.dims() == 1 {
                    if u == 0.0 {
                        1.0
                    } else {
                        u.sin() / u
                    }
                } else {
                    airy_amplitude(u)
                }
            }
            _ => self
                .marginal
                .iter()
                .map(|&(k, w)| w * (2.0 * PI * k as f64 * self.df * lag).cos())
                .sum(),
        }
    }

    /// Field amplitude envelope per grid sample (ones for a uniform source).
    pub fn envelope_amplitude(&self) -> Vec<f64> {
        self.envelope.clone().unwrap_or_else(|| vec![1.0; self.grid.len()])
    }

    /// Apply the field coherence in place: `v(b) <- sum_a <E*(a) E(b)> v(a)`.
    pub fn apply_coherence(&self, v: &mut [Complex64]) -> Result<()> {
        if let Some(env) = &self.envelope {
            for (x, e) in v.iter_mut().zip(env) {
                *x *= e;
            }
        }
        self.apply_stationary_coherence(v)?;
        if let Some(env) = &self.envelope {
            for (x, e) in v.iter_mut().zip(env) {
                *x *= e;
            }
        }
        Ok(())
    }

    fn apply_stationary_coherence(&self, v: &mut [Complex64]) -> Result<()> {
        let n = self.grid.n();
        let dims = self.grid.dims();
        match &self.synthesis {
            Synthesis::Fft { weights, .. } => {
                fft::fft_nd(v, n, dims, Direction::Forward);
                for (a, w) in v.iter_mut().zip(weights) {
                    *a *= w;
                }
                fft::fft_nd(v, n, dims, Direction::Inverse);
            }
            Synthesis::Direct { bins, phases, amp } => {
                // Project onto the lattice, weight, and resynthesize.
                let nb = bins.len();
                if dims == 1 {
                    let coeffs: Vec<Complex64> = phases
                        .iter()
                        .zip(amp)
                        .map(|(ph, a)| {
                            let proj: Complex64 = ph.iter().zip(v.iter()).map(|(p, x)| p.conj() * x).sum();
                            proj * (a * a)
                        })
                        .collect();
                    v.fill(Complex64::new(0.0, 0.0));
                    for (c, ph) in coeffs.iter().zip(phases) {
                        for (o, p) in v.iter_mut().zip(ph) {
                            *o += c * p;
                        }
                    }
                } else {
                    // rows[y][kx] = sum_x conj(phi_kx(x)) v[y][x]
                    let mut rows = vec![Complex64::new(0.0, 0.0); n * nb];
                    for iy in 0..n {
                        let src = &v[iy * n..(iy + 1) * n];
                        for kx in 0..nb {
                            rows[iy * nb + kx] = phases[kx].iter().zip(src).map(|(p, x)| p.conj() * x).sum();
                        }
                    }
                    let mut coeffs = vec![Complex64::new(0.0, 0.0); nb * nb];
                    for ky in 0..nb {
                        for kx in 0..nb {
                            let w = amp[ky * nb + kx].powi(2);
                            if w == 0.0 {
                                continue;
                            }
                            let proj: Complex64 = (0..n).map(|iy| phases[ky][iy].conj() * rows[iy * nb + kx]).sum();
                            coeffs[ky * nb + kx] = proj * w;
                        }
                    }
                    let mut tmp = vec![Complex64::new(0.0, 0.0); nb * n];
                    for ky in 0..nb {
                        for kx in 0..nb {
                            let c = coeffs[ky * nb + kx];
                            for (t, p) in tmp[ky * n..(ky + 1) * n].iter_mut().zip(&phases[kx]) {
                                *t += c * p;
                            }
                        }
                    }
                    v.fill(Complex64::new(0.0, 0.0));
                    for iy in 0..n {
                        for ky in 0..nb {
                            let p = phases[ky][iy];
                            for (d, t) in v[iy * n..(iy + 1) * n].iter_mut().zip(&tmp[ky * n..(ky + 1) * n]) {
                                *d += p * t;
                            }
                        }
                    }
                }
            }
            Synthesis::Physical { .. } => {
                if dims != 1 {
                    return Err(Error::param(
                        "method",
                        "coherence convolution for the physical method is 1D only",
                    ));
                }
                let dx = self.grid.dx();
                let table: Vec<f64> = (0..n).map(|k| self.coherence(k as f64 * dx)).collect();
                let src = v.to_vec();
                for (b, o) in v.iter_mut().enumerate() {
                    *o = src
                        .iter()
                        .enumerate()
                        .map(|(a, x)| x * table[a.abs_diff(b)])
                        .sum();
                }
            }
        }
        Ok(())
    }

    /// Fill `out` (length `grid.len()`) with frame `frame_index`.
    pub fn generate_into(&self, seed: u64, frame_index: u64, out: &mut [Complex64]) {
        let mut rng = frame_rng(seed, frame_index);
        let n = self.grid.n();
        match &self.synthesis {
            Synthesis::Fft { amp, .. } => {
                for (o, a) in out.iter_mut().zip(amp) {
                    *o = if a.re == 0.0 && a.im == 0.0 {
                        Complex64::new(0.0, 0.0)
                    } else {
                        a * complex_normal(&mut rng)
                    };
                }
                fft::fft_nd(out, n, self.grid.dims(), Direction::Inverse);
            }
            Synthesis::Direct { bins, phases, amp } => {
                let nb = bins.len();
                let coeffs: Vec<Complex64> = amp
                    .iter()
                    .map(|&a| {
                        if a == 0.0 {
                            Complex64::new(0.0, 0.0)
                        } else {
                            complex_normal(&mut rng) * a
                        }
                    })
                    .collect();
                out.fill(Complex64::new(0.0, 0.0));
                if self.grid.dims() == 1 {
                    for (c, ph) in coeffs.iter().zip(phases) {
                        for (o, p) in out.iter_mut().zip(ph) {
                            *o += c * p;
                        }
                    }
                } else {
                    // E[y][x] = sum_ky phi_ky(y) sum_kx C[ky][kx] phi_kx(x)
                    let mut rows = vec![Complex64::new(0.0, 0.0); nb * n];
                    for ky in 0..nb {
                        let row = &mut rows[ky * n..(ky + 1) * n];
                        for kx in 0..nb {
                            let c = coeffs[ky * nb + kx];
                            if c.re == 0.0 && c.im == 0.0 {
                                continue;
                            }
                            for (r, p) in row.iter_mut().zip(&phases[kx]) {
                                *r += c * p;
                            }
                        }
                    }
                    for iy in 0..n {
                        let dst = &mut out[iy * n..(iy + 1) * n];
                        for ky in 0..nb {
                            let p = phases[ky][iy];
                            for (d, r) in dst.iter_mut().zip(&rows[ky * n..(ky + 1) * n]) {
                                *d += p * r;
                            }
                        }
                    }
                }
            }
            Synthesis::Physical {
                gen_grid,
                support,
                propagator,
                scale,
            } => {
                let mut big = vec![Complex64::new(0.0, 0.0); gen_grid.len()];
                for &i in support {
                    big[i] = complex_normal(&mut rng);
                }
                propagator.apply_in_place(&mut big);
                let cropped = gen_grid.crop_values(&big, n);
                for (o, c) in out.iter_mut().zip(cropped) {
                    *o = c * *scale;
                }
            }
        }
        if let Some(env) = &self.envelope {
            for (o, e) in out.iter_mut().zip(env) {
                *o *= e;
            }
        }
    }

    pub fn generate(&self, seed: u64, frame_index: u64) -> SpeckleFrame {
        let mut samples = vec![Complex64::new(0.0, 0.0); self.grid.len()];
        self.generate_into(seed, frame_index, &mut samples);
        SpeckleFrame {
            field: ComplexField::new(self.grid, samples, self.cfg.wavelength)
                .expect("generator grid and wavelength are validated"),
            frame_index,
            seed,
        }
    }
}

pub fn generate_speckle_frame(
    cfg: &SpeckleSourceConfig,
    grid: Grid,
    seed: u64,
    frame_index: u64,
) -> Result<SpeckleFrame> {
    Ok(SpeckleGenerator::new(*cfg, grid)?.generate(seed, frame_index))
}

/// `2 J1(u) / u`.
pub fn airy_amplitude(u: f64) -> f64 {
    if u.abs() < 1e-8 {
        return 1.0;
    }
    2.0 * bessel_j1(u) / u
}

/// Bessel J1 from its integral representation, `(1/pi) int_0^pi cos(t - u sin t) dt`,
/// by composite Simpson quadrature (the integrand is smooth and periodic, so
/// convergence is fast).
pub fn bessel_j1(u: f64) -> f64 {
    let m = 64 + 4 * (u.abs().ceil() as usize);
    let h = PI / m as f64;
    let f = |t: f64| (t - u * t.sin()).cos();
    let mut s = f(0.0) + f(PI);
    for i in 1..m {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(i as f64 * h);
    }
    s * h / 3.0 / PI
}

/// Power spectral density (unnormalized) at radial frequency `f`.
fn spectral_density(cfg: &SpeckleSourceConfig, f: f64) -> f64 {
    match cfg.target_speckle_size {
        // g(d) = exp(-2 ln2 d^2 / l^2) so that |g|^2 has FWHM l.
        Some(l) => {
            let a = 2.0 * LN_2 / (l * l);
            (-PI * PI * f * f / a).exp()
        }
        None => {
            let cutoff = cfg.d0 / (2.0 * cfg.wavelength * cfg.z);
            if f <= cutoff * (1.0 + 1e-12) {
                1.0
            } else {
                0.0
            }
        }
    }
}

type SpectralParts = (Synthesis, f64, Vec<(i64, f64)>);

fn spectral_synthesis(cfg: &SpeckleSourceConfig, grid: &Grid) -> Result<SpectralParts> {
    let n = grid.n();
    let dims = grid.dims();
    let l = grid.extent();
    let mut p = 1usize;
    while (p as f64) * l < LATTICE_COHERENCE_SPAN * cfg.speckle_size() {
        p *= 2;
    }
    let df = 1.0 / (p as f64 * l);
    let nyquist = 1.0 / (2.0 * grid.dx());
    // Signed lattice indices up to the grid Nyquist frequency and, for the
    // source rect, up to the cutoff.
    let kmax_nyq = (p * n / 2) as i64;
    let kmax = match cfg.target_speckle_size {
        // Drop the Gaussian tail below 1e-18 of the peak density.
        Some(t) => {
            let a = 2.0 * LN_2 / (t * t);
            let f_tail = (18.0 * std::f64::consts::LN_10 * a).sqrt() / PI;
            ((f_tail / df).ceil() as i64).min(kmax_nyq)
        }
        None => {
            let cutoff = cfg.d0 / (2.0 * cfg.wavelength * cfg.z);
            ((cutoff / df).floor() as i64).min(kmax_nyq)
        }
    };
    let kmax = kmax.min(kmax_nyq - 1).max(0);
    let density = |kx: i64, ky: i64| {
        let f = ((kx * kx + ky * ky) as f64).sqrt() * df;
        if f > nyquist {
            0.0
        } else {
            spectral_density(cfg, f)
        }
    };

    let bins: Vec<i64> = (-kmax..=kmax).collect();
    let mut weights: Vec<f64> = match dims {
        1 => bins.iter().map(|&k| density(k, 0)).collect(),
        _ => bins
            .iter()
            .flat_map(|&ky| bins.iter().map(move |&kx| (kx, ky)))
            .map(|(kx, ky)| density(kx, ky))
            .collect(),
    };
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(Error::param("source", "empty spatial spectrum"));
    }
    for w in &mut weights {
        *w /= total;
    }
    let nb = bins.len();
    let marginal: Vec<(i64, f64)> = bins
        .iter()
        .enumerate()
        .map(|(ix, &k)| {
            let w = match dims {
                1 => weights[ix],
                _ => (0..nb).map(|iy| weights[iy * nb + ix]).sum(),
            };
            (k, w)
        })
        .filter(|&(_, w)| w > 0.0)
        .collect();

    let synthesis = if p == 1 {
        // E(x_j) = sum_k c_k exp(2 pi i k (j - n/2) / n): an inverse FFT of
        // c_k (-1)^k placed at FFT index k mod n.
        let mut amp = vec![Complex64::new(0.0, 0.0); grid.len()];
        let mut fft_weights = vec![0.0; grid.len()];
        let wrap = |k: i64| k.rem_euclid(n as i64) as usize;
        let sign = |k: i64| if k.rem_euclid(2) == 0 { 1.0 } else { -1.0 };
        match dims {
            1 => {
                for (&k, &w) in bins.iter().zip(&weights) {
                    amp[wrap(k)] = Complex64::new(sign(k) * w.sqrt(), 0.0);
                    fft_weights[wrap(k)] = w;
                }
            }
            _ => {
                for (iy, &ky) in bins.iter().enumerate() {
                    for (ix, &kx) in bins.iter().enumerate() {
                        let w = weights[iy * nb + ix];
                        amp[wrap(ky) * n + wrap(kx)] =
                            Complex64::new(sign(kx + ky) * w.sqrt(), 0.0);
                        fft_weights[wrap(ky) * n + wrap(kx)] = w;
                    }
                }
            }
        }
        Synthesis::Fft {
            amp,
            weights: fft_weights,
        }
    } else {
        let phases = bins
            .iter()
            .map(|&k| {
                let f = k as f64 * df;
                (0..n)
                    .map(|i| Complex64::from_polar(1.0, 2.0 * PI * f * grid.coord(i)))
                    .collect()
            })
            .collect();
        Synthesis::Direct {
            bins,
            phases,
            amp: weights.iter().map(|w| w.sqrt()).collect(),
        }
    };
    Ok((synthesis, df, marginal))
}

fn physical_synthesis(cfg: &SpeckleSourceConfig, grid: &Grid) -> Result<Synthesis> {
    let dx = grid.dx();
    let s = (cfg.wavelength / (2.0 * dx)).min(1.0);
    let spread = if s >= 1.0 {
        f64::INFINITY
    } else {
        cfg.z * s / (1.0 - s * s).sqrt()
    };
    let needed = (grid.extent() + cfg.d0) / 2.0 + spread;
    let mut n_gen = grid.n().max(Grid::MIN_SAMPLES);
    while (n_gen as f64) * dx < needed {
        n_gen *= 2;
        if n_gen.pow(grid.dims() as u32) > PHYSICAL_GRID_LIMIT {
            return Err(Error::Guard(format!(
                "physical speckle generation needs a grid wider than {needed:e} m; \
                 more than {PHYSICAL_GRID_LIMIT} samples at dx = {dx:e} m"
            )));
        }
    }
    let gen_grid = Grid::new(grid.dims(), n_gen, dx)?;
    let r = cfg.d0 / 2.0;
    let support: Vec<usize> = (0..gen_grid.len())
        .filter(|&i| gen_grid.radius_sq(i) <= r * r * (1.0 + 1e-12))
        .collect();
    if support.is_empty() {
        return Err(Error::param("d0", "source smaller than one sample"));
    }
    let propagator = AngularSpectrum::new(gen_grid, cfg.wavelength, cfg.z)?;

    // Mean intensity in the window: sum over source samples of |h(x - xi)|^2,
    // i.e. |h|^2 circularly convolved with the source indicator.
    let n = gen_grid.n();
    let dims = gen_grid.dims();
    let mut h = vec![Complex64::new(0.0, 0.0); gen_grid.len()];
    h[0] = Complex64::new(1.0, 0.0);
    propagator.apply_in_place(&mut h);
    let mut h2: Vec<Complex64> = h.iter().map(|c| Complex64::new(c.norm_sqr(), 0.0)).collect();
    let mut ind = vec![Complex64::new(0.0, 0.0); gen_grid.len()];
    for &i in &support {
        ind[i] = Complex64::new(1.0, 0.0);
    }
    fft::fft_nd(&mut h2, n, dims, Direction::Forward);
    fft::fft_nd(&mut ind, n, dims, Direction::Forward);
    for (a, b) in h2.iter_mut().zip(&ind) {
        *a *= b;
    }
    fft::fft_nd(&mut h2, n, dims, Direction::Inverse);
    let mean_map: Vec<f64> = h2.iter().map(|c| c.re / gen_grid.len() as f64).collect();
    let window = gen_grid.crop_values(&mean_map, grid.n());
    let mean = window.iter().sum::<f64>() / window.len() as f64;
    Ok(Synthesis::Physical {
        gen_grid,
        support,
        propagator: Box::new(propagator),
        scale: 1.0 / mean.sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{intensity, total_power};

    #[test]
    fn expected_size_values() {
        let a = expected_speckle_size(532e-9, 0.395, 10e-3);
        assert!((a - 21.014e-6).abs() < 1e-9);
        let b = expected_speckle_size(532e-9, 0.395, 0.1e-3);
        assert!((b - 2.1014e-3).abs() < 1e-7);
        assert_eq!(expected_speckle_size(532e-9, 0.395, 20e-3), a / 2.0);
    }

    #[test]
    fn speckle_count_values() {
        assert!((speckle_count(3e-3, 21e-6) - 20408.16).abs() < 0.01);
        assert!((speckle_count(3e-3, 2.1e-3) - 2.0408).abs() < 1e-4);
        assert_eq!(speckle_count(1e-3, 1e-3), 1.0);
    }

    fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(mid) > 0.5 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn fwhm_factors_from_closed_forms() {
        // sinc^2(u) = 0.5 at u = half width in units of lambda z / d0.
        let sinc2 = |u: f64| ((PI * u).sin() / (PI * u)).powi(2);
        let h1 = bisect(sinc2, 1e-6, 0.9);
        assert!((2.0 * h1 - FWHM_FACTOR_1D).abs() < 1e-6, "{}", 2.0 * h1);
        let airy2 = |r: f64| airy_amplitude(PI * r).powi(2);
        let h2 = bisect(airy2, 1e-6, 1.0);
        assert!((2.0 * h2 - FWHM_FACTOR_2D).abs() < 1e-6, "{}", 2.0 * h2);
    }

    #[test]
    fn bessel_reference_values() {
        // Tabulated: J1(1) = 0.4400505857, J1(3.8317059702) = 0.
        assert!((bessel_j1(1.0) - 0.440_050_585_7).abs() < 1e-9);
        assert!(bessel_j1(3.831_705_970_2).abs() < 1e-9);
    }

    #[test]
    fn same_seed_same_frame() {
        let g = Grid::two_d(64, 6e-6).unwrap();
        let cfg = SpeckleSourceConfig::default();
        let a = generate_speckle_frame(&cfg, g, 9, 3).unwrap();
        let b = generate_speckle_frame(&cfg, g, 9, 3).unwrap();
        assert_eq!(a.field.samples(), b.field.samples());
        let c = generate_speckle_frame(&cfg, g, 9, 4).unwrap();
        assert_ne!(a.field.samples(), c.field.samples());
    }

    #[test]
    fn resolution_guard() {
        let g = Grid::one_d(256, 10e-6).unwrap();
        let err = SpeckleGenerator::new(SpeckleSourceConfig::default(), g).unwrap_err();
        assert!(err.is_guard());
    }

    #[test]
    fn extent_guard() {
        let g = Grid::two_d(1024, 6e-6).unwrap();
        assert!(check_extent(&g, 3e-3).is_ok());
        assert!(check_extent(&g, 3.2e-3).unwrap_err().is_guard());
    }

    #[test]
    fn beamsplit_halves_power() {
        let g = Grid::one_d(128, 5e-6).unwrap();
        let f = generate_speckle_frame(&SpeckleSourceConfig::default(), g, 1, 0)
            .unwrap()
            .field;
        let (a, b) = beamsplit(&f);
        let p = total_power(&intensity(&f));
        assert!((total_power(&intensity(&a)) - p / 2.0).abs() < 1e-12 * p);
        assert_eq!(intensity(&a), intensity(&b));
        let zero = ComplexField::zeros(g, 1e-6).unwrap();
        let (z1, z2) = beamsplit(&zero);
        assert_eq!(z1, zero);
        assert_eq!(z2, zero);
    }

    #[test]
    fn coherence_at_zero_lag_is_one() {
        for (dims, n, dx, d0) in [(1, 4096, 5e-6, 10e-3), (1, 4096, 5e-6, 0.1e-3), (2, 64, 6e-6, 10e-3)] {
            let g = Grid::new(dims, n, dx).unwrap();
            let cfg = SpeckleSourceConfig {
                d0,
                ..Default::default()
            };
            let gen = SpeckleGenerator::new(cfg, g).unwrap();
            assert!((gen.coherence(0.0) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn coherence_convolution_of_delta() {
        for (dims, n, d0) in [(1, 256, 10e-3), (1, 256, 0.3e-3), (2, 64, 10e-3), (2, 64, 1e-3)] {
            let g = Grid::new(dims, n, 6e-6).unwrap();
            let cfg = SpeckleSourceConfig {
                d0,
                ..Default::default()
            };
            let gen = SpeckleGenerator::new(cfg, g).unwrap();
            let mut v = vec![Complex64::new(0.0, 0.0); g.len()];
            let c = if dims == 1 { n / 2 } else { (n / 2) * n + n / 2 };
            v[c] = Complex64::new(1.0, 0.0);
            gen.apply_coherence(&mut v).unwrap();
            for k in 0..n / 2 {
                let expect = gen.coherence(k as f64 * g.dx());
                assert!((v[c + k].re - expect).abs() < 1e-10, "dims {dims} d0 {d0} lag {k}");
                assert!(v[c + k].im.abs() < 1e-10);
            }
        }
    }

    #[test]
    fn fine_lattice_for_large_speckle() {
        let g = Grid::two_d(1024, 6e-6).unwrap();
        let cfg = SpeckleSourceConfig {
            d0: 0.1e-3,
            ..Default::default()
        };
        let gen = SpeckleGenerator::new(cfg, g).unwrap();
        assert_eq!(gen.lattice_refinement(), Some(16.0));
        let coarse = SpeckleGenerator::new(SpeckleSourceConfig::default(), g).unwrap();
        assert_eq!(coarse.lattice_refinement(), Some(1.0));
    }

    #[test]
    fn physical_guard_on_large_grid() {
        let g = Grid::two_d(1024, 6e-6).unwrap();
        let cfg = SpeckleSourceConfig {
            method: SpeckleMethod::Physical,
            ..Default::default()
        };
        assert!(SpeckleGenerator::new(cfg, g).unwrap_err().is_guard());
    }
}
