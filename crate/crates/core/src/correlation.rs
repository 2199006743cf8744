//! Intensity-fluctuation correlation: Monte Carlo accumulation, closed-form
//! two-arm references, the Gaussian-moment oracle, and the scalar metrics used
//! to compare correlation maps.

use std::f64::consts::{LN_2, PI};

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::field::{ComplexField, Grid, IntensityMap};
use crate::propagation::{ImpulseResponseMatrix, IMPULSE_MATRIX_LIMIT};
use crate::sum::{add_into, CompensatedSum};

fn check_len(what: &str, got: usize, want: usize) -> Result<()> {
    if got == want {
        Ok(())
    } else {
        Err(Error::GridMismatch(format!("{what}: {got} samples, expected {want}")))
    }
}

/// Running sums for `G = <I1 I2> - <I1><I2>` over an `n1 x n2` sample grid.
///
/// Sums are compensated; batches are reduced with a dense matrix product and
/// then folded in, so merging partial accumulators in a fixed order gives
/// reproducible results.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationAccumulator {
    x1_grid: Grid,
    x2_grid: Grid,
    sum12: Vec<f64>,
    comp12: Vec<f64>,
    sum1: Vec<f64>,
    comp1: Vec<f64>,
    sum2: Vec<f64>,
    comp2: Vec<f64>,
    frames: u64,
    scratch: Vec<f64>,
}

impl CorrelationAccumulator {
    /// `x1_grid` and `x2_grid` are 1D grids describing the sampled detector
    /// positions of each arm (a full 1D window, or one line of a 2D map).
    pub fn new(x1_grid: Grid, x2_grid: Grid) -> Result<Self> {
        if x1_grid.dims() != 1 || x2_grid.dims() != 1 {
            return Err(Error::InvalidGrid("correlation axes must be 1D".into()));
        }
        let (n1, n2) = (x1_grid.n(), x2_grid.n());
        Ok(Self {
            x1_grid,
            x2_grid,
            sum12: vec![0.0; n1 * n2],
            comp12: vec![0.0; n1 * n2],
            sum1: vec![0.0; n1],
            comp1: vec![0.0; n1],
            sum2: vec![0.0; n2],
            comp2: vec![0.0; n2],
            frames: 0,
            scratch: Vec::new(),
        })
    }

    pub fn x1_grid(&self) -> &Grid {
        &self.x1_grid
    }

    pub fn x2_grid(&self) -> &Grid {
        &self.x2_grid
    }

    pub fn frames(&self) -> u64 {
        self.frames
    }

    /// Add one frame from intensity maps on the accumulator grids.
    pub fn accumulate(&mut self, i1: &IntensityMap, i2: &IntensityMap) -> Result<()> {
        self.x1_grid.ensure_compatible(i1.grid(), "arm 1 intensity")?;
        self.x2_grid.ensure_compatible(i2.grid(), "arm 2 intensity")?;
        self.accumulate_batch(i1.values(), i2.values(), 1)
    }

    /// Add `batch` frames stored row-major: `i1` is `batch x n1`, `i2` is `batch x n2`.
    pub fn accumulate_batch(&mut self, i1: &[f64], i2: &[f64], batch: usize) -> Result<()> {
        let (n1, n2) = (self.x1_grid.n(), self.x2_grid.n());
        check_len("arm 1 batch", i1.len(), batch * n1)?;
        check_len("arm 2 batch", i2.len(), batch * n2)?;
        if batch == 0 {
            return Ok(());
        }
        if i1.iter().chain(i2).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("intensity batch"));
        }
        self.scratch.resize(n1 * n2, 0.0);
        // scratch (n1 x n2) = i1^T (n1 x batch) * i2 (batch x n2)
        unsafe {
            matrixmultiply::dgemm(
                n1,
                batch,
                n2,
                1.0,
                i1.as_ptr(),
                1,
                n1 as isize,
                i2.as_ptr(),
                n2 as isize,
                1,
                0.0,
                self.scratch.as_mut_ptr(),
                n2 as isize,
                1,
            );
        }
        add_into(&mut self.sum12, &mut self.comp12, &self.scratch);
        for row in i1.chunks_exact(n1) {
            add_into(&mut self.sum1, &mut self.comp1, row);
        }
        for row in i2.chunks_exact(n2) {
            add_into(&mut self.sum2, &mut self.comp2, row);
        }
        self.frames += batch as u64;
        Ok(())
    }

    /// Fold another accumulator over the same grids into this one.
    pub fn merge(&mut self, other: &CorrelationAccumulator) -> Result<()> {
        self.x1_grid.ensure_compatible(&other.x1_grid, "merge x1")?;
        self.x2_grid.ensure_compatible(&other.x2_grid, "merge x2")?;
        add_into(&mut self.sum12, &mut self.comp12, &other.sum12);
        add_into(&mut self.sum12, &mut self.comp12, &other.comp12);
        add_into(&mut self.sum1, &mut self.comp1, &other.sum1);
        add_into(&mut self.sum1, &mut self.comp1, &other.comp1);
        add_into(&mut self.sum2, &mut self.comp2, &other.sum2);
        add_into(&mut self.sum2, &mut self.comp2, &other.comp2);
        self.frames += other.frames;
        Ok(())
    }

    /// Compensated totals `(sum I1 I2, sum I1, sum I2)`.
    pub fn sums(&self) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let total = |s: &[f64], c: &[f64]| s.iter().zip(c).map(|(a, b)| a + b).collect();
        (
            total(&self.sum12, &self.comp12),
            total(&self.sum1, &self.comp1),
            total(&self.sum2, &self.comp2),
        )
    }

    pub fn mean_i1(&self) -> Vec<f64> {
        let n = self.frames.max(1) as f64;
        self.sums().1.into_iter().map(|v| v / n).collect()
    }

    pub fn mean_i2(&self) -> Vec<f64> {
        let n = self.frames.max(1) as f64;
        self.sums().2.into_iter().map(|v| v / n).collect()
    }

    /// `G = sum12 / N - (sum1 / N)(sum2 / N)^T`.
    pub fn finalize(&self) -> Result<CorrelationMap> {
        if self.frames < 2 {
            return Err(Error::InsufficientFrames {
                needed: 2,
                have: self.frames,
            });
        }
        let (s12, s1, s2) = self.sums();
        Ok(covariance_map(
            &s12,
            &s1,
            &s2,
            self.frames as f64,
            self.x1_grid,
            self.x2_grid,
        ))
    }
}

fn covariance_map(s12: &[f64], s1: &[f64], s2: &[f64], n: f64, g1: Grid, g2: Grid) -> CorrelationMap {
    let n2 = g2.n();
    let m1: Vec<f64> = s1.iter().map(|v| v / n).collect();
    let m2: Vec<f64> = s2.iter().map(|v| v / n).collect();
    let g = s12
        .iter()
        .enumerate()
        .map(|(idx, &v)| v / n - m1[idx / n2] * m2[idx % n2])
        .collect();
    CorrelationMap {
        g,
        x1_grid: g1,
        x2_grid: g2,
        frames_used: n as u64,
    }
}

/// Which coordinate varies along a cut.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    /// Profile over x1 at fixed x2 (a column).
    X1,
    /// Profile over x2 at fixed x1 (a row): scanning the arm-2 detector.
    X2,
}

/// `G(x1, x2)` sampled on `x1_grid x x2_grid`, row-major with x1 as the row.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMap {
    pub g: Vec<f64>,
    pub x1_grid: Grid,
    pub x2_grid: Grid,
    pub frames_used: u64,
}

impl CorrelationMap {
    pub fn new(g: Vec<f64>, x1_grid: Grid, x2_grid: Grid, frames_used: u64) -> Result<Self> {
        check_len("correlation map", g.len(), x1_grid.n() * x2_grid.n())?;
        Ok(Self {
            g,
            x1_grid,
            x2_grid,
            frames_used,
        })
    }

    pub fn rows(&self) -> usize {
        self.x1_grid.n()
    }

    pub fn cols(&self) -> usize {
        self.x2_grid.n()
    }

    pub fn get(&self, i1: usize, i2: usize) -> f64 {
        self.g[i1 * self.cols() + i2]
    }

    /// Row/column index of the largest entry.
    pub fn argmax(&self) -> (usize, usize) {
        let (idx, _) = self
            .g
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) });
        (idx / self.cols(), idx % self.cols())
    }

    pub fn max(&self) -> f64 {
        self.g.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Divide by the largest entry (no-op for an all-nonpositive map).
    pub fn peak_normalized(&self) -> CorrelationMap {
        let m = self.max();
        let s = if m > 0.0 { 1.0 / m } else { 1.0 };
        CorrelationMap {
            g: self.g.iter().map(|v| v * s).collect(),
            ..self.clone()
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.rows().min(self.cols())).map(|i| self.get(i, i)).collect()
    }

    /// Mirror along x1: entry `(i, j)` becomes `(reflect(i), j)`.
    pub fn reflect_x1(&self) -> CorrelationMap {
        let mut g = vec![0.0; self.g.len()];
        let c = self.cols();
        for i in 0..self.rows() {
            let r = self.x1_grid.reflect(i);
            g[i * c..(i + 1) * c].copy_from_slice(&self.g[r * c..(r + 1) * c]);
        }
        CorrelationMap { g, ..self.clone() }
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.rows(), self.cols(), &self.g)
    }
}

/// Row or column of a correlation map.
pub fn cut(map: &CorrelationMap, axis: Axis, fixed_index: usize) -> Result<Vec<f64>> {
    match axis {
        Axis::X2 => {
            if fixed_index >= map.rows() {
                return Err(Error::OutOfRange {
                    index: fixed_index,
                    len: map.rows(),
                });
            }
            let c = map.cols();
            Ok(map.g[fixed_index * c..(fixed_index + 1) * c].to_vec())
        }
        Axis::X1 => {
            if fixed_index >= map.cols() {
                return Err(Error::OutOfRange {
                    index: fixed_index,
                    len: map.cols(),
                });
            }
            Ok((0..map.rows()).map(|i| map.get(i, fixed_index)).collect())
        }
    }
}

/// Peak-normalized map with frame-block jackknife standard errors.
#[derive(Debug, Clone, PartialEq)]
pub struct JackknifeEstimate {
    pub map: CorrelationMap,
    pub standard_error: Vec<f64>,
}

/// Jackknife over contiguous frame blocks. Each leave-one-out map is normalized
/// at the full-sample peak location, so the errors refer to the same
/// peak-normalized statistic that is compared downstream.
pub fn jackknife(blocks: &[CorrelationAccumulator]) -> Result<JackknifeEstimate> {
    let nb = blocks.len();
    if nb < 2 {
        return Err(Error::param("blocks", "jackknife needs at least two blocks"));
    }
    let mut total = blocks[0].clone();
    for b in &blocks[1..] {
        total.merge(b)?;
    }
    let full = total.finalize()?;
    let (pi, pj) = full.argmax();
    let peak = full.get(pi, pj);
    if peak <= 0.0 {
        return Err(Error::param("blocks", "correlation map has no positive peak"));
    }
    let (t12, t1, t2) = total.sums();
    let mut loo: Vec<Vec<f64>> = Vec::with_capacity(nb);
    for b in blocks {
        let (b12, b1, b2) = b.sums();
        let sub = |t: &[f64], s: &[f64]| -> Vec<f64> { t.iter().zip(s).map(|(a, b)| a - b).collect() };
        let n = (total.frames - b.frames) as f64;
        let m = covariance_map(
            &sub(&t12, &b12),
            &sub(&t1, &b1),
            &sub(&t2, &b2),
            n,
            total.x1_grid,
            total.x2_grid,
        );
        let p = m.get(pi, pj);
        loo.push(m.g.iter().map(|v| v / p).collect());
    }
    let len = full.g.len();
    let mut se = vec![0.0; len];
    let k = nb as f64;
    for (idx, s) in se.iter_mut().enumerate() {
        let mean = loo.iter().map(|m| m[idx]).sum::<f64>() / k;
        let ss: f64 = loo.iter().map(|m| (m[idx] - mean).powi(2)).sum();
        *s = ((k - 1.0) / k * ss).sqrt();
    }
    Ok(JackknifeEstimate {
        map: CorrelationMap {
            g: full.g.iter().map(|v| v / peak).collect(),
            ..full
        },
        standard_error: se,
    })
}

/// Running sums of `E1*(x1) E2(x2)` for the Gaussian-moment oracle.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldCorrelationAccumulator {
    x1_grid: Grid,
    x2_grid: Grid,
    re: Vec<f64>,
    re_comp: Vec<f64>,
    im: Vec<f64>,
    im_comp: Vec<f64>,
    frames: u64,
}

impl FieldCorrelationAccumulator {
    pub fn new(x1_grid: Grid, x2_grid: Grid) -> Result<Self> {
        if x1_grid.dims() != 1 || x2_grid.dims() != 1 {
            return Err(Error::InvalidGrid("correlation axes must be 1D".into()));
        }
        let len = x1_grid.n() * x2_grid.n();
        Ok(Self {
            x1_grid,
            x2_grid,
            re: vec![0.0; len],
            re_comp: vec![0.0; len],
            im: vec![0.0; len],
            im_comp: vec![0.0; len],
            frames: 0,
        })
    }

    pub fn frames(&self) -> u64 {
        self.frames
    }

    /// Add `batch` frames of fields stored row-major (`batch x n1`, `batch x n2`).
    pub fn accumulate_batch(&mut self, e1: &[Complex64], e2: &[Complex64], batch: usize) -> Result<()> {
        let (n1, n2) = (self.x1_grid.n(), self.x2_grid.n());
        check_len("arm 1 field batch", e1.len(), batch * n1)?;
        check_len("arm 2 field batch", e2.len(), batch * n2)?;
        if batch == 0 {
            return Ok(());
        }
        let a1: Vec<f64> = e1.iter().map(|c| c.re).collect();
        let b1: Vec<f64> = e1.iter().map(|c| c.im).collect();
        let a2: Vec<f64> = e2.iter().map(|c| c.re).collect();
        let b2: Vec<f64> = e2.iter().map(|c| c.im).collect();
        // conj(a1 + i b1)(a2 + i b2) = (a1 a2 + b1 b2) + i (a1 b2 - b1 a2)
        let gemm = |x: &[f64], y: &[f64], alpha: f64, beta: f64, out: &mut [f64]| unsafe {
            matrixmultiply::dgemm(
                n1,
                batch,
                n2,
                alpha,
                x.as_ptr(),
                1,
                n1 as isize,
                y.as_ptr(),
                n2 as isize,
                1,
                beta,
                out.as_mut_ptr(),
                n2 as isize,
                1,
            )
        };
        let mut re = vec![0.0; n1 * n2];
        gemm(&a1, &a2, 1.0, 0.0, &mut re);
        gemm(&b1, &b2, 1.0, 1.0, &mut re);
        let mut im = vec![0.0; n1 * n2];
        gemm(&a1, &b2, 1.0, 0.0, &mut im);
        gemm(&b1, &a2, -1.0, 1.0, &mut im);
        add_into(&mut self.re, &mut self.re_comp, &re);
        add_into(&mut self.im, &mut self.im_comp, &im);
        self.frames += batch as u64;
        Ok(())
    }

    pub fn merge(&mut self, other: &FieldCorrelationAccumulator) -> Result<()> {
        self.x1_grid.ensure_compatible(&other.x1_grid, "merge x1")?;
        self.x2_grid.ensure_compatible(&other.x2_grid, "merge x2")?;
        add_into(&mut self.re, &mut self.re_comp, &other.re);
        add_into(&mut self.re, &mut self.re_comp, &other.re_comp);
        add_into(&mut self.im, &mut self.im_comp, &other.im);
        add_into(&mut self.im, &mut self.im_comp, &other.im_comp);
        self.frames += other.frames;
        Ok(())
    }

    /// Estimated `<E1* E2>`.
    pub fn mean(&self) -> Vec<Complex64> {
        let n = self.frames.max(1) as f64;
        (0..self.re.len())
            .map(|i| Complex64::new(self.re[i] + self.re_comp[i], self.im[i] + self.im_comp[i]) / n)
            .collect()
    }

    /// `|<E1* E2>|^2`, not normalized.
    pub fn finalize(&self) -> Result<CorrelationMap> {
        if self.frames < 2 {
            return Err(Error::InsufficientFrames {
                needed: 2,
                have: self.frames,
            });
        }
        Ok(CorrelationMap {
            g: self.mean().iter().map(|c| c.norm_sqr()).collect(),
            x1_grid: self.x1_grid,
            x2_grid: self.x2_grid,
            frames_used: self.frames,
        })
    }
}

/// Gaussian-moment estimate `|<E1* E2>|^2` from paired field frames, peak-normalized.
pub fn gaussian_moment_oracle(e1: &[ComplexField], e2: &[ComplexField]) -> Result<CorrelationMap> {
    if e1.len() != e2.len() {
        return Err(Error::param("frames", "arms have different frame counts"));
    }
    if e1.len() < 2 {
        return Err(Error::InsufficientFrames {
            needed: 2,
            have: e1.len() as u64,
        });
    }
    let g1 = *e1[0].grid();
    let g2 = *e2[0].grid();
    if g1.dims() != 1 || g2.dims() != 1 {
        return Err(Error::InvalidGrid("oracle fields must be 1D".into()));
    }
    let mut acc = FieldCorrelationAccumulator::new(g1, g2)?;
    let mut a = Vec::with_capacity(e1.len() * g1.n());
    let mut b = Vec::with_capacity(e2.len() * g2.n());
    for (f1, f2) in e1.iter().zip(e2) {
        g1.ensure_compatible(f1.grid(), "oracle arm 1")?;
        g2.ensure_compatible(f2.grid(), "oracle arm 2")?;
        a.extend_from_slice(f1.samples());
        b.extend_from_slice(f2.samples());
    }
    acc.accumulate_batch(&a, &b, e1.len())?;
    Ok(acc.finalize()?.peak_normalized())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorrelationKind {
    Classical,
    Entangled,
}

/// Coherence kernel `g(d)` of the classical model.
#[derive(Debug, Clone, PartialEq)]
pub enum CoherenceKernel {
    /// Fully coherent: `g = 1`.
    Constant,
    /// `g(d) = exp(-2 ln2 d^2 / w^2)`, so `|g|^2` has FWHM `w`.
    Gaussian { width: f64 },
    /// `values[k] = g(k dx)` for `k = 0..n`; even in `d`.
    Tabulated(Vec<f64>),
}

impl CoherenceKernel {
    fn eval(&self, lag: usize, dx: f64) -> f64 {
        match self {
            CoherenceKernel::Constant => 1.0,
            CoherenceKernel::Gaussian { width } => {
                let d = lag as f64 * dx;
                (-2.0 * LN_2 * d * d / (width * width)).exp()
            }
            CoherenceKernel::Tabulated(v) => v.get(lag).copied().unwrap_or(0.0),
        }
    }
}

/// Field correlation at the object plane.
///
/// Classical: `A(a) A(b) g(a - b)`. Entangled: `A(a) d_sigma(a - b)` with a unit
/// area Gaussian `d_sigma` standing in for a delta. The stored matrix holds
/// `<E*(a) E(b)>`, so contracting it with `h1* h2` gives `<E1* E2>` directly;
/// for real envelopes and kernels this equals the transpose convention.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldCorrelationModel {
    kind: CorrelationKind,
    grid: Grid,
    envelope: Vec<f64>,
    kernel: CoherenceKernel,
    sigma: f64,
}

impl FieldCorrelationModel {
    pub fn classical(grid: Grid, envelope: Vec<f64>, kernel: CoherenceKernel) -> Result<Self> {
        Self::validate(&grid, &envelope)?;
        if let CoherenceKernel::Gaussian { width } = kernel {
            if !(width.is_finite() && width > 0.0) {
                return Err(Error::param("width", "must be positive"));
            }
        }
        Ok(Self {
            kind: CorrelationKind::Classical,
            grid,
            envelope,
            kernel,
            sigma: 0.0,
        })
    }

    /// Entangled stand-in with correlation width `sigma` (`None` for one grid cell).
    pub fn entangled(grid: Grid, envelope: Vec<f64>, sigma: Option<f64>) -> Result<Self> {
        Self::validate(&grid, &envelope)?;
        let sigma = sigma.unwrap_or(grid.dx());
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(Error::param("sigma", "must be positive"));
        }
        Ok(Self {
            kind: CorrelationKind::Entangled,
            grid,
            envelope,
            kernel: CoherenceKernel::Constant,
            sigma,
        })
    }

    fn validate(grid: &Grid, envelope: &[f64]) -> Result<()> {
        if grid.dims() != 1 {
            return Err(Error::InvalidGrid("field correlation models are 1D".into()));
        }
        if grid.n() * grid.n() > IMPULSE_MATRIX_LIMIT {
            return Err(Error::Guard(format!(
                "{0}x{0} correlation matrix exceeds the {IMPULSE_MATRIX_LIMIT}-entry limit",
                grid.n()
            )));
        }
        check_len("envelope", envelope.len(), grid.n())?;
        if envelope.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("envelope"));
        }
        Ok(())
    }

    pub fn kind(&self) -> CorrelationKind {
        self.kind
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// `n x n` matrix, row `a`, column `b`.
    pub fn matrix(&self) -> DMatrix<Complex64> {
        let n = self.grid.n();
        let dx = self.grid.dx();
        DMatrix::from_fn(n, n, |a, b| {
            let lag = a.abs_diff(b);
            let v = match self.kind {
                CorrelationKind::Classical => {
                    self.envelope[a] * self.envelope[b] * self.kernel.eval(lag, dx)
                }
                CorrelationKind::Entangled => {
                    let d = lag as f64 * dx;
                    let delta = (-d * d / (2.0 * self.sigma * self.sigma)).exp()
                        / (self.sigma * (2.0 * PI).sqrt());
                    self.envelope[a] * delta
                }
            };
            Complex64::new(v, 0.0)
        })
    }
}

fn impulse_to_matrix(h: &ImpulseResponseMatrix, conjugate: bool) -> DMatrix<Complex64> {
    DMatrix::from_fn(h.rows(), h.cols(), |i, j| {
        let v = h.get(i, j);
        if conjugate {
            v.conj()
        } else {
            v
        }
    })
}

fn two_arm(
    model: &FieldCorrelationModel,
    h1: &ImpulseResponseMatrix,
    h2: &ImpulseResponseMatrix,
    conjugate_h1: bool,
) -> Result<CorrelationMap> {
    model.grid.ensure_compatible(h1.in_grid(), "arm 1 input grid")?;
    model.grid.ensure_compatible(h2.in_grid(), "arm 2 input grid")?;
    let gamma = model.matrix();
    let m1 = impulse_to_matrix(h1, conjugate_h1);
    let m2 = impulse_to_matrix(h2, false);
    let amp = m1 * gamma * m2.transpose();
    let (rows, cols) = amp.shape();
    let mut g = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        for j in 0..cols {
            g.push(amp[(i, j)].norm_sqr());
        }
    }
    Ok(CorrelationMap {
        g,
        x1_grid: *h1.out_grid(),
        x2_grid: *h2.out_grid(),
        frames_used: 0,
    }
    .peak_normalized())
}

/// `G_cl(x1, x2) = |sum h1*(x1, a) h2(x2, b) Gamma(a, b)|^2`, peak-normalized.
pub fn analytic_g_classical(
    model: &FieldCorrelationModel,
    h1: &ImpulseResponseMatrix,
    h2: &ImpulseResponseMatrix,
) -> Result<CorrelationMap> {
    two_arm(model, h1, h2, true)
}

/// `G_ent(x1, x2) = |sum h1(x1, a) h2(x2, b) Gamma(a, b)|^2`, peak-normalized.
pub fn analytic_g_entangled(
    model: &FieldCorrelationModel,
    h1: &ImpulseResponseMatrix,
    h2: &ImpulseResponseMatrix,
) -> Result<CorrelationMap> {
    two_arm(model, h1, h2, false)
}

/// Result of [`fringe_visibility`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Visibility {
    /// In `[0, 1]`; zero when no fringe period was found.
    pub value: f64,
    /// Fringe period in samples located by the spectral search.
    pub period: f64,
    pub peak_found: bool,
}

impl Visibility {
    fn none(expected: f64) -> Self {
        Self {
            value: 0.0,
            period: expected,
            peak_found: false,
        }
    }
}

/// Relative tolerance between the located and the expected fringe period.
pub const PERIOD_TOLERANCE: f64 = 0.08;
const SEARCH_SPAN: f64 = 1.3;

/// Fringe visibility of a nonnegative profile near an expected period (in samples).
///
/// The period is located as an interior, prominent maximum of the detrended,
/// windowed spectrum within 30% of the expected value and must land within
/// [`PERIOD_TOLERANCE`] of it; otherwise the visibility is 0 and `peak_found`
/// is false. The value is twice the Hann-weighted first harmonic at that
/// period over the Hann-weighted mean. For a sinusoidal fringe under a slowly
/// varying envelope this is the classic `(max - min) / (max + min)`.
pub fn fringe_visibility(profile: &[f64], expected_period: f64) -> Result<Visibility> {
    check_profile(profile, expected_period)?;
    let Some(period) = locate_period(profile, expected_period) else {
        return Ok(Visibility::none(expected_period));
    };
    if (period / expected_period - 1.0).abs() > PERIOD_TOLERANCE {
        return Ok(Visibility::none(expected_period));
    }
    Ok(Visibility {
        value: demodulate(profile, period),
        period,
        peak_found: true,
    })
}

/// Modulation depth at a known period, without the spectral search or its
/// gate. Suited to ensemble-averaged profiles where the fringe period follows
/// from the geometry; noise contributes a small positive bias.
pub fn fringe_visibility_at(profile: &[f64], period: f64) -> Result<f64> {
    check_profile(profile, period)?;
    Ok(demodulate(profile, period))
}

fn check_profile(profile: &[f64], expected_period: f64) -> Result<()> {
    if !(expected_period.is_finite() && expected_period > 1.0) {
        return Err(Error::param("expected_period", "must exceed one sample"));
    }
    if profile.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("profile"));
    }
    if profile.iter().any(|&v| v < 0.0) {
        return Err(Error::param("profile", "must be nonnegative"));
    }
    let len = profile.len();
    if (len as f64) < 3.0 * expected_period {
        return Err(Error::param(
            "profile",
            format!("{len} samples hold fewer than 3 periods of {expected_period}"),
        ));
    }
    Ok(())
}

fn demodulate(profile: &[f64], period: f64) -> f64 {
    let len = profile.len();
    let w = 2.0 * PI / period;
    let (mut harmonic, mut mean) = (Complex64::new(0.0, 0.0), 0.0);
    for (j, &p) in profile.iter().enumerate() {
        let h = 0.5 - 0.5 * (2.0 * PI * (j as f64 + 0.5) / len as f64).cos();
        harmonic += Complex64::from_polar(h * p, -w * j as f64);
        mean += h * p;
    }
    if mean > 0.0 {
        (2.0 * harmonic.norm() / mean).clamp(0.0, 1.0)
    } else {
        0.0
    }
}

fn side_windows(profile: &[f64], center: usize, period: f64, inner: f64, outer: f64) -> Result<(&[f64], &[f64])> {
    let lo = (inner * period).round() as usize;
    let hi = (outer * period).round() as usize;
    if lo >= hi || center < hi || center + hi >= profile.len() {
        return Err(Error::param(
            "profile",
            format!("side windows out to {hi} samples do not fit around sample {center}"),
        ));
    }
    Ok((&profile[center + lo..=center + hi], &profile[center - hi..=center - lo]))
}

/// Visibility averaged over the two side windows `|x - center| in [inner, outer]`
/// (in periods), skipping a bright central lobe. A side without a located
/// period counts as zero.
pub fn side_window_visibility(
    profile: &[f64],
    center: usize,
    expected_period: f64,
    inner: f64,
    outer: f64,
) -> Result<Visibility> {
    let (right, left) = side_windows(profile, center, expected_period, inner, outer)?;
    let a = fringe_visibility(right, expected_period)?;
    let b = fringe_visibility(left, expected_period)?;
    let found = [a, b].iter().filter(|v| v.peak_found).count();
    Ok(Visibility {
        value: 0.5 * (a.value + b.value),
        period: if found > 0 {
            [a, b]
                .iter()
                .filter(|v| v.peak_found)
                .map(|v| v.period)
                .sum::<f64>()
                / found as f64
        } else {
            expected_period
        },
        peak_found: found == 2,
    })
}

/// [`fringe_visibility_at`] averaged over the two side windows.
pub fn side_window_visibility_at(profile: &[f64], center: usize, period: f64, inner: f64, outer: f64) -> Result<f64> {
    let (right, left) = side_windows(profile, center, period, inner, outer)?;
    Ok(0.5 * (fringe_visibility_at(right, period)? + fringe_visibility_at(left, period)?))
}

/// Default side windows for far-field patterns with an undiffracted central lobe.
pub const SIDE_WINDOW_INNER: f64 = 0.75;
pub const SIDE_WINDOW_OUTER: f64 = 5.0;

fn locate_period(profile: &[f64], expected: f64) -> Option<f64> {
    let len = profile.len();
    // High-pass: remove the envelope (smoothed over half a period) so a
    // decaying diffraction envelope does not bury the fringe peak.
    let trend = gaussian_smooth_real(profile, 0.5 * expected);
    let hann: Vec<f64> = (0..len)
        .map(|j| 0.5 - 0.5 * (2.0 * PI * (j as f64 + 0.5) / len as f64).cos())
        .collect();
    let centered: Vec<f64> = profile
        .iter()
        .zip(&trend)
        .zip(&hann)
        .map(|((p, t), h)| (p - t) * h)
        .collect();
    let scale: f64 = centered.iter().map(|v| v.abs()).sum();
    if scale <= 1e-300 {
        return None;
    }
    let power = |f: f64| -> f64 {
        let mut s = Complex64::new(0.0, 0.0);
        for (j, &v) in centered.iter().enumerate() {
            s += Complex64::from_polar(v, -2.0 * PI * f * j as f64);
        }
        s.norm_sqr()
    };
    let f0 = 1.0 / expected;
    let step = 1.0 / (16.0 * len as f64);
    let (f_lo, f_hi) = (f0 / SEARCH_SPAN, f0 * SEARCH_SPAN);
    let count = ((f_hi - f_lo) / step).ceil() as usize + 1;
    let spectrum: Vec<(f64, f64)> = (0..count)
        .map(|i| {
            let f = f_lo + i as f64 * step;
            (f, power(f))
        })
        .collect();
    let (best, &(f_peak, p_peak)) = spectrum
        .iter()
        .enumerate()
        .max_by(|a, b| a.1 .1.total_cmp(&b.1 .1))?;
    if best == 0 || best + 1 == spectrum.len() || p_peak <= 0.0 {
        return None;
    }
    // Prominence: the peak must stand well above the spectral floor between
    // a third of the expected frequency and the peak.
    let floor_from = f0 / 3.0;
    let floor_count = ((f_peak - floor_from) / step).ceil() as usize;
    let floor = (0..floor_count)
        .map(|i| power(floor_from + i as f64 * step))
        .fold(f64::INFINITY, f64::min);
    if !(p_peak >= 2.0 * floor) {
        return None;
    }
    Some(1.0 / f_peak)
}

fn gaussian_kernel(sigma: f64, len: usize) -> Vec<f64> {
    let half = ((4.0 * sigma).ceil() as usize).min(len.saturating_sub(1));
    (0..=2 * half)
        .map(|k| {
            let d = k as f64 - half as f64;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect()
}

/// Edge-normalized Gaussian smoothing (weights renormalized where the kernel
/// overhangs the profile).
fn gaussian_smooth_real(v: &[f64], sigma: f64) -> Vec<f64> {
    let k = gaussian_kernel(sigma, v.len());
    let half = k.len() / 2;
    (0..v.len())
        .map(|j| {
            let (mut s, mut w) = (0.0, 0.0);
            for (t, &kw) in k.iter().enumerate() {
                let idx = j as isize + t as isize - half as isize;
                if idx >= 0 && (idx as usize) < v.len() {
                    s += kw * v[idx as usize];
                    w += kw;
                }
            }
            s / w
        })
        .collect()
}

/// Ratio of the second to the first singular value (0 for a rank-1 map).
pub fn rank_ratio(map: &CorrelationMap) -> f64 {
    let mut s: Vec<f64> = map.to_matrix().singular_values().iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    if s.len() < 2 || s[0] <= 0.0 {
        return 0.0;
    }
    s[1] / s[0]
}

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot / (na * nb)
}

/// Root-mean-square difference of two profiles after each is divided by its maximum.
pub fn nrms(a: &[f64], b: &[f64]) -> f64 {
    let ma = a.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mb = b.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sa = if ma > 0.0 { 1.0 / ma } else { 1.0 };
    let sb = if mb > 0.0 { 1.0 / mb } else { 1.0 };
    let ss = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x * sa - y * sb).powi(2))
        .collect::<CompensatedSum>()
        .value();
    (ss / a.len().max(1) as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn g(n: usize) -> Grid {
        Grid::one_d(n, 1.0).unwrap()
    }

    #[test]
    fn single_frame_outer_product() {
        let mut acc = CorrelationAccumulator::new(Grid::one_d(8, 1.0).unwrap(), Grid::one_d(8, 1.0).unwrap()).unwrap();
        let mut a = vec![0.0; 8];
        let mut b = vec![0.0; 8];
        a[0] = 1.0;
        b[1] = 1.0;
        acc.accumulate_batch(&a, &b, 1).unwrap();
        let (s12, _, _) = acc.sums();
        assert_eq!(s12[1], 1.0);
        assert_eq!(s12.iter().sum::<f64>(), 1.0);
    }

    #[test]
    fn finalize_needs_two_frames() {
        let mut acc = CorrelationAccumulator::new(g(8), g(8)).unwrap();
        acc.accumulate_batch(&[1.0; 8], &[1.0; 8], 1).unwrap();
        assert!(matches!(acc.finalize(), Err(Error::InsufficientFrames { .. })));
    }

    #[test]
    fn identical_frames_give_zero() {
        let mut acc = CorrelationAccumulator::new(g(8), g(8)).unwrap();
        let v: Vec<f64> = (0..8).map(|i| i as f64 * 0.3).collect();
        for _ in 0..5 {
            acc.accumulate_batch(&v, &v, 1).unwrap();
        }
        assert!(acc.finalize().unwrap().g.iter().all(|&x| x.abs() < 1e-15));
    }

    #[test]
    fn cut_bounds_and_axes() {
        let m = CorrelationMap::new((0..64).map(|i| i as f64).collect(), g(8), g(8), 2).unwrap();
        assert_eq!(cut(&m, Axis::X2, 1).unwrap()[0], 8.0);
        assert_eq!(cut(&m, Axis::X1, 1).unwrap()[2], 17.0);
        assert!(matches!(cut(&m, Axis::X2, 8), Err(Error::OutOfRange { .. })));
    }

    #[test]
    fn visibility_of_cos2_is_one() {
        let p: Vec<f64> = (0..400).map(|j| (PI * j as f64 / 20.0).cos().powi(2)).collect();
        let v = fringe_visibility(&p, 20.0).unwrap();
        assert!(v.peak_found);
        assert!((v.value - 1.0).abs() < 1e-3, "{v:?}");
        assert!((v.period - 20.0).abs() < 0.1);
    }

    #[test]
    fn visibility_of_constant_is_zero() {
        let v = fringe_visibility(&[2.0; 200], 20.0).unwrap();
        assert!(!v.peak_found);
        assert_eq!(v.value, 0.0);
    }

    #[test]
    fn visibility_of_partial_modulation() {
        let p: Vec<f64> = (0..400)
            .map(|j| 1.0 + 0.4 * (2.0 * PI * j as f64 / 25.0).cos())
            .collect();
        let v = fringe_visibility(&p, 25.0).unwrap();
        assert!((v.value - 0.4).abs() < 2e-3, "{v:?}");
    }

    #[test]
    fn visibility_rejects_bad_profiles() {
        assert!(fringe_visibility(&[1.0; 50], 20.0).is_err());
        let mut p = vec![1.0; 100];
        p[3] = -0.1;
        assert!(fringe_visibility(&p, 20.0).is_err());
    }

    #[test]
    fn visibility_wrong_period_not_found() {
        let p: Vec<f64> = (0..600).map(|j| (PI * j as f64 / 20.0).cos().powi(2)).collect();
        assert!(!fringe_visibility(&p, 30.0).unwrap().peak_found);
    }

    #[test]
    fn rank_ratio_of_outer_product() {
        let u: Vec<f64> = (0..16).map(|i| 1.0 + i as f64).collect();
        let v: Vec<f64> = (0..16).map(|i| (i as f64 * 0.3).cos() + 2.0).collect();
        let m = CorrelationMap::new(
            u.iter().flat_map(|a| v.iter().map(move |b| a * b)).collect(),
            g(16),
            g(16),
            0,
        )
        .unwrap();
        assert!(rank_ratio(&m) < 1e-12);
    }

    #[test]
    fn nrms_ignores_scale() {
        let a = [1.0, 2.0, 3.0, 4.0];
        let b: Vec<f64> = a.iter().map(|x| x * 7.0).collect();
        assert!(nrms(&a, &b) < 1e-15);
        assert!((cosine_similarity(&a, &b) - 1.0).abs() < 1e-15);
    }
}
