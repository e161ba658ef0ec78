//! Uniform grids, complex field containers, Fourier transforms and observable extraction.

use num_complex::Complex64 as C64;
use rustfft::FftPlanner;
use std::f64::consts::PI;
use std::io::{BufRead, Write};

use crate::config::fmt17;
use crate::error::{Error, Result};

pub const MIN_POINTS: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid1D {
    pub z_min: f64,
    pub z_max: f64,
    pub n_points: usize,
    pub dz: f64,
    /// Periodic axes exclude `z_max` (it coincides with `z_min`), so dz = extent / n.
    pub periodic: bool,
}

impl Grid1D {
    pub fn new(z_min: f64, z_max: f64, n_points: usize) -> Result<Self> {
        Self::check(z_min, z_max, n_points)?;
        Ok(Grid1D { z_min, z_max, n_points, dz: (z_max - z_min) / (n_points - 1) as f64, periodic: false })
    }

    pub fn periodic(z_min: f64, period: f64, n_points: usize) -> Result<Self> {
        Self::check(z_min, z_min + period, n_points)?;
        Ok(Grid1D { z_min, z_max: z_min + period, n_points, dz: period / n_points as f64, periodic: true })
    }

    fn check(z_min: f64, z_max: f64, n: usize) -> Result<()> {
        if n < MIN_POINTS {
            return Err(Error::Grid(format!("n_points = {n} < {MIN_POINTS}")));
        }
        if !(z_max > z_min) || !z_min.is_finite() || !z_max.is_finite() {
            return Err(Error::Grid(format!("empty or non-finite extent [{z_min}, {z_max}]")));
        }
        Ok(())
    }

    pub fn node(&self, i: usize) -> f64 {
        self.z_min + i as f64 * self.dz
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n_points).map(|i| self.node(i)).collect()
    }

    pub fn extent(&self) -> f64 {
        self.z_max - self.z_min
    }

    /// Trapezoidal weight of node i (the rectangle rule on periodic axes).
    pub fn weight(&self, i: usize) -> f64 {
        if !self.periodic && (i == 0 || i + 1 == self.n_points) {
            0.5 * self.dz
        } else {
            self.dz
        }
    }

    /// Angular wavenumbers (or frequencies) in FFT order.
    pub fn wavenumbers(&self) -> Vec<f64> {
        let n = self.n_points;
        let dk = 2.0 * PI / (n as f64 * self.dz);
        (0..n).map(|k| if k <= n / 2 { k as f64 * dk } else { (k as f64 - n as f64) * dk }).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid2D {
    pub z1: Grid1D,
    pub z2: Grid1D,
}

impl Grid2D {
    pub fn square(axis: Grid1D) -> Self {
        Grid2D { z1: axis, z2: axis }
    }

    pub fn len(&self) -> usize {
        self.z1.n_points * self.z2.n_points
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_symmetric(&self) -> bool {
        self.z1 == self.z2
    }
}

fn check_finite(values: &[C64], what: &str) -> Result<()> {
    if values.iter().all(|v| v.re.is_finite() && v.im.is_finite()) {
        Ok(())
    } else {
        Err(Error::Corruption(what.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComplexField1D {
    pub grid: Grid1D,
    pub values: Vec<C64>,
}

impl ComplexField1D {
    pub fn new(grid: Grid1D, values: Vec<C64>) -> Result<Self> {
        if values.len() != grid.n_points {
            return Err(Error::Grid(format!("{} values on a {}-point grid", values.len(), grid.n_points)));
        }
        check_finite(&values, "1D field")?;
        Ok(ComplexField1D { grid, values })
    }

    pub fn zeros(grid: Grid1D) -> Self {
        ComplexField1D { grid, values: vec![C64::new(0.0, 0.0); grid.n_points] }
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().enumerate().map(|(i, v)| self.grid.weight(i) * v.norm_sqr()).sum()
    }

    /// Integral of conj(self) * other.
    pub fn inner(&self, other: &ComplexField1D) -> C64 {
        self.values
            .iter()
            .zip(&other.values)
            .enumerate()
            .map(|(i, (a, b))| a.conj() * b * self.grid.weight(i))
            .sum()
    }

    /// Intensity-weighted mean coordinate.
    pub fn centroid(&self) -> f64 {
        let num: f64 = self.values.iter().enumerate().map(|(i, v)| self.grid.weight(i) * v.norm_sqr() * self.grid.node(i)).sum();
        num / self.norm()
    }

    pub fn second_moment(&self) -> f64 {
        let c = self.centroid();
        let num: f64 = self
            .values
            .iter()
            .enumerate()
            .map(|(i, v)| self.grid.weight(i) * v.norm_sqr() * (self.grid.node(i) - c).powi(2))
            .sum();
        num / self.norm()
    }

    pub fn scaled(&self, s: C64) -> Self {
        ComplexField1D { grid: self.grid, values: self.values.iter().map(|v| v * s).collect() }
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "z,re,im")?;
        for (i, v) in self.values.iter().enumerate() {
            writeln!(w, "{},{},{}", fmt17(self.grid.node(i)), fmt17(v.re), fmt17(v.im))?;
        }
        Ok(())
    }
}

/// A single complex amplitude on a [`Grid2D`], row-major with z1 the slow index.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexField2D {
    pub grid: Grid2D,
    pub values: Vec<C64>,
}

impl ComplexField2D {
    pub fn new(grid: Grid2D, values: Vec<C64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Grid(format!("{} values on a {}-point grid", values.len(), grid.len())));
        }
        check_finite(&values, "2D field")?;
        Ok(ComplexField2D { grid, values })
    }

    pub fn zeros(grid: Grid2D) -> Self {
        ComplexField2D { grid, values: vec![C64::new(0.0, 0.0); grid.len()] }
    }

    pub fn at(&self, i: usize, j: usize) -> C64 {
        self.values[i * self.grid.z2.n_points + j]
    }

    /// Per-row weighted sums, then a sequential sum: the result does not depend on
    /// how rows were distributed over threads.
    pub fn norm(&self) -> f64 {
        weighted_norm(&self.grid, &self.values)
    }
}

pub(crate) fn weighted_norm(grid: &Grid2D, values: &[C64]) -> f64 {
    let n2 = grid.z2.n_points;
    let mut total = 0.0;
    for (i, row) in values.chunks(n2).enumerate() {
        let mut s = 0.0;
        for (j, v) in row.iter().enumerate() {
            s += grid.z2.weight(j) * v.norm_sqr();
        }
        total += grid.z1.weight(i) * s;
    }
    total
}

/// Spectral representation with the time-signal convention
/// F(w) = (2 pi)^{-1/2} integral f(t) e^{+i w t} dt, so that f(t) is a superposition
/// of e^{-i w t} components.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralField {
    pub grid: Grid1D,
    /// Angular frequencies in FFT order.
    pub omega: Vec<f64>,
    pub values: Vec<C64>,
}

impl SpectralField {
    pub fn d_omega(&self) -> f64 {
        2.0 * PI / (self.grid.n_points as f64 * self.grid.dz)
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v.norm_sqr()).sum::<f64>() * self.d_omega()
    }

    /// Magnitude at the Nyquist bin relative to the peak.
    pub fn nyquist_ratio(&self) -> f64 {
        let peak = self.values.iter().map(|v| v.norm()).fold(0.0, f64::max);
        let n = self.values.len();
        let nyq = self.values[n / 2].norm().max(self.values[(n + 1) / 2].norm());
        if peak == 0.0 {
            0.0
        } else {
            nyq / peak
        }
    }
}

pub fn forward_transform(field: &ComplexField1D) -> Result<SpectralField> {
    check_finite(&field.values, "forward_transform input")?;
    let g = field.grid;
    let n = g.n_points;
    let mut buf = field.values.clone();
    FftPlanner::new().plan_fft_inverse(n).process(&mut buf);
    let omega = g.wavenumbers();
    let norm = g.dz / (2.0 * PI).sqrt();
    for (v, w) in buf.iter_mut().zip(&omega) {
        *v *= C64::from_polar(norm, w * g.z_min);
    }
    Ok(SpectralField { grid: g, omega, values: buf })
}

pub fn inverse_transform(spec: &SpectralField) -> Result<ComplexField1D> {
    check_finite(&spec.values, "inverse_transform input")?;
    let g = spec.grid;
    let n = g.n_points;
    let norm = spec.d_omega() / (2.0 * PI).sqrt();
    let mut buf: Vec<C64> = spec
        .values
        .iter()
        .zip(&spec.omega)
        .map(|(v, w)| v * C64::from_polar(norm, -w * g.z_min))
        .collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    ComplexField1D::new(g, buf)
}

/// Normalized Gaussian envelope with intensity standard deviation `sigma` and carrier
/// e^{-i carrier z}. On periodic grids the periodic images are summed.
pub fn gaussian_pulse(grid: Grid1D, center: f64, sigma: f64, carrier_detuning: f64) -> Result<ComplexField1D> {
    if !(sigma >= 4.0 * grid.dz) {
        return Err(Error::Resolution(format!("sigma = {sigma:e} < 4 dz = {:e}", 4.0 * grid.dz)));
    }
    let shape = |z: f64| (-(z - center).powi(2) / (4.0 * sigma * sigma)).exp();
    let values: Vec<C64> = grid
        .nodes()
        .into_iter()
        .map(|z| {
            let amp = if grid.periodic {
                let p = grid.extent();
                let images = (6.0 * sigma / p).ceil() as i64 + 1;
                (-images..=images).map(|m| shape(z + m as f64 * p)).sum()
            } else {
                shape(z)
            };
            C64::from_polar(amp, -carrier_detuning * z)
        })
        .collect();
    if !grid.periodic {
        let peak = values.iter().map(|v| v.norm()).fold(0.0, f64::max);
        let edge = values[0].norm().max(values[values.len() - 1].norm());
        if edge > 1e-8 * peak {
            return Err(Error::Support(format!("pulse clipped by grid: edge/peak = {:.2e}", edge / peak)));
        }
    }
    let f = ComplexField1D::new(grid, values)?;
    let n = f.norm();
    Ok(f.scaled(C64::new(n.sqrt().recip(), 0.0)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PropagationReport {
    /// arg of the overlap with the interaction-free reference.
    pub phase: f64,
    /// Amplitude attenuation exponent: intensity ratio e^{-2 eta}.
    pub eta: f64,
    pub group_delay: f64,
    pub overlap: C64,
    pub norm_in: f64,
    pub norm_out: f64,
}

impl PropagationReport {
    /// Report from overlap and norms; `norm_in` is the reference norm.
    pub fn from_overlap(overlap_raw: C64, norm_ref: f64, norm_out: f64, group_delay: f64) -> Result<Self> {
        if !(norm_ref > 1e-300) {
            return Err(Error::Grid(format!("reference norm {norm_ref:e} is too small")));
        }
        let overlap = overlap_raw / norm_ref;
        Ok(PropagationReport {
            phase: overlap.arg(),
            eta: -0.5 * (norm_out / norm_ref).ln(),
            group_delay,
            overlap,
            norm_in: norm_ref,
            norm_out,
        })
    }

    /// Attenuation from the reference overlap rather than from norms: only the part of
    /// the output that stays in the reference mode counts.
    pub fn eta_overlap(&self) -> f64 {
        -self.overlap.norm().ln()
    }
}

/// Phase, attenuation and delay of `out` relative to the interaction-free `reference`.
/// The centroid shift is divided by `speed` (1 when the grid axis is already time).
pub fn extract_report(out: &ComplexField1D, reference: &ComplexField1D, speed: f64) -> Result<PropagationReport> {
    if out.grid != reference.grid {
        return Err(Error::Grid("output and reference live on different grids".into()));
    }
    let nr = reference.norm();
    let no = out.norm();
    let delay = if nr > 1e-300 && no > 1e-300 { (out.centroid() - reference.centroid()) / speed } else { 0.0 };
    PropagationReport::from_overlap(reference.inner(out), nr, no, delay)
}

/// Four two-photon amplitudes on a shared grid, written as one CSV row per node.
pub fn write_pair_csv<W: Write>(mut w: W, grid: &Grid2D, amps: [&[C64]; 4]) -> Result<()> {
    writeln!(w, "z1,z2,re_ee,im_ee,re_es,im_es,re_se,im_se,re_ss,im_ss")?;
    let n2 = grid.z2.n_points;
    for i in 0..grid.z1.n_points {
        for j in 0..n2 {
            let k = i * n2 + j;
            write!(w, "{},{}", fmt17(grid.z1.node(i)), fmt17(grid.z2.node(j)))?;
            for a in amps {
                write!(w, ",{},{}", fmt17(a[k].re), fmt17(a[k].im))?;
            }
            writeln!(w)?;
        }
    }
    Ok(())
}

/// Reads the four amplitudes back; the grid must match row for row.
pub fn read_pair_csv<R: BufRead>(r: R, grid: &Grid2D) -> Result<[Vec<C64>; 4]> {
    let mut lines = r.lines();
    let header = lines.next().ok_or_else(|| Error::Io("empty snapshot".into()))??;
    if header.trim() != "z1,z2,re_ee,im_ee,re_es,im_es,re_se,im_se,re_ss,im_ss" {
        return Err(Error::Io(format!("unexpected header '{header}'")));
    }
    let mut out: [Vec<C64>; 4] = Default::default();
    let n2 = grid.z2.n_points;
    for (k, line) in lines.enumerate() {
        let line = line?;
        let cols: Vec<f64> = line
            .split(',')
            .map(|s| s.trim().parse::<f64>().map_err(|_| Error::Io(format!("row {}: bad number '{s}'", k + 1))))
            .collect::<Result<_>>()?;
        if cols.len() != 10 {
            return Err(Error::Io(format!("row {}: expected 10 columns", k + 1)));
        }
        let (i, j) = (k / n2, k % n2);
        if i >= grid.z1.n_points
            || (cols[0] - grid.z1.node(i)).abs() > 1e-9 * grid.z1.dz
            || (cols[1] - grid.z2.node(j)).abs() > 1e-9 * grid.z2.dz
        {
            return Err(Error::Io(format!("row {}: coordinates do not match the grid", k + 1)));
        }
        for c in 0..4 {
            out[c].push(C64::new(cols[2 + 2 * c], cols[3 + 2 * c]));
        }
    }
    if out[0].len() != grid.len() {
        return Err(Error::Io(format!("snapshot has {} rows, grid has {}", out[0].len(), grid.len())));
    }
    Ok(out)
}
