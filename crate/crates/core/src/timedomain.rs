//! Time-domain evolution of the two-excitation amplitudes (ee, es, se, ss) on a
//! periodic (z1, z2) grid.
//!
//! Each step is a Strang splitting: half an exact spectral shift of the photonic
//! components along their characteristics, one exact 4x4 exponential of the local
//! coupling at every node, and another half shift.

use num_complex::Complex64 as C64;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::grid::{gaussian_pulse, read_pair_csv, weighted_norm, write_pair_csv, Grid1D, Grid2D, PropagationReport};
use crate::linalg::{self, Mat, Mat2, Mat4, Vector};
use crate::pair::PairModel;

const I: C64 = C64::new(0.0, 1.0);
const ZERO: C64 = C64::new(0.0, 0.0);

pub const EE: usize = 0;
pub const ES: usize = 1;
pub const SE: usize = 2;
pub const SS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Geometry {
    /// Photon 1 moves towards +z, photon 2 towards -z.
    Counter,
    /// Both photons move towards +z.
    Co,
}

impl std::str::FromStr for Geometry {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "counter" => Ok(Geometry::Counter),
            "co" => Ok(Geometry::Co),
            _ => Err(Error::Validation(vec![format!("unknown geometry '{s}' (expected counter or co)")])),
        }
    }
}

/// Transport velocities and local couplings of the four amplitudes:
/// (d_t + u1 d_z1 + u2 d_z2) x = A(V(z1 - z2)) x.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoefficientSet {
    pub geometry: Geometry,
    /// (u1, u2) for ee, es, se, ss.
    pub velocities: [(f64, f64); 4],
    pub g2n: f64,
    /// g sqrt(n) Omega.
    pub coupling: f64,
    pub omega2: f64,
    pub big_gamma: C64,
}

impl CoefficientSet {
    /// A(V) = -(1/Gamma) [[2a, b, b, 0], [b, a+w, 0, b], [b, 0, a+w, b], [0, b, b, 2w]] - i V e_ss.
    pub fn local_matrix(&self, v: f64) -> Mat4 {
        let (a, b, w) = (self.g2n, self.coupling, self.omega2);
        let k = [[2.0 * a, b, b, 0.0], [b, a + w, 0.0, b], [b, 0.0, a + w, b], [0.0, b, b, 2.0 * w]];
        let mut m = [[ZERO; 4]; 4];
        for i in 0..4 {
            for j in 0..4 {
                m[i][j] = -k[i][j] / self.big_gamma;
            }
        }
        m[SS][SS] -= I * v;
        m
    }
}

pub fn derive_equations(geometry: Geometry, model: &PairModel) -> CoefficientSet {
    let c = model.params.light_speed;
    let velocities = match geometry {
        Geometry::Counter => [(c, -c), (c, 0.0), (0.0, -c), (0.0, 0.0)],
        Geometry::Co => [(c, c), (c, 0.0), (0.0, c), (0.0, 0.0)],
    };
    CoefficientSet {
        geometry,
        velocities,
        g2n: model.derived.g2n,
        coupling: model.derived.g2n.sqrt() * model.params.omega,
        omega2: model.params.omega * model.params.omega,
        big_gamma: model.derived.big_gamma,
    }
}

/// Fourier transform in time, elimination of the static ss amplitude and es = se,
/// along r = z1 - z2 (counter) or R = (z1 + z2)/2 (co). Returns the 2x2 matrix on
/// (ee, es+) normalized like c d_r v = M v (counter) and c d_R v = 2 M v (co).
pub fn reduce_to_pair(coeffs: &CoefficientSet, v: f64, omega: f64, light_speed: f64) -> Result<Mat2> {
    let a = coeffs.local_matrix(v);
    let along: Vec<f64> = coeffs
        .velocities
        .iter()
        .map(|&(u1, u2)| match coeffs.geometry {
            Geometry::Counter => u1 - u2,
            Geometry::Co => 0.5 * (u1 + u2),
        })
        .collect();
    if along[SS] != 0.0 {
        return Err(Error::Validation(vec!["ss is not static along the reduction axis".into()]));
    }
    // 0 = i omega ss + sum_j A[ss][j] x_j
    let pivot = I * omega + a[SS][SS];
    let elim = |row: usize, col: usize| a[row][col] - a[row][SS] * a[SS][col] / pivot;
    let mut rows = [[ZERO; 2]; 2];
    for (out, row) in [(0usize, EE), (1, ES)] {
        let diag = if row == EE { I * omega } else { ZERO };
        let ee = elim(row, EE) + diag;
        let es = elim(row, ES) + elim(row, SE) + if row == ES { I * omega } else { ZERO };
        rows[out] = [ee / along[row], es / along[row]];
    }
    // the se row must coincide with the es row for the symmetric reduction
    let se_row = [elim(SE, EE) / along[SE], (elim(SE, ES) + elim(SE, SE) + I * omega) / along[SE]];
    if (se_row[0] - rows[1][0]).norm() + (se_row[1] - rows[1][1]).norm() > 1e-9 * (rows[1][0].norm() + rows[1][1].norm()) {
        return Err(Error::Validation(vec!["es and se rows differ after symmetrization".into()]));
    }
    let scale = match coeffs.geometry {
        Geometry::Counter => light_speed,
        Geometry::Co => 0.5 * light_speed,
    };
    Ok([[rows[0][0] * scale, rows[0][1] * scale], [rows[1][0] * scale, rows[1][1] * scale]])
}

/// Four amplitudes on a shared periodic square grid, row-major with z1 the slow index.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoPhotonState {
    pub geometry: Geometry,
    pub grid: Grid2D,
    pub amps: [Vec<C64>; 4],
    pub time: f64,
}

impl TwoPhotonState {
    pub fn n(&self) -> usize {
        self.grid.z1.n_points
    }

    pub fn component_norms(&self) -> [f64; 4] {
        [0, 1, 2, 3].map(|c| weighted_norm(&self.grid, &self.amps[c]))
    }

    /// Total norm, summed per row and then over rows in fixed order.
    pub fn norm(&self) -> f64 {
        self.component_norms().iter().sum()
    }

    /// Sum over components of the integral conj(self) * other.
    pub fn inner(&self, other: &TwoPhotonState) -> C64 {
        let n = self.n();
        let w = self.grid.z1.dz * self.grid.z2.dz;
        let mut total = ZERO;
        for c in 0..4 {
            let rows: Vec<C64> = self.amps[c]
                .par_chunks(n)
                .zip(other.amps[c].par_chunks(n))
                .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x.conj() * y).sum::<C64>())
                .collect();
            total += rows.iter().sum::<C64>() * w;
        }
        total
    }

    pub fn is_finite(&self) -> bool {
        self.amps.iter().all(|a| a.iter().all(|v| v.re.is_finite() && v.im.is_finite()))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        write_pair_csv(f, &self.grid, [&self.amps[0], &self.amps[1], &self.amps[2], &self.amps[3]])
    }

    pub fn read_csv(path: &Path, grid: Grid2D, geometry: Geometry) -> Result<Self> {
        let f = std::io::BufReader::new(std::fs::File::open(path)?);
        let amps = read_pair_csv(f, &grid)?;
        Ok(TwoPhotonState { geometry, grid, amps, time: 0.0 })
    }

    /// Largest deviation from ee(z1,z2)=ee(z2,z1), ss likewise and es(z1,z2)=se(z2,z1),
    /// relative to the largest amplitude.
    pub fn exchange_asymmetry(&self) -> f64 {
        let n = self.n();
        let scale = self.amps.iter().flat_map(|a| a.iter()).map(|v| v.norm()).fold(0.0, f64::max).max(1e-300);
        let mut worst: f64 = 0.0;
        for i in 0..n {
            for j in 0..n {
                let (p, q) = (i * n + j, j * n + i);
                worst = worst
                    .max((self.amps[EE][p] - self.amps[EE][q]).norm())
                    .max((self.amps[SS][p] - self.amps[SS][q]).norm())
                    .max((self.amps[ES][p] - self.amps[SE][q]).norm());
            }
        }
        worst / scale
    }
}

/// Signed minimal-image separation of diagonal index k on a ring of n nodes.
fn ring_offset(k: usize, n: usize) -> f64 {
    if k <= n / 2 {
        k as f64
    } else {
        k as f64 - n as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PulseSpec {
    pub center: f64,
    pub sigma: f64,
    pub carrier: f64,
}

/// Product of two single-photon envelopes dressed as dark-state polaritons.
pub fn initialize_dark(grid: Grid2D, p1: PulseSpec, p2: PulseSpec, model: &PairModel, geometry: Geometry) -> Result<TwoPhotonState> {
    check_grid(&grid)?;
    let f1 = gaussian_pulse(grid.z1, p1.center, p1.sigma, p1.carrier)?;
    let f2 = gaussian_pulse(grid.z2, p2.center, p2.sigma, p2.carrier)?;
    let n = grid.z1.n_points;
    let alpha = model.derived.g2n.sqrt() / model.params.omega;
    let mut ee = vec![ZERO; n * n];
    for i in 0..n {
        for j in 0..n {
            ee[i * n + j] = f1.values[i] * f2.values[j];
        }
    }
    let es: Vec<C64> = ee.iter().map(|v| -alpha * v).collect();
    let ss: Vec<C64> = ee.iter().map(|v| alpha * alpha * v).collect();
    let mut state = TwoPhotonState { geometry, grid, amps: [ee, es.clone(), es, ss], time: 0.0 };
    let norm = state.norm();
    let s = 1.0 / norm.sqrt();
    state.amps.iter_mut().for_each(|a| a.iter_mut().for_each(|v| *v *= s));

    if geometry == Geometry::Counter {
        let band = 3.0 * model.derived.blockade_radius();
        let inside = band_fraction(&state, band);
        if inside > 1e-4 {
            return Err(Error::Support(format!(
                "{inside:.2e} of the initial norm lies within 3 blockade radii of z1 = z2"
            )));
        }
    }
    Ok(state)
}

/// Fraction of |ee|^2 with minimal-image |z1 - z2| < band.
pub fn band_fraction(state: &TwoPhotonState, band: f64) -> f64 {
    let n = state.n();
    let dz = state.grid.z1.dz;
    let (mut inside, mut total) = (0.0, 0.0);
    for i in 0..n {
        for j in 0..n {
            let p = state.amps[EE][i * n + j].norm_sqr();
            total += p;
            if ring_offset((i + n - j) % n, n).abs() * dz < band {
                inside += p;
            }
        }
    }
    inside / total
}

fn check_grid(grid: &Grid2D) -> Result<()> {
    if !grid.z1.periodic || !grid.z2.periodic {
        return Err(Error::Grid("time-domain grids must be periodic on both axes".into()));
    }
    if grid.z1.n_points != grid.z2.n_points || (grid.z1.dz - grid.z2.dz).abs() > 1e-12 * grid.z1.dz {
        return Err(Error::Grid("time-domain grids must be square with equal spacing".into()));
    }
    Ok(())
}

/// Square periodic grid of `n` nodes per axis starting at `z_min`.
pub fn ring_grid(z_min: f64, period: f64, n: usize) -> Result<Grid2D> {
    Ok(Grid2D::square(Grid1D::periodic(z_min, period, n)?))
}

fn transpose(src: &[C64], dst: &mut [C64], n: usize) {
    const B: usize = 32;
    dst.par_chunks_mut(n * B).enumerate().for_each(|(bi, block)| {
        let i0 = bi * B;
        let rows = block.len() / n;
        for j0 in (0..n).step_by(B) {
            for di in 0..rows {
                let i = i0 + di;
                for j in j0..(j0 + B).min(n) {
                    block[di * n + j] = src[j * n + i];
                }
            }
        }
    });
}

struct Shifter {
    n: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    k: Vec<f64>,
    buffer: Vec<C64>,
}

impl Shifter {
    fn new(axis: &Grid1D) -> Self {
        let mut planner = FftPlanner::new();
        let n = axis.n_points;
        Shifter { n, fwd: planner.plan_fft_forward(n), inv: planner.plan_fft_inverse(n), k: axis.wavenumbers(), buffer: vec![ZERO; n * n] }
    }

    fn phases(&self, shift: f64) -> Vec<C64> {
        let s = 1.0 / self.n as f64;
        self.k.iter().map(|k| C64::from_polar(s, -k * shift)).collect()
    }

    /// f(z2) -> f(z2 - shift) on every row.
    fn shift_rows(&self, data: &mut [C64], shift: f64) {
        let ph = self.phases(shift);
        let n = self.n;
        let (fwd, inv) = (&self.fwd, &self.inv);
        let scratch_len = fwd.get_inplace_scratch_len().max(inv.get_inplace_scratch_len());
        data.par_chunks_mut(n).for_each_init(
            || vec![ZERO; scratch_len],
            |scratch, row| {
                fwd.process_with_scratch(row, scratch);
                row.iter_mut().zip(&ph).for_each(|(x, p)| *x *= p);
                inv.process_with_scratch(row, scratch);
            },
        );
    }

    /// f(z1) -> f(z1 - shift) on every column.
    fn shift_cols(&mut self, data: &mut [C64], shift: f64) {
        let mut buf = std::mem::take(&mut self.buffer);
        transpose(data, &mut buf, self.n);
        self.shift_rows(&mut buf, shift);
        transpose(&buf, data, self.n);
        self.buffer = buf;
    }
}

/// Precomputed propagator for a fixed grid, geometry, model and time step.
pub struct Evolver {
    pub coeffs: CoefficientSet,
    pub grid: Grid2D,
    pub dt: f64,
    /// Local exponentials indexed by (i - j) mod n.
    local: Vec<Mat4>,
    shifter: Shifter,
}

impl Evolver {
    pub fn new(grid: Grid2D, geometry: Geometry, model: &PairModel, dt: f64) -> Result<Self> {
        check_grid(&grid)?;
        let c = model.params.light_speed;
        if !(dt > 0.0) || c * dt > grid.z1.dz * (1.0 + 1e-12) {
            return Err(Error::Resolution(format!("CFL violated: c dt = {:e} > dz = {:e}", c * dt, grid.z1.dz)));
        }
        let coeffs = derive_equations(geometry, model);
        let n = grid.z1.n_points;
        let dz = grid.z1.dz;
        let local = (0..n)
            .into_par_iter()
            .map(|k| {
                let v = model.potential.eval(ring_offset(k, n) * dz);
                linalg::expm_series(&linalg::scale(&coeffs.local_matrix(v), C64::new(dt, 0.0)))
            })
            .collect();
        Ok(Evolver { coeffs, grid, dt, local, shifter: Shifter::new(&grid.z1) })
    }

    /// Shifts each photonic component by its velocity times `tau`.
    fn advect(&mut self, state: &mut TwoPhotonState, tau: f64) {
        for comp in 0..4 {
            let (u1, u2) = self.coeffs.velocities[comp];
            if u2 != 0.0 {
                self.shifter.shift_rows(&mut state.amps[comp], u2 * tau);
            }
            if u1 != 0.0 {
                let mut data = std::mem::take(&mut state.amps[comp]);
                self.shifter.shift_cols(&mut data, u1 * tau);
                state.amps[comp] = data;
            }
        }
    }

    fn couple(&self, state: &mut TwoPhotonState) {
        let n = self.grid.z1.n_points;
        let local = &self.local;
        let [ee, es, se, ss] = &mut state.amps;
        ee.par_chunks_mut(n)
            .zip(es.par_chunks_mut(n))
            .zip(se.par_chunks_mut(n).zip(ss.par_chunks_mut(n)))
            .enumerate()
            .for_each(|(i, ((a, b), (c, d)))| {
                for j in 0..n {
                    let e = &local[(i + n - j) % n];
                    let x = [a[j], b[j], c[j], d[j]];
                    let y = linalg::matvec(e, &x);
                    a[j] = y[0];
                    b[j] = y[1];
                    c[j] = y[2];
                    d[j] = y[3];
                }
            });
    }

    /// One full Strang step.
    pub fn step(&mut self, state: &mut TwoPhotonState) {
        self.advect(state, 0.5 * self.dt);
        self.couple(state);
        self.advect(state, 0.5 * self.dt);
        state.time += self.dt;
    }

    /// `steps` Strang steps with the inner half-shifts merged. `observe` is called after
    /// every step whose index (1-based) is a multiple of `stride`, and after the last,
    /// with the synchronized state. The norm trace records every step.
    pub fn run<F>(&mut self, state: &mut TwoPhotonState, steps: usize, stride: usize, mut observe: F) -> Result<RunTrace>
    where
        F: FnMut(usize, &TwoPhotonState) -> Result<()>,
    {
        let mut trace = RunTrace { norms: Vec::with_capacity(steps + 1), max_increase: 0.0 };
        trace.norms.push(state.norm());
        if steps == 0 {
            return Ok(trace);
        }
        let half = 0.5 * self.dt;
        self.advect(state, half);
        for s in 1..=steps {
            self.couple(state);
            state.time += self.dt;
            // advection preserves the norm, so the mid-step value is the step's norm
            let norm = state.norm();
            if !norm.is_finite() {
                return Err(Error::Corruption(format!("non-finite norm after step {s} (t = {:e})", state.time)));
            }
            let prev = *trace.norms.last().unwrap();
            trace.max_increase = trace.max_increase.max((norm - prev) / prev);
            trace.norms.push(norm);
            let sync = s == steps || (stride > 0 && s % stride == 0);
            if sync {
                self.advect(state, half);
                observe(s, state)?;
                if s < steps {
                    self.advect(state, half);
                }
            } else {
                self.advect(state, self.dt);
            }
        }
        Ok(trace)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunTrace {
    /// Norm before the first step and after every step.
    pub norms: Vec<f64>,
    /// Largest relative one-step increase of the norm.
    pub max_increase: f64,
}

/// One full Strang step, building the propagator on the fly.
pub fn step(state: &mut TwoPhotonState, dt: f64, model: &PairModel) -> Result<()> {
    let mut ev = Evolver::new(state.grid, state.geometry, model, dt)?;
    ev.step(state);
    if !state.is_finite() {
        return Err(Error::Corruption(format!("non-finite amplitude at t = {:e}", state.time)));
    }
    Ok(())
}

/// Step matrix of the V = 0 scheme for one Fourier mode: half shift, coupling, half shift.
fn free_step_matrix(coeffs: &CoefficientSet, local: &Mat4, k1: f64, k2: f64, dt: f64) -> Mat4 {
    let mut d = [ZERO; 4];
    for (c, dc) in d.iter_mut().enumerate() {
        let (u1, u2) = coeffs.velocities[c];
        *dc = C64::from_polar(1.0, -(k1 * u1 + k2 * u2) * 0.5 * dt);
    }
    let mut m = *local;
    for i in 0..4 {
        for j in 0..4 {
            m[i][j] *= d[i] * d[j];
        }
    }
    m
}

fn mat_pow(m: &Mat4, mut e: usize) -> Mat4 {
    let mut result = linalg::identity::<4>();
    let mut base = *m;
    while e > 0 {
        if e & 1 == 1 {
            result = linalg::mul(&base, &result);
        }
        base = linalg::mul(&base, &base);
        e >>= 1;
    }
    result
}

fn fft2(data: &mut [C64], n: usize, inverse: bool) {
    let mut planner = FftPlanner::new();
    let plan = if inverse { planner.plan_fft_inverse(n) } else { planner.plan_fft_forward(n) };
    let mut buf = vec![ZERO; n * n];
    for _ in 0..2 {
        data.par_chunks_mut(n).for_each(|row| plan.process(row));
        transpose(data, &mut buf, n);
        data.copy_from_slice(&buf);
    }
    if inverse {
        let s = 1.0 / (n * n) as f64;
        data.iter_mut().for_each(|v| *v *= s);
    }
}

/// The interaction-free twin of `steps` Strang steps, evaluated mode by mode in Fourier
/// space with the same splitting and step.
pub fn free_reference(initial: &TwoPhotonState, model: &PairModel, dt: f64, steps: usize) -> Result<TwoPhotonState> {
    check_grid(&initial.grid)?;
    let coeffs = derive_equations(initial.geometry, model);
    let n = initial.n();
    let local = linalg::expm_series(&linalg::scale(&coeffs.local_matrix(0.0), C64::new(dt, 0.0)));
    let mut spec = initial.amps.clone();
    for a in spec.iter_mut() {
        fft2(a, n, false);
    }
    let k = initial.grid.z1.wavenumbers();
    let rows: Vec<Vec<[C64; 4]>> = (0..n)
        .into_par_iter()
        .map(|i| {
            (0..n)
                .map(|j| {
                    let p = i * n + j;
                    let x = [spec[0][p], spec[1][p], spec[2][p], spec[3][p]];
                    if x.iter().all(|v| v.norm() == 0.0) {
                        return x;
                    }
                    let s = mat_pow(&free_step_matrix(&coeffs, &local, k[i], k[j], dt), steps);
                    linalg::matvec(&s, &x)
                })
                .collect()
        })
        .collect();
    for (i, row) in rows.iter().enumerate() {
        for (j, x) in row.iter().enumerate() {
            for c in 0..4 {
                spec[c][i * n + j] = x[c];
            }
        }
    }
    for a in spec.iter_mut() {
        fft2(a, n, true);
    }
    Ok(TwoPhotonState { geometry: initial.geometry, grid: initial.grid, amps: spec, time: initial.time + steps as f64 * dt })
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitialCondition {
    DarkProductGaussian { pulse1: PulseSpec, pulse2: PulseSpec },
    CustomFile(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvolutionConfig {
    pub dt: f64,
    pub t_end: f64,
    /// Snapshot every this many steps; 0 keeps only the final state.
    pub snapshot_stride: usize,
    pub initial: InitialCondition,
    /// Optional directory for CSV snapshots.
    pub snapshot_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryPoint {
    pub step: usize,
    pub time: f64,
    pub norm: f64,
}

#[derive(Debug, Clone)]
pub struct EvolutionResult {
    pub initial: TwoPhotonState,
    pub state: TwoPhotonState,
    pub reference: TwoPhotonState,
    pub report: PropagationReport,
    pub steps: usize,
    pub dt: f64,
    pub trajectory: Vec<TrajectoryPoint>,
    pub norm_trace: RunTrace,
    pub warnings: Vec<String>,
}

impl EvolutionResult {
    /// Attenuation from the overlap with the reference.
    pub fn eta_overlap(&self) -> f64 {
        self.report.eta_overlap()
    }
}

/// Builds the initial state described by `cfg`.
pub fn initial_state(grid: Grid2D, cfg: &EvolutionConfig, model: &PairModel, geometry: Geometry) -> Result<TwoPhotonState> {
    match &cfg.initial {
        InitialCondition::DarkProductGaussian { pulse1, pulse2 } => initialize_dark(grid, *pulse1, *pulse2, model, geometry),
        InitialCondition::CustomFile(path) => TwoPhotonState::read_csv(path, grid, geometry),
    }
}

/// Overlap report of `out` against `reference` over all four amplitudes.
pub fn report_against(out: &TwoPhotonState, reference: &TwoPhotonState, speed: f64) -> Result<PropagationReport> {
    let delay = (circular_centroid(out) - circular_centroid(reference)) / speed;
    PropagationReport::from_overlap(reference.inner(out), reference.norm(), out.norm(), delay)
}

/// Mean z1 of |ee|^2 on the ring, via the first circular moment.
fn circular_centroid(state: &TwoPhotonState) -> f64 {
    let n = state.n();
    let g = state.grid.z1;
    let p = g.extent();
    let mut m = ZERO;
    for i in 0..n {
        let w: f64 = state.amps[EE][i * n..(i + 1) * n].iter().map(|v| v.norm_sqr()).sum();
        m += w * C64::from_polar(1.0, 2.0 * std::f64::consts::PI * (g.node(i) - g.z_min) / p);
    }
    g.z_min + m.arg().rem_euclid(2.0 * std::f64::consts::PI) * p / (2.0 * std::f64::consts::PI)
}

pub fn evolve(grid: Grid2D, geometry: Geometry, cfg: &EvolutionConfig, model: &PairModel) -> Result<EvolutionResult> {
    let initial = initial_state(grid, cfg, model, geometry)?;
    evolve_from(initial, cfg, model)
}

pub fn evolve_from(initial: TwoPhotonState, cfg: &EvolutionConfig, model: &PairModel) -> Result<EvolutionResult> {
    if !(cfg.t_end >= 0.0) || !(cfg.dt > 0.0) {
        return Err(Error::Validation(vec![format!("need dt > 0 and t_end >= 0 (dt = {}, t_end = {})", cfg.dt, cfg.t_end)]));
    }
    let steps = (cfg.t_end / cfg.dt - 1e-9).ceil().max(0.0) as usize;
    let dt = if steps > 0 { cfg.t_end / steps as f64 } else { cfg.dt };
    let mut warnings = Vec::new();
    let rate = model.derived.g2n / model.derived.big_gamma.norm();
    if dt > 0.1 / rate {
        warnings.push(format!("dt = {dt:.3e} exceeds 0.1 of the coupling time {:.3e}; local exponentials are exact", 1.0 / rate));
    }
    let mut ev = Evolver::new(initial.grid, initial.geometry, model, dt)?;
    let mut state = initial.clone();
    let mut trajectory = vec![TrajectoryPoint { step: 0, time: state.time, norm: state.norm() }];
    if let Some(dir) = &cfg.snapshot_dir {
        std::fs::create_dir_all(dir)?;
        state.write_csv(&dir.join("snapshot_00000.csv"))?;
    }
    let dir = cfg.snapshot_dir.clone();
    let result = ev.run(&mut state, steps, cfg.snapshot_stride, |s, st| {
        if !st.is_finite() {
            if let Some(d) = &dir {
                st.write_csv(&d.join("diagnostic.csv"))?;
            }
            return Err(Error::Corruption(format!("non-finite amplitude after step {s}")));
        }
        trajectory.push(TrajectoryPoint { step: s, time: st.time, norm: st.norm() });
        if let Some(d) = &dir {
            st.write_csv(&d.join(format!("snapshot_{s:05}.csv")))?;
        }
        Ok(())
    });
    let norm_trace = match result {
        Ok(t) => t,
        Err(e) => {
            if let Some(d) = &cfg.snapshot_dir {
                let _ = state.write_csv(&d.join("diagnostic.csv"));
            }
            return Err(e);
        }
    };
    let reference = free_reference(&initial, model, dt, steps)?;
    let report = report_against(&state, &reference, model.derived.v_g)?;
    Ok(EvolutionResult { initial, state, reference, report, steps, dt, trajectory, norm_trace, warnings })
}

/// Ratio es+/ee at nodes with |z1 - z2| > `min_sep` where |ee| exceeds `floor` of its
/// peak; returns the worst relative deviation from -g sqrt(n)/Omega.
pub fn dark_ratio_deviation(state: &TwoPhotonState, model: &PairModel, min_sep: f64, floor: f64) -> f64 {
    let n = state.n();
    let dz = state.grid.z1.dz;
    let want = -model.derived.g2n.sqrt() / model.params.omega;
    let peak = state.amps[EE].iter().map(|v| v.norm()).fold(0.0, f64::max);
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            if ring_offset((i + n - j) % n, n).abs() * dz <= min_sep {
                continue;
            }
            let p = i * n + j;
            let ee = state.amps[EE][p];
            if ee.norm() < floor * peak {
                continue;
            }
            let esp = 0.5 * (state.amps[ES][p] + state.amps[SE][p]);
            worst = worst.max((esp / ee / want - 1.0).norm());
        }
    }
    worst
}

/// Pair density along r: P(r) = sum over the diagonal r = const of |ee|^2 dz.
pub fn diagonal_density(state: &TwoPhotonState) -> Vec<(f64, f64)> {
    let n = state.n();
    let dz = state.grid.z1.dz;
    let mut p = vec![0.0; n];
    for i in 0..n {
        for j in 0..n {
            p[(i + n - j) % n] += state.amps[EE][i * n + j].norm_sqr() * dz;
        }
    }
    let mut out: Vec<(f64, f64)> = (0..n).map(|k| (ring_offset(k, n) * dz, p[k])).collect();
    out.sort_by(|a, b| a.0.total_cmp(&b.0));
    out
}

/// Pair correlation g(r) of the photonic amplitude, relative to `reference` (or the
/// product of the state's own marginals when none is given) and normalized to its
/// plateau over `plateau` = (r_min, r_max).
pub fn pair_correlation(state: &TwoPhotonState, reference: Option<&TwoPhotonState>, plateau: (f64, f64)) -> Result<Vec<(f64, f64)>> {
    let num = diagonal_density(state);
    let den = match reference {
        Some(r) => diagonal_density(r),
        None => uncorrelated_density(state),
    };
    let peak = den.iter().map(|x| x.1).fold(0.0, f64::max);
    let mut g: Vec<(f64, f64)> = num.iter().zip(&den).map(|(a, b)| (a.0, if b.1 > 1e-12 * peak { a.1 / b.1 } else { f64::NAN })).collect();
    let (mut s, mut w) = (0.0, 0.0);
    for ((r, gv), (_, d)) in g.iter().zip(&den) {
        if r.abs() >= plateau.0 && r.abs() <= plateau.1 && gv.is_finite() {
            s += gv * d;
            w += d;
        }
    }
    if !(w > 1e-12 * peak) {
        return Err(Error::Support("pair-correlation plateau is below the noise floor".into()));
    }
    let level = s / w;
    g.iter_mut().for_each(|x| x.1 /= level);
    Ok(g)
}

fn uncorrelated_density(state: &TwoPhotonState) -> Vec<(f64, f64)> {
    let n = state.n();
    let dz = state.grid.z1.dz;
    let mut m1 = vec![0.0; n];
    let mut m2 = vec![0.0; n];
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            let p = state.amps[EE][i * n + j].norm_sqr() * dz * dz;
            m1[i] += p;
            m2[j] += p;
            total += p;
        }
    }
    let mut out = vec![0.0; n];
    for i in 0..n {
        for j in 0..n {
            out[(i + n - j) % n] += m1[i] * m2[j] / total / dz;
        }
    }
    let mut v: Vec<(f64, f64)> = (0..n).map(|k| (ring_offset(k, n) * dz, out[k])).collect();
    v.sort_by(|a, b| a.0.total_cmp(&b.0));
    v
}

/// Smallest |r| at which g crosses `level`, averaged over both sides and linearly
/// interpolated.
pub fn dip_half_width(g: &[(f64, f64)], level: f64) -> Option<f64> {
    let zero = g.iter().position(|x| x.0 == 0.0)?;
    let side = |dir: isize| -> Option<f64> {
        let mut k = zero as isize;
        loop {
            let next = k + dir;
            if next < 0 || next as usize >= g.len() {
                return None;
            }
            let (a, b) = (g[k as usize], g[next as usize]);
            if a.1 < level && b.1 >= level {
                return Some(a.0.abs() + (level - a.1) / (b.1 - a.1) * (b.0.abs() - a.0.abs()));
            }
            k = next;
        }
    };
    Some(0.5 * (side(1)? + side(-1)?))
}

/// Frequency of the dark branch of the V = 0 four-amplitude system for Fourier mode
/// (k1, k2). Without interaction the generator is a sum of two single-polariton 2x2
/// generators, so the branch is the sum of their least-damped eigenvalues.
pub fn dark_frequency(coeffs: &CoefficientSet, model: &PairModel, k1: f64, k2: f64) -> Option<C64> {
    let _ = model;
    let g = -1.0 / coeffs.big_gamma;
    let branch = |k: f64, u: f64| {
        let m: Mat2 = [[g * coeffs.g2n - I * k * u, g * coeffs.coupling], [g * coeffs.coupling, g * coeffs.omega2]];
        linalg::eig2(&m)[0]
    };
    let lam = branch(k1, coeffs.velocities[EE].0) + branch(k2, coeffs.velocities[EE].1);
    lam.is_finite().then_some(I * lam)
}

/// Dark-to-dark transfer factor along r = z1 - z2 of a counter-propagating mode with
/// (complex) frequency `omega`, centre-of-mass wavenumber `k_total` (dependence
/// e^{i K R}, R = (z1 + z2)/2) and relative wavenumber near `k_rel`. The ss amplitude is eliminated; es and se stay distinct because
/// K detunes them in opposite directions. For K = 0 this is the 2x2 counter transfer.
/// `span` is integrated with steps of at most `fine` for |r| < 8 blockade radii and
/// `coarse` beyond.
pub fn mode_transfer(coeffs: &CoefficientSet, model: &PairModel, omega: C64, k_total: f64, k_rel: f64, span: (f64, f64), fine: f64, coarse: f64) -> Result<C64> {
    if coeffs.geometry != Geometry::Counter {
        return Err(Error::Validation(vec!["mode transfer is defined for the counter geometry".into()]));
    }
    let z = model.derived.blockade_radius();
    if fine > z / 16.0 * (1.0 + 1e-12) {
        return Err(Error::Resolution(format!("step {fine:e} exceeds z/16 = {:e}", z / 16.0)));
    }
    let generator = |v: f64| -> Mat<3> {
        let a = coeffs.local_matrix(v);
        let pivot = I * omega + a[SS][SS];
        let idx = [EE, ES, SE];
        let mut m = [[ZERO; 3]; 3];
        for (p, &row) in idx.iter().enumerate() {
            let (u1, u2) = coeffs.velocities[row];
            let along = u1 - u2;
            for (q, &col) in idx.iter().enumerate() {
                let mut x = a[row][col] - a[row][SS] * a[SS][col] / pivot;
                if p == q {
                    x += I * omega - I * 0.5 * (u1 + u2) * k_total;
                }
                m[p][q] = x / along;
            }
        }
        m
    };
    // piecewise-uniform steps, fine inside the core
    let (a, b) = span;
    let core = (-8.0 * z + model.potential.center, 8.0 * z + model.potential.center);
    let mut edges = vec![a];
    for e in [core.0, core.1] {
        if e > a && e < b {
            edges.push(e);
        }
    }
    edges.push(b);
    let mut t = linalg::identity::<3>();
    for w in edges.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        let inside = lo >= core.0 - 1e-15 && hi <= core.1 + 1e-15;
        let h_max = if inside { fine } else { coarse.max(fine) };
        let n = ((hi - lo) / h_max).ceil().max(1.0) as usize;
        let h = (hi - lo) / n as f64;
        for k in 0..n {
            let r = lo + (k as f64 + 0.5) * h;
            let v = model.potential.eval(r);
            t = linalg::mul(&linalg::expm_series(&linalg::scale(&generator(v), C64::new(h, 0.0))), &t);
        }
    }
    let g0 = generator(0.0);
    let scale = linalg::norm1(&g0).max(1e-300);
    let target = I * k_rel;
    let mut best: Option<(C64, Vector<3>)> = None;
    let transpose = |m: &Mat<3>| {
        let mut o = *m;
        for i in 0..3 {
            for j in 0..3 {
                o[i][j] = m[j][i];
            }
        }
        o
    };
    for guess in linalg::eig3_estimates(&g0) {
        if let Some((lam, v)) = linalg::eig_near(&g0, guess + 1e-9 * scale, 60) {
            if best.map_or(true, |(l, _)| (lam - target).norm() < (l - target).norm()) {
                best = Some((lam, v));
            }
        }
    }
    let (lam, vr) = best.ok_or_else(|| Error::Resolution("dark r-mode not found".into()))?;
    let growth = linalg::eig3_estimates(&g0).iter().map(|l| (l.re - lam.re) * (b - a)).fold(f64::MIN, f64::max);
    if growth > 30.0 {
        return Err(Error::Resolution(format!("an r-mode grows by e^{growth:.0} over the span relative to the dark mode")));
    }
    let (_, vl) = linalg::eig_near(&transpose(&g0), lam + 1e-9 * scale, 60).ok_or_else(|| Error::Resolution("left dark r-mode not found".into()))?;
    let tv = linalg::matvec(&t, &vr);
    let dot = |x: &Vector<3>, y: &Vector<3>| x.iter().zip(y).map(|(p, q)| p * q).sum::<C64>();
    let dark_out = dot(&vl, &tv) / dot(&vl, &vr);
    Ok(dark_out * (-lam * (b - a)).exp())
}

/// Frequency-domain prediction for a counter-propagating state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CounterPrediction {
    /// Mode-power-weighted mean of the transfer factors: predicted <ref|out>/<ref|ref>.
    pub overlap: C64,
    /// Predicted N_out / N_ref.
    pub norm_ratio: f64,
}

impl CounterPrediction {
    pub fn phase(&self) -> f64 {
        self.overlap.arg()
    }

    /// Norm-level loss, the counterpart of the evolution report's eta.
    pub fn eta(&self) -> f64 {
        -0.5 * self.norm_ratio.ln()
    }

    /// Overlap-level loss, the counterpart of `EvolutionResult::eta_overlap`.
    pub fn eta_overlap(&self) -> f64 {
        -self.overlap.norm().ln()
    }
}

/// Each Fourier mode (k1, k2) of the free twin `reference` is scattered by its own dark
/// transfer at the dark-branch frequency and K = k1 + k2. With `ignore_total` the K = 0
/// transfer is used instead. Modes whose r-integration is unstable are skipped; it is
/// an error if they carry more than 1e-5 of the power.
pub fn predicted_counter_overlap(reference: &TwoPhotonState, model: &PairModel, ignore_total: bool) -> Result<CounterPrediction> {
    let n = reference.n();
    let mut power = vec![0.0; n * n];
    for c in 0..4 {
        let mut spec = reference.amps[c].clone();
        fft2(&mut spec, n, false);
        power.iter_mut().zip(&spec).for_each(|(p, v)| *p += v.norm_sqr());
    }
    let k = reference.grid.z1.wavenumbers();
    let coeffs = derive_equations(Geometry::Counter, model);
    let peak = power.iter().cloned().fold(0.0, f64::max);
    let z = model.derived.blockade_radius();
    let half = 0.5 * reference.grid.z1.extent();
    let span = (model.potential.center - half, model.potential.center + half);
    let modes: Vec<(usize, usize)> = (0..n * n).filter(|&p| power[p] >= 1e-10 * peak).map(|p| (p / n, p % n)).collect();
    let terms: Vec<Result<(f64, Option<C64>)>> = modes
        .par_iter()
        .map(|&(i, j)| {
            let w = power[i * n + j];
            let omega = dark_frequency(&coeffs, model, k[i], k[j])
                .ok_or_else(|| Error::Resolution("dark-branch frequency is not finite".into()))?;
            let (omega, kt) = if ignore_total { (C64::new(omega.re, 0.0), 0.0) } else { (omega, k[i] + k[j]) };
            match mode_transfer(&coeffs, model, omega, kt, 0.5 * (k[i] - k[j]), span, z / 16.0, z / 2.0) {
                Ok(f) => Ok((w, Some(f))),
                Err(Error::Resolution(_)) => Ok((w, None)),
                Err(e) => Err(e),
            }
        })
        .collect();
    let mut num = ZERO;
    let mut num2 = 0.0;
    let mut den = 0.0;
    let mut skipped = 0.0;
    for t in terms {
        match t? {
            (w, Some(f)) => {
                num += w * f;
                num2 += w * f.norm_sqr();
                den += w;
            }
            (w, None) => skipped += w,
        }
    }
    if skipped > 1e-5 * (den + skipped) {
        return Err(Error::Resolution(format!("{:.2e} of the mode power has an unstable transfer", skipped / (den + skipped))));
    }
    Ok(CounterPrediction { overlap: num / den, norm_ratio: num2 / den })
}

/// Local coupling exponential applied to one four-vector; exposed for oracle tests.
pub fn local_exponential(coeffs: &CoefficientSet, v: f64, dt: f64) -> Mat4 {
    linalg::expm_series(&linalg::scale(&coeffs.local_matrix(v), C64::new(dt, 0.0)))
}

pub fn apply4(m: &Mat4, x: &Vector<4>) -> Vector<4> {
    linalg::matvec(m, x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pair::m_at_potential;
    use crate::potential::PotentialProfile;
    use crate::units::PhysicalParams;
    use proptest::prelude::*;

    fn model(gamma: f64) -> PairModel {
        let p = PhysicalParams {
            gamma,
            hamiltonian_test: gamma == 0.0,
            delta: 20.0,
            omega: 10.0,
            g_sqrt_n: Some(30.0),
            medium_length: 1.0,
            ..Default::default()
        };
        let p = PhysicalParams { c6: p.c6_for_blockade_radius(0.02), ..p };
        PairModel::new(&p).unwrap()
    }

    fn small_state(m: &PairModel, geometry: Geometry, n: usize) -> TwoPhotonState {
        let grid = ring_grid(-0.5, 1.0, n).unwrap();
        let (c1, c2) = match geometry {
            Geometry::Counter => (-0.25, 0.25),
            Geometry::Co => (0.0, 0.0),
        };
        let p1 = PulseSpec { center: c1, sigma: 0.08, carrier: 0.0 };
        let p2 = PulseSpec { center: c2, sigma: 0.08, carrier: 0.0 };
        initialize_dark(grid, p1, p2, m, geometry).unwrap()
    }

    #[test]
    fn reduction_reproduces_pair_matrix() {
        let mut rng_state = 12345u64;
        let mut next = || {
            rng_state = rng_state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (rng_state >> 11) as f64 / (1u64 << 53) as f64
        };
        for gamma in [1.0, 0.0] {
            let m = model(gamma);
            for geometry in [Geometry::Counter, Geometry::Co] {
                let coeffs = derive_equations(geometry, &m);
                for _ in 0..5 {
                    let v = 50.0 * next() * m.params.omega.powi(2) / m.params.delta;
                    let w = 4.0 * (next() - 0.5);
                    let red = reduce_to_pair(&coeffs, v, w, m.params.light_speed).unwrap();
                    let full = m_at_potential(v, w, &m).unwrap();
                    let scale = linalg::norm1(&full);
                    assert!(linalg::max_abs_diff(&red, &full) < 1e-10 * scale, "{geometry:?} v={v} w={w}");
                }
            }
        }
    }

    #[test]
    fn dark_initial_state() {
        let m = model(1.0);
        let s = small_state(&m, Geometry::Counter, 64);
        assert!((s.norm() - 1.0).abs() < 1e-12);
        assert!(dark_ratio_deviation(&s, &m, 0.0, 0.0) < 1e-12);
        let ss_over_ee = s.amps[SS][100] / s.amps[EE][100];
        assert!((ss_over_ee.re - 9.0).abs() < 1e-12);
        // the dark vector is annihilated by the local coupling at V = 0
        let a = derive_equations(Geometry::Counter, &m).local_matrix(0.0);
        let x = [s.amps[0][100], s.amps[1][100], s.amps[2][100], s.amps[3][100]];
        let y = linalg::matvec(&a, &x);
        assert!(y.iter().all(|v| v.norm() < 1e-12 * x[3].norm()));
        // overlapping counter pulses are rejected
        let grid = ring_grid(-0.5, 1.0, 64).unwrap();
        let p = PulseSpec { center: 0.0, sigma: 0.08, carrier: 0.0 };
        assert!(matches!(initialize_dark(grid, p, p, &m, Geometry::Counter), Err(Error::Support(_))));
    }

    #[test]
    fn pure_advection_is_an_exact_shift() {
        let p = PhysicalParams { gamma: 1.0, omega: 1e-200, g_sqrt_n: Some(1e-200), c6: 0.0, ..Default::default() };
        let m = PairModel::new(&p).unwrap();
        let mut s = small_state(&model(1.0), Geometry::Counter, 64);
        let orig = s.clone();
        let dz = s.grid.z1.dz;
        let mut ev = Evolver::new(s.grid, Geometry::Counter, &m, dz).unwrap();
        for _ in 0..5 {
            ev.step(&mut s);
        }
        let n = 64;
        let mut worst: f64 = 0.0;
        for i in 0..n {
            for j in 0..n {
                // ee moves +5 nodes in z1 and -5 in z2; ss is static
                let src = ((i + n - 5) % n) * n + (j + 5) % n;
                worst = worst.max((s.amps[EE][i * n + j] - orig.amps[EE][src]).norm());
                worst = worst.max((s.amps[SS][i * n + j] - orig.amps[SS][i * n + j]).norm());
            }
        }
        assert!(worst < 1e-12, "{worst}");
    }

    #[test]
    fn local_exponential_matches_dense_ode() {
        let m = model(1.0);
        let coeffs = derive_equations(Geometry::Counter, &m);
        let v = 3.0 * m.params.omega.powi(2) / m.params.delta;
        let dt = 0.01;
        let e = local_exponential(&coeffs, v, dt);
        let a = coeffs.local_matrix(v);
        let x0 = [C64::new(1.0, 0.0), C64::new(-0.3, 0.2), C64::new(0.1, 0.0), C64::new(0.5, -0.5)];
        // classical RK4 with many substeps
        let n = 20000;
        let h = dt / n as f64;
        let f = |x: &Vector<4>| linalg::matvec(&a, x);
        let mut x = x0;
        let axpy = |x: &Vector<4>, k: &Vector<4>, s: f64| [0, 1, 2, 3].map(|i| x[i] + k[i] * s);
        for _ in 0..n {
            let k1 = f(&x);
            let k2 = f(&axpy(&x, &k1, h / 2.0));
            let k3 = f(&axpy(&x, &k2, h / 2.0));
            let k4 = f(&axpy(&x, &k3, h));
            x = [0, 1, 2, 3].map(|i| x[i] + (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]) * (h / 6.0));
        }
        let y = apply4(&e, &x0);
        assert!((0..4).all(|i| (x[i] - y[i]).norm() < 1e-8));
    }

    #[test]
    fn hamiltonian_limit_conserves_norm() {
        let m = model(0.0);
        let mut s = small_state(&m, Geometry::Counter, 64);
        let dt = s.grid.z1.dz / m.params.light_speed;
        let mut ev = Evolver::new(s.grid, Geometry::Counter, &m, dt).unwrap();
        let n0 = s.norm();
        let trace = ev.run(&mut s, 200, 0, |_, _| Ok(())).unwrap();
        let drift = trace.norms.iter().map(|x| (x - n0).abs()).fold(0.0, f64::max);
        assert!(drift < 1e-8 * (s.time.max(1.0)), "{drift}");
    }

    #[test]
    fn dissipative_norm_never_grows() {
        let m = model(1.0);
        let mut s = small_state(&m, Geometry::Counter, 64);
        let dt = s.grid.z1.dz / m.params.light_speed;
        let mut ev = Evolver::new(s.grid, Geometry::Counter, &m, dt).unwrap();
        let trace = ev.run(&mut s, 200, 0, |_, _| Ok(())).unwrap();
        assert!(trace.max_increase <= 1e-10, "{}", trace.max_increase);
        assert!(trace.norms.last().unwrap() < &trace.norms[0]);
    }

    #[test]
    fn co_geometry_keeps_exchange_symmetry() {
        let m = model(1.0);
        let mut s = small_state(&m, Geometry::Co, 64);
        let dt = s.grid.z1.dz / m.params.light_speed;
        let mut ev = Evolver::new(s.grid, Geometry::Co, &m, dt).unwrap();
        ev.run(&mut s, 100, 0, |_, _| Ok(())).unwrap();
        assert!(s.exchange_asymmetry() < 1e-8, "{}", s.exchange_asymmetry());
    }

    #[test]
    fn cfl_is_enforced() {
        let m = model(1.0);
        let g = ring_grid(-0.5, 1.0, 64).unwrap();
        assert!(matches!(Evolver::new(g, Geometry::Counter, &m, 2.0 * g.z1.dz), Err(Error::Resolution(_))));
        let line = Grid2D::square(Grid1D::new(-0.5, 0.5, 64).unwrap());
        assert!(Evolver::new(line, Geometry::Counter, &m, 1e-3).is_err());
    }

    #[test]
    fn spectral_twin_matches_stepping() {
        let m = model(1.0);
        let free = m.clone().with_potential(PotentialProfile::none(&m.params));
        let s0 = small_state(&m, Geometry::Counter, 32 * 2);
        let dt = s0.grid.z1.dz / m.params.light_speed;
        let mut s = s0.clone();
        let mut ev = Evolver::new(s.grid, Geometry::Counter, &free, dt).unwrap();
        ev.run(&mut s, 37, 5, |_, _| Ok(())).unwrap();
        let r = free_reference(&s0, &free, dt, 37).unwrap();
        let diff: f64 = (0..4).map(|c| s.amps[c].iter().zip(&r.amps[c]).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max)).fold(0.0, f64::max);
        assert!(diff < 1e-10, "{diff}");
        // merged half-steps equal repeated full steps
        let mut t = s0.clone();
        for _ in 0..37 {
            ev.step(&mut t);
        }
        let diff: f64 = (0..4).map(|c| s.amps[c].iter().zip(&t.amps[c]).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max)).fold(0.0, f64::max);
        assert!(diff < 1e-12, "{diff}");
    }

    #[test]
    fn free_pair_correlation_is_flat() {
        let m = model(1.0);
        let s = small_state(&m, Geometry::Co, 64);
        let g = pair_correlation(&s, None, (0.05, 0.2)).unwrap();
        for (r, v) in &g {
            if r.abs() < 0.3 {
                assert!((v - 1.0).abs() < 0.01, "r = {r}: {v}");
            }
        }
        let g = pair_correlation(&s, Some(&s), (0.05, 0.2)).unwrap();
        assert!(g.iter().filter(|x| x.1.is_finite()).all(|x| (x.1 - 1.0).abs() < 1e-12));
    }

    #[test]
    fn dip_width_readout() {
        let g: Vec<(f64, f64)> = (-50..=50).map(|k| {
            let r = k as f64 * 0.1;
            (r, 1.0 - (-(r / 2.0f64).powi(8)).exp())
        }).collect();
        let w = dip_half_width(&g, 0.5).unwrap();
        let want = 2.0 * 2f64.ln().powf(1.0 / 8.0);
        assert!((w - want).abs() < 0.02, "{w} {want}");
    }

    #[test]
    fn dark_frequency_is_linear_at_small_k() {
        let m = model(1.0);
        let coeffs = derive_equations(Geometry::Counter, &m);
        let k = 1e-3;
        let w = dark_frequency(&coeffs, &m, k, -k).unwrap();
        // exact polariton velocity, which v_g approximates for g sqrt(n) >> Omega
        let w2 = m.params.omega.powi(2);
        let v = m.params.light_speed * w2 / (w2 + m.derived.g2n);
        assert!((w.re / (2.0 * v * k) - 1.0).abs() < 1e-3, "{w}");
    }

    #[test]
    fn mode_transfer_reduces_to_pair_model() {
        let m = model(1.0);
        let coeffs = derive_equations(Geometry::Counter, &m);
        let z = m.derived.blockade_radius();
        for omega in [0.0, 0.3, -1.1] {
            let (span, step) = crate::pair::default_span(&m);
            let want = crate::pair::counter_transfer(omega, span, step, &m).unwrap().factor;
            let got = mode_transfer(&coeffs, &m, C64::new(omega, 0.0), 0.0, 0.0, (-40.0 * z, 40.0 * z), z / 16.0, z / 4.0).unwrap();
            assert!((got - want).norm() < 1e-6 * (1.0 - want).norm().max(1e-3), "{omega}: {got} {want}");
        }
        // without interaction the transfer is the identity for any K
        let free = m.clone().with_potential(PotentialProfile::none(&m.params));
        let c0 = derive_equations(Geometry::Counter, &free);
        let w = dark_frequency(&c0, &free, 40.0, -25.0).unwrap();
        let t = mode_transfer(&c0, &free, w, 15.0, 32.5, (-10.0 * z, 10.0 * z), z / 16.0, z / 2.0).unwrap();
        assert!((t - 1.0).norm() < 1e-9, "{t}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn local_exponential_is_contractive(v in 0.0f64..1e4, dt in 1e-4f64..1e-1) {
            let m = model(1.0);
            let e = local_exponential(&derive_equations(Geometry::Counter, &m), v, dt);
            let x = [C64::new(0.3, 0.1), C64::new(-1.0, 0.0), C64::new(0.2, 0.7), C64::new(0.0, -0.4)];
            let y = apply4(&e, &x);
            let nx: f64 = x.iter().map(|a| a.norm_sqr()).sum();
            let ny: f64 = y.iter().map(|a| a.norm_sqr()).sum();
            prop_assert!(ny <= nx * (1.0 + 1e-12));
        }
    }
}
