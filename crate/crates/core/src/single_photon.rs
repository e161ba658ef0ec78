//! One photon crossing a medium that holds a single stationary Rydberg excitation.

use num_complex::Complex64 as C64;
use rayon::prelude::*;
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::grid::{extract_report, forward_transform, gaussian_pulse, inverse_transform, ComplexField1D, Grid1D, PropagationReport, SpectralField};
use crate::potential::{PotentialKind, PotentialProfile};
use crate::units::{DerivedParams, PhysicalParams};

const I: C64 = C64::new(0.0, 1.0);

/// Spatial quadrature settings for the transfer-function integral.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quadrature {
    /// Trapezoid nodes per blockade radius.
    pub points_per_radius: usize,
    /// Half-width of the resolved window around the excitation, in blockade radii.
    /// Beyond it the integrand is replaced by its second-order expansion in V.
    pub window_radii: f64,
}

impl Default for Quadrature {
    fn default() -> Self {
        Quadrature { points_per_radius: 32, window_radii: 24.0 }
    }
}

/// Response of the bare medium: (d/L) gamma x / (Omega^2 - (Delta + i gamma) x), x = omega - V.
fn chi_of_x(x: C64, params: &PhysicalParams, derived: &DerivedParams) -> Result<C64> {
    let pref = derived.d / params.medium_length * params.gamma;
    let den = params.omega * params.omega - C64::new(params.delta, params.gamma) * x;
    if den.norm() < 1e-300 {
        return Err(Error::Pole("susceptibility denominator vanishes"));
    }
    Ok(pref * x / den)
}

/// k chi at position z and frequency omega, evaluated at the capped potential.
pub fn susceptibility(
    z: f64,
    omega: f64,
    params: &PhysicalParams,
    derived: &DerivedParams,
    potential: &PotentialProfile,
) -> Result<C64> {
    chi_of_x(C64::new(omega - potential.eval(z), 0.0), params, derived)
}

fn baseline(potential: &PotentialProfile) -> f64 {
    match potential.kind {
        PotentialKind::VdwShifted { offset } => offset,
        _ => 0.0,
    }
}

fn power_integral(a: f64, b: f64, p: f64) -> f64 {
    if b <= a {
        0.0
    } else {
        (a.powf(1.0 - p) - b.powf(1.0 - p)) / (p - 1.0)
    }
}

/// Integral of k chi over the medium [-L/2, L/2].
pub fn chi_integral(
    omega: f64,
    params: &PhysicalParams,
    derived: &DerivedParams,
    potential: &PotentialProfile,
    quad: &Quadrature,
) -> Result<C64> {
    if quad.points_per_radius < 8 {
        return Err(Error::Resolution(format!("{} quadrature points per blockade radius < 8", quad.points_per_radius)));
    }
    let half = 0.5 * params.medium_length;
    let v0 = baseline(potential);
    let x0 = C64::new(omega - v0, 0.0);
    let base = chi_of_x(x0, params, derived)?;
    let mut total = base * params.medium_length;
    if potential.c6 == 0.0 && !matches!(potential.kind, PotentialKind::Sampled { .. }) {
        return Ok(total);
    }

    let radius = derived.blockade_radius().max(f64::MIN_POSITIVE);
    let c = potential.center;
    let (mut lo, mut hi) = (c - quad.window_radii * radius, c + quad.window_radii * radius);
    if let PotentialKind::Sampled { z, .. } = &potential.kind {
        lo = z[0];
        hi = z[z.len() - 1];
    }
    let (a, b) = (lo.max(-half), hi.min(half));
    if b > a {
        let h0 = radius / quad.points_per_radius as f64;
        let n = ((b - a) / h0).ceil().max(2.0) as usize;
        let h = (b - a) / n as f64;
        let mut acc = C64::new(0.0, 0.0);
        for k in 0..=n {
            let w = if k == 0 || k == n { 0.5 } else { 1.0 };
            let z = a + k as f64 * h;
            acc += w * (susceptibility(z, omega, params, derived, potential)? - base);
        }
        total += acc * h;
    }

    if !matches!(potential.kind, PotentialKind::Sampled { .. }) {
        // second-order expansion of chi(omega - V) about V = 0 past the window
        let p = potential.power;
        let dl = (lo - c).abs().max(0.0);
        let dr = (hi - c).max(0.0);
        let int_v = power_integral(dr.max(0.0), half - c, p) + power_integral(dl, half + c, p);
        let int_v2 = power_integral(dr, half - c, 2.0 * p) + power_integral(dl, half + c, 2.0 * p);
        if int_v != 0.0 {
            let om2 = params.omega * params.omega;
            let dp = C64::new(params.delta, params.gamma);
            let den = om2 - dp * x0;
            let pref = derived.d / params.medium_length * params.gamma;
            let f1 = pref * om2 / (den * den);
            let f2 = pref * om2 * dp / (den * den * den);
            total += -f1 * potential.c6 * int_v + f2 * potential.c6 * potential.c6 * int_v2;
        }
    }
    Ok(total)
}

/// Spectral transfer function exp((i/2) integral k chi dz). Frequencies follow the
/// e^{-i omega t} convention, so slow light shows up as arg T ~ +omega L / v_g.
pub fn transfer_function(
    omega: f64,
    params: &PhysicalParams,
    derived: &DerivedParams,
    potential: &PotentialProfile,
    quad: &Quadrature,
) -> Result<C64> {
    Ok((0.5 * I * chi_integral(omega, params, derived, potential, quad)?).exp())
}

/// Transfer function averaged over `n_positions` equally spaced excitation centers
/// across the medium, for a delocalized spin-wave excitation.
pub fn spin_wave_transfer(
    omega: f64,
    params: &PhysicalParams,
    derived: &DerivedParams,
    potential: &PotentialProfile,
    quad: &Quadrature,
    n_positions: usize,
) -> Result<C64> {
    let n = n_positions.max(1);
    let l = params.medium_length;
    let mut sum = C64::new(0.0, 0.0);
    for k in 0..n {
        let center = -0.5 * l + (k as f64 + 0.5) * l / n as f64;
        sum += transfer_function(omega, params, derived, &potential.clone().with_center(center), quad)?;
    }
    Ok(sum / n as f64)
}

#[derive(Debug, Clone)]
pub struct SingleRun {
    pub output: ComplexField1D,
    pub reference: ComplexField1D,
    /// Relative to the V = 0 reference.
    pub report: PropagationReport,
    /// Centroid delay of the reference output relative to the input.
    pub reference_delay: f64,
    pub narrowband: bool,
    pub warnings: Vec<String>,
}

impl SingleRun {
    pub fn delay_reduction(&self) -> f64 {
        -self.report.group_delay
    }
}

fn spectral_half_width(spec: &SpectralField) -> f64 {
    let (mut m0, mut m1, mut m2) = (0.0, 0.0, 0.0);
    for (v, w) in spec.values.iter().zip(&spec.omega) {
        let p = v.norm_sqr();
        m0 += p;
        m1 += p * w;
        m2 += p * w * w;
    }
    let mean = m1 / m0;
    2.0 * (m2 / m0 - mean * mean).max(0.0).sqrt()
}

/// Propagates a pulse given as a function of time at the medium entrance.
pub fn propagate_single(
    pulse_in: &ComplexField1D,
    params: &PhysicalParams,
    derived: &DerivedParams,
    potential: &PotentialProfile,
    quad: &Quadrature,
) -> Result<SingleRun> {
    let spec = forward_transform(pulse_in)?;
    let ratio = spec.nyquist_ratio();
    if ratio > 1e-6 {
        return Err(Error::Aliasing { ratio });
    }
    let mut warnings = Vec::new();
    let half_width = spectral_half_width(&spec);
    let window = if params.gamma > 0.0 {
        0.2 * params.omega * params.omega / (params.gamma * derived.d.sqrt())
    } else {
        f64::INFINITY
    };
    let narrowband = half_width <= window;
    if !narrowband {
        warnings.push(format!("pulse half-width {half_width:.3e} exceeds 0.2 of the EIT window ({window:.3e})"));
    }

    let free = PotentialProfile::none(params);
    let vacuum = params.medium_length / params.light_speed;
    let transfers: Vec<(C64, C64)> = spec
        .omega
        .par_iter()
        .map(|&w| -> Result<(C64, C64)> {
            let prop = C64::from_polar(1.0, w * vacuum);
            Ok((
                prop * transfer_function(w, params, derived, potential, quad)?,
                prop * transfer_function(w, params, derived, &free, quad)?,
            ))
        })
        .collect::<Result<_>>()?;

    let apply = |sel: fn(&(C64, C64)) -> C64| -> Result<ComplexField1D> {
        let mut s = spec.clone();
        for (v, t) in s.values.iter_mut().zip(&transfers) {
            *v *= sel(t);
        }
        inverse_transform(&s)
    };
    let output = apply(|t| t.0)?;
    let reference = apply(|t| t.1)?;

    let peak = reference.values.iter().map(|v| v.norm()).fold(0.0, f64::max);
    let n = reference.values.len();
    let edge = reference.values[0].norm().max(reference.values[n - 1].norm());
    if edge > 1e-6 * peak {
        warnings.push(format!("output reaches the time-window edge (edge/peak = {:.1e})", edge / peak));
    }

    let report = extract_report(&output, &reference, 1.0)?;
    let reference_delay = reference.centroid() - pulse_in.centroid();
    Ok(SingleRun { output, reference, report, reference_delay, narrowband, warnings })
}

/// Gaussian input pulse at the medium entrance on an automatically sized time grid:
/// intensity width `sigma_t` (default 10 / EIT window, so the spectrum sits well inside
/// the window) and a window holding both input and delayed output.
pub fn pulse_run(params: &PhysicalParams, sigma_t: Option<f64>, quad: &Quadrature) -> Result<SingleRun> {
    let derived = params.derive()?;
    let window = 0.2 * params.omega * params.omega / (params.gamma.max(f64::MIN_POSITIVE) * derived.d.sqrt());
    let sigma = sigma_t.unwrap_or(10.0 / window);
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::Validation(vec![format!("pulse width {sigma} must be positive and finite")]));
    }
    let transit = params.medium_length / params.light_speed + params.medium_length / derived.v_g;
    let (t0, t1) = (-10.0 * sigma, transit + 10.0 * sigma);
    let n = (((t1 - t0) / (sigma / 8.0)).ceil() as usize).next_power_of_two().max(64);
    let grid = Grid1D::new(t0, t1, n)?;
    let pulse = gaussian_pulse(grid, 0.0, sigma, 0.0)?;
    propagate_single(&pulse, params, &derived, &PotentialProfile::vdw(params), quad)
}

/// Closed-form predictions for transmission past one excitation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SinglePhotonAnalytics {
    pub phase: f64,
    pub two_eta: f64,
    /// Effective medium length; `None` on resonance.
    pub l_prime: Option<f64>,
    pub delay_reduction: Option<f64>,
    /// The coarser forms -d_B gamma/(2 Delta) and d_B (gamma/Delta)^2.
    pub phase_leading: f64,
    pub two_eta_leading: f64,
    pub resonant: bool,
    /// False when |Delta| < 5 gamma: the expansion in gamma/Delta is not trustworthy.
    pub asymptotic: bool,
}

pub fn analytic_single(params: &PhysicalParams) -> Result<SinglePhotonAnalytics> {
    let derived = params.derive()?;
    if params.delta == 0.0 {
        return Ok(SinglePhotonAnalytics {
            phase: 0.0,
            two_eta: derived.d_b,
            l_prime: None,
            delay_reduction: None,
            phase_leading: 0.0,
            two_eta_leading: derived.d_b,
            resonant: true,
            asymptotic: false,
        });
    }
    let zb = derived.z_big()?;
    let db = derived.d_big()?;
    let eps = params.gamma / params.delta;
    Ok(SinglePhotonAnalytics {
        phase: -PI / 6.0 * db * eps,
        two_eta: 5.0 * PI / 18.0 * db * eps * eps,
        l_prime: Some(params.medium_length - 7.0 * PI / 9.0 * zb),
        delay_reduction: Some(7.0 * PI / 9.0 * zb / derived.v_g),
        phase_leading: -0.5 * db * eps,
        two_eta_leading: db * eps * eps,
        resonant: false,
        asymptotic: params.delta.abs() >= 5.0 * params.gamma,
    })
}

/// Internal-unit parameter set with the given detuning, blockaded depth and blockade
/// radius (z_B off resonance, z_b on resonance).
pub fn scenario(delta: f64, blockaded_depth: f64, radius: f64, length: f64, omega: f64) -> PhysicalParams {
    let base = PhysicalParams { gamma: 1.0, delta, omega, medium_length: length, ..Default::default() };
    let c6 = base.c6_for_blockade_radius(radius);
    PhysicalParams { c6, ..base }.with_depth(blockaded_depth * length / (2.0 * radius))
}
