//! Two-component (ee, es+) propagation in the relative coordinate.

use num_complex::Complex64 as C64;
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::linalg::{self, Mat2, Vector};
use crate::potential::PotentialProfile;
use crate::units::{DerivedParams, PhysicalParams};

const I: C64 = C64::new(0.0, 1.0);

/// Bundles the parameter views every function here needs.
#[derive(Debug, Clone)]
pub struct PairModel {
    pub params: PhysicalParams,
    pub derived: DerivedParams,
    pub potential: PotentialProfile,
}

impl PairModel {
    pub fn new(params: &PhysicalParams) -> Result<Self> {
        let derived = params.derive()?;
        Ok(PairModel { params: params.clone(), derived, potential: PotentialProfile::vdw(params) })
    }

    pub fn with_potential(mut self, potential: PotentialProfile) -> Self {
        self.potential = potential;
        self
    }

    fn om2(&self) -> f64 {
        self.params.omega * self.params.omega
    }

    fn gamma_c(&self) -> C64 {
        self.derived.big_gamma
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EffectivePotentialValue {
    pub v_raw: f64,
    pub v_eff: C64,
}

/// Effective potential Gamma V / (Gamma V - 2 i Omega^2) at the capped V(r).
pub fn effective_potential(r: f64, model: &PairModel) -> EffectivePotentialValue {
    let v = model.potential.eval(r);
    let gv = model.gamma_c() * v;
    EffectivePotentialValue { v_raw: v, v_eff: gv / (gv - 2.0 * I * model.om2()) }
}

/// Effective potential divided by V, finite at V = 0.
fn v_eff_over_v(v: f64, model: &PairModel) -> C64 {
    let g = model.gamma_c();
    g / (g * v - 2.0 * I * model.om2())
}

/// Coupling matrix acting on (ee, es+) at relative distance r and frequency omega.
pub fn m_full(r: f64, omega: f64, model: &PairModel) -> Result<Mat2> {
    m_at_potential(model.potential.eval(r), omega, model)
}

pub(crate) fn m_at_potential(v: f64, omega: f64, model: &PairModel) -> Result<Mat2> {
    let g2n = model.derived.g2n;
    let gam = model.gamma_c();
    let om2 = model.om2();
    let b = -(g2n.sqrt() * model.params.omega) / gam;
    let den = 2.0 * om2 + I * gam * (v - omega);
    if den.norm() < 1e-300 {
        return Err(Error::Pole("coupling-matrix denominator vanishes"));
    }
    Ok([
        [I * omega * 0.5 - g2n / gam, b],
        [b, I * omega - om2 / gam + I * g2n * (omega - v) / den],
    ])
}

/// Narrowband expansion M(r, omega) ~ M0(r) + omega M1(r), written through the
/// effective potential.
pub fn m_expansion(r: f64, model: &PairModel) -> (Mat2, Mat2) {
    let g2n = model.derived.g2n;
    let gam = model.gamma_c();
    let om2 = model.om2();
    let ev = effective_potential(r, model);
    let b = g2n.sqrt() * model.params.omega;
    let m0 = [[-g2n / gam, -b / gam], [-b / gam, -(om2 + g2n * ev.v_eff) / gam]];
    let q = v_eff_over_v(ev.v_raw, model);
    let z = C64::new(0.0, 0.0);
    let m1 = [[I * 0.5, z], [z, I * (1.0 - 2.0 * g2n * om2 * q * q / (gam * gam))]];
    (m0, m1)
}

/// Dark eigenvector of M(V = 0, omega): the eigenvalue of smallest magnitude, with its
/// eigenvalue. At omega = 0 it is (Omega, -g sqrt(n)) with eigenvalue 0.
pub fn dark_mode(omega: f64, model: &PairModel) -> Result<(C64, Vector<2>)> {
    let m = m_at_potential(0.0, omega, model)?;
    let ev = linalg::eig2(&m);
    let lam = if ev[0].norm() <= ev[1].norm() { ev[0] } else { ev[1] };
    // (m12, lam - m11) spans the kernel of M - lam; fall back to the other row when tiny
    let v1 = [m[0][1], lam - m[0][0]];
    let v2 = [lam - m[1][1], m[1][0]];
    let v = if v1[0].norm() + v1[1].norm() >= v2[0].norm() + v2[1].norm() { v1 } else { v2 };
    let s = (v[0].norm_sqr() + v[1].norm_sqr()).sqrt();
    let mut v = [v[0] / s, v[1] / s];
    if v[0].re < 0.0 {
        v = [-v[0], -v[1]];
    }
    Ok((lam, v))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CounterTransfer {
    /// Ordered product over the span.
    pub matrix: Mat2,
    /// Dark-to-dark amplitude relative to interaction-free propagation, with the
    /// analytic tail beyond the span included.
    pub factor: C64,
    pub phase: f64,
    pub eta: f64,
    /// Fraction of the output in the bright mode, relative to the dark amplitude.
    pub bright_admixture: f64,
}

/// Integral of V(r) over |r - center| beyond the given distances, both sides, to infinity.
fn vdw_tail(model: &PairModel, left: f64, right: f64) -> f64 {
    let p = model.potential.power;
    let c6 = model.potential.c6;
    let f = |a: f64| if a > 0.0 { a.powf(1.0 - p) / (p - 1.0) } else { 0.0 };
    c6 * (f(left) + f(right))
}

/// Default span [-8 z, 8 z] around the blockade and the largest step z/16.
pub fn default_span(model: &PairModel) -> ((f64, f64), f64) {
    let z = model.derived.blockade_radius();
    ((-8.0 * z, 8.0 * z), z / 16.0)
}

/// Transfer of (ee, es+) along r for counter-propagating photons.
pub fn counter_transfer(omega: f64, r_span: (f64, f64), max_step: f64, model: &PairModel) -> Result<CounterTransfer> {
    let z = model.derived.blockade_radius();
    if max_step > z / 16.0 * (1.0 + 1e-12) {
        return Err(Error::Resolution(format!("step {max_step:e} exceeds z/16 = {:e}", z / 16.0)));
    }
    let (a, b) = r_span;
    if !(b > a) {
        return Err(Error::Grid(format!("empty span [{a}, {b}]")));
    }
    let c = model.params.light_speed;
    let n = ((b - a) / max_step).ceil().max(1.0) as usize;
    let h = (b - a) / n as f64;
    let mut t = linalg::identity::<2>();
    for k in 0..n {
        let r = a + (k as f64 + 0.5) * h;
        let m = m_full(r, omega, model)?;
        let e = linalg::expm2(&linalg::scale(&m, C64::new(h / c, 0.0)));
        t = linalg::mul(&e, &t);
    }

    let (lam, vd) = dark_mode(omega, model)?;
    let tv = linalg::matvec(&t, &vd);
    let vtv = vd[0] * vd[0] + vd[1] * vd[1];
    let dark_out = (vd[0] * tv[0] + vd[1] * tv[1]) / vtv;
    let bright = [tv[0] - dark_out * vd[0], tv[1] - dark_out * vd[1]];
    let bright_norm = (bright[0].norm_sqr() + bright[1].norm_sqr()).sqrt();

    let mut exponent = -lam * (b - a) / c;
    if !model.potential.is_zero() {
        // first-order dark-eigenvalue shift from V past the span
        let c_mid = model.potential.center;
        let int_v = vdw_tail(model, c_mid - a, b - c_mid);
        let gam = model.gamma_c();
        let om2 = model.om2();
        let g2n = model.derived.g2n;
        let dd = 2.0 * om2 - I * gam * omega;
        let dm22 = -I * g2n * 2.0 * om2 / (dd * dd);
        exponent += vd[1] * vd[1] / vtv * dm22 * int_v / c;
    }
    let factor = dark_out * exponent.exp();
    Ok(CounterTransfer {
        matrix: t,
        factor,
        phase: factor.arg(),
        eta: -factor.norm().ln(),
        bright_admixture: bright_norm / dark_out.norm(),
    })
}

/// The exponent -(g^2 n / (c Gamma)) integral Veff dr by trapezoid over the default
/// span plus the weak-potential tail.
pub fn interaction_exponent(model: &PairModel, points_per_radius: usize) -> C64 {
    let ((a, b), _) = default_span(model);
    let z = model.derived.blockade_radius();
    let n = (((b - a) / z) * points_per_radius as f64).ceil() as usize;
    let h = (b - a) / n as f64;
    let mut s = C64::new(0.0, 0.0);
    for k in 0..=n {
        let w = if k == 0 || k == n { 0.5 } else { 1.0 };
        s += w * effective_potential(a + k as f64 * h, model).v_eff;
    }
    s *= h;
    let gam = model.gamma_c();
    s += I * gam / (2.0 * model.om2()) * vdw_tail(model, -a, b);
    -model.derived.g2n / (model.params.light_speed * gam) * s
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoPropagation {
    pub matrix: Mat2,
    /// Eigenvalues of 2 M / c.
    pub rates: [C64; 2],
    /// Amplitude decay length of the slowest-decaying mode along R.
    pub decay_length: f64,
}

/// Transfer along the center-of-mass coordinate at fixed r: c dR v = 2 M v.
pub fn co_propagation_solve(r: f64, omega: f64, r_span: (f64, f64), model: &PairModel) -> Result<CoPropagation> {
    let (a, b) = r_span;
    if !(b >= a) {
        return Err(Error::Grid(format!("empty span [{a}, {b}]")));
    }
    let m = linalg::scale(&m_full(r, omega, model)?, C64::new(2.0 / model.params.light_speed, 0.0));
    let rates = linalg::eig2(&m);
    let slowest = rates.iter().map(|l| -l.re).fold(f64::INFINITY, f64::min);
    Ok(CoPropagation {
        matrix: linalg::expm2(&linalg::scale(&m, C64::new(b - a, 0.0))),
        rates,
        decay_length: if slowest > 0.0 { 1.0 / slowest } else { f64::INFINITY },
    })
}

/// Closed-form counter-propagation predictions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CounterAnalytics {
    pub phase: f64,
    pub eta: f64,
    /// The coarser forms -gamma d_B/(2 Delta) and gamma^2 d_B/(2 Delta^2).
    pub phase_leading: f64,
    pub eta_leading: f64,
    pub resonant: bool,
}

pub const COUNTER_PHASE_COEFF: f64 = PI / 6.0 / 1.122_462_048_309_373; // 2^(1/6)
pub const COUNTER_ETA_COEFF: f64 = 5.0 * PI / 36.0 / 1.122_462_048_309_373;

pub fn counter_analytics(params: &PhysicalParams) -> Result<CounterAnalytics> {
    let d = params.derive()?;
    if params.delta == 0.0 {
        return Ok(CounterAnalytics { phase: 0.0, eta: 0.5 * d.d_b, phase_leading: 0.0, eta_leading: 0.5 * d.d_b, resonant: true });
    }
    let db = d.d_big()?;
    let eps = params.gamma / params.delta;
    Ok(CounterAnalytics {
        phase: -COUNTER_PHASE_COEFF * eps * db,
        eta: COUNTER_ETA_COEFF * eps * eps * db,
        phase_leading: -0.5 * eps * db,
        eta_leading: 0.5 * eps * eps * db,
        resonant: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::single_photon::scenario;
    use proptest::prelude::*;

    fn model(delta: f64, db: f64) -> PairModel {
        // g sqrt(n) / Omega between 11 and 32 for d_B in [0.5, 4]
        let p = scenario(delta, db, 1e-3, 0.1, 1.0);
        PairModel::new(&p).unwrap()
    }

    fn rel(a: C64, b: C64) -> f64 {
        (a - b).norm() / b.norm().max(1e-300)
    }

    #[test]
    fn two_to_one_power() {
        assert!((1.122_462_048_309_373f64 - 2f64.powf(1.0 / 6.0)).abs() < 1e-15);
    }

    #[test]
    fn effective_potential_limits() {
        let m = model(20.0, 2.0);
        let free = m.clone().with_potential(PotentialProfile::none(&m.params));
        assert_eq!(effective_potential(1.0, &free).v_eff, C64::new(0.0, 0.0));
        assert!((effective_potential(0.0, &m).v_eff - 1.0).norm() < 1e-6);
        // at r = z_B: independent form 1 / (1 - 2 i Omega^2 / (Gamma V))
        let zb = m.derived.z_big().unwrap();
        let ev = effective_potential(zb, &m);
        let alt = 1.0 / (1.0 - 2.0 * I * m.om2() / (m.gamma_c() * ev.v_raw));
        assert!(rel(ev.v_eff, alt) < 1e-13);
        // weak potential
        let far = effective_potential(40.0 * zb, &m);
        assert!(rel(far.v_eff, I * m.gamma_c() * far.v_raw / (2.0 * m.om2())) < 1e-6);
    }

    #[test]
    fn full_matrix_limits() {
        let m = model(20.0, 2.0);
        let huge = m.clone().with_potential(PotentialProfile { power: 0.0, c6: 1e8, cap: 1e30, ..m.potential.clone() });
        let mm = m_full(1.0, 0.0, &huge).unwrap();
        let want = -(m.om2() + m.derived.g2n) / m.gamma_c();
        assert!(rel(mm[1][1], want) < 1e-6);
        let free = m.clone().with_potential(PotentialProfile::none(&m.params));
        let m0 = m_full(3.0, 0.0, &free).unwrap();
        let v = [C64::new(m.params.omega, 0.0), C64::new(-m.derived.g2n.sqrt(), 0.0)];
        let out = linalg::matvec(&m0, &v);
        assert!(out[0].norm() < 1e-12 && out[1].norm() < 1e-12);
        assert_eq!(mm[0][1], mm[1][0]);
    }

    #[test]
    fn expansion_matches_full_matrix() {
        let m = model(20.0, 2.0);
        for x in [0.0, 0.3, 0.9, 1.0, 1.4, 3.0, 10.0] {
            let r = x * m.derived.blockade_radius();
            let (m0, m1) = m_expansion(r, &m);
            let f0 = m_full(r, 0.0, &m).unwrap();
            assert!(linalg::max_abs_diff(&m0, &f0) < 1e-12 * linalg::norm1(&f0), "r = {r}");
            // central differences and one Richardson step
            let d = |h: f64| {
                let p = m_full(r, h, &m).unwrap();
                let q = m_full(r, -h, &m).unwrap();
                linalg::scale(&linalg::add(&p, &linalg::scale(&q, C64::new(-1.0, 0.0))), C64::new(0.5 / h, 0.0))
            };
            let h = 1e-3;
            let (d1, d2) = (d(h), d(h / 2.0));
            let rich = linalg::add(&linalg::scale(&d2, C64::new(4.0 / 3.0, 0.0)), &linalg::scale(&d1, C64::new(-1.0 / 3.0, 0.0)));
            for i in 0..2 {
                for j in 0..2 {
                    let scale = m1[i][j].norm().max(1.0);
                    assert!((rich[i][j] - m1[i][j]).norm() < 1e-6 * scale, "r = {r}, ({i},{j})");
                }
            }
        }
    }

    #[test]
    fn velocities_from_m1() {
        let m = model(20.0, 2.0);
        let (_, m1) = m_expansion(1e3, &m);
        let want = I * (1.0 + m.derived.g2n / (2.0 * m.om2()));
        assert!(rel(m1[1][1], want) < 1e-6);
        let (_, inside) = m_expansion(0.0, &m);
        assert!(rel(inside[1][1], I) < 1e-6);
        assert_eq!(inside[0][0], I * 0.5);
    }

    #[test]
    fn determinant_tracks_effective_potential() {
        let m = model(20.0, 2.0);
        for x in [0.0, 0.5, 1.0, 2.0, 1e3] {
            let r = x * m.derived.blockade_radius();
            let (m0, _) = m_expansion(r, &m);
            let det = m0[0][0] * m0[1][1] - m0[0][1] * m0[1][0];
            let ev = effective_potential(r, &m).v_eff;
            let g2n = m.derived.g2n;
            let lhs = det * m.gamma_c() * m.gamma_c() / (g2n * g2n);
            assert!((lhs - ev).norm() < 1e-12 * ev.norm().max(1e-6), "r = {r}");
        }
        let free = m.clone().with_potential(PotentialProfile::none(&m.params));
        let e = linalg::eig2(&m_expansion(1.0, &free).0);
        assert!(e[0].norm().min(e[1].norm()) < 1e-12);
    }

    #[test]
    fn hamiltonian_limit_has_imaginary_spectrum() {
        let p = PhysicalParams { gamma: 0.0, hamiltonian_test: true, delta: 7.0, omega: 1.0, g_sqrt_n: Some(5.0), c6: 2.0, ..Default::default() };
        let m = PairModel::new(&p).unwrap();
        for r in [0.2, 1.0, 3.0] {
            for e in linalg::eig2(&m_expansion(r, &m).0) {
                assert!(e.re.abs() < 1e-10 * e.norm().max(1.0), "{e}");
            }
        }
    }

    #[test]
    fn free_counter_transfer_is_trivial() {
        let m = model(20.0, 2.0);
        let free = m.clone().with_potential(PotentialProfile::none(&m.params));
        let (span, step) = default_span(&m);
        let t = counter_transfer(0.0, span, step, &free).unwrap();
        assert!((t.factor - 1.0).norm() < 1e-10);
        let want = linalg::expm2(&linalg::scale(&m_full(0.0, 0.0, &free).unwrap(), C64::new(span.1 - span.0, 0.0)));
        assert!(linalg::max_abs_diff(&t.matrix, &want) < 1e-9);
        assert!(counter_transfer(0.0, span, step * 2.0, &m).is_err());
    }

    #[test]
    fn counter_transfer_is_multiplicative() {
        let m = model(20.0, 2.0);
        let z = m.derived.blockade_radius();
        let step = z / 16.0;
        let ab = counter_transfer(0.01, (-8.0 * z, 0.5 * z), step, &m).unwrap().matrix;
        let bc = counter_transfer(0.01, (0.5 * z, 8.0 * z), step, &m).unwrap().matrix;
        let ac = counter_transfer(0.01, (-8.0 * z, 8.0 * z), step, &m).unwrap().matrix;
        assert!(linalg::max_abs_diff(&linalg::mul(&bc, &ab), &ac) < 1e-10);
    }

    #[test]
    fn counter_phase_matches_closed_form() {
        for db in [0.5, 1.0, 2.0, 4.0] {
            let m = model(20.0, db);
            let (span, step) = default_span(&m);
            let t = counter_transfer(0.0, span, step, &m).unwrap();
            let a = counter_analytics(&m.params).unwrap();
            assert!((t.phase / a.phase - 1.0).abs() < 0.03, "d_B = {db}: {} vs {}", t.phase, a.phase);
        }
    }

    #[test]
    fn quadrature_reproduces_counter_constants() {
        let m = model(2000.0, 1.0);
        let x = interaction_exponent(&m, 64);
        let a = counter_analytics(&m.params).unwrap();
        assert!((x.im / a.phase - 1.0).abs() < 1e-3, "{} {}", x.im, a.phase);
        assert!((-x.re / a.eta - 1.0).abs() < 1e-3, "{} {}", -x.re, a.eta);
    }

    #[test]
    fn co_propagation_decay_lengths() {
        let p = PhysicalParams { gamma: 1.0, delta: 0.0, omega: 1.0, g_sqrt_n: Some(100.0), c6: 1.0, medium_length: 1.0, ..Default::default() };
        let res = PairModel::new(&p).unwrap();
        let l0 = co_propagation_solve(0.0, 0.0, (0.0, 1.0), &res).unwrap().decay_length;
        let want = p.medium_length / res.derived.d;
        assert!((l0 / want - 1.0).abs() < 0.2, "{l0} {want}");
        let off = PairModel::new(&PhysicalParams { delta: 20.0, ..p.clone() }).unwrap();
        let l1 = co_propagation_solve(0.0, 0.0, (0.0, 1.0), &off).unwrap().decay_length;
        assert!((l1 / l0 / 401.0 - 1.0).abs() < 0.2, "{}", l1 / l0);
        // far outside: dark mode moves at v_g along R
        let (h, r) = (1e-6, 1e4);
        let dark = |w: f64| {
            let cp = co_propagation_solve(r, w, (0.0, 1.0), &off).unwrap();
            cp.rates.iter().copied().min_by(|a, b| a.norm().total_cmp(&b.norm())).unwrap()
        };
        let slope = (dark(h) - dark(-h)).im / (2.0 * h);
        assert!((slope * off.derived.v_g - 1.0).abs() < 0.02, "{}", slope * off.derived.v_g);
    }

    proptest! {
        #[test]
        fn dark_mode_is_eigenvector(w in -0.5f64..0.5) {
            let m = model(20.0, 2.0);
            let (lam, v) = dark_mode(w, &m).unwrap();
            let mv = linalg::matvec(&m_at_potential(0.0, w, &m).unwrap(), &v);
            prop_assert!((mv[0] - lam * v[0]).norm() < 1e-10 && (mv[1] - lam * v[1]).norm() < 1e-10);
        }
    }
}
