//! Physical parameters, validation, derived quantities and the internal unit system.
//!
//! Internally every quantity is expressed with `gamma = 1` and `light_speed = 1`, so
//! frequencies are in units of gamma and lengths in units of `c / gamma`. Conversion
//! happens once, at the configuration boundary, through [`PhysicalParams::nondimensionalize`].

use num_complex::Complex64;
use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Input physical constants. Frequencies are angular (rad per unit time), hbar = 1.
#[derive(Debug, Clone, PartialEq)]
pub struct PhysicalParams {
    /// Half-linewidth of the intermediate state.
    pub gamma: f64,
    /// Single-photon detuning.
    pub delta: f64,
    /// Control Rabi frequency.
    pub omega: f64,
    /// Collective coupling g*sqrt(n). Mutually exclusive with `lambda` + `density`.
    pub g_sqrt_n: Option<f64>,
    pub lambda: Option<f64>,
    pub density: Option<f64>,
    /// Interaction coefficient of V(z) = c6 / |z|^p (energy x length^p).
    pub c6: f64,
    pub medium_length: f64,
    pub light_speed: f64,
    /// Exponent p of the interaction; 6 for van der Waals, 3 for dipolar.
    pub potential_power: f64,
    /// Accept sign(delta) != sign(c6) (Raman-resonance regime).
    pub allow_sign_override: bool,
    /// Permit gamma = 0 for unitary-limit tests.
    pub hamiltonian_test: bool,
}

impl Default for PhysicalParams {
    fn default() -> Self {
        PhysicalParams {
            gamma: 1.0,
            delta: 0.0,
            omega: 1.0,
            g_sqrt_n: Some(1.0),
            lambda: None,
            density: None,
            c6: 1.0,
            medium_length: 1.0,
            light_speed: 1.0,
            potential_power: 6.0,
            allow_sign_override: false,
            hamiltonian_test: false,
        }
    }
}

/// Scale factors between physical and internal units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitScales {
    /// Physical value of one internal frequency unit.
    pub frequency: f64,
    /// Physical value of one internal length unit.
    pub length: f64,
}

impl UnitScales {
    pub fn time(&self) -> f64 {
        1.0 / self.frequency
    }
}

/// Quantities computed from [`PhysicalParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct DerivedParams {
    /// Complex linewidth gamma - i delta.
    pub big_gamma: Complex64,
    /// g^2 n.
    pub g2n: f64,
    /// EIT group velocity c Omega^2 / (g^2 n).
    pub v_g: f64,
    /// Resonant optical depth of the bare two-level medium.
    pub d: f64,
    /// Resonant blockade radius, V(z_b) = Omega^2 / gamma.
    pub z_b: f64,
    /// Blockaded optical depth 2 d z_b / L.
    pub d_b: f64,
    z_big: Option<f64>,
    d_big: Option<f64>,
}

impl DerivedParams {
    /// Off-resonant blockade radius, V(z_B) = Omega^2 / Delta.
    pub fn z_big(&self) -> Result<f64> {
        self.z_big.ok_or(Error::UndefinedOnResonance("z_B"))
    }

    /// Blockaded optical depth 2 d z_B / L.
    pub fn d_big(&self) -> Result<f64> {
        self.d_big.ok_or(Error::UndefinedOnResonance("d_B"))
    }

    /// Blockade radius relevant for the regime: z_B off resonance, z_b on resonance.
    pub fn blockade_radius(&self) -> f64 {
        self.z_big.unwrap_or(self.z_b)
    }

    /// Smallest of the two radii; sets spatial resolution requirements.
    pub fn min_blockade_radius(&self) -> f64 {
        match self.z_big {
            Some(zb) if self.z_b > 0.0 => zb.min(self.z_b),
            Some(zb) => zb,
            None => self.z_b,
        }
    }

    pub fn blockaded_depth(&self) -> f64 {
        self.d_big.unwrap_or(self.d_b)
    }
}

impl PhysicalParams {
    /// Checks every constraint and collects all violations.
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        let finite = [
            ("gamma", self.gamma),
            ("delta", self.delta),
            ("omega", self.omega),
            ("c6", self.c6),
            ("medium_length", self.medium_length),
            ("light_speed", self.light_speed),
            ("potential_power", self.potential_power),
        ];
        for (name, v) in finite {
            if !v.is_finite() {
                errs.push(format!("{name} must be finite"));
            }
        }
        if self.hamiltonian_test {
            if self.gamma < 0.0 {
                errs.push("gamma must be non-negative".into());
            }
        } else if !(self.gamma > 0.0) {
            errs.push("gamma must be positive".into());
        }
        if !(self.omega > 0.0) {
            errs.push("omega must be positive".into());
        }
        if !(self.medium_length > 0.0) {
            errs.push("medium_length must be positive".into());
        }
        if !(self.light_speed > 0.0) {
            errs.push("light_speed must be positive".into());
        }
        if !(self.potential_power > 1.0) {
            errs.push("potential_power must exceed 1".into());
        }
        match (self.g_sqrt_n, self.lambda, self.density) {
            (Some(g), None, None) => {
                if !(g > 0.0 && g.is_finite()) {
                    errs.push("g_sqrt_n must be positive".into());
                }
            }
            (None, Some(l), Some(n)) => {
                if !(l > 0.0 && l.is_finite()) {
                    errs.push("lambda must be positive".into());
                }
                if !(n > 0.0 && n.is_finite()) {
                    errs.push("density must be positive".into());
                }
            }
            (None, None, None) => {
                errs.push("coupling missing: give g_sqrt_n or lambda and density".into())
            }
            (Some(_), _, _) => {
                errs.push("coupling over-specified: give g_sqrt_n or lambda and density, not both".into())
            }
            _ => errs.push("lambda and density must be given together".into()),
        }
        if self.delta != 0.0 && self.c6 != 0.0 && self.delta.signum() != self.c6.signum() && !self.allow_sign_override {
            errs.push("delta/c6 < 0 (Raman-resonance regime) requires allow_sign_override".into());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(errs))
        }
    }

    /// g^2 n from whichever coupling path was supplied.
    pub fn g2n(&self) -> f64 {
        match (self.g_sqrt_n, self.lambda, self.density) {
            (Some(g), _, _) => g * g,
            (None, Some(l), Some(n)) => {
                let d = 3.0 / (2.0 * PI) * l * l * n * self.medium_length;
                d * self.light_speed * self.gamma / (2.0 * self.medium_length)
            }
            _ => f64::NAN,
        }
    }

    /// Interaction V(z) = c6 / |z|^p, uncapped.
    pub fn bare_potential(&self, z: f64) -> f64 {
        self.c6 / z.abs().powf(self.potential_power)
    }

    pub fn derive(&self) -> Result<DerivedParams> {
        self.validate()?;
        let p = self.potential_power;
        let g2n = self.g2n();
        let om2 = self.omega * self.omega;
        let d = match (self.lambda, self.density) {
            (Some(l), Some(n)) if self.g_sqrt_n.is_none() => 3.0 / (2.0 * PI) * l * l * n * self.medium_length,
            _ => 2.0 * g2n * self.medium_length / (self.light_speed * self.gamma),
        };
        let z_b = (self.c6.abs() * self.gamma / om2).powf(1.0 / p);
        let z_big = (self.delta != 0.0).then(|| (self.c6.abs() * self.delta.abs() / om2).powf(1.0 / p));
        Ok(DerivedParams {
            big_gamma: Complex64::new(self.gamma, -self.delta),
            g2n,
            v_g: self.light_speed * om2 / g2n,
            d,
            z_b,
            d_b: 2.0 * d * z_b / self.medium_length,
            z_big,
            d_big: z_big.map(|z| 2.0 * d * z / self.medium_length),
        })
    }

    /// Scales of the internal unit system: frequency gamma (omega in the gamma = 0
    /// test mode) and length c / frequency.
    pub fn unit_scales(&self) -> UnitScales {
        let frequency = if self.gamma > 0.0 { self.gamma } else { self.omega };
        UnitScales { frequency, length: self.light_speed / frequency }
    }

    /// Returns the equivalent parameter set in internal units together with the scales used.
    pub fn nondimensionalize(&self) -> Result<(PhysicalParams, UnitScales)> {
        self.validate()?;
        let s = self.unit_scales();
        Ok((self.rescale(1.0 / s.frequency, 1.0 / s.length), s))
    }

    /// Inverse of [`nondimensionalize`](Self::nondimensionalize).
    pub fn redimensionalize(&self, scales: UnitScales) -> PhysicalParams {
        self.rescale(scales.frequency, scales.length)
    }

    fn rescale(&self, f: f64, l: f64) -> PhysicalParams {
        PhysicalParams {
            gamma: self.gamma * f,
            delta: self.delta * f,
            omega: self.omega * f,
            g_sqrt_n: self.g_sqrt_n.map(|g| g * f),
            lambda: self.lambda.map(|x| x * l),
            density: self.density.map(|n| n / (l * l * l)),
            c6: self.c6 * f * l.powf(self.potential_power),
            medium_length: self.medium_length * l,
            light_speed: self.light_speed * l * f,
            ..self.clone()
        }
    }

    /// Sets g sqrt(n) so that the bare resonant optical depth equals `d`.
    pub fn with_depth(mut self, d: f64) -> Self {
        self.g_sqrt_n = Some((d * self.gamma * self.light_speed / (2.0 * self.medium_length)).sqrt());
        self.lambda = None;
        self.density = None;
        self
    }

    /// Interaction coefficient that places the off-resonant blockade radius at `z_big`
    /// (the resonant one when delta = 0).
    pub fn c6_for_blockade_radius(&self, radius: f64) -> f64 {
        let scale = if self.delta != 0.0 { self.delta.abs() } else { self.gamma };
        let sign = if self.delta < 0.0 { -1.0 } else { 1.0 };
        sign * radius.powf(self.potential_power) * self.omega * self.omega / scale
    }
}
