//! Interaction profiles V(z) seen by the |r> state.

use crate::error::{Error, Result};
use crate::units::PhysicalParams;

/// Cap on |V| relative to the larger EIT scale max(Omega^2/gamma, Omega^2/|Delta|).
pub const CAP_FACTOR: f64 = 1e6;

#[derive(Debug, Clone, PartialEq)]
pub enum PotentialKind {
    /// c6 / |z - center|^p.
    Vdw,
    /// c6 / |z - center|^p + offset: a constant shift of the Rydberg level on top of
    /// the interaction.
    VdwShifted { offset: f64 },
    /// Linear interpolation through `(z, V)` samples, zero outside.
    Sampled { z: Vec<f64>, v: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PotentialProfile {
    pub kind: PotentialKind,
    pub c6: f64,
    pub power: f64,
    pub center: f64,
    pub cap: f64,
}

/// max(Omega^2/gamma, Omega^2/|Delta|) times [`CAP_FACTOR`].
pub fn default_cap(params: &PhysicalParams) -> f64 {
    let om2 = params.omega * params.omega;
    let mut scale: f64 = 0.0;
    if params.gamma > 0.0 {
        scale = scale.max(om2 / params.gamma);
    }
    if params.delta != 0.0 {
        scale = scale.max(om2 / params.delta.abs());
    }
    if scale == 0.0 {
        scale = om2;
    }
    CAP_FACTOR * scale
}

impl PotentialProfile {
    pub fn vdw(params: &PhysicalParams) -> Self {
        PotentialProfile {
            kind: PotentialKind::Vdw,
            c6: params.c6,
            power: params.potential_power,
            center: 0.0,
            cap: default_cap(params),
        }
    }

    /// V identically zero; used for interaction-free reference runs.
    pub fn none(params: &PhysicalParams) -> Self {
        PotentialProfile { c6: 0.0, ..Self::vdw(params) }
    }

    pub fn with_center(mut self, center: f64) -> Self {
        self.center = center;
        self
    }

    pub fn sampled(params: &PhysicalParams, z: Vec<f64>, v: Vec<f64>) -> Result<Self> {
        if z.len() != v.len() || z.len() < 2 {
            return Err(Error::Grid("sampled potential needs matching z/V arrays of length >= 2".into()));
        }
        if z.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Grid("sampled potential z must be strictly increasing".into()));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::Corruption("sampled potential".into()));
        }
        Ok(PotentialProfile { kind: PotentialKind::Sampled { z, v }, ..Self::vdw(params) })
    }

    pub fn is_zero(&self) -> bool {
        match &self.kind {
            PotentialKind::Vdw => self.c6 == 0.0,
            PotentialKind::VdwShifted { offset } => self.c6 == 0.0 && *offset == 0.0,
            PotentialKind::Sampled { v, .. } => v.iter().all(|x| *x == 0.0),
        }
    }

    /// Uncapped interaction term only, without the offset; finite for z != center.
    pub fn raw(&self, z: f64) -> f64 {
        let x = z - self.center;
        match &self.kind {
            PotentialKind::Vdw | PotentialKind::VdwShifted { .. } => {
                if self.c6 == 0.0 {
                    0.0
                } else {
                    self.c6 / x.abs().powf(self.power)
                }
            }
            PotentialKind::Sampled { z: zs, v } => {
                if z <= zs[0] || z >= zs[zs.len() - 1] {
                    return 0.0;
                }
                let i = zs.partition_point(|&s| s <= z) - 1;
                let t = (z - zs[i]) / (zs[i + 1] - zs[i]);
                v[i] + t * (v[i + 1] - v[i])
            }
        }
    }

    /// Capped value used by every solver.
    pub fn eval(&self, z: f64) -> f64 {
        let raw = self.raw(z);
        let capped = if raw.is_finite() { raw.clamp(-self.cap, self.cap) } else { self.cap.copysign(self.c6) };
        match self.kind {
            PotentialKind::VdwShifted { offset } => capped + offset,
            _ => capped,
        }
    }

    /// Distance from `center` at which the uncapped power law reaches the cap.
    pub fn cap_radius(&self) -> f64 {
        (self.c6.abs() / self.cap).powf(1.0 / self.power)
    }
}
