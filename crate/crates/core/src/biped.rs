//! Geometry of the variable-structure biped: a beam with two legs and two
//! heavy cylinders, reduced to the rigid-body parameters of a
//! [`Configuration`].
//!
//! Body frame: `x` along the beam (downhill positive, origin at the beam
//! centre), `z` normal to the slope with the feet at `z = 0`. The legs hang
//! normal to the beam. All lengths are in metres.

use serde::{Deserialize, Serialize};

use crate::model::{Configuration, ModelError, DEFAULT_GRAVITY};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BipedSpec {
    pub beam_mass: f64,
    /// Mass of a single leg, including its footpad.
    pub leg_mass: f64,
    /// Mass of a single cylinder.
    pub cylinder_mass: f64,
    pub beam_length: f64,
    pub beam_thickness: f64,
    /// Distance between the feet.
    pub leg_spacing: f64,
    /// Length of both legs (feet to the beam's lower face).
    pub leg_length: f64,
    /// Position of the uphill leg along the beam.
    pub leg1_position: f64,
    /// Positions of the cylinder centres along the beam.
    pub cylinder_positions: [f64; 2],
    /// Height of the cylinder centres above the beam centreline.
    pub cylinder_offset: f64,
    pub cylinder_radius: f64,
    pub alpha: f64,
    pub mu: [f64; 2],
}

impl Default for BipedSpec {
    /// Tuned so that the movable cylinder at +50 mm reproduces configuration
    /// B and at +10 mm configuration D.
    fn default() -> Self {
        BipedSpec {
            beam_mass: 0.124,
            leg_mass: 0.040,
            cylinder_mass: 0.195,
            beam_length: 0.520,
            beam_thickness: 0.020,
            leg_spacing: 0.060,
            leg_length: 0.110,
            leg1_position: -0.048,
            cylinder_positions: [-0.240, 0.050],
            cylinder_offset: 0.035,
            cylinder_radius: 0.015,
            alpha: 25f64.to_radians(),
            mu: [0.315, 1.0],
        }
    }
}

/// A lumped part: mass, centre `(x, z)` and moment of inertia about its own
/// centre.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Part {
    pub mass: f64,
    pub x: f64,
    pub z: f64,
    pub inertia: f64,
}

/// Composite mass, centre of mass and radius of gyration about it.
pub fn compose(parts: &[Part]) -> (f64, f64, f64, f64) {
    let m: f64 = parts.iter().map(|p| p.mass).sum();
    let xc = parts.iter().map(|p| p.mass * p.x).sum::<f64>() / m;
    let zc = parts.iter().map(|p| p.mass * p.z).sum::<f64>() / m;
    let i: f64 = parts
        .iter()
        .map(|p| p.inertia + p.mass * ((p.x - xc).powi(2) + (p.z - zc).powi(2)))
        .sum();
    (m, xc, zc, (i / m).sqrt())
}

impl BipedSpec {
    pub fn parts(&self) -> Vec<Part> {
        let beam_z = self.leg_length + 0.5 * self.beam_thickness;
        let leg = |x: f64| Part {
            mass: self.leg_mass,
            x,
            z: 0.5 * self.leg_length,
            inertia: self.leg_mass * self.leg_length.powi(2) / 12.0,
        };
        let cyl = |x: f64| Part {
            mass: self.cylinder_mass,
            x,
            z: beam_z + self.cylinder_offset,
            inertia: 0.5 * self.cylinder_mass * self.cylinder_radius.powi(2),
        };
        vec![
            Part {
                mass: self.beam_mass,
                x: 0.0,
                z: beam_z,
                inertia: self.beam_mass
                    * (self.beam_length.powi(2) + self.beam_thickness.powi(2))
                    / 12.0,
            },
            leg(self.leg1_position),
            leg(self.leg1_position + self.leg_spacing),
            cyl(self.cylinder_positions[0]),
            cyl(self.cylinder_positions[1]),
        ]
    }

    fn validate(&self) -> Result<(), ModelError> {
        let positive = [
            ("beam_mass", self.beam_mass),
            ("leg_mass", self.leg_mass),
            ("cylinder_mass", self.cylinder_mass),
            ("beam_length", self.beam_length),
            ("leg_spacing", self.leg_spacing),
            ("leg_length", self.leg_length),
        ];
        for (name, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(ModelError::InvalidParameter {
                    name: name.into(),
                    value,
                    reason: "must be positive".into(),
                });
            }
        }
        let non_negative = [
            ("beam_thickness", self.beam_thickness),
            ("cylinder_radius", self.cylinder_radius),
        ];
        for (name, value) in non_negative {
            if !(value.is_finite() && value >= 0.0) {
                return Err(ModelError::InvalidParameter {
                    name: name.into(),
                    value,
                    reason: "must be non-negative".into(),
                });
            }
        }
        Ok(())
    }

    /// Centre of mass `(x_c, z_c)` relative to the midpoint between the feet.
    pub fn com(&self) -> Result<(f64, f64), ModelError> {
        self.validate()?;
        let (_, xc, zc, _) = compose(&self.parts());
        Ok((xc - self.leg1_position - 0.5 * self.leg_spacing, zc))
    }
}

/// Rigid-body parameters of the biped standing on the slope.
pub fn biped_to_configuration(spec: &BipedSpec) -> Result<Configuration, ModelError> {
    spec.validate()?;
    let (m, xc, zc, rho) = compose(&spec.parts());
    let l1 = spec.leg1_position - xc;
    let cfg = Configuration::on_slope(
        m,
        rho,
        zc,
        l1,
        l1 + spec.leg_spacing,
        spec.mu[0],
        spec.mu[1],
        spec.alpha,
        DEFAULT_GRAVITY,
    );
    cfg.validate()?;
    Ok(cfg)
}
