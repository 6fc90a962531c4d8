//! File formats: configuration and biped JSON with unit-suffixed keys, and
//! the JSON reports written by the command line tool.
//!
//! Configuration file (lengths in mm, angles in degrees):
//!
//! ```json
//! {
//!   "name": "A",
//!   "rho_mm": 143.0, "h_mm": 134.1, "l1_mm": -51.2, "l2_mm": 168.8,
//!   "mu1": 0.315, "mu2": 1.0, "alpha_deg": 25.0
//! }
//! ```
//!
//! Optional keys: `mass_kg` (default 1), `phi1_deg`, `phi2_deg` (default 0),
//! `gravity_mps2` (default 9.81), `f_ex_n` (default `mass·gravity`) and
//! `tau_ex_nmm` (default 0).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::biped::BipedSpec;
use crate::consistency::EquilibriumClass;
use crate::model::{Configuration, ModelError, DEFAULT_GRAVITY};
use crate::poincare::{EndpointRecord, FixedPoint, StabilityReport, Verdict};
use crate::simulator::{fitted_ratio, Terminal, Trajectory};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InputError {
    #[error("line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{}{key}: {message}", line.map(|l| format!("line {l}: ")).unwrap_or_default())]
    Invalid {
        line: Option<usize>,
        key: String,
        message: String,
    },
}

/// 1-based line of the first occurrence of `"key"` in a JSON text.
fn key_line(text: &str, key: &str) -> Option<usize> {
    let quoted = format!("\"{key}\"");
    text.lines().position(|l| l.contains(&quoted)).map(|i| i + 1)
}

fn parse<T: for<'de> Deserialize<'de>>(text: &str) -> Result<T, InputError> {
    serde_json::from_str(text).map_err(|e| InputError::Syntax {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default = "one")]
    pub mass_kg: f64,
    pub rho_mm: f64,
    pub h_mm: f64,
    pub l1_mm: f64,
    pub l2_mm: f64,
    #[serde(default)]
    pub phi1_deg: f64,
    #[serde(default)]
    pub phi2_deg: f64,
    pub mu1: f64,
    pub mu2: f64,
    pub alpha_deg: f64,
    #[serde(default = "gravity")]
    pub gravity_mps2: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f_ex_n: Option<f64>,
    #[serde(default)]
    pub tau_ex_nmm: f64,
}

fn one() -> f64 {
    1.0
}

fn gravity() -> f64 {
    DEFAULT_GRAVITY
}

/// Map a parameter name of [`Configuration`] to its key in the file.
fn config_key(name: &str) -> &str {
    match name {
        "m" => "mass_kg",
        "rho" => "rho_mm",
        "h" => "h_mm",
        "l1" => "l1_mm",
        "l2" => "l2_mm",
        "phi1" => "phi1_deg",
        "phi2" => "phi2_deg",
        "mu1" => "mu1",
        "mu2" => "mu2",
        "f_ex" => "f_ex_n",
        "alpha" => "alpha_deg",
        "tau_ex" => "tau_ex_nmm",
        other => other,
    }
}

fn invalid(text: &str, err: ModelError, key_of: impl Fn(&str) -> String) -> InputError {
    match err {
        ModelError::InvalidParameter { name, value, reason } => {
            let key = key_of(&name);
            InputError::Invalid {
                line: key_line(text, &key),
                message: format!("{value} {reason}"),
                key,
            }
        }
        other => InputError::Invalid {
            line: None,
            key: "configuration".into(),
            message: other.to_string(),
        },
    }
}

impl ConfigFile {
    pub fn to_configuration(&self) -> Configuration {
        Configuration {
            m: self.mass_kg,
            rho: self.rho_mm * 1e-3,
            h: self.h_mm * 1e-3,
            l: [self.l1_mm * 1e-3, self.l2_mm * 1e-3],
            phi: [self.phi1_deg.to_radians(), self.phi2_deg.to_radians()],
            mu: [self.mu1, self.mu2],
            f_ex: self.f_ex_n.unwrap_or(self.mass_kg * self.gravity_mps2),
            alpha: self.alpha_deg.to_radians(),
            tau_ex: self.tau_ex_nmm * 1e-3,
        }
    }

    pub fn from_configuration(cfg: &Configuration, name: Option<String>) -> Self {
        ConfigFile {
            name,
            mass_kg: cfg.m,
            rho_mm: cfg.rho * 1e3,
            h_mm: cfg.h * 1e3,
            l1_mm: cfg.l[0] * 1e3,
            l2_mm: cfg.l[1] * 1e3,
            phi1_deg: cfg.phi[0].to_degrees(),
            phi2_deg: cfg.phi[1].to_degrees(),
            mu1: cfg.mu[0],
            mu2: cfg.mu[1],
            alpha_deg: cfg.alpha.to_degrees(),
            gravity_mps2: cfg.f_ex / cfg.m,
            f_ex_n: None,
            tau_ex_nmm: cfg.tau_ex * 1e3,
        }
    }
}

/// Parse and validate a configuration file.
pub fn load_config(text: &str) -> Result<(ConfigFile, Configuration), InputError> {
    let file: ConfigFile = parse(text)?;
    let cfg = file.to_configuration();
    cfg.validate()
        .map_err(|e| invalid(text, e, |n| config_key(n).to_string()))?;
    Ok((file, cfg))
}

/// Biped file (masses in g, lengths in mm, angles in degrees). Missing keys
/// take the values of [`BipedSpec::default`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BipedFile {
    pub beam_mass_g: f64,
    pub leg_mass_g: f64,
    pub cylinder_mass_g: f64,
    pub beam_length_mm: f64,
    pub beam_thickness_mm: f64,
    pub leg_spacing_mm: f64,
    pub leg_length_mm: f64,
    pub leg1_position_mm: f64,
    pub cylinder_positions_mm: [f64; 2],
    pub cylinder_offset_mm: f64,
    pub cylinder_radius_mm: f64,
    pub alpha_deg: f64,
    pub mu1: f64,
    pub mu2: f64,
}

impl Default for BipedFile {
    fn default() -> Self {
        BipedFile::from_spec(&BipedSpec::default())
    }
}

impl BipedFile {
    pub fn from_spec(s: &BipedSpec) -> Self {
        BipedFile {
            beam_mass_g: s.beam_mass * 1e3,
            leg_mass_g: s.leg_mass * 1e3,
            cylinder_mass_g: s.cylinder_mass * 1e3,
            beam_length_mm: s.beam_length * 1e3,
            beam_thickness_mm: s.beam_thickness * 1e3,
            leg_spacing_mm: s.leg_spacing * 1e3,
            leg_length_mm: s.leg_length * 1e3,
            leg1_position_mm: s.leg1_position * 1e3,
            cylinder_positions_mm: [s.cylinder_positions[0] * 1e3, s.cylinder_positions[1] * 1e3],
            cylinder_offset_mm: s.cylinder_offset * 1e3,
            cylinder_radius_mm: s.cylinder_radius * 1e3,
            alpha_deg: s.alpha.to_degrees(),
            mu1: s.mu[0],
            mu2: s.mu[1],
        }
    }

    pub fn to_spec(&self) -> BipedSpec {
        BipedSpec {
            beam_mass: self.beam_mass_g * 1e-3,
            leg_mass: self.leg_mass_g * 1e-3,
            cylinder_mass: self.cylinder_mass_g * 1e-3,
            beam_length: self.beam_length_mm * 1e-3,
            beam_thickness: self.beam_thickness_mm * 1e-3,
            leg_spacing: self.leg_spacing_mm * 1e-3,
            leg_length: self.leg_length_mm * 1e-3,
            leg1_position: self.leg1_position_mm * 1e-3,
            cylinder_positions: [
                self.cylinder_positions_mm[0] * 1e-3,
                self.cylinder_positions_mm[1] * 1e-3,
            ],
            cylinder_offset: self.cylinder_offset_mm * 1e-3,
            cylinder_radius: self.cylinder_radius_mm * 1e-3,
            alpha: self.alpha_deg.to_radians(),
            mu: [self.mu1, self.mu2],
        }
    }
}

pub fn load_biped(text: &str) -> Result<BipedSpec, InputError> {
    let file: BipedFile = parse(text)?;
    let spec = file.to_spec();
    crate::biped::biped_to_configuration(&spec).map_err(|e| {
        invalid(text, e, |n| {
            let suffix = if n.ends_with("mass") { "_g" } else { "_mm" };
            match n {
                "mu1" | "mu2" => n.to_string(),
                "rho" | "h" | "l1" | "l2" | "m" => "biped".to_string(),
                _ => format!("{n}{suffix}"),
            }
        })
    })?;
    Ok(spec)
}

/// Process exit code for a verdict: 0 stable, 1 unstable, 3 degenerate or
/// inconclusive, 4 no equilibrium. Input errors use 2.
pub fn exit_code(v: Verdict) -> i32 {
    match v {
        Verdict::Stable => 0,
        Verdict::Unstable => 1,
        Verdict::Degenerate | Verdict::Inconclusive => 3,
        Verdict::NoEquilibrium => 4,
    }
}

pub const EXIT_INPUT: i32 = 2;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassifyReport {
    pub name: Option<String>,
    pub configuration: Configuration,
    pub verdict: Verdict,
    pub justification: &'static str,
    pub exit_code: i32,
    pub equilibrium: EquilibriumClass,
    pub fixed_points: Vec<FixedPoint>,
    pub endpoints: Vec<EndpointRecord>,
    pub witness_fixed_point: Option<FixedPoint>,
    pub max_g: Option<f64>,
    pub samples: usize,
    pub notes: Vec<String>,
}

impl ClassifyReport {
    pub fn new(name: Option<String>, cfg: &Configuration, rep: &StabilityReport) -> Self {
        let v = &rep.verdict;
        ClassifyReport {
            name,
            configuration: *cfg,
            verdict: v.verdict,
            justification: v.justification.tag(),
            exit_code: exit_code(v.verdict),
            equilibrium: rep.class.clone(),
            fixed_points: rep.map.as_ref().map(|m| m.fixed_points.clone()).unwrap_or_default(),
            endpoints: rep
                .map
                .as_ref()
                .map(|m| m.endpoints.to_vec())
                .unwrap_or_default(),
            witness_fixed_point: v.witness_fixed_point,
            max_g: rep.map.as_ref().and_then(|m| m.max_g()),
            samples: rep.map.as_ref().map_or(0, |m| m.samples.len()),
            notes: v.notes.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulationSummary {
    pub terminal: String,
    pub t_end: f64,
    pub t_f: Option<f64>,
    pub events: usize,
    pub impacts: usize,
    pub delta_max: f64,
    pub big_d_max: f64,
    pub small_d_max: f64,
    /// Ratio of consecutive section-crossing impact speeds.
    pub fitted_ratio: Option<f64>,
    pub mode_words: Vec<String>,
}

impl SimulationSummary {
    pub fn new(traj: &Trajectory) -> Self {
        let m = traj.metrics();
        let (terminal, t_end) = match traj.terminal {
            Terminal::Equilibrium(s) => ("Equilibrium", s.t),
            Terminal::ZenoTruncated(s) => ("ZenoTruncated", s.t),
            Terminal::Diverged { t, .. } => ("Diverged", t),
            Terminal::TimeOut { t } => ("TimeOut", t),
            Terminal::EventBudget { t } => ("EventBudget", t),
        };
        let speeds: Vec<f64> = traj.section_crossings().iter().map(|c| c.dz2).collect();
        SimulationSummary {
            terminal: terminal.into(),
            t_end,
            t_f: m.t_f,
            events: traj.events.len(),
            impacts: traj.impacts().count(),
            delta_max: m.delta_max,
            big_d_max: m.big_d_max,
            small_d_max: m.small_d_max,
            fitted_ratio: fitted_ratio(&speeds),
            mode_words: traj.mode_words().iter().map(|w| w.to_string()).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const A: &str = r#"{
  "name": "A",
  "rho_mm": 143.0,
  "h_mm": 134.1,
  "l1_mm": -51.2,
  "l2_mm": 168.8,
  "mu1": 0.315,
  "mu2": 1.0,
  "alpha_deg": 25.0
}"#;

    #[test]
    fn config_file_converts_units() {
        let (file, cfg) = load_config(A).unwrap();
        assert_eq!(file.name.as_deref(), Some("A"));
        assert!((cfg.rho - 0.143).abs() < 1e-15);
        assert!((cfg.l[0] + 0.0512).abs() < 1e-15);
        assert!((cfg.alpha - 25f64.to_radians()).abs() < 1e-15);
        assert!((cfg.f_ex - DEFAULT_GRAVITY).abs() < 1e-15);
    }

    #[test]
    fn invalid_value_reports_its_line() {
        let bad = A.replace("\"rho_mm\": 143.0", "\"rho_mm\": -1.0");
        match load_config(&bad) {
            Err(InputError::Invalid { line, key, .. }) => {
                assert_eq!(key, "rho_mm");
                assert_eq!(line, Some(3));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn syntax_error_reports_position() {
        let err = load_config("{\n  \"rho_mm\": 1,\n  oops\n}").unwrap_err();
        assert!(matches!(err, InputError::Syntax { line: 3, .. }));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let bad = A.replace("\"mu2\"", "\"mu3\"");
        assert!(load_config(&bad).is_err());
    }

    #[test]
    fn biped_file_defaults_round_trip() {
        let spec = load_biped("{}").unwrap();
        let back = BipedFile::from_spec(&spec).to_spec();
        assert!((back.leg_length - spec.leg_length).abs() < 1e-15);
        assert!((back.alpha - spec.alpha).abs() < 1e-15);
    }
}
