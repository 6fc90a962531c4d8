//! Stability sweeps over the biped's centre-of-mass position.
//!
//! The centre of mass is moved along the slope by shifting the movable
//! cylinder (the second one) along the beam, and normal to it by changing the
//! leg length. Cells are evaluated in parallel; results keep grid order, so
//! the output does not depend on the number of threads.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::biped::{biped_to_configuration, BipedSpec};
use crate::poincare::{stability_verdict, GridSpec, Justification, StabilityVerdict, Verdict};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    /// Leg lengths (rows), m.
    pub leg_lengths: Vec<f64>,
    /// Positions of the movable cylinder along the beam (columns), m.
    pub cylinder_positions: Vec<f64>,
}

impl Default for SweepGrid {
    /// 5 leg lengths × 13 cylinder holes at 10 mm pitch.
    fn default() -> Self {
        SweepGrid {
            leg_lengths: (0..5).map(|j| 0.090 + 0.010 * j as f64).collect(),
            cylinder_positions: (0..13).map(|k| -0.060 + 0.010 * k as f64).collect(),
        }
    }
}

/// Coarse verdict class used for plotting stability regions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RegionClass {
    NoEquilibrium,
    Ambiguous,
    ReverseChatter,
    Stable,
    Other,
}

impl RegionClass {
    pub fn of(v: &StabilityVerdict) -> Self {
        match (v.verdict, v.justification) {
            (Verdict::NoEquilibrium, _) => RegionClass::NoEquilibrium,
            (Verdict::Unstable, Justification::Thm1Ambiguity) => RegionClass::Ambiguous,
            (Verdict::Unstable, _) => RegionClass::ReverseChatter,
            (Verdict::Stable, _) => RegionClass::Stable,
            _ => RegionClass::Other,
        }
    }

    /// Position in the ordering no equilibrium / ambiguity → reverse chatter
    /// → stable; `None` for classes outside it.
    pub fn rank(self) -> Option<u8> {
        match self {
            RegionClass::NoEquilibrium | RegionClass::Ambiguous => Some(0),
            RegionClass::ReverseChatter => Some(1),
            RegionClass::Stable => Some(2),
            RegionClass::Other => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepCell {
    pub leg_length: f64,
    pub cylinder_position: f64,
    /// Centre of mass relative to the midpoint between the feet, m.
    pub x_c: f64,
    pub z_c: f64,
    pub verdict: Option<Verdict>,
    pub justification: Option<Justification>,
    pub class: RegionClass,
    /// `(G*)²` of the witness fixed point, where one exists.
    pub gstar2: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepResult {
    pub mu1: f64,
    pub grid: SweepGrid,
    /// Row-major: `cells[row * columns + column]`.
    pub cells: Vec<SweepCell>,
}

impl SweepResult {
    pub fn columns(&self) -> usize {
        self.grid.cylinder_positions.len()
    }

    pub fn rows(&self) -> usize {
        self.grid.leg_lengths.len()
    }

    pub fn cell(&self, row: usize, column: usize) -> &SweepCell {
        &self.cells[row * self.columns() + column]
    }

    /// CSV with columns `x_c, z_c, verdict, justification, Gstar2` (lengths
    /// in mm), plus the grid indices and any per-cell error.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("row,column,x_c,z_c,verdict,justification,Gstar2,error\n");
        for (k, c) in self.cells.iter().enumerate() {
            let _ = writeln!(
                out,
                "{},{},{:.4},{:.4},{},{},{},{}",
                k / self.columns(),
                k % self.columns(),
                c.x_c * 1e3,
                c.z_c * 1e3,
                c.verdict.map(|v| format!("{v:?}")).unwrap_or_default(),
                c.justification.map(|j| j.tag()).unwrap_or(""),
                c.gstar2.map(|g| format!("{g:.8}")).unwrap_or_default(),
                c.error.as_deref().unwrap_or("").replace(',', ";"),
            );
        }
        out
    }
}

fn evaluate(spec: &BipedSpec, rg: &GridSpec) -> SweepCell {
    let mut cell = SweepCell {
        leg_length: spec.leg_length,
        cylinder_position: spec.cylinder_positions[1],
        x_c: f64::NAN,
        z_c: f64::NAN,
        verdict: None,
        justification: None,
        class: RegionClass::Other,
        gstar2: None,
        error: None,
    };
    let result = spec.com().and_then(|(x, z)| {
        cell.x_c = x;
        cell.z_c = z;
        stability_verdict(&biped_to_configuration(spec)?, rg)
    });
    match result {
        Ok(v) => {
            cell.class = RegionClass::of(&v);
            cell.gstar2 = v.witness_fixed_point.map(|f| f.g * f.g);
            cell.verdict = Some(v.verdict);
            cell.justification = Some(v.justification);
        }
        Err(e) => cell.error = Some(e.to_string()),
    }
    cell
}

/// Evaluate the verdict on every grid cell for each friction coefficient of
/// the uphill foot.
pub fn run_sweep(base: &BipedSpec, grid: &SweepGrid, mu1_list: &[f64], rg: &GridSpec) -> Vec<SweepResult> {
    mu1_list
        .iter()
        .map(|&mu1| {
            let specs: Vec<BipedSpec> = grid
                .leg_lengths
                .iter()
                .flat_map(|&leg| {
                    grid.cylinder_positions.iter().map(move |&c| BipedSpec {
                        leg_length: leg,
                        cylinder_positions: [base.cylinder_positions[0], c],
                        mu: [mu1, base.mu[1]],
                        ..base.clone()
                    })
                })
                .collect();
            SweepResult {
                mu1,
                grid: grid.clone(),
                cells: specs.par_iter().map(|s| evaluate(s, rg)).collect(),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GrowthCurve {
    pub leg_length: f64,
    pub mu1: f64,
    /// `(x_c, (G*)²)` in order of increasing cylinder position.
    pub points: Vec<(f64, Option<f64>)>,
}

impl GrowthCurve {
    /// `x_c` where `(G*)²` crosses one, by linear interpolation between the
    /// first pair of consecutive defined points that straddle it.
    pub fn crossings(&self) -> Vec<f64> {
        let defined: Vec<(f64, f64)> = self
            .points
            .iter()
            .filter_map(|&(x, g)| Some((x, g?)))
            .collect();
        defined
            .windows(2)
            .filter(|w| (w[0].1 - 1.0) * (w[1].1 - 1.0) < 0.0)
            .map(|w| w[0].0 + (1.0 - w[0].1) * (w[1].0 - w[0].0) / (w[1].1 - w[0].1))
            .collect()
    }

    /// Strictly decreasing over the defined points.
    pub fn is_decreasing(&self) -> bool {
        let g: Vec<f64> = self.points.iter().filter_map(|p| p.1).collect();
        g.windows(2).all(|w| w[1] < w[0])
    }
}

/// `(G*)²` against `x_c` for one leg length, over the given cylinder
/// positions, for each friction coefficient of the uphill foot.
pub fn growth_curves(
    base: &BipedSpec,
    leg_length: f64,
    cylinder_positions: &[f64],
    mu1_list: &[f64],
    rg: &GridSpec,
) -> Vec<GrowthCurve> {
    let grid = SweepGrid {
        leg_lengths: vec![leg_length],
        cylinder_positions: cylinder_positions.to_vec(),
    };
    run_sweep(base, &grid, mu1_list, rg)
        .into_iter()
        .map(|r| GrowthCurve {
            leg_length,
            mu1: r.mu1,
            points: r
                .cells
                .iter()
                .map(|c| {
                    let g = match c.class {
                        RegionClass::ReverseChatter | RegionClass::Stable => c.gstar2,
                        _ => None,
                    };
                    (c.x_c, g)
                })
                .collect(),
        })
        .collect()
}

/// Long-format CSV `x_c, mu1, Gstar2` (x_c in mm) of several curves.
pub fn curves_to_csv(curves: &[GrowthCurve]) -> String {
    let mut out = String::from("leg_length,mu1,x_c,Gstar2\n");
    for c in curves {
        for (x, g) in &c.points {
            let _ = writeln!(
                out,
                "{:.1},{},{:.4},{}",
                c.leg_length * 1e3,
                c.mu1,
                x * 1e3,
                g.map(|v| format!("{v:.8}")).unwrap_or_default()
            );
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_grid_is_thirteen_by_five() {
        let g = SweepGrid::default();
        assert_eq!(g.leg_lengths.len(), 5);
        assert_eq!(g.cylinder_positions.len(), 13);
    }

    #[test]
    fn crossing_is_interpolated() {
        let c = GrowthCurve {
            leg_length: 0.11,
            mu1: 0.3,
            points: vec![(0.0, Some(1.5)), (1.0, Some(0.5)), (2.0, None)],
        };
        assert_eq!(c.crossings(), vec![0.5]);
        assert!(c.is_decreasing());
    }

    #[test]
    fn rank_orders_classes() {
        assert!(RegionClass::Ambiguous.rank() < RegionClass::ReverseChatter.rank());
        assert!(RegionClass::ReverseChatter.rank() < RegionClass::Stable.rank());
        assert_eq!(RegionClass::Other.rank(), None);
    }
}
