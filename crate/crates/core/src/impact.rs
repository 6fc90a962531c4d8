//! Ideally inelastic frictional impacts.
//!
//! A candidate solution is described by its active set (contacts that take a
//! normal impulse and stop, `ż_i⁺ = 0`) and the tangential regime of each
//! active contact. Touching contacts outside the active set are passive: no
//! impulse, and they must not approach, `ż_i⁺ ≥ 0`. Candidates are tried in a
//! fixed order of preference and the first one satisfying every inequality
//! is returned:
//!
//! 1. both contacts active, then contact 1 alone, then contact 2 alone;
//! 2. within an active set, sticking before slipping, positive slip before
//!    negative slip.
//!
//! The velocity jump reuses the force columns of the ZOD tableau, so
//! `q̇⁺ = q̇⁻ + W ĵ` with `W = [B1z B1x B2z B2x]` and `ĵ = (ĵ1z, ĵ1x, ĵ2z, ĵ2x)`.

use nalgebra::{SMatrix, SVector, Vector3, Vector4};
use serde::Serialize;
use thiserror::Error;

use crate::cone;
use crate::model::{ContactState, ZodTableau, TOL_PEN};

/// Relative tolerance of the impact inequalities (velocities relative to the
/// pre-impact speed, impulses relative to mass times that speed).
pub const TOL_IMPACT: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum TangentialRegime {
    Stick,
    SlipPos,
    SlipNeg,
}

impl TangentialRegime {
    pub fn slip_sign(self) -> f64 {
        match self {
            TangentialRegime::Stick => 0.0,
            TangentialRegime::SlipPos => 1.0,
            TangentialRegime::SlipNeg => -1.0,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ImpactError {
    #[error("no contact is touching and approaching (ż = {dz:?})")]
    NoImpact { dz: [f64; 2] },
    #[error("no candidate satisfies the impact law (pre-impact velocity {dq:?}, touching {touching:?})")]
    NoConsistentImpact { dq: [f64; 3], touching: [bool; 2] },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ImpactOutcome {
    /// `(ż1⁺, ż2⁺, ẋ2⁺)`.
    pub post: [f64; 3],
    /// `(ĵ1z, ĵ1x, ĵ2z, ĵ2x)`.
    pub impulses: [f64; 4],
    pub active: [bool; 2],
    /// Tangential regime of each active contact.
    pub regime: [Option<TangentialRegime>; 2],
    /// Slip direction of a double impact with both contacts slipping.
    pub slipping_double: Option<i8>,
    /// Number of candidates satisfying the impact law; more than one means
    /// the preference order resolved an ambiguity.
    pub alternatives: usize,
}

impl ImpactOutcome {
    pub fn post_velocity(&self) -> Vector3<f64> {
        Vector3::from(self.post)
    }

    pub fn is_double(&self) -> bool {
        self.active[0] && self.active[1]
    }
}

/// One entry of the preference order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Candidate {
    pub active: [bool; 2],
    pub regime: [Option<TangentialRegime>; 2],
}

/// All candidates compatible with the touching contacts, most preferred first.
pub fn candidates(tab: &ZodTableau, touching: [bool; 2]) -> Vec<Candidate> {
    use TangentialRegime::*;
    let mut out = Vec::new();
    if touching[0] && touching[1] {
        out.push(Candidate {
            active: [true, true],
            regime: [Some(Stick), Some(Stick)],
        });
        // With both normal velocities zero, ẋ1 = k ẋ2: slip directions are tied.
        let k = tab.two_contact_ratio().signum();
        for (r2, s) in [(SlipPos, 1.0), (SlipNeg, -1.0)] {
            let r1 = if k * s > 0.0 { SlipPos } else { SlipNeg };
            out.push(Candidate {
                active: [true, true],
                regime: [Some(r1), Some(r2)],
            });
        }
    }
    for i in 0..2 {
        if !touching[i] {
            continue;
        }
        for r in [Stick, SlipPos, SlipNeg] {
            let mut c = Candidate {
                active: [false; 2],
                regime: [None; 2],
            };
            c.active[i] = true;
            c.regime[i] = Some(r);
            out.push(c);
        }
    }
    out
}

struct Solved {
    post: Vector3<f64>,
    impulses: Vector4<f64>,
}

fn tangential_row(tab: &ZodTableau, i: usize) -> Vector3<f64> {
    if i == 0 {
        tab.x1_row
    } else {
        Vector3::new(0.0, 0.0, 1.0)
    }
}

/// Solve the equalities of a candidate and test its inequalities. Returns
/// `None` if the candidate is singular or violates the impact law.
fn try_candidate(
    tab: &ZodTableau,
    dq: &Vector3<f64>,
    touching: [bool; 2],
    c: &Candidate,
) -> Option<Solved> {
    let w = tab.force_matrix();
    let vscale = dq.amax();
    let tol_v = TOL_IMPACT * vscale;
    let tol_j = TOL_IMPACT * vscale * tab.m;

    let sticking_double = c.active == [true, true]
        && c.regime == [Some(TangentialRegime::Stick); 2];
    let solved = if sticking_double {
        // Post velocity is zero; the impulse split is indeterminate.
        let sol = cone::max_margin(&w, &(-dq), tab.mu);
        if sol.margin < -tol_j {
            return None;
        }
        let j = Vector4::from(sol.forces);
        Solved {
            post: Vector3::zeros(),
            impulses: j,
        }
    } else {
        // Unknowns (q̇⁺, ĵ1z, ĵ1x, ĵ2z, ĵ2x).
        let mut a = SMatrix::<f64, 7, 7>::zeros();
        let mut rhs = SVector::<f64, 7>::zeros();
        for r in 0..3 {
            a[(r, r)] = 1.0;
            for col in 0..4 {
                a[(r, 3 + col)] = -w[(r, col)];
            }
            rhs[r] = dq[r];
        }
        for i in 0..2 {
            let (row, jz, jx) = (3 + 2 * i, 3 + 2 * i, 4 + 2 * i);
            match c.regime[i] {
                None => {
                    a[(row, jz)] = 1.0;
                    a[(row + 1, jx)] = 1.0;
                }
                Some(TangentialRegime::Stick) => {
                    a[(row, i)] = 1.0;
                    let t = tangential_row(tab, i);
                    for k in 0..3 {
                        a[(row + 1, k)] = t[k];
                    }
                }
                Some(r) => {
                    a[(row, i)] = 1.0;
                    a[(row + 1, jx)] = 1.0;
                    a[(row + 1, jz)] = r.slip_sign() * tab.mu[i];
                }
            }
        }
        let u = a.lu().solve(&rhs)?;
        if !u.iter().all(|x| x.is_finite()) {
            return None;
        }
        Solved {
            post: Vector3::new(u[0], u[1], u[2]),
            impulses: Vector4::new(u[3], u[4], u[5], u[6]),
        }
    };

    for i in 0..2 {
        let (jz, jx) = (solved.impulses[2 * i], solved.impulses[2 * i + 1]);
        match c.regime[i] {
            None => {
                if touching[i] && solved.post[i] < -tol_v {
                    return None;
                }
            }
            Some(r) => {
                if jz < -tol_j {
                    return None;
                }
                match r {
                    TangentialRegime::Stick => {
                        if !sticking_double && tab.mu[i] * jz - jx.abs() < -tol_j {
                            return None;
                        }
                    }
                    _ => {
                        let xt = tangential_row(tab, i).dot(&solved.post);
                        if r.slip_sign() * xt < -tol_v {
                            return None;
                        }
                    }
                }
            }
        }
    }
    Some(solved)
}

/// Resolve an impact from generalized velocities and the set of touching
/// contacts (zero gap). At least one touching contact must approach.
pub fn resolve_velocities(
    tab: &ZodTableau,
    dq: &Vector3<f64>,
    touching: [bool; 2],
) -> Result<ImpactOutcome, ImpactError> {
    if !(0..2).any(|i| touching[i] && dq[i] < 0.0) {
        return Err(ImpactError::NoImpact {
            dz: [dq[0], dq[1]],
        });
    }
    let mut chosen: Option<(Candidate, Solved)> = None;
    let mut alternatives = 0;
    for c in candidates(tab, touching) {
        if let Some(s) = try_candidate(tab, dq, touching, &c) {
            alternatives += 1;
            if chosen.is_none() {
                chosen = Some((c, s));
            }
        }
    }
    let Some((c, mut s)) = chosen else {
        return Err(ImpactError::NoConsistentImpact {
            dq: [dq[0], dq[1], dq[2]],
            touching,
        });
    };
    // Inelastic contacts stop exactly.
    for i in 0..2 {
        if c.active[i] {
            s.post[i] = 0.0;
        }
    }
    let slipping_double = if c.active == [true, true] {
        match c.regime[1] {
            Some(TangentialRegime::SlipPos) => Some(1),
            Some(TangentialRegime::SlipNeg) => Some(-1),
            _ => None,
        }
    } else {
        None
    };
    Ok(ImpactOutcome {
        post: [s.post[0], s.post[1], s.post[2]],
        impulses: [s.impulses[0], s.impulses[1], s.impulses[2], s.impulses[3]],
        active: c.active,
        regime: c.regime,
        slipping_double,
        alternatives,
    })
}

/// Resolve the impact of a pre-impact state. Contacts with a gap of at most
/// the penetration tolerance count as touching.
pub fn resolve_impact(tab: &ZodTableau, pre: &ContactState) -> Result<ImpactOutcome, ImpactError> {
    let touching = [pre.q[0] <= TOL_PEN, pre.q[1] <= TOL_PEN];
    resolve_velocities(tab, &pre.dq, touching)
}

/// Kinetic energy lost in the impact, `T(q̇⁻) − T(q̇⁺)`, J.
pub fn energy_balance(tab: &ZodTableau, pre: &ContactState, out: &ImpactOutcome) -> f64 {
    tab.kinetic_energy(&pre.dq) - tab.kinetic_energy(&out.post_velocity())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_tableau, Configuration, DEFAULT_GRAVITY};
    use approx::assert_relative_eq;

    fn tab_a() -> ZodTableau {
        build_tableau(&Configuration::on_slope(
            1.0,
            0.1430,
            0.1341,
            -0.0512,
            0.1688,
            0.3150,
            1.0,
            25f64.to_radians(),
            DEFAULT_GRAVITY,
        ))
        .unwrap()
    }

    #[test]
    fn normal_stop_without_tangential_motion() {
        // Contact 2 straight below the centre of mass: a normal impulse there
        // creates no rotation, so a falling body stops without friction.
        let tab = build_tableau(&Configuration::on_slope(
            2.0, 0.1, 0.1, -0.1, 0.0, 0.5, 0.5, 0.0, DEFAULT_GRAVITY,
        ))
        .unwrap();
        let pre = ContactState {
            q: Vector3::new(0.01, 0.0, 0.0),
            dq: Vector3::new(-1.0, -1.0, 0.0),
            t: 0.0,
        };
        let out = resolve_impact(&tab, &pre).unwrap();
        assert_eq!(out.active, [false, true]);
        assert_eq!(out.regime[1], Some(TangentialRegime::Stick));
        assert!(out.post_velocity().norm() < 1e-12);
        assert!(out.impulses[3].abs() < 1e-12);
        assert_relative_eq!(out.impulses[2], 2.0, epsilon = 1e-12);
        // Inelastic stop of a translating body: ½ m v².
        assert_relative_eq!(energy_balance(&tab, &pre, &out), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn resting_contact_is_not_an_impact() {
        let tab = tab_a();
        let pre = ContactState::equilibrium();
        assert!(matches!(
            resolve_impact(&tab, &pre),
            Err(ImpactError::NoImpact { .. })
        ));
    }

    #[test]
    fn double_candidates_come_first() {
        let tab = tab_a();
        let c = candidates(&tab, [true, true]);
        assert_eq!(c.len(), 9);
        assert_eq!(c[0].active, [true, true]);
        assert_eq!(c[0].regime, [Some(TangentialRegime::Stick); 2]);
        // On a slope both contacts share their slip direction.
        assert_eq!(c[1].regime[0], c[1].regime[1]);
        assert_eq!(c[3].active, [true, false]);
    }
}
