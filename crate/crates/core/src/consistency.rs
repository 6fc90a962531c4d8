//! Kinematic admissibility and consistency of contact modes under the ZOD,
//! and classification of the equilibrium `q = q̇ = 0`.
//!
//! Under the ZOD every mode has constant accelerations and forces, so the
//! consistency of a mode depends only on a small amount of discrete data: for
//! each contact whether it is separated or resting on the support, and the
//! direction of the tangential velocity at the resting contacts. Enumerating
//! these qualitative states is exact.

use serde::Serialize;

use crate::model::{mode_dynamics, ContactMode, Letter, ModeSolution, ZodTableau};

/// Relative tolerance of the inequality checks (forces relative to the load
/// scale, accelerations relative to load scale / mass).
pub const TOL_CONS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum Sign {
    Neg,
    Zero,
    Pos,
}

impl Sign {
    pub fn of(x: f64, tol: f64) -> Sign {
        if x > tol {
            Sign::Pos
        } else if x < -tol {
            Sign::Neg
        } else {
            Sign::Zero
        }
    }

    pub fn value(self) -> i8 {
        match self {
            Sign::Neg => -1,
            Sign::Zero => 0,
            Sign::Pos => 1,
        }
    }

    fn from_value(v: i8) -> Sign {
        match v.signum() {
            1 => Sign::Pos,
            -1 => Sign::Neg,
            _ => Sign::Zero,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum ContactStatus {
    /// Positive gap or separating velocity.
    Separated,
    /// Zero gap with approaching velocity. No continuous mode can act on
    /// such a contact before the impact is resolved; it is treated as
    /// separated by the consistency check.
    TouchingApproaching,
    /// Zero gap and zero normal velocity.
    TouchingResting,
}

/// Discrete data that decides mode consistency under the ZOD.
///
/// `slip` is the direction of the tangential velocity at the resting
/// contact(s): `ẋ2` when contact 2 rests, `ẋ1` when only contact 1 rests.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub struct QualitativeState {
    pub contacts: [ContactStatus; 2],
    pub slip: Sign,
}

impl QualitativeState {
    pub const REST: QualitativeState = QualitativeState {
        contacts: [ContactStatus::TouchingResting; 2],
        slip: Sign::Zero,
    };

    pub fn new(c1: ContactStatus, c2: ContactStatus, slip: Sign) -> Self {
        QualitativeState {
            contacts: [c1, c2],
            slip,
        }
    }

    pub fn resting(&self, i: usize) -> bool {
        self.contacts[i] == ContactStatus::TouchingResting
    }

    pub fn is_static(&self) -> bool {
        self.resting(0) && self.resting(1) && self.slip == Sign::Zero
    }

    /// Every qualitative state other than rest, without duplicates: the
    /// slip direction is irrelevant when both contacts are separated.
    pub fn non_static() -> Vec<QualitativeState> {
        use ContactStatus::{Separated as Sep, TouchingResting as Rest};
        let mut out = vec![QualitativeState::new(Sep, Sep, Sign::Zero)];
        for s in [Sign::Neg, Sign::Zero, Sign::Pos] {
            out.push(QualitativeState::new(Rest, Sep, s));
            out.push(QualitativeState::new(Sep, Rest, s));
        }
        out.push(QualitativeState::new(Rest, Rest, Sign::Neg));
        out.push(QualitativeState::new(Rest, Rest, Sign::Pos));
        out
    }

    /// Tangential velocity direction at contact `i` (meaningful when resting).
    fn contact_slip(&self, tab: &ZodTableau, i: usize) -> Sign {
        if self.resting(0) && self.resting(1) && i == 0 {
            let k = tab.two_contact_ratio().signum() as i8;
            Sign::from_value(k * self.slip.value())
        } else {
            self.slip
        }
    }
}

/// Kinematically admissible mode words.
///
/// With both contacts maintained the body has a single degree of freedom,
/// so `ẋ1 = k ẋ2` with `k` fixed by the geometry. This excludes the four
/// stick/slip mixtures and one pair of the two-contact slip words.
pub fn admissible_modes(tab: &ZodTableau) -> Vec<ContactMode> {
    let k = tab.two_contact_ratio();
    ContactMode::all()
        .filter(|mode| {
            let [a, b] = mode.0;
            match (a, b) {
                (Letter::F, _) | (_, Letter::F) => true,
                (Letter::S, Letter::S) => true,
                (Letter::S, _) | (_, Letter::S) => false,
                _ => f64::from(a.slip_sign()) * f64::from(b.slip_sign()) * k > 0.0,
            }
        })
        .collect()
}

/// Slack values for one mode at a qualitative state; `None` when the mode is
/// incompatible with the contact pattern or slip direction.
fn mode_slacks(
    tab: &ZodTableau,
    qs: &QualitativeState,
    sol: &ModeSolution,
) -> Option<Vec<f64>> {
    let fscale = tab.load_scale;
    let ascale = tab.load_scale / tab.m;
    let mut slacks = Vec::with_capacity(6);
    for i in 0..2 {
        let letter = sol.mode.letter(i);
        if !qs.resting(i) {
            if letter != Letter::F {
                return None;
            }
            continue;
        }
        let slip = qs.contact_slip(tab, i);
        match letter {
            Letter::F => slacks.push(sol.qdd[i] / ascale),
            Letter::S => {
                if slip != Sign::Zero {
                    return None;
                }
                let fz = sol.normal[i];
                let fx = sol.tangential[i];
                slacks.push(fz / fscale);
                slacks.push((tab.mu[i] * fz - fx.abs()) / fscale);
            }
            Letter::P | Letter::N => {
                let dir = letter.slip_sign();
                match slip {
                    Sign::Zero => {
                        // Slip onset: the contact must accelerate in the
                        // slip direction.
                        let acc = sol.tangential_accel(tab, i) * f64::from(dir);
                        slacks.push(acc / ascale);
                    }
                    s if s.value() != dir => return None,
                    _ => {}
                }
                slacks.push(sol.normal[i] / fscale);
            }
        }
    }
    Some(slacks)
}

/// All modes consistent at `qs`, in the order of [`ContactMode::all`].
///
/// An empty result means no mode is consistent (non-existence of forward
/// dynamics); several results at a non-static state indicate non-uniqueness.
/// SS is only tested at the static state.
pub fn consistent_modes(tab: &ZodTableau, qs: &QualitativeState) -> Vec<ModeSolution> {
    let mut out = Vec::new();
    for mode in admissible_modes(tab) {
        if mode == ContactMode::SS {
            if !qs.is_static() {
                continue;
            }
            if let Ok(mut sol) = mode_dynamics(tab, mode) {
                sol.consistent = sol.margin >= -TOL_CONS;
                sol.marginal = sol.margin.abs() <= TOL_CONS;
                if sol.consistent {
                    out.push(sol);
                }
            }
            continue;
        }
        let Ok(mut sol) = mode_dynamics(tab, mode) else {
            continue;
        };
        let Some(slacks) = mode_slacks(tab, qs, &sol) else {
            continue;
        };
        let min = slacks.iter().copied().fold(f64::INFINITY, f64::min);
        sol.margin = if min.is_finite() { min } else { f64::INFINITY };
        sol.consistent = slacks.iter().all(|&s| s >= -TOL_CONS);
        sol.marginal = slacks.iter().any(|&s| s.abs() <= TOL_CONS);
        if sol.consistent {
            out.push(sol);
        }
    }
    out
}

/// Consistent modes of every qualitative state, computed once per tableau.
///
/// Under the ZOD the answer depends only on the qualitative state, so a
/// simulation never needs to solve a mode twice.
#[derive(Debug, Clone)]
pub struct ModeLookup {
    entries: Vec<(QualitativeState, Vec<ModeSolution>)>,
}

impl ModeLookup {
    pub fn new(tab: &ZodTableau) -> Self {
        let mut states = QualitativeState::non_static();
        states.push(QualitativeState::REST);
        let entries = states
            .into_iter()
            .map(|qs| (qs, consistent_modes(tab, &qs)))
            .collect();
        ModeLookup { entries }
    }

    pub fn get(&self, qs: &QualitativeState) -> Option<&[ModeSolution]> {
        self.entries
            .iter()
            .find(|(s, _)| s == qs)
            .map(|(_, m)| m.as_slice())
    }
}

/// Classification of the equilibrium `q = q̇ = 0`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EquilibriumClass {
    pub is_equilibrium: bool,
    pub is_ambiguous: bool,
    pub ambiguity_witness: Option<ContactMode>,
    pub is_painleve_free: bool,
    pub is_persistent: bool,
    pub is_weakly_persistent: bool,
    /// Some decisive check lies within [`TOL_CONS`] of equality.
    pub marginal: bool,
    /// Static friction-cone margin of SS (normalised by the load scale).
    pub ss_margin: f64,
    /// Condition 1 of weak persistence per slip direction `[−, +]`: the
    /// unique consistent mode during two-contact slip keeps both contacts.
    pub two_contact_slip_persists: [bool; 2],
    /// Unique consistent mode during two-contact slip, per direction `[−, +]`.
    pub two_contact_slip_mode: [Option<ContactMode>; 2],
    /// Non-static qualitative states without exactly one consistent mode.
    pub painleve_states: Vec<QualitativeState>,
}

/// Evidence from the return map about whether two-contact slip in a given
/// direction can be reached (condition 2 of weak persistence).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SlipReachability {
    /// Per direction `[−, +]`: transition through a Zeno point is excluded
    /// by the endpoint behaviour of `R`.
    pub zeno_excluded: [bool; 2],
    /// Per direction `[−, +]`: no sampled cycle contains a slipping double
    /// impact in that direction.
    pub double_slip_excluded: [bool; 2],
}

/// Classify the equilibrium. Weak persistence needs return-map evidence for
/// directions where two-contact slip does not persist; without it those
/// directions count as failing.
pub fn classify_equilibrium(
    tab: &ZodTableau,
    reach: Option<&SlipReachability>,
) -> EquilibriumClass {
    let rest = consistent_modes(tab, &QualitativeState::REST);
    let ss = rest.iter().find(|s| s.mode == ContactMode::SS);
    let is_equilibrium = ss.is_some();
    let witness = if is_equilibrium {
        rest.iter().find(|s| s.mode != ContactMode::SS).map(|s| s.mode)
    } else {
        None
    };
    let ss_margin = mode_dynamics(tab, ContactMode::SS)
        .map(|s| s.margin)
        .unwrap_or(f64::NEG_INFINITY);
    let mut marginal = rest.iter().any(|s| s.marginal) || ss_margin.abs() <= TOL_CONS;

    let mut painleve_states = Vec::new();
    let mut persists = [false; 2];
    let mut slip_mode = [None; 2];
    for qs in QualitativeState::non_static() {
        let modes = consistent_modes(tab, &qs);
        if modes.len() != 1 {
            painleve_states.push(qs);
        }
        marginal |= modes.iter().any(|s| s.marginal);
        if qs.resting(0) && qs.resting(1) {
            let dir = usize::from(qs.slip == Sign::Pos);
            if modes.len() == 1 {
                slip_mode[dir] = Some(modes[0].mode);
                persists[dir] = modes[0].mode.is_two_contact_slip();
            }
        }
    }

    let is_ambiguous = witness.is_some();
    let is_persistent = persists[0] && persists[1];
    let is_weakly_persistent = is_equilibrium
        && !is_ambiguous
        && (0..2).all(|d| {
            persists[d]
                || reach
                    .map(|r| r.zeno_excluded[d] && r.double_slip_excluded[d])
                    .unwrap_or(false)
        });

    EquilibriumClass {
        is_equilibrium,
        is_ambiguous,
        ambiguity_witness: witness,
        is_painleve_free: painleve_states.is_empty(),
        is_persistent: is_equilibrium && !is_ambiguous && is_persistent,
        is_weakly_persistent,
        marginal,
        ss_margin,
        two_contact_slip_persists: persists,
        two_contact_slip_mode: slip_mode,
        painleve_states,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_tableau, Configuration, DEFAULT_GRAVITY};

    fn slope(l1: f64, l2: f64, rho: f64, mu1: f64, mu2: f64) -> ZodTableau {
        build_tableau(&Configuration::on_slope(
            1.0,
            rho,
            0.1341,
            l1,
            l2,
            mu1,
            mu2,
            25f64.to_radians(),
            DEFAULT_GRAVITY,
        ))
        .unwrap()
    }

    fn words(modes: &[ContactMode]) -> Vec<String> {
        let mut w: Vec<String> = modes.iter().map(|m| m.to_string()).collect();
        w.sort();
        w
    }

    #[test]
    fn slope_admissible_set() {
        let tab = slope(-0.0512, 0.1688, 0.143, 0.315, 1.0);
        let got = words(&admissible_modes(&tab));
        let mut want: Vec<String> = ["FF", "FS", "SF", "FP", "PF", "FN", "NF", "SS", "PP", "NN"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        want.sort();
        assert_eq!(got, want);
    }

    #[test]
    fn frictionless_slope_slides_downhill() {
        let tab = slope(-0.0512, 0.1688, 0.143, 0.0, 0.0);
        let modes = consistent_modes(&tab, &QualitativeState::REST);
        let names: Vec<String> = modes.iter().map(|m| m.mode.to_string()).collect();
        assert!(!names.contains(&"SS".to_string()));
        assert!(names.contains(&"PP".to_string()));
        let class = classify_equilibrium(&tab, None);
        assert!(!class.is_equilibrium);
    }

    #[test]
    fn config_a_rest_is_pure_stick() {
        let tab = slope(-0.0512, 0.1688, 0.143, 0.315, 1.0);
        let modes = consistent_modes(&tab, &QualitativeState::REST);
        assert_eq!(modes.len(), 1);
        assert_eq!(modes[0].mode, ContactMode::SS);
        assert!(modes[0].normal.iter().all(|&f| f > 0.0));
        for i in 0..2 {
            assert!(modes[0].tangential[i].abs() <= tab.mu[i] * modes[0].normal[i]);
        }
    }

    #[test]
    fn non_static_states_are_distinct() {
        let states = QualitativeState::non_static();
        assert_eq!(states.len(), 9);
        assert!(states.iter().all(|s| !s.is_static()));
    }
}
