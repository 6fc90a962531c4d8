//! Event-driven simulation under the zero-order dynamics.
//!
//! Every contact mode has constant accelerations, so between events the
//! generalized coordinates are exact quadratics in time and events (touchdown,
//! end of slip) are located in closed form. Impacts are resolved with
//! [`crate::impact`]. Infinite impact sequences accumulating in finite time
//! (Zeno behaviour) are detected from the geometric decay of the impact
//! speeds and projected to their limit state.
//!
//! All tolerances are relative to the current velocity or time scale, so a
//! trajectory started from a state with velocities scaled by `s` and positions
//! by `s²` visits the same mode sequence with times scaled by `s`.

use std::fmt::Write as _;

use nalgebra::Vector3;
use serde::Serialize;
use thiserror::Error;

use crate::consistency::{consistent_modes, ContactStatus, ModeLookup, QualitativeState, Sign};
use crate::impact::{resolve_velocities, ImpactError, ImpactOutcome};
use crate::model::{
    build_tableau, ContactMode, ContactState, Letter, ModelError, Configuration, ZodTableau,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SimOptions {
    /// Simulated time budget, s.
    pub t_max: f64,
    pub max_events: usize,
    /// Stop as diverged once `Δ` exceeds this multiple of the initial `Δ`.
    pub divergence_factor: f64,
    /// Number of consecutive decaying impacts required to declare Zeno.
    pub n_zeno: usize,
    /// Zeno is declared once impact speeds drop below this fraction of the
    /// first impact speed.
    pub zeno_speed_ratio: f64,
    /// Continue from the Zeno limit state; otherwise stop there.
    pub project_zeno: bool,
    /// Events closer than this fraction of the event time are simultaneous.
    pub rel_time_tol: f64,
    /// Velocities below this fraction of the current speed scale are zero.
    pub rel_vel_tol: f64,
    /// Normal approach speeds below this fraction of the speed scale are
    /// grazing contacts and not impacts.
    pub rel_graze_tol: f64,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions {
            t_max: 10.0,
            max_events: 200_000,
            divergence_factor: 10.0,
            n_zeno: 8,
            zeno_speed_ratio: 1e-7,
            project_zeno: true,
            rel_time_tol: 1e-9,
            rel_vel_tol: 1e-11,
            rel_graze_tol: 1e-10,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Impact(#[from] ImpactError),
    #[error("at t = {t:e} s: {count} consistent contact modes for {state:?}")]
    PainleveEncountered {
        t: f64,
        state: QualitativeState,
        count: usize,
    },
    #[error("no progress in event localisation at t = {t:e} s")]
    EventStall { t: f64 },
    #[error("initial state penetrates the support (z = {z:?})")]
    Inadmissible { z: [f64; 2] },
}

/// One interval of constant-acceleration motion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Segment {
    pub mode: ContactMode,
    pub t0: f64,
    pub t1: f64,
    pub q0: [f64; 3],
    pub dq0: [f64; 3],
    pub qdd: [f64; 3],
}

impl Segment {
    pub fn state_at(&self, t: f64) -> ContactState {
        let s = t - self.t0;
        let mut q = [0.0; 3];
        let mut dq = [0.0; 3];
        for k in 0..3 {
            q[k] = self.q0[k] + self.dq0[k] * s + 0.5 * self.qdd[k] * s * s;
            dq[k] = self.dq0[k] + self.qdd[k] * s;
        }
        ContactState {
            q: q.into(),
            dq: dq.into(),
            t,
        }
    }

    /// Largest value of `√z_i`, `√|x2|`, `|q̇_k|` on the segment, computed
    /// from the quadratics rather than by sampling. Returns `(Δ, D, d)`.
    pub fn peak_metrics(&self) -> (f64, f64, f64) {
        let dur = self.t1 - self.t0;
        let mut q_peak = [0.0f64; 3];
        let mut v_peak = [0.0f64; 3];
        for k in 0..3 {
            let (q0, v0, a) = (self.q0[k], self.dq0[k], self.qdd[k]);
            let at = |s: f64| q0 + v0 * s + 0.5 * a * s * s;
            let mut m = at(0.0).abs().max(at(dur).abs());
            if a != 0.0 {
                let s = -v0 / a;
                if s > 0.0 && s < dur {
                    m = m.max(at(s).abs());
                }
            }
            q_peak[k] = m;
            v_peak[k] = v0.abs().max((v0 + a * dur).abs());
        }
        let d = q_peak[0]
            .sqrt()
            .max(q_peak[1].sqrt())
            .max(v_peak[0])
            .max(v_peak[1]);
        let big_d = d.max(v_peak[2]);
        (big_d.max(q_peak[2].sqrt()), big_d, d)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum EventKind {
    /// Contacts with `ż_i⁻ < 0` and the resolved impact.
    Impact {
        contacts: [bool; 2],
        outcome: ImpactOutcome,
    },
    ModeSwitch {
        from: ContactMode,
        to: ContactMode,
    },
    ZenoPoint {
        /// Fitted per-cycle decay ratio of the impact speeds.
        ratio: f64,
    },
    Stop,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Event {
    pub t: f64,
    pub kind: EventKind,
    pub pre: ContactState,
    pub post: ContactState,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Terminal {
    /// Static two-contact equilibrium reached at the given state.
    Equilibrium(ContactState),
    /// Stopped at a Zeno point (projection disabled).
    ZenoTruncated(ContactState),
    /// `Δ` exceeded the divergence threshold.
    Diverged { t: f64, delta: f64 },
    TimeOut { t: f64 },
    EventBudget { t: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trajectory {
    pub initial: ContactState,
    pub segments: Vec<Segment>,
    pub events: Vec<Event>,
    pub terminal: Terminal,
}

/// Pointwise pseudo-metrics of a trajectory.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FtlsMetrics {
    pub delta_max: f64,
    pub big_d_max: f64,
    pub small_d_max: f64,
    /// `(t, Δ, D, d)` at every event.
    pub series: Vec<[f64; 4]>,
    /// Time at which a static state was reached, if any.
    pub t_f: Option<f64>,
}

/// A crossing of the Poincaré section: contact 2 hits the support while
/// contact 1 rests on it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SectionCrossing {
    pub t: f64,
    pub dz2: f64,
    pub dx2: f64,
    pub x2: f64,
}

impl SectionCrossing {
    pub fn angle(&self) -> f64 {
        (self.dx2 / self.dz2.abs()).atan()
    }
}

impl Trajectory {
    pub fn metrics(&self) -> FtlsMetrics {
        let mut out = FtlsMetrics {
            delta_max: self.initial.delta(),
            big_d_max: self.initial.big_d(),
            small_d_max: self.initial.small_d(),
            series: vec![[
                self.initial.t,
                self.initial.delta(),
                self.initial.big_d(),
                self.initial.small_d(),
            ]],
            t_f: None,
        };
        for seg in &self.segments {
            let (a, b, c) = seg.peak_metrics();
            out.delta_max = out.delta_max.max(a);
            out.big_d_max = out.big_d_max.max(b);
            out.small_d_max = out.small_d_max.max(c);
        }
        for e in &self.events {
            for s in [&e.pre, &e.post] {
                out.delta_max = out.delta_max.max(s.delta());
                out.big_d_max = out.big_d_max.max(s.big_d());
                out.small_d_max = out.small_d_max.max(s.small_d());
            }
            out.series
                .push([e.t, e.post.delta(), e.post.big_d(), e.post.small_d()]);
        }
        if let Terminal::Equilibrium(s) = self.terminal {
            out.t_f = Some(s.t);
        }
        out
    }

    pub fn impacts(&self) -> impl Iterator<Item = (&Event, &ImpactOutcome)> {
        self.events.iter().filter_map(|e| match &e.kind {
            EventKind::Impact { outcome, .. } => Some((e, outcome)),
            _ => None,
        })
    }

    /// Pre-impact states on the Poincaré section, in time order.
    pub fn section_crossings(&self) -> Vec<SectionCrossing> {
        self.events
            .iter()
            .filter(|e| matches!(e.kind, EventKind::Impact { .. }) && on_section(&e.pre))
            .map(|e| SectionCrossing {
                t: e.t,
                dz2: e.pre.dq[1],
                dx2: e.pre.dq[2],
                x2: e.pre.q[2],
            })
            .collect()
    }

    /// Mode words of the continuous segments with zero-length segments
    /// removed and repeats merged.
    pub fn mode_words(&self) -> Vec<ContactMode> {
        let mut out: Vec<ContactMode> = Vec::new();
        for s in &self.segments {
            if s.t1 <= s.t0 {
                continue;
            }
            if out.last() != Some(&s.mode) {
                out.push(s.mode);
            }
        }
        out
    }

    /// Sequence of event labels: mode words of segments interleaved with
    /// `I1`, `I2`, `II` impact markers.
    pub fn event_words(&self) -> Vec<String> {
        let mut items: Vec<(f64, u8, String)> = Vec::new();
        for s in &self.segments {
            if s.t1 > s.t0 {
                items.push((s.t0, 1, s.mode.to_string()));
            }
        }
        for e in &self.events {
            if let EventKind::Impact { outcome, .. } = &e.kind {
                let w = match outcome.active {
                    [true, true] => "II",
                    [true, false] => "I1",
                    _ => "I2",
                };
                items.push((e.t, 0, w.to_string()));
            }
        }
        items.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut out: Vec<String> = Vec::new();
        for (_, _, w) in items {
            if out.last() != Some(&w) {
                out.push(w);
            }
        }
        out
    }

    pub fn state_at(&self, t: f64) -> ContactState {
        let idx = self.segments.partition_point(|s| s.t1 < t);
        match self.segments.get(idx) {
            Some(seg) if seg.t0 <= t => seg.state_at(t),
            _ => match self.segments.last() {
                Some(seg) => seg.state_at(seg.t1),
                None => self.initial,
            },
        }
    }

    /// CSV with columns `t, z1, z2, x2, dz1, dz2, dx2, mode, event`: one row
    /// per event plus rows every `sample_period` seconds when given.
    pub fn to_csv(&self, sample_period: Option<f64>) -> String {
        let mut rows: Vec<(f64, u8, ContactState, String, String)> = Vec::new();
        rows.push((
            self.initial.t,
            0,
            self.initial,
            self.segments
                .first()
                .map(|s| s.mode.to_string())
                .unwrap_or_default(),
            "Start".into(),
        ));
        for e in &self.events {
            let label = match &e.kind {
                EventKind::Impact { outcome, .. } => match outcome.active {
                    [true, true] => "Impact12".to_string(),
                    [true, false] => "Impact1".to_string(),
                    _ => "Impact2".to_string(),
                },
                EventKind::ModeSwitch { from, to } => format!("ModeSwitch {from}->{to}"),
                EventKind::ZenoPoint { .. } => "ZenoPoint".into(),
                EventKind::Stop => "Stop".into(),
            };
            let mode = self
                .segments
                .iter()
                .find(|s| s.t0 >= e.t)
                .map(|s| s.mode.to_string())
                .unwrap_or_default();
            rows.push((e.t, 1, e.post, mode, label));
        }
        if let Some(dt) = sample_period.filter(|d| *d > 0.0) {
            for seg in &self.segments {
                let mut k = (seg.t0 / dt).ceil();
                while k * dt < seg.t1 {
                    let t = k * dt;
                    rows.push((t, 2, seg.state_at(t), seg.mode.to_string(), String::new()));
                    k += 1.0;
                }
            }
        }
        rows.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut out = String::from("t,z1,z2,x2,dz1,dz2,dx2,mode,event\n");
        for (t, _, s, mode, ev) in rows {
            let _ = writeln!(
                out,
                "{t:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{mode},{ev}",
                s.q[0], s.q[1], s.q[2], s.dq[0], s.dq[1], s.dq[2]
            );
        }
        out
    }
}

/// State on the section: `z1 = z2 = 0`, `ż1 = 0`, `ż2 < 0`.
pub fn on_section(s: &ContactState) -> bool {
    s.q[0] == 0.0 && s.q[1] == 0.0 && s.dq[0] == 0.0 && s.dq[1] < 0.0
}

/// Discrete data of a state relevant to mode consistency.
pub fn qualitative_state(tab: &ZodTableau, s: &ContactState) -> QualitativeState {
    let status = |i: usize| {
        if s.q[i] > 0.0 || (s.q[i] == 0.0 && s.dq[i] > 0.0) {
            ContactStatus::Separated
        } else if s.dq[i] < 0.0 {
            ContactStatus::TouchingApproaching
        } else {
            ContactStatus::TouchingResting
        }
    };
    let contacts = [status(0), status(1)];
    let rest = |i: usize| contacts[i] == ContactStatus::TouchingResting;
    let slip = if rest(1) {
        Sign::of(s.dq[2], 0.0)
    } else if rest(0) {
        Sign::of(tab.tangential_rate(0, &s.dq), 0.0)
    } else {
        Sign::Zero
    };
    QualitativeState { contacts, slip }
}

/// Result of testing the recent impacts for Zeno behaviour.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZenoPoint {
    /// Accumulation time of the impact sequence.
    pub t: f64,
    /// Per-cycle decay ratio of the impact speeds.
    pub ratio: f64,
    pub x2: f64,
    pub dx2: f64,
}

/// One impact for Zeno detection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImpactRecord {
    pub t: f64,
    /// Normal approach speed.
    pub speed: f64,
    /// Post-impact tangential position and velocity of contact 2.
    pub x2: f64,
    pub dx2: f64,
}

/// Detect geometric decay over the last `n` impacts.
///
/// Impacts usually alternate between the contacts, so ratios are taken with a
/// lag of two impacts (one cycle). Zeno is declared when the last `n` cycle
/// ratios of both speed and duration are below one and the latest speed is
/// below `v_zeno`. The accumulation time and the tangential limit state are
/// extrapolated as geometric series.
pub fn detect_zeno(recent: &[ImpactRecord], n: usize, v_zeno: f64) -> Option<ZenoPoint> {
    let len = recent.len();
    if n < 2 || len < n + 4 {
        return None;
    }
    let last = &recent[len - 1];
    if !(last.speed < v_zeno) {
        return None;
    }
    let cycle = |k: usize| recent[k].t - recent[k - 2].t;
    for k in (len - n)..len {
        if !(recent[k].speed < recent[k - 2].speed) {
            return None;
        }
        if !(cycle(k) < cycle(k - 2)) {
            return None;
        }
    }
    let r = cycle(len - 1) / cycle(len - 3);
    if !(r > 0.0 && r < 1.0) {
        return None;
    }
    let tail = r / (1.0 - r);
    let t = last.t + cycle(len - 1) * tail;
    let dx = last.dx2 - recent[len - 3].dx2;
    let x = last.x2 - recent[len - 3].x2;
    Some(ZenoPoint {
        t,
        ratio: (last.speed / recent[len - 3].speed),
        x2: last.x2 + x * tail,
        dx2: last.dx2 + dx * tail,
    })
}

/// Why [`Engine::advance`] stopped.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Step {
    /// An event was processed; the state moved on.
    Event,
    Terminal(Terminal),
}

/// Incremental simulator shared by [`simulate`] and the return-map evaluation.
pub(crate) struct Engine<'a> {
    pub tab: &'a ZodTableau,
    lookup: std::borrow::Cow<'a, ModeLookup>,
    pub opts: SimOptions,
    pub state: ContactState,
    pub traj: Trajectory,
    pub impacts: Vec<ImpactRecord>,
    /// Reference impact speed (first impact), for Zeno detection.
    v_ref: Option<f64>,
    delta_stop: f64,
    stall: usize,
    last_mode: Option<ContactMode>,
}

impl<'a> Engine<'a> {
    pub fn new(tab: &'a ZodTableau, initial: ContactState, opts: SimOptions) -> Result<Self, SimError> {
        Self::with_lookup(tab, std::borrow::Cow::Owned(ModeLookup::new(tab)), initial, opts)
    }

    pub fn with_lookup(
        tab: &'a ZodTableau,
        lookup: std::borrow::Cow<'a, ModeLookup>,
        initial: ContactState,
        opts: SimOptions,
    ) -> Result<Self, SimError> {
        if initial.q[0] < -crate::model::TOL_PEN || initial.q[1] < -crate::model::TOL_PEN {
            return Err(SimError::Inadmissible {
                z: [initial.q[0], initial.q[1]],
            });
        }
        let mut state = initial;
        for i in 0..2 {
            if state.q[i] < 0.0 {
                state.q[i] = 0.0;
            }
        }
        Ok(Engine {
            tab,
            lookup,
            opts,
            state,
            traj: Trajectory {
                initial: state,
                segments: Vec::new(),
                events: Vec::new(),
                terminal: Terminal::TimeOut { t: state.t },
            },
            impacts: Vec::new(),
            v_ref: None,
            delta_stop: opts.divergence_factor * initial.delta(),
            stall: 0,
            last_mode: None,
        })
    }

    fn speed_scale(&self) -> f64 {
        self.state.dq.amax()
    }

    /// Snap velocities that are zero up to round-off.
    fn clean(&mut self) {
        let tol = self.opts.rel_vel_tol * self.speed_scale();
        for i in 0..2 {
            if self.state.q[i] == 0.0 && self.state.dq[i].abs() <= tol {
                self.state.dq[i] = 0.0;
            }
        }
        let resting = |i: usize| self.state.q[i] == 0.0 && self.state.dq[i] == 0.0;
        if resting(1) && self.state.dq[2].abs() <= tol {
            self.state.dq[2] = 0.0;
        } else if resting(0) && !resting(1) {
            let v = self.tab.tangential_rate(0, &self.state.dq);
            if v.abs() <= tol {
                self.zero_tangential(0);
            }
        }
    }

    fn zero_tangential(&mut self, i: usize) {
        if i == 1 {
            self.state.dq[2] = 0.0;
        } else {
            let r = self.tab.x1_row;
            self.state.dq[2] = -(r[0] * self.state.dq[0] + r[1] * self.state.dq[1]) / r[2];
        }
    }

    fn is_static(&self) -> bool {
        self.state.q[0] == 0.0 && self.state.q[1] == 0.0 && self.state.dq == Vector3::zeros()
    }

    /// Resolve an impact if a touching contact approaches. Returns whether an
    /// impact happened.
    fn maybe_impact(&mut self) -> Result<bool, SimError> {
        let graze = self.opts.rel_graze_tol * self.speed_scale();
        let mut approaching = [false; 2];
        for i in 0..2 {
            if self.state.q[i] == 0.0 && self.state.dq[i] < 0.0 {
                if self.state.dq[i] > -graze {
                    self.state.dq[i] = 0.0;
                } else {
                    approaching[i] = true;
                }
            }
        }
        if !approaching.iter().any(|&a| a) {
            return Ok(false);
        }
        let touching = [self.state.q[0] == 0.0, self.state.q[1] == 0.0];
        let outcome = resolve_velocities(self.tab, &self.state.dq, touching)?;
        let pre = self.state;
        self.state.dq = outcome.post_velocity();
        let speed = (0..2)
            .filter(|&i| approaching[i])
            .map(|i| -pre.dq[i])
            .fold(0.0, f64::max);
        self.v_ref.get_or_insert(speed);
        self.impacts.push(ImpactRecord {
            t: pre.t,
            speed,
            x2: pre.q[2],
            dx2: self.state.dq[2],
        });
        self.clean();
        self.traj.events.push(Event {
            t: pre.t,
            kind: EventKind::Impact {
                contacts: approaching,
                outcome,
            },
            pre,
            post: self.state,
        });
        Ok(true)
    }

    fn current_mode(&self) -> Result<(ContactMode, Vector3<f64>), SimError> {
        let qs = qualitative_state(self.tab, &self.state);
        let computed;
        let modes = match self.lookup.get(&qs) {
            Some(m) => m,
            None => {
                computed = consistent_modes(self.tab, &qs);
                &computed[..]
            }
        };
        if modes.len() != 1 {
            return Err(SimError::PainleveEncountered {
                t: self.state.t,
                state: qs,
                count: modes.len(),
            });
        }
        let sol = modes[0];
        let mut qdd = sol.qdd;
        for i in 0..2 {
            if sol.mode.letter(i).in_contact() {
                qdd[i] = 0.0;
            }
        }
        if sol.mode.letter(1) == Letter::S {
            qdd[2] = 0.0;
        }
        Ok((sol.mode, qdd))
    }

    /// Process the next event. Each call either resolves an impact, or
    /// integrates one constant-acceleration segment up to the next event.
    pub fn advance(&mut self) -> Result<Step, SimError> {
        if self.traj.events.len() >= self.opts.max_events {
            return Ok(Step::Terminal(Terminal::EventBudget { t: self.state.t }));
        }
        self.clean();
        if self.maybe_impact()? {
            if let Some(z) = self.zeno_check() {
                return Ok(z);
            }
            if self.state.delta() > self.delta_stop {
                return Ok(Step::Terminal(Terminal::Diverged {
                    t: self.state.t,
                    delta: self.state.delta(),
                }));
            }
            return Ok(Step::Event);
        }
        if self.is_static() {
            self.traj.events.push(Event {
                t: self.state.t,
                kind: EventKind::Stop,
                pre: self.state,
                post: self.state,
            });
            return Ok(Step::Terminal(Terminal::Equilibrium(self.state)));
        }

        let (mode, qdd) = self.current_mode()?;
        if let Some(prev) = self.last_mode {
            if prev != mode {
                self.traj.events.push(Event {
                    t: self.state.t,
                    kind: EventKind::ModeSwitch { from: prev, to: mode },
                    pre: self.state,
                    post: self.state,
                });
            }
        }
        self.last_mode = Some(mode);

        let s = self.state;
        // Candidate events: (time, kind) with kind 0..2 touchdown of contact
        // i, 2..4 end of slip at contact i-2.
        let mut cands: Vec<(f64, usize)> = Vec::new();
        for i in 0..2 {
            let letter = mode.letter(i);
            if letter == Letter::F {
                if let Some(t) = touchdown_time(s.q[i], s.dq[i], qdd[i]) {
                    cands.push((t, i));
                }
            } else if letter.is_slip() {
                let v = self.tab.tangential_rate(i, &s.dq);
                let a = self.tab.tangential_rate(i, &qdd);
                if v * a < 0.0 {
                    cands.push((-v / a, 2 + i));
                }
            }
        }
        let t_first = cands.iter().map(|c| c.0).fold(f64::INFINITY, f64::min);
        let horizon = self.opts.t_max - s.t;
        let (dt, hits): (f64, Vec<usize>) = if t_first.is_finite() && t_first <= horizon {
            let window = t_first * (1.0 + self.opts.rel_time_tol);
            (
                t_first,
                cands.iter().filter(|c| c.0 <= window).map(|c| c.1).collect(),
            )
        } else {
            (horizon.max(0.0), Vec::new())
        };

        let seg = Segment {
            mode,
            t0: s.t,
            t1: s.t + dt,
            q0: s.q.into(),
            dq0: s.dq.into(),
            qdd: qdd.into(),
        };
        self.traj.segments.push(seg);
        let mut next = seg.state_at(s.t + dt);
        for i in 0..2 {
            if mode.letter(i).in_contact() {
                next.q[i] = 0.0;
                next.dq[i] = 0.0;
            }
        }
        if mode.letter(1) == Letter::S {
            next.dq[2] = s.dq[2];
        }
        for &h in &hits {
            if h < 2 {
                next.q[h] = 0.0;
            }
        }
        self.state = next;
        for &h in &hits {
            if h >= 2 {
                self.zero_tangential(h - 2);
            }
        }
        if dt > 0.0 {
            self.stall = 0;
        } else {
            self.stall += 1;
            if self.stall > 16 {
                return Err(SimError::EventStall { t: s.t });
            }
        }

        let (delta_seg, _, _) = seg.peak_metrics();
        if delta_seg > self.delta_stop {
            return Ok(Step::Terminal(Terminal::Diverged {
                t: self.state.t,
                delta: delta_seg,
            }));
        }
        if hits.is_empty() {
            return Ok(Step::Terminal(Terminal::TimeOut { t: self.state.t }));
        }
        Ok(Step::Event)
    }

    fn zeno_check(&mut self) -> Option<Step> {
        let v_ref = self.v_ref?;
        let z = detect_zeno(
            &self.impacts,
            self.opts.n_zeno,
            self.opts.zeno_speed_ratio * v_ref,
        )?;
        let pre = self.state;
        let mut limit = ContactState {
            q: Vector3::new(0.0, 0.0, z.x2),
            dq: Vector3::new(0.0, 0.0, z.dx2),
            t: z.t,
        };
        if limit.dq[2].abs() <= self.opts.zeno_speed_ratio * v_ref {
            limit.dq[2] = 0.0;
        }
        self.traj.segments.push(Segment {
            mode: self.last_mode.unwrap_or(ContactMode::FF),
            t0: pre.t,
            t1: z.t,
            q0: pre.q.into(),
            dq0: pre.dq.into(),
            qdd: [0.0; 3],
        });
        self.traj.events.push(Event {
            t: z.t,
            kind: EventKind::ZenoPoint { ratio: z.ratio },
            pre,
            post: limit,
        });
        self.state = limit;
        self.impacts.clear();
        if self.opts.project_zeno {
            None
        } else {
            Some(Step::Terminal(Terminal::ZenoTruncated(limit)))
        }
    }

    pub fn finish(mut self, terminal: Terminal) -> Trajectory {
        self.traj.terminal = terminal;
        self.traj
    }
}

/// First `t > 0` with `z + v t + a t²/2 = 0` at which the contact approaches.
fn touchdown_time(z: f64, v: f64, a: f64) -> Option<f64> {
    if z == 0.0 {
        // Lifting off (v > 0) or starting to lift from rest (v = 0, a > 0).
        return if v > 0.0 && a < 0.0 { Some(-2.0 * v / a) } else { None };
    }
    if a == 0.0 {
        return if v < 0.0 { Some(-z / v) } else { None };
    }
    let disc = v * v - 2.0 * a * z;
    if disc < 0.0 {
        return None;
    }
    let sq = disc.sqrt();
    // Numerically stable roots of a/2 t² + v t + z = 0.
    let qv = -0.5 * (v + v.signum() * sq) * 2.0;
    let mut roots = Vec::with_capacity(2);
    if qv != 0.0 {
        roots.push(qv / a);
        roots.push(2.0 * z / qv);
    } else {
        roots.push((2.0 * -z / a).max(0.0).sqrt());
    }
    roots
        .into_iter()
        .filter(|&t| t > 0.0 && v + a * t <= 0.0)
        .fold(None, |acc: Option<f64>, t| Some(acc.map_or(t, |b| b.min(t))))
}

/// Simulate the ZOD from an admissible initial state.
pub fn simulate(
    cfg: &Configuration,
    initial: &ContactState,
    opts: &SimOptions,
) -> Result<Trajectory, SimError> {
    let tab = build_tableau(cfg)?;
    simulate_tableau(&tab, initial, opts)
}

pub fn simulate_tableau(
    tab: &ZodTableau,
    initial: &ContactState,
    opts: &SimOptions,
) -> Result<Trajectory, SimError> {
    let mut engine = Engine::new(tab, *initial, *opts)?;
    loop {
        match engine.advance()? {
            Step::Event => {}
            Step::Terminal(t) => return Ok(engine.finish(t)),
        }
    }
}

/// Initial state obtained by lifting contact `i` by `lift` metres while the
/// other contact stays on the support, released at rest.
pub fn foot_lift(i: usize, lift: f64) -> ContactState {
    let mut s = ContactState::equilibrium();
    s.q[i] = lift;
    s
}

/// Fit the per-cycle ratio of consecutive section-crossing impact speeds
/// over the given crossings (least squares on the logarithms).
pub fn fitted_ratio(speeds: &[f64]) -> Option<f64> {
    if speeds.len() < 2 {
        return None;
    }
    let n = speeds.len() as f64;
    let ys: Vec<f64> = speeds.iter().map(|v| v.abs().ln()).collect();
    let mx = (n - 1.0) / 2.0;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (k, y) in ys.iter().enumerate() {
        let dx = k as f64 - mx;
        sxy += dx * (y - my);
        sxx += dx * dx;
    }
    Some((sxy / sxx).exp())
}

/// Transitions between consecutive continuous modes that need an
/// intermediate impact or a non-persistent equilibrium.
///
/// Contacts are only established through impacts, so a continuous mode switch
/// never adds a contact. Leaving two-contact slip into a mode with fewer
/// contacts is possible only near a non-persistent equilibrium.
pub fn transition_is_legal(from: ContactMode, to: ContactMode, via_impact: bool, persistent: bool) -> bool {
    if !via_impact && to.contacts() > from.contacts() {
        return false;
    }
    if from.is_two_contact_slip() && to.contacts() < 2 && persistent {
        return false;
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::DEFAULT_GRAVITY;
    use approx::assert_relative_eq;

    fn config_a() -> Configuration {
        Configuration::on_slope(
            1.0,
            0.1430,
            0.1341,
            -0.0512,
            0.1688,
            0.3150,
            1.0,
            25f64.to_radians(),
            DEFAULT_GRAVITY,
        )
    }

    #[test]
    fn equilibrium_start_stops_immediately() {
        let traj = simulate(&config_a(), &ContactState::equilibrium(), &SimOptions::default()).unwrap();
        assert!(matches!(traj.terminal, Terminal::Equilibrium(s) if s.t == 0.0));
        assert!(traj.impacts().next().is_none());
        let m = traj.metrics();
        assert_eq!(m.delta_max, 0.0);
        assert_eq!(m.t_f, Some(0.0));
    }

    #[test]
    fn touchdown_roots() {
        assert_relative_eq!(touchdown_time(1.0, 0.0, -2.0).unwrap(), 1.0, epsilon = 1e-15);
        assert_relative_eq!(touchdown_time(0.0, 1.0, -2.0).unwrap(), 1.0, epsilon = 1e-15);
        assert_eq!(touchdown_time(0.0, 0.0, 1.0), None);
        assert_eq!(touchdown_time(1.0, 1.0, 1.0), None);
        assert_relative_eq!(touchdown_time(1.0, -1.0, 0.0).unwrap(), 1.0, epsilon = 1e-15);
        // Rising first, then falling back through zero.
        let t = touchdown_time(1.0, 2.0, -2.0).unwrap();
        assert_relative_eq!(1.0 + 2.0 * t - t * t, 0.0, epsilon = 1e-12);
        assert!(t > 2.0);
    }

    #[test]
    fn synthetic_geometric_sequence_accumulates() {
        // Cycle durations halve; impact speeds halve each cycle.
        let mut recs = Vec::new();
        let mut t = 0.0;
        let mut tau = 1.0;
        let mut v = 1.0;
        for _ in 0..20 {
            recs.push(ImpactRecord { t, speed: v, x2: 0.0, dx2: 0.0 });
            t += tau;
            tau *= 0.5f64.sqrt();
            v *= 0.5f64.sqrt();
        }
        let z = detect_zeno(&recs, 8, 1.0).unwrap();
        let n = recs.len();
        let last_cycle = recs[n - 1].t - recs[n - 3].t;
        // Remaining time after the last impact equals one more cycle length
        // times r / (1 - r) with r = 1/2; from the previous cycle start it is
        // twice the last cycle.
        assert_relative_eq!(z.t - recs[n - 3].t, 2.0 * last_cycle, epsilon = 1e-9);
        assert_relative_eq!(z.ratio, 0.5, epsilon = 1e-12);
        assert!(detect_zeno(&recs, 8, 1e-9).is_none());
    }

    #[test]
    fn free_flight_is_ballistic() {
        let cfg = config_a();
        let s = ContactState::new([1e-3, 2e-3, 0.0], [0.1, 0.0, 0.05]);
        let opts = SimOptions {
            divergence_factor: f64::INFINITY,
            ..SimOptions::default()
        };
        let traj = simulate(&cfg, &s, &opts).unwrap();
        let seg = traj.segments[0];
        assert_eq!(seg.mode, ContactMode::FF);
        let g = DEFAULT_GRAVITY;
        let a = 25f64.to_radians();
        assert_relative_eq!(seg.qdd[0], -g * a.cos(), epsilon = 1e-12);
        assert_relative_eq!(seg.qdd[2], g * a.sin(), epsilon = 1e-12);
    }

    #[test]
    fn legal_transitions() {
        let pp: ContactMode = "PP".parse().unwrap();
        let fp: ContactMode = "FP".parse().unwrap();
        assert!(!transition_is_legal(pp, fp, false, true));
        assert!(transition_is_legal(pp, fp, false, false));
        assert!(!transition_is_legal(fp, pp, false, false));
        assert!(transition_is_legal(fp, pp, true, false));
    }
}
