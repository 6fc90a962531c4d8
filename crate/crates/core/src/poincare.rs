//! Reduced Poincaré map `R(φ)`, growth map `G(φ)`, and the stability verdict.
//!
//! The section consists of pre-impact states where contact 2 hits the
//! support while contact 1 rests on it. Under the ZOD a section state is
//! fixed up to scale by the impact angle `φ = atan(ẋ2⁻ / |ż2⁻|)`, so the
//! return map reduces to a scalar map on `(−π/2, π/2)`; `G` is the ratio of
//! consecutive normal impact speeds.

use std::borrow::Cow;
use std::collections::BTreeSet;
use std::f64::consts::FRAC_PI_2;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::Serialize;

use crate::consistency::{
    classify_equilibrium, EquilibriumClass, ModeLookup, SlipReachability,
};
use crate::model::{build_tableau, Configuration, ContactMode, ContactState, ModelError, ZodTableau};
use crate::simulator::{on_section, Engine, EventKind, SimOptions, Step, Terminal};

/// Robustness band for every strict inequality that decides a verdict.
pub const MARGIN: f64 = 1e-3;
/// Target accuracy of fixed points, rad.
pub const TOL_FP: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct SampleFlags {
    /// Slip direction of a slipping double impact along the way.
    pub slipping_double: Option<i8>,
    pub zeno_exit: bool,
    /// The motion came to rest without returning to the section.
    pub ss_exit: bool,
    /// Two sustained contacts were abandoned without an impact.
    pub leaves_two_contact: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RGSample {
    pub phi: f64,
    pub r: Option<f64>,
    pub g: Option<f64>,
    pub flags: SampleFlags,
    /// Why `r` is undefined, when it is.
    pub reason: Option<String>,
}

impl RGSample {
    pub fn defined(&self) -> bool {
        self.r.is_some()
    }

    fn undefined(phi: f64, flags: SampleFlags, reason: impl Into<String>) -> Self {
        RGSample {
            phi,
            r: None,
            g: None,
            flags,
            reason: Some(reason.into()),
        }
    }
}

/// Anything that can be queried for `R` and `G` at an angle.
pub trait ReturnMap: Sync {
    fn eval(&self, phi: f64) -> RGSample;
}

impl<F: Fn(f64) -> RGSample + Sync> ReturnMap for F {
    fn eval(&self, phi: f64) -> RGSample {
        self(phi)
    }
}

/// Return map of the ZOD of one configuration.
pub struct ZodReturnMap {
    pub tab: ZodTableau,
    lookup: ModeLookup,
    opts: SimOptions,
}

impl ZodReturnMap {
    pub fn new(tab: ZodTableau) -> Self {
        let opts = SimOptions {
            t_max: f64::INFINITY,
            max_events: 64,
            divergence_factor: f64::INFINITY,
            ..SimOptions::default()
        };
        ZodReturnMap {
            lookup: ModeLookup::new(&tab),
            tab,
            opts,
        }
    }

    /// Evaluate from a section state with normal approach speed `speed`.
    pub fn eval_scaled(&self, phi: f64, speed: f64) -> RGSample {
        let start = ContactState::new([0.0; 3], [0.0, -speed, speed * phi.tan()]);
        let mut engine =
            match Engine::with_lookup(&self.tab, Cow::Borrowed(&self.lookup), start, self.opts) {
                Ok(e) => e,
                Err(e) => return RGSample::undefined(phi, SampleFlags::default(), e.to_string()),
            };
        let mut flags = SampleFlags::default();
        let mut seen_events = 0;
        let mut prev_mode: Option<ContactMode> = None;
        loop {
            if !engine.traj.events.is_empty() && on_section(&engine.state) {
                let s = engine.state;
                return RGSample {
                    phi,
                    r: Some((s.dq[2] / s.dq[1].abs()).atan()),
                    g: Some(s.dq[1].abs() / speed),
                    flags,
                    reason: None,
                };
            }
            let step = engine.advance();
            for e in &engine.traj.events[seen_events..] {
                match &e.kind {
                    EventKind::Impact { outcome, .. } => {
                        if let Some(sgn) = outcome.slipping_double {
                            flags.slipping_double = Some(sgn);
                        }
                    }
                    EventKind::ModeSwitch { from, to } => {
                        if from.is_two_contact_slip() && to.contacts() < 2 {
                            flags.leaves_two_contact = true;
                        }
                    }
                    EventKind::ZenoPoint { .. } => flags.zeno_exit = true,
                    EventKind::Stop => {}
                }
            }
            seen_events = engine.traj.events.len();
            if let Some(seg) = engine.traj.segments.last() {
                if let Some(p) = prev_mode {
                    if p.is_two_contact_slip() && seg.mode.contacts() < 2 && p != seg.mode {
                        flags.leaves_two_contact = true;
                    }
                }
                prev_mode = Some(seg.mode);
            }
            match step {
                Ok(Step::Event) => {}
                Ok(Step::Terminal(Terminal::Equilibrium(_))) => {
                    flags.ss_exit = true;
                    return RGSample::undefined(phi, flags, "comes to rest");
                }
                Ok(Step::Terminal(t)) => {
                    return RGSample::undefined(phi, flags, format!("no return: {t:?}"));
                }
                Err(e) => return RGSample::undefined(phi, flags, e.to_string()),
            }
        }
    }
}

impl ReturnMap for ZodReturnMap {
    fn eval(&self, phi: f64) -> RGSample {
        self.eval_scaled(phi, 1.0)
    }
}

/// Evaluate `R` and `G` at one angle for a configuration.
pub fn rg_eval(cfg: &Configuration, phi: f64) -> Result<RGSample, ModelError> {
    Ok(ZodReturnMap::new(build_tableau(cfg)?).eval(phi))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridSpec {
    /// Uniform samples on `[−π/2 + edge, π/2 − edge]`.
    pub n: usize,
    pub edge: f64,
    /// Extra samples inserted between neighbours that straddle a sign change
    /// of `R − φ`, a change of definedness, or a jump of `R`.
    pub refine: usize,
    /// Distances from `±π/2` used by the endpoint analysis, decreasing.
    pub endpoint_eps: Vec<f64>,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            n: 2001,
            edge: 1e-3,
            refine: 10,
            endpoint_eps: vec![1e-2, 3e-3, 1e-3, 3e-4, 1e-4, 3e-5, 1e-5],
        }
    }
}

impl GridSpec {
    pub fn coarse(n: usize) -> Self {
        GridSpec {
            n,
            ..GridSpec::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FixedPoint {
    pub phi: f64,
    pub g: f64,
    /// Local slope `R'(φ*)`.
    pub slope: f64,
    pub attractive: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum EndpointSet {
    /// `R → ±π/2`, `R' → G±` and `G` constant near the endpoint.
    Set1 { g_pm: f64, r_prime: f64 },
    /// `R → R±` with `|R±| < π/2` and `G` diverging.
    Set2 { r_pm: f64, g_scaled: f64 },
    /// `R` is undefined close to the endpoint.
    Undefined,
    Unclassified,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EndpointRecord {
    /// +1 for `φ → π/2`, −1 for `φ → −π/2`.
    pub side: i8,
    pub set: EndpointSet,
    /// Relative change of the fitted limit between the two closest samples.
    pub residual: f64,
    /// Set 1: relative mismatch between `R'` and `G±`.
    /// Set 2: relative mismatch between `G(φ)(±π/2 − φ)` and `tan R±`.
    pub relation_error: Option<f64>,
    pub samples: Vec<RGSample>,
}

impl EndpointRecord {
    /// Limit of `R'` at a Set-1 endpoint.
    pub fn r_prime(&self) -> Option<f64> {
        match self.set {
            EndpointSet::Set1 { r_prime, .. } => Some(r_prime),
            _ => None,
        }
    }

    /// `G±`, which exists only at Set-1 endpoints.
    pub fn g_pm(&self) -> Option<f64> {
        match self.set {
            EndpointSet::Set1 { g_pm, .. } => Some(g_pm),
            _ => None,
        }
    }

    /// Transition into two-contact slip through a Zeno point is excluded:
    /// `|lim R| < π/2` or `lim R' > 1`. An endpoint where `R` is undefined
    /// has no returns that could accumulate there.
    pub fn excludes_zeno_slip(&self) -> bool {
        match self.set {
            EndpointSet::Set2 { .. } | EndpointSet::Undefined => true,
            EndpointSet::Set1 { r_prime, .. } => r_prime > 1.0 + MARGIN,
            EndpointSet::Unclassified => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RGMap {
    /// Samples sorted by `φ`, including the refinement and endpoint samples.
    pub samples: Vec<RGSample>,
    pub fixed_points: Vec<FixedPoint>,
    /// `[φ → −π/2, φ → +π/2]`.
    pub endpoints: [EndpointRecord; 2],
    pub grid: GridSpec,
}

fn fp_residual(s: &RGSample) -> Option<f64> {
    s.r.map(|r| r - s.phi)
}

/// Sample a return map on a grid, refine, and locate fixed points and
/// endpoint behaviour.
pub fn build_map<M: ReturnMap>(map: &M, grid: &GridSpec) -> RGMap {
    let lo = -FRAC_PI_2 + grid.edge;
    let hi = FRAC_PI_2 - grid.edge;
    let n = grid.n.max(2);
    let phis: Vec<f64> = (0..n)
        .map(|k| {
            let t = k as f64 / (n - 1) as f64;
            if 2 * k + 1 == n {
                0.0
            } else {
                lo + (hi - lo) * t
            }
        })
        .collect();
    let mut samples: Vec<RGSample> = phis.par_iter().map(|&p| map.eval(p)).collect();

    // Local refinement.
    let mut extra = Vec::new();
    for w in samples.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        let flagged = match (fp_residual(a), fp_residual(b)) {
            (Some(fa), Some(fb)) => {
                fa.signum() != fb.signum() || (a.r.unwrap() - b.r.unwrap()).abs() > 0.1
            }
            (None, None) => false,
            _ => true,
        };
        if flagged {
            for j in 1..=grid.refine {
                extra.push(a.phi + (b.phi - a.phi) * j as f64 / (grid.refine + 1) as f64);
            }
        }
    }
    for side in [-1.0, 1.0] {
        let edge_pt = side * hi;
        let inner = side * (hi - (hi - lo) / (n - 1) as f64);
        for j in 1..=grid.refine {
            extra.push(inner + (edge_pt - inner) * j as f64 / (grid.refine + 1) as f64);
        }
    }
    samples.extend(extra.par_iter().map(|&p| map.eval(p)).collect::<Vec<_>>());

    let endpoints = [
        endpoint_analysis(map, -1, &grid.endpoint_eps),
        endpoint_analysis(map, 1, &grid.endpoint_eps),
    ];
    for e in &endpoints {
        samples.extend(e.samples.iter().cloned());
    }
    samples.sort_by(|a, b| a.phi.total_cmp(&b.phi));
    samples.dedup_by(|a, b| a.phi == b.phi);

    let fixed_points = find_fixed_points(map, &samples);
    RGMap {
        samples,
        fixed_points,
        endpoints,
        grid: grid.clone(),
    }
}

/// Sign changes of `R(φ) − φ` between neighbouring defined samples, refined by
/// bisection. Brackets across a jump of `R` are discarded.
pub fn find_fixed_points<M: ReturnMap>(map: &M, samples: &[RGSample]) -> Vec<FixedPoint> {
    let mut roots = Vec::new();
    let n = samples.len();
    for k in 0..n {
        let Some(fa) = fp_residual(&samples[k]) else {
            continue;
        };
        if fa == 0.0 {
            roots.push(samples[k].phi);
            continue;
        }
        let Some(b) = samples.get(k + 1) else { continue };
        let Some(fb) = fp_residual(b) else { continue };
        if fb == 0.0 || fa.signum() == fb.signum() {
            continue;
        }
        let (mut a_phi, mut b_phi, mut fa) = (samples[k].phi, b.phi, fa);
        let mut ok = true;
        while b_phi - a_phi > 1e-10 {
            let mid = 0.5 * (a_phi + b_phi);
            match fp_residual(&map.eval(mid)) {
                Some(fm) if fm == 0.0 => {
                    a_phi = mid;
                    b_phi = mid;
                }
                Some(fm) if fm.signum() == fa.signum() => {
                    a_phi = mid;
                    fa = fm;
                }
                Some(_) => b_phi = mid,
                None => {
                    ok = false;
                    break;
                }
            }
        }
        if !ok {
            continue;
        }
        let phi = 0.5 * (a_phi + b_phi);
        if let Some(res) = fp_residual(&map.eval(phi)) {
            if res.abs() < TOL_FP {
                roots.push(phi);
            }
        }
    }
    roots.dedup_by(|a, b| (*a - *b).abs() < 10.0 * TOL_FP);
    roots
        .into_iter()
        .filter_map(|phi| {
            let s = map.eval(phi);
            let g = s.g?;
            let h = 1e-6;
            let rp = map.eval(phi + h).r?;
            let rm = map.eval(phi - h).r?;
            let slope = (rp - rm) / (2.0 * h);
            Some(FixedPoint {
                phi,
                g,
                slope,
                attractive: slope.abs() < 1.0,
            })
        })
        .collect()
}

/// Classify the behaviour of `R` and `G` as `φ → side·π/2`.
pub fn endpoint_analysis<M: ReturnMap>(map: &M, side: i8, eps: &[f64]) -> EndpointRecord {
    let s = f64::from(side);
    let samples: Vec<RGSample> = eps
        .par_iter()
        .map(|&e| map.eval(s * (FRAC_PI_2 - e)))
        .collect();
    let mut rec = EndpointRecord {
        side,
        set: EndpointSet::Unclassified,
        residual: f64::INFINITY,
        relation_error: None,
        samples: samples.clone(),
    };
    let defined: Vec<(f64, f64, f64)> = eps
        .iter()
        .zip(&samples)
        .filter_map(|(&e, smp)| Some((e, smp.r?, smp.g?)))
        .collect();
    let closest_defined = samples.last().map(|x| x.defined()).unwrap_or(false);
    if !closest_defined || defined.len() < 3 {
        rec.set = EndpointSet::Undefined;
        rec.residual = 0.0;
        return rec;
    }
    let m = defined.len();
    let (e1, r1, g1) = defined[m - 2];
    let (e2, r2, g2) = defined[m - 1];
    let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(1e-300);

    let gap1 = s * FRAC_PI_2 - r1;
    let gap2 = s * FRAC_PI_2 - r2;
    if gap2.abs() < 0.05 {
        // Candidate Set 1: the gap to the endpoint shrinks linearly in ε.
        let rp1 = gap1.abs() / e1;
        let rp2 = gap2.abs() / e2;
        let residual = rel(rp1, rp2).max(rel(g1, g2));
        rec.set = EndpointSet::Set1 {
            g_pm: g2,
            r_prime: rp2,
        };
        rec.residual = residual;
        rec.relation_error = Some(rel(rp2, g2));
    } else if r2.abs() < FRAC_PI_2 - 0.05 {
        let residual = (r1 - r2).abs() / FRAC_PI_2;
        // G(φ)(±π/2 − φ) with ±π/2 − φ = ±ε.
        let scaled = g2 * s * e2;
        rec.set = EndpointSet::Set2 {
            r_pm: r2,
            g_scaled: scaled,
        };
        rec.residual = residual.max(rel(g1 * s * e1, scaled));
        rec.relation_error = Some(rel(scaled, r2.tan()));
    }
    rec
}

/// Label of one interval of a partition.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PartitionInterval {
    pub lo: f64,
    pub hi: f64,
    /// Largest sampled `G` in the interval (`None` if `R` is undefined
    /// throughout).
    pub g_max: Option<f64>,
    pub safe: bool,
    pub transient: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Partition {
    pub breakpoints: Vec<f64>,
    pub intervals: Vec<PartitionInterval>,
    /// Directed edges `j → k` of the interval graph.
    pub edges: Vec<(usize, usize)>,
    pub extremal_cut_applied: bool,
}

impl Partition {
    pub fn is_stable(&self) -> bool {
        self.intervals.iter().all(|i| i.safe || i.transient)
    }
}

/// Intervals `I_k` lying on a directed cycle of the interval graph.
fn on_cycle(n: usize, edges: &[(usize, usize)]) -> Vec<bool> {
    let mut reach = vec![vec![false; n]; n];
    for &(a, b) in edges {
        reach[a][b] = true;
    }
    for k in 0..n {
        for i in 0..n {
            if reach[i][k] {
                for j in 0..n {
                    if reach[k][j] {
                        reach[i][j] = true;
                    }
                }
            }
        }
    }
    (0..n).map(|i| reach[i][i]).collect()
}

fn label_partition(samples: &[RGSample], breakpoints: &[f64], cut: bool) -> Partition {
    let mut bounds = vec![-FRAC_PI_2];
    bounds.extend_from_slice(breakpoints);
    bounds.push(FRAC_PI_2);
    let nint = bounds.len() - 1;
    let locate = |phi: f64| -> usize {
        // Breakpoints belong to both neighbours; assign to the left one.
        bounds[1..nint]
            .iter()
            .position(|&b| phi <= b)
            .unwrap_or(nint - 1)
    };
    let mut edges = BTreeSet::new();
    let mut g_max: Vec<Option<f64>> = vec![None; nint];
    let mut sign: Vec<Option<f64>> = vec![None; nint];
    let mut sign_mixed = vec![false; nint];
    for s in samples {
        let (Some(r), Some(g)) = (s.r, s.g) else {
            continue;
        };
        let j = locate(s.phi);
        g_max[j] = Some(g_max[j].map_or(g, |m: f64| m.max(g)));
        let sg = (r - s.phi).signum();
        if r == s.phi {
            sign_mixed[j] = true;
        }
        match sign[j] {
            None => sign[j] = Some(sg),
            Some(prev) if prev != sg => sign_mixed[j] = true,
            _ => {}
        }
        let k = locate(r);
        if k != j {
            edges.insert((j, k));
        }
    }
    let edges: Vec<(usize, usize)> = edges.into_iter().collect();
    let cyc = on_cycle(nint, &edges);
    let intervals = (0..nint)
        .map(|j| PartitionInterval {
            lo: bounds[j],
            hi: bounds[j + 1],
            g_max: g_max[j],
            safe: g_max[j].map_or(true, |g| g < 1.0 - MARGIN),
            transient: !sign_mixed[j] && !cyc[j],
        })
        .collect();
    Partition {
        breakpoints: breakpoints.to_vec(),
        intervals,
        edges,
        extremal_cut_applied: cut,
    }
}

/// Try to build a stable partition from fixed-point brackets.
///
/// Breakpoints are placed at `φ* ± ε` for every fixed point; extremal
/// intervals adjoining a Set-2 endpoint are cut so that they do not overlap
/// the range of `R`. Returns `None` when a `G±` equals one within the margin
/// or when the resulting partition is not stable.
pub fn build_stable_partition(map: &RGMap) -> Option<Partition> {
    for e in &map.endpoints {
        if let Some(g) = e.g_pm() {
            if (g - 1.0).abs() <= MARGIN {
                return None;
            }
        }
    }
    let fps: Vec<f64> = map.fixed_points.iter().map(|f| f.phi).collect();
    let min_gap = fps
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(f64::INFINITY, f64::min);
    let eps = (0.5 * min_gap).min(0.01);
    let mut bps: Vec<f64> = fps
        .iter()
        .flat_map(|&p| [p - eps, p + eps])
        .filter(|b| b.abs() < FRAC_PI_2)
        .collect();

    let rs: Vec<f64> = map.samples.iter().filter_map(|s| s.r).collect();
    let mut cut = false;
    if !rs.is_empty() {
        let r_min = rs.iter().copied().fold(f64::INFINITY, f64::min);
        let r_max = rs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        for e in &map.endpoints {
            if !matches!(e.set, EndpointSet::Set2 { .. }) {
                continue;
            }
            if e.side > 0 {
                let inner = bps.last().copied().unwrap_or(-FRAC_PI_2);
                if r_max > inner && r_max < FRAC_PI_2 {
                    bps.push(0.5 * (r_max + FRAC_PI_2));
                    cut = true;
                }
            } else {
                let inner = bps.first().copied().unwrap_or(FRAC_PI_2);
                if r_min < inner && r_min > -FRAC_PI_2 {
                    bps.insert(0, 0.5 * (r_min - FRAC_PI_2));
                    cut = true;
                }
            }
        }
    }
    bps.sort_by(f64::total_cmp);
    bps.dedup();
    let p = label_partition(&map.samples, &bps, cut);
    p.is_stable().then_some(p)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Verdict {
    Stable,
    Unstable,
    NoEquilibrium,
    Degenerate,
    Inconclusive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Justification {
    #[serde(rename = "Thm1-Ambiguity")]
    Thm1Ambiguity,
    #[serde(rename = "Thm2-ReverseChatter")]
    Thm2ReverseChatter,
    #[serde(rename = "Thm3-GlobalG")]
    Thm3GlobalG,
    #[serde(rename = "Thm4a-StablePartition")]
    Thm4aStablePartition,
    #[serde(rename = "Thm5-MonotoneR")]
    Thm5MonotoneR,
    None,
}

impl Justification {
    pub fn tag(self) -> &'static str {
        match self {
            Justification::Thm1Ambiguity => "Thm1-Ambiguity",
            Justification::Thm2ReverseChatter => "Thm2-ReverseChatter",
            Justification::Thm3GlobalG => "Thm3-GlobalG",
            Justification::Thm4aStablePartition => "Thm4a-StablePartition",
            Justification::Thm5MonotoneR => "Thm5-MonotoneR",
            Justification::None => "None",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityVerdict {
    pub verdict: Verdict,
    pub justification: Justification,
    /// Fixed point used as evidence (Theorem 2 witness, or the attractive
    /// fixed point with the largest growth rate).
    pub witness_fixed_point: Option<FixedPoint>,
    pub ambiguity_witness: Option<ContactMode>,
    pub partition: Option<Partition>,
    pub notes: Vec<String>,
}

impl StabilityVerdict {
    fn new(verdict: Verdict, justification: Justification) -> Self {
        StabilityVerdict {
            verdict,
            justification,
            witness_fixed_point: None,
            ambiguity_witness: None,
            partition: None,
            notes: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityReport {
    pub class: EquilibriumClass,
    pub map: Option<RGMap>,
    pub verdict: StabilityVerdict,
}

/// `R` is non-decreasing on the sampled grid within the slope margin.
pub fn is_monotone(samples: &[RGSample]) -> bool {
    let defined: Vec<(f64, f64)> = samples.iter().filter_map(|s| Some((s.phi, s.r?))).collect();
    defined
        .windows(2)
        .all(|w| w[1].1 - w[0].1 >= -MARGIN * (w[1].0 - w[0].0))
}

/// Weak-persistence evidence gathered from a sampled map.
pub fn slip_reachability(map: &RGMap) -> SlipReachability {
    let mut double = [true; 2];
    for s in &map.samples {
        match s.flags.slipping_double {
            Some(d) if d < 0 => double[0] = false,
            Some(_) => double[1] = false,
            None => {}
        }
    }
    SlipReachability {
        zeno_excluded: [
            map.endpoints[0].excludes_zeno_slip(),
            map.endpoints[1].excludes_zeno_slip(),
        ],
        double_slip_excluded: double,
    }
}

/// Full analysis: equilibrium classification, return map and verdict.
pub fn analyze(cfg: &Configuration, grid: &GridSpec) -> Result<StabilityReport, ModelError> {
    let tab = build_tableau(cfg)?;
    analyze_tableau(&tab, grid)
}

pub fn analyze_tableau(tab: &ZodTableau, grid: &GridSpec) -> Result<StabilityReport, ModelError> {
    let class0 = classify_equilibrium(tab, None);
    if !class0.is_equilibrium {
        return Ok(StabilityReport {
            class: class0,
            map: None,
            verdict: StabilityVerdict::new(Verdict::NoEquilibrium, Justification::None),
        });
    }
    if class0.is_ambiguous {
        let mut v = StabilityVerdict::new(Verdict::Unstable, Justification::Thm1Ambiguity);
        v.ambiguity_witness = class0.ambiguity_witness;
        return Ok(StabilityReport {
            class: class0,
            map: None,
            verdict: v,
        });
    }
    if class0.marginal || !class0.is_painleve_free {
        let mut v = StabilityVerdict::new(Verdict::Degenerate, Justification::None);
        if class0.marginal {
            v.notes.push(format!(
                "a consistency check is within {:e} of equality (static cone margin {:e})",
                crate::consistency::TOL_CONS,
                class0.ss_margin
            ));
        }
        if !class0.is_painleve_free {
            v.notes.push(format!(
                "forward dynamics not unique or missing in {} qualitative states",
                class0.painleve_states.len()
            ));
        }
        return Ok(StabilityReport {
            class: class0,
            map: None,
            verdict: v,
        });
    }

    let rmap = ZodReturnMap::new(*tab);
    let map = build_map(&rmap, grid);
    let reach = slip_reachability(&map);
    let class = classify_equilibrium(tab, Some(&reach));
    let verdict = decide(&class, &map);
    Ok(StabilityReport {
        class,
        map: Some(map),
        verdict,
    })
}

/// Decision cascade for an unambiguous, non-marginal equilibrium.
fn decide(class: &EquilibriumClass, map: &RGMap) -> StabilityVerdict {
    let grid_note = format!(
        "sampled claim: {} samples ({} uniform, refinement x{})",
        map.samples.len(),
        map.grid.n,
        map.grid.refine
    );
    if let Some(fp) = map
        .fixed_points
        .iter()
        .filter(|f| f.g > 1.0 + MARGIN)
        .max_by(|a, b| a.g.total_cmp(&b.g))
    {
        let mut v = StabilityVerdict::new(Verdict::Unstable, Justification::Thm2ReverseChatter);
        v.witness_fixed_point = Some(*fp);
        v.notes.push(grid_note);
        return v;
    }
    let witness = map
        .fixed_points
        .iter()
        .filter(|f| f.attractive)
        .max_by(|a, b| a.g.total_cmp(&b.g))
        .or_else(|| map.fixed_points.iter().max_by(|a, b| a.g.total_cmp(&b.g)))
        .copied();
    let with_notes = |mut v: StabilityVerdict, notes: Vec<String>| {
        v.witness_fixed_point = witness;
        v.notes = notes;
        v
    };
    let mut notes = vec![grid_note];

    if let Some(fp) = map.fixed_points.iter().find(|f| (f.g - 1.0).abs() <= MARGIN) {
        notes.push(format!(
            "growth rate {:.6} at fixed point {:.6} is within {MARGIN:e} of one",
            fp.g, fp.phi
        ));
        return with_notes(
            StabilityVerdict::new(Verdict::Degenerate, Justification::None),
            notes,
        );
    }
    if map.samples.iter().any(|s| s.flags.leaves_two_contact) {
        notes.push("two sustained contacts are abandoned during return-map evaluation".into());
        return with_notes(
            StabilityVerdict::new(Verdict::Inconclusive, Justification::None),
            notes,
        );
    }
    if !class.is_weakly_persistent {
        notes.push("equilibrium is not weakly persistent".into());
        return with_notes(
            StabilityVerdict::new(Verdict::Inconclusive, Justification::None),
            notes,
        );
    }
    let g_max = map
        .samples
        .iter()
        .filter_map(|s| s.g)
        .fold(0.0f64, f64::max);
    if class.is_persistent && g_max < 1.0 - MARGIN {
        notes.push(format!("max G over defined samples = {g_max:.6}"));
        return with_notes(
            StabilityVerdict::new(Verdict::Stable, Justification::Thm3GlobalG),
            notes,
        );
    }
    let g_pm_ok = map
        .endpoints
        .iter()
        .all(|e| e.g_pm().map_or(true, |g| (g - 1.0).abs() > MARGIN));
    if is_monotone(&map.samples)
        && g_pm_ok
        && map.fixed_points.iter().all(|f| f.g < 1.0 - MARGIN)
    {
        return with_notes(
            StabilityVerdict::new(Verdict::Stable, Justification::Thm5MonotoneR),
            notes,
        );
    }
    if let Some(p) = build_stable_partition(map) {
        let mut v = with_notes(
            StabilityVerdict::new(Verdict::Stable, Justification::Thm4aStablePartition),
            notes,
        );
        v.partition = Some(p);
        return v;
    }
    notes.push("no sufficient condition applies".into());
    with_notes(
        StabilityVerdict::new(Verdict::Inconclusive, Justification::None),
        notes,
    )
}

/// Verdict only.
pub fn stability_verdict(cfg: &Configuration, grid: &GridSpec) -> Result<StabilityVerdict, ModelError> {
    Ok(analyze(cfg, grid)?.verdict)
}

impl RGMap {
    /// CSV with columns `phi, R, G, defined, flags`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("phi,R,G,defined,flags\n");
        for s in &self.samples {
            let mut flags = Vec::new();
            if let Some(d) = s.flags.slipping_double {
                flags.push(if d > 0 { "double_slip+" } else { "double_slip-" });
            }
            if s.flags.zeno_exit {
                flags.push("zeno");
            }
            if s.flags.ss_exit {
                flags.push("ss_exit");
            }
            if s.flags.leaves_two_contact {
                flags.push("leaves_two_contact");
            }
            let fmt = |x: Option<f64>| x.map(|v| format!("{v:.12e}")).unwrap_or_default();
            let _ = writeln!(
                out,
                "{:.12e},{},{},{},{}",
                s.phi,
                fmt(s.r),
                fmt(s.g),
                s.defined(),
                flags.join("|")
            );
        }
        out
    }

    pub fn max_g(&self) -> Option<f64> {
        self.samples.iter().filter_map(|s| s.g).reduce(f64::max)
    }
}
