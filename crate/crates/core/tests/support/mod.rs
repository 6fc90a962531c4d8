//! Independent reference implementations used by the integration tests.
//!
//! Everything here works in body coordinates `v = (ẋ, ż, ω)` of the centre of
//! mass with the diagonal mass matrix `diag(m, m, mρ²)`, instead of the
//! contact-coordinate tableau used by the library.
#![allow(dead_code)]

use nalgebra::{Matrix3, SMatrix, SVector, Vector2, Vector3};
use twocontact::{Configuration, ContactState};

pub fn config(rho_mm: f64, l1_mm: f64, l2_mm: f64) -> Configuration {
    Configuration::on_slope(
        1.0,
        rho_mm * 1e-3,
        0.1341,
        l1_mm * 1e-3,
        l2_mm * 1e-3,
        0.315,
        1.0,
        25f64.to_radians(),
        9.81,
    )
}

pub fn config_a() -> Configuration {
    config(143.0, -51.2, 168.8)
}

pub fn config_b() -> Configuration {
    config(146.9, 16.1, 76.1)
}

pub fn config_d() -> Configuration {
    config(137.9, 28.8, 88.8)
}

/// Rigid body in the plane with contact geometry at the reference pose.
#[derive(Debug, Clone, Copy)]
pub struct Body {
    pub cfg: Configuration,
    /// Contact points relative to the centre of mass at the reference pose.
    pub r: [Vector2<f64>; 2],
    /// Outward support normals and tangents.
    pub normal: [Vector2<f64>; 2],
    pub tangent: [Vector2<f64>; 2],
}

impl Body {
    pub fn new(cfg: &Configuration) -> Self {
        let r = [Vector2::new(cfg.l[0], -cfg.h), Vector2::new(cfg.l[1], -cfg.h)];
        let normal = cfg.phi.map(|p| Vector2::new(-p.sin(), p.cos()));
        let tangent = cfg.phi.map(|p| Vector2::new(p.cos(), p.sin()));
        Body {
            cfg: *cfg,
            r,
            normal,
            tangent,
        }
    }

    pub fn inv_mass(&self) -> Vector3<f64> {
        let m = self.cfg.m;
        Vector3::new(1.0 / m, 1.0 / m, 1.0 / (m * self.cfg.rho * self.cfg.rho))
    }

    /// External generalized force `(F_x, F_z, τ)`.
    pub fn load(&self) -> Vector3<f64> {
        let f = self.cfg.f_ex;
        let a = self.cfg.alpha;
        Vector3::new(f * a.sin(), -f * a.cos(), self.cfg.tau_ex)
    }

    fn rotated(&self, i: usize, theta: f64) -> Vector2<f64> {
        let (s, c) = theta.sin_cos();
        let r = self.r[i];
        Vector2::new(c * r.x - s * r.y, s * r.x + c * r.y)
    }

    /// Generalized directions of the normal and tangential contact velocity
    /// of point `i` at orientation `theta`.
    pub fn jacobians(&self, i: usize, theta: f64) -> (Vector3<f64>, Vector3<f64>) {
        let rr = self.rotated(i, theta);
        let dr = Vector2::new(-rr.y, rr.x);
        let (n, t) = (self.normal[i], self.tangent[i]);
        (
            Vector3::new(n.x, n.y, n.dot(&dr)),
            Vector3::new(t.x, t.y, t.dot(&dr)),
        )
    }

    /// Normal gap and tangential displacement of point `i` for a pose
    /// `(x, z, θ)` measured from the reference pose.
    pub fn gap(&self, i: usize, pose: &Vector3<f64>) -> (f64, f64) {
        let d = Vector2::new(pose.x, pose.y) + self.rotated(i, pose.z) - self.r[i];
        (self.normal[i].dot(&d), self.tangent[i].dot(&d))
    }

    /// Rows `(n1, n2, t2)` mapping body velocities to contact coordinates.
    pub fn contact_map(&self) -> Matrix3<f64> {
        let (n1, _) = self.jacobians(0, 0.0);
        let (n2, t2) = self.jacobians(1, 0.0);
        Matrix3::from_rows(&[n1.transpose(), n2.transpose(), t2.transpose()])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    Stick,
    Slip(i8),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleImpact {
    /// Post-impact `(ż1, ż2, ẋ2)`.
    pub post: Vector3<f64>,
    /// `(λ1n, λ1t, λ2n, λ2t)`, `None` for an indeterminate double stick.
    pub impulses: Option<[f64; 4]>,
    pub active: [bool; 2],
    pub regime: [Option<Regime>; 2],
    pub feasible_candidates: usize,
}

/// Enumerate every active set and tangential regime of an inelastic impact
/// and return the first feasible one in order of preference. `tol` is
/// relative to the pre-impact speed.
pub fn oracle_impact(
    cfg: &Configuration,
    dq: &Vector3<f64>,
    touching: [bool; 2],
    tol: f64,
) -> Option<OracleImpact> {
    let body = Body::new(cfg);
    let jmap = body.contact_map();
    let v0 = jmap.try_inverse()? * dq;
    let minv = body.inv_mass();
    let cols: Vec<Vector3<f64>> = (0..2)
        .flat_map(|i| {
            let (n, t) = body.jacobians(i, 0.0);
            [n, t]
        })
        .collect();
    let vscale = dq.amax();
    let tol_v = tol * vscale;
    let tol_j = tol * vscale * cfg.m;

    let mut sets: Vec<([bool; 2], [Option<Regime>; 2])> = Vec::new();
    let regimes = [Regime::Stick, Regime::Slip(1), Regime::Slip(-1)];
    if touching == [true, true] {
        for r2 in regimes {
            for r1 in regimes {
                sets.push(([true, true], [Some(r1), Some(r2)]));
            }
        }
    }
    for i in 0..2 {
        if touching[i] {
            for r in regimes {
                let mut reg = [None; 2];
                reg[i] = Some(r);
                let mut act = [false; 2];
                act[i] = true;
                sets.push((act, reg));
            }
        }
    }
    // Preference: double before single, contact 1 before contact 2, stick
    // before slip, positive before negative (ordered by contact 2 first for
    // double impacts).
    let rank = |r: Option<Regime>| match r {
        None | Some(Regime::Stick) => 0,
        Some(Regime::Slip(1)) => 1,
        _ => 2,
    };
    sets.sort_by_key(|(a, r)| {
        let double = if a[0] && a[1] { 0 } else { 1 };
        let first = if a[0] { 0 } else { 1 };
        let key = if a[0] && a[1] { rank(r[1]) * 3 + rank(r[0]) } else { rank(r[first]) };
        (double, first, key)
    });

    let mut found: Option<OracleImpact> = None;
    let mut feasible = 0;
    for (active, regime) in sets {
        let sol = if regime == [Some(Regime::Stick); 2] {
            // Post velocity zero: v⁺ = 0 = v0 + M⁻¹ Σ λ_k c_k, solve the
            // indeterminate split and check cone feasibility on the segment.
            double_stick(&cols, &minv, &v0, cfg.mu, tol_j).map(|_| (Vector3::zeros(), None))
        } else {
            let mut a = SMatrix::<f64, 7, 7>::zeros();
            let mut rhs = SVector::<f64, 7>::zeros();
            for r in 0..3 {
                a[(r, r)] = 1.0;
                for (k, c) in cols.iter().enumerate() {
                    a[(r, 3 + k)] = -minv[r] * c[r];
                }
                rhs[r] = v0[r];
            }
            for i in 0..2 {
                let (rn, rt) = (3 + 2 * i, 4 + 2 * i);
                let (n, t) = (cols[2 * i], cols[2 * i + 1]);
                match regime[i] {
                    None => {
                        a[(rn, 3 + 2 * i)] = 1.0;
                        a[(rt, 4 + 2 * i)] = 1.0;
                    }
                    Some(Regime::Stick) => {
                        for k in 0..3 {
                            a[(rn, k)] = n[k];
                            a[(rt, k)] = t[k];
                        }
                    }
                    Some(Regime::Slip(s)) => {
                        for k in 0..3 {
                            a[(rn, k)] = n[k];
                        }
                        a[(rt, 4 + 2 * i)] = 1.0;
                        a[(rt, 3 + 2 * i)] = f64::from(s) * cfg.mu[i];
                    }
                }
            }
            a.lu().solve(&rhs).and_then(|u| {
                let v = Vector3::new(u[0], u[1], u[2]);
                let lam = [u[3], u[4], u[5], u[6]];
                let ok = (0..2).all(|i| {
                    let (n, t) = (cols[2 * i], cols[2 * i + 1]);
                    let (ln, lt) = (lam[2 * i], lam[2 * i + 1]);
                    match regime[i] {
                        None => !touching[i] || n.dot(&v) >= -tol_v,
                        Some(Regime::Stick) => ln >= -tol_j && cfg.mu[i] * ln - lt.abs() >= -tol_j,
                        Some(Regime::Slip(s)) => ln >= -tol_j && f64::from(s) * t.dot(&v) >= -tol_v,
                    }
                });
                ok.then_some((v, Some(lam)))
            })
        };
        if let Some((v, lam)) = sol {
            feasible += 1;
            if found.is_none() {
                let mut post = jmap * v;
                for i in 0..2 {
                    if active[i] {
                        post[i] = 0.0;
                    }
                }
                found = Some(OracleImpact {
                    post,
                    impulses: lam,
                    active,
                    regime,
                    feasible_candidates: 0,
                });
            }
        }
    }
    found.map(|mut f| {
        f.feasible_candidates = feasible;
        f
    })
}

/// Interval of the one-parameter family of impulses stopping the body whose
/// members lie in both friction cones (within `tol`).
fn double_stick(
    cols: &[Vector3<f64>],
    minv: &Vector3<f64>,
    v0: &Vector3<f64>,
    mu: [f64; 2],
    tol: f64,
) -> Option<(f64, f64)> {
    let mut a = SMatrix::<f64, 3, 4>::zeros();
    for (k, c) in cols.iter().enumerate() {
        for r in 0..3 {
            a[(r, k)] = minv[r] * c[r];
        }
    }
    let b = -v0;
    let svd = a.svd(true, true);
    let p = svd.solve(&b, 1e-14).ok()?;
    // Pad with a zero row so the SVD returns a full basis of R⁴.
    let mut sq = SMatrix::<f64, 4, 4>::zeros();
    sq.fixed_view_mut::<3, 4>(0, 0).copy_from(&a);
    let full = sq.svd(false, true);
    let k = full.singular_values.imin();
    let null = full.v_t?.row(k).transpose();
    // Slacks s(τ) = c0 + τ c1 of the six cone inequalities.
    let lin = |f: &SVector<f64, 4>| {
        [
            f[0],
            mu[0] * f[0] - f[1],
            mu[0] * f[0] + f[1],
            f[2],
            mu[1] * f[2] - f[3],
            mu[1] * f[2] + f[3],
        ]
    };
    let c0 = lin(&p);
    let c1 = lin(&null);
    let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
    for k in 0..6 {
        if c1[k].abs() < 1e-14 {
            if c0[k] < -tol {
                return None;
            }
        } else if c1[k] > 0.0 {
            lo = lo.max((-tol - c0[k]) / c1[k]);
        } else {
            hi = hi.min((-tol - c0[k]) / c1[k]);
        }
    }
    (lo <= hi).then_some((lo, hi))
}

/// Letters and impacts recovered from a time-stepping run.
#[derive(Debug, Clone, Default)]
pub struct OracleTrace {
    pub words: Vec<String>,
    /// `(t, contact, normal approach speed)`.
    pub impacts: Vec<(f64, usize, f64)>,
    pub t_end: f64,
}

/// State of the full nonlinear body: pose `(x, z, θ)` from the reference
/// pose and its velocity.
#[derive(Debug, Clone, Copy)]
pub struct BodyState {
    pub pose: Vector3<f64>,
    pub vel: Vector3<f64>,
}

/// Pose with contact `lifted` raised by `lift` (normal gap), the other
/// contact on its support and not displaced tangentially. Only valid for a
/// common flat support.
pub fn lifted_pose(body: &Body, lifted: usize, lift: f64) -> BodyState {
    let other = 1 - lifted;
    let (rl, ro) = (body.r[lifted], body.r[other]);
    let s = lift / (rl.x - ro.x);
    let theta = s.asin();
    let (sn, c) = theta.sin_cos();
    // Rotated offset of the resting point; keep it in place.
    let rot = Vector2::new(c * ro.x - sn * ro.y, sn * ro.x + c * ro.y);
    let d = ro - rot;
    BodyState {
        pose: Vector3::new(d.x, d.y, theta),
        vel: Vector3::zeros(),
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct StepInfo {
    /// Contacts in the active set at the midpoint.
    pub active: [bool; 2],
    pub lambda_n: [f64; 2],
    /// Normal and tangential contact velocity after the step.
    pub un: [f64; 2],
    pub ut: [f64; 2],
    /// Normal contact velocity before the step.
    pub un_pre: [f64; 2],
}

/// One step of the Moreau midpoint scheme with inelastic velocity-level
/// Signorini conditions and Coulomb friction, solved by projected
/// Gauss–Seidel.
pub fn oracle_step(body: &Body, s: &BodyState, dt: f64) -> (BodyState, StepInfo) {
    let minv = body.inv_mass();
    let mid = s.pose + s.vel * (0.5 * dt);
    let mut info = StepInfo::default();
    let mut jac = [(Vector3::zeros(), Vector3::zeros()); 2];
    for i in 0..2 {
        jac[i] = body.jacobians(i, mid.z);
        info.active[i] = body.gap(i, &mid).0 <= 0.0;
        info.un_pre[i] = jac[i].0.dot(&s.vel);
    }
    let mut v = s.vel + minv.component_mul(&body.load()) * dt;
    let mut lam = [[0.0f64; 2]; 2];
    let w = |a: &Vector3<f64>| a.component_mul(&minv).dot(a);
    let scale = v.amax().max(1e-300);
    for _ in 0..20_000 {
        let mut change = 0.0f64;
        for i in 0..2 {
            if !info.active[i] {
                continue;
            }
            let (n, t) = jac[i];
            let un = n.dot(&v);
            let new_n = (lam[i][0] - un / w(&n)).max(0.0);
            v += minv.component_mul(&n) * (new_n - lam[i][0]);
            change = change.max((new_n - lam[i][0]).abs() * w(&n));
            lam[i][0] = new_n;
            let ut = t.dot(&v);
            let bound = body.cfg.mu[i] * lam[i][0];
            let new_t = (lam[i][1] - ut / w(&t)).clamp(-bound, bound);
            v += minv.component_mul(&t) * (new_t - lam[i][1]);
            change = change.max((new_t - lam[i][1]).abs() * w(&t));
            lam[i][1] = new_t;
        }
        if change <= 1e-15 * scale {
            break;
        }
    }
    for i in 0..2 {
        info.lambda_n[i] = lam[i][0];
        info.un[i] = jac[i].0.dot(&v);
        info.ut[i] = jac[i].1.dot(&v);
    }
    let pose = mid + v * (0.5 * dt);
    (BodyState { pose, vel: v }, info)
}

/// Run the time-stepping scheme until `n_items` mode words and impact
/// markers have been recorded or `t_max` elapses. Runs of fewer than
/// `min_run` steps are treated as switching transients and dropped.
pub fn run_oracle(
    cfg: &Configuration,
    start: BodyState,
    dt: f64,
    t_max: f64,
    n_items: usize,
    min_run: usize,
) -> OracleTrace {
    let body = Body::new(cfg);
    let mut s = start;
    let mut t = 0.0;
    let mut trace = OracleTrace::default();
    let mut runs: Vec<(String, usize)> = Vec::new();
    let mut in_contact_prev = [0, 1].map(|i| body.gap(i, &s.pose).0 <= 1e-12);
    // Approach speeds below a few steps of free fall are resting contacts
    // settling, not impacts.
    let v_impact = 10.0 * dt * body.load().norm() / cfg.m;
    let mut vmax = 0.0f64;
    let push = |runs: &mut Vec<(String, usize)>, w: String| match runs.last_mut() {
        Some((last, n)) if *last == w => *n += 1,
        _ => runs.push((w, 1)),
    };
    loop {
        let (next, info) = oracle_step(&body, &s, dt);
        t += dt;
        vmax = vmax.max(next.vel.amax());
        let mut impacted = Vec::new();
        let mut letters = [' '; 2];
        for i in 0..2 {
            let touching = info.active[i] && info.lambda_n[i] > 0.0;
            if touching && !in_contact_prev[i] && info.un_pre[i] < -v_impact {
                impacted.push(i);
                trace.impacts.push((t - 0.5 * dt, i, -info.un_pre[i]));
            }
            letters[i] = if !touching {
                'F'
            } else if info.ut[i].abs() <= 1e-7 * vmax {
                'S'
            } else if info.ut[i] > 0.0 {
                'P'
            } else {
                'N'
            };
            in_contact_prev[i] = touching || (info.active[i] && info.un[i] <= 0.0);
        }
        match impacted.as_slice() {
            [] => {}
            [0] => runs.push(("I1".into(), usize::MAX)),
            [1] => runs.push(("I2".into(), usize::MAX)),
            _ => runs.push(("II".into(), usize::MAX)),
        }
        if impacted.is_empty() {
            push(&mut runs, letters.iter().collect());
        }
        s = next;
        let words = compress(&runs, min_run);
        if words.len() > n_items || t >= t_max {
            trace.words = words.into_iter().take(n_items).collect();
            trace.t_end = t;
            return trace;
        }
    }
}

fn compress(runs: &[(String, usize)], min_run: usize) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for (w, n) in runs {
        if *n < min_run {
            continue;
        }
        if out.last() != Some(w) {
            out.push(w.clone());
        }
    }
    out
}

/// Contact-coordinate state of a body state, for comparing with the ZOD.
pub fn to_contact_state(body: &Body, s: &BodyState) -> ContactState {
    let (z1, _) = body.gap(0, &s.pose);
    let (z2, x2) = body.gap(1, &s.pose);
    let (n1, _) = body.jacobians(0, s.pose.z);
    let (n2, t2) = body.jacobians(1, s.pose.z);
    ContactState::new([z1, z2, x2], [n1.dot(&s.vel), n2.dot(&s.vel), t2.dot(&s.vel)])
}
