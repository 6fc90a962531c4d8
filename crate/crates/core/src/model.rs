//! Physical parameters, generalized state and the zero-order dynamics (ZOD).
//!
//! Sign conventions: the `x` axis is tangent to the support and points
//! downhill in the slope case, `z` is the outward normal. `l_i` is the
//! tangential offset of contact point `i` from the centre of mass (positive
//! downhill), `h` the height of the centre of mass above the contact line
//! and `phi_i` the tilt of the contact normal at point `i`. Contact 1 is the
//! uphill point. The external load is a force of magnitude `f_ex` pointing
//! at angle `alpha` from the inward normal towards `+x`, plus a torque.
//!
//! ```text
//!            z
//!            ^        CoM
//!            |         o ----------+
//!            |        /|           | h
//!            |  -----/-|-----------+------> x  (downhill)
//!            |      p1 |<-l2->p2
//!                   <-l1->   (l1 < 0 when p1 is uphill of the CoM)
//! ```
//!
//! Generalized coordinates are `q = (z1, z2, x2)`: the normal displacement of
//! both contact points and the tangential displacement of point 2.

use std::fmt;
use std::str::FromStr;

use nalgebra::{Matrix3, Matrix3x4, SMatrix, SVector, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cone::{self, ConeSolution};

/// Standard gravity used by the slope constructors, m/s².
pub const DEFAULT_GRAVITY: f64 = 9.81;
/// Smallest admissible `|cos phi_i|`.
pub const TOL_GEOM: f64 = 1e-6;
/// Penetration tolerance, m.
pub const TOL_PEN: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),
    #[error("invalid parameter `{name}` = {value}: {reason}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },
    #[error("contact mode {0} leads to a singular linear system")]
    SingularMode(ContactMode),
}

/// Parameters of the body, its two contacts and the external load (SI units).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Configuration {
    /// Mass, kg.
    pub m: f64,
    /// Radius of gyration about the centre of mass, m.
    pub rho: f64,
    /// Height of the centre of mass above the contact line, m.
    pub h: f64,
    /// Tangential offsets of the contact points from the centre of mass, m.
    pub l: [f64; 2],
    /// Contact normal directions, rad.
    pub phi: [f64; 2],
    /// Coulomb friction coefficients.
    pub mu: [f64; 2],
    /// External force magnitude, N.
    pub f_ex: f64,
    /// External force angle (the slope angle under gravity), rad.
    pub alpha: f64,
    /// External torque, N·m.
    pub tau_ex: f64,
}

impl Configuration {
    /// Body on a slope of angle `alpha` under gravity `g` (`phi_i = 0`,
    /// `tau_ex = 0`, `f_ex = m g`).
    #[allow(clippy::too_many_arguments)]
    pub fn on_slope(
        m: f64,
        rho: f64,
        h: f64,
        l1: f64,
        l2: f64,
        mu1: f64,
        mu2: f64,
        alpha: f64,
        g: f64,
    ) -> Self {
        Configuration {
            m,
            rho,
            h,
            l: [l1, l2],
            phi: [0.0, 0.0],
            mu: [mu1, mu2],
            f_ex: m * g,
            alpha,
            tau_ex: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let finite = [
            ("m", self.m),
            ("rho", self.rho),
            ("h", self.h),
            ("l1", self.l[0]),
            ("l2", self.l[1]),
            ("phi1", self.phi[0]),
            ("phi2", self.phi[1]),
            ("mu1", self.mu[0]),
            ("mu2", self.mu[1]),
            ("f_ex", self.f_ex),
            ("alpha", self.alpha),
            ("tau_ex", self.tau_ex),
        ];
        for (name, value) in finite {
            if !value.is_finite() {
                return Err(ModelError::InvalidParameter {
                    name,
                    value,
                    reason: "must be finite",
                });
            }
        }
        if self.m <= 0.0 {
            return Err(ModelError::InvalidParameter {
                name: "m",
                value: self.m,
                reason: "mass must be positive",
            });
        }
        if self.rho <= 0.0 {
            return Err(ModelError::InvalidParameter {
                name: "rho",
                value: self.rho,
                reason: "radius of gyration must be positive",
            });
        }
        for (i, name) in [(0, "mu1"), (1, "mu2")] {
            if self.mu[i] < 0.0 {
                return Err(ModelError::InvalidParameter {
                    name,
                    value: self.mu[i],
                    reason: "friction coefficient must be non-negative",
                });
            }
        }
        for i in 0..2 {
            if self.phi[i].cos().abs() < TOL_GEOM {
                return Err(ModelError::DegenerateGeometry(format!(
                    "|cos(phi{})| = {:e} is below {:e}",
                    i + 1,
                    self.phi[i].cos().abs(),
                    TOL_GEOM
                )));
            }
        }
        if self.phi[0] == 0.0 && self.phi[1] == 0.0 && self.l[0] >= self.l[1] {
            return Err(ModelError::DegenerateGeometry(format!(
                "contact points must satisfy l1 < l2 on a flat support (l1 = {}, l2 = {})",
                self.l[0], self.l[1]
            )));
        }
        Ok(())
    }

    /// Characteristic load magnitude used to normalise force tolerances, N.
    pub fn load_scale(&self) -> f64 {
        let s = self.f_ex.abs().max(self.tau_ex.abs() / self.rho);
        if s > 0.0 {
            s
        } else {
            self.m * DEFAULT_GRAVITY
        }
    }

    pub fn eta(&self, i: usize) -> f64 {
        self.l[i] * self.phi[i].cos() - self.h * self.phi[i].sin()
    }

    pub fn xi(&self, i: usize) -> f64 {
        self.h * self.phi[i].cos() + self.l[i] * self.phi[i].sin()
    }
}

/// Generalized coordinates `(z1, z2, x2)`, their rates and the time.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ContactState {
    pub q: Vector3<f64>,
    pub dq: Vector3<f64>,
    pub t: f64,
}

impl ContactState {
    pub fn new(q: [f64; 3], dq: [f64; 3]) -> Self {
        ContactState {
            q: Vector3::from(q),
            dq: Vector3::from(dq),
            t: 0.0,
        }
    }

    pub fn equilibrium() -> Self {
        Self::default()
    }

    pub fn z(&self, i: usize) -> f64 {
        self.q[i]
    }

    pub fn dz(&self, i: usize) -> f64 {
        self.dq[i]
    }

    pub fn x2(&self) -> f64 {
        self.q[2]
    }

    pub fn dx2(&self) -> f64 {
        self.dq[2]
    }

    /// Distance from the equilibrium,
    /// `max(√z1, √z2, √|x2|, |ż1|, |ż2|, |ẋ2|)`.
    pub fn delta(&self) -> f64 {
        self.big_d().max(self.q[2].abs().sqrt())
    }

    /// Pseudo-metric `D`: `Δ` without the tangential displacement.
    pub fn big_d(&self) -> f64 {
        self.small_d().max(self.dq[2].abs())
    }

    /// Pseudo-metric `d`: normal coordinates only.
    pub fn small_d(&self) -> f64 {
        self.q[0]
            .max(0.0)
            .sqrt()
            .max(self.q[1].max(0.0).sqrt())
            .max(self.dq[0].abs())
            .max(self.dq[1].abs())
    }
}

/// Regime of a single contact during continuous motion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Letter {
    /// Free (separated).
    F,
    /// Sticking.
    S,
    /// Slipping in the positive tangential direction.
    P,
    /// Slipping in the negative tangential direction.
    N,
}

impl Letter {
    pub const ALL: [Letter; 4] = [Letter::F, Letter::S, Letter::P, Letter::N];

    pub fn is_slip(self) -> bool {
        matches!(self, Letter::P | Letter::N)
    }

    pub fn in_contact(self) -> bool {
        self != Letter::F
    }

    /// Tangential direction of slip: +1 for `P`, -1 for `N`, 0 otherwise.
    pub fn slip_sign(self) -> i8 {
        match self {
            Letter::P => 1,
            Letter::N => -1,
            _ => 0,
        }
    }

    fn as_char(self) -> char {
        match self {
            Letter::F => 'F',
            Letter::S => 'S',
            Letter::P => 'P',
            Letter::N => 'N',
        }
    }
}

/// Two-letter contact mode word; the first letter refers to contact 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ContactMode(pub [Letter; 2]);

impl ContactMode {
    pub const SS: ContactMode = ContactMode([Letter::S, Letter::S]);
    pub const FF: ContactMode = ContactMode([Letter::F, Letter::F]);

    pub fn new(first: Letter, second: Letter) -> Self {
        ContactMode([first, second])
    }

    /// All 16 words.
    pub fn all() -> impl Iterator<Item = ContactMode> {
        Letter::ALL
            .into_iter()
            .flat_map(|a| Letter::ALL.into_iter().map(move |b| ContactMode([a, b])))
    }

    pub fn letter(&self, i: usize) -> Letter {
        self.0[i]
    }

    /// Both contacts slipping (PP, NN, PN or NP).
    pub fn is_two_contact_slip(&self) -> bool {
        self.0[0].is_slip() && self.0[1].is_slip()
    }

    pub fn contacts(&self) -> usize {
        self.0.iter().filter(|l| l.in_contact()).count()
    }
}

impl fmt::Display for ContactMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.0[0].as_char(), self.0[1].as_char())
    }
}

impl FromStr for ContactMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parse = |c: char| match c {
            'F' => Ok(Letter::F),
            'S' => Ok(Letter::S),
            'P' => Ok(Letter::P),
            'N' => Ok(Letter::N),
            other => Err(format!("unknown contact letter `{other}`")),
        };
        let chars: Vec<char> = s.trim().chars().collect();
        if chars.len() != 2 {
            return Err(format!("contact mode `{s}` must have two letters"));
        }
        Ok(ContactMode([parse(chars[0])?, parse(chars[1])?]))
    }
}

impl Serialize for ContactMode {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ContactMode {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Constant coefficients of the zero-order dynamics
///
/// `q̈ = b_ex + Σ_i (B_iz f_iz + B_ix f_ix)`.
///
/// The force columns already include the `1/m` factor. The tableau also
/// carries `x1_row`, the linear map `x1 = x1_row · q` giving the tangential
/// displacement of contact 1 in generalized coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZodTableau {
    pub m: f64,
    pub mu: [f64; 2],
    pub eta: [f64; 2],
    pub xi: [f64; 2],
    pub b_ex: Vector3<f64>,
    pub normal: [Vector3<f64>; 2],
    pub tangential: [Vector3<f64>; 2],
    pub x1_row: Vector3<f64>,
    pub load_scale: f64,
}

/// Assemble the ZOD tableau of a configuration.
pub fn build_tableau(cfg: &Configuration) -> Result<ZodTableau, ModelError> {
    cfg.validate()?;
    let m = cfg.m;
    let r2 = 1.0 / (cfg.rho * cfg.rho);
    let eta = [cfg.eta(0), cfg.eta(1)];
    let xi = [cfg.xi(0), cfg.xi(1)];
    let [phi1, phi2] = cfg.phi;
    let a = cfg.alpha;

    let b_ex = (Vector3::new(-(a - phi1).cos(), -(a - phi2).cos(), (a - phi2).sin()) * cfg.f_ex
        + Vector3::new(eta[0], eta[1], xi[1]) * (r2 * cfg.tau_ex))
        / m;

    let col_z = |i: usize| {
        let p = cfg.phi[i];
        Vector3::new(
            (phi1 - p).cos() + r2 * eta[i] * eta[0],
            (phi2 - p).cos() + r2 * eta[i] * eta[1],
            (phi2 - p).sin() + r2 * eta[i] * xi[1],
        ) / m
    };
    let col_x = |i: usize| {
        let p = cfg.phi[i];
        Vector3::new(
            (p - phi1).sin() + r2 * xi[i] * eta[0],
            (p - phi2).sin() + r2 * xi[i] * eta[1],
            (p - phi2).cos() + r2 * xi[i] * xi[1],
        ) / m
    };

    // Rows of the body-velocity to generalized-velocity map in (x, z, θ).
    let normal_row = |i: usize| Vector3::new(-cfg.phi[i].sin(), cfg.phi[i].cos(), eta[i]);
    let tangent_row = |i: usize| Vector3::new(cfg.phi[i].cos(), cfg.phi[i].sin(), xi[i]);
    let jq = Matrix3::from_rows(&[
        normal_row(0).transpose(),
        normal_row(1).transpose(),
        tangent_row(1).transpose(),
    ]);
    let scale = cfg.h.abs().max(cfg.l[0].abs()).max(cfg.l[1].abs()).max(cfg.rho);
    let det = jq.determinant();
    if det.abs() < TOL_GEOM * scale {
        return Err(ModelError::DegenerateGeometry(format!(
            "generalized coordinates (z1, z2, x2) are not independent (det = {det:e})"
        )));
    }
    let x1_row = jq
        .transpose()
        .lu()
        .solve(&tangent_row(0))
        .ok_or_else(|| ModelError::DegenerateGeometry("singular coordinate map".into()))?;
    if x1_row[2].abs() < TOL_GEOM {
        return Err(ModelError::DegenerateGeometry(
            "tangential velocities of the two contacts are decoupled".into(),
        ));
    }

    Ok(ZodTableau {
        m,
        mu: cfg.mu,
        eta,
        xi,
        b_ex,
        normal: [col_z(0), col_z(1)],
        tangential: [col_x(0), col_x(1)],
        x1_row,
        load_scale: cfg.load_scale(),
    })
}

impl ZodTableau {
    /// Columns `[B_1z, B_1x, B_2z, B_2x]`.
    pub fn force_matrix(&self) -> Matrix3x4<f64> {
        Matrix3x4::from_columns(&[
            self.normal[0],
            self.tangential[0],
            self.normal[1],
            self.tangential[1],
        ])
    }

    /// Inverse-mass operator in generalized coordinates: columns
    /// `[B_1z, B_2z, B_2x]`.
    pub fn inverse_mass(&self) -> Matrix3<f64> {
        Matrix3::from_columns(&[self.normal[0], self.normal[1], self.tangential[1]])
    }

    pub fn acceleration(&self, normal: [f64; 2], tangential: [f64; 2]) -> Vector3<f64> {
        self.b_ex
            + self.normal[0] * normal[0]
            + self.normal[1] * normal[1]
            + self.tangential[0] * tangential[0]
            + self.tangential[1] * tangential[1]
    }

    /// Tangential rate of contact `i` for generalized rates `v`.
    pub fn tangential_rate(&self, i: usize, v: &Vector3<f64>) -> f64 {
        if i == 0 {
            self.x1_row.dot(v)
        } else {
            v[2]
        }
    }

    /// Ratio `ẋ1 / ẋ2` while both contacts are maintained.
    pub fn two_contact_ratio(&self) -> f64 {
        self.x1_row[2]
    }

    /// Kinetic energy `½ q̇ᵀ K⁻¹ q̇` with `K` the inverse-mass operator.
    pub fn kinetic_energy(&self, dq: &Vector3<f64>) -> f64 {
        let k = self.inverse_mass();
        match k.cholesky() {
            Some(ch) => 0.5 * dq.dot(&ch.solve(dq)),
            None => f64::NAN,
        }
    }
}

/// Accelerations and contact forces of one contact mode under the ZOD.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ModeSolution {
    pub mode: ContactMode,
    /// `(z̈1, z̈2, ẍ2)`.
    #[serde(serialize_with = "ser_vec3")]
    pub qdd: Vector3<f64>,
    /// Normal forces `(f1z, f2z)`.
    pub normal: [f64; 2],
    /// Tangential forces `(f1x, f2x)`.
    pub tangential: [f64; 2],
    pub consistent: bool,
    pub marginal: bool,
    /// Smallest normalised inequality slack (set by the consistency check;
    /// for SS also the best friction-cone margin of the static solve).
    pub margin: f64,
}

pub(crate) fn ser_vec3<S: serde::Serializer>(v: &Vector3<f64>, s: S) -> Result<S::Ok, S::Error> {
    use serde::ser::SerializeSeq;
    let mut seq = s.serialize_seq(Some(3))?;
    for x in v.iter() {
        seq.serialize_element(x)?;
    }
    seq.end()
}

impl ModeSolution {
    /// Tangential acceleration of contact `i`.
    pub fn tangential_accel(&self, tab: &ZodTableau, i: usize) -> f64 {
        tab.tangential_rate(i, &self.qdd)
    }
}

/// Solve the equality constraints of `mode` together with the tableau.
///
/// SS is statically indeterminate (four force components, three equations);
/// its forces are chosen to maximise the smallest friction-cone margin, and
/// that margin is reported in [`ModeSolution::margin`].
pub fn mode_dynamics(tab: &ZodTableau, mode: ContactMode) -> Result<ModeSolution, ModelError> {
    if mode == ContactMode::SS {
        let ConeSolution { forces, margin } =
            cone::max_margin(&tab.force_matrix(), &(-tab.b_ex), tab.mu);
        return Ok(ModeSolution {
            mode,
            qdd: Vector3::zeros(),
            normal: [forces[0], forces[2]],
            tangential: [forces[1], forces[3]],
            consistent: false,
            marginal: false,
            margin: margin / tab.load_scale,
        });
    }

    // Unknowns: (q̈0, q̈1, q̈2, f1z, f1x, f2z, f2x).
    let mut a = SMatrix::<f64, 7, 7>::zeros();
    let mut rhs = SVector::<f64, 7>::zeros();
    let b = tab.force_matrix();
    for r in 0..3 {
        a[(r, r)] = 1.0;
        for c in 0..4 {
            a[(r, 3 + c)] = -b[(r, c)];
        }
        rhs[r] = tab.b_ex[r];
    }
    for i in 0..2 {
        let (row, fz, fx) = (3 + 2 * i, 3 + 2 * i, 4 + 2 * i);
        match mode.letter(i) {
            Letter::F => {
                a[(row, fz)] = 1.0;
                a[(row + 1, fx)] = 1.0;
            }
            Letter::S => {
                a[(row, i)] = 1.0;
                if i == 0 {
                    for c in 0..3 {
                        a[(row + 1, c)] = tab.x1_row[c];
                    }
                } else {
                    a[(row + 1, 2)] = 1.0;
                }
            }
            Letter::P | Letter::N => {
                a[(row, i)] = 1.0;
                // f_ix = -sgn(ẋ_i) μ_i f_iz
                a[(row + 1, fx)] = 1.0;
                a[(row + 1, fz)] = f64::from(mode.letter(i).slip_sign()) * tab.mu[i];
            }
        }
    }

    let svd = a.svd(false, false);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smin > 1e-12 * smax) {
        return Err(ModelError::SingularMode(mode));
    }
    let u = a
        .lu()
        .solve(&rhs)
        .ok_or(ModelError::SingularMode(mode))?;
    let mut normal = [u[3], u[5]];
    let mut tangential = [u[4], u[6]];
    for i in 0..2 {
        if mode.letter(i) == Letter::F {
            normal[i] = 0.0;
            tangential[i] = 0.0;
        }
    }
    Ok(ModeSolution {
        mode,
        qdd: Vector3::new(u[0], u[1], u[2]),
        normal,
        tangential,
        consistent: false,
        marginal: false,
        margin: 0.0,
    })
}
