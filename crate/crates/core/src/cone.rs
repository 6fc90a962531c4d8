//! Friction-cone feasibility for statically indeterminate two-contact sticking.
//!
//! Both SS continuous motion and a double sticking impact reduce to the same
//! problem: find `f = (f1z, f1x, f2z, f2x)` with `B f = r` (three equations)
//! such that `f_iz ≥ 0` and `|f_ix| ≤ μ_i f_iz`. The solution set is a
//! segment of a line, so the best point is found by maximising the smallest
//! of six affine slacks along that line.

use nalgebra::{Matrix3, Matrix3x4, Vector3, Vector4};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConeSolution {
    /// `(f1z, f1x, f2z, f2x)`.
    pub forces: [f64; 4],
    /// Smallest slack `min(f_iz, μ_i f_iz - f_ix, μ_i f_iz + f_ix)`; negative
    /// when no force distribution lies inside both cones.
    pub margin: f64,
}

/// Slacks of the six cone inequalities for a force vector.
pub fn slacks(f: &Vector4<f64>, mu: [f64; 2]) -> [f64; 6] {
    [
        f[0],
        mu[0] * f[0] - f[1],
        mu[0] * f[0] + f[1],
        f[2],
        mu[1] * f[2] - f[3],
        mu[1] * f[2] + f[3],
    ]
}

fn null_vector(b: &Matrix3x4<f64>) -> Vector4<f64> {
    let mut v = Vector4::zeros();
    for j in 0..4 {
        let cols: Vec<_> = (0..4).filter(|&c| c != j).map(|c| b.column(c).into_owned()).collect();
        let minor = Matrix3::from_columns(&cols).determinant();
        v[j] = if j % 2 == 0 { minor } else { -minor };
    }
    let n = v.norm();
    if n > 0.0 {
        v / n
    } else {
        v
    }
}

/// Force distribution satisfying `B f = r` with the largest cone margin.
pub fn max_margin(b: &Matrix3x4<f64>, r: &Vector3<f64>, mu: [f64; 2]) -> ConeSolution {
    let svd = b.svd(true, true);
    let f0 = svd
        .solve(r, 1e-14 * svd.singular_values.max())
        .unwrap_or_else(|_| Vector4::zeros());
    let v = null_vector(b);

    let a = slacks(&f0, mu);
    let dv = slacks(&v, mu);
    let slope_scale = dv.iter().fold(0.0f64, |acc, x| acc.max(x.abs()));
    let eval = |s: f64| {
        a.iter()
            .zip(dv.iter())
            .map(|(ak, bk)| ak + bk * s)
            .fold(f64::INFINITY, f64::min)
    };

    // The objective is concave and piecewise linear; its maximum sits where a
    // rising slack meets a falling one.
    let mut best_s = 0.0;
    let mut best = eval(0.0);
    if slope_scale > 0.0 {
        let tiny = 1e-14 * slope_scale;
        for k in 0..6 {
            for l in 0..6 {
                if dv[k] > tiny && dv[l] < -tiny {
                    let s = (a[l] - a[k]) / (dv[k] - dv[l]);
                    let val = eval(s);
                    if val > best {
                        best = val;
                        best_s = s;
                    }
                }
            }
        }
    }
    let f = f0 + v * best_s;
    ConeSolution {
        forces: [f[0], f[1], f[2], f[3]],
        margin: best,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symmetric_internal_force_is_centred() {
        // Tangential components are coupled only through their sum, so the
        // split between the contacts is free; the best point carries no friction.
        let b = Matrix3x4::new(
            1.0, 0.5, 0.2, 0.5, //
            0.2, 0.5, 1.0, 0.5, //
            0.0, 1.0, 0.0, 1.0,
        );
        let r = Vector3::new(1.2, 1.2, 0.0);
        let sol = max_margin(&b, &r, [0.5, 0.5]);
        let f = Vector4::from(sol.forces);
        assert!((b * f - r).norm() < 1e-12);
        assert!((sol.forces[0] - 1.0).abs() < 1e-12);
        assert!((sol.forces[2] - 1.0).abs() < 1e-12);
        assert!(sol.forces[1].abs() < 1e-12 && sol.forces[3].abs() < 1e-12);
        assert!((sol.margin - 0.5).abs() < 1e-12);
    }

    #[test]
    fn infeasible_load_has_negative_margin() {
        let b = Matrix3x4::new(
            1.0, 0.5, 0.2, 0.5, //
            0.2, 0.5, 1.0, 0.5, //
            0.0, 1.0, 0.0, 1.0,
        );
        // Tangential load 3 against total friction capacity 0.5 * 2.
        let r = Vector3::new(1.2 + 1.5, 1.2 + 1.5, 3.0);
        let sol = max_margin(&b, &r, [0.5, 0.5]);
        assert!(sol.margin < 0.0);
    }
}
