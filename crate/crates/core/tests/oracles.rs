mod support;

use nalgebra::Vector3;
use proptest::prelude::*;
use support::*;
use twocontact::impact::{resolve_velocities, TangentialRegime};
use twocontact::simulator::{foot_lift, simulate, SimOptions};
use twocontact::{build_tableau, Configuration};

prop_compose! {
    fn any_config()(
        m in 0.1f64..10.0,
        rho in 0.02f64..0.3,
        h in 0.02f64..0.3,
        l1 in -0.3f64..0.1,
        span in 0.02f64..0.4,
        phi1 in -0.3f64..0.3,
        phi2 in -0.3f64..0.3,
        mu1 in 0.05f64..1.5,
        mu2 in 0.05f64..1.5,
        alpha in -0.6f64..0.6,
    ) -> Configuration {
        Configuration {
            m,
            rho,
            h,
            l: [l1, l1 + span],
            phi: [phi1, phi2],
            mu: [mu1, mu2],
            f_ex: m * 9.81,
            alpha,
            tau_ex: 0.0,
        }
    }
}

prop_compose! {
    fn pre_impact()(
        v in prop::array::uniform3(-1.0f64..1.0),
        which in 0usize..3,
    ) -> (Vector3<f64>, [bool; 2]) {
        let mut dq = Vector3::from(v);
        let touching = match which {
            0 => [true, false],
            1 => [false, true],
            _ => [true, true],
        };
        // Make sure some touching contact approaches.
        let i = if touching[0] { 0 } else { 1 };
        dq[i] = -dq[i].abs().max(1e-3);
        (dq, touching)
    }
}

fn regime_of(r: TangentialRegime) -> Regime {
    match r {
        TangentialRegime::Stick => Regime::Stick,
        TangentialRegime::SlipPos => Regime::Slip(1),
        TangentialRegime::SlipNeg => Regime::Slip(-1),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(400))]

    #[test]
    fn impact_law_matches_enumeration(cfg in any_config(), (dq, touching) in pre_impact()) {
        let tab = build_tableau(&cfg);
        prop_assume!(tab.is_ok());
        let tab = tab.unwrap();
        let lib = resolve_velocities(&tab, &dq, touching);
        let oracle = oracle_impact(&cfg, &dq, touching, 1e-10);
        match (lib, oracle) {
            (Ok(out), Some(o)) => {
                prop_assert_eq!(out.active, o.active);
                let lib_regime = out.regime.map(|r| r.map(regime_of));
                prop_assert_eq!(lib_regime, o.regime);
                let post = Vector3::from(out.post);
                prop_assert!((post - o.post).amax() <= 1e-9 * dq.amax(),
                    "post {:?} vs {:?}", post, o.post);
            }
            (Err(_), None) => {}
            (lib, oracle) => prop_assert!(false, "library {:?} vs oracle {:?}", lib, oracle),
        }
    }
}

#[test]
fn time_stepping_reproduces_config_a_words() {
    let cfg = config_a();
    let body = Body::new(&cfg);
    let start = lifted_pose(&body, 0, 1e-4);
    let trace = run_oracle(&cfg, start, 2e-7, 0.05, 10, 3);
    let traj = simulate(&cfg, &foot_lift(0, 1e-4), &SimOptions::default()).unwrap();
    let zod: Vec<String> = traj.event_words().into_iter().take(10).collect();
    assert_eq!(trace.words, zod);
    let zod_speeds: Vec<f64> = traj
        .impacts()
        .map(|(e, o)| {
            let i = if o.active[0] { 0 } else { 1 };
            -e.pre.dq[i]
        })
        .collect();
    for (k, &(_, _, v)) in trace.impacts.iter().take(5).enumerate() {
        let rel = (v - zod_speeds[k]).abs() / zod_speeds[k];
        assert!(rel < 0.03, "impact {k}: {v} vs {}", zod_speeds[k]);
    }
}

#[test]
fn lifted_pose_has_requested_gaps() {
    let cfg = config_d();
    let body = Body::new(&cfg);
    for foot in 0..2 {
        let s = lifted_pose(&body, foot, 1e-4);
        let cs = to_contact_state(&body, &s);
        assert!((cs.q[foot] - 1e-4).abs() < 1e-15);
        assert!(cs.q[1 - foot].abs() < 1e-15);
        // Second order in the rotation angle.
        assert!(cs.q[2].abs() < 1e-6);
    }
}

#[test]
fn body_jacobians_agree_with_tableau_kinetic_energy() {
    // T = ½ vᵀ M v in body coordinates equals ½ q̇ᵀ K⁻¹ q̇ in contact ones.
    let cfg = config_a();
    let tab = build_tableau(&cfg).unwrap();
    let body = Body::new(&cfg);
    let v = Vector3::new(0.3, -0.2, 1.7);
    let dq = body.contact_map() * v;
    let m = Vector3::new(cfg.m, cfg.m, cfg.m * cfg.rho * cfg.rho);
    let t_body = 0.5 * v.component_mul(&m).dot(&v);
    assert!((tab.kinetic_energy(&dq) - t_body).abs() < 1e-12 * t_body);
}
