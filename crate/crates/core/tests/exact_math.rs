use loadinv_core::clm::{
    der_a_power, fvl_rec, motor_d_stall_power, static_zip_power, LoadParams, Trajectory, V_D1, V_D2,
};
use loadinv_core::diffusion::Schedule;
use loadinv_core::metrics::{marpe, rmse, rpe};
use loadinv_core::ParamSpace;
use proptest::prelude::*;

const EXACT: f64 = 1e-12;

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= EXACT
}

fn defaults() -> Vec<f64> {
    ParamSpace::standard().defaults
}

fn named(overrides: &[(&str, f64)]) -> LoadParams {
    let space = ParamSpace::standard();
    let mut theta = space.defaults.clone();
    for (n, v) in overrides {
        theta[space.index(n).unwrap()] = *v;
    }
    LoadParams::from_slice(&theta).unwrap()
}

#[test]
fn rpe_zero_at_truth() {
    let space = ParamSpace::standard();
    assert!(rpe(&defaults(), &defaults(), &space).iter().all(|&v| v == 0.0));
}

#[test]
fn rpe_full_range_is_100() {
    let space = ParamSpace::standard();
    let r = rpe(&space.upper, &space.lower, &space);
    assert!(r.iter().all(|&v| close(v, 100.0)), "{r:?}");
    assert!(close(marpe(&r), 100.0));
}

#[test]
fn rpe_direct_substitution() {
    // estimate 0.25, truth 0.2, range 0.2
    let space = ParamSpace {
        names: vec!["x".into()],
        lower: vec![0.1],
        upper: vec![0.3],
        defaults: vec![0.2],
    };
    let r = rpe(&[0.25], &[0.2], &space);
    assert!(close(r[0], 25.0), "{}", r[0]);
}

#[test]
fn marpe_of_constant_rpe() {
    assert!(close(marpe(&[10.0; 30]), 10.0));
}

#[test]
fn rmse_identical_is_zero() {
    let t = Trajectory { p: vec![0.3; 512], q: vec![0.1; 512] };
    assert_eq!(rmse(&t, &t), 0.0);
}

#[test]
fn rmse_constant_offsets() {
    let base = Trajectory { p: (0..512).map(|i| (i as f64 * 0.01).sin()).collect(), q: vec![0.2; 512] };
    let d = 0.125;
    let p_only = Trajectory { p: base.p.iter().map(|v| v + d).collect(), q: base.q.clone() };
    let both = Trajectory { p: p_only.p.clone(), q: base.q.iter().map(|v| v + d).collect() };
    assert!(close(rmse(&p_only, &base), d));
    // sum of channel RMSEs, not the joint RMSE
    assert!(close(rmse(&both, &base), 2.0 * d));
}

#[test]
fn stall_power_substitution() {
    let p = named(&[("Fmd", 0.3), ("Rstall", 0.1), ("Np2", 2.0)]);
    let unit = LoadParams { fmd: 1.0, ..p.clone() };
    assert!(close(motor_d_stall_power(&unit, 1.0).0, 10.0));
    let (ps, qs) = motor_d_stall_power(&unit, 0.0);
    assert_eq!((ps, qs), (0.0, 0.0));
    // magnitudes V^2 / R and V^2 / X at the quadratic exponents
    let quad = LoadParams { np2: 2.0, nq2: 2.0, rstall: 0.125, xstall: 0.0625, ..unit };
    let (ps, qs) = motor_d_stall_power(&quad, 0.5);
    assert!(close(ps, 0.25 / 0.125));
    assert!(close(qs, 0.25 / 0.0625));
}

#[test]
fn trip_recovery_substitution() {
    assert!(close(fvl_rec(V_D1, 0.3), 1.0));
    assert!(close(fvl_rec(V_D2, 0.3), 0.3));
    assert!(close(fvl_rec(0.5 * (V_D1 + V_D2), 0.75), 0.875));
}

#[test]
fn zip_and_der_substitutions() {
    let p = named(&[("P1c", 0.0), ("P2c", 1.0)]);
    let fs = p.static_fraction();
    assert!(close(static_zip_power(&p, 1.0).0, fs));
    assert!(close(static_zip_power(&p, 0.5).0, 0.25 * fs));
    let unity = named(&[("PF", 1.0)]);
    assert_eq!(static_zip_power(&unity, 0.8).1, 0.0);

    let der = named(&[("FderA", -0.2), ("Imax", 1.2)]);
    assert!(close(der_a_power(&der, 1.0).0, -0.2));
    assert!(close(der_a_power(&der, 0.5).0, 0.6 * -0.2));
    assert_eq!(der_a_power(&der, 0.0), (0.0, 0.0));
}

#[test]
fn schedule_endpoints() {
    let s = Schedule::standard();
    assert_eq!(s.steps, 200);
    assert!(close(s.beta[0], 1e-4));
    assert!(close(s.beta[199], 5e-3));
    for i in 0..200 {
        assert_eq!(s.sigma[i], s.beta[i].sqrt());
        assert!(close(s.alpha[i], 1.0 - s.beta[i]));
    }
    assert!(s.beta.windows(2).all(|w| w[1] > w[0]));
    assert!(s.alpha_bar.windows(2).all(|w| w[1] < w[0]));
    // product oracle for the terminal cumulative value
    let prod: f64 = (0..200).map(|i| 1.0 - (1e-4 + (5e-3 - 1e-4) * i as f64 / 199.0)).product();
    assert!((s.alpha_bar[199] - prod).abs() < 1e-13);
    assert!((s.alpha_bar[199] - 0.599).abs() < 1e-3);
}

#[test]
fn p_step_reductions() {
    let s = Schedule::standard();
    let x = vec![0.3, -1.2, 0.8];
    let zero = vec![0.0; 3];
    for t in [1, 50, 200] {
        let out = s.p_step(&x, t, &zero, &zero);
        for (o, v) in out.iter().zip(&x) {
            assert!(close(*o, v / s.alpha[t - 1].sqrt()));
        }
    }
}

proptest! {
    #[test]
    fn q_sample_is_affine(
        x0 in prop::collection::vec(-1.0f64..1.0, 30),
        x1 in prop::collection::vec(-1.0f64..1.0, 30),
        e0 in prop::collection::vec(-3.0f64..3.0, 30),
        e1 in prop::collection::vec(-3.0f64..3.0, 30),
        lam in -2.0f64..2.0,
        t in 1usize..=200,
    ) {
        let s = Schedule::standard();
        let mix = |a: &[f64], b: &[f64]| -> Vec<f64> { a.iter().zip(b).map(|(u, v)| lam * u + (1.0 - lam) * v).collect() };
        // affine in the pair (x0, eps)
        let lhs = s.q_sample(&mix(&x0, &x1), t, &mix(&e0, &e1));
        let a = s.q_sample(&x0, t, &e0);
        let b = s.q_sample(&x1, t, &e1);
        for i in 0..30 {
            prop_assert!((lhs[i] - (lam * a[i] + (1.0 - lam) * b[i])).abs() <= EXACT);
        }
        // superposition of the two inputs
        let zero = vec![0.0; 30];
        let sx = s.q_sample(&x0, t, &zero);
        let se = s.q_sample(&zero, t, &e0);
        for i in 0..30 {
            prop_assert!((a[i] - (sx[i] + se[i])).abs() <= EXACT);
        }
    }

    #[test]
    fn rpe_affine_invariant(
        scale in 0.1f64..10.0,
        shift in -5.0f64..5.0,
        u in prop::collection::vec(0.0f64..1.0, 30),
        w in prop::collection::vec(0.0f64..1.0, 30),
    ) {
        let space = ParamSpace::standard();
        let est = space.denormalize(&u.iter().map(|v| 2.0 * v - 1.0).collect::<Vec<_>>());
        let tru = space.denormalize(&w.iter().map(|v| 2.0 * v - 1.0).collect::<Vec<_>>());
        let map = |v: &[f64]| -> Vec<f64> { v.iter().map(|x| scale * x + shift).collect() };
        let moved = ParamSpace { lower: map(&space.lower), upper: map(&space.upper), ..space.clone() };
        let a = rpe(&est, &tru, &space);
        let b = rpe(&map(&est), &map(&tru), &moved);
        for i in 0..30 {
            prop_assert!((a[i] - b[i]).abs() <= 1e-9 * (1.0 + a[i]));
        }
    }

    #[test]
    fn fvl_rec_monotone(v1 in 0.0f64..1.0, v2 in 0.0f64..1.0, f1 in 0.0f64..1.0, f2 in 0.0f64..1.0) {
        let (lo, hi) = if v1 <= v2 { (v1, v2) } else { (v2, v1) };
        let (fl, fh) = if f1 <= f2 { (f1, f2) } else { (f2, f1) };
        prop_assert!(fvl_rec(lo, fl) <= fvl_rec(hi, fl) + 1e-15);
        prop_assert!(fvl_rec(lo, fl) <= fvl_rec(lo, fh) + 1e-15);
    }
}
