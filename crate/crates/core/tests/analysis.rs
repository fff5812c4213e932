use std::f64::consts::PI;

use kslab_core::analysis::*;
use kslab_core::evolution::{evolve, Outcome, StepControls};
use kslab_core::initial::{initial_w0, ProfileFamily};
use kslab_core::{build_mass_grid, KsError, MassGrid, Params};
use proptest::prelude::*;

// Plain adaptive Simpson, independent of the library's quadrature.
fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn go(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, d: u32) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        if d == 0 || (left + right - whole).abs() <= 15.0 * tol {
            return left + right + (left + right - whole) / 15.0;
        }
        go(f, a, m, fa, flm, fm, left, 0.5 * tol, d - 1) + go(f, m, b, fm, frm, fb, right, 0.5 * tol, d - 1)
    }
    let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
    go(f, a, b, fa, fm, fb, (b - a) / 6.0 * (fa + 4.0 * fm + fb), tol, 40)
}

fn resolved(radius: f64, n: usize) -> (Params, MassGrid, Supersolution) {
    let p = Params::new(radius, 1.0).unwrap();
    let g = build_mass_grid(radius, n).unwrap();
    let sup = construct_supersolution(&p, 4.0 / (radius * radius), &g).unwrap();
    (p, g, sup)
}

#[test]
fn construction_closes_the_constant_chain() {
    let (_, _, sup) = resolved(1.0, 512);
    let p = 2.0 + 0.5 * sup.epsilon;
    let (s0, b, eps, c2) = (sup.s0, sup.b, sup.epsilon, sup.c2);
    let lhs = s0.powf(p) * simpson(&|x| x.powf(-p) * (0.5 * c2 * (x - s0)).exp(), s0, 1.0, 1e-15);
    let rhs = s0 + b + eps / (4.0 * b) * (s0 + b).powi(2);
    assert!((lhs - rhs).abs() < 1e-10 * rhs, "lhs {lhs} rhs {rhs}");
    assert!(sup.c2_residual < 1e-10);
    // s0 is the largest dyadic fraction meeting the log condition
    let cond = |s: f64| 0.5 * sup.c1 * (1.0 / s).ln() > 0.5 * sup.c1 + 1.0;
    assert!(cond(s0) && !cond(2.0 * s0));
    // b is half the slack of the eps = 0 inequality
    let slack = s0 * s0 * simpson(&|x| x.powi(-2) * (0.5 * sup.c1 * (x - s0)).exp(), s0, 1.0, 1e-15) - s0;
    assert!((b - 0.5 * slack).abs() < 1e-9 * b);
    // eps is half of a maximal admissible value
    let margin = |e: f64| {
        let q = 2.0 + 0.5 * e;
        s0.powf(q) * simpson(&|x| x.powf(-q) * (0.5 * sup.c1 * (x - s0)).exp(), s0, 1.0, 1e-15)
            - (s0 + b + e / (4.0 * b) * (s0 + b).powi(2))
    };
    assert!(margin(2.0 * eps * (1.0 - 1e-6)) > 0.0);
    assert!(margin(2.0 * eps * (1.0 + 1e-6)) < 0.0);
}

#[test]
fn end_values_and_mass() {
    let (_, g, sup) = resolved(1.0, 256);
    assert_eq!(sup.wbar[0], 0.0);
    assert_eq!(sup.wbar[256], 4.0 + sup.epsilon);
    assert!(sup.mbar > 8.0 * PI);
    assert!(sup.mass_excess() > 0.0);
    // the closed-form end value agrees with the pinned one
    assert!((sup.value(1.0) - (4.0 + sup.epsilon)).abs() < 1e-12);
    assert_eq!(sup.sample(&g), sup.wbar);
}

#[test]
fn outer_piece_matches_ode_integration() {
    // RK4 on the outer ODE in (w, w_s) from the matching point.
    let (_, g, sup) = resolved(1.0, 256);
    let (s0, b, eps, c2) = (sup.s0, sup.b, sup.epsilon, sup.c2);
    let rhs = |s: f64, y: [f64; 2]| [y[1], -(2.0 * (4.0 + eps) - 2.0 * c2 * s) * y[1] / (4.0 * s)];
    let mut y = [4.0 * s0 / (s0 + b), 4.0 * b / (s0 + b).powi(2)];
    let first = g.nodes.iter().position(|&s| s == s0).expect("s0 is a node");
    let sub = 1000;
    let mut worst = 0.0f64;
    for i in first..g.intervals {
        let h = g.spacing() / sub as f64;
        let mut s = g.nodes[i];
        for _ in 0..sub {
            let k1 = rhs(s, y);
            let k2 = rhs(s + 0.5 * h, [y[0] + 0.5 * h * k1[0], y[1] + 0.5 * h * k1[1]]);
            let k3 = rhs(s + 0.5 * h, [y[0] + 0.5 * h * k2[0], y[1] + 0.5 * h * k2[1]]);
            let k4 = rhs(s + h, [y[0] + h * k3[0], y[1] + h * k3[1]]);
            for j in 0..2 {
                y[j] += h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
            }
            s += h;
        }
        let node = g.nodes[i + 1];
        worst = worst.max((sup.wbar[i + 1] - y[0]).abs());
        worst = worst.max((sup.slope(node) - y[1]).abs());
    }
    assert!(worst < 1e-10, "worst {worst:e}");
    assert!((y[0] - (4.0 + eps)).abs() < 1e-8);
}

#[test]
fn residuals_vanish_and_differences_converge_at_second_order() {
    let (_, _, sup) = resolved(1.0, 64);
    let mut errs = Vec::new();
    for n in [256usize, 512, 1024, 2048] {
        let g = build_mass_grid(1.0, n).unwrap();
        let chk = verify_supersolution_inequality(&sup, sup.c2, &g);
        assert!(chk.max_residual < 1e-6 && chk.max_ode_residual < 1e-10, "{chk:?}");
        // difference-quotient error away from the kink at s0
        let w = sup.sample(&g);
        let h = g.spacing();
        let mut e = 0.0f64;
        for i in 1..n {
            let s = g.nodes[i];
            if (s - sup.s0).abs() < 2.0 * h {
                continue;
            }
            let d2 = (w[i + 1] - 2.0 * w[i] + w[i - 1]) / (h * h);
            e = e.max((4.0 * s * (d2 - sup.curvature(s))).abs());
        }
        errs.push(e);
    }
    for p in errs.windows(2) {
        let ratio = p[0] / p[1];
        assert!((3.0..5.5).contains(&ratio), "ratio {ratio} from {errs:?}");
    }
}

#[test]
fn default_c1_construction() {
    let p = Params::new(1.0, 1.0).unwrap();
    let g = build_mass_grid(1.0, 1024).unwrap();
    let controls = StepControls {
        t_end: 5.0,
        ..StepControls::default()
    };
    let cal = default_c1(&p, &g, &controls, 512).unwrap();
    assert!(cal.c1 > 0.0 && cal.c1 <= 4.0 && !cal.clamped);
    assert!((cal.c1 - cal.inner_mass * cal.green_bound / 8.0).abs() < 1e-15);
    let sup = construct_supersolution(&p, cal.c1, &g).unwrap();
    assert!(sup.mass_excess() > 0.0 && sup.epsilon > 0.0);
    let chk = verify_supersolution_inequality(&sup, sup.c2, &build_mass_grid(1.0, 4096).unwrap());
    assert!(chk.max_residual < 1e-6);
}

#[test]
fn infeasible_c1_is_reported() {
    let p = Params::new(1.0, 1.0).unwrap();
    let g = build_mass_grid(1.0, 64).unwrap();
    assert!(matches!(construct_supersolution(&p, 1e-3, &g), Err(KsError::Construction(_))));
    assert!(matches!(construct_supersolution(&p, 4.5, &g), Err(KsError::InvalidArgument(_))));
    assert!(matches!(construct_supersolution(&p, 0.0, &g), Err(KsError::InvalidArgument(_))));
}

#[test]
fn powerlaw_flags() {
    let g = build_mass_grid(1.0, 16).unwrap();
    let m = 8.0 * PI;
    assert!(powerlaw_subsolution(0.1, 3.0, m, &g).unwrap().valid);
    assert!(!powerlaw_subsolution(0.1, 2.5, m, &g).unwrap().valid);
    assert!(powerlaw_subsolution(0.0, 3.0, m, &g).is_err());
    let (delta, beta) = subsolution_defaults(m, 10.0 * PI, 2.0);
    assert_eq!(beta, 1.0 + 10.0 * PI / (4.0 * PI));
    assert!((delta - m / (2.0 * PI * 2f64.powf(2.0 * beta))).abs() < 1e-15);
    let pl = powerlaw_subsolution(delta, beta, m, &g).unwrap();
    assert_eq!(pl.values[16], pl.at(g.nodes[16]));
}

fn uniform_run(k: f64, mass: f64, n: usize, t_end: f64) -> (Params, MassGrid, Vec<kslab_core::WState>) {
    let p = Params::new(1.0, k).unwrap();
    let g = build_mass_grid(1.0, n).unwrap();
    let w0 = initial_w0(ProfileFamily::Uniform, &p, mass, &g).unwrap();
    let controls = StepControls {
        t_end,
        ..StepControls::default()
    };
    let run = evolve(w0, &p, &g, &controls).unwrap();
    (p, g, run.trajectory)
}

#[test]
fn trivial_orderings() {
    let (_, g, traj) = uniform_run(1.0, 20.0, 256, 2.0);
    let zeros = vec![0.0; g.nodes.len()];
    let chk = compare_order(&Barrier::Nodal(&zeros), &Barrier::None, &traj, &g);
    assert!(chk.ordered && chk.first_violation.is_none());
    let itself = |s: f64, t: f64| {
        let st = traj.iter().find(|x| x.t == t).unwrap();
        st.w[(s / g.spacing()).round() as usize]
    };
    let chk = compare_order(&Barrier::None, &Barrier::Function(&itself), &traj, &g);
    assert!(chk.ordered);
    assert_eq!(chk.upper_slack, 0.0);
    // a barrier that the solution crosses
    let low = vec![2.0; g.nodes.len()];
    let chk = compare_order(&Barrier::None, &Barrier::Nodal(&low), &traj, &g);
    assert!(!chk.ordered);
    let v = chk.first_violation.unwrap();
    assert_eq!(v.t, 0.0);
    assert!(v.excess > 0.0 && v.s > 0.0);
}

#[test]
fn powerlaw_subsolution_stays_below() {
    for family in [ProfileFamily::Uniform, ProfileFamily::Gaussian { sigma_frac: 0.25 }] {
        let p = Params::new(1.0, 1.0).unwrap();
        let g = build_mass_grid(1.0, 512).unwrap();
        let m = 20.0;
        let (delta, beta) = subsolution_defaults(m, m, 1.0);
        let lower = powerlaw_subsolution(delta, beta, m, &g).unwrap();
        assert!(lower.valid);
        let w0 = initial_w0(family, &p, m, &g).unwrap();
        assert!(w0.iter().zip(&lower.values).all(|(w, l)| w >= l));
        let controls = StepControls {
            t_end: 10.0,
            ..StepControls::default()
        };
        let run = evolve(w0, &p, &g, &controls).unwrap();
        let chk = compare_order(&Barrier::Nodal(&lower.values), &Barrier::None, &run.trajectory, &g);
        assert!(chk.ordered, "{family}: {chk:?}");
    }
}

#[test]
fn pinched_evolution_stays_below_supersolution() {
    let p = Params::new(1.0, 1.0).unwrap();
    let g = build_mass_grid(1.0, 1024).unwrap();
    let controls = StepControls {
        t_end: 10.0,
        ..StepControls::default()
    };
    let cal = default_c1(&p, &g, &controls, 512).unwrap();
    let sup = construct_supersolution(&p, cal.c1, &g).unwrap();
    let w0 = pinched_initial(&sup, &g);
    let chord: Vec<f64> = g.nodes.iter().map(|s| 4.0 * s).collect();
    assert!(w0.iter().zip(&sup.wbar).zip(&chord).all(|((w, u), l)| l <= w && w <= u));
    let run = evolve(w0, &p, &g, &controls).unwrap();
    assert_eq!(run.result.outcome, Outcome::Global);
    let chk = compare_order(&Barrier::None, &Barrier::Nodal(&sup.wbar), &run.trajectory, &g);
    assert!(chk.ordered, "{chk:?}");
    let zb = check_z_linear_bounds(&run.trajectory, &p, &g).unwrap();
    assert!(zb.sup_w_over_s.is_finite());
    assert!(zb.c_low >= sup.c2, "z/s = {} below c2 = {}", zb.c_low, sup.c2);
}

#[test]
fn z_bounds_for_uniform_data() {
    let (p, g, traj) = uniform_run(1.0, 20.0, 512, 5.0);
    let zb = check_z_linear_bounds(&traj, &p, &g).unwrap();
    assert!(zb.hypothesis_holds);
    assert!(zb.c_low > 0.0 && zb.c_high.is_finite() && zb.c_low <= zb.c_high);
    // the surrogate chain k c1 c2 / 8 with c1 the smallest inner mass
    let green = kslab_core::elliptic::ring_green_lower_bound(&p, 512).unwrap();
    let inner = traj
        .iter()
        .map(|st| 2.0 * PI * st.w[g.intervals / 4])
        .fold(f64::INFINITY, f64::min);
    assert!(zb.c_low >= p.k * inner * green / 8.0);

    // z carries the factor k
    let (p2, _, traj2) = uniform_run(2.0, 20.0, 512, 5.0);
    let zb2 = check_z_linear_bounds(&traj2[..1], &p2, &g).unwrap();
    let zb1 = check_z_linear_bounds(&traj[..1], &p, &g).unwrap();
    assert!(zb2.c_low > zb1.c_low);

    assert!(check_z_linear_bounds(&traj, &Params::new(1.0, 0.0).unwrap(), &g).is_err());
}

#[test]
fn annulus_data_fail_the_hypothesis() {
    let p = Params::new(1.0, 1.0).unwrap();
    let g = build_mass_grid(1.0, 256).unwrap();
    let w0 = initial_w0(ProfileFamily::Annulus { center_frac: 0.5, width_frac: 0.1 }, &p, 10.0, &g).unwrap();
    let run = evolve(
        w0,
        &p,
        &g,
        &StepControls {
            t_end: 0.5,
            ..StepControls::default()
        },
    )
    .unwrap();
    let zb = check_z_linear_bounds(&run.trajectory, &p, &g).unwrap();
    assert!(!zb.hypothesis_holds);
}

#[test]
fn k0_sweep_brackets_8pi() {
    let p = Params::new(1.0, 0.0).unwrap();
    let g = build_mass_grid(1.0, 1024).unwrap();
    let controls = StepControls {
        t_end: 50.0,
        ..StepControls::default()
    };
    let fam = [ProfileFamily::Gaussian { sigma_frac: 0.1 }];
    let masses: Vec<f64> = [0.7, 0.9, 1.1, 1.3].iter().map(|f| f * 8.0 * PI).collect();
    let table = classify_mass_sweep(&p, &fam, &masses, &g, &controls, 4).unwrap();
    assert_eq!(table.rows.len(), 4 + 4);
    assert!(table.rows.windows(2).all(|q| q[0].mass < q[1].mass));
    let b = &table.brackets[0];
    let (lo, hi) = (b.all_global_below.unwrap(), b.all_blowup_above.unwrap());
    assert!(lo < hi);
    assert!(lo >= 0.9 * 8.0 * PI && hi <= 1.1 * 8.0 * PI, "[{lo}, {hi}]");
    assert!(b.monotone_violations.is_empty());
    assert_eq!(b.undecided, 0);
}

#[test]
fn uniform_data_stay_global_above_8pi() {
    let p = Params::new(1.0, 1.0).unwrap();
    let g = build_mass_grid(1.0, 1024).unwrap();
    let controls = StepControls {
        t_end: 50.0,
        ..StepControls::default()
    };
    let m = 8.0 * PI + 0.5;
    let table = classify_mass_sweep(&p, &[ProfileFamily::Uniform], &[m], &g, &controls, 0).unwrap();
    assert_eq!(table.rows[0].result.outcome, Outcome::Global);
    assert!(table.brackets[0].all_global_below.unwrap() > 8.0 * PI);
}

#[test]
fn sweep_rejects_bad_masses_and_keeps_going_on_run_errors() {
    let p = Params::new(1.0, 0.0).unwrap();
    let g = build_mass_grid(1.0, 64).unwrap();
    let c = StepControls {
        t_end: 0.1,
        ..StepControls::default()
    };
    assert!(classify_mass_sweep(&p, &[ProfileFamily::Uniform], &[-1.0], &g, &c, 0).is_err());
    // a coarse grid cannot resolve a very narrow bump: classified at t = 0, no error
    let fam = [ProfileFamily::Gaussian { sigma_frac: 0.001 }];
    let t = classify_mass_sweep(&p, &fam, &[1.0], &g, &c, 0).unwrap();
    assert_eq!(t.rows.len(), 1);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn construction_invariants(radius in 0.5f64..4.0, k in 0.1f64..4.0, frac in 0.0025f64..=1.0) {
        let p = Params::new(radius, k).unwrap();
        let g = build_mass_grid(radius, 256).unwrap();
        let c1 = 4.0 * frac / (radius * radius);
        let sup = construct_supersolution(&p, c1, &g).unwrap();
        prop_assert!(sup.check_invariants().is_ok());
        prop_assert!(sup.c2_residual < 1e-10);
        prop_assert!(sup.mass_excess() > 0.0);
        let l = radius * radius;
        for i in 1..256 {
            prop_assert!(sup.wbar[i] > (4.0 + sup.epsilon) * g.nodes[i] / l);
        }
        let chk = verify_supersolution_inequality(&sup, sup.c2, &g);
        prop_assert!(chk.max_residual <= 1e-6);
    }
}
