use std::f64::consts::PI;

use kslab_core::elliptic::{solve_helmholtz_radial, v_from_z};
use kslab_core::evolution::{
    bernstein_monitor, energy, evolve, initial_state, state_energy, step, Advection, Outcome,
    StepControls, Stepper,
};
use kslab_core::initial::{initial_w0, ProfileFamily};
use kslab_core::quadrature::gauss_legendre_composite;
use kslab_core::{build_mass_grid, w_to_u, KsError, MassGrid, Params, RadialProfile, WState};
use proptest::prelude::*;

fn bessel_i(nu: u32, x: f64) -> f64 {
    // Power series, fine for moderate x.
    let mut term = (0.5 * x).powi(nu as i32) / (1..=nu).map(f64::from).product::<f64>();
    let mut sum = term;
    for j in 1..200 {
        term *= 0.25 * x * x / (j as f64 * (j + nu) as f64);
        sum += term;
        if term < 1e-18 * sum {
            break;
        }
    }
    sum
}

#[test]
fn zero_mass_stays_zero() {
    let params = Params::new(1.0, 1.0).unwrap();
    let grid = build_mass_grid(1.0, 64).unwrap();
    let mut state = initial_state(vec![0.0; 65], &params, &grid).unwrap();
    for _ in 0..50 {
        state = step(&state, 1e-3, &params, &grid).unwrap();
    }
    assert!(state.w.iter().chain(&state.z).all(|&x| x == 0.0));

    let controls = StepControls { t_end: 1.0, ..StepControls::default() };
    let ev = evolve(vec![0.0; 65], &params, &grid, &controls).unwrap();
    assert_eq!(ev.result.outcome, Outcome::Global);
    assert!(ev.trajectory.iter().all(|s| s.w.iter().all(|&x| x == 0.0)));
}

#[test]
fn explicit_upwind_rejects_large_dt() {
    // A steep front near the origin, where transport dominates diffusion,
    // moved by several cells in one step.
    let params = Params::new(1.0, 0.0).unwrap();
    let grid = build_mass_grid(1.0, 256).unwrap();
    let h = grid.spacing();
    let w0: Vec<f64> = grid.nodes.iter().map(|&s| 50.0 * (s / (5.0 * h)).min(1.0)).collect();
    let state = initial_state(w0, &params, &grid).unwrap();
    let mut stepper = Stepper::new(&params, &grid).unwrap().with_scheme(Advection::Upwind);
    let err = stepper.step(&state, 0.1 * h).unwrap_err();
    assert!(matches!(err, KsError::MonotonicityLoss { .. }), "{err:?}");
}

#[test]
fn step_rejects_nonpositive_dt() {
    let params = Params::new(1.0, 1.0).unwrap();
    let grid = build_mass_grid(1.0, 32).unwrap();
    let state = initial_state(grid.nodes.clone(), &params, &grid).unwrap();
    assert!(step(&state, 0.0, &params, &grid).is_err());
    assert!(step(&state, f64::NAN, &params, &grid).is_err());
}

#[test]
fn controls_validation() {
    assert!(StepControls::default().validate().is_ok());
    let bad = [
        StepControls { dt_min: 0.0, ..StepControls::default() },
        StepControls { dt_init: 1.0, ..StepControls::default() },
        StepControls { cfl: 1.0, ..StepControls::default() },
        StepControls { u_blowup: Some(-1.0), ..StepControls::default() },
    ];
    for c in bad {
        assert!(c.validate().is_err(), "{c:?}");
    }
}

fn monotone_w(increments: &[f64], top: f64) -> Vec<f64> {
    let total: f64 = increments.iter().sum();
    let mut w = vec![0.0];
    let mut acc = 0.0;
    for x in increments {
        acc += x;
        w.push(top * acc / total);
    }
    *w.last_mut().unwrap() = top;
    w
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn step_preserves_invariants(
        increments in prop::collection::vec(0.0f64..1.0, 64),
        top in 0.1f64..8.0,
        k in 0.0f64..3.0,
        dt_frac in 0.01f64..1.0,
        implicit in any::<bool>(),
    ) {
        prop_assume!(increments.iter().sum::<f64>() > 1e-3);
        let params = Params::new(1.0, k).unwrap();
        let grid = build_mass_grid(1.0, 64).unwrap();
        let w0 = monotone_w(&increments, top);
        let state = initial_state(w0, &params, &grid).unwrap();
        let (scheme, dt) = if implicit {
            (Advection::Hybrid, dt_frac)
        } else {
            let speed = Stepper::max_speed(&state).max(1e-12);
            (Advection::Upwind, 0.9 * dt_frac * grid.spacing() / speed)
        };
        let mut stepper = Stepper::new(&params, &grid).unwrap().with_scheme(scheme);
        let next = stepper.step(&state, dt).unwrap();
        prop_assert_eq!(next.w[64].to_bits(), top.to_bits());
        prop_assert_eq!(next.w[0], 0.0);
        prop_assert_eq!(next.z[0], 0.0);
        let tol = 1e-12 * top;
        prop_assert!(next.w.windows(2).all(|p| p[1] - p[0] >= -tol));
        prop_assert!(next.z.windows(2).all(|p| p[1] - p[0] >= -tol));
        prop_assert!(next.z.iter().all(|&z| z >= -tol && z <= top + tol));
    }
}

#[test]
fn evolve_tracks_invariants_and_energy() {
    let params = Params::new(1.0, 1.0).unwrap();
    let grid = build_mass_grid(1.0, 512).unwrap();
    let m = 0.5 * 8.0 * PI;
    let w0 = initial_w0(ProfileFamily::Gaussian { sigma_frac: 0.1 }, &params, m, &grid).unwrap();
    let controls = StepControls { t_end: 5.0, ..StepControls::default() };
    let ev = evolve(w0, &params, &grid, &controls).unwrap();
    let r = &ev.result;
    assert_eq!(r.outcome, Outcome::Global);
    assert!(r.invariants.mass_bit_stable);
    assert!(r.invariants.min_relative_increment >= -1e-12);
    assert!(r.invariants.max_z_violation <= 1e-12);
    let f0 = r.diagnostics[0].energy;
    assert!(r.energy_increase() <= 1e-3 * f0.abs(), "{}", r.energy_increase());
    assert!(r.diagnostics.iter().all(|d| d.dissipation >= 0.0));
    // Uniform sampling away from blow-up.
    let times: Vec<f64> = ev.trajectory.iter().map(|s| s.t).collect();
    for (j, t) in times.iter().enumerate() {
        assert!((t - 0.5 * j as f64).abs() < 1e-9, "{times:?}");
    }
    // Bounded runs keep the monitor bounded.
    let y_last = r.diagnostics.last().unwrap().y_alpha_max;
    assert!(y_last.is_finite() && y_last < 10.0);
}

#[test]
fn supercritical_k0_blows_up_with_geometric_snapshots() {
    let params = Params::new(1.0, 0.0).unwrap();
    let grid = build_mass_grid(1.0, 2048).unwrap();
    let m = 1.2 * 8.0 * PI;
    let w0 = initial_w0(ProfileFamily::Gaussian { sigma_frac: 0.1 }, &params, m, &grid).unwrap();
    let ev = evolve(w0, &params, &grid, &StepControls::default()).unwrap();
    let r = &ev.result;
    assert_eq!(r.outcome, Outcome::Blowup);
    let t_star = r.t_star.unwrap();
    assert!(t_star > 0.0 && t_star < 50.0);
    assert_eq!(r.t_final, t_star);
    assert!(r.sup_u > r.u_blowup);
    // Snapshots double in sup norm on the way up.
    let sups: Vec<f64> = r.diagnostics.iter().map(|d| d.sup_u).collect();
    assert!(sups.len() >= 4, "{sups:?}");
    let rising = &sups[..sups.len() - 1];
    assert!(rising.windows(2).all(|p| p[1] >= 2.0 * p[0]), "{sups:?}");
    assert!(*sups.last().unwrap() > r.u_blowup);
}

#[test]
fn subcritical_k0_is_global() {
    let params = Params::new(1.0, 0.0).unwrap();
    let grid = build_mass_grid(1.0, 512).unwrap();
    let m = 0.9 * 8.0 * PI;
    let w0 = initial_w0(ProfileFamily::Gaussian { sigma_frac: 0.1 }, &params, m, &grid).unwrap();
    let controls = StepControls { t_end: 10.0, ..StepControls::default() };
    let ev = evolve(w0, &params, &grid, &controls).unwrap();
    assert_eq!(ev.result.outcome, Outcome::Global);
    assert!(ev.result.diagnostics.last().unwrap().dissipation < 1e-6);
}

#[test]
fn explicit_schemes_agree_with_implicit_on_smooth_data() {
    let params = Params::new(1.0, 1.0).unwrap();
    let grid = build_mass_grid(1.0, 512).unwrap();
    let m = 0.5 * 8.0 * PI;
    let w0 = initial_w0(ProfileFamily::Gaussian { sigma_frac: 0.25 }, &params, m, &grid).unwrap();
    let finals: Vec<Vec<f64>> = [Advection::Hybrid, Advection::Upwind, Advection::Muscl]
        .into_iter()
        .map(|advection| {
            let controls = StepControls {
                t_end: 0.2,
                sample_dt: 0.2,
                max_change: 1e-3,
                advection,
                ..StepControls::default()
            };
            let ev = evolve(w0.clone(), &params, &grid, &controls).unwrap();
            ev.trajectory.last().unwrap().w.clone()
        })
        .collect();
    let top = w0[512];
    for other in &finals[1..] {
        let diff = finals[0].iter().zip(other).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(diff < 1e-2 * top, "{diff}");
    }
}

/// Independent finite-volume solver for `u_t = div(grad u - u grad v)`,
/// `-lap v + k v = u`, `v(R) = 0`, on cell centres, forward Euler in time.
struct ReferenceSolver {
    h: f64,
    k: f64,
    centres: Vec<f64>,
}

impl ReferenceSolver {
    fn new(radius: f64, cells: usize, k: f64) -> Self {
        let h = radius / cells as f64;
        Self { h, k, centres: (0..cells).map(|j| (j as f64 + 0.5) * h).collect() }
    }

    fn solve_v(&self, u: &[f64]) -> Vec<f64> {
        let m = u.len();
        let h = self.h;
        let (mut a, mut b, mut c, mut d) = (vec![0.0; m], vec![0.0; m], vec![0.0; m], vec![0.0; m]);
        for j in 0..m {
            let rj = self.centres[j];
            let vol = rj * h;
            let left = if j > 0 { rj - 0.5 * h } else { 0.0 };
            let right = rj + 0.5 * h;
            a[j] = -left / h;
            c[j] = -right / h;
            b[j] = left / h + right / h + self.k * vol;
            if j + 1 == m {
                // v = 0 on the outer face, half a cell away.
                c[j] = 0.0;
                b[j] = left / h + 2.0 * right / h + self.k * vol;
            }
            d[j] = u[j] * vol;
        }
        for j in 1..m {
            let f = a[j] / b[j - 1];
            b[j] -= f * c[j - 1];
            d[j] -= f * d[j - 1];
        }
        let mut v = vec![0.0; m];
        v[m - 1] = d[m - 1] / b[m - 1];
        for j in (0..m - 1).rev() {
            v[j] = (d[j] - c[j] * v[j + 1]) / b[j];
        }
        v
    }

    fn advance(&self, u: &mut Vec<f64>, t_end: f64) -> Vec<f64> {
        let m = u.len();
        let h = self.h;
        let dt = 0.2 * h * h;
        let steps = (t_end / dt).ceil() as usize;
        let dt = t_end / steps as f64;
        for _ in 0..steps {
            let v = self.solve_v(u);
            let mut flux = vec![0.0; m + 1];
            for j in 0..m - 1 {
                let face = self.centres[j] + 0.5 * h;
                let mean = 0.5 * (u[j] + u[j + 1]);
                flux[j + 1] = face * ((u[j + 1] - u[j]) / h - mean * (v[j + 1] - v[j]) / h);
            }
            for j in 0..m {
                u[j] += dt * (flux[j + 1] - flux[j]) / (self.centres[j] * h);
            }
        }
        self.solve_v(u)
    }
}

#[test]
fn matches_independent_density_solver() {
    let (radius, k) = (1.0, 1.0);
    let m = 0.5 * 8.0 * PI;
    let family = ProfileFamily::Gaussian { sigma_frac: 0.25 };
    let profile = family.profile(radius, m, 8192);
    let t_end = 0.01;

    let reference = ReferenceSolver::new(radius, 400, k);
    let mut u_ref: Vec<f64> = reference.centres.iter().map(|&r| profile.interpolate(r)).collect();
    let v_ref = reference.advance(&mut u_ref, t_end);

    let params = Params::new(radius, k).unwrap();
    let grid = build_mass_grid(radius, 2048).unwrap();
    let w0 = initial_w0(family, &params, m, &grid).unwrap();
    let controls = StepControls {
        t_end,
        sample_dt: t_end,
        dt_max: 1e-5,
        ..StepControls::default()
    };
    let ev = evolve(w0, &params, &grid, &controls).unwrap();
    let last = ev.trajectory.last().unwrap();
    assert!((last.t - t_end).abs() < 1e-12);
    let u = w_to_u(last, &grid).unwrap();
    let v = v_from_z(&last.z, &params, &grid).unwrap();

    let rel = |ours: &RadialProfile, theirs: &[f64]| {
        let scale = theirs.iter().fold(0.0f64, |a, x| a.max(x.abs()));
        reference
            .centres
            .iter()
            .zip(theirs)
            .map(|(&r, x)| (ours.interpolate(r) - x).abs())
            .fold(0.0, f64::max)
            / scale
    };
    let (eu, ev_) = (rel(&u, &u_ref), rel(&v, &v_ref));
    assert!(eu < 1e-2, "u relative error {eu}");
    assert!(ev_ < 1e-2, "v relative error {ev_}");
}

#[test]
fn state_energy_matches_profile_energy() {
    let params = Params::new(1.0, 1.0).unwrap();
    let grid = build_mass_grid(1.0, 4096).unwrap();
    let m = 0.5 * 8.0 * PI;
    let w0 = initial_w0(ProfileFamily::Gaussian { sigma_frac: 0.25 }, &params, m, &grid).unwrap();
    let state = initial_state(w0, &params, &grid).unwrap();
    let from_state = state_energy(&state, &params, &grid);

    let u = ProfileFamily::Gaussian { sigma_frac: 0.25 }.profile(1.0, m, 4096);
    let v = solve_helmholtz_radial(&u, &params).unwrap();
    let from_profile = energy(&u, &v, &params);
    let rel = (from_state - from_profile).abs() / from_profile.abs();
    assert!(rel < 1e-3, "{from_state} vs {from_profile}");
}

#[test]
fn energy_of_constant_density_matches_bessel_oracle() {
    // u = e on the unit disk, k = 1: v = e (1 - I0(r) / I0(1)).
    let e = std::f64::consts::E;
    let params = Params::new(1.0, 1.0).unwrap();
    let u = RadialProfile::sample(1.0, 4096, |_| e);
    let v = solve_helmholtz_radial(&u, &params).unwrap();
    let computed = energy(&u, &v, &params);

    let i0r = bessel_i(0, 1.0);
    let v_exact = |r: f64| e * (1.0 - bessel_i(0, r) / i0r);
    let dv_exact = |r: f64| -e * bessel_i(1, r) / i0r;
    let integrand = |r: f64| {
        let (vr, dvr) = (v_exact(r), dv_exact(r));
        2.0 * PI * r * (0.5 * dvr * dvr + 0.5 * vr * vr - e * vr + e)
    };
    let oracle = gauss_legendre_composite(&integrand, 0.0, 1.0, 8);
    assert!((computed - oracle).abs() < 1e-5 * oracle.abs(), "{computed} vs {oracle}");
}

fn golden_max(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let g = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..200 {
        let x1 = b - g * (b - a);
        let x2 = a + g * (b - a);
        if f(x1) > f(x2) {
            b = x2;
        } else {
            a = x1;
        }
    }
    f(0.5 * (a + b))
}

#[test]
fn monitor_matches_one_dimensional_maximisation() {
    let grid = build_mass_grid(1.0, 8192).unwrap();
    for (b, alpha) in [(0.1, 2.0), (0.05, 1.5), (0.2, 3.0)] {
        let w: Vec<f64> = grid.nodes.iter().map(|&s| 4.0 * s / (s + b)).collect();
        let state = WState::new(0.0, w, vec![0.0; grid.len()]);
        let monitor = bernstein_monitor(&state, &grid, alpha);
        let y = |s: f64| {
            let ws = 4.0 * b / ((s + b) * (s + b));
            s.powf(alpha) * ws * ws / (4.0 * s / (s + b))
        };
        let oracle = golden_max(y, 1e-9, 1.0);
        assert!((monitor - oracle).abs() < 1e-4 * oracle, "b={b} alpha={alpha}: {monitor} vs {oracle}");
    }
}

#[test]
fn initial_state_validation() {
    let params = Params::new(1.0, 1.0).unwrap();
    let grid: MassGrid = build_mass_grid(1.0, 16).unwrap();
    assert!(initial_state(vec![0.0; 5], &params, &grid).is_err());
    let mut w = grid.nodes.clone();
    w[0] = 0.1;
    assert!(initial_state(w, &params, &grid).is_err());
    let mut w = grid.nodes.clone();
    w[5] = 0.0;
    assert!(matches!(
        initial_state(w, &params, &grid),
        Err(KsError::MonotonicityLoss { .. })
    ));
}
