//! Lyapunov functional, its dissipation, and the Bernstein-type monitor
//! `y_alpha = s^alpha w_s^2 / w` evaluated along trajectories.

use std::f64::consts::PI;

use crate::elliptic::v_from_wz;
use crate::grid::{mass_derivative, MassGrid, Params, RadialProfile, WState};
use crate::quadrature::trapezoid;

fn xlnx(x: f64) -> f64 {
    if x > 0.0 {
        x * x.ln()
    } else {
        0.0
    }
}

/// Three-point derivative on uneven radii; zero at `r = 0` (radial symmetry).
fn radial_derivative(r: &[f64], f: &[f64]) -> Vec<f64> {
    let m = r.len() - 1;
    let mut d = vec![0.0; m + 1];
    for j in 1..m {
        let (hl, hr) = (r[j] - r[j - 1], r[j + 1] - r[j]);
        d[j] = (-f[j - 1] * hr / (hl * (hl + hr))) + f[j] * (hr - hl) / (hl * hr)
            + f[j + 1] * hl / (hr * (hl + hr));
    }
    let (h1, h2) = (r[m] - r[m - 1], r[m - 1] - r[m - 2]);
    d[m] = f[m] * (2.0 * h1 + h2) / (h1 * (h1 + h2)) - f[m - 1] * (h1 + h2) / (h1 * h2)
        + f[m - 2] * h1 / (h2 * (h1 + h2));
    d
}

fn planar(r: &[f64], f: impl Fn(usize) -> f64) -> f64 {
    let g: Vec<f64> = (0..r.len()).map(|j| 2.0 * PI * r[j] * f(j)).collect();
    trapezoid(r, &g)
}

/// `F = 1/2 int |grad v|^2 + k/2 int v^2 - int u v + int u ln u` on the disk.
pub fn energy(u: &RadialProfile, v: &RadialProfile, params: &Params) -> f64 {
    let dv = radial_derivative(&v.r, &v.values);
    let (uu, vv) = (&u.values, &v.values);
    planar(&u.r, |j| {
        0.5 * dv[j] * dv[j] + 0.5 * params.k * vv[j] * vv[j] - uu[j] * vv[j] + xlnx(uu[j])
    })
}

/// `D = int u |grad(ln u - v)|^2 = int |2 grad sqrt(u) - sqrt(u) grad v|^2`.
/// The logarithmic form is used where `u > 0` on the whole stencil, so a
/// profile `u = lambda e^v` gives zero up to rounding however steep it is.
pub fn dissipation(u: &RadialProfile, v: &RadialProfile, _params: &Params) -> f64 {
    let n = u.values.len();
    let sqrt_u: Vec<f64> = u.values.iter().map(|x| x.max(0.0).sqrt()).collect();
    let dsq = radial_derivative(&u.r, &sqrt_u);
    let dv = radial_derivative(&v.r, &v.values);
    let g: Vec<f64> = (0..n)
        .map(|j| if u.values[j] > 0.0 { u.values[j].ln() - v.values[j] } else { 0.0 })
        .collect();
    let dg = radial_derivative(&u.r, &g);
    let positive = |j: usize| {
        let lo = if j == n - 1 { n - 3 } else { j.saturating_sub(1) };
        u.values[lo..=(j + 1).min(n - 1)].iter().all(|&x| x > 0.0)
    };
    planar(&u.r, |j| {
        let e = if positive(j) { sqrt_u[j] * dg[j] } else { 2.0 * dsq[j] - sqrt_u[j] * dv[j] };
        e * e
    })
}

/// Energy of a cumulated state, written in `s` with `dx = pi ds` and
/// `|grad v|^2 = (w - z)^2 / s`.
pub fn state_energy(state: &WState, params: &Params, grid: &MassGrid) -> f64 {
    let h = grid.spacing();
    let ws = mass_derivative(&state.w, h);
    let v = v_from_wz(&state.w, &state.z, grid);
    let f: Vec<f64> = (0..grid.len())
        .map(|i| {
            let s = grid.nodes[i];
            let grad2 = if i == 0 {
                0.0
            } else {
                let d = state.w[i] - state.z[i];
                d * d / s
            };
            let u = 2.0 * ws[i];
            0.5 * grad2 + 0.5 * params.k * v[i] * v[i] - u * v[i] + xlnx(u)
        })
        .collect();
    PI * trapezoid(&grid.nodes, &f)
}

/// Dissipation of a cumulated state: `pi/2 int (4 s w_ss + 2 w_s (w - z))^2 / (s w_s) ds`.
pub fn state_dissipation(state: &WState, grid: &MassGrid) -> f64 {
    let h = grid.spacing();
    let n = grid.intervals;
    let ws = mass_derivative(&state.w, h);
    let mut f = vec![0.0; n + 1];
    for i in 1..n {
        if ws[i] <= 0.0 {
            continue;
        }
        let s = grid.nodes[i];
        let wss = (state.w[i + 1] - 2.0 * state.w[i] + state.w[i - 1]) / (h * h);
        let x = 4.0 * s * wss + 2.0 * ws[i] * (state.w[i] - state.z[i]);
        f[i] = x * x / (2.0 * s * ws[i]);
    }
    PI * trapezoid(&grid.nodes, &f)
}

/// `max_{s > 0} s^alpha w_s^2 / w`; `+inf` when `w` vanishes where `w_s > 0`.
pub fn bernstein_monitor(state: &WState, grid: &MassGrid, alpha: f64) -> f64 {
    let ws = mass_derivative(&state.w, grid.spacing());
    let mut best: f64 = 0.0;
    for i in 1..grid.len() {
        let (w, d) = (state.w[i], ws[i]);
        if w < 1e-14 {
            if d > 0.0 {
                return f64::INFINITY;
            }
            continue;
        }
        best = best.max(grid.nodes[i].powf(alpha) * d * d / w);
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::build_mass_grid;

    #[test]
    fn zero_fields_have_zero_energy_and_dissipation() {
        let p = Params::new(1.0, 1.0).unwrap();
        let z = RadialProfile::sample(1.0, 32, |_| 0.0);
        assert_eq!(energy(&z, &z, &p), 0.0);
        assert_eq!(dissipation(&z, &z, &p), 0.0);
    }

    #[test]
    fn constant_density_flat_signal_dissipates_nothing() {
        let p = Params::new(1.0, 1.0).unwrap();
        let u = RadialProfile::sample(1.0, 32, |_| 3.0);
        let v = RadialProfile::sample(1.0, 32, |_| 0.0);
        assert!(dissipation(&u, &v, &p).abs() < 1e-14);
    }

    #[test]
    fn poisson_pair_dissipation_matches_closed_form() {
        // u = 1, v = (1 - r^2)/4 gives D = int (r/2)^2 2 pi r dr = pi R^4 / 8.
        for radius in [1.0, 1.5] {
            let p = Params::new(radius, 0.0).unwrap();
            let u = RadialProfile::sample(radius, 2000, |_| 1.0);
            let v = RadialProfile::sample(radius, 2000, |r| (radius * radius - r * r) / 4.0);
            let d = dissipation(&u, &v, &p);
            let exact = PI * radius.powi(4) / 8.0;
            assert!((d - exact).abs() < 1e-5 * exact, "{d} vs {exact}");
        }
    }

    #[test]
    fn monitor_linear_w() {
        let g = build_mass_grid(2.0, 64).unwrap();
        let c = 0.7;
        let st = WState::new(0.0, g.nodes.iter().map(|s| c * s).collect(), vec![0.0; 65]);
        let y = bernstein_monitor(&st, &g, 2.0);
        assert!((y - c * 4.0).abs() < 1e-12);
    }

    #[test]
    fn monitor_guards_vanishing_w() {
        let g = build_mass_grid(1.0, 16).unwrap();
        let mut w = vec![0.0; 17];
        w[16] = 1.0;
        let st = WState::new(0.0, w, vec![0.0; 17]);
        assert!(bernstein_monitor(&st, &g, 2.0).is_infinite());
    }
}
