//! Radial steady states `v'' + v'/r - k v = -lambda e^v`, `v'(0) = 0`,
//! `v(R) = 0`, with density `u = lambda e^v`, traced by shooting from the
//! centre value `a = v(0)`.

use std::f64::consts::{E, PI};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{KsError, Result};
use crate::grid::{Params, RadialProfile};

/// `|v|` beyond which a shot is abandoned (`e^v` overflows near 709).
pub const DIVERGENCE_LEVEL: f64 = 700.0;
pub const DEFAULT_A_MAX: f64 = 20.0;
pub const DEFAULT_CELLS: usize = 8192;
/// Tolerance added to the mass bound `8 pi + 2 k pi R^2`.
pub const MASS_BOUND_TOL: f64 = 1e-3;

struct Shot {
    v: Vec<f64>,
    dv: Vec<f64>,
    /// Running `int_0^r rho e^v d rho` and `int_0^r rho v d rho` at the nodes.
    moment_exp: Vec<f64>,
    moment_v: Vec<f64>,
    /// `(r, v)` where `|v|` passed [`DIVERGENCE_LEVEL`].
    diverged: Option<(f64, f64)>,
    /// Whether `v` dropped below zero before the integration stopped.
    crossed: bool,
}

/// Substeps per cell so that each substep is at most a quarter of the local
/// length scale `(lambda e^v)^(-1/2)`; one for resolved profiles.
fn substeps(h: f64, lambda: f64, v: f64) -> usize {
    let q = 4.0 * h * (lambda * v.min(DIVERGENCE_LEVEL).exp()).sqrt();
    if q <= 1.0 {
        1
    } else {
        (q.ceil() as usize).min(1 << 20)
    }
}

/// Classical RK4 on the uniform grid `r_i = i R / cells`, started from the
/// series `v = a + c1 r^2 + c2 r^4`. Cells narrower than the local length
/// scale are crossed in one step; a centre peak narrower than a cell is
/// crossed in substeps. The two moments ride along as extra components, so
/// for them each step is Simpson's rule. With `stop_at_crossing` the
/// integration ends as soon as `v < 0`.
fn integrate(a: f64, lambda: f64, params: &Params, cells: usize, stop_at_crossing: bool) -> Shot {
    let k = params.k;
    let h = params.radius / cells as f64;
    let mut shot = Shot {
        v: Vec::with_capacity(cells + 1),
        dv: Vec::with_capacity(cells + 1),
        moment_exp: Vec::with_capacity(cells + 1),
        moment_v: Vec::with_capacity(cells + 1),
        diverged: None,
        crossed: false,
    };
    shot.v.push(a);
    shot.dv.push(0.0);
    shot.moment_exp.push(0.0);
    shot.moment_v.push(0.0);

    let ea = lambda * a.exp();
    let c1 = 0.25 * (k * a - ea);
    let c2 = (k - ea) * c1 / 16.0;
    let rhs = |r: f64, y: &[f64; 4]| {
        [y[1], k * y[0] - lambda * y[0].exp() - y[1] / r, r * y[0].exp(), r * y[0]]
    };
    let rk4 = |r: f64, y: &[f64; 4], dr: f64| {
        let shift = |y: &[f64; 4], d: &[f64; 4], c: f64| {
            [y[0] + c * d[0], y[1] + c * d[1], y[2] + c * d[2], y[3] + c * d[3]]
        };
        let k1 = rhs(r, y);
        let k2 = rhs(r + 0.5 * dr, &shift(y, &k1, 0.5 * dr));
        let k3 = rhs(r + 0.5 * dr, &shift(y, &k2, 0.5 * dr));
        let k4 = rhs(r + dr, &shift(y, &k3, dr));
        let mut out = *y;
        for j in 0..4 {
            out[j] += dr / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
        }
        out
    };

    // First cell: series up to r0, then substeps if the centre is narrow.
    let n0 = substeps(h, lambda, a);
    let r0 = h / n0 as f64;
    let mut y = [
        a + c1 * r0 * r0 + c2 * r0.powi(4),
        2.0 * c1 * r0 + 4.0 * c2 * r0.powi(3),
        0.5 * r0 * r0 * a.exp() * (1.0 + 0.5 * c1 * r0 * r0),
        0.5 * r0 * r0 * (a + 0.5 * c1 * r0 * r0),
    ];
    let mut r = r0;
    for _ in 1..n0 {
        y = rk4(r, &y, r0);
        r += r0;
    }
    for i in 1..=cells {
        if i > 1 {
            let n = substeps(h, lambda, y[0]);
            let dr = h / n as f64;
            let base = (i - 1) as f64 * h;
            for j in 0..n {
                y = rk4(base + j as f64 * dr, &y, dr);
            }
        }
        r = i as f64 * h;
        shot.v.push(y[0]);
        shot.dv.push(y[1]);
        shot.moment_exp.push(y[2]);
        shot.moment_v.push(y[3]);
        if y[0] < 0.0 {
            shot.crossed = true;
            if stop_at_crossing {
                return shot;
            }
        }
        if y[0].abs() > DIVERGENCE_LEVEL || !y[0].is_finite() {
            shot.diverged = Some((r, y[0]));
            return shot;
        }
    }
    shot
}

fn radii(radius: f64, cells: usize) -> Vec<f64> {
    let h = radius / cells as f64;
    (0..=cells).map(|i| if i == cells { radius } else { i as f64 * h }).collect()
}

/// Shoot from `v(0) = a` with multiplier `lambda`; returns the profile and `v(R)`.
pub fn shoot(a: f64, lambda: f64, params: &Params, cells: usize) -> Result<(RadialProfile, f64)> {
    check_shot_args(a, lambda, cells)?;
    let shot = integrate(a, lambda, params, cells, false);
    if let Some((r, v)) = shot.diverged {
        return Err(KsError::Diverged { r, v });
    }
    let v_end = shot.v[cells];
    Ok((RadialProfile { r: radii(params.radius, cells), values: shot.v }, v_end))
}

fn check_shot_args(a: f64, lambda: f64, cells: usize) -> Result<()> {
    if !(a >= 0.0 && lambda >= 0.0) || !a.is_finite() || !lambda.is_finite() {
        return Err(KsError::InvalidArgument(format!("need a >= 0 and lambda >= 0, got a = {a}, lambda = {lambda}")));
    }
    if cells < 4 {
        return Err(KsError::InvalidArgument(format!("need at least 4 cells, got {cells}")));
    }
    Ok(())
}

/// True when the shot ends on the `v(R) > 0` side: it never dropped below
/// zero, either reaching `R` with `v(R) >= 0` or diverging upward first.
fn lands_high(a: f64, lambda: f64, params: &Params, cells: usize) -> bool {
    !integrate(a, lambda, params, cells, true).crossed
}

/// Multiplier for a given centre value, with the shooting residual.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LambdaRoot {
    pub lambda: f64,
    /// `v(R)` of the returned shot; `None` when every shot near the root
    /// leaves the `|v| <= 700` band (long domains).
    pub v_end: Option<f64>,
    pub converged: bool,
}

/// Bracket by doubling from `2 k / e`, then bisect on the first-crossing sign
/// until the bracket reaches rounding level.
pub fn lambda_of_a(a: f64, params: &Params, cells: usize) -> Result<LambdaRoot> {
    if !(a > 0.0) {
        return Err(KsError::InvalidArgument(format!("need a > 0, got {a}")));
    }
    check_shot_args(a, 0.0, cells)?;
    let mut lo = 0.0;
    let mut hi = (2.0 * params.k / E).max(1e-3);
    let mut doublings = 0;
    while lands_high(a, hi, params, cells) {
        lo = hi;
        hi *= 2.0;
        doublings += 1;
        if doublings > 200 {
            return Err(KsError::NoBracket { a, lambda_hi: hi });
        }
    }
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if lands_high(a, mid, params, cells) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let tol = 1e-10 * (1.0 + a);
    let best = [lo, hi]
        .into_iter()
        .filter_map(|lam| {
            let shot = integrate(a, lam, params, cells, false);
            shot.diverged.is_none().then(|| (lam, shot.v[cells]))
        })
        .min_by(|x, y| x.1.abs().total_cmp(&y.1.abs()));
    Ok(match best {
        Some((lambda, v_end)) => LambdaRoot { lambda, v_end: Some(v_end), converged: v_end.abs() < tol },
        None => LambdaRoot { lambda: 0.5 * (lo + hi), v_end: None, converged: false },
    })
}

/// Number of sign changes of `v(R)` (first-crossing sign) over `samples`
/// log-spaced multipliers in `[lambda_max * 1e-6, lambda_max]`.
pub fn count_lambda_roots(a: f64, params: &Params, cells: usize, lambda_max: f64, samples: usize) -> usize {
    let signs: Vec<bool> = (0..samples)
        .map(|j| {
            let x = j as f64 / (samples - 1).max(1) as f64;
            lands_high(a, lambda_max * 1e-6f64.powf(1.0 - x), params, cells)
        })
        .collect();
    signs.windows(2).filter(|p| p[0] != p[1]).count()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BranchPoint {
    pub a: f64,
    pub lambda: f64,
    pub cells: usize,
    /// `2 pi lambda int r e^v dr`.
    pub m: f64,
    pub vmax: f64,
    pub v_end: f64,
    /// `v'(R)`.
    pub slope_end: f64,
    /// `2 pi (k int r v dr + R |v'(R)|)`, which must equal `m`.
    pub flux_mass: f64,
    /// `8 pi + 2 k pi R^2 - m`.
    pub bound_slack: f64,
    pub converged: bool,
}

impl BranchPoint {
    pub fn flux_mismatch(&self) -> f64 {
        (self.m - self.flux_mass).abs() / self.m.abs().max(f64::MIN_POSITIVE)
    }
}

/// Solve for `lambda(a)` and evaluate the branch point.
pub fn solve_lambda(a: f64, params: &Params, cells: usize) -> Result<BranchPoint> {
    let root = lambda_of_a(a, params, cells)?;
    let shot = integrate(a, root.lambda, params, cells, false);
    if let Some((r, v)) = shot.diverged {
        return Err(KsError::Diverged { r, v });
    }
    let m = 2.0 * PI * root.lambda * shot.moment_exp[cells];
    let slope_end = shot.dv[cells];
    let flux_mass = 2.0 * PI * (params.k * shot.moment_v[cells] + params.radius * slope_end.abs());
    Ok(BranchPoint {
        a,
        lambda: root.lambda,
        cells,
        m,
        vmax: shot.v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        v_end: shot.v[cells],
        slope_end,
        flux_mass,
        bound_slack: mass_bound(params) - m,
        converged: root.converged,
    })
}

/// Mass of a branch point recomputed from a fresh shot.
pub fn steady_mass(point: &BranchPoint, params: &Params) -> Result<f64> {
    if point.lambda == 0.0 {
        return Ok(0.0);
    }
    check_shot_args(point.a, point.lambda, point.cells)?;
    let shot = integrate(point.a, point.lambda, params, point.cells, false);
    if let Some((r, v)) = shot.diverged {
        return Err(KsError::Diverged { r, v });
    }
    Ok(2.0 * PI * point.lambda * shot.moment_exp[point.cells])
}

/// Signal and density profiles `(v, u = lambda e^v)` of a branch point.
pub fn steady_profiles(point: &BranchPoint, params: &Params) -> Result<(RadialProfile, RadialProfile)> {
    let (v, _) = shoot(point.a, point.lambda, params, point.cells)?;
    let u = RadialProfile {
        r: v.r.clone(),
        values: v.values.iter().map(|x| point.lambda * x.exp()).collect(),
    };
    Ok((v, u))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchGap {
    pub a: f64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub params: Params,
    pub cells: usize,
    pub points: Vec<BranchPoint>,
    pub gaps: Vec<BranchGap>,
}

impl Branch {
    /// Largest mass jump between neighbouring points.
    pub fn max_mass_gap(&self) -> f64 {
        self.points.windows(2).map(|p| (p[1].m - p[0].m).abs()).fold(0.0, f64::max)
    }
}

/// `count` values evenly spaced in `[a_min, a_max]`.
pub fn a_grid(a_min: f64, a_max: f64, count: usize) -> Vec<f64> {
    if count < 2 {
        return vec![a_min];
    }
    (0..count)
        .map(|i| a_min + (a_max - a_min) * i as f64 / (count - 1) as f64)
        .collect()
}

/// Solve every `a` of the grid in parallel; failures become gaps.
pub fn branch_trace(params: &Params, a_values: &[f64], cells: usize) -> Result<Branch> {
    if a_values.iter().any(|&a| !(a > 0.0)) || a_values.windows(2).any(|p| p[1] <= p[0]) {
        return Err(KsError::InvalidArgument("a grid must be positive and strictly increasing".into()));
    }
    let solved: Vec<(f64, Result<BranchPoint>)> =
        a_values.par_iter().map(|&a| (a, solve_lambda(a, params, cells))).collect();
    let mut points = Vec::with_capacity(solved.len());
    let mut gaps = Vec::new();
    for (a, res) in solved {
        match res {
            Ok(p) => points.push(p),
            Err(e) => {
                log::warn!("branch gap at a = {a}: {e}");
                gaps.push(BranchGap { a, reason: e.to_string() });
            }
        }
    }
    Ok(Branch { params: *params, cells, points, gaps })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MassMaximum {
    pub m_max: f64,
    pub a: f64,
    pub lambda: f64,
}

/// Golden-section maximisation of `g` on `[lo, hi]`; returns the best argument.
pub(crate) fn golden_max<F: FnMut(f64) -> f64>(mut g: F, mut lo: f64, mut hi: f64, rel_tol: f64) -> (f64, f64) {
    let ratio = 0.5 * (5f64.sqrt() - 1.0);
    let mut x1 = hi - ratio * (hi - lo);
    let mut x2 = lo + ratio * (hi - lo);
    let (mut f1, mut f2) = (g(x1), g(x2));
    for _ in 0..200 {
        if hi - lo <= rel_tol * hi.abs().max(1e-300) {
            break;
        }
        if f1 >= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - ratio * (hi - lo);
            f1 = g(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + ratio * (hi - lo);
            f2 = g(x2);
        }
    }
    if f1 >= f2 {
        (x1, f1)
    } else {
        (x2, f2)
    }
}

/// Largest mass on the branch, refined between the neighbours of the
/// discrete maximiser. A maximiser at the end of the grid is returned as is.
pub fn m_max(branch: &Branch) -> Result<MassMaximum> {
    let pts = &branch.points;
    let (i, best) = pts
        .iter()
        .enumerate()
        .max_by(|x, y| x.1.m.total_cmp(&y.1.m))
        .ok_or_else(|| KsError::InvalidArgument("empty branch".into()))?;
    let coarse = MassMaximum { m_max: best.m, a: best.a, lambda: best.lambda };
    if i == 0 || i + 1 == pts.len() {
        return Ok(coarse);
    }
    let (params, cells) = (&branch.params, branch.cells);
    let (a, m) = golden_max(
        |a| solve_lambda(a, params, cells).map_or(f64::NEG_INFINITY, |p| p.m),
        pts[i - 1].a,
        pts[i + 1].a,
        1e-9,
    );
    if m < best.m {
        return Ok(coarse);
    }
    let p = solve_lambda(a, params, cells)?;
    Ok(MassMaximum { m_max: p.m, a, lambda: p.lambda })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StateCount {
    pub count: usize,
    /// Largest mass jump between neighbouring branch points.
    pub max_gap: f64,
    /// `max_gap <= resolution`.
    pub resolved: bool,
}

/// Number of sign changes of `m(a) - mass` along the branch.
pub fn count_states(branch: &Branch, mass: f64, resolution: f64) -> StateCount {
    let count = branch
        .points
        .windows(2)
        .filter(|p| (p[0].m - mass).signum() != (p[1].m - mass).signum())
        .count();
    let max_gap = branch.max_mass_gap();
    let resolved = max_gap <= resolution;
    if !resolved {
        log::warn!("branch mass gap {max_gap:e} exceeds resolution {resolution:e}; state count may be low");
    }
    StateCount { count, max_gap, resolved }
}

/// `8 pi + 2 k pi R^2`, the planar disk bound.
pub fn mass_bound(params: &Params) -> f64 {
    8.0 * PI + 2.0 * params.k * PI * params.radius * params.radius
}

/// `(m <= 8 pi + 2 k pi R^2 + tol, bound - m)`.
pub fn check_mass_bound(point: &BranchPoint, params: &Params) -> (bool, f64) {
    let slack = mass_bound(params) - point.m;
    (slack >= -MASS_BOUND_TOL, slack)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CriticalMasses {
    /// Lower threshold below which every solution is global.
    pub m_star: f64,
    /// Upper bound for the threshold above which every solution blows up,
    /// `2 omega_n R^n / n + 2 n k omega_n R^(n-2)` for `n >= 3`.
    pub m_star_upper: f64,
    /// The same bound evaluated from `2 n |dB| / R + 2 k |B|`, i.e.
    /// `2 n omega_n R^(n-2) + 2 k omega_n R^n / n`. Agrees with
    /// `m_star_upper` for `n = 2`.
    pub m_star_upper_boundary_form: f64,
}

fn gamma_half_integer(n: u32) -> f64 {
    // Gamma(n / 2) for n >= 1.
    let mut g = if n % 2 == 0 { 1.0 } else { PI.sqrt() };
    let mut x = if n % 2 == 0 { 1.0 } else { 0.5 };
    while x < 0.5 * n as f64 - 1e-12 {
        g *= x;
        x += 1.0;
    }
    g
}

/// Area of the unit sphere in `R^n`.
pub fn unit_sphere_area(n: u32) -> f64 {
    2.0 * PI.powf(0.5 * n as f64) / gamma_half_integer(n)
}

pub fn critical_mass_table(n: u32, radius: f64, k: f64) -> Result<CriticalMasses> {
    if n < 2 || !(radius > 0.0) || !(k >= 0.0) {
        return Err(KsError::InvalidArgument(format!("need n >= 2, R > 0, k >= 0; got n = {n}, R = {radius}, k = {k}")));
    }
    let omega = unit_sphere_area(n);
    let nf = n as f64;
    let boundary_form = 2.0 * nf * omega * radius.powi(n as i32 - 2) + 2.0 * k * omega * radius.powi(n as i32) / nf;
    Ok(if n == 2 {
        let upper = 8.0 * PI + 2.0 * k * PI * radius * radius;
        CriticalMasses { m_star: 8.0 * PI, m_star_upper: upper, m_star_upper_boundary_form: boundary_form }
    } else {
        CriticalMasses {
            m_star: 0.0,
            m_star_upper: 2.0 * omega * radius.powi(n as i32) / nf + 2.0 * nf * k * omega * radius.powi(n as i32 - 2),
            m_star_upper_boundary_form: boundary_form,
        }
    })
}
