//! Comparison functions for the cumulated equation and the mass sweep.
//!
//! The stationary supersolution is built from a chain of scalar conditions in
//! the constants `s0, b, eps, c2`. Every integral is written in the scaled
//! variable `x = sigma / s0` and split as `x^-p + x^-p (e^(alpha (x-1)) - 1)`,
//! so nothing cancels even when `s0` is many orders below `R^2`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::elliptic::ring_green_lower_bound;
use crate::error::{KsError, Result};
use crate::evolution::{evolve, ClassificationResult, Outcome, StepControls};
use crate::grid::{MassGrid, Params, WState};
use crate::initial::{initial_w0, ProfileFamily};
use crate::quadrature::gauss_legendre_composite;

/// Largest dyadic exponent tried for `s0 = R^2 / 2^j`.
pub const MAX_DYADIC_EXPONENT: u32 = 1000;

/// Panel width (in `ln x`) for the scaled integrals.
const PANEL: f64 = 0.25;

/// `int_{ln a}^{ln b} e^{(1-p) t} expm1(alpha (e^t - 1)) dt`, i.e. the part of
/// `int_a^b x^-p e^(alpha (x-1)) dx` carried by the exponential.
fn excess_integral(p: f64, alpha: f64, a: f64, b: f64) -> f64 {
    let (ta, tb) = (a.ln(), b.ln());
    if tb <= ta || alpha == 0.0 {
        return 0.0;
    }
    let pieces = ((tb - ta) / PANEL).ceil().max(1.0) as usize;
    let f = |t: f64| ((1.0 - p) * t).exp() * (alpha * t.exp_m1()).exp_m1();
    gauss_legendre_composite(&f, ta, tb, pieces)
}

/// `int_1^y x^-p dx` for `p > 1`.
fn power_integral(p: f64, y: f64) -> f64 {
    -((1.0 - p) * y.ln()).exp_m1() / (p - 1.0)
}

/// The scaled constants shared by every step of the construction.
#[derive(Debug, Clone, Copy)]
struct Scaled {
    /// `R^2 / s0`.
    x_end: f64,
    s0: f64,
}

impl Scaled {
    /// `s0^{p-1} int_{s0}^{R^2} sigma^-p e^{(xi/2)(sigma - s0)} dsigma - 1`
    /// with `p = 2 + eps/2`, free of cancellation.
    fn tail_minus_one(&self, eps: f64, xi: f64) -> f64 {
        let p = 2.0 + 0.5 * eps;
        let alpha = 0.5 * xi * self.s0;
        let head = -(0.5 * eps + self.x_end.powf(1.0 - p)) / (p - 1.0);
        head + excess_integral(p, alpha, 1.0, self.x_end)
    }

    /// Margin of the strict inequality at `(eps, xi)` divided by `s0`:
    /// left side minus `s0 + b + eps (s0 + b)^2 / (4 b)`.
    fn margin(&self, beta: f64, eps: f64, xi: f64) -> f64 {
        self.tail_minus_one(eps, xi) - beta - eps * (1.0 + beta).powi(2) / (4.0 * beta)
    }
}

/// Bisection on `[lo, hi]` for a sign change of `f`, down to adjacent floats.
/// `f(lo) <= 0 < f(hi)` is assumed; returns the last `(lo, hi)`.
fn bisect<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64) -> (f64, f64) {
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    (lo, hi)
}

/// Largest `eps` in `(0, 1]` with `margin(eps) > 0` for a margin that
/// decreases in `eps`; 0 if none is representable. The binary exponent is
/// located first, since the admissible values can sit hundreds of decades
/// below one.
fn largest_admissible_eps<F: Fn(f64) -> f64>(margin: F) -> f64 {
    if margin(1.0) > 0.0 {
        return 1.0;
    }
    // smallest k with margin(2^-k) > 0
    let (mut lo, mut hi) = (0i32, 1074i32);
    if !(margin(2f64.powi(-hi)) > 0.0) {
        return 0.0;
    }
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if margin(2f64.powi(-mid)) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let (a, _) = bisect(|e| -margin(e), 2f64.powi(-hi), 2f64.powi(-lo));
    a
}

/// Stationary supersolution `wbar` of the cumulated equation under `z >= c1 s`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Supersolution {
    pub radius: f64,
    pub s0: f64,
    pub b: f64,
    pub epsilon: f64,
    pub c1: f64,
    pub c2: f64,
    /// `2 pi (4 + eps)`.
    pub mbar: f64,
    /// `b / s0`, kept separately so that no value is rebuilt from a tiny `s0`.
    pub b_scaled: f64,
    /// Relative residual of the equation fixing `c2`.
    pub c2_residual: f64,
    pub s: Vec<f64>,
    pub wbar: Vec<f64>,
}

impl Supersolution {
    fn exponent(&self) -> f64 {
        2.0 + 0.5 * self.epsilon
    }

    fn alpha(&self) -> f64 {
        0.5 * self.c2 * self.s0
    }

    /// `mbar - 8 pi`.
    pub fn mass_excess(&self) -> f64 {
        2.0 * PI * self.epsilon
    }

    /// `wbar(s)`; the outer piece is integrated from `s0`.
    pub fn value(&self, s: f64) -> f64 {
        let beta = self.b_scaled;
        let y = s / self.s0;
        if y <= 1.0 {
            return 4.0 * y / (y + beta);
        }
        let p = self.exponent();
        let k = power_integral(p, y) + excess_integral(p, self.alpha(), 1.0, y);
        4.0 / (1.0 + beta) + 4.0 * beta / (1.0 + beta).powi(2) * k
    }

    /// Nodal values of `wbar` on `grid`, accumulated cell by cell.
    pub fn sample(&self, grid: &MassGrid) -> Vec<f64> {
        let beta = self.b_scaled;
        let p = self.exponent();
        let alpha = self.alpha();
        let scale = 4.0 * beta / (1.0 + beta).powi(2);
        let mut out = Vec::with_capacity(grid.nodes.len());
        let mut last_y = 1.0;
        let mut excess = 0.0;
        for &s in &grid.nodes {
            let y = s / self.s0;
            if y <= 1.0 {
                out.push(4.0 * y / (y + beta));
                continue;
            }
            excess += excess_integral(p, alpha, last_y, y);
            last_y = y;
            out.push(4.0 / (1.0 + beta) + scale * (power_integral(p, y) + excess));
        }
        if let Some(last) = out.last_mut() {
            if (grid.length - self.radius * self.radius).abs() <= 1e-14 * grid.length {
                *last = 4.0 + self.epsilon;
            }
        }
        out
    }

    /// `wbar_s(s)` in closed form.
    pub fn slope(&self, s: f64) -> f64 {
        let beta = self.b_scaled;
        let y = s / self.s0;
        if y <= 1.0 {
            4.0 * beta / self.s0 / (y + beta).powi(2)
        } else {
            let p = self.exponent();
            4.0 * beta / (self.s0 * (1.0 + beta).powi(2)) * (-p * y.ln() + self.alpha() * (y - 1.0)).exp()
        }
    }

    /// `wbar_ss(s)` in closed form (one-sided at `s0`, taken from the inside).
    pub fn curvature(&self, s: f64) -> f64 {
        let y = s / self.s0;
        let ws = self.slope(s);
        if y <= 1.0 {
            -2.0 * ws / (self.s0 * (y + self.b_scaled))
        } else {
            ws * (-self.exponent() / s + 0.5 * self.c2)
        }
    }

    /// Checks every structural property of the construction on its own grid.
    pub fn check_invariants(&self) -> Result<()> {
        let fail = |what: String| Err(KsError::Construction(what));
        let l = self.radius * self.radius;
        if !(self.s0 > 0.0 && self.s0 < l) {
            return fail(format!("s0 = {:e} outside (0, R^2)", self.s0));
        }
        if !(self.b > 0.0) {
            return fail(format!("b = {:e} not positive", self.b));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return fail(format!("eps = {:e} outside (0, 1)", self.epsilon));
        }
        if !(self.c2 > 0.0 && self.c2 <= self.c1 && self.c1 <= 4.0 / l) {
            return fail(format!("need 0 < c2 <= c1 <= 4/R^2, got c2 = {:e}, c1 = {:e}", self.c2, self.c1));
        }
        let n = self.wbar.len() - 1;
        if self.wbar[0] != 0.0 || self.wbar[n] != 4.0 + self.epsilon {
            return fail("end values differ from 0 and 4 + eps".into());
        }
        let top = 4.0 + self.epsilon;
        for i in 1..n {
            let chord = top * self.s[i] / l;
            if !(self.wbar[i] > chord) {
                return fail(format!("wbar({:e}) = {} not above the chord {}", self.s[i], self.wbar[i], chord));
            }
            if self.curvature(self.s[i]) > 0.0 {
                return fail(format!("wbar_ss > 0 at s = {:e}", self.s[i]));
            }
            let same_piece = (self.s[i - 1] <= self.s0) == (self.s[i + 1] <= self.s0);
            let second = self.wbar[i + 1] - 2.0 * self.wbar[i] + self.wbar[i - 1];
            if same_piece && second > 1e-12 * top {
                return fail(format!("nodal values not concave at s = {:e}", self.s[i]));
            }
        }
        Ok(())
    }
}

/// Builds the supersolution for a given lower slope `c1` of `z`.
///
/// `s0` is the largest dyadic fraction `R^2 / 2^j` with
/// `(c1/2) ln(R^2/s0) > c1/2 + 1/R^2`; `b` is half the resulting slack;
/// `eps` is half the largest admissible value in `(0, 1)`; `c2` solves the
/// closing equality by bisection on `(0, c1]`.
pub fn construct_supersolution(params: &Params, c1: f64, grid: &MassGrid) -> Result<Supersolution> {
    let l = params.s_max();
    if !(c1 > 0.0 && c1 <= 4.0 / l) {
        return Err(KsError::InvalidArgument(format!("need 0 < c1 <= 4/R^2 = {}, got {c1}", 4.0 / l)));
    }
    if (grid.length - l).abs() > 1e-12 * l {
        return Err(KsError::InvalidArgument("grid does not span [0, R^2]".into()));
    }
    let need = 1.0 + 2.0 / (c1 * l);
    let j = (need / std::f64::consts::LN_2).floor() as u64 + 1;
    if j > MAX_DYADIC_EXPONENT as u64 {
        return Err(KsError::Construction(format!(
            "(c1/2) ln(R^2/s0) > c1/2 + 1/R^2 needs s0 < R^2 / 2^{j}, beyond double precision (c1 R^2 = {:e})",
            c1 * l
        )));
    }
    let x_end = 2f64.powi(j as i32);
    let s0 = l / x_end;
    let sc = Scaled { x_end, s0 };

    let slack = sc.tail_minus_one(0.0, c1);
    if !(slack > 0.0) {
        return Err(KsError::Construction(format!(
            "s0^2 int sigma^-2 e^(c1 (sigma - s0)/2) > s0 fails at s0 = {s0:e} (scaled slack {slack:e})"
        )));
    }
    let beta = 0.5 * slack;

    let eps_max = largest_admissible_eps(|e| sc.margin(beta, e, c1));
    let epsilon = 0.5 * eps_max;
    if !(epsilon > 0.0) || !(sc.margin(beta, epsilon, c1) > 0.0) {
        return Err(KsError::Construction(format!(
            "no eps in (0, 1) keeps the strict inequality (beta = {beta:e})"
        )));
    }

    let (lo, hi) = bisect(|xi| sc.margin(beta, epsilon, xi), 0.0, c1);
    let (glo, ghi) = (sc.margin(beta, epsilon, lo), sc.margin(beta, epsilon, hi));
    let c2 = if glo.abs() < ghi.abs() && lo > 0.0 { lo } else { hi };
    let rhs = 1.0 + beta + epsilon * (1.0 + beta).powi(2) / (4.0 * beta);
    let c2_residual = sc.margin(beta, epsilon, c2).abs() / rhs;

    let mut sup = Supersolution {
        radius: params.radius,
        s0,
        b: beta * s0,
        epsilon,
        c1,
        c2,
        mbar: 2.0 * PI * (4.0 + epsilon),
        b_scaled: beta,
        c2_residual,
        s: grid.nodes.clone(),
        wbar: Vec::new(),
    };
    sup.wbar = sup.sample(grid);
    sup.check_invariants()?;
    Ok(sup)
}

/// Residuals of the supersolution on a grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SupersolutionCheck {
    /// Largest positive `4 s wbar_ss + 2 wbar wbar_s - 2 c2 s wbar_s`, exact derivatives.
    pub max_residual: f64,
    /// Largest `|.|` of the piecewise ODE each piece solves, exact derivatives.
    pub max_ode_residual: f64,
    /// Largest positive residual with centered differences of the nodal values.
    pub max_fd_residual: f64,
}

/// Evaluates the supersolution inequality on the interior nodes of `grid`,
/// with `z` replaced by its lower bound `c2 s`.
pub fn verify_supersolution_inequality(sup: &Supersolution, c2: f64, grid: &MassGrid) -> SupersolutionCheck {
    let w = sup.sample(grid);
    let h = grid.spacing();
    let n = grid.intervals;
    let top = 4.0 + sup.epsilon;
    let mut out = SupersolutionCheck {
        max_residual: 0.0,
        max_ode_residual: 0.0,
        max_fd_residual: 0.0,
    };
    for i in 1..n {
        let s = grid.nodes[i];
        let (ws, wss) = (sup.slope(s), sup.curvature(s));
        let res = 4.0 * s * wss + 2.0 * w[i] * ws - 2.0 * c2 * s * ws;
        out.max_residual = out.max_residual.max(res);
        let ode = if s <= sup.s0 {
            4.0 * s * wss + 2.0 * w[i] * ws
        } else {
            4.0 * s * wss + 2.0 * top * ws - 2.0 * sup.c2 * s * ws
        };
        out.max_ode_residual = out.max_ode_residual.max(ode.abs());
        let d1 = (w[i + 1] - w[i - 1]) / (2.0 * h);
        let d2 = (w[i + 1] - 2.0 * w[i] + w[i - 1]) / (h * h);
        let fd = 4.0 * s * d2 + 2.0 * w[i] * d1 - 2.0 * c2 * s * d1;
        out.max_fd_residual = out.max_fd_residual.max(fd);
    }
    out
}

/// Uniform datum at the supersolution's mass: `(4 + eps) s / R^2`, which lies
/// between `4 s / R^2` and `wbar`.
pub fn pinched_initial(sup: &Supersolution, grid: &MassGrid) -> Vec<f64> {
    let l = sup.radius * sup.radius;
    let top = 4.0 + sup.epsilon;
    let mut w0: Vec<f64> = grid.nodes.iter().map(|s| top * s / l).collect();
    if let Some(last) = w0.last_mut() {
        *last = top;
    }
    w0
}

/// Surrogate for the lower slope of `z`, with its ingredients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct C1Calibration {
    pub c1: f64,
    /// Smallest mass in `B_{R/2}` seen in the calibration run.
    pub inner_mass: f64,
    /// Lower bound of the Green function on `B_{R/2}`.
    pub green_bound: f64,
    /// Whether the clamp `c1 <= 4 / R^2` was active.
    pub clamped: bool,
}

/// `c1 = (k/8) * inner_mass * green_bound`, clamped to `4 / R^2`.
///
/// The inner mass is the minimum over a run from uniform data of mass `8 pi`
/// on `grid` with `controls`; the Green bound uses `cells` radial cells.
pub fn default_c1(params: &Params, grid: &MassGrid, controls: &StepControls, cells: usize) -> Result<C1Calibration> {
    let green_bound = ring_green_lower_bound(params, cells)?;
    let w0 = initial_w0(ProfileFamily::Uniform, params, 8.0 * PI, grid)?;
    let run = evolve(w0, params, grid, controls)?;
    let inner_mass = run.result.invariants.min_inner_mass;
    let raw = params.k / 8.0 * inner_mass * green_bound;
    let cap = 4.0 / params.s_max();
    Ok(C1Calibration {
        c1: raw.min(cap),
        inner_mass,
        green_bound,
        clamped: raw > cap,
    })
}

/// `delta s^beta` on a grid with the admissibility flag `beta >= 1 + m / 4 pi`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerLaw {
    pub delta: f64,
    pub beta: f64,
    pub values: Vec<f64>,
    pub valid: bool,
}

impl PowerLaw {
    pub fn at(&self, s: f64) -> f64 {
        self.delta * s.powf(self.beta)
    }
}

pub fn powerlaw_subsolution(delta: f64, beta: f64, mass: f64, grid: &MassGrid) -> Result<PowerLaw> {
    if !(delta > 0.0) {
        return Err(KsError::InvalidArgument(format!("delta must be > 0, got {delta}")));
    }
    Ok(PowerLaw {
        delta,
        beta,
        values: grid.nodes.iter().map(|s| delta * s.powf(beta)).collect(),
        valid: subsolution_admissible(beta, mass),
    })
}

pub fn subsolution_admissible(beta: f64, mass: f64) -> bool {
    beta >= 1.0 + mass / (4.0 * PI)
}

/// `(delta, beta)` for masses in `[m, big_m]`: `beta = 1 + big_m / 4 pi`,
/// `delta = m / (2 pi R^(2 beta))`.
pub fn subsolution_defaults(m: f64, big_m: f64, radius: f64) -> (f64, f64) {
    let beta = 1.0 + big_m / (4.0 * PI);
    (m / (2.0 * PI * radius.powf(2.0 * beta)), beta)
}

/// One side of an ordering check.
pub enum Barrier<'a> {
    None,
    /// Time independent nodal values.
    Nodal(&'a [f64]),
    /// `f(s, t)`.
    Function(&'a dyn Fn(f64, f64) -> f64),
}

impl Barrier<'_> {
    fn at(&self, i: usize, s: f64, t: f64) -> Option<f64> {
        match self {
            Barrier::None => None,
            Barrier::Nodal(v) => Some(v[i]),
            Barrier::Function(f) => Some(f(s, t)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub s: f64,
    pub t: f64,
    /// Amount by which the ordering fails.
    pub excess: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrderCheck {
    pub ordered: bool,
    pub first_violation: Option<Violation>,
    /// `min (w - lower)` over all snapshots and nodes (`inf` without a lower barrier).
    pub lower_slack: f64,
    /// `min (upper - w)`.
    pub upper_slack: f64,
}

/// Checks `lower <= w <= upper` at every node of every snapshot with
/// tolerance `1e-9 m / 2 pi`.
pub fn compare_order(lower: &Barrier, upper: &Barrier, trajectory: &[WState], grid: &MassGrid) -> OrderCheck {
    let mut out = OrderCheck {
        ordered: true,
        first_violation: None,
        lower_slack: f64::INFINITY,
        upper_slack: f64::INFINITY,
    };
    for state in trajectory {
        let tol = 1e-9 * state.w.last().copied().unwrap_or(0.0).abs();
        for (i, (&s, &w)) in grid.nodes.iter().zip(&state.w).enumerate() {
            let below = lower.at(i, s, state.t).map(|l| w - l);
            let above = upper.at(i, s, state.t).map(|u| u - w);
            for gap in [below, above].into_iter().flatten() {
                if gap < -tol && out.first_violation.is_none() {
                    out.ordered = false;
                    out.first_violation = Some(Violation {
                        s,
                        t: state.t,
                        excess: -gap,
                    });
                }
            }
            if let Some(g) = below {
                out.lower_slack = out.lower_slack.min(g);
            }
            if let Some(g) = above {
                out.upper_slack = out.upper_slack.min(g);
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZBounds {
    /// `inf z / s` over snapshots and nodes `s > 0`.
    pub c_low: f64,
    /// `sup z / s`.
    pub c_high: f64,
    /// `sup w / s`, which must be finite for the upper bound to mean anything.
    pub sup_w_over_s: f64,
    /// Whether the first snapshot satisfies `w0(s) >= m s / (2 pi R^2)`.
    pub hypothesis_holds: bool,
}

pub fn check_z_linear_bounds(trajectory: &[WState], params: &Params, grid: &MassGrid) -> Result<ZBounds> {
    if !(params.k > 0.0) {
        return Err(KsError::InvalidArgument("z bounds need k > 0".into()));
    }
    let first = trajectory
        .first()
        .ok_or_else(|| KsError::InvalidArgument("empty trajectory".into()))?;
    let n = grid.intervals;
    let top = first.w[n];
    let tol = 1e-12 * top.abs();
    let hypothesis_holds = grid
        .nodes
        .iter()
        .zip(&first.w)
        .all(|(s, w)| *w >= top * s / grid.length - tol);
    if !hypothesis_holds {
        log::warn!("initial datum violates w0(s) >= m s / (2 pi R^2); the lower bound is not covered");
    }
    let mut out = ZBounds {
        c_low: f64::INFINITY,
        c_high: 0.0,
        sup_w_over_s: 0.0,
        hypothesis_holds,
    };
    for state in trajectory {
        for i in 1..=n {
            let s = grid.nodes[i];
            let q = state.z[i] / s;
            out.c_low = out.c_low.min(q);
            out.c_high = out.c_high.max(q);
            out.sup_w_over_s = out.sup_w_over_s.max(state.w[i] / s);
        }
    }
    Ok(out)
}

/// One run of a mass sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub family: ProfileFamily,
    pub mass: f64,
    /// Added by bracket refinement rather than requested.
    pub refined: bool,
    pub result: ClassificationResult,
}

/// Empirical threshold bracket of one family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MassBracket {
    pub family: ProfileFamily,
    /// Largest mass such that every run at or below it was Global.
    pub all_global_below: Option<f64>,
    /// Smallest mass such that every run at or above it blew up.
    pub all_blowup_above: Option<f64>,
    /// Pairs `(m1, m2)`, `m1 < m2`, with Blowup at `m1` but Global at `m2`.
    pub monotone_violations: Vec<(f64, f64)>,
    pub undecided: usize,
    /// Whether the initial data satisfy the ball-average hypothesis.
    pub decreasing_averages: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
    pub brackets: Vec<MassBracket>,
}

/// Rounds of bisection applied to each family's bracket.
pub const DEFAULT_REFINEMENTS: usize = 8;

fn classify_one(family: ProfileFamily, mass: f64, params: &Params, grid: &MassGrid, controls: &StepControls) -> ClassificationResult {
    let run = initial_w0(family, params, mass, grid).and_then(|w0| evolve(w0, params, grid, controls));
    match run {
        Ok(r) => r.result,
        Err(e) => ClassificationResult {
            outcome: Outcome::Undecided,
            t_star: None,
            t_final: 0.0,
            sup_u: f64::NAN,
            u_blowup: f64::NAN,
            message: Some(e.to_string()),
            invariants: Default::default(),
            diagnostics: Vec::new(),
        },
    }
}

fn bracket_of(family: ProfileFamily, rows: &[SweepRow]) -> MassBracket {
    let mut mine: Vec<&SweepRow> = rows.iter().filter(|r| r.family == family).collect();
    mine.sort_by(|a, b| a.mass.total_cmp(&b.mass));
    let mut all_global_below = None;
    for r in &mine {
        if r.result.outcome != Outcome::Global {
            break;
        }
        all_global_below = Some(r.mass);
    }
    let mut all_blowup_above = None;
    for r in mine.iter().rev() {
        if r.result.outcome != Outcome::Blowup {
            break;
        }
        all_blowup_above = Some(r.mass);
    }
    let mut monotone_violations = Vec::new();
    for (i, a) in mine.iter().enumerate() {
        if a.result.outcome != Outcome::Blowup {
            continue;
        }
        for b in &mine[i + 1..] {
            if b.result.outcome == Outcome::Global && b.mass > a.mass {
                monotone_violations.push((a.mass, b.mass));
            }
        }
    }
    if !monotone_violations.is_empty() {
        log::warn!("{family}: {} Blowup/Global inversions in mass", monotone_violations.len());
    }
    MassBracket {
        family,
        all_global_below,
        all_blowup_above,
        monotone_violations,
        undecided: mine.iter().filter(|r| r.result.outcome == Outcome::Undecided).count(),
        decreasing_averages: family.has_decreasing_averages(),
    }
}

/// Classifies every `(family, mass)` pair, then bisects each family's bracket
/// `refinements` times when its two edges are adjacent runs.
///
/// Runs execute on the current rayon pool; rows come back sorted by family
/// (input order) and mass.
pub fn classify_mass_sweep(
    params: &Params,
    families: &[ProfileFamily],
    masses: &[f64],
    grid: &MassGrid,
    controls: &StepControls,
    refinements: usize,
) -> Result<SweepTable> {
    controls.validate()?;
    if let Some(m) = masses.iter().find(|m| !(**m >= 0.0 && m.is_finite())) {
        return Err(KsError::InvalidArgument(format!("masses must be finite and >= 0, got {m}")));
    }
    let jobs: Vec<(ProfileFamily, f64)> = families
        .iter()
        .flat_map(|f| masses.iter().map(move |m| (*f, *m)))
        .collect();
    let mut rows: Vec<SweepRow> = jobs
        .par_iter()
        .map(|&(family, mass)| SweepRow {
            family,
            mass,
            refined: false,
            result: classify_one(family, mass, params, grid, controls),
        })
        .collect();

    let refined: Vec<Vec<SweepRow>> = families
        .par_iter()
        .map(|&family| {
            let b = bracket_of(family, &rows);
            let (Some(mut lo), Some(mut hi)) = (b.all_global_below, b.all_blowup_above) else {
                return Vec::new();
            };
            let between = rows
                .iter()
                .any(|r| r.family == family && r.mass > lo && r.mass < hi);
            if between || lo >= hi {
                return Vec::new();
            }
            let mut extra = Vec::new();
            for _ in 0..refinements {
                let mass = 0.5 * (lo + hi);
                let result = classify_one(family, mass, params, grid, controls);
                let outcome = result.outcome;
                extra.push(SweepRow {
                    family,
                    mass,
                    refined: true,
                    result,
                });
                match outcome {
                    Outcome::Global => lo = mass,
                    Outcome::Blowup => hi = mass,
                    Outcome::Undecided => break,
                }
            }
            extra
        })
        .collect();
    rows.extend(refined.into_iter().flatten());

    let order = |f: &ProfileFamily| families.iter().position(|g| g == f).unwrap_or(usize::MAX);
    rows.sort_by(|a, b| order(&a.family).cmp(&order(&b.family)).then(a.mass.total_cmp(&b.mass)));
    let brackets = families.iter().map(|&f| bracket_of(f, &rows)).collect();
    Ok(SweepTable { rows, brackets })
}
