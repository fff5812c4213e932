//! Time integration of `w_t = 4 s w_ss + 2 w w_s - 2 z w_s` on `(0, R^2)`
//! with `w(0) = 0` and `w(R^2) = m / 2 pi`, and blow-up classification.
//!
//! Each step treats the degenerate diffusion implicitly, handles the
//! transport term according to [`Advection`], then refreshes `z` from its
//! two-point problem. Every variant keeps `w` nondecreasing in `s`: the
//! explicit ones under the advective CFL bound, the default linearly
//! implicit one for any step size.

mod diagnostics;

pub use diagnostics::{
    bernstein_monitor, dissipation, energy, state_dissipation, state_energy,
};

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::elliptic::z_matrix;
use crate::error::{KsError, Result};
use crate::grid::{MassGrid, Params, WState};
use crate::tridiag::TridiagonalLu;

/// Relative tolerance for the monotonicity check after a step.
pub const MONOTONE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StepControls {
    pub dt_init: f64,
    pub dt_min: f64,
    pub dt_max: f64,
    /// Safety factor for `dt <= cfl * h / max |2w - 2z|` (explicit schemes only).
    pub cfl: f64,
    /// Target for `max_i |w_i(t + dt) - w_i(t)| / w_N`, which sets the next step.
    pub max_change: f64,
    pub t_end: f64,
    /// Sup-norm level declaring blow-up; `None` selects [`default_blowup_threshold`].
    pub u_blowup: Option<f64>,
    /// Uniform snapshot spacing in time.
    pub sample_dt: f64,
    pub max_steps: usize,
    pub advection: Advection,
}

impl Default for StepControls {
    fn default() -> Self {
        Self {
            dt_init: 1e-6,
            dt_min: 1e-12,
            dt_max: 1e-2,
            cfl: 0.45,
            max_change: 5e-3,
            t_end: 50.0,
            u_blowup: None,
            sample_dt: 0.5,
            max_steps: 50_000_000,
            advection: Advection::default(),
        }
    }
}

impl StepControls {
    pub fn validate(&self) -> Result<()> {
        let ok = self.dt_min > 0.0
            && self.dt_min <= self.dt_init
            && self.dt_init <= self.dt_max
            && self.cfl > 0.0
            && self.cfl < 1.0
            && self.max_change > 0.0
            && self.t_end > 0.0
            && self.sample_dt > 0.0
            && self.u_blowup.map_or(true, |u| u > 0.0);
        if ok {
            Ok(())
        } else {
            Err(KsError::InvalidArgument(format!("inconsistent step controls {self:?}")))
        }
    }
}

/// Sup-norm level at which a run is declared to blow up.
///
/// The nominal level is eight decades above the mean density. A fixed grid
/// cannot resolve densities beyond roughly `8 / h` (mass `8 pi` inside the
/// innermost cell), so the level is capped at half of that: reaching it means
/// mass of order `4 pi` has collapsed into a single cell at the origin.
pub fn default_blowup_threshold(params: &Params, grid: &MassGrid, mass: f64) -> f64 {
    let nominal = 1e8 * params.mean_density(mass);
    let grid_cap = 4.0 / grid.spacing();
    nominal.min(grid_cap)
}

/// Discretization of the transport term `2 (w - z) w_s`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Advection {
    /// Linearly implicit: the speed is frozen at the old time and the
    /// transport term is solved together with the diffusion. Central where
    /// the cell Peclet number allows it, upwind elsewhere. Monotone for every
    /// `dt`, so steps are limited only by [`StepControls::max_change`].
    #[default]
    Hybrid,
    /// Explicit first-order upwind, subject to the CFL bound.
    Upwind,
    /// Explicit second-order upwind reconstruction with minmod-limited
    /// slopes, subject to the CFL bound.
    Muscl,
}

impl Advection {
    pub fn is_explicit(self) -> bool {
        !matches!(self, Advection::Hybrid)
    }
}

fn minmod(a: f64, b: f64) -> f64 {
    if a * b <= 0.0 {
        0.0
    } else if a.abs() < b.abs() {
        a
    } else {
        b
    }
}

/// Reusable workspace for repeated steps on one grid.
pub struct Stepper<'a> {
    params: &'a Params,
    grid: &'a MassGrid,
    z_lu: Option<TridiagonalLu>,
    scheme: Advection,
    rhs: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    scratch: Vec<f64>,
}

impl<'a> Stepper<'a> {
    pub fn new(params: &'a Params, grid: &'a MassGrid) -> Result<Self> {
        let z_lu = if params.k > 0.0 {
            Some(z_matrix(grid, params.k).factor()?)
        } else {
            None
        };
        let n = grid.intervals;
        Ok(Self {
            params,
            grid,
            z_lu,
            scheme: Advection::default(),
            rhs: vec![0.0; n + 1],
            lower: vec![0.0; n + 1],
            upper: vec![0.0; n + 1],
            scratch: vec![0.0; n + 1],
        })
    }

    pub fn with_scheme(mut self, scheme: Advection) -> Self {
        self.scheme = scheme;
        self
    }

    /// Recompute `z` for a given `w`.
    pub fn solve_z(&self, w: &[f64]) -> Vec<f64> {
        let n = self.grid.intervals;
        match &self.z_lu {
            Some(lu) if w.iter().any(|&x| x != 0.0) => {
                let mut z = vec![0.0; n + 1];
                for i in 1..=n {
                    z[i] = self.params.k * w[i];
                }
                lu.solve_in_place(&mut z[1..]);
                z
            }
            _ => vec![0.0; n + 1],
        }
    }

    /// Largest advection speed `max |2w - 2z|`.
    pub fn max_speed(state: &WState) -> f64 {
        state
            .w
            .iter()
            .zip(&state.z)
            .map(|(w, z)| (2.0 * (w - z)).abs())
            .fold(0.0, f64::max)
    }

    /// Advance by `dt`.
    pub fn step(&mut self, state: &WState, dt: f64) -> Result<WState> {
        if !(dt > 0.0) {
            return Err(KsError::InvalidArgument(format!("dt must be > 0, got {dt}")));
        }
        let n = self.grid.intervals;
        let h = self.grid.spacing();
        let w = &state.w;
        let z = &state.z;
        let top = w[n];

        let coef = 4.0 * dt / (h * h);
        let s_nodes = &self.grid.nodes;
        match self.scheme {
            Advection::Hybrid => {
                // Frozen speed a = 2(w - z). Central differences wherever the
                // cell Peclet number |a| h / (8 s) is at most one, upwind
                // elsewhere, so both off-diagonal weights stay nonnegative.
                for i in 1..n {
                    let a = 2.0 * (w[i] - z[i]);
                    let diff = coef * s_nodes[i];
                    let adv = dt * a / h;
                    let (lo, up) = if a.abs() * h <= 8.0 * s_nodes[i] {
                        (diff - 0.5 * adv, diff + 0.5 * adv)
                    } else if a > 0.0 {
                        (diff, diff + adv)
                    } else {
                        (diff - adv, diff)
                    };
                    self.lower[i] = lo;
                    self.upper[i] = up;
                    self.rhs[i] = w[i];
                }
            }
            Advection::Upwind => {
                for i in 1..n {
                    let a = 2.0 * (w[i] - z[i]);
                    let slope = if a > 0.0 { w[i + 1] - w[i] } else { w[i] - w[i - 1] };
                    self.rhs[i] = w[i] + dt * a * slope / h;
                    self.lower[i] = coef * s_nodes[i];
                    self.upper[i] = self.lower[i];
                }
            }
            Advection::Muscl => {
                let d = |j: usize| w[j + 1] - w[j];
                let limited = |j: usize| {
                    if j == 0 || j >= n {
                        0.0
                    } else {
                        minmod(d(j - 1), d(j))
                    }
                };
                for i in 1..n {
                    let a = 2.0 * (w[i] - z[i]);
                    // Interface values reconstructed from the upwind side.
                    let slope = if a > 0.0 {
                        d(i) - 0.5 * (limited(i + 1) - limited(i))
                    } else {
                        d(i - 1) + 0.5 * (limited(i - 1) - limited(i))
                    };
                    self.rhs[i] = w[i] + dt * a * slope / h;
                    self.lower[i] = coef * s_nodes[i];
                    self.upper[i] = self.lower[i];
                }
            }
        }

        // Row i: (1 + lo + up) w_i - lo w_{i-1} - up w_{i+1} = rhs_i,
        // with w_0 = 0 and w_n = top moved to the right-hand side.
        let mut next = vec![0.0; n + 1];
        next[n] = top;
        let c_prime = &mut self.scratch;
        let mut prev_c = 0.0;
        let mut prev_d = 0.0;
        for i in 1..n {
            let lo = self.lower[i];
            let up = self.upper[i];
            let sub = if i > 1 { -lo } else { 0.0 };
            let sup = if i + 1 < n { -up } else { 0.0 };
            let mut d = self.rhs[i];
            if i + 1 == n {
                d += up * top;
            }
            let denom = 1.0 + lo + up - sub * prev_c;
            prev_c = sup / denom;
            prev_d = (d - sub * prev_d) / denom;
            c_prime[i] = prev_c;
            next[i] = prev_d;
        }
        for i in (1..n - 1).rev() {
            next[i] -= c_prime[i] * next[i + 1];
        }

        let tol = MONOTONE_TOL * top.abs().max(f64::MIN_POSITIVE);
        let (node, min_increment) = next
            .windows(2)
            .enumerate()
            .map(|(i, p)| (i, p[1] - p[0]))
            .fold((0, f64::INFINITY), |acc, x| if x.1 < acc.1 { x } else { acc });
        if min_increment < -tol {
            return Err(KsError::MonotonicityLoss {
                node,
                min_increment,
                tol,
            });
        }
        let z_next = self.solve_z(&next);
        Ok(WState {
            t: state.t + dt,
            w: next,
            z: z_next,
            mass: state.mass,
        })
    }
}

/// One step with the default scheme; see [`Stepper`] for repeated use and
/// the explicit variants.
pub fn step(state: &WState, dt: f64, params: &Params, grid: &MassGrid) -> Result<WState> {
    Stepper::new(params, grid)?.step(state, dt)
}

/// Build the state `(w0, z(w0))` at `t = 0`.
pub fn initial_state(w0: Vec<f64>, params: &Params, grid: &MassGrid) -> Result<WState> {
    if w0.len() != grid.len() {
        return Err(KsError::InvalidArgument(format!(
            "w0 has {} values for {} nodes",
            w0.len(),
            grid.len()
        )));
    }
    if w0[0] != 0.0 {
        return Err(KsError::InvalidArgument("w0(0) must be 0".into()));
    }
    if let Some(i) = w0.windows(2).position(|p| p[1] < p[0]) {
        return Err(KsError::MonotonicityLoss {
            node: i,
            min_increment: w0[i + 1] - w0[i],
            tol: 0.0,
        });
    }
    let stepper = Stepper::new(params, grid)?;
    let z = stepper.solve_z(&w0);
    Ok(WState::new(0.0, w0, z))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Outcome {
    Global,
    Blowup,
    Undecided,
}

/// One diagnostics row per snapshot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticRow {
    pub t: f64,
    pub sup_u: f64,
    pub energy: f64,
    pub dissipation: f64,
    pub y_alpha_max: f64,
    pub dt: f64,
}

/// Per-step bookkeeping of the state invariants over a whole run.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct InvariantLog {
    pub accepted_steps: usize,
    pub rejected_steps: usize,
    /// Whether `w_N` kept the exact bit pattern of the initial datum.
    pub mass_bit_stable: bool,
    /// `min_i (w_{i+1} - w_i) / (m / 2 pi)` over every accepted step.
    pub min_relative_increment: f64,
    /// Worst `max(-z, z - m / 2 pi, z_i - z_{i+1}) / (m / 2 pi)` over every accepted step.
    pub max_z_violation: f64,
    /// Smallest `2 pi w(R^2 / 4)` seen, i.e. mass inside `B_{R/2}`.
    pub min_inner_mass: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationResult {
    pub outcome: Outcome,
    /// Last accepted time before blow-up was declared (a lower bound for the
    /// maximal existence time).
    pub t_star: Option<f64>,
    pub t_final: f64,
    pub sup_u: f64,
    pub u_blowup: f64,
    pub message: Option<String>,
    pub invariants: InvariantLog,
    pub diagnostics: Vec<DiagnosticRow>,
}

impl ClassificationResult {
    pub fn final_energy(&self) -> Option<f64> {
        self.diagnostics.last().map(|d| d.energy)
    }

    /// Sum of all upward moves of the sampled energy.
    pub fn energy_increase(&self) -> f64 {
        self.diagnostics
            .windows(2)
            .map(|p| (p[1].energy - p[0].energy).max(0.0))
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evolution {
    pub trajectory: Vec<WState>,
    pub result: ClassificationResult,
}

/// Exponent used for the monitored `y_alpha`.
pub const MONITOR_ALPHA: f64 = 2.0;

fn sup_density(w: &[f64], h: f64) -> f64 {
    let n = w.len() - 1;
    let mut best = 0.0f64;
    for i in 1..n {
        best = best.max(w[i + 1] - w[i - 1]);
    }
    let mut best = best / (2.0 * h);
    let left = (-3.0 * w[0] + 4.0 * w[1] - w[2]) / (2.0 * h);
    let right = (3.0 * w[n] - 4.0 * w[n - 1] + w[n - 2]) / (2.0 * h);
    best = best.max(left).max(right);
    2.0 * best
}

fn diagnostic_row(state: &WState, params: &Params, grid: &MassGrid, dt: f64) -> DiagnosticRow {
    DiagnosticRow {
        t: state.t,
        sup_u: sup_density(&state.w, grid.spacing()),
        energy: state_energy(state, params, grid),
        dissipation: state_dissipation(state, grid),
        y_alpha_max: bernstein_monitor(state, grid, MONITOR_ALPHA),
        dt,
    }
}

fn interpolate(grid: &MassGrid, w: &[f64], s: f64) -> f64 {
    let x = s / grid.spacing();
    let i = (x.floor() as usize).min(grid.intervals - 1);
    let t = x - i as f64;
    w[i] + t * (w[i + 1] - w[i])
}

/// Integrate from `w0` until `t_end` or until blow-up is declared.
///
/// Blow-up is declared when the sup norm of `u = 2 w_s` exceeds the
/// threshold, or when the step collapses to `dt_min` with monotonicity loss
/// twice in a row.
pub fn evolve(w0: Vec<f64>, params: &Params, grid: &MassGrid, controls: &StepControls) -> Result<Evolution> {
    controls.validate()?;
    if grid.intervals < 3 {
        return Err(KsError::InvalidArgument("evolution needs at least 3 intervals".into()));
    }
    let mut state = initial_state(w0, params, grid)?;
    let mut stepper = Stepper::new(params, grid)?.with_scheme(controls.advection);
    let h = grid.spacing();
    let top = state.w[grid.intervals];
    let top_bits = top.to_bits();
    let scale = top.abs().max(f64::MIN_POSITIVE);
    let u_blowup = controls
        .u_blowup
        .unwrap_or_else(|| default_blowup_threshold(params, grid, state.mass));

    let mut log = InvariantLog {
        accepted_steps: 0,
        rejected_steps: 0,
        mass_bit_stable: true,
        min_relative_increment: f64::INFINITY,
        max_z_violation: 0.0,
        min_inner_mass: f64::INFINITY,
    };
    let track = |s: &WState, log: &mut InvariantLog| {
        let n = s.w.len() - 1;
        log.mass_bit_stable &= s.w[n].to_bits() == top_bits;
        for p in s.w.windows(2) {
            log.min_relative_increment = log.min_relative_increment.min((p[1] - p[0]) / scale);
        }
        let mut zv = 0.0f64;
        for (i, &zi) in s.z.iter().enumerate() {
            zv = zv.max(-zi).max(zi - top);
            if i + 1 < s.z.len() {
                zv = zv.max(zi - s.z[i + 1]);
            }
        }
        log.max_z_violation = log.max_z_violation.max(zv / scale);
        log.min_inner_mass = log
            .min_inner_mass
            .min(2.0 * PI * interpolate(grid, &s.w, 0.25 * grid.length));
    };
    track(&state, &mut log);

    let mut trajectory = vec![state.clone()];
    let mut diagnostics = vec![diagnostic_row(&state, params, grid, 0.0)];
    let mut sup_u = diagnostics[0].sup_u;
    let mut last_snapshot_sup = sup_u.max(f64::MIN_POSITIVE);
    let mut next_sample = controls.sample_dt;
    let mut dt = controls.dt_init;
    let mut dt_next = dt;
    let mut collapse_failures = 0usize;
    let mut outcome = Outcome::Undecided;
    let mut t_star = None;
    let mut message = None;

    if sup_u > u_blowup {
        outcome = Outcome::Blowup;
        t_star = Some(0.0);
    }

    while outcome == Outcome::Undecided {
        if state.t >= controls.t_end {
            outcome = Outcome::Global;
            break;
        }
        if log.accepted_steps >= controls.max_steps {
            message = Some(format!("step budget {} exhausted at t = {}", controls.max_steps, state.t));
            break;
        }
        dt = dt_next.min(controls.dt_max);
        if controls.advection.is_explicit() {
            let speed = Stepper::max_speed(&state);
            if speed > 0.0 {
                dt = dt.min(controls.cfl * h / speed);
            }
        }
        dt = dt.max(controls.dt_min);
        let mut snapshot = false;
        let target = next_sample.min(controls.t_end);
        if state.t + dt >= target {
            dt = target - state.t;
            snapshot = true;
        }
        match stepper.step(&state, dt) {
            Ok(next) => {
                collapse_failures = 0;
                log.accepted_steps += 1;
                let change = next
                    .w
                    .iter()
                    .zip(&state.w)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max)
                    / scale;
                let growth = if change > 0.0 { 0.9 * controls.max_change / change } else { 2.0 };
                // A step clipped onto a sample time must not shrink the next one.
                dt_next = dt_next.max(dt) * growth.clamp(0.2, 2.0);
                track(&next, &mut log);
                let s = sup_density(&next.w, h);
                sup_u = sup_u.max(s);
                state = next;
                if snapshot {
                    while next_sample <= state.t {
                        next_sample += controls.sample_dt;
                    }
                }
                if s > u_blowup {
                    outcome = Outcome::Blowup;
                    t_star = Some(state.t);
                    snapshot = true;
                } else if s >= 2.0 * last_snapshot_sup {
                    snapshot = true;
                }
                if snapshot || state.t >= controls.t_end {
                    let row = diagnostic_row(&state, params, grid, dt);
                    last_snapshot_sup = row.sup_u.max(last_snapshot_sup);
                    diagnostics.push(row);
                    trajectory.push(state.clone());
                }
            }
            Err(KsError::MonotonicityLoss { .. }) => {
                log.rejected_steps += 1;
                if dt <= controls.dt_min {
                    collapse_failures += 1;
                    if collapse_failures >= 2 {
                        outcome = Outcome::Blowup;
                        t_star = Some(state.t);
                        message = Some("time step collapsed with repeated monotonicity loss".into());
                        break;
                    }
                }
                dt_next = (0.5 * dt).max(controls.dt_min);
            }
            Err(e) => return Err(e),
        }
    }

    if trajectory.last().map(|s| s.t) != Some(state.t) {
        diagnostics.push(diagnostic_row(&state, params, grid, dt));
        trajectory.push(state.clone());
    }
    let result = ClassificationResult {
        outcome,
        t_star,
        t_final: state.t,
        sup_u,
        u_blowup,
        message,
        invariants: log,
        diagnostics,
    };
    Ok(Evolution { trajectory, result })
}
