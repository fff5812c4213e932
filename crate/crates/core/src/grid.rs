//! Domain types shared by every solver: model parameters, the uniform grid
//! in `s = r^2`, radial profiles and the cumulated-mass state `(w, z)`.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{KsError, Result};

/// Smallest node count accepted by [`build_mass_grid`].
pub const MIN_MASS_NODES: usize = 16;

/// Model parameters: disk radius, degradation rate `k` and space dimension.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Params {
    pub radius: f64,
    pub k: f64,
    pub dim: u32,
}

impl Params {
    pub fn new(radius: f64, k: f64) -> Result<Self> {
        Self::with_dim(radius, k, 2)
    }

    pub fn with_dim(radius: f64, k: f64, dim: u32) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(KsError::InvalidArgument(format!("radius must be > 0, got {radius}")));
        }
        if !(k >= 0.0 && k.is_finite()) {
            return Err(KsError::InvalidArgument(format!("k must be >= 0, got {k}")));
        }
        if dim < 2 {
            return Err(KsError::InvalidArgument(format!("dimension must be >= 2, got {dim}")));
        }
        Ok(Self { radius, k, dim })
    }

    /// Right end of the mass grid, `R^2`.
    pub fn s_max(&self) -> f64 {
        self.radius * self.radius
    }

    /// Mean density `m / (pi R^2)` of a planar disk carrying mass `m`.
    pub fn mean_density(&self, mass: f64) -> f64 {
        mass / (PI * self.s_max())
    }
}

/// Uniform grid `s_i = i L / N` on `[0, L]`, `L = R^2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MassGrid {
    pub length: f64,
    pub intervals: usize,
    pub nodes: Vec<f64>,
}

impl MassGrid {
    /// Uniform grid with any `intervals >= 2`.
    pub fn uniform(radius: f64, intervals: usize) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(KsError::InvalidArgument(format!("radius must be > 0, got {radius}")));
        }
        if intervals < 2 {
            return Err(KsError::InvalidArgument(format!(
                "grid needs at least 2 intervals, got {intervals}"
            )));
        }
        let length = radius * radius;
        let h = length / intervals as f64;
        let mut nodes: Vec<f64> = (0..=intervals).map(|i| i as f64 * h).collect();
        nodes[intervals] = length;
        Ok(Self {
            length,
            intervals,
            nodes,
        })
    }

    pub fn spacing(&self) -> f64 {
        self.length / self.intervals as f64
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Radii `r_i = sqrt(s_i)` of the grid nodes.
    pub fn radii(&self) -> Vec<f64> {
        self.nodes.iter().map(|s| s.sqrt()).collect()
    }
}

/// Solver-grade mass grid: `N >= 16` intervals on `[0, R^2]`.
pub fn build_mass_grid(radius: f64, intervals: usize) -> Result<MassGrid> {
    if intervals < MIN_MASS_NODES {
        return Err(KsError::InvalidArgument(format!(
            "mass grid needs N >= {MIN_MASS_NODES}, got {intervals}"
        )));
    }
    MassGrid::uniform(radius, intervals)
}

/// A function of `r` sampled at increasing radii `0 = r_0 < ... < r_M = R`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadialProfile {
    pub r: Vec<f64>,
    pub values: Vec<f64>,
}

impl RadialProfile {
    pub fn new(r: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if r.len() != values.len() || r.len() < 2 {
            return Err(KsError::InvalidArgument(format!(
                "profile needs >= 2 matching nodes, got {} radii / {} values",
                r.len(),
                values.len()
            )));
        }
        if r[0] != 0.0 {
            return Err(KsError::InvalidArgument("profile must start at r = 0".into()));
        }
        if r.windows(2).any(|p| p[1] <= p[0]) {
            return Err(KsError::InvalidArgument("profile radii must increase strictly".into()));
        }
        Ok(Self { r, values })
    }

    /// Sample `f` on `M + 1` uniform radii covering `[0, R]`.
    pub fn sample<F: Fn(f64) -> f64>(radius: f64, intervals: usize, f: F) -> Self {
        let h = radius / intervals as f64;
        let r: Vec<f64> = (0..=intervals)
            .map(|j| if j == intervals { radius } else { j as f64 * h })
            .collect();
        let values = r.iter().map(|&x| f(x)).collect();
        Self { r, values }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            r: self.r.clone(),
            values: vec![0.0; self.r.len()],
        }
    }

    pub fn radius(&self) -> f64 {
        *self.r.last().expect("non-empty profile")
    }

    pub fn len(&self) -> usize {
        self.r.len()
    }

    pub fn is_empty(&self) -> bool {
        self.r.is_empty()
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn check_nonnegative(&self, what: &'static str) -> Result<()> {
        match self.values.iter().position(|&v| v < 0.0 || v.is_nan()) {
            Some(index) => Err(KsError::NegativeInput {
                what,
                index,
                value: self.values[index],
            }),
            None => Ok(()),
        }
    }

    /// Linear interpolation; clamps outside `[0, R]`.
    pub fn interpolate(&self, x: f64) -> f64 {
        let n = self.r.len();
        if x <= self.r[0] {
            return self.values[0];
        }
        if x >= self.r[n - 1] {
            return self.values[n - 1];
        }
        let j = self.r.partition_point(|&rj| rj <= x) - 1;
        let t = (x - self.r[j]) / (self.r[j + 1] - self.r[j]);
        self.values[j] + t * (self.values[j + 1] - self.values[j])
    }

    /// `2 pi int_0^R r f(r) dr` for the piecewise-linear interpolant of the profile.
    pub fn planar_integral(&self) -> f64 {
        2.0 * PI * self.cumulated().last().copied().unwrap_or(0.0)
    }

    /// Running integrals `int_0^{r_j} rho f(rho) d rho` of the piecewise-linear
    /// interpolant, exact for linear pieces.
    pub fn cumulated(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.r.len());
        let mut acc = 0.0;
        out.push(0.0);
        for j in 0..self.r.len() - 1 {
            acc += segment_moment(self.r[j], self.values[j], self.r[j + 1], self.values[j + 1]);
            out.push(acc);
        }
        out
    }
}

/// `int_a^b rho f(rho) d rho` for `f` linear between `(a, fa)` and `(b, fb)`.
fn segment_moment(a: f64, fa: f64, b: f64, fb: f64) -> f64 {
    let m = 0.5 * (a + b);
    let fm = 0.5 * (fa + fb);
    (b - a) / 6.0 * (a * fa + 4.0 * m * fm + b * fb)
}

/// Solution of the cumulated-mass problem at one time instant.
///
/// `w(s) = int_0^sqrt(s) rho u d rho` and `z(s) = k int_0^sqrt(s) rho v d rho`,
/// both sampled on a [`MassGrid`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WState {
    pub t: f64,
    pub w: Vec<f64>,
    pub z: Vec<f64>,
    pub mass: f64,
}

impl WState {
    pub fn new(t: f64, w: Vec<f64>, z: Vec<f64>) -> Self {
        let mass = 2.0 * PI * w.last().copied().unwrap_or(0.0);
        Self { t, w, z, mass }
    }

    /// Largest violation of the state invariants (monotone `w` and `z`,
    /// pinned ends, `0 <= z <= m / 2 pi`), relative to `m / 2 pi`.
    pub fn invariant_violation(&self) -> f64 {
        let top = self.w.last().copied().unwrap_or(0.0);
        let scale = top.abs().max(f64::MIN_POSITIVE);
        let mut worst = self.w[0].abs().max(self.z[0].abs());
        for p in self.w.windows(2) {
            worst = worst.max(p[0] - p[1]);
        }
        for p in self.z.windows(2) {
            worst = worst.max(p[0] - p[1]);
        }
        for &zi in &self.z {
            worst = worst.max(-zi).max(zi - top);
        }
        worst / scale
    }
}

/// `total_mass`: `2 pi w(R^2)`.
pub fn total_mass(state: &WState) -> f64 {
    2.0 * PI * state.w.last().copied().unwrap_or(0.0)
}

/// Cumulated initial datum `w0(s) = int_0^sqrt(s) rho u0 d rho` on the grid.
///
/// `u0` is treated as piecewise linear in `r`, so the integral is exact for
/// profiles that are linear on each radial cell.
pub fn profile_to_w0(u0: &RadialProfile, grid: &MassGrid) -> Result<Vec<f64>> {
    u0.check_nonnegative("u0")?;
    let radius = u0.radius();
    if (radius * radius - grid.length).abs() > 1e-12 * grid.length {
        return Err(KsError::InvalidArgument(format!(
            "profile radius {radius} does not match grid length {}",
            grid.length
        )));
    }
    let cum = u0.cumulated();
    let last = grid.len() - 1;
    let mut w0 = Vec::with_capacity(grid.len());
    let mut j = 0;
    for (i, &s) in grid.nodes.iter().enumerate() {
        if i == last {
            w0.push(cum[cum.len() - 1]);
            continue;
        }
        let x = s.sqrt().min(radius);
        while j + 1 < u0.r.len() - 1 && u0.r[j + 1] <= x {
            j += 1;
        }
        let fx = u0.interpolate(x);
        let partial = segment_moment(u0.r[j], u0.values[j], x, fx);
        w0.push(cum[j] + partial.max(0.0));
    }
    // Monotone by construction; guard against rounding at coincident nodes.
    for i in 1..w0.len() {
        if w0[i] < w0[i - 1] {
            w0[i] = w0[i - 1];
        }
    }
    Ok(w0)
}

/// Derivative `w_s` on the grid: centered inside, one-sided second order at
/// the ends (first order where the second-order stencil would turn negative
/// on monotone data).
pub fn mass_derivative(w: &[f64], h: f64) -> Vec<f64> {
    let n = w.len() - 1;
    let mut ws = vec![0.0; n + 1];
    for i in 1..n {
        ws[i] = (w[i + 1] - w[i - 1]) / (2.0 * h);
    }
    if n >= 2 {
        let left = (-3.0 * w[0] + 4.0 * w[1] - w[2]) / (2.0 * h);
        ws[0] = if left >= 0.0 { left } else { (w[1] - w[0]) / h };
        let right = (3.0 * w[n] - 4.0 * w[n - 1] + w[n - 2]) / (2.0 * h);
        ws[n] = if right >= 0.0 { right } else { (w[n] - w[n - 1]) / h };
    } else {
        ws[0] = (w[1] - w[0]) / h;
        ws[1] = ws[0];
    }
    ws
}

/// Density `u(sqrt(s_i)) = 2 w_s(s_i)` at radii `r_i = sqrt(s_i)`.
///
/// Negative derivatives within `1e-12 * max|w| / h` are clamped to zero;
/// anything below that means `w` is not monotone and is rejected.
pub fn w_to_u(state: &WState, grid: &MassGrid) -> Result<RadialProfile> {
    let h = grid.spacing();
    let ws = mass_derivative(&state.w, h);
    let scale = state.w.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
    let tol = 1e-12 * scale.max(f64::MIN_POSITIVE) / h;
    let mut values = Vec::with_capacity(ws.len());
    for (i, d) in ws.into_iter().enumerate() {
        if d < -tol {
            return Err(KsError::MonotonicityLoss {
                node: i,
                min_increment: d * h,
                tol: tol * h,
            });
        }
        values.push(2.0 * d.max(0.0));
    }
    Ok(RadialProfile {
        r: grid.radii(),
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_examples() {
        let g = MassGrid::uniform(1.0, 4).unwrap();
        assert_eq!(g.nodes, vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        let g = MassGrid::uniform(2.0, 2).unwrap();
        assert_eq!(g.nodes, vec![0.0, 2.0, 4.0]);
        let g = MassGrid::uniform(1.0, 8).unwrap();
        assert_eq!(g.nodes[3], 0.375);
    }

    #[test]
    fn build_mass_grid_validates() {
        assert!(build_mass_grid(1.0, 15).is_err());
        assert!(build_mass_grid(0.0, 64).is_err());
        assert!(build_mass_grid(-1.0, 64).is_err());
        let g = build_mass_grid(3.0, 16).unwrap();
        assert_eq!(g.nodes.len(), 17);
        assert_eq!(g.nodes[16], 9.0);
    }

    #[test]
    fn zero_profile_gives_zero_w0() {
        let u0 = RadialProfile::sample(1.0, 64, |_| 0.0);
        let g = build_mass_grid(1.0, 32).unwrap();
        assert!(profile_to_w0(&u0, &g).unwrap().iter().all(|&w| w == 0.0));
    }

    #[test]
    fn constant_profile_gives_linear_w0() {
        let c = 3.5;
        let u0 = RadialProfile::sample(1.0, 50, |_| c);
        let g = build_mass_grid(1.0, 64).unwrap();
        let w0 = profile_to_w0(&u0, &g).unwrap();
        for (s, w) in g.nodes.iter().zip(&w0) {
            assert!((w - c * s / 2.0).abs() < 1e-14, "s={s} w={w}");
        }
    }

    #[test]
    fn uniform_density_carries_requested_mass() {
        let (radius, m) = (1.7, 30.0);
        let u0 = RadialProfile::sample(radius, 100, |_| m / (PI * radius * radius));
        let g = build_mass_grid(radius, 128).unwrap();
        let w0 = profile_to_w0(&u0, &g).unwrap();
        assert!((w0[128] - m / (2.0 * PI)).abs() < 1e-13);
    }

    #[test]
    fn negative_profile_rejected() {
        let mut u0 = RadialProfile::sample(1.0, 10, |_| 1.0);
        u0.values[4] = -1e-3;
        let g = build_mass_grid(1.0, 16).unwrap();
        assert!(matches!(
            profile_to_w0(&u0, &g),
            Err(KsError::NegativeInput { index: 4, .. })
        ));
    }

    #[test]
    fn w_to_u_examples() {
        let g = build_mass_grid(1.0, 64).unwrap();
        let c = 2.0;
        let state = WState::new(0.0, g.nodes.iter().map(|s| c * s / 2.0).collect(), vec![0.0; 65]);
        let u = w_to_u(&state, &g).unwrap();
        assert!(u.values.iter().all(|v| (v - c).abs() < 1e-12));

        let zero = WState::new(0.0, vec![0.0; 65], vec![0.0; 65]);
        assert!(w_to_u(&zero, &g).unwrap().values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn w_to_u_bubble_second_order() {
        // w = 4s/(s+b) has u(r) = 8b/(r^2+b)^2.
        let b = 0.3;
        let err = |n: usize| {
            let g = build_mass_grid(1.0, n).unwrap();
            let w = g.nodes.iter().map(|s| 4.0 * s / (s + b)).collect();
            let state = WState::new(0.0, w, vec![0.0; n + 1]);
            let u = w_to_u(&state, &g).unwrap();
            u.r.iter()
                .zip(&u.values)
                .map(|(r, v)| (v - 8.0 * b / (r * r + b).powi(2)).abs())
                .fold(0.0, f64::max)
        };
        let (e1, e2) = (err(256), err(512));
        assert!(e1 < 2e-2, "{e1}");
        let ratio = e1 / e2;
        assert!((3.5..4.5).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn w_to_u_rejects_decreasing_w() {
        let g = build_mass_grid(1.0, 16).unwrap();
        let mut w: Vec<f64> = g.nodes.iter().map(|s| s * 2.0).collect();
        w[8] = 0.1;
        let state = WState::new(0.0, w, vec![0.0; 17]);
        assert!(matches!(w_to_u(&state, &g), Err(KsError::MonotonicityLoss { .. })));
    }

    #[test]
    fn total_mass_examples() {
        let s = WState::new(0.0, vec![0.0, 1.0, 4.0], vec![0.0; 3]);
        assert!((total_mass(&s) - 8.0 * PI).abs() < 1e-15);
        let s = WState::new(0.0, vec![0.0; 3], vec![0.0; 3]);
        assert_eq!(total_mass(&s), 0.0);
        let eps = 0.3;
        let s = WState::new(0.0, vec![0.0, 2.0, 4.0 + eps], vec![0.0; 3]);
        assert!((total_mass(&s) - 2.0 * PI * (4.0 + eps)).abs() < 1e-14);
    }
}
