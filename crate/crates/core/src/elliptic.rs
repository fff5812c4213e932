//! Radial Helmholtz problem `v'' + v'/r - k v + u = 0`, `v'(0) = 0`,
//! `v(R) = 0`, its cumulated counterpart for `z`, and a numerical probe of
//! Green-function positivity on the half disk.

use std::f64::consts::PI;

use crate::error::{KsError, Result};
use crate::grid::{MassGrid, Params, RadialProfile};
use crate::tridiag::Tridiagonal;

/// Finite-volume geometry of a radial grid: control volumes `int r dr` and
/// face radii between neighbouring nodes.
struct RadialCells {
    volume: Vec<f64>,
    face: Vec<f64>,
}

impl RadialCells {
    fn new(r: &[f64]) -> Self {
        let m = r.len() - 1;
        let face: Vec<f64> = r.windows(2).map(|p| 0.5 * (p[0] + p[1])).collect();
        let mut volume = vec![0.0; m + 1];
        volume[0] = 0.5 * face[0] * face[0];
        for j in 1..m {
            volume[j] = 0.5 * (face[j] * face[j] - face[j - 1] * face[j - 1]);
        }
        volume[m] = 0.5 * (r[m] * r[m] - face[m - 1] * face[m - 1]);
        Self { volume, face }
    }
}

/// Assemble `-(r v')' + k r v = r u` in conservative form on the interior
/// unknowns `v_0 .. v_{M-1}` (`v_M = 0`).
fn helmholtz_matrix(r: &[f64], cells: &RadialCells, k: f64) -> Tridiagonal {
    let m = r.len() - 1;
    let mut a = Tridiagonal::zeros(m);
    for j in 0..m {
        let right = cells.face[j] / (r[j + 1] - r[j]);
        let left = if j > 0 {
            cells.face[j - 1] / (r[j] - r[j - 1])
        } else {
            0.0
        };
        a.diag[j] = left + right + k * cells.volume[j];
        if j > 0 {
            a.lower[j] = -left;
        }
        if j + 1 < m {
            a.upper[j] = -right;
        }
    }
    a
}

/// Solve for `v` given the density `u` on the same radial nodes.
pub fn solve_helmholtz_radial(u: &RadialProfile, params: &Params) -> Result<RadialProfile> {
    u.check_nonnegative("u")?;
    if u.len() < 3 {
        return Err(KsError::InvalidArgument("radial grid needs >= 3 nodes".into()));
    }
    let cells = RadialCells::new(&u.r);
    let a = helmholtz_matrix(&u.r, &cells, params.k);
    let m = u.len() - 1;
    let rhs: Vec<f64> = (0..m).map(|j| cells.volume[j] * u.values[j]).collect();
    let mut v = a.solve(&rhs)?;
    v.push(0.0);
    // Clamp roundoff-level negatives; the discrete operator is an M-matrix.
    let vmax = v.iter().copied().fold(0.0, f64::max);
    for x in v.iter_mut() {
        if *x < 0.0 && *x >= -1e-12 * vmax {
            *x = 0.0;
        }
    }
    Ok(RadialProfile {
        r: u.r.clone(),
        values: v,
    })
}

/// Both sides of `int u = k int v - int_boundary dv/dnu` on the disk,
/// using trapezoid quadrature and a second-order one-sided `v'(R)`.
pub fn flux_identity(u: &RadialProfile, v: &RadialProfile, params: &Params) -> (f64, f64) {
    let lhs = u.planar_integral();
    let m = v.len() - 1;
    let (r, f) = (&v.r, &v.values);
    let (h1, h2) = (r[m] - r[m - 1], r[m - 1] - r[m - 2]);
    // Three-point backward derivative on possibly uneven spacing.
    let dv = f[m] * (2.0 * h1 + h2) / (h1 * (h1 + h2)) - f[m - 1] * (h1 + h2) / (h1 * h2)
        + f[m - 2] * h1 / (h2 * (h1 + h2));
    let radius = r[m];
    let rhs = params.k * v.planar_integral() + 2.0 * PI * radius * (-dv);
    (lhs, rhs)
}

/// Solve `4 s z_ss = k (z - w)` with `z(0) = 0`, `z_s(R^2) = 0`.
///
/// Returns exact zeros for `k = 0` or `w = 0`.
pub fn solve_z_bvp(w: &[f64], params: &Params, grid: &MassGrid) -> Result<Vec<f64>> {
    let n = grid.intervals;
    if w.len() != n + 1 {
        return Err(KsError::InvalidArgument(format!(
            "w has {} values for a grid of {} nodes",
            w.len(),
            n + 1
        )));
    }
    let k = params.k;
    if k == 0.0 || w.iter().all(|&x| x == 0.0) {
        return Ok(vec![0.0; n + 1]);
    }
    let a = z_matrix(grid, k);
    let rhs: Vec<f64> = (1..=n).map(|i| k * w[i]).collect();
    let mut z = vec![0.0];
    z.extend(a.solve(&rhs)?);
    Ok(z)
}

/// Matrix of the z-problem on unknowns `z_1 .. z_N` (sign-flipped so the
/// diagonal is positive); depends only on the grid and `k`.
pub(crate) fn z_matrix(grid: &MassGrid, k: f64) -> Tridiagonal {
    let n = grid.intervals;
    let h2 = grid.spacing() * grid.spacing();
    let mut a = Tridiagonal::zeros(n);
    for i in 1..=n {
        let row = i - 1;
        let c = 4.0 * grid.nodes[i] / h2;
        if i < n {
            a.diag[row] = 2.0 * c + k;
            a.upper[row] = -c;
            if row > 0 {
                a.lower[row] = -c;
            }
        } else {
            // Ghost node z_{N+1} = z_{N-1} enforces z_s(R^2) = 0.
            a.diag[row] = 2.0 * c + k;
            a.lower[row] = -2.0 * c;
        }
    }
    a
}

/// Recover `v = 2 z_s / k` at the grid radii (requires `k > 0`).
pub fn v_from_z(z: &[f64], params: &Params, grid: &MassGrid) -> Result<RadialProfile> {
    if params.k <= 0.0 {
        return Err(KsError::InvalidArgument("v_from_z needs k > 0".into()));
    }
    let zs = crate::grid::mass_derivative(z, grid.spacing());
    let mut values: Vec<f64> = zs.iter().map(|d| 2.0 * d / params.k).collect();
    let last = values.len() - 1;
    values[last] = 0.0;
    Ok(RadialProfile {
        r: grid.radii(),
        values,
    })
}

/// `v(s) = int_s^{R^2} (w - z) / (2 sigma) d sigma`, valid for every `k >= 0`.
pub fn v_from_wz(w: &[f64], z: &[f64], grid: &MassGrid) -> Vec<f64> {
    let n = grid.intervals;
    let h = grid.spacing();
    let ws = crate::grid::mass_derivative(w, h);
    let zs = crate::grid::mass_derivative(z, h);
    let integrand = |i: usize| {
        if i == 0 {
            0.5 * (ws[0] - zs[0])
        } else {
            (w[i] - z[i]) / (2.0 * grid.nodes[i])
        }
    };
    let mut v = vec![0.0; n + 1];
    let mut next = integrand(n);
    for i in (0..n).rev() {
        let cur = integrand(i);
        v[i] = v[i + 1] + 0.5 * h * (cur + next);
        next = cur;
    }
    v
}

/// Smallest value on `[0, R/2]` of the response to a unit-mass ring source
/// centered anywhere in `(0, R/2]`, on `M` uniform radial cells.
///
/// The ring occupies three nodes and is normalized to planar mass one.
pub fn ring_green_lower_bound(params: &Params, cells_count: usize) -> Result<f64> {
    if params.k <= 0.0 {
        return Err(KsError::InvalidArgument("ring_green_lower_bound needs k > 0".into()));
    }
    if cells_count < 8 {
        return Err(KsError::InvalidArgument(format!("need M >= 8, got {cells_count}")));
    }
    let radius = params.radius;
    let h = radius / cells_count as f64;
    let r: Vec<f64> = (0..=cells_count).map(|j| j as f64 * h).collect();
    let cells = RadialCells::new(&r);
    let lu = helmholtz_matrix(&r, &cells, params.k).factor()?;
    let half = cells_count / 2;
    let mut best = f64::INFINITY;
    let mut rhs = vec![0.0; cells_count];
    for center in 1..=half {
        rhs.iter_mut().for_each(|x| *x = 0.0);
        let support = center - 1..=center + 1;
        let vol: f64 = support.clone().map(|j| cells.volume[j]).sum();
        let density = 1.0 / (2.0 * PI * vol);
        for j in support {
            rhs[j] = cells.volume[j] * density;
        }
        lu.solve_in_place(&mut rhs);
        let local = rhs[..=half].iter().copied().fold(f64::INFINITY, f64::min);
        best = best.min(local);
    }
    if best > 0.0 {
        Ok(best)
    } else {
        Err(KsError::NonpositiveBound(best))
    }
}
