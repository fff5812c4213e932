use std::f64::consts::PI;
use std::path::Path;

use serde::Serialize;

use kslab_core::steady::{a_grid, branch_trace, m_max, mass_bound, solve_lambda, steady_profiles, Branch, BranchPoint};
use kslab_core::Params;

use crate::config::{config_error, BranchConfig};
use crate::output::{csv_writer, num, write_json, Meta};
use crate::Outcome;

#[derive(Serialize)]
struct Endpoint {
    a: f64,
    lambda: f64,
    m: f64,
}

impl From<&BranchPoint> for Endpoint {
    fn from(p: &BranchPoint) -> Self {
        Self {
            a: p.a,
            lambda: p.lambda,
            m: p.m,
        }
    }
}

#[derive(Serialize)]
struct BranchSummary {
    radius: f64,
    k: f64,
    file: String,
    points: usize,
    gaps: Vec<(f64, String)>,
    m_max: f64,
    a_at_max: f64,
    lambda_at_max: f64,
    /// Largest Lambda over the traced points.
    lambda_c: f64,
    first: Option<Endpoint>,
    last: Option<Endpoint>,
    mass_bound: f64,
    /// Smallest `8 pi + 2 k pi R^2 - m` over the branch.
    min_bound_slack: f64,
    max_flux_mismatch: f64,
    profiles: Vec<String>,
}

#[derive(Serialize)]
struct Fit {
    slope: f64,
    intercept: f64,
    radii: Vec<f64>,
}

#[derive(Serialize)]
struct Summary {
    branches: Vec<BranchSummary>,
    /// Least-squares fit of `ln(m_max - 8 pi)` against `ln R`.
    log_log_fit: Option<Fit>,
}

#[derive(Serialize)]
struct Details {
    cells: usize,
    a_min: f64,
    a_max: f64,
    points: usize,
}

fn tag(x: f64) -> String {
    format!("{x}")
}

fn dump_profile(out: &Path, name: &str, point: &BranchPoint, params: &Params) -> Outcome<()> {
    let (v, u) = steady_profiles(point, params)?;
    let mut w = csv_writer(out, name)?;
    w.write_record(["r", "v", "u"])?;
    for i in 0..v.r.len() {
        w.write_record([v.r[i], v.values[i], u.values[i]].map(num))?;
    }
    w.flush()?;
    Ok(())
}

fn write_branch(out: &Path, name: &str, b: &Branch) -> Outcome<()> {
    let mut w = csv_writer(out, name)?;
    w.write_record(["a", "lambda", "m", "vmax", "bound_slack"])?;
    for p in &b.points {
        w.write_record([p.a, p.lambda, p.m, p.vmax, p.bound_slack].map(num))?;
    }
    w.flush()?;
    Ok(())
}

fn fit(rows: &[(f64, f64)]) -> Option<Fit> {
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|(_, m)| *m > 8.0 * PI)
        .map(|(r, m)| (r.ln(), (m - 8.0 * PI).ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    Some(Fit {
        slope,
        intercept: my - slope * mx,
        radii: rows.iter().filter(|(_, m)| *m > 8.0 * PI).map(|r| r.0).collect(),
    })
}

pub fn run(cfg: &BranchConfig, out: &Path, meta: Meta) -> Outcome<()> {
    let radii = cfg.radius.expand();
    if radii.is_empty() {
        return Err(config_error("R must name at least one radius"));
    }
    if !(cfg.a_min > 0.0 && cfg.a_max > cfg.a_min) || cfg.points < 3 {
        return Err(config_error("need 0 < a_min < a_max and points >= 3"));
    }
    let a_values = a_grid(cfg.a_min, cfg.a_max, cfg.points);
    let mut branches = Vec::new();
    let mut table = csv_writer(out, "mmax.csv")?;
    table.write_record(["R", "m_max", "m_max_minus_8pi", "k_pi_R2", "a_at_max", "lambda_at_max"])?;
    let mut rows = Vec::new();
    for &radius in &radii {
        let params = Params::new(radius, cfg.k)?;
        let branch = branch_trace(&params, &a_values, cfg.cells)?;
        let best = m_max(&branch)?;
        let file = if radii.len() == 1 {
            "branch.csv".to_string()
        } else {
            format!("branch_R{}.csv", tag(radius))
        };
        write_branch(out, &file, &branch)?;
        log::info!("R = {radius}: m_max = {} at a = {}", best.m_max, best.a);

        let mut profiles = Vec::new();
        for &a in &cfg.profiles {
            let p = solve_lambda(a, &params, cfg.cells)?;
            let name = format!("profile_R{}_a{}.csv", tag(radius), tag(a));
            dump_profile(out, &name, &p, &params)?;
            profiles.push(name);
        }
        if cfg.dump_max {
            let p = solve_lambda(best.a, &params, cfg.cells)?;
            let name = format!("profile_R{}_max.csv", tag(radius));
            dump_profile(out, &name, &p, &params)?;
            profiles.push(name);
        }

        table.write_record(
            [radius, best.m_max, best.m_max - 8.0 * PI, cfg.k * PI * radius * radius, best.a, best.lambda].map(num),
        )?;
        rows.push((radius, best.m_max));
        branches.push(BranchSummary {
            radius,
            k: cfg.k,
            file,
            points: branch.points.len(),
            gaps: branch.gaps.iter().map(|g| (g.a, g.reason.clone())).collect(),
            m_max: best.m_max,
            a_at_max: best.a,
            lambda_at_max: best.lambda,
            lambda_c: branch.points.iter().map(|p| p.lambda).fold(0.0, f64::max),
            first: branch.points.first().map(Endpoint::from),
            last: branch.points.last().map(Endpoint::from),
            mass_bound: mass_bound(&params),
            min_bound_slack: branch.points.iter().map(|p| p.bound_slack).fold(f64::INFINITY, f64::min),
            max_flux_mismatch: branch.points.iter().map(|p| p.flux_mismatch()).fold(0.0, f64::max),
            profiles,
        });
    }
    table.flush()?;
    let summary = Summary {
        log_log_fit: fit(&rows),
        branches,
    };
    write_json(out, "summary.json", &summary)?;
    meta.finish(
        out,
        Details {
            cells: cfg.cells,
            a_min: cfg.a_min,
            a_max: cfg.a_max,
            points: cfg.points,
        },
    )
}
