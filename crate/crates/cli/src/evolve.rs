use std::path::Path;

use serde::Serialize;

use kslab_core::build_mass_grid;
use kslab_core::evolution::{evolve, Evolution, StepControls};
use kslab_core::initial::initial_w0;
use kslab_core::Params;

use crate::config::{family, EvolveConfig};
use crate::output::{csv_writer, num, write_json, Meta};
use crate::Outcome;

#[derive(Serialize)]
struct Details<'a> {
    intervals: usize,
    family: String,
    mass: f64,
    controls: &'a StepControls,
    u_blowup: f64,
    accepted_steps: usize,
    snapshots: usize,
}

pub fn write_trajectory(dir: &Path, name: &str, run: &Evolution, nodes: &[f64]) -> Outcome<()> {
    let mut w = csv_writer(dir, name)?;
    w.write_record(["t", "s", "w", "z"])?;
    for st in &run.trajectory {
        let t = num(st.t);
        for (i, s) in nodes.iter().enumerate() {
            w.write_record([t.as_str(), &num(*s), &num(st.w[i]), &num(st.z[i])])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_diagnostics(dir: &Path, name: &str, run: &Evolution) -> Outcome<()> {
    let mut w = csv_writer(dir, name)?;
    w.write_record(["t", "sup_u", "F", "D", "y2max", "dt"])?;
    for d in &run.result.diagnostics {
        w.write_record([d.t, d.sup_u, d.energy, d.dissipation, d.y_alpha_max, d.dt].map(num))?;
    }
    w.flush()?;
    Ok(())
}

pub fn run(cfg: &EvolveConfig, out: &Path, meta: Meta) -> Outcome<()> {
    let params = Params::new(cfg.radius, cfg.k)?;
    let grid = build_mass_grid(cfg.radius, cfg.n)?;
    let fam = family(&cfg.profile, cfg.sigma, cfg.center, cfg.width)?;
    cfg.controls.validate()?;
    let w0 = initial_w0(fam, &params, cfg.m, &grid)?;
    let run = evolve(w0, &params, &grid, &cfg.controls)?;
    log::info!(
        "{fam} m = {}: {:?} at t = {} (sup u = {})",
        cfg.m,
        run.result.outcome,
        run.result.t_final,
        run.result.sup_u
    );

    write_trajectory(out, "trajectory.csv", &run, &grid.nodes)?;
    write_diagnostics(out, "diagnostics.csv", &run)?;
    write_json(out, "result.json", &run.result)?;
    meta.finish(
        out,
        Details {
            intervals: cfg.n,
            family: fam.to_string(),
            mass: cfg.m,
            controls: &cfg.controls,
            u_blowup: run.result.u_blowup,
            accepted_steps: run.result.invariants.accepted_steps,
            snapshots: run.trajectory.len(),
        },
    )
}
