use std::f64::consts::PI;
use std::path::Path;

use serde::Serialize;

use kslab_core::analysis::{classify_mass_sweep, MassBracket};
use kslab_core::build_mass_grid;
use kslab_core::evolution::{Outcome as RunOutcome, StepControls};
use kslab_core::initial::ProfileFamily;
use kslab_core::Params;

use crate::config::{config_error, SweepConfig, Values};
use crate::output::{csv_writer, num, opt, write_json, Meta};
use crate::Outcome;

#[derive(Serialize)]
struct BracketRecord<'a> {
    name: String,
    #[serde(flatten)]
    bracket: &'a MassBracket,
}

#[derive(Serialize)]
struct Brackets<'a> {
    radius: f64,
    k: f64,
    /// `8 pi + 2 k pi R^2`, above which every nontrivial run should blow up.
    upper_critical_mass: f64,
    families: Vec<BracketRecord<'a>>,
}

#[derive(Serialize)]
struct Details<'a> {
    intervals: usize,
    refinements: usize,
    controls: &'a StepControls,
    runs: usize,
}

pub fn run(cfg: &SweepConfig, out: &Path, meta: Meta) -> Outcome<()> {
    let params = Params::new(cfg.radius, cfg.k)?;
    let grid = build_mass_grid(cfg.radius, cfg.n)?;
    let families: Vec<ProfileFamily> = match &cfg.families {
        Some(names) => names
            .iter()
            .map(|n| n.parse().map_err(config_error))
            .collect::<Outcome<_>>()?,
        None => ProfileFamily::defaults(),
    };
    if families.is_empty() {
        return Err(config_error("families must not be empty"));
    }
    let upper = 8.0 * PI + 2.0 * PI * cfg.k * cfg.radius * cfg.radius;
    let masses = cfg
        .masses
        .clone()
        .unwrap_or(Values::Range {
            from: 0.5 * upper,
            to: 1.5 * upper,
            count: 8,
            log: false,
        })
        .expand();
    if masses.is_empty() {
        return Err(config_error("masses must not be empty"));
    }
    let table = classify_mass_sweep(&params, &families, &masses, &grid, &cfg.controls, cfg.refinements)?;

    let mut w = csv_writer(out, "sweep.csv")?;
    w.write_record(["family", "m", "outcome", "t_star", "sup_u", "F_final", "refined"])?;
    for r in &table.rows {
        let outcome = match r.result.outcome {
            RunOutcome::Global => "Global",
            RunOutcome::Blowup => "Blowup",
            RunOutcome::Undecided => "Undecided",
        };
        w.write_record([
            r.family.to_string(),
            num(r.mass),
            outcome.to_string(),
            opt(r.result.t_star),
            num(r.result.sup_u),
            opt(r.result.final_energy()),
            r.refined.to_string(),
        ])?;
    }
    w.flush()?;
    write_json(
        out,
        "brackets.json",
        &Brackets {
            radius: cfg.radius,
            k: cfg.k,
            upper_critical_mass: upper,
            families: table
                .brackets
                .iter()
                .map(|b| BracketRecord {
                    name: b.family.to_string(),
                    bracket: b,
                })
                .collect(),
        },
    )?;
    meta.finish(
        out,
        Details {
            intervals: cfg.n,
            refinements: cfg.refinements,
            controls: &cfg.controls,
            runs: table.rows.len(),
        },
    )
}
