use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use kslab_core::analysis::{
    check_z_linear_bounds, compare_order, construct_supersolution, default_c1, pinched_initial,
    verify_supersolution_inequality, Barrier, C1Calibration, OrderCheck, SupersolutionCheck, ZBounds,
};
use kslab_core::build_mass_grid;
use kslab_core::evolution::{evolve, Outcome as RunOutcome, StepControls};
use kslab_core::Params;

use crate::config::SupersolutionConfig;
use crate::output::{num, write_json, Meta};
use crate::Outcome;

#[derive(Serialize)]
struct Constants {
    radius: f64,
    k: f64,
    s0: f64,
    b: f64,
    epsilon: f64,
    c1: f64,
    c2: f64,
    mbar: f64,
    /// `mbar - 8 pi = 2 pi eps`, which may be below the resolution of `mbar`.
    mass_excess: f64,
    b_over_s0: f64,
    c2_residual: f64,
    calibration: Option<C1Calibration>,
}

#[derive(Serialize)]
struct ComparisonReport {
    intervals: usize,
    outcome: RunOutcome,
    t_final: f64,
    order: OrderCheck,
    z_bounds: Option<ZBounds>,
    /// Whether `z >= c2 s` held along the run, the assumption behind the construction.
    z_lower_bound_covered: Option<bool>,
}

#[derive(Serialize)]
struct Verification {
    intervals: usize,
    residuals: SupersolutionCheck,
    invariants_ok: bool,
    invariant_error: Option<String>,
    /// Smallest `wbar(s) - mbar s / (2 pi R^2)` over interior nodes.
    min_chord_gap: f64,
    comparison: Option<ComparisonReport>,
}

#[derive(Serialize)]
struct Details {
    intervals: usize,
    calibration_intervals: Option<usize>,
    comparison_intervals: Option<usize>,
}

pub fn run(cfg: &SupersolutionConfig, out: &Path, meta: Meta) -> Outcome<()> {
    let params = Params::new(cfg.radius, cfg.k)?;
    let grid = build_mass_grid(cfg.radius, cfg.n)?;
    let calibration = match cfg.c1 {
        Some(_) => None,
        None => {
            let cal_grid = build_mass_grid(cfg.radius, cfg.calibration.n)?;
            let controls = StepControls {
                t_end: cfg.calibration.t_end,
                ..StepControls::default()
            };
            Some(default_c1(&params, &cal_grid, &controls, cfg.calibration.green_cells)?)
        }
    };
    let c1 = cfg.c1.or(calibration.map(|c| c.c1)).unwrap_or_default();
    let sup = construct_supersolution(&params, c1, &grid)?;

    let f = File::create(out.join("supersolution.csv"))?;
    let mut f = BufWriter::new(f);
    for (key, value) in [
        ("s0", sup.s0),
        ("b", sup.b),
        ("epsilon", sup.epsilon),
        ("c1", sup.c1),
        ("c2", sup.c2),
        ("mbar", sup.mbar),
    ] {
        writeln!(f, "# {key} = {}", num(value))?;
    }
    let mut w = csv::Writer::from_writer(f);
    w.write_record(["s", "wbar"])?;
    for (s, v) in sup.s.iter().zip(&sup.wbar) {
        w.write_record([num(*s), num(*v)])?;
    }
    w.flush()?;

    write_json(
        out,
        "constants.json",
        &Constants {
            radius: cfg.radius,
            k: cfg.k,
            s0: sup.s0,
            b: sup.b,
            epsilon: sup.epsilon,
            c1: sup.c1,
            c2: sup.c2,
            mbar: sup.mbar,
            mass_excess: sup.mass_excess(),
            b_over_s0: sup.b_scaled,
            c2_residual: sup.c2_residual,
            calibration,
        },
    )?;

    let residuals = verify_supersolution_inequality(&sup, sup.c2, &grid);
    let invariants = sup.check_invariants();
    let l = cfg.radius * cfg.radius;
    let top = 4.0 + sup.epsilon;
    let min_chord_gap = (1..cfg.n)
        .map(|i| sup.wbar[i] - top * sup.s[i] / l)
        .fold(f64::INFINITY, f64::min);

    let comparison = if cfg.comparison.enabled {
        let cg = build_mass_grid(cfg.radius, cfg.comparison.n)?;
        let upper = sup.sample(&cg);
        let run = evolve(pinched_initial(&sup, &cg), &params, &cg, &cfg.comparison.controls)?;
        let order = compare_order(&Barrier::None, &Barrier::Nodal(&upper), &run.trajectory, &cg);
        let z_bounds = if cfg.k > 0.0 {
            Some(check_z_linear_bounds(&run.trajectory, &params, &cg)?)
        } else {
            None
        };
        Some(ComparisonReport {
            intervals: cfg.comparison.n,
            outcome: run.result.outcome,
            t_final: run.result.t_final,
            order,
            z_lower_bound_covered: z_bounds.map(|z| z.c_low >= sup.c2),
            z_bounds,
        })
    } else {
        None
    };

    write_json(
        out,
        "verification.json",
        &Verification {
            intervals: cfg.n,
            residuals,
            invariants_ok: invariants.is_ok(),
            invariant_error: invariants.err().map(|e| e.to_string()),
            min_chord_gap,
            comparison,
        },
    )?;
    meta.finish(
        out,
        Details {
            intervals: cfg.n,
            calibration_intervals: cfg.c1.is_none().then_some(cfg.calibration.n),
            comparison_intervals: cfg.comparison.enabled.then_some(cfg.comparison.n),
        },
    )
}
