//! JSON configuration documents, one per subcommand.

use anyhow::anyhow;
use serde::de::DeserializeOwned;
use serde::Deserialize;

use kslab_core::evolution::StepControls;
use kslab_core::initial::ProfileFamily;
use kslab_core::steady::{DEFAULT_A_MAX, DEFAULT_CELLS};

use crate::{Failure, Outcome};

pub fn parse<T: DeserializeOwned>(text: &str) -> Outcome<T> {
    serde_json::from_str(text).map_err(|e| Failure::Config(anyhow!("invalid configuration: {e}")))
}

pub fn config_error(msg: impl std::fmt::Display) -> Failure {
    Failure::Config(anyhow!("{msg}"))
}

/// A list of values given as one number, an array, or a spaced range.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum Values {
    One(f64),
    Many(Vec<f64>),
    Range {
        from: f64,
        to: f64,
        count: usize,
        #[serde(default)]
        log: bool,
    },
}

impl Values {
    pub fn expand(&self) -> Vec<f64> {
        match self {
            Values::One(x) => vec![*x],
            Values::Many(v) => v.clone(),
            Values::Range { from, to, count, log } => {
                if *count < 2 {
                    return vec![*from];
                }
                (0..*count)
                    .map(|i| {
                        let t = i as f64 / (*count - 1) as f64;
                        if *log {
                            (from.ln() + t * (to.ln() - from.ln())).exp()
                        } else {
                            from + t * (to - from)
                        }
                    })
                    .collect()
            }
        }
    }
}

/// Initial shape: `"uniform"`, `"gaussian"` with `sigma`, `"annulus"` with
/// `center` and `width` (all as fractions of `R`), or a compact family name
/// such as `"gaussian0.05"`.
pub fn family(name: &str, sigma: Option<f64>, center: Option<f64>, width: Option<f64>) -> Outcome<ProfileFamily> {
    let fam = match (name, sigma, center, width) {
        ("gaussian", Some(s), _, _) => format!("gaussian{s}"),
        ("annulus", _, c, w) if c.is_some() || w.is_some() => {
            format!("annulus{}_{}", c.unwrap_or(0.5), w.unwrap_or(0.1))
        }
        _ => name.to_string(),
    };
    fam.parse().map_err(config_error)
}

fn default_n() -> usize {
    2048
}

fn default_profile() -> String {
    "uniform".into()
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvolveConfig {
    #[serde(rename = "R", alias = "radius")]
    pub radius: f64,
    pub k: f64,
    #[serde(alias = "mass")]
    pub m: f64,
    #[serde(default = "default_profile")]
    pub profile: String,
    pub sigma: Option<f64>,
    pub center: Option<f64>,
    pub width: Option<f64>,
    /// Mass-grid intervals.
    #[serde(rename = "N", alias = "n", default = "default_n")]
    pub n: usize,
    #[serde(default)]
    pub controls: StepControls,
}

fn default_a_min() -> f64 {
    0.05
}

fn default_a_max() -> f64 {
    DEFAULT_A_MAX
}

fn default_points() -> usize {
    200
}

fn default_cells() -> usize {
    DEFAULT_CELLS
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BranchConfig {
    pub k: f64,
    #[serde(rename = "R", alias = "radius")]
    pub radius: Values,
    #[serde(default = "default_a_min")]
    pub a_min: f64,
    #[serde(default = "default_a_max")]
    pub a_max: f64,
    #[serde(default = "default_points")]
    pub points: usize,
    /// Radial cells of the shooting grid.
    #[serde(rename = "M", alias = "cells", default = "default_cells")]
    pub cells: usize,
    /// Values of `a` whose profiles are dumped.
    #[serde(default)]
    pub profiles: Vec<f64>,
    /// Dump the mass-maximizing profile of every branch.
    #[serde(default = "yes")]
    pub dump_max: bool,
}

fn default_refinements() -> usize {
    kslab_core::analysis::DEFAULT_REFINEMENTS
}

fn default_sweep_n() -> usize {
    1024
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(rename = "R", alias = "radius")]
    pub radius: f64,
    pub k: f64,
    /// Family names; every default family when absent.
    pub families: Option<Vec<String>>,
    /// Masses; when absent, 8 values spread over `[0.5, 1.5] * (8 pi + 2 k pi R^2)`.
    #[serde(alias = "m")]
    pub masses: Option<Values>,
    #[serde(rename = "N", alias = "n", default = "default_sweep_n")]
    pub n: usize,
    #[serde(default = "default_refinements")]
    pub refinements: usize,
    #[serde(default)]
    pub controls: StepControls,
}

fn default_sup_n() -> usize {
    4096
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Calibration {
    #[serde(rename = "N", alias = "n", default = "default_sweep_n")]
    pub n: usize,
    #[serde(default = "calibration_t_end")]
    pub t_end: f64,
    #[serde(default = "green_cells")]
    pub green_cells: usize,
}

fn calibration_t_end() -> f64 {
    10.0
}

fn green_cells() -> usize {
    512
}

impl Default for Calibration {
    fn default() -> Self {
        Self {
            n: default_sweep_n(),
            t_end: calibration_t_end(),
            green_cells: green_cells(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Comparison {
    #[serde(default = "yes")]
    pub enabled: bool,
    #[serde(rename = "N", alias = "n", default = "default_sweep_n")]
    pub n: usize,
    #[serde(default)]
    pub controls: StepControls,
}

impl Default for Comparison {
    fn default() -> Self {
        Self {
            enabled: true,
            n: default_sweep_n(),
            controls: StepControls {
                t_end: calibration_t_end(),
                ..StepControls::default()
            },
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SupersolutionConfig {
    #[serde(rename = "R", alias = "radius")]
    pub radius: f64,
    pub k: f64,
    /// Lower slope of `z`; calibrated when absent.
    pub c1: Option<f64>,
    #[serde(rename = "N", alias = "n", default = "default_sup_n")]
    pub n: usize,
    #[serde(default)]
    pub calibration: Calibration,
    #[serde(default)]
    pub comparison: Comparison,
}
