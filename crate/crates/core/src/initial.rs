//! Mass-normalized initial densities used by the evolution experiments.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use crate::error::{KsError, Result};
use crate::grid::{profile_to_w0, MassGrid, Params, RadialProfile};

/// Shape of an initial density; the amplitude is fixed by the requested mass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ProfileFamily {
    Uniform,
    /// `exp(-(r / sigma)^2)` with `sigma = sigma_frac * R`.
    Gaussian { sigma_frac: f64 },
    /// `exp(-((r - c) / width)^2)` with `c = center_frac * R`, `width = width_frac * R`.
    Annulus { center_frac: f64, width_frac: f64 },
}

impl ProfileFamily {
    /// The shapes exercised by default mass sweeps.
    pub fn defaults() -> Vec<ProfileFamily> {
        vec![
            ProfileFamily::Uniform,
            ProfileFamily::Gaussian { sigma_frac: 0.05 },
            ProfileFamily::Gaussian { sigma_frac: 0.1 },
            ProfileFamily::Gaussian { sigma_frac: 0.25 },
            ProfileFamily::Annulus {
                center_frac: 0.5,
                width_frac: 0.1,
            },
        ]
    }

    fn shape(&self, r: f64, radius: f64) -> f64 {
        match *self {
            ProfileFamily::Uniform => 1.0,
            ProfileFamily::Gaussian { sigma_frac } => (-(r / (sigma_frac * radius)).powi(2)).exp(),
            ProfileFamily::Annulus {
                center_frac,
                width_frac,
            } => (-((r - center_frac * radius) / (width_frac * radius)).powi(2)).exp(),
        }
    }

    /// Whether ball averages of the shape are radially nonincreasing.
    pub fn has_decreasing_averages(&self) -> bool {
        !matches!(self, ProfileFamily::Annulus { .. })
    }

    /// Density profile with planar mass `mass` on `intervals` radial cells.
    pub fn profile(&self, radius: f64, mass: f64, intervals: usize) -> RadialProfile {
        let raw = RadialProfile::sample(radius, intervals, |r| self.shape(r, radius));
        let total = raw.planar_integral();
        let scale = if total > 0.0 { mass / total } else { 0.0 };
        RadialProfile {
            r: raw.r,
            values: raw.values.into_iter().map(|v| v * scale).collect(),
        }
    }
}

impl fmt::Display for ProfileFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ProfileFamily::Uniform => write!(f, "uniform"),
            ProfileFamily::Gaussian { sigma_frac } => write!(f, "gaussian{sigma_frac}"),
            ProfileFamily::Annulus {
                center_frac,
                width_frac,
            } => write!(f, "annulus{center_frac}_{width_frac}"),
        }
    }
}

impl FromStr for ProfileFamily {
    type Err = KsError;

    /// Parses `uniform`, `gaussian<sigma>`, `annulus` or `annulus<c>_<w>`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || KsError::InvalidArgument(format!("unknown profile family '{s}'"));
        let s = s.trim();
        if s == "uniform" {
            return Ok(ProfileFamily::Uniform);
        }
        if let Some(rest) = s.strip_prefix("gaussian") {
            let sigma_frac = if rest.is_empty() { 0.1 } else { rest.parse().map_err(|_| bad())? };
            if !(sigma_frac > 0.0) {
                return Err(bad());
            }
            return Ok(ProfileFamily::Gaussian { sigma_frac });
        }
        if let Some(rest) = s.strip_prefix("annulus") {
            if rest.is_empty() {
                return Ok(ProfileFamily::Annulus {
                    center_frac: 0.5,
                    width_frac: 0.1,
                });
            }
            let (c, w) = rest.split_once('_').ok_or_else(bad)?;
            let center_frac: f64 = c.parse().map_err(|_| bad())?;
            let width_frac: f64 = w.parse().map_err(|_| bad())?;
            if !(width_frac > 0.0) || !(0.0..=1.0).contains(&center_frac) {
                return Err(bad());
            }
            return Ok(ProfileFamily::Annulus {
                center_frac,
                width_frac,
            });
        }
        Err(bad())
    }
}

/// Cumulated initial datum for `family` with total mass exactly `mass`
/// (the boundary node carries `mass / 2 pi` to the last bit).
pub fn initial_w0(family: ProfileFamily, params: &Params, mass: f64, grid: &MassGrid) -> Result<Vec<f64>> {
    if !(mass >= 0.0 && mass.is_finite()) {
        return Err(KsError::InvalidArgument(format!("mass must be >= 0, got {mass}")));
    }
    let top = mass / (2.0 * PI);
    let n = grid.intervals;
    let mut w0 = match family {
        ProfileFamily::Uniform => grid.nodes.iter().map(|s| top * s / grid.length).collect(),
        _ => {
            let intervals = (4 * n).max(4096);
            let u0 = family.profile(params.radius, mass, intervals);
            let raw = profile_to_w0(&u0, grid)?;
            let scale = if raw[n] > 0.0 { top / raw[n] } else { 0.0 };
            raw.into_iter().map(|w| (w * scale).min(top)).collect::<Vec<f64>>()
        }
    };
    w0[0] = 0.0;
    w0[n] = top;
    Ok(w0)
}
