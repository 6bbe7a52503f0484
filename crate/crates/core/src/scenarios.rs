//! Named initial profiles and the reference scenario.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Field, Grid};
use crate::models::{BaseReaction, Convection, FluxModel, PenaltyKind, ReactionModel};
use crate::noise::NoiseSpec;
use crate::solver::SolverConfig;

/// Non-negative analytic initial values on the box `Π (0, L_c)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitialProfile {
    /// `Π sin(π x_c / L_c)`
    SineBump,
    /// `min(1, 3 Π sin(π x_c / L_c))`
    Plateau,
    /// `Π sin²(2π x_c / L_c)`, two bumps per axis.
    TwoBump,
}

impl InitialProfile {
    pub fn eval(&self, extent: &[f64], x: &[f64]) -> f64 {
        let prod = |k: f64, pow: i32| {
            x.iter()
                .zip(extent)
                .map(|(xc, l)| (k * PI * xc / l).sin().powi(pow))
                .product::<f64>()
        };
        match self {
            InitialProfile::SineBump => prod(1.0, 1).max(0.0),
            InitialProfile::Plateau => (3.0 * prod(1.0, 1)).clamp(0.0, 1.0),
            InitialProfile::TwoBump => prod(2.0, 2),
        }
    }

    pub fn field(&self, grid: &Grid) -> Field {
        let extent = grid.extent().to_vec();
        Field::from_fn(grid, |x| self.eval(&extent, x))
    }

    pub const ALL: [InitialProfile; 3] = [
        InitialProfile::SineBump,
        InitialProfile::Plateau,
        InitialProfile::TwoBump,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            InitialProfile::SineBump => "sine-bump",
            InitialProfile::Plateau => "plateau",
            InitialProfile::TwoBump => "two-bump",
        }
    }
}

impl fmt::Display for InitialProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for InitialProfile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        InitialProfile::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown initial profile '{s}'")))
    }
}

pub mod standard {
    pub const EXTENT: f64 = 1.0;
    pub const NX: usize = 64;
    pub const T: f64 = 0.5;
    pub const NT: usize = 500;
    pub const P: f64 = 3.0;
    pub const C: f64 = 0.5;
    pub const GAMMA: f64 = 2.0;
    pub const MODES: usize = 16;
    pub const AMP: f64 = 0.3;
}

/// Reference 1D run: `p = 3`, convection `0.5 λ`, 16 noise modes, sine-bump start.
pub fn standard_scenario(strength: f64) -> SolverConfig {
    use standard::*;
    let grid = Grid::build(1, &[EXTENT], NX, None, T, NT).expect("valid grid");
    let flux = FluxModel::p_laplace(1, P, Convection::along_x(C))
        .and_then(|f| f.with_eps(crate::models::DEFAULT_EPS))
        .expect("valid flux");
    let reaction = ReactionModel::new(BaseReaction::Zero, PenaltyKind::Linear, strength)
        .expect("valid reaction");
    let noise = NoiseSpec::new(MODES, GAMMA, AMP).expect("valid noise");
    let u0 = InitialProfile::SineBump.field(&grid);
    SolverConfig::new(grid, flux, reaction, noise, u0).expect("valid scenario")
}
