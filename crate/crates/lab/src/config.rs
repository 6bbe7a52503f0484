//! Experiment configuration: TOML text with one table per block.
//!
//! Every key is optional; omitted keys take the standard-scenario values.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use reflect_core::capacity::{CapacityProblem, CellRange};
use reflect_core::grid::Grid;
use reflect_core::models::{
    BaseReaction, Convection, FluxModel, PenaltyKind, ReactionModel, DEFAULT_EPS,
};
use reflect_core::noise::NoiseSpec;
use reflect_core::scenarios::{standard, InitialProfile};
use reflect_core::solver::{SolverConfig, DEFAULT_NEWTON_MAX_ITERS, DEFAULT_NEWTON_TOL};

/// All problems found in a configuration.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("invalid configuration:\n  - {}", .errors.join("\n  - "))]
pub struct ConfigError {
    pub errors: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridBlock {
    pub dim: usize,
    pub extent: Vec<f64>,
    pub nx: usize,
    pub ny: Option<usize>,
    pub t_final: f64,
    pub nt: usize,
}

impl Default for GridBlock {
    fn default() -> Self {
        GridBlock {
            dim: 1,
            extent: vec![standard::EXTENT],
            nx: standard::NX,
            ny: None,
            t_final: standard::T,
            nt: standard::NT,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReactionChoice {
    Zero,
    Linear,
    Power,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PenaltyChoice {
    Linear,
    Power,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelBlock {
    pub p: f64,
    /// Amplitude `c` of the convection `c λ e_x`.
    pub convection: f64,
    pub eps: f64,
    pub reaction: ReactionChoice,
    /// `slope` for linear, `coef` for power reactions.
    pub reaction_slope: f64,
    pub reaction_pos_slope: f64,
    pub reaction_exponent: f64,
    pub penalty: PenaltyChoice,
    /// Exponent of the power penalty; defaults to `p - 1`.
    pub penalty_exponent: Option<f64>,
    /// Penalty strength for `single` and `ensemble`.
    pub strength: f64,
}

impl Default for ModelBlock {
    fn default() -> Self {
        ModelBlock {
            p: standard::P,
            convection: standard::C,
            eps: DEFAULT_EPS,
            reaction: ReactionChoice::Zero,
            reaction_slope: 0.0,
            reaction_pos_slope: 0.0,
            reaction_exponent: 2.0,
            penalty: PenaltyChoice::Linear,
            penalty_exponent: None,
            strength: 100.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseBlock {
    pub modes: usize,
    pub gamma: f64,
    pub amp: f64,
    pub seed: u64,
}

impl Default for NoiseBlock {
    fn default() -> Self {
        NoiseBlock {
            modes: standard::MODES,
            gamma: standard::GAMMA,
            amp: standard::AMP,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepBlock {
    pub n: Vec<f64>,
    /// Truncation level `K` for complementarity.
    pub truncation: f64,
}

impl Default for SweepBlock {
    fn default() -> Self {
        SweepBlock {
            n: vec![1.0, 10.0, 100.0, 1e3, 1e4],
            truncation: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnsembleBlock {
    pub num_paths: usize,
    pub base_seed: u64,
}

impl Default for EnsembleBlock {
    fn default() -> Self {
        EnsembleBlock {
            num_paths: 10,
            base_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitialBlock {
    pub profile: InitialProfile,
}

impl Default for InitialBlock {
    fn default() -> Self {
        InitialBlock {
            profile: InitialProfile::SineBump,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverBlock {
    pub newton_tol: f64,
    pub newton_max_iters: usize,
}

impl Default for SolverBlock {
    fn default() -> Self {
        SolverBlock {
            newton_tol: DEFAULT_NEWTON_TOL,
            newton_max_iters: DEFAULT_NEWTON_MAX_ITERS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CapacityBlock {
    pub dim: usize,
    pub nx: usize,
    pub nt: usize,
    pub t_final: f64,
    /// Target set; empty means the central cell.
    pub cells: Vec<CellRange>,
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for CapacityBlock {
    fn default() -> Self {
        CapacityBlock {
            dim: 1,
            nx: 8,
            nt: 8,
            t_final: 1.0,
            cells: Vec::new(),
            max_iters: reflect_core::capacity::DEFAULT_MAX_ITERS,
            tol: reflect_core::capacity::DEFAULT_TOL,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputBlock {
    pub dir: PathBuf,
}

impl Default for OutputBlock {
    fn default() -> Self {
        OutputBlock {
            dir: PathBuf::from("out"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: String,
    pub grid: GridBlock,
    pub model: ModelBlock,
    pub noise: NoiseBlock,
    pub sweep: SweepBlock,
    pub ensemble: EnsembleBlock,
    pub initial: InitialBlock,
    pub solver: SolverBlock,
    pub capacity: CapacityBlock,
    pub output: OutputBlock,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            scenario: "standard".into(),
            grid: GridBlock::default(),
            model: ModelBlock::default(),
            noise: NoiseBlock::default(),
            sweep: SweepBlock::default(),
            ensemble: EnsembleBlock::default(),
            initial: InitialBlock::default(),
            solver: SolverBlock::default(),
            capacity: CapacityBlock::default(),
            output: OutputBlock::default(),
        }
    }
}

const TOP_KEYS: &[&str] = &[
    "scenario", "grid", "model", "noise", "sweep", "ensemble", "initial", "solver", "capacity",
    "output",
];

fn block_keys(block: &str) -> &'static [&'static str] {
    match block {
        "grid" => &["dim", "extent", "nx", "ny", "t_final", "nt"],
        "model" => &[
            "p",
            "convection",
            "eps",
            "reaction",
            "reaction_slope",
            "reaction_pos_slope",
            "reaction_exponent",
            "penalty",
            "penalty_exponent",
            "strength",
        ],
        "noise" => &["modes", "gamma", "amp", "seed"],
        "sweep" => &["n", "truncation"],
        "ensemble" => &["num_paths", "base_seed"],
        "initial" => &["profile"],
        "solver" => &["newton_tol", "newton_max_iters"],
        "capacity" => &["dim", "nx", "nt", "t_final", "cells", "max_iters", "tol"],
        "output" => &["dir"],
        _ => &[],
    }
}

fn unknown_keys(table: &toml::Table) -> Vec<String> {
    let mut errors = Vec::new();
    for (key, value) in table {
        if !TOP_KEYS.contains(&key.as_str()) {
            errors.push(format!("unknown key '{key}'"));
            continue;
        }
        if let toml::Value::Table(inner) = value {
            let known = block_keys(key);
            for k in inner.keys() {
                if !known.contains(&k.as_str()) {
                    errors.push(format!("unknown key '{key}.{k}'"));
                }
            }
        }
    }
    errors
}

/// Parses and validates configuration text.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let table: toml::Table = text.parse().map_err(|e: toml::de::Error| ConfigError {
        errors: vec![format!("syntax: {}", e.message())],
    })?;
    let mut errors = unknown_keys(&table);
    if !errors.is_empty() {
        return Err(ConfigError { errors });
    }
    let cfg: ExperimentConfig =
        toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError {
                errors: vec![e.message().to_string()],
            })?;
    errors.extend(cfg.problems());
    if errors.is_empty() {
        Ok(cfg)
    } else {
        Err(ConfigError { errors })
    }
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError {
        errors: vec![format!("cannot read {}: {e}", path.display())],
    })?;
    parse_config(&text)
}

impl ExperimentConfig {
    /// Every constraint violation, not only the first.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        fn check(out: &mut Vec<String>, ok: bool, msg: String) {
            if !ok {
                out.push(msg);
            }
        }
        let g = &self.grid;
        let d = g.dim;
        check(
            &mut out,
            d == 1 || d == 2,
            format!("grid.dim must be 1 or 2, got {d}"),
        );
        check(
            &mut out,
            g.extent.len() == d,
            format!("grid.extent needs {d} entries, got {}", g.extent.len()),
        );
        check(
            &mut out,
            g.ny.is_some() == (d == 2),
            "grid.ny is required in 2D and not allowed in 1D".into(),
        );
        if let Err(e) = self.grid() {
            out.push(format!("grid: {e}"));
        }

        let m = &self.model;
        let critical = 2.0 * d as f64 / (d as f64 + 1.0);
        check(
            &mut out,
            m.p > critical && m.p.is_finite(),
            format!("model.p = {} is below 2d/(d+1) = {critical:.4}", m.p),
        );
        check(
            &mut out,
            m.eps >= 0.0 && m.eps.is_finite(),
            "model.eps must be >= 0".into(),
        );
        check(
            &mut out,
            m.convection.is_finite(),
            "model.convection must be finite".into(),
        );
        check(
            &mut out,
            m.strength >= 0.0 && m.strength.is_finite(),
            "model.strength must be >= 0".into(),
        );
        if let Some(q) = m.penalty_exponent {
            check(
                &mut out,
                q > 0.0 && q <= 1.0,
                format!("model.penalty_exponent must lie in (0, 1], got {q}"),
            );
        }
        if m.penalty == PenaltyChoice::Power && m.penalty_exponent.is_none() {
            check(
                &mut out,
                m.p < 2.0,
                "the default power-penalty exponent p - 1 needs p < 2; set model.penalty_exponent"
                    .into(),
            );
        }
        if m.reaction == ReactionChoice::Power {
            check(
                &mut out,
                m.reaction_slope >= 0.0 && m.reaction_exponent >= 1.0,
                "power reaction needs coefficient >= 0 and exponent >= 1".into(),
            );
        }

        let n = &self.noise;
        if let Err(e) = NoiseSpec::new(n.modes, n.gamma, n.amp) {
            out.push(format!("noise: {e}"));
        }

        check(
            &mut out,
            !self.sweep.n.is_empty(),
            "sweep.n must not be empty".into(),
        );
        check(
            &mut out,
            self.sweep.n.iter().all(|v| *v >= 0.0 && v.is_finite()),
            "sweep.n entries must be >= 0".into(),
        );
        check(
            &mut out,
            self.sweep.truncation > 0.0,
            "sweep.truncation must be positive".into(),
        );
        check(
            &mut out,
            self.ensemble.num_paths >= 1,
            "ensemble.num_paths must be at least 1".into(),
        );
        check(
            &mut out,
            self.solver.newton_tol > 0.0 && self.solver.newton_max_iters > 0,
            "solver.newton_tol and solver.newton_max_iters must be positive".into(),
        );
        if let Err(e) = self.capacity_problem() {
            out.push(format!("capacity: {e}"));
        }
        if out.is_empty() {
            if let Err(e) = self.solver_config(m.strength) {
                out.push(format!("model: {e}"));
            }
        }
        out
    }

    pub fn grid(&self) -> reflect_core::Result<Grid> {
        let g = &self.grid;
        Grid::build(g.dim, &g.extent, g.nx, g.ny, g.t_final, g.nt)
    }

    pub fn noise_spec(&self) -> reflect_core::Result<NoiseSpec> {
        NoiseSpec::new(self.noise.modes, self.noise.gamma, self.noise.amp)
    }

    pub fn penalty_kind(&self) -> PenaltyKind {
        match self.model.penalty {
            PenaltyChoice::Linear => PenaltyKind::Linear,
            PenaltyChoice::Power => PenaltyKind::Power {
                exponent: self.model.penalty_exponent.unwrap_or(self.model.p - 1.0),
            },
        }
    }

    pub fn base_reaction(&self) -> BaseReaction {
        let m = &self.model;
        match m.reaction {
            ReactionChoice::Zero => BaseReaction::Zero,
            ReactionChoice::Linear => BaseReaction::Linear {
                slope: m.reaction_slope,
                pos_slope: m.reaction_pos_slope,
            },
            ReactionChoice::Power => BaseReaction::Power {
                coef: m.reaction_slope,
                exponent: m.reaction_exponent,
            },
        }
    }

    /// Solver configuration with penalty strength `n`.
    pub fn solver_config(&self, n: f64) -> reflect_core::Result<SolverConfig> {
        let grid = self.grid()?;
        let flux = FluxModel::p_laplace(
            grid.dim(),
            self.model.p,
            Convection::along_x(self.model.convection),
        )?
        .with_eps(self.model.eps)?;
        let reaction = ReactionModel::new(self.base_reaction(), self.penalty_kind(), n)?;
        let u0 = self.initial.profile.field(&grid);
        let mut cfg = SolverConfig::new(grid, flux, reaction, self.noise_spec()?, u0)?;
        cfg.newton_tol = self.solver.newton_tol;
        cfg.newton_max_iters = self.solver.newton_max_iters;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn capacity_grid(&self) -> reflect_core::Result<Grid> {
        let c = &self.capacity;
        let ny = (c.dim == 2).then_some(c.nx);
        Grid::build(c.dim, &vec![1.0; c.dim], c.nx, ny, c.t_final, c.nt)
    }

    pub fn capacity_problem(&self) -> reflect_core::Result<CapacityProblem> {
        let grid = self.capacity_grid()?;
        let mut prob = if self.capacity.cells.is_empty() {
            CapacityProblem::central_cell(grid)?
        } else {
            CapacityProblem::from_ranges(grid, &self.capacity.cells)?
        };
        prob.max_iters = self.capacity.max_iters;
        prob.tol = self.capacity.tol;
        Ok(prob)
    }

    /// Replaces the path seed and the ensemble base seed.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.noise.seed = seed;
        self.ensemble.base_seed = seed;
        self
    }

    /// Hash of everything that affects results (not the label or output directory).
    pub fn fingerprint(&self) -> String {
        let mut semantic = self.clone();
        semantic.scenario.clear();
        semantic.output = OutputBlock::default();
        let bytes = serde_json::to_vec(&semantic).expect("config serializes");
        hex::encode(&Sha256::digest(bytes)[..8])
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_is_the_standard_scenario() {
        let cfg = parse_config("").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        assert_eq!(cfg.grid.nx, 64);
        assert_eq!(
            cfg.fingerprint(),
            parse_config("scenario = \"other\"").unwrap().fingerprint()
        );
    }

    #[test]
    fn round_trip_through_toml() {
        let cfg = ExperimentConfig::default();
        assert_eq!(parse_config(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn collects_every_error() {
        let err = parse_config("[noise]\ngamma = 0.9\n[model]\np = 1.0\n").unwrap_err();
        assert!(
            err.errors
                .iter()
                .any(|e| e.contains("trace-class violation")),
            "{err}"
        );
        assert!(
            err.errors.iter().any(|e| e.contains("below 2d/(d+1)")),
            "{err}"
        );
        assert!(err.errors.len() >= 2);
    }

    #[test]
    fn unknown_keys_are_listed() {
        let err = parse_config("colour = 1\n[grid]\nnz = 3\nnq = 4\n").unwrap_err();
        assert_eq!(err.errors.len(), 3, "{err}");
    }

    #[test]
    fn critical_exponent_in_two_dimensions() {
        let text = "[grid]\ndim = 2\nextent = [1.0, 1.0]\nnx = 8\nny = 8\n[model]\np = 1.2\n";
        let err = parse_config(text).unwrap_err();
        assert!(err.errors.iter().any(|e| e.contains("1.3333")), "{err}");
        assert!(parse_config(&text.replace("1.2", "1.4")).is_ok());
    }

    #[test]
    fn fingerprint_tracks_semantic_fields() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        b.output.dir = "elsewhere".into();
        assert_eq!(a.fingerprint(), b.fingerprint());
        b.noise.amp = 0.31;
        assert_ne!(a.fingerprint(), b.fingerprint());
        assert_ne!(a.fingerprint(), a.clone().with_seed(5).fingerprint());
    }
}
