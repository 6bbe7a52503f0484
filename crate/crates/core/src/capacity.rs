//! Discrete parabolic 2-capacity of cell unions in space-time.
//!
//! Fields live on the nodes `(j, i)`, `j = 0..=nt`, `i` an interior space node,
//! piecewise linear in time. Cell `(k, i)` is the slab `(t_k, t_{k+1})` times
//! the dual cell of node `i`, so `v >= 1` on it means `v_{k,i}, v_{k+1,i} >= 1`.
//!
//! `‖v‖_W = N1 + N2` with
//! `N1² = Σ_j c_j dt (v_j, L v_j)_h` (trapezoid weights `c_j`) and
//! `N2² = Σ_k dt (w_k, L⁻¹ w_k)_h`, `w_k = (v_{k+1} - v_k) / dt`,
//! where `L` is the Dirichlet five-point (three-point in 1D) Laplacian.
//!
//! The estimator majorizes `N1 + N2` by `½(N1²/η1 + η1 + N2²/η2 + η2)` and
//! alternates weight updates with projected FISTA on the quadratic.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Field, Grid, SpaceTimeField};
use crate::linalg::SparseSpd;

pub const MAX_SPACE_NODES: usize = 32;
pub const MAX_TIME_STEPS: usize = 32;

/// Inclusive index ranges over time slabs and space nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellRange {
    pub t: (usize, usize),
    pub x: (usize, usize),
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y: Option<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapacityProblem {
    grid: Grid,
    /// `(k, node)` pairs.
    cells: BTreeSet<(usize, usize)>,
    pub max_iters: usize,
    pub tol: f64,
}

pub const DEFAULT_MAX_ITERS: usize = 20_000;
pub const DEFAULT_TOL: f64 = 1e-6;
/// Window for the stalling test.
pub const STALL_WINDOW: usize = 50;

impl CapacityProblem {
    pub fn new(
        grid: Grid,
        cells: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<CapacityProblem> {
        if grid.nx() > MAX_SPACE_NODES
            || (grid.dim() == 2 && grid.ny() > MAX_SPACE_NODES)
            || grid.nt() > MAX_TIME_STEPS
        {
            return Err(Error::invalid(format!(
                "capacity grids are limited to {MAX_SPACE_NODES} space nodes per axis and {MAX_TIME_STEPS} steps"
            )));
        }
        if grid.nt() == 0 {
            return Err(Error::invalid("capacity grid needs at least one time step"));
        }
        Self::unchecked(grid, cells)
    }

    fn unchecked(
        grid: Grid,
        cells: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<CapacityProblem> {
        let cells: BTreeSet<_> = cells.into_iter().collect();
        if let Some(&(k, i)) = cells
            .iter()
            .find(|(k, i)| *k >= grid.nt() || *i >= grid.len())
        {
            return Err(Error::invalid(format!("cell ({k}, {i}) outside the grid")));
        }
        Ok(CapacityProblem {
            grid,
            cells,
            max_iters: DEFAULT_MAX_ITERS,
            tol: DEFAULT_TOL,
        })
    }

    pub fn empty(grid: Grid) -> Result<CapacityProblem> {
        Self::new(grid, [])
    }

    pub fn from_ranges(grid: Grid, ranges: &[CellRange]) -> Result<CapacityProblem> {
        let mut cells = Vec::new();
        for r in ranges {
            let ys = match (grid.dim(), r.y) {
                (1, None) => (0, 0),
                (2, Some(y)) => y,
                _ => {
                    return Err(Error::invalid(
                        "cell range dimension does not match the grid",
                    ))
                }
            };
            if r.t.0 > r.t.1 || r.x.0 > r.x.1 || ys.0 > ys.1 {
                return Err(Error::invalid("cell range bounds are reversed"));
            }
            if r.t.1 >= grid.nt() || r.x.1 >= grid.nx() || ys.1 >= grid.ny() {
                return Err(Error::invalid("cell range outside the grid"));
            }
            for k in r.t.0..=r.t.1 {
                for j in ys.0..=ys.1 {
                    for i in r.x.0..=r.x.1 {
                        cells.push((k, grid.index(i, j)));
                    }
                }
            }
        }
        Self::new(grid, cells)
    }

    /// The single cell at `(nt/2, nx/2[, ny/2])`.
    pub fn central_cell(grid: Grid) -> Result<CapacityProblem> {
        let node = grid.index(
            grid.nx() / 2,
            if grid.dim() == 2 { grid.ny() / 2 } else { 0 },
        );
        Self::new(grid, [(grid.nt() / 2, node)])
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn cells(&self) -> &BTreeSet<(usize, usize)> {
        &self.cells
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn union(&self, other: &CapacityProblem) -> Result<CapacityProblem> {
        self.check_grid(other)?;
        let mut out = self.clone();
        out.cells.extend(other.cells.iter().copied());
        Ok(out)
    }

    pub fn is_subset(&self, other: &CapacityProblem) -> bool {
        self.cells.is_subset(&other.cells)
    }

    fn check_grid(&self, other: &CapacityProblem) -> Result<()> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch(
                "capacity problems on different grids".into(),
            ));
        }
        Ok(())
    }

    /// `λ(E) = #cells dt h^d`
    pub fn lebesgue_measure(&self) -> f64 {
        self.cells.len() as f64 * self.grid.dt() * self.grid.cell_volume()
    }

    /// Same set on the cylinder `(-T, 2T)`.
    pub fn reflected(&self) -> Result<CapacityProblem> {
        let nt = self.grid.nt();
        let grid = self.grid.with_time(3.0 * self.grid.t_final(), 3 * nt)?;
        let mut out = Self::unchecked(grid, self.cells.iter().map(|&(k, i)| (k + nt, i)))?;
        out.max_iters = self.max_iters;
        out.tol = self.tol;
        Ok(out)
    }

    /// Nodal lower bound `1_E`, level-major.
    fn lower_bound(&self) -> Vec<f64> {
        let m = self.grid.len();
        let mut lo = vec![0.0; (self.grid.nt() + 1) * m];
        for &(k, i) in &self.cells {
            lo[k * m + i] = 1.0;
            lo[(k + 1) * m + i] = 1.0;
        }
        lo
    }
}

/// Evaluates the two parts of `‖·‖_W` and their quadratic forms.
pub struct WNorm {
    grid: Grid,
    lap: SparseSpd,
    lap_values: Vec<f64>,
}

impl WNorm {
    pub fn new(grid: &Grid) -> Result<WNorm> {
        let m = grid.len();
        let mut pairs = Vec::new();
        for a in 0..m {
            for axis in 0..grid.dim() {
                if let Some(b) = grid.neighbour(a, axis, 1) {
                    pairs.push((a, b));
                }
            }
        }
        let mut lap = SparseSpd::from_entries(m, pairs.iter().copied());
        let mut vals = lap.zero_values();
        let spacing = grid.spacing();
        for a in 0..m {
            for axis in 0..grid.dim() {
                let w = 1.0 / (spacing[axis] * spacing[axis]);
                vals[lap.index(a, a)] += 2.0 * w;
                if let Some(b) = grid.neighbour(a, axis, 1) {
                    vals[lap.index(a, b)] -= w;
                    vals[lap.index(b, a)] -= w;
                }
            }
        }
        lap.factorize(&vals)?;
        Ok(WNorm {
            grid: *grid,
            lap,
            lap_values: vals,
        })
    }

    fn m(&self) -> usize {
        self.grid.len()
    }

    fn weight(&self, j: usize) -> f64 {
        if j == 0 || j == self.grid.nt() {
            0.5
        } else {
            1.0
        }
    }

    /// `(A1 v, A2 v)` with `v·A1 v = N1²` and `v·A2 v = N2²`.
    fn apply(&self, v: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let m = self.m();
        let nt = self.grid.nt();
        let dt = self.grid.dt();
        let vol = self.grid.cell_volume();
        let mut a1 = vec![0.0; v.len()];
        let mut a2 = vec![0.0; v.len()];
        for j in 0..=nt {
            let lv = self.lap.apply(&self.lap_values, &v[j * m..(j + 1) * m]);
            let c = self.weight(j) * dt * vol;
            for (o, x) in a1[j * m..(j + 1) * m].iter_mut().zip(&lv) {
                *o = c * x;
            }
        }
        for k in 0..nt {
            let delta: Vec<f64> = (0..m).map(|i| v[(k + 1) * m + i] - v[k * m + i]).collect();
            let g = self.lap.solve_factored(&delta)?;
            for i in 0..m {
                let x = vol / dt * g[i];
                a2[(k + 1) * m + i] += x;
                a2[k * m + i] -= x;
            }
        }
        Ok((a1, a2))
    }

    /// `(N1, N2)` of `v`.
    pub fn parts(&self, v: &[f64]) -> Result<(f64, f64)> {
        let (a1, a2) = self.apply(v)?;
        Ok((dot(v, &a1).max(0.0).sqrt(), dot(v, &a2).max(0.0).sqrt()))
    }

    pub fn norm(&self, v: &[f64]) -> Result<f64> {
        let (n1, n2) = self.parts(v)?;
        Ok(n1 + n2)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapacityEstimate {
    pub value: f64,
    pub n1: f64,
    pub n2: f64,
    pub minimizer: SpaceTimeField,
    pub iterations: usize,
    pub converged: bool,
}

fn to_field(grid: &Grid, v: &[f64]) -> Result<SpaceTimeField> {
    let m = grid.len();
    let levels = v
        .chunks(m)
        .enumerate()
        .map(|(j, c)| Field::from_values(grid, c.to_vec()).map(|f| f.at_time(j)))
        .collect::<Result<Vec<_>>>()?;
    SpaceTimeField::new(grid, levels)
}

/// Relative floor on the majorizer weights.
const WEIGHT_FLOOR: f64 = 1e-3;
/// FISTA iterations between weight updates.
const REWEIGHT_EVERY: usize = 25;

/// Feasible upper estimate of the discrete capacity.
pub fn estimate_capacity(prob: &CapacityProblem) -> Result<CapacityEstimate> {
    let grid = prob.grid;
    let lo = prob.lower_bound();
    if prob.is_empty() {
        return Ok(CapacityEstimate {
            value: 0.0,
            n1: 0.0,
            n2: 0.0,
            minimizer: to_field(&grid, &lo)?,
            iterations: 0,
            converged: true,
        });
    }
    let w = WNorm::new(&grid)?;
    let project = |v: &mut [f64]| {
        for (x, l) in v.iter_mut().zip(&lo) {
            *x = x.max(*l);
        }
    };

    let mut v = lo.clone();
    let (mut n1, mut n2) = w.parts(&v)?;
    let mut best = (n1 + n2, v.clone(), n1, n2);
    let mut history = vec![best.0];
    let mut iterations = 0;
    let mut converged = false;

    'outer: while iterations < prob.max_iters {
        let floor = WEIGHT_FLOOR * (n1 + n2);
        let (e1, e2) = (n1.max(floor), n2.max(floor));
        let lip = 1.05 * lipschitz(&w, e1, e2, v.len())?;
        let mut y = v.clone();
        let mut t = 1.0f64;
        for _ in 0..REWEIGHT_EVERY {
            let (a1, a2) = w.apply(&y)?;
            let mut next: Vec<f64> = y
                .iter()
                .enumerate()
                .map(|(i, yi)| yi - (a1[i] / e1 + a2[i] / e2) / lip)
                .collect();
            project(&mut next);
            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            let beta = (t - 1.0) / t_next;
            y = next
                .iter()
                .zip(&v)
                .map(|(a, b)| a + beta * (a - b))
                .collect();
            project(&mut y);
            v = next;
            t = t_next;
            iterations += 1;

            let (p1, p2) = w.parts(&v)?;
            n1 = p1;
            n2 = p2;
            let value = n1 + n2;
            if value < best.0 {
                best = (value, v.clone(), n1, n2);
            }
            history.push(best.0);
            if history.len() > STALL_WINDOW {
                let old = history[history.len() - 1 - STALL_WINDOW];
                if old - best.0 <= prob.tol * best.0 {
                    converged = true;
                    break 'outer;
                }
            }
            if iterations >= prob.max_iters {
                break 'outer;
            }
        }
    }

    let (value, v, n1, n2) = best;
    Ok(CapacityEstimate {
        value,
        n1,
        n2,
        minimizer: to_field(&grid, &v)?,
        iterations,
        converged,
    })
}

/// Largest eigenvalue of `A1/e1 + A2/e2` by power iteration.
fn lipschitz(w: &WNorm, e1: f64, e2: f64, len: usize) -> Result<f64> {
    let mut x: Vec<f64> = (0..len)
        .map(|i| 1.0 + ((i * 7919) % 13) as f64 / 13.0)
        .collect();
    let mut lambda = 0.0;
    for _ in 0..60 {
        let norm = dot(&x, &x).sqrt();
        x.iter_mut().for_each(|a| *a /= norm);
        let (a1, a2) = w.apply(&x)?;
        let y: Vec<f64> = a1.iter().zip(&a2).map(|(a, b)| a / e1 + b / e2).collect();
        lambda = dot(&x, &y);
        x = y;
    }
    Ok(lambda)
}

/// `λ(E)^{1/2} <= estimate` up to rounding.
pub fn lebesgue_lower_bound_check(prob: &CapacityProblem, estimate: f64) -> bool {
    prob.lebesgue_measure().sqrt() <= estimate + 1e-12 * estimate.abs().max(1.0)
}

/// Capacity of the same set on the cylinder `(-T, 2T)`.
pub fn reflected_capacity(prob: &CapacityProblem) -> Result<CapacityEstimate> {
    estimate_capacity(&prob.reflected()?)
}

/// Even reflection `v(-t)`, `v(2T - t)` of a base field onto `(-T, 2T)`.
pub fn reflect_field(prob: &CapacityProblem, v: &SpaceTimeField) -> Result<SpaceTimeField> {
    let ext = prob.reflected()?;
    let nt = prob.grid.nt();
    let levels = (0..=3 * nt)
        .map(|j| {
            let src = if j < nt {
                nt - j
            } else if j <= 2 * nt {
                j - nt
            } else {
                3 * nt - j
            };
            Field::from_values(&ext.grid, v.level(src).values().to_vec()).map(|f| f.at_time(j))
        })
        .collect::<Result<Vec<_>>>()?;
    SpaceTimeField::new(&ext.grid, levels)
}

/// Norm of `v` on the problem's grid and whether it satisfies `v >= 1_E`.
pub fn evaluate(prob: &CapacityProblem, v: &SpaceTimeField) -> Result<(f64, bool)> {
    prob.grid.check_same_space(v.grid())?;
    if v.len() != prob.grid.nt() + 1 {
        return Err(Error::GridMismatch(
            "field has the wrong number of levels".into(),
        ));
    }
    let flat: Vec<f64> = v
        .levels()
        .iter()
        .flat_map(|f| f.values().iter().copied())
        .collect();
    let feasible = flat.iter().zip(prob.lower_bound()).all(|(x, l)| *x >= l);
    Ok((WNorm::new(&prob.grid)?.norm(&flat)?, feasible))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SandwichReport {
    pub cells: usize,
    pub lebesgue_sqrt: f64,
    pub estimate: f64,
    pub reflected: f64,
    /// `reflected / estimate`, 1 for the empty set.
    pub ratio: f64,
    pub reflected_minimizer_norm: f64,
    pub reflected_minimizer_feasible: bool,
    pub lebesgue_ok: bool,
    pub converged: bool,
}

/// Runs both estimators and the minimizer reflection.
pub fn sandwich_report(prob: &CapacityProblem) -> Result<SandwichReport> {
    let base = estimate_capacity(prob)?;
    let ext = reflected_capacity(prob)?;
    let hat = reflect_field(prob, &base.minimizer)?;
    let (hat_norm, feasible) = evaluate(&prob.reflected()?, &hat)?;
    Ok(SandwichReport {
        cells: prob.cells.len(),
        lebesgue_sqrt: prob.lebesgue_measure().sqrt(),
        estimate: base.value,
        reflected: ext.value,
        ratio: if base.value > 0.0 {
            ext.value / base.value
        } else {
            1.0
        },
        reflected_minimizer_norm: hat_norm,
        reflected_minimizer_feasible: feasible,
        lebesgue_ok: lebesgue_lower_bound_check(prob, base.value),
        converged: base.converged && ext.converged,
    })
}
