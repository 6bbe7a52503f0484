//! Penalty-measure diagnostics: densities `n pen(u_n-)`, weighted masses,
//! complementarity pairings and n-sweep reports.
//!
//! Time quadrature is the right-endpoint rule over levels `1..=nt`, matching
//! the implicit penalty of the scheme; level 0 never contributes.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{truncate, Field, Grid, SpaceTimeField};
use crate::models::PenaltyKind;
use crate::solver::TrajectoryRecord;

/// Space-time density of the approximate reflection measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasureGrid {
    grid: Grid,
    strength: f64,
    /// `density[j - 1][i]` for levels `j = 1..=nt`.
    density: Vec<Vec<f64>>,
    mass: f64,
}

impl MeasureGrid {
    /// Density `n pen(u-)` of the levels `1..` of `u`.
    pub fn from_levels(u: &SpaceTimeField, strength: f64, penalty: PenaltyKind) -> MeasureGrid {
        let grid = *u.grid();
        let density: Vec<Vec<f64>> = u
            .levels()
            .iter()
            .skip(1)
            .map(|f| {
                f.values()
                    .iter()
                    .map(|&v| strength * penalty.value((-v).max(0.0)))
                    .collect()
            })
            .collect();
        let mass = density.iter().flatten().sum::<f64>() * grid.dt() * grid.cell_volume();
        MeasureGrid {
            grid,
            strength,
            density,
            mass,
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn strength(&self) -> f64 {
        self.strength
    }

    pub fn mass(&self) -> f64 {
        self.mass
    }

    /// Density at level `j` (1-based).
    pub fn level(&self, j: usize) -> &[f64] {
        &self.density[j - 1]
    }

    pub fn levels(&self) -> usize {
        self.density.len()
    }

    fn cell(&self) -> f64 {
        self.grid.dt() * self.grid.cell_volume()
    }

    /// `Σ d_{j,i} test(t_j, x_i) dt h^d`.
    pub fn pair_with_fn(&self, test: impl Fn(f64, &[f64]) -> f64) -> f64 {
        let mut total = 0.0;
        for (k, row) in self.density.iter().enumerate() {
            let t = self.grid.time(k + 1);
            for (i, d) in row.iter().enumerate() {
                if *d != 0.0 {
                    let x = self.grid.position(i);
                    total += d * test(t, &x[..self.grid.dim()]);
                }
            }
        }
        total * self.cell()
    }

    /// Pairing with nodal space-time values (levels `0..=nt`).
    pub fn pair_with_field(&self, test: &SpaceTimeField) -> Result<f64> {
        self.grid.check_same_space(test.grid())?;
        if test.len() != self.density.len() + 1 {
            return Err(Error::GridMismatch(format!(
                "test has {} levels, measure needs {}",
                test.len(),
                self.density.len() + 1
            )));
        }
        let total: f64 = self
            .density
            .iter()
            .zip(test.levels().iter().skip(1))
            .map(|(row, f)| row.iter().zip(f.values()).map(|(d, w)| d * w).sum::<f64>())
            .sum();
        Ok(total * self.cell())
    }
}

/// `d_{j,i} = n pen((u_j(x_i))-)` for the levels after the initial one.
pub fn eta_density(rec: &TrajectoryRecord) -> MeasureGrid {
    MeasureGrid::from_levels(&rec.u, rec.strength, rec.penalty)
}

/// Nodal weight for localized masses.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightField(Field);

impl WeightField {
    /// `φ(x) = min(1, dist(x, ∂D))` on the box.
    pub fn phi(grid: &Grid) -> WeightField {
        let ext = grid.extent().to_vec();
        WeightField(Field::from_fn(grid, |x| {
            x.iter()
                .zip(&ext)
                .map(|(xc, l)| xc.min(l - xc))
                .fold(1.0, f64::min)
        }))
    }

    pub fn from_field(f: Field) -> WeightField {
        WeightField(f)
    }

    pub fn field(&self) -> &Field {
        &self.0
    }
}

/// `Σ d_{j,i} w(x_i) dt h^d`.
pub fn weighted_mass(m: &MeasureGrid, w: &WeightField) -> Result<f64> {
    m.grid.check_same_space(w.0.grid())?;
    let total: f64 = m
        .density
        .iter()
        .map(|row| {
            row.iter()
                .zip(w.0.values())
                .map(|(d, w)| d * w)
                .sum::<f64>()
        })
        .sum();
    Ok(total * m.cell())
}

fn check_coupled(a: &TrajectoryRecord, b_grid: &Grid, b_levels: usize) -> Result<()> {
    a.grid().check_same_space(b_grid)?;
    if a.u.len() != b_levels + 1 || a.grid().dt() != b_grid.dt() {
        return Err(Error::GridMismatch("time grids differ".into()));
    }
    Ok(())
}

/// `∫ T_K((u_m)+) dη_n`, with `m <= n`.
pub fn complementarity(rec_m: &TrajectoryRecord, meas_n: &MeasureGrid, k: f64) -> Result<f64> {
    check_coupled(rec_m, &meas_n.grid, meas_n.levels())?;
    if rec_m.strength > meas_n.strength {
        return Err(Error::invalid(format!(
            "complementarity needs m <= n, got m = {} > n = {}",
            rec_m.strength, meas_n.strength
        )));
    }
    let total: f64 = meas_n
        .density
        .iter()
        .zip(rec_m.u.levels().iter().skip(1))
        .map(|(row, u)| {
            row.iter()
                .zip(u.values())
                .map(|(d, v)| d * truncate(v.max(0.0), k))
                .sum::<f64>()
        })
        .sum();
    Ok(total * meas_n.cell())
}

/// `max_{j,i} (u_m)+ (u_n)-` over all levels of two coupled runs.
pub fn support_overlap(rec_m: &TrajectoryRecord, rec_n: &TrajectoryRecord) -> Result<f64> {
    check_coupled(rec_m, rec_n.grid(), rec_n.u.len() - 1)?;
    Ok(rec_m
        .u
        .levels()
        .iter()
        .zip(rec_n.u.levels())
        .flat_map(|(a, b)| {
            a.values()
                .iter()
                .zip(b.values())
                .map(|(x, y)| x.max(0.0) * (-y).max(0.0))
        })
        .fold(0.0, f64::max))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub n: f64,
    pub neg_l2: f64,
    pub sqrt_n_neg_l2: f64,
    pub mass: f64,
    pub phi_mass: f64,
    pub complementarity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    /// Least-squares slope of `log ‖u_n-‖` against `log n`, when defined.
    pub slope: Option<f64>,
}

pub const SWEEP_COLUMNS: [&str; 7] = [
    "n",
    "neg_l2",
    "sqrt_n_neg_l2",
    "mass",
    "phi_mass",
    "complementarity",
    "slope",
];

/// One row per record, ordered by `n`; complementarity is taken against the
/// smallest `n` with truncation level `k`.
pub fn sweep_report(records: &[TrajectoryRecord], k: f64) -> Result<SweepReport> {
    let Some(first) = records.first() else {
        return Err(Error::invalid("empty sweep"));
    };
    for r in records {
        check_coupled(first, r.grid(), r.u.len() - 1)?;
        if r.seed != first.seed || r.penalty != first.penalty || r.p != first.p {
            return Err(Error::invalid(
                "sweep records differ in more than the penalty strength",
            ));
        }
    }
    let mut order: Vec<&TrajectoryRecord> = records.iter().collect();
    order.sort_by(|a, b| a.strength.total_cmp(&b.strength));
    let base = order[0];
    let phi = WeightField::phi(first.grid());
    let rows = order
        .iter()
        .map(|r| {
            let m = eta_density(r);
            let neg = r.neg_l2_qt();
            Ok(SweepRow {
                n: r.strength,
                neg_l2: neg,
                sqrt_n_neg_l2: r.strength.sqrt() * neg,
                mass: m.mass(),
                phi_mass: weighted_mass(&m, &phi)?,
                complementarity: complementarity(base, &m, k)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let points: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.n > 0.0 && r.neg_l2 > 0.0)
        .map(|r| (r.n.ln(), r.neg_l2.ln()))
        .collect();
    Ok(SweepReport {
        slope: loglog_slope(&points),
        rows,
    })
}

/// Least-squares slope; `None` with fewer than two distinct abscissae.
pub fn loglog_slope(points: &[(f64, f64)]) -> Option<f64> {
    if points.len() < 2 {
        return None;
    }
    let len = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / len;
    let my = points.iter().map(|p| p.1).sum::<f64>() / len;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    Some(sxy / sxx)
}

impl SweepReport {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(SWEEP_COLUMNS)?;
        let num = |v: f64| format!("{v:e}");
        let slope = self.slope.map(num).unwrap_or_default();
        for r in &self.rows {
            let mut row = [
                r.n,
                r.neg_l2,
                r.sqrt_n_neg_l2,
                r.mass,
                r.phi_mass,
                r.complementarity,
            ]
            .map(num)
            .to_vec();
            row.push(slope.clone());
            w.write_record(row)?;
        }
        w.flush()?;
        Ok(())
    }
}
