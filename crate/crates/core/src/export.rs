//! CSV layouts for trajectory records. Time-major, node-minor.

use std::io::Write;

use crate::error::Result;
use crate::solver::TrajectoryRecord;

pub const TRAJECTORY_COLUMNS: [&str; 6] = ["level", "t", "node", "x", "y", "u"];
pub const LEDGER_COLUMNS: [&str; 12] = [
    "step",
    "t",
    "kinetic",
    "dissipation",
    "reaction",
    "penalty",
    "noise",
    "ito",
    "coercivity_floor",
    "flux_dual",
    "imbalance",
    "cumulative",
];
pub const NORM_COLUMNS: [&str; 8] = [
    "level",
    "t",
    "l2",
    "grad_lp",
    "neg_l2",
    "neg_lp",
    "neg_linf",
    "stochastic_integral",
];

fn num(v: f64) -> String {
    format!("{v:e}")
}

/// One row per node and level; `y` is 0 in one dimension.
pub fn write_trajectory_csv<W: Write>(rec: &TrajectoryRecord, out: W) -> Result<()> {
    let grid = rec.grid();
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRAJECTORY_COLUMNS)?;
    for (j, level) in rec.u.levels().iter().enumerate() {
        let t = num(grid.time(j));
        for (i, u) in level.values().iter().enumerate() {
            let x = grid.position(i);
            w.write_record([
                j.to_string(),
                t.clone(),
                i.to_string(),
                num(x[0]),
                num(x[1]),
                num(*u),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// One row per step `j -> j + 1`, stamped with `t_{j+1}`.
pub fn write_ledger_csv<W: Write>(rec: &TrajectoryRecord, out: W) -> Result<()> {
    let grid = rec.grid();
    let mut w = csv::Writer::from_writer(out);
    w.write_record(LEDGER_COLUMNS)?;
    for (j, (e, c)) in rec
        .ledger
        .entries
        .iter()
        .zip(&rec.ledger.cumulative)
        .enumerate()
    {
        let mut row = vec![j.to_string(), num(grid.time(j + 1))];
        row.extend(
            [
                e.kinetic,
                e.dissipation,
                e.reaction,
                e.penalty,
                e.noise,
                e.ito,
                e.coercivity_floor,
                e.flux_dual,
                e.imbalance(),
                *c,
            ]
            .map(num),
        );
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_norms_csv<W: Write>(rec: &TrajectoryRecord, out: W) -> Result<()> {
    let grid = rec.grid();
    let mut w = csv::Writer::from_writer(out);
    w.write_record(NORM_COLUMNS)?;
    for (j, (n, s)) in rec.norms.iter().zip(&rec.stochastic_integral).enumerate() {
        let mut row = vec![j.to_string(), num(grid.time(j))];
        row.extend([n.l2, n.grad_lp, n.neg_l2, n.neg_lp, n.neg_linf, *s].map(num));
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}
