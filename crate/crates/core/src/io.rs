//! CSV output and panel input. Floats are written in shortest round-trip form.

use std::fs::File;
use std::path::Path;

use serde::Serialize;

use crate::calibrate::{Decomposition, Evaluation, Residual};
use crate::equilibrium::EquilibriumSolution;
use crate::error::{Error, Result};
use crate::event_study::EventStudyResult;
use crate::moments::MomentVector;
use crate::primitives::{Age, Gender};
use crate::simulate::{PanelRecord, SimulatedMoment};

fn create(path: &Path) -> Result<csv::Writer<File>> {
    let file = File::create(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(csv::Writer::from_writer(file))
}

fn write_rows<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = create(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

#[derive(Serialize)]
struct MomentRow<'a> {
    moment: &'a str,
    value: f64,
}

pub fn write_moments(path: &Path, m: &MomentVector) -> Result<()> {
    write_rows(
        path,
        m.values()
            .into_iter()
            .map(|(moment, value)| MomentRow { moment, value }),
    )
}

#[derive(Serialize)]
struct SimMomentRow<'a> {
    moment: &'a str,
    value: f64,
    se: f64,
}

pub fn write_simulated_moments(path: &Path, m: &[SimulatedMoment]) -> Result<()> {
    write_rows(
        path,
        m.iter().map(|s| SimMomentRow {
            moment: s.name,
            value: s.value,
            se: s.se,
        }),
    )
}

#[derive(Serialize)]
struct DecileRow {
    gender: Gender,
    decile: usize,
    marriage_rate: f64,
}

pub fn write_deciles(path: &Path, rates: &[[f64; 10]; 2]) -> Result<()> {
    write_rows(
        path,
        Gender::BOTH.into_iter().flat_map(|g| {
            rates[g.index()]
                .iter()
                .enumerate()
                .map(move |(d, &r)| DecileRow {
                    gender: g,
                    decile: d + 1,
                    marriage_rate: r,
                })
        }),
    )
}

pub fn write_panel(path: &Path, panel: &[PanelRecord]) -> Result<()> {
    write_rows(path, panel)
}

pub fn read_panel(path: &Path) -> Result<Vec<PanelRecord>> {
    let file = File::open(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut r = csv::Reader::from_reader(file);
    r.deserialize()
        .map(|row| row.map_err(Error::from))
        .collect()
}

#[derive(Serialize)]
struct EventRow {
    outcome: &'static str,
    gender: Gender,
    q: i32,
    beta: f64,
}

pub fn write_event_study(path: &Path, res: &EventStudyResult) -> Result<()> {
    write_rows(
        path,
        res.beta.iter().flat_map(|(&(outcome, gender), b)| {
            b.iter().enumerate().map(move |(k, &beta)| EventRow {
                outcome: outcome.name(),
                gender,
                q: res.q_min + k as i32,
                beta,
            })
        }),
    )
}

#[derive(Serialize)]
struct DecompRow<'a> {
    row: &'a str,
    swapped: String,
    marriage_rate: f64,
    cfr: f64,
}

/// One row per regime, followed by the explained shares.
pub fn write_decomposition(path: &Path, d: &Decomposition) -> Result<()> {
    let mut rows: Vec<DecompRow> = d
        .rows
        .iter()
        .map(|r| DecompRow {
            row: &r.label,
            swapped: r.swapped.join(";"),
            marriage_rate: r.marriage_rate,
            cfr: r.cfr,
        })
        .collect();
    rows.push(DecompRow {
        row: "Explained share",
        swapped: String::new(),
        marriage_rate: d.explained_marriage,
        cfr: d.explained_cfr,
    });
    write_rows(path, rows)
}

pub fn write_residuals(path: &Path, res: &[Residual]) -> Result<()> {
    #[derive(Serialize)]
    struct Row<'a> {
        moment: &'a str,
        data: f64,
        model: f64,
        weight: f64,
        contribution: f64,
    }
    write_rows(
        path,
        res.iter().map(|r| Row {
            moment: &r.name,
            data: r.data,
            model: r.model,
            weight: r.weight,
            contribution: r.contribution,
        }),
    )
}

/// Optimizer trace: evaluation index, loss, then one column per free parameter.
pub fn write_trace(path: &Path, names: &[String], trace: &[Evaluation]) -> Result<()> {
    let mut w = create(path)?;
    let mut header = vec!["evaluation".to_string(), "loss".to_string()];
    header.extend(names.iter().cloned());
    w.write_record(&header)?;
    for (k, e) in trace.iter().enumerate() {
        let mut row = vec![k.to_string(), e.loss.to_string()];
        row.extend(e.values.iter().map(|v| v.to_string()));
        w.write_record(&row)?;
    }
    w.flush().map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

#[derive(Serialize)]
struct SingleCell {
    age: Age,
    gender: Gender,
    wage_index: usize,
    wage: f64,
    mass: f64,
}

/// One row per single cell `(age, gender, wage)`.
pub fn write_single_dist(path: &Path, eq: &EquilibriumSolution) -> Result<()> {
    let rows = Age::ALL.into_iter().flat_map(|age| {
        Gender::BOTH.into_iter().flat_map(move |g| {
            let levels = &eq.statics.grid(g).levels;
            levels.iter().enumerate().map(move |(i, &w)| SingleCell {
                age,
                gender: g,
                wage_index: i,
                wage: w,
                mass: eq.single_dist.mass[age.index()][g.index()][i],
            })
        })
    });
    write_rows(path, rows)
}

#[derive(Serialize)]
struct MarriedCell {
    age: Age,
    wage_m: f64,
    wage_f: f64,
    n0: u8,
    n1: u8,
    attempts_birth: bool,
    mass: f64,
}

/// One row per married cell with positive mass.
pub fn write_married_dist(path: &Path, eq: &EquilibriumSolution) -> Result<()> {
    let (gm, gf) = (
        eq.statics.grid(Gender::Male),
        eq.statics.grid(Gender::Female),
    );
    let rows = eq
        .married_dist
        .cells()
        .map(|(age, i_m, i_f, cs, mass)| MarriedCell {
            age,
            wage_m: gm.levels[i_m],
            wage_f: gf.levels[i_f],
            n0: cs.n0,
            n1: cs.n1,
            attempts_birth: age.is_fertile()
                && cs.can_add_child()
                && eq.couples.attempts(age, i_m, i_f, cs),
            mass,
        });
    write_rows(path, rows)
}
