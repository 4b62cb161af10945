//! Two-way fixed-effects event study around the first child.
//!
//! For each gender and outcome, `y_it = a_i + l_t + sum_q b_q 1{t - C_i = q} + e_it`
//! with `q = -2` omitted. Agent effects are removed by within-demeaning;
//! period effects enter as explicit dummies. Observations outside the event
//! window keep no event dummy but still identify the fixed effects.

use std::collections::{BTreeMap, HashMap};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::primitives::Gender;
use crate::simulate::PanelRecord;

/// Omitted event time.
pub const REFERENCE_Q: i32 = -2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Outcome {
    Work,
    Domestic,
    Leisure,
}

impl Outcome {
    pub const ALL: [Outcome; 3] = [Outcome::Work, Outcome::Domestic, Outcome::Leisure];

    pub fn name(self) -> &'static str {
        match self {
            Outcome::Work => "work",
            Outcome::Domestic => "domestic",
            Outcome::Leisure => "leisure",
        }
    }

    fn of(self, r: &PanelRecord) -> f64 {
        match self {
            Outcome::Work => r.h,
            Outcome::Domestic => r.d,
            Outcome::Leisure => r.l,
        }
    }
}

/// Event-time coefficients per outcome and gender; `beta[q_min..=q_max]`
/// with the reference entry fixed at zero.
#[derive(Debug, Clone, PartialEq)]
pub struct EventStudyResult {
    pub q_min: i32,
    pub q_max: i32,
    pub beta: BTreeMap<(Outcome, Gender), Vec<f64>>,
    pub n_obs: [usize; 2],
}

impl EventStudyResult {
    pub fn get(&self, outcome: Outcome, g: Gender, q: i32) -> Option<f64> {
        if q < self.q_min || q > self.q_max {
            return None;
        }
        self.beta
            .get(&(outcome, g))
            .map(|b| b[(q - self.q_min) as usize])
    }
}

/// A regression design in demeaned form.
struct Design {
    columns: Vec<String>,
    x: DMatrix<f64>,
}

fn demean_by_group(values: &mut [f64], groups: &[usize], n_groups: usize) {
    let mut sum = vec![0.0; n_groups];
    let mut count = vec![0usize; n_groups];
    for (v, &g) in values.iter().zip(groups) {
        sum[g] += v;
        count[g] += 1;
    }
    for (v, &g) in values.iter_mut().zip(groups) {
        *v -= sum[g] / count[g] as f64;
    }
}

/// OLS on the normal equations with a column-pivoted QR; rank deficiency is
/// reported with the name of the first dependent column.
fn solve_ols(design: &Design, y: &DVector<f64>) -> Result<DVector<f64>> {
    let xtx = design.x.transpose() * &design.x;
    let xty = design.x.transpose() * y;
    let k = xtx.nrows();
    if k == 0 {
        return Ok(DVector::zeros(0));
    }
    // Greedy rank check in column order so the named column is the first
    // one spanned by its predecessors.
    let scale = (0..k)
        .map(|j| xtx[(j, j)])
        .fold(0.0f64, f64::max)
        .max(f64::MIN_POSITIVE);
    for j in 0..k {
        if xtx[(j, j)] <= 1e-12 * scale {
            return Err(Error::SingularDesign(format!(
                "column '{}' has no variation",
                design.columns[j]
            )));
        }
    }
    let chol = match xtx.clone().cholesky() {
        Some(c) => c,
        None => return Err(collinear(design, &xtx)),
    };
    let beta = chol.solve(&xty);
    // Reject numerically dependent designs that still factor.
    let l = chol.l();
    let dmin = (0..k)
        .map(|j| l[(j, j)] * l[(j, j)] / xtx[(j, j)])
        .fold(f64::INFINITY, f64::min);
    if dmin < 1e-10 {
        return Err(collinear(design, &xtx));
    }
    Ok(beta)
}

fn collinear(design: &Design, xtx: &DMatrix<f64>) -> Error {
    let k = xtx.nrows();
    for j in 1..=k {
        let sub = xtx.view((0, 0), (j, j)).into_owned();
        let ok = sub.cholesky().is_some_and(|c| {
            let l = c.l();
            (0..j).all(|i| l[(i, i)] * l[(i, i)] >= 1e-10 * xtx[(i, i)])
        });
        if !ok {
            return Error::SingularDesign(format!(
                "column '{}' is collinear with the preceding columns",
                design.columns[j - 1]
            ));
        }
    }
    Error::SingularDesign("design matrix is rank deficient".into())
}

/// Estimates the event study separately by gender and outcome.
pub fn event_study(panel: &[PanelRecord], q_min: i32, q_max: i32) -> Result<EventStudyResult> {
    if q_min > REFERENCE_Q || q_max < REFERENCE_Q {
        return Err(Error::Domain(format!(
            "event window [{q_min}, {q_max}] must contain the reference {REFERENCE_Q}"
        )));
    }
    let mut beta = BTreeMap::new();
    let mut n_obs = [0; 2];
    for g in Gender::BOTH {
        let rows: Vec<&PanelRecord> = panel.iter().filter(|r| r.gender == g).collect();
        n_obs[g.index()] = rows.len();
        if rows.is_empty() {
            return Err(Error::Estimation(format!(
                "no observations for gender {}",
                g.code()
            )));
        }
        let mut agent_ix = HashMap::new();
        let groups: Vec<usize> = rows
            .iter()
            .map(|r| {
                let next = agent_ix.len();
                *agent_ix.entry(r.agent_id).or_insert(next)
            })
            .collect();
        let n_agents = agent_ix.len();
        let mut periods: Vec<u32> = rows.iter().map(|r| r.period).collect();
        periods.sort_unstable();
        periods.dedup();

        let event_qs: Vec<i32> = (q_min..=q_max).filter(|&q| q != REFERENCE_Q).collect();
        let mut columns: Vec<String> = event_qs.iter().map(|q| format!("event q={q}")).collect();
        columns.extend(periods.iter().skip(1).map(|t| format!("period {t}")));
        let n = rows.len();
        let k = columns.len();
        let mut x = DMatrix::<f64>::zeros(n, k);
        for (i, r) in rows.iter().enumerate() {
            if let Some(q) = r.event_time {
                if let Some(c) = event_qs.iter().position(|&e| e == q) {
                    x[(i, c)] = 1.0;
                }
            }
            if let Ok(p) = periods.binary_search(&r.period) {
                if p > 0 {
                    x[(i, event_qs.len() + p - 1)] = 1.0;
                }
            }
        }
        for c in 0..k {
            let mut col: Vec<f64> = x.column(c).iter().copied().collect();
            demean_by_group(&mut col, &groups, n_agents);
            x.set_column(c, &DVector::from_vec(col));
        }
        let design = Design { columns, x };
        for outcome in Outcome::ALL {
            let mut y: Vec<f64> = rows.iter().map(|r| outcome.of(r)).collect();
            demean_by_group(&mut y, &groups, n_agents);
            let b = solve_ols(&design, &DVector::from_vec(y))?;
            let mut out = Vec::with_capacity((q_max - q_min + 1) as usize);
            let mut it = b.iter().take(event_qs.len());
            for q in q_min..=q_max {
                out.push(if q == REFERENCE_Q {
                    0.0
                } else {
                    *it.next().unwrap()
                });
            }
            beta.insert((outcome, g), out);
        }
    }
    Ok(EventStudyResult {
        q_min,
        q_max,
        beta,
        n_obs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::primitives::{Age, Marital};
    use approx::assert_relative_eq;

    fn record(
        agent_id: u64,
        period: u32,
        gender: Gender,
        event_time: Option<i32>,
        l: f64,
    ) -> PanelRecord {
        PanelRecord {
            agent_id,
            period,
            gender,
            age: Age::Y,
            wage: 1.0,
            marital: Marital::Married,
            spouse_id: None,
            n0: 0,
            n1: 0,
            event_time,
            h: 112.0 - l - 10.0,
            l,
            d: 10.0,
        }
    }

    /// Treated agents with staggered births plus never-treated controls.
    fn synthetic(effect: impl Fn(i32) -> f64) -> Vec<PanelRecord> {
        let mut out = Vec::new();
        for a in 0..60u64 {
            let birth = if a % 3 == 0 {
                None
            } else {
                Some(5 + (a % 11) as i32)
            };
            for g in Gender::BOTH {
                let id = a * 2 + g.index() as u64;
                for t in 0..25u32 {
                    let q = birth.map(|c| t as i32 - c);
                    let base = 60.0 + (a % 7) as f64 + 0.3 * t as f64;
                    let y = base + q.map_or(0.0, &effect);
                    out.push(record(id, t, g, q, y));
                }
            }
        }
        out
    }

    #[test]
    fn constant_outcome_has_zero_effects() {
        let panel = synthetic(|_| 0.0)
            .into_iter()
            .map(|mut r| {
                r.l = 50.0;
                r
            })
            .collect::<Vec<_>>();
        let res = event_study(&panel, -5, 10).unwrap();
        for b in res.beta.values() {
            for v in b {
                assert!(v.abs() < 1e-9);
            }
        }
    }

    #[test]
    fn recovers_step_drop() {
        // The window covers every event time in the panel, so no treated
        // observation falls back into the omitted category.
        let panel = synthetic(|q| if q >= 0 { -10.0 } else { 0.0 });
        let res = event_study(&panel, -15, 19).unwrap();
        for g in Gender::BOTH {
            for q in -15..=19 {
                let b = res.get(Outcome::Leisure, g, q).unwrap();
                let want = if q >= 0 { -10.0 } else { 0.0 };
                assert_relative_eq!(b, want, epsilon = 1e-8);
            }
            assert_eq!(res.get(Outcome::Leisure, g, REFERENCE_Q), Some(0.0));
        }
    }

    #[test]
    fn permuting_ids_leaves_estimates_unchanged() {
        let panel = synthetic(|q| (q as f64).min(4.0).max(-1.0));
        let base = event_study(&panel, -5, 10).unwrap();
        let mut shuffled: Vec<_> = panel
            .iter()
            .cloned()
            .map(|mut r| {
                r.agent_id = 10_000 - r.agent_id;
                r
            })
            .collect();
        shuffled.reverse();
        let other = event_study(&shuffled, -5, 10).unwrap();
        for (key, b) in &base.beta {
            for (x, y) in b.iter().zip(&other.beta[key]) {
                assert_relative_eq!(x, y, epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn saturated_design_is_singular() {
        // Everyone treated in the same period: event dummies equal period dummies.
        let mut panel = Vec::new();
        for a in 0..20u64 {
            for g in Gender::BOTH {
                for t in 0..12u32 {
                    panel.push(record(
                        a * 2 + g.index() as u64,
                        t,
                        g,
                        Some(t as i32 - 6),
                        40.0 + t as f64,
                    ));
                }
            }
        }
        match event_study(&panel, -5, 5) {
            Err(Error::SingularDesign(msg)) => assert!(msg.contains("column"), "{msg}"),
            other => panic!("expected singular design, got {other:?}"),
        }
    }

    #[test]
    fn window_must_contain_reference() {
        assert!(event_study(&synthetic(|_| 0.0), 0, 5).is_err());
    }
}
