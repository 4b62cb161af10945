//! Stationary matching equilibrium: singles' and married couples' stationary
//! distributions and the outer fixed point over the partner distributions.

use crate::dynamics::{
    solve_couple_values, solve_singles, CoupleValueTable, MarriageRule, PartnerDist,
    SingleValueTable,
};
use crate::error::{Error, Result};
use crate::grid::WageGrid;
use crate::moments::{compute_moments, MomentVector};
use crate::params::{Demography, ModelParams, SolverSettings};
use crate::primitives::{Age, ChildState, Gender};
use crate::static_alloc::StaticTable;

/// Non-normalized stationary masses of singles, `mass[age][gender][i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SingleDist {
    pub mass: [[Vec<f64>; 2]; 3],
}

impl SingleDist {
    pub fn total(&self, age: Age, g: Gender) -> f64 {
        self.mass[age.index()][g.index()].iter().sum()
    }

    /// Distributions of singles met in the Y and M markets.
    pub fn normalized(&self) -> PartnerDist {
        [Age::Y, Age::M].map(|age| {
            Gender::BOTH.map(|g| {
                let m = &self.mass[age.index()][g.index()];
                let t: f64 = m.iter().sum();
                if t > 0.0 {
                    m.iter().map(|x| x / t).collect()
                } else {
                    vec![0.0; m.len()]
                }
            })
        })
    }
}

/// Stationary masses of married couples over `(age, i_m, i_f, child state)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MarriedDist {
    n_grid: usize,
    mass: Vec<f64>,
}

impl MarriedDist {
    fn flat(&self, age: Age, i_m: usize, i_f: usize, cs: ChildState) -> usize {
        ((age.index() * self.n_grid + i_m) * self.n_grid + i_f) * ChildState::COUNT + cs.index()
    }

    pub fn n_grid(&self) -> usize {
        self.n_grid
    }

    pub fn get(&self, age: Age, i_m: usize, i_f: usize, cs: ChildState) -> f64 {
        self.mass[self.flat(age, i_m, i_f, cs)]
    }

    pub fn total(&self, age: Age) -> f64 {
        let n = self.n_grid;
        let block = n * n * ChildState::COUNT;
        self.mass[age.index() * block..(age.index() + 1) * block]
            .iter()
            .sum()
    }

    /// Visits every cell with positive mass.
    pub fn cells(&self) -> impl Iterator<Item = (Age, usize, usize, ChildState, f64)> + '_ {
        let n = self.n_grid;
        Age::ALL.into_iter().flat_map(move |age| {
            (0..n * n).flat_map(move |pair| {
                ChildState::ALL.into_iter().filter_map(move |cs| {
                    let m = self.get(age, pair / n, pair % n, cs);
                    (m > 0.0).then_some((age, pair / n, pair % n, cs, m))
                })
            })
        })
    }
}

/// Marriage probability of each single of gender `g` at stage `age`, given
/// the opposite gender's normalized distribution.
pub fn marriage_probabilities(
    rule: &MarriageRule,
    partners: &[Vec<f64>; 2],
    age: Age,
    g: Gender,
) -> Vec<f64> {
    let n = rule.n_grid;
    let other = &partners[g.other().index()];
    (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    let (i_m, i_f) = match g {
                        Gender::Male => (i, j),
                        Gender::Female => (j, i),
                    };
                    other[j] * rule.probability(age, i_m, i_f)
                })
                .sum()
        })
        .collect()
}

fn market_probabilities(rule: &MarriageRule, partners: &PartnerDist) -> [[Vec<f64>; 2]; 2] {
    [Age::Y, Age::M].map(|age| {
        Gender::BOTH.map(|g| marriage_probabilities(rule, &partners[age.index()], age, g))
    })
}

/// One application of the singles' flow equations.
pub fn update_single_dist(
    prev: &SingleDist,
    partners: &PartnerDist,
    rule: &MarriageRule,
    grids: [&WageGrid; 2],
    demo: &Demography,
) -> SingleDist {
    let k = demo.kappa;
    let p = market_probabilities(rule, partners);
    let mut mass = prev.mass.clone();
    for g in 0..2 {
        for i in 0..grids[g].len() {
            let y = prev.mass[0][g][i] * (1.0 - p[0][g][i]);
            let m = prev.mass[1][g][i] * (1.0 - p[1][g][i]);
            mass[0][g][i] = (1.0 - k) * y + k / 3.0 * grids[g].probs[i];
            mass[1][g][i] = k * y + (1.0 - k) * m;
            mass[2][g][i] = k * m + (1.0 - k) * prev.mass[2][g][i];
        }
    }
    SingleDist { mass }
}

/// Fixed point of [`update_single_dist`] for fixed partner distributions.
pub fn stationary_single_dist(
    partners: &PartnerDist,
    rule: &MarriageRule,
    grids: [&WageGrid; 2],
    demo: &Demography,
) -> SingleDist {
    let k = demo.kappa;
    let p = market_probabilities(rule, partners);
    let mass = Gender::BOTH.map(|g| {
        let g = g.index();
        let n = grids[g].len();
        let mut y = vec![0.0; n];
        let mut m = vec![0.0; n];
        let mut o = vec![0.0; n];
        for i in 0..n {
            y[i] = k / 3.0 * grids[g].probs[i] / (1.0 - (1.0 - k) * (1.0 - p[0][g][i]));
            m[i] = k * (1.0 - p[0][g][i]) * y[i] / (1.0 - (1.0 - k) * (1.0 - p[1][g][i]));
            o[i] = (1.0 - p[1][g][i]) * m[i];
        }
        [y, m, o]
    });
    let [[ym, mm, om], [yf, mf, of]] = mass;
    SingleDist {
        mass: [[ym, yf], [mm, mf], [om, of]],
    }
}

/// Stationary married distribution by exact forward substitution.
///
/// Newlyweds matched at stage `a` enter `(0, 0)` next period, at `a` or at
/// the next stage if they age. The only cycles in the transition graph are
/// self-loops, so each cell is solved in one pass in topological order.
pub fn solve_married_dist(
    rule: &MarriageRule,
    singles: &SingleDist,
    couples: &CoupleValueTable,
    demo: &Demography,
) -> MarriedDist {
    let n = rule.n_grid;
    let k = demo.kappa;
    let totals = [Age::Y, Age::M]
        .map(|a| (singles.total(a, Gender::Male) * singles.total(a, Gender::Female)).sqrt());
    let mut mass = vec![0.0; 3 * n * n * ChildState::COUNT];
    let idx = |age: Age, i_m: usize, i_f: usize, cs: ChildState| {
        ((age.index() * n + i_m) * n + i_f) * ChildState::COUNT + cs.index()
    };
    for i_m in 0..n {
        for i_f in 0..n {
            // Inflow into each (age, cs) cell before the cell's own self-loop.
            let mut inflow = [[0.0; ChildState::COUNT]; 3];
            for age in [Age::Y, Age::M] {
                let a = age.index();
                if totals[a] <= 0.0 {
                    continue;
                }
                let matches = rule.probability(age, i_m, i_f)
                    * singles.mass[a][0][i_m]
                    * singles.mass[a][1][i_f]
                    / totals[a];
                inflow[a][0] += (1.0 - k) * matches;
                inflow[a + 1][0] += k * matches;
            }
            for age in Age::ALL {
                let a = age.index();
                let delta = match age {
                    Age::Y => demo.delta1,
                    Age::M => demo.delta2,
                    Age::O => 0.0,
                };
                for cs in ChildState::ALL.into_iter().filter(|cs| cs.valid_at(age)) {
                    let birth =
                        if cs.can_add_child() && delta > 0.0 && couples.attempts(age, i_m, i_f, cs)
                        {
                            delta
                        } else {
                            0.0
                        };
                    let x = inflow[a][cs.index()] / (1.0 - (1.0 - k) * (1.0 - birth));
                    mass[idx(age, i_m, i_f, cs)] = x;
                    if birth > 0.0 {
                        let next = ChildState {
                            n0: cs.n0 + 1,
                            n1: cs.n1,
                        };
                        inflow[a][next.index()] += (1.0 - k) * birth * x;
                    }
                    match age {
                        Age::Y => {
                            inflow[1][ChildState { n0: 0, n1: cs.n0 }.index()] +=
                                k * (1.0 - birth) * x;
                            if birth > 0.0 {
                                inflow[1][ChildState {
                                    n0: 0,
                                    n1: cs.n0 + 1,
                                }
                                .index()] += k * birth * x;
                            }
                        }
                        Age::M => {
                            inflow[2][ChildState {
                                n0: 0,
                                n1: cs.total(),
                            }
                            .index()] += k * (1.0 - birth) * x;
                            if birth > 0.0 {
                                inflow[2][ChildState {
                                    n0: 0,
                                    n1: cs.total() + 1,
                                }
                                .index()] += k * birth * x;
                            }
                        }
                        Age::O => {}
                    }
                }
            }
        }
    }
    MarriedDist { n_grid: n, mass }
}

/// Convergence diagnostics of [`solve_equilibrium`].
#[derive(Debug, Clone, Default)]
pub struct ConvergenceReport {
    pub outer_iterations: usize,
    /// Sup-norm change in the partner distributions per outer iteration.
    pub outer_history: Vec<f64>,
    pub single_value_iterations: Vec<usize>,
    /// Final single-value residual.
    pub single_value_residual: f64,
    /// Sup-norm change of the last distribution polish step.
    pub polish_residual: f64,
}

/// Everything needed to compute moments or simulate from a solved model.
#[derive(Debug, Clone)]
pub struct EquilibriumSolution {
    pub params: ModelParams,
    pub settings: SolverSettings,
    pub statics: StaticTable,
    pub couples: CoupleValueTable,
    pub single_values: SingleValueTable,
    pub rule: MarriageRule,
    pub partners: PartnerDist,
    pub single_dist: SingleDist,
    pub married_dist: MarriedDist,
    pub moments: MomentVector,
    pub report: ConvergenceReport,
}

fn sup_change(a: &PartnerDist, b: &PartnerDist) -> f64 {
    let mut m: f64 = 0.0;
    for (x, y) in a.iter().flatten().zip(b.iter().flatten()) {
        for (u, v) in x.iter().zip(y) {
            m = m.max((u - v).abs());
        }
    }
    m
}

const POLISH_TOL: f64 = 1e-15;
const POLISH_MAX_ITER: usize = 2000;

pub fn solve_equilibrium(params: &ModelParams) -> Result<EquilibriumSolution> {
    solve_equilibrium_with(params, &SolverSettings::default(), None)
}

/// Outer damped fixed point over the partner distributions. A previous
/// solution on the same grid size may seed the single values and partners.
pub fn solve_equilibrium_with(
    params: &ModelParams,
    settings: &SolverSettings,
    warm: Option<&EquilibriumSolution>,
) -> Result<EquilibriumSolution> {
    params.validate()?;
    let statics = StaticTable::build(params, settings)?;
    let couples = solve_couple_values(&statics, params)?;
    let grids = [statics.grid(Gender::Male), statics.grid(Gender::Female)];
    let n = statics.n_grid();
    let warm = warm.filter(|w| w.statics.n_grid() == n);

    let population: [Vec<f64>; 2] = [grids[0].probs.clone(), grids[1].probs.clone()];
    let mut partners: PartnerDist = match warm {
        Some(w) => w.partners.clone(),
        None => [population.clone(), population],
    };
    let mut values = warm.map(|w| w.single_values.clone());
    let mut report = ConvergenceReport::default();
    let damp = settings.eq_damping;
    let mut converged = false;
    let mut last = None;
    for it in 0..settings.eq_max_iter {
        report.outer_iterations = it + 1;
        let sol = solve_singles(
            &couples,
            &partners,
            &statics,
            params,
            settings,
            values.as_ref(),
        )?;
        report.single_value_iterations.push(sol.iterations);
        report.single_value_residual = sol.residual;
        let dist = stationary_single_dist(&partners, &sol.rule, grids, &params.demo);
        let target = dist.normalized();
        let change = sup_change(&target, &partners);
        report.outer_history.push(change);
        values = Some(sol.values.clone());
        if change < settings.eq_tol {
            converged = true;
            last = Some((sol, dist));
            break;
        }
        for (p, t) in partners.iter_mut().flatten().zip(target.iter().flatten()) {
            for (x, y) in p.iter_mut().zip(t) {
                *x = (1.0 - damp) * *x + damp * y;
            }
        }
    }
    let (sol, mut dist) = match (converged, last) {
        (true, Some(found)) => found,
        _ => {
            let keep = report.outer_history.len().saturating_sub(50);
            return Err(Error::NonConvergence {
                solver: "matching equilibrium",
                iterations: report.outer_iterations,
                residual: report.outer_history.last().copied().unwrap_or(f64::NAN),
                history: report.outer_history.split_off(keep),
            });
        }
    };

    // Under the final rule, make the single distribution exactly consistent
    // with its own normalization so that flows balance to rounding.
    for _ in 0..POLISH_MAX_ITER {
        let current = dist.normalized();
        let next = stationary_single_dist(&current, &sol.rule, grids, &params.demo);
        let change = sup_change(&next.normalized(), &current);
        dist = next;
        report.polish_residual = change;
        if change < POLISH_TOL {
            break;
        }
    }
    let partners = dist.normalized();

    let married_dist = solve_married_dist(&sol.rule, &dist, &couples, &params.demo);
    let mut eq = EquilibriumSolution {
        params: params.clone(),
        settings: settings.clone(),
        statics,
        couples,
        single_values: sol.values,
        rule: sol.rule,
        partners,
        single_dist: dist,
        married_dist,
        moments: MomentVector::default(),
        report,
    };
    eq.moments = compute_moments(&eq);
    Ok(eq)
}
