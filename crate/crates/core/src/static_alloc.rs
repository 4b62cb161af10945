//! Within-period consumption and time allocation of singles and couples.
//!
//! Couples are solved through the marginal utility of household expenditure
//! `eta`: given the domestic split `(d_m, d_f)`, each spouse's leisure solves
//! `weight_g * alpha_l * l_g^(-gamma_l) = eta * w_g` (clamped at `1 - d_g`,
//! where the spouse stops working), and `eta` is found by bisection so that
//! `eta = Gamma^(gamma_c - 1) * c^(-gamma_c)`. When both spouses work, the
//! optimal split minimizes `w_m d_m + w_f d_f` on the requirement curve and
//! has a closed form; otherwise a golden-section search over `d_m` on the
//! curve `D(d_m, d_f) = Psi` takes over.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{discretize_lognormal, WageGrid};
use crate::params::{HomeProduction, ModelParams, SolverSettings};
use crate::primitives::{
    bargaining_weight, bargaining_weight_unchecked, domestic_aggregate, domestic_requirement,
    equivalence_scale, utility_unchecked, ChildState, Gender, Marital,
};

/// Smallest leisure fraction the solvers will return.
pub const LEISURE_FLOOR: f64 = 1e-9;

const MAX_BISECTION: usize = 400;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MemberTime {
    pub h: f64,
    pub l: f64,
    pub d: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Allocation {
    /// Household consumption in goods units.
    pub c: f64,
    pub male: Option<MemberTime>,
    pub female: Option<MemberTime>,
}

impl Allocation {
    pub fn member(&self, g: Gender) -> Option<&MemberTime> {
        match g {
            Gender::Male => self.male.as_ref(),
            Gender::Female => self.female.as_ref(),
        }
    }

    /// Both spouses supply positive market hours.
    pub fn both_work(&self) -> bool {
        matches!((self.male, self.female), (Some(m), Some(f)) if m.h > 0.0 && f.h > 0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IndirectUtility {
    pub v_m: Option<f64>,
    pub v_f: Option<f64>,
}

impl IndirectUtility {
    pub fn get(&self, g: Gender) -> Option<f64> {
        match g {
            Gender::Male => self.v_m,
            Gender::Female => self.v_f,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoupleOutcome {
    pub alloc: Allocation,
    pub util: IndirectUtility,
    /// Wife's bargaining weight.
    pub lambda: f64,
}

impl CoupleOutcome {
    /// The couple's weighted objective at this allocation.
    pub fn objective(&self) -> f64 {
        (1.0 - self.lambda) * self.util.v_m.unwrap() + self.lambda * self.util.v_f.unwrap()
    }
}

fn bisect_increasing(
    mut lo: f64,
    mut hi: f64,
    tol: f64,
    solver: &'static str,
    f: impl Fn(f64) -> f64,
) -> Result<f64> {
    for _ in 0..MAX_BISECTION {
        let mid = 0.5 * (lo + hi);
        if hi - lo <= tol * (1.0 + mid.abs()) {
            return Ok(mid);
        }
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Err(Error::NonConvergence {
        solver,
        iterations: MAX_BISECTION,
        residual: hi - lo,
        history: vec![hi - lo],
    })
}

/// A single's optimum: `d` is pinned at the requirement, market hours solve
/// `w (w h)^(-gamma_c) = alpha_l (1 - psi - h)^(-gamma_l)` by bisection on `h`.
pub fn solve_single(
    w: f64,
    gender: Gender,
    params: &ModelParams,
    settings: &SolverSettings,
) -> Result<(Allocation, IndirectUtility)> {
    if !(w > 0.0) {
        return Err(Error::Domain(format!("wage must be > 0, got {w}")));
    }
    let prefs = &params.prefs;
    let psi = domestic_requirement(Marital::Single, gender, ChildState::NONE, &params.home);
    let budget = 1.0 - psi;
    if !(budget > LEISURE_FLOOR) {
        return Err(Error::Infeasible(format!(
            "single requirement {psi} leaves no time"
        )));
    }
    let h = if prefs.alpha_l == 0.0 {
        budget - LEISURE_FLOOR
    } else {
        // Decreasing in h; the negated form feeds the increasing-root bisection.
        let foc = |h: f64| {
            let lhs = w.ln() - prefs.gamma_c * (w * h).ln();
            let rhs = prefs.alpha_l.ln() - prefs.gamma_l * (budget - h).ln();
            rhs - lhs
        };
        let h = bisect_increasing(0.0, budget, settings.eta_tol * 1e-2, "single hours", foc)?;
        h.min(budget - LEISURE_FLOOR)
    };
    let l = budget - h;
    let c = w * h;
    let alloc = Allocation {
        c,
        male: None,
        female: None,
    };
    let member = MemberTime { h, l, d: psi };
    let v = utility_unchecked(c, l, 0, prefs);
    Ok(match gender {
        Gender::Male => (
            Allocation {
                male: Some(member),
                ..alloc
            },
            IndirectUtility {
                v_m: Some(v),
                v_f: None,
            },
        ),
        Gender::Female => (
            Allocation {
                female: Some(member),
                ..alloc
            },
            IndirectUtility {
                v_m: None,
                v_f: Some(v),
            },
        ),
    })
}

/// Fixed data of one couple problem.
struct CoupleProblem<'a> {
    w: [f64; 2],
    weight: [f64; 2],
    lambda: f64,
    gamma_scale: f64,
    n: u8,
    psi: f64,
    params: &'a ModelParams,
    settings: &'a SolverSettings,
}

impl CoupleProblem<'_> {
    /// Optimal leisure and consumption given the domestic split.
    fn inner(&self, d: [f64; 2]) -> Result<(f64, [f64; 2])> {
        let prefs = &self.params.prefs;
        let cap = [1.0 - d[0], 1.0 - d[1]];
        if cap.iter().any(|&t| t < LEISURE_FLOOR) {
            return Err(Error::Infeasible(format!(
                "domestic split ({}, {}) exhausts a spouse's time",
                d[0], d[1]
            )));
        }
        let leisure = |eta: f64| -> [f64; 2] {
            let mut l = [0.0; 2];
            for g in 0..2 {
                let interior = if prefs.alpha_l == 0.0 || self.weight[g] == 0.0 {
                    0.0
                } else {
                    (self.weight[g] * prefs.alpha_l / (eta * self.w[g])).powf(1.0 / prefs.gamma_l)
                };
                l[g] = interior.clamp(LEISURE_FLOOR.min(cap[g]), cap[g]);
            }
            l
        };
        let consumption =
            |l: [f64; 2]| -> f64 { self.w[0] * (cap[0] - l[0]) + self.w[1] * (cap[1] - l[1]) };
        let log_gamma = self.gamma_scale.ln();
        // x = ln(eta); residual is increasing in x.
        let residual = |x: f64| -> f64 {
            let c = consumption(leisure(x.exp()));
            if c <= 0.0 {
                return f64::NEG_INFINITY;
            }
            x - (prefs.gamma_c - 1.0) * log_gamma + prefs.gamma_c * c.ln()
        };
        let (mut lo, mut hi) = (-30.0, 30.0);
        while residual(lo) >= 0.0 {
            lo -= 30.0;
            if lo < -3000.0 {
                return Err(Error::NonConvergence {
                    solver: "couple eta bracket",
                    iterations: 100,
                    residual: residual(lo),
                    history: vec![],
                });
            }
        }
        while residual(hi) <= 0.0 {
            hi += 30.0;
            if hi > 3000.0 {
                return Err(Error::NonConvergence {
                    solver: "couple eta bracket",
                    iterations: 100,
                    residual: residual(hi),
                    history: vec![],
                });
            }
        }
        let x = bisect_increasing(lo, hi, self.settings.eta_tol, "couple eta", residual)?;
        let l = leisure(x.exp());
        let c = consumption(l);
        if !(c > 0.0) {
            return Err(Error::NonConvergence {
                solver: "couple eta",
                iterations: MAX_BISECTION,
                residual: c,
                history: vec![],
            });
        }
        Ok((c, l))
    }

    fn objective(&self, c: f64, l: [f64; 2]) -> f64 {
        let prefs = &self.params.prefs;
        let cpc = c / self.gamma_scale;
        self.weight[0] * utility_unchecked(cpc, l[0], self.n, prefs)
            + self.weight[1] * utility_unchecked(cpc, l[1], self.n, prefs)
    }

    fn value_at_split(&self, d_m: f64) -> f64 {
        let Some(d_f) = partner_hours(d_m, self.psi, &self.params.home, Gender::Male) else {
            return f64::NEG_INFINITY;
        };
        match self.inner([d_m, d_f]) {
            Ok((c, l)) => self.objective(c, l),
            Err(_) => f64::NEG_INFINITY,
        }
    }

    fn finish(&self, d: [f64; 2]) -> Result<CoupleOutcome> {
        let (c, l) = self.inner(d)?;
        let prefs = &self.params.prefs;
        let cpc = c / self.gamma_scale;
        let member = |g: usize| MemberTime {
            // Exact zero at the clamp.
            h: if l[g] >= 1.0 - d[g] {
                0.0
            } else {
                1.0 - d[g] - l[g]
            },
            l: l[g],
            d: d[g],
        };
        let (m, f) = (member(0), member(1));
        let c = self.w[0] * m.h + self.w[1] * f.h;
        Ok(CoupleOutcome {
            alloc: Allocation {
                c,
                male: Some(m),
                female: Some(f),
            },
            util: IndirectUtility {
                v_m: Some(utility_unchecked(cpc, l[0], self.n, prefs)),
                v_f: Some(utility_unchecked(cpc, l[1], self.n, prefs)),
            },
            lambda: self.lambda,
        })
    }
}

/// Hours the partner of `own` must supply so that `D = psi`, given `own`'s
/// domestic hours `d_own`. `None` when no nonnegative partner input works.
pub fn partner_hours(d_own: f64, psi: f64, hp: &HomeProduction, own: Gender) -> Option<f64> {
    let (w_own, w_other) = match own {
        Gender::Male => (1.0 - hp.theta, hp.theta),
        Gender::Female => (hp.theta, 1.0 - hp.theta),
    };
    let xi = hp.xi;
    if xi == 0.0 {
        if d_own <= 0.0 {
            return None;
        }
        // d_own^w_own * d_other^w_other = psi
        return Some(((psi.ln() - w_own * d_own.ln()) / w_other).exp());
    }
    if xi < 0.0 && d_own <= 0.0 {
        return None;
    }
    let rest = psi.powf(xi) - w_own * d_own.powf(xi);
    if rest < 0.0 || (xi < 0.0 && rest == 0.0) {
        return None;
    }
    Some((rest / w_other).powf(1.0 / xi))
}

/// Solves the couple's static problem at wages `(w_m, w_f)` and child state `cs`.
pub fn solve_couple(
    w_m: f64,
    w_f: f64,
    cs: ChildState,
    params: &ModelParams,
    settings: &SolverSettings,
) -> Result<CoupleOutcome> {
    let lambda = bargaining_weight(w_m, w_f, cs.n0, &params.bargaining)?;
    let hp = &params.home;
    let psi = domestic_requirement(Marital::Married, Gender::Female, cs, hp);
    let problem = CoupleProblem {
        w: [w_m, w_f],
        weight: [1.0 - lambda, lambda],
        lambda,
        gamma_scale: equivalence_scale(cs, &params.demo),
        n: cs.total(),
        psi,
        params,
        settings,
    };
    if psi == 0.0 {
        return problem.finish([0.0, 0.0]);
    }
    // D is homogeneous of degree one with D(1, 1) = 1.
    if psi >= 1.0 - LEISURE_FLOOR {
        return Err(Error::Infeasible(format!(
            "requirement {psi} cannot be met within the time endowment"
        )));
    }

    // Cost-minimizing split: d_m / d_f = ((w_f / w_m) (1 - theta) / theta)^(1 / (1 - xi)).
    let ratio = ((w_f / w_m) * (1.0 - hp.theta) / hp.theta).powf(1.0 / (1.0 - hp.xi));
    let d_f = psi / domestic_aggregate(ratio, 1.0, hp);
    let d_m = ratio * d_f;
    if d_m < 1.0 - LEISURE_FLOOR && d_f < 1.0 - LEISURE_FLOOR {
        let out = problem.finish([d_m, d_f])?;
        if out.alloc.both_work() {
            return Ok(out);
        }
    }

    // Corner: golden-section search over d_m along the requirement curve.
    let top = 1.0 - LEISURE_FLOOR;
    let lo = match partner_hours(top, psi, hp, Gender::Female) {
        Some(x) if x.is_finite() => x.max(0.0),
        _ => 0.0,
    };
    let hi = if hp.xi > 0.0 {
        (psi * (1.0 - hp.theta).powf(-1.0 / hp.xi)).min(top)
    } else {
        top
    };
    if !(lo < hi) {
        return Err(Error::Infeasible(format!(
            "requirement {psi} cannot be met within the time endowment"
        )));
    }
    let d_m = golden_max(lo, hi, settings.split_tol, |x| problem.value_at_split(x));
    let Some(d_f) = partner_hours(d_m, psi, hp, Gender::Male) else {
        return Err(Error::Infeasible(format!(
            "requirement {psi} cannot be met within the time endowment"
        )));
    };
    if !(d_f < top) {
        return Err(Error::Infeasible(format!(
            "requirement {psi} cannot be met within the time endowment"
        )));
    }
    problem.finish([d_m, d_f])
}

/// Maximizer of a unimodal function on `[lo, hi]`, endpoints included.
fn golden_max(mut lo: f64, mut hi: f64, tol: f64, f: impl Fn(f64) -> f64) -> f64 {
    let (a0, b0) = (lo, hi);
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let mut x1 = hi - r * (hi - lo);
    let mut x2 = lo + r * (hi - lo);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    while hi - lo > tol {
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + r * (hi - lo);
            f2 = f(x2);
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - r * (hi - lo);
            f1 = f(x1);
        }
    }
    let mid = 0.5 * (lo + hi);
    [(mid, f(mid)), (a0, f(a0)), (b0, f(b0))]
        .into_iter()
        .fold((mid, f64::NEG_INFINITY), |best, cand| {
            if cand.1 > best.1 {
                cand
            } else {
                best
            }
        })
        .0
}

/// Recovers the wife's domestic productivity share from an interior split.
pub fn theta_from_allocation(w_m: f64, w_f: f64, d_m: f64, d_f: f64, xi: f64) -> Result<f64> {
    if !(d_m > 0.0 && d_f > 0.0) {
        return Err(Error::Domain(format!(
            "domestic inputs must be > 0, got ({d_m}, {d_f})"
        )));
    }
    let wife = w_f * d_f.powf(1.0 - xi);
    Ok(wife / (w_m * d_m.powf(1.0 - xi) + wife))
}

/// Static solutions for every grid state, computed once per parameter set.
#[derive(Debug, Clone)]
pub struct StaticTable {
    pub grid_m: WageGrid,
    pub grid_f: WageGrid,
    /// `singles[g][i]`
    pub singles: [Vec<(Allocation, IndirectUtility)>; 2],
    /// Indexed by `couple_index(i_m, i_f, cs)`.
    pub couples: Vec<CoupleOutcome>,
}

impl StaticTable {
    pub fn build(params: &ModelParams, settings: &SolverSettings) -> Result<Self> {
        params.validate()?;
        let n = params.wages.n_grid;
        let grid_m = discretize_lognormal(params.wages.mu_m, params.wages.sigma_m, n)?;
        let grid_f = discretize_lognormal(params.wages.mu_f, params.wages.sigma_f, n)?;
        let single = |g: Gender, grid: &WageGrid| -> Result<Vec<_>> {
            grid.levels
                .iter()
                .map(|&w| solve_single(w, g, params, settings))
                .collect()
        };
        let singles = [
            single(Gender::Male, &grid_m)?,
            single(Gender::Female, &grid_f)?,
        ];
        let couples: Vec<CoupleOutcome> = (0..n * n * ChildState::COUNT)
            .into_par_iter()
            .map(|k| {
                let cs = ChildState::ALL[k % ChildState::COUNT];
                let pair = k / ChildState::COUNT;
                let (i_m, i_f) = (pair / n, pair % n);
                solve_couple(grid_m.levels[i_m], grid_f.levels[i_f], cs, params, settings)
            })
            .collect::<Result<_>>()?;
        Ok(StaticTable {
            grid_m,
            grid_f,
            singles,
            couples,
        })
    }

    pub fn n_grid(&self) -> usize {
        self.grid_m.len()
    }

    pub fn grid(&self, g: Gender) -> &WageGrid {
        match g {
            Gender::Male => &self.grid_m,
            Gender::Female => &self.grid_f,
        }
    }

    pub fn couple(&self, i_m: usize, i_f: usize, cs: ChildState) -> &CoupleOutcome {
        &self.couples[(i_m * self.n_grid() + i_f) * ChildState::COUNT + cs.index()]
    }

    pub fn single(&self, g: Gender, i: usize) -> &(Allocation, IndirectUtility) {
        &self.singles[g.index()][i]
    }

    pub fn single_value(&self, g: Gender, i: usize) -> f64 {
        self.singles[g.index()][i].1.get(g).unwrap()
    }

    /// Wife's bargaining weight is recomputed cheaply where only it is needed.
    pub fn lambda(&self, i_m: usize, i_f: usize, n0: u8, params: &ModelParams) -> f64 {
        bargaining_weight_unchecked(
            self.grid_m.levels[i_m],
            self.grid_f.levels[i_f],
            n0,
            &params.bargaining,
        )
    }
}
