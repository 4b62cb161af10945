//! Lifetime values of couples and singles, the childbirth policy, and the
//! marriage rule.
//!
//! Couple values are affine in the bliss shock: `V_g(state; b) =
//! vbar_g(state) + b * annuity[age]`, so the tables store only the bliss-free
//! part. The childbirth comparison weights both spouses' values with the
//! same bargaining weight, whose two terms sum to one, so the bliss terms
//! cancel and the policy is independent of `b`.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{norm_cdf, norm_pdf};
use crate::params::{BlissParams, ModelParams, SolverSettings};
use crate::primitives::{Age, ChildState, Gender};
use crate::static_alloc::StaticTable;

/// Expected discounted number of remaining periods at each stage `(Y, M, O)`.
pub fn annuity_factors(beta: f64, kappa: f64) -> [f64; 3] {
    let stay = 1.0 - beta * (1.0 - kappa);
    let b_o = 1.0 / stay;
    let b_m = (1.0 + beta * kappa * b_o) / stay;
    let b_y = (1.0 + beta * kappa * b_m) / stay;
    [b_y, b_m, b_o]
}

/// Share of matches whose bliss draw is negative.
pub fn bliss_share_negative(bliss: &BlissParams) -> f64 {
    norm_cdf(-bliss.mu_b / bliss.sigma_b)
}

/// Bliss-free couple values and the childbirth policy on the full state space.
#[derive(Debug, Clone)]
pub struct CoupleValueTable {
    n_grid: usize,
    /// `[gender][flat(age, pair, cs)]`; entries for child states invalid at an age are NaN.
    vbar: [Vec<f64>; 2],
    policy: Vec<bool>,
    pub annuity: [f64; 3],
}

fn flat(n_grid: usize, age: Age, i_m: usize, i_f: usize, cs: ChildState) -> usize {
    ((age.index() * n_grid + i_m) * n_grid + i_f) * ChildState::COUNT + cs.index()
}

impl CoupleValueTable {
    pub fn n_grid(&self) -> usize {
        self.n_grid
    }

    pub fn vbar(&self, g: Gender, age: Age, i_m: usize, i_f: usize, cs: ChildState) -> f64 {
        self.vbar[g.index()][flat(self.n_grid, age, i_m, i_f, cs)]
    }

    /// Full couple value at bliss `b`.
    pub fn value(
        &self,
        g: Gender,
        age: Age,
        i_m: usize,
        i_f: usize,
        cs: ChildState,
        b: f64,
    ) -> f64 {
        self.vbar(g, age, i_m, i_f, cs) + b * self.annuity[age.index()]
    }

    /// Whether the couple attempts a birth this period.
    pub fn attempts(&self, age: Age, i_m: usize, i_f: usize, cs: ChildState) -> bool {
        self.policy[flat(self.n_grid, age, i_m, i_f, cs)]
    }
}

/// Per-pair value block: `[gender][age][cs]`.
type PairValues = [[[f64; ChildState::COUNT]; 3]; 2];

const MAX_POLICY_ROUNDS: usize = 16;

/// Values at one state given the policy, returned per gender.
struct StateProblem {
    /// Period indirect utility per gender.
    v: [f64; 2],
    /// Continuation values if no birth: `[gender][same stage, next stage]`.
    keep: [[f64; 2]; 2],
    /// Continuation values after a birth, when one is possible.
    birth: Option<[[f64; 2]; 2]>,
    lambda: f64,
    delta: f64,
}

impl StateProblem {
    /// Evaluates the state's own value under `attempt`. The "stay" branch
    /// without a birth loops back on the state itself.
    fn evaluate(&self, attempt: bool, beta: f64, kappa: f64) -> [f64; 2] {
        let mut out = [0.0; 2];
        for g in 0..2 {
            out[g] = match (attempt, self.birth) {
                (true, Some(birth)) => {
                    let d = self.delta;
                    (self.v[g]
                        + beta * (1.0 - kappa) * d * birth[g][0]
                        + beta * kappa * (d * birth[g][1] + (1.0 - d) * self.keep[g][1]))
                        / (1.0 - beta * (1.0 - kappa) * (1.0 - d))
                }
                _ => (self.v[g] + beta * kappa * self.keep[g][1]) / (1.0 - beta * (1.0 - kappa)),
            };
        }
        out
    }

    fn weighted(&self, x: [f64; 2]) -> f64 {
        (1.0 - self.lambda) * x[0] + self.lambda * x[1]
    }

    /// Policy iteration on the two-action choice; returns (values, attempt).
    fn solve(&self, beta: f64, kappa: f64) -> Result<([f64; 2], bool)> {
        let Some(birth) = self.birth else {
            return Ok((self.evaluate(false, beta, kappa), false));
        };
        let with_child = self.weighted([
            (1.0 - kappa) * birth[0][0] + kappa * birth[0][1],
            (1.0 - kappa) * birth[1][0] + kappa * birth[1][1],
        ]);
        let mut attempt = false;
        for _ in 0..MAX_POLICY_ROUNDS {
            let own = self.evaluate(attempt, beta, kappa);
            let without = self.weighted([
                (1.0 - kappa) * own[0] + kappa * self.keep[0][1],
                (1.0 - kappa) * own[1] + kappa * self.keep[1][1],
            ]);
            let improved = with_child > without;
            if improved == attempt {
                return Ok((own, attempt));
            }
            attempt = improved;
        }
        Err(Error::NonConvergence {
            solver: "childbirth policy",
            iterations: MAX_POLICY_ROUNDS,
            residual: f64::NAN,
            history: vec![],
        })
    }
}

fn solve_pair(
    statics: &StaticTable,
    params: &ModelParams,
    i_m: usize,
    i_f: usize,
) -> Result<(PairValues, [[bool; ChildState::COUNT]; 3])> {
    let (beta, kappa) = (params.demo.beta, params.demo.kappa);
    let mut val: PairValues = [[[f64::NAN; ChildState::COUNT]; 3]; 2];
    let mut pol = [[false; ChildState::COUNT]; 3];
    let v = |cs: ChildState| {
        let u = statics.couple(i_m, i_f, cs).util;
        [u.v_m.unwrap(), u.v_f.unwrap()]
    };
    let (y, m, o) = (Age::Y.index(), Age::M.index(), Age::O.index());

    // Old: no births, death at rate kappa.
    for n1 in 0..=ChildState::MAX_CHILDREN {
        let cs = ChildState { n0: 0, n1 };
        let vv = v(cs);
        for g in 0..2 {
            val[g][o][cs.index()] = vv[g] / (1.0 - beta * (1.0 - kappa));
        }
    }
    let old = |val: &PairValues, g: usize, n: u8| val[g][o][ChildState { n0: 0, n1: n }.index()];

    // Middle: higher n0 first so the post-birth state is known.
    for n1 in 0..=ChildState::MAX_CHILDREN {
        for n0 in (0..=ChildState::MAX_CHILDREN - n1).rev() {
            let cs = ChildState { n0, n1 };
            let total = cs.total();
            let keep = [0, 1].map(|g| [f64::NAN, old(&val, g, total)]);
            let birth = cs.can_add_child().then(|| {
                let next = ChildState { n0: n0 + 1, n1 };
                [0, 1].map(|g| [val[g][m][next.index()], old(&val, g, total + 1)])
            });
            let problem = StateProblem {
                v: v(cs),
                keep,
                birth,
                lambda: statics.lambda(i_m, i_f, n0, params),
                delta: params.demo.delta2,
            };
            let (own, attempt) = problem.solve(beta, kappa)?;
            for g in 0..2 {
                val[g][m][cs.index()] = own[g];
            }
            pol[m][cs.index()] = attempt;
        }
    }

    // Young: children age into n1 when the parents reach middle age.
    for n0 in (0..=ChildState::MAX_CHILDREN).rev() {
        let cs = ChildState { n0, n1: 0 };
        let middle =
            |val: &PairValues, g: usize, n: u8| val[g][m][ChildState { n0: 0, n1: n }.index()];
        let keep = [0, 1].map(|g| [f64::NAN, middle(&val, g, n0)]);
        let birth = cs.can_add_child().then(|| {
            let next = ChildState { n0: n0 + 1, n1: 0 };
            [0, 1].map(|g| [val[g][y][next.index()], middle(&val, g, n0 + 1)])
        });
        let problem = StateProblem {
            v: v(cs),
            keep,
            birth,
            lambda: statics.lambda(i_m, i_f, n0, params),
            delta: params.demo.delta1,
        };
        let (own, attempt) = problem.solve(beta, kappa)?;
        for g in 0..2 {
            val[g][y][cs.index()] = own[g];
        }
        pol[y][cs.index()] = attempt;
    }
    Ok((val, pol))
}

/// Backward induction over life stages with exact per-state policy iteration.
pub fn solve_couple_values(
    statics: &StaticTable,
    params: &ModelParams,
) -> Result<CoupleValueTable> {
    let n = statics.n_grid();
    let blocks: Vec<_> = (0..n * n)
        .into_par_iter()
        .map(|pair| solve_pair(statics, params, pair / n, pair % n))
        .collect::<Result<_>>()?;
    let size = 3 * n * n * ChildState::COUNT;
    let mut vbar = [vec![f64::NAN; size], vec![f64::NAN; size]];
    let mut policy = vec![false; size];
    for (pair, (val, pol)) in blocks.iter().enumerate() {
        let (i_m, i_f) = (pair / n, pair % n);
        for age in Age::ALL {
            for cs in ChildState::ALL {
                let k = flat(n, age, i_m, i_f, cs);
                for g in 0..2 {
                    vbar[g][k] = val[g][age.index()][cs.index()];
                }
                policy[k] = pol[age.index()][cs.index()];
            }
        }
    }
    Ok(CoupleValueTable {
        n_grid: n,
        vbar,
        policy,
        annuity: annuity_factors(params.demo.beta, params.demo.kappa),
    })
}

/// Lifetime values of singles, `w[age][gender][i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SingleValueTable {
    pub w: [[Vec<f64>; 2]; 3],
}

impl SingleValueTable {
    pub fn get(&self, age: Age, g: Gender, i: usize) -> f64 {
        self.w[age.index()][g.index()][i]
    }
}

/// Marriage thresholds and probabilities for the fertile stages; indexed
/// `[age][i_m * n + i_f]`, with the old stage always empty.
#[derive(Debug, Clone, PartialEq)]
pub struct MarriageRule {
    pub n_grid: usize,
    pub bstar: [Vec<f64>; 3],
    pub prob: [Vec<f64>; 3],
}

impl MarriageRule {
    pub fn threshold(&self, age: Age, i_m: usize, i_f: usize) -> f64 {
        self.bstar[age.index()][i_m * self.n_grid + i_f]
    }

    pub fn probability(&self, age: Age, i_m: usize, i_f: usize) -> f64 {
        self.prob[age.index()][i_m * self.n_grid + i_f]
    }

    /// A rule with the given constant marriage probability at Y and M.
    pub fn constant(n_grid: usize, prob: f64, bliss: &BlissParams) -> Self {
        let p = prob.clamp(0.0, 1.0);
        let b = if p <= 0.0 {
            f64::INFINITY
        } else if p >= 1.0 {
            f64::NEG_INFINITY
        } else {
            bliss.mu_b + bliss.sigma_b * crate::grid::norm_ppf(1.0 - p)
        };
        let fill = |v: f64| vec![v; n_grid * n_grid];
        MarriageRule {
            n_grid,
            bstar: [fill(b), fill(b), fill(f64::INFINITY)],
            prob: [fill(p), fill(p), fill(0.0)],
        }
    }
}

/// Normalized wage distributions of singles met at Y and M: `[age][gender][i]`.
pub type PartnerDist = [[Vec<f64>; 2]; 2];

/// Joint threshold for the pair and each spouse's expected surplus from a
/// meeting, integrating the bliss draw above the threshold.
#[derive(Debug, Clone, Copy)]
pub(crate) struct MeetingOutcome {
    pub bstar: f64,
    pub prob: f64,
    /// `E[(V_g(b) - W_g) 1{marry}]` per gender.
    pub gain: [f64; 2],
}

pub(crate) fn meeting_outcome(
    vbar: [f64; 2],
    w: [f64; 2],
    annuity: f64,
    bliss: &BlissParams,
) -> MeetingOutcome {
    let own = [(w[0] - vbar[0]) / annuity, (w[1] - vbar[1]) / annuity];
    let bstar = own[0].max(own[1]);
    let z = (bstar - bliss.mu_b) / bliss.sigma_b;
    let prob = norm_cdf(-z);
    if prob == 0.0 {
        return MeetingOutcome {
            bstar,
            prob,
            gain: [0.0; 2],
        };
    }
    // E[b 1{b > b*}] = mu P + sigma pdf(z)
    let tail_mean = bliss.mu_b * prob + bliss.sigma_b * norm_pdf(z);
    let gain = [0, 1].map(|g| (vbar[g] - w[g]) * prob + annuity * tail_mean);
    MeetingOutcome { bstar, prob, gain }
}

/// Outcome of [`solve_singles`].
#[derive(Debug, Clone)]
pub struct SinglesSolution {
    pub values: SingleValueTable,
    pub rule: MarriageRule,
    pub iterations: usize,
    pub residual: f64,
}

/// Expected value of entering a marriage market at stage `age` for a single
/// of gender `g` at wage index `i`, given current single values.
fn market_value(
    couples: &CoupleValueTable,
    w_age: &[Vec<f64>; 2],
    partners: &[Vec<f64>; 2],
    age: Age,
    g: Gender,
    i: usize,
    bliss: &BlissParams,
) -> f64 {
    let n = couples.n_grid();
    let annuity = couples.annuity[age.index()];
    let other = &partners[g.other().index()];
    let mut total = 0.0;
    for j in 0..n {
        if other[j] == 0.0 {
            continue;
        }
        let (i_m, i_f) = match g {
            Gender::Male => (i, j),
            Gender::Female => (j, i),
        };
        let vbar = [
            couples.vbar(Gender::Male, age, i_m, i_f, ChildState::NONE),
            couples.vbar(Gender::Female, age, i_m, i_f, ChildState::NONE),
        ];
        let w = [w_age[0][i_m], w_age[1][i_f]];
        let out = meeting_outcome(vbar, w, annuity, bliss);
        total += other[j] * (w_age[g.index()][i] + out.gain[g.index()]);
    }
    total
}

/// Solves single values and the marriage rule given couple values and the
/// partner distributions, by damped fixed-point iteration on `(W_Y, W_M)`.
pub fn solve_singles(
    couples: &CoupleValueTable,
    partners: &PartnerDist,
    statics: &StaticTable,
    params: &ModelParams,
    settings: &SolverSettings,
    warm_start: Option<&SingleValueTable>,
) -> Result<SinglesSolution> {
    let n = couples.n_grid();
    let (beta, kappa) = (params.demo.beta, params.demo.kappa);
    let bliss = &params.bliss;
    let flow = |g: Gender| -> Vec<f64> { (0..n).map(|i| statics.single_value(g, i)).collect() };
    let v = [flow(Gender::Male), flow(Gender::Female)];
    let w_old = [0, 1].map(|g| {
        v[g].iter()
            .map(|x| x / (1.0 - beta * (1.0 - kappa)))
            .collect::<Vec<f64>>()
    });
    let mut w = match warm_start {
        Some(ws) => ws.w.clone(),
        None => [w_old.clone(), w_old.clone(), w_old.clone()],
    };
    w[Age::O.index()] = w_old.clone();

    let damp = settings.w_damping;
    let mut history = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    for it in 0..settings.w_max_iter {
        iterations = it + 1;
        let snapshot = w.clone();
        let mut next = snapshot.clone();
        let (y, m) = (Age::Y.index(), Age::M.index());
        next[y] = [0, 1].map(|gi| {
            let g = Gender::BOTH[gi];
            (0..n)
                .map(|i| {
                    let stay =
                        market_value(couples, &snapshot[y], &partners[0], Age::Y, g, i, bliss);
                    let age =
                        market_value(couples, &snapshot[m], &partners[1], Age::M, g, i, bliss);
                    v[gi][i] + beta * (1.0 - kappa) * stay + beta * kappa * age
                })
                .collect()
        });
        next[m] = [0, 1].map(|gi| {
            let g = Gender::BOTH[gi];
            (0..n)
                .map(|i| {
                    let stay =
                        market_value(couples, &snapshot[m], &partners[1], Age::M, g, i, bliss);
                    v[gi][i] + beta * (1.0 - kappa) * stay + beta * kappa * w_old[gi][i]
                })
                .collect()
        });
        let mut change: f64 = 0.0;
        for a in [y, m] {
            for g in 0..2 {
                for i in 0..n {
                    let updated = (1.0 - damp) * snapshot[a][g][i] + damp * next[a][g][i];
                    change = change.max((updated - snapshot[a][g][i]).abs());
                    w[a][g][i] = updated;
                }
            }
        }
        history.push(change);
        if !change.is_finite() {
            break;
        }
        if change < settings.w_tol {
            converged = true;
            break;
        }
    }
    if !converged {
        let residual = history.last().copied().unwrap_or(f64::NAN);
        let keep = history.len().saturating_sub(50);
        return Err(Error::NonConvergence {
            solver: "single values",
            iterations,
            residual,
            history: history.split_off(keep),
        });
    }

    let rule = marriage_rule(couples, &w, bliss);
    Ok(SinglesSolution {
        values: SingleValueTable { w },
        rule,
        iterations,
        residual: history.last().copied().unwrap_or(0.0),
    })
}

fn marriage_rule(
    couples: &CoupleValueTable,
    w: &[[Vec<f64>; 2]; 3],
    bliss: &BlissParams,
) -> MarriageRule {
    let n = couples.n_grid();
    let mut bstar = [
        vec![f64::INFINITY; n * n],
        vec![f64::INFINITY; n * n],
        vec![f64::INFINITY; n * n],
    ];
    let mut prob = [vec![0.0; n * n], vec![0.0; n * n], vec![0.0; n * n]];
    for age in [Age::Y, Age::M] {
        let a = age.index();
        for i_m in 0..n {
            for i_f in 0..n {
                let vbar = [
                    couples.vbar(Gender::Male, age, i_m, i_f, ChildState::NONE),
                    couples.vbar(Gender::Female, age, i_m, i_f, ChildState::NONE),
                ];
                let out = meeting_outcome(
                    vbar,
                    [w[a][0][i_m], w[a][1][i_f]],
                    couples.annuity[a],
                    bliss,
                );
                bstar[a][i_m * n + i_f] = out.bstar;
                prob[a][i_m * n + i_f] = out.prob;
            }
        }
    }
    MarriageRule {
        n_grid: n,
        bstar,
        prob,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn annuity_closed_forms() {
        let [_, _, b_o] = annuity_factors(0.96, 0.1);
        assert_relative_eq!(b_o, 7.352_941_176_470_588, max_relative = 1e-14);
        let [y, m, o] = annuity_factors(0.96, 1.0);
        assert_relative_eq!(o, 1.0);
        assert_relative_eq!(m, 1.96);
        assert_relative_eq!(y, 1.0 + 0.96 + 0.96 * 0.96, max_relative = 1e-14);
        let myopic = annuity_factors(1e-12, 0.3);
        for f in myopic {
            assert_relative_eq!(f, 1.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn annuity_solves_its_recursion() {
        let (beta, kappa) = (0.96, 0.1);
        let [y, m, o] = annuity_factors(beta, kappa);
        assert_relative_eq!(o, 1.0 + beta * (1.0 - kappa) * o, max_relative = 1e-14);
        assert_relative_eq!(
            m,
            1.0 + beta * (1.0 - kappa) * m + beta * kappa * o,
            max_relative = 1e-14
        );
        assert_relative_eq!(
            y,
            1.0 + beta * (1.0 - kappa) * y + beta * kappa * m,
            max_relative = 1e-14
        );
    }

    #[test]
    fn negative_bliss_share() {
        let mut b = BlissParams {
            mu_b: 0.0,
            sigma_b: 2.0,
        };
        assert_relative_eq!(bliss_share_negative(&b), 0.5);
        b = BlissParams {
            mu_b: -1.603,
            sigma_b: 1.326,
        };
        // Phi(1.603 / 1.326) at 30 digits.
        assert_relative_eq!(
            bliss_share_negative(&b),
            0.886_649_164_077_794_9,
            max_relative = 1e-12
        );
        assert!((bliss_share_negative(&b) - 0.887).abs() < 0.0005);
        b = BlissParams {
            mu_b: -1.0,
            sigma_b: 1e-12,
        };
        assert_eq!(bliss_share_negative(&b), 1.0);
    }

    #[test]
    fn threshold_when_values_coincide() {
        let bliss = BlissParams {
            mu_b: -1.603,
            sigma_b: 1.326,
        };
        let out = meeting_outcome([-50.0, -60.0], [-50.0, -60.0], 7.0, &bliss);
        assert_eq!(out.bstar, 0.0);
        // 1 - Phi(1.603 / 1.326) at 30 digits.
        assert_relative_eq!(out.prob, 0.113_350_835_922_205_09, max_relative = 1e-12);
    }

    #[test]
    fn gain_matches_direct_integral_of_linear_tail() {
        let bliss = BlissParams {
            mu_b: 0.3,
            sigma_b: 0.8,
        };
        let out = meeting_outcome([1.0, 2.0], [1.5, 2.2], 4.0, &bliss);
        // Simpson on [b*, mu + 12 sigma] for each spouse.
        let hi = bliss.mu_b + 12.0 * bliss.sigma_b;
        let n = 4000;
        let h = (hi - out.bstar) / n as f64;
        for (g, (vb, w)) in [(1.0, 1.5), (2.0, 2.2)].into_iter().enumerate() {
            let f = |b: f64| {
                (vb + 4.0 * b - w) * norm_pdf((b - bliss.mu_b) / bliss.sigma_b) / bliss.sigma_b
            };
            let mut s = f(out.bstar) + f(hi);
            for k in 1..n {
                s += f(out.bstar + k as f64 * h) * if k % 2 == 1 { 4.0 } else { 2.0 };
            }
            assert_relative_eq!(out.gain[g], s * h / 3.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn constant_rule_probabilities() {
        let bliss = BlissParams {
            mu_b: -1.0,
            sigma_b: 1.0,
        };
        let r = MarriageRule::constant(3, 0.25, &bliss);
        let z = (r.threshold(Age::Y, 0, 0) - bliss.mu_b) / bliss.sigma_b;
        assert_relative_eq!(1.0 - norm_cdf(z), 0.25, max_relative = 1e-9);
        assert_eq!(r.probability(Age::O, 1, 1), 0.0);
    }
}
