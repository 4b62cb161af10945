//! Brute-force oracles used to check the solvers: a dense grid search over
//! the couple problem and direct quadrature over the bliss draw.

use mfe_core::equilibrium::EquilibriumSolution;
use mfe_core::params::ModelParams;
use mfe_core::primitives::{
    bargaining_weight, domestic_requirement, utility, Age, ChildState, Gender, Marital,
};
use mfe_core::static_alloc::{partner_hours, solve_couple};
use mfe_core::SolverSettings;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use statrs::distribution::{Continuous, Normal};

/// Wage pair and child state drawn over a wide box around the wage grids.
pub fn random_state(rng: &mut ChaCha8Rng) -> (f64, f64, ChildState) {
    let w_m = (rng.random::<f64>() * 2.6 - 1.3).exp();
    let w_f = (rng.random::<f64>() * 2.6 - 1.5).exp();
    let cs = ChildState::ALL[rng.random_range(0..ChildState::COUNT)];
    (w_m, w_f, cs)
}

/// A couple optimum with both spouses working and doing domestic work.
#[derive(Debug, Clone, Copy)]
pub struct InteriorOptimum {
    pub w_m: f64,
    pub w_f: f64,
    pub cs: ChildState,
    /// `[h_m, l_m, d_m, h_f, l_f, d_f]` as shares of the time endowment.
    pub time: [f64; 6],
}

/// The first `n` interior optima found at seeded random states.
pub fn interior_optima(p: &ModelParams, n: usize, seed: u64) -> Vec<InteriorOptimum> {
    let s = SolverSettings::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let (w_m, w_f, cs) = random_state(&mut rng);
        if domestic_requirement(Marital::Married, Gender::Female, cs, &p.home) == 0.0 {
            continue;
        }
        let o = solve_couple(w_m, w_f, cs, p, &s).expect("couple solve");
        let (m, f) = (o.alloc.male.unwrap(), o.alloc.female.unwrap());
        if m.h > 1e-6 && f.h > 1e-6 && m.d > 0.0 && f.d > 0.0 {
            out.push(InteriorOptimum {
                w_m,
                w_f,
                cs,
                time: [m.h, m.l, m.d, f.h, f.l, f.d],
            });
        }
    }
    out
}

/// Best joint objective over a `k`-point grid in each of `(d_m, h_m, h_f)`,
/// with `d_f` set so the domestic requirement binds.
pub fn couple_grid_search(w_m: f64, w_f: f64, cs: ChildState, p: &ModelParams, k: usize) -> f64 {
    let lam = bargaining_weight(w_m, w_f, cs.n0, &p.bargaining).unwrap();
    let psi = domestic_requirement(Marital::Married, Gender::Female, cs, &p.home);
    let scale = 1.0 + p.demo.chi0 + p.demo.chi1 * cs.total() as f64;
    let n = cs.total();
    let step = 1.0 / k as f64;
    (0..k)
        .into_par_iter()
        .map(|i| {
            let d_m = (i as f64 + 0.5) * step * 0.999;
            let d_f = if psi == 0.0 {
                0.0
            } else {
                match partner_hours(d_m, psi, &p.home, Gender::Male) {
                    Some(x) if x < 1.0 => x,
                    _ => return f64::NEG_INFINITY,
                }
            };
            let mut best = f64::NEG_INFINITY;
            for j in 0..k {
                let h_m = j as f64 * step;
                let l_m = 1.0 - d_m - h_m;
                if l_m <= 0.0 {
                    break;
                }
                for q in 0..k {
                    let h_f = q as f64 * step;
                    let l_f = 1.0 - d_f - h_f;
                    if l_f <= 0.0 {
                        break;
                    }
                    let c = (w_m * h_m + w_f * h_f) / scale;
                    if c <= 0.0 {
                        continue;
                    }
                    let v = (1.0 - lam) * utility(c, l_m, n, &p.prefs).unwrap()
                        + lam * utility(c, l_f, n, &p.prefs).unwrap();
                    best = best.max(v);
                }
            }
            best
        })
        .reduce(|| f64::NEG_INFINITY, f64::max)
}

/// Composite Simpson rule with `nodes` (odd) points on `[a, b]`.
pub fn simpson(a: f64, b: f64, nodes: usize, f: impl Fn(f64) -> f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    let k = nodes - 1;
    let h = (b - a) / k as f64;
    let mut s = f(a) + f(b);
    for j in 1..k {
        s += if j % 2 == 1 { 4.0 } else { 2.0 } * f(a + j as f64 * h);
    }
    s * h / 3.0
}

/// Expected payoff to `g` from one meeting at stage `age`. The bliss draw is
/// integrated by quadrature over mean ± 8 sd, and the consent cut is found by
/// bisection on the pointwise acceptance test.
pub fn meeting_by_quadrature(
    eq: &EquilibriumSolution,
    age: Age,
    g: Gender,
    i_m: usize,
    i_f: usize,
    nodes: usize,
) -> f64 {
    let bl = eq.params.bliss;
    let normal = Normal::new(bl.mu_b, bl.sigma_b).unwrap();
    let (lo, hi) = (bl.mu_b - 8.0 * bl.sigma_b, bl.mu_b + 8.0 * bl.sigma_b);
    let w = |gg: Gender| {
        let i = if gg == Gender::Male { i_m } else { i_f };
        eq.single_values.get(age, gg, i)
    };
    let v = |gg: Gender, b: f64| eq.couples.value(gg, age, i_m, i_f, ChildState::NONE, b);
    let accept = |b: f64| Gender::BOTH.iter().all(|&gg| v(gg, b) >= w(gg));
    let cut = if accept(lo) {
        lo
    } else if !accept(hi) {
        hi
    } else {
        let (mut a, mut c) = (lo, hi);
        for _ in 0..200 {
            let mid = 0.5 * (a + c);
            if accept(mid) {
                c = mid;
            } else {
                a = mid;
            }
        }
        0.5 * (a + c)
    };
    simpson(lo, cut, nodes, |b| normal.pdf(b)) * w(g)
        + simpson(cut, hi, nodes, |b| normal.pdf(b) * v(g, b))
}

/// Largest gap between the solved single values at Y and M and the same
/// recursion evaluated with quadrature over the bliss draw.
pub fn single_value_quadrature_gap(eq: &EquilibriumSolution, nodes: usize) -> f64 {
    let (beta, kappa) = (eq.params.demo.beta, eq.params.demo.kappa);
    let n = eq.statics.n_grid();
    let market = |age: Age, g: Gender, i: usize| -> f64 {
        let partners = &eq.partners[age.index()][g.other().index()];
        (0..n)
            .map(|j| {
                let (i_m, i_f) = if g == Gender::Male { (i, j) } else { (j, i) };
                partners[j] * meeting_by_quadrature(eq, age, g, i_m, i_f, nodes)
            })
            .sum()
    };
    let mut worst: f64 = 0.0;
    for g in Gender::BOTH {
        for i in 0..n {
            let flow = eq.statics.single_value(g, i);
            let wy = flow
                + beta * (1.0 - kappa) * market(Age::Y, g, i)
                + beta * kappa * market(Age::M, g, i);
            let wm = flow
                + beta * (1.0 - kappa) * market(Age::M, g, i)
                + beta * kappa * eq.single_values.get(Age::O, g, i);
            worst = worst
                .max((wy - eq.single_values.get(Age::Y, g, i)).abs())
                .max((wm - eq.single_values.get(Age::M, g, i)).abs());
        }
    }
    worst
}

/// Sample correlation between decile index and rate.
pub fn trend(rates: &[f64; 10]) -> f64 {
    let xbar = 4.5;
    let ybar = rates.iter().sum::<f64>() / 10.0;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (k, &y) in rates.iter().enumerate() {
        let dx = k as f64 - xbar;
        sxy += dx * (y - ybar);
        sxx += dx * dx;
        syy += (y - ybar) * (y - ybar);
    }
    if syy == 0.0 {
        0.0
    } else {
        sxy / (sxx * syy).sqrt()
    }
}
