//! Agent-based forward simulation from a solved equilibrium.
//!
//! Every agent owns a ChaCha stream keyed by the master seed and its id;
//! couples draw household events from the husband's stream. Matching uses a
//! separate stream per period.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::equilibrium::EquilibriumSolution;
use crate::error::Result;
use crate::moments::{decile_rates, ChildStatus, EarningsMass, MomentVector, WAGE_MOMENT_AGES};
use crate::primitives::{Age, ChildState, Gender, Marital};
use crate::static_alloc::MemberTime;

/// Weekly hours in the time endowment.
pub const WEEKLY_HOURS: f64 = 112.0;

/// One agent-period observation; field order is the CSV column order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelRecord {
    pub agent_id: u64,
    pub period: u32,
    pub gender: Gender,
    pub age: Age,
    pub wage: f64,
    pub marital: Marital,
    pub spouse_id: Option<u64>,
    pub n0: u8,
    pub n1: u8,
    /// Periods since the household's first child, if one is ever observed.
    pub event_time: Option<i32>,
    pub h: f64,
    pub l: f64,
    pub d: f64,
}

#[derive(Debug, Clone)]
struct Person {
    id: u64,
    wage: usize,
    age: Age,
    /// Slot of the spouse in the other gender's vector.
    spouse: Option<usize>,
    /// Household children; kept on both spouses.
    cs: ChildState,
    married_now: bool,
    rng: ChaCha8Rng,
}

const MATCH_STREAM_KEY: u64 = 0x6d61_7463_6869_6e67;

fn agent_rng(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn draw_index(rng: &mut ChaCha8Rng, probs: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Population of `n_agents` men and `n_agents` women stepped one period at a time.
pub struct Simulation<'a> {
    eq: &'a EquilibriumSolution,
    seed: u64,
    period: u32,
    next_id: u64,
    people: [Vec<Person>; 2],
}

impl<'a> Simulation<'a> {
    /// Everyone starts single at stage Y.
    pub fn new(eq: &'a EquilibriumSolution, n_agents: usize, seed: u64) -> Self {
        Self::with_population(eq, [n_agents, n_agents], seed)
    }

    /// `counts[g]` agents of each gender, all single at stage Y.
    pub fn with_population(eq: &'a EquilibriumSolution, counts: [usize; 2], seed: u64) -> Self {
        let mut sim = Simulation {
            eq,
            seed,
            period: 0,
            next_id: 0,
            people: counts.map(Vec::with_capacity),
        };
        for g in Gender::BOTH {
            for _ in 0..counts[g.index()] {
                let p = sim.newborn(g);
                sim.people[g.index()].push(p);
            }
        }
        sim
    }

    fn newborn(&mut self, g: Gender) -> Person {
        let id = self.next_id;
        self.next_id += 1;
        let mut rng = agent_rng(self.seed, id);
        let wage = draw_index(&mut rng, &self.eq.statics.grid(g).probs);
        Person {
            id,
            wage,
            age: Age::Y,
            spouse: None,
            cs: ChildState::NONE,
            married_now: false,
            rng,
        }
    }

    pub fn period(&self) -> u32 {
        self.period
    }

    /// Time use of the person in slot `k` this period.
    fn time_use(&self, g: Gender, k: usize) -> (MemberTime, Option<(usize, usize)>) {
        let p = &self.people[g.index()][k];
        let st = &self.eq.statics;
        match p.spouse {
            None => (*st.single(g, p.wage).0.member(g).unwrap(), None),
            Some(s) => {
                let other = &self.people[g.other().index()][s];
                let (i_m, i_f) = match g {
                    Gender::Male => (p.wage, other.wage),
                    Gender::Female => (other.wage, p.wage),
                };
                (
                    *st.couple(i_m, i_f, p.cs).alloc.member(g).unwrap(),
                    Some((i_m, i_f)),
                )
            }
        }
    }

    /// Observations for the current period, men first, by slot.
    pub fn records(&self) -> Vec<PanelRecord> {
        let mut out = Vec::with_capacity(self.people[0].len() + self.people[1].len());
        for g in Gender::BOTH {
            for (k, p) in self.people[g.index()].iter().enumerate() {
                let (t, _) = self.time_use(g, k);
                out.push(PanelRecord {
                    agent_id: p.id,
                    period: self.period,
                    gender: g,
                    age: p.age,
                    wage: self.eq.statics.grid(g).levels[p.wage],
                    marital: if p.spouse.is_some() {
                        Marital::Married
                    } else {
                        Marital::Single
                    },
                    spouse_id: p.spouse.map(|s| self.people[g.other().index()][s].id),
                    n0: p.cs.n0,
                    n1: p.cs.n1,
                    event_time: None,
                    h: t.h * WEEKLY_HOURS,
                    l: t.l * WEEKLY_HOURS,
                    d: t.d * WEEKLY_HOURS,
                });
            }
        }
        out
    }

    fn matching(&mut self) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ MATCH_STREAM_KEY);
        rng.set_stream(self.period as u64);
        let bliss = &self.eq.params.bliss;
        let normal = Normal::new(bliss.mu_b, bliss.sigma_b).expect("validated bliss parameters");
        for age in [Age::Y, Age::M] {
            let mut pools = Gender::BOTH.map(|g| {
                self.people[g.index()]
                    .iter()
                    .enumerate()
                    .filter(|(_, p)| p.spouse.is_none() && p.age == age)
                    .map(|(k, _)| k)
                    .collect::<Vec<_>>()
            });
            pools[0].shuffle(&mut rng);
            pools[1].shuffle(&mut rng);
            for (&km, &kf) in pools[0].iter().zip(&pools[1]) {
                let b = normal.sample(&mut rng);
                let (i_m, i_f) = (self.people[0][km].wage, self.people[1][kf].wage);
                if b > self.eq.rule.threshold(age, i_m, i_f) {
                    for (g, k, s) in [(0, km, kf), (1, kf, km)] {
                        let p = &mut self.people[g][k];
                        p.spouse = Some(s);
                        p.cs = ChildState::NONE;
                        p.married_now = true;
                    }
                }
            }
        }
    }

    fn transitions(&mut self) {
        let kappa = self.eq.params.demo.kappa;
        let demo = &self.eq.params.demo;
        let mut dead = [Vec::new(), Vec::new()];
        // Singles of both genders, then couples through the husband.
        for g in Gender::BOTH {
            for k in 0..self.people[g.index()].len() {
                let p = &mut self.people[g.index()][k];
                if p.spouse.is_some() {
                    continue;
                }
                let ages: bool = p.rng.random::<f64>() < kappa;
                if ages {
                    match p.age.next() {
                        Some(a) => p.age = a,
                        None => dead[g.index()].push(k),
                    }
                }
            }
        }
        for km in 0..self.people[0].len() {
            let Some(kf) = self.people[0][km].spouse else {
                continue;
            };
            let (age, i_f) = (self.people[0][km].age, self.people[1][kf].wage);
            let husband = &mut self.people[0][km];
            let cs = husband.cs;
            let newlywed = std::mem::replace(&mut husband.married_now, false);
            let delta = match age {
                Age::Y => demo.delta1,
                Age::M => demo.delta2,
                Age::O => 0.0,
            };
            let u_birth: f64 = husband.rng.random();
            let u_age: f64 = husband.rng.random();
            let attempt = !newlywed
                && age.is_fertile()
                && cs.can_add_child()
                && self.eq.couples.attempts(age, husband.wage, i_f, cs);
            let born = u8::from(attempt && u_birth < delta);
            let n0 = cs.n0 + born;
            let (next_age, next_cs) = if u_age < kappa {
                match age {
                    Age::Y => (Some(Age::M), ChildState { n0: 0, n1: n0 }),
                    Age::M => (
                        Some(Age::O),
                        ChildState {
                            n0: 0,
                            n1: n0 + cs.n1,
                        },
                    ),
                    Age::O => (None, cs),
                }
            } else {
                (Some(age), ChildState { n0, n1: cs.n1 })
            };
            match next_age {
                Some(a) => {
                    for (g, k) in [(0, km), (1, kf)] {
                        let p = &mut self.people[g][k];
                        p.age = a;
                        p.cs = next_cs;
                        p.married_now = false;
                    }
                }
                None => {
                    dead[0].push(km);
                    dead[1].push(kf);
                }
            }
        }
        for g in Gender::BOTH {
            let mut slots = std::mem::take(&mut dead[g.index()]);
            slots.sort_unstable();
            for k in slots {
                let p = self.newborn(g);
                self.people[g.index()][k] = p;
            }
        }
    }

    /// Advances to the next period: matching at the end of the current
    /// period, then births and aging.
    pub fn step(&mut self) {
        self.matching();
        self.transitions();
        self.period += 1;
    }

    /// Accumulates the cross-section of the current period into `acc`.
    pub fn observe(&self, acc: &mut CrossSection) {
        let st = &self.eq.statics;
        for g in Gender::BOTH {
            for (k, p) in self.people[g.index()].iter().enumerate() {
                let (t, pair) = self.time_use(g, k);
                let earnings = st.grid(g).levels[p.wage] * t.h;
                let married = pair.is_some();
                if p.age == Age::O {
                    acc.deciles[g.index()].push(EarningsMass {
                        earnings,
                        mass: 1.0,
                        married: if married { 1.0 } else { 0.0 },
                    });
                }
                match pair {
                    None => {
                        acc.single_l[g.index()].push(t.l);
                        if WAGE_MOMENT_AGES.contains(&p.age) {
                            acc.single_logw[g.index()].push(st.grid(g).levels[p.wage].ln());
                        }
                    }
                    Some(_) if g == Gender::Male => {
                        let wife = self.time_use(Gender::Female, p.spouse.unwrap()).0;
                        let s = ChildStatus::of(p.cs) as usize;
                        acc.couple[s][0].push(t.l);
                        acc.couple[s][1].push(wife.l);
                        acc.couple[s][2].push(t.d);
                        acc.couple[s][3].push(wife.d);
                    }
                    Some(_) => {}
                }
                if g == Gender::Female && p.age == Age::O {
                    acc.old_women
                        .push(if married { Some(p.cs.total()) } else { None });
                }
            }
        }
    }
}

/// Raw cross-sectional observations, from which moments and their Monte
/// Carlo standard errors are computed.
#[derive(Debug, Clone, Default)]
pub struct CrossSection {
    single_l: [Vec<f64>; 2],
    single_logw: [Vec<f64>; 2],
    /// `[status][l_m, l_f, d_m, d_f]`, one entry per couple.
    couple: [[Vec<f64>; 4]; 3],
    /// Children of each old woman; `None` if never married.
    old_women: Vec<Option<u8>>,
    deciles: [Vec<EarningsMass>; 2],
}

/// A simulated moment with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimulatedMoment {
    pub name: &'static str,
    pub value: f64,
    pub se: f64,
}

fn mean_se(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    if x.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let m = x.iter().sum::<f64>() / n;
    let v = x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0).max(1.0);
    (m, (v / n).sqrt())
}

/// Standard error of a ratio of means by the delta method.
fn ratio_se(num: &[f64], den: &[f64]) -> (f64, f64) {
    let n = num.len() as f64;
    let (a, b) = (num.iter().sum::<f64>() / n, den.iter().sum::<f64>() / n);
    let r = a / b;
    let v = num
        .iter()
        .zip(den)
        .map(|(x, y)| {
            let e = x - r * y;
            e * e
        })
        .sum::<f64>()
        / (n - 1.0).max(1.0);
    (r, (v / n).sqrt() / b)
}

impl CrossSection {
    pub fn moments(&self) -> Vec<SimulatedMoment> {
        let mut out = Vec::new();
        let mut push = |name: &'static str, (value, se): (f64, f64)| {
            out.push(SimulatedMoment { name, value, se })
        };
        push("single_l_m", mean_se(&self.single_l[0]));
        push("single_l_f", mean_se(&self.single_l[1]));
        let names = [
            [
                "married_l_m_none",
                "married_l_f_none",
                "married_d_m_none",
                "married_d_f_none",
            ],
            [
                "married_l_m_small",
                "married_l_f_small",
                "married_d_m_small",
                "married_d_f_small",
            ],
            [
                "married_l_m_older",
                "married_l_f_older",
                "married_d_m_older",
                "married_d_f_older",
            ],
        ];
        let order = [
            (0, 0),
            (0, 1),
            (1, 0),
            (1, 1),
            (2, 0),
            (2, 1),
            (0, 2),
            (0, 3),
            (1, 2),
            (1, 3),
            (2, 2),
            (2, 3),
        ];
        for (s, k) in order {
            push(names[s][k], mean_se(&self.couple[s][k]));
        }
        let indicator = |f: &dyn Fn(&Option<u8>) -> bool| -> Vec<f64> {
            self.old_women
                .iter()
                .map(|w| if f(w) { 1.0 } else { 0.0 })
                .collect()
        };
        push("share_one_child", mean_se(&indicator(&|w| *w == Some(1))));
        push(
            "share_two_children",
            mean_se(&indicator(&|w| *w == Some(2))),
        );
        push(
            "share_three_plus",
            mean_se(&indicator(&|w| matches!(w, Some(k) if *k >= 3))),
        );
        let (gm, sm) = mean_se(&self.single_logw[0]);
        let (gf, sf) = mean_se(&self.single_logw[1]);
        push("single_log_wage_gap", (gm - gf, (sm * sm + sf * sf).sqrt()));
        let sq: Vec<f64> = self.single_logw[1]
            .iter()
            .map(|x| (x - gf) * (x - gf))
            .collect();
        let (var, var_se) = mean_se(&sq);
        let sd = var.sqrt();
        push("single_log_wage_sd_f", (sd, var_se / (2.0 * sd)));
        let never = indicator(&|w| w.is_none());
        let (nm, nm_se) = mean_se(&never);
        push("never_married_share", (nm, nm_se));
        push("marriage_rate", (1.0 - nm, nm_se));
        let kids: Vec<f64> = self
            .old_women
            .iter()
            .map(|w| w.unwrap_or(0) as f64)
            .collect();
        let ever: Vec<f64> = never.iter().map(|x| 1.0 - x).collect();
        push("cfr", ratio_se(&kids, &ever));
        push("children_per_woman", mean_se(&kids));
        let dm: Vec<f64> = self
            .couple
            .iter()
            .flat_map(|c| c[2].iter().copied())
            .collect();
        let df: Vec<f64> = self
            .couple
            .iter()
            .flat_map(|c| c[3].iter().copied())
            .collect();
        let total: Vec<f64> = dm.iter().zip(&df).map(|(a, b)| a + b).collect();
        push("wife_domestic_share", ratio_se(&df, &total));
        debug_assert!(out.iter().all(|m| MomentVector::NAMES.contains(&m.name)));
        out
    }

    /// Marriage rate by earnings decile among observed stage-O individuals.
    pub fn decile_rates(&self) -> Result<[[f64; 10]; 2]> {
        Ok([
            decile_rates(self.deciles[0].clone())?,
            decile_rates(self.deciles[1].clone())?,
        ])
    }
}

/// Panel of `n_agents` men and women over `n_periods`, with event time
/// relative to each agent's first observed child.
pub fn simulate_panel(
    eq: &EquilibriumSolution,
    n_agents: usize,
    n_periods: u32,
    seed: u64,
) -> Vec<PanelRecord> {
    let mut sim = Simulation::new(eq, n_agents, seed);
    let mut panel = Vec::with_capacity(2 * n_agents * n_periods as usize);
    for t in 0..n_periods {
        panel.extend(sim.records());
        if t + 1 < n_periods {
            sim.step();
        }
    }
    assign_event_time(&mut panel);
    panel
}

/// Sets `event_time` from the first period each agent lives with a child.
pub fn assign_event_time(panel: &mut [PanelRecord]) {
    let mut first = std::collections::HashMap::new();
    for r in panel.iter() {
        if r.n0 + r.n1 > 0 {
            first
                .entry(r.agent_id)
                .and_modify(|p: &mut u32| *p = (*p).min(r.period))
                .or_insert(r.period);
        }
    }
    for r in panel.iter_mut() {
        r.event_time = first.get(&r.agent_id).map(|&c| r.period as i32 - c as i32);
    }
}

/// Cross-sectional moments after `burn_in` periods, pooled over
/// `n_obs_periods` periods spaced `spacing` apart.
pub fn simulate_cross_section(
    eq: &EquilibriumSolution,
    n_agents: usize,
    burn_in: u32,
    n_obs_periods: u32,
    spacing: u32,
    seed: u64,
) -> CrossSection {
    let mut sim = Simulation::new(eq, n_agents, seed);
    let mut acc = CrossSection::default();
    for _ in 0..burn_in {
        sim.step();
    }
    for k in 0..n_obs_periods {
        if k > 0 {
            for _ in 0..spacing.max(1) {
                sim.step();
            }
        }
        sim.observe(&mut acc);
    }
    acc
}

/// Marriage rate by earnings decile from stage-O panel records.
pub fn decile_rates_from_panel(panel: &[PanelRecord]) -> Result<[[f64; 10]; 2]> {
    let mut points = [Vec::new(), Vec::new()];
    for r in panel.iter().filter(|r| r.age == Age::O) {
        points[r.gender.index()].push(EarningsMass {
            earnings: r.wage * r.h,
            mass: 1.0,
            married: if r.marital == Marital::Married {
                1.0
            } else {
                0.0
            },
        });
    }
    let [pm, pf] = points;
    Ok([decile_rates(pm)?, decile_rates(pf)?])
}
