//! Model moments from the stationary distributions.

use crate::equilibrium::EquilibriumSolution;
use crate::error::{Error, Result};
use crate::primitives::{Age, ChildState, Gender};

macro_rules! moment_vector {
    ($($field:ident),* $(,)?) => {
        /// Named model moments. The first twenty follow the targeted moment
        /// table; the rest are reported alongside.
        #[derive(Debug, Clone, Copy, Default, PartialEq)]
        pub struct MomentVector {
            $(pub $field: f64,)*
        }

        impl MomentVector {
            pub const NAMES: &'static [&'static str] = &[$(stringify!($field)),*];

            pub fn get(&self, name: &str) -> Option<f64> {
                match name {
                    $(stringify!($field) => Some(self.$field),)*
                    _ => None,
                }
            }

            /// Sets a moment by name; returns false for an unknown name.
            pub fn set(&mut self, name: &str, value: f64) -> bool {
                match name {
                    $(stringify!($field) => { self.$field = value; true })*
                    _ => false,
                }
            }

            pub fn values(&self) -> Vec<(&'static str, f64)> {
                vec![$((stringify!($field), self.$field)),*]
            }
        }
    };
}

moment_vector!(
    single_l_m,
    single_l_f,
    married_l_m_none,
    married_l_f_none,
    married_l_m_small,
    married_l_f_small,
    married_l_m_older,
    married_l_f_older,
    married_d_m_none,
    married_d_f_none,
    married_d_m_small,
    married_d_f_small,
    married_d_m_older,
    married_d_f_older,
    share_one_child,
    share_two_children,
    share_three_plus,
    single_log_wage_gap,
    single_log_wage_sd_f,
    never_married_share,
    marriage_rate,
    cfr,
    children_per_woman,
    wife_domestic_share,
);

impl MomentVector {
    /// The twenty moments of the baseline target table, in table order.
    pub const TARGETED: [&'static str; 20] = [
        "single_l_m",
        "single_l_f",
        "married_l_m_none",
        "married_l_f_none",
        "married_l_m_small",
        "married_l_f_small",
        "married_l_m_older",
        "married_l_f_older",
        "married_d_m_none",
        "married_d_f_none",
        "married_d_m_small",
        "married_d_f_small",
        "married_d_m_older",
        "married_d_f_older",
        "share_one_child",
        "share_two_children",
        "share_three_plus",
        "single_log_wage_gap",
        "single_log_wage_sd_f",
        "never_married_share",
    ];
}

/// Child-status groups used for couple moments.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChildStatus {
    None,
    Small,
    Older,
}

impl ChildStatus {
    pub fn of(cs: ChildState) -> Self {
        if cs.n0 > 0 {
            ChildStatus::Small
        } else if cs.n1 > 0 {
            ChildStatus::Older
        } else {
            ChildStatus::None
        }
    }
}

/// Stages pooled for singles' log-wage moments.
pub const WAGE_MOMENT_AGES: [Age; 2] = [Age::Y, Age::M];

#[derive(Default, Clone, Copy)]
struct Mean {
    sum: f64,
    mass: f64,
}

impl Mean {
    fn add(&mut self, x: f64, m: f64) {
        self.sum += x * m;
        self.mass += m;
    }

    fn get(self) -> f64 {
        if self.mass > 0.0 {
            self.sum / self.mass
        } else {
            f64::NAN
        }
    }
}

pub fn compute_moments(eq: &EquilibriumSolution) -> MomentVector {
    let st = &eq.statics;
    let sd = &eq.single_dist;
    let n = st.n_grid();
    let mut out = MomentVector::default();

    let mut single_l = [Mean::default(); 2];
    for g in Gender::BOTH {
        for age in Age::ALL {
            for i in 0..n {
                let l = st.single(g, i).0.member(g).map_or(f64::NAN, |t| t.l);
                single_l[g.index()].add(l, sd.mass[age.index()][g.index()][i]);
            }
        }
    }
    out.single_l_m = single_l[0].get();
    out.single_l_f = single_l[1].get();

    // [status][l_m, l_f, d_m, d_f]
    let mut couple = [[Mean::default(); 4]; 3];
    let mut domestic = [0.0; 2];
    let mut old_children = [0.0; 4];
    for (age, i_m, i_f, cs, m) in eq.married_dist.cells() {
        let alloc = &st.couple(i_m, i_f, cs).alloc;
        let (tm, tf) = (alloc.male.unwrap(), alloc.female.unwrap());
        let k = ChildStatus::of(cs) as usize;
        couple[k][0].add(tm.l, m);
        couple[k][1].add(tf.l, m);
        couple[k][2].add(tm.d, m);
        couple[k][3].add(tf.d, m);
        domestic[0] += tm.d * m;
        domestic[1] += tf.d * m;
        if age == Age::O {
            old_children[cs.total() as usize] += m;
        }
    }
    [
        out.married_l_m_none,
        out.married_l_f_none,
        out.married_d_m_none,
        out.married_d_f_none,
    ] = couple[0].map(Mean::get);
    [
        out.married_l_m_small,
        out.married_l_f_small,
        out.married_d_m_small,
        out.married_d_f_small,
    ] = couple[1].map(Mean::get);
    [
        out.married_l_m_older,
        out.married_l_f_older,
        out.married_d_m_older,
        out.married_d_f_older,
    ] = couple[2].map(Mean::get);
    out.wife_domestic_share = domestic[1] / (domestic[0] + domestic[1]);

    let single_old = sd.total(Age::O, Gender::Female);
    let married_old: f64 = old_children.iter().sum();
    let women_old = single_old + married_old;
    out.never_married_share = single_old / women_old;
    out.marriage_rate = 1.0 - out.never_married_share;
    out.share_one_child = old_children[1] / women_old;
    out.share_two_children = old_children[2] / women_old;
    out.share_three_plus = old_children[3] / women_old;
    let children: f64 = (1..4).map(|k| k as f64 * old_children[k]).sum();
    out.children_per_woman = children / women_old;
    out.cfr = if married_old > 0.0 {
        children / married_old
    } else {
        0.0
    };

    let mut logw = [Mean::default(); 2];
    let mut logw2 = [Mean::default(); 2];
    for g in Gender::BOTH {
        let grid = st.grid(g);
        for age in WAGE_MOMENT_AGES {
            for i in 0..n {
                let x = grid.levels[i].ln();
                let m = sd.mass[age.index()][g.index()][i];
                logw[g.index()].add(x, m);
                logw2[g.index()].add(x * x, m);
            }
        }
    }
    out.single_log_wage_gap = logw[0].get() - logw[1].get();
    let mf = logw[1].get();
    out.single_log_wage_sd_f = (logw2[1].get() - mf * mf).max(0.0).sqrt();
    out
}

/// One group of individuals with common earnings: total mass and married mass.
#[derive(Debug, Clone, Copy)]
pub struct EarningsMass {
    pub earnings: f64,
    pub mass: f64,
    pub married: f64,
}

/// Married share within each earnings decile.
///
/// Cumulative population and married shares are joined linearly between the
/// sorted earnings points; the decile rate is the slope of married share over
/// each tenth of the population.
pub fn decile_rates(mut points: Vec<EarningsMass>) -> Result<[f64; 10]> {
    points.retain(|p| p.mass > 0.0);
    points.sort_by(|a, b| a.earnings.total_cmp(&b.earnings));
    let total: f64 = points.iter().map(|p| p.mass).sum();
    if points.is_empty() || !(total > 0.0) {
        return Err(Error::EmptyDecile(
            "no individuals with positive mass".into(),
        ));
    }
    // Merge ties so the CDF is a function of earnings.
    let mut cum_q = vec![0.0];
    let mut cum_m = vec![0.0];
    let (mut q, mut m) = (0.0, 0.0);
    for (k, p) in points.iter().enumerate() {
        q += p.mass;
        m += p.married;
        let last_of_tie = points.get(k + 1).is_none_or(|nx| nx.earnings != p.earnings);
        if last_of_tie {
            cum_q.push(q / total);
            cum_m.push(m / total);
        }
    }
    let at = |x: f64| -> f64 {
        if x >= 1.0 {
            return *cum_m.last().unwrap();
        }
        let k = cum_q.partition_point(|&v| v <= x).max(1);
        let (q0, q1) = (cum_q[k - 1], cum_q[k]);
        let (m0, m1) = (cum_m[k - 1], cum_m[k]);
        m0 + (m1 - m0) * (x - q0) / (q1 - q0)
    };
    let mut out = [0.0; 10];
    for (d, r) in out.iter_mut().enumerate() {
        *r = (at(0.1 * (d + 1) as f64) - at(0.1 * d as f64)) / 0.1;
    }
    Ok(out)
}

/// Marriage rate by own-earnings decile at stage O, `[male, female]`.
pub fn marriage_rate_by_decile(eq: &EquilibriumSolution) -> Result<[[f64; 10]; 2]> {
    let st = &eq.statics;
    let n = st.n_grid();
    let mut points = [Vec::new(), Vec::new()];
    for g in Gender::BOTH {
        let levels = &st.grid(g).levels;
        for (i, w) in levels.iter().enumerate() {
            let h = st.single(g, i).0.member(g).map_or(0.0, |t| t.h);
            points[g.index()].push(EarningsMass {
                earnings: w * h,
                mass: eq.single_dist.mass[Age::O.index()][g.index()][i],
                married: 0.0,
            });
        }
    }
    for (age, i_m, i_f, cs, m) in eq.married_dist.cells() {
        if age != Age::O {
            continue;
        }
        let alloc = &st.couple(i_m, i_f, cs).alloc;
        for (g, i) in [(Gender::Male, i_m), (Gender::Female, i_f)] {
            let h = alloc.member(g).map_or(0.0, |t| t.h);
            points[g.index()].push(EarningsMass {
                earnings: st.grid(g).levels[i] * h,
                mass: m,
                married: m,
            });
        }
    }
    debug_assert!(points[0].len() >= n);
    let [pm, pf] = points;
    Ok([decile_rates(pm)?, decile_rates(pf)?])
}
