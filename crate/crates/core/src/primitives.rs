//! Period utility, bargaining weight, equivalence scale, and home production.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{BargainingParams, Demography, HomeProduction, Preferences};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Gender {
    #[serde(rename = "m")]
    Male,
    #[serde(rename = "f")]
    Female,
}

impl Gender {
    pub const BOTH: [Gender; 2] = [Gender::Male, Gender::Female];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn other(self) -> Gender {
        match self {
            Gender::Male => Gender::Female,
            Gender::Female => Gender::Male,
        }
    }

    pub fn code(self) -> &'static str {
        match self {
            Gender::Male => "m",
            Gender::Female => "f",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Marital {
    #[serde(rename = "single")]
    Single,
    #[serde(rename = "married")]
    Married,
}

/// Life stage: young, middle-aged, old.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Age {
    Y,
    M,
    O,
}

impl Age {
    pub const ALL: [Age; 3] = [Age::Y, Age::M, Age::O];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn next(self) -> Option<Age> {
        match self {
            Age::Y => Some(Age::M),
            Age::M => Some(Age::O),
            Age::O => None,
        }
    }

    /// Marriage and childbirth happen only before old age.
    pub fn is_fertile(self) -> bool {
        self != Age::O
    }
}

/// Counts of age-0 and age-1 children; at most three in total.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct ChildState {
    pub n0: u8,
    pub n1: u8,
}

impl ChildState {
    pub const MAX_CHILDREN: u8 = 3;
    pub const COUNT: usize = 10;

    /// All ten `(n0, n1)` pairs with `n0 + n1 <= 3`, in index order.
    pub const ALL: [ChildState; 10] = [
        ChildState { n0: 0, n1: 0 },
        ChildState { n0: 1, n1: 0 },
        ChildState { n0: 2, n1: 0 },
        ChildState { n0: 3, n1: 0 },
        ChildState { n0: 0, n1: 1 },
        ChildState { n0: 1, n1: 1 },
        ChildState { n0: 2, n1: 1 },
        ChildState { n0: 0, n1: 2 },
        ChildState { n0: 1, n1: 2 },
        ChildState { n0: 0, n1: 3 },
    ];

    pub const NONE: ChildState = ChildState { n0: 0, n1: 0 };

    pub fn new(n0: u8, n1: u8) -> Result<Self> {
        if n0 + n1 > Self::MAX_CHILDREN {
            return Err(Error::Domain(format!(
                "child state ({n0}, {n1}) exceeds {} children",
                Self::MAX_CHILDREN
            )));
        }
        Ok(ChildState { n0, n1 })
    }

    pub fn total(self) -> u8 {
        self.n0 + self.n1
    }

    pub fn index(self) -> usize {
        let base = [0, 4, 7, 9][self.n1 as usize];
        base + self.n0 as usize
    }

    /// Whether this child state can occur at the given life stage.
    pub fn valid_at(self, age: Age) -> bool {
        match age {
            Age::Y => self.n1 == 0,
            Age::M => true,
            Age::O => self.n0 == 0,
        }
    }

    pub fn can_add_child(self) -> bool {
        self.total() < Self::MAX_CHILDREN
    }
}

pub(crate) fn crra(x: f64, gamma: f64) -> f64 {
    x.powf(1.0 - gamma) / (1.0 - gamma)
}

pub(crate) fn utility_unchecked(c: f64, l: f64, n: u8, prefs: &Preferences) -> f64 {
    let child = if n == 0 || prefs.alpha_n == 0.0 {
        0.0
    } else {
        prefs.alpha_n * ((1.0 + n as f64).powf(1.0 - prefs.gamma_n) - 1.0) / (1.0 - prefs.gamma_n)
    };
    crra(c, prefs.gamma_c) + prefs.alpha_l * crra(l, prefs.gamma_l) + child
}

/// Period utility over consumption per equivalent adult, leisure, and children.
pub fn utility(c: f64, l: f64, n: u8, prefs: &Preferences) -> Result<f64> {
    if !(c > 0.0) {
        return Err(Error::Domain(format!("consumption must be > 0, got {c}")));
    }
    if !(l > 0.0 && l <= 1.0) {
        return Err(Error::Domain(format!(
            "leisure must lie in (0, 1], got {l}"
        )));
    }
    if n > ChildState::MAX_CHILDREN {
        return Err(Error::Domain(format!("at most 3 children, got {n}")));
    }
    Ok(utility_unchecked(c, l, n, prefs))
}

pub(crate) fn bargaining_weight_unchecked(w_m: f64, w_f: f64, n0: u8, b: &BargainingParams) -> f64 {
    let small = if n0 > 0 { 1.0 } else { 0.0 };
    let z = b.rho0 + b.rho1 * (w_m.ln() - w_f.ln()) + b.rho2 * small;
    1.0 / (1.0 + z.exp())
}

/// Wife's Pareto weight in the couple's objective.
pub fn bargaining_weight(w_m: f64, w_f: f64, n0: u8, b: &BargainingParams) -> Result<f64> {
    if !(w_m > 0.0 && w_f > 0.0) {
        return Err(Error::Domain(format!(
            "wages must be > 0, got ({w_m}, {w_f})"
        )));
    }
    Ok(bargaining_weight_unchecked(w_m, w_f, n0, b))
}

/// Consumption equivalence scale, linear in the total number of children.
pub fn equivalence_scale(cs: ChildState, d: &Demography) -> f64 {
    1.0 + d.chi0 + d.chi1 * cs.total() as f64
}

/// Required effective domestic labor as a fraction of the time endowment.
pub fn domestic_requirement(
    marital: Marital,
    gender: Gender,
    cs: ChildState,
    hp: &HomeProduction,
) -> f64 {
    match marital {
        Marital::Single => match gender {
            Gender::Male => hp.psi_single_m,
            Gender::Female => hp.psi_single_f,
        },
        Marital::Married => {
            let mut psi = hp.psi0;
            if cs.n0 > 0 {
                psi += hp.psi1;
            }
            if cs.total() > 0 {
                psi += hp.psi2;
            }
            psi
        }
    }
}

/// CES aggregate of the spouses' domestic hours. With `xi <= 0` a zero input
/// yields zero output (complements limit); `xi == 0` is the Cobb-Douglas case.
pub fn domestic_aggregate(d_m: f64, d_f: f64, hp: &HomeProduction) -> f64 {
    let (theta, xi) = (hp.theta, hp.xi);
    if xi <= 0.0 && (d_m <= 0.0 || d_f <= 0.0) {
        return 0.0;
    }
    if xi == 0.0 {
        return d_m.powf(1.0 - theta) * d_f.powf(theta);
    }
    ((1.0 - theta) * d_m.powf(xi) + theta * d_f.powf(xi)).powf(1.0 / xi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::ModelParams;
    use approx::assert_relative_eq;

    fn unit_prefs() -> Preferences {
        Preferences {
            gamma_c: 2.0,
            gamma_l: 2.0,
            gamma_n: 2.0,
            alpha_l: 1.0,
            alpha_n: 1.0,
        }
    }

    #[test]
    fn utility_at_unit_inputs() {
        assert_eq!(utility(1.0, 1.0, 0, &unit_prefs()).unwrap(), -2.0);
    }

    #[test]
    fn childless_term_is_zero() {
        let mut p = ModelParams::baseline().prefs;
        for gn in [0.5, 1.3, 3.0] {
            p.gamma_n = gn;
            p.alpha_n = 7.0;
            let with = utility(1.0, 1.0, 0, &p).unwrap();
            p.alpha_n = 0.0;
            assert_eq!(with, utility(1.0, 1.0, 0, &p).unwrap());
        }
    }

    #[test]
    fn utility_at_estimated_values() {
        // 0.5^-0.582/-0.582 + 2.335*0.5^-0.341/-0.341 + 3.211*(3^-0.3 - 1)/-0.3, at 30 digits.
        let p = ModelParams::baseline().prefs;
        let u = utility(0.5, 0.5, 2, &p).unwrap();
        let expected = -8.240_071_137_453_552;
        assert_relative_eq!(u, expected, max_relative = 1e-12);
    }

    #[test]
    fn utility_domain_errors() {
        let p = unit_prefs();
        assert!(utility(0.0, 0.5, 0, &p).is_err());
        assert!(utility(1.0, 0.0, 0, &p).is_err());
        assert!(utility(1.0, 1.5, 0, &p).is_err());
        assert!(utility(1.0, 0.5, 4, &p).is_err());
    }

    #[test]
    fn equal_bargaining_without_coefficients() {
        let b = BargainingParams {
            rho0: 0.0,
            rho1: 0.0,
            rho2: 0.0,
        };
        assert_eq!(bargaining_weight(3.0, 0.2, 1, &b).unwrap(), 0.5);
    }

    #[test]
    fn bargaining_equal_wages_no_small_children() {
        let b = ModelParams::baseline().bargaining;
        let lam = bargaining_weight(1.7, 1.7, 0, &b).unwrap();
        assert_relative_eq!(lam, 1.0 / (1.0 + (-0.267f64).exp()), max_relative = 1e-15);
    }

    #[test]
    fn bargaining_at_estimated_values() {
        // 1/(1 + exp(-0.267 + 1.463 ln 2 + 0.782)) at 30 digits.
        let b = ModelParams::baseline().bargaining;
        let lam = bargaining_weight(2.0, 1.0, 1, &b).unwrap();
        assert_relative_eq!(lam, 0.178_129_163_434_669_43, max_relative = 1e-12);
        assert!(bargaining_weight(0.0, 1.0, 0, &b).is_err());
    }

    #[test]
    fn oecd_scale() {
        let d = ModelParams::baseline().demo;
        assert_relative_eq!(equivalence_scale(ChildState::NONE, &d), 1.5);
        assert_relative_eq!(equivalence_scale(ChildState { n0: 1, n1: 1 }, &d), 2.1);
        let three = equivalence_scale(ChildState { n0: 3, n1: 0 }, &d);
        assert_relative_eq!(three, 2.4);
        assert!(three < 5.0);
    }

    #[test]
    fn requirements() {
        let hp = ModelParams::baseline().home;
        assert_eq!(
            domestic_requirement(Marital::Single, Gender::Male, ChildState::NONE, &hp),
            0.032
        );
        assert_eq!(
            domestic_requirement(Marital::Married, Gender::Male, ChildState::NONE, &hp),
            hp.psi0
        );
        let small = ChildState { n0: 1, n1: 0 };
        assert_relative_eq!(
            domestic_requirement(Marital::Married, Gender::Female, small, &hp),
            0.388,
            max_relative = 1e-14
        );
        let older = ChildState { n0: 0, n1: 2 };
        assert_relative_eq!(
            domestic_requirement(Marital::Married, Gender::Female, older, &hp),
            0.162,
            max_relative = 1e-14
        );
    }

    #[test]
    fn ces_special_cases() {
        let mut hp = ModelParams::baseline().home;
        assert_relative_eq!(domestic_aggregate(0.2, 0.2, &hp), 0.2, max_relative = 1e-14);
        assert_eq!(domestic_aggregate(0.0, 0.3, &hp), 0.0);
        hp.theta = 0.5;
        hp.xi = 1.0;
        assert_relative_eq!(
            domestic_aggregate(0.1, 0.4, &hp),
            0.25,
            max_relative = 1e-14
        );
        hp.xi = 0.0;
        assert_relative_eq!(domestic_aggregate(0.1, 0.4, &hp), 0.2, max_relative = 1e-14);
    }

    #[test]
    fn ces_at_estimated_values() {
        // (0.169 * 0.05^-0.029 + 0.831 * 0.3^-0.029)^(1/-0.029), at 30 digits.
        let hp = ModelParams::baseline().home;
        let d = domestic_aggregate(0.05, 0.3, &hp);
        assert_relative_eq!(d, 0.220_161_724_590_219_84, max_relative = 1e-10);
    }

    #[test]
    fn child_state_indexing() {
        for (i, cs) in ChildState::ALL.iter().enumerate() {
            assert_eq!(cs.index(), i);
        }
        assert!(ChildState::new(2, 2).is_err());
        assert!(!ChildState { n0: 1, n1: 1 }.valid_at(Age::Y));
        assert!(!ChildState { n0: 1, n1: 0 }.valid_at(Age::O));
    }
}
