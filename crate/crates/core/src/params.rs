//! Structural parameters and their flat key-value file format.
//!
//! A parameter file is TOML with one top-level key per symbol, e.g.
//!
//! ```toml
//! gamma_c = 1.582
//! rho0 = -0.267
//! n_wage_grid = 15
//! ```
//!
//! An optional `[solver]` table overrides numerical settings.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Preferences {
    pub gamma_c: f64,
    pub gamma_l: f64,
    pub gamma_n: f64,
    pub alpha_l: f64,
    pub alpha_n: f64,
}

/// Coefficients of the wife's logistic bargaining weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BargainingParams {
    pub rho0: f64,
    pub rho1: f64,
    pub rho2: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HomeProduction {
    /// Wife's productivity share in the CES aggregator.
    pub theta: f64,
    /// Substitution exponent; negative means complements.
    pub xi: f64,
    pub psi0: f64,
    pub psi1: f64,
    pub psi2: f64,
    pub psi_single_m: f64,
    pub psi_single_f: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WageDistParams {
    pub mu_m: f64,
    pub sigma_m: f64,
    pub mu_f: f64,
    pub sigma_f: f64,
    pub n_grid: usize,
}

/// Normal match-quality shock drawn once per meeting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlissParams {
    pub mu_b: f64,
    pub sigma_b: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Demography {
    pub beta: f64,
    pub kappa: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub chi0: f64,
    pub chi1: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelParams {
    pub prefs: Preferences,
    pub bargaining: BargainingParams,
    pub home: HomeProduction,
    pub wages: WageDistParams,
    pub bliss: BlissParams,
    pub demo: Demography,
}

/// Every real-valued key of the parameter file, in file order.
pub const PARAM_KEYS: [&str; 27] = [
    "gamma_c",
    "gamma_l",
    "gamma_n",
    "alpha_l",
    "alpha_n",
    "rho0",
    "rho1",
    "rho2",
    "mu_wm",
    "sigma_wm",
    "mu_wf",
    "sigma_wf",
    "mu_b",
    "sigma_b",
    "theta",
    "xi",
    "psi0",
    "psi1",
    "psi2",
    "psi_single_m",
    "psi_single_f",
    "beta",
    "kappa",
    "delta1",
    "delta2",
    "chi0",
    "chi1",
];

impl ModelParams {
    /// The 2019-2023 baseline: a priori values plus the minimum-distance estimates.
    pub fn baseline() -> Self {
        ModelParams {
            prefs: Preferences {
                gamma_c: 1.582,
                gamma_l: 1.341,
                gamma_n: 1.300,
                alpha_l: 2.335,
                alpha_n: 3.211,
            },
            bargaining: BargainingParams {
                rho0: -0.267,
                rho1: 1.463,
                rho2: 0.782,
            },
            home: HomeProduction {
                theta: 0.831,
                xi: -0.029,
                psi0: 0.110,
                psi1: 0.226,
                psi2: 0.052,
                psi_single_m: 0.032,
                psi_single_f: 0.056,
            },
            wages: WageDistParams {
                mu_m: 0.0,
                sigma_m: 0.706,
                mu_f: -0.139,
                sigma_f: 0.771,
                n_grid: 15,
            },
            bliss: BlissParams {
                mu_b: -1.603,
                sigma_b: 1.326,
            },
            demo: Demography {
                beta: 0.96,
                kappa: 0.1,
                delta1: 0.254,
                delta2: 0.193,
                chi0: 0.5,
                chi1: 0.3,
            },
        }
    }

    /// The 2005-2009 regime: baseline with the re-calibrated leisure weight,
    /// female mean log wage, and domestic productivity share.
    pub fn regime_2005() -> Self {
        let mut p = Self::baseline();
        p.prefs.alpha_l = 1.858;
        p.wages.mu_f = -0.144;
        p.home.theta = 0.923;
        p
    }

    pub fn get(&self, key: &str) -> Result<f64> {
        Ok(match key {
            "gamma_c" => self.prefs.gamma_c,
            "gamma_l" => self.prefs.gamma_l,
            "gamma_n" => self.prefs.gamma_n,
            "alpha_l" => self.prefs.alpha_l,
            "alpha_n" => self.prefs.alpha_n,
            "rho0" => self.bargaining.rho0,
            "rho1" => self.bargaining.rho1,
            "rho2" => self.bargaining.rho2,
            "mu_wm" => self.wages.mu_m,
            "sigma_wm" => self.wages.sigma_m,
            "mu_wf" => self.wages.mu_f,
            "sigma_wf" => self.wages.sigma_f,
            "mu_b" => self.bliss.mu_b,
            "sigma_b" => self.bliss.sigma_b,
            "theta" => self.home.theta,
            "xi" => self.home.xi,
            "psi0" => self.home.psi0,
            "psi1" => self.home.psi1,
            "psi2" => self.home.psi2,
            "psi_single_m" => self.home.psi_single_m,
            "psi_single_f" => self.home.psi_single_f,
            "beta" => self.demo.beta,
            "kappa" => self.demo.kappa,
            "delta1" => self.demo.delta1,
            "delta2" => self.demo.delta2,
            "chi0" => self.demo.chi0,
            "chi1" => self.demo.chi1,
            _ => return Err(Error::Domain(format!("unknown parameter `{key}`"))),
        })
    }

    pub fn set(&mut self, key: &str, value: f64) -> Result<()> {
        let slot = match key {
            "gamma_c" => &mut self.prefs.gamma_c,
            "gamma_l" => &mut self.prefs.gamma_l,
            "gamma_n" => &mut self.prefs.gamma_n,
            "alpha_l" => &mut self.prefs.alpha_l,
            "alpha_n" => &mut self.prefs.alpha_n,
            "rho0" => &mut self.bargaining.rho0,
            "rho1" => &mut self.bargaining.rho1,
            "rho2" => &mut self.bargaining.rho2,
            "mu_wm" => &mut self.wages.mu_m,
            "sigma_wm" => &mut self.wages.sigma_m,
            "mu_wf" => &mut self.wages.mu_f,
            "sigma_wf" => &mut self.wages.sigma_f,
            "mu_b" => &mut self.bliss.mu_b,
            "sigma_b" => &mut self.bliss.sigma_b,
            "theta" => &mut self.home.theta,
            "xi" => &mut self.home.xi,
            "psi0" => &mut self.home.psi0,
            "psi1" => &mut self.home.psi1,
            "psi2" => &mut self.home.psi2,
            "psi_single_m" => &mut self.home.psi_single_m,
            "psi_single_f" => &mut self.home.psi_single_f,
            "beta" => &mut self.demo.beta,
            "kappa" => &mut self.demo.kappa,
            "delta1" => &mut self.demo.delta1,
            "delta2" => &mut self.demo.delta2,
            "chi0" => &mut self.demo.chi0,
            "chi1" => &mut self.demo.chi1,
            _ => return Err(Error::Domain(format!("unknown parameter `{key}`"))),
        };
        *slot = value;
        Ok(())
    }

    /// Checks every documented invariant of the parameter record.
    pub fn validate(&self) -> Result<()> {
        fn bad(name: &'static str, reason: impl Into<String>) -> Error {
            Error::InvalidParam {
                name,
                reason: reason.into(),
            }
        }
        for key in PARAM_KEYS {
            if !self.get(key)?.is_finite() {
                return Err(bad(key, "not finite"));
            }
        }
        let p = &self.prefs;
        for (name, g) in [
            ("gamma_c", p.gamma_c),
            ("gamma_l", p.gamma_l),
            ("gamma_n", p.gamma_n),
        ] {
            if g <= 0.0 {
                return Err(bad(name, "curvature must be > 0"));
            }
            if g == 1.0 {
                return Err(bad(
                    name,
                    "curvature of exactly 1 (log utility) is not supported",
                ));
            }
        }
        if p.alpha_l < 0.0 {
            return Err(bad("alpha_l", "must be >= 0"));
        }
        if p.alpha_n < 0.0 {
            return Err(bad("alpha_n", "must be >= 0"));
        }
        let h = &self.home;
        if !(h.theta > 0.0 && h.theta < 1.0) {
            return Err(bad("theta", "must lie in (0, 1)"));
        }
        if h.xi >= 1.0 {
            return Err(bad("xi", "must be < 1"));
        }
        for (name, v) in [
            ("psi0", h.psi0),
            ("psi1", h.psi1),
            ("psi2", h.psi2),
            ("psi_single_m", h.psi_single_m),
            ("psi_single_f", h.psi_single_f),
        ] {
            if v < 0.0 {
                return Err(bad(name, "requirement must be >= 0"));
            }
        }
        if h.psi_single_m >= 1.0 {
            return Err(bad("psi_single_m", "must be < 1"));
        }
        if h.psi_single_f >= 1.0 {
            return Err(bad("psi_single_f", "must be < 1"));
        }
        if h.psi0 + h.psi1 + h.psi2 >= 1.0 {
            return Err(bad("psi0", "psi0 + psi1 + psi2 must be < 1"));
        }
        let w = &self.wages;
        if w.sigma_m <= 0.0 {
            return Err(bad("sigma_wm", "must be > 0"));
        }
        if w.sigma_f <= 0.0 {
            return Err(bad("sigma_wf", "must be > 0"));
        }
        if w.n_grid < 2 {
            return Err(bad("n_wage_grid", "must be >= 2"));
        }
        if self.bliss.sigma_b <= 0.0 {
            return Err(bad("sigma_b", "must be > 0"));
        }
        let d = &self.demo;
        if !(d.beta > 0.0 && d.beta < 1.0) {
            return Err(bad("beta", "must lie in (0, 1)"));
        }
        if !(d.kappa > 0.0 && d.kappa <= 1.0) {
            return Err(bad("kappa", "must lie in (0, 1]"));
        }
        if !(0.0..=1.0).contains(&d.delta1) {
            return Err(bad("delta1", "must lie in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&d.delta2) {
            return Err(bad("delta2", "must lie in [0, 1]"));
        }
        Ok(())
    }

    /// Names of parameters whose values differ from `other`.
    pub fn diff(&self, other: &ModelParams) -> Vec<&'static str> {
        let mut out: Vec<&'static str> = PARAM_KEYS
            .iter()
            .copied()
            .filter(|k| self.get(k).unwrap() != other.get(k).unwrap())
            .collect();
        if self.wages.n_grid != other.wages.n_grid {
            out.push("n_wage_grid");
        }
        out
    }
}

/// Numerical settings shared by every solver layer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSettings {
    /// Relative tolerance on the marginal utility of expenditure.
    pub eta_tol: f64,
    /// Absolute tolerance of the golden-section search over the husband's domestic time.
    pub split_tol: f64,
    pub w_damping: f64,
    pub w_tol: f64,
    pub w_max_iter: usize,
    pub eq_damping: f64,
    pub eq_tol: f64,
    pub eq_max_iter: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings {
            eta_tol: 1e-10,
            split_tol: 1e-8,
            w_damping: 0.5,
            w_tol: 1e-10,
            w_max_iter: 10_000,
            eq_damping: 0.5,
            eq_tol: 1e-9,
            eq_max_iter: 10_000,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamFile {
    gamma_c: f64,
    gamma_l: f64,
    gamma_n: f64,
    alpha_l: f64,
    alpha_n: f64,
    rho0: f64,
    rho1: f64,
    rho2: f64,
    mu_wm: f64,
    sigma_wm: f64,
    mu_wf: f64,
    sigma_wf: f64,
    mu_b: f64,
    sigma_b: f64,
    theta: f64,
    xi: f64,
    psi0: f64,
    psi1: f64,
    psi2: f64,
    psi_single_m: f64,
    psi_single_f: f64,
    beta: f64,
    kappa: f64,
    delta1: f64,
    delta2: f64,
    chi0: f64,
    chi1: f64,
    n_wage_grid: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    solver: Option<SolverSettings>,
}

impl From<&ParamFile> for ModelParams {
    fn from(f: &ParamFile) -> Self {
        ModelParams {
            prefs: Preferences {
                gamma_c: f.gamma_c,
                gamma_l: f.gamma_l,
                gamma_n: f.gamma_n,
                alpha_l: f.alpha_l,
                alpha_n: f.alpha_n,
            },
            bargaining: BargainingParams {
                rho0: f.rho0,
                rho1: f.rho1,
                rho2: f.rho2,
            },
            home: HomeProduction {
                theta: f.theta,
                xi: f.xi,
                psi0: f.psi0,
                psi1: f.psi1,
                psi2: f.psi2,
                psi_single_m: f.psi_single_m,
                psi_single_f: f.psi_single_f,
            },
            wages: WageDistParams {
                mu_m: f.mu_wm,
                sigma_m: f.sigma_wm,
                mu_f: f.mu_wf,
                sigma_f: f.sigma_wf,
                n_grid: f.n_wage_grid,
            },
            bliss: BlissParams {
                mu_b: f.mu_b,
                sigma_b: f.sigma_b,
            },
            demo: Demography {
                beta: f.beta,
                kappa: f.kappa,
                delta1: f.delta1,
                delta2: f.delta2,
                chi0: f.chi0,
                chi1: f.chi1,
            },
        }
    }
}

/// Parses a parameter file body. `origin` names the source in error messages.
pub fn parse_params(text: &str, origin: &str) -> Result<(ModelParams, SolverSettings)> {
    let file: ParamFile = toml::from_str(text).map_err(|e| Error::Config {
        path: origin.to_string(),
        message: e.message().to_string(),
    })?;
    let params = ModelParams::from(&file);
    params.validate()?;
    Ok((params, file.solver.unwrap_or_default()))
}

pub fn load_params(path: &Path) -> Result<(ModelParams, SolverSettings)> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_params(&text, &path.display().to_string())
}

/// Renders parameters in the flat file format; `parse_params` reads it back exactly.
pub fn render_params(params: &ModelParams) -> String {
    let mut out = String::new();
    for key in PARAM_KEYS {
        // `{:?}` prints the shortest representation that round-trips.
        let _ = writeln!(out, "{key} = {:?}", params.get(key).unwrap());
    }
    let _ = writeln!(out, "n_wage_grid = {}", params.wages.n_grid);
    out
}
