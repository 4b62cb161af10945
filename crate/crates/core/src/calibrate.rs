//! Minimum-distance estimation and counterfactual decomposition.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Deserialize;

use crate::equilibrium::{solve_equilibrium_with, EquilibriumSolution};
use crate::error::{Error, Result};
use crate::moments::MomentVector;
use crate::params::{ModelParams, SolverSettings, PARAM_KEYS};

/// Loss assigned when the model cannot be solved at a trial point.
pub const FAILURE_PENALTY: f64 = 1e6;

/// Smallest scale used to normalize a moment residual.
pub const MIN_SCALE: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MomentTarget {
    pub name: String,
    pub data: f64,
    #[serde(default = "unit_weight")]
    pub weight: f64,
    #[serde(default)]
    pub source: String,
}

fn unit_weight() -> f64 {
    1.0
}

impl MomentTarget {
    pub fn new(name: &str, data: f64) -> Self {
        MomentTarget {
            name: name.to_string(),
            data,
            weight: 1.0,
            source: String::new(),
        }
    }

    pub fn scale(&self) -> f64 {
        self.data.abs().max(MIN_SCALE)
    }
}

/// A parameter searched over within `[lower, upper]`.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FreeParam {
    pub name: String,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerSettings {
    /// Total budget of loss evaluations across all starts.
    pub max_evals: usize,
    /// Latin-hypercube points screened before the local searches.
    pub lhs_points: usize,
    /// Local searches started from the best screened points.
    pub restarts: usize,
    pub seed: u64,
    /// Stop when the simplex loss spread falls below this.
    pub f_tol: f64,
    /// Stop when the simplex diameter in unit-cube coordinates falls below this.
    pub x_tol: f64,
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        OptimizerSettings {
            max_evals: 600,
            lhs_points: 8,
            restarts: 2,
            seed: 1,
            f_tol: 1e-14,
            x_tol: 1e-7,
        }
    }
}

/// Free parameters, the fixed parameter vector they perturb, and targets.
#[derive(Debug, Clone)]
pub struct EstimationSpec {
    pub free: Vec<FreeParam>,
    pub base: ModelParams,
    pub settings: SolverSettings,
    pub targets: Vec<MomentTarget>,
    pub optimizer: OptimizerSettings,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TargetFile {
    #[serde(default)]
    target: Vec<MomentTarget>,
    #[serde(default)]
    free: Vec<FreeParam>,
    #[serde(default)]
    optimizer: OptimizerSettings,
}

/// Targets, free parameters and optimizer settings from a TOML file with
/// `[[target]]`, `[[free]]` and `[optimizer]` entries.
pub fn parse_targets(
    text: &str,
    origin: &str,
) -> Result<(Vec<MomentTarget>, Vec<FreeParam>, OptimizerSettings)> {
    let f: TargetFile = toml::from_str(text).map_err(|e| Error::Config {
        path: origin.to_string(),
        message: e.to_string(),
    })?;
    Ok((f.target, f.free, f.optimizer))
}

pub fn load_targets(path: &Path) -> Result<(Vec<MomentTarget>, Vec<FreeParam>, OptimizerSettings)> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_targets(&text, &path.display().to_string())
}

impl EstimationSpec {
    pub fn validate(&self) -> Result<()> {
        for t in &self.targets {
            if MomentVector::default().get(&t.name).is_none() {
                return Err(Error::Config {
                    path: "targets".into(),
                    message: format!("unknown moment `{}`", t.name),
                });
            }
            if !(t.weight > 0.0) || !t.data.is_finite() {
                return Err(Error::Config {
                    path: "targets".into(),
                    message: format!("target `{}` needs finite data and weight > 0", t.name),
                });
            }
        }
        for (k, f) in self.free.iter().enumerate() {
            if !PARAM_KEYS.contains(&f.name.as_str()) {
                return Err(Error::Config {
                    path: "free".into(),
                    message: format!("unknown parameter `{}`", f.name),
                });
            }
            if !(f.lower.is_finite() && f.upper.is_finite() && f.lower < f.upper) {
                return Err(Error::Config {
                    path: "free".into(),
                    message: format!("bounds of `{}` must be finite and ordered", f.name),
                });
            }
            if self.free[..k].iter().any(|o| o.name == f.name) {
                return Err(Error::Config {
                    path: "free".into(),
                    message: format!("parameter `{}` listed twice", f.name),
                });
            }
        }
        if self.targets.is_empty() {
            return Err(Error::Config {
                path: "targets".into(),
                message: "no targets".into(),
            });
        }
        Ok(())
    }

    fn params_at(&self, unit: &[f64]) -> Result<ModelParams> {
        let mut p = self.base.clone();
        for (f, u) in self.free.iter().zip(unit) {
            p.set(&f.name, f.lower + (f.upper - f.lower) * u.clamp(0.0, 1.0))?;
        }
        Ok(p)
    }

    fn unit_of(&self, params: &ModelParams) -> Vec<f64> {
        self.free
            .iter()
            .map(|f| {
                ((params.get(&f.name).unwrap() - f.lower) / (f.upper - f.lower)).clamp(0.0, 1.0)
            })
            .collect()
    }
}

/// Weighted squared relative residuals of model moments against targets.
pub fn loss_from_moments(model: &MomentVector, targets: &[MomentTarget]) -> Result<f64> {
    let mut loss = 0.0;
    for t in targets {
        let m = model.get(&t.name).ok_or_else(|| Error::Config {
            path: "targets".into(),
            message: format!("unknown moment `{}`", t.name),
        })?;
        let r = (m - t.data) / t.scale();
        loss += t.weight * r * r;
    }
    Ok(loss)
}

/// Loss at `params`; an unsolvable model scores [`FAILURE_PENALTY`].
pub fn moment_distance(
    params: &ModelParams,
    settings: &SolverSettings,
    targets: &[MomentTarget],
) -> Result<f64> {
    params.validate()?;
    Ok(evaluate(params, settings, targets, None).0)
}

fn evaluate(
    params: &ModelParams,
    settings: &SolverSettings,
    targets: &[MomentTarget],
    warm: Option<&EquilibriumSolution>,
) -> (f64, Option<EquilibriumSolution>) {
    match solve_equilibrium_with(params, settings, warm) {
        Ok(eq) => match loss_from_moments(&eq.moments, targets) {
            Ok(l) if l.is_finite() => (l, Some(eq)),
            _ => (FAILURE_PENALTY, None),
        },
        Err(_) => (FAILURE_PENALTY, None),
    }
}

/// A point visited by the optimizer.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub values: Vec<f64>,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Residual {
    pub name: String,
    pub data: f64,
    pub model: f64,
    pub weight: f64,
    pub contribution: f64,
}

#[derive(Debug, Clone)]
pub struct EstimationResult {
    pub params: ModelParams,
    pub loss: f64,
    pub moments: MomentVector,
    pub residuals: Vec<Residual>,
    /// Every evaluated point in parameter units, screening first, then
    /// each local search.
    pub trace: Vec<Evaluation>,
}

fn latin_hypercube(n: usize, dim: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut pts = vec![vec![0.0; dim]; n];
    for d in 0..dim {
        let mut strata: Vec<usize> = (0..n).collect();
        strata.shuffle(rng);
        for (p, s) in pts.iter_mut().zip(strata) {
            p[d] = (s as f64 + rng.random::<f64>()) / n as f64;
        }
    }
    pts
}

/// Bounded Nelder-Mead on the unit cube; trial points are projected onto
/// the box. Returns the evaluations in order.
fn nelder_mead(
    start: &[f64],
    budget: usize,
    settings: &OptimizerSettings,
    mut f: impl FnMut(&[f64]) -> f64,
) -> Vec<Evaluation> {
    let dim = start.len();
    let mut trace = Vec::new();
    let mut eval = |x: Vec<f64>, trace: &mut Vec<Evaluation>| -> (Vec<f64>, f64) {
        let x: Vec<f64> = x.into_iter().map(|v| v.clamp(0.0, 1.0)).collect();
        let l = f(&x);
        trace.push(Evaluation {
            values: x.clone(),
            loss: l,
        });
        (x, l)
    };
    let mut simplex = vec![eval(start.to_vec(), &mut trace)];
    for d in 0..dim {
        let mut x = start.to_vec();
        x[d] = if x[d] + 0.1 <= 1.0 {
            x[d] + 0.1
        } else {
            x[d] - 0.1
        };
        simplex.push(eval(x, &mut trace));
    }
    let (alpha, gamma, rho, sigma) = (1.0, 2.0, 0.5, 0.5);
    while trace.len() < budget {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let spread = simplex[dim].1 - simplex[0].1;
        let diameter = simplex[1..]
            .iter()
            .map(|(x, _)| {
                x.iter()
                    .zip(&simplex[0].0)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max);
        if spread.abs() < settings.f_tol && diameter < settings.x_tol {
            break;
        }
        if diameter < settings.x_tol * 1e-3 {
            break;
        }
        let centroid: Vec<f64> = (0..dim)
            .map(|d| simplex[..dim].iter().map(|(x, _)| x[d]).sum::<f64>() / dim as f64)
            .collect();
        let toward = |t: f64, x: &[f64]| -> Vec<f64> {
            centroid
                .iter()
                .zip(x)
                .map(|(c, xi)| c + t * (xi - c))
                .collect()
        };
        let worst = simplex[dim].clone();
        let reflected = eval(toward(-alpha, &worst.0), &mut trace);
        if reflected.1 < simplex[0].1 {
            let expanded = eval(toward(-gamma, &worst.0), &mut trace);
            simplex[dim] = if expanded.1 < reflected.1 {
                expanded
            } else {
                reflected
            };
            continue;
        }
        if reflected.1 < simplex[dim - 1].1 {
            simplex[dim] = reflected;
            continue;
        }
        let contracted = if reflected.1 < worst.1 {
            eval(toward(-rho, &worst.0), &mut trace)
        } else {
            eval(toward(rho, &worst.0), &mut trace)
        };
        if contracted.1 < worst.1.min(reflected.1) {
            simplex[dim] = contracted;
            continue;
        }
        let best = simplex[0].0.clone();
        for v in simplex.iter_mut().skip(1) {
            let x: Vec<f64> = best
                .iter()
                .zip(&v.0)
                .map(|(b, xi)| b + sigma * (xi - b))
                .collect();
            *v = eval(x, &mut trace);
        }
    }
    trace
}

/// Multi-start bounded Nelder-Mead over the free parameters.
pub fn estimate(spec: &EstimationSpec) -> Result<EstimationResult> {
    spec.validate()?;
    let dim = spec.free.len();
    let opt = &spec.optimizer;
    let loss_at =
        |unit: &[f64], warm: Option<&EquilibriumSolution>| -> (f64, Option<EquilibriumSolution>) {
            match spec.params_at(unit) {
                Ok(p) if p.validate().is_ok() => evaluate(&p, &spec.settings, &spec.targets, warm),
                _ => (FAILURE_PENALTY, None),
            }
        };

    let mut trace = Vec::new();
    let best_unit = if dim == 0 {
        Vec::new()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(opt.seed);
        let mut starts = vec![spec.unit_of(&spec.base)];
        starts.extend(latin_hypercube(opt.lhs_points, dim, &mut rng));
        let screened: Vec<Evaluation> = starts
            .par_iter()
            .map(|x| Evaluation {
                values: x.clone(),
                loss: loss_at(x, None).0,
            })
            .collect();
        trace.extend(screened.iter().cloned());
        let mut order: Vec<usize> = (0..screened.len()).collect();
        order.sort_by(|&a, &b| {
            screened[a]
                .loss
                .total_cmp(&screened[b].loss)
                .then(a.cmp(&b))
        });
        let restarts = opt.restarts.max(1).min(order.len());
        let budget = opt.max_evals.saturating_sub(screened.len()) / restarts;
        let runs: Vec<Vec<Evaluation>> = order[..restarts]
            .par_iter()
            .map(|&k| {
                let mut warm: Option<EquilibriumSolution> = None;
                nelder_mead(&screened[k].values, budget.max(dim + 1), opt, |x| {
                    let (l, eq) = loss_at(x, warm.as_ref());
                    if eq.is_some() {
                        warm = eq;
                    }
                    l
                })
            })
            .collect();
        for r in runs {
            trace.extend(r);
        }
        let best = trace
            .iter()
            .min_by(|a, b| a.loss.total_cmp(&b.loss))
            .expect("at least one evaluation");
        if best.loss >= FAILURE_PENALTY {
            return Err(Error::Estimation(format!(
                "no feasible evaluation among {} points",
                trace.len()
            )));
        }
        best.values.clone()
    };

    // Re-solve from scratch at the returned point.
    let params = spec.params_at(&best_unit)?;
    params.validate()?;
    let eq = solve_equilibrium_with(&params, &spec.settings, None)
        .map_err(|e| Error::Estimation(format!("model fails at the returned point: {e}")))?;
    let loss = loss_from_moments(&eq.moments, &spec.targets)?;
    if dim == 0 {
        trace.push(Evaluation {
            values: vec![],
            loss,
        });
    }
    let residuals = spec
        .targets
        .iter()
        .map(|t| {
            let model = eq.moments.get(&t.name).unwrap();
            let r = (model - t.data) / t.scale();
            Residual {
                name: t.name.clone(),
                data: t.data,
                model,
                weight: t.weight,
                contribution: t.weight * r * r,
            }
        })
        .collect();
    for e in &mut trace {
        for (v, f) in e.values.iter_mut().zip(&spec.free) {
            *v = f.lower + (f.upper - f.lower) * *v;
        }
    }
    Ok(EstimationResult {
        params,
        loss,
        moments: eq.moments,
        residuals,
        trace,
    })
}

/// Data endpoints used to express model changes as explained shares.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DataEndpoints {
    pub marriage_baseline: f64,
    pub marriage_counterfactual: f64,
    pub cfr_baseline: f64,
    pub cfr_counterfactual: f64,
}

impl Default for DataEndpoints {
    /// Census marriage rates and cohort fertility, 2019-2023 vs 2005-2009.
    fn default() -> Self {
        DataEndpoints {
            marriage_baseline: 0.836,
            marriage_counterfactual: 0.928,
            cfr_baseline: 1.454,
            cfr_counterfactual: 1.709,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecompositionRow {
    pub label: String,
    /// Parameters taken from the counterfactual regime.
    pub swapped: Vec<&'static str>,
    pub marriage_rate: f64,
    pub cfr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition {
    pub rows: Vec<DecompositionRow>,
    pub data: DataEndpoints,
    pub explained_marriage: f64,
    pub explained_cfr: f64,
}

fn factor_label(key: &str) -> String {
    match key {
        "alpha_l" => "Leisure Technology".into(),
        "mu_wf" => "Female Wage".into(),
        "theta" => "Social Norms".into(),
        other => other.to_string(),
    }
}

/// Baseline, one row per differing parameter, and all swaps together.
pub fn decompose(
    baseline: &ModelParams,
    counterfactual: &ModelParams,
    settings: &SolverSettings,
    data: DataEndpoints,
) -> Result<Decomposition> {
    baseline.validate()?;
    counterfactual.validate()?;
    let factors = baseline.diff(counterfactual);
    let mut specs: Vec<(String, Vec<&'static str>)> = vec![("Baseline".into(), vec![])];
    for &f in &factors {
        specs.push((factor_label(f), vec![f]));
    }
    specs.push(("All".into(), factors.clone()));

    let rows: Vec<DecompositionRow> = specs
        .par_iter()
        .map(|(label, swapped)| {
            let mut p = baseline.clone();
            for k in swapped {
                if *k == "n_wage_grid" {
                    p.wages.n_grid = counterfactual.wages.n_grid;
                } else {
                    p.set(k, counterfactual.get(k)?)?;
                }
            }
            let eq =
                solve_equilibrium_with(&p, settings, None).map_err(|e| Error::Decomposition {
                    row: label.clone(),
                    source: Box::new(e),
                })?;
            Ok(DecompositionRow {
                label: label.clone(),
                swapped: swapped.clone(),
                marriage_rate: eq.moments.marriage_rate,
                cfr: eq.moments.cfr,
            })
        })
        .collect::<Result<_>>()?;
    let (first, last) = (&rows[0], &rows[rows.len() - 1]);
    Ok(Decomposition {
        explained_marriage: (last.marriage_rate - first.marriage_rate)
            / (data.marriage_counterfactual - data.marriage_baseline),
        explained_cfr: (last.cfr - first.cfr) / (data.cfr_counterfactual - data.cfr_baseline),
        rows,
        data,
    })
}
