//! Discrete wage grids and standard-normal helpers.

use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Ordered wage levels with their probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct WageGrid {
    pub levels: Vec<f64>,
    pub probs: Vec<f64>,
}

impl WageGrid {
    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.levels
            .iter()
            .zip(&self.probs)
            .map(|(w, p)| w * p)
            .sum()
    }
}

pub fn norm_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

pub fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

pub fn norm_ppf(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}

/// Equiprobable discretization of a lognormal wage law.
///
/// The normal for `log w` is cut into `n` bins of mass `1/n`; each level is
/// `exp` of the conditional mean of `log w` within its bin. A one-point grid
/// sits at the lognormal mean.
pub fn discretize_lognormal(mu: f64, sigma: f64, n: usize) -> Result<WageGrid> {
    if !(sigma > 0.0) || !sigma.is_finite() || !mu.is_finite() {
        return Err(Error::Domain(format!(
            "lognormal needs finite mu and sigma > 0, got ({mu}, {sigma})"
        )));
    }
    if n == 0 {
        return Err(Error::Domain("grid size must be >= 1".into()));
    }
    if n == 1 {
        return Ok(WageGrid {
            levels: vec![(mu + 0.5 * sigma * sigma).exp()],
            probs: vec![1.0],
        });
    }
    let nf = n as f64;
    // Standardized bin edges; the pdf at the outer edges is zero.
    let pdf_at_edge: Vec<f64> = (0..=n)
        .map(|k| {
            if k == 0 || k == n {
                0.0
            } else {
                norm_pdf(norm_ppf(k as f64 / nf))
            }
        })
        .collect();
    let mut levels: Vec<f64> = (0..n)
        .map(|k| {
            // E[z | bin k] = (pdf(lo) - pdf(hi)) / P(bin)
            let cond_mean = (pdf_at_edge[k] - pdf_at_edge[k + 1]) * nf;
            (mu + sigma * cond_mean).exp()
        })
        .collect();
    // Exact symmetry of the standardized conditional means about zero.
    for k in 0..n / 2 {
        let lo = (levels[k].ln() - mu) / sigma;
        let hi = (levels[n - 1 - k].ln() - mu) / sigma;
        let m = 0.5 * (hi - lo);
        levels[k] = (mu - sigma * m).exp();
        levels[n - 1 - k] = (mu + sigma * m).exp();
    }
    if n % 2 == 1 {
        levels[n / 2] = mu.exp();
    }
    let mut probs = vec![1.0 / nf; n];
    probs[n - 1] = 1.0 - probs[..n - 1].iter().sum::<f64>();
    Ok(WageGrid { levels, probs })
}
