//! Weighted least-squares fit of N(τ) = a + b·exp(−|2τ/τ_c|) to coincidence counts.
//!
//! Weights are Poisson, wᵢ = max(Nᵢ, 1). The minimizer is Levenberg-Marquardt
//! on (a, b, ln τ_c) with analytic derivatives; the reported covariance is
//! the inverse weighted normal matrix at the optimum, mapped to (a, b, τ_c).

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::correlator::CoincidenceHistogram;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub a: f64,
    pub b: f64,
    #[serde(rename = "tau_c_s")]
    pub tau_c: f64,
    pub g2_zero: f64,
    pub g2_zero_err: f64,
    pub chi2_reduced: f64,
    pub dof: usize,
    /// Row-major covariance of (a, b, τ_c).
    pub covariance: [f64; 9],
    pub iterations: usize,
    pub converged: bool,
}

impl FitResult {
    pub fn cov(&self, i: usize, j: usize) -> f64 {
        self.covariance[3 * i + j]
    }

    pub fn std_errors(&self) -> [f64; 3] {
        [self.cov(0, 0).sqrt(), self.cov(1, 1).sqrt(), self.cov(2, 2).sqrt()]
    }

    pub fn excess(&self) -> f64 {
        self.b / self.a
    }

    pub fn model(&self, tau: f64) -> f64 {
        model(self.a, self.b, self.tau_c, tau)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("fit result serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::format(0, e.to_string()))
    }
}

/// Starting point in natural units (counts, counts, seconds).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitialGuess {
    pub a: f64,
    pub b: f64,
    pub tau_c: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub initial: Option<InitialGuess>,
    /// Bins with |τ| below this many seconds are left out of the fit.
    pub exclude_center: Option<f64>,
    pub max_iterations: usize,
    pub tolerance: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            initial: None,
            exclude_center: None,
            max_iterations: 200,
            tolerance: 1e-10,
        }
    }
}

#[inline]
pub fn model(a: f64, b: f64, tau_c: f64, tau: f64) -> f64 {
    a + b * (-2.0 * tau.abs() / tau_c).exp()
}

/// Fits the histogram's raw counts against its bin centres.
pub fn fit_bunching(h: &CoincidenceHistogram, options: &FitOptions) -> Result<FitResult> {
    let counts: Vec<f64> = h.counts().iter().map(|&c| c as f64).collect();
    fit_counts(&h.bin_centers(), &counts, options)
}

/// Mean of the outer 20 % of bins (10 % per side).
fn outer_mean(counts: &[f64]) -> f64 {
    let k = (counts.len() / 10).max(1);
    let n = counts.len();
    let sum: f64 = counts[..k].iter().chain(&counts[n - k..]).sum();
    sum / (2 * k) as f64
}

/// Default starting point from the data shape.
pub fn initial_guess(tau: &[f64], counts: &[f64]) -> InitialGuess {
    let a = outer_mean(counts);
    let (peak_idx, peak) = counts
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, c)| if c > best.1 { (i, c) } else { best });
    let b = (peak - a).max(a / 100.0);
    let level = b / std::f64::consts::E;
    let step = if tau.len() > 1 { (tau[1] - tau[0]).abs() } else { 1.0 };

    let crossing = |dir: isize| -> Option<f64> {
        let mut i = peak_idx as isize;
        let mut prev = peak - a;
        loop {
            let j = i + dir;
            if j < 0 || j as usize >= counts.len() {
                return None;
            }
            let e = counts[j as usize] - a;
            if e < level {
                let f = if prev > e { (prev - level) / (prev - e) } else { 0.0 };
                let t0 = tau[i as usize];
                let t1 = tau[j as usize];
                return Some((t0 + f * (t1 - t0) - tau[peak_idx]).abs());
            }
            prev = e;
            i = j;
        }
    };
    let widths: Vec<f64> = [crossing(-1), crossing(1)].into_iter().flatten().collect();
    let half = if widths.is_empty() {
        0.25 * (tau[tau.len() - 1] - tau[0]).abs()
    } else {
        widths.iter().sum::<f64>() / widths.len() as f64
    };
    InitialGuess {
        a,
        b,
        tau_c: 2.0 * half.max(step),
    }
}

struct Problem<'a> {
    tau: &'a [f64],
    counts: &'a [f64],
    inv_w: Vec<f64>,
}

impl Problem<'_> {
    fn chi2(&self, p: &Vector3<f64>) -> f64 {
        let tc = p[2].exp();
        self.tau
            .iter()
            .zip(self.counts)
            .zip(&self.inv_w)
            .map(|((&t, &n), &iw)| {
                let r = n - model(p[0], p[1], tc, t);
                r * r * iw
            })
            .sum()
    }

    /// Weighted normal matrix JᵀWJ and gradient JᵀWr at `p`.
    fn normal(&self, p: &Vector3<f64>) -> (Matrix3<f64>, Vector3<f64>) {
        let tc = p[2].exp();
        let mut a = Matrix3::zeros();
        let mut g = Vector3::zeros();
        for ((&t, &n), &iw) in self.tau.iter().zip(self.counts).zip(&self.inv_w) {
            let x = 2.0 * t.abs() / tc;
            let e = (-x).exp();
            let j = Vector3::new(1.0, e, p[1] * e * x);
            let r = n - (p[0] + p[1] * e);
            a += j * j.transpose() * iw;
            g += j * (r * iw);
        }
        (a, g)
    }
}

fn relative_change(p: &Vector3<f64>, d: &Vector3<f64>) -> f64 {
    let da = d[0].abs() / p[0].abs().max(f64::MIN_POSITIVE);
    let db = d[1].abs() / p[1].abs().max(p[0].abs()).max(f64::MIN_POSITIVE);
    let du = d[2].abs();
    da.max(db).max(du)
}

/// Fits real-valued counts `counts` at delays `tau`.
pub fn fit_counts(tau: &[f64], counts: &[f64], options: &FitOptions) -> Result<FitResult> {
    if tau.len() != counts.len() {
        return Err(Error::domain("tau and counts differ in length"));
    }
    let (tau, counts): (Vec<f64>, Vec<f64>) = match options.exclude_center {
        Some(w) => tau
            .iter()
            .zip(counts)
            .filter(|(t, _)| t.abs() >= w)
            .map(|(t, c)| (*t, *c))
            .unzip(),
        None => (tau.to_vec(), counts.to_vec()),
    };
    let n = counts.len();
    let baseline = if n > 0 { outer_mean(&counts) } else { 0.0 };
    if n < 10 {
        return Err(Error::DegenerateFit {
            reason: format!("{n} bins, at least 10 needed"),
            baseline,
        });
    }
    if !(counts.iter().sum::<f64>() > 0.0) {
        return Err(Error::DegenerateFit {
            reason: "histogram holds no counts".into(),
            baseline,
        });
    }
    let lo = counts.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = counts.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if lo == hi {
        return Err(Error::DegenerateFit {
            reason: "histogram is flat; the bunching excess is unidentifiable".into(),
            baseline,
        });
    }

    let guess = options.initial.unwrap_or_else(|| initial_guess(&tau, &counts));
    if !(guess.tau_c > 0.0) || !guess.a.is_finite() || !guess.b.is_finite() {
        return Err(Error::domain("initial guess needs finite a, b and τ_c > 0"));
    }
    let problem = Problem {
        tau: &tau,
        counts: &counts,
        inv_w: counts.iter().map(|&c| 1.0 / c.max(1.0)).collect(),
    };
    let mut p = Vector3::new(guess.a, guess.b, guess.tau_c.ln());
    let mut chi2 = problem.chi2(&p);
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut iterations = 0;
    let (mut a_mat, mut grad) = problem.normal(&p);

    while iterations < options.max_iterations {
        iterations += 1;
        let mut damped = a_mat;
        for k in 0..3 {
            damped[(k, k)] += lambda * a_mat[(k, k)];
        }
        let Some(chol) = damped.cholesky() else {
            lambda *= 10.0;
            if lambda > 1e20 {
                break;
            }
            continue;
        };
        let delta = chol.solve(&grad);
        let trial = p + delta;
        let trial_chi2 = problem.chi2(&trial);
        let change = relative_change(&p, &delta);
        if trial_chi2.is_finite() && trial_chi2 < chi2 {
            p = trial;
            chi2 = trial_chi2;
            lambda = (lambda / 10.0).max(1e-20);
            (a_mat, grad) = problem.normal(&p);
            if change < options.tolerance {
                converged = true;
                break;
            }
        } else {
            if change < options.tolerance {
                converged = true;
                break;
            }
            lambda *= 10.0;
        }
    }

    if !converged {
        return Err(Error::NonConvergence {
            iterations,
            chi2,
            damping: lambda,
            params: [p[0], p[1], p[2].exp()],
        });
    }

    let (a, b, tau_c) = (p[0], p[1], p[2].exp());
    if !(a > 0.0) || b.abs() <= 1e-9 * a.abs() {
        return Err(Error::DegenerateFit {
            reason: format!("fit collapsed to a = {a:e}, b = {b:e}"),
            baseline,
        });
    }
    let cov_u = a_mat.cholesky().map(|c| c.inverse()).ok_or_else(|| Error::DegenerateFit {
        reason: "normal matrix is singular at the optimum".into(),
        baseline,
    })?;
    let d = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, tau_c));
    let cov = d * cov_u * d;
    let mut covariance = [0.0; 9];
    for i in 0..3 {
        for j in 0..3 {
            covariance[3 * i + j] = 0.5 * (cov[(i, j)] + cov[(j, i)]);
        }
    }
    let dof = n - 3;
    let mut fit = FitResult {
        a,
        b,
        tau_c,
        g2_zero: 0.0,
        g2_zero_err: 0.0,
        chi2_reduced: chi2 / dof as f64,
        dof,
        covariance,
        iterations,
        converged,
    };
    (fit.g2_zero, fit.g2_zero_err) = g2_zero(&fit);
    Ok(fit)
}

/// 1 + b/a with first-order error propagation from the (a, b) covariance.
pub fn g2_zero(fit: &FitResult) -> (f64, f64) {
    let (a, b) = (fit.a, fit.b);
    let value = 1.0 + b / a;
    let da = -b / (a * a);
    let db = 1.0 / a;
    let var = da * da * fit.cov(0, 0) + db * db * fit.cov(1, 1) + 2.0 * da * db * fit.cov(0, 1);
    (value, var.max(0.0).sqrt())
}

/// Σ (Nᵢ − model)²/max(Nᵢ, 1) over all bins, per degree of freedom.
pub fn chi2_reduced(h: &CoincidenceHistogram, fit: &FitResult) -> Result<f64> {
    let n = h.len();
    if n <= 3 {
        return Err(Error::domain("χ² needs at least one degree of freedom"));
    }
    let sum: f64 = h
        .counts()
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            let c = c as f64;
            let r = c - fit.model(h.bin_center(i));
            r * r / c.max(1.0)
        })
        .sum();
    Ok(sum / (n - 3) as f64)
}
