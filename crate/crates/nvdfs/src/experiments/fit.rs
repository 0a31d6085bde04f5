//! Nonlinear least squares for the three curve shapes used in the
//! experiments.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FitModel {
    /// `floor + amp·exp(-t/T)`, params `[floor, amp, T]`.
    ExpWithFloor,
    /// `base + amp·exp(-(x-c)²/(2 s²))`, params `[base, amp, c, s]`.
    GaussianPeak,
    /// `amp·sin(2πN/4)(1 - bN)`, params `[amp, b]`.
    SinusoidLinearEnvelope,
}

impl FitModel {
    pub fn param_names(self) -> &'static [&'static str] {
        match self {
            FitModel::ExpWithFloor => &["floor", "amplitude", "t_est"],
            FitModel::GaussianPeak => &["base", "amplitude", "center", "width"],
            FitModel::SinusoidLinearEnvelope => &["amplitude", "b"],
        }
    }

    /// Model value and gradient with respect to the parameters.
    pub fn eval(self, x: f64, p: &[f64]) -> (f64, Vec<f64>) {
        match self {
            FitModel::ExpWithFloor => {
                let e = (-x / p[2]).exp();
                (p[0] + p[1] * e, vec![1.0, e, p[1] * e * x / (p[2] * p[2])])
            }
            FitModel::GaussianPeak => {
                let d = x - p[2];
                let s2 = p[3] * p[3];
                let g = (-d * d / (2.0 * s2)).exp();
                (
                    p[0] + p[1] * g,
                    vec![1.0, g, p[1] * g * d / s2, p[1] * g * d * d / (s2 * p[3])],
                )
            }
            FitModel::SinusoidLinearEnvelope => {
                let s = (2.0 * PI * x / 4.0).sin();
                let env = 1.0 - p[1] * x;
                (p[0] * s * env, vec![s * env, -p[0] * s * x])
            }
        }
    }

    fn admissible(self, p: &[f64]) -> bool {
        match self {
            FitModel::ExpWithFloor => p[2] > 0.0,
            FitModel::GaussianPeak => p[3] != 0.0,
            FitModel::SinusoidLinearEnvelope => true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub model: FitModel,
    pub params: Vec<f64>,
    /// Standard deviations from the Jacobian at the optimum.
    pub sigmas: Vec<f64>,
    /// Root-mean-square residual.
    pub residual: f64,
    pub iterations: usize,
    /// Flat data: the decay time is unbounded and reported as infinite.
    pub degenerate: bool,
}

impl DecayFit {
    fn param(&self, name: &str) -> Option<(f64, f64)> {
        let i = self.model.param_names().iter().position(|n| *n == name)?;
        Some((self.params[i], self.sigmas[i]))
    }

    pub fn t_est(&self) -> Option<f64> {
        self.param("t_est").map(|v| v.0)
    }

    pub fn floor(&self) -> Option<f64> {
        self.param("floor").map(|v| v.0)
    }

    pub fn center(&self) -> Option<f64> {
        self.param("center").map(|v| v.0)
    }

    pub fn b(&self) -> Option<(f64, f64)> {
        self.param("b")
    }

    pub fn value(&self, x: f64) -> f64 {
        self.model.eval(x, &self.params).0
    }
}

fn rss(model: FitModel, xs: &[f64], ys: &[f64], p: &[f64]) -> f64 {
    xs.iter().zip(ys).map(|(&x, &y)| (y - model.eval(x, p).0).powi(2)).sum()
}

fn jacobian(model: FitModel, xs: &[f64], ys: &[f64], p: &[f64]) -> (DMatrix<f64>, DVector<f64>) {
    let mut j = DMatrix::zeros(xs.len(), p.len());
    let mut r = DVector::zeros(xs.len());
    for (i, (&x, &y)) in xs.iter().zip(ys).enumerate() {
        let (f, g) = model.eval(x, p);
        r[i] = y - f;
        for (k, gk) in g.into_iter().enumerate() {
            j[(i, k)] = gk;
        }
    }
    (j, r)
}

/// Levenberg–Marquardt from `p0`.
pub fn levenberg_marquardt(model: FitModel, xs: &[f64], ys: &[f64], p0: &[f64]) -> Result<DecayFit> {
    let n = xs.len();
    let np = p0.len();
    if n != ys.len() || n < np {
        return Err(Error::FitFailure(format!("{n} points for {np} parameters")));
    }
    if xs.iter().chain(ys).chain(p0).any(|v| !v.is_finite()) {
        return Err(Error::FitFailure("non-finite input".into()));
    }
    let mut p = p0.to_vec();
    let mut cost = rss(model, xs, ys, &p);
    let mut lambda = 1e-3;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < 1000 {
        iterations += 1;
        let (j, r) = jacobian(model, xs, ys, &p);
        let jtj = j.transpose() * &j;
        let g = j.transpose() * r;
        let mut improved = false;
        let mut small_step = false;
        for _ in 0..40 {
            let mut a = jtj.clone();
            for k in 0..np {
                a[(k, k)] += lambda * jtj[(k, k)].max(1e-300);
            }
            let Some(delta) = a.cholesky().map(|c| c.solve(&g)) else {
                lambda *= 10.0;
                continue;
            };
            let trial: Vec<f64> = p.iter().zip(delta.iter()).map(|(a, b)| a + b).collect();
            small_step = delta.iter().zip(&p).all(|(d, v)| d.abs() <= 1e-14 * (v.abs() + 1e-14));
            let c = rss(model, xs, ys, &trial);
            if model.admissible(&trial) && c.is_finite() && c <= cost {
                let rel = (cost - c) / cost.max(1e-300);
                p = trial;
                cost = c;
                lambda = (lambda / 3.0).max(1e-12);
                improved = true;
                if rel < 1e-15 {
                    small_step = true;
                }
                break;
            }
            lambda *= 2.0;
            if small_step {
                break;
            }
        }
        if !improved || small_step || cost < 1e-30 {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::FitFailure(format!("{model:?}: no convergence")));
    }
    let (j, _) = jacobian(model, xs, ys, &p);
    let cov = (j.transpose() * &j)
        .try_inverse()
        .ok_or_else(|| Error::FitFailure(format!("{model:?}: singular Jacobian")))?;
    let dof = (n - np).max(1) as f64;
    let s2 = cost / dof;
    let sigmas = (0..np).map(|k| (cov[(k, k)].max(0.0) * s2).sqrt()).collect();
    Ok(DecayFit {
        model,
        params: p,
        sigmas,
        residual: (cost / n as f64).sqrt(),
        iterations,
        degenerate: false,
    })
}

fn initial_guess(model: FitModel, xs: &[f64], ys: &[f64]) -> Vec<f64> {
    let (ymin, ymax) = ys
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &y| (a.min(y), b.max(y)));
    match model {
        FitModel::ExpWithFloor => {
            // Log-linear regression on the points above the floor.
            let pts: Vec<(f64, f64)> = xs
                .iter()
                .zip(ys)
                .filter(|(_, &y)| y - ymin > 1e-12 * (ymax - ymin).max(1e-300))
                .map(|(&x, &y)| (x, (y - ymin).ln()))
                .collect();
            let span = xs.last().unwrap() - xs[0];
            let mut t = span / 2.0;
            if pts.len() >= 2 {
                let m = pts.len() as f64;
                let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
                let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
                let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
                let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
                if sxx > 0.0 && sxy < 0.0 {
                    t = -sxx / sxy;
                }
            }
            let t = if t.is_finite() && t > 0.0 { t } else { span.max(1e-9) };
            vec![ymin, ymax - ymin, t]
        }
        FitModel::GaussianPeak => {
            let imax = ys
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .map(|(i, _)| i)
                .unwrap();
            let half = 0.5 * (ymax + ymin);
            let above: Vec<f64> = xs.iter().zip(ys).filter(|(_, &y)| y >= half).map(|(&x, _)| x).collect();
            let fwhm = above.last().unwrap() - above[0];
            let step = (xs.last().unwrap() - xs[0]) / (xs.len() - 1) as f64;
            let s = (fwhm.max(step) / 2.3548).max(1e-12);
            vec![ymin, ymax - ymin, xs[imax], s]
        }
        FitModel::SinusoidLinearEnvelope => {
            let (num, den) = xs.iter().zip(ys).fold((0.0, 0.0), |(a, b), (&x, &y)| {
                let s = (2.0 * PI * x / 4.0).sin();
                (a + s * y, b + s * s)
            });
            vec![if den > 0.0 { num / den } else { 0.0 }, 0.0]
        }
    }
}

/// Fits `points` with a fixed initialization heuristic.
pub fn fit_decay(points: &[(f64, f64)], model: FitModel) -> Result<DecayFit> {
    if points.len() < 4 {
        return Err(Error::FitFailure(format!("{} points, need at least 4", points.len())));
    }
    let xs: Vec<f64> = points.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1).collect();
    if xs.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::FitFailure("abscissae must increase".into()));
    }
    let (ymin, ymax) = ys
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &y| (a.min(y), b.max(y)));
    if model == FitModel::ExpWithFloor && ymax - ymin <= 1e-9 * ymax.abs().max(1.0) {
        let mean = ys.iter().sum::<f64>() / ys.len() as f64;
        let rms = (ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / ys.len() as f64).sqrt();
        return Ok(DecayFit {
            model,
            params: vec![mean, 0.0, f64::INFINITY],
            sigmas: vec![0.0, 0.0, f64::INFINITY],
            residual: rms,
            iterations: 0,
            degenerate: true,
        });
    }
    let p0 = initial_guess(model, &xs, &ys);
    let mut fit = levenberg_marquardt(model, &xs, &ys, &p0)?;
    if model == FitModel::GaussianPeak {
        fit.params[3] = fit.params[3].abs();
    }
    Ok(fit)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_exponential() {
        let pts: Vec<(f64, f64)> = (0..12)
            .map(|i| {
                let t = 0.4 * i as f64;
                (t, 0.35 + 0.25 * (-t / 2.24).exp())
            })
            .collect();
        let f = fit_decay(&pts, FitModel::ExpWithFloor).unwrap();
        assert!((f.t_est().unwrap() - 2.24).abs() < 1e-6, "{:?}", f);
        assert!((f.floor().unwrap() - 0.35).abs() < 1e-8);
    }

    #[test]
    fn exact_sinusoid() {
        let pts: Vec<(f64, f64)> = (1..=10)
            .map(|n| {
                let n = n as f64;
                (n, (2.0 * PI * n / 4.0).sin() * (1.0 - 0.012 * n))
            })
            .collect();
        let f = fit_decay(&pts, FitModel::SinusoidLinearEnvelope).unwrap();
        assert!((f.b().unwrap().0 - 0.012).abs() < 1e-12);
    }

    #[test]
    fn exact_gaussian() {
        let pts: Vec<(f64, f64)> = (0..41)
            .map(|i| {
                let x = 510.0 + 0.2 * i as f64;
                (x, 0.1 + 0.8 * (-(x - 513.84f64).powi(2) / (2.0 * 0.6f64.powi(2))).exp())
            })
            .collect();
        let f = fit_decay(&pts, FitModel::GaussianPeak).unwrap();
        assert!((f.center().unwrap() - 513.84).abs() < 1e-8);
        assert!((f.params[3] - 0.6).abs() < 1e-8);
    }

    #[test]
    fn flat_data_is_degenerate() {
        let pts: Vec<(f64, f64)> = (0..6).map(|i| (i as f64, 0.9)).collect();
        let f = fit_decay(&pts, FitModel::ExpWithFloor).unwrap();
        assert!(f.degenerate);
        assert!(f.t_est().unwrap().is_infinite());
    }

    #[test]
    fn too_few_points() {
        let pts = [(0.0, 1.0), (1.0, 0.5), (2.0, 0.3)];
        assert!(fit_decay(&pts, FitModel::ExpWithFloor).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let cases = [
            (FitModel::ExpWithFloor, vec![0.3, 0.5, 1.7], 0.8),
            (FitModel::GaussianPeak, vec![0.1, 0.9, 2.0, 0.7], 2.3),
            (FitModel::SinusoidLinearEnvelope, vec![-0.9, 0.02], 3.0),
        ];
        for (m, p, x) in cases {
            let (_, g) = m.eval(x, &p);
            for k in 0..p.len() {
                let h = 1e-6;
                let mut a = p.clone();
                a[k] += h;
                let mut b = p.clone();
                b[k] -= h;
                let fd = (m.eval(x, &a).0 - m.eval(x, &b).0) / (2.0 * h);
                assert!((fd - g[k]).abs() < 1e-6, "{m:?} {k}");
            }
        }
    }
}
