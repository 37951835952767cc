//! Jet extraction from integrated arcs.
//!
//! The velocity `s -> d/ds G(s, q) = grad delta(G(s, q))` is sampled on a
//! symmetric stencil and fitted by least squares; its Taylor coefficients
//! give `grad delta`, `f` and `h / 2`. Column derivatives come from central
//! differences over perturbed base points.

use nalgebra::DMatrix;

use super::{DensityJet, DensityModel, DisintegrationError, Pipeline};
use crate::hamiltonian::Tolerance;

#[derive(Debug, Clone, PartialEq)]
pub struct FitParams {
    /// Stencil half-width in points; the stencil has `2k + 1` nodes.
    pub k: usize,
    /// Stencil radius in `s`. By default a pilot fit at `min(0.05, |x_q| / 4)`
    /// is shrunk to `1 / (8 |f|)` when the velocity turns faster than that.
    pub s0: Option<f64>,
    pub degree: usize,
    pub tol: Tolerance,
    /// Base-point perturbation relative to `|x_q|`.
    pub h_rel: f64,
    pub max_condition: f64,
}

impl Default for FitParams {
    fn default() -> Self {
        FitParams {
            k: 8,
            s0: None,
            degree: 6,
            tol: Tolerance::uniform(1e-12),
            h_rel: 1e-5,
            max_condition: 1e8,
        }
    }
}

impl FitParams {
    pub fn radius(&self, q: &[f64]) -> f64 {
        self.s0.unwrap_or_else(|| (0.25 * q[0].abs()).min(0.05))
    }
}

/// Taylor coefficients at `s = 0` of the velocity, and of the position for
/// the constant term.
pub(super) struct RawJet {
    pub grad: Vec<f64>,
    pub f: Vec<f64>,
    pub h: Vec<f64>,
    pub origin: Vec<f64>,
}

fn vandermonde(ts: &[f64], degree: usize) -> DMatrix<f64> {
    DMatrix::from_fn(ts.len(), degree + 1, |i, j| ts[i].powi(j as i32))
}

fn least_squares(
    v: &DMatrix<f64>,
    y: &DMatrix<f64>,
    max_condition: f64,
) -> Result<DMatrix<f64>, DisintegrationError> {
    let svd = v.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    let cond = smax / smin;
    if !(cond <= max_condition) {
        return Err(DisintegrationError::FitConditioning { cond });
    }
    svd.solve(y, 0.0)
        .map_err(|_| DisintegrationError::FitConditioning { cond })
}

pub(super) fn raw_jet(
    model: &DensityModel,
    q: &[f64],
    s0: f64,
    fit: &FitParams,
) -> Result<RawJet, DisintegrationError> {
    let d = q.len();
    let k = fit.k as i64;
    let arc = model.hamiltonian().exp_from_surface(q, s0, fit.tol)?;
    let ts: Vec<f64> = (-k..=k).map(|i| i as f64 / k as f64).collect();
    let mut vel = DMatrix::zeros(ts.len(), d);
    let mut pos = DMatrix::zeros(ts.len(), d);
    for (row, &t) in ts.iter().enumerate() {
        let s = (t * s0).clamp(-s0, s0);
        let v = arc.velocity(s)?;
        let p = arc.position(s)?;
        for c in 0..d {
            vel[(row, c)] = v[c];
            pos[(row, c)] = p[c];
        }
    }
    let coef = least_squares(&vandermonde(&ts, fit.degree), &vel, fit.max_condition)?;
    let coef_pos = least_squares(&vandermonde(&ts, fit.degree + 1), &pos, fit.max_condition)?;
    Ok(RawJet {
        grad: (0..d).map(|c| coef[(0, c)]).collect(),
        f: (0..d).map(|c| coef[(1, c)] / s0).collect(),
        h: (0..d).map(|c| 2.0 * coef[(2, c)] / (s0 * s0)).collect(),
        origin: (0..d).map(|c| coef_pos[(0, c)]).collect(),
    })
}

pub(super) fn numeric_jet(
    model: &DensityModel,
    q: &[f64],
    fit: &FitParams,
) -> Result<DensityJet, DisintegrationError> {
    let d = q.len();
    let mut s0 = fit.radius(q);
    let mut center = raw_jet(model, q, s0, fit)?;
    if fit.s0.is_none() {
        let rate = center.f.iter().map(|v| v * v).sum::<f64>().sqrt();
        let adapted = 0.125 / rate;
        if adapted < s0 {
            s0 = adapted;
            center = raw_jet(model, q, s0, fit)?;
        }
    }
    let step = fit.h_rel * q[0].abs();
    let mut d_grad = Vec::with_capacity(d - 1);
    let mut d_f = Vec::with_capacity(d - 1);
    for c in 0..d - 1 {
        let mut qp = q.to_vec();
        let mut qm = q.to_vec();
        qp[c] += step;
        qm[c] -= step;
        let jp = raw_jet(model, &qp, s0, fit)?;
        let jm = raw_jet(model, &qm, s0, fit)?;
        d_grad.push((0..d).map(|k| (jp.grad[k] - jm.grad[k]) / (2.0 * step)).collect());
        d_f.push((0..d).map(|k| (jp.f[k] - jm.f[k]) / (2.0 * step)).collect());
    }
    let h = center.h.iter().map(|v| Some(*v)).collect();
    model.assemble(q, center.grad, center.f, h, &d_grad, &d_f, Pipeline::NumericTaylor)
}

/// Constant term of the fitted position polynomial.
pub fn fitted_origin(model: &DensityModel, q: &[f64], fit: &FitParams) -> Result<Vec<f64>, DisintegrationError> {
    Ok(raw_jet(model, q, fit.radius(q), fit)?.origin)
}
