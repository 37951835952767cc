use nalgebra::DMatrix;
use serde::Serialize;

use super::{DensityModel, DisintegrationError};
use crate::hamiltonian::Tolerance;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ProfilePoint {
    pub s: f64,
    /// `m(G(s, q)) |det(grad delta | G_* d_x | ... )|`, up to a q-dependent factor.
    pub h: f64,
}

const PUSHFORWARD_REL: f64 = 1e-5;

pub(super) fn density_profile(
    model: &DensityModel,
    q: &[f64],
    grid: &[f64],
) -> Result<Vec<ProfilePoint>, DisintegrationError> {
    if grid.is_empty() || grid.iter().any(|s| !s.is_finite()) {
        return Err(DisintegrationError::InvalidGrid("grid must be a nonempty list of finite values".into()));
    }
    model.check_base(q)?;
    let d = q.len();
    let tol = Tolerance::uniform(1e-12);
    let s_max = grid.iter().fold(0.0f64, |a, s| a.max(s.abs()));
    let ham = model.hamiltonian();
    let center = ham.exp_from_surface(q, s_max, tol)?;
    let step = PUSHFORWARD_REL * q[0].abs();
    let mut pairs = Vec::with_capacity(d - 1);
    for c in 0..d - 1 {
        let mut qp = q.to_vec();
        let mut qm = q.to_vec();
        qp[c] += step;
        qm[c] -= step;
        pairs.push((
            ham.exp_from_surface(&qp, s_max, tol)?,
            ham.exp_from_surface(&qm, s_max, tol)?,
        ));
    }
    let measure = model.structure().measure();
    grid.iter()
        .map(|&s| {
            let mut b = DMatrix::zeros(d, d);
            let v = center.velocity(s)?;
            for k in 0..d {
                b[(k, 0)] = v[k];
            }
            for (c, (ap, am)) in pairs.iter().enumerate() {
                let pp = ap.position(s)?;
                let pm = am.position(s)?;
                for k in 0..d {
                    b[(k, c + 1)] = (pp[k] - pm[k]) / (2.0 * step);
                }
            }
            let m = measure.eval(&center.position(s)?)?;
            let h = m * b.determinant().abs();
            if !(h > 0.0) || !h.is_finite() {
                return Err(DisintegrationError::NonPositiveDensity { s });
            }
            Ok(ProfilePoint { s, h })
        })
        .collect()
}

/// Five-point central difference of `log h` at `s = 0` on a uniform grid.
pub fn profile_second_log_derivative(points: &[ProfilePoint]) -> Result<f64, DisintegrationError> {
    if points.len() < 5 {
        return Err(DisintegrationError::InvalidGrid("need at least five points".into()));
    }
    let ds = points[1].s - points[0].s;
    let uniform = points
        .windows(2)
        .all(|w| ((w[1].s - w[0].s) - ds).abs() <= 1e-9 * ds.abs());
    if !(ds > 0.0) || !uniform {
        return Err(DisintegrationError::InvalidGrid("grid must be increasing and uniform".into()));
    }
    let i = points
        .iter()
        .position(|p| p.s.abs() <= 1e-9 * ds)
        .ok_or_else(|| DisintegrationError::InvalidGrid("grid must contain s = 0".into()))?;
    if i < 2 || i + 2 >= points.len() {
        return Err(DisintegrationError::InvalidGrid("s = 0 needs two neighbours on each side".into()));
    }
    let l = |j: usize| points[j].h.ln();
    Ok((-l(i + 2) + 16.0 * l(i + 1) - 30.0 * l(i) + 16.0 * l(i - 1) - l(i - 2)) / (12.0 * ds * ds))
}
