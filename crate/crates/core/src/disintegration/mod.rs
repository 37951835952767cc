//! Second log-derivative of the one-dimensional disintegration density
//! `h_q(s)` along the transversal geodesic through `q`.
//!
//! Writing `B(s) = (grad delta(G(s,q)) | d_x G | d_z1 G | ... )`, the density is
//! `m(G(s,q)) |det B(s)|` up to a factor that only depends on `q`, so
//!
//! ```text
//! (log h)''(0) = (log m o G)''(0) + tr(B0^-1 B2) - tr((B0^-1 B1)^2)
//! ```
//!
//! with `B0, B1, B2` the Taylor coefficients of `B` at `s = 0` (times 1, 1, 2).

mod profile;
mod taylor;

use nalgebra::DMatrix;
use serde::Serialize;
use thiserror::Error;

use crate::expr::{Coord, EvalError, ScalarExpr};
use crate::hamiltonian::{Hamiltonian, HamiltonianError, BETA_FLOOR};
use crate::structure::{surface_fields, ArStructure, Regularity, StructureError};

pub use profile::{profile_second_log_derivative, ProfilePoint};
pub use taylor::{fitted_origin, FitParams};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DisintegrationError {
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Hamiltonian(#[from] HamiltonianError),
    #[error(transparent)]
    Structure(#[from] StructureError),
    #[error("beta(q) = {beta:e} is below the floor; q is too close to the characteristic point")]
    CharacteristicPoint { beta: f64 },
    #[error("B(0) is singular (det = {det:e})")]
    SingularB0 { det: f64 },
    #[error("Taylor fit is ill-conditioned (condition number {cond:e})")]
    FitConditioning { cond: f64 },
    #[error("operation requires a strongly regular structure with n >= 2 (got {regularity}, n = {n})")]
    WrongRegularityClass { regularity: Regularity, n: usize },
    #[error("density is not positive at s = {s}")]
    NonPositiveDensity { s: f64 },
    #[error("invalid profile grid: {0}")]
    InvalidGrid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Pipeline {
    ClosedForm,
    NumericTaylor,
}

/// Jet of the transversal geodesic family at a base point `q` on the
/// hypersurface, with the assembled matrices and the resulting value.
#[derive(Debug, Clone, Serialize)]
pub struct DensityJet {
    pub q: Vec<f64>,
    /// `(beta_0, ..., beta_n)`; `beta_0 = 0` and `beta_n = beta(q)`.
    pub grad_delta: Vec<f64>,
    pub f: Vec<f64>,
    /// Third-order coefficients. The closed form only provides the last one.
    pub h: Vec<Option<f64>>,
    #[serde(serialize_with = "ser_matrix")]
    pub b0: DMatrix<f64>,
    #[serde(serialize_with = "ser_matrix")]
    pub b1: DMatrix<f64>,
    #[serde(serialize_with = "ser_matrix")]
    pub b2: DMatrix<f64>,
    /// `tr(B0^-1 B2) - tr((B0^-1 B1)^2)`.
    pub trace_term: f64,
    /// `(log m o G)''(0)`.
    pub measure_term: f64,
    pub log_h_second: f64,
    pub pipeline: Pipeline,
}

fn ser_matrix<S: serde::Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
    use serde::ser::SerializeSeq;
    let mut seq = s.serialize_seq(Some(m.nrows()))?;
    for i in 0..m.nrows() {
        let row: Vec<f64> = m.row(i).iter().copied().collect();
        seq.serialize_element(&row)?;
    }
    seq.end()
}

impl DensityJet {
    pub fn n(&self) -> usize {
        self.q.len() - 1
    }

    pub fn h_n(&self) -> f64 {
        self.h[self.n()].unwrap_or(f64::NAN)
    }

    pub fn beta(&self) -> f64 {
        self.grad_delta[self.n()]
    }
}

/// Precomputed symbolic fields of one structure. Building it performs all
/// the symbolic differentiation; evaluating a jet is then cheap.
#[derive(Debug, Clone)]
pub struct DensityModel {
    structure: ArStructure,
    ham: Hamiltonian,
    beta: ScalarExpr,
    grad: Vec<ScalarExpr>,
    f: Vec<ScalarExpr>,
    h_n: ScalarExpr,
    // d_grad[c][k] = d/dc of grad_k, c over x, z1, ..., z_{n-1}.
    d_grad: Vec<Vec<ScalarExpr>>,
    d_f: Vec<Vec<ScalarExpr>>,
    log_m_grad: Vec<ScalarExpr>,
    log_m_hess: Vec<Vec<ScalarExpr>>,
}

impl DensityModel {
    pub fn new(s: &ArStructure) -> Self {
        let n = s.n();
        let fields = surface_fields(s);
        let beta = fields.beta.clone();
        let b2 = fields.beta_sq.clone();
        let alpha = &fields.alpha;
        let z = |i: usize| Coord::z(i);
        let m_entry =
            |i: usize, j: usize| -> ScalarExpr { (1..=n).map(|k| s.a(k, i) * s.a(k, j)).sum() };

        let mut grad = Vec::with_capacity(n + 1);
        grad.push(ScalarExpr::zero());
        for i in 1..n {
            grad.push(&alpha[i - 1] / &beta);
        }
        grad.push(beta.clone());

        let d_b2: Vec<ScalarExpr> = (1..=n).map(|l| b2.diff(z(l))).collect();
        let mut f = Vec::with_capacity(n + 1);
        f.push(-(beta.diff(Coord::X) / &beta));
        for i in 1..=n {
            let transport: ScalarExpr =
                (1..=n).map(|l| alpha[i - 1].diff(z(l)) * &alpha[l - 1]).sum();
            let correction: ScalarExpr = (1..=n).map(|j| m_entry(i, j) * &d_b2[j - 1]).sum();
            f.push((transport - 0.5 * correction) / &b2);
        }

        let dx_b2 = b2.diff(Coord::X);
        let hess_b2 = |j: usize, l: usize| d_b2[j - 1].diff(z(l));
        let mut acc = -0.5 * dx_b2.powi(2);
        for l in 1..=n {
            for r in 1..=n {
                acc = acc + &alpha[l - 1] * &alpha[r - 1] * hess_b2(l, r);
            }
        }
        let coupling: ScalarExpr = (1..=n).map(|l| &d_b2[l - 1] * &f[l]).sum();
        acc = acc + &b2 * coupling;
        for j in 1..=n {
            for l in 1..=n {
                let da = alpha[j - 1].diff(z(l));
                acc = acc - &alpha[l - 1] * da * &d_b2[j - 1];
                let inner = &alpha[l - 1] * hess_b2(j, l) - alpha[l - 1].diff(z(j)) * &d_b2[l - 1];
                acc = acc - 0.5 * &alpha[j - 1] * inner;
            }
        }
        let h_n = acc / beta.powi(3);

        let column_coords: Vec<Coord> = (0..n).map(Coord).collect();
        let d_grad = column_coords
            .iter()
            .map(|&c| grad.iter().map(|g| g.diff(c)).collect())
            .collect();
        let d_f = column_coords
            .iter()
            .map(|&c| f.iter().map(|e| e.diff(c)).collect())
            .collect();

        let log_m = s.measure().ln();
        let log_m_grad: Vec<ScalarExpr> = (0..=n).map(|c| log_m.diff(Coord(c))).collect();
        let log_m_hess = log_m_grad
            .iter()
            .map(|g| (0..=n).map(|c| g.diff(Coord(c))).collect())
            .collect();

        DensityModel {
            structure: s.clone(),
            ham: Hamiltonian::new(s),
            beta,
            grad,
            f,
            h_n,
            d_grad,
            d_f,
            log_m_grad,
            log_m_hess,
        }
    }

    pub fn structure(&self) -> &ArStructure {
        &self.structure
    }

    pub fn hamiltonian(&self) -> &Hamiltonian {
        &self.ham
    }

    pub fn n(&self) -> usize {
        self.structure.n()
    }

    fn check_base(&self, q: &[f64]) -> Result<f64, DisintegrationError> {
        let n = self.n();
        if q.len() != n + 1 {
            return Err(HamiltonianError::DimensionMismatch {
                expected: n + 1,
                found: q.len(),
            }
            .into());
        }
        if q[n] != 0.0 {
            return Err(HamiltonianError::NotOnSurface { point: q.to_vec() }.into());
        }
        let beta = self.beta.eval(q)?;
        if !(beta > BETA_FLOOR) {
            return Err(DisintegrationError::CharacteristicPoint { beta });
        }
        Ok(beta)
    }

    pub fn closed_form_jet(&self, q: &[f64]) -> Result<DensityJet, DisintegrationError> {
        self.check_base(q)?;
        let n = self.n();
        let eval_all = |v: &[ScalarExpr]| -> Result<Vec<f64>, EvalError> {
            v.iter().map(|e| e.eval(q)).collect()
        };
        let grad = eval_all(&self.grad)?;
        let f = eval_all(&self.f)?;
        let mut h = vec![None; n + 1];
        h[n] = Some(self.h_n.eval(q)?);
        let d_grad = self
            .d_grad
            .iter()
            .map(|col| eval_all(col))
            .collect::<Result<Vec<_>, _>>()?;
        let d_f = self
            .d_f
            .iter()
            .map(|col| eval_all(col))
            .collect::<Result<Vec<_>, _>>()?;
        self.assemble(q, grad, f, h, &d_grad, &d_f, Pipeline::ClosedForm)
    }

    pub fn numeric_taylor_jet(&self, q: &[f64], fit: &FitParams) -> Result<DensityJet, DisintegrationError> {
        self.check_base(q)?;
        taylor::numeric_jet(self, q, fit)
    }

    pub fn jet(&self, q: &[f64], pipeline: Pipeline) -> Result<DensityJet, DisintegrationError> {
        match pipeline {
            Pipeline::ClosedForm => self.closed_form_jet(q),
            Pipeline::NumericTaylor => self.numeric_taylor_jet(q, &FitParams::default()),
        }
    }

    pub fn log_h_second_derivative(&self, q: &[f64], pipeline: Pipeline) -> Result<f64, DisintegrationError> {
        Ok(self.jet(q, pipeline)?.log_h_second)
    }

    /// `(log m o G)''(0) = grad_delta^T Hess(log m) grad_delta + grad(log m) . f`.
    fn measure_term(&self, q: &[f64], grad: &[f64], f: &[f64]) -> Result<f64, EvalError> {
        let d = grad.len();
        let mut acc = 0.0;
        for a in 0..d {
            let g = self.log_m_grad[a].eval(q)?;
            acc += g * f[a];
            if grad[a] == 0.0 {
                continue;
            }
            for b in 0..d {
                if grad[b] != 0.0 {
                    acc += grad[a] * self.log_m_hess[a][b].eval(q)? * grad[b];
                }
            }
        }
        Ok(acc)
    }

    #[allow(clippy::too_many_arguments)]
    fn assemble(
        &self,
        q: &[f64],
        grad: Vec<f64>,
        f: Vec<f64>,
        h: Vec<Option<f64>>,
        d_grad: &[Vec<f64>],
        d_f: &[Vec<f64>],
        pipeline: Pipeline,
    ) -> Result<DensityJet, DisintegrationError> {
        let d = grad.len();
        let mut b0 = DMatrix::zeros(d, d);
        let mut b1 = DMatrix::zeros(d, d);
        let mut b2 = DMatrix::zeros(d, d);
        for k in 0..d {
            b0[(k, 0)] = grad[k];
            b1[(k, 0)] = f[k];
            b2[(k, 0)] = h[k].unwrap_or(0.0);
        }
        for c in 0..d - 1 {
            b0[(c, c + 1)] = 1.0;
            for k in 0..d {
                b1[(k, c + 1)] = d_grad[c][k];
                b2[(k, c + 1)] = d_f[c][k];
            }
        }
        let det = b0.determinant();
        let inv = match b0.clone().try_inverse() {
            Some(inv) if det.abs() > BETA_FLOOR => inv,
            _ => return Err(DisintegrationError::SingularB0 { det }),
        };
        let p = &inv * &b1;
        let trace_term = (&inv * &b2).trace() - (&p * &p).trace();
        let measure_term = self.measure_term(q, &grad, &f)?;
        Ok(DensityJet {
            q: q.to_vec(),
            grad_delta: grad,
            f,
            h,
            b0,
            b1,
            b2,
            trace_term,
            measure_term,
            log_h_second: trace_term + measure_term,
            pipeline,
        })
    }

    /// Componentwise expansion of the trace term for strongly regular
    /// structures, measure term excluded.
    pub fn strongly_regular_second_derivative(&self, q: &[f64]) -> Result<f64, DisintegrationError> {
        let s = &self.structure;
        match s.regularity() {
            Regularity::StronglyRegular(_) if s.n() >= 2 => {}
            regularity => {
                return Err(DisintegrationError::WrongRegularityClass { regularity, n: s.n() })
            }
        }
        self.componentwise_trace(q)
    }

    pub(crate) fn componentwise_trace(&self, q: &[f64]) -> Result<f64, DisintegrationError> {
        let jet = self.closed_form_jet(q)?;
        let n = self.n();
        let g = &jet.grad_delta;
        let f = &jet.f;
        let beta = g[n];
        // Column c + 1 of B1 holds d_c grad_delta, of B2 d_c f.
        let dg = |c: usize, k: usize| jet.b1[(k, c + 1)];
        let df = |c: usize, k: usize| jet.b2[(k, c + 1)];

        let mut v = jet.h_n() / beta + df(0, 0) - (f[n] / beta).powi(2);
        v -= 2.0 * f[0] * dg(0, n) / beta;
        for i in 1..n {
            v += df(i, i) - g[i] / beta * df(i, n);
            v -= 2.0 * dg(i, n) / beta * (f[i] - g[i] * f[n] / beta);
        }
        let r = |i: usize, j: usize| dg(j, i) - g[i] / beta * dg(j, n);
        for i in 1..n {
            for j in 1..n {
                v -= r(i, j) * r(j, i);
            }
        }
        Ok(v)
    }
}

pub fn closed_form_jet(s: &ArStructure, q: &[f64]) -> Result<DensityJet, DisintegrationError> {
    DensityModel::new(s).closed_form_jet(q)
}

pub fn numeric_taylor_jet(s: &ArStructure, q: &[f64], fit: &FitParams) -> Result<DensityJet, DisintegrationError> {
    DensityModel::new(s).numeric_taylor_jet(q, fit)
}

pub fn log_h_second_derivative(s: &ArStructure, q: &[f64], pipeline: Pipeline) -> Result<f64, DisintegrationError> {
    DensityModel::new(s).log_h_second_derivative(q, pipeline)
}

pub fn strongly_regular_second_derivative(s: &ArStructure, q: &[f64]) -> Result<f64, DisintegrationError> {
    DensityModel::new(s).strongly_regular_second_derivative(q)
}

pub fn density_profile(s: &ArStructure, q: &[f64], grid: &[f64]) -> Result<Vec<ProfilePoint>, DisintegrationError> {
    profile::density_profile(&DensityModel::new(s), q, grid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse;
    use crate::structure::fixtures::{flat, grushin, r4, structure, x_id2};

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(1e-300)
    }

    #[test]
    fn grushin_jet_by_hand() {
        let x0 = 0.4;
        let jet = closed_form_jet(&grushin(), &[x0, 0.0]).unwrap();
        assert_eq!(jet.grad_delta, vec![0.0, x0]);
        assert!((jet.f[0] + 1.0 / x0).abs() < 1e-14);
        assert_eq!(jet.f[1], 0.0);
        assert!((jet.h_n() + 2.0 / x0).abs() < 1e-14);
        assert!(jet.h[0].is_none());
        // Transversal density cos(t) + t sin(t), t = s / x0.
        assert!(rel(jet.log_h_second, 1.0 / (x0 * x0)) < 1e-12);
    }

    #[test]
    fn flat_jet_vanishes() {
        let jet = closed_form_jet(&flat(3), &[0.2, 0.1, -0.3, 0.0]).unwrap();
        assert_eq!(jet.grad_delta, vec![0.0, 0.0, 0.0, 1.0]);
        assert!(jet.f.iter().all(|v| *v == 0.0));
        assert_eq!(jet.h_n(), 0.0);
        assert!(jet.b1.iter().all(|v| *v == 0.0));
        assert!(jet.b2.iter().all(|v| *v == 0.0));
        assert_eq!(jet.log_h_second, 0.0);
    }

    #[test]
    fn b0_layout() {
        let q = [0.3, 0.1, -0.2, 0.0];
        let jet = closed_form_jet(&r4(), &q).unwrap();
        let d = 4;
        for k in 0..d {
            assert_eq!(jet.b0[(k, 0)], jet.grad_delta[k]);
            for c in 1..d {
                let want = if k == c - 1 { 1.0 } else { 0.0 };
                assert_eq!(jet.b0[(k, c)], want);
            }
        }
        assert_eq!(jet.grad_delta[0], 0.0);
        let beta = jet.beta();
        assert!((jet.b0.determinant().abs() - beta).abs() < 1e-14);
    }

    #[test]
    fn r4_values() {
        let m = DensityModel::new(&r4());
        let jet = m.closed_form_jet(&[0.3, 0.0, 0.0, 0.0]).unwrap();
        assert!((jet.beta() - 0.3).abs() < 1e-15);
        let closed = |x: f64, z1: f64, z2: f64| {
            let r = z1 * z1 + z2 * z2;
            (8.0 * x * x - 4.0 * r) / (4.0 * x * x + r).powi(2)
        };
        assert!(rel(jet.log_h_second, 50.0 / 9.0) < 1e-12);
        let v = m.log_h_second_derivative(&[0.3, 0.1, 0.2, 0.0], Pipeline::ClosedForm).unwrap();
        assert!(rel(v, 5200.0 / 1681.0) < 1e-12);
        assert!(rel(v, closed(0.3, 0.1, 0.2)) < 1e-12);
    }

    #[test]
    fn two_dimensional_formula() {
        // For a11 = f, (log h)''(0) = f f_zz + (f_x^2 - f f_xx) / f^2 at (x, 0).
        let cases = [("x*(1 + z1) + z1^2", 0.3, 527.0 / 45.0), ("x", 0.5, 4.0), ("x^2", 0.5, 8.0)];
        for (src, x, want) in cases {
            let s = structure(1, &[src], "1", Regularity::General2D);
            let jet = closed_form_jet(&s, &[x, 0.0]).unwrap();
            assert!(rel(jet.trace_term, want) < 1e-12, "{src}: {}", jet.trace_term);
        }
    }

    #[test]
    fn measure_term_chain_rule() {
        let s = grushin().with_measure(parse("exp(x + z1)").unwrap()).unwrap();
        let x0 = 0.25;
        let jet = closed_form_jet(&s, &[x0, 0.0]).unwrap();
        // log m is linear, so only grad(log m) . f = f0 + f1 = -1/x0 survives.
        assert!((jet.measure_term + 1.0 / x0).abs() < 1e-14);
        assert!(rel(jet.log_h_second, 1.0 / (x0 * x0) - 1.0 / x0) < 1e-12);

        let s = grushin().with_measure(parse("1 + z1^2").unwrap()).unwrap();
        let jet = closed_form_jet(&s, &[x0, 0.0]).unwrap();
        // beta^2 * d_zz log m at z = 0 is 2 x0^2.
        assert!((jet.measure_term - 2.0 * x0 * x0).abs() < 1e-14);
    }

    #[test]
    fn characteristic_point_rejected() {
        assert!(matches!(
            closed_form_jet(&grushin(), &[0.0, 0.0]),
            Err(DisintegrationError::CharacteristicPoint { .. })
        ));
        assert!(matches!(
            closed_form_jet(&grushin(), &[0.3, 0.1]),
            Err(DisintegrationError::Hamiltonian(HamiltonianError::NotOnSurface { .. }))
        ));
    }

    #[test]
    fn strongly_regular_expansion_matches_trace() {
        let m = DensityModel::new(&x_id2());
        for q in [[0.3, 0.0, 0.0], [0.1, 0.4, 0.0], [-0.2, -0.5, 0.0]] {
            let jet = m.closed_form_jet(&q).unwrap();
            let v = m.strongly_regular_second_derivative(&q).unwrap();
            assert!((v - jet.trace_term).abs() < 1e-8 * jet.trace_term.abs().max(1.0));
        }
        let v = m.strongly_regular_second_derivative(&[0.3, 0.0, 0.0]).unwrap();
        assert!(rel(v, 1.0 / 0.09) < 1e-12);

        assert!(matches!(
            strongly_regular_second_derivative(&grushin(), &[0.3, 0.0]),
            Err(DisintegrationError::WrongRegularityClass { .. })
        ));
        assert!(matches!(
            strongly_regular_second_derivative(&r4(), &[0.3, 0.0, 0.0, 0.0]),
            Err(DisintegrationError::WrongRegularityClass { .. })
        ));
        let flat = DensityModel::new(&flat(2));
        assert_eq!(flat.componentwise_trace(&[0.2, 0.3, 0.0]).unwrap(), 0.0);
    }

    #[test]
    fn componentwise_trace_matches_on_general_structures() {
        let s = structure(
            3,
            &["1 + x*z1", "0.2*z2", "-z2/2", "0", "1", "z1/2 + x^2", "0.1*x", "0", "x*(1 + z1^2)"],
            "1",
            Regularity::General,
        );
        let m = DensityModel::new(&s);
        let q = [0.2, 0.1, -0.3, 0.0];
        let jet = m.closed_form_jet(&q).unwrap();
        let v = m.componentwise_trace(&q).unwrap();
        assert!((v - jet.trace_term).abs() < 1e-9 * jet.trace_term.abs().max(1.0));
    }
}
