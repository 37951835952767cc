//! Normal extremals of the control Hamiltonian and the exponential map
//! from the hypersurface `zn = 0`.

pub mod dopri;

use thiserror::Error;

use crate::expr::{Coord, EvalError, ScalarExpr};
use crate::structure::{surface_fields, ArStructure, Chart};

pub use dopri::{IntegrateError, Tolerance};

/// Below this `beta`, the initial covector `1/beta dzn` is treated as
/// degenerate.
pub const BETA_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HamiltonianError {
    #[error("evaluation failed: {0}")]
    Eval(#[from] EvalError),
    #[error("beta(q) = {beta:e} is below the floor; q is too close to the characteristic point")]
    CharacteristicPoint { beta: f64 },
    #[error("base point {point:?} is not on the hypersurface zn = 0")]
    NotOnSurface { point: Vec<f64> },
    #[error("expected a point with {expected} coordinates, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("arc left the chart at s = {s} (point {point:?})")]
    LeftChart { s: f64, point: Vec<f64> },
    #[error("step size underflow at s = {s}")]
    StiffnessFailure { s: f64 },
    #[error("integration step budget exhausted at s = {s}")]
    StepBudget { s: f64 },
    #[error("s = {s} lies outside the integrated range [-{s_max}, {s_max}]")]
    OutOfRange { s: f64, s_max: f64 },
}

impl From<IntegrateError<HamiltonianError>> for HamiltonianError {
    fn from(e: IntegrateError<HamiltonianError>) -> Self {
        match e {
            IntegrateError::Rhs(e) => e,
            IntegrateError::StepUnderflow { t, .. } => HamiltonianError::StiffnessFailure { s: t },
            IntegrateError::TooManySteps { t } => HamiltonianError::StepBudget { s: t },
        }
    }
}

/// Point in `T*M`: position `(x, z)` and covector `(px, pz)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseState {
    pub x: f64,
    pub z: Vec<f64>,
    pub px: f64,
    pub pz: Vec<f64>,
}

impl PhaseState {
    pub fn n(&self) -> usize {
        self.z.len()
    }

    /// Flattened `(x, z, px, pz)`.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(2 * (self.n() + 1));
        v.push(self.x);
        v.extend_from_slice(&self.z);
        v.push(self.px);
        v.extend_from_slice(&self.pz);
        v
    }

    pub fn from_slice(y: &[f64]) -> Self {
        let d = y.len() / 2;
        PhaseState {
            x: y[0],
            z: y[1..d].to_vec(),
            px: y[d],
            pz: y[d + 1..].to_vec(),
        }
    }

    /// `(x, z1, ..., zn)`.
    pub fn position(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.n() + 1);
        p.push(self.x);
        p.extend_from_slice(&self.z);
        p
    }
}

/// `H = px^2 / 2 + pz^T M pz / 2` with `M = A^T A`, plus the symbolic
/// partials of `M` needed for Hamilton's equations.
#[derive(Debug, Clone)]
pub struct Hamiltonian {
    n: usize,
    // Upper triangle of M, row-major over i <= j.
    m: Vec<ScalarExpr>,
    // dm[c] holds d/dc of the upper triangle, c = 0 (x), 1..=n (z_c).
    dm: Vec<Vec<ScalarExpr>>,
    beta: ScalarExpr,
    chart: Chart,
}

impl Hamiltonian {
    pub fn new(s: &ArStructure) -> Self {
        let n = s.n();
        let mut m = Vec::with_capacity(n * (n + 1) / 2);
        for i in 1..=n {
            for j in i..=n {
                m.push((1..=n).map(|k| s.a(k, i) * s.a(k, j)).sum::<ScalarExpr>());
            }
        }
        let dm = (0..=n)
            .map(|c| m.iter().map(|e| e.diff(Coord(c))).collect())
            .collect();
        Hamiltonian {
            n,
            m,
            dm,
            beta: surface_fields(s).beta,
            chart: s.chart().clone(),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    fn tri(&self, i: usize, j: usize) -> usize {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        i * self.n - i * (i + 1) / 2 + j
    }

    fn quad(&self, entries: &[ScalarExpr], p: &[f64], pz: &[f64]) -> Result<f64, EvalError> {
        let n = self.n;
        let mut acc = 0.0;
        for i in 0..n {
            for j in i..n {
                let v = entries[self.tri(i, j)].eval(p)?;
                let w = if i == j { 1.0 } else { 2.0 };
                acc += w * v * pz[i] * pz[j];
            }
        }
        Ok(acc)
    }

    /// Hamiltonian at a flattened state.
    pub fn value_flat(&self, y: &[f64]) -> Result<f64, EvalError> {
        let d = self.n + 1;
        let (pos, cov) = y.split_at(d);
        Ok(0.5 * cov[0] * cov[0] + 0.5 * self.quad(&self.m, pos, &cov[1..])?)
    }

    pub fn value(&self, st: &PhaseState) -> Result<f64, HamiltonianError> {
        self.check_dim(st)?;
        Ok(self.value_flat(&st.to_vec())?)
    }

    /// Hamilton's equations on a flattened state.
    pub fn rhs_flat(&self, y: &[f64], dy: &mut [f64]) -> Result<(), EvalError> {
        let n = self.n;
        let d = n + 1;
        let pos = &y[..d];
        let px = y[d];
        let pz = &y[d + 1..];
        dy[0] = px;
        for i in 0..n {
            let mut acc = 0.0;
            for j in 0..n {
                acc += self.m[self.tri(i, j)].eval(pos)? * pz[j];
            }
            dy[1 + i] = acc;
        }
        for c in 0..d {
            dy[d + c] = -0.5 * self.quad(&self.dm[c], pos, pz)?;
        }
        Ok(())
    }

    pub fn rhs(&self, st: &PhaseState) -> Result<PhaseState, HamiltonianError> {
        self.check_dim(st)?;
        let y = st.to_vec();
        let mut dy = vec![0.0; y.len()];
        self.rhs_flat(&y, &mut dy)?;
        Ok(PhaseState::from_slice(&dy))
    }

    fn check_dim(&self, st: &PhaseState) -> Result<(), HamiltonianError> {
        if st.z.len() != self.n || st.pz.len() != self.n {
            return Err(HamiltonianError::DimensionMismatch {
                expected: self.n,
                found: st.z.len().max(st.pz.len()),
            });
        }
        Ok(())
    }

    fn check_surface_point(&self, q: &[f64]) -> Result<(), HamiltonianError> {
        if q.len() != self.n + 1 {
            return Err(HamiltonianError::DimensionMismatch {
                expected: self.n + 1,
                found: q.len(),
            });
        }
        if q[self.n] != 0.0 {
            return Err(HamiltonianError::NotOnSurface { point: q.to_vec() });
        }
        Ok(())
    }

    /// `lambda(q) = dzn / beta(q)`, which has `2H = 1`.
    pub fn initial_covector(&self, q: &[f64]) -> Result<PhaseState, HamiltonianError> {
        self.check_surface_point(q)?;
        let beta = self.beta.eval(q)?;
        if !(beta > BETA_FLOOR) {
            return Err(HamiltonianError::CharacteristicPoint { beta });
        }
        let mut pz = vec![0.0; self.n];
        pz[self.n - 1] = 1.0 / beta;
        Ok(PhaseState {
            x: q[0],
            z: q[1..].to_vec(),
            px: 0.0,
            pz,
        })
    }

    /// Integrate `H` from an arbitrary state over `[0, t_end]`.
    pub fn flow(&self, st: &PhaseState, t_end: f64, tol: Tolerance) -> Result<PhaseState, HamiltonianError> {
        self.check_dim(st)?;
        let y0 = st.to_vec();
        let segs = dopri::integrate(
            |_, y, dy| self.rhs_flat(y, dy).map_err(HamiltonianError::from),
            |t, y| self.guard(t, y),
            0.0,
            &y0,
            t_end,
            tol,
        )?;
        let Some(last) = segs.last() else {
            return Ok(st.clone());
        };
        let mut out = vec![0.0; y0.len()];
        last.eval(t_end, &mut out);
        Ok(PhaseState::from_slice(&out))
    }

    fn guard(&self, t: f64, y: &[f64]) -> Result<(), HamiltonianError> {
        let pos = &y[..self.n + 1];
        if !self.chart.contains(pos) || y.iter().any(|v| !v.is_finite()) {
            return Err(HamiltonianError::LeftChart {
                s: t,
                point: pos.to_vec(),
            });
        }
        Ok(())
    }

    /// `s -> G(s, q) = exp_q(s lambda(q))` on `[-s_max, s_max]`.
    pub fn exp_from_surface(&self, q: &[f64], s_max: f64, tol: Tolerance) -> Result<GeodesicArc, HamiltonianError> {
        let st0 = self.initial_covector(q)?;
        let y0 = st0.to_vec();
        let s_max = s_max.abs();
        let mut max_energy_error = 0.0f64;
        let run = |t_end: f64, max_energy_error: &mut f64| {
            dopri::integrate(
                |_, y, dy| self.rhs_flat(y, dy).map_err(HamiltonianError::from),
                |t, y| {
                    self.guard(t, y)?;
                    let e = (2.0 * self.value_flat(y)? - 1.0).abs();
                    *max_energy_error = max_energy_error.max(e);
                    Ok(())
                },
                0.0,
                &y0,
                t_end,
                tol,
            )
            .map_err(HamiltonianError::from)
        };
        let forward = run(s_max, &mut max_energy_error)?;
        let backward = run(-s_max, &mut max_energy_error)?;
        Ok(GeodesicArc {
            base: q.to_vec(),
            covector0: st0,
            s_max,
            tol,
            max_energy_error,
            forward,
            backward,
            ham: self.clone(),
        })
    }
}

pub fn hamiltonian_value(s: &ArStructure, st: &PhaseState) -> Result<f64, HamiltonianError> {
    Hamiltonian::new(s).value(st)
}

pub fn ham_rhs(s: &ArStructure, st: &PhaseState) -> Result<PhaseState, HamiltonianError> {
    Hamiltonian::new(s).rhs(st)
}

pub fn initial_covector(s: &ArStructure, q: &[f64]) -> Result<PhaseState, HamiltonianError> {
    Hamiltonian::new(s).initial_covector(q)
}

pub fn exp_from_surface(
    s: &ArStructure,
    q: &[f64],
    s_max: f64,
    tol: Tolerance,
) -> Result<GeodesicArc, HamiltonianError> {
    Hamiltonian::new(s).exp_from_surface(q, s_max, tol)
}

/// A unit-speed normal extremal through `q` with dense output in both
/// directions.
#[derive(Debug, Clone)]
pub struct GeodesicArc {
    pub base: Vec<f64>,
    pub covector0: PhaseState,
    pub s_max: f64,
    pub tol: Tolerance,
    /// Largest `|2H - 1|` seen at accepted step end points.
    pub max_energy_error: f64,
    forward: Vec<dopri::Segment>,
    backward: Vec<dopri::Segment>,
    ham: Hamiltonian,
}

impl GeodesicArc {
    pub fn state(&self, s: f64) -> Result<PhaseState, HamiltonianError> {
        if s == 0.0 {
            return Ok(self.covector0.clone());
        }
        if !(s.abs() <= self.s_max) {
            return Err(HamiltonianError::OutOfRange { s, s_max: self.s_max });
        }
        let segs = if s > 0.0 { &self.forward } else { &self.backward };
        let seg = segs
            .iter()
            .find(|seg| seg.contains(s))
            .or(segs.last())
            .expect("nonempty arc");
        let mut y = vec![0.0; 2 * (self.ham.n + 1)];
        seg.eval(s, &mut y);
        Ok(PhaseState::from_slice(&y))
    }

    pub fn position(&self, s: f64) -> Result<Vec<f64>, HamiltonianError> {
        Ok(self.state(s)?.position())
    }

    /// `d/ds G(s, q)`, from Hamilton's equations at the interpolated state.
    pub fn velocity(&self, s: f64) -> Result<Vec<f64>, HamiltonianError> {
        let y = self.state(s)?.to_vec();
        let mut dy = vec![0.0; y.len()];
        self.ham.rhs_flat(&y, &mut dy)?;
        dy.truncate(self.ham.n + 1);
        Ok(dy)
    }

    pub fn energy(&self, s: f64) -> Result<f64, HamiltonianError> {
        Ok(self.ham.value_flat(&self.state(s)?.to_vec())?)
    }

    pub fn step_count(&self) -> usize {
        self.forward.len() + self.backward.len()
    }
}
