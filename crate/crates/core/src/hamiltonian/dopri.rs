//! Dormand-Prince 5(4) with Hairer's quartic dense output.

use thiserror::Error;

const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];

const A: [[f64; 6]; 7] = [
    [0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];

// Fifth-order weights equal the last row of A (FSAL).
const B: [f64; 7] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
    0.0,
];

// Difference between the fifth- and fourth-order weights.
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

const D: [f64; 7] = [
    -12715105075.0 / 11282082432.0,
    0.0,
    87487479700.0 / 32700410799.0,
    -10690763975.0 / 1880347072.0,
    701980252875.0 / 199316789632.0,
    -1453857185.0 / 822651844.0,
    69997945.0 / 29380423.0,
];

const SAFETY: f64 = 0.9;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 10.0;
const MAX_STEPS: usize = 200_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerance {
    pub abs: f64,
    pub rel: f64,
}

impl Tolerance {
    pub fn uniform(tol: f64) -> Self {
        Tolerance { abs: tol, rel: tol }
    }
}

impl Default for Tolerance {
    fn default() -> Self {
        Tolerance::uniform(1e-10)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum IntegrateError<E> {
    #[error(transparent)]
    Rhs(E),
    #[error("step size underflow at t = {t} (h = {h:e})")]
    StepUnderflow { t: f64, h: f64 },
    #[error("step budget exhausted at t = {t}")]
    TooManySteps { t: f64 },
}

/// One accepted step with its interpolation coefficients.
#[derive(Debug, Clone)]
pub struct Segment {
    pub t0: f64,
    pub h: f64,
    cont: [Vec<f64>; 5],
}

impl Segment {
    pub fn t1(&self) -> f64 {
        self.t0 + self.h
    }

    pub fn contains(&self, t: f64) -> bool {
        let (a, b) = if self.h >= 0.0 {
            (self.t0, self.t1())
        } else {
            (self.t1(), self.t0)
        };
        a <= t && t <= b
    }

    pub fn eval(&self, t: f64, out: &mut [f64]) {
        let th = (t - self.t0) / self.h;
        let th1 = 1.0 - th;
        let [c0, c1, c2, c3, c4] = &self.cont;
        for i in 0..out.len() {
            out[i] = c0[i] + th * (c1[i] + th1 * (c2[i] + th * (c3[i] + th1 * c4[i])));
        }
    }
}

fn error_norm(err: &[f64], y0: &[f64], y1: &[f64], tol: Tolerance) -> f64 {
    let sum: f64 = err
        .iter()
        .zip(y0.iter().zip(y1))
        .map(|(e, (a, b))| {
            let sc = tol.abs + tol.rel * a.abs().max(b.abs());
            (e / sc).powi(2)
        })
        .sum();
    (sum / err.len() as f64).sqrt()
}

fn initial_step<F, E>(
    f: &mut F,
    t0: f64,
    y0: &[f64],
    f0: &[f64],
    dir: f64,
    tol: Tolerance,
) -> Result<f64, E>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<(), E>,
{
    let scale: Vec<f64> = y0.iter().map(|y| tol.abs + tol.rel * y.abs()).collect();
    let rms = |v: &[f64]| {
        (v.iter().zip(&scale).map(|(a, s)| (a / s).powi(2)).sum::<f64>() / v.len() as f64).sqrt()
    };
    let d0 = rms(y0);
    let d1 = rms(f0);
    let h0 = if d0 < 1e-5 || d1 < 1e-5 {
        1e-6
    } else {
        0.01 * d0 / d1
    };
    let y1: Vec<f64> = y0.iter().zip(f0).map(|(y, k)| y + dir * h0 * k).collect();
    let mut f1 = vec![0.0; y0.len()];
    f(t0 + dir * h0, &y1, &mut f1)?;
    let diff: Vec<f64> = f1.iter().zip(f0).map(|(a, b)| a - b).collect();
    let d2 = rms(&diff) / h0;
    let h1 = if d1.max(d2) <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / d1.max(d2)).powf(1.0 / 5.0)
    };
    Ok((100.0 * h0).min(h1))
}

/// Adaptive integration from `t0` to `t_end` (either direction). `guard` is
/// called with every accepted step end point and may abort the run.
pub fn integrate<F, G, E>(
    mut f: F,
    mut guard: G,
    t0: f64,
    y0: &[f64],
    t_end: f64,
    tol: Tolerance,
) -> Result<Vec<Segment>, IntegrateError<E>>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<(), E>,
    G: FnMut(f64, &[f64]) -> Result<(), E>,
{
    let dim = y0.len();
    let mut segments = Vec::new();
    if t_end == t0 {
        return Ok(segments);
    }
    let dir = (t_end - t0).signum();
    let mut t = t0;
    let mut y = y0.to_vec();
    let mut k: [Vec<f64>; 7] = std::array::from_fn(|_| vec![0.0; dim]);
    f(t, &y, &mut k[0]).map_err(IntegrateError::Rhs)?;
    let mut h = initial_step(&mut f, t, &y, &k[0].clone(), dir, tol)
        .map_err(IntegrateError::Rhs)?
        .min((t_end - t0).abs());
    let mut stage = vec![0.0; dim];
    let mut y1 = vec![0.0; dim];
    let mut err = vec![0.0; dim];
    let mut rejected_last = false;

    for _ in 0..MAX_STEPS {
        let remaining = (t_end - t).abs();
        let last = h >= remaining;
        if last {
            h = remaining;
        }
        if h <= 1e-14 * t.abs().max(1.0) {
            return Err(IntegrateError::StepUnderflow { t, h });
        }
        let hs = dir * h;
        for s in 1..7 {
            for i in 0..dim {
                let mut acc = y[i];
                for (j, a) in A[s][..s].iter().enumerate() {
                    acc += hs * a * k[j][i];
                }
                stage[i] = acc;
            }
            let (_, tail) = k.split_at_mut(s);
            f(t + C[s] * hs, &stage, &mut tail[0]).map_err(IntegrateError::Rhs)?;
            if s == 6 {
                y1.copy_from_slice(&stage);
            }
        }
        for i in 0..dim {
            err[i] = hs * (0..7).map(|j| E[j] * k[j][i]).sum::<f64>();
        }
        let en = error_norm(&err, &y, &y1, tol);
        if !en.is_finite() {
            h *= FAC_MIN;
            rejected_last = true;
            continue;
        }
        if en <= 1.0 {
            let cont0 = y.clone();
            let cont1: Vec<f64> = (0..dim).map(|i| y1[i] - y[i]).collect();
            let cont2: Vec<f64> = (0..dim).map(|i| hs * k[0][i] - cont1[i]).collect();
            let cont3: Vec<f64> = (0..dim)
                .map(|i| cont1[i] - hs * k[6][i] - cont2[i])
                .collect();
            let cont4: Vec<f64> = (0..dim)
                .map(|i| hs * (0..7).map(|j| D[j] * k[j][i]).sum::<f64>())
                .collect();
            let t_new = if last { t_end } else { t + hs };
            guard(t_new, &y1).map_err(IntegrateError::Rhs)?;
            segments.push(Segment {
                t0: t,
                h: hs,
                cont: [cont0, cont1, cont2, cont3, cont4],
            });
            t = t_new;
            y.copy_from_slice(&y1);
            let k6 = std::mem::take(&mut k[6]);
            k[0] = k6;
            k[6] = vec![0.0; dim];
            if last {
                return Ok(segments);
            }
            let mut fac = SAFETY * en.max(1e-10).powf(-0.2);
            fac = fac.clamp(FAC_MIN, FAC_MAX);
            if rejected_last {
                fac = fac.min(1.0);
            }
            h *= fac;
            rejected_last = false;
        } else {
            let fac = (SAFETY * en.powf(-0.2)).max(FAC_MIN);
            h *= fac;
            rejected_last = true;
        }
    }
    Err(IntegrateError::TooManySteps { t })
}

/// Classical fixed-step run (no error control), returning the end state.
pub fn integrate_fixed<F, E>(mut f: F, t0: f64, y0: &[f64], t_end: f64, steps: usize) -> Result<Vec<f64>, E>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<(), E>,
{
    let dim = y0.len();
    let hs = (t_end - t0) / steps as f64;
    let mut y = y0.to_vec();
    let mut k: [Vec<f64>; 7] = std::array::from_fn(|_| vec![0.0; dim]);
    let mut stage = vec![0.0; dim];
    for step in 0..steps {
        let t = t0 + step as f64 * hs;
        f(t, &y, &mut k[0])?;
        for s in 1..6 {
            for i in 0..dim {
                stage[i] = y[i] + hs * (0..s).map(|j| A[s][j] * k[j][i]).sum::<f64>();
            }
            let (_, tail) = k.split_at_mut(s);
            f(t + C[s] * hs, &stage, &mut tail[0])?;
        }
        for i in 0..dim {
            y[i] += hs * (0..6).map(|j| B[j] * k[j][i]).sum::<f64>();
        }
    }
    Ok(y)
}
