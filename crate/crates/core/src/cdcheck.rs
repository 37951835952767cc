//! Verdict engine: sample `(log h_q)''(0)` along `q = (x, 0, ..., 0)`, fit a
//! power law as `x -> 0` and turn a positive divergence into a CD(K,N)
//! failure certificate.

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::disintegration::{DensityModel, Pipeline};
use crate::structure::Chart;

pub const MIN_X: f64 = 1e-4;
pub const TAIL_SIZE: usize = 6;
pub const MIN_TAIL_POSITIVE: usize = 4;
pub const MONOTONE_WINDOW: usize = 4;
pub const MAX_FAILURE_FRACTION: f64 = 0.2;

/// Soundness gate thresholds.
pub const GATE_MAX_ORDER: f64 = -1.5;
pub const GATE_MIN_R2: f64 = 0.99;

pub const DEFAULT_K_GRID: [f64; 5] = [-100.0, -10.0, 0.0, 10.0, 100.0];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CdError {
    #[error("invalid x grid: {0}")]
    InvalidGrid(String),
    #[error("{failed} of {total} sample points failed (first: {first})")]
    TooManyFailures {
        failed: usize,
        total: usize,
        first: String,
    },
    #[error("only {positive} positive samples among the {tail} smallest x (need {MIN_TAIL_POSITIVE})")]
    InsufficientTail { positive: usize, tail: usize },
    #[error("no certified divergence: {}", reasons.join("; "))]
    NoDivergence { reasons: Vec<String> },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurveSample {
    pub x: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FailedSample {
    pub x: f64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurveRun {
    /// Sorted by decreasing `x`.
    pub samples: Vec<CurveSample>,
    pub failures: Vec<FailedSample>,
}

/// `k` points from `a` to `b` in geometric progression (both included).
pub fn geometric_grid(a: f64, b: f64, k: usize) -> Vec<f64> {
    match k {
        0 => vec![],
        1 => vec![a],
        _ => {
            let r = (b / a).ln() / (k - 1) as f64;
            (0..k)
                .map(|i| {
                    if i == k - 1 {
                        b
                    } else {
                        a * (r * i as f64).exp()
                    }
                })
                .collect()
        }
    }
}

/// Twelve points from 0.4 down to 5e-3, without points outside the chart.
pub fn default_x_grid(chart: &Chart) -> Vec<f64> {
    geometric_grid(0.4, 5e-3, 12)
        .into_iter()
        .filter(|&x| x <= chart.hi[0])
        .collect()
}

pub fn check_grid(chart: &Chart, x_grid: &[f64]) -> Result<(), CdError> {
    if x_grid.is_empty() {
        return Err(CdError::InvalidGrid("empty".into()));
    }
    for &x in x_grid {
        if !(x >= MIN_X) || x > chart.hi[0] {
            return Err(CdError::InvalidGrid(format!(
                "x = {x} outside [{MIN_X}, {}]",
                chart.hi[0]
            )));
        }
    }
    Ok(())
}

/// Evaluate the second log-derivative at `(x, 0, ..., 0)` for each grid
/// point, in parallel. Failed points are recorded and skipped.
pub fn sample_curve(model: &DensityModel, x_grid: &[f64], pipeline: Pipeline) -> Result<CurveRun, CdError> {
    check_grid(model.structure().chart(), x_grid)?;
    let dim = model.structure().dim();
    let results: Vec<(f64, Result<f64, String>)> = x_grid
        .par_iter()
        .map(|&x| {
            let mut q = vec![0.0; dim];
            q[0] = x;
            let v = model
                .log_h_second_derivative(&q, pipeline)
                .map_err(|e| e.to_string())
                .and_then(|v| {
                    if v.is_finite() {
                        Ok(v)
                    } else {
                        Err(format!("non-finite value {v}"))
                    }
                });
            (x, v)
        })
        .collect();
    let mut samples = Vec::new();
    let mut failures = Vec::new();
    for (x, r) in results {
        match r {
            Ok(value) => samples.push(CurveSample { x, value }),
            Err(error) => {
                log::warn!("sample at x = {x} failed: {error}");
                failures.push(FailedSample { x, error });
            }
        }
    }
    if failures.len() as f64 > MAX_FAILURE_FRACTION * x_grid.len() as f64 {
        return Err(CdError::TooManyFailures {
            failed: failures.len(),
            total: x_grid.len(),
            first: failures[0].error.clone(),
        });
    }
    samples.sort_by(|a, b| b.x.total_cmp(&a.x));
    Ok(CurveRun { samples, failures })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SingularityFit {
    /// Sorted by decreasing `x`.
    pub samples: Vec<CurveSample>,
    /// Number of positive tail samples entering the log-log fit.
    pub tail_used: usize,
    pub fitted_order: f64,
    pub fitted_coefficient: f64,
    pub r_squared: f64,
    pub monotone_tail: bool,
}

impl SingularityFit {
    /// Reasons why the soundness gate refuses a verdict; empty if it passes.
    pub fn gate_failures(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.fitted_order <= GATE_MAX_ORDER) {
            out.push(format!(
                "fitted order {:.4} is above {GATE_MAX_ORDER}",
                self.fitted_order
            ));
        }
        if !(self.fitted_coefficient > 0.0) {
            out.push(format!(
                "fitted coefficient {:.4e} is not positive",
                self.fitted_coefficient
            ));
        }
        if !self.monotone_tail {
            out.push("tail is not strictly increasing as x decreases".into());
        }
        if !(self.r_squared >= GATE_MIN_R2) {
            out.push(format!("r^2 = {:.4} is below {GATE_MIN_R2}", self.r_squared));
        }
        out
    }

    pub fn certifies_divergence(&self) -> bool {
        self.gate_failures().is_empty()
    }
}

/// Least-squares line `log v = log c + p log x` over the positive samples
/// among the `TAIL_SIZE` smallest `x`.
pub fn fit_singularity(samples: &[CurveSample]) -> Result<SingularityFit, CdError> {
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| b.x.total_cmp(&a.x));
    let tail_start = sorted.len().saturating_sub(TAIL_SIZE);
    let tail = &sorted[tail_start..];
    let pts: Vec<(f64, f64)> = tail
        .iter()
        .filter(|s| s.value > 0.0 && s.x > 0.0)
        .map(|s| (s.x.ln(), s.value.ln()))
        .collect();
    if pts.len() < MIN_TAIL_POSITIVE {
        return Err(CdError::InsufficientTail {
            positive: pts.len(),
            tail: tail.len(),
        });
    }
    let m = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = pts
        .iter()
        .map(|p| (p.1 - intercept - slope * p.0).powi(2))
        .sum();
    let r_squared = if syy > 0.0 { 1.0 - ss_res / syy } else { 1.0 };
    let window = &sorted[sorted.len().saturating_sub(MONOTONE_WINDOW)..];
    let monotone_tail =
        window.len() == MONOTONE_WINDOW && window.windows(2).all(|w| w[1].value > w[0].value);
    Ok(SingularityFit {
        samples: sorted,
        tail_used: pts.len(),
        fitted_order: slope,
        fitted_coefficient: intercept.exp(),
        r_squared,
        monotone_tail,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KThreshold {
    #[serde(rename = "K")]
    pub k: f64,
    /// Largest sampled `x` such that the value exceeds `-K` there and at
    /// every smaller sampled `x`.
    pub x: Option<f64>,
}

pub fn per_k_thresholds(samples: &[CurveSample], k_grid: &[f64]) -> Vec<KThreshold> {
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.x.total_cmp(&b.x));
    k_grid
        .iter()
        .map(|&k| {
            let x = sorted
                .iter()
                .take_while(|s| s.value > -k)
                .last()
                .map(|s| s.x);
            KThreshold { k, x }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CdVerdict {
    pub structure: String,
    #[serde(rename = "K_grid")]
    pub k_grid: Vec<f64>,
    pub per_k: Vec<KThreshold>,
    pub fit: SingularityFit,
    pub statement: String,
}

pub fn verdict(structure: &str, fit: &SingularityFit, k_grid: &[f64]) -> Result<CdVerdict, CdError> {
    let reasons = fit.gate_failures();
    if !reasons.is_empty() {
        return Err(CdError::NoDivergence { reasons });
    }
    let statement = format!(
        "CD(K,N) fails for all K in R and N in (1, inf). Along q = (x, 0, ..., 0) the \
         transversal densities satisfy (log h_q)''(0) ~ {:.4} * x^({:.4}) (r^2 = {:.6}, \
         {} tail samples, monotone), which diverges to +inf as q approaches the \
         characteristic point. Hence for every K some q has (log h_q)''(0) > -K, and \
         since (log h)'' + ((log h)')^2/(N-1) >= (log h)'' the one-dimensional \
         CD(K,N) inequality (log h)'' + ((log h)')^2/(N-1) <= -K is violated for \
         every N in (1, inf).",
        fit.fitted_coefficient, fit.fitted_order, fit.r_squared, fit.tail_used
    );
    Ok(CdVerdict {
        structure: structure.to_string(),
        k_grid: k_grid.to_vec(),
        per_k: per_k_thresholds(&fit.samples, k_grid),
        fit: fit.clone(),
        statement,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Outcome {
    #[serde(rename = "FAIL-CD")]
    Disproved,
    #[serde(rename = "INCONCLUSIVE")]
    Inconclusive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FitSummary {
    pub order: f64,
    pub coeff: f64,
    pub r2: f64,
    pub monotone: bool,
}

/// Serializable result of a full check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CdReport {
    pub structure: String,
    pub pipeline: Pipeline,
    pub samples: Vec<CurveSample>,
    pub failures: Vec<FailedSample>,
    pub fit: Option<FitSummary>,
    pub verdict: Outcome,
    pub statement: String,
    #[serde(rename = "per_K")]
    pub per_k: Vec<KThreshold>,
    pub gate: String,
}

impl CdReport {
    pub fn exit_code(&self) -> i32 {
        match self.verdict {
            Outcome::Disproved => 0,
            Outcome::Inconclusive => 2,
        }
    }
}

pub fn gate_policy() -> String {
    format!(
        "verdict requires fitted order <= {GATE_MAX_ORDER}, coefficient > 0, strictly \
         increasing values over the {MONOTONE_WINDOW} smallest x, and r^2 >= {GATE_MIN_R2}, \
         fitted on the positive samples among the {TAIL_SIZE} smallest x"
    )
}

/// Sample, fit and decide. Only infrastructure failures are errors; a
/// missing divergence yields an inconclusive report.
pub fn run_check(
    model: &DensityModel,
    x_grid: &[f64],
    k_grid: &[f64],
    pipeline: Pipeline,
) -> Result<CdReport, CdError> {
    let name = model.structure().name().to_string();
    let run = sample_curve(model, x_grid, pipeline)?;
    let per_k = per_k_thresholds(&run.samples, k_grid);
    let fit = fit_singularity(&run.samples);
    let summary = fit.as_ref().ok().map(|f| FitSummary {
        order: f.fitted_order,
        coeff: f.fitted_coefficient,
        r2: f.r_squared,
        monotone: f.monotone_tail,
    });
    let decided = fit
        .clone()
        .and_then(|f| verdict(&name, &f, k_grid));
    let (outcome, statement) = match decided {
        Ok(v) => (Outcome::Disproved, v.statement),
        Err(e) => (
            Outcome::Inconclusive,
            format!("inconclusive: {e}. The method only disproves CD(K,N); no claim is made."),
        ),
    };
    Ok(CdReport {
        structure: name,
        pipeline,
        samples: run.samples,
        failures: run.failures,
        fit: summary,
        verdict: outcome,
        statement,
        per_k,
        gate: gate_policy(),
    })
}
