//! Almost-Riemannian structures in normal coordinates.
//!
//! Coordinates are `(x, z1, ..., zn)`; the orthonormal frame is
//! `X0 = d/dx`, `Xi = sum_j a_ij(x, z) d/dz_j`. The hypersurface is always
//! `zn = 0` and the characteristic point is the origin.

use std::fmt;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{parse, Coord, EvalError, ParseError, ScalarExpr, VANISHING_TOL};

/// Grid resolution per axis used by validation.
pub const DEFAULT_GRID: usize = 17;
/// Absolute threshold for a determinant to count as nonzero.
pub const DET_TOL: f64 = 1e-12;
/// Largest order probed by step detection.
pub const STEP_MAX_ORDER: u32 = 10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StructureError {
    #[error("malformed structure file: {0}")]
    Config(String),
    #[error("cannot parse expression for {field}: {source}")]
    Expression {
        field: String,
        #[source]
        source: ParseError,
    },
    #[error("det A vanishes on the hypersurface at {point:?} (|det| = {det:e})")]
    H1Violation { point: Vec<f64>, det: f64 },
    #[error("the origin is not singular: det A(0) = {det}")]
    OriginNotSingular { det: f64 },
    #[error("measure density is not positive at {point:?} (m = {value})")]
    MeasureNotPositive { point: Vec<f64>, value: f64 },
    #[error("declared strongly regular structure does not factor: {0}")]
    StronglyRegularMismatch(String),
    #[error("evaluation failed at {point:?}: {source}")]
    Evaluation {
        point: Vec<f64>,
        #[source]
        source: EvalError,
    },
    #[error("no nonvanishing x-derivative of a11(x, 0) up to order {0}")]
    StepUndetected(u32),
    #[error("operation requires n = {expected}, structure has n = {found}")]
    WrongDimension { expected: usize, found: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Regularity {
    General2D,
    StronglyRegular(u32),
    General,
}

impl Regularity {
    pub fn parse(s: &str) -> Result<Self, StructureError> {
        let s = s.trim();
        match s {
            "general2d" => return Ok(Regularity::General2D),
            "general" => return Ok(Regularity::General),
            _ => {}
        }
        if let Some(l) = s.strip_prefix("strongly_regular:") {
            let l: u32 = l
                .trim()
                .parse()
                .map_err(|_| StructureError::Config(format!("bad strongly regular order `{l}`")))?;
            if l == 0 {
                return Err(StructureError::Config("strongly regular order must be >= 1".into()));
            }
            return Ok(Regularity::StronglyRegular(l));
        }
        Err(StructureError::Config(format!("unknown regularity `{s}`")))
    }
}

impl fmt::Display for Regularity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Regularity::General2D => write!(f, "general2d"),
            Regularity::StronglyRegular(l) => write!(f, "strongly_regular:{l}"),
            Regularity::General => write!(f, "general"),
        }
    }
}

/// Axis-aligned working box in `R^{n+1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Chart {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl Chart {
    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn contains(&self, p: &[f64]) -> bool {
        p.len() == self.dim()
            && p.iter().zip(self.lo.iter().zip(&self.hi)).all(|(v, (lo, hi))| lo <= v && v <= hi)
    }

    pub fn half_width(&self, axis: usize) -> f64 {
        0.5 * (self.hi[axis] - self.lo[axis])
    }

    fn axis_samples(&self, axis: usize, count: usize) -> Vec<f64> {
        let (lo, hi) = (self.lo[axis], self.hi[axis]);
        if count < 2 {
            return vec![0.5 * (lo + hi)];
        }
        (0..count)
            .map(|i| lo + (hi - lo) * i as f64 / (count - 1) as f64)
            .collect()
    }
}

/// Cartesian product of per-axis sample lists.
fn grid(axes: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut out = vec![Vec::with_capacity(axes.len())];
    for axis in axes {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                axis.iter().map(move |&v| {
                    let mut p = prefix.clone();
                    p.push(v);
                    p
                })
            })
            .collect();
    }
    out
}

#[derive(Debug, Clone)]
pub struct ArStructure {
    name: String,
    n: usize,
    a: Vec<ScalarExpr>,
    measure: ScalarExpr,
    regularity: Regularity,
    chart: Chart,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct StructureFile {
    name: Option<String>,
    n: usize,
    chart: Vec<f64>,
    regularity: String,
    measure: String,
    #[serde(rename = "A")]
    a: Vec<String>,
}

impl ArStructure {
    /// Build a structure, checking shapes only. See [`validate`] for the
    /// sampled geometric checks.
    pub fn new(
        name: impl Into<String>,
        n: usize,
        a: Vec<ScalarExpr>,
        measure: ScalarExpr,
        regularity: Regularity,
        chart: Chart,
    ) -> Result<Self, StructureError> {
        if n == 0 {
            return Err(StructureError::Config("n must be at least 1".into()));
        }
        if a.len() != n * n {
            return Err(StructureError::Config(format!(
                "A has {} entries, expected n^2 = {}",
                a.len(),
                n * n
            )));
        }
        if chart.lo.len() != n + 1 || chart.hi.len() != n + 1 {
            return Err(StructureError::Config(format!(
                "chart must have {} (min, max) pairs",
                n + 1
            )));
        }
        if chart.lo.iter().zip(&chart.hi).any(|(lo, hi)| !(lo < hi)) {
            return Err(StructureError::Config("chart bounds must satisfy min < max".into()));
        }
        if regularity == Regularity::General2D && n != 1 {
            return Err(StructureError::Config("general2d requires n = 1".into()));
        }
        for (k, e) in a.iter().chain(std::iter::once(&measure)).enumerate() {
            if let Some(c) = e.max_coord() {
                if c > n {
                    let field = if k < n * n {
                        format!("A[{}][{}]", k / n + 1, k % n + 1)
                    } else {
                        "measure".to_string()
                    };
                    return Err(StructureError::Config(format!(
                        "{field} references z{c} but n = {n}"
                    )));
                }
            }
        }
        Ok(ArStructure {
            name: name.into(),
            n,
            a,
            measure,
            regularity,
            chart,
        })
    }

    /// Parse a structure file (TOML). No geometric validation is performed.
    pub fn from_config(text: &str) -> Result<Self, StructureError> {
        let file: StructureFile =
            toml::from_str(text).map_err(|e| StructureError::Config(e.message().to_string()))?;
        let n = file.n;
        if file.chart.len() != 2 * (n + 1) {
            return Err(StructureError::Config(format!(
                "chart has {} values, expected 2(n+1) = {}",
                file.chart.len(),
                2 * (n + 1)
            )));
        }
        let chart = Chart {
            lo: file.chart.iter().step_by(2).copied().collect(),
            hi: file.chart.iter().skip(1).step_by(2).copied().collect(),
        };
        let mut a = Vec::with_capacity(file.a.len());
        for (k, src) in file.a.iter().enumerate() {
            let field = format!("A[{}][{}]", k / n.max(1) + 1, k % n.max(1) + 1);
            a.push(parse(src).map_err(|source| StructureError::Expression { field, source })?);
        }
        let measure = parse(&file.measure).map_err(|source| StructureError::Expression {
            field: "measure".into(),
            source,
        })?;
        let regularity = Regularity::parse(&file.regularity)?;
        ArStructure::new(
            file.name.unwrap_or_default(),
            n,
            a,
            measure,
            regularity,
            chart,
        )
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Ambient dimension `n + 1`.
    pub fn dim(&self) -> usize {
        self.n + 1
    }

    /// Entry `a_ij` with 1-based indices, as in the frame `Xi = sum_j a_ij dz_j`.
    pub fn a(&self, i: usize, j: usize) -> &ScalarExpr {
        &self.a[(i - 1) * self.n + (j - 1)]
    }

    pub fn measure(&self) -> &ScalarExpr {
        &self.measure
    }

    pub fn regularity(&self) -> Regularity {
        self.regularity
    }

    pub fn chart(&self) -> &Chart {
        &self.chart
    }

    /// Replace the measure density (the frame is unchanged).
    pub fn with_measure(mut self, measure: ScalarExpr) -> Result<Self, StructureError> {
        if measure.max_coord().is_some_and(|c| c > self.n) {
            return Err(StructureError::Config("measure references a missing coordinate".into()));
        }
        self.measure = measure;
        Ok(self)
    }

    pub fn eval_a(&self, p: &[f64]) -> Result<DMatrix<f64>, EvalError> {
        let n = self.n;
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                m[(i, j)] = self.a[i * n + j].eval(p)?;
            }
        }
        Ok(m)
    }

    pub fn det_a(&self, p: &[f64]) -> Result<f64, EvalError> {
        Ok(self.eval_a(p)?.determinant())
    }

    /// Point on the hypersurface with the given `(x, z1, ..., z_{n-1})`.
    pub fn surface_point(&self, tangent: &[f64]) -> Vec<f64> {
        let mut q = tangent.to_vec();
        q.resize(self.dim(), 0.0);
        q[self.n] = 0.0;
        q
    }
}

/// `beta^2 = sum_k a_kn^2` and `alpha_i = sum_k a_ki a_kn`.
#[derive(Debug, Clone)]
pub struct SurfaceFields {
    pub beta_sq: ScalarExpr,
    pub beta: ScalarExpr,
    /// `alpha[i - 1]` is `alpha_i`.
    pub alpha: Vec<ScalarExpr>,
}

pub fn surface_fields(s: &ArStructure) -> SurfaceFields {
    let n = s.n();
    let alpha: Vec<ScalarExpr> = (1..=n)
        .map(|i| (1..=n).map(|k| s.a(k, i) * s.a(k, n)).sum())
        .collect();
    let beta_sq = alpha[n - 1].clone();
    let beta = beta_sq.sqrt();
    SurfaceFields {
        beta_sq,
        beta,
        alpha,
    }
}

/// Step of a two-dimensional structure at the origin.
pub fn detect_step_2d(s: &ArStructure) -> Result<u32, StructureError> {
    if s.n() != 1 {
        return Err(StructureError::WrongDimension {
            expected: 1,
            found: s.n(),
        });
    }
    let origin = [0.0, 0.0];
    let order = s
        .a(1, 1)
        .vanishing_order(Coord::X, &origin, STEP_MAX_ORDER)
        .map_err(|source| StructureError::Evaluation {
            point: origin.to_vec(),
            source,
        })?;
    match order {
        Some(k) => Ok(1 + k),
        None => Err(StructureError::StepUndetected(STEP_MAX_ORDER)),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Info,
    Warning,
    Error,
}

#[derive(Debug, Clone, Serialize)]
pub struct Diagnostic {
    pub severity: Severity,
    pub code: &'static str,
    pub message: String,
    #[serde(skip)]
    pub error: Option<StructureError>,
}

impl Diagnostic {
    fn info(code: &'static str, message: String) -> Self {
        Diagnostic {
            severity: Severity::Info,
            code,
            message,
            error: None,
        }
    }

    fn warning(code: &'static str, message: String) -> Self {
        Diagnostic {
            severity: Severity::Warning,
            code,
            message,
            error: None,
        }
    }

    fn error(code: &'static str, err: StructureError) -> Self {
        Diagnostic {
            severity: Severity::Error,
            code,
            message: err.to_string(),
            error: Some(err),
        }
    }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct ValidationReport {
    pub diagnostics: Vec<Diagnostic>,
}

impl ValidationReport {
    pub fn errors(&self) -> impl Iterator<Item = &Diagnostic> {
        self.diagnostics.iter().filter(|d| d.severity == Severity::Error)
    }

    pub fn has_errors(&self) -> bool {
        self.errors().next().is_some()
    }

    pub fn first_error(&self) -> Option<&StructureError> {
        self.errors().find_map(|d| d.error.as_ref())
    }

    fn push(&mut self, d: Diagnostic) {
        self.diagnostics.push(d);
    }
}

#[derive(Debug, Clone)]
pub struct ValidationOptions {
    pub grid: usize,
    pub seed: u64,
    /// Downgrade `OriginNotSingular` to a warning. Used for control
    /// structures where the computations are run to show that no verdict
    /// is produced.
    pub allow_nonsingular_origin: bool,
}

impl Default for ValidationOptions {
    fn default() -> Self {
        ValidationOptions {
            grid: DEFAULT_GRID,
            seed: 0,
            allow_nonsingular_origin: false,
        }
    }
}

/// Run every sampled check and collect diagnostics.
pub fn validate(s: &ArStructure, opts: &ValidationOptions) -> ValidationReport {
    let mut report = ValidationReport::default();
    let n = s.n();
    let dim = s.dim();
    let chart = s.chart();
    let origin = vec![0.0; dim];

    if !chart.contains(&origin) {
        report.push(Diagnostic::error(
            "ChartMissesOrigin",
            StructureError::Config("chart does not contain the origin".into()),
        ));
        return report;
    }

    match s.det_a(&origin) {
        Ok(det) if det.abs() <= DET_TOL => {
            report.push(Diagnostic::info("OriginSingular", "det A(0) = 0".into()))
        }
        Ok(det) => {
            let err = StructureError::OriginNotSingular { det };
            if opts.allow_nonsingular_origin {
                report.push(Diagnostic::warning("OriginNotSingular", err.to_string()));
            } else {
                report.push(Diagnostic::error("OriginNotSingular", err));
            }
        }
        Err(source) => report.push(Diagnostic::error(
            "EvaluationFailure",
            StructureError::Evaluation {
                point: origin.clone(),
                source,
            },
        )),
    }

    let x_min = 1e-3 * chart.half_width(0);
    let axes: Vec<Vec<f64>> = (0..dim).map(|k| chart.axis_samples(k, opts.grid)).collect();

    // H1: det A != 0 on the hypersurface away from x = 0.
    let mut surface_axes = axes.clone();
    surface_axes[n] = vec![0.0];
    let mut h1_failed = false;
    for p in grid(&surface_axes) {
        if p[0].abs() <= x_min {
            continue;
        }
        match s.det_a(&p) {
            Ok(det) if det.abs() > DET_TOL => {}
            Ok(det) => {
                report.push(Diagnostic::error(
                    "H1Violation",
                    StructureError::H1Violation { point: p, det },
                ));
                h1_failed = true;
                break;
            }
            Err(source) => {
                report.push(Diagnostic::error(
                    "EvaluationFailure",
                    StructureError::Evaluation { point: p, source },
                ));
                h1_failed = true;
                break;
            }
        }
    }
    if !h1_failed {
        report.push(Diagnostic::info(
            "H1",
            format!("det A nonzero on sampled hypersurface points with |x| > {x_min:e}"),
        ));
    }

    // Measure positivity on the full chart grid, plus H2 per x-slice.
    let full = grid(&axes);
    let mut m_min = f64::INFINITY;
    let mut m_max = f64::NEG_INFINITY;
    let mut measure_ok = true;
    for p in &full {
        match s.measure().eval(p) {
            Ok(v) if v > 0.0 && v.is_finite() => {
                m_min = m_min.min(v);
                m_max = m_max.max(v);
            }
            Ok(value) => {
                report.push(Diagnostic::error(
                    "MeasureNotPositive",
                    StructureError::MeasureNotPositive {
                        point: p.clone(),
                        value,
                    },
                ));
                measure_ok = false;
                break;
            }
            Err(source) => {
                report.push(Diagnostic::error(
                    "EvaluationFailure",
                    StructureError::Evaluation {
                        point: p.clone(),
                        source,
                    },
                ));
                measure_ok = false;
                break;
            }
        }
    }
    if measure_ok {
        report.push(Diagnostic::info(
            "Measure",
            format!("{m_min:.4e} <= m <= {m_max:.4e} on the sampling grid"),
        ));
    }

    for &x in &axes[0] {
        if x.abs() <= x_min {
            continue;
        }
        let mut slice_axes = axes.clone();
        slice_axes[0] = vec![x];
        let nonzero = grid(&slice_axes)
            .iter()
            .any(|p| s.det_a(p).map(|d| d.abs() > DET_TOL).unwrap_or(false));
        if !nonzero {
            report.push(Diagnostic::warning(
                "H2Suspect",
                format!("det A vanishes on every sampled point of the slice x = {x}"),
            ));
        }
    }

    if let Regularity::StronglyRegular(l) = s.regularity() {
        if let Some(err) = check_strongly_regular(s, l, &axes) {
            report.push(Diagnostic::error("StronglyRegularMismatch", err));
        } else {
            report.push(Diagnostic::info(
                "StronglyRegular",
                format!("a_ij = x^{l} * b_ij with det b(0, z) != 0 on sampled z"),
            ));
        }
    }

    // Seeded spot checks of beta^2 = sum_k a_kn^2.
    let fields = surface_fields(s);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let p: Vec<f64> = (0..dim)
            .map(|k| rng.gen_range(chart.lo[k]..=chart.hi[k]))
            .collect();
        let (Ok(b2), Ok(sum)) = (
            fields.beta_sq.eval(&p),
            (1..=n)
                .map(|k| s.a(k, n).eval(&p).map(|v| v * v))
                .sum::<Result<f64, _>>(),
        ) else {
            continue;
        };
        let rel = (b2 - sum).abs() / sum.abs().max(f64::MIN_POSITIVE);
        if sum != 0.0 {
            worst = worst.max(rel);
        }
    }
    report.push(Diagnostic::info(
        "BetaConsistency",
        format!("max relative deviation of beta^2 from sum a_kn^2: {worst:e}"),
    ));

    if n == 1 {
        match detect_step_2d(s) {
            Ok(step) => report.push(Diagnostic::info("Step", format!("step s = {step}"))),
            Err(e) => report.push(Diagnostic::warning("Step", e.to_string())),
        }
    }

    report
}

fn check_strongly_regular(s: &ArStructure, l: u32, axes: &[Vec<f64>]) -> Option<StructureError> {
    let n = s.n();
    let mut z_axes = axes.to_vec();
    z_axes[0] = vec![0.0];
    let points = grid(&z_axes);
    let factorial: f64 = (1..=l).map(|k| k as f64).product();
    // d^l a_ij / dx^l at x = 0 equals l! * b_ij(0, z).
    let mut leading = Vec::with_capacity(n * n);
    for i in 1..=n {
        for j in 1..=n {
            let mut d = s.a(i, j).clone();
            let mut lower = Vec::with_capacity(l as usize);
            for _ in 0..l {
                lower.push(d.clone());
                d = d.diff(Coord::X);
            }
            leading.push((i, j, lower, d));
        }
    }
    for p in &points {
        for (i, j, lower, _) in &leading {
            for (k, e) in lower.iter().enumerate() {
                match e.eval(p) {
                    Ok(v) if v.abs() <= VANISHING_TOL => {}
                    Ok(v) => {
                        return Some(StructureError::StronglyRegularMismatch(format!(
                            "d^{k}/dx^{k} a_{i}{j} = {v:e} at {p:?}, expected vanishing order >= {l}"
                        )))
                    }
                    Err(source) => {
                        return Some(StructureError::Evaluation {
                            point: p.clone(),
                            source,
                        })
                    }
                }
            }
        }
        let mut hat = DMatrix::zeros(n, n);
        for (i, j, _, d) in &leading {
            match d.eval(p) {
                Ok(v) => hat[(i - 1, j - 1)] = v / factorial,
                Err(source) => {
                    return Some(StructureError::Evaluation {
                        point: p.clone(),
                        source,
                    })
                }
            }
        }
        let det = hat.determinant();
        if det.abs() <= DET_TOL {
            return Some(StructureError::StronglyRegularMismatch(format!(
                "det of the reduced frame vanishes at {p:?}"
            )));
        }
    }
    None
}

/// Parse and validate. Hard validation failures become errors.
pub fn load_structure(
    text: &str,
    opts: &ValidationOptions,
) -> Result<(ArStructure, ValidationReport), StructureError> {
    let s = ArStructure::from_config(text)?;
    let report = validate(&s, opts);
    if let Some(err) = report.first_error() {
        return Err(err.clone());
    }
    Ok((s, report))
}


#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;

    const GRUSHIN: &str = r#"
        name = "grushin"
        n = 1
        chart = [-1.0, 1.0, -1.0, 1.0]
        regularity = "general2d"
        measure = "1"
        A = ["x"]
    "#;

    #[test]
    fn loads_grushin() {
        let (s, report) = load_structure(GRUSHIN, &ValidationOptions::default()).unwrap();
        assert_eq!(s.n(), 1);
        assert_eq!(s.name(), "grushin");
        assert!(!report.has_errors());
        assert_eq!(detect_step_2d(&s).unwrap(), 2);
    }

    #[test]
    fn loads_r4_example() {
        let text = r#"
            n = 3
            chart = [-1, 1, -1, 1, -1, 1, -1, 1]
            regularity = "general"
            measure = "1"
            A = ["1", "0", "-z2/2", "0", "1", "z1/2", "0", "0", "x"]
        "#;
        let (s, report) = load_structure(text, &ValidationOptions::default()).unwrap();
        assert_eq!(s.regularity(), Regularity::General);
        assert!(!report.has_errors());
    }

    #[test]
    fn riemannian_origin_rejected() {
        let text = r#"
            n = 1
            chart = [-1, 1, -1, 1]
            regularity = "general"
            measure = "1"
            A = ["1"]
        "#;
        assert!(matches!(
            load_structure(text, &ValidationOptions::default()),
            Err(StructureError::OriginNotSingular { .. })
        ));
        let opts = ValidationOptions {
            allow_nonsingular_origin: true,
            ..Default::default()
        };
        let (_, report) = load_structure(text, &opts).unwrap();
        assert!(report.diagnostics.iter().any(|d| d.code == "OriginNotSingular"));
    }

    #[test]
    fn h1_violation_detected() {
        // det A = x * z1 vanishes along the whole hypersurface z1 = 0.
        let s = structure(1, &["x*z1"], "1", Regularity::General);
        let report = validate(&s, &ValidationOptions::default());
        assert!(matches!(report.first_error(), Some(StructureError::H1Violation { .. })));
    }

    #[test]
    fn nonpositive_measure_detected() {
        let s = structure(1, &["x"], "x + 0.5", Regularity::General);
        let report = validate(&s, &ValidationOptions::default());
        assert!(matches!(
            report.first_error(),
            Some(StructureError::MeasureNotPositive { .. })
        ));
    }

    #[test]
    fn strongly_regular_checks() {
        let report = validate(&x_id2(), &ValidationOptions::default());
        assert!(!report.has_errors(), "{:?}", report.diagnostics);

        // x^2 Id declared as order 1 still factors (order >= 1) but the
        // reduced frame degenerates at x = 0.
        let s = structure(2, &["x^2", "0", "0", "x^2"], "1", Regularity::StronglyRegular(1));
        assert!(matches!(
            validate(&s, &ValidationOptions::default()).first_error(),
            Some(StructureError::StronglyRegularMismatch(_))
        ));

        // First column is not divisible by x^2.
        let s = structure(2, &["x", "0", "0", "x^2"], "1", Regularity::StronglyRegular(2));
        assert!(matches!(
            validate(&s, &ValidationOptions::default()).first_error(),
            Some(StructureError::StronglyRegularMismatch(_))
        ));
    }

    #[test]
    fn config_shape_errors() {
        let bad_shape = r#"
            n = 2
            chart = [-1, 1, -1, 1, -1, 1]
            regularity = "general"
            measure = "1"
            A = ["x", "0", "1"]
        "#;
        assert!(matches!(ArStructure::from_config(bad_shape), Err(StructureError::Config(_))));
        let bad_expr = r#"
            n = 1
            chart = [-1, 1, -1, 1]
            regularity = "general"
            measure = "1"
            A = ["x +"]
        "#;
        assert!(matches!(
            ArStructure::from_config(bad_expr),
            Err(StructureError::Expression { .. })
        ));
        let missing_coord = r#"
            n = 1
            chart = [-1, 1, -1, 1]
            regularity = "general"
            measure = "1"
            A = ["x*z2"]
        "#;
        assert!(matches!(ArStructure::from_config(missing_coord), Err(StructureError::Config(_))));
        let bad_2d = r#"
            n = 2
            chart = [-1, 1, -1, 1, -1, 1]
            regularity = "general2d"
            measure = "1"
            A = ["x", "0", "0", "x"]
        "#;
        assert!(matches!(ArStructure::from_config(bad_2d), Err(StructureError::Config(_))));
    }

    #[test]
    fn surface_fields_closed_forms() {
        let g = surface_fields(&grushin());
        for x in [-0.7, 0.2, 0.9] {
            let p = [x, 0.3];
            assert_eq!(g.beta.eval(&p).unwrap(), f64::abs(x));
            assert_eq!(g.alpha[0].eval(&p).unwrap(), x * x);
        }

        let r4 = surface_fields(&r4());
        let p = [0.3, 0.2, -0.4, 0.1];
        let want = 0.3f64.powi(2) + 0.2f64.powi(2) / 4.0 + 0.4f64.powi(2) / 4.0;
        assert!((r4.beta_sq.eval(&p).unwrap() - want).abs() < 1e-15);

        let flat = surface_fields(&flat(3));
        let p = [0.1, 0.2, 0.3, 0.4];
        assert_eq!(flat.beta.eval(&p).unwrap(), 1.0);
        let alpha: Vec<f64> = flat.alpha.iter().map(|a| a.eval(&p).unwrap()).collect();
        assert_eq!(alpha, vec![0.0, 0.0, 1.0]);
    }

    #[test]
    fn alpha_n_equals_beta_squared_at_random_points() {
        let s = r4();
        let f = surface_fields(&s);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let p: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let sum: f64 = (1..=3).map(|k| s.a(k, 3).eval(&p).unwrap().powi(2)).sum();
            let b2 = f.beta_sq.eval(&p).unwrap();
            assert!((b2 - sum).abs() <= 1e-12 * sum.abs());
            assert_eq!(f.alpha[2].eval(&p).unwrap(), b2);
        }
    }

    #[test]
    fn beta_positive_off_the_characteristic_point() {
        for s in [grushin(), r4(), x_id2()] {
            let f = surface_fields(&s);
            for x in [-0.9, -0.1, 1e-3, 0.5] {
                let q = s.surface_point(&[x]);
                assert!(f.beta.eval(&q).unwrap() > 0.0);
            }
            let origin = vec![0.0; s.dim()];
            assert_eq!(f.beta.eval(&origin).unwrap(), 0.0);
        }
    }

    #[test]
    fn strongly_regular_beta_has_order_l() {
        for (a, l) in [(["x", "0", "0", "x"], 1), (["x^2", "x^2*z1", "0", "x^2*(1 + z2^2)"], 2)] {
            let s = structure(2, &a, "1", Regularity::StronglyRegular(l));
            assert!(!validate(&s, &ValidationOptions::default()).has_errors());
            let f = surface_fields(&s);
            let mut lo = f64::INFINITY;
            let mut hi = 0.0f64;
            for x in [1e-4, 1e-3, 1e-2, 0.1, 0.5, 1.0] {
                for z1 in [-1.0, 0.0, 0.7] {
                    let q = [x, z1, 0.0];
                    let r = f.beta.eval(&q).unwrap() * x.powi(-(l as i32));
                    lo = lo.min(r);
                    hi = hi.max(r);
                }
            }
            assert!(lo > 0.1 && hi < 10.0, "{lo} {hi}");
        }
    }

    #[test]
    fn step_detection() {
        assert_eq!(detect_step_2d(&grushin()).unwrap(), 2);
        let s = structure(1, &["x^3 + x*z1"], "1", Regularity::General2D);
        assert_eq!(detect_step_2d(&s).unwrap(), 4);
        let s = structure(1, &["exp(x) - 1"], "1", Regularity::General2D);
        assert_eq!(detect_step_2d(&s).unwrap(), 2);
        let s = structure(1, &["z1"], "1", Regularity::General);
        assert_eq!(detect_step_2d(&s), Err(StructureError::StepUndetected(STEP_MAX_ORDER)));
        assert!(matches!(
            detect_step_2d(&r4()),
            Err(StructureError::WrongDimension { expected: 1, found: 3 })
        ));
    }
}
