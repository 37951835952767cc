//! Acceptance suite. Prints one PASS/FAIL line per check and exits nonzero
//! if any check fails.

use std::path::PathBuf;
use std::process::Command;
use std::time::Instant;

use arcd::cdcheck::{self, fit_singularity, CurveSample, DEFAULT_K_GRID};
use arcd::disintegration::{DensityModel, FitParams, Pipeline};
use arcd::hamiltonian::Tolerance;
use arcd::structure::{detect_step_2d, ArStructure};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// Tolerances.
const C1_CLOSED_REL: f64 = 1e-6;
const C1_TAYLOR_REL: f64 = 1e-3;
const C1_ORDER: (f64, f64) = (-2.0, 0.02);
const C1_COEFF: (f64, f64) = (0.5, 0.02);
const C1_SECONDS: f64 = 10.0;
const C2_POINTS: usize = 20;
const C2_CLOSED_REL: f64 = 1e-6;
const C2_TAYLOR_REL: f64 = 1e-2;
const C2_SECONDS: f64 = 60.0;
const C3_COEFF_REL: f64 = 0.05;
const C4_ORDER: (f64, f64) = (-2.1, -1.9);
const C4_DIFF_MIN_ORDER: f64 = -1.2;
const C5_GRAD: f64 = 1e-5;
const C5_F: f64 = 1e-5;
const C5_H: f64 = 1e-3;
const C5_LOG_H_REL: f64 = 1e-3;
const C5_OMITTED_H: f64 = 1e-8;
const C6_TOL: f64 = 1e-10;
const C6_ENERGY: f64 = 10.0 * C6_TOL;
const C6_VELOCITY: f64 = 1e-10;
const C8_POINTS: usize = 10;
const C8_AGREE: f64 = 1e-8;
const C8_ORDER: (f64, f64) = (-2.0, 0.02);

const SEED: u64 = 20240611;

struct Suite {
    failed: Vec<String>,
    total: usize,
}

impl Suite {
    fn check(&mut self, id: &str, what: &str, pass: bool, detail: String) -> bool {
        self.total += 1;
        let tag = if pass { "PASS" } else { "FAIL" };
        println!("[{tag}] {id:<4} {what} ({detail})");
        if !pass {
            self.failed.push(id.to_string());
        }
        pass
    }

    fn criterion(&mut self, id: u32, what: &str, parts: &[bool]) {
        let pass = parts.iter().all(|p| *p);
        let tag = if pass { "PASS" } else { "FAIL" };
        println!("[{tag}] criterion {id}: {what}");
        println!();
    }
}

fn structures_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("structures")
}

fn load(name: &str) -> ArStructure {
    let path = structures_dir().join(format!("{name}.ar"));
    let text = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    ArStructure::from_config(&text).expect("bundled structure parses")
}

fn bundled() -> Vec<(String, ArStructure)> {
    let mut names: Vec<String> = std::fs::read_dir(structures_dir())
        .unwrap()
        .filter_map(|e| {
            let p = e.ok()?.path();
            (p.extension()? == "ar").then(|| p.file_stem().unwrap().to_string_lossy().into_owned())
        })
        .collect();
    names.sort();
    names.into_iter().map(|n| (n.clone(), load(&n))).collect()
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

fn within(v: f64, (center, tol): (f64, f64)) -> bool {
    (v - center).abs() <= tol
}

fn surface_point(s: &ArStructure, x: f64) -> Vec<f64> {
    let mut q = vec![0.0; s.dim()];
    q[0] = x;
    q
}

fn run_cli(args: &[&str]) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_arcd"))
        .args(args)
        .output()
        .expect("run arcd");
    let code = out.status.code().unwrap_or(-1);
    (code, String::from_utf8_lossy(&out.stdout).into_owned())
}

fn criterion_1(suite: &mut Suite) {
    let start = Instant::now();
    let s = load("grushin");
    let model = DensityModel::new(&s);
    let xs = [0.4, 0.2, 0.1, 0.05];
    let expected = |x: f64| 1.0 / (2.0 * x * x);
    let mut worst_closed = 0.0f64;
    let mut worst_taylor = 0.0f64;
    let mut observed = Vec::new();
    for &x in &xs {
        let q = surface_point(&s, x);
        let c = model.log_h_second_derivative(&q, Pipeline::ClosedForm).unwrap();
        let t = model.log_h_second_derivative(&q, Pipeline::NumericTaylor).unwrap();
        worst_closed = worst_closed.max(rel(c, expected(x)));
        worst_taylor = worst_taylor.max(rel(t, expected(x)));
        observed.push(format!("x={x}: {c:.6}"));
    }
    let a = suite.check(
        "1a",
        "closed-form (log h)''(0) equals 1/(2x^2) at x in {0.4, 0.2, 0.1, 0.05}",
        worst_closed <= C1_CLOSED_REL,
        format!("max rel err {worst_closed:.3e} vs {C1_CLOSED_REL:e}; observed {}", observed.join(", ")),
    );
    let b = suite.check(
        "1b",
        "Taylor-fit (log h)''(0) equals 1/(2x^2) at the same points",
        worst_taylor <= C1_TAYLOR_REL,
        format!("max rel err {worst_taylor:.3e} vs {C1_TAYLOR_REL:e}"),
    );

    let path = structures_dir().join("grushin.ar");
    let out = tempfile::NamedTempFile::new().unwrap();
    let (code, _) = run_cli(&["check-cd", path.to_str().unwrap(), "--out", out.path().to_str().unwrap()]);
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.path()).unwrap()).unwrap();
    let order = report["fit"]["order"].as_f64().unwrap_or(f64::NAN);
    let coeff = report["fit"]["coeff"].as_f64().unwrap_or(f64::NAN);
    let c = suite.check(
        "1c",
        "check-cd fitted order is -2.00 +/- 0.02",
        code == 0 && within(order, C1_ORDER),
        format!("order {order:.5}, exit {code}"),
    );
    let d = suite.check(
        "1d",
        "check-cd fitted coefficient is 0.50 +/- 0.02",
        within(coeff, C1_COEFF),
        format!("coefficient {coeff:.5}"),
    );
    let secs = start.elapsed().as_secs_f64();
    let e = suite.check("1e", "runtime", secs <= C1_SECONDS, format!("{secs:.2} s vs {C1_SECONDS} s"));
    suite.criterion(1, "Grushin oracle", &[a, b, c, d, e]);
}

fn criterion_2(suite: &mut Suite) {
    let start = Instant::now();
    let s = load("r4");
    let model = DensityModel::new(&s);
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let closed = |x: f64, z1: f64, z2: f64| {
        let r = z1 * z1 + z2 * z2;
        (8.0 * x * x - 4.0 * r) / (4.0 * x * x + r).powi(2)
    };
    let mut worst_closed = 0.0f64;
    let mut worst_taylor = 0.0f64;
    let mut count = 0;
    while count < C2_POINTS {
        let x = rng.gen_range(0.1..=0.5);
        let z1 = rng.gen_range(-0.3..=0.3);
        let z2 = rng.gen_range(-0.3..=0.3);
        if z1 * z1 + z2 * z2 > 0.09 {
            continue;
        }
        count += 1;
        let q = [x, z1, z2, 0.0];
        let want = closed(x, z1, z2);
        let c = model.log_h_second_derivative(&q, Pipeline::ClosedForm).unwrap();
        let t = model.log_h_second_derivative(&q, Pipeline::NumericTaylor).unwrap();
        worst_closed = worst_closed.max(rel(c, want));
        worst_taylor = worst_taylor.max(rel(t, want));
    }
    let a = suite.check(
        "2a",
        "closed form matches (8x^2-4|z|^2)/(4x^2+|z|^2)^2 at 20 random points",
        worst_closed <= C2_CLOSED_REL,
        format!("max rel err {worst_closed:.3e} vs {C2_CLOSED_REL:e}"),
    );
    let b = suite.check(
        "2b",
        "Taylor fit matches the same closed form",
        worst_taylor <= C2_TAYLOR_REL,
        format!("max rel err {worst_taylor:.3e} vs {C2_TAYLOR_REL:e}"),
    );
    let secs = start.elapsed().as_secs_f64();
    let c = suite.check("2c", "runtime", secs <= C2_SECONDS, format!("{secs:.2} s vs {C2_SECONDS} s"));
    suite.criterion(2, "four-dimensional closed form", &[a, b, c]);
}

fn criterion_3(suite: &mut Suite) {
    let mut parts = Vec::new();
    for (name, want_step) in [("grushin", 2u32), ("grushin_step3", 3), ("grushin_step4", 4)] {
        let s = load(name);
        let step = detect_step_2d(&s).unwrap();
        parts.push(suite.check(
            &format!("3{}", (b'a' + (want_step - 2) as u8 * 2) as char),
            &format!("{name}: detected step is {want_step}"),
            step == want_step,
            format!("step {step}"),
        ));
        let model = DensityModel::new(&s);
        let grid = cdcheck::default_x_grid(s.chart());
        let run = cdcheck::sample_curve(&model, &grid, Pipeline::ClosedForm).unwrap();
        let fit = fit_singularity(&run.samples).unwrap();
        let want = (step as f64 - 1.0) / 2.0;
        let r = rel(fit.fitted_coefficient, want);
        parts.push(suite.check(
            &format!("3{}", (b'b' + (want_step - 2) as u8 * 2) as char),
            &format!("{name}: fitted coefficient is (s-1)/2 = {want} within 5%"),
            r <= C3_COEFF_REL,
            format!("coefficient {:.5}, order {:.5}, rel err {r:.3e}", fit.fitted_coefficient, fit.fitted_order),
        ));
    }
    suite.criterion(3, "step-coefficient law", &parts);
}

fn criterion_4(suite: &mut Suite) {
    let plain = load("grushin");
    let weighted = load("grushin_exp_measure");
    let grid = cdcheck::default_x_grid(plain.chart());
    let run1 = cdcheck::sample_curve(&DensityModel::new(&plain), &grid, Pipeline::ClosedForm).unwrap();
    let runm = cdcheck::sample_curve(&DensityModel::new(&weighted), &grid, Pipeline::ClosedForm).unwrap();
    let fit = fit_singularity(&runm.samples).unwrap();
    let a = suite.check(
        "4a",
        "fitted order with density exp(x+z1) lies in [-2.1, -1.9]",
        fit.fitted_order >= C4_ORDER.0 && fit.fitted_order <= C4_ORDER.1,
        format!("order {:.5}", fit.fitted_order),
    );
    // The difference is negative, so its magnitude is fitted.
    let diff: Vec<CurveSample> = run1
        .samples
        .iter()
        .zip(&runm.samples)
        .map(|(p, m)| CurveSample {
            x: p.x,
            value: (m.value - p.value).abs(),
        })
        .collect();
    let dfit = fit_singularity(&diff).unwrap();
    let b = suite.check(
        "4b",
        "difference series fits order >= -1.2",
        dfit.fitted_order >= C4_DIFF_MIN_ORDER,
        format!("order {:.5}, coefficient {:.5}", dfit.fitted_order, dfit.fitted_coefficient),
    );
    suite.criterion(4, "measure negligibility", &[a, b]);
}

fn pipeline_points(s: &ArStructure) -> Vec<Vec<f64>> {
    cdcheck::default_x_grid(s.chart())
        .into_iter()
        .filter(|x| (0.05..=0.5).contains(x))
        .map(|x| surface_point(s, x))
        .collect()
}

fn criterion_5(suite: &mut Suite) {
    let mut parts = Vec::new();
    for (name, s) in bundled() {
        let model = DensityModel::new(&s);
        let (mut g, mut f, mut h, mut l, mut omitted) = (0.0f64, 0.0f64, 0.0f64, 0.0f64, 0.0f64);
        let points = pipeline_points(&s);
        for q in &points {
            let a = model.closed_form_jet(q).unwrap();
            let b = model.numeric_taylor_jet(q, &FitParams::default()).unwrap();
            for k in 0..q.len() {
                g = g.max((a.grad_delta[k] - b.grad_delta[k]).abs());
                f = f.max((a.f[k] - b.f[k]).abs());
            }
            h = h.max((a.h_n() - b.h_n()).abs());
            let scale = a.log_h_second.abs();
            let d = (a.log_h_second - b.log_h_second).abs();
            l = l.max(if scale > 0.0 { d / scale } else { d });
            // Components of h other than the last do not enter the trace.
            let inv = b.b0.clone().try_inverse().unwrap();
            let mut trimmed = b.b2.clone();
            for k in 0..q.len() - 1 {
                trimmed[(k, 0)] = 0.0;
            }
            let full = (&inv * &b.b2).trace();
            let cut = (&inv * &trimmed).trace();
            omitted = omitted.max((full - cut).abs());
        }
        let pass = g <= C5_GRAD && f <= C5_F && h <= C5_H && l <= C5_LOG_H_REL && omitted <= C5_OMITTED_H;
        parts.push(suite.check(
            "5",
            &format!("{name}: closed form and Taylor fit agree at {} points", points.len()),
            pass,
            format!("grad {g:.1e}, f {f:.1e}, h_n {h:.1e}, rel (log h)'' {l:.1e}, omitted h {omitted:.1e}"),
        ));
    }
    suite.criterion(5, "pipeline cross-validation", &parts);
}

fn criterion_6(suite: &mut Suite) {
    let mut parts = Vec::new();
    for (name, s) in bundled() {
        let model = DensityModel::new(&s);
        let ham = model.hamiltonian();
        let mut energy = 0.0f64;
        let mut vel = 0.0f64;
        let mut arcs = 0;
        for q in pipeline_points(&s) {
            let s_max = (0.25 * q[0]).min(0.05);
            let arc = ham.exp_from_surface(&q, s_max, Tolerance::uniform(C6_TOL)).unwrap();
            arcs += 1;
            energy = energy.max(arc.max_energy_error);
            for i in -20..=20 {
                let t = s_max * i as f64 / 20.0;
                energy = energy.max((2.0 * arc.energy(t).unwrap() - 1.0).abs());
            }
            let jet = model.closed_form_jet(&q).unwrap();
            let v = arc.velocity(0.0).unwrap();
            for k in 0..q.len() {
                vel = vel.max((v[k] - jet.grad_delta[k]).abs());
            }
        }
        parts.push(suite.check(
            "6",
            &format!("{name}: 2H = 1 along {arcs} arcs and dG/ds(0) = grad delta"),
            energy <= C6_ENERGY && vel <= C6_VELOCITY,
            format!("max |2H-1| {energy:.2e} vs {C6_ENERGY:e}, velocity {vel:.2e} vs {C6_VELOCITY:e}"),
        ));
    }
    suite.criterion(6, "Hamiltonian integrity", &parts);
}

fn criterion_7(suite: &mut Suite) {
    let path = structures_dir().join("flat.ar");
    let out = tempfile::NamedTempFile::new().unwrap();
    let (code, _) = run_cli(&["check-cd", path.to_str().unwrap(), "--out", out.path().to_str().unwrap()]);
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.path()).unwrap()).unwrap();
    let verdict = report["verdict"].as_str().unwrap_or("").to_string();
    let a = suite.check(
        "7",
        "flat control is inconclusive with exit code 2",
        code == 2 && verdict == "INCONCLUSIVE",
        format!("exit {code}, verdict {verdict}"),
    );
    suite.criterion(7, "soundness control", &[a]);
}

fn criterion_8(suite: &mut Suite) {
    let s = load("strongly_regular_x_id2");
    let model = DensityModel::new(&s);
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 8);
    let mut worst = 0.0f64;
    for _ in 0..C8_POINTS {
        let q = [rng.gen_range(0.02..0.5), rng.gen_range(-0.5..0.5), 0.0];
        let generic = model.closed_form_jet(&q).unwrap().trace_term;
        let sr = model.strongly_regular_second_derivative(&q).unwrap();
        worst = worst.max((sr - generic).abs() / generic.abs().max(1.0));
    }
    let a = suite.check(
        "8a",
        "strongly regular expansion equals the generic trace at 10 points",
        worst <= C8_AGREE,
        format!("max rel diff {worst:.2e} vs {C8_AGREE:e}"),
    );
    let grid = cdcheck::default_x_grid(s.chart());
    let report = cdcheck::run_check(&model, &grid, &DEFAULT_K_GRID, Pipeline::ClosedForm).unwrap();
    let order = report.fit.map(|f| f.order).unwrap_or(f64::NAN);
    let b = suite.check(
        "8b",
        "sampled curve fits order -2",
        within(order, C8_ORDER),
        format!("order {order:.5}"),
    );
    suite.criterion(8, "strongly regular cross-check", &[a, b]);
}

fn main() {
    let mut suite = Suite {
        failed: Vec::new(),
        total: 0,
    };
    criterion_1(&mut suite);
    criterion_2(&mut suite);
    criterion_3(&mut suite);
    criterion_4(&mut suite);
    criterion_5(&mut suite);
    criterion_6(&mut suite);
    criterion_7(&mut suite);
    criterion_8(&mut suite);
    println!(
        "acceptance: {} of {} checks passed",
        suite.total - suite.failed.len(),
        suite.total
    );
    if !suite.failed.is_empty() {
        println!("failed: {}", suite.failed.join(", "));
        std::process::exit(1);
    }
}
