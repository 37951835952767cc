use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde_json::Value;

use super::output::{self, sig4};
use super::EXIT_OK;

pub(super) struct Row {
    pub file: String,
    pub structure: String,
    pub order: Option<f64>,
    pub coeff: Option<f64>,
    pub r2: Option<f64>,
    pub verdict: String,
    pub samples: Vec<(f64, f64)>,
}

fn report_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).with_context(|| format!("cannot read directory {}", dir.display()))?;
    let mut files = Vec::new();
    for e in entries {
        let p = e?.path();
        if p.extension().is_some_and(|x| x == "json") && p.is_file() {
            files.push(p);
        }
    }
    files.sort();
    Ok(files)
}

fn parse_row(path: &Path) -> Result<Row> {
    let text = std::fs::read_to_string(path)?;
    let v: Value = serde_json::from_str(&text).context("not valid JSON")?;
    let structure = v["structure"]
        .as_str()
        .ok_or_else(|| anyhow!("missing `structure`"))?
        .to_string();
    let verdict = v["verdict"]
        .as_str()
        .ok_or_else(|| anyhow!("missing `verdict`"))?
        .to_string();
    let fit = &v["fit"];
    let samples = v["samples"]
        .as_array()
        .ok_or_else(|| anyhow!("missing `samples`"))?
        .iter()
        .map(|s| match (s["x"].as_f64(), s["value"].as_f64()) {
            (Some(x), Some(y)) => Ok((x, y)),
            _ => Err(anyhow!("malformed sample {s}")),
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Row {
        file: path.file_name().unwrap().to_string_lossy().into_owned(),
        structure,
        order: fit["order"].as_f64(),
        coeff: fit["coeff"].as_f64(),
        r2: fit["r2"].as_f64(),
        verdict,
        samples,
    })
}

pub(super) fn load_rows(dir: &Path) -> Result<Vec<Row>> {
    let files = report_files(dir)?;
    if files.is_empty() {
        bail!("no check-cd reports (*.json) in {}", dir.display());
    }
    files
        .iter()
        .map(|p| parse_row(p).with_context(|| format!("corrupt report {}", p.display())))
        .collect()
}

pub(super) fn render_table(rows: &[Row]) -> String {
    let cell = |v: Option<f64>| v.map(sig4).unwrap_or_else(|| "-".into());
    let mut lines = vec![[
        "file".to_string(),
        "structure".to_string(),
        "order".to_string(),
        "coeff".to_string(),
        "r2".to_string(),
        "verdict".to_string(),
    ]];
    for r in rows {
        lines.push([
            r.file.clone(),
            r.structure.clone(),
            cell(r.order),
            cell(r.coeff),
            cell(r.r2),
            r.verdict.clone(),
        ]);
    }
    let widths: Vec<usize> = (0..6)
        .map(|c| lines.iter().map(|l| l[c].len()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for l in &lines {
        let cells: Vec<String> = l
            .iter()
            .zip(&widths)
            .map(|(s, w)| format!("{s:<w$}"))
            .collect();
        out.push_str(cells.join("  ").trim_end());
        out.push('\n');
    }
    out
}

pub(super) fn render_csv(rows: &[Row]) -> String {
    let mut out = String::from("structure,x,value\n");
    for r in rows {
        for (x, v) in &r.samples {
            out.push_str(&format!("{},{}\n", r.structure, output::csv_row([*x, *v])));
        }
    }
    out
}

pub(super) fn cmd_report(dir: &Path, csv: Option<&Path>) -> Result<i32> {
    let rows = load_rows(dir)?;
    let csv_path = csv.map(Path::to_path_buf).unwrap_or_else(|| dir.join("curves.csv"));
    output::write_atomic(&csv_path, &render_csv(&rows))?;
    output::emit(None, &render_table(&rows))?;
    Ok(EXIT_OK)
}
