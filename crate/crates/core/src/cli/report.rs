use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::manifest::{RunManifest, RunStatus};
use crate::error::{Error, Result};

pub const PLOT_DIR: &str = "plot";
pub const REPORT_FILE: &str = "report.txt";

#[derive(Clone, Debug)]
pub struct ReportSummary {
    pub manifest: RunManifest,
    /// Plot-data files, whitespace-separated columns with a `#` header.
    pub plots: Vec<PathBuf>,
    pub text: String,
    pub failed: Vec<String>,
}

impl ReportSummary {
    pub fn passed(&self) -> bool {
        self.failed.is_empty() && self.manifest.status != RunStatus::Error
    }
}

struct Csv {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Csv {
    fn read(path: &Path) -> Result<Csv> {
        let text = std::fs::read_to_string(path)?;
        let mut lines = text.lines();
        let header: Vec<String> = lines
            .next()
            .ok_or_else(|| Error::Format(format!("{} is empty", path.display())))?
            .split(',')
            .map(str::to_string)
            .collect();
        let rows: Vec<Vec<String>> = lines
            .filter(|l| !l.is_empty())
            .map(|l| l.split(',').map(str::to_string).collect())
            .collect();
        if let Some(r) = rows.iter().find(|r| r.len() != header.len()) {
            return Err(Error::Format(format!("{}: row {r:?} does not match the header", path.display())));
        }
        Ok(Csv { header, rows })
    }

    fn col(&self, name: &str) -> Result<usize> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Format(format!("missing column `{name}`")))
    }
}

fn parse(s: &str) -> f64 {
    s.parse().unwrap_or(f64::NAN)
}

fn write_dat(path: &Path, columns: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut s = format!("# {}\n", columns.join(" "));
    for r in rows {
        writeln!(s, "{}", r.join(" ")).unwrap();
    }
    std::fs::write(path, s)?;
    Ok(())
}

/// Read a manifest, check that every listed output exists, write plot data
/// under `plot/` and a summary to `report.txt`.
pub fn report(manifest_path: &Path) -> Result<ReportSummary> {
    let m = RunManifest::read(manifest_path)?;
    let missing: Vec<PathBuf> = m
        .artifacts
        .iter()
        .map(|a| m.output_dir.join(&a.path))
        .filter(|p| !p.exists())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingOutputs(missing));
    }
    let plot_dir = m.output_dir.join(PLOT_DIR);
    std::fs::create_dir_all(&plot_dir)?;
    let mut plots = Vec::new();
    for a in &m.artifacts {
        let src = m.output_dir.join(&a.path);
        let name = a.name.as_str();
        if name == "ladders" || name.starts_with("ladders/") {
            let suffix = name.strip_prefix("ladders/").filter(|r| *r != "0").map(|r| format!("_r{r}")).unwrap_or_default();
            plots.extend(ladder_plots(&src, &plot_dir, &suffix)?);
        } else if name == "hbar" {
            plots.extend(hbar_slices(&src, &plot_dir)?);
        } else if name == "lbar" {
            plots.extend(axis_slice(&src, &plot_dir, "value", "lbar_slice.dat", &["z0", "lbar"])?);
        } else if name == "ldp_rates" {
            let c = Csv::read(&src)?;
            let (t, e, p) = (c.col("t")?, c.col("empirical")?, c.col("prediction")?);
            let rows: Vec<Vec<String>> = c.rows.iter().map(|r| vec![r[t].clone(), r[e].clone(), r[p].clone()]).collect();
            let out = plot_dir.join("ldp_rates.dat");
            write_dat(&out, &["t", "empirical", "prediction"], &rows)?;
            plots.push(out);
        } else if name == "survival" {
            let c = Csv::read(&src)?;
            let t = c.col("t")?;
            for col in ["log_rate", "gap"] {
                let k = c.col(col)?;
                let rows: Vec<Vec<String>> = c.rows.iter().map(|r| vec![r[t].clone(), r[k].clone()]).collect();
                let out = plot_dir.join(format!("survival_{col}.dat"));
                write_dat(&out, &["t", col], &rows)?;
                plots.push(out);
            }
        }
    }

    let mut text = String::new();
    let cfg = &m.config;
    writeln!(text, "{} run `{}`", m.version, cfg.name.as_deref().unwrap_or(cfg.kind.as_str())).unwrap();
    writeln!(text, "kind: {}", cfg.kind.as_str()).unwrap();
    writeln!(text, "config hash: {}", m.config_hash).unwrap();
    if let Some(f) = &m.failure {
        writeln!(text, "FAILED at stage `{}`: {}", f.stage, f.message).unwrap();
    }
    for t in &m.timings {
        writeln!(text, "stage {:<10} {:>10.3} s", t.stage, t.seconds).unwrap();
    }
    for (k, v) in &m.diagnostics {
        writeln!(text, "{k} = {}", v.0).unwrap();
    }
    let mut failed = Vec::new();
    for c in &m.checks {
        let tag = if c.passed { "PASS" } else { "FAIL" };
        writeln!(text, "{tag} {}: value {} (tolerance {}) {}", c.name, c.value.0, c.tolerance.0, c.detail).unwrap();
        if !c.passed {
            failed.push(c.name.clone());
        }
    }
    for p in &plots {
        writeln!(text, "plot data: {}", p.display()).unwrap();
    }
    std::fs::write(m.output_dir.join(REPORT_FILE), &text)?;
    Ok(ReportSummary {
        manifest: m,
        plots,
        text,
        failed,
    })
}

/// One `(R, m(Re)/R)` file per level and direction.
fn ladder_plots(src: &Path, dir: &Path, suffix: &str) -> Result<Vec<PathBuf>> {
    let c = Csv::read(src)?;
    let (mu, di, r, v) = (c.col("mu")?, c.col("dir")?, c.col("R")?, c.col("value")?);
    let mut levels: Vec<String> = Vec::new();
    let mut groups: BTreeMap<(usize, String), Vec<Vec<String>>> = BTreeMap::new();
    for row in &c.rows {
        let j = match levels.iter().position(|l| *l == row[mu]) {
            Some(j) => j,
            None => {
                levels.push(row[mu].clone());
                levels.len() - 1
            }
        };
        groups
            .entry((j, row[di].clone()))
            .or_default()
            .push(vec![row[r].clone(), row[v].clone()]);
    }
    let mut out = Vec::new();
    for ((j, k), rows) in groups {
        let p = dir.join(format!("ladder{suffix}_mu{j}_dir{k}.dat"));
        write_dat(&p, &["R", "m_over_R"], &rows)?;
        out.push(p);
    }
    Ok(out)
}

fn hbar_slices(src: &Path, dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for route in ["metric", "cell"] {
        let col = format!("hbar_{route}");
        let file = format!("hbar_slice_{route}.dat");
        out.extend(axis_slice(src, dir, &col, &file, &["p0", &col])?);
    }
    Ok(out)
}

/// Values along the first axis with every other coordinate zero; no file
/// when the column has no finite entry there.
fn axis_slice(src: &Path, dir: &Path, col: &str, file: &str, names: &[&str]) -> Result<Vec<PathBuf>> {
    let c = Csv::read(src)?;
    let v = c.col(col)?;
    let coord_cols: Vec<usize> = (0..v).take_while(|k| !c.header[*k].starts_with("hbar") && c.header[*k] != "value").collect();
    let rows: Vec<Vec<String>> = c
        .rows
        .iter()
        .filter(|r| coord_cols[1..].iter().all(|k| parse(&r[*k]) == 0.0) && parse(&r[v]).is_finite())
        .map(|r| vec![r[coord_cols[0]].clone(), r[v].clone()])
        .collect();
    if rows.is_empty() {
        return Ok(Vec::new());
    }
    let p = dir.join(file);
    write_dat(&p, names, &rows)?;
    Ok(vec![p])
}
