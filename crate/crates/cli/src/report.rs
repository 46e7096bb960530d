//! Figures and summary tables rendered from result CSVs only. Reporting
//! never trains or evaluates a model and never modifies the results.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use lmc_core::analysis::{
    barrier, read_barriers_csv, BarrierResult, BarrierVariant, BnPolicy, CurveRow,
    InterpolationCurve,
};
use serde::Deserialize;

use crate::manifest::{write_atomic, Check, ResultsIndex, MANIFEST_FILE};
use crate::svg::{self, Panel, Series};

pub const NO_RUNS_MARKER: &str = "_no runs_";

#[derive(Debug, Clone, Deserialize)]
struct SweepRow {
    batch_size: usize,
    learning_rate: f64,
    noise_scale: f64,
    set: String,
    variant: BarrierVariant,
    seeds: usize,
    median_barrier: f64,
    median_delta: f64,
}

#[derive(Debug, Clone, Deserialize)]
struct EnsembleRow {
    kind: String,
    repeats: usize,
    median_wa: f64,
    median_wd: f64,
    median_acc_majority: f64,
    median_acc_avgpred: f64,
}

/// One interpolated pair found in the results.
struct Run {
    /// Directory relative to the results root, e.g. `exp/3`.
    dir: String,
    rows: Vec<CurveRow>,
    barriers: Vec<BarrierResult>,
}

impl Run {
    fn experiment(&self) -> &str {
        self.dir.split('/').next().unwrap_or("")
    }
}

#[derive(Debug, Clone, Default)]
pub struct ReportSummary {
    pub runs: usize,
    /// Written files, relative to the report directory.
    pub files: Vec<String>,
}

fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut rdr =
        csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    rdr.deserialize()
        .collect::<Result<Vec<T>, _>>()
        .with_context(|| format!("parsing {}", path.display()))
}

fn sibling(rel: &str, name: &str) -> String {
    match rel.rsplit_once('/') {
        Some((dir, _)) => format!("{dir}/{name}"),
        None => name.to_string(),
    }
}

fn fmt(v: f64) -> String {
    format!("{v:.4}")
}

/// Renders every figure and `summary.md` for the results under `root`
/// into `out`. Every CSV used must be listed in the manifest with a
/// matching hash, and stored barriers must agree with their curves.
pub fn cmd_report(root: &Path, out: &Path) -> Result<ReportSummary> {
    let manifest = root.join(MANIFEST_FILE);
    let index = if manifest.exists() {
        ResultsIndex::load(root)?
    } else {
        if root.is_dir() && has_csv(root)? {
            bail!("{} contains results but no {MANIFEST_FILE}", root.display());
        }
        ResultsIndex::default()
    };
    for (path, check) in index.check(root) {
        match check {
            Check::Ok => {}
            Check::Missing => bail!("manifest entry {path} is missing on disk"),
            Check::Mismatch { .. } => {
                bail!("manifest entry {path} does not match its recorded hash")
            }
        }
    }
    let mut paths: Vec<&str> = index.entries.iter().map(|e| e.path.as_str()).collect();
    paths.sort_unstable();

    let mut runs = Vec::new();
    for rel in paths.iter().filter(|p| p.ends_with("/curve.csv")) {
        let barriers_rel = sibling(rel, "barriers.csv");
        if index.get(&barriers_rel).is_none() {
            bail!("{rel} has no manifest entry for {barriers_rel}");
        }
        let rows: Vec<CurveRow> = read_csv(&root.join(rel))?;
        let barriers = read_barriers_csv(fs::File::open(root.join(&barriers_rel))?)
            .with_context(|| format!("parsing {barriers_rel}"))?;
        let curve = InterpolationCurve::from_rows(&rows, BnPolicy::None)
            .with_context(|| rel.to_string())?;
        for b in &barriers {
            let again = barrier(&curve, &b.set, b.variant)
                .with_context(|| format!("{barriers_rel}: {}", b.variant.label()))?;
            if again.value != b.value || again.lambda_star != b.lambda_star {
                bail!(
                    "{barriers_rel}: stored {} barrier {} on {} contradicts {rel} ({})",
                    b.variant.label(),
                    b.value,
                    b.set,
                    again.value
                );
            }
        }
        runs.push(Run {
            dir: sibling(rel, "").trim_end_matches('/').to_string(),
            rows,
            barriers,
        });
    }
    let sweeps: Vec<(String, Vec<SweepRow>)> = paths
        .iter()
        .filter(|p| p.ends_with("/sweep.csv"))
        .map(|rel| Ok((rel.to_string(), read_csv(&root.join(rel))?)))
        .collect::<Result<_>>()?;
    let ensembles: Vec<(String, Vec<EnsembleRow>)> = paths
        .iter()
        .filter(|p| p.ends_with("/ensemble_summary.csv"))
        .map(|rel| Ok((rel.to_string(), read_csv(&root.join(rel))?)))
        .collect::<Result<_>>()?;

    let mut files: BTreeMap<String, String> = BTreeMap::new();
    for run in &runs {
        files.insert(format!("{}/curve.svg", run.dir), curve_svg(run));
        if let Some(svg) = polar_svg(run) {
            files.insert(format!("{}/polar.svg", run.dir), svg);
        }
    }
    for (rel, rows) in &sweeps {
        files.insert(sibling(rel, "sweep.svg"), sweep_svg(rel, rows));
    }
    let mut by_experiment: BTreeMap<&str, Vec<&Run>> = BTreeMap::new();
    for run in &runs {
        by_experiment.entry(run.experiment()).or_default().push(run);
    }
    for (name, group) in &by_experiment {
        if let Some(svg) = similarity_svg(name, group) {
            files.insert(format!("{name}/similarity.svg"), svg);
        }
    }
    files.insert("summary.md".into(), summary_md(&runs, &sweeps, &ensembles));

    for (rel, text) in &files {
        write_atomic(&out.join(rel), text.as_bytes())?;
    }
    Ok(ReportSummary {
        runs: runs.len(),
        files: files.into_keys().collect(),
    })
}

fn has_csv(dir: &Path) -> Result<bool> {
    let mut stack: Vec<PathBuf> = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d)? {
            let p = entry?.path();
            if p.is_dir() {
                stack.push(p);
            } else if p.extension().is_some_and(|e| e == "csv") {
                return Ok(true);
            }
        }
    }
    Ok(false)
}

fn set_names(rows: &[CurveRow]) -> Vec<String> {
    let mut names: Vec<String> = Vec::new();
    for r in rows {
        if !names.contains(&r.set) {
            names.push(r.set.clone());
        }
    }
    names
}

fn curve_svg(run: &Run) -> String {
    let names = set_names(&run.rows);
    let series = |f: fn(&CurveRow) -> f64| -> Vec<Series> {
        names
            .iter()
            .map(|n| Series {
                label: n.clone(),
                points: run
                    .rows
                    .iter()
                    .filter(|r| &r.set == n)
                    .map(|r| (r.lambda, f(r)))
                    .collect(),
            })
            .collect()
    };
    svg::line_panels(
        &format!("Linear interpolation: {}", run.dir),
        &[
            Panel {
                title: "loss".into(),
                x_label: "λ".into(),
                y_label: "cross-entropy".into(),
                series: series(|r| r.loss),
                log2_x: false,
            },
            Panel {
                title: "accuracy".into(),
                x_label: "λ".into(),
                y_label: "accuracy".into(),
                series: series(|r| r.accuracy),
                log2_x: false,
            },
        ],
    )
}

/// Polar trace of the first evaluation set's rows (the polar columns are
/// identical for every set).
fn polar_svg(run: &Run) -> Option<String> {
    let first = set_names(&run.rows).into_iter().next()?;
    let rows: Vec<&CurveRow> = run.rows.iter().filter(|r| r.set == first).collect();
    let angle: Vec<f64> = rows
        .iter()
        .map(|r| r.angle_from_a_deg)
        .collect::<Option<_>>()?;
    let dist: Vec<f64> = rows
        .iter()
        .map(|r| r.manhattan_from_a)
        .collect::<Option<_>>()?;
    let lambdas: Vec<f64> = rows.iter().map(|r| r.lambda).collect();
    Some(svg::polar(
        &format!("Polar trace: {}", run.dir),
        &angle,
        &dist,
        &lambdas,
    ))
}

fn sweep_svg(rel: &str, rows: &[SweepRow]) -> String {
    let mut lrs: Vec<f64> = rows.iter().map(|r| r.learning_rate).collect();
    lrs.sort_by(|a, b| a.total_cmp(b));
    lrs.dedup();
    let series = |f: fn(&SweepRow) -> f64| -> Vec<Series> {
        lrs.iter()
            .map(|&lr| {
                let mut points: Vec<(f64, f64)> = rows
                    .iter()
                    .filter(|r| r.learning_rate == lr)
                    .map(|r| (r.batch_size as f64, f(r)))
                    .collect();
                points.sort_by(|a, b| a.0.total_cmp(&b.0));
                Series {
                    label: format!("ε = {lr:e}"),
                    points,
                }
            })
            .collect()
    };
    let (variant, set) = rows
        .first()
        .map_or(("", ""), |r| (r.variant.label(), r.set.as_str()));
    svg::line_panels(
        &format!(
            "Batch size / learning rate sweep: {}",
            sibling(rel, "").trim_end_matches('/')
        ),
        &[
            Panel {
                title: format!("median {variant} barrier ({set})"),
                x_label: "batch size".into(),
                y_label: "barrier".into(),
                series: series(|r| r.median_barrier),
                log2_x: true,
            },
            Panel {
                title: "median Δ".into(),
                x_label: "batch size".into(),
                y_label: "Δ accuracy".into(),
                series: series(|r| r.median_delta),
                log2_x: true,
            },
        ],
    )
}

/// Angle between the endpoints against their test (or first) barrier.
fn similarity_svg(name: &str, runs: &[&Run]) -> Option<String> {
    let points: Vec<(String, f64, f64)> = runs
        .iter()
        .filter_map(|run| {
            let angle = run.rows.iter().rev().find_map(|r| r.angle_from_a_deg)?;
            let b = run
                .barriers
                .iter()
                .find(|b| b.set == "test" && b.variant == BarrierVariant::Frankle)
                .or_else(|| run.barriers.first())?;
            let label = run
                .dir
                .strip_prefix(name)
                .unwrap_or(&run.dir)
                .trim_start_matches('/')
                .to_string();
            Some((label, angle, b.value))
        })
        .collect();
    if points.is_empty() {
        return None;
    }
    Some(svg::scatter(
        &format!("Endpoint angle vs barrier: {name}"),
        "angle between endpoints (degrees)",
        "barrier",
        &points,
    ))
}

fn summary_md(
    runs: &[Run],
    sweeps: &[(String, Vec<SweepRow>)],
    ensembles: &[(String, Vec<EnsembleRow>)],
) -> String {
    let mut md = String::from("# Results summary\n\n");
    if runs.is_empty() && sweeps.is_empty() && ensembles.is_empty() {
        md.push_str(NO_RUNS_MARKER);
        md.push('\n');
        return md;
    }
    if !runs.is_empty() {
        md.push_str("## Barriers\n\n| run | set | variant | barrier | λ* | Δ |\n|---|---|---|---:|---:|---:|\n");
        for run in runs {
            for b in &run.barriers {
                md.push_str(&format!(
                    "| {} | {} | {} | {} | {:.2} | {} |\n",
                    run.dir,
                    b.set,
                    b.variant.label(),
                    fmt(b.value),
                    b.lambda_star,
                    fmt(b.delta)
                ));
            }
        }
        md.push('\n');
    }
    for (rel, rows) in sweeps {
        md.push_str(&format!(
            "## Sweep `{rel}`\n\n| B | ε | g | set | variant | seeds | median barrier | median Δ |\n|---:|---:|---:|---|---|---:|---:|---:|\n"
        ));
        for r in rows {
            md.push_str(&format!(
                "| {} | {:e} | {} | {} | {} | {} | {} | {} |\n",
                r.batch_size,
                r.learning_rate,
                fmt(r.noise_scale),
                r.set,
                r.variant.label(),
                r.seeds,
                fmt(r.median_barrier),
                fmt(r.median_delta)
            ));
        }
        md.push('\n');
    }
    for (rel, rows) in ensembles {
        md.push_str(&format!(
            "## Ensembles `{rel}`\n\n| kind | repeats | median WA | median WD | median majority acc | median avg-pred acc |\n|---|---:|---:|---:|---:|---:|\n"
        ));
        for r in rows {
            md.push_str(&format!(
                "| {} | {} | {} | {} | {} | {} |\n",
                r.kind,
                r.repeats,
                fmt(r.median_wa),
                fmt(r.median_wd),
                fmt(r.median_acc_majority),
                fmt(r.median_acc_avgpred)
            ));
        }
        md.push('\n');
    }
    md
}
