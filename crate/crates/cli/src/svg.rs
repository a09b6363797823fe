//! Line charts of run CSV columns, one series per run group with a ±1 std band
//! across seeds.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{CliError, CliResult};
use crate::format::parse_num;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN_LEFT: f64 = 64.0;
const MARGIN_RIGHT: f64 = 160.0;
const MARGIN_Y: f64 = 32.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

/// A parsed run CSV.
#[derive(Debug, Clone)]
pub struct RunSeries {
    pub header: Vec<String>,
    pub rows: Vec<Vec<Option<f64>>>,
}

impl RunSeries {
    pub fn read(path: &Path) -> CliResult<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
        let mut rows = Vec::new();
        for rec in r.records() {
            rows.push(rec?.iter().map(parse_num).collect());
        }
        Ok(Self { header, rows })
    }

    pub fn column(&self, name: &str) -> Option<Vec<(f64, f64)>> {
        let idx = self.header.iter().position(|h| h == name)?;
        let step = self.header.iter().position(|h| h == "step").unwrap_or(0);
        Some(
            self.rows
                .iter()
                .filter_map(|r| Some((r.get(step).copied().flatten()?, r.get(idx).copied().flatten()?)))
                .filter(|(_, v)| v.is_finite())
                .collect(),
        )
    }
}

/// File stem with any `_seed<digits>` suffix removed.
pub fn group_label(path: &Path) -> String {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    if let Some(pos) = stem.rfind("_seed") {
        let tail = &stem[pos + 5..];
        if !tail.is_empty() && tail.bytes().all(|b| b.is_ascii_digit()) {
            return stem[..pos].to_string();
        }
    }
    stem
}

/// Per-step mean and population std across the runs of one group.
#[derive(Debug, Clone, PartialEq)]
pub struct Band {
    pub label: String,
    pub runs: usize,
    pub points: Vec<(f64, f64, f64)>,
}

fn band(label: String, columns: &[Vec<(f64, f64)>]) -> Band {
    let mut by_step: BTreeMap<i64, (f64, Vec<f64>)> = BTreeMap::new();
    for col in columns {
        for &(s, v) in col {
            by_step.entry(s.round() as i64).or_insert((s, Vec::new())).1.push(v);
        }
    }
    let points = by_step
        .into_values()
        .map(|(s, vals)| {
            let n = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / n;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            (s, mean, var.sqrt())
        })
        .collect();
    Band {
        label,
        runs: columns.len(),
        points,
    }
}

/// Groups runs by label and computes one band per group for `metric`.
pub fn bands_for(runs: &[(PathBuf, RunSeries)], metric: &str) -> CliResult<Vec<Band>> {
    let mut groups: BTreeMap<String, Vec<Vec<(f64, f64)>>> = BTreeMap::new();
    for (path, series) in runs {
        let col = series.column(metric).ok_or_else(|| {
            CliError::Validation(format!(
                "metric: unknown metric {metric:?} in {}; available: {}",
                path.display(),
                series.header.iter().filter(|h| *h != "step").cloned().collect::<Vec<_>>().join(", ")
            ))
        })?;
        groups.entry(group_label(path)).or_default().push(col);
    }
    Ok(groups.into_iter().map(|(label, cols)| band(label, &cols)).collect())
}

fn fmt(x: f64) -> String {
    let s = format!("{x:.2}");
    if s == "-0.00" { "0.00".into() } else { s }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

pub fn render(metric: &str, bands: &[Band]) -> String {
    let pts = bands.iter().flat_map(|b| &b.points);
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(s, m, sd) in pts {
        x0 = x0.min(s);
        x1 = x1.max(s);
        y0 = y0.min(m - sd);
        y1 = y1.max(m + sd);
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    if y1 - y0 < 1e-12 {
        y0 -= 0.5;
        y1 += 0.5;
    }
    let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let plot_h = HEIGHT - 2.0 * MARGIN_Y;
    let px = |s: f64| MARGIN_LEFT + (s - x0) / (x1 - x0) * plot_w;
    let py = |v: f64| MARGIN_Y + (y1 - v) / (y1 - y0) * plot_h;

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{}" y="18" text-anchor="middle" font-size="13">{}</text>"#,
        fmt(MARGIN_LEFT + plot_w / 2.0),
        escape(metric)
    );
    let _ = writeln!(
        out,
        r#"<rect x="{}" y="{}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        fmt(MARGIN_LEFT),
        fmt(MARGIN_Y),
        fmt(plot_w),
        fmt(plot_h)
    );
    for i in 0..=4 {
        let t = i as f64 / 4.0;
        let yv = y0 + t * (y1 - y0);
        let xv = x0 + t * (x1 - x0);
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" text-anchor="end">{yv:.3}</text>"#,
            fmt(MARGIN_LEFT - 4.0),
            fmt(py(yv) + 4.0),
        );
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" text-anchor="middle">{xv:.0}</text>"#,
            fmt(px(xv)),
            fmt(HEIGHT - MARGIN_Y + 14.0),
        );
    }
    for (i, b) in bands.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        if b.runs > 1 && !b.points.is_empty() {
            let upper = b.points.iter().map(|&(s, m, sd)| format!("{},{}", fmt(px(s)), fmt(py(m + sd))));
            let lower = b.points.iter().rev().map(|&(s, m, sd)| format!("{},{}", fmt(px(s)), fmt(py(m - sd))));
            let poly: Vec<String> = upper.chain(lower).collect();
            let _ = writeln!(
                out,
                r#"<polygon points="{}" fill="{color}" fill-opacity="0.2" stroke="none"/>"#,
                poly.join(" ")
            );
        }
        let line: Vec<String> = b.points.iter().map(|&(s, m, _)| format!("{},{}", fmt(px(s)), fmt(py(m)))).collect();
        let _ = writeln!(
            out,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
            line.join(" ")
        );
        let ly = MARGIN_Y + 14.0 + 16.0 * i as f64;
        let lx = WIDTH - MARGIN_RIGHT + 10.0;
        let _ = writeln!(
            out,
            r#"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="{color}" stroke-width="2"/>"#,
            fmt(lx),
            fmt(ly - 4.0),
            fmt(lx + 16.0),
            fmt(ly - 4.0)
        );
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}">{} (n={})</text>"#,
            fmt(lx + 20.0),
            fmt(ly),
            escape(&b.label),
            b.runs
        );
    }
    out.push_str("</svg>\n");
    out
}

/// File-name-safe metric name.
pub fn metric_file(metric: &str) -> String {
    metric
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '_' || c == '-' || c == '.' { c } else { '_' })
        .collect()
}

/// Writes `<out>/<metric>.svg` for each metric. All metrics are validated
/// before anything is written.
pub fn plot(csvs: &[PathBuf], metrics: &[String], out: &Path) -> CliResult<Vec<PathBuf>> {
    if metrics.is_empty() {
        return Err(CliError::Validation("metric: at least one metric is required".into()));
    }
    if csvs.is_empty() {
        return Err(CliError::Validation("csv: at least one run CSV is required".into()));
    }
    let runs: Vec<(PathBuf, RunSeries)> = csvs
        .iter()
        .map(|p| {
            RunSeries::read(p)
                .map(|s| (p.clone(), s))
                .map_err(|e| CliError::Validation(format!("csv {}: {e}", p.display())))
        })
        .collect::<CliResult<_>>()?;
    let charts: Vec<(String, String)> = metrics
        .iter()
        .map(|m| Ok((m.clone(), render(m, &bands_for(&runs, m)?))))
        .collect::<CliResult<_>>()?;
    std::fs::create_dir_all(out)?;
    let mut written = Vec::new();
    for (metric, svg) in charts {
        let path = out.join(format!("{}.svg", metric_file(&metric)));
        std::fs::write(&path, svg)?;
        written.push(path);
    }
    Ok(written)
}
