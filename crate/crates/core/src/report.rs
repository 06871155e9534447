//! CSV and SVG export of experiment reports.
//!
//! Every file is rendered in memory first and then written through a
//! temporary sibling plus rename, so a failed run leaves no half-written
//! output behind.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::adaptive::{OptimizationReport, UnitOptimization};
use crate::error::{Error, Result};
use crate::harness::{CurveRow, DesignErrorRow, ErrorReport, ScalogramRow, UnitErrorRow};
use crate::metrics::{self, DEFAULT_SPAN};

pub const ERRORS_BY_DESIGN: &str = "errors_by_design.csv";
pub const ERRORS_BY_UNIT: &str = "errors_by_unit.csv";
pub const CURVES: &str = "curves.csv";
pub const SCALOGRAM: &str = "scalogram.csv";
pub const OPTIMIZATION: &str = "optimization.csv";
pub const OPTIMIZATION_SUMMARY: &str = "optimization_summary.csv";
pub const OPTIMIZATION_CURVES: &str = "optimization_curves.csv";

/// Smoothed lines are drawn only when a series has at least this many
/// populated bins; sparser series are drawn point to point.
const MIN_BINS_FOR_SMOOTHING: usize = 5;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> Error + '_ {
    move |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    }
}

/// Serializes rows with an explicit header so empty tables still get one.
fn render_csv<T: Serialize>(path: &Path, header: &[&str], rows: &[T]) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(header).map_err(csv_err(path))?;
    for r in rows {
        w.serialize(r).map_err(csv_err(path))?;
    }
    w.into_inner().map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e.into_error(),
    })
}

fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err(path))?;
    r.deserialize().map(|row| row.map_err(csv_err(path))).collect()
}

/// Writes `bytes` to `path` via a temporary file in the same directory,
/// creating missing parent directories.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path
        .file_name()
        .ok_or_else(|| Error::InvalidArgument(format!("{} has no file name", path.display())))?;
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(name);
    tmp_name.push(format!(".{}.tmp", std::process::id()));
    let tmp = path.with_file_name(tmp_name);
    fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::Io {
            path: path.to_path_buf(),
            source: e,
        }
    })
}

/// Writes a batch of rendered files; the directory is created if needed.
fn commit(dir: &Path, files: Vec<(PathBuf, Vec<u8>)>) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut written = Vec::with_capacity(files.len());
    for (path, bytes) in files {
        write_atomic(&path, &bytes)?;
        written.push(path);
    }
    Ok(written)
}

const DESIGN_HEADER: [&str; 6] = ["legend", "design", "protocol", "n_or_k", "overall_error", "stderr"];
const UNIT_HEADER: [&str; 8] = ["unit_row", "unit_col", "pi", "erp", "legend", "design", "n_or_k", "error_rate"];
const CURVE_HEADER: [&str; 7] = ["metric", "bin_center", "mean_error", "count", "legend", "design", "n_or_k"];
const SCALOGRAM_HEADER: [&str; 3] = ["unit_side", "frac_purity_gt_090", "frac_purity_lt_050"];

/// Writes the four CSV tables plus one SVG chart per curve family.
/// Returns the paths written, CSVs first.
pub fn write_report(report: &ErrorReport, dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    let p = dir.join(ERRORS_BY_DESIGN);
    files.push((p.clone(), render_csv(&p, &DESIGN_HEADER, &report.designs)?));
    let p = dir.join(ERRORS_BY_UNIT);
    files.push((p.clone(), render_csv(&p, &UNIT_HEADER, &report.units)?));
    let p = dir.join(CURVES);
    files.push((p.clone(), render_csv(&p, &CURVE_HEADER, &report.curves)?));
    let p = dir.join(SCALOGRAM);
    files.push((p.clone(), render_csv(&p, &SCALOGRAM_HEADER, &report.scalogram)?));
    for family in curve_families(&report.curves) {
        let svg = render_family_svg(&family)?;
        files.push((dir.join(family.file_name()), svg.into_bytes()));
    }
    commit(dir, files)
}

/// Writes only `scalogram.csv`.
pub fn write_scalogram(rows: &[ScalogramRow], dir: &Path) -> Result<PathBuf> {
    let p = dir.join(SCALOGRAM);
    let bytes = render_csv(&p, &SCALOGRAM_HEADER, rows)?;
    Ok(commit(dir, vec![(p, bytes)])?.remove(0))
}

pub fn read_scalogram(dir: &Path) -> Result<Vec<ScalogramRow>> {
    read_csv(&dir.join(SCALOGRAM))
}

/// Reads back the CSV tables written by [`write_report`].
pub fn read_report(dir: &Path) -> Result<ErrorReport> {
    Ok(ErrorReport {
        designs: read_csv::<DesignErrorRow>(&dir.join(ERRORS_BY_DESIGN))?,
        units: read_csv::<UnitErrorRow>(&dir.join(ERRORS_BY_UNIT))?,
        curves: read_csv::<CurveRow>(&dir.join(CURVES))?,
        scalogram: read_csv::<ScalogramRow>(&dir.join(SCALOGRAM))?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationRow {
    pub unit_row: usize,
    pub unit_col: usize,
    pub metric: f64,
    pub mean_n: f64,
    pub error_rate: f64,
    pub cap_hit_fraction: f64,
}

impl From<&UnitOptimization> for OptimizationRow {
    fn from(u: &UnitOptimization) -> Self {
        Self {
            unit_row: u.unit_row,
            unit_col: u.unit_col,
            metric: u.metric,
            mean_n: u.mean_n,
            error_rate: u.error_rate,
            cap_hit_fraction: u.cap_hit_fraction,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationSummaryRow {
    pub legend: String,
    pub alpha: f64,
    pub n_max: usize,
    pub repetitions: usize,
    pub unit_count: usize,
    pub mean_n: f64,
    pub error_rate: f64,
    pub cap_hit_fraction: f64,
    pub confident_stops: usize,
    pub confident_errors: usize,
    pub confident_error_rate: f64,
    pub benchmark_error_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationCurveRow {
    pub metric: String,
    pub bin_center: f64,
    pub count: usize,
    pub mean_n: Option<f64>,
    pub mean_error: Option<f64>,
}

const OPTIMIZATION_HEADER: [&str; 6] = ["unit_row", "unit_col", "metric", "mean_n", "error_rate", "cap_hit_fraction"];
const OPTIMIZATION_SUMMARY_HEADER: [&str; 12] = [
    "legend",
    "alpha",
    "n_max",
    "repetitions",
    "unit_count",
    "mean_n",
    "error_rate",
    "cap_hit_fraction",
    "confident_stops",
    "confident_errors",
    "confident_error_rate",
    "benchmark_error_rate",
];
const OPTIMIZATION_CURVE_HEADER: [&str; 5] = ["metric", "bin_center", "count", "mean_n", "mean_error"];

pub fn optimization_metric_name(report: &OptimizationReport) -> &'static str {
    if report.legend.is_binary() {
        "pi"
    } else {
        "erp"
    }
}

/// Writes the per-unit table, a one-row summary and the binned effort and
/// error curves of an adaptive experiment.
pub fn write_optimization_report(report: &OptimizationReport, dir: &Path) -> Result<Vec<PathBuf>> {
    let rows: Vec<OptimizationRow> = report.units.iter().map(OptimizationRow::from).collect();
    let s = &report.summary;
    let summary = OptimizationSummaryRow {
        legend: report.legend.to_string(),
        alpha: report.alpha,
        n_max: report.n_max,
        repetitions: report.repetitions,
        unit_count: s.unit_count,
        mean_n: s.mean_n,
        error_rate: s.error_rate,
        cap_hit_fraction: s.cap_hit_fraction,
        confident_stops: s.confident_stops,
        confident_errors: s.confident_errors,
        confident_error_rate: s.confident_error_rate(),
        benchmark_error_rate: s.benchmark_error_rate,
    };
    let metric = optimization_metric_name(report);
    let curve: Vec<OptimizationCurveRow> = report
        .effort_curve
        .bin_centers
        .iter()
        .enumerate()
        .map(|(i, &c)| OptimizationCurveRow {
            metric: metric.to_string(),
            bin_center: c,
            count: report.effort_curve.counts[i],
            mean_n: report.effort_curve.mean_error[i],
            mean_error: report.error_curve.mean_error.get(i).copied().flatten(),
        })
        .collect();

    let mut files = Vec::new();
    let p = dir.join(OPTIMIZATION);
    files.push((p.clone(), render_csv(&p, &OPTIMIZATION_HEADER, &rows)?));
    let p = dir.join(OPTIMIZATION_SUMMARY);
    files.push((p.clone(), render_csv(&p, &OPTIMIZATION_SUMMARY_HEADER, &[summary])?));
    let p = dir.join(OPTIMIZATION_CURVES);
    files.push((p.clone(), render_csv(&p, &OPTIMIZATION_CURVE_HEADER, &curve)?));
    commit(dir, files)
}

pub fn read_optimization_rows(dir: &Path) -> Result<Vec<OptimizationRow>> {
    read_csv(&dir.join(OPTIMIZATION))
}

pub fn read_optimization_summary(dir: &Path) -> Result<OptimizationSummaryRow> {
    let path = dir.join(OPTIMIZATION_SUMMARY);
    let mut rows: Vec<OptimizationSummaryRow> = read_csv(&path)?;
    if rows.len() != 1 {
        return Err(Error::InvalidArgument(format!(
            "{}: expected one summary row, found {}",
            path.display(),
            rows.len()
        )));
    }
    Ok(rows.remove(0))
}

/// Curves sharing metric, legend and design; one series per `n_or_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveFamily {
    pub metric: String,
    pub legend: String,
    pub design: String,
    pub series: BTreeMap<usize, Vec<(f64, Option<f64>)>>,
}

impl CurveFamily {
    pub fn file_name(&self) -> String {
        let raw = format!("curve_{}_{}_{}.svg", self.metric, self.legend, self.design);
        raw.chars()
            .map(|c| if c.is_ascii_alphanumeric() || "._-".contains(c) { c } else { '-' })
            .collect()
    }
}

/// Groups curve rows into families, ordered by first appearance.
pub fn curve_families(rows: &[CurveRow]) -> Vec<CurveFamily> {
    let mut families: Vec<CurveFamily> = Vec::new();
    for r in rows {
        let idx = match families
            .iter()
            .position(|f| f.metric == r.metric && f.legend == r.legend && f.design == r.design)
        {
            Some(i) => i,
            None => {
                families.push(CurveFamily {
                    metric: r.metric.clone(),
                    legend: r.legend.clone(),
                    design: r.design.clone(),
                    series: BTreeMap::new(),
                });
                families.len() - 1
            }
        };
        families[idx]
            .series
            .entry(r.n_or_k)
            .or_default()
            .push((r.bin_center, r.mean_error));
    }
    families
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 50.0;
const PALETTE: [&str; 8] = [
    "#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02", "#a6761d", "#666666",
];

fn xml_escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            _ => out.push(c),
        }
    }
    out
}

/// Points to draw for one series: the local-regression line over populated
/// bins when there are enough of them, else the raw bin means.
fn series_line(points: &[(f64, Option<f64>)]) -> Result<Vec<(f64, f64)>> {
    let populated: Vec<(f64, f64)> = points.iter().filter_map(|&(x, y)| y.map(|y| (x, y))).collect();
    if populated.len() < MIN_BINS_FOR_SMOOTHING {
        return Ok(populated);
    }
    let (x, y): (Vec<f64>, Vec<f64>) = populated.iter().copied().unzip();
    let smooth = metrics::local_regression_smooth(&x, &y, DEFAULT_SPAN, &x)?;
    Ok(x.into_iter().zip(smooth).collect())
}

pub fn render_family_svg(family: &CurveFamily) -> Result<String> {
    let lines: Vec<(usize, Vec<(f64, f64)>)> = family
        .series
        .iter()
        .map(|(k, pts)| series_line(pts).map(|l| (*k, l)))
        .collect::<Result<_>>()?;
    let y_max = lines
        .iter()
        .flat_map(|(_, l)| l.iter().map(|p| p.1))
        .fold(0.0_f64, f64::max)
        .max(0.01);
    let plot_w = WIDTH - 2.0 * MARGIN;
    let plot_h = HEIGHT - 2.0 * MARGIN;
    let sx = |x: f64| MARGIN + x.clamp(0.0, 1.0) * plot_w;
    let sy = |y: f64| HEIGHT - MARGIN - (y.max(0.0) / y_max) * plot_h;

    let mut s = String::new();
    let title = format!("{} / {} / {}", family.legend, family.design, family.metric);
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(s, "<title>{}</title>", xml_escape(&title));
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<g stroke="black" stroke-width="1"><line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}"/><line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}"/></g>"#,
        x0 = MARGIN,
        y0 = HEIGHT - MARGIN,
        x1 = WIDTH - MARGIN,
        y1 = MARGIN
    );
    let _ = writeln!(s, r#"<g font-family="sans-serif" font-size="11">"#);
    for i in 0..=4 {
        let v = i as f64 / 4.0;
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{v:.2}</text>"#,
            sx(v),
            HEIGHT - MARGIN + 16.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{:.3}</text>"#,
            MARGIN - 6.0,
            sy(v * y_max) + 4.0,
            v * y_max
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
        WIDTH / 2.0,
        HEIGHT - 12.0,
        xml_escape(&family.metric)
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="20" text-anchor="middle">{}</text>"#,
        WIDTH / 2.0,
        xml_escape(&title)
    );
    let _ = writeln!(s, "</g>");
    for (i, (k, line)) in lines.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> = line.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
        let _ = writeln!(
            s,
            r#"<polyline data-n-or-k="{k}" fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            pts.join(" ")
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="11" fill="{color}">{k}</text>"#,
            WIDTH - MARGIN + 8.0,
            MARGIN + 14.0 * i as f64
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}
