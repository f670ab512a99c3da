//! Minimal hand-rolled SVG emitter for the sweep reports: line plots with
//! shaded 95% bands over log β, and a grouped box plot of per-seed spread.
//!
//! Everything is pure presentation over the aggregated rows — rendering the
//! same data twice yields byte-identical files, which `report` relies on.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::sweep::{AggPoint, RunRow};
use crate::CliError;

const WIDTH: f64 = 860.0;
const HEIGHT: f64 = 480.0;
const MARGIN_LEFT: f64 = 72.0;
const MARGIN_TOP: f64 = 42.0;
const MARGIN_BOTTOM: f64 = 56.0;
/// The plot area stops short of the right edge to leave room for the legend.
const PLOT_RIGHT: f64 = 660.0;
const LEGEND_X: f64 = 675.0;

/// Matplotlib's default cycle; familiar colours make the curves easy to read.
const PALETTE: [&str; 6] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b",
];

pub fn palette_color(index: usize) -> &'static str {
    PALETTE[index % PALETTE.len()]
}

/// One data point with its confidence band.
#[derive(Debug, Clone, Copy)]
pub struct BandPoint {
    pub x: f64,
    pub y: f64,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone)]
pub struct Series {
    pub label: String,
    pub color: &'static str,
    pub points: Vec<BandPoint>,
}

#[derive(Debug, Clone)]
pub struct LinePlot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    /// Tick positions in data coordinates with their printed labels.
    pub x_ticks: Vec<(f64, String)>,
    pub series: Vec<Series>,
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn fmt_coord(v: f64) -> String {
    format!("{v:.2}")
}

/// Short tick label: plain decimal in a comfortable range, `1e-5` style
/// outside it, with `-0` normalised away.
fn fmt_tick(v: f64) -> String {
    let s = if v == 0.0 || (v.abs() >= 0.01 && v.abs() < 1000.0) {
        let t = format!("{v:.4}");
        let t = t.trim_end_matches('0').trim_end_matches('.');
        t.to_string()
    } else {
        format!("{v:e}")
    };
    if s == "-0" { "0".into() } else { s }
}

/// Maps finite y-extremes to a padded axis range; a flat line still gets a
/// visible band around it.
fn pad_range(lo: f64, hi: f64) -> (f64, f64) {
    if lo == hi {
        let pad = if lo == 0.0 { 1.0 } else { lo.abs() * 0.1 };
        return (lo - pad, hi + pad);
    }
    let pad = (hi - lo) * 0.08;
    (lo - pad, hi + pad)
}

struct Frame {
    x_min: f64,
    x_max: f64,
    y_min: f64,
    y_max: f64,
}

impl Frame {
    fn sx(&self, x: f64) -> f64 {
        let t = if self.x_max == self.x_min {
            0.5
        } else {
            (x - self.x_min) / (self.x_max - self.x_min)
        };
        MARGIN_LEFT + t * (PLOT_RIGHT - MARGIN_LEFT)
    }

    fn sy(&self, y: f64) -> f64 {
        let t = (y - self.y_min) / (self.y_max - self.y_min);
        let bottom = HEIGHT - MARGIN_BOTTOM;
        bottom - t * (bottom - MARGIN_TOP)
    }
}

impl LinePlot {
    pub fn render(&self) -> String {
        let finite: Vec<&BandPoint> = self
            .series
            .iter()
            .flat_map(|s| s.points.iter())
            .filter(|p| p.x.is_finite() && p.y.is_finite())
            .collect();
        let x_min = finite.iter().map(|p| p.x).fold(f64::INFINITY, f64::min);
        let x_max = finite.iter().map(|p| p.x).fold(f64::NEG_INFINITY, f64::max);
        let mut y_min = f64::INFINITY;
        let mut y_max = f64::NEG_INFINITY;
        for p in &finite {
            y_min = y_min.min(p.y).min(if p.lo.is_finite() { p.lo } else { p.y });
            y_max = y_max.max(p.y).max(if p.hi.is_finite() { p.hi } else { p.y });
        }
        let (x_min, x_max) = if finite.is_empty() { (0.0, 1.0) } else { (x_min, x_max) };
        let (y_min, y_max) = if finite.is_empty() {
            (0.0, 1.0)
        } else {
            pad_range(y_min, y_max)
        };
        let frame = Frame { x_min, x_max, y_min, y_max };

        let mut out = String::with_capacity(16 * 1024);
        out.push_str(&format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
             viewBox=\"0 0 {WIDTH} {HEIGHT}\" font-family=\"Helvetica, Arial, sans-serif\">\n"
        ));
        out.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
        out.push_str(&format!(
            "<text x=\"{:.2}\" y=\"24\" font-size=\"16\" text-anchor=\"middle\">{}</text>\n",
            (MARGIN_LEFT + PLOT_RIGHT) / 2.0,
            escape(&self.title)
        ));

        // Axes frame.
        out.push_str(&format!(
            "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"none\" \
             stroke=\"#333333\" stroke-width=\"1\"/>\n",
            MARGIN_LEFT,
            MARGIN_TOP,
            PLOT_RIGHT - MARGIN_LEFT,
            HEIGHT - MARGIN_TOP - MARGIN_BOTTOM
        ));

        // X ticks and grid.
        for (x, label) in &self.x_ticks {
            if !x.is_finite() || *x < x_min - 1e-9 || *x > x_max + 1e-9 {
                continue;
            }
            let sx = frame.sx(*x);
            out.push_str(&format!(
                "<line x1=\"{}\" y1=\"{:.2}\" x2=\"{}\" y2=\"{:.2}\" stroke=\"#dddddd\" stroke-width=\"1\"/>\n",
                fmt_coord(sx),
                MARGIN_TOP,
                fmt_coord(sx),
                HEIGHT - MARGIN_BOTTOM
            ));
            out.push_str(&format!(
                "<text x=\"{}\" y=\"{:.2}\" font-size=\"11\" text-anchor=\"middle\">{}</text>\n",
                fmt_coord(sx),
                HEIGHT - MARGIN_BOTTOM + 18.0,
                escape(label)
            ));
        }

        // Y ticks: five evenly-spaced values.
        for i in 0..5 {
            let y = y_min + (y_max - y_min) * (i as f64) / 4.0;
            let sy = frame.sy(y);
            out.push_str(&format!(
                "<line x1=\"{:.2}\" y1=\"{}\" x2=\"{:.2}\" y2=\"{}\" stroke=\"#dddddd\" stroke-width=\"1\"/>\n",
                MARGIN_LEFT,
                fmt_coord(sy),
                PLOT_RIGHT,
                fmt_coord(sy)
            ));
            out.push_str(&format!(
                "<text x=\"{:.2}\" y=\"{}\" font-size=\"11\" text-anchor=\"end\">{}</text>\n",
                MARGIN_LEFT - 8.0,
                fmt_coord(sy + 4.0),
                fmt_tick(y)
            ));
        }

        // Axis labels.
        out.push_str(&format!(
            "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"13\" text-anchor=\"middle\">{}</text>\n",
            (MARGIN_LEFT + PLOT_RIGHT) / 2.0,
            HEIGHT - 12.0,
            escape(&self.x_label)
        ));
        out.push_str(&format!(
            "<text x=\"18\" y=\"{:.2}\" font-size=\"13\" text-anchor=\"middle\" \
             transform=\"rotate(-90 18 {:.2})\">{}</text>\n",
            (MARGIN_TOP + HEIGHT - MARGIN_BOTTOM) / 2.0,
            (MARGIN_TOP + HEIGHT - MARGIN_BOTTOM) / 2.0,
            escape(&self.y_label)
        ));

        // Bands first so every curve draws on top of every band.
        for series in &self.series {
            for run in finite_runs(&series.points) {
                let banded: Vec<&BandPoint> =
                    run.iter().filter(|p| p.lo.is_finite() && p.hi.is_finite()).copied().collect();
                if banded.len() < 2 {
                    continue;
                }
                let mut coords = String::new();
                for p in &banded {
                    coords.push_str(&format!("{},{} ", fmt_coord(frame.sx(p.x)), fmt_coord(frame.sy(p.hi))));
                }
                for p in banded.iter().rev() {
                    coords.push_str(&format!("{},{} ", fmt_coord(frame.sx(p.x)), fmt_coord(frame.sy(p.lo))));
                }
                out.push_str(&format!(
                    "<polygon points=\"{}\" fill=\"{}\" fill-opacity=\"0.15\" stroke=\"none\"/>\n",
                    coords.trim_end(),
                    series.color
                ));
            }
        }

        // Curves and markers.
        for series in &self.series {
            for run in finite_runs(&series.points) {
                if run.len() >= 2 {
                    let coords = run
                        .iter()
                        .map(|p| format!("{},{}", fmt_coord(frame.sx(p.x)), fmt_coord(frame.sy(p.y))))
                        .collect::<Vec<_>>()
                        .join(" ");
                    out.push_str(&format!(
                        "<polyline points=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"1.5\"/>\n",
                        coords, series.color
                    ));
                }
                for p in run {
                    out.push_str(&format!(
                        "<circle cx=\"{}\" cy=\"{}\" r=\"3\" fill=\"{}\"/>\n",
                        fmt_coord(frame.sx(p.x)),
                        fmt_coord(frame.sy(p.y)),
                        series.color
                    ));
                }
            }
        }

        // Legend.
        for (i, series) in self.series.iter().enumerate() {
            let y = MARGIN_TOP + 10.0 + 20.0 * i as f64;
            out.push_str(&format!(
                "<line x1=\"{LEGEND_X:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"{}\" stroke-width=\"2\"/>\n",
                y,
                LEGEND_X + 22.0,
                y,
                series.color
            ));
            out.push_str(&format!(
                "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"12\">{}</text>\n",
                LEGEND_X + 28.0,
                y + 4.0,
                escape(&series.label)
            ));
        }

        out.push_str("</svg>\n");
        out
    }
}

/// Splits a point list into maximal runs of finite-y points; non-finite
/// points break the curve and leave a visible gap.
fn finite_runs(points: &[BandPoint]) -> Vec<Vec<&BandPoint>> {
    let mut runs = Vec::new();
    let mut current = Vec::new();
    for p in points {
        if p.x.is_finite() && p.y.is_finite() {
            current.push(p);
        } else if !current.is_empty() {
            runs.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        runs.push(current);
    }
    runs
}

// ---------------------------------------------------------------------------
// Box plots
// ---------------------------------------------------------------------------

/// Five-number summary with linear-interpolation quartiles.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxStats {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

/// Quantile by linear interpolation between closest ranks (the convention
/// spreadsheet software and numpy default to).
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

impl BoxStats {
    /// Five-number summary of the finite values; `None` when none are finite.
    pub fn from_values(values: &[f64]) -> Option<BoxStats> {
        let mut finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
        if finite.is_empty() {
            return None;
        }
        finite.sort_by(f64::total_cmp);
        Some(BoxStats {
            min: finite[0],
            q1: quantile(&finite, 0.25),
            median: quantile(&finite, 0.5),
            q3: quantile(&finite, 0.75),
            max: finite[finite.len() - 1],
        })
    }
}

/// One labelled group of boxes sharing an x slot.
#[derive(Debug, Clone)]
pub struct BoxGroup {
    pub label: String,
    /// (series index into `series_labels`, stats); missing series skip a slot.
    pub boxes: Vec<(usize, BoxStats)>,
}

#[derive(Debug, Clone)]
pub struct BoxPlot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series_labels: Vec<String>,
    pub groups: Vec<BoxGroup>,
}

impl BoxPlot {
    pub fn render(&self) -> String {
        let mut y_min = f64::INFINITY;
        let mut y_max = f64::NEG_INFINITY;
        for group in &self.groups {
            for (_, b) in &group.boxes {
                y_min = y_min.min(b.min);
                y_max = y_max.max(b.max);
            }
        }
        let (y_min, y_max) = if y_min.is_finite() && y_max.is_finite() {
            pad_range(y_min, y_max)
        } else {
            (0.0, 1.0)
        };
        let frame = Frame { x_min: 0.0, x_max: self.groups.len().max(1) as f64, y_min, y_max };

        let mut out = String::with_capacity(16 * 1024);
        out.push_str(&format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
             viewBox=\"0 0 {WIDTH} {HEIGHT}\" font-family=\"Helvetica, Arial, sans-serif\">\n"
        ));
        out.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
        out.push_str(&format!(
            "<text x=\"{:.2}\" y=\"24\" font-size=\"16\" text-anchor=\"middle\">{}</text>\n",
            (MARGIN_LEFT + PLOT_RIGHT) / 2.0,
            escape(&self.title)
        ));
        out.push_str(&format!(
            "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"none\" \
             stroke=\"#333333\" stroke-width=\"1\"/>\n",
            MARGIN_LEFT,
            MARGIN_TOP,
            PLOT_RIGHT - MARGIN_LEFT,
            HEIGHT - MARGIN_TOP - MARGIN_BOTTOM
        ));

        for i in 0..5 {
            let y = y_min + (y_max - y_min) * (i as f64) / 4.0;
            let sy = frame.sy(y);
            out.push_str(&format!(
                "<line x1=\"{:.2}\" y1=\"{}\" x2=\"{:.2}\" y2=\"{}\" stroke=\"#dddddd\" stroke-width=\"1\"/>\n",
                MARGIN_LEFT,
                fmt_coord(sy),
                PLOT_RIGHT,
                fmt_coord(sy)
            ));
            out.push_str(&format!(
                "<text x=\"{:.2}\" y=\"{}\" font-size=\"11\" text-anchor=\"end\">{}</text>\n",
                MARGIN_LEFT - 8.0,
                fmt_coord(sy + 4.0),
                fmt_tick(y)
            ));
        }

        let n_series = self.series_labels.len().max(1) as f64;
        for (g, group) in self.groups.iter().enumerate() {
            let slot_left = frame.sx(g as f64);
            let slot_right = frame.sx((g + 1) as f64);
            let slot_width = slot_right - slot_left;
            let box_width = (slot_width * 0.7 / n_series).min(36.0);
            out.push_str(&format!(
                "<text x=\"{}\" y=\"{:.2}\" font-size=\"11\" text-anchor=\"middle\">{}</text>\n",
                fmt_coord((slot_left + slot_right) / 2.0),
                HEIGHT - MARGIN_BOTTOM + 18.0,
                escape(&group.label)
            ));
            for &(series_idx, stats) in &group.boxes {
                let color = palette_color(series_idx);
                let center = slot_left
                    + slot_width * (series_idx as f64 + 0.5) / n_series;
                let left = center - box_width / 2.0;
                let right = center + box_width / 2.0;
                // Whiskers.
                for (a, b) in [(stats.min, stats.q1), (stats.q3, stats.max)] {
                    out.push_str(&format!(
                        "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"{}\" stroke-width=\"1\"/>\n",
                        fmt_coord(center),
                        fmt_coord(frame.sy(a)),
                        fmt_coord(center),
                        fmt_coord(frame.sy(b)),
                        color
                    ));
                }
                for v in [stats.min, stats.max] {
                    out.push_str(&format!(
                        "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"{}\" stroke-width=\"1\"/>\n",
                        fmt_coord(center - box_width / 4.0),
                        fmt_coord(frame.sy(v)),
                        fmt_coord(center + box_width / 4.0),
                        fmt_coord(frame.sy(v)),
                        color
                    ));
                }
                // Interquartile box and median bar.
                out.push_str(&format!(
                    "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"{}\" \
                     fill-opacity=\"0.25\" stroke=\"{}\" stroke-width=\"1.2\"/>\n",
                    fmt_coord(left),
                    fmt_coord(frame.sy(stats.q3)),
                    fmt_coord(right - left),
                    fmt_coord(frame.sy(stats.q1) - frame.sy(stats.q3)),
                    color,
                    color
                ));
                out.push_str(&format!(
                    "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"{}\" stroke-width=\"2\"/>\n",
                    fmt_coord(left),
                    fmt_coord(frame.sy(stats.median)),
                    fmt_coord(right),
                    fmt_coord(frame.sy(stats.median)),
                    color
                ));
            }
        }

        out.push_str(&format!(
            "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"13\" text-anchor=\"middle\">{}</text>\n",
            (MARGIN_LEFT + PLOT_RIGHT) / 2.0,
            HEIGHT - 12.0,
            escape(&self.x_label)
        ));
        out.push_str(&format!(
            "<text x=\"18\" y=\"{:.2}\" font-size=\"13\" text-anchor=\"middle\" \
             transform=\"rotate(-90 18 {:.2})\">{}</text>\n",
            (MARGIN_TOP + HEIGHT - MARGIN_BOTTOM) / 2.0,
            (MARGIN_TOP + HEIGHT - MARGIN_BOTTOM) / 2.0,
            escape(&self.y_label)
        ));
        for (i, label) in self.series_labels.iter().enumerate() {
            let y = MARGIN_TOP + 10.0 + 20.0 * i as f64;
            out.push_str(&format!(
                "<rect x=\"{LEGEND_X:.2}\" y=\"{:.2}\" width=\"14\" height=\"10\" fill=\"{}\" fill-opacity=\"0.5\"/>\n",
                y - 8.0,
                palette_color(i)
            ));
            out.push_str(&format!(
                "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"12\">{}</text>\n",
                LEGEND_X + 20.0,
                y + 1.0,
                escape(label)
            ));
        }
        out.push_str("</svg>\n");
        out
    }
}

// ---------------------------------------------------------------------------
// Report assembly
// ---------------------------------------------------------------------------

/// Curve identity within a plot: one line per (mode, λ, α) combination.
fn series_key(mode: &str, lambda: f64, alpha: f64) -> (String, u64, u64) {
    (mode.to_string(), lambda.to_bits(), alpha.to_bits())
}

fn series_label(mode: &str, lambda: f64, alpha: f64, many_modes: bool, many_lambdas: bool) -> String {
    let mut label = String::new();
    if many_modes {
        label.push_str(mode);
        label.push(' ');
    }
    label.push_str(&format!("α={alpha}"));
    if many_lambdas {
        label.push_str(&format!(" λ={lambda}"));
    }
    label
}

fn beta_ticks(betas: &[f64]) -> Vec<(f64, String)> {
    betas.iter().map(|&b| (b.log10(), fmt_tick(b))).collect()
}

fn line_plot(
    agg: &[AggPoint],
    title: &str,
    y_label: &str,
    value: fn(&AggPoint) -> (f64, f64),
) -> LinePlot {
    let mut modes: Vec<&str> = agg.iter().map(|p| p.loss_mode.as_str()).collect();
    modes.sort_unstable();
    modes.dedup();
    let mut lambdas: Vec<u64> = agg.iter().map(|p| p.lambda.to_bits()).collect();
    lambdas.sort_unstable();
    lambdas.dedup();
    let many_modes = modes.len() > 1;
    let many_lambdas = lambdas.len() > 1;

    let mut series_map: BTreeMap<(String, u64, u64), Vec<BandPoint>> = BTreeMap::new();
    let mut betas: Vec<f64> = Vec::new();
    for point in agg {
        let (mean, ci) = value(point);
        let (lo, hi) = if ci.is_finite() { (mean - ci, mean + ci) } else { (mean, mean) };
        series_map
            .entry(series_key(&point.loss_mode, point.lambda, point.alpha))
            .or_default()
            .push(BandPoint { x: point.beta.log10(), y: mean, lo, hi });
        if !betas.iter().any(|&b| b == point.beta) {
            betas.push(point.beta);
        }
    }
    betas.sort_by(f64::total_cmp);

    let series = series_map
        .into_iter()
        .enumerate()
        .map(|(i, ((mode, lambda_bits, alpha_bits), mut points))| {
            points.sort_by(|a, b| a.x.total_cmp(&b.x));
            Series {
                label: series_label(
                    &mode,
                    f64::from_bits(lambda_bits),
                    f64::from_bits(alpha_bits),
                    many_modes,
                    many_lambdas,
                ),
                color: palette_color(i),
                points,
            }
        })
        .collect();

    LinePlot {
        title: title.to_string(),
        x_label: "β (log scale)".to_string(),
        y_label: y_label.to_string(),
        x_ticks: beta_ticks(&betas),
        series,
    }
}

fn box_plot(rows: &[RunRow]) -> BoxPlot {
    let mut modes: Vec<&str> = rows.iter().map(|r| r.loss_mode.as_str()).collect();
    modes.sort_unstable();
    modes.dedup();
    let mut lambdas: Vec<u64> = rows.iter().map(|r| r.lambda.to_bits()).collect();
    lambdas.sort_unstable();
    lambdas.dedup();
    let many_modes = modes.len() > 1;
    let many_lambdas = lambdas.len() > 1;

    let mut series_keys: Vec<(String, u64, u64)> = rows
        .iter()
        .map(|r| series_key(&r.loss_mode, r.lambda, r.alpha))
        .collect();
    series_keys.sort();
    series_keys.dedup();
    let series_labels: Vec<String> = series_keys
        .iter()
        .map(|(m, l, a)| {
            series_label(m, f64::from_bits(*l), f64::from_bits(*a), many_modes, many_lambdas)
        })
        .collect();

    let mut betas: Vec<f64> = rows.iter().map(|r| r.beta).collect();
    betas.sort_by(f64::total_cmp);
    betas.dedup();

    let groups = betas
        .iter()
        .map(|&beta| {
            let mut boxes = Vec::new();
            for (idx, key) in series_keys.iter().enumerate() {
                let values: Vec<f64> = rows
                    .iter()
                    .filter(|r| r.beta == beta && series_key(&r.loss_mode, r.lambda, r.alpha) == *key)
                    .map(|r| r.nsw_mean)
                    .collect();
                if let Some(stats) = BoxStats::from_values(&values) {
                    boxes.push((idx, stats));
                }
            }
            BoxGroup { label: format!("β={}", fmt_tick(beta)), boxes }
        })
        .collect();

    BoxPlot {
        title: "Per-seed NSW spread".to_string(),
        x_label: "β".to_string(),
        y_label: "NSW of mean returns".to_string(),
        series_labels,
        groups,
    }
}

/// Writes the three metric line plots plus the NSW box plot into `dir` and
/// returns the file names written.
pub fn emit_plots(agg: &[AggPoint], rows: &[RunRow], dir: &Path) -> Result<Vec<String>, CliError> {
    let files = [
        (
            "nsw.svg",
            line_plot(agg, "Nash social welfare vs β", "NSW of mean returns", |p| (p.nsw_mean, p.nsw_ci)).render(),
        ),
        (
            "utilitarian.svg",
            line_plot(agg, "Utilitarian return vs β", "Mean total return", |p| {
                (p.utilitarian_mean, p.utilitarian_ci)
            })
            .render(),
        ),
        (
            "jain.svg",
            line_plot(agg, "Jain fairness vs β", "Jain index", |p| (p.jain_mean, p.jain_ci)).render(),
        ),
        ("nsw-box.svg", box_plot(rows).render()),
    ];
    let mut written = Vec::new();
    for (name, content) in files {
        fs::write(dir.join(name), content)?;
        written.push(name.to_string());
    }
    Ok(written)
}
