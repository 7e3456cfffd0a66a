//! Results CSV, summary JSON, run metadata and per-check SVG plots.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use plotters::prelude::*;
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};
use crate::suite::{CheckOutcome, ResultRow};

pub const RESULTS_FILE: &str = "results.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const METADATA_FILE: &str = "metadata.json";

pub fn write_results<W: Write>(outcomes: &[CheckOutcome], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(ResultRow::HEADER)?;
    for row in outcomes.iter().flat_map(|o| &o.rows) {
        w.write_record(row.record())?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct SummaryEntry<'a> {
    name: &'a str,
    pass: bool,
    metrics: &'a BTreeMap<String, f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<&'a str>,
}

pub fn write_summary<W: Write>(outcomes: &[CheckOutcome], out: W) -> Result<()> {
    let entries: Vec<SummaryEntry<'_>> = outcomes
        .iter()
        .map(|o| SummaryEntry { name: o.name, pass: o.pass, metrics: &o.metrics, error: o.error.as_deref() })
        .collect();
    serde_json::to_writer_pretty(out, &entries)?;
    Ok(())
}

#[derive(Serialize)]
struct Metadata<'a> {
    timestamp: String,
    version: &'a str,
    seed: u64,
    threads: usize,
    checks: &'a [String],
    model: Option<&'a str>,
}

pub fn write_metadata<W: Write>(cfg: &ExperimentConfig, threads: usize, out: W) -> Result<()> {
    let meta = Metadata {
        timestamp: chrono::Utc::now().to_rfc3339(),
        version: env!("CARGO_PKG_VERSION"),
        seed: cfg.seed,
        threads,
        checks: &cfg.checks,
        model: cfg.model.as_deref(),
    };
    serde_json::to_writer_pretty(out, &meta)?;
    Ok(())
}

fn plot_err<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Plot(e.to_string())
}

/// Line plot of `value` against `param` per case, with the `[lo, hi]` band
/// where present. Rows without a parameter are plotted against their index.
pub fn write_svg(outcome: &CheckOutcome, path: &Path) -> Result<()> {
    let mut series: BTreeMap<&str, Vec<(f64, f64, Option<(f64, f64)>)>> = BTreeMap::new();
    for (i, r) in outcome.rows.iter().enumerate() {
        if !r.value.is_finite() {
            continue;
        }
        let band = r.lo.zip(r.hi).filter(|(a, b)| a.is_finite() && b.is_finite());
        series.entry(r.case.as_str()).or_default().push((r.param.unwrap_or(i as f64), r.value, band));
    }
    let xs: Vec<f64> = series.values().flatten().map(|p| p.0).collect();
    let log_x = !xs.is_empty() && xs.iter().all(|&x| x > 0.0) && {
        let (lo, hi) = xs.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &x| (a.min(x), b.max(x)));
        hi / lo > 50.0
    };
    let tx = |x: f64| if log_x { x.log10() } else { x };
    let mut x_range = (f64::INFINITY, f64::NEG_INFINITY);
    let mut y_range = (f64::INFINITY, f64::NEG_INFINITY);
    for (x, y, band) in series.values().flatten() {
        let x = tx(*x);
        x_range = (x_range.0.min(x), x_range.1.max(x));
        let (lo, hi) = band.unwrap_or((*y, *y));
        y_range = (y_range.0.min(lo.min(*y)), y_range.1.max(hi.max(*y)));
    }
    if !x_range.0.is_finite() {
        x_range = (0.0, 1.0);
        y_range = (0.0, 1.0);
    }
    let pad = |(a, b): (f64, f64)| {
        let w = (b - a).abs().max(1e-12 * a.abs().max(1.0));
        (a - 0.05 * w, b + 0.05 * w)
    };
    let (x_range, y_range) = (pad(x_range), pad(y_range));

    let root = SVGBackend::new(path, (800, 500)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let title = format!("{} ({})", outcome.name, if outcome.pass { "pass" } else { "fail" });
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 20))
        .margin(10)
        .x_label_area_size(40)
        .y_label_area_size(70)
        .build_cartesian_2d(x_range.0..x_range.1, y_range.0..y_range.1)
        .map_err(plot_err)?;
    chart
        .configure_mesh()
        .x_desc(if log_x { "log10 param" } else { "param" })
        .y_desc("value")
        .draw()
        .map_err(plot_err)?;
    for (idx, (case, pts)) in series.iter().enumerate() {
        let colour = Palette99::pick(idx).to_rgba();
        let banded: Vec<(f64, f64, f64)> = pts.iter().filter_map(|(x, _, b)| b.map(|(lo, hi)| (tx(*x), lo, hi))).collect();
        if banded.len() >= 2 {
            let mut poly: Vec<(f64, f64)> = banded.iter().map(|p| (p.0, p.1)).collect();
            poly.extend(banded.iter().rev().map(|p| (p.0, p.2)));
            chart.draw_series(std::iter::once(Polygon::new(poly, colour.mix(0.2).filled()))).map_err(plot_err)?;
        } else {
            for (x, lo, hi) in &banded {
                chart
                    .draw_series(std::iter::once(PathElement::new(vec![(*x, *lo), (*x, *hi)], colour.stroke_width(1))))
                    .map_err(plot_err)?;
            }
        }
        let line: Vec<(f64, f64)> = pts.iter().map(|(x, y, _)| (tx(*x), *y)).collect();
        chart
            .draw_series(LineSeries::new(line.clone(), colour.stroke_width(2)))
            .map_err(plot_err)?
            .label(*case)
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 15, y)], colour.stroke_width(2)));
        chart.draw_series(line.into_iter().map(|p| Circle::new(p, 3, colour.filled()))).map_err(plot_err)?;
    }
    if series.len() <= 12 {
        chart.configure_series_labels().background_style(WHITE.mix(0.8)).border_style(BLACK).draw().map_err(plot_err)?;
    }
    root.present().map_err(plot_err)?;
    Ok(())
}
