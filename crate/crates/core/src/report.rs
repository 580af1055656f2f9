//! Static SVG rendering of training logs (loss/perplexity curves per split)
//! and metric reports (corpus-score bars).

use std::path::Path;

use plotters::prelude::*;
use thiserror::Error;

use crate::eval::MetricReport;
use crate::persist::LogRow;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("empty input: {0}")]
    Empty(String),
    #[error("render error: {0}")]
    Render(String),
}

const SERIES_COLORS: [RGBColor; 6] = [
    RGBColor(31, 119, 180),
    RGBColor(255, 127, 14),
    RGBColor(44, 160, 44),
    RGBColor(214, 39, 40),
    RGBColor(148, 103, 189),
    RGBColor(140, 86, 75),
];

/// One line per (source, split) series of epoch/value points.
pub fn render_loss_curves(
    series: &[(String, Vec<(usize, f64)>)],
    title: &str,
    y_label: &str,
    path: &Path,
) -> Result<(), ReportError> {
    if series.is_empty() || series.iter().all(|(_, pts)| pts.is_empty()) {
        return Err(ReportError::Empty("no curve points".into()));
    }
    let max_epoch = series
        .iter()
        .flat_map(|(_, pts)| pts.iter().map(|&(e, _)| e))
        .max()
        .unwrap_or(1)
        .max(1);
    let (mut y_min, mut y_max) = (f64::INFINITY, f64::NEG_INFINITY);
    for (_, pts) in series {
        for &(_, v) in pts {
            y_min = y_min.min(v);
            y_max = y_max.max(v);
        }
    }
    if !(y_min.is_finite() && y_max.is_finite()) {
        return Err(ReportError::Empty("non-finite curve values".into()));
    }
    let pad = ((y_max - y_min) * 0.05).max(1e-9);
    let (y_min, y_max) = (y_min - pad, y_max + pad);

    let root = SVGBackend::new(path, (800, 500)).into_drawing_area();
    root.fill(&WHITE).map_err(|e| ReportError::Render(e.to_string()))?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 22))
        .margin(12)
        .x_label_area_size(36)
        .y_label_area_size(56)
        .build_cartesian_2d(0usize..max_epoch, y_min..y_max)
        .map_err(|e| ReportError::Render(e.to_string()))?;
    chart
        .configure_mesh()
        .x_desc("epoch")
        .y_desc(y_label)
        .draw()
        .map_err(|e| ReportError::Render(e.to_string()))?;

    for (i, (name, pts)) in series.iter().enumerate() {
        let color = SERIES_COLORS[i % SERIES_COLORS.len()];
        chart
            .draw_series(LineSeries::new(pts.iter().map(|&(e, v)| (e, v)), color.stroke_width(2)))
            .map_err(|e| ReportError::Render(e.to_string()))?
            .label(name.clone())
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], color.stroke_width(2)));
    }
    chart
        .configure_series_labels()
        .border_style(BLACK)
        .background_style(WHITE.mix(0.85))
        .draw()
        .map_err(|e| ReportError::Render(e.to_string()))?;
    root.present().map_err(|e| ReportError::Render(e.to_string()))?;
    Ok(())
}

/// Groups log rows into (split, points) series.
pub fn curves_from_log(rows: &[LogRow], source: &str) -> Vec<(String, Vec<(usize, f64)>)> {
    let mut series: Vec<(String, Vec<(usize, f64)>)> = Vec::new();
    for row in rows {
        let name = if source.is_empty() {
            row.split.clone()
        } else {
            format!("{source}:{}", row.split)
        };
        match series.iter_mut().find(|(n, _)| *n == name) {
            Some((_, pts)) => pts.push((row.epoch, row.value)),
            None => series.push((name, vec![(row.epoch, row.value)])),
        }
    }
    series
}

/// Corpus-score bar chart across metric reports (one bar per report).
pub fn render_score_bars(reports: &[(String, MetricReport)], title: &str, path: &Path) -> Result<(), ReportError> {
    if reports.is_empty() {
        return Err(ReportError::Empty("no metric reports".into()));
    }
    let root = SVGBackend::new(path, (800, 500)).into_drawing_area();
    root.fill(&WHITE).map_err(|e| ReportError::Render(e.to_string()))?;
    let y_max = reports
        .iter()
        .map(|(_, r)| r.corpus_score)
        .fold(0.0f64, f64::max)
        .max(1e-6)
        * 1.15;
    let n = reports.len();
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 22))
        .margin(12)
        .x_label_area_size(64)
        .y_label_area_size(56)
        .build_cartesian_2d(0f64..n as f64, 0f64..y_max)
        .map_err(|e| ReportError::Render(e.to_string()))?;
    let labels: Vec<String> = reports.iter().map(|(name, _)| name.clone()).collect();
    chart
        .configure_mesh()
        .disable_x_mesh()
        .x_labels(n)
        .x_label_formatter(&|x| {
            let i = *x as usize;
            labels.get(i).cloned().unwrap_or_default()
        })
        .y_desc("corpus score")
        .draw()
        .map_err(|e| ReportError::Render(e.to_string()))?;

    for (i, (_, report)) in reports.iter().enumerate() {
        let color = SERIES_COLORS[i % SERIES_COLORS.len()];
        let x0 = i as f64 + 0.2;
        let x1 = i as f64 + 0.8;
        chart
            .draw_series(std::iter::once(Rectangle::new(
                [(x0, 0.0), (x1, report.corpus_score)],
                color.filled(),
            )))
            .map_err(|e| ReportError::Render(e.to_string()))?;
    }
    root.present().map_err(|e| ReportError::Render(e.to_string()))?;
    Ok(())
}
