use std::collections::BTreeMap;

use plotters::prelude::*;

use crate::error::{Error, Result};
use crate::metrics::{EvalReport, BASELINE};

/// One named curve of `(depth, value)` points.
pub type Series = (String, Vec<(f64, f64)>);

fn plot_err(e: impl std::fmt::Display) -> Error {
    Error::Image(format!("plot: {e}"))
}

/// Line chart of several series against depth, as an SVG document.
pub fn plot_svg(title: &str, y_label: &str, series: &[Series]) -> Result<String> {
    let mut svg = String::new();
    {
        let root = SVGBackend::with_string(&mut svg, (640, 420)).into_drawing_area();
        root.fill(&WHITE).map_err(plot_err)?;
        let pts = series.iter().flat_map(|(_, p)| p.iter());
        let x_max = pts.clone().map(|p| p.0).fold(1.0, f64::max);
        let (lo, hi) = pts.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p.1), hi.max(p.1)));
        let (lo, hi) = if lo.is_finite() { (lo.min(0.0), hi.max(1.0)) } else { (0.0, 1.0) };
        let mut chart = ChartBuilder::on(&root)
            .caption(title, ("sans-serif", 20))
            .margin(12)
            .x_label_area_size(36)
            .y_label_area_size(48)
            .build_cartesian_2d(0.0..x_max, lo..hi)
            .map_err(plot_err)?;
        chart
            .configure_mesh()
            .x_desc("depth")
            .y_desc(y_label)
            .x_labels(x_max as usize + 1)
            .draw()
            .map_err(plot_err)?;
        for (i, (name, points)) in series.iter().enumerate() {
            let color = Palette99::pick(i).to_rgba();
            chart
                .draw_series(LineSeries::new(points.iter().copied(), color.stroke_width(2)))
                .map_err(plot_err)?
                .label(name.clone())
                .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], color.stroke_width(2)));
            chart
                .draw_series(points.iter().map(|&p| Circle::new(p, 3, color.filled())))
                .map_err(plot_err)?;
        }
        chart
            .configure_series_labels()
            .background_style(WHITE.mix(0.8))
            .border_style(BLACK)
            .draw()
            .map_err(plot_err)?;
        root.present().map_err(plot_err)?;
    }
    Ok(svg)
}

/// Mean of `metric` against depth for every chain and mode, each curve
/// starting from the unperturbed baseline at depth 0.
pub fn plot_metric(report: &EvalReport, metric: &str) -> Result<String> {
    let base = report
        .aggregates
        .iter()
        .find(|a| a.chain_id == BASELINE && a.metric == metric)
        .map(|a| a.value);
    let mut curves: BTreeMap<(String, String), Vec<(f64, f64)>> = BTreeMap::new();
    for a in report.aggregates.iter().filter(|a| a.metric == metric && a.chain_id != BASELINE) {
        let curve = curves.entry((a.chain_id.clone(), a.mode.clone())).or_default();
        if curve.is_empty() {
            if let Some(b) = base {
                curve.push((0.0, b));
            }
        }
        curve.push((a.depth as f64, a.value));
    }
    let series: Vec<Series> = curves
        .into_iter()
        .map(|((chain, mode), mut pts)| {
            pts.sort_by(|a, b| a.0.total_cmp(&b.0));
            (format!("{chain} / {mode}"), pts)
        })
        .collect();
    plot_svg(&format!("mean {metric} over unseen models and datasets"), metric, &series)
}
