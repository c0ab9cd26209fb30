//! Static SVG figures of ensemble forecasts.
//!
//! Depth is drawn downward: the chart plots `-depth` and labels ticks with
//! the positive value, so a larger depth always sits lower on the page.

use std::path::Path;

use plotters::prelude::*;

use crate::error::{Error, Result};
use crate::training::EnsemblePrediction;

/// Width of the shaded band in ensemble standard deviations on each side.
pub const BAND_SIGMAS: f64 = 2.0;

/// `(mean - 2 std, mean + 2 std)` per date.
pub fn uncertainty_band(mean: &[f64], std: &[f64]) -> Vec<(f64, f64)> {
    mean.iter()
        .zip(std)
        .map(|(m, s)| (m - BAND_SIGMAS * s, m + BAND_SIGMAS * s))
        .collect()
}

/// Chart coordinate of a depth; monotonically decreasing.
pub fn depth_to_axis(depth: f64) -> f64 {
    -depth
}

/// Depth range covered by observations and the band, padded by 5%.
pub fn depth_limits(observed: &[f64], band: &[(f64, f64)]) -> (f64, f64) {
    let values = observed.iter().copied().chain(band.iter().flat_map(|&(lo, hi)| [lo, hi]));
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    let pad = ((hi - lo) * 0.05).max(0.05);
    (lo - pad, hi + pad)
}

pub fn plot_file_name(sensor: &str, model: &str, split: &str) -> String {
    format!("forecast_{sensor}_{model}_{split}.svg")
}

/// Ground truth, ensemble mean and the two-sigma band against date.
pub fn plot_forecast(pred: &EnsemblePrediction, title: &str, path: &Path) -> Result<()> {
    let n = pred.dates.len();
    if n == 0 || pred.mean.len() != n || pred.std.len() != n || pred.observed.len() != n {
        return Err(Error::Shape(format!(
            "{} dates, {} means, {} stds, {} observations",
            n,
            pred.mean.len(),
            pred.std.len(),
            pred.observed.len()
        )));
    }
    let draw_err = |e: &dyn std::fmt::Display| Error::Invalid(format!("{}: drawing failed: {e}", path.display()));
    let band = uncertainty_band(&pred.mean, &pred.std);
    let (lo, hi) = depth_limits(&pred.observed, &band);
    let dates = pred.dates.clone();
    let label_date = move |x: &f64| -> String {
        let i = x.round().clamp(0.0, (dates.len() - 1) as f64) as usize;
        dates[i].format("%Y-%m").to_string()
    };

    let root = SVGBackend::new(path, (1000, 420)).into_drawing_area();
    root.fill(&WHITE).map_err(|e| draw_err(&e))?;
    let x_max = (n.max(2) - 1) as f64;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(36)
        .y_label_area_size(56)
        .build_cartesian_2d(0.0..x_max, depth_to_axis(hi)..depth_to_axis(lo))
        .map_err(|e| draw_err(&e))?;
    chart
        .configure_mesh()
        .x_labels(8)
        .x_label_formatter(&label_date)
        .y_desc("water table depth [m]")
        .y_label_formatter(&|y: &f64| format!("{:.2}", -y))
        .draw()
        .map_err(|e| draw_err(&e))?;

    let upper = band.iter().enumerate().map(|(i, b)| (i as f64, depth_to_axis(b.0)));
    let lower = band.iter().enumerate().rev().map(|(i, b)| (i as f64, depth_to_axis(b.1)));
    let shade = RGBColor(70, 130, 180).mix(0.25);
    chart
        .draw_series(std::iter::once(Polygon::new(upper.chain(lower).collect::<Vec<_>>(), shade.filled())))
        .map_err(|e| draw_err(&e))?
        .label("ensemble mean +/- 2 sd")
        .legend(move |(x, y)| Rectangle::new([(x, y - 5), (x + 20, y + 5)], shade.filled()));
    chart
        .draw_series(LineSeries::new(
            pred.observed.iter().enumerate().map(|(i, &v)| (i as f64, depth_to_axis(v))),
            BLACK.stroke_width(2),
        ))
        .map_err(|e| draw_err(&e))?
        .label("observed")
        .legend(|(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], BLACK.stroke_width(2)));
    let blue = RGBColor(31, 90, 160);
    chart
        .draw_series(LineSeries::new(
            pred.mean.iter().enumerate().map(|(i, &v)| (i as f64, depth_to_axis(v))),
            blue.stroke_width(2),
        ))
        .map_err(|e| draw_err(&e))?
        .label("ensemble mean")
        .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], blue.stroke_width(2)));
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(|e| draw_err(&e))?;
    root.present().map_err(|e| draw_err(&e))?;
    Ok(())
}
