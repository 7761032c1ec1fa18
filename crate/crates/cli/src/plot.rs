//! PNG plots for ablation sweeps.

use std::error::Error;
use std::path::Path;
use std::sync::OnceLock;

use plotters::coord::Shift;
use plotters::prelude::*;
use textseg_core::pipeline::AblationRow;

const FONT_PATHS: &[&str] = &[
    "/usr/share/fonts/truetype/dejavu/DejaVuSans.ttf",
    "/usr/share/fonts/TTF/DejaVuSans.ttf",
    "/usr/share/fonts/dejavu/DejaVuSans.ttf",
];

type Area<'a> = DrawingArea<BitMapBackend<'a>, Shift>;
type Metric = (&'static str, fn(&AblationRow) -> Option<f64>);

const METRICS: [Metric; 2] = [("FgIoU", |r| Some(r.fgiou)), ("AUROC", |r| r.auroc)];

/// Registers a system font once; plots are drawn without text if none loads.
fn fonts_ready() -> bool {
    static READY: OnceLock<bool> = OnceLock::new();
    *READY.get_or_init(|| {
        for p in FONT_PATHS {
            if let Ok(bytes) = std::fs::read(p) {
                let bytes: &'static [u8] = Box::leak(bytes.into_boxed_slice());
                if plotters::style::register_font("sans-serif", FontStyle::Normal, bytes).is_ok() {
                    return true;
                }
            }
        }
        log::warn!("no usable font found; plots are drawn without labels");
        false
    })
}

fn y_range(values: &[f64]) -> std::ops::Range<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !lo.is_finite() {
        return 0.0..1.0;
    }
    (lo - 0.05).max(0.0)..(hi + 0.05).min(1.0).max((lo - 0.05).max(0.0) + 0.01)
}

/// Line plot per series when every row has an x value, bar chart otherwise.
/// FgIoU and AUROC get one panel each.
pub fn plot_ablation(path: &Path, title: &str, rows: &[AblationRow]) -> Result<(), Box<dyn Error>> {
    let labels = fonts_ready();
    let root = BitMapBackend::new(path, (1100, 460)).into_drawing_area();
    root.fill(&WHITE)?;
    let root = if labels {
        root.titled(title, ("sans-serif", 22))?
    } else {
        root
    };
    let numeric = !rows.is_empty() && rows.iter().all(|r| r.x.is_some());
    for (area, metric) in root.split_evenly((1, 2)).iter().zip(METRICS) {
        if numeric {
            draw_lines(area, rows, metric, labels)?;
        } else {
            draw_bars(area, rows, metric, labels)?;
        }
    }
    root.present()?;
    Ok(())
}

fn draw_lines(area: &Area, rows: &[AblationRow], (name, value): Metric, labels: bool) -> Result<(), Box<dyn Error>> {
    let xs: Vec<f64> = rows.iter().filter_map(|r| r.x).collect();
    let x0 = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let x1 = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let pad = ((x1 - x0) * 0.05).max(0.5);
    let ys: Vec<f64> = rows.iter().filter_map(value).collect();
    let mut builder = ChartBuilder::on(area);
    builder.margin(16);
    if labels {
        builder.caption(name, ("sans-serif", 18)).x_label_area_size(36).y_label_area_size(52);
    }
    let mut chart = builder.build_cartesian_2d(x0 - pad..x1 + pad, y_range(&ys))?;
    if labels {
        chart.configure_mesh().y_desc(name).draw()?;
    }
    let mut series: Vec<&str> = Vec::new();
    for r in rows {
        if !series.contains(&r.series.as_str()) {
            series.push(&r.series);
        }
    }
    for (i, s) in series.iter().enumerate() {
        let color = Palette99::pick(i).to_rgba();
        let pts: Vec<(f64, f64)> = rows
            .iter()
            .filter(|r| r.series == *s)
            .filter_map(|r| Some((r.x?, value(r)?)))
            .collect();
        let drawn = chart.draw_series(LineSeries::new(pts.clone(), color.stroke_width(2)))?;
        if labels {
            drawn
                .label(*s)
                .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], color.stroke_width(2)));
        }
        chart.draw_series(pts.iter().map(|&p| Circle::new(p, 4, color.filled())))?;
    }
    if labels {
        chart
            .configure_series_labels()
            .background_style(WHITE.mix(0.85))
            .border_style(BLACK)
            .position(SeriesLabelPosition::LowerRight)
            .draw()?;
    }
    Ok(())
}

fn draw_bars(area: &Area, rows: &[AblationRow], (name, value): Metric, labels: bool) -> Result<(), Box<dyn Error>> {
    let names: Vec<String> = rows.iter().map(|r| r.label.clone()).collect();
    let ys: Vec<f64> = rows.iter().filter_map(value).collect();
    let range = y_range(&ys);
    let base = range.start;
    let mut builder = ChartBuilder::on(area);
    builder.margin(16);
    if labels {
        builder.caption(name, ("sans-serif", 18)).x_label_area_size(36).y_label_area_size(52);
    }
    // segmented ranges include their end point
    let last = rows.len().saturating_sub(1);
    let mut chart = builder.build_cartesian_2d((0..last).into_segmented(), range)?;
    if labels {
        chart
            .configure_mesh()
            .disable_x_mesh()
            .y_desc(name)
            .x_label_formatter(&|v| match v {
                SegmentValue::CenterOf(i) => names.get(*i).cloned().unwrap_or_default(),
                _ => String::new(),
            })
            .draw()?;
    }
    chart.draw_series(rows.iter().enumerate().filter_map(|(i, r)| {
        let v = value(r)?;
        let color = Palette99::pick(i).to_rgba();
        let mut bar = Rectangle::new(
            [(SegmentValue::Exact(i), base), (SegmentValue::Exact(i + 1), v)],
            color.filled(),
        );
        bar.set_margin(0, 0, 12, 12);
        Some(bar)
    }))?;
    Ok(())
}
