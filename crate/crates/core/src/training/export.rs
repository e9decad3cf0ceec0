use std::fs;
use std::path::{Path, PathBuf};

use image::{GrayImage, Luma};
use plotters::prelude::*;
use serde::{Deserialize, Serialize};

use super::evaluate::ImageRecord;
use super::sweep::{EvalReport, Method};
use crate::error::{invalid, Error, Result};

pub const CSV_NAME: &str = "cs_vs_alpha.csv";
pub const PLOT_NAME: &str = "cs_vs_alpha.svg";
/// Gap between grid tiles, in pixels.
pub const GRID_MARGIN: u32 = 2;

/// One row of `cs_vs_alpha.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub alpha: f64,
    pub regime: String,
    pub mean_cs: f64,
    pub std_cs: f64,
    pub n: usize,
}

/// Aggregate rows of the successful cells, sorted by method then alpha.
pub fn csv_rows(report: &EvalReport) -> Vec<CsvRow> {
    Method::ALL
        .iter()
        .flat_map(|&m| report.per_alpha(m))
        .map(|c| CsvRow { alpha: c.alpha, regime: c.method.name().to_string(), mean_cs: c.mean_cs, std_cs: c.std_cs, n: c.count })
        .collect()
}

pub fn write_csv(report: &EvalReport, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in csv_rows(report) {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv(path: &Path) -> Result<Vec<CsvRow>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// Line plot of mean similarity against sampling ratio, one series per method.
pub fn write_plot(report: &EvalReport, path: &Path) -> Result<()> {
    let plot_err = |e: &dyn std::fmt::Display| Error::Image(format!("plot: {e}"));
    let alphas = report.alphas();
    let (lo, hi) = match (alphas.first(), alphas.last()) {
        (Some(&a), Some(&b)) => (a, b),
        _ => return Err(invalid("nothing to plot")),
    };
    let pad = ((hi - lo) * 0.05).max(0.02);
    let root = SVGBackend::new(path, (720, 480)).into_drawing_area();
    root.fill(&WHITE).map_err(|e| plot_err(&e))?;
    let mut chart = ChartBuilder::on(&root)
        .caption("Cosine similarity vs sampling ratio", ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(50)
        .build_cartesian_2d((lo - pad)..(hi + pad), 0.0..1.0)
        .map_err(|e| plot_err(&e))?;
    chart
        .configure_mesh()
        .x_desc("alpha (m/n)")
        .y_desc("mean CS")
        .draw()
        .map_err(|e| plot_err(&e))?;
    let palette = [RED, BLUE, GREEN, BLACK];
    for (method, color) in Method::ALL.into_iter().zip(palette) {
        let cells = report.per_alpha(method);
        if cells.is_empty() {
            continue;
        }
        let points: Vec<(f64, f64)> = cells.iter().map(|c| (c.alpha, c.mean_cs)).collect();
        chart
            .draw_series(LineSeries::new(points.clone(), color.stroke_width(2)))
            .map_err(|e| plot_err(&e))?
            .label(method.name())
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], color.stroke_width(2)));
        chart
            .draw_series(points.into_iter().map(|p| Circle::new(p, 3, color.filled())))
            .map_err(|e| plot_err(&e))?;
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .position(SeriesLabelPosition::LowerRight)
        .draw()
        .map_err(|e| plot_err(&e))?;
    root.present().map_err(|e| plot_err(&e))?;
    Ok(())
}

/// Renders rows of images as tiles separated by [`GRID_MARGIN`] pixels.
///
/// Each tile shows the pixel phase, mapped linearly from `[0, 1]` radians to
/// gray levels, which is the range of the synthesized phase images.
pub fn render_grid(rows: &[Vec<&ImageRecord>]) -> Result<GrayImage> {
    let first = rows.iter().flatten().next().ok_or_else(|| invalid("grid has no images"))?;
    let (th, tw) = (first.image.height() as u32, first.image.width() as u32);
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0) as u32;
    let height = rows.len() as u32 * th + (rows.len() as u32 + 1) * GRID_MARGIN;
    let width = cols * tw + (cols + 1) * GRID_MARGIN;
    let mut img = GrayImage::from_pixel(width, height, Luma([255]));
    for (r, row) in rows.iter().enumerate() {
        for (c, rec) in row.iter().enumerate() {
            if (rec.image.height() as u32, rec.image.width() as u32) != (th, tw) {
                return Err(invalid("grid tiles differ in shape"));
            }
            let y0 = GRID_MARGIN + r as u32 * (th + GRID_MARGIN);
            let x0 = GRID_MARGIN + c as u32 * (tw + GRID_MARGIN);
            for (k, v) in rec.image.values().iter().enumerate() {
                let level = (v.arg().clamp(0.0, 1.0) * 255.0).round() as u8;
                img.put_pixel(x0 + (k as u32 % tw), y0 + (k as u32 / tw), Luma([level]));
            }
        }
    }
    Ok(img)
}

/// Grid rows for one alpha: truth, then supervised, self-supervised and
/// gradient descent where available.
pub fn grid_rows(report: &EvalReport, alpha: f64) -> Vec<Vec<&ImageRecord>> {
    let mut rows = vec![report.truths.iter().collect::<Vec<_>>()];
    for method in [Method::Supervised, Method::SsAmplitude, Method::GradientDescent] {
        if let Some(cell) = report.cell(alpha, method).filter(|c| c.is_ok() && !c.kept.is_empty()) {
            rows.push(cell.kept.iter().collect());
        }
    }
    rows.retain(|r| !r.is_empty());
    rows
}

/// Writes the CSV, the plot and one grid per alpha into `out_dir`.
pub fn export(report: &EvalReport, out_dir: &Path) -> Result<Vec<PathBuf>> {
    if report.cells.is_empty() {
        return Err(invalid("report has no cells"));
    }
    fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();
    let csv_path = out_dir.join(CSV_NAME);
    write_csv(report, &csv_path)?;
    written.push(csv_path);
    if !csv_rows(report).is_empty() {
        let plot_path = out_dir.join(PLOT_NAME);
        write_plot(report, &plot_path)?;
        written.push(plot_path);
    }
    for alpha in report.alphas() {
        let rows = grid_rows(report, alpha);
        if rows.is_empty() {
            continue;
        }
        let path = out_dir.join(format!("grid_alpha_{alpha}.png"));
        render_grid(&rows)?.save(&path).map_err(|e| Error::Image(e.to_string()))?;
        written.push(path);
    }
    Ok(written)
}
