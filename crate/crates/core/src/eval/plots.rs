//! SVG figures: PR curves, exemplar-count curves, similarity matrices.

use std::path::Path;

use plotters::prelude::*;

use super::experiments::{mean_curve, SimilarityMatrix, StabilityPoint};
use super::metrics::EvalReport;
use crate::error::{Error, Result};

fn plot_err<E: std::fmt::Display>(path: &Path) -> impl Fn(E) -> Error + '_ {
    move |e| Error::io(path, std::io::Error::other(e.to_string()))
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    Ok(())
}

/// Precision-recall at IoU 0.5, one series per class.
pub fn pr_curves(report: &EvalReport, path: &Path) -> Result<()> {
    ensure_parent(path)?;
    let err = plot_err(path);
    let root = SVGBackend::new(path, (640, 480)).into_drawing_area();
    root.fill(&WHITE).map_err(&err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption("precision-recall @ IoU 0.5", ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(36)
        .y_label_area_size(44)
        .build_cartesian_2d(0f64..1f64, 0f64..1.05f64)
        .map_err(&err)?;
    chart
        .configure_mesh()
        .x_desc("recall")
        .y_desc("precision")
        .draw()
        .map_err(&err)?;
    for (i, class) in report.per_class.values().enumerate() {
        let color = Palette99::pick(i).to_rgba();
        let mut pts = vec![(0.0, 1.0)];
        pts.extend(class.pr_curve50.iter().map(|p| (p[0], p[1])));
        chart
            .draw_series(LineSeries::new(pts, color.stroke_width(2)))
            .map_err(&err)?
            .label(format!("{} (AP {:.3})", class.name, class.ap50))
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], color));
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(&err)?;
    root.present().map_err(&err)?;
    Ok(())
}

/// Mean mAP@0.5 against exemplar count, with every repeat as a faint dot.
pub fn stability_curve(points: &[StabilityPoint], path: &Path) -> Result<()> {
    ensure_parent(path)?;
    let err = plot_err(path);
    let curve = mean_curve(points);
    let max_k = curve.iter().map(|(k, _)| *k).max().unwrap_or(1) as f64;
    let root = SVGBackend::new(path, (640, 480)).into_drawing_area();
    root.fill(&WHITE).map_err(&err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption("mAP vs exemplar count", ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(36)
        .y_label_area_size(44)
        .build_cartesian_2d(0.5f64..max_k + 0.5, 0f64..1.05f64)
        .map_err(&err)?;
    chart
        .configure_mesh()
        .x_desc("exemplars per polarity")
        .y_desc("mAP@0.5")
        .draw()
        .map_err(&err)?;
    chart
        .draw_series(
            points
                .iter()
                .map(|p| Circle::new((p.count as f64, p.map50), 2, BLUE.mix(0.25).filled())),
        )
        .map_err(&err)?;
    chart
        .draw_series(LineSeries::new(
            curve.iter().map(|(k, m)| (*k as f64, *m)),
            RED.stroke_width(2),
        ))
        .map_err(&err)?;
    root.present().map_err(&err)?;
    Ok(())
}

/// Heat-colored cosine similarity matrix; positives come first.
pub fn similarity_matrix(matrix: &SimilarityMatrix, path: &Path) -> Result<()> {
    ensure_parent(path)?;
    let err = plot_err(path);
    let n = matrix.values.len();
    let root = SVGBackend::new(path, (560, 560)).into_drawing_area();
    root.fill(&WHITE).map_err(&err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(
            format!("exemplar similarity ({} pos | {} neg)", matrix.n_pos, matrix.n_neg),
            ("sans-serif", 18),
        )
        .margin(12)
        .x_label_area_size(30)
        .y_label_area_size(30)
        .build_cartesian_2d(0..n, 0..n)
        .map_err(&err)?;
    chart.configure_mesh().disable_mesh().draw().map_err(&err)?;
    chart
        .draw_series(matrix.values.iter().enumerate().flat_map(|(i, row)| {
            row.iter().enumerate().map(move |(j, &v)| {
                // map [-1, 1] onto a blue-white-red ramp
                let t = ((v + 1.0) / 2.0).clamp(0.0, 1.0);
                let c = if t >= 0.5 {
                    let a = ((1.0 - t) * 2.0 * 255.0) as u8;
                    RGBColor(255, a, a)
                } else {
                    let a = (t * 2.0 * 255.0) as u8;
                    RGBColor(a, a, 255)
                };
                Rectangle::new([(j, n - 1 - i), (j + 1, n - i)], c.filled())
            })
        }))
        .map_err(&err)?;
    root.present().map_err(&err)?;
    Ok(())
}
