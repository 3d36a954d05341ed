//! Trajectory chart: per-group mean of each measure, rendered as a small
//! hand-built SVG. Output depends only on the report rows and the group
//! order, so identical runs produce identical bytes.

use anyhow::{bail, Result};
use creativity_core::measures::ScoreRow;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN_LEFT: f64 = 60.0;
const MARGIN_RIGHT: f64 = 150.0;
const MARGIN_TOP: f64 = 30.0;
const MARGIN_BOTTOM: f64 = 50.0;

const SERIES: [(&str, &str); 4] = [
    ("value", "#1f77b4"),
    ("novelty", "#ff7f0e"),
    ("surprise", "#2ca02c"),
    ("dc", "#d62728"),
];

#[derive(Debug, Clone)]
struct GroupPoint {
    tag: String,
    means: [f64; 4],
}

fn group_means(rows: &[ScoreRow], order: &[String]) -> Result<Vec<GroupPoint>> {
    let mut points = Vec::with_capacity(order.len());
    for tag in order {
        let mut sums = [0.0; 4];
        let mut count = 0usize;
        for row in rows.iter().filter(|r| &r.era_tag == tag) {
            sums[0] += row.value;
            sums[1] += row.novelty;
            sums[2] += row.surprise;
            sums[3] += row.dc;
            count += 1;
        }
        if count == 0 {
            bail!("group {tag:?} named in the plot order has no rows in the report");
        }
        let n = count as f64;
        points.push(GroupPoint {
            tag: tag.clone(),
            means: [sums[0] / n, sums[1] / n, sums[2] / n, sums[3] / n],
        });
    }
    Ok(points)
}

fn fmt(v: f64) -> String {
    format!("{v:.2}")
}

/// Render the chart. `order` lists the era tags left to right and must
/// match groups present in the report.
pub fn render_svg(rows: &[ScoreRow], order: &[String]) -> Result<String> {
    if order.is_empty() {
        bail!("plot order lists no groups");
    }
    let points = group_means(rows, order)?;

    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for p in &points {
        for &m in &p.means {
            lo = lo.min(m);
            hi = hi.max(m);
        }
    }
    if !(lo.is_finite() && hi.is_finite()) {
        bail!("non-finite measure means in plot input");
    }
    if hi - lo < 1e-9 {
        lo -= 0.5;
        hi += 0.5;
    }
    let pad = (hi - lo) * 0.05;
    let (lo, hi) = (lo - pad, hi + pad);

    let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let plot_h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
    let x_at = |i: usize| {
        if points.len() == 1 {
            MARGIN_LEFT + plot_w / 2.0
        } else {
            MARGIN_LEFT + plot_w * i as f64 / (points.len() - 1) as f64
        }
    };
    let y_at = |v: f64| MARGIN_TOP + plot_h * (1.0 - (v - lo) / (hi - lo));

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
         viewBox=\"0 0 {WIDTH} {HEIGHT}\" font-family=\"monospace\" font-size=\"12\">\n"
    ));
    svg.push_str(&format!(
        "  <rect x=\"0\" y=\"0\" width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>\n"
    ));
    svg.push_str(&format!(
        "  <rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"#888\"/>\n",
        fmt(MARGIN_LEFT),
        fmt(MARGIN_TOP),
        fmt(plot_w),
        fmt(plot_h)
    ));

    // Horizontal gridlines with axis labels.
    for step in 0..=4 {
        let v = lo + (hi - lo) * step as f64 / 4.0;
        let y = y_at(v);
        svg.push_str(&format!(
            "  <line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#ddd\"/>\n",
            fmt(MARGIN_LEFT),
            fmt(y),
            fmt(MARGIN_LEFT + plot_w),
            fmt(y)
        ));
        svg.push_str(&format!(
            "  <text x=\"{}\" y=\"{}\" text-anchor=\"end\">{}</text>\n",
            fmt(MARGIN_LEFT - 6.0),
            fmt(y + 4.0),
            fmt(v)
        ));
    }

    // Group labels along the x axis.
    for (i, p) in points.iter().enumerate() {
        svg.push_str(&format!(
            "  <text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n",
            fmt(x_at(i)),
            fmt(MARGIN_TOP + plot_h + 20.0),
            p.tag
        ));
    }

    // One polyline plus markers per measure.
    for (si, (name, color)) in SERIES.iter().enumerate() {
        let coords: Vec<String> = points
            .iter()
            .enumerate()
            .map(|(i, p)| format!("{},{}", fmt(x_at(i)), fmt(y_at(p.means[si]))))
            .collect();
        svg.push_str(&format!(
            "  <polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"2\"/>\n",
            coords.join(" ")
        ));
        for (i, p) in points.iter().enumerate() {
            svg.push_str(&format!(
                "  <circle cx=\"{}\" cy=\"{}\" r=\"3\" fill=\"{color}\"/>\n",
                fmt(x_at(i)),
                fmt(y_at(p.means[si]))
            ));
        }
        let ly = MARGIN_TOP + 16.0 * si as f64 + 10.0;
        svg.push_str(&format!(
            "  <rect x=\"{}\" y=\"{}\" width=\"10\" height=\"10\" fill=\"{color}\"/>\n",
            fmt(MARGIN_LEFT + plot_w + 12.0),
            fmt(ly - 9.0)
        ));
        svg.push_str(&format!(
            "  <text x=\"{}\" y=\"{}\">{name}</text>\n",
            fmt(MARGIN_LEFT + plot_w + 28.0),
            fmt(ly)
        ));
    }

    svg.push_str("</svg>\n");
    Ok(svg)
}
