use std::fmt::Write;

use crate::error::{Error, Result};
use crate::gan::LossTrace;

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 480.0;
const MARGIN: (f64, f64, f64, f64) = (70.0, 20.0, 40.0, 50.0); // left, right, top, bottom
const PAD: f64 = 0.05;

/// Loss axis limits: the data range widened by 5% of its span on each side.
pub fn loss_range(trace: &LossTrace) -> Option<(f64, f64)> {
    let values = trace.records().iter().flat_map(|r| [r.d_loss, r.g_loss]);
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
        (lo.min(v), hi.max(v))
    });
    if !(lo.is_finite() && hi.is_finite()) {
        return None;
    }
    let span = hi - lo;
    let pad = if span > 0.0 {
        PAD * span
    } else {
        PAD * lo.abs().max(1.0)
    };
    Some((lo - pad, hi + pad))
}

/// Self-contained SVG line chart of `d_loss` and `g_loss` against iteration.
pub fn render_svg(trace: &LossTrace) -> Result<String> {
    let records = trace.records();
    let (y_lo, y_hi) =
        loss_range(trace).ok_or_else(|| Error::Domain("trace has no finite losses".into()))?;
    let (x_lo, x_hi) = (
        records[0].iteration as f64,
        records[records.len() - 1].iteration as f64,
    );
    let x_span = if x_hi > x_lo { x_hi - x_lo } else { 1.0 };
    let (left, right, top, bottom) = MARGIN;
    let plot_w = WIDTH - left - right;
    let plot_h = HEIGHT - top - bottom;
    let px = |x: f64| left + (x - x_lo) / x_span * plot_w;
    let py = |y: f64| top + (y_hi - y) / (y_hi - y_lo) * plot_h;

    let mut svg = String::new();
    let w = &mut svg;
    writeln!(w, r#"<?xml version="1.0" encoding="UTF-8"?>"#).unwrap();
    writeln!(
        w,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    )
    .unwrap();
    writeln!(
        w,
        r#"<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#
    )
    .unwrap();
    writeln!(
        w,
        r#"<rect x="{left}" y="{top}" width="{plot_w}" height="{plot_h}" fill="none" stroke="black"/>"#
    )
    .unwrap();
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let y = y_lo + f * (y_hi - y_lo);
        let x = x_lo + f * (x_hi - x_lo);
        writeln!(
            w,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{y:.3}</text>"#,
            left - 6.0,
            py(y) + 4.0
        )
        .unwrap();
        writeln!(
            w,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{x:.0}</text>"#,
            px(x),
            top + plot_h + 16.0
        )
        .unwrap();
    }
    writeln!(
        w,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">iteration</text>"#,
        left + plot_w / 2.0,
        HEIGHT - 10.0
    )
    .unwrap();
    writeln!(
        w,
        r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">loss</text>"#,
        top + plot_h / 2.0,
        top + plot_h / 2.0
    )
    .unwrap();
    writeln!(
        w,
        r#"<text x="{:.2}" y="24" text-anchor="middle">Loss per iteration</text>"#,
        WIDTH / 2.0
    )
    .unwrap();

    for (label, color, pick) in [
        (
            "discriminator loss",
            "#1f77b4",
            (|r: &crate::gan::TraceRecord| r.d_loss) as fn(&_) -> f64,
        ),
        ("generator loss", "#d62728", |r| r.g_loss),
    ] {
        let points: Vec<String> = records
            .iter()
            .map(|r| format!("{:.2},{:.2}", px(r.iteration as f64), py(pick(r))))
            .collect();
        writeln!(
            w,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"><title>{label}</title></polyline>"#,
            points.join(" ")
        )
        .unwrap();
    }
    let lx = left + plot_w - 150.0;
    for (i, (label, color)) in [
        ("discriminator loss", "#1f77b4"),
        ("generator loss", "#d62728"),
    ]
    .iter()
    .enumerate()
    {
        let ly = top + 16.0 + 18.0 * i as f64;
        writeln!(
            w,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#,
            lx + 20.0
        )
        .unwrap();
        writeln!(
            w,
            r#"<text x="{}" y="{}">{label}</text>"#,
            lx + 26.0,
            ly + 4.0
        )
        .unwrap();
    }
    writeln!(w, "</svg>").unwrap();
    Ok(svg)
}
