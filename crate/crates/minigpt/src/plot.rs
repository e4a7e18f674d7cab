//! Standalone SVG line chart of a loss log.

use std::fmt::Write;

use crate::error::{Error, Result};
use crate::trainer::LossRecord;

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 480.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 30.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 55.0;
const TRAIN_COLOR: &str = "#1f77b4";
const VAL_COLOR: &str = "#d62728";

/// Roughly `target` evenly spaced round values covering `[lo, hi]`.
pub fn nice_ticks(lo: f64, hi: f64, target: usize) -> Vec<f64> {
    if !(hi > lo) {
        return vec![lo];
    }
    let raw = (hi - lo) / target.max(1) as f64;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0].iter().map(|m| m * mag).find(|&s| s >= raw).unwrap_or(10.0 * mag);
    let first = (lo / step).ceil() as i64;
    let last = (hi / step).floor() as i64;
    // snap to the step grid so labels print without float noise
    (first..=last).map(|i| i as f64 * step).collect()
}

fn tick_label(v: f64) -> String {
    let s = format!("{v:.3}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".into()
    } else {
        s.into()
    }
}

/// Train and validation curves with axis ticks, a legend and a marker at the
/// lowest validation loss.
pub fn render_svg(records: &[LossRecord]) -> Result<String> {
    if records.is_empty() {
        return Err(Error::InvalidArgument("loss log has no rows to plot".into()));
    }
    let (x0, x1) = (records[0].step as f64, records[records.len() - 1].step as f64);
    let x1 = if x1 > x0 { x1 } else { x0 + 1.0 };
    let losses = records.iter().flat_map(|r| [r.train_loss, r.val_loss]);
    let (lo, hi) = losses.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !(lo.is_finite() && hi.is_finite()) {
        return Err(Error::InvalidArgument("loss log contains non-finite losses".into()));
    }
    let pad = ((hi - lo) * 0.05).max(1e-3);
    let (y0, y1) = ((lo - pad).max(0.0), hi + pad);

    let plot_w = WIDTH - LEFT - RIGHT;
    let plot_h = HEIGHT - TOP - BOTTOM;
    let sx = |s: f64| LEFT + (s - x0) / (x1 - x0) * plot_w;
    let sy = |l: f64| TOP + (y1 - l) / (y1 - y0) * plot_h;

    let mut svg = String::new();
    let w = &mut svg;
    // writing into a String cannot fail
    let _ = writeln!(
        w,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(w, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        w,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="15">Training and validation loss</text>"#,
        WIDTH / 2.0
    );

    let (bottom, right) = (TOP + plot_h, LEFT + plot_w);
    let _ = writeln!(w, r#"<g stroke="black" stroke-width="1">"#);
    let _ = writeln!(w, r#"<line x1="{LEFT}" y1="{bottom}" x2="{right}" y2="{bottom}"/>"#);
    let _ = writeln!(w, r#"<line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{bottom}"/>"#);
    let _ = writeln!(w, "</g>");

    let _ = writeln!(w, r#"<g class="x-ticks">"#);
    for t in nice_ticks(x0, x1, 8) {
        let x = sx(t);
        let _ = writeln!(w, r#"<line x1="{x:.2}" y1="{bottom}" x2="{x:.2}" y2="{:.2}" stroke="black"/>"#, bottom + 5.0);
        let _ =
            writeln!(w, r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"#, bottom + 18.0, tick_label(t));
    }
    let _ = writeln!(w, "</g>");
    let _ = writeln!(w, r#"<g class="y-ticks">"#);
    for t in nice_ticks(y0, y1, 6) {
        let y = sy(t);
        let _ = writeln!(w, r##"<line x1="{LEFT}" y1="{y:.2}" x2="{right}" y2="{y:.2}" stroke="#e0e0e0"/>"##);
        let _ = writeln!(w, r#"<line x1="{:.2}" y1="{y:.2}" x2="{LEFT}" y2="{y:.2}" stroke="black"/>"#, LEFT - 5.0);
        let _ =
            writeln!(w, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#, LEFT - 8.0, y + 4.0, tick_label(t));
    }
    let _ = writeln!(w, "</g>");
    let _ = writeln!(
        w,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">step</text>"#,
        LEFT + plot_w / 2.0,
        HEIGHT - 12.0
    );
    let _ = writeln!(
        w,
        r#"<text x="18" y="{:.2}" text-anchor="middle" transform="rotate(-90 18 {:.2})">loss</text>"#,
        TOP + plot_h / 2.0,
        TOP + plot_h / 2.0
    );

    for (name, color, pick) in [
        ("train", TRAIN_COLOR, (|r: &LossRecord| r.train_loss) as fn(&LossRecord) -> f64),
        ("val", VAL_COLOR, |r: &LossRecord| r.val_loss),
    ] {
        let points: Vec<String> =
            records.iter().map(|r| format!("{:.2},{:.2}", sx(r.step as f64), sy(pick(r)))).collect();
        let _ = writeln!(
            w,
            r#"<polyline class="{name}" fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
            points.join(" ")
        );
    }

    let best = records.iter().fold(&records[0], |b, r| if r.val_loss < b.val_loss { r } else { b });
    let (bx, by) = (sx(best.step as f64), sy(best.val_loss));
    let _ = writeln!(
        w,
        r#"<circle class="best-val" cx="{bx:.2}" cy="{by:.2}" r="5" fill="none" stroke="{VAL_COLOR}" stroke-width="2"/>"#
    );
    let anchor = if bx > LEFT + plot_w * 0.7 { "end" } else { "start" };
    let dx = if anchor == "end" { -8.0 } else { 8.0 };
    let _ = writeln!(
        w,
        r#"<text class="best-val-label" x="{:.2}" y="{:.2}" text-anchor="{anchor}">min val {:.4} at step {}</text>"#,
        bx + dx,
        by - 10.0,
        best.val_loss,
        best.step
    );

    let (lx, ly) = (right - 90.0, TOP + 10.0);
    let _ = writeln!(w, r#"<g class="legend">"#);
    for (i, (name, color)) in [("train", TRAIN_COLOR), ("val", VAL_COLOR)].iter().enumerate() {
        let y = ly + 18.0 * i as f64;
        let _ =
            writeln!(w, r#"<line x1="{lx}" y1="{y}" x2="{}" y2="{y}" stroke="{color}" stroke-width="2"/>"#, lx + 24.0);
        let _ = writeln!(w, r#"<text x="{}" y="{}">{name}</text>"#, lx + 30.0, y + 4.0);
    }
    let _ = writeln!(w, "</g>");
    let _ = writeln!(w, "</svg>");
    Ok(svg)
}
