//! Log-log error plots as standalone SVG.

use std::fmt::Write as _;

use crate::analysis::fit_rate;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct Series {
    pub label: String,
    pub h: Vec<f64>,
    pub error: Vec<f64>,
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const MARGIN: f64 = 70.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

/// Error against `h` on log-log axes, one polyline per series, each labelled
/// with its fitted slope (`tau=...`) when at least three points are positive.
pub fn loglog_svg(title: &str, series: &[Series]) -> Result<String> {
    let points: Vec<(f64, f64)> = series
        .iter()
        .flat_map(|s| s.h.iter().zip(&s.error).map(|(&h, &e)| (h, e)))
        .filter(|&(h, e)| h > 0.0 && e > 0.0 && h.is_finite() && e.is_finite())
        .collect();
    if points.is_empty() {
        return Err(Error::EmptyStudy("no positive (h, error) points".into()));
    }
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(h, e) in &points {
        x0 = x0.min(h.log10());
        x1 = x1.max(h.log10());
        y0 = y0.min(e.log10());
        y1 = y1.max(e.log10());
    }
    let (x0, x1) = (x0.floor(), x1.ceil().max(x0.floor() + 1.0));
    let (y0, y1) = (y0.floor(), y1.ceil().max(y0.floor() + 1.0));
    let px = |h: f64| MARGIN + (h.log10() - x0) / (x1 - x0) * (WIDTH - 2.0 * MARGIN);
    let py = |e: f64| HEIGHT - MARGIN - (e.log10() - y0) / (y1 - y0) * (HEIGHT - 2.0 * MARGIN);

    let mut s = String::new();
    writeln!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" font-family=\"sans-serif\" font-size=\"12\">"
    )
    .unwrap();
    writeln!(s, "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>").unwrap();
    writeln!(
        s,
        "<text x=\"{}\" y=\"30\" text-anchor=\"middle\" font-size=\"15\">{}</text>",
        WIDTH / 2.0,
        escape(title)
    )
    .unwrap();
    let (l, r, t, b) = (MARGIN, WIDTH - MARGIN, MARGIN, HEIGHT - MARGIN);
    writeln!(s, "<rect x=\"{l}\" y=\"{t}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"black\"/>", r - l, b - t)
        .unwrap();
    for d in x0 as i32..=x1 as i32 {
        let x = px(10f64.powi(d));
        writeln!(s, "<line x1=\"{x:.1}\" y1=\"{t}\" x2=\"{x:.1}\" y2=\"{b}\" stroke=\"#ddd\"/>").unwrap();
        writeln!(s, "<text x=\"{x:.1}\" y=\"{}\" text-anchor=\"middle\">1e{d}</text>", b + 18.0).unwrap();
    }
    for d in y0 as i32..=y1 as i32 {
        let y = py(10f64.powi(d));
        writeln!(s, "<line x1=\"{l}\" y1=\"{y:.1}\" x2=\"{r}\" y2=\"{y:.1}\" stroke=\"#ddd\"/>").unwrap();
        writeln!(s, "<text x=\"{}\" y=\"{:.1}\" text-anchor=\"end\">1e{d}</text>", l - 6.0, y + 4.0).unwrap();
    }
    writeln!(s, "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">h</text>", WIDTH / 2.0, HEIGHT - 25.0).unwrap();

    for (i, ser) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let pts: Vec<(f64, f64)> =
            ser.h.iter().zip(&ser.error).map(|(&h, &e)| (h, e)).filter(|&(h, e)| h > 0.0 && e > 0.0).collect();
        if pts.is_empty() {
            continue;
        }
        let path: Vec<String> = pts.iter().map(|&(h, e)| format!("{:.1},{:.1}", px(h), py(e))).collect();
        writeln!(s, "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"2\"/>", path.join(" "))
            .unwrap();
        for &(h, e) in &pts {
            writeln!(s, "<circle cx=\"{:.1}\" cy=\"{:.1}\" r=\"3\" fill=\"{color}\"/>", px(h), py(e)).unwrap();
        }
        let (hs, es): (Vec<f64>, Vec<f64>) = pts.iter().copied().unzip();
        let label = match fit_rate(&hs, &es) {
            Ok(fit) => format!("{} (\u{3c4}={:.2})", ser.label, fit.tau),
            Err(_) => ser.label.clone(),
        };
        let ly = t + 18.0 + 18.0 * i as f64;
        writeln!(
            s,
            "<line x1=\"{}\" y1=\"{ly}\" x2=\"{}\" y2=\"{ly}\" stroke=\"{color}\" stroke-width=\"2\"/>",
            l + 10.0,
            l + 30.0
        )
        .unwrap();
        writeln!(s, "<text x=\"{}\" y=\"{}\">{}</text>", l + 36.0, ly + 4.0, escape(&label)).unwrap();
    }
    s.push_str("</svg>\n");
    Ok(s)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
