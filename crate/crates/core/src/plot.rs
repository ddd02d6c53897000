//! Minimal SVG emission for reports: histograms and line plots. No
//! external renderer; the output is a self-contained SVG document string.

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN_L: f64 = 56.0;
const MARGIN_R: f64 = 16.0;
const MARGIN_T: f64 = 36.0;
const MARGIN_B: f64 = 48.0;

const PALETTE: [&str; 4] = ["#2a6fb0", "#c25540", "#3c8f5a", "#8861a8"];

fn header(title: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
         viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n\
         <rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"22\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"15\">{}</text>\n",
        WIDTH / 2.0,
        escape(title)
    )
}

fn axes(x_label: &str, y_label: &str) -> String {
    let x0 = MARGIN_L;
    let y0 = HEIGHT - MARGIN_B;
    let x1 = WIDTH - MARGIN_R;
    let y1 = MARGIN_T;
    format!(
        "<line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x1}\" y2=\"{y0}\" stroke=\"black\"/>\n\
         <line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x0}\" y2=\"{y1}\" stroke=\"black\"/>\n\
         <text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">{}</text>\n\
         <text x=\"14\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\" \
         transform=\"rotate(-90 14 {})\">{}</text>\n",
        (x0 + x1) / 2.0,
        HEIGHT - 12.0,
        escape(x_label),
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0,
        escape(y_label)
    )
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn fmt_tick(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else if v.abs() >= 1000.0 || v.abs() < 0.01 {
        format!("{v:.1e}")
    } else {
        format!("{v:.3}").trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

/// Bar chart of counts per fixed-width bin. Trailing empty bins are
/// trimmed; `bin_width` only scales the x-axis tick labels.
pub fn svg_histogram(title: &str, x_label: &str, bins: &[u64], bin_width: f64) -> String {
    let mut out = header(title);
    out.push_str(&axes(x_label, "count"));
    let last = bins.iter().rposition(|&c| c > 0).map_or(0, |i| i + 1);
    let shown = &bins[..last.max(1)];
    let max = shown.iter().copied().max().unwrap_or(0).max(1) as f64;
    let plot_w = WIDTH - MARGIN_L - MARGIN_R;
    let plot_h = HEIGHT - MARGIN_T - MARGIN_B;
    let bar_w = plot_w / shown.len() as f64;
    for (i, &count) in shown.iter().enumerate() {
        if count == 0 {
            continue;
        }
        let h = plot_h * count as f64 / max;
        let x = MARGIN_L + i as f64 * bar_w;
        let y = HEIGHT - MARGIN_B - h;
        out.push_str(&format!(
            "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"{}\"/>\n",
            x,
            y,
            (bar_w - 1.0).max(0.5),
            h,
            PALETTE[0]
        ));
    }
    // x ticks at ~8 positions, y ticks at 4.
    let step = (shown.len() / 8).max(1);
    for i in (0..=shown.len()).step_by(step) {
        let x = MARGIN_L + i as f64 * bar_w;
        out.push_str(&format!(
            "<text x=\"{x:.1}\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"10\">{}</text>\n",
            HEIGHT - MARGIN_B + 16.0,
            fmt_tick(i as f64 * bin_width)
        ));
    }
    for k in 0..=4 {
        let v = max * k as f64 / 4.0;
        let y = HEIGHT - MARGIN_B - plot_h * k as f64 / 4.0;
        out.push_str(&format!(
            "<text x=\"{}\" y=\"{y:.1}\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\">{}</text>\n",
            MARGIN_L - 6.0,
            fmt_tick(v)
        ));
    }
    out.push_str("</svg>\n");
    out
}

#[derive(Debug, Clone)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

/// Multi-series line plot with auto-ranged axes and a small legend.
pub fn svg_lines(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let mut out = header(title);
    out.push_str(&axes(x_label, y_label));
    let points = series.iter().flat_map(|s| s.points.iter());
    let (mut x_min, mut x_max) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut y_min, mut y_max) = (f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in points {
        x_min = x_min.min(x);
        x_max = x_max.max(x);
        y_min = y_min.min(y);
        y_max = y_max.max(y);
    }
    if !x_min.is_finite() {
        out.push_str("</svg>\n");
        return out;
    }
    if x_max == x_min {
        x_max = x_min + 1.0;
    }
    if y_max == y_min {
        y_max = y_min + 1.0;
    }
    let plot_w = WIDTH - MARGIN_L - MARGIN_R;
    let plot_h = HEIGHT - MARGIN_T - MARGIN_B;
    let px = |x: f64| MARGIN_L + plot_w * (x - x_min) / (x_max - x_min);
    let py = |y: f64| HEIGHT - MARGIN_B - plot_h * (y - y_min) / (y_max - y_min);

    for (si, s) in series.iter().enumerate() {
        let color = PALETTE[si % PALETTE.len()];
        let coords: Vec<String> = s.points.iter().map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y))).collect();
        out.push_str(&format!(
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>\n",
            coords.join(" ")
        ));
        out.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" fill=\"{color}\">{}</text>\n",
            WIDTH - MARGIN_R - 120.0,
            MARGIN_T + 14.0 * (si + 1) as f64,
            escape(&s.name)
        ));
    }
    for k in 0..=4 {
        let xv = x_min + (x_max - x_min) * k as f64 / 4.0;
        let yv = y_min + (y_max - y_min) * k as f64 / 4.0;
        out.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"10\">{}</text>\n",
            px(xv),
            HEIGHT - MARGIN_B + 16.0,
            fmt_tick(xv)
        ));
        out.push_str(&format!(
            "<text x=\"{}\" y=\"{:.1}\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\">{}</text>\n",
            MARGIN_L - 6.0,
            py(yv),
            fmt_tick(yv)
        ));
    }
    out.push_str("</svg>\n");
    out
}
