//! Minimal static SVG line plotting for diagnostics figures: axes, tick
//! labels, polylines, optional shaded band, legend. No interactivity.

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f",
];

pub struct Series {
    pub label: String,
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
}

impl Series {
    pub fn from_samples(label: impl Into<String>, ys: &[f64]) -> Series {
        Series {
            label: label.into(),
            xs: (0..ys.len()).map(|i| i as f64).collect(),
            ys: ys.to_vec(),
        }
    }
}

pub struct ChartOptions {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub width: f64,
    pub height: f64,
    pub log_y: bool,
}

impl Default for ChartOptions {
    fn default() -> Self {
        ChartOptions {
            title: String::new(),
            x_label: String::new(),
            y_label: String::new(),
            width: 760.0,
            height: 360.0,
            log_y: false,
        }
    }
}

/// An optional shaded region between two curves (e.g. percentile band).
pub struct Band {
    pub xs: Vec<f64>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

fn finite_range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for v in values {
        if v.is_finite() {
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    if !lo.is_finite() || !hi.is_finite() {
        (0.0, 1.0)
    } else if lo == hi {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

fn fmt_tick(v: f64) -> String {
    if v == 0.0 {
        "0".to_string()
    } else if v.abs() >= 1e4 || v.abs() < 1e-3 {
        format!("{v:.2e}")
    } else {
        format!("{v:.3}")
    }
}

/// Render one chart as a standalone SVG document.
pub fn line_chart(series: &[Series], band: Option<&Band>, opts: &ChartOptions) -> String {
    let (w, h) = (opts.width, opts.height);
    let margin_l = 64.0;
    let margin_r = 16.0;
    let margin_t = if opts.title.is_empty() { 14.0 } else { 32.0 };
    let margin_b = 44.0;
    let plot_w = w - margin_l - margin_r;
    let plot_h = h - margin_t - margin_b;

    let map_y = |v: f64| -> f64 {
        if opts.log_y {
            v.max(1e-300).log10()
        } else {
            v
        }
    };
    let all_y = series
        .iter()
        .flat_map(|s| s.ys.iter().copied())
        .chain(band.iter().flat_map(|b| b.lo.iter().chain(b.hi.iter()).copied()))
        .map(map_y);
    let (y0, y1) = finite_range(all_y);
    let all_x = series
        .iter()
        .flat_map(|s| s.xs.iter().copied())
        .chain(band.iter().flat_map(|b| b.xs.iter().copied()));
    let (x0, x1) = finite_range(all_x);

    let sx = |x: f64| margin_l + (x - x0) / (x1 - x0) * plot_w;
    let sy = |y: f64| margin_t + (1.0 - (map_y(y) - y0) / (y1 - y0)) * plot_h;

    let mut out = String::new();
    out.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w:.0}\" height=\"{h:.0}\" \
         viewBox=\"0 0 {w:.0} {h:.0}\" font-family=\"sans-serif\" font-size=\"11\">\n"
    ));
    out.push_str(&format!(
        "<rect x=\"0\" y=\"0\" width=\"{w:.0}\" height=\"{h:.0}\" fill=\"white\"/>\n"
    ));
    if !opts.title.is_empty() {
        out.push_str(&format!(
            "<text x=\"{:.1}\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">{}</text>\n",
            w / 2.0,
            escape(&opts.title)
        ));
    }

    // axes and ticks
    out.push_str(&format!(
        "<rect x=\"{margin_l:.1}\" y=\"{margin_t:.1}\" width=\"{plot_w:.1}\" height=\"{plot_h:.1}\" \
         fill=\"none\" stroke=\"#333\" stroke-width=\"1\"/>\n"
    ));
    let n_ticks = 5;
    for i in 0..=n_ticks {
        let f = i as f64 / n_ticks as f64;
        let xv = x0 + f * (x1 - x0);
        let px = margin_l + f * plot_w;
        out.push_str(&format!(
            "<line x1=\"{px:.1}\" y1=\"{:.1}\" x2=\"{px:.1}\" y2=\"{:.1}\" stroke=\"#999\" stroke-width=\"0.5\"/>\n",
            margin_t + plot_h,
            margin_t + plot_h + 4.0
        ));
        out.push_str(&format!(
            "<text x=\"{px:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>\n",
            margin_t + plot_h + 16.0,
            fmt_tick(xv)
        ));
        let yv = y0 + f * (y1 - y0);
        let py = margin_t + (1.0 - f) * plot_h;
        let label = if opts.log_y {
            format!("1e{yv:.1}")
        } else {
            fmt_tick(yv)
        };
        out.push_str(&format!(
            "<line x1=\"{:.1}\" y1=\"{py:.1}\" x2=\"{margin_l:.1}\" y2=\"{py:.1}\" stroke=\"#999\" stroke-width=\"0.5\"/>\n",
            margin_l - 4.0
        ));
        out.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{label}</text>\n",
            margin_l - 7.0,
            py + 3.5
        ));
    }
    if !opts.x_label.is_empty() {
        out.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>\n",
            margin_l + plot_w / 2.0,
            h - 8.0,
            escape(&opts.x_label)
        ));
    }
    if !opts.y_label.is_empty() {
        out.push_str(&format!(
            "<text x=\"14\" y=\"{:.1}\" text-anchor=\"middle\" transform=\"rotate(-90 14 {:.1})\">{}</text>\n",
            margin_t + plot_h / 2.0,
            margin_t + plot_h / 2.0,
            escape(&opts.y_label)
        ));
    }

    if let Some(band) = band {
        let mut pts = String::new();
        for (x, y) in band.xs.iter().zip(&band.hi) {
            if x.is_finite() && y.is_finite() {
                pts.push_str(&format!("{:.2},{:.2} ", sx(*x), sy(*y)));
            }
        }
        for (x, y) in band.xs.iter().rev().zip(band.lo.iter().rev()) {
            if x.is_finite() && y.is_finite() {
                pts.push_str(&format!("{:.2},{:.2} ", sx(*x), sy(*y)));
            }
        }
        out.push_str(&format!(
            "<polygon points=\"{}\" fill=\"#1f77b4\" opacity=\"0.15\" stroke=\"none\"/>\n",
            pts.trim_end()
        ));
    }

    for (si, s) in series.iter().enumerate() {
        let color = PALETTE[si % PALETTE.len()];
        let mut segments: Vec<String> = Vec::new();
        let mut current = String::new();
        for (x, y) in s.xs.iter().zip(&s.ys) {
            if x.is_finite() && y.is_finite() {
                current.push_str(&format!("{:.2},{:.2} ", sx(*x), sy(*y)));
            } else if !current.is_empty() {
                segments.push(std::mem::take(&mut current));
            }
        }
        if !current.is_empty() {
            segments.push(current);
        }
        for seg in segments {
            out.push_str(&format!(
                "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.2\"/>\n",
                seg.trim_end()
            ));
        }
        // legend swatch
        let ly = margin_t + 14.0 * si as f64 + 6.0;
        out.push_str(&format!(
            "<line x1=\"{:.1}\" y1=\"{ly:.1}\" x2=\"{:.1}\" y2=\"{ly:.1}\" stroke=\"{color}\" stroke-width=\"2\"/>\n",
            margin_l + plot_w - 130.0,
            margin_l + plot_w - 110.0
        ));
        out.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\">{}</text>\n",
            margin_l + plot_w - 104.0,
            ly + 3.5,
            escape(&s.label)
        ));
    }

    out.push_str("</svg>\n");
    out
}

/// Stack several standalone charts vertically into one document.
pub fn stack_charts(charts: &[String], width: f64) -> String {
    let mut heights = Vec::new();
    let mut total = 0.0;
    for c in charts {
        let h = c
            .split("height=\"")
            .nth(1)
            .and_then(|rest| rest.split('"').next())
            .and_then(|v| v.parse::<f64>().ok())
            .unwrap_or(360.0);
        heights.push(total);
        total += h;
    }
    let mut out = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width:.0}\" height=\"{total:.0}\" \
         viewBox=\"0 0 {width:.0} {total:.0}\">\n"
    );
    for (c, y) in charts.iter().zip(&heights) {
        out.push_str(&format!("<g transform=\"translate(0 {y:.0})\">\n"));
        // strip the outer <svg> wrapper, keep the inner drawing
        let inner = c
            .split_once('>')
            .map(|(_, rest)| rest)
            .unwrap_or("")
            .rsplit_once("</svg>")
            .map(|(body, _)| body)
            .unwrap_or("");
        out.push_str(inner);
        out.push_str("</g>\n");
    }
    out.push_str("</svg>\n");
    out
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
