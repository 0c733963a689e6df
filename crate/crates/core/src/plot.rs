//! Minimal SVG emitters for the experiment reports: line charts with
//! optional log axes, the ball layout on the unit torus, and the trap
//! geometry sketch. No plotting dependency; records must stay viewable
//! decades from now with nothing but a browser.

use crate::blowup::BallSystem;
use crate::dynamics::torus_displacement;
use crate::error::Error;
use crate::trap::TrapCertificate;
use crate::Result;

const W: f64 = 640.0;
const H: f64 = 420.0;
const MARGIN: f64 = 56.0;

/// One named series of a line chart.
#[derive(Debug, Clone)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

/// A line chart over one or more series, with optional log axes.
#[derive(Debug, Clone)]
pub struct LinePlot {
    title: String,
    x_label: String,
    y_label: String,
    log_x: bool,
    log_y: bool,
    series: Vec<Series>,
}

impl LinePlot {
    pub fn new(title: &str, x_label: &str, y_label: &str) -> Self {
        Self {
            title: title.into(),
            x_label: x_label.into(),
            y_label: y_label.into(),
            log_x: false,
            log_y: false,
            series: Vec::new(),
        }
    }

    pub fn log_x(mut self) -> Self {
        self.log_x = true;
        self
    }

    pub fn log_y(mut self) -> Self {
        self.log_y = true;
        self
    }

    pub fn series(mut self, label: &str, points: Vec<(f64, f64)>) -> Self {
        self.series.push(Series { label: label.into(), points });
        self
    }

    /// Renders the chart. Log axes drop nonpositive points rather than
    /// failing, since distortion series legitimately start at zero.
    pub fn render(&self) -> Result<String> {
        let mut pts: Vec<Vec<(f64, f64)>> = Vec::new();
        for s in &self.series {
            let transformed: Vec<(f64, f64)> = s
                .points
                .iter()
                .filter(|(x, y)| {
                    (!self.log_x || *x > 0.0) && (!self.log_y || *y > 0.0)
                })
                .map(|&(x, y)| {
                    (
                        if self.log_x { x.log10() } else { x },
                        if self.log_y { y.log10() } else { y },
                    )
                })
                .collect();
            pts.push(transformed);
        }
        let all: Vec<(f64, f64)> = pts.iter().flatten().copied().collect();
        if all.is_empty() {
            return Err(Error::InvalidParameter("nothing to plot".into()));
        }
        if all.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
            return Err(Error::InvalidParameter("non-finite plot data".into()));
        }
        let (mut x0, mut x1) = min_max(all.iter().map(|p| p.0));
        let (mut y0, mut y1) = min_max(all.iter().map(|p| p.1));
        if x1 - x0 < 1e-12 {
            x0 -= 0.5;
            x1 += 0.5;
        }
        if y1 - y0 < 1e-12 {
            y0 -= 0.5;
            y1 += 0.5;
        }
        let px = |x: f64| MARGIN + (x - x0) / (x1 - x0) * (W - 2.0 * MARGIN);
        let py = |y: f64| H - MARGIN - (y - y0) / (y1 - y0) * (H - 2.0 * MARGIN);

        let mut svg = svg_open();
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">{}</text>\n",
            W / 2.0,
            esc(&self.title)
        ));
        // axes
        svg.push_str(&format!(
            "<line x1=\"{m:.1}\" y1=\"{b:.1}\" x2=\"{r:.1}\" y2=\"{b:.1}\" stroke=\"#333\"/>\n<line x1=\"{m:.1}\" y1=\"{t:.1}\" x2=\"{m:.1}\" y2=\"{b:.1}\" stroke=\"#333\"/>\n",
            m = MARGIN,
            b = H - MARGIN,
            r = W - MARGIN,
            t = MARGIN,
        ));
        for i in 0..=4 {
            let fx = x0 + (x1 - x0) * i as f64 / 4.0;
            let fy = y0 + (y1 - y0) * i as f64 / 4.0;
            svg.push_str(&format!(
                "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\" font-size=\"11\">{}</text>\n",
                px(fx),
                H - MARGIN + 18.0,
                tick_label(fx, self.log_x)
            ));
            svg.push_str(&format!(
                "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\" font-size=\"11\">{}</text>\n",
                MARGIN - 6.0,
                py(fy) + 4.0,
                tick_label(fy, self.log_y)
            ));
        }
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\" font-size=\"12\">{}</text>\n",
            W / 2.0,
            H - 12.0,
            esc(&self.x_label)
        ));
        svg.push_str(&format!(
            "<text x=\"16\" y=\"{:.1}\" text-anchor=\"middle\" font-size=\"12\" transform=\"rotate(-90 16 {:.1})\">{}</text>\n",
            H / 2.0,
            H / 2.0,
            esc(&self.y_label)
        ));

        const COLORS: [&str; 4] = ["#1965b0", "#dc050c", "#4eb265", "#b66dff"];
        for (i, (s, t)) in self.series.iter().zip(&pts).enumerate() {
            if t.is_empty() {
                continue;
            }
            let color = COLORS[i % COLORS.len()];
            let path: Vec<String> =
                t.iter().map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y))).collect();
            svg.push_str(&format!(
                "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>\n",
                path.join(" ")
            ));
            svg.push_str(&format!(
                "<text x=\"{:.1}\" y=\"{:.1}\" font-size=\"12\" fill=\"{color}\">{}</text>\n",
                W - MARGIN + 4.0,
                MARGIN + 16.0 * i as f64,
                esc(&s.label)
            ));
        }
        svg.push_str("</svg>\n");
        Ok(svg)
    }
}

/// The ball system drawn on the unit square (first two coordinates).
/// The seed ball is highlighted; with thousands of balls the picture stays
/// legible because radii decay.
pub fn ball_layout_svg(system: &BallSystem) -> Result<String> {
    if system.dim() < 2 {
        return Err(Error::InvalidParameter("layout plots need dimension >= 2".into()));
    }
    let side = H - 2.0 * MARGIN;
    let scale = |v: f64| MARGIN + v * side;
    let mut svg = svg_open();
    svg.push_str(&format!(
        "<rect x=\"{m:.1}\" y=\"{m:.1}\" width=\"{s:.1}\" height=\"{s:.1}\" fill=\"#fcfcfc\" stroke=\"#333\"/>\n",
        m = MARGIN,
        s = side,
    ));
    for ball in system.balls() {
        let c = ball.center.coords();
        let highlight = ball.index == 0;
        svg.push_str(&format!(
            "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"{:.2}\" fill=\"{}\" fill-opacity=\"0.35\" stroke=\"{}\" stroke-width=\"0.4\"/>\n",
            scale(c[0]),
            scale(1.0 - c[1]),
            ball.radius * side,
            if highlight { "#dc050c" } else { "#1965b0" },
            if highlight { "#dc050c" } else { "#1965b0" },
        ));
    }
    svg.push_str(&format!(
        "<text x=\"{:.1}\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">ball system, window {}</text>\n",
        W / 2.0,
        system.window()
    ));
    svg.push_str("</svg>\n");
    Ok(svg)
}

/// The trap sketch: start ball, its enlargement, the returned ball, and the
/// located fixed point, in lift coordinates around the seed center.
pub fn trap_geometry_svg(system: &BallSystem, cert: &TrapCertificate) -> Result<String> {
    if system.dim() != 2 {
        return Err(Error::InvalidParameter("trap sketches are drawn in the plane".into()));
    }
    let c0 = system.center_lift(0);
    let cn_torus = system
        .center(cert.trap_time)
        .ok_or(Error::NotInSystem)?;
    let c0_torus = system.center(0).expect("seed ball exists");
    let hop = torus_displacement(c0_torus, cn_torus);
    let cn = [c0[0] + hop[0], c0[1] + hop[1]];

    let reach = cert.lambda * cert.alpha0 * 1.25;
    let side = H - 2.0 * MARGIN;
    let px = |x: f64| MARGIN + ((x - c0[0]) / (2.0 * reach) + 0.5) * side;
    let py = |y: f64| MARGIN + (0.5 - (y - c0[1]) / (2.0 * reach)) * side;
    let pr = |r: f64| r / (2.0 * reach) * side;

    let mut svg = svg_open();
    let mut ring = |cx: f64, cy: f64, r: f64, color: &str, label: &str, dy: f64| {
        svg.push_str(&format!(
            "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"{:.2}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>\n",
            px(cx),
            py(cy),
            pr(r),
        ));
        svg.push_str(&format!(
            "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"12\" fill=\"{color}\">{}</text>\n",
            px(cx) + 4.0,
            py(cy + r) + dy,
            esc(label),
        ));
    };
    ring(c0[0], c0[1], cert.lambda * cert.alpha0, "#333333", "enlarged seed ball", -6.0);
    ring(c0[0], c0[1], cert.alpha0, "#1965b0", "seed ball", -6.0);
    ring(cn[0], cn[1], cert.lambda_prime * cert.alpha_n, "#4eb265", "returned image bound", 14.0);
    svg.push_str(&format!(
        "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"#dc050c\"/><text x=\"{:.2}\" y=\"{:.2}\" font-size=\"12\" fill=\"#dc050c\">fixed point</text>\n",
        px(cert.fixed_point[0]),
        py(cert.fixed_point[1]),
        px(cert.fixed_point[0]) + 5.0,
        py(cert.fixed_point[1]) - 5.0,
    ));
    svg.push_str(&format!(
        "<text x=\"{:.1}\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">trap at return time {}</text>\n",
        W / 2.0,
        cert.trap_time
    ));
    svg.push_str("</svg>\n");
    Ok(svg)
}

fn svg_open() -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {W} {H}\" width=\"{W}\" height=\"{H}\" font-family=\"sans-serif\">\n<rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>\n"
    )
}

fn min_max(values: impl Iterator<Item = f64>) -> (f64, f64) {
    values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

fn tick_label(value: f64, log: bool) -> String {
    if log {
        format!("1e{value:.1}")
    } else if value == 0.0 || (value.abs() >= 0.01 && value.abs() < 1e4) {
        format!("{value:.3}")
    } else {
        format!("{value:.2e}")
    }
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
