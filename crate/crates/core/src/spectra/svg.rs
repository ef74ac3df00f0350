//! Minimal SVG line plots with optional ± bands.

use std::fmt::Write;

const W: f64 = 640.0;
const H: f64 = 400.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;
const COLORS: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub label: String,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    /// Half-width of a shaded band around `y`.
    pub band: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinePlot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub log_y: bool,
    pub series: Vec<Series>,
}

impl LinePlot {
    pub fn new(title: &str, x_label: &str, y_label: &str) -> Self {
        Self {
            title: title.into(),
            x_label: x_label.into(),
            y_label: y_label.into(),
            log_y: false,
            series: Vec::new(),
        }
    }

    pub fn log_y(mut self) -> Self {
        self.log_y = true;
        self
    }

    pub fn with_series(
        mut self,
        label: &str,
        x: Vec<f64>,
        y: Vec<f64>,
        band: Option<Vec<f64>>,
    ) -> Self {
        self.series.push(Series {
            label: label.into(),
            x,
            y,
            band,
        });
        self
    }

    fn ty(&self, y: f64) -> f64 {
        if self.log_y {
            y.max(1e-300).log10()
        } else {
            y
        }
    }

    fn bounds(&self) -> (f64, f64, f64, f64) {
        let mut xs = (f64::INFINITY, f64::NEG_INFINITY);
        let mut ys = (f64::INFINITY, f64::NEG_INFINITY);
        for s in &self.series {
            for (i, (&x, &y)) in s.x.iter().zip(&s.y).enumerate() {
                let b = s.band.as_ref().map_or(0.0, |b| b[i]);
                xs = (xs.0.min(x), xs.1.max(x));
                for v in [y - b, y + b] {
                    if v.is_finite() && (!self.log_y || v > 0.0) {
                        let t = self.ty(v);
                        ys = (ys.0.min(t), ys.1.max(t));
                    }
                }
            }
        }
        if !xs.0.is_finite() {
            xs = (0.0, 1.0);
        }
        if !ys.0.is_finite() {
            ys = (0.0, 1.0);
        }
        if xs.1 - xs.0 <= 0.0 {
            xs = (xs.0 - 0.5, xs.1 + 0.5);
        }
        if ys.1 - ys.0 <= 0.0 {
            ys = (ys.0 - 0.5, ys.1 + 0.5);
        }
        (xs.0, xs.1, ys.0, ys.1)
    }

    pub fn render(&self) -> String {
        let (x0, x1, y0, y1) = self.bounds();
        let pw = W - LEFT - RIGHT;
        let ph = H - TOP - BOTTOM;
        let px = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
        let py = |t: f64| TOP + ph - (t - y0) / (y1 - y0) * ph;
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
            LEFT + pw / 2.0,
            escape(&self.title)
        );
        let _ = writeln!(
            s,
            r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
        );
        for i in 0..=4 {
            let f = i as f64 / 4.0;
            let xv = x0 + f * (x1 - x0);
            let tv = y0 + f * (y1 - y0);
            let label = if self.log_y {
                format!("1e{tv:.1}")
            } else {
                format!("{tv:.3}")
            };
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{xv:.2}</text>"#,
                px(xv),
                TOP + ph + 18.0
            );
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{label}</text>"#,
                LEFT - 6.0,
                py(tv) + 4.0
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            LEFT + pw / 2.0,
            H - 12.0,
            escape(&self.x_label)
        );
        let _ = writeln!(
            s,
            r#"<text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">{}</text>"#,
            TOP + ph / 2.0,
            TOP + ph / 2.0,
            escape(&self.y_label)
        );
        for (k, ser) in self.series.iter().enumerate() {
            let color = COLORS[k % COLORS.len()];
            let pts: Vec<(f64, f64)> = ser
                .x
                .iter()
                .zip(&ser.y)
                .filter(|(_, &y)| y.is_finite() && (!self.log_y || y > 0.0))
                .map(|(&x, &y)| (px(x), py(self.ty(y))))
                .collect();
            if let Some(band) = &ser.band {
                let clamp = |v: f64| if self.log_y { v.max(1e-300) } else { v };
                let upper = ser
                    .x
                    .iter()
                    .zip(&ser.y)
                    .zip(band)
                    .map(|((&x, &y), &b)| (px(x), py(self.ty(y + b))));
                let lower: Vec<(f64, f64)> = ser
                    .x
                    .iter()
                    .zip(&ser.y)
                    .zip(band)
                    .map(|((&x, &y), &b)| (px(x), py(self.ty(clamp(y - b)))))
                    .collect();
                let poly: Vec<String> = upper
                    .chain(lower.into_iter().rev())
                    .map(|(a, b)| format!("{a:.1},{b:.1}"))
                    .collect();
                let _ = writeln!(
                    s,
                    r#"<polygon points="{}" fill="{color}" fill-opacity="0.2" stroke="none"/>"#,
                    poly.join(" ")
                );
            }
            let line: Vec<String> = pts.iter().map(|(a, b)| format!("{a:.1},{b:.1}")).collect();
            let _ = writeln!(
                s,
                r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
                line.join(" ")
            );
            let ly = TOP + 14.0 + 18.0 * k as f64;
            let _ = writeln!(
                s,
                r#"<line x1="{:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{color}" stroke-width="2"/>"#,
                W - RIGHT + 10.0,
                W - RIGHT + 30.0
            );
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="{:.1}">{}</text>"#,
                W - RIGHT + 36.0,
                ly + 4.0,
                escape(&ser.label)
            );
        }
        s.push_str("</svg>\n");
        s
    }
}

fn escape(t: &str) -> String {
    t.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}
