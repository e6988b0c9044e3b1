//! Static SVG charts built from the same rows written to CSV.

use std::fmt::Write as _;

const W: f64 = 640.0;
const H: f64 = 480.0;
const PAD: f64 = 56.0;

pub struct Axis {
    pub lo: f64,
    pub hi: f64,
    pub log: bool,
    pub label: String,
}

impl Axis {
    pub fn linear(lo: f64, hi: f64, label: &str) -> Self {
        Self {
            lo,
            hi,
            log: false,
            label: label.into(),
        }
    }

    pub fn log(lo: f64, hi: f64, label: &str) -> Self {
        Self {
            lo,
            hi,
            log: true,
            label: label.into(),
        }
    }

    fn frac(&self, v: f64) -> f64 {
        if self.log {
            (v.ln() - self.lo.ln()) / (self.hi.ln() - self.lo.ln())
        } else {
            (v - self.lo) / (self.hi - self.lo)
        }
    }

    fn ticks(&self) -> Vec<f64> {
        (0..=4)
            .map(|i| {
                let t = i as f64 / 4.0;
                if self.log {
                    (self.lo.ln() + t * (self.hi.ln() - self.lo.ln())).exp()
                } else {
                    self.lo + t * (self.hi - self.lo)
                }
            })
            .collect()
    }
}

pub struct Chart {
    x: Axis,
    y: Axis,
    body: String,
    title: String,
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

fn fmt_tick(v: f64) -> String {
    if v != 0.0 && (v.abs() >= 1e4 || v.abs() < 1e-2) {
        format!("{v:.2e}")
    } else {
        format!("{v:.2}")
    }
}

impl Chart {
    pub fn new(title: &str, x: Axis, y: Axis) -> Self {
        Self {
            x,
            y,
            body: String::new(),
            title: title.into(),
        }
    }

    fn px(&self, x: f64) -> f64 {
        PAD + self.x.frac(x) * (W - 2.0 * PAD)
    }

    fn py(&self, y: f64) -> f64 {
        H - PAD - self.y.frac(y) * (H - 2.0 * PAD)
    }

    pub fn points(&mut self, pts: &[(f64, f64)], color: &str, opacity: f64) {
        for &(x, y) in pts {
            if x.is_finite() && y.is_finite() {
                let _ = writeln!(
                    self.body,
                    r#"<circle cx="{:.2}" cy="{:.2}" r="1.6" fill="{color}" fill-opacity="{opacity:.3}"/>"#,
                    self.px(x),
                    self.py(y)
                );
            }
        }
    }

    pub fn line(&mut self, pts: &[(f64, f64)], color: &str, width: f64, opacity: f64) {
        let d: Vec<String> = pts
            .iter()
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|&(x, y)| format!("{:.2},{:.2}", self.px(x), self.py(y)))
            .collect();
        let _ = writeln!(
            self.body,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="{width}" stroke-opacity="{opacity:.3}"/>"#,
            d.join(" ")
        );
    }

    pub fn circle(&mut self, cx: f64, cy: f64, r: f64, color: &str) {
        let pts: Vec<(f64, f64)> = (0..=128)
            .map(|i| {
                let t = i as f64 / 128.0 * std::f64::consts::TAU;
                (cx + r * t.cos(), cy + r * t.sin())
            })
            .collect();
        self.line(&pts, color, 1.5, 1.0);
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">"#
        );
        let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
        let _ = writeln!(
            s,
            r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#,
            W / 2.0,
            esc(&self.title)
        );
        let _ = writeln!(
            s,
            r#"<rect x="{PAD}" y="{PAD}" width="{}" height="{}" fill="none" stroke="black"/>"#,
            W - 2.0 * PAD,
            H - 2.0 * PAD
        );
        for t in self.x.ticks() {
            let _ = writeln!(
                s,
                r#"<text x="{:.2}" y="{}" text-anchor="middle">{}</text>"#,
                self.px(t),
                H - PAD + 16.0,
                fmt_tick(t)
            );
        }
        for t in self.y.ticks() {
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{:.2}" text-anchor="end">{}</text>"#,
                PAD - 4.0,
                self.py(t) + 4.0,
                fmt_tick(t)
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
            W / 2.0,
            H - 12.0,
            esc(&self.x.label)
        );
        let _ = writeln!(
            s,
            r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">{}</text>"#,
            H / 2.0,
            H / 2.0,
            esc(&self.y.label)
        );
        s.push_str(&self.body);
        s.push_str("</svg>\n");
        s
    }
}

/// Vertical bars with category labels under each bar.
pub fn bar_chart(title: &str, labels: &[String], values: &[f64], y_label: &str) -> String {
    let n = labels.len().max(1) as f64;
    let ymax = values.iter().copied().fold(0.0f64, f64::max).max(1e-9);
    let mut chart = Chart::new(
        title,
        Axis::linear(0.0, n, ""),
        Axis::linear(0.0, ymax * 1.1, y_label),
    );
    let mut bars = String::new();
    for (i, (l, v)) in labels.iter().zip(values).enumerate() {
        let x0 = chart.px(i as f64 + 0.15);
        let x1 = chart.px(i as f64 + 0.85);
        let y = chart.py(*v);
        let _ = writeln!(
            bars,
            r##"<rect x="{x0:.2}" y="{y:.2}" width="{:.2}" height="{:.2}" fill="#4477aa"/>"##,
            x1 - x0,
            chart.py(0.0) - y
        );
        let cx = chart.px(i as f64 + 0.5);
        let ly = H - PAD + 28.0;
        let _ = writeln!(
            bars,
            r#"<text x="{cx:.2}" y="{ly}" text-anchor="end" font-size="8" transform="rotate(-60 {cx:.2} {ly})">{}</text>"#,
            esc(l)
        );
    }
    chart.body.push_str(&bars);
    chart.render()
}

/// Grid of cells shaded by value in `[0, 1]`; `rows × cols` row-major.
pub fn heatmap(
    title: &str,
    row_labels: &[String],
    col_labels: &[String],
    values: &[f64],
) -> String {
    let (nr, nc) = (row_labels.len(), col_labels.len());
    let left = 90.0;
    let top = 40.0;
    let cw = ((W - left - 20.0) / nc.max(1) as f64).min(40.0);
    let ch = ((H - top - 110.0) / nr.max(1) as f64).min(40.0);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="10">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#,
        W / 2.0,
        esc(title)
    );
    for (r, rl) in row_labels.iter().enumerate() {
        let y = top + r as f64 * ch;
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{:.2}" text-anchor="end">{}</text>"#,
            left - 4.0,
            y + ch / 2.0 + 3.0,
            esc(rl)
        );
        for c in 0..nc {
            let v = values[r * nc + c].clamp(0.0, 1.0);
            let shade = (255.0 * (1.0 - v)).round() as u8;
            let _ = writeln!(
                s,
                r#"<rect x="{:.2}" y="{y:.2}" width="{cw:.2}" height="{ch:.2}" fill="rgb({shade},{shade},255)" stroke="white"/>"#,
                left + c as f64 * cw
            );
        }
    }
    let ly = top + nr as f64 * ch + 8.0;
    for (c, cl) in col_labels.iter().enumerate() {
        let cx = left + (c as f64 + 0.5) * cw;
        let _ = writeln!(
            s,
            r#"<text x="{cx:.2}" y="{ly:.2}" text-anchor="end" transform="rotate(-60 {cx:.2} {ly:.2})">{}</text>"#,
            esc(cl)
        );
    }
    s.push_str("</svg>\n");
    s
}
