//! Static bar charts as SVG text. Output depends only on the input values,
//! so reruns produce identical files.

use std::fmt::Write;

const PALETTE: [&str; 6] = ["#4e79a7", "#f28e2b", "#59a14f", "#e15759", "#76b7b2", "#edc948"];
const PLOT_HEIGHT: f64 = 260.0;
const LEFT: f64 = 70.0;
const TOP: f64 = 50.0;
const BOTTOM: f64 = 80.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BarChart {
    pub title: String,
    pub y_label: String,
    pub categories: Vec<String>,
    pub series: Vec<Series>,
    /// Stack the series on one bar per category instead of side by side.
    pub stacked: bool,
    /// Fixed top of the value axis; derived from the data when unset.
    pub y_max: Option<f64>,
    /// Decimals of the value labels printed on the bars.
    pub decimals: usize,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// A tick step of 1, 2 or 5 times a power of ten giving at most 8 ticks.
fn tick_step(max: f64) -> f64 {
    let rough = max / 8.0;
    let mag = 10f64.powf(rough.log10().floor());
    [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| max / s <= 8.0)
        .unwrap_or(10.0 * mag)
}

fn fmt_num(v: f64, decimals: usize) -> String {
    format!("{v:.decimals$}")
}

impl BarChart {
    fn top_value(&self) -> f64 {
        if let Some(m) = self.y_max {
            return m;
        }
        let n = self.categories.len();
        let peak = (0..n)
            .map(|i| {
                let vals = self.series.iter().map(|s| s.values.get(i).copied().unwrap_or(0.0));
                if self.stacked {
                    vals.sum()
                } else {
                    vals.fold(0.0, f64::max)
                }
            })
            .fold(0.0, f64::max);
        if peak <= 0.0 {
            return 1.0;
        }
        let step = tick_step(peak);
        (peak / step).ceil() * step
    }

    pub fn render(&self) -> String {
        let n = self.categories.len().max(1);
        let lanes = if self.stacked { 1 } else { self.series.len().max(1) };
        let bar_w = 22.0;
        let group_w = bar_w * lanes as f64 + 24.0;
        let plot_w = group_w * n as f64;
        let legend_w = 150.0;
        let width = LEFT + plot_w + legend_w;
        let height = TOP + PLOT_HEIGHT + BOTTOM;
        let top = self.top_value();
        let y = |v: f64| TOP + PLOT_HEIGHT - (v / top).clamp(0.0, 1.0) * PLOT_HEIGHT;

        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}" font-family="sans-serif" font-size="11">"#
        );
        let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="24" font-size="14" text-anchor="middle">{}</text>"#,
            LEFT + plot_w / 2.0,
            escape(&self.title)
        );

        // value axis with grid lines
        let step = tick_step(top);
        let mut tick = 0.0;
        while tick <= top + step * 1e-9 {
            let ty = y(tick);
            let _ = writeln!(
                s,
                r##"<line x1="{LEFT:.1}" y1="{ty:.1}" x2="{:.1}" y2="{ty:.1}" stroke="#dddddd"/>"##,
                LEFT + plot_w
            );
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
                LEFT - 6.0,
                ty + 4.0,
                fmt_num(tick, if step < 1.0 { 2 } else { 0 })
            );
            tick += step;
        }
        let _ = writeln!(
            s,
            r#"<text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">{}</text>"#,
            TOP + PLOT_HEIGHT / 2.0,
            TOP + PLOT_HEIGHT / 2.0,
            escape(&self.y_label)
        );
        let _ = writeln!(
            s,
            r#"<line x1="{LEFT:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="black"/>"#,
            TOP + PLOT_HEIGHT,
            LEFT + plot_w,
            TOP + PLOT_HEIGHT
        );

        for (i, cat) in self.categories.iter().enumerate() {
            let gx = LEFT + group_w * i as f64 + 12.0;
            let mut base = 0.0;
            for (k, series) in self.series.iter().enumerate() {
                let v = series.values.get(i).copied().unwrap_or(0.0);
                let x = if self.stacked { gx } else { gx + bar_w * k as f64 };
                let (lo, hi) = if self.stacked { (base, base + v) } else { (0.0, v) };
                let (y_hi, y_lo) = (y(hi), y(lo));
                let _ = writeln!(
                    s,
                    r#"<rect x="{x:.1}" y="{y_hi:.1}" width="{bar_w:.1}" height="{:.1}" fill="{}"><title>{}: {}</title></rect>"#,
                    (y_lo - y_hi).max(0.0),
                    PALETTE[k % PALETTE.len()],
                    escape(&series.name),
                    fmt_num(v, self.decimals)
                );
                if !self.stacked {
                    let _ = writeln!(
                        s,
                        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-size="9">{}</text>"#,
                        x + bar_w / 2.0,
                        y_hi - 3.0,
                        fmt_num(v, self.decimals)
                    );
                }
                base = hi;
            }
            if self.stacked {
                let _ = writeln!(
                    s,
                    r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-size="9">{}</text>"#,
                    gx + bar_w / 2.0,
                    y(base) - 3.0,
                    fmt_num(base, self.decimals)
                );
            }
            let lx = gx + if self.stacked { bar_w } else { bar_w * lanes as f64 } / 2.0;
            let ly = TOP + PLOT_HEIGHT + 14.0;
            let _ = writeln!(
                s,
                r#"<text x="{lx:.1}" y="{ly:.1}" text-anchor="end" transform="rotate(-35 {lx:.1} {ly:.1})">{}</text>"#,
                escape(cat)
            );
        }

        for (k, series) in self.series.iter().enumerate() {
            let lx = LEFT + plot_w + 16.0;
            let ly = TOP + 16.0 * k as f64;
            let _ = writeln!(
                s,
                r#"<rect x="{lx:.1}" y="{ly:.1}" width="10" height="10" fill="{}"/>"#,
                PALETTE[k % PALETTE.len()]
            );
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="{:.1}">{}</text>"#,
                lx + 14.0,
                ly + 9.0,
                escape(&series.name)
            );
        }
        s.push_str("</svg>\n");
        s
    }
}
