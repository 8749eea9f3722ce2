//! Minimal SVG line charts for the class-ratio sweep and the annual area
//! series.

use std::fmt::Write;

use crate::chronology::AreaComposition;
use crate::evaluation::BetaSweepResult;

const W: f64 = 640.0;
const H: f64 = 400.0;
const MARGIN: f64 = 56.0;
const COLORS: [&str; 3] = ["#1f77b4", "#d62728", "#2ca02c"];

pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

struct Axes {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Axes {
    fn fit(series: &[Series]) -> Axes {
        let pts = series.iter().flat_map(|s| s.points.iter());
        let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for &(x, y) in pts {
            x0 = x0.min(x);
            x1 = x1.max(x);
            y0 = y0.min(y);
            y1 = y1.max(y);
        }
        if !x0.is_finite() {
            (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
        }
        if x1 <= x0 {
            x1 = x0 + 1.0;
        }
        if y1 <= y0 {
            y1 = y0 + 1.0;
        }
        let pad = 0.05 * (y1 - y0);
        Axes {
            x0,
            x1,
            y0: y0 - pad,
            y1: y1 + pad,
        }
    }

    fn px(&self, x: f64) -> f64 {
        MARGIN + (x - self.x0) / (self.x1 - self.x0) * (W - 2.0 * MARGIN)
    }

    fn py(&self, y: f64) -> f64 {
        H - MARGIN - (y - self.y0) / (self.y1 - self.y0) * (H - 2.0 * MARGIN)
    }
}

/// Renders the series with axes, tick labels and a legend. `marker` draws a
/// labelled vertical line at the given x.
pub fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[Series], marker: Option<(f64, &str)>) -> String {
    let ax = Axes::fit(series);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="24" text-anchor="middle" font-size="14">{}</text>"#, W / 2.0, esc(title));
    let (l, r, t, b) = (MARGIN, W - MARGIN, MARGIN, H - MARGIN);
    let _ = writeln!(s, r#"<path d="M{l},{t} L{l},{b} L{r},{b}" fill="none" stroke="black"/>"#);
    for i in 0..=4 {
        let fx = ax.x0 + (ax.x1 - ax.x0) * i as f64 / 4.0;
        let fy = ax.y0 + (ax.y1 - ax.y0) * i as f64 / 4.0;
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            ax.px(fx),
            b + 16.0,
            tick(fx)
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
            l - 6.0,
            ax.py(fy) + 4.0,
            tick(fy)
        );
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, W / 2.0, H - 12.0, esc(x_label));
    let _ = writeln!(
        s,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
        H / 2.0,
        H / 2.0,
        esc(y_label)
    );
    for (i, ser) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let d: Vec<String> = ser
            .points
            .iter()
            .enumerate()
            .map(|(j, &(x, y))| format!("{}{:.1},{:.1}", if j == 0 { "M" } else { "L" }, ax.px(x), ax.py(y)))
            .collect();
        let _ = writeln!(s, r#"<path d="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#, d.join(" "));
        let ly = t + 14.0 * i as f64;
        let _ = writeln!(s, r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#, r - 90.0, r - 70.0);
        let _ = writeln!(s, r#"<text x="{}" y="{}">{}</text>"#, r - 64.0, ly + 4.0, esc(&ser.name));
    }
    if let Some((x, label)) = marker {
        let mx = ax.px(x);
        let _ = writeln!(s, r#"<line x1="{mx:.1}" y1="{t}" x2="{mx:.1}" y2="{b}" stroke="gray" stroke-dasharray="4 3"/>"#);
        let _ = writeln!(s, r#"<text x="{:.1}" y="{}" fill="gray">{}</text>"#, mx + 4.0, t + 12.0, esc(label));
    }
    s.push_str("</svg>\n");
    s
}

fn tick(v: f64) -> String {
    if v.abs() >= 100.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.2}")
    }
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Mean UA and PA against the class ratio, with the selected ratio marked.
pub fn sweep_chart(sweep: &BetaSweepResult, beta_n: f64) -> String {
    let collect = |f: fn(&crate::evaluation::BetaPoint) -> Option<f64>| -> Vec<(f64, f64)> {
        sweep.points.iter().filter_map(|p| f(p).map(|v| (p.beta, v))).collect()
    };
    let series = [
        Series {
            name: "UA".into(),
            points: collect(|p| p.ua.map(|m| m.mean)),
        },
        Series {
            name: "PA".into(),
            points: collect(|p| p.pa.map(|m| m.mean)),
        },
    ];
    line_chart(
        &format!("{}: accuracy vs class ratio", sweep.variant),
        "beta (non-landslide : landslide)",
        "accuracy",
        &series,
        Some((beta_n, &format!("beta = {beta_n:.1}"))),
    )
}

/// Old, new and revegetated landslide area per year.
pub fn area_chart(area: &AreaComposition) -> String {
    let pick = |f: fn(&crate::chronology::AreaRow) -> Option<f64>| -> Vec<(f64, f64)> {
        area.rows.iter().filter_map(|r| f(r).map(|v| (r.year as f64, v))).collect()
    };
    let series = [
        Series {
            name: "old".into(),
            points: pick(|r| r.old_km2),
        },
        Series {
            name: "new".into(),
            points: pick(|r| r.new_km2),
        },
        Series {
            name: "revegetated".into(),
            points: pick(|r| r.revegetated_km2),
        },
    ];
    line_chart("Landslide area composition", "year", "area (km2)", &series, None)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chart_has_one_path_per_series_and_marker() {
        let series = vec![
            Series {
                name: "a".into(),
                points: vec![(1.0, 0.2), (2.0, 0.5)],
            },
            Series {
                name: "b<c".into(),
                points: vec![(1.0, 0.6), (2.0, 0.3)],
            },
        ];
        let svg = line_chart("t", "x", "y", &series, Some((1.5, "m")));
        assert!(svg.starts_with("<svg"));
        assert!(svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<path d=\"M").count(), 3);
        assert!(svg.contains("b&lt;c"));
        assert!(svg.contains("stroke-dasharray"));
    }

    #[test]
    fn empty_series_still_renders() {
        let svg = line_chart("t", "x", "y", &[], None);
        assert!(svg.contains("</svg>"));
        assert!(!svg.contains("NaN"));
    }
}
