//! Self-contained SVG trajectory plots: one `<path>` per trajectory, goal
//! markers with the success radius, a start marker and a 1 m grid.

use std::fmt::Write;

const PX_PER_M: f64 = 50.0;
const MARGIN_M: f64 = 1.0;
const COLORS: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf", "#8c564b", "#e377c2",
];

pub struct Series<'a> {
    pub label: String,
    pub points: &'a [[f64; 2]],
}

pub fn trajectory_plot(title: &str, series: &[Series], goals: &[[f64; 2]], tolerance: f64, start: [f64; 2]) -> String {
    let all = series
        .iter()
        .flat_map(|s| s.points.iter())
        .chain(goals)
        .chain(std::iter::once(&start));
    let (mut x0, mut y0, mut x1, mut y1) = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for p in all {
        x0 = x0.min(p[0]);
        y0 = y0.min(p[1]);
        x1 = x1.max(p[0]);
        y1 = y1.max(p[1]);
    }
    let x0 = (x0 - MARGIN_M).floor();
    let y0 = (y0 - MARGIN_M).floor();
    let x1 = (x1 + MARGIN_M).ceil();
    let y1 = (y1 + MARGIN_M).ceil();
    let width = (x1 - x0) * PX_PER_M;
    let height = (y1 - y0) * PX_PER_M;
    let px = |x: f64| (x - x0) * PX_PER_M;
    let py = |y: f64| (y1 - y) * PX_PER_M;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{:.0}" viewBox="0 0 {width:.0} {:.0}">"#,
        height + 30.0,
        height + 30.0
    );
    let _ = writeln!(s, "<title>{}</title>", escape(title));
    let _ = writeln!(s, r#"<rect x="0" y="0" width="{width:.0}" height="{height:.0}" fill="white"/>"#);
    let _ = writeln!(s, r##"<g stroke="#dddddd" stroke-width="1">"##);
    let mut gx = x0;
    while gx <= x1 + 1e-9 {
        let _ = writeln!(s, r#"<line x1="{:.1}" y1="0" x2="{:.1}" y2="{height:.1}"/>"#, px(gx), px(gx));
        gx += 1.0;
    }
    let mut gy = y0;
    while gy <= y1 + 1e-9 {
        let _ = writeln!(s, r#"<line x1="0" y1="{:.1}" x2="{width:.1}" y2="{:.1}"/>"#, py(gy), py(gy));
        gy += 1.0;
    }
    s.push_str("</g>\n");

    for (i, g) in goals.iter().enumerate() {
        let _ = writeln!(
            s,
            r##"<circle class="goal" cx="{:.2}" cy="{:.2}" r="{:.2}" fill="none" stroke="#444444" stroke-dasharray="4 3"/>"##,
            px(g[0]),
            py(g[1]),
            tolerance * PX_PER_M
        );
        let _ = writeln!(
            s,
            r##"<text x="{:.2}" y="{:.2}" font-size="11" fill="#444444">G{} ({}, {})</text>"##,
            px(g[0]) + 6.0,
            py(g[1]) - 6.0,
            i + 1,
            g[0],
            g[1]
        );
    }
    let _ = writeln!(
        s,
        r##"<rect class="start" x="{:.2}" y="{:.2}" width="8" height="8" fill="#000000"/>"##,
        px(start[0]) - 4.0,
        py(start[1]) - 4.0
    );

    for (i, series) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let mut d = String::new();
        for (k, p) in series.points.iter().enumerate() {
            let _ = write!(d, "{}{:.2},{:.2} ", if k == 0 { "M" } else { "L" }, px(p[0]), py(p[1]));
        }
        let _ = writeln!(
            s,
            r#"<path class="trajectory" d="{}" fill="none" stroke="{color}" stroke-width="1.5"><title>{}</title></path>"#,
            d.trim_end(),
            escape(&series.label)
        );
    }
    let _ = writeln!(
        s,
        r##"<text x="6" y="{:.0}" font-size="13" fill="#000000">{} (grid 1 m)</text>"##,
        height + 20.0,
        escape(title)
    );
    s.push_str("</svg>\n");
    s
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
