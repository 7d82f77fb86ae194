//! Training curves as CSV and a dependency-free SVG chart.

use std::fmt::Write as _;

use leaveout::trainer::IterationMetrics;

pub struct Series {
    pub name: String,
    pub rows: Vec<IterationMetrics>,
}

const COLORS: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

/// One row per training iteration; the iteration-0 baseline evaluation has
/// no return and is left out.
pub fn csv(series: &[Series]) -> String {
    let mut out = String::from("run,iteration,mean_return,dev_tgc,dev_sgc\n");
    for s in series {
        for r in s.rows.iter().filter(|r| r.iteration > 0) {
            let opt = |v: Option<f64>| v.map(|x| format!("{x}")).unwrap_or_default();
            let _ = writeln!(out, "{},{},{},{},{}", s.name, r.iteration, r.mean_return, opt(r.dev_tgc), opt(r.dev_sgc));
        }
    }
    out
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Two stacked panels (mean return, dev TGC) sharing the iteration axis.
pub fn svg(series: &[Series]) -> String {
    const W: f64 = 720.0;
    const PANEL: f64 = 220.0;
    const LEFT: f64 = 60.0;
    const RIGHT: f64 = 180.0;
    const TOP: f64 = 30.0;
    const GAP: f64 = 50.0;
    let height = TOP + 2.0 * PANEL + GAP + 40.0;
    let max_iter = series.iter().flat_map(|s| s.rows.iter().map(|r| r.iteration)).max().unwrap_or(1).max(1) as f64;
    let plot_w = W - LEFT - RIGHT;
    let x = |i: usize| LEFT + plot_w * i as f64 / max_iter;

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{height}" viewBox="0 0 {W} {height}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let panels: [(&str, fn(&IterationMetrics) -> Option<f64>, bool); 2] = [
        ("mean return", |r| Some(r.mean_return), true),
        ("dev TGC", |r| r.dev_tgc, false),
    ];
    for (p, (title, get, skip_zero)) in panels.iter().enumerate() {
        let y0 = TOP + p as f64 * (PANEL + GAP);
        let y = |v: f64| y0 + PANEL * (1.0 - v.clamp(0.0, 1.0));
        let _ = writeln!(out, r#"<text x="{LEFT}" y="{}" font-weight="bold">{title}</text>"#, y0 - 8.0);
        let _ = writeln!(
            out,
            r##"<rect x="{LEFT}" y="{y0}" width="{plot_w}" height="{PANEL}" fill="none" stroke="#444"/>"##
        );
        for tick in [0.0, 0.25, 0.5, 0.75, 1.0] {
            let ty = y(tick);
            let _ = writeln!(
                out,
                r##"<line x1="{LEFT}" x2="{}" y1="{ty}" y2="{ty}" stroke="#ddd"/><text x="{}" y="{}" text-anchor="end">{tick:.2}</text>"##,
                LEFT + plot_w,
                LEFT - 6.0,
                ty + 4.0
            );
        }
        for (k, s) in series.iter().enumerate() {
            let points: Vec<String> = s
                .rows
                .iter()
                .filter(|r| !(*skip_zero && r.iteration == 0))
                .filter_map(|r| get(r).map(|v| format!("{:.2},{:.2}", x(r.iteration), y(v))))
                .collect();
            if !points.is_empty() {
                let _ = writeln!(
                    out,
                    r#"<polyline fill="none" stroke="{}" stroke-width="1.5" points="{}"/>"#,
                    COLORS[k % COLORS.len()],
                    points.join(" ")
                );
            }
        }
    }
    let axis_y = TOP + 2.0 * PANEL + GAP + 20.0;
    let _ = writeln!(out, r#"<text x="{}" y="{axis_y}" text-anchor="middle">iteration (0 to {max_iter})</text>"#, LEFT + plot_w / 2.0);
    for (k, s) in series.iter().enumerate() {
        let ly = TOP + 10.0 + 18.0 * k as f64;
        let lx = W - RIGHT + 15.0;
        let _ = writeln!(
            out,
            r#"<g class="legend"><line x1="{lx}" x2="{}" y1="{ly}" y2="{ly}" stroke="{}" stroke-width="3"/><text x="{}" y="{}">{}</text></g>"#,
            lx + 20.0,
            COLORS[k % COLORS.len()],
            lx + 26.0,
            ly + 4.0,
            escape(&s.name)
        );
    }
    out.push_str("</svg>\n");
    out
}
