use std::fmt::Write;

const COLORS: [&str; 8] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"];

/// Line chart of top-k curves, one line per scale; y runs 0..100 percent.
pub fn topk_svg(curves: &[(usize, Vec<f64>)]) -> String {
    let (w, h, m) = (560.0, 400.0, 50.0);
    let k_max = curves.iter().map(|c| c.1.len()).max().unwrap_or(1).max(2);
    let x = |k: usize| m + (k - 1) as f64 / (k_max - 1) as f64 * (w - 2.0 * m);
    let y = |v: f64| h - m - v / 100.0 * (h - 2.0 * m);
    let mut out = String::new();
    let _ = writeln!(out, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#);
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<polyline points="{m},{} {m},{} {},{}" fill="none" stroke="black"/>"#,
        m,
        h - m,
        w - m,
        h - m
    );
    for k in 1..=k_max {
        let _ = writeln!(out, r#"<text x="{:.1}" y="{}" font-size="10" text-anchor="middle">{k}</text>"#, x(k), h - m + 14.0);
    }
    for v in [0, 25, 50, 75, 100] {
        let _ = writeln!(out, r#"<text x="{}" y="{:.1}" font-size="10" text-anchor="end">{v}%</text>"#, m - 6.0, y(v as f64) + 3.0);
    }
    for (i, (scale, curve)) in curves.iter().enumerate() {
        let c = COLORS[i % COLORS.len()];
        let pts: Vec<String> = curve.iter().enumerate().map(|(k, &v)| format!("{:.1},{:.1}", x(k + 1), y(v))).collect();
        let _ = writeln!(out, r#"<polyline points="{}" fill="none" stroke="{c}" stroke-width="2"/>"#, pts.join(" "));
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" font-size="11" fill="{c}">scale {scale}</text>"#,
            w - m + 4.0 - 60.0,
            m + 14.0 * i as f64
        );
    }
    out.push_str("</svg>\n");
    out
}
