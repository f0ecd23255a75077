//! Static SVG renderings of layer curves and tone-by-layer heatmaps.

use std::fmt::Write as _;

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

pub struct CurveSeries {
    pub label: String,
    /// `(layer, mean, std)` in layer order.
    pub points: Vec<(u32, f64, f64)>,
    pub best_layer: Option<u32>,
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn star(cx: f64, cy: f64, r: f64) -> String {
    let mut pts = String::new();
    for i in 0..10 {
        let rad = if i % 2 == 0 { r } else { r * 0.45 };
        let a = std::f64::consts::PI * (i as f64) / 5.0 - std::f64::consts::FRAC_PI_2;
        let _ = write!(pts, "{:.2},{:.2} ", cx + rad * a.cos(), cy + rad * a.sin());
    }
    pts.trim_end().to_owned()
}

/// Mean macro-F1 (percent) per layer with std error bars and a star on each
/// series' best layer.
pub fn layer_curve_svg(title: &str, series: &[CurveSeries]) -> String {
    let (w, h) = (720.0, 420.0);
    let (left, right, top, bottom) = (60.0, 170.0, 40.0, 50.0);
    let pw = w - left - right;
    let ph = h - top - bottom;
    let layers: Vec<u32> = {
        let mut l: Vec<u32> = series.iter().flat_map(|s| s.points.iter().map(|p| p.0)).collect();
        l.sort_unstable();
        l.dedup();
        l
    };
    let (lo, hi) = match (layers.first(), layers.last()) {
        (Some(&a), Some(&b)) if b > a => (a as f64, b as f64),
        (Some(&a), _) => (a as f64 - 1.0, a as f64 + 1.0),
        _ => (0.0, 1.0),
    };
    let x = |l: f64| left + (l - lo) / (hi - lo) * pw;
    let y = |v: f64| top + (1.0 - v.clamp(0.0, 100.0) / 100.0) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
        left + pw / 2.0,
        esc(title)
    );
    for tick in (0..=100).step_by(20) {
        let ty = y(tick as f64);
        let _ = writeln!(
            s,
            r##"<line x1="{left}" y1="{ty:.1}" x2="{:.1}" y2="{ty:.1}" stroke="#e0e0e0"/><text x="{:.1}" y="{:.1}" text-anchor="end">{tick}</text>"##,
            left + pw,
            left - 6.0,
            ty + 4.0
        );
    }
    for &l in &layers {
        let tx = x(l as f64);
        let _ = writeln!(
            s,
            r#"<text x="{tx:.1}" y="{:.1}" text-anchor="middle">{l}</text>"#,
            top + ph + 18.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">Layer</text>"#,
        left + pw / 2.0,
        h - 10.0
    );
    let _ = writeln!(
        s,
        r#"<text transform="translate(16,{:.1}) rotate(-90)" text-anchor="middle">Macro F1 (%)</text>"#,
        top + ph / 2.0
    );
    let _ = writeln!(
        s,
        r#"<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );

    for (i, ser) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let path: Vec<String> = ser
            .points
            .iter()
            .map(|&(l, m, _)| format!("{:.1},{:.1}", x(l as f64), y(m * 100.0)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
            path.join(" ")
        );
        for &(l, m, sd) in &ser.points {
            let px = x(l as f64);
            let _ = writeln!(
                s,
                r#"<line x1="{px:.1}" y1="{:.1}" x2="{px:.1}" y2="{:.1}" stroke="{color}" stroke-opacity="0.5"/><circle cx="{px:.1}" cy="{:.1}" r="3" fill="{color}"/>"#,
                y((m - sd) * 100.0),
                y((m + sd) * 100.0),
                y(m * 100.0)
            );
        }
        if let Some(best) = ser.best_layer {
            if let Some(&(l, m, _)) = ser.points.iter().find(|p| p.0 == best) {
                let _ = writeln!(
                    s,
                    r#"<polygon points="{}" fill="{color}" stroke="black" stroke-width="0.8"><title>best layer {l}: {:.2}%</title></polygon>"#,
                    star(x(l as f64), y(m * 100.0) - 14.0, 8.0),
                    m * 100.0
                );
            }
        }
        let ly = top + 10.0 + 20.0 * i as f64;
        let lx = left + pw + 15.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{}" y="{}">{}</text>"#,
            lx + 20.0,
            lx + 26.0,
            ly + 4.0,
            esc(&ser.label)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn heat_color(pct: f64) -> String {
    // white to dark blue
    let t = (pct / 100.0).clamp(0.0, 1.0);
    let lerp = |a: f64, b: f64| (a + (b - a) * t).round() as u8;
    format!(
        "#{:02x}{:02x}{:02x}",
        lerp(247.0, 8.0),
        lerp(251.0, 48.0),
        lerp(255.0, 107.0)
    )
}

/// `cells[tone][layer_index]` in percent.
pub fn heatmap_svg(title: &str, tones: &[String], layers: &[u32], cells: &[Vec<f64>]) -> String {
    let cw = 44.0;
    let chh = 32.0;
    let (left, top) = (60.0, 44.0);
    let w = left + cw * layers.len() as f64 + 20.0;
    let h = top + chh * tones.len() as f64 + 50.0;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
        w / 2.0,
        esc(title)
    );
    for (ti, tone) in tones.iter().enumerate() {
        let cy = top + chh * ti as f64;
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
            left - 6.0,
            cy + chh / 2.0 + 4.0,
            esc(tone)
        );
        for (li, _) in layers.iter().enumerate() {
            let v = cells[ti][li];
            let cx = left + cw * li as f64;
            let text_color = if v > 55.0 { "white" } else { "black" };
            let _ = writeln!(
                s,
                r#"<rect x="{cx:.1}" y="{cy:.1}" width="{cw}" height="{chh}" fill="{}"/><text x="{:.1}" y="{:.1}" text-anchor="middle" fill="{text_color}">{v:.1}</text>"#,
                heat_color(v),
                cx + cw / 2.0,
                cy + chh / 2.0 + 4.0
            );
        }
    }
    let by = top + chh * tones.len() as f64;
    for (li, l) in layers.iter().enumerate() {
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{l}</text>"#,
            left + cw * li as f64 + cw / 2.0,
            by + 16.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">Layer</text>"#,
        left + cw * layers.len() as f64 / 2.0,
        by + 36.0
    );
    s.push_str("</svg>\n");
    s
}
