//! Minimal SVG scatter plots of the first two latent coordinates.

use std::fmt::Write as _;

const SIZE: f64 = 480.0;
const MARGIN: f64 = 40.0;
const PALETTE: [&str; 4] = ["#4c72b0", "#dd8452", "#55a868", "#c44e52"];

fn colour_index(labels: &[bool]) -> usize {
    labels
        .iter()
        .take(2)
        .enumerate()
        .map(|(i, &l)| usize::from(l) << i)
        .sum()
}

fn legend(attributes: &[String], idx: usize) -> String {
    if attributes.is_empty() {
        return "all".into();
    }
    attributes
        .iter()
        .take(2)
        .enumerate()
        .map(|(i, a)| format!("{a}={}", idx >> i & 1))
        .collect::<Vec<_>>()
        .join(", ")
}

/// One circle per sample, coloured by the labels of the first two
/// attributes. One-dimensional latents are drawn on a horizontal line.
pub fn scatter_svg(latents: &[Vec<f64>], labels: &[Vec<bool>], attributes: &[String], title: &str) -> String {
    let coord = |z: &[f64], i: usize| z.get(i).copied().unwrap_or(0.0);
    let range = |i: usize| {
        let (lo, hi) = latents
            .iter()
            .map(|z| coord(z, i))
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
        if !(lo.is_finite() && hi.is_finite()) {
            (-1.0, 1.0)
        } else if hi - lo < 1e-12 {
            (lo - 1.0, hi + 1.0)
        } else {
            let pad = 0.05 * (hi - lo);
            (lo - pad, hi + pad)
        }
    };
    let (x0, x1) = range(0);
    let (y0, y1) = range(1);
    let span = SIZE - 2.0 * MARGIN;
    let px = |x: f64| MARGIN + (x - x0) / (x1 - x0) * span;
    let py = |y: f64| SIZE - MARGIN - (y - y0) / (y1 - y0) * span;

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{MARGIN}" y="24" font-family="sans-serif" font-size="14">{}</text>"#,
        escape(title)
    );
    let _ = writeln!(
        out,
        r##"<rect x="{MARGIN}" y="{MARGIN}" width="{span}" height="{span}" fill="none" stroke="#888"/>"##
    );
    for (z, l) in latents.iter().zip(labels) {
        let _ = writeln!(
            out,
            r#"<circle cx="{:.2}" cy="{:.2}" r="1.6" fill="{}" fill-opacity="0.6"/>"#,
            px(coord(z, 0)),
            py(coord(z, 1)),
            PALETTE[colour_index(l)]
        );
    }
    let used: Vec<usize> = {
        let mut u: Vec<usize> = labels.iter().map(|l| colour_index(l)).collect();
        u.sort_unstable();
        u.dedup();
        u
    };
    for (row, idx) in used.into_iter().enumerate() {
        let y = MARGIN + 14.0 + 16.0 * row as f64;
        let x = SIZE - MARGIN - 90.0;
        let _ = writeln!(
            out,
            r#"<circle cx="{x}" cy="{}" r="4" fill="{}"/>"#,
            y - 4.0,
            PALETTE[idx]
        );
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{y}" font-family="sans-serif" font-size="11">{}</text>"#,
            x + 8.0,
            escape(&legend(attributes, idx))
        );
    }
    out.push_str("</svg>\n");
    out
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_marker_per_sample() {
        let z = vec![vec![0.0, 1.0], vec![-1.0, 2.0], vec![3.0, -1.0]];
        let l = vec![vec![false, true], vec![true, true], vec![true, false]];
        let svg = scatter_svg(&z, &l, &["A".into(), "B".into()], "t<1>");
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        let markers = svg.matches(r#"r="1.6""#).count();
        assert_eq!(markers, 3);
        assert!(svg.contains("A=1, B=0") && svg.contains("t&lt;1&gt;"));
    }

    #[test]
    fn degenerate_ranges_are_finite() {
        let svg = scatter_svg(&[vec![1.0], vec![1.0]], &[vec![], vec![]], &[], "x");
        assert!(!svg.contains("NaN") && !svg.contains("inf"));
    }
}
