//! Standalone SVG line plots of result CSVs.
//!
//! The source CSV is embedded verbatim in a `<metadata>` block so the figure
//! carries its own data table.

use std::fmt::Write as _;

use crate::error::{Error, Result};

const W: f64 = 720.0;
const H: f64 = 480.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 180.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    /// `(p, value, std)`; std is zero when the CSV has none.
    pub points: Vec<(f64, f64, f64)>,
}

/// Splits a result CSV into series keyed by its `label`/`eta` columns and
/// its rate columns (`ler`, `mean`, `*_mean` except `diff_mean`).
pub fn series_from_csv(csv: &str) -> Result<Vec<Series>> {
    let mut lines = csv.lines().filter(|l| !l.trim().is_empty());
    let header: Vec<&str> = lines
        .next()
        .ok_or_else(|| Error::Format("empty CSV".into()))?
        .split(',')
        .collect();
    let p_col = header
        .iter()
        .position(|h| *h == "p")
        .ok_or_else(|| Error::Format("CSV has no p column".into()))?;
    let key_cols: Vec<usize> = (0..header.len()).filter(|&i| matches!(header[i], "label" | "eta")).collect();
    let y_cols: Vec<(usize, Option<usize>, &str)> = header
        .iter()
        .enumerate()
        .filter(|(_, h)| **h == "ler" || **h == "mean" || (h.ends_with("_mean") && **h != "diff_mean"))
        .map(|(i, h)| {
            let stem = h.strip_suffix("mean").unwrap_or(h);
            let std_name = format!("{stem}std");
            (i, header.iter().position(|c| *c == std_name), stem.trim_end_matches('_'))
        })
        .collect();
    if y_cols.is_empty() {
        return Err(Error::Format("CSV has no rate column".into()));
    }
    let mut out: Vec<Series> = Vec::new();
    for (no, line) in lines.enumerate() {
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != header.len() {
            return Err(Error::Format(format!("CSV row {} has {} cells", no + 2, cells.len())));
        }
        let num = |i: usize| -> Result<f64> {
            cells[i]
                .parse()
                .map_err(|_| Error::Format(format!("CSV row {}: bad number {:?}", no + 2, cells[i])))
        };
        let key: Vec<String> = key_cols.iter().map(|&i| format!("{}={}", header[i], cells[i])).collect();
        for &(yi, si, stem) in &y_cols {
            let mut parts = key.clone();
            if !stem.is_empty() && stem != "ler" {
                parts.push(stem.to_string());
            }
            let name = if parts.is_empty() { "ler".to_string() } else { parts.join(" ") };
            let point = (num(p_col)?, num(yi)?, si.map(num).transpose()?.unwrap_or(0.0));
            match out.iter_mut().find(|s| s.name == name) {
                Some(s) => s.points.push(point),
                None => out.push(Series { name, points: vec![point] }),
            }
        }
    }
    Ok(out)
}

fn fmt_tick(v: f64) -> String {
    let s = format!("{v:.4}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s.is_empty() || s == "-" { "0".into() } else { s.into() }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Renders `csv` as an SVG document.
pub fn render_svg(csv: &str, title: &str) -> Result<String> {
    let series = series_from_csv(csv)?;
    let pts = series.iter().flat_map(|s| &s.points);
    let (mut x0, mut x1, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, 0.0f64);
    for &(x, y, e) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y1 = y1.max(y + e);
    }
    if !x0.is_finite() {
        return Err(Error::Format("CSV has no data rows".into()));
    }
    if x1 <= x0 {
        x1 = x0 + 1e-3;
    }
    if y1 <= 0.0 {
        y1 = 1e-3;
    }
    let y1 = y1 * 1.05;
    let pw = W - LEFT - RIGHT;
    let ph = H - TOP - BOTTOM;
    let sx = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| TOP + ph - y / y1 * ph;

    let mut s = String::new();
    let w = &mut s;
    writeln!(w, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#).unwrap();
    writeln!(w, "<metadata><![CDATA[\n{}]]></metadata>", csv.replace("]]>", "]]]]><![CDATA[>")).unwrap();
    writeln!(w, r#"<rect width="{W}" height="{H}" fill="white"/>"#).unwrap();
    writeln!(w, r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#, LEFT + pw / 2.0, escape(title)).unwrap();
    writeln!(w, r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#).unwrap();
    for k in 0..=5 {
        let fx = x0 + (x1 - x0) * k as f64 / 5.0;
        let fy = y1 * k as f64 / 5.0;
        let (px, py) = (sx(fx), sy(fy));
        writeln!(w, r##"<line x1="{px:.2}" y1="{}" x2="{px:.2}" y2="{}" stroke="#ddd"/>"##, TOP, TOP + ph).unwrap();
        writeln!(w, r#"<text x="{px:.2}" y="{}" text-anchor="middle">{}</text>"#, TOP + ph + 18.0, fmt_tick(fx)).unwrap();
        writeln!(w, r##"<line x1="{LEFT}" y1="{py:.2}" x2="{}" y2="{py:.2}" stroke="#ddd"/>"##, LEFT + pw).unwrap();
        writeln!(w, r#"<text x="{}" y="{:.2}" text-anchor="end">{}</text>"#, LEFT - 6.0, py + 4.0, fmt_tick(fy)).unwrap();
    }
    writeln!(w, r#"<text x="{}" y="{}" text-anchor="middle">physical error rate p</text>"#, LEFT + pw / 2.0, H - 16.0).unwrap();
    writeln!(w, r#"<text x="18" y="{}" text-anchor="middle" transform="rotate(-90 18 {})">logical error rate</text>"#, TOP + ph / 2.0, TOP + ph / 2.0).unwrap();
    for (i, ser) in series.iter().enumerate() {
        let c = PALETTE[i % PALETTE.len()];
        let path: Vec<String> = ser.points.iter().map(|&(x, y, _)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
        writeln!(w, r#"<polyline fill="none" stroke="{c}" stroke-width="1.5" points="{}"/>"#, path.join(" ")).unwrap();
        for &(x, y, e) in &ser.points {
            if e > 0.0 {
                writeln!(w, r#"<line x1="{0:.2}" y1="{1:.2}" x2="{0:.2}" y2="{2:.2}" stroke="{c}"/>"#, sx(x), sy((y - e).max(0.0)), sy(y + e)).unwrap();
            }
            writeln!(w, r#"<circle cx="{:.2}" cy="{:.2}" r="2.5" fill="{c}"/>"#, sx(x), sy(y)).unwrap();
        }
        let ly = TOP + 10.0 + 18.0 * i as f64;
        let lx = LEFT + pw + 12.0;
        writeln!(w, r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{c}" stroke-width="2"/>"#, lx + 20.0).unwrap();
        writeln!(w, r#"<text x="{}" y="{}">{}</text>"#, lx + 26.0, ly + 4.0, escape(&ser.name)).unwrap();
    }
    s.push_str("</svg>\n");
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sweep_csv_gives_one_series() {
        let s = series_from_csv("p,trials,ler\n0.01,100,0.02\n0.05,100,0.3\n").unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].name, "ler");
        assert_eq!(s[0].points[1], (0.05, 0.3, 0.0));
    }

    #[test]
    fn comparison_and_bias_csvs() {
        let cmp = "p,before_mean,before_std,after_mean,after_std,diff_mean,diff_std\n0.05,0.3,0.01,0.28,0.02,0.02,0.01\n";
        let s = series_from_csv(cmp).unwrap();
        assert_eq!(s.iter().map(|x| x.name.as_str()).collect::<Vec<_>>(), ["before", "after"]);
        assert_eq!(s[1].points[0], (0.05, 0.28, 0.02));
        let bias = "eta,p,before_mean,before_std,after_mean,after_std,diff_mean,diff_std\n0.5,0.05,0.3,0,0.2,0,0.1,0\n5,0.05,0.3,0,0.2,0,0.1,0\n";
        assert_eq!(series_from_csv(bias).unwrap().len(), 4);
        let scaling = "label,multiplier,reoptimized,p,mean,std\nx1,1,false,0.05,0.3,0.01\nx2,2,false,0.05,0.2,0.01\n";
        let s = series_from_csv(scaling).unwrap();
        assert_eq!(s[0].name, "label=x1");
    }

    #[test]
    fn svg_embeds_table_and_is_stable() {
        let csv = "p,trials,ler\n0.01,100,0.02\n0.05,100,0.3\n";
        let a = render_svg(csv, "L = 3 <test>").unwrap();
        assert!(a.starts_with("<svg"));
        assert!(a.contains(csv));
        assert!(a.contains("&lt;test&gt;"));
        assert_eq!(a, render_svg(csv, "L = 3 <test>").unwrap());
    }

    #[test]
    fn rejects_malformed_csv() {
        assert!(series_from_csv("").is_err());
        assert!(series_from_csv("x,y\n1,2\n").is_err());
        assert!(series_from_csv("p,ler\n0.1\n").is_err());
        assert!(series_from_csv("p,ler\n0.1,abc\n").is_err());
        assert!(render_svg("p,ler\n", "t").is_err());
    }
}
