//! Evaluation tables and the SVG curve.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

use super::froc::FrocResult;
use super::strata::StratifiedReport;

pub const FROC_FILE: &str = "froc.csv";
pub const OPERATING_POINTS_FILE: &str = "operating_points.csv";
pub const STRATA_FILE: &str = "strata.csv";
pub const PLOT_FILE: &str = "froc.svg";

fn write_rows(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    w.write_record(header).map_err(|e| Error::format(path, e.to_string()))?;
    for r in rows {
        w.write_record(r).map_err(|e| Error::format(path, e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn num(v: f64) -> String {
    format!("{v:.6}")
}

/// `fp_per_image,sensitivity` for every sweep step.
pub fn write_froc_curve(path: &Path, r: &FrocResult) -> Result<()> {
    let rows: Vec<Vec<String>> = r.curve.iter().map(|&(f, s)| vec![num(f), num(s)]).collect();
    write_rows(path, &["fp_per_image", "sensitivity"], &rows)
}

pub fn read_froc_curve(path: &Path) -> Result<Vec<(f64, f64)>> {
    let mut rd = csv::Reader::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    rd.deserialize()
        .map(|rec| rec.map_err(|e| Error::format(path, e.to_string())))
        .collect()
}

/// One row per operating point plus a final `average` row.
pub fn write_operating_points(path: &Path, r: &FrocResult) -> Result<()> {
    let mut rows: Vec<Vec<String>> = r
        .fp_points
        .iter()
        .zip(&r.sensitivities)
        .zip(&r.thresholds)
        .map(|((&f, &s), t)| vec![format!("{f}"), num(s), t.map(num).unwrap_or_default()])
        .collect();
    rows.push(vec!["average".into(), num(r.average), String::new()]);
    write_rows(path, &["fp_per_image", "sensitivity", "score_threshold"], &rows)
}

/// `kind,name,lesions,<one column per FP point>,average`; empty cells mark absent strata.
pub fn write_strata(path: &Path, rep: &StratifiedReport) -> Result<()> {
    let mut header: Vec<String> = vec!["kind".into(), "name".into(), "lesions".into()];
    header.extend(rep.fp_points.iter().map(|f| format!("fp_{f}")));
    header.push("average".into());
    let rows: Vec<Vec<String>> = rep
        .strata
        .iter()
        .map(|s| {
            let mut r = vec![s.kind.to_string(), s.name.clone(), s.num_lesions.to_string()];
            match &s.sensitivities {
                Some(v) => r.extend(v.iter().map(|&x| num(x))),
                None => r.extend(rep.fp_points.iter().map(|_| String::new())),
            }
            r.push(s.average().map(num).unwrap_or_default());
            r
        })
        .collect();
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    write_rows(path, &header, &rows)
}

/// FROC curve as a standalone SVG with a logarithmic FP axis from 0.125 to 8.
pub fn froc_svg(curve: &[(f64, f64)], fp_points: &[f64]) -> String {
    let (w, h, m) = (480.0, 360.0, 48.0);
    let (lo, hi) = (0.125f64.log2(), 8f64.log2());
    let px = |f: f64| m + (f.max(0.125).min(8.0).log2() - lo) / (hi - lo) * (w - 2.0 * m);
    let py = |s: f64| h - m - s * (h - 2.0 * m);
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    );
    let _ = writeln!(svg, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<path d="M{m} {} H{} M{m} {} V{}" stroke="black" fill="none"/>"#,
        h - m,
        w - m,
        h - m,
        m
    );
    for &f in fp_points {
        let x = px(f);
        let _ = writeln!(svg, r##"<line x1="{x:.1}" y1="{m}" x2="{x:.1}" y2="{}" stroke="#ddd"/>"##, h - m);
        let _ = writeln!(
            svg,
            r#"<text x="{x:.1}" y="{}" font-size="11" text-anchor="middle">{f}</text>"#,
            h - m + 16.0
        );
    }
    for k in 0..=4 {
        let s = k as f64 / 4.0;
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{:.1}" font-size="11" text-anchor="end">{s:.2}</text>"#,
            m - 6.0,
            py(s) + 4.0
        );
    }
    let mut d = String::new();
    let mut prev: Option<f64> = None;
    for &(f, s) in curve {
        let (x, y) = (px(f), py(s));
        match prev {
            None => {
                let _ = write!(d, "M{x:.1} {y:.1}");
            }
            Some(py_prev) => {
                let _ = write!(d, " L{x:.1} {py_prev:.1} L{x:.1} {y:.1}");
            }
        }
        prev = Some(y);
    }
    if let Some(y) = prev {
        let _ = write!(d, " L{:.1} {y:.1}", w - m);
    }
    let _ = writeln!(svg, r#"<path d="{d}" stroke="steelblue" stroke-width="2" fill="none"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" font-size="12" text-anchor="middle">false positives per image</text>"#,
        w / 2.0,
        h - 8.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="14" y="{}" font-size="12" text-anchor="middle" transform="rotate(-90 14 {})">sensitivity</text>"#,
        h / 2.0,
        h / 2.0
    );
    svg.push_str("</svg>\n");
    svg
}

pub fn write_svg(path: &Path, svg: &str) -> Result<()> {
    std::fs::write(path, svg).map_err(|e| Error::io(path, e))
}
