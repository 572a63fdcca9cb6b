//! Static SVG curves rendered from an aggregate CSV.

use crate::error::{CliError, CliResult};
use std::fmt::Write;

const PANEL_W: f64 = 560.0;
const PANEL_H: f64 = 300.0;
const MARGIN_L: f64 = 80.0;
const MARGIN_R: f64 = 20.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 50.0;

/// A parsed aggregate: comment metadata and numeric columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub meta: Vec<(String, String)>,
    pub columns: Vec<String>,
    /// Row-major; `None` for empty cells.
    pub rows: Vec<Vec<Option<f64>>>,
}

impl Aggregate {
    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn column(&self, name: &str) -> Option<Vec<Option<f64>>> {
        let i = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[i]).collect())
    }

    /// Metric names with both `_mean` and `_std` columns.
    pub fn metrics(&self) -> Vec<String> {
        self.columns
            .iter()
            .filter_map(|c| c.strip_suffix("_mean"))
            .filter(|m| self.columns.iter().any(|c| c == &format!("{m}_std")))
            .map(str::to_string)
            .collect()
    }
}

pub fn parse_aggregate(text: &str) -> CliResult<Aggregate> {
    let meta = text
        .lines()
        .filter_map(|l| l.strip_prefix("# "))
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect();
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
    let columns: Vec<String> =
        rdr.headers().map_err(|e| CliError::usage(format!("bad CSV: {e}")))?.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| CliError::usage(format!("bad CSV: {e}")))?;
        let row = rec
            .iter()
            .map(|cell| {
                if cell.is_empty() {
                    Ok(None)
                } else {
                    cell.parse::<f64>().map(Some).map_err(|_| CliError::usage(format!("bad number {cell:?}")))
                }
            })
            .collect::<CliResult<Vec<_>>>()?;
        rows.push(row);
    }
    Ok(Aggregate { meta, columns, rows })
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn ticks(lo: f64, hi: f64) -> Vec<f64> {
    (0..=4).map(|i| lo + (hi - lo) * i as f64 / 4.0).collect()
}

fn fmt_tick(v: f64, log: bool) -> String {
    if log {
        format!("1e{v:.1}")
    } else if v != 0.0 && (v.abs() >= 1e4 || v.abs() < 1e-2) {
        format!("{v:.2e}")
    } else {
        format!("{v:.3}")
    }
}

/// One panel per metric: the mean curve with a shaded one-std band. Metrics
/// whose means are all positive and span over two decades use a log axis.
pub fn render_svg(agg: &Aggregate) -> CliResult<String> {
    let xs = agg.column("iteration").ok_or_else(|| CliError::usage("CSV has no iteration column"))?;
    let metrics = agg.metrics();
    if metrics.is_empty() {
        return Err(CliError::usage("CSV has no metric columns"));
    }
    let height = PANEL_H * metrics.len() as f64;
    let mut svg = String::new();
    let title = format!("{} (config {})", agg.meta("name").unwrap_or("run"), agg.meta("config_hash").unwrap_or("?"));
    writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{PANEL_W}" height="{height}" font-family="sans-serif" font-size="11">"#
    )
    .unwrap();
    writeln!(
        svg,
        "<!-- config_hash={} seeds={} -->",
        agg.meta("config_hash").unwrap_or(""),
        agg.meta("seeds").unwrap_or("")
    )
    .unwrap();
    writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#).unwrap();
    for (p, m) in metrics.iter().enumerate() {
        let mean = agg.column(&format!("{m}_mean")).expect("listed metric");
        let std = agg.column(&format!("{m}_std")).expect("listed metric");
        let pts: Vec<(f64, f64, f64)> = xs
            .iter()
            .zip(mean.iter().zip(&std))
            .filter_map(|(x, (m, s))| Some(((*x)?, (*m)?, s.unwrap_or(0.0))))
            .collect();
        let top = PANEL_H * p as f64;
        writeln!(svg, r#"<text x="{MARGIN_L}" y="{}" font-size="13">{} : {}</text>"#, top + 20.0, escape(&title), m)
            .unwrap();
        if pts.is_empty() {
            continue;
        }
        let positive = pts.iter().all(|(_, m, _)| *m > 0.0);
        let (mmin, mmax) =
            pts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), (_, m, _)| (a.min(*m), b.max(*m)));
        let log = positive && mmax / mmin > 100.0;
        let tf = |v: f64| if log { v.max(mmin * 1e-3).log10() } else { v };
        let lo_hi: Vec<(f64, f64)> =
            pts.iter().map(|(_, m, s)| if log { (tf(*m), tf(*m)) } else { (tf(m - s), tf(m + s)) }).collect();
        let ymin = lo_hi.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
        let mut ymax = lo_hi.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
        if ymax <= ymin {
            ymax = ymin + 1.0;
        }
        let xmin = pts.first().unwrap().0;
        let mut xmax = pts.last().unwrap().0;
        if xmax <= xmin {
            xmax = xmin + 1.0;
        }
        let (x0, x1) = (MARGIN_L, PANEL_W - MARGIN_R);
        let (y0, y1) = (top + PANEL_H - MARGIN_B, top + MARGIN_T);
        let sx = |x: f64| x0 + (x - xmin) / (xmax - xmin) * (x1 - x0);
        let sy = |y: f64| y0 + (y - ymin) / (ymax - ymin) * (y1 - y0);
        writeln!(
            svg,
            r##"<rect x="{x0}" y="{y1}" width="{}" height="{}" fill="none" stroke="#444"/>"##,
            x1 - x0,
            y0 - y1
        )
        .unwrap();
        for t in ticks(ymin, ymax) {
            writeln!(
                svg,
                r#"<text x="{}" y="{:.1}" text-anchor="end">{}</text>"#,
                x0 - 4.0,
                sy(t) + 4.0,
                fmt_tick(t, log)
            )
            .unwrap();
        }
        for t in ticks(xmin, xmax) {
            writeln!(svg, r#"<text x="{:.1}" y="{}" text-anchor="middle">{:.0}</text>"#, sx(t), y0 + 16.0, t).unwrap();
        }
        writeln!(svg, r#"<text x="{:.1}" y="{}" text-anchor="middle">iteration</text>"#, (x0 + x1) / 2.0, y0 + 34.0)
            .unwrap();
        if !log {
            let mut band = String::new();
            for ((x, _, _), (_, hi)) in pts.iter().zip(&lo_hi) {
                write!(band, "{:.2},{:.2} ", sx(*x), sy(*hi)).unwrap();
            }
            for ((x, _, _), (lo, _)) in pts.iter().zip(&lo_hi).rev() {
                write!(band, "{:.2},{:.2} ", sx(*x), sy(*lo)).unwrap();
            }
            writeln!(
                svg,
                r##"<polygon points="{}" fill="#1f77b4" fill-opacity="0.2" stroke="none"/>"##,
                band.trim_end()
            )
            .unwrap();
        }
        let line: Vec<String> = pts.iter().map(|(x, m, _)| format!("{:.2},{:.2}", sx(*x), sy(tf(*m)))).collect();
        writeln!(svg, r##"<polyline points="{}" fill="none" stroke="#1f77b4" stroke-width="1.5"/>"##, line.join(" "))
            .unwrap();
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

#[cfg(test)]
mod tests {
    use super::*;

    const CSV: &str = "# config_hash=abc\n# name=demo\n# seeds=0,1\niteration,exact_j_mean,exact_j_std,n\n0,1.0e0,1e-1,2\n1,2.0e0,2e-1,2\n2,,,2\n";

    #[test]
    fn parses_meta_and_columns() {
        let a = parse_aggregate(CSV).unwrap();
        assert_eq!(a.meta("config_hash"), Some("abc"));
        assert_eq!(a.metrics(), vec!["exact_j".to_string()]);
        assert_eq!(a.column("exact_j_mean").unwrap(), vec![Some(1.0), Some(2.0), None]);
    }

    #[test]
    fn renders_deterministic_svg() {
        let a = parse_aggregate(CSV).unwrap();
        let s1 = render_svg(&a).unwrap();
        assert_eq!(s1, render_svg(&a).unwrap());
        assert!(s1.starts_with("<svg") && s1.contains("polyline") && s1.contains("config_hash=abc"));
    }

    #[test]
    fn rejects_csv_without_metrics() {
        let a = parse_aggregate("iteration,n\n0,1\n").unwrap();
        assert!(render_svg(&a).is_err());
    }
}
