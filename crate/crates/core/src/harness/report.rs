use std::fmt::Write as _;
use std::path::Path;

use super::{ConvergenceReport, VerifySuiteResult};
use crate::{Error, Result};

pub const REPORT_HEADER: &str = "epsilon,e_sup_diff,stderr,p_exceed,p_stderr,wall_time_s";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    SvgPlot,
}

impl ConvergenceReport {
    /// One row per `ε`, 17 significant digits. The wall-time column is left
    /// empty unless wall times were requested, so that reports are
    /// byte-reproducible by default.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(REPORT_HEADER);
        out.push('\n');
        for i in 0..self.epsilons.len() {
            let _ = write!(
                out,
                "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},",
                self.epsilons[i], self.e_sup_diff[i], self.stderrs[i], self.p_exceed[i], self.p_stderr[i]
            );
            if self.record_wall_time {
                let _ = write!(out, "{:.6}", self.wall_times[i]);
            }
            out.push('\n');
        }
        out
    }

    /// Log-log line plot of `e_sup_diff` against `ε`: one polyline per
    /// series. Zero differences are drawn at a floor below the smallest
    /// positive value.
    pub fn to_svg(&self) -> String {
        const W: f64 = 640.0;
        const H: f64 = 420.0;
        const M: f64 = 60.0;
        let mut out = String::new();
        let _ = writeln!(
            out,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
        );
        let _ = writeln!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
        let _ = writeln!(
            out,
            r#"<line x1="{M}" y1="{y}" x2="{x}" y2="{y}" stroke="black"/><line x1="{M}" y1="{M}" x2="{M}" y2="{y}" stroke="black"/>"#,
            x = W - M,
            y = H - M
        );
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" text-anchor="middle" font-size="14">ε (log scale)</text>"#,
            W / 2.0,
            H - 15.0
        );
        let _ = writeln!(
            out,
            r#"<text x="18" y="{}" text-anchor="middle" font-size="14" transform="rotate(-90 18 {})">E sup‖u_ε − ū‖ (log scale)</text>"#,
            H / 2.0,
            H / 2.0
        );
        if !self.epsilons.is_empty() {
            let floor = self
                .e_sup_diff
                .iter()
                .copied()
                .filter(|v| *v > 0.0 && v.is_finite())
                .fold(f64::INFINITY, f64::min);
            let floor = if floor.is_finite() { floor / 10.0 } else { 1e-16 };
            let xs: Vec<f64> = self.epsilons.iter().map(|e| e.log10()).collect();
            let ys: Vec<f64> = self.e_sup_diff.iter().map(|v| v.max(floor).log10()).collect();
            let span = |v: &[f64]| {
                let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                if hi - lo < 1e-12 {
                    (lo - 0.5, hi + 0.5)
                } else {
                    (lo, hi)
                }
            };
            let (x0, x1) = span(&xs);
            let (y0, y1) = span(&ys);
            let px = |x: f64| M + (x - x0) / (x1 - x0) * (W - 2.0 * M);
            let py = |y: f64| H - M - (y - y0) / (y1 - y0) * (H - 2.0 * M);
            let points: Vec<String> = xs
                .iter()
                .zip(&ys)
                .map(|(x, y)| format!("{:.3},{:.3}", px(*x), py(*y)))
                .collect();
            let _ = writeln!(
                out,
                r##"<polyline fill="none" stroke="#1f77b4" stroke-width="2" points="{}"/>"##,
                points.join(" ")
            );
            for ((x, y), e) in xs.iter().zip(&ys).zip(&self.epsilons) {
                let _ = writeln!(
                    out,
                    r##"<circle cx="{:.3}" cy="{:.3}" r="3" fill="#1f77b4"/><text x="{:.3}" y="{}" text-anchor="middle" font-size="11">{e}</text>"##,
                    px(*x),
                    py(*y),
                    px(*x),
                    H - M + 16.0
                );
            }
        }
        out.push_str("</svg>\n");
        out
    }
}

/// Writes `report` in `format` to `path`.
pub fn emit_report(report: &ConvergenceReport, format: ReportFormat, path: &Path) -> Result<()> {
    let body = match format {
        ReportFormat::Csv => report.to_csv(),
        ReportFormat::SvgPlot => report.to_svg(),
    };
    std::fs::write(path, body).map_err(|e| Error::io(path, e))
}

/// `name,statistic,threshold,comparison,pass` table.
pub fn verify_table_csv(results: &[VerifySuiteResult]) -> String {
    let mut out = String::from("name,statistic,threshold,comparison,pass\n");
    for r in results {
        let _ = writeln!(
            out,
            "{},{:.16e},{:.16e},{},{}",
            r.name,
            r.statistic,
            r.threshold,
            r.comparison.symbol(),
            r.pass
        );
    }
    out
}
