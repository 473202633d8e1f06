use std::fmt::Write as _;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use super::experiment::{ExperimentReport, ReportRow};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
    Svg,
}

impl ReportFormat {
    pub const SUPPORTED: &'static str = "csv, json, svg";

    pub fn extension(self) -> &'static str {
        match self {
            ReportFormat::Csv => "csv",
            ReportFormat::Json => "json",
            ReportFormat::Svg => "svg",
        }
    }
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            "svg" => Ok(ReportFormat::Svg),
            other => Err(Error::InvalidArgument(format!(
                "unknown report format '{other}' (supported: {})",
                Self::SUPPORTED
            ))),
        }
    }
}

/// One metric row per line. A leading `#` comment carries the seeds, the
/// config hash and the violation denominator.
pub fn write_csv(report: &ExperimentReport, w: impl Write) -> Result<()> {
    let mut w = w;
    let m = &report.meta;
    writeln!(
        w,
        "# config_hash={} train_seed={} test_seed={} model_seed={} topology_seed={} violation_denominator={}",
        m.config_hash, m.train_seed, m.test_seed, m.model_seed, m.topology_seed, m.violation_denominator
    )?;
    let mut out = csv::Writer::from_writer(w);
    for row in &report.rows {
        out.serialize(row).map_err(|e| Error::Format(e.to_string()))?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_csv_rows(r: impl Read) -> Result<Vec<ReportRow>> {
    let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(r);
    reader
        .deserialize()
        .map(|rec| rec.map_err(|e| Error::Format(e.to_string())))
        .collect()
}

pub fn write_json(report: &ExperimentReport, w: impl Write) -> Result<()> {
    serde_json::to_writer_pretty(w, report)?;
    Ok(())
}

/// Line chart of normalized sum rate against mask fraction, one polyline
/// per solver.
pub fn render_svg(report: &ExperimentReport) -> String {
    let (width, height, pad) = (480.0, 320.0, 48.0);
    let xs: Vec<f64> = report.rows.iter().map(|r| r.mask_fraction).collect();
    let ys: Vec<f64> = report
        .rows
        .iter()
        .map(|r| r.normalized)
        .filter(|v| v.is_finite())
        .collect();
    let (x0, x1) = bounds(&xs, 0.0, 0.5);
    let (y0, y1) = bounds(&ys, 0.0, 1.0);
    let y0 = y0.min(0.0);
    let sx = |x: f64| pad + (x - x0) / (x1 - x0) * (width - 2.0 * pad);
    let sy = |y: f64| height - pad - (y - y0) / (y1 - y0) * (height - 2.0 * pad);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(
        svg,
        r#"<rect x="{pad}" y="{pad}" width="{}" height="{}" fill="none" stroke="gray"/>"#,
        width - 2.0 * pad,
        height - 2.0 * pad
    );
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle">mask fraction</text>"#,
        width / 2.0,
        height - 12.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="12" y="{}" transform="rotate(-90 12 {})" text-anchor="middle">normalized sum rate</text>"#,
        height / 2.0,
        height / 2.0
    );
    for (v, label) in [(x0, x0), (x1, x1)] {
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{}" text-anchor="middle">{label:.2}</text>"#,
            sx(v),
            height - pad + 14.0
        );
    }
    for v in [y0, y1] {
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{:.1}" text-anchor="end">{v:.2}</text>"#,
            pad - 4.0,
            sy(v) + 4.0
        );
    }
    let palette = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"];
    let mut solvers: Vec<&str> = Vec::new();
    for r in &report.rows {
        if !solvers.contains(&r.solver.as_str()) {
            solvers.push(&r.solver);
        }
    }
    for (k, solver) in solvers.iter().enumerate() {
        let color = palette[k % palette.len()];
        let pts: Vec<String> = report
            .rows
            .iter()
            .filter(|r| r.solver == *solver && r.normalized.is_finite())
            .map(|r| format!("{:.1},{:.1}", sx(r.mask_fraction), sy(r.normalized)))
            .collect();
        let _ = writeln!(
            svg,
            r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
            pts.join(" ")
        );
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" fill="{color}">{solver}</text>"#,
            width - pad - 70.0,
            pad + 14.0 + 14.0 * k as f64
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn bounds(v: &[f64], lo: f64, hi: f64) -> (f64, f64) {
    let min = v.iter().copied().fold(f64::INFINITY, f64::min);
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !min.is_finite() || !max.is_finite() {
        return (lo, hi);
    }
    if max - min < 1e-12 {
        return (min - 0.5, max + 0.5);
    }
    (min, max)
}

/// Writes `<stem>.<ext>` under `dir` and returns the path.
pub fn emit_report(report: &ExperimentReport, format: ReportFormat, dir: &Path, stem: &str) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(format!("{stem}.{}", format.extension()));
    let file = std::io::BufWriter::new(std::fs::File::create(&path)?);
    match format {
        ReportFormat::Csv => write_csv(report, file)?,
        ReportFormat::Json => write_json(report, file)?,
        ReportFormat::Svg => {
            let mut f = file;
            f.write_all(render_svg(report).as_bytes())?;
            f.flush()?;
        }
    }
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::experiment::{ExperimentConfig, ReportMeta};

    fn report() -> ExperimentReport {
        let row = |solver: &str, f: f64, rate: f64| ReportRow {
            scenario: "missing-csi".into(),
            solver: solver.into(),
            num_pairs: 4,
            num_channels: 2,
            mask_fraction: f,
            instances: 10,
            avg_sum_rate_bits: rate,
            qos_violation_prob: 0.125,
            normalized: rate / 10.0,
            time_median_ms: Some(0.25),
            time_p95_ms: None,
        };
        ExperimentReport {
            meta: ReportMeta {
                config_hash: "ab".repeat(32),
                train_seed: 1,
                test_seed: 2,
                model_seed: 3,
                topology_seed: 4,
                git_hash: None,
                violation_denominator: "user-instances".into(),
            },
            config: ExperimentConfig::default(),
            rows: vec![
                row("jcpgnn", 0.0, 10.0),
                row("jcpgnn", 0.25, 9.87654321),
                row("jcpgnn", 0.5, 9.5),
            ],
        }
    }

    #[test]
    fn csv_round_trip() {
        let r = report();
        let mut buf = Vec::new();
        write_csv(&r, &mut buf).unwrap();
        assert!(String::from_utf8_lossy(&buf).starts_with("# config_hash="));
        assert_eq!(read_csv_rows(buf.as_slice()).unwrap(), r.rows);
    }

    #[test]
    fn json_carries_seeds_and_hash() {
        let mut buf = Vec::new();
        write_json(&report(), &mut buf).unwrap();
        let v: serde_json::Value = serde_json::from_slice(&buf).unwrap();
        assert_eq!(v["meta"]["config_hash"].as_str().unwrap().len(), 64);
        assert_eq!(v["meta"]["test_seed"], 2);
        let back: ExperimentReport = serde_json::from_slice(&buf).unwrap();
        assert_eq!(back, report());
    }

    #[test]
    fn format_parsing() {
        assert_eq!("CSV".parse::<ReportFormat>().unwrap(), ReportFormat::Csv);
        let err = "xml".parse::<ReportFormat>().unwrap_err().to_string();
        assert!(err.contains("csv") && err.contains("json"), "{err}");
    }

    #[test]
    fn svg_has_one_line_per_solver() {
        let svg = render_svg(&report());
        assert_eq!(svg.matches("<polyline").count(), 1);
        let dir = tempfile::tempdir().unwrap();
        let p = emit_report(&report(), ReportFormat::Svg, dir.path(), "sweep").unwrap();
        assert!(p.ends_with("sweep.svg"));
    }
}
