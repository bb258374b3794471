//! Accuracy-vs-ε reports: CSV (+ JSON metadata sidecar), JSON, and SVG.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::checkpoint::write_atomic;
use crate::error::{Error, Result};

pub const CSV_HEADER: &str = "epsilon,clean_acc,adv_acc,recon_acc";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub epsilon: f64,
    pub clean_acc: f64,
    pub adv_acc: f64,
    /// `None` when the run skipped the autoencoder stage.
    pub recon_acc: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub dataset: String,
    pub attack_kind: String,
    pub box_mode: String,
    pub attacker_tag: String,
    pub evaluator_tag: String,
    pub ae_mode: String,
    /// One tag per row (per-ε mode) or a single shared tag.
    pub ae_tags: Vec<String>,
    pub seeds: BTreeMap<String, u64>,
    pub code_version: String,
    pub started_unix: u64,
    pub finished_unix: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub rows: Vec<ReportRow>,
    pub metadata: ReportMeta,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

impl RunReport {
    /// Equality ignoring wall-clock timestamps.
    pub fn same_results(&self, other: &RunReport) -> bool {
        let strip = |r: &RunReport| {
            let mut m = r.metadata.clone();
            m.started_unix = 0;
            m.finished_unix = 0;
            m
        };
        self.rows == other.rows && strip(self) == strip(other)
    }

    pub fn validate(&self) -> Result<()> {
        for row in &self.rows {
            let accs = [Some(row.clean_acc), Some(row.adv_acc), row.recon_acc];
            if accs.iter().flatten().any(|a| !(0.0..=1.0).contains(a)) {
                return Err(Error::Malformed(format!("accuracy outside [0, 1] in row {row:?}")));
            }
        }
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let recon = r.recon_acc.map(|v| v.to_string()).unwrap_or_default();
            let _ = writeln!(out, "{},{},{},{}", r.epsilon, r.clean_acc, r.adv_acc, recon);
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Sidecar path for a CSV report: `x.csv` → `x.meta.json`.
pub fn sidecar_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("meta.json")
}

/// Writes the report. CSV output also writes the metadata sidecar.
pub fn emit_report(report: &RunReport, format: ReportFormat, path: &Path) -> Result<()> {
    match format {
        ReportFormat::Csv => {
            write_atomic(path, report.to_csv().as_bytes())?;
            let meta = serde_json::to_string_pretty(&report.metadata)?;
            write_atomic(&sidecar_path(path), meta.as_bytes())
        }
        ReportFormat::Json => write_atomic(path, report.to_json()?.as_bytes()),
    }
}

pub fn load_report(path: &Path) -> Result<RunReport> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    RunReport::from_json(&text)
}

const SERIES: [(&str, &str); 3] = [
    ("clean", "#1f77b4"),
    ("adversarial", "#d62728"),
    ("reconstructed", "#2ca02c"),
];

/// Accuracy-vs-ε line chart with one polyline per series.
pub fn render_svg(report: &RunReport, title: &str) -> String {
    let (w, h) = (640.0, 420.0);
    let (left, right, top, bottom) = (70.0, 150.0, 40.0, 60.0);
    let pw = w - left - right;
    let ph = h - top - bottom;
    let eps_max = report.rows.iter().map(|r| r.epsilon).fold(0.0f64, f64::max);
    let eps_max = if eps_max > 0.0 { eps_max } else { 1.0 };
    let x = |e: f64| left + pw * e / eps_max;
    let y = |a: f64| top + ph * (1.0 - a);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#, left + pw / 2.0, escape(title));
    let _ = writeln!(
        s,
        r#"<line x1="{left}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#,
        top + ph,
        left + pw,
        top + ph
    );
    let _ = writeln!(s, r#"<line x1="{left}" y1="{top}" x2="{left}" y2="{}" stroke="black"/>"#, top + ph);
    for i in 0..=5 {
        let a = i as f64 / 5.0;
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="end">{a:.1}</text>"#,
            left - 6.0,
            y(a) + 4.0
        );
        let _ = writeln!(s, r##"<line x1="{left}" y1="{0}" x2="{1}" y2="{0}" stroke="#ddd"/>"##, y(a), left + pw);
    }
    for r in &report.rows {
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle">{:.2}</text>"#,
            x(r.epsilon),
            top + ph + 18.0,
            r.epsilon
        );
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">attack strength ε</text>"#, left + pw / 2.0, h - 15.0);
    let _ = writeln!(
        s,
        r#"<text x="18" y="{0}" text-anchor="middle" transform="rotate(-90 18 {0})">accuracy</text>"#,
        top + ph / 2.0
    );
    for (k, (name, color)) in SERIES.iter().enumerate() {
        let points: Vec<String> = report
            .rows
            .iter()
            .filter_map(|r| {
                let v = match k {
                    0 => Some(r.clean_acc),
                    1 => Some(r.adv_acc),
                    _ => r.recon_acc,
                };
                v.map(|v| format!("{:.2},{:.2}", x(r.epsilon), y(v)))
            })
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline data-series="{name}" fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
            points.join(" ")
        );
        let ly = top + 10.0 + 20.0 * k as f64;
        let lx = left + pw + 15.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#,
            lx + 20.0
        );
        let _ = writeln!(s, r#"<text x="{}" y="{}">{name}</text>"#, lx + 26.0, ly + 4.0);
    }
    s.push_str("</svg>\n");
    s
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
