//! CSV, SVG and metadata output for experiment results.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{auc_band, ExperimentCell, SweepRow};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvRecord {
    pub pair_a: String,
    pub pair_b: String,
    pub group: String,
    pub train_slice: String,
    pub test_slice: String,
    pub fraction: f64,
    pub n_train: usize,
    pub n_test: usize,
    /// Empty for skipped rows.
    pub auc: Option<f64>,
    pub params_json: String,
}

impl From<&ExperimentCell> for CsvRecord {
    fn from(c: &ExperimentCell) -> Self {
        CsvRecord {
            pair_a: c.pair_a.clone(),
            pair_b: c.pair_b.clone(),
            group: c.group.clone(),
            train_slice: c.train_slice.clone(),
            test_slice: c.test_slice.clone(),
            fraction: c.fraction,
            n_train: c.n_train,
            n_test: c.n_test,
            auc: Some(c.curve.auc),
            params_json: c.params.to_json(),
        }
    }
}

impl From<&SweepRow> for CsvRecord {
    fn from(r: &SweepRow) -> Self {
        match &r.cell {
            Some(c) => c.into(),
            None => CsvRecord {
                pair_a: r.pair_a.clone(),
                pair_b: r.pair_b.clone(),
                group: r.group.clone(),
                train_slice: super::ALL_SLICES.to_owned(),
                test_slice: super::ALL_SLICES.to_owned(),
                fraction: r.fraction,
                n_train: 0,
                n_test: 0,
                auc: None,
                params_json: serde_json::json!({ "skipped": r.skipped }).to_string(),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportFiles {
    pub csv: PathBuf,
    pub svgs: Vec<PathBuf>,
    pub metadata: PathBuf,
}

pub fn write_csv(records: &[CsvRecord], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_csv(path: &Path) -> Result<Vec<CsvRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| Ok(row?)).collect()
}

const PALETTE: [&str; 7] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2",
];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn file_safe(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '.' { c } else { '_' })
        .collect()
}

/// Cells sharing a pair, slices and fraction are drawn on one panel.
type PanelKey = (String, String, String, String, String);

fn panel_key(c: &ExperimentCell) -> PanelKey {
    (
        c.pair_a.clone(),
        c.pair_b.clone(),
        c.train_slice.clone(),
        c.test_slice.clone(),
        format!("{}", c.fraction),
    )
}

fn panel_name(k: &PanelKey) -> String {
    let mut name = format!("{}_vs_{}", k.0, k.1);
    if k.2 != super::ALL_SLICES || k.3 != super::ALL_SLICES {
        name.push_str(&format!("_train-{}_test-{}", k.2, k.3));
    }
    if k.4 != "1" {
        name.push_str(&format!("_top-{}", k.4));
    }
    file_safe(&name)
}

/// Self-contained SVG with one ROC polyline per cell and a dashed diagonal.
pub fn render_svg(title: &str, cells: &[&ExperimentCell]) -> String {
    const SIZE: f64 = 360.0;
    const PAD: f64 = 40.0;
    let px = |fpr: f64| PAD + fpr * SIZE;
    let py = |tpr: f64| PAD + (1.0 - tpr) * SIZE;
    let width = SIZE + 2.0 * PAD + 170.0;
    let height = SIZE + 2.0 * PAD;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="{width}" height="{height}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="20" text-anchor="middle" font-size="13">{}</text>"#,
        PAD + SIZE / 2.0,
        escape(title)
    );
    let _ = writeln!(
        s,
        r#"<rect x="{PAD}" y="{PAD}" width="{SIZE}" height="{SIZE}" fill="none" stroke="black"/>"#
    );
    let _ = writeln!(
        s,
        r#"<line class="chance" x1="{}" y1="{}" x2="{}" y2="{}" stroke="black" stroke-dasharray="4 4"/>"#,
        px(0.0),
        py(0.0),
        px(1.0),
        py(1.0)
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">False positive rate</text>"#,
        PAD + SIZE / 2.0,
        height - 8.0
    );
    let _ = writeln!(
        s,
        r#"<text x="12" y="{}" text-anchor="middle" transform="rotate(-90 12 {})">True positive rate</text>"#,
        PAD + SIZE / 2.0,
        PAD + SIZE / 2.0
    );
    for (i, c) in cells.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let points: Vec<String> = c
            .curve
            .points
            .iter()
            .map(|&(f, t)| format!("{:.4},{:.4}", px(f), py(t)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline class="roc" points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
            points.join(" ")
        );
        let y = PAD + 14.0 + 16.0 * i as f64;
        let lx = PAD + SIZE + 12.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx}" y1="{}" x2="{}" y2="{}" stroke="{color}" stroke-width="2"/>"#,
            y - 4.0,
            lx + 16.0,
            y - 4.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{y}">{} (AUC={:.2})</text>"#,
            lx + 20.0,
            escape(&c.group),
            c.curve.auc
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Writes `{name}.csv`, one SVG per panel and `{name}_meta.json` with the
/// AUC band of every cell. Skipped rows appear only in the CSV.
pub fn emit_report(
    cells: &[ExperimentCell],
    skipped: &[CsvRecord],
    out_dir: &Path,
    name: &str,
) -> Result<ReportFiles> {
    if cells.is_empty() && skipped.is_empty() {
        return Err(Error::InsufficientData("nothing to report".into()));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut records: Vec<CsvRecord> = cells.iter().map(CsvRecord::from).collect();
    records.extend_from_slice(skipped);
    let csv = out_dir.join(format!("{name}.csv"));
    write_csv(&records, &csv)?;

    let mut panels: BTreeMap<PanelKey, Vec<&ExperimentCell>> = BTreeMap::new();
    for c in cells {
        panels.entry(panel_key(c)).or_default().push(c);
    }
    let mut svgs = Vec::new();
    for (key, members) in &panels {
        let path = out_dir.join(format!("{}.svg", panel_name(key)));
        let title = format!("{} vs {}", key.0, key.1);
        std::fs::write(&path, render_svg(&title, members)).map_err(|e| Error::io(&path, e))?;
        svgs.push(path);
    }

    let bands: Vec<serde_json::Value> = cells
        .iter()
        .map(|c| {
            serde_json::json!({
                "pair_a": c.pair_a,
                "pair_b": c.pair_b,
                "group": c.group,
                "train_slice": c.train_slice,
                "test_slice": c.test_slice,
                "fraction": c.fraction,
                "auc": c.curve.auc,
                "band": auc_band(c.curve.auc),
            })
        })
        .collect();
    let meta = serde_json::json!({
        "rubric": {
            "excellent": [0.9, 1.0],
            "good": [0.8, 0.9],
            "fair": [0.7, 0.8],
            "poor": [0.6, 0.7],
            "fail": [0.5, 0.6],
        },
        "cells": bands,
        "skipped": skipped.len(),
    });
    let metadata = out_dir.join(format!("{name}_meta.json"));
    std::fs::write(&metadata, serde_json::to_string_pretty(&meta)?)
        .map_err(|e| Error::io(&metadata, e))?;
    Ok(ReportFiles { csv, svgs, metadata })
}
