use std::fmt::Write as _;
use std::str::FromStr;

use super::{RunError, RunManifest};
use crate::metrics::SettingReport;
use crate::prompting::Strategy;
use crate::runner::Setting;

pub const METRIC_HEADERS: [&str; 4] = ["BLEURT ↑", "CLIPScore ↑", "Self-BLEURT ↓", "Div-2 ↑"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Markdown,
    Csv,
}

impl FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "md" | "markdown" => Ok(ReportFormat::Markdown),
            "csv" => Ok(ReportFormat::Csv),
            other => Err(format!(
                "unknown report format `{other}` (expected md or csv)"
            )),
        }
    }
}

/// Three decimals, with negative zero printed as zero.
pub fn format_value(v: f64) -> String {
    let s = format!("{v:.3}");
    if s == "-0.000" {
        "0.000".into()
    } else {
        s
    }
}

fn model_cell(setting: &Setting) -> String {
    match setting.strategy {
        Strategy::Baseline => setting.model_label.clone(),
        Strategy::Rona => format!("RONA + {}", setting.model_label),
    }
}

fn metric_cells(r: &SettingReport) -> [String; 4] {
    [
        r.bleurt_mean,
        r.clipscore_mean,
        r.self_sim_mean,
        r.div2_mean,
    ]
    .map(format_value)
}

/// Renders the per-dataset results tables.
///
/// Rows are grouped by task, then model, with each baseline row directly
/// above its relation-guided row. Cells without a report are left out.
pub fn render_report(manifest: &RunManifest, format: ReportFormat) -> Result<String, RunError> {
    let mut rows: Vec<(&Setting, &SettingReport)> = manifest
        .settings
        .iter()
        .filter_map(|c| c.report.as_ref().map(|r| (&c.setting, r)))
        .collect();
    if rows.is_empty() {
        return Err(RunError::EmptyManifest);
    }
    rows.sort_by_key(|(s, _)| s.order_key(&manifest.datasets));
    match format {
        ReportFormat::Markdown => {
            let mut out = markdown(&rows);
            let _ = writeln!(out, "\nScorer: `{}`", manifest.scorer.scorer_id);
            Ok(out)
        }
        ReportFormat::Csv => csv(&rows),
    }
}

fn markdown(rows: &[(&Setting, &SettingReport)]) -> String {
    let mut out = String::new();
    let mut current = None;
    for (setting, report) in rows {
        if current != Some(setting.dataset) {
            if current.is_some() {
                out.push('\n');
            }
            current = Some(setting.dataset);
            let _ = writeln!(out, "## {}\n", setting.dataset.label());
            let _ = writeln!(out, "| Task | Model | {} |", METRIC_HEADERS.join(" | "));
            out.push_str("|---|---|---:|---:|---:|---:|\n");
        }
        let _ = writeln!(
            out,
            "| {} | {} | {} |",
            setting.task.label(),
            model_cell(setting),
            metric_cells(report).join(" | ")
        );
    }
    out
}

fn csv(rows: &[(&Setting, &SettingReport)]) -> Result<String, RunError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["Dataset", "Task", "Model"];
    header.extend(METRIC_HEADERS);
    header.push("n_samples");
    let io = |e: csv::Error| RunError::Report(e.to_string());
    w.write_record(&header).map_err(io)?;
    for (setting, report) in rows {
        let mut record = vec![
            setting.dataset.label().to_string(),
            setting.task.label().to_string(),
            model_cell(setting),
        ];
        record.extend(metric_cells(report));
        record.push(report.n_samples.to_string());
        w.write_record(&record).map_err(io)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| RunError::Report(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}
