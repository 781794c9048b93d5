//! Report rendering: markdown tables with baseline deltas, and plain CSV
//! that round-trips for regression diffing.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::core::{ReportRow, SabotageStage};
use crate::harness::HarnessError;

/// Rows with this model name are the unrefined baseline; other rows render
/// their HI/CQS deltas against the baseline row for the same dataset and
/// stage.
pub const BASELINE_MODEL: &str = "baseline";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Markdown,
    Csv,
}

impl FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            "csv" => Ok(ReportFormat::Csv),
            other => Err(format!("unknown report format {other:?}; use markdown or csv")),
        }
    }
}

fn sorted(rows: &[ReportRow]) -> Vec<ReportRow> {
    let mut rows = rows.to_vec();
    rows.sort_by(|a, b| {
        (a.model.as_str(), a.dataset.as_str(), a.stage)
            .cmp(&(b.model.as_str(), b.dataset.as_str(), b.stage))
    });
    rows
}

fn find_baseline<'a>(
    rows: &'a [ReportRow],
    dataset: &str,
    stage: SabotageStage,
) -> Option<&'a ReportRow> {
    rows.iter()
        .find(|r| r.model == BASELINE_MODEL && r.dataset == dataset && r.stage == stage)
}

fn metric_cell(value: f64, baseline: Option<f64>) -> String {
    match baseline {
        Some(base) => format!("{value:.2} ({:+.2})", value - base),
        None => format!("{value:.2}"),
    }
}

/// Markdown table sorted by (model, dataset, stage). Non-baseline rows show
/// signed deltas against the matching baseline row, mirroring the
/// "0.25 (-0.56)" style of the source tables.
pub fn render_markdown(rows: &[ReportRow]) -> Result<String, HarnessError> {
    if rows.is_empty() {
        return Err(HarnessError::EmptyRows);
    }
    let rows = sorted(rows);
    let mut out = String::new();
    out.push_str("| Model | Dataset | Stage | HI | CQS | WR | Mean ms | N |\n");
    out.push_str("|---|---|---|---|---|---|---|---|\n");
    for row in &rows {
        let baseline = if row.model == BASELINE_MODEL {
            None
        } else {
            find_baseline(&rows, &row.dataset, row.stage)
        };
        let hi = metric_cell(row.hi_mean, baseline.map(|b| b.hi_mean));
        let cqs = metric_cell(row.cqs_mean, baseline.map(|b| b.cqs_mean));
        let wr = match row.wr {
            Some(wr) => format!("{wr:.2}"),
            None => "-".to_string(),
        };
        writeln!(
            out,
            "| {} | {} | {} | {} | {} | {} | {:.1} | {} |",
            row.model,
            row.dataset,
            row.stage.name(),
            hi,
            cqs,
            wr,
            row.elapsed_ms_mean,
            row.n
        )
        .expect("writing to a String cannot fail");
    }
    Ok(out)
}

/// CSV with one header line and full-precision values; `load_rows` reads it
/// back exactly.
pub fn render_csv(rows: &[ReportRow]) -> Result<String, HarnessError> {
    if rows.is_empty() {
        return Err(HarnessError::EmptyRows);
    }
    let mut writer = csv::Writer::from_writer(Vec::new());
    for row in sorted(rows) {
        writer.serialize(row)?;
    }
    let bytes = writer.into_inner().map_err(|e| e.into_error())?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

/// Reads rows from a CSV produced by [`render_csv`].
pub fn load_rows(path: &Path) -> Result<Vec<ReportRow>, HarnessError> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut rows = Vec::new();
    for row in reader.deserialize() {
        rows.push(row?);
    }
    Ok(rows)
}

/// Renders `rows` in the chosen format and writes the result to `path`.
pub fn emit_report(rows: &[ReportRow], format: ReportFormat, path: &Path) -> Result<(), HarnessError> {
    let content = match format {
        ReportFormat::Markdown => render_markdown(rows)?,
        ReportFormat::Csv => render_csv(rows)?,
    };
    std::fs::write(path, content)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(model: &str, dataset: &str, stage: SabotageStage, hi: f64, wr: Option<f64>) -> ReportRow {
        ReportRow {
            model: model.to_string(),
            dataset: dataset.to_string(),
            stage,
            hi_mean: hi,
            cqs_mean: 0.5,
            wr,
            elapsed_ms_mean: 12.0,
            n: 50,
        }
    }

    #[test]
    fn markdown_has_header_and_one_line_per_row() {
        let rows = vec![
            row("full", "qa", SabotageStage::Stage1, 0.2, Some(0.8)),
            row("full", "qa", SabotageStage::Stage2, 0.3, Some(0.7)),
        ];
        let md = render_markdown(&rows).unwrap();
        let lines: Vec<&str> = md.lines().collect();
        assert_eq!(lines.len(), 4);
        assert!(lines[0].contains("| HI | CQS | WR |"));
        assert!(lines[2].contains("| full | qa | stage1 |"));
    }

    #[test]
    fn deltas_render_against_the_matching_baseline() {
        let rows = vec![
            row("full", "qa", SabotageStage::Stage2, 0.25, Some(0.9)),
            row(BASELINE_MODEL, "qa", SabotageStage::Stage2, 0.81, None),
        ];
        let md = render_markdown(&rows).unwrap();
        assert!(md.contains("0.25 (-0.56)"), "markdown was:\n{md}");
        let baseline_line = md
            .lines()
            .find(|l| l.contains("| baseline |"))
            .unwrap();
        assert!(baseline_line.contains("| 0.81 |"), "no delta on the baseline row");
        assert!(baseline_line.contains("| - |"), "baseline has no win rate");
    }

    #[test]
    fn rows_sort_by_model_dataset_stage() {
        let rows = vec![
            row("full", "zeta", SabotageStage::Stage1, 0.2, None),
            row("full", "alpha", SabotageStage::Stage3, 0.2, None),
            row("full", "alpha", SabotageStage::Stage1, 0.2, None),
            row("ablated", "zeta", SabotageStage::Stage1, 0.2, None),
        ];
        let md = render_markdown(&rows).unwrap();
        let order: Vec<usize> = ["| ablated | zeta", "| full | alpha | stage1", "| full | alpha | stage3", "| full | zeta"]
            .iter()
            .map(|needle| md.find(needle).unwrap())
            .collect();
        assert!(order.windows(2).all(|w| w[0] < w[1]), "order was {order:?}");
    }

    #[test]
    fn csv_round_trips_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rows.csv");
        let rows = vec![
            row("full", "qa", SabotageStage::Stage1, 1.0 / 3.0, Some(0.625)),
            row(BASELINE_MODEL, "qa", SabotageStage::Stage1, 0.81, None),
        ];
        emit_report(&rows, ReportFormat::Csv, &path).unwrap();
        let back = load_rows(&path).unwrap();
        assert_eq!(back, sorted(&rows));
    }

    #[test]
    fn empty_rows_are_rejected() {
        assert!(matches!(render_markdown(&[]), Err(HarnessError::EmptyRows)));
        assert!(matches!(render_csv(&[]), Err(HarnessError::EmptyRows)));
    }

    #[test]
    fn format_parses_from_strings() {
        assert_eq!("markdown".parse::<ReportFormat>().unwrap(), ReportFormat::Markdown);
        assert_eq!("CSV".parse::<ReportFormat>().unwrap(), ReportFormat::Csv);
        assert!("pdf".parse::<ReportFormat>().is_err());
    }
}
