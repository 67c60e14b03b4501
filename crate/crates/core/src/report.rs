//! Rendering of the metrics table (aligned text and pivoted CSV).
//!
//! Rendered values are rounded to two decimals; full precision lives only
//! in `metrics.csv`.

use crate::domain::SectionType;
use crate::eval::{ClassRow, ModelKind, ReportCell};

fn section_label(section: SectionType) -> &'static str {
    match section {
        SectionType::Instructional => "INSTR.",
        SectionType::Assessment => "ASSESS.",
    }
}

/// Model columns present in the cells, in fixed model order.
fn model_columns(cells: &[ReportCell]) -> Vec<ModelKind> {
    ModelKind::ALL
        .into_iter()
        .filter(|m| cells.iter().any(|c| c.model == *m))
        .collect()
}

fn cell_value(
    cells: &[ReportCell],
    section: SectionType,
    model: ModelKind,
    row: ClassRow,
) -> Option<f64> {
    cells
        .iter()
        .find(|c| c.section == section && c.model == model && c.row == row)
        .map(|c| c.f1)
}

/// Aligned plain-text table, one row per (section, class).
pub fn render_text(cells: &[ReportCell]) -> String {
    let models = model_columns(cells);
    let mut out = String::new();
    out.push_str(&format!("{:<9} {:<9}", "Section", "Class"));
    for m in &models {
        out.push_str(&format!(" {:>7}", m.short_name()));
    }
    out.push('\n');
    for section in SectionType::ALL {
        for row in ClassRow::ALL {
            out.push_str(&format!(
                "{:<9} {:<9}",
                section_label(section),
                row.table_label()
            ));
            for m in &models {
                match cell_value(cells, section, *m, row) {
                    Some(v) => out.push_str(&format!(" {:>7.2}", v)),
                    None => out.push_str(&format!(" {:>7}", "-")),
                }
            }
            out.push('\n');
        }
    }
    out
}

/// Table-shaped CSV: `section,class` then one column per model.
pub fn render_csv(cells: &[ReportCell]) -> String {
    let models = model_columns(cells);
    let mut out = String::from("section,class");
    for m in &models {
        out.push(',');
        out.push_str(m.short_name());
    }
    out.push('\n');
    for section in SectionType::ALL {
        for row in ClassRow::ALL {
            out.push_str(&format!("{},{}", section_label(section), row.table_label()));
            for m in &models {
                match cell_value(cells, section, *m, row) {
                    Some(v) => out.push_str(&format!(",{v:.2}")),
                    None => out.push(','),
                }
            }
            out.push('\n');
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn full_cells() -> Vec<ReportCell> {
        let mut cells = Vec::new();
        for section in SectionType::ALL {
            for model in ModelKind::ALL {
                for row in ClassRow::ALL {
                    cells.push(ReportCell {
                        section,
                        model,
                        row,
                        f1: 0.736,
                        support: 10,
                    });
                }
            }
        }
        cells
    }

    #[test]
    fn text_table_has_expected_rows_and_header() {
        let text = render_text(&full_cells());
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 7);
        for token in ["Appr", "CP", "Ms", "FUSION"] {
            assert!(lines[0].contains(token), "header missing {token}");
        }
        for token in ["INSTR.", "ASSESS."] {
            assert!(text.contains(token));
        }
        for token in ["On-Task", "Off-Task", "OVERALL"] {
            assert_eq!(text.matches(token).count(), 2, "{token}");
        }
        // Rendered values are rounded to 2 decimals.
        assert!(text.contains("0.74"));
        assert!(!text.contains("0.736"));
    }

    #[test]
    fn csv_table_is_pivoted() {
        let csv = render_csv(&full_cells());
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "section,class,Appr,CP,Ms,FUSION");
        assert_eq!(
            lines.next().unwrap(),
            "INSTR.,On-Task,0.74,0.74,0.74,0.74"
        );
        assert_eq!(csv.lines().count(), 7);
    }

    #[test]
    fn fusion_column_is_dropped_when_absent() {
        let cells: Vec<ReportCell> = full_cells()
            .into_iter()
            .filter(|c| c.model != ModelKind::Fusion)
            .collect();
        let text = render_text(&cells);
        assert!(!text.contains("FUSION"));
        let csv = render_csv(&cells);
        assert_eq!(csv.lines().next().unwrap(), "section,class,Appr,CP,Ms");
    }
}
