//! Plain-text and CSV rendering of ranked tables and CTT reports.
//!
//! Text output rounds to two decimals; CSV and JSON keep full precision.

use std::fmt::Write as _;

use crate::analysis::{Axis, ComparisonReport, RankedTable};
use crate::ctt::CttReport;
use crate::matrix::ResponseMatrix;

fn axis_title(axis: Axis) -> &'static str {
    match axis {
        Axis::Persons => "Persons",
        Axis::Items => "Items",
    }
}

pub fn table_text(table: &RankedTable) -> String {
    let mut out = String::new();
    let order = match table.axis {
        Axis::Persons => "descending",
        Axis::Items => "ascending",
    };
    let _ = writeln!(
        out,
        "{} (standardized strength, {} by {})",
        axis_title(table.axis),
        order,
        table.sort_by.kind.title()
    );
    let label_w = table
        .rows
        .iter()
        .map(|r| r.label.chars().count())
        .chain(["label".len(), 2])
        .max()
        .unwrap_or(5);
    let col_w: Vec<usize> = table
        .columns
        .iter()
        .map(|c| c.kind.title().len().max(6))
        .collect();

    let _ = write!(out, "{:<label_w$}", "label");
    for (c, w) in table.columns.iter().zip(&col_w) {
        let _ = write!(out, "  {:>w$}", c.kind.title());
    }
    out.push('\n');
    for row in &table.rows {
        let _ = write!(out, "{:<label_w$}", row.label);
        for (v, w) in row.values.iter().zip(&col_w) {
            let _ = write!(out, "  {:>w$.2}", v);
        }
        out.push('\n');
    }
    if let Some(cmp) = &table.comparison {
        for (name, pick) in [("r", 0usize), ("z", 1)] {
            let _ = write!(out, "{:<label_w$}", name);
            for (c, w) in table.columns.iter().zip(&col_w) {
                match cmp.compared.iter().find(|m| m.model == *c) {
                    Some(m) => {
                        let v = if pick == 0 { m.r } else { m.z };
                        let _ = write!(out, "  {:>w$.3}", v);
                    }
                    None => {
                        let _ = write!(out, "  {:>w$}", "-");
                    }
                }
            }
            out.push('\n');
        }
        out.push_str(&comparison_text(cmp));
    }
    out
}

pub fn comparison_text(cmp: &ComparisonReport) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "baseline {}, n = {}, sigma_z = {:.3}",
        cmp.baseline_model.kind.title(),
        cmp.n,
        cmp.sigma_z
    );
    for p in &cmp.pairwise {
        let t = &p.test;
        let _ = writeln!(
            out,
            "{} vs {}: delta = {:.3}, sigma_delta = {:.3}, delta/sigma_delta = {:.2}, significant at 10% (one-sided): {}, reaches 1.64: {}",
            p.model_a.kind.title(),
            p.model_b.kind.title(),
            t.delta,
            t.sigma_delta,
            t.ratio,
            yes_no(t.significant_at_10pct),
            yes_no(t.reaches_quoted_boundary),
        );
    }
    out
}

fn yes_no(b: bool) -> &'static str {
    if b {
        "yes"
    } else {
        "no"
    }
}

/// CSV with a leading `row` column: `value` for table rows, `r` and `z` for
/// the comparison footer. Numbers are written with full precision.
pub fn table_csv(table: &RankedTable) -> Result<String, csv::Error> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    let axis = match table.axis {
        Axis::Persons => "persons",
        Axis::Items => "items",
    };
    let mut header = vec!["axis".to_string(), "row".into(), "label".into()];
    header.extend(table.columns.iter().map(|c| c.kind.code().to_string()));
    w.write_record(&header)?;
    for row in &table.rows {
        let mut rec = vec![axis.to_string(), "value".into(), row.label.clone()];
        rec.extend(row.values.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    if let Some(cmp) = &table.comparison {
        for name in ["r", "z"] {
            let mut rec = vec![axis.to_string(), name.to_string(), String::new()];
            rec.extend(table.columns.iter().map(|c| {
                cmp.compared
                    .iter()
                    .find(|m| m.model == *c)
                    .map(|m| if name == "r" { m.r } else { m.z }.to_string())
                    .unwrap_or_default()
            }));
            w.write_record(&rec)?;
        }
    }
    let bytes = w.into_inner().map_err(|e| e.into_error())?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn ctt_text(report: &CttReport, matrix: &ResponseMatrix) -> String {
    let mut out = String::new();
    let fmt_r = |r: &Option<f64>| r.map_or_else(|| "undef".to_string(), |v| format!("{v:.3}"));
    let _ = writeln!(out, "Items (item-total r threshold {})", report.item_r_threshold);
    let _ = writeln!(
        out,
        "{:<12} {:>10} {:>10} {:>8}",
        "item", "difficulty", "item-tot r", "flagged"
    );
    for (j, id) in matrix.item_ids().iter().enumerate() {
        let _ = writeln!(
            out,
            "{:<12} {:>10.3} {:>10} {:>8}",
            id,
            report.difficulty[j],
            fmt_r(&report.item_total_r[j]),
            yes_no(report.flagged_items.contains(&j))
        );
    }
    let _ = writeln!(out, "Persons (quota {})", report.person_quota);
    let _ = writeln!(out, "{:<12} {:>10} {:>8}", "person", "pers-tot r", "flagged");
    for (i, id) in matrix.person_ids().iter().enumerate() {
        let _ = writeln!(
            out,
            "{:<12} {:>10} {:>8}",
            id,
            fmt_r(&report.person_total_r[i]),
            yes_no(report.flagged_persons.contains(&i))
        );
    }
    out
}

pub fn ctt_csv(report: &CttReport, matrix: &ResponseMatrix) -> Result<String, csv::Error> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(["axis", "label", "difficulty", "total_r", "flagged"])?;
    let r = |v: &Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for (j, id) in matrix.item_ids().iter().enumerate() {
        w.write_record([
            "items",
            id,
            &report.difficulty[j].to_string(),
            &r(&report.item_total_r[j]),
            &report.flagged_items.contains(&j).to_string(),
        ])?;
    }
    for (i, id) in matrix.person_ids().iter().enumerate() {
        w.write_record([
            "persons",
            id,
            "",
            &r(&report.person_total_r[i]),
            &report.flagged_persons.contains(&i).to_string(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| e.into_error())?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}
