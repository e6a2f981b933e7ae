//! Markdown comparison tables over evaluation reports and run manifests.

use std::fmt::Write as _;

use super::protocol::EvalReport;
use crate::store::RunManifest;

fn column_key(r: &EvalReport) -> String {
    match r.k {
        Some(k) => format!("{} ({}, k={k})", r.task_id, r.algorithm),
        None => format!("{} ({})", r.task_id, r.algorithm),
    }
}

/// Methods as rows, task/algorithm pairs as columns, cells `mean ± std` in
/// percent. Partial reports are starred.
pub fn comparison_table(reports: &[EvalReport]) -> String {
    let mut columns: Vec<String> = Vec::new();
    let mut methods: Vec<String> = Vec::new();
    for r in reports {
        let c = column_key(r);
        if !columns.contains(&c) {
            columns.push(c);
        }
        if !methods.contains(&r.method) {
            methods.push(r.method.clone());
        }
    }
    let mut s = String::new();
    let _ = writeln!(s, "| method | {} |", columns.join(" | "));
    let _ = writeln!(s, "|---|{}", "---|".repeat(columns.len()));
    for m in &methods {
        let cells: Vec<String> = columns
            .iter()
            .map(|c| {
                match reports.iter().rev().find(|r| &r.method == m && &column_key(r) == c) {
                    Some(r) => match (r.mean, r.std) {
                        (Some(mean), Some(std)) => {
                            format!("{:.2} ± {:.2}{}", mean * 100.0, std * 100.0, if r.partial { "*" } else { "" })
                        }
                        _ => "failed".to_string(),
                    },
                    None => "-".to_string(),
                }
            })
            .collect();
        let _ = writeln!(s, "| {m} | {} |", cells.join(" | "));
    }
    if reports.iter().any(|r| r.partial) {
        s.push_str("\n\\* partial: some runs failed\n");
    }
    s
}

/// One row per generation run with its budget.
pub fn manifest_table(manifests: &[RunManifest]) -> String {
    let mut s = String::new();
    s.push_str("| run | task | variant | seeds | attempted | realized | members | partial |\n");
    s.push_str("|---|---|---|---|---|---|---|---|\n");
    for m in manifests {
        let c = m.counts;
        let _ = writeln!(
            s,
            "| {} | {} | {} | {} | {} | {} | {} | {} |",
            &m.run_id[..12.min(m.run_id.len())],
            m.task_id,
            m.variant,
            c.seeds,
            c.attempted,
            c.realized,
            c.training_members,
            if m.partial { "yes" } else { "no" }
        );
    }
    s
}
