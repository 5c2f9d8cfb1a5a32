use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::UnlearningReport;
use crate::corpus::Side;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub label: String,
    pub report: UnlearningReport,
}

impl ReportRow {
    pub fn new(label: impl Into<String>, report: UnlearningReport) -> Self {
        Self {
            label: label.into(),
            report,
        }
    }
}

fn probe_names(rows: &[ReportRow]) -> Vec<String> {
    let set: BTreeSet<&String> = rows.iter().flat_map(|r| r.report.probe_accuracies.keys()).collect();
    set.into_iter().cloned().collect()
}

fn pct(x: f64) -> String {
    format!("{:.2}", 100.0 * x)
}

/// Fixed-width table with columns Forget S., Retain S., Avg. and one column
/// per probe task, all in percent. Nonsense scopes print as `NS`; negative
/// forget scores carry a `*`.
pub fn render_grid(rows: &[ReportRow]) -> String {
    let probes = probe_names(rows);
    let mut header = vec!["Method".to_string(), "Forget S.".into(), "Retain S.".into(), "Avg.".into()];
    header.extend(probes.iter().cloned());
    let mut table = vec![header];
    let mut flagged = false;
    for row in rows {
        let r = &row.report;
        let forget = if r.is_nonsense(Side::Forget) {
            "NS".to_string()
        } else if r.negative_forget_score() {
            flagged = true;
            format!("{}*", pct(r.forget_score))
        } else {
            pct(r.forget_score)
        };
        let retain = if r.is_nonsense(Side::Retain) {
            "NS".to_string()
        } else {
            pct(r.retain_score)
        };
        let mut line = vec![row.label.clone(), forget, retain, pct(r.avg_unlearning_score)];
        line.extend(
            probes
                .iter()
                .map(|p| r.probe_accuracies.get(p).map_or_else(|| "-".to_string(), |&a| pct(a))),
        );
        table.push(line);
    }
    let widths: Vec<usize> = (0..table[0].len())
        .map(|c| table.iter().map(|l| l[c].chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for (i, line) in table.iter().enumerate() {
        let cells: Vec<String> = line
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(c, (s, &w))| if c == 0 { format!("{s:<w$}") } else { format!("{s:>w$}") })
            .collect();
        out.push_str(cells.join("  ").trim_end());
        out.push('\n');
        if i == 0 {
            out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
            out.push('\n');
        }
    }
    if flagged {
        out.push_str("* negative forget score: the unlearned model answers more forget questions correctly\n");
    }
    out
}

/// Tab-separated version of [`render_grid`] with unrounded fractions.
pub fn render_tsv(rows: &[ReportRow]) -> String {
    let probes = probe_names(rows);
    let mut out = String::from(
        "method\tacc_o_forget\tacc_u_forget\tacc_o_retain\tacc_u_retain\tforget_score\tretain_score\tavg\tforget_ns\tretain_ns",
    );
    for p in &probes {
        out.push_str(&format!("\tprobe_{p}"));
    }
    out.push('\n');
    for row in rows {
        let r = &row.report;
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            row.label,
            r.acc_o_forget,
            r.acc_u_forget,
            r.acc_o_retain,
            r.acc_u_retain,
            r.forget_score,
            r.retain_score,
            r.avg_unlearning_score,
            r.is_nonsense(Side::Forget),
            r.is_nonsense(Side::Retain)
        ));
        for p in &probes {
            match r.probe_accuracies.get(p) {
                Some(a) => out.push_str(&format!("\t{a}")),
                None => out.push('\t'),
            }
        }
        out.push('\n');
    }
    out
}
