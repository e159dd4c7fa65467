//! Report assembly: comma-separated machine tables plus a human-readable
//! summary. Emission is deterministic so regenerated reports are
//! byte-identical.

use crate::analysis::ProbeResult;
use crate::needle::{NeedleReport, PositionBucket};
use std::collections::BTreeMap;

/// All report files of one experiment, keyed by relative file name.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Reports {
    pub files: BTreeMap<String, String>,
    summary: Vec<String>,
}

impl Reports {
    pub fn new() -> Self {
        Reports::default()
    }

    pub fn add_file(&mut self, name: &str, contents: String) {
        self.files.insert(name.to_string(), contents);
    }

    pub fn note(&mut self, line: impl Into<String>) {
        self.summary.push(line.into());
    }

    pub fn section(&mut self, title: &str) {
        self.summary.push(String::new());
        self.summary.push(format!("== {} ==", title));
    }

    /// Soft directional expectation: logged, never a failure.
    pub fn soft_check(&mut self, what: &str, pass: bool) {
        self.summary
            .push(format!("[soft] {}: {}", what, if pass { "PASS" } else { "MISS" }));
    }

    pub fn finish(mut self) -> BTreeMap<String, String> {
        let mut text = self.summary.join("\n");
        text.push('\n');
        self.files.insert("summary.txt".into(), text);
        self.files
    }
}

/// `layer, d_mean, d_ci95, r, numerator, denominator` rows.
pub fn divergence_ratio_csv(
    d_mean: &[f64],
    d_ci95: &[f64],
    r: &[f64],
    numerator: &[f64],
    denominator: &[f64],
) -> String {
    let mut out = String::from("layer,d_mean,d_ci95,r,numerator,denominator\n");
    for l in 0..d_mean.len() {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            l, d_mean[l], d_ci95[l], r[l], numerator[l], denominator[l]
        ));
    }
    out
}

/// Per-model probe results: `model, task, mean_f1, <per-seed f1 columns>`.
pub fn probe_csv(rows: &[(String, ProbeResult)]) -> String {
    let mut out = String::from("model,task,mean_f1,per_seed_f1\n");
    for (model, r) in rows {
        let seeds = r
            .per_seed_f1
            .iter()
            .map(|v| v.to_string())
            .collect::<Vec<_>>()
            .join(" ");
        out.push_str(&format!("{},{},{},{}\n", model, r.task, r.mean_f1, seeds));
    }
    out
}

/// 5x3 accuracy grid plus the overall row.
pub fn needle_csv(report: &NeedleReport, lengths: &[usize]) -> String {
    let mut out = String::from("length,start,middle,end\n");
    for &l in lengths {
        let cell = |p: PositionBucket| {
            report
                .cell(l, p)
                .map(|c| c.accuracy().to_string())
                .unwrap_or_else(|| "nan".into())
        };
        out.push_str(&format!(
            "{},{},{},{}\n",
            l,
            cell(PositionBucket::Start),
            cell(PositionBucket::Middle),
            cell(PositionBucket::End)
        ));
    }
    out.push_str(&format!("overall,{},,\n", report.overall_accuracy()));
    out
}

pub fn sweep_csv(rows: &[(f64, u64, f64, f64)]) -> String {
    let mut out = String::from("decay_ratio,decay_tokens,detour_probe_f1,baseline_probe_f1\n");
    for (ratio, tokens, detour, baseline) in rows {
        out.push_str(&format!("{},{},{},{}\n", ratio, tokens, detour, baseline));
    }
    out
}

pub fn transplant_csv(rows: &[(String, f64, f64, f64)]) -> String {
    let mut out = String::from("transplant,f1,delta_vs_baseline,recovery_pct\n");
    for (name, f1, delta, recovery) in rows {
        out.push_str(&format!("{},{},{},{}\n", name, f1, delta, recovery));
    }
    out
}

pub fn freeze_csv(rows: &[(String, f64, f64)]) -> String {
    let mut out = String::from("condition,probe_f1,delta_vs_detour\n");
    for (name, f1, delta) in rows {
        out.push_str(&format!("{},{},{}\n", name, f1, delta));
    }
    out
}
