use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::EvalRecord;
use crate::table::SizeBucket;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ReportError {
    #[error("no records to aggregate")]
    EmptyRun,
}

/// Accuracy over one group. `accuracy` is `correct / count`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupStat {
    pub count: usize,
    pub correct: usize,
    pub accuracy: f64,
}

impl GroupStat {
    fn of<'a>(records: impl Iterator<Item = &'a EvalRecord>) -> GroupStat {
        let (count, correct) = records.fold((0, 0), |(n, c), r| (n + 1, c + usize::from(r.correct)));
        GroupStat {
            count,
            correct,
            accuracy: if count == 0 { 0.0 } else { correct as f64 / count as f64 },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryStats {
    pub mean_coarse: f64,
    pub mean_fine: f64,
    pub mean_final: f64,
    pub mean_total: f64,
    pub max_coarse: u32,
    pub max_fine: u32,
    pub max_final: u32,
    pub max_total: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub overall: GroupStat,
    /// Non-empty size buckets, smallest first.
    pub by_size: BTreeMap<SizeBucket, GroupStat>,
    /// Executed chain length to accuracy.
    pub by_chain_length: BTreeMap<usize, GroupStat>,
    pub queries: QueryStats,
    /// Flag name to number of records carrying it.
    pub flags: BTreeMap<String, usize>,
    pub modes: Vec<String>,
    pub template_versions: Vec<String>,
}

pub fn aggregate(records: &[EvalRecord]) -> Result<Report, ReportError> {
    if records.is_empty() {
        return Err(ReportError::EmptyRun);
    }
    let mut by_size: BTreeMap<SizeBucket, Vec<&EvalRecord>> = BTreeMap::new();
    let mut by_chain: BTreeMap<usize, Vec<&EvalRecord>> = BTreeMap::new();
    let mut flags: BTreeMap<String, usize> = BTreeMap::new();
    for r in records {
        by_size.entry(r.size_bucket).or_default().push(r);
        by_chain.entry(r.history_length).or_default().push(r);
        let mut distinct = r.flags.clone();
        distinct.sort();
        distinct.dedup();
        for f in distinct {
            *flags.entry(f).or_default() += 1;
        }
    }
    let n = records.len() as f64;
    let mean = |f: fn(&EvalRecord) -> u32| records.iter().map(|r| f64::from(f(r))).sum::<f64>() / n;
    let max = |f: fn(&EvalRecord) -> u32| records.iter().map(f).max().unwrap_or(0);
    let mut modes: Vec<String> = records.iter().map(|r| r.mode.name().to_string()).collect();
    modes.sort();
    modes.dedup();
    let mut template_versions: Vec<String> = records.iter().map(|r| r.template_version.clone()).collect();
    template_versions.sort();
    template_versions.dedup();
    Ok(Report {
        overall: GroupStat::of(records.iter()),
        by_size: by_size
            .into_iter()
            .map(|(k, v)| (k, GroupStat::of(v.into_iter())))
            .collect(),
        by_chain_length: by_chain
            .into_iter()
            .map(|(k, v)| (k, GroupStat::of(v.into_iter())))
            .collect(),
        queries: QueryStats {
            mean_coarse: mean(|r| r.budget.coarse),
            mean_fine: mean(|r| r.budget.fine),
            mean_final: mean(|r| r.budget.final_),
            mean_total: mean(|r| r.budget.total()),
            max_coarse: max(|r| r.budget.coarse),
            max_fine: max(|r| r.budget.fine),
            max_final: max(|r| r.budget.final_),
            max_total: max(|r| r.budget.total()),
        },
        flags,
        modes,
        template_versions,
    })
}

fn pct(g: &GroupStat) -> String {
    format!("{:6.2}%  ({}/{})", g.accuracy * 100.0, g.correct, g.count)
}

/// Plain-text rendering of a report.
pub fn render_report(report: &Report) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "Overall accuracy     {}", pct(&report.overall));
    let _ = writeln!(s, "Modes                {}", report.modes.join(", "));
    let _ = writeln!(s, "Templates            {}", report.template_versions.join(", "));
    let _ = writeln!(s, "\nBy table size");
    for (bucket, g) in &report.by_size {
        let _ = writeln!(s, "  {:<18} {}", bucket.name(), pct(g));
    }
    let _ = writeln!(s, "\nBy chain length");
    for (len, g) in &report.by_chain_length {
        let _ = writeln!(s, "  {:<18} {}", len, pct(g));
    }
    let q = &report.queries;
    let _ = writeln!(s, "\nQueries per question   mean     max");
    for (name, m, x) in [
        ("coarse", q.mean_coarse, q.max_coarse),
        ("fine", q.mean_fine, q.max_fine),
        ("final", q.mean_final, q.max_final),
        ("total", q.mean_total, q.max_total),
    ] {
        let _ = writeln!(s, "  {name:<18} {m:7.2} {x:7}");
    }
    if !report.flags.is_empty() {
        let _ = writeln!(s, "\nFlags");
        for (f, n) in &report.flags {
            let _ = writeln!(s, "  {f:<18} {n}");
        }
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub accuracy: f64,
    pub correct: usize,
    pub count: usize,
    /// Accuracy minus the baseline's, in percentage points.
    pub delta_points: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub baseline: String,
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    /// `variants` pairs a name with its report; the first one is the baseline.
    pub fn new(variants: &[(String, Report)]) -> Option<AblationReport> {
        let (base_name, base) = variants.first()?;
        Some(AblationReport {
            baseline: base_name.clone(),
            rows: variants
                .iter()
                .map(|(name, r)| AblationRow {
                    variant: name.clone(),
                    accuracy: r.overall.accuracy,
                    correct: r.overall.correct,
                    count: r.overall.count,
                    delta_points: (r.overall.accuracy - base.overall.accuracy) * 100.0,
                })
                .collect(),
        })
    }

    pub fn render(&self) -> String {
        let mut s = format!("{:<28} {:>9} {:>9}\n", "variant", "accuracy", "delta");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<28} {:>8.2}% {:>+9.2}",
                r.variant,
                r.accuracy * 100.0,
                r.delta_points
            );
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::answer::TaskKind;
    use crate::gateway::BudgetCounts;
    use crate::harness::{DatasetTag, RunMode};

    fn record(id: &str, correct: bool, chain: usize, bucket: SizeBucket) -> EvalRecord {
        EvalRecord {
            task_id: id.into(),
            dataset: DatasetTag::Fixture,
            task: TaskKind::Qa,
            mode: RunMode::Offline,
            split: None,
            template_version: "v".into(),
            question: "q".into(),
            gold: vec!["a".into()],
            predicted: vec![],
            raw_answer: None,
            correct,
            history: vec!["f_group_by(A)".into(); chain],
            history_length: chain,
            table_tokens: 1,
            size_bucket: bucket,
            final_rows: 1,
            final_columns: 1,
            budget: BudgetCounts { coarse: 0, fine: chain as u32 + 1, final_: 1 },
            flags: vec![],
            coarse_notes: vec![],
            trace: String::new(),
        }
    }

    #[test]
    fn arithmetic_and_partitions() {
        let rs = vec![
            record("a", true, 0, SizeBucket::Small),
            record("b", false, 1, SizeBucket::Small),
            record("c", true, 1, SizeBucket::Large),
            record("d", false, 3, SizeBucket::Medium),
        ];
        let r = aggregate(&rs).unwrap();
        assert_eq!(r.overall.accuracy, 0.5);
        let sizes: Vec<usize> = r.by_chain_length.values().map(|g| g.count).collect();
        assert_eq!(sizes, vec![1, 2, 1]);
        let recombined: usize = r.by_size.values().map(|g| g.correct).sum();
        assert_eq!(recombined, r.overall.correct);
        let weighted: f64 = r.by_size.values().map(|g| g.accuracy * g.count as f64).sum();
        assert!((weighted - r.overall.correct as f64).abs() < 1e-9);
        assert_eq!(r.queries.max_total, 5);
        assert_eq!(r.queries.mean_final, 1.0);
        assert!(render_report(&r).contains("50.00%  (2/4)"));
    }

    #[test]
    fn empty_run_is_an_error() {
        assert_eq!(aggregate(&[]).unwrap_err(), ReportError::EmptyRun);
    }

    #[test]
    fn ablation_deltas() {
        let full = aggregate(&[record("a", true, 1, SizeBucket::Small)]).unwrap();
        let worse = aggregate(&[record("a", false, 1, SizeBucket::Small)]).unwrap();
        let a = AblationReport::new(&[("full".into(), full), ("no_fine".into(), worse)]).unwrap();
        assert_eq!(a.rows[1].delta_points, -100.0);
        assert!(a.render().contains("no_fine"));
    }
}
