use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::Method;
use crate::error::{HarnessError, HarnessResult};
use crate::experiment::{TargetKind, TrialRecord};
use crate::metrics::{acc_from_errors, bootstrap_std, error_cm, mean};

/// Output column order. The accuracy threshold column name records that the
/// boundary counts as correct.
pub const COLUMNS: [&str; 11] = [
    "method",
    "target",
    "trials",
    "targets",
    "failures",
    "mae_cm",
    "mae_std_cm",
    "acc_pct",
    "acc_std_pct",
    "acc_threshold_cm_inclusive",
    "runtime_s",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetGroup {
    All,
    Sources,
    FaultyMics,
}

impl TargetGroup {
    pub fn name(self) -> &'static str {
        match self {
            TargetGroup::All => "all",
            TargetGroup::Sources => "sources",
            TargetGroup::FaultyMics => "faulty_mics",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        [TargetGroup::All, TargetGroup::Sources, TargetGroup::FaultyMics]
            .into_iter()
            .find(|g| g.name() == s)
    }

    fn contains(self, kind: TargetKind) -> bool {
        match self {
            TargetGroup::All => true,
            TargetGroup::Sources => kind == TargetKind::Source,
            TargetGroup::FaultyMics => kind == TargetKind::FaultyMic,
        }
    }
}

/// Metrics of one method over one target group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub method: Method,
    pub target: TargetGroup,
    /// Test scenes evaluated.
    pub trials: usize,
    /// Localized targets, failed ones included.
    pub targets: usize,
    /// Targets without a prediction; excluded from the metrics.
    pub failures: usize,
    pub mae_cm: f64,
    pub mae_std_cm: f64,
    pub acc_pct: f64,
    pub acc_std_pct: f64,
    pub acc_threshold_cm_inclusive: f64,
    pub runtime_s: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricsReport {
    pub rows: Vec<ReportRow>,
    pub runtime_s: f64,
}

impl MetricsReport {
    pub fn row(&self, method: Method, target: TargetGroup) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.method == method && r.target == target)
    }

    /// The report as it reads back from an emitted file.
    pub fn rounded(&self) -> Self {
        let mut out = self.clone();
        out.runtime_s = round_sig(out.runtime_s);
        for r in &mut out.rows {
            r.runtime_s = out.runtime_s;
            for v in [
                &mut r.mae_cm,
                &mut r.mae_std_cm,
                &mut r.acc_pct,
                &mut r.acc_std_pct,
                &mut r.acc_threshold_cm_inclusive,
            ] {
                *v = round_sig(*v);
            }
        }
        out
    }
}

/// Rounds to 4 significant digits.
pub fn round_sig(v: f64) -> f64 {
    format!("{v:.3e}").parse().expect("formatted float parses")
}

/// Shortest decimal text of `v` rounded to 4 significant digits.
pub fn format_sig(v: f64) -> String {
    format!("{}", round_sig(v))
}

/// Errors in centimeters of the predicted targets of `method` in `group`,
/// in record order.
pub fn group_errors(records: &[TrialRecord], method: Method, group: TargetGroup) -> Vec<f64> {
    records
        .iter()
        .filter(|r| r.method == method && group.contains(r.target))
        .filter_map(|r| r.prediction.map(|p| error_cm(&p, &r.truth)))
        .collect()
}

/// Aggregates per-trial records into one row per method and nonempty target
/// group. Bootstrap resamples are seeded from `seed` and the method, so equal
/// error sets get equal uncertainty.
pub fn build_report(records: &[TrialRecord], threshold_cm: f64, resamples: usize, seed: u64) -> HarnessResult<MetricsReport> {
    if records.is_empty() {
        return Err(HarnessError::EmptyReport);
    }
    let methods: BTreeSet<Method> = records.iter().map(|r| r.method).collect();
    let mut rows = Vec::new();
    for method in methods {
        let mine: Vec<&TrialRecord> = records.iter().filter(|r| r.method == method).collect();
        let trials = mine.iter().map(|r| r.trial).collect::<BTreeSet<_>>().len();
        for group in [TargetGroup::All, TargetGroup::Sources, TargetGroup::FaultyMics] {
            let targets = mine.iter().filter(|r| group.contains(r.target)).count();
            if targets == 0 {
                continue;
            }
            let errors = group_errors(records, method, group);
            if errors.is_empty() {
                log::warn!("{method} has no successful {} predictions", group.name());
                continue;
            }
            let row_seed = seed.wrapping_add(method as u64);
            rows.push(ReportRow {
                method,
                target: group,
                trials,
                targets,
                failures: targets - errors.len(),
                mae_cm: mean(&errors),
                mae_std_cm: bootstrap_std(&errors, resamples, row_seed, mean),
                acc_pct: acc_from_errors(&errors, threshold_cm),
                acc_std_pct: bootstrap_std(&errors, resamples, row_seed, |e| acc_from_errors(e, threshold_cm)),
                acc_threshold_cm_inclusive: threshold_cm,
                runtime_s: 0.0,
            });
        }
    }
    Ok(MetricsReport { rows, runtime_s: 0.0 })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    JsonLines,
}

impl std::str::FromStr for Format {
    type Err = HarnessError;

    fn from_str(s: &str) -> HarnessResult<Self> {
        match s {
            "csv" => Ok(Format::Csv),
            "json-lines" | "jsonl" => Ok(Format::JsonLines),
            _ => Err(HarnessError::Config(format!("unknown output format `{s}`"))),
        }
    }
}

fn cells(report: &MetricsReport, row: &ReportRow) -> [String; 11] {
    [
        row.method.name().to_string(),
        row.target.name().to_string(),
        row.trials.to_string(),
        row.targets.to_string(),
        row.failures.to_string(),
        format_sig(row.mae_cm),
        format_sig(row.mae_std_cm),
        format_sig(row.acc_pct),
        format_sig(row.acc_std_pct),
        format_sig(row.acc_threshold_cm_inclusive),
        format_sig(report.runtime_s),
    ]
}

/// Renders `report`. CSV starts with a header line; JSON lines carry one
/// object per row with keys in column order. Numbers are written as bare
/// tokens in both formats.
pub fn emit_results(report: &MetricsReport, format: Format) -> String {
    let mut out = String::new();
    match format {
        Format::Csv => {
            out.push_str(&COLUMNS.join(","));
            out.push('\n');
            for row in &report.rows {
                out.push_str(&cells(report, row).join(","));
                out.push('\n');
            }
        }
        Format::JsonLines => {
            for row in &report.rows {
                let fields: Vec<String> = COLUMNS
                    .iter()
                    .zip(cells(report, row))
                    .enumerate()
                    .map(|(i, (k, v))| if i < 2 { format!("\"{k}\":\"{v}\"") } else { format!("\"{k}\":{v}") })
                    .collect();
                let _ = writeln!(out, "{{{}}}", fields.join(","));
            }
        }
    }
    out
}

pub fn write_report(report: &MetricsReport, path: &Path, format: Format) -> HarnessResult<()> {
    std::fs::write(path, emit_results(report, format)).map_err(|e| HarnessError::io(path, e))
}

fn bad(line: usize, msg: impl std::fmt::Display) -> HarnessError {
    HarnessError::Config(format!("report line {line}: {msg}"))
}

fn row_from_cells(line: usize, cells: &[&str]) -> HarnessResult<(ReportRow, f64)> {
    if cells.len() != COLUMNS.len() {
        return Err(bad(line, format!("expected {} fields, found {}", COLUMNS.len(), cells.len())));
    }
    let int = |i: usize| cells[i].parse::<usize>().map_err(|e| bad(line, format!("{}: {e}", COLUMNS[i])));
    let float = |i: usize| cells[i].parse::<f64>().map_err(|e| bad(line, format!("{}: {e}", COLUMNS[i])));
    let runtime = float(10)?;
    Ok((
        ReportRow {
            method: cells[0].parse().map_err(|e| bad(line, e))?,
            target: TargetGroup::parse(cells[1]).ok_or_else(|| bad(line, format!("unknown target `{}`", cells[1])))?,
            trials: int(2)?,
            targets: int(3)?,
            failures: int(4)?,
            mae_cm: float(5)?,
            mae_std_cm: float(6)?,
            acc_pct: float(7)?,
            acc_std_pct: float(8)?,
            acc_threshold_cm_inclusive: float(9)?,
            runtime_s: runtime,
        },
        runtime,
    ))
}

/// Parses text written by [`emit_results`].
pub fn parse_results(text: &str, format: Format) -> HarnessResult<MetricsReport> {
    let mut report = MetricsReport::default();
    let mut push = |(row, runtime): (ReportRow, f64)| {
        report.runtime_s = runtime;
        report.rows.push(row);
    };
    match format {
        Format::Csv => {
            let mut lines = text.lines().enumerate();
            match lines.next() {
                Some((_, header)) if header == COLUMNS.join(",") => {}
                _ => return Err(bad(1, "missing or unexpected header")),
            }
            for (i, line) in lines {
                let cells: Vec<&str> = line.split(',').collect();
                push(row_from_cells(i + 1, &cells)?);
            }
        }
        Format::JsonLines => {
            for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
                let obj: serde_json::Map<String, serde_json::Value> =
                    serde_json::from_str(line).map_err(|e| bad(i + 1, e))?;
                let mut owned = Vec::with_capacity(COLUMNS.len());
                for k in COLUMNS {
                    let v = obj.get(k).ok_or_else(|| bad(i + 1, format!("missing `{k}`")))?;
                    owned.push(match v {
                        serde_json::Value::String(s) => s.clone(),
                        other => other.to_string(),
                    });
                }
                let cells: Vec<&str> = owned.iter().map(String::as_str).collect();
                push(row_from_cells(i + 1, &cells)?);
            }
        }
    }
    Ok(report)
}

pub fn read_report(path: &Path, format: Format) -> HarnessResult<MetricsReport> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    parse_results(&text, format)
}
