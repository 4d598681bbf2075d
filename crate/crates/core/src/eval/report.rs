use std::fmt::Write as _;

use super::run::EpisodeMetrics;
use crate::error::{Error, Result};
use crate::model::ScopeMode;

pub const REPORT_HEADER: &str = "size,agents,mode,cases,success_rate,mean_steps,mean_comm_pairs";
pub const CASES_HEADER: &str = "case_id,size,agents,success,steps,comm_pairs";

/// One aggregated (size, agents, mode) cell.
#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub size: usize,
    pub agents: usize,
    pub mode: ScopeMode,
    pub cases: usize,
    pub success_rate: f64,
    pub mean_steps: f64,
    pub mean_comm_pairs: f64,
}

/// Aggregated results plus `key=value` provenance lines.
#[derive(Clone, Debug, PartialEq)]
pub struct Report {
    pub meta: Vec<(String, String)>,
    pub rows: Vec<ReportRow>,
}

impl Report {
    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn suite_hash(&self) -> Option<&str> {
        self.meta("suite_hash")
    }

    /// `# key=value` lines, then the CSV header and rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.meta {
            let _ = writeln!(out, "# {k}={}", v.replace('\n', "\\n"));
        }
        out.push_str(REPORT_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.size, r.agents, r.mode, r.cases, r.success_rate, r.mean_steps, r.mean_comm_pairs
            );
        }
        out
    }

    /// Parses [`Report::to_csv`] output; `path` only labels errors.
    pub fn from_csv(text: &str, path: &str) -> Result<Self> {
        let err = |line: usize, msg: String| Error::Parse {
            path: path.to_string(),
            line,
            msg,
        };
        let mut meta = Vec::new();
        let mut rows = Vec::new();
        let mut seen_header = false;
        for (k, raw) in text.lines().enumerate() {
            let line_no = k + 1;
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                if let Some((key, value)) = rest.trim().split_once('=') {
                    meta.push((key.to_string(), value.replace("\\n", "\n")));
                }
                continue;
            }
            if !seen_header {
                if line != REPORT_HEADER {
                    return Err(err(
                        line_no,
                        format!("expected header `{REPORT_HEADER}`, got `{line}`"),
                    ));
                }
                seen_header = true;
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 7 {
                return Err(err(line_no, format!("expected 7 fields, got {}", f.len())));
            }
            let int = |i: usize| {
                f[i].parse::<usize>()
                    .map_err(|_| err(line_no, format!("bad integer `{}`", f[i])))
            };
            let real = |i: usize| {
                f[i].parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| err(line_no, format!("bad number `{}`", f[i])))
            };
            let mode = f[2]
                .parse()
                .map_err(|e: Error| err(line_no, e.to_string()))?;
            rows.push(ReportRow {
                size: int(0)?,
                agents: int(1)?,
                mode,
                cases: int(3)?,
                success_rate: real(4)?,
                mean_steps: real(5)?,
                mean_comm_pairs: real(6)?,
            });
        }
        if !seen_header {
            return Err(err(
                text.lines().count().max(1),
                "missing CSV header".into(),
            ));
        }
        Ok(Self { meta, rows })
    }
}

/// Per-(size, agents) means over every case, successful or not. Cells
/// without cases do not appear.
pub fn aggregate(metrics: &[EpisodeMetrics], mode: ScopeMode) -> Vec<ReportRow> {
    let mut cells: Vec<(usize, usize)> = metrics.iter().map(|m| (m.size, m.agents)).collect();
    cells.sort_unstable();
    cells.dedup();
    cells
        .into_iter()
        .map(|(size, agents)| {
            let ms: Vec<&EpisodeMetrics> = metrics
                .iter()
                .filter(|m| m.size == size && m.agents == agents)
                .collect();
            let n = ms.len() as f64;
            ReportRow {
                size,
                agents,
                mode,
                cases: ms.len(),
                success_rate: ms.iter().filter(|m| m.success).count() as f64 / n,
                mean_steps: ms.iter().map(|m| m.steps as f64).sum::<f64>() / n,
                mean_comm_pairs: ms.iter().map(|m| m.comm_pairs as f64).sum::<f64>() / n,
            }
        })
        .collect()
}

/// Per-case lines.
pub fn cases_csv(metrics: &[EpisodeMetrics]) -> String {
    let mut out = String::from(CASES_HEADER);
    out.push('\n');
    for m in metrics {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            m.case_id, m.size, m.agents, m.success as u8, m.steps, m.comm_pairs
        );
    }
    out
}

/// `b / a` with division guards: equal values give 1, a zero
/// denominator otherwise gives `inf`.
pub fn ratio(a: f64, b: f64) -> String {
    if a == b {
        "1".to_string()
    } else if a == 0.0 {
        "inf".to_string()
    } else {
        format!("{}", b / a)
    }
}

pub const COMPARE_HEADER: &str =
    "size,agents,cases,success_dcc,success_rr_n2,mean_steps_dcc,mean_steps_rr_n2,\
mean_comm_pairs_dcc,mean_comm_pairs_rr_n2,comm_ratio_rr_n2_over_dcc";

/// Side-by-side table of a DCC report and an RR-N2 report over the same
/// suite.
pub fn compare_modes(dcc: &Report, rr: &Report) -> Result<String> {
    let (a, b) = (
        dcc.suite_hash().unwrap_or(""),
        rr.suite_hash().unwrap_or(""),
    );
    if a.is_empty() || a != b {
        return Err(Error::SuiteHashMismatch(a.to_string(), b.to_string()));
    }
    let mut out = format!("# suite_hash={a}\n{COMPARE_HEADER}\n");
    for d in dcc.rows.iter().filter(|r| r.mode == ScopeMode::Dcc) {
        let Some(r) = rr
            .rows
            .iter()
            .find(|r| r.mode == ScopeMode::RrN2 && r.size == d.size && r.agents == d.agents)
        else {
            continue;
        };
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            d.size,
            d.agents,
            d.cases,
            d.success_rate,
            r.success_rate,
            d.mean_steps,
            r.mean_steps,
            d.mean_comm_pairs,
            r.mean_comm_pairs,
            ratio(d.mean_comm_pairs, r.mean_comm_pairs)
        );
    }
    Ok(out)
}

pub const PLOT_HEADER: &str = "size,x_agents,series,metric,y";

/// Long-format rows `(size, agents, mode, metric, value)`, three metrics
/// per report row.
pub fn plot_data(report: &Report) -> String {
    let mut out = format!("{PLOT_HEADER}\n");
    for r in &report.rows {
        for (metric, y) in [
            ("success_rate", r.success_rate),
            ("mean_steps", r.mean_steps),
            ("mean_comm_pairs", r.mean_comm_pairs),
        ] {
            let _ = writeln!(out, "{},{},{},{metric},{y}", r.size, r.agents, r.mode);
        }
    }
    out
}
