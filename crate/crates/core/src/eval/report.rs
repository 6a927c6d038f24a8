//! Planner x task report: SR and SS for P2P, HF and their average.

use super::metrics::{MetricsTable, SS_VERSION};
use crate::error::{Error, Result};
use crate::types::TaskKind;

const COLUMNS: [&str; 6] = ["sr_p2p", "sr_hf", "sr_avg", "ss_p2p", "ss_hf", "ss_avg"];

/// One report line. Values are rounded to one decimal; missing tasks are `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub planner: String,
    pub values: [Option<f64>; 6],
}

fn round1(x: f64) -> f64 {
    (x * 10.0).round() / 10.0 + 0.0
}

fn avg(a: Option<f64>, b: Option<f64>) -> Option<f64> {
    match (a, b) {
        (Some(a), Some(b)) => Some((a + b) / 2.0),
        (a, b) => a.or(b),
    }
}

impl ReportRow {
    /// Averages use the unrounded per-task values; rounding happens last.
    pub fn from_table(t: &MetricsTable) -> Vec<ReportRow> {
        t.planners()
            .into_iter()
            .map(|p| {
                let p2p = t.get(p, TaskKind::P2p);
                let hf = t.get(p, TaskKind::Hf);
                let sr = (p2p.map(|r| r.success_rate), hf.map(|r| r.success_rate));
                let ss = (p2p.map(|r| r.social_score), hf.map(|r| r.social_score));
                let raw = [sr.0, sr.1, avg(sr.0, sr.1), ss.0, ss.1, avg(ss.0, ss.1)];
                ReportRow { planner: p.to_string(), values: raw.map(|v| v.map(round1)) }
            })
            .collect()
    }
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.1}")).unwrap_or_default()
}

pub fn report_csv(rows: &[ReportRow]) -> String {
    let mut s = format!("# social score {SS_VERSION}, 0-100 scale\nplanner,{}\n", COLUMNS.join(","));
    for r in rows {
        let cells: Vec<String> = r.values.iter().map(|&v| cell(v)).collect();
        s.push_str(&format!("{},{}\n", r.planner, cells.join(",")));
    }
    s
}

pub fn report_markdown(rows: &[ReportRow]) -> String {
    let mut s = String::from("| Planner | SR P2P | SR HF | SR AVG | SS P2P | SS HF | SS AVG |\n");
    s.push_str("|---|---:|---:|---:|---:|---:|---:|\n");
    for r in rows {
        let cells: Vec<String> = r.values.iter().map(|&v| v.map(|x| format!("{x:.1}")).unwrap_or_else(|| "-".into())).collect();
        s.push_str(&format!("| {} | {} |\n", r.planner, cells.join(" | ")));
    }
    s.push_str(&format!("\nSR in percent. SS is the declared social score {SS_VERSION} on a 0-100 scale.\n"));
    s
}

fn parse_value(s: &str) -> Result<Option<f64>> {
    let s = s.trim();
    if s.is_empty() || s == "-" {
        return Ok(None);
    }
    s.parse().map(Some).map_err(|_| Error::Config(format!("bad report value `{s}`")))
}

pub fn parse_report_csv(text: &str) -> Result<Vec<ReportRow>> {
    let mut lines = text.lines().filter(|l| !l.starts_with('#') && !l.trim().is_empty());
    let header = lines.next().ok_or_else(|| Error::Config("empty report".into()))?;
    if header != format!("planner,{}", COLUMNS.join(",")) {
        return Err(Error::Config(format!("unexpected report header `{header}`")));
    }
    lines.map(|l| parse_cells(l.split(',').collect())).collect()
}

pub fn parse_report_markdown(text: &str) -> Result<Vec<ReportRow>> {
    text.lines()
        .filter(|l| l.starts_with("| ") && !l.starts_with("| Planner"))
        .map(|l| parse_cells(l.trim_matches('|').split('|').map(str::trim).collect()))
        .collect()
}

fn parse_cells(cells: Vec<&str>) -> Result<ReportRow> {
    if cells.len() != 7 {
        return Err(Error::Config(format!("report row has {} cells, expected 7", cells.len())));
    }
    let mut values = [None; 6];
    for (v, c) in values.iter_mut().zip(&cells[1..]) {
        *v = parse_value(c)?;
    }
    Ok(ReportRow { planner: cells[0].trim().to_string(), values })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::MetricsRow;

    fn row(planner: &str, task: TaskKind, sr: f64, ss: f64) -> MetricsRow {
        MetricsRow {
            planner: planner.into(),
            task,
            episodes: 50,
            successes: 0,
            collisions: 0,
            timeouts: 0,
            crashes: 0,
            success_rate: sr,
            social_score: ss,
            collision_rate: 0.0,
            timeout_rate: 0.0,
            mean_nav_time: None,
            mean_discomfort: 0.0,
            feedback_episodes: 0,
        }
    }

    fn table() -> MetricsTable {
        MetricsTable {
            rows: vec![
                row("ORCA_baseline", TaskKind::P2p, 42.0, 35.04),
                row("ORCA_baseline", TaskKind::Hf, 20.0, 24.0),
                row("SALM", TaskKind::P2p, 90.0, 80.25),
                row("SALM", TaskKind::Hf, 71.0, 60.0),
            ],
        }
    }

    #[test]
    fn two_planners_six_columns() {
        let rows = ReportRow::from_table(&table());
        assert_eq!(rows.len(), 2);
        assert!(rows.iter().all(|r| r.values.iter().all(Option::is_some)));
        assert_eq!(rows[0].values[2], Some(31.0));
        // (80.25 + 60) / 2 = 70.125 rounds to 70.1; rounding first would give 70.2
        assert_eq!(rows[1].values[5], Some(70.1));
    }

    #[test]
    fn markdown_and_csv_agree() {
        let rows = ReportRow::from_table(&table());
        let from_csv = parse_report_csv(&report_csv(&rows)).unwrap();
        let from_md = parse_report_markdown(&report_markdown(&rows)).unwrap();
        assert_eq!(from_csv, rows);
        assert_eq!(from_md, from_csv);
    }

    #[test]
    fn missing_task_falls_back_to_single_column() {
        let t = MetricsTable { rows: vec![row("SA-RLNM", TaskKind::P2p, 80.0, 70.0)] };
        let rows = ReportRow::from_table(&t);
        assert_eq!(rows[0].values, [Some(80.0), None, Some(80.0), Some(70.0), None, Some(70.0)]);
        assert_eq!(parse_report_markdown(&report_markdown(&rows)).unwrap(), rows);
    }

    #[test]
    fn reports_carry_the_score_version() {
        let rows = ReportRow::from_table(&table());
        assert!(report_csv(&rows).contains(SS_VERSION));
        assert!(report_markdown(&rows).contains(SS_VERSION));
    }
}
