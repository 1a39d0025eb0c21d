//! Round metrics and their CSV persistence.
//!
//! The metrics schema is fixed:
//! `round,exit,loss,token_err,clients_total,clients_exit_m,wallclock_ms`
//! with one row per (evaluation round, exit). Float columns print with
//! Rust's shortest round-trip formatting, so identical runs produce
//! byte-identical files (the wall-clock column is the one legitimately
//! non-deterministic field).
//!
//! A second file with schema
//! `round,exit,clients_m,clients_total,pi,xi,eta_m`
//! logs the per-round effective-weight diagnostic.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::{bail, Context, Result};
use eefl_core::EffectiveWeightReport;

pub const METRICS_HEADER: &str =
    "round,exit,loss,token_err,clients_total,clients_exit_m,wallclock_ms";
pub const XI_HEADER: &str = "round,exit,clients_m,clients_total,pi,xi,eta_m";

/// Evaluation snapshot for one round.
#[derive(Clone, Debug, PartialEq)]
pub struct RoundMetrics {
    pub round: u64,
    pub per_exit_loss: Vec<f64>,
    pub per_exit_err: Vec<f64>,
    /// Clients that trained this round (0 for the pre-training snapshot).
    pub clients_total: usize,
    /// |C_m| per sub-net size for this round.
    pub clients_per_exit: Vec<usize>,
    pub wallclock_ms: u64,
}

impl RoundMetrics {
    pub fn exits(&self) -> usize {
        self.per_exit_loss.len()
    }
}

/// Effective-weight diagnostic for one round.
#[derive(Clone, Debug, PartialEq)]
pub struct XiRecord {
    pub round: u64,
    pub report: EffectiveWeightReport,
}

pub fn metrics_to_csv(metrics: &[RoundMetrics]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for m in metrics {
        for exit in 0..m.exits() {
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                m.round,
                exit + 1,
                m.per_exit_loss[exit],
                m.per_exit_err[exit],
                m.clients_total,
                m.clients_per_exit[exit],
                m.wallclock_ms
            )
            .expect("writing to String cannot fail");
        }
    }
    out
}

pub fn write_metrics_csv(path: &Path, metrics: &[RoundMetrics]) -> Result<()> {
    std::fs::write(path, metrics_to_csv(metrics))
        .with_context(|| format!("writing metrics {}", path.display()))
}

fn parse_field<T: std::str::FromStr>(field: &str, line_no: usize, name: &str) -> Result<T> {
    field
        .trim()
        .parse()
        .map_err(|_| anyhow::anyhow!("line {line_no}: cannot parse {name} from `{field}`"))
}

pub fn metrics_from_csv(text: &str) -> Result<Vec<RoundMetrics>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim() == METRICS_HEADER => {}
        Some((_, header)) => bail!("line 1: unexpected header `{header}`"),
        None => bail!("empty metrics file"),
    }

    let mut out: Vec<RoundMetrics> = Vec::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 7 {
            bail!("line {line_no}: expected 7 fields, found {}", fields.len());
        }
        let round: u64 = parse_field(fields[0], line_no, "round")?;
        let exit: usize = parse_field(fields[1], line_no, "exit")?;
        let loss: f64 = parse_field(fields[2], line_no, "loss")?;
        let err: f64 = parse_field(fields[3], line_no, "token_err")?;
        let clients_total: usize = parse_field(fields[4], line_no, "clients_total")?;
        let clients_exit: usize = parse_field(fields[5], line_no, "clients_exit_m")?;
        let wallclock: u64 = parse_field(fields[6], line_no, "wallclock_ms")?;

        let start_new = out.last().map(|m| m.round != round).unwrap_or(true);
        if start_new {
            if exit != 1 {
                bail!("line {line_no}: round {round} does not start at exit 1");
            }
            out.push(RoundMetrics {
                round,
                per_exit_loss: vec![],
                per_exit_err: vec![],
                clients_total,
                clients_per_exit: vec![],
                wallclock_ms: wallclock,
            });
        }
        let current = out.last_mut().unwrap();
        if exit != current.per_exit_loss.len() + 1 {
            bail!(
                "line {line_no}: exit {exit} out of order (expected {})",
                current.per_exit_loss.len() + 1
            );
        }
        if clients_total != current.clients_total {
            bail!("line {line_no}: clients_total changed within round {round}");
        }
        current.per_exit_loss.push(loss);
        current.per_exit_err.push(err);
        current.clients_per_exit.push(clients_exit);
    }
    Ok(out)
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<RoundMetrics>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading metrics {}", path.display()))?;
    metrics_from_csv(&text)
}

pub fn xi_to_csv(records: &[XiRecord]) -> String {
    let mut out = String::from(XI_HEADER);
    out.push('\n');
    for r in records {
        let total = r.report.total_clients();
        for exit in 0..r.report.client_counts.len() {
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.round,
                exit + 1,
                r.report.client_counts[exit],
                total,
                r.report.pi[exit],
                r.report.xi[exit],
                r.report.eta[exit]
            )
            .expect("writing to String cannot fail");
        }
    }
    out
}

pub fn write_xi_csv(path: &Path, records: &[XiRecord]) -> Result<()> {
    std::fs::write(path, xi_to_csv(records))
        .with_context(|| format!("writing xi log {}", path.display()))
}

/// Compare two metric sets field-by-field, ignoring the wall-clock column
/// (the only field that legitimately varies between identical runs).
/// Returns the first difference as a human-readable string.
pub fn first_difference(a: &[RoundMetrics], b: &[RoundMetrics]) -> Option<String> {
    if a.len() != b.len() {
        return Some(format!("{} vs {} evaluation rounds", a.len(), b.len()));
    }
    for (x, y) in a.iter().zip(b) {
        if x.round != y.round {
            return Some(format!("round {} vs {}", x.round, y.round));
        }
        if x.clients_total != y.clients_total {
            return Some(format!("round {}: clients_total differs", x.round));
        }
        if x.clients_per_exit != y.clients_per_exit {
            return Some(format!("round {}: per-exit coverage differs", x.round));
        }
        for exit in 0..x.exits().max(y.exits()) {
            let (lx, ly) = (x.per_exit_loss.get(exit), y.per_exit_loss.get(exit));
            if lx.map(|v| v.to_bits()) != ly.map(|v| v.to_bits()) {
                return Some(format!(
                    "round {} exit {}: loss {lx:?} vs {ly:?}",
                    x.round,
                    exit + 1
                ));
            }
            let (ex, ey) = (x.per_exit_err.get(exit), y.per_exit_err.get(exit));
            if ex.map(|v| v.to_bits()) != ey.map(|v| v.to_bits()) {
                return Some(format!(
                    "round {} exit {}: token_err {ex:?} vs {ey:?}",
                    x.round,
                    exit + 1
                ));
            }
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_metrics() -> Vec<RoundMetrics> {
        vec![
            RoundMetrics {
                round: 0,
                per_exit_loss: vec![2.0794415416798357, 2.1],
                per_exit_err: vec![0.875, 0.9],
                clients_total: 0,
                clients_per_exit: vec![0, 0],
                wallclock_ms: 3,
            },
            RoundMetrics {
                round: 5,
                per_exit_loss: vec![1.5, 1.25],
                per_exit_err: vec![0.5, 0.421875],
                clients_total: 6,
                clients_per_exit: vec![4, 2],
                wallclock_ms: 120,
            },
        ]
    }

    #[test]
    fn csv_round_trip() {
        let metrics = sample_metrics();
        let text = metrics_to_csv(&metrics);
        let parsed = metrics_from_csv(&text).unwrap();
        assert_eq!(parsed, metrics);
        // Floats survive with full precision.
        assert!(text.contains("2.0794415416798357"));
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let mut text = metrics_to_csv(&sample_metrics());
        text.push_str("5,3,abc,0,6,1,9\n");
        let err = metrics_from_csv(&text).unwrap_err().to_string();
        assert!(err.contains("line 6"), "{err}");

        let bad_header = "round,exit\n";
        assert!(metrics_from_csv(bad_header)
            .unwrap_err()
            .to_string()
            .contains("line 1"));
    }

    #[test]
    fn difference_ignores_wallclock() {
        let a = sample_metrics();
        let mut b = sample_metrics();
        b[1].wallclock_ms = 9999;
        assert_eq!(first_difference(&a, &b), None);
        b[1].per_exit_loss[0] += 1e-15;
        assert!(first_difference(&a, &b).is_some());
    }

    #[test]
    fn xi_csv_shape() {
        let record = XiRecord {
            round: 3,
            report: EffectiveWeightReport {
                client_counts: vec![2, 1, 0],
                pi: vec![2.0 / 3.0, 1.0 / 3.0, 0.0],
                xi: vec![3.0, 3.0, 0.0],
                eta: vec![0.03, 0.03, 0.0],
            },
        };
        let text = xi_to_csv(&[record]);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[0], XI_HEADER);
        assert!(lines[1].starts_with("3,1,2,3,"));
    }
}
