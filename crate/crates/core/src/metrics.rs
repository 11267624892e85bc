//! Run metrics recomputable from the CSV log alone.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sim::LOG_COLUMNS;

#[derive(Debug, Clone, Error)]
pub enum MetricsError {
    #[error("log is empty")]
    Empty,
    #[error("log header does not match the documented schema")]
    BadHeader,
    #[error("row {row} has {got} fields, expected {expected}")]
    BadRow {
        row: usize,
        got: usize,
        expected: usize,
    },
    #[error("unparsable number in row {row}: {text}")]
    BadNumber { row: usize, text: String },
    #[error("unknown channel '{0}'")]
    UnknownChannel(String),
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Metrics {
    /// Mechanical cost of transport: mean positive joint power divided by
    /// weight times mean speed. None when the robot never moved.
    pub cost_of_transport: Option<f64>,
    pub mean_speed: f64,
    pub max_speed: f64,
    /// RMS COM tracking error against the plan references (m).
    pub com_tracking_rmse: f64,
    /// Minimum planner ZMP margin seen in the log (m).
    pub min_zmp_margin: f64,
    /// Integrated positive mechanical work (J).
    pub total_positive_work: f64,
    /// Mean positive mechanical power (W).
    pub mean_mechanical_power: f64,
    /// Median controller solve time (ms).
    pub wbc_solve_ms_median: f64,
    /// Median planner cycle time over planner ticks (ms).
    pub planner_solve_ms_median: f64,
}

/// Parsed log: header-validated rows of the fixed schema.
#[derive(Debug, Clone)]
pub struct ParsedLog {
    pub rows: Vec<Vec<f64>>,
}

impl ParsedLog {
    pub fn from_csv(text: &str) -> Result<ParsedLog, MetricsError> {
        let mut lines = text.lines();
        let header = lines.next().ok_or(MetricsError::Empty)?;
        let names: Vec<&str> = header.split(',').collect();
        if names != LOG_COLUMNS {
            return Err(MetricsError::BadHeader);
        }
        let mut rows = Vec::new();
        for (i, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != LOG_COLUMNS.len() {
                return Err(MetricsError::BadRow {
                    row: i + 2,
                    got: fields.len(),
                    expected: LOG_COLUMNS.len(),
                });
            }
            let mut row = Vec::with_capacity(fields.len());
            for f in fields {
                row.push(f.parse::<f64>().map_err(|_| MetricsError::BadNumber {
                    row: i + 2,
                    text: f.to_string(),
                })?);
            }
            rows.push(row);
        }
        if rows.is_empty() {
            return Err(MetricsError::Empty);
        }
        Ok(ParsedLog { rows })
    }

    pub fn column(&self, name: &str) -> Result<Vec<f64>, MetricsError> {
        let idx = LOG_COLUMNS
            .iter()
            .position(|c| *c == name)
            .ok_or_else(|| MetricsError::UnknownChannel(name.to_string()))?;
        Ok(self.rows.iter().map(|r| r[idx]).collect())
    }
}

fn median(values: &mut Vec<f64>) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Compute metrics from a parsed log. The cost of transport uses positive
/// mechanical power only (braking is not credited back).
pub fn compute_metrics(log: &ParsedLog) -> Result<Metrics, MetricsError> {
    let idx = |name: &str| LOG_COLUMNS.iter().position(|c| *c == name).unwrap();
    let i_t = idx("t");
    let i_vx = idx("base_vx");
    let i_vy = idx("base_vy");
    let i_tau0 = idx("tau_lf_haa");
    let i_dq0 = idx("dq_lf_haa");
    let i_com = idx("com_x");
    let i_com_ref = idx("com_ref_x");
    let i_margin = idx("zmp_margin");
    let i_wbc_ms = idx("wbc_ms");
    let i_planner_ms = idx("planner_ms");
    let i_mass = idx("mass_kg");

    let mut speed_sum = 0.0;
    let mut max_speed = 0.0f64;
    let mut pos_power_sum = 0.0;
    let mut pos_work = 0.0;
    let mut rmse_acc = 0.0;
    let mut min_margin = f64::INFINITY;
    let mut wbc_ms = Vec::with_capacity(log.rows.len());
    let mut planner_ms = Vec::new();
    let mut prev_t: Option<f64> = None;
    let mut prev_power: Option<f64> = None;

    for row in &log.rows {
        let speed = row[i_vx].hypot(row[i_vy]);
        speed_sum += speed;
        max_speed = max_speed.max(speed);

        let mut positive_power = 0.0;
        for j in 0..16 {
            positive_power += (row[i_tau0 + j] * row[i_dq0 + j]).max(0.0);
        }
        pos_power_sum += positive_power;
        if let (Some(t0), Some(p0)) = (prev_t, prev_power) {
            pos_work += 0.5 * (p0 + positive_power) * (row[i_t] - t0);
        }
        prev_t = Some(row[i_t]);
        prev_power = Some(positive_power);

        let mut err2 = 0.0;
        for a in 0..3 {
            let e = row[i_com + a] - row[i_com_ref + a];
            err2 += e * e;
        }
        rmse_acc += err2;

        if row[i_margin].is_finite() {
            min_margin = min_margin.min(row[i_margin]);
        }
        wbc_ms.push(row[i_wbc_ms]);
        if row[i_planner_ms] > 0.0 {
            planner_ms.push(row[i_planner_ms]);
        }
    }

    let n = log.rows.len() as f64;
    let mean_speed = speed_sum / n;
    let mean_power = pos_power_sum / n;
    let mass = log.rows[0][i_mass];
    let cost_of_transport = if mean_speed > 1e-6 {
        Some(mean_power / (mass * crate::model::GRAVITY * mean_speed))
    } else {
        None
    };
    Ok(Metrics {
        cost_of_transport,
        mean_speed,
        max_speed,
        com_tracking_rmse: (rmse_acc / n).sqrt(),
        min_zmp_margin: min_margin,
        total_positive_work: pos_work,
        mean_mechanical_power: mean_power,
        wbc_solve_ms_median: median(&mut wbc_ms),
        planner_solve_ms_median: median(&mut planner_ms),
    })
}

pub fn metrics_from_csv(text: &str) -> Result<Metrics, MetricsError> {
    compute_metrics(&ParsedLog::from_csv(text)?)
}

/// Select `t` plus the named channels as CSV text.
pub fn plot_data(text: &str, channels: &[&str]) -> Result<String, MetricsError> {
    let log = ParsedLog::from_csv(text)?;
    let mut indices = vec![0usize];
    for name in channels {
        let idx = LOG_COLUMNS
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| MetricsError::UnknownChannel(name.to_string()))?;
        indices.push(idx);
    }
    let mut out = String::new();
    out.push('t');
    for name in channels {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    for row in &log.rows {
        let mut first = true;
        for &idx in &indices {
            if !first {
                out.push(',');
            }
            out.push_str(&format!("{}", row[idx]));
            first = false;
        }
        out.push('\n');
    }
    Ok(out)
}

/// All channel names (for CLI diagnostics).
pub fn channel_names() -> Vec<&'static str> {
    LOG_COLUMNS.to_vec()
}

#[cfg(test)]
mod tests {
    use super::*;

    struct RunIdx;
    impl RunIdx {
        const VX: usize = 8;
        const DQ0: usize = 30;
        const TAU0: usize = 46;
        const MARGIN: usize = 89;
        const MASS: usize = 98;
    }

    /// Build a synthetic log with constant power and speed.
    fn synthetic_log(speed: f64, joint_torque: f64, joint_rate: f64, rows: usize) -> String {
        let mut out = LOG_COLUMNS.join(",");
        out.push('\n');
        for k in 0..rows {
            let t = k as f64 * 0.0025;
            let mut row = vec![0.0; LOG_COLUMNS.len()];
            row[0] = t;
            row[RunIdx::VX] = speed;
            row[RunIdx::TAU0] = joint_torque;
            row[RunIdx::DQ0] = joint_rate;
            row[RunIdx::MARGIN] = 0.1;
            row[RunIdx::MASS] = 30.0;
            let strings: Vec<String> = row.iter().map(|v| format!("{}", v)).collect();
            out.push_str(&strings.join(","));
            out.push('\n');
        }
        out
    }

    #[test]
    fn header_indices_match_schema() {
        assert_eq!(LOG_COLUMNS[RunIdx::VX], "base_vx");
        assert_eq!(LOG_COLUMNS[RunIdx::TAU0], "tau_lf_haa");
        assert_eq!(LOG_COLUMNS[RunIdx::DQ0], "dq_lf_haa");
        assert_eq!(LOG_COLUMNS[RunIdx::MARGIN], "zmp_margin");
        assert_eq!(LOG_COLUMNS[RunIdx::MASS], "mass_kg");
    }

    #[test]
    fn cot_of_constant_power_log_is_exact() {
        // P = 6 N·m · 2 rad/s = 12 W at v = 1 m/s, m = 30 kg.
        let csv = synthetic_log(1.0, 6.0, 2.0, 100);
        let metrics = metrics_from_csv(&csv).unwrap();
        let expected = 12.0 / (30.0 * crate::model::GRAVITY * 1.0);
        approx::assert_relative_eq!(
            metrics.cost_of_transport.unwrap(),
            expected,
            epsilon = 1e-12
        );
        approx::assert_relative_eq!(metrics.mean_speed, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn stationary_log_has_no_cot() {
        let csv = synthetic_log(0.0, 6.0, 2.0, 10);
        let metrics = metrics_from_csv(&csv).unwrap();
        assert!(metrics.cost_of_transport.is_none());
        assert_eq!(metrics.mean_speed, 0.0);
    }

    #[test]
    fn braking_power_not_credited() {
        let csv = synthetic_log(1.0, -6.0, 2.0, 10);
        let metrics = metrics_from_csv(&csv).unwrap();
        approx::assert_relative_eq!(metrics.cost_of_transport.unwrap(), 0.0);
        assert_eq!(metrics.total_positive_work, 0.0);
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        // Values written with shortest round-trip formatting parse back to
        // identical bits.
        let mut log = crate::sim::RunLog::default();
        let mut row = vec![0.0; LOG_COLUMNS.len()];
        row[0] = 0.1 + 0.2; // 0.30000000000000004
        row[5] = std::f64::consts::PI;
        row[98] = 30.0;
        log.rows.push(row.clone());
        let csv = log.to_csv();
        let parsed = ParsedLog::from_csv(&csv).unwrap();
        for (a, b) in row.iter().zip(&parsed.rows[0]) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn plot_data_selects_channels() {
        let csv = synthetic_log(1.0, 6.0, 2.0, 3);
        let out = plot_data(&csv, &["com_z"]).unwrap();
        let mut lines = out.lines();
        assert_eq!(lines.next().unwrap(), "t,com_z");
        assert_eq!(lines.count(), 3);
        assert!(matches!(
            plot_data(&csv, &["nope"]),
            Err(MetricsError::UnknownChannel(_))
        ));
    }

    #[test]
    fn malformed_log_rejected() {
        assert!(matches!(
            metrics_from_csv("bogus,header\n1,2\n"),
            Err(MetricsError::BadHeader)
        ));
        let mut csv = LOG_COLUMNS.join(",");
        csv.push_str("\n1,2,3\n");
        assert!(matches!(
            metrics_from_csv(&csv),
            Err(MetricsError::BadRow { .. })
        ));
    }
}
