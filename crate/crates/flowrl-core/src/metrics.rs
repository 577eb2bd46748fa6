//! Per-epoch training metrics and the fixed-schema CSV log.

use std::io::Write;
use std::path::Path;

use crate::error::Result;

pub const METRICS_HEADER: &str =
    "epoch,total_env_steps,mean_return,std_return,q_loss,v_loss,policy_loss,entropy_estimate,wall_clock_seconds";

#[derive(Debug, Clone)]
pub struct MetricRow {
    pub epoch: usize,
    pub total_env_steps: usize,
    pub mean_return: f64,
    pub std_return: f64,
    pub q_loss: f64,
    pub v_loss: f64,
    pub policy_loss: f64,
    pub entropy_estimate: f64,
    pub wall_clock_seconds: f64,
}

impl MetricRow {
    pub fn to_csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.epoch,
            self.total_env_steps,
            self.mean_return,
            self.std_return,
            self.q_loss,
            self.v_loss,
            self.policy_loss,
            self.entropy_estimate,
            self.wall_clock_seconds
        )
    }
}

pub fn write_metrics(path: &Path, rows: &[MetricRow]) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    writeln!(f, "{METRICS_HEADER}")?;
    for row in rows {
        writeln!(f, "{}", row.to_csv_line())?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_line_field_count_matches_header() {
        let row = MetricRow {
            epoch: 0,
            total_env_steps: 1000,
            mean_return: 1.5,
            std_return: 0.25,
            q_loss: 0.1,
            v_loss: 0.2,
            policy_loss: -0.3,
            entropy_estimate: 2.8,
            wall_clock_seconds: 1.25,
        };
        assert_eq!(
            row.to_csv_line().split(',').count(),
            METRICS_HEADER.split(',').count()
        );
    }
}
