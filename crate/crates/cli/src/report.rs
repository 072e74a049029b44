//! The JSON run report. Field order is declaration order; wall-clock data
//! lives only in the trailing `timing` field.

use std::fs;
use std::path::Path;

use hotv_core::{Certificate, EnergyBreakdown, SolveReport};
use serde::Serialize;
use serde_json::Value;

use crate::config::RunConfig;

pub const SCHEMA_TAG: &str = "hotv-report/1";

#[derive(Clone, Debug, Serialize)]
pub struct ErrorInfo {
    pub kind: &'static str,
    pub message: String,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct Timing {
    pub total_seconds: f64,
    pub solve_seconds: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct Report {
    pub schema: &'static str,
    pub command: String,
    pub status: &'static str,
    pub exit_code: i32,
    pub error: Option<ErrorInfo>,
    pub config: RunConfig,
    pub energy: Option<EnergyBreakdown>,
    pub solve: Option<SolveReport>,
    pub certificate: Option<Certificate>,
    pub results: Value,
    pub timing: Timing,
}

impl Report {
    pub fn new(command: &str, config: RunConfig) -> Self {
        Self {
            schema: SCHEMA_TAG,
            command: command.into(),
            status: "ok",
            exit_code: 0,
            error: None,
            config,
            energy: None,
            solve: None,
            certificate: None,
            results: Value::Null,
            timing: Timing::default(),
        }
    }

    pub fn fail(&mut self, code: i32, kind: &'static str, message: String) {
        self.status = "error";
        self.exit_code = code;
        self.error = Some(ErrorInfo { kind, message });
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn write(&self, path: &Path) -> std::io::Result<()> {
        fs::write(path, self.to_json())
    }
}
