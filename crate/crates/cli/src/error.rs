//! Exit-code taxonomy and the machine-readable error report.

use mcast_core::centralized::SolverError;
use mcast_core::equilibrium::EquilibriumError;
use mcast_core::mechanism::MechanismError;
use mcast_core::model::{ModelError, ValidationReport};
use serde::Serialize;
use serde_json::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Parse,
    Validation,
    A4,
    Numeric,
    Io,
}

impl Kind {
    pub fn code(self) -> u8 {
        match self {
            Kind::Parse => 2,
            Kind::Validation => 3,
            Kind::A4 => 4,
            // An output that cannot be written is reported like a numeric
            // failure: the run produced nothing usable.
            Kind::Numeric | Kind::Io => 5,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CliError {
    pub kind: Kind,
    pub code: u8,
    pub message: String,
    #[serde(skip_serializing_if = "Value::is_null")]
    pub details: Value,
}

impl CliError {
    pub fn new(kind: Kind, message: impl Into<String>) -> Self {
        Self {
            kind,
            code: kind.code(),
            message: message.into(),
            details: Value::Null,
        }
    }

    pub fn with_details(mut self, details: impl Serialize) -> Self {
        self.details = serde_json::to_value(details).unwrap_or(Value::Null);
        self
    }

    pub fn invalid_report(report: &ValidationReport) -> Self {
        Self::new(Kind::Validation, "instance violates modelling assumptions").with_details(report)
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        let kind = match e {
            ModelError::Parse(_) => Kind::Parse,
            _ => Kind::Validation,
        };
        Self::new(kind, e.to_string())
    }
}

impl From<MechanismError> for CliError {
    fn from(e: MechanismError) -> Self {
        let kind = match e {
            MechanismError::Parse(_) => Kind::Parse,
            _ => Kind::Validation,
        };
        Self::new(kind, e.to_string())
    }
}

impl From<SolverError> for CliError {
    fn from(e: SolverError) -> Self {
        match e {
            SolverError::InvalidInstance(ref report) => Self::invalid_report(report),
            SolverError::InvalidTolerance(_) => Self::new(Kind::Validation, e.to_string()),
            SolverError::InfeasibleStart | SolverError::NonConvergence { .. } => {
                Self::new(Kind::Numeric, e.to_string())
            }
        }
    }
}

impl From<EquilibriumError> for CliError {
    fn from(e: EquilibriumError) -> Self {
        match e {
            EquilibriumError::A4Violated(ref active) => Self::new(Kind::A4, e.to_string())
                .with_details(serde_json::json!({
                    "active_groups": active
                })),
            EquilibriumError::Mechanism(m) => m.into(),
            EquilibriumError::Solver(s) => s.into(),
            EquilibriumError::Model(m) => m.into(),
            EquilibriumError::EmptyBudget | EquilibriumError::NoRounds => {
                Self::new(Kind::Validation, e.to_string())
            }
            EquilibriumError::ScaleMismatch(_)
            | EquilibriumError::KinkEverywhere(_)
            | EquilibriumError::Degenerate { .. } => Self::new(Kind::Numeric, e.to_string()),
        }
    }
}
