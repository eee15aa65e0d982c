use std::fs;
use std::path::Path;

use lyapcert::Error;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

pub const SCHEMA: u32 = 1;
pub const TOOL: &str = "lyapcert";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Pass,
    /// A certificate was computed and does not hold.
    Fail,
    /// Sampled evidence contradicts a stability property.
    Falsified,
    /// The run could not complete.
    Error,
}

impl Verdict {
    /// 0 pass, 2 failed or falsified, 1 operational error.
    pub fn exit_code(self) -> u8 {
        match self {
            Verdict::Pass => 0,
            Verdict::Fail | Verdict::Falsified => 2,
            Verdict::Error => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorInfo {
    pub kind: String,
    pub message: String,
    pub witness: Option<Vec<f64>>,
    /// Failing controller hypothesis (1, 2 or 3).
    pub condition: Option<u8>,
}

impl ErrorInfo {
    pub fn from_cli(e: &CliError) -> Self {
        match e {
            CliError::Core(core) => Self::from_core(core),
            CliError::Config(_) => Self::plain("config", e),
            CliError::Io(_) => Self::plain("io", e),
            CliError::Json(_) => Self::plain("json", e),
        }
    }

    fn plain(kind: &str, e: &CliError) -> Self {
        ErrorInfo {
            kind: kind.into(),
            message: e.to_string(),
            witness: None,
            condition: None,
        }
    }

    pub fn from_core(e: &Error) -> Self {
        let (kind, witness, condition) = match e {
            Error::Syntax { .. } => ("syntax", None, None),
            Error::UnknownIdentifier(_) => ("unknown-identifier", None, None),
            Error::DimensionMismatch(_) => ("dimension-mismatch", None, None),
            Error::Domain { .. } => ("domain", None, None),
            Error::InvalidArgument(_) => ("invalid-argument", None, None),
            Error::BlowUp { .. } => ("blow-up", None, None),
            Error::StepUnderflow { .. } => ("step-underflow", None, None),
            Error::TooManySteps(_) => ("too-many-steps", None, None),
            Error::NotHurwitz { .. } => ("not-hurwitz", None, None),
            Error::NotPositiveDefinite(_) => ("not-positive-definite", None, None),
            Error::Singular(_) => ("singular", None, None),
            Error::LesFalsified { witness, .. } => ("les-falsified", Some(witness.clone()), None),
            Error::AttractivityFalsified { witness, .. } => ("attractivity-falsified", Some(witness.clone()), None),
            Error::LinearizedDecayFalsified { witness, .. } => {
                ("linearized-decay-falsified", Some(witness.clone()), None)
            }
            Error::UnboundedBound(_) => ("unbounded-bound", None, None),
            Error::DecayDataInsufficient(_) => ("decay-data-insufficient", None, None),
            Error::UnreliableDerivative(_) => ("unreliable-derivative", None, None),
            Error::UnreliableDini(_) => ("unreliable-dini", None, None),
            Error::BoundViolation(_) => ("bound-violation", None, None),
            Error::EscapedDomain(p) => ("escaped-domain", Some(p.clone()), None),
            Error::NotIntegrable { witness, .. } => ("not-integrable", Some(witness.clone()), Some(3)),
            Error::HypothesisFailed { condition, .. } => ("hypothesis-failed", None, Some(*condition)),
            Error::Io(_) => ("io", None, None),
        };
        ErrorInfo {
            kind: kind.into(),
            message: e.to_string(),
            witness,
            condition,
        }
    }

    /// Falsifications and violated bounds fail the certificate; everything
    /// else is operational.
    pub fn verdict_for(e: &CliError) -> Verdict {
        match e {
            CliError::Core(core) if core.is_falsification() => Verdict::Falsified,
            CliError::Core(Error::BoundViolation(_)) => Verdict::Fail,
            _ => Verdict::Error,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemInfo {
    pub source: String,
    pub name: String,
    /// Canonical form of the resolved document.
    pub spec: String,
    pub dim: usize,
    pub e_dim: Option<usize>,
}

/// Contents of `report.json`. Nothing time- or host-dependent goes in, so
/// a fixed config and seed give byte-identical files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema: u32,
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config: RunConfig,
    pub system: Option<SystemInfo>,
    pub verdict: Verdict,
    pub error: Option<ErrorInfo>,
    pub result: Value,
}

impl Report {
    pub fn new(config: &RunConfig) -> Self {
        Report {
            schema: SCHEMA,
            tool: TOOL.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: config.command.name().into(),
            config: config.clone(),
            system: None,
            verdict: Verdict::Error,
            error: None,
            result: Value::Null,
        }
    }

    pub fn to_json(&self) -> CliResult<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn write(&self, dir: &Path) -> CliResult<()> {
        fs::write(dir.join("report.json"), self.to_json()?)?;
        Ok(())
    }
}
