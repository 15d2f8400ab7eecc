use airlens::airdata::AirDataError;
use airlens::codeexec::CodeExecError;
use airlens::cost::CostError;
use airlens::eval::EvalError;
use airlens::gateway::{GatewayError, ProviderError};
use airlens::orchestrator::{ArtifactError, OrchestratorError};

/// Error class of a failed command; each maps to a stable exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("data: {0}")]
    Data(String),
    #[error("provider: {0}")]
    Provider(String),
    #[error("compliance: {0}")]
    Compliance(String),
    #[error("evaluation: {0}")]
    Evaluation(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
            CliError::Provider(_) => 4,
            CliError::Compliance(_) => 5,
            CliError::Evaluation(_) => 6,
        }
    }

    pub fn io(path: &std::path::Path, e: std::io::Error) -> Self {
        CliError::Data(format!("{}: {e}", path.display()))
    }
}

impl From<AirDataError> for CliError {
    fn from(e: AirDataError) -> Self {
        let msg = e.to_string();
        match e {
            AirDataError::InvalidLocation(_) | AirDataError::HoursOutOfRange { .. } => CliError::Usage(msg),
            AirDataError::Transport { .. } | AirDataError::Config(_) => CliError::Provider(msg),
            _ => CliError::Data(msg),
        }
    }
}

impl From<CostError> for CliError {
    fn from(e: CostError) -> Self {
        let msg = format!("pricing: {e}");
        match e {
            CostError::Unpriced(_) | CostError::Fraction(_) => CliError::Usage(msg),
            _ => CliError::Data(msg),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        CliError::Evaluation(e.to_string())
    }
}

impl From<ProviderError> for CliError {
    fn from(e: ProviderError) -> Self {
        CliError::Provider(e.to_string())
    }
}

impl From<GatewayError> for CliError {
    fn from(e: GatewayError) -> Self {
        CliError::Provider(e.to_string())
    }
}

impl From<CodeExecError> for CliError {
    fn from(e: CodeExecError) -> Self {
        let msg = format!("code execution: {e}");
        match e {
            CodeExecError::Format(_)
            | CodeExecError::Rejected(_)
            | CodeExecError::ContractViolation(_)
            | CodeExecError::EmptySelection { .. }
            | CodeExecError::UnknownHandler(_) => CliError::Compliance(msg),
            CodeExecError::Gateway(_) => CliError::Provider(msg),
            CodeExecError::Manifest(_) | CodeExecError::Config(_) | CodeExecError::Runtime { .. } => {
                CliError::Data(msg)
            }
        }
    }
}

impl From<OrchestratorError> for CliError {
    fn from(e: OrchestratorError) -> Self {
        match e {
            OrchestratorError::CodeExec(e) => e.into(),
            OrchestratorError::Gateway(e) => CliError::Provider(format!("gateway: {e}")),
            OrchestratorError::Precondition(_) => CliError::Usage(format!("task: {e}")),
            OrchestratorError::Planning(_) | OrchestratorError::Aggregation(_) => {
                CliError::Provider(e.to_string())
            }
            OrchestratorError::Prompt(_)
            | OrchestratorError::Coverage(_)
            | OrchestratorError::Chunking(_)
            | OrchestratorError::Stats(_) => CliError::Data(format!("pipeline: {e}")),
        }
    }
}

impl From<ArtifactError> for CliError {
    fn from(e: ArtifactError) -> Self {
        CliError::Data(format!("artifacts: {e}"))
    }
}
