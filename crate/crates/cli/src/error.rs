use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numeric error: {0}")]
    Numeric(String),
}

#[derive(Serialize)]
struct ErrorBody<'a> {
    kind: &'a str,
    exit_code: i32,
    message: String,
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numeric(_) => 4,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Data(_) => "data",
            CliError::Numeric(_) => "numeric",
        }
    }

    /// `{"error": {"kind": …, "exit_code": …, "message": …}}`
    pub fn to_json(&self) -> String {
        let message = match self {
            CliError::Config(m) | CliError::Data(m) | CliError::Numeric(m) => m.clone(),
        };
        serde_json::json!({
            "error": ErrorBody {
                kind: self.kind(),
                exit_code: self.exit_code(),
                message,
            }
        })
        .to_string()
    }
}

impl From<dpfair::Error> for CliError {
    fn from(e: dpfair::Error) -> Self {
        use dpfair::Error as E;
        match e {
            E::InvalidParameter(_) | E::UnknownAttribute(_) | E::InvalidMode(_) => CliError::Config(e.to_string()),
            E::InvalidData(_) | E::Shape(_) => CliError::Data(e.to_string()),
            E::OutOfDomain(_) | E::NonPositiveNormalizer { .. } => CliError::Numeric(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}
