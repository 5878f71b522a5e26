//! Error classes shared by the process exit codes and the HTTP statuses.

use commexp::Error;
use serde_json::json;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Fingerprint,
    Divergence,
    Io,
    Format,
    Conflict,
    NotFound,
    Internal,
}

impl ErrorClass {
    pub fn of(e: &Error) -> Self {
        match e.root() {
            Error::Config(_) | Error::Domain(_) => ErrorClass::Config,
            Error::Parse { .. }
            | Error::Label { .. }
            | Error::Data(_)
            | Error::EmptyInput(_)
            | Error::Alignment(_)
            | Error::UndefinedMetric(_) => ErrorClass::Data,
            Error::Fingerprint { .. } => ErrorClass::Fingerprint,
            Error::Divergence { .. } | Error::NonFinite { .. } => ErrorClass::Divergence,
            Error::Io(_) => ErrorClass::Io,
            Error::Format(_) | Error::Json(_) => ErrorClass::Format,
            Error::Conflict(_) => ErrorClass::Conflict,
            Error::NotFound(_) => ErrorClass::NotFound,
            Error::Shape { .. } | Error::Contract(_) | Error::Cell { .. } => ErrorClass::Internal,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ErrorClass::Config => "config",
            ErrorClass::Data => "data",
            ErrorClass::Fingerprint => "fingerprint_mismatch",
            ErrorClass::Divergence => "divergence",
            ErrorClass::Io => "io",
            ErrorClass::Format => "format",
            ErrorClass::Conflict => "conflict",
            ErrorClass::NotFound => "not_found",
            ErrorClass::Internal => "internal",
        }
    }

    /// Process exit code; 2 is left to argument parsing.
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorClass::Config => 3,
            ErrorClass::Data => 4,
            ErrorClass::Fingerprint => 5,
            ErrorClass::Divergence => 6,
            ErrorClass::Io => 7,
            ErrorClass::Format => 8,
            ErrorClass::Conflict => 9,
            ErrorClass::NotFound => 10,
            ErrorClass::Internal => 70,
        }
    }

    pub fn http_status(self) -> u16 {
        match self {
            ErrorClass::Config => 400,
            ErrorClass::Data | ErrorClass::Format => 422,
            ErrorClass::Conflict => 409,
            ErrorClass::NotFound => 404,
            _ => 500,
        }
    }
}

/// The machine-readable error document printed on failure.
pub fn error_json(e: &Error) -> serde_json::Value {
    let class = ErrorClass::of(e);
    json!({
        "error": class.name(),
        "message": e.to_string(),
        "exit_code": class.exit_code(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn codes_are_distinct() {
        let all = [
            ErrorClass::Config,
            ErrorClass::Data,
            ErrorClass::Fingerprint,
            ErrorClass::Divergence,
            ErrorClass::Io,
            ErrorClass::Format,
            ErrorClass::Conflict,
            ErrorClass::NotFound,
            ErrorClass::Internal,
        ];
        let mut codes: Vec<i32> = all.iter().map(|c| c.exit_code()).collect();
        codes.sort();
        codes.dedup();
        assert_eq!(codes.len(), all.len());
        assert!(!codes.contains(&0) && !codes.contains(&1) && !codes.contains(&2));
    }

    #[test]
    fn cells_classify_by_their_cause() {
        let e = Error::Cell {
            cell: "k=4".into(),
            source: Box::new(Error::Divergence {
                epoch: 1,
                step: 3,
                loss: f64::NAN,
            }),
        };
        assert_eq!(ErrorClass::of(&e), ErrorClass::Divergence);
        assert_eq!(error_json(&e)["exit_code"], 6);
    }
}
