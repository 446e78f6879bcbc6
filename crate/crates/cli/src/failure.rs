//! Failure carrier mapping every error onto the documented exit codes:
//! 2 for bad input or configuration, 3 for numerical failure, 4 for
//! filesystem trouble.

use proxcite::{Error, ErrorClass};
use serde::Serialize;

/// One stage failure with its coarse class and a human-readable message.
#[derive(Debug)]
pub struct Failure {
    pub class: ErrorClass,
    pub message: String,
}

pub type StageResult<T> = Result<T, Failure>;

impl Failure {
    pub fn input(message: impl Into<String>) -> Failure {
        Failure {
            class: ErrorClass::Input,
            message: message.into(),
        }
    }

    pub fn numeric(message: impl Into<String>) -> Failure {
        Failure {
            class: ErrorClass::Numeric,
            message: message.into(),
        }
    }

    pub fn io(message: impl Into<String>) -> Failure {
        Failure {
            class: ErrorClass::Io,
            message: message.into(),
        }
    }

    pub fn exit_code(&self) -> u8 {
        match self.class {
            ErrorClass::Input => 2,
            ErrorClass::Numeric => 3,
            ErrorClass::Io => 4,
        }
    }

    pub fn class_name(&self) -> &'static str {
        match self.class {
            ErrorClass::Input => "input",
            ErrorClass::Numeric => "numeric",
            ErrorClass::Io => "io",
        }
    }

    /// JSON body of the machine-readable error report.
    pub fn report_json(&self) -> String {
        let report = ErrorReport {
            class: self.class_name(),
            exit_code: self.exit_code(),
            message: &self.message,
        };
        let mut text = serde_json::to_string_pretty(&report).expect("error report serializes");
        text.push('\n');
        text
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Failure {
        Failure {
            class: e.class(),
            message: e.to_string(),
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.message)
    }
}

#[derive(Serialize)]
struct ErrorReport<'a> {
    class: &'a str,
    exit_code: u8,
    message: &'a str,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_follow_the_class() {
        assert_eq!(Failure::input("x").exit_code(), 2);
        assert_eq!(Failure::numeric("x").exit_code(), 3);
        assert_eq!(Failure::io("x").exit_code(), 4);
    }

    #[test]
    fn library_errors_keep_their_class() {
        let f = Failure::from(Error::InvalidArgument("bad".into()));
        assert_eq!(f.class, ErrorClass::Input);
        assert_eq!(f.message, Error::InvalidArgument("bad".into()).to_string());
    }

    #[test]
    fn report_is_machine_readable() {
        let f = Failure::numeric("solver diverged");
        let v: serde_json::Value = serde_json::from_str(&f.report_json()).unwrap();
        assert_eq!(v["class"], "numeric");
        assert_eq!(v["exit_code"], 3);
        assert_eq!(v["message"], "solver diverged");
    }
}
