use std::fmt::Display;

use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Config,
    Io,
    Solver,
    Balance,
}

/// A failed command, printed to stderr as one JSON object.
#[derive(Debug, Clone, Serialize)]
pub struct Failure {
    pub kind: Kind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
    pub message: String,
}

impl Failure {
    pub fn config(path: Option<String>, e: impl Display) -> Self {
        Failure {
            kind: Kind::Config,
            path,
            message: e.to_string(),
        }
    }

    pub fn config_at<E: Display>(path: String) -> impl Fn(E) -> Failure {
        move |e| Failure::config(Some(path.clone()), e)
    }

    pub fn io(e: impl Display) -> Self {
        Failure {
            kind: Kind::Io,
            path: None,
            message: e.to_string(),
        }
    }

    pub fn solver(e: impl Display) -> Self {
        Failure {
            kind: Kind::Solver,
            path: None,
            message: e.to_string(),
        }
    }

    pub fn balance(message: String) -> Self {
        Failure {
            kind: Kind::Balance,
            path: None,
            message,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::json!({ "error": self }).to_string()
    }
}
