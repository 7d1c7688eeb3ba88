//! Errors of the file layer and the command line, with their exit codes.

use std::path::{Path, PathBuf};

use uvrelight_core::Error as CoreError;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    /// A file exists but its contents are malformed.
    #[error("{path}: {msg}")]
    Format { path: PathBuf, msg: String },
    /// Bad arguments or inconsistent inputs that are not a config problem.
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] CoreError),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Error::Io { path: path.to_path_buf(), source }
    }

    pub fn format(path: &Path, msg: impl Into<String>) -> Self {
        Error::Format { path: path.to_path_buf(), msg: msg.into() }
    }

    /// 0 success, 1 internal, 2 bad input or paths, 3 config validation.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } | Error::Format { .. } | Error::Input(_) => 2,
            Error::Config(_) => 3,
            Error::Core(_) => 1,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Format { .. } => "format",
            Error::Input(_) => "input",
            Error::Config(_) => "config",
            Error::Core(_) => "internal",
        }
    }

    pub fn path(&self) -> Option<&Path> {
        match self {
            Error::Io { path, .. } | Error::Format { path, .. } => Some(path),
            _ => None,
        }
    }

    /// One JSON object on one line, for stderr.
    pub fn to_line(&self) -> String {
        let mut v = serde_json::json!({
            "error": self.kind(),
            "code": self.exit_code(),
            "message": self.to_string(),
        });
        if let Some(p) = self.path() {
            v["path"] = serde_json::Value::String(p.display().to_string());
        }
        v.to_string()
    }
}

/// Core errors raised while checking file contents are input errors.
pub(crate) fn bad_input(path: &Path) -> impl FnOnce(CoreError) -> Error + '_ {
    move |e| Error::format(path, e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lines_are_single_line_json() {
        let e = Error::format(Path::new("a\nb.pfm"), "bad\nheader");
        let line = e.to_line();
        assert!(!line.contains('\n'));
        let v: serde_json::Value = serde_json::from_str(&line).unwrap();
        assert_eq!(v["code"], 2);
        assert_eq!(v["path"], "a\nb.pfm");
        assert_eq!(Error::Config("x".into()).exit_code(), 3);
        assert_eq!(Error::Core(CoreError::Singular { what: "op" }).exit_code(), 1);
    }
}
