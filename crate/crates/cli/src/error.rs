//! Failure classification for the exit-code contract: 0 success, 1 ablation
//! ordering regression, 2 configuration error, 3 i/o error, 4 numerical
//! failure. Every library error is folded into one of these classes at the
//! boundary; the distinction matters because scripts drive this binary.

use std::path::Path;

use localsplat_core::gaussians::ply::PlyError;
use localsplat_core::gaussians::SceneError;
use localsplat_core::metrics::MetricsError;
use localsplat_core::scenefile::SceneFileError;
use localsplat_core::trainer::TrainError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// The measured ablation ordering no longer holds. The run itself
    /// succeeded; the science regressed.
    #[error("{0}")]
    Regression(String),
    #[error("configuration error: {0:#}")]
    Config(anyhow::Error),
    #[error("i/o error: {0:#}")]
    Io(anyhow::Error),
    #[error("numerical failure: {0:#}")]
    Numeric(anyhow::Error),
}

pub type Result<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Regression(_) => 1,
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
            CliError::Numeric(_) => 4,
        }
    }

    pub fn config(msg: impl std::fmt::Display) -> Self {
        CliError::Config(anyhow::anyhow!("{msg}"))
    }

    pub fn io(msg: impl std::fmt::Display) -> Self {
        CliError::Io(anyhow::anyhow!("{msg}"))
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.into())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Config(e.into())
    }
}

impl From<image::ImageError> for CliError {
    fn from(e: image::ImageError) -> Self {
        CliError::Io(e.into())
    }
}

impl From<SceneFileError> for CliError {
    fn from(e: SceneFileError) -> Self {
        match e {
            SceneFileError::Io(_) => CliError::Io(e.into()),
            _ => CliError::Config(e.into()),
        }
    }
}

impl From<PlyError> for CliError {
    fn from(e: PlyError) -> Self {
        match e {
            PlyError::Io(_) => CliError::Io(e.into()),
            _ => CliError::Config(e.into()),
        }
    }
}

impl From<SceneError> for CliError {
    fn from(e: SceneError) -> Self {
        CliError::Config(e.into())
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        CliError::Config(e.into())
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Diverged { .. } => CliError::Numeric(e.into()),
            _ => CliError::Config(e.into()),
        }
    }
}

/// Attaches the offending path to i/o-class errors, which otherwise read
/// like "No such file or directory" with no hint of *what* was missing.
pub trait PathCtx<T> {
    fn path_ctx(self, path: &Path) -> Result<T>;
}

impl<T, E: Into<CliError>> PathCtx<T> for std::result::Result<T, E> {
    fn path_ctx(self, path: &Path) -> Result<T> {
        self.map_err(|e| match e.into() {
            CliError::Io(err) => CliError::Io(err.context(format!("{}", path.display()))),
            CliError::Config(err) => {
                CliError::Config(err.context(format!("{}", path.display())))
            }
            other => other,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn classes_map_to_distinct_exit_codes() {
        let io: CliError = std::io::Error::new(std::io::ErrorKind::NotFound, "x").into();
        let cfg: CliError = serde_json::from_str::<u32>("{").unwrap_err().into();
        let num: CliError = TrainError::Diverged {
            step: 3,
            parts: Default::default(),
            records: vec![],
        }
        .into();
        let reg = CliError::Regression("gap closed".into());
        assert_eq!(io.exit_code(), 3);
        assert_eq!(cfg.exit_code(), 2);
        assert_eq!(num.exit_code(), 4);
        assert_eq!(reg.exit_code(), 1);
    }

    #[test]
    fn scene_file_errors_split_by_variant() {
        let io: CliError =
            SceneFileError::Io(std::io::Error::new(std::io::ErrorKind::NotFound, "x")).into();
        assert_eq!(io.exit_code(), 3);
        let schema: CliError =
            SceneFileError::SchemaVersion { found: 9, expected: 1 }.into();
        assert_eq!(schema.exit_code(), 2);
    }

    #[test]
    fn path_context_names_the_file() {
        let r: std::result::Result<(), std::io::Error> =
            Err(std::io::Error::new(std::io::ErrorKind::NotFound, "gone"));
        let e = r.path_ctx(Path::new("/tmp/some/file.json")).unwrap_err();
        assert!(format!("{e}").contains("file.json"), "{e}");
    }
}
