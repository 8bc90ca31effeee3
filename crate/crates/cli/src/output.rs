use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use hdrp_core::ErrorClass;
use serde::Serialize;
use thiserror::Error;

/// Exit statuses.
pub const EXIT_OK: i32 = 0;
pub const EXIT_COMPUTATION: i32 = 1;
pub const EXIT_FORMAT: i32 = 2;
pub const EXIT_USAGE: i32 = 64;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] hdrp_core::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Input {
        path: PathBuf,
        #[source]
        source: hdrp_core::Error,
    },
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    NotConverged(String),
}

macro_rules! from_core {
    ($($t:ty),*) => {
        $(impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Core(e.into())
            }
        })*
    };
}

from_core!(
    hdrp_core::cube::CubeError,
    hdrp_core::display::DisplayError,
    hdrp_core::calibration::CalibrationError,
    hdrp_core::harness::HarnessError,
    hdrp_core::scene::SceneError
);

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) | CliError::Input { source: e, .. } => match e.class() {
                ErrorClass::Computation => EXIT_COMPUTATION,
                ErrorClass::Format => EXIT_FORMAT,
                ErrorClass::Usage => EXIT_USAGE,
            },
            CliError::Io { .. } => EXIT_FORMAT,
            CliError::Usage(_) => EXIT_USAGE,
            CliError::NotConverged(_) => EXIT_COMPUTATION,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

pub fn read_text(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_owned(),
        source,
    })
}

/// Run a parser over a file, tagging failures with the path.
pub fn parse_file<T, E: Into<hdrp_core::Error>>(
    path: &Path,
    parse: impl FnOnce(&str) -> Result<T, E>,
) -> CliResult<T> {
    let text = read_text(path)?;
    parse(&text).map_err(|e| CliError::Input {
        path: path.to_owned(),
        source: e.into(),
    })
}

pub fn write_file(path: &Path, body: &str) -> CliResult<()> {
    std::fs::write(path, body).map_err(|source| CliError::Io {
        path: path.to_owned(),
        source,
    })
}

/// Write `body` to `out`, or to standard output when there is none.
pub fn emit(out: Option<&Path>, body: &str) -> CliResult<()> {
    match out {
        Some(path) => write_file(path, body),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(body.as_bytes())
                .and_then(|_| stdout.flush())
                .map_err(|source| CliError::Io {
                    path: PathBuf::from("<stdout>"),
                    source,
                })
        }
    }
}

#[derive(Serialize)]
struct Sidecar<'a, C: Serialize, S: Serialize> {
    tool: &'static str,
    version: &'static str,
    created_unix_seconds: u64,
    config: &'a C,
    summary: &'a S,
}

pub fn sidecar_path(out: &Path) -> PathBuf {
    let mut name = out.as_os_str().to_owned();
    name.push(".meta.json");
    PathBuf::from(name)
}

/// Write `<out>.meta.json` with the tool version, the resolved config and a
/// run summary. The timestamp lives here so data files stay reproducible.
pub fn write_sidecar<C: Serialize, S: Serialize>(
    out: &Path,
    config: &C,
    summary: &S,
) -> CliResult<()> {
    let created = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs());
    let doc = Sidecar {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        created_unix_seconds: created,
        config,
        summary,
    };
    let mut body = serde_json::to_string_pretty(&doc).expect("metadata serializes");
    body.push('\n');
    write_file(&sidecar_path(out), &body)
}
