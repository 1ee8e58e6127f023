use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::json;

use crate::CliError;

/// The resolved configuration of one run.
pub fn record(command: &str, args: &impl Serialize) -> String {
    json!({
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "args": args,
    })
    .to_string()
}

fn write(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    std::fs::write(path, contents).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

/// Writes a TSV report followed by a `#config` line, to `out` or stdout.
pub fn report(out: Option<&Path>, body: &str, config: &str) -> Result<(), CliError> {
    let text = format!("{body}#config\t{config}\n");
    match out {
        Some(p) => write(p, text.as_bytes()),
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| CliError::Data(format!("stdout: {e}"))),
    }
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".config.json");
    PathBuf::from(s)
}

/// Writes the config record next to a data output.
pub fn sidecar(path: &Path, config: &str) -> Result<(), CliError> {
    write(&sidecar_path(path), format!("{config}\n").as_bytes())
}

pub struct Log {
    pub quiet: bool,
}

impl Log {
    pub fn info(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            eprintln!("{}", msg.as_ref());
        }
    }
}
