use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

impl Format {
    pub fn ext(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Meta {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub config_sha256: String,
}

impl Meta {
    pub fn new(command: &'static str, config_sha256: String) -> Self {
        Self {
            tool: "fastr",
            version: VERSION,
            command,
            config_sha256,
        }
    }

    /// Comment lines prepended to every CSV file.
    pub fn csv_header(&self) -> String {
        format!(
            "# fastr {}\n# command {}\n# config_sha256 {}\n",
            self.version, self.command, self.config_sha256
        )
    }

    pub fn csv(&self, body: &str) -> String {
        self.csv_header() + body
    }

    pub fn json<T: Serialize>(&self, data: &T) -> anyhow::Result<String> {
        #[derive(Serialize)]
        struct Doc<'a, T> {
            meta: &'a Meta,
            data: &'a T,
        }
        let mut s = serde_json::to_string_pretty(&Doc { meta: self, data })?;
        s.push('\n');
        Ok(s)
    }
}

/// Write `contents` to `dir/name` through a temporary file and a rename.
pub fn write_atomic(dir: &Path, name: &str, contents: &str) -> anyhow::Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let target = dir.join(name);
    let mut builder = tempfile::Builder::new();
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        builder.permissions(std::fs::Permissions::from_mode(0o644));
    }
    let mut tmp = builder.tempfile_in(dir)?;
    tmp.write_all(contents.as_bytes())?;
    tmp.as_file().sync_all()?;
    tmp.persist(&target)?;
    Ok(target)
}
