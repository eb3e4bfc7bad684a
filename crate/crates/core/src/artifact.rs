//! Output directories and artifact files.
//!
//! Every file starts with `# qvi-lab <version> config-sha256=<hex>` so that
//! results can be traced back to the exact config bytes.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::Result;

/// Environment variable overriding the default output root.
pub const OUT_ENV: &str = "QVI_LAB_OUT";

/// Header line written at the top of every artifact.
pub fn header(config_hash: &str) -> String {
    format!(
        "# qvi-lab {} config-sha256={config_hash}\n",
        env!("CARGO_PKG_VERSION")
    )
}

/// `explicit`, else `$QVI_LAB_OUT/<stem>`, else `./out/<stem>`.
pub fn resolve_out_dir(explicit: Option<&Path>, config: &Path) -> PathBuf {
    if let Some(p) = explicit {
        return p.to_path_buf();
    }
    let stem = config
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "run".into());
    let root = std::env::var_os(OUT_ENV)
        .filter(|v| !v.is_empty())
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("out"));
    root.join(stem)
}

/// Writes artifacts into one directory, prefixing each with the header.
#[derive(Debug, Clone)]
pub struct ArtifactWriter {
    dir: PathBuf,
    header: String,
    written: Vec<PathBuf>,
}

impl ArtifactWriter {
    pub fn create(dir: impl Into<PathBuf>, config_hash: &str) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(Self {
            dir,
            header: header(config_hash),
            written: Vec::new(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Files written so far, in order.
    pub fn written(&self) -> &[PathBuf] {
        &self.written
    }

    pub fn write(&mut self, name: &str, body: &str) -> Result<PathBuf> {
        let path = self.dir.join(name);
        let mut text = String::with_capacity(self.header.len() + body.len());
        text.push_str(&self.header);
        text.push_str(body);
        fs::write(&path, text)?;
        self.written.push(path.clone());
        Ok(path)
    }
}
