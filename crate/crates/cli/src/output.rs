//! Output files: content-addressed names, atomic writes and the run manifest.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::{DateTime, SecondsFormat, Utc};
use sha2::{Digest, Sha256};

use crate::settings::Settings;

/// Short hex digest of the command and its resolved settings. Settings that
/// cannot change output bytes (output directory, worker count) are not part
/// of [`Settings`] and so never enter the hash.
pub fn config_hash(command: &str, settings: &Settings) -> String {
    let mut h = Sha256::new();
    h.update(command.as_bytes());
    h.update(b"\n");
    h.update(settings.echo().as_bytes());
    hex::encode(&h.finalize()[..8])
}

/// Writes `bytes` to a sibling temporary file and renames it into place, so
/// readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let name = path
        .file_name()
        .and_then(|n| n.to_str())
        .unwrap_or("output");
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result
}

/// `key=value` echo of the settings preceded by `#` metadata, so the file can
/// be passed back as `--config` to repeat the run.
pub struct Manifest {
    pub command: String,
    pub hash: String,
    pub base_seed: u64,
    pub started: DateTime<Utc>,
    pub outputs: Vec<(String, PathBuf)>,
}

impl Manifest {
    pub fn new(command: &str, hash: &str, base_seed: u64) -> Self {
        Self {
            command: command.to_string(),
            hash: hash.to_string(),
            base_seed,
            started: Utc::now(),
            outputs: Vec::new(),
        }
    }

    pub fn render(&self, settings: &Settings, finished: DateTime<Utc>) -> String {
        let ts = |t: &DateTime<Utc>| t.to_rfc3339_opts(SecondsFormat::Millis, true);
        let mut s = String::new();
        s.push_str(&format!(
            "# dream {} {}\n",
            self.command,
            env!("CARGO_PKG_VERSION")
        ));
        s.push_str(&format!("# config_hash={}\n", self.hash));
        s.push_str(&format!("# base_seed={}\n", self.base_seed));
        s.push_str(&format!("# started={}\n", ts(&self.started)));
        s.push_str(&format!("# finished={}\n", ts(&finished)));
        for (label, path) in &self.outputs {
            s.push_str(&format!("# output.{label}={}\n", path.display()));
        }
        s.push_str(&settings.echo());
        s
    }

    pub fn write(&self, dir: &Path, settings: &Settings) -> std::io::Result<PathBuf> {
        let path = dir.join(format!("manifest-{}.txt", self.hash));
        write_atomic(&path, self.render(settings, Utc::now()).as_bytes())?;
        Ok(path)
    }
}
