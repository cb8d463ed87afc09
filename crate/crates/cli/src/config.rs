//! Parameter resolution (defaults < config file < flags), run manifests and
//! atomic output.

use std::fmt::Display;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};
use sntrap::constants::CONSTANTS_TEXT;
use sntrap::kv::{self, Section};

use crate::CliError;

/// Section name that holds run metadata in manifests; ignored on load.
pub const MANIFEST_SECTION: &str = "manifest";

pub struct Resolver {
    section: Option<Section>,
    requested: Vec<&'static str>,
    resolved: Vec<(String, String)>,
}

impl Resolver {
    /// Reads the `[subcommand]` section of `path`, if a path is given.
    pub fn load(path: Option<&Path>, subcommand: &str) -> Result<Self, CliError> {
        let section = match path {
            None => None,
            Some(p) => {
                let text = fs::read_to_string(p)
                    .map_err(|e| CliError::Usage(format!("cannot read config '{}': {e}", p.display())))?;
                Self::section_from(&text, subcommand)?
            }
        };
        Ok(Self {
            section,
            requested: Vec::new(),
            resolved: Vec::new(),
        })
    }

    fn section_from(text: &str, subcommand: &str) -> Result<Option<Section>, CliError> {
        let sections = kv::parse(text).map_err(|e| CliError::Usage(format!("config: {e}")))?;
        let mut found = None;
        for s in sections {
            if s.name.is_empty() && !s.entries.is_empty() {
                return Err(CliError::Usage(format!(
                    "config line {}: key '{}' outside any [section]",
                    s.entries[0].line, s.entries[0].key
                )));
            }
            if s.name == subcommand {
                found = Some(s);
            }
        }
        Ok(found)
    }

    #[cfg(test)]
    pub fn from_text(text: &str, subcommand: &str) -> Result<Self, CliError> {
        Ok(Self {
            section: Self::section_from(text, subcommand)?,
            requested: Vec::new(),
            resolved: Vec::new(),
        })
    }

    fn from_file<T: FromStr>(&self, key: &str) -> Result<Option<T>, CliError> {
        let Some(section) = &self.section else {
            return Ok(None);
        };
        let Some(entry) = section.get(key) else {
            return Ok(None);
        };
        entry.value.parse::<T>().map(Some).map_err(|_| {
            CliError::Usage(format!(
                "config line {}: cannot parse '{}' for key '{key}'",
                entry.line, entry.value
            ))
        })
    }

    /// Flag value, else file value, else `default`.
    pub fn value<T: FromStr + Display>(&mut self, key: &'static str, flag: Option<T>, default: T) -> Result<T, CliError> {
        let v = match flag {
            Some(v) => v,
            None => self.from_file(key)?.unwrap_or(default),
        };
        self.record(key, &v);
        Ok(v)
    }

    /// Like [`value`](Self::value) without a default; absent values are
    /// not recorded.
    pub fn optional<T: FromStr + Display>(&mut self, key: &'static str, flag: Option<T>) -> Result<Option<T>, CliError> {
        let v = match flag {
            Some(v) => Some(v),
            None => self.from_file(key)?,
        };
        self.requested.push(key);
        if let Some(v) = &v {
            self.resolved.push((key.to_string(), v.to_string()));
        }
        Ok(v)
    }

    fn record<T: Display>(&mut self, key: &'static str, v: &T) {
        self.requested.push(key);
        self.resolved.push((key.to_string(), v.to_string()));
    }

    /// Fails on keys in the file section that no option asked for.
    pub fn finish(&self) -> Result<Vec<(String, String)>, CliError> {
        if let Some(section) = &self.section {
            if let Some(e) = section.entries.iter().find(|e| !self.requested.contains(&e.key.as_str())) {
                return Err(CliError::Usage(format!(
                    "config line {}: unknown key '{}' in section [{}]",
                    e.line, e.key, section.name
                )));
            }
        }
        Ok(self.resolved.clone())
    }
}

pub fn constants_digest() -> String {
    hex(&Sha256::digest(CONSTANTS_TEXT.as_bytes()))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Manifest text. It is itself a config file: passing it back with
/// `--config` reproduces the run.
pub fn manifest(subcommand: &str, resolved: &[(String, String)], output: &[u8], seed: Option<u64>) -> String {
    let mut s = String::new();
    s.push_str("# sntrap run manifest; rerun with `sntrap ");
    s.push_str(subcommand.split('.').next().unwrap_or(subcommand));
    s.push_str(" --config <this file> --out <csv>`\n");
    s.push_str(&format!("[{MANIFEST_SECTION}]\n"));
    s.push_str(&format!("subcommand = {subcommand}\n"));
    s.push_str(&format!("tool_version = {}\n", env!("CARGO_PKG_VERSION")));
    s.push_str(&format!("constants_sha256 = {}\n", constants_digest()));
    s.push_str(&format!("constants = {}\n", CONSTANTS_TEXT.trim_end().replace('\n', " ")));
    if let Some(seed) = seed {
        s.push_str(&format!("seed = {seed}\n"));
    }
    s.push_str(&format!("output_sha256 = {}\n", hex(&Sha256::digest(output))));
    s.push_str(&format!("\n[{}]\n", subcommand.split('.').next().unwrap_or(subcommand)));
    for (k, v) in resolved {
        s.push_str(&format!("{k} = {v}\n"));
    }
    s
}

/// Writes `data` to a temporary file next to `path` and renames it into
/// place.
pub fn write_atomic(path: &Path, data: &[u8]) -> Result<(), CliError> {
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| CliError::Usage(format!("output path '{}' has no file name", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(name);
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp: PathBuf = dir.join(tmp_name);
    let io = |e: std::io::Error| CliError::Io(format!("{}: {e}", path.display()));
    {
        let mut f = fs::File::create(&tmp).map_err(io)?;
        f.write_all(data).map_err(io)?;
        f.sync_all().map_err(io)?;
    }
    fs::rename(&tmp, path).map_err(|e| {
        let _ = fs::remove_file(&tmp);
        io(e)
    })
}

/// `<path>.meta`.
pub fn manifest_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta");
    PathBuf::from(s)
}
