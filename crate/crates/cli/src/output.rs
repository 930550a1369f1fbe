use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{CliError, Kind};

/// Output directory; remembers what was written for the manifest.
pub struct Out {
    dir: PathBuf,
    pub written: Vec<String>,
}

impl Out {
    pub fn create(dir: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(|e| {
            CliError::new(Kind::Io, format!("cannot create {}: {e}", dir.display()))
        })?;
        Ok(Self {
            dir: dir.to_path_buf(),
            written: Vec::new(),
        })
    }

    pub fn write(&mut self, name: &str, contents: &str) -> Result<(), CliError> {
        let path = self.dir.join(name);
        fs::write(&path, contents).map_err(|e| {
            CliError::new(Kind::Io, format!("cannot write {}: {e}", path.display()))
        })?;
        if !self.written.iter().any(|w| w == name) {
            self.written.push(name.to_string());
        }
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        self.write(name, &pretty(value))
    }
}

/// Pretty JSON with a trailing newline. Going through `Value` sorts the keys
/// of every map.
pub fn pretty<T: Serialize>(value: &T) -> String {
    let value = serde_json::to_value(value).expect("report serialises");
    let mut text = serde_json::to_string_pretty(&value).expect("value serialises");
    text.push('\n');
    text
}
