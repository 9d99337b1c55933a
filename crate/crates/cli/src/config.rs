//! JSON experiment configs: top-level flag overrides, strict parsing and
//! the reproducibility hash.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use crate::error::{CliError, CliResult};
use crate::io::sha256_hex;

#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
}

/// A parsed config plus where it came from.
#[derive(Clone, Debug)]
pub struct Loaded<T> {
    pub config: T,
    /// Directory relative paths inside the config are resolved against.
    pub base_dir: PathBuf,
    pub out_dir: PathBuf,
}

impl<T> Loaded<T> {
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn output(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }
}

/// Reads `path`, applies the flag overrides to top-level keys and parses the
/// result with unknown keys rejected. `out_dir` is taken out before parsing
/// so it never enters the config hash.
pub fn load<T: DeserializeOwned>(path: &Path, overrides: &Overrides) -> CliResult<Loaded<T>> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let mut value: Value =
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let obj = value
        .as_object_mut()
        .ok_or_else(|| CliError::Config(format!("{}: config must be a JSON object", path.display())))?;
    let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    if let Some(seed) = overrides.seed {
        obj.insert("seed".into(), Value::from(seed));
    }
    let from_file = match obj.remove("out_dir") {
        None | Some(Value::Null) => None,
        Some(Value::String(s)) => Some(base_dir.join(s)),
        Some(other) => return Err(CliError::Config(format!("out_dir must be a string, got {other}"))),
    };
    let out_dir = overrides
        .out_dir
        .clone()
        .or(from_file)
        .ok_or_else(|| CliError::Config("no output directory: set out_dir or pass --out-dir".into()))?;
    let config = serde_json::from_value(value).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    Ok(Loaded {
        config,
        base_dir,
        out_dir,
    })
}

/// SHA-256 of the canonical JSON form.
pub fn config_hash<T: Serialize>(value: &T) -> String {
    sha256_hex(&serde_json::to_vec(value).expect("serializable config"))
}
