use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use svreg_core::{warp, warp_nearest, Field, ScalarField};

use crate::config::{config_hash, load, Overrides};
use crate::error::{CliError, CliResult};
use crate::io::{read_scalar, read_vector, write_scalar};

fn default_output() -> String {
    "warped.npy".into()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WarpConfig {
    pub input: PathBuf,
    pub displacement: PathBuf,
    /// File name inside the output directory.
    #[serde(default = "default_output")]
    pub output: String,
    /// Nearest-neighbour resampling for label maps.
    #[serde(default)]
    pub labels: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

/// Resamples the input through the displacement, keeping its on-disk dtype.
pub fn run(config: &Path, overrides: &Overrides) -> CliResult<ScalarField> {
    let l = load::<WarpConfig>(config, overrides)?;
    let c = &l.config;
    if Path::new(&c.output).file_name().map(|n| n.to_string_lossy().into_owned()) != Some(c.output.clone()) {
        return Err(CliError::Config(format!("output {:?} must be a plain file name", c.output)));
    }
    let (input, dtype) = read_scalar(&l.resolve(&c.input))?;
    let disp = read_vector(&l.resolve(&c.displacement))?;
    disp.grid().check_same(input.grid())?;
    let out = if c.labels {
        warp_nearest(&input, &disp)?
    } else {
        warp(&input, &disp)?
    };
    let path = l.output(&c.output);
    write_scalar(&path, &out, dtype, Some(&config_hash(c)))?;
    println!("{}", path.display());
    Ok(out)
}
