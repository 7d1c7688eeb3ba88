//! "RLNA1" parameter checkpoints on disk.

use std::path::Path;

use uvrelight_core::autodiff::{checkpoint, ParamSet};

use super::{read_file, write_file};
use crate::error::bad_input;
use crate::Result;

pub fn write(path: &Path, params: &ParamSet) -> Result<()> {
    write_file(path, &checkpoint::encode(params))
}

pub fn read(path: &Path) -> Result<ParamSet> {
    checkpoint::decode(&read_file(path)?).map_err(bad_input(path))
}

/// Reads a checkpoint and rebuilds a model from it; layout errors name the file.
pub fn load<T>(path: &Path, build: impl FnOnce(ParamSet) -> uvrelight_core::Result<T>) -> Result<T> {
    build(read(path)?).map_err(bad_input(path))
}
