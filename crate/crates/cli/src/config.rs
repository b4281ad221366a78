//! Config files are TOML with one section per subcommand (`[simulate]`,
//! `[fit]`, `[detect]`, `[table1]`). Keys match the long flag names with
//! `-` replaced by `_`.

use std::path::Path;

use anyhow::{Context, Result};
use serde::de::DeserializeOwned;

/// Seed used when neither the command line nor the config sets one.
pub const SEED_ENV: &str = "REGIME_FACTOR_SEED";

/// Reads section `name`, or its default when there is no file or section.
pub fn section<T: DeserializeOwned + Default>(path: Option<&Path>, name: &str) -> Result<T> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut table: toml::Table = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    match table.remove(name) {
        Some(v) => v
            .try_into()
            .with_context(|| format!("section [{name}] of {}", path.display())),
        None => Ok(T::default()),
    }
}

pub fn resolve_seed(seed: Option<u64>) -> Result<u64> {
    if let Some(s) = seed {
        return Ok(s);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .with_context(|| format!("{SEED_ENV}={v:?} is not an unsigned integer")),
        Err(_) => Ok(0),
    }
}

/// Fills every `None` field of `$cli` from `$file`.
macro_rules! overlay {
    ($cli:expr, $file:expr; $($field:ident),* $(,)?) => {
        $( if $cli.$field.is_none() { $cli.$field = $file.$field.take(); } )*
    };
}
pub(crate) use overlay;
