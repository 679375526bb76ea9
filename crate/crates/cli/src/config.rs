//! Merging a `--config` file under the command line flags.

use std::fs;
use std::path::Path;

use clap::parser::ValueSource;
use clap::ArgMatches;
use serde_json::{Map, Value};

use crate::args::ResolvedConfig;
use crate::CliError;

fn explicit(matches: &ArgMatches, id: &str) -> bool {
    matches
        .try_get_raw(id)
        .ok()
        .flatten()
        .is_some()
        && matches.value_source(id) == Some(ValueSource::CommandLine)
}

fn overlay(target: &mut Map<String, Value>, source: &Map<String, Value>, section: &str, is_explicit: impl Fn(&str) -> bool) -> Result<(), CliError> {
    for (key, value) in source {
        if !target.contains_key(key) {
            return Err(CliError::Usage(format!("unknown config key {section}.{key}")));
        }
        if !is_explicit(key) {
            target.insert(key.clone(), value.clone());
        }
    }
    Ok(())
}

/// Fills every flag not given on the command line from the config file.
pub fn merge(parsed: ResolvedConfig, matches: &ArgMatches, path: &Path) -> Result<ResolvedConfig, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    let file: Value = serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
    let file = file.as_object().ok_or_else(|| CliError::Usage("config must be a JSON object".into()))?;

    let mut merged = serde_json::to_value(&parsed).expect("arguments serialize");
    let name = parsed.command.name();
    if let Some(cmd) = file.get("command") {
        if cmd.as_str() != Some(name) {
            return Err(CliError::Usage(format!("config is for command {cmd}, not {name:?}")));
        }
    }
    let sub = matches.subcommand_matches(name).expect("subcommand parsed");
    if let Some(global) = file.get("global").and_then(Value::as_object) {
        let target = merged["global"].as_object_mut().expect("global section");
        overlay(target, global, "global", |k| explicit(matches, k) || explicit(sub, k))?;
    }
    if let Some(args) = file.get("args").and_then(Value::as_object) {
        let target = merged["args"].as_object_mut().expect("args section");
        overlay(target, args, "args", |k| explicit(sub, k))?;
    }
    let mut resolved: ResolvedConfig =
        serde_json::from_value(merged).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
    resolved.global.config = Some(path.to_path_buf());
    Ok(resolved)
}
