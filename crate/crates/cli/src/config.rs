//! `key = value` config files, spliced into the argument list as flags.
//!
//! Config-derived flags are inserted directly after the subcommand name, so any
//! flag given explicitly on the command line comes later and wins.

use std::ffi::OsString;
use std::path::Path;

use crate::error::CliError;

pub const SUBCOMMANDS: [&str; 4] = ["generate", "train", "evaluate", "inspect"];

/// Parses the config text into `--key value` pairs. Blank lines and lines
/// starting with `#` are ignored; keys are flag names without dashes, and
/// underscores are accepted in place of hyphens.
pub fn parse_config(text: &str) -> Result<Vec<(String, String)>, CliError> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            CliError::Config(format!("config line {}: expected key = value", n + 1))
        })?;
        let key = key.trim().replace('_', "-");
        if key.is_empty() || key == "config" {
            return Err(CliError::Config(format!(
                "config line {}: invalid key",
                n + 1
            )));
        }
        out.push((key, value.trim().to_owned()));
    }
    Ok(out)
}

fn config_path(args: &[OsString]) -> Result<Option<OsString>, CliError> {
    let mut it = args.iter();
    while let Some(a) = it.next() {
        if a == "--config" {
            return match it.next() {
                Some(p) => Ok(Some(p.clone())),
                None => Err(CliError::Config("--config needs a path".into())),
            };
        }
        if let Some(p) = a.to_str().and_then(|s| s.strip_prefix("--config=")) {
            return Ok(Some(p.into()));
        }
    }
    Ok(None)
}

/// Returns `args` with the flags from the `--config` file (if any) spliced in.
pub fn expand_args(args: Vec<OsString>) -> Result<Vec<OsString>, CliError> {
    let Some(path) = config_path(&args)? else {
        return Ok(args);
    };
    let text = std::fs::read_to_string(Path::new(&path))
        .map_err(|e| CliError::io(format!("reading config {}", Path::new(&path).display()), e))?;
    let pairs = parse_config(&text)?;
    let Some(at) = args
        .iter()
        .position(|a| a.to_str().is_some_and(|s| SUBCOMMANDS.contains(&s)))
    else {
        return Ok(args);
    };
    let mut out = args[..=at].to_vec();
    for (k, v) in pairs {
        out.push(format!("--{k}").into());
        out.push(v.into());
    }
    out.extend_from_slice(&args[at + 1..]);
    Ok(out)
}
