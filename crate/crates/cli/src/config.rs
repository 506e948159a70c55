//! `key = value` config files.
//!
//! Keys are long flag names without the dashes (`lr`, `batch`, `eval-every`;
//! underscores are accepted too). Blank lines and `#` comments are ignored.
//! A value of `true` turns a switch on, `false` leaves it off. The entries
//! are spliced in front of the command-line flags, so flags win.

use std::ffi::OsString;
use std::path::Path;

use crate::CliError;

pub fn parse_config(text: &str) -> Result<Vec<(String, String)>, CliError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            CliError::Usage(format!("config line {}: expected `key = value`", i + 1))
        })?;
        let key = key.trim().replace('_', "-");
        if key.is_empty() || key == "config" {
            return Err(CliError::Usage(format!("config line {}: bad key", i + 1)));
        }
        out.push((key, value.trim().to_string()));
    }
    Ok(out)
}

fn config_tokens(entries: &[(String, String)]) -> Vec<OsString> {
    let mut tokens = Vec::new();
    for (key, value) in entries {
        match value.as_str() {
            "true" => tokens.push(format!("--{key}").into()),
            "false" => {}
            v => {
                tokens.push(format!("--{key}").into());
                tokens.push(v.into());
            }
        }
    }
    tokens
}

/// Finds `--config FILE` (or `--config=FILE`) and inserts the file's flags
/// right after the subcommand name.
pub fn expand_config(argv: Vec<OsString>) -> Result<Vec<OsString>, CliError> {
    let mut path = None;
    let mut rest = Vec::with_capacity(argv.len());
    let mut iter = argv.into_iter();
    while let Some(arg) = iter.next() {
        let s = arg.to_string_lossy();
        if s == "--config" {
            let value = iter
                .next()
                .ok_or_else(|| CliError::Usage("--config needs a file".into()))?;
            path = Some(value);
        } else if let Some(v) = s.strip_prefix("--config=") {
            path = Some(OsString::from(v));
        } else {
            rest.push(arg);
        }
    }
    let Some(path) = path else {
        return Ok(rest);
    };
    let text = std::fs::read_to_string(Path::new(&path)).map_err(|e| {
        CliError::Usage(format!(
            "cannot read config {}: {e}",
            Path::new(&path).display()
        ))
    })?;
    let tokens = config_tokens(&parse_config(&text)?);
    // argv[0] is the program, argv[1] the first non-option token (the subcommand)
    let sub = rest
        .iter()
        .skip(1)
        .position(|a| !a.to_string_lossy().starts_with('-'))
        .map(|p| p + 2)
        .unwrap_or(rest.len());
    let mut out = rest[..sub].to_vec();
    out.extend(tokens);
    out.extend_from_slice(&rest[sub..]);
    Ok(out)
}
