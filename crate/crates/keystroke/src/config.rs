//! Flat `key=value` run configuration files.
//!
//! Keys are long flag names without the dashes (`lr=0.01`, `wpm=20,30`).
//! Blank lines and `#` comments are ignored. File values are spliced into the
//! command line right after the subcommand unless the same flag is already
//! there; the command line always wins.

use std::ffi::OsString;
use std::fs;
use std::path::Path;

use clap::error::ErrorKind;
use clap::Command;

/// Parses config text into ordered `(key, value)` pairs.
pub fn parse_config_text(text: &str) -> Result<Vec<(String, String)>, String> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split_once('#').map_or(raw, |(l, _)| l).trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| format!("line {}: expected key=value, got {line:?}", i + 1))?;
        let k = k.trim();
        if k.is_empty() {
            return Err(format!("line {}: empty key", i + 1));
        }
        out.push((k.to_string(), v.trim().to_string()));
    }
    Ok(out)
}

/// Renders pairs in the format [`parse_config_text`] reads.
pub fn render_config(pairs: &[(String, String)]) -> String {
    pairs.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
}

/// Global options that take a value; used to find the subcommand in argv.
const GLOBAL_VALUED: [&str; 3] = ["--seed", "--config", "--out"];

fn config_path(args: &[OsString]) -> Option<OsString> {
    let mut it = args.iter().skip(1);
    let mut found = None;
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--" {
            break;
        }
        if s == "--config" {
            found = it.next().cloned();
        } else if let Some(v) = s.strip_prefix("--config=") {
            found = Some(OsString::from(v));
        }
    }
    found
}

fn subcommand_position(cmd: &Command, args: &[OsString]) -> Option<usize> {
    let mut i = 1;
    while i < args.len() {
        let s = args[i].to_string_lossy();
        if GLOBAL_VALUED.contains(&s.as_ref()) {
            i += 2;
            continue;
        }
        if cmd.find_subcommand(s.as_ref()).is_some() {
            return Some(i);
        }
        i += 1;
    }
    None
}

fn long_names(cmd: &Command) -> Vec<String> {
    cmd.get_arguments().filter_map(|a| a.get_long()).map(str::to_string).collect()
}

/// Expands `--config FILE` into flags. Keys also given as flags, and keys
/// that belong to another subcommand, are skipped; keys no subcommand knows
/// are an error.
pub fn merge_config_args(cmd: &Command, args: Vec<OsString>) -> Result<Vec<OsString>, clap::Error> {
    let Some(path) = config_path(&args) else {
        return Ok(args);
    };
    let mut cmd = cmd.clone();
    cmd.build();
    let text = fs::read_to_string(Path::new(&path)).map_err(|e| {
        cmd.error(
            ErrorKind::Io,
            format!("cannot read config file {}: {e}", Path::new(&path).display()),
        )
    })?;
    let pairs = parse_config_text(&text).map_err(|e| cmd.error(ErrorKind::InvalidValue, e))?;
    let Some(pos) = subcommand_position(&cmd, &args) else {
        return Ok(args);
    };
    let sub = cmd
        .find_subcommand(args[pos].to_string_lossy().as_ref())
        .expect("position found by name");
    let own = long_names(sub);
    let known_elsewhere: Vec<String> = cmd.get_subcommands().flat_map(long_names).collect();
    let given: Vec<String> = args
        .iter()
        .filter_map(|a| a.to_str()?.strip_prefix("--").map(|f| f.split('=').next().unwrap_or(f).to_string()))
        .collect();
    let mut spliced = Vec::new();
    for (k, v) in pairs {
        if k == "config" || given.contains(&k) {
            continue;
        }
        if own.contains(&k) {
            spliced.push(OsString::from(format!("--{k}={v}")));
        } else if !known_elsewhere.contains(&k) {
            return Err(cmd.error(ErrorKind::UnknownArgument, format!("unknown config key {k:?}")));
        }
    }
    let mut out = args;
    out.splice(pos + 1..pos + 1, spliced);
    Ok(out)
}
