//! `key = value` configuration files and run manifests.
//!
//! Grammar, one entry per line:
//!
//! ```text
//! # comment
//! key = value
//! key = "value with spaces"
//! ```
//!
//! Keys are the long flag names of the subcommand (`seed`, `n-years`, ...).
//! A boolean flag is set by `true` and left unset by `false`. List values are
//! comma separated, as on the command line. The reserved keys `command` and
//! `version` are written to manifests; `command` must match the subcommand
//! the file is used with.
//!
//! Entries are spliced into the argument list directly after the subcommand
//! name, so flags given on the command line take precedence.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{ArgMatches, Command};
use conloss_core::Error;

pub const MANIFEST_FILE: &str = "manifest.conf";

/// Arguments that never go into a manifest.
const NOT_ECHOED: [&str; 4] = ["config", "threads", "out", "help"];

/// Arguments holding input paths, stored absolute in manifests.
const PATH_ARGS: [&str; 5] = ["portfolio", "events", "lower", "upper", "baseline"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigFile {
    pub entries: Vec<(String, String)>,
}

impl ConfigFile {
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Row {
                    path: origin.to_path_buf(),
                    line: i as u64 + 1,
                    msg: format!("expected `key = value`, got {line:?}"),
                }
                .into());
            };
            let key = key.trim();
            if key.is_empty() || !key.chars().all(|c| c.is_ascii_alphanumeric() || c == '-') {
                return Err(Error::Row {
                    path: origin.to_path_buf(),
                    line: i as u64 + 1,
                    msg: format!("bad key {key:?}"),
                }
                .into());
            }
            let value = value.trim();
            let value = value
                .strip_prefix('"')
                .and_then(|v| v.strip_suffix('"'))
                .unwrap_or(value);
            entries.push((key.to_string(), value.to_string()));
        }
        Ok(Self { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text, path)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .rev()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }
}

/// Position of the subcommand name in `args`, skipping global options.
fn subcommand_index(cmd: &Command, args: &[OsString]) -> Option<usize> {
    let names: Vec<&str> = cmd.get_subcommands().map(|s| s.get_name()).collect();
    let mut i = 1;
    while i < args.len() {
        let a = args[i].to_string_lossy();
        if names.contains(&a.as_ref()) {
            return Some(i);
        }
        // global options that take a value
        if a == "--threads" || a == "--config" {
            i += 1;
        }
        i += 1;
    }
    None
}

/// Value of `--config`, wherever it appears.
fn config_path(args: &[OsString]) -> Option<PathBuf> {
    let mut it = args.iter();
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--config" {
            return it.next().map(PathBuf::from);
        }
        if let Some(v) = s.strip_prefix("--config=") {
            return Some(PathBuf::from(v));
        }
    }
    None
}

/// Converts config entries to flags of subcommand `sub`.
pub fn entries_to_args(cmd: &Command, sub: &str, config: &ConfigFile, origin: &Path) -> Result<Vec<OsString>> {
    let sc = cmd
        .find_subcommand(sub)
        .ok_or_else(|| anyhow!("unknown subcommand {sub}"))?;
    if let Some(c) = config.get("command") {
        if c != sub {
            return Err(Error::Config(format!("{} is for `{c}`, not `{sub}`", origin.display())).into());
        }
    }
    let mut out = Vec::new();
    for (key, value) in &config.entries {
        if key == "command" || key == "version" {
            continue;
        }
        let arg = sc
            .get_arguments()
            .find(|a| a.get_long() == Some(key.as_str()))
            .ok_or_else(|| Error::Config(format!("{}: `{sub}` has no option {key:?}", origin.display())))?;
        if arg.get_action().takes_values() {
            out.push(OsString::from(format!("--{key}")));
            out.push(OsString::from(value));
        } else {
            match value.as_str() {
                "true" => out.push(OsString::from(format!("--{key}"))),
                "false" => {}
                _ => {
                    return Err(Error::Config(format!(
                        "{}: {key} is a switch and takes true or false, got {value:?}",
                        origin.display()
                    ))
                    .into())
                }
            }
        }
    }
    Ok(out)
}

/// `args` with the entries of any `--config` file spliced in after the
/// subcommand name.
pub fn expand_args(cmd: &Command, args: Vec<OsString>) -> Result<Vec<OsString>> {
    let Some(path) = config_path(&args) else {
        return Ok(args);
    };
    let Some(idx) = subcommand_index(cmd, &args) else {
        return Ok(args);
    };
    let config = ConfigFile::load(&path)?;
    let sub = args[idx].to_string_lossy().into_owned();
    let extra = entries_to_args(cmd, &sub, &config, &path)?;
    let mut out = args[..=idx].to_vec();
    out.extend(extra);
    out.extend_from_slice(&args[idx + 1..]);
    Ok(out)
}

/// The resolved options of one subcommand run.
pub fn resolved_entries(cmd: &Command, sub: &str, matches: &ArgMatches) -> Result<Vec<(String, String)>> {
    let sc = cmd
        .find_subcommand(sub)
        .ok_or_else(|| anyhow!("unknown subcommand {sub}"))?;
    let mut entries = Vec::new();
    for arg in sc.get_arguments() {
        let id = arg.get_id().as_str();
        let Some(long) = arg.get_long() else { continue };
        if NOT_ECHOED.contains(&id) {
            continue;
        }
        let Some(raw) = matches.get_raw(id) else { continue };
        let values: Vec<String> = raw.map(|v| v.to_string_lossy().into_owned()).collect();
        let mut value = values.join(",");
        if PATH_ARGS.contains(&id) {
            value = fs::canonicalize(&value)
                .with_context(|| format!("resolving {value}"))?
                .to_string_lossy()
                .into_owned();
        }
        entries.push((long.to_string(), value));
    }
    Ok(entries)
}

pub fn write_manifest(dir: &Path, sub: &str, entries: &[(String, String)]) -> Result<()> {
    let mut text = String::new();
    writeln!(
        text,
        "# rerun with: conloss replay --manifest {MANIFEST_FILE} --out <dir>"
    )?;
    writeln!(text, "command = {sub}")?;
    writeln!(text, "version = {}", env!("CARGO_PKG_VERSION"))?;
    let mut entries = entries.to_vec();
    entries.sort();
    for (k, v) in &entries {
        if v.contains(char::is_whitespace) || v.contains('#') {
            writeln!(text, "{k} = \"{v}\"")?;
        } else {
            writeln!(text, "{k} = {v}")?;
        }
    }
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// Arguments that rerun the command recorded in `manifest`, writing to `out`.
pub fn replay_args(cmd: &Command, manifest: &Path, out: &Path) -> Result<Vec<OsString>> {
    let config = ConfigFile::load(manifest)?;
    let Some(sub) = config.get("command") else {
        bail!(Error::Config(format!("{} names no command", manifest.display())));
    };
    if let Some(v) = config.get("version") {
        if v != env!("CARGO_PKG_VERSION") {
            eprintln!(
                "warning: {} was written by version {v}, this is {}",
                manifest.display(),
                env!("CARGO_PKG_VERSION")
            );
        }
    }
    let mut args = vec![OsString::from("conloss"), OsString::from(sub)];
    args.extend(entries_to_args(cmd, sub, &config, manifest)?);
    args.push(OsString::from("--out"));
    args.push(out.as_os_str().to_owned());
    Ok(args)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_quotes_and_blank_lines() {
        let c = ConfigFile::parse("# top\n\nseed = 7\nname = \"a b\"\n  m=100  \n", Path::new("x")).unwrap();
        assert_eq!(
            c.entries,
            vec![
                ("seed".into(), "7".into()),
                ("name".into(), "a b".into()),
                ("m".into(), "100".into())
            ]
        );
        assert_eq!(c.get("m"), Some("100"));
    }

    #[test]
    fn reports_line_of_bad_entry() {
        let err = ConfigFile::parse("seed = 1\nnonsense\n", Path::new("c.conf")).unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
    }
}
