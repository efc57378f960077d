//! `key=value` config files and resolved-config headers.
//!
//! A config file is expanded into `--key=value` arguments placed directly
//! after the subcommand, so flags given on the command line override it.

use std::fmt::Display;
use std::fs;

use anyhow::{bail, Context, Result};

/// Parses `key=value` lines. Blank lines and lines starting with `#` are
/// skipped; keys may use `_` or `-`.
pub fn parse_config(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (no, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            bail!("config line {}: expected key=value, got {line:?}", no + 1);
        };
        let key = key.trim().replace('_', "-");
        if key.is_empty() || key == "config" {
            bail!("config line {}: invalid key {key:?}", no + 1);
        }
        out.push((key, value.trim().to_string()));
    }
    Ok(out)
}

/// Replaces `--config PATH` (or `--config=PATH`) in `args` with the file's
/// entries, inserted right after the subcommand.
pub fn expand_args(args: Vec<String>) -> Result<Vec<String>> {
    let mut rest = Vec::with_capacity(args.len());
    let mut path = None;
    let mut it = args.into_iter();
    while let Some(a) = it.next() {
        if a == "--config" {
            path = Some(it.next().context("--config needs a path")?);
        } else if let Some(p) = a.strip_prefix("--config=") {
            path = Some(p.to_string());
        } else {
            rest.push(a);
        }
    }
    let Some(path) = path else {
        return Ok(rest);
    };
    let text = fs::read_to_string(&path).with_context(|| format!("reading config {path}"))?;
    let entries = parse_config(&text)?;
    // argv[0], subcommand, then the config, then the remaining flags
    let sub = rest.iter().skip(1).position(|a| !a.starts_with('-')).map(|i| i + 2);
    let at = sub.unwrap_or(rest.len());
    let inserted = entries.into_iter().map(|(k, v)| format!("--{k}={v}"));
    rest.splice(at..at, inserted);
    Ok(rest)
}

/// Ordered resolved settings of one run, printed as `# key=value` lines.
#[derive(Debug, Default)]
pub struct Resolved(Vec<(String, String)>);

impl Resolved {
    pub fn new(command: &str) -> Self {
        Self(vec![("command".into(), command.into())])
    }

    pub fn set(&mut self, key: &str, value: impl Display) -> &mut Self {
        self.0.push((key.into(), value.to_string()));
        self
    }

    pub fn opt(&mut self, key: &str, value: Option<impl Display>) -> &mut Self {
        match value {
            Some(v) => self.set(key, v),
            None => self.set(key, "none"),
        }
    }

    pub fn header(&self) -> String {
        self.0.iter().map(|(k, v)| format!("# {k}={v}\n")).collect()
    }
}
