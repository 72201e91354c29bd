//! Flat `key = value` run files. Keys are long flag names without the dashes;
//! repeatable flags may appear on several lines.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use clap::CommandFactory;

use crate::args::Cli;
use crate::CliError;

pub const RESOLVED_FILE: &str = "config.resolved";

fn parse_lines(text: &str, path: &Path) -> Result<Vec<(String, String)>, CliError> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            CliError::Usage(format!("{}:{}: expected key = value", path.display(), n + 1))
        })?;
        out.push((key.trim().to_string(), value.trim().to_string()));
    }
    Ok(out)
}

fn config_path(argv: &[OsString]) -> Option<OsString> {
    let mut it = argv.iter();
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--config" {
            return it.next().cloned();
        }
        if let Some(v) = s.strip_prefix("--config=") {
            return Some(v.into());
        }
    }
    None
}

fn given_on_command_line(argv: &[OsString], key: &str) -> bool {
    let flag = format!("--{key}");
    let with_value = format!("--{key}=");
    argv.iter().any(|a| {
        let s = a.to_string_lossy();
        s == flag || s.starts_with(&with_value)
    })
}

/// Splice settings from `--config FILE` into `argv`. Keys already present on
/// the command line are skipped entirely, so flags always win.
pub fn merge_config_file(argv: Vec<OsString>) -> Result<Vec<OsString>, CliError> {
    let Some(path) = config_path(&argv) else {
        return Ok(argv);
    };
    let Some(sub_name) = argv.get(1).map(|s| s.to_string_lossy().into_owned()) else {
        return Ok(argv);
    };
    let cli = Cli::command();
    let Some(sub) = cli.find_subcommand(&sub_name) else {
        return Ok(argv);
    };
    let path = Path::new(&path);
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read config file {}: {e}", path.display())))?;

    let mut spliced = Vec::new();
    for (key, value) in parse_lines(&text, path)? {
        let arg = sub
            .get_arguments()
            .find(|a| a.get_long() == Some(key.as_str()) && key != "config")
            .ok_or_else(|| {
                CliError::Usage(format!("{}: unknown key '{key}' for {sub_name}", path.display()))
            })?;
        if given_on_command_line(&argv, &key) {
            continue;
        }
        if arg.get_action().takes_values() {
            spliced.push(OsString::from(format!("--{key}")));
            spliced.push(OsString::from(value));
        } else {
            match value.as_str() {
                "true" => spliced.push(OsString::from(format!("--{key}"))),
                "false" => {}
                other => {
                    return Err(CliError::Usage(format!(
                        "{}: '{key}' expects true or false, got '{other}'",
                        path.display()
                    )))
                }
            }
        }
    }
    let mut merged = argv[..2].to_vec();
    merged.extend(spliced);
    merged.extend_from_slice(&argv[2..]);
    Ok(merged)
}

/// The effective settings of one run, written in the same format it reads.
pub struct Resolved {
    command: &'static str,
    entries: Vec<(String, String)>,
}

impl Resolved {
    pub fn new(command: &'static str) -> Self {
        Resolved {
            command,
            entries: Vec::new(),
        }
    }

    pub fn set(&mut self, key: &str, value: impl ToString) -> &mut Self {
        self.entries.push((key.to_string(), value.to_string()));
        self
    }

    pub fn flag(&mut self, key: &str, on: bool) -> &mut Self {
        self.set(key, on)
    }

    pub fn render(&self) -> String {
        let mut out = format!("# ppi-affinity {}\n", self.command);
        for (k, v) in &self.entries {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }
}
