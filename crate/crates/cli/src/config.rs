//! `--config` files and machine-readable help.
//!
//! A config file is flat TOML. Each key `some-key` becomes the default for
//! the environment variable `ALIGNKIT_SOME_KEY`, which in turn is the
//! default for the matching flag.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::Command;
use serde_json::{json, Value};

use crate::error::CliError;

pub const ENV_PREFIX: &str = "ALIGNKIT_";

/// Finds `--config <path>` or `--config=<path>` ahead of clap, falling back
/// to `ALIGNKIT_CONFIG`.
pub fn config_path(args: &[OsString]) -> Option<PathBuf> {
    let mut it = args.iter().skip(1);
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--" {
            break;
        }
        if s == "--config" {
            return it.next().map(PathBuf::from);
        }
        if let Some(p) = s.strip_prefix("--config=") {
            return Some(PathBuf::from(p));
        }
    }
    std::env::var_os(format!("{ENV_PREFIX}CONFIG")).map(PathBuf::from)
}

pub fn env_name(key: &str) -> String {
    format!("{ENV_PREFIX}{}", key.replace('-', "_").to_ascii_uppercase())
}

/// Environment assignments from a config file, skipping variables that are
/// already set.
pub fn config_env(path: &Path) -> Result<Vec<(String, String)>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
    let table: toml::Table = text
        .parse()
        .map_err(|e| CliError::Config(format!("config {}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (key, value) in table {
        let v = match value {
            toml::Value::String(s) => s,
            toml::Value::Integer(i) => i.to_string(),
            toml::Value::Float(f) => f.to_string(),
            toml::Value::Boolean(b) => b.to_string(),
            other => {
                return Err(CliError::Config(format!(
                    "config {}: key {key:?} has a {} value; only scalars are supported",
                    path.display(),
                    other.type_str()
                )))
            }
        };
        let name = env_name(&key);
        if std::env::var_os(&name).is_none() {
            out.push((name, v));
        }
    }
    Ok(out)
}

fn arg_json(a: &clap::Arg) -> Value {
    let takes_value = a.get_num_args().is_some_and(|n| n.takes_values());
    json!({
        "name": a.get_id().as_str(),
        "long": a.get_long(),
        "short": a.get_short().map(|c| c.to_string()),
        "help": a.get_help().map(|h| h.to_string()),
        "required": a.is_required_set(),
        "takes_value": takes_value,
        "repeatable": matches!(a.get_action(), clap::ArgAction::Append | clap::ArgAction::Count),
        "env": a.get_env().map(|e| e.to_string_lossy().into_owned()),
        "default": a.get_default_values().iter().map(|d| d.to_string_lossy().into_owned()).collect::<Vec<_>>(),
        "values": a.get_possible_values().iter().map(|v| v.get_name().to_owned()).collect::<Vec<_>>(),
    })
}

fn command_json(c: &Command) -> Value {
    json!({
        "name": c.get_name(),
        "about": c.get_about().map(|h| h.to_string()),
        "args": c.get_arguments().filter(|a| !matches!(a.get_id().as_str(), "help" | "version")).map(arg_json).collect::<Vec<_>>(),
        "subcommands": c.get_subcommands().filter(|s| s.get_name() != "help").map(command_json).collect::<Vec<_>>(),
    })
}

/// The whole command tree as JSON.
pub fn help_json(mut c: Command) -> String {
    c.build();
    let mut v = command_json(&c);
    v["version"] = json!(c.get_version());
    serde_json::to_string_pretty(&v).expect("help serializes")
}
