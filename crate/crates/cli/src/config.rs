//! Config-file merging.
//!
//! A config file is a flat TOML table whose keys are flag names (`-` and
//! `_` are interchangeable); a `[train]`-style table named after the
//! subcommand may hold the same keys. Resolution order for every setting is:
//! command-line flag, config file, `$SMOOTHCERT_SEED` (seed only), built-in
//! default. The merge works by appending the file's values as extra flags
//! for anything not given on the command line, then parsing once more, so
//! file values go through exactly the same validation as flags.

use std::collections::BTreeSet;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::parser::ValueSource;
use clap::{CommandFactory, FromArgMatches};

use crate::args::Cli;
use crate::error::{CliError, CliResult};

pub const SEED_ENV: &str = "SMOOTHCERT_SEED";

/// Parse `argv`, folding in `--config` and the seed environment variable.
/// `Err(clap::Error)` is returned untouched so the caller can print clap's
/// own message (and honour `--help` / `--version`).
pub fn resolve(argv: Vec<OsString>, env_seed: Option<String>) -> CliResult<Result<Cli, clap::Error>> {
    // A lenient first pass only finds the subcommand, the explicit flags
    // and the config path; required flags may still come from the file.
    let lenient = Cli::command().ignore_errors(true).try_get_matches_from(argv.clone());
    let Ok(matches) = lenient else {
        return Ok(Cli::try_parse_from_argv(argv));
    };
    let Some((sub_name, sub)) = matches.subcommand() else {
        return Ok(Cli::try_parse_from_argv(argv));
    };
    let command = Cli::command();
    let sub_cmd = command.find_subcommand(sub_name).expect("parsed subcommand exists");

    let explicit: BTreeSet<String> = sub_cmd
        .get_arguments()
        .map(|a| a.get_id().to_string())
        .filter(|id| sub.try_contains_id(id).unwrap_or(false) && sub.value_source(id) == Some(ValueSource::CommandLine))
        .collect();
    let config_path: Option<PathBuf> = sub.try_get_one::<PathBuf>("config").ok().flatten().cloned();

    let mut extra: Vec<OsString> = Vec::new();
    let mut from_file: BTreeSet<String> = BTreeSet::new();
    if let Some(path) = &config_path {
        for (key, value) in read_config(path, sub_name)? {
            let arg = sub_cmd
                .get_arguments()
                .find(|a| a.get_id().as_str() == key)
                .filter(|_| key != "config")
                .ok_or_else(|| CliError::Config {
                    path: path.clone(),
                    detail: format!("unknown key `{key}` for `{sub_name}`"),
                })?;
            from_file.insert(key.clone());
            if explicit.contains(&key) {
                continue;
            }
            let takes_value = arg.get_num_args().is_none_or(|n| n.takes_values());
            let values = flatten_value(path, &key, &value)?;
            if arg.is_positional() {
                extra.extend(values.into_iter().map(OsString::from));
            } else if !takes_value {
                if values != ["false"] {
                    if values != ["true"] {
                        return Err(CliError::Config {
                            path: path.clone(),
                            detail: format!("`{key}` is a switch; use true or false"),
                        });
                    }
                    extra.push(format!("--{}", arg.get_long().expect("long flag")).into());
                }
            } else {
                extra.push(format!("--{}={}", arg.get_long().expect("long flag"), values.join(",")).into());
            }
        }
    }
    let has_seed = sub_cmd.get_arguments().any(|a| a.get_id() == "seed");
    if has_seed && !explicit.contains("seed") && !from_file.contains("seed") {
        if let Some(seed) = env_seed {
            let seed = seed.trim().to_string();
            if seed.parse::<u64>().is_err() {
                return Err(CliError::usage(format!("{SEED_ENV} must be an unsigned integer, got `{seed}`")));
            }
            extra.push(format!("--seed={seed}").into());
        }
    }
    let mut full = argv;
    full.extend(extra);
    Ok(Cli::try_parse_from_argv(full))
}

trait ParseArgv: Sized {
    fn try_parse_from_argv(argv: Vec<OsString>) -> Result<Self, clap::Error>;
}

impl ParseArgv for Cli {
    fn try_parse_from_argv(argv: Vec<OsString>) -> Result<Self, clap::Error> {
        let matches = Cli::command().try_get_matches_from(argv)?;
        Cli::from_arg_matches(&matches)
    }
}

/// `(key, value)` pairs of the file, keys normalized to `snake_case`.
fn read_config(path: &Path, sub_name: &str) -> CliResult<Vec<(String, toml::Value)>> {
    let text = fs::read_to_string(path).map_err(|e| CliError::file(path, e))?;
    let table: toml::Table = text.parse().map_err(|e: toml::de::Error| CliError::Config {
        path: path.to_path_buf(),
        detail: e.message().to_string(),
    })?;
    let mut out = Vec::new();
    for (key, value) in table {
        match value {
            toml::Value::Table(section) => {
                // Sections for other subcommands are ignored, so one file
                // can describe a whole pipeline.
                if key == sub_name {
                    out.extend(section.into_iter().map(|(k, v)| (k.replace('-', "_"), v)));
                }
            }
            v => out.push((key.replace('-', "_"), v)),
        }
    }
    Ok(out)
}

fn flatten_value(path: &Path, key: &str, value: &toml::Value) -> CliResult<Vec<String>> {
    let scalar = |v: &toml::Value| -> CliResult<String> {
        match v {
            toml::Value::String(s) => Ok(s.clone()),
            toml::Value::Integer(i) => Ok(i.to_string()),
            toml::Value::Float(f) => Ok(f.to_string()),
            toml::Value::Boolean(b) => Ok(b.to_string()),
            _ => Err(CliError::Config {
                path: path.to_path_buf(),
                detail: format!("`{key}` must be a string, number or boolean"),
            }),
        }
    };
    match value {
        toml::Value::Array(items) => items.iter().map(scalar).collect(),
        v => Ok(vec![scalar(v)?]),
    }
}

/// Write the resolved settings of a run beside its outputs.
pub fn write_resolved<T: serde::Serialize>(dir: &Path, command: &str, args: &T) -> CliResult<()> {
    let body = toml::to_string(args)?;
    let text = format!("# smoothcert {command}\n{body}");
    let path = dir.join("resolved_config.toml");
    fs::write(&path, text).map_err(|e| CliError::file(path, e))
}
