//! `key = value` configuration files.
//!
//! Keys are long flag names without the leading dashes (`lambda-t`,
//! `data-dir`, ...). Blank lines and `#` comments are ignored. Entries are
//! spliced into the argument list ahead of the user's own flags, so flags
//! given on the command line win.

use std::fs;
use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Read { path: String, source: std::io::Error },
    #[error("{path}:{line}: expected `key = value`")]
    Syntax { path: String, line: usize },
    #[error("--config needs a file path")]
    MissingPath,
}

pub fn parse(text: &str, path: &str) -> Result<Vec<(String, String)>, ConfigError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or(ConfigError::Syntax {
            path: path.to_string(),
            line: i + 1,
        })?;
        let key = key.trim().trim_start_matches("--").replace('_', "-");
        if key.is_empty() {
            return Err(ConfigError::Syntax {
                path: path.to_string(),
                line: i + 1,
            });
        }
        out.push((key, value.trim().to_string()));
    }
    Ok(out)
}

/// Finds `--config <path>` (or `--config=<path>`) after the subcommand and
/// splices the file's entries in front of the other flags.
pub fn expand(args: Vec<String>) -> Result<Vec<String>, ConfigError> {
    let mut path = None;
    let mut rest = Vec::with_capacity(args.len());
    let mut iter = args.into_iter();
    while let Some(arg) = iter.next() {
        if arg == "--config" {
            path = Some(iter.next().ok_or(ConfigError::MissingPath)?);
        } else if let Some(p) = arg.strip_prefix("--config=") {
            path = Some(p.to_string());
        } else {
            rest.push(arg);
        }
    }
    let Some(path) = path else {
        return Ok(rest);
    };
    let text = fs::read_to_string(Path::new(&path)).map_err(|source| ConfigError::Read {
        path: path.clone(),
        source,
    })?;
    let entries = parse(&text, &path)?;
    // Program name and subcommand come first.
    let split = rest.len().min(2);
    let mut out: Vec<String> = rest[..split].to_vec();
    for (key, value) in entries {
        if value == "true" {
            out.push(format!("--{key}"));
        } else {
            out.push(format!("--{key}={value}"));
        }
    }
    out.extend_from_slice(&rest[split..]);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_entries_and_comments() {
        let text = "# run\nlambda_t = 0.02\n\n--epochs=3  # short\ndense = true\n";
        let entries = parse(text, "c").unwrap();
        assert_eq!(
            entries,
            vec![
                ("lambda-t".to_string(), "0.02".to_string()),
                ("epochs".to_string(), "3".to_string()),
                ("dense".to_string(), "true".to_string()),
            ]
        );
        assert!(matches!(
            parse("novalue\n", "c"),
            Err(ConfigError::Syntax { line: 1, .. })
        ));
    }

    #[test]
    fn command_line_flags_come_last() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        fs::write(&path, "epochs = 3\nrho = 0.5\n").unwrap();
        let args: Vec<String> = ["sf", "train", "--epochs", "7", "--config", path.to_str().unwrap()]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let out = expand(args).unwrap();
        assert_eq!(out, vec!["sf", "train", "--epochs=3", "--rho=0.5", "--epochs", "7"]);
    }
}
