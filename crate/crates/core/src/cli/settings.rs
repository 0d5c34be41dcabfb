//! `key=value` settings merged from a config file and command-line flags.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Raw settings. Flags override file values; every typed read is recorded so
/// the fully resolved configuration can be written back out.
#[derive(Debug, Default)]
pub struct Settings {
    raw: BTreeMap<String, String>,
    resolved: BTreeMap<String, String>,
}

pub fn parse_config_text(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    let mut offset = 0;
    for line in text.lines() {
        let here = offset;
        offset += line.len() + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::parse(here, format!("expected key=value, got {line:?}")))?;
        out.insert(k.trim().replace('-', "_"), v.trim().to_string());
    }
    Ok(out)
}

impl Settings {
    pub fn new(config: Option<&Path>, flags: Vec<(&str, Option<String>)>) -> Result<Self> {
        let mut raw = match config {
            Some(path) => {
                let text = fs::read_to_string(path)
                    .map_err(|e| Error::io(format!("reading config {}", path.display()), e))?;
                parse_config_text(&text)?
            }
            None => BTreeMap::new(),
        };
        for (k, v) in flags {
            if let Some(v) = v {
                raw.insert(k.to_string(), v);
            }
        }
        Ok(Self {
            raw,
            resolved: BTreeMap::new(),
        })
    }

    pub fn has(&self, key: &str) -> bool {
        self.raw.contains_key(key)
    }

    pub fn get<V: FromStr + ToString>(&mut self, key: &str, default: V) -> Result<V> {
        let v = match self.raw.get(key) {
            Some(raw) => raw
                .parse()
                .map_err(|_| Error::usage(format!("bad value {raw:?} for {key}")))?,
            None => default,
        };
        self.resolved.insert(key.to_string(), v.to_string());
        Ok(v)
    }

    pub fn optional(&mut self, key: &str) -> Option<String> {
        let v = self.raw.get(key).cloned();
        if let Some(v) = &v {
            self.resolved.insert(key.to_string(), v.clone());
        }
        v
    }

    pub fn require(&mut self, key: &str) -> Result<String> {
        self.optional(key)
            .ok_or_else(|| Error::usage(format!("missing required setting --{}", key.replace('_', "-"))))
    }

    /// Records a derived value that was not read through [`get`](Self::get).
    pub fn record(&mut self, key: &str, value: impl ToString) {
        self.resolved.insert(key.to_string(), value.to_string());
    }

    /// Rejects keys that no command step consumed, which catches typos in
    /// config files.
    pub fn finish(&self) -> Result<()> {
        let unknown: Vec<&str> = self
            .raw
            .keys()
            .filter(|k| !self.resolved.contains_key(*k))
            .map(String::as_str)
            .collect();
        if unknown.is_empty() {
            Ok(())
        } else {
            Err(Error::usage(format!("unknown settings: {}", unknown.join(", "))))
        }
    }

    pub fn resolved_text(&self, command: &str) -> String {
        let mut s = format!("# resolved configuration for `{command}`\n");
        for (k, v) in &self.resolved {
            let _ = writeln!(s, "{k}={v}");
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.txt");
        fs::write(&path, "# comment\nlr = 0.5\nepochs=3\n").unwrap();
        let mut s = Settings::new(Some(&path), vec![("lr", Some("0.1".into())), ("seed", None)]).unwrap();
        assert_eq!(s.get("lr", 1.0).unwrap(), 0.1);
        assert_eq!(s.get("epochs", 9usize).unwrap(), 3);
        assert_eq!(s.get("seed", 7u64).unwrap(), 7);
        s.finish().unwrap();
        let text = s.resolved_text("train");
        assert!(text.contains("lr=0.1\n") && text.contains("seed=7\n"));
    }

    #[test]
    fn unknown_keys_rejected() {
        let s = Settings::new(None, vec![("lrr", Some("1".into()))]).unwrap();
        assert!(s.finish().unwrap_err().to_string().contains("lrr"));
    }

    #[test]
    fn malformed_line_has_offset() {
        let err = parse_config_text("a=1\nnonsense\n").unwrap_err();
        assert!(matches!(err, Error::Parse { offset: 4, .. }));
    }
}
