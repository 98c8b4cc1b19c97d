//! `--config` files and `--set` overrides as one ordered list of settings.

use std::fmt;
use std::fs;
use std::str::FromStr;

use anyhow::{Context, Result};
use lexsparse::trainer::parse_key_values;

use crate::Common;

/// A command-line mistake; exits with status 1.
#[derive(Debug)]
pub struct Usage(pub String);

impl fmt::Display for Usage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

/// Settings in precedence order: config file, then `--set`, then `--seed`.
/// Later entries win.
#[derive(Debug, Default)]
pub struct Keys(Vec<(String, String)>);

impl Keys {
    pub fn load(common: &Common) -> Result<Keys> {
        let mut pairs = Vec::new();
        if let Some(path) = &common.config {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            pairs.extend(parse_key_values(&text, path)?);
        }
        for o in &common.overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Usage(format!("--set expects KEY=VALUE, got {o:?}")))?;
            pairs.push((k.trim().to_string(), v.trim().to_string()));
        }
        Ok(Keys(pairs))
    }

    /// Like [`Keys::load`], with `--seed` applied as the `seed` key.
    pub fn load_seeded(common: &Common) -> Result<Keys> {
        let mut keys = Keys::load(common)?;
        if let Some(s) = common.seed {
            keys.0.push(("seed".into(), s.to_string()));
        }
        Ok(keys)
    }

    /// Removes every entry for `key`, returning the last value or `default`.
    pub fn take<V: FromStr>(&mut self, key: &str, default: V) -> Result<V> {
        let mut value = None;
        self.0.retain(|(k, v)| {
            if k == key {
                value = Some(v.clone());
                false
            } else {
                true
            }
        });
        match value {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| Usage(format!("bad value {v:?} for {key}")).into()),
        }
    }

    /// Fails on any entry not consumed by [`Keys::take`].
    pub fn finish(self) -> Result<()> {
        match self.0.first() {
            None => Ok(()),
            Some((k, _)) => Err(Usage(format!("unknown setting {k:?}")).into()),
        }
    }

    pub fn into_pairs(self) -> Vec<(String, String)> {
        self.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn keys(pairs: &[(&str, &str)]) -> Keys {
        Keys(pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect())
    }

    #[test]
    fn last_value_wins_and_leftovers_fail() {
        let mut k = keys(&[("k", "5"), ("tag", "x"), ("k", "7")]);
        assert_eq!(k.take("k", 1usize).unwrap(), 7);
        assert_eq!(k.take("missing", 3usize).unwrap(), 3);
        assert!(k.finish().is_err());
        let mut k = keys(&[("k", "five")]);
        assert!(k.take("k", 1usize).is_err());
    }

    #[test]
    fn set_flags_follow_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.cfg");
        fs::write(&path, "# comment\nk = 3\nmax_len = 9\n").unwrap();
        let common = Common {
            config: Some(path),
            overrides: vec!["k=4".into()],
            seed: Some(11),
            out: None,
        };
        let mut k = Keys::load_seeded(&common).unwrap();
        assert_eq!(k.take("k", 0usize).unwrap(), 4);
        assert_eq!(k.take("seed", 0u64).unwrap(), 11);
        assert_eq!(k.take("max_len", 0usize).unwrap(), 9);
        k.finish().unwrap();
        let bad = Common {
            overrides: vec!["novalue".into()],
            ..Common::default()
        };
        assert!(Keys::load(&bad).is_err());
    }
}
