//! Flat `key = value` text with `#` comments.

use std::str::FromStr;

use crate::error::{Error, Result};

/// Parsed `key = value` lines. Values are taken out one by one; whatever is
/// left at [`KeyValues::finish`] is reported as unknown.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KeyValues {
    entries: Vec<(usize, String, String)>,
}

impl KeyValues {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries: Vec<(usize, String, String)> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let Some((key, value)) = content.split_once('=') else {
                return Err(Error::Parse {
                    line,
                    message: format!("expected `key = value`, found `{content}`"),
                });
            };
            let key = key.trim();
            if key.is_empty() {
                return Err(Error::Parse {
                    line,
                    message: "empty key".into(),
                });
            }
            if let Some((first, ..)) = entries.iter().find(|(_, k, _)| k == key) {
                return Err(Error::Parse {
                    line,
                    message: format!("duplicate key `{key}` (first set on line {first})"),
                });
            }
            entries.push((line, key.to_string(), value.trim().to_string()));
        }
        Ok(Self { entries })
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.iter().any(|(_, k, _)| k == key)
    }

    /// Removes `key` and parses its value.
    pub fn take<T>(&mut self, key: &str) -> Result<Option<T>>
    where
        T: FromStr,
        T::Err: std::fmt::Display,
    {
        let Some(pos) = self.entries.iter().position(|(_, k, _)| k == key) else {
            return Ok(None);
        };
        let (line, _, value) = self.entries.remove(pos);
        value.parse().map(Some).map_err(|e| Error::Parse {
            line,
            message: format!("invalid value `{value}` for `{key}`: {e}"),
        })
    }

    pub fn take_or<T>(&mut self, key: &str, default: T) -> Result<T>
    where
        T: FromStr,
        T::Err: std::fmt::Display,
    {
        Ok(self.take(key)?.unwrap_or(default))
    }

    pub fn require<T>(&mut self, key: &str) -> Result<T>
    where
        T: FromStr,
        T::Err: std::fmt::Display,
    {
        self.take(key)?.ok_or_else(|| Error::MissingKey { key: key.to_string() })
    }

    /// Fails on the first key nobody asked for.
    pub fn finish(self) -> Result<()> {
        match self.entries.first() {
            None => Ok(()),
            Some((line, key, _)) => Err(Error::Parse {
                line: *line,
                message: format!("unknown key `{key}`"),
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_takes() {
        let mut kv = KeyValues::parse("# run\nm = 200\n\ngamma=0.9 # discount\nname = chain\n").unwrap();
        assert_eq!(kv.take::<usize>("m").unwrap(), Some(200));
        assert_eq!(kv.require::<f64>("gamma").unwrap(), 0.9);
        assert_eq!(kv.take_or("k", 20usize).unwrap(), 20);
        assert!(matches!(kv.clone().finish(), Err(Error::Parse { line: 5, .. })));
        assert_eq!(kv.require::<String>("name").unwrap(), "chain");
        kv.finish().unwrap();
    }

    #[test]
    fn reports_line_numbers() {
        assert!(matches!(KeyValues::parse("a = 1\nbroken\n"), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(KeyValues::parse("a = 1\na = 2\n"), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(KeyValues::parse(" = 2\n"), Err(Error::Parse { line: 1, .. })));
        let mut kv = KeyValues::parse("\n\nm = lots\n").unwrap();
        assert!(matches!(kv.take::<usize>("m"), Err(Error::Parse { line: 3, .. })));
        let mut kv = KeyValues::default();
        assert!(matches!(kv.require::<usize>("m"), Err(Error::MissingKey { .. })));
    }
}
