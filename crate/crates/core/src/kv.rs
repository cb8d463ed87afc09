//! Minimal sectioned key-value text format shared by the material presets
//! and run configuration files.
//!
//! ```text
//! # comment
//! [silicon]
//! m_atom_u = 28
//! ```

use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub key: String,
    pub value: String,
    pub line: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Section {
    pub name: String,
    pub line: usize,
    pub entries: Vec<Entry>,
}

impl Section {
    pub fn get(&self, key: &str) -> Option<&Entry> {
        self.entries.iter().rev().find(|e| e.key == key)
    }

    /// Parses the value under `key`, reporting the line on a type mismatch.
    pub fn parse<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.get(key) {
            None => Ok(None),
            Some(e) => e.value.parse::<T>().map(Some).map_err(|_| Error::Parse {
                line: e.line,
                msg: format!("cannot parse value '{}' for key '{}'", e.value, key),
            }),
        }
    }

    pub fn require<T: FromStr>(&self, key: &str) -> Result<T> {
        self.parse(key)?.ok_or_else(|| Error::Parse {
            line: self.line,
            msg: format!("section [{}] is missing key '{}'", self.name, key),
        })
    }

    /// Fails on the first key that is not in `allowed`.
    pub fn check_keys(&self, allowed: &[&str]) -> Result<()> {
        match self.entries.iter().find(|e| !allowed.contains(&e.key.as_str())) {
            Some(e) => Err(Error::Parse {
                line: e.line,
                msg: format!("unknown key '{}' in section [{}]", e.key, self.name),
            }),
            None => Ok(()),
        }
    }
}

/// Parses the whole document. Entries before the first section header land
/// in a section with an empty name.
pub fn parse(text: &str) -> Result<Vec<Section>> {
    let mut sections: Vec<Section> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let trimmed = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        }
        .trim();
        if trimmed.is_empty() {
            continue;
        }
        if let Some(rest) = trimmed.strip_prefix('[') {
            let name = rest.strip_suffix(']').ok_or_else(|| Error::Parse {
                line,
                msg: format!("malformed section header '{trimmed}'"),
            })?;
            sections.push(Section {
                name: name.trim().to_string(),
                line,
                entries: Vec::new(),
            });
            continue;
        }
        let (key, value) = trimmed.split_once('=').ok_or_else(|| Error::Parse {
            line,
            msg: format!("expected 'key = value', found '{trimmed}'"),
        })?;
        let key = key.trim();
        if key.is_empty() {
            return Err(Error::Parse {
                line,
                msg: "empty key".into(),
            });
        }
        if sections.is_empty() {
            sections.push(Section {
                name: String::new(),
                line,
                entries: Vec::new(),
            });
        }
        sections.last_mut().unwrap().entries.push(Entry {
            key: key.to_string(),
            value: value.trim().to_string(),
            line,
        });
    }
    Ok(sections)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sections_and_comments() {
        let doc = "# top\n[a]\nx = 1 # trailing\ny=two\n\n[b]\nz = 3.5\n";
        let s = parse(doc).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].name, "a");
        assert_eq!(s[0].parse::<i32>("x").unwrap(), Some(1));
        assert_eq!(s[0].get("y").unwrap().value, "two");
        assert_eq!(s[1].require::<f64>("z").unwrap(), 3.5);
    }

    #[test]
    fn type_mismatch_reports_line() {
        let s = parse("[a]\n\nx = nope\n").unwrap();
        match s[0].parse::<f64>("x") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_key_rejected() {
        let s = parse("[a]\nx = 1\nbogus = 2\n").unwrap();
        let err = s[0].check_keys(&["x"]).unwrap_err();
        assert!(err.to_string().contains("bogus"));
    }

    #[test]
    fn empty_document() {
        assert!(parse("").unwrap().is_empty());
        assert!(parse("# only comments\n\n").unwrap().is_empty());
    }

    #[test]
    fn malformed_lines() {
        assert!(parse("[a\n").is_err());
        assert!(parse("[a]\njust words\n").is_err());
    }
}
