//! Flat `key = value` configuration files with `[section]` headers.
//!
//! ```text
//! seed = 7
//!
//! [sgd]
//! variant = example1
//! H = 1 0; 0 2
//! eta_grid = 2^-3, 2^-4, 2^-5, 2^-6
//! ```
//!
//! `#` starts a comment. Lists are separated by commas or whitespace, matrix
//! rows by `;`. Numbers may be written `b^e` (e.g. `2^-3`). Lookups fall back
//! from the named section to the keys above the first header.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
struct Entry {
    value: String,
    line: usize,
}

#[derive(Debug, Clone, Default)]
pub struct Config {
    origin: PathBuf,
    sections: BTreeMap<String, BTreeMap<String, Entry>>,
}

pub fn parse_number(token: &str) -> Option<f64> {
    let t = token.trim();
    if let Some((b, e)) = t.split_once('^') {
        let b: f64 = b.trim().parse().ok()?;
        let e: f64 = e.trim().parse().ok()?;
        return Some(b.powf(e));
    }
    t.parse().ok()
}

fn tokens(s: &str) -> impl Iterator<Item = &str> {
    s.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
}

impl Config {
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let mut cfg = Config {
            origin: origin.to_path_buf(),
            sections: BTreeMap::new(),
        };
        let mut current = String::new();
        cfg.sections.insert(current.clone(), BTreeMap::new());
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| Error::Parse {
                path: origin.to_path_buf(),
                line: i + 1,
                msg,
            };
            if let Some(name) = line.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| err(format!("unterminated section header `{line}`")))?;
                current = name.trim().to_string();
                cfg.sections.entry(current.clone()).or_default();
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected `key = value`, found `{line}`")))?;
            let key = k.trim();
            if key.is_empty() {
                return Err(err("empty key".into()));
            }
            let section = cfg.sections.get_mut(&current).expect("section inserted");
            if section.contains_key(key) {
                return Err(err(format!("duplicate key `{key}`")));
            }
            section.insert(
                key.to_string(),
                Entry {
                    value: v.trim().to_string(),
                    line: i + 1,
                },
            );
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text, path)
    }

    pub fn has_section(&self, section: &str) -> bool {
        self.sections.contains_key(section)
    }

    fn entry(&self, section: &str, key: &str) -> Option<&Entry> {
        self.sections
            .get(section)
            .and_then(|s| s.get(key))
            .or_else(|| self.sections.get("").and_then(|s| s.get(key)))
    }

    fn bad(&self, e: &Entry, key: &str, what: &str) -> Error {
        Error::Parse {
            path: self.origin.clone(),
            line: e.line,
            msg: format!("`{key}` must be {what}, found `{}`", e.value),
        }
    }

    fn missing(&self, section: &str, key: &str) -> Error {
        Error::Config(format!("{}: missing key `{key}` in [{section}]", self.origin.display()))
    }

    pub fn str(&self, section: &str, key: &str) -> Option<&str> {
        self.entry(section, key).map(|e| e.value.as_str())
    }

    pub fn f64(&self, section: &str, key: &str) -> Result<Option<f64>> {
        self.entry(section, key)
            .map(|e| parse_number(&e.value).ok_or_else(|| self.bad(e, key, "a number")))
            .transpose()
    }

    pub fn usize(&self, section: &str, key: &str) -> Result<Option<usize>> {
        self.entry(section, key)
            .map(|e| match parse_number(&e.value) {
                Some(v) if v >= 0.0 && v.fract() == 0.0 && v < 2f64.powi(53) => Ok(v as usize),
                _ => Err(self.bad(e, key, "a non-negative integer")),
            })
            .transpose()
    }

    pub fn u64(&self, section: &str, key: &str) -> Result<Option<u64>> {
        self.entry(section, key)
            .map(|e| {
                e.value
                    .parse()
                    .map_err(|_| self.bad(e, key, "an unsigned 64-bit integer"))
            })
            .transpose()
    }

    pub fn list(&self, section: &str, key: &str) -> Result<Option<Vec<f64>>> {
        self.entry(section, key)
            .map(|e| {
                tokens(&e.value)
                    .map(|t| parse_number(t).ok_or_else(|| self.bad(e, key, "a list of numbers")))
                    .collect()
            })
            .transpose()
    }

    /// Square or rectangular matrix, rows separated by `;`.
    pub fn matrix(&self, section: &str, key: &str) -> Result<Option<DMatrix<f64>>> {
        let Some(e) = self.entry(section, key) else {
            return Ok(None);
        };
        let rows: Vec<Vec<f64>> = e
            .value
            .split(';')
            .map(|r| tokens(r).map(parse_number).collect::<Option<Vec<f64>>>())
            .collect::<Option<_>>()
            .ok_or_else(|| self.bad(e, key, "a matrix"))?;
        let ncols = rows.first().map_or(0, Vec::len);
        if ncols == 0 || rows.iter().any(|r| r.len() != ncols) {
            return Err(self.bad(e, key, "a matrix with equal-length rows"));
        }
        let flat: Vec<f64> = rows.concat();
        Ok(Some(DMatrix::from_row_slice(rows.len(), ncols, &flat)))
    }

    pub fn require_f64(&self, section: &str, key: &str) -> Result<f64> {
        self.f64(section, key)?.ok_or_else(|| self.missing(section, key))
    }

    pub fn require_usize(&self, section: &str, key: &str) -> Result<usize> {
        self.usize(section, key)?.ok_or_else(|| self.missing(section, key))
    }

    pub fn require_list(&self, section: &str, key: &str) -> Result<Vec<f64>> {
        self.list(section, key)?.ok_or_else(|| self.missing(section, key))
    }

    pub fn require_str(&self, section: &str, key: &str) -> Result<&str> {
        self.str(section, key).ok_or_else(|| self.missing(section, key))
    }
}
