//! Plain-text formats: dense matrices and flat `key = value` configs.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;
use std::str::FromStr;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Shortest form that round-trips an `f64` exactly (17 significant digits).
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Header `rows cols`, then one row per line, entries space-separated.
pub fn write_matrix<W: Write>(m: &DMatrix<f64>, mut w: W) -> Result<()> {
    writeln!(w, "{} {}", m.nrows(), m.ncols())?;
    for row in m.row_iter() {
        let line: Vec<String> = row.iter().map(|&v| fmt_f64(v)).collect();
        writeln!(w, "{}", line.join(" "))?;
    }
    Ok(())
}

fn parse_token<T: FromStr>(tok: Option<&str>, what: &str) -> Result<T> {
    let tok = tok.ok_or_else(|| Error::Parse(format!("missing {what}")))?;
    tok.parse()
        .map_err(|_| Error::Parse(format!("bad {what} {tok:?}")))
}

pub fn read_matrix<R: BufRead>(r: R) -> Result<DMatrix<f64>> {
    let mut lines = r.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Parse("empty matrix file".into()))??;
    let mut it = header.split_whitespace();
    let rows: usize = parse_token(it.next(), "row count")?;
    let cols: usize = parse_token(it.next(), "column count")?;
    if it.next().is_some() {
        return Err(Error::Parse("trailing tokens in matrix header".into()));
    }
    let mut data = Vec::with_capacity(rows * cols);
    for line in lines {
        let line = line?;
        for tok in line.split_whitespace() {
            let v: f64 = parse_token(Some(tok), "matrix entry")?;
            if !v.is_finite() {
                return Err(Error::Parse(format!("non-finite matrix entry {tok}")));
            }
            data.push(v);
        }
    }
    if data.len() != rows * cols {
        return Err(Error::Parse(format!(
            "expected {} entries for a {rows}x{cols} matrix, found {}",
            rows * cols,
            data.len()
        )));
    }
    Ok(DMatrix::from_row_slice(rows, cols, &data))
}

pub fn save_matrix(m: &DMatrix<f64>, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_matrix(m, &mut buf)?;
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn load_matrix(path: &Path) -> Result<DMatrix<f64>> {
    let file = std::fs::File::open(path)?;
    read_matrix(std::io::BufReader::new(file))
}

/// Flat `key = value` configuration. `#` starts a comment; blank lines are
/// ignored; later duplicates are rejected.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct KeyValues {
    map: BTreeMap<String, String>,
}

impl KeyValues {
    pub fn parse(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("line {}: expected key = value", lineno + 1)))?;
            let key = k.trim().to_string();
            if key.is_empty() {
                return Err(Error::Parse(format!("line {}: empty key", lineno + 1)));
            }
            if map.insert(key.clone(), v.trim().to_string()).is_some() {
                return Err(Error::Parse(format!("line {}: duplicate key {key}", lineno + 1)));
            }
        }
        Ok(Self { map })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.map.insert(key.to_string(), value.to_string());
    }

    pub fn contains(&self, key: &str) -> bool {
        self.map.contains_key(key)
    }

    pub fn str(&self, key: &str) -> Option<&str> {
        self.map.get(key).map(String::as_str)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        self.map
            .get(key)
            .map(|v| {
                v.parse()
                    .map_err(|_| Error::Parse(format!("key {key}: cannot parse {v:?}")))
            })
            .transpose()
    }

    pub fn require<T: FromStr>(&self, key: &str) -> Result<T> {
        self.get(key)?
            .ok_or_else(|| Error::Parse(format!("missing key {key}")))
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        Ok(self.get(key)?.unwrap_or(default))
    }

    /// Comma-separated list.
    pub fn list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>> {
        self.map
            .get(key)
            .map(|v| {
                v.split(',')
                    .map(|tok| {
                        tok.trim()
                            .parse()
                            .map_err(|_| Error::Parse(format!("key {key}: bad list item {tok:?}")))
                    })
                    .collect()
            })
            .transpose()
    }

    /// Keys starting with `prefix`, with the prefix removed.
    pub fn with_prefix(&self, prefix: &str) -> Self {
        let map = self
            .map
            .iter()
            .filter_map(|(k, v)| k.strip_prefix(prefix).map(|rest| (rest.to_string(), v.clone())))
            .collect();
        Self { map }
    }

    /// Keys without a `.` in them.
    pub fn unprefixed(&self) -> Self {
        let map = self
            .map
            .iter()
            .filter(|(k, _)| !k.contains('.'))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        Self { map }
    }

    /// Fails on any key outside `allowed`.
    pub fn ensure_known(&self, allowed: &[&str]) -> Result<()> {
        match self.map.keys().find(|k| !allowed.contains(&k.as_str())) {
            Some(k) => Err(Error::Parse(format!("unknown key {k}"))),
            None => Ok(()),
        }
    }

    pub fn render(&self) -> String {
        self.map.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matrix_round_trip_is_exact() {
        let m = DMatrix::from_row_slice(2, 3, &[0.1, -1.0 / 3.0, 1e-300, 2.5, f64::MAX, -0.0]);
        let mut buf = Vec::new();
        write_matrix(&m, &mut buf).unwrap();
        let back = read_matrix(buf.as_slice()).unwrap();
        assert_eq!(m, back);
        assert!(String::from_utf8(buf).unwrap().starts_with("2 3\n"));
    }

    #[test]
    fn malformed_matrices_fail() {
        assert!(read_matrix("2 2\n1 2 3\n".as_bytes()).is_err());
        assert!(read_matrix("1 1\nx\n".as_bytes()).is_err());
        assert!(read_matrix("".as_bytes()).is_err());
        assert!(read_matrix("1 1\nNaN\n".as_bytes()).is_err());
    }

    #[test]
    fn key_values() {
        let kv = KeyValues::parse("# header\nn = 50\nlist = 1, 2.5 ,3 # trailing\n\nname=x\n").unwrap();
        assert_eq!(kv.require::<usize>("n").unwrap(), 50);
        assert_eq!(kv.list::<f64>("list").unwrap().unwrap(), vec![1.0, 2.5, 3.0]);
        assert_eq!(kv.str("name"), Some("x"));
        assert_eq!(kv.get_or("missing", 7u32).unwrap(), 7);
        assert!(kv.require::<usize>("name").is_err());
        assert!(kv.ensure_known(&["n", "list"]).is_err());
        assert!(KeyValues::parse("a = 1\na = 2").is_err());
        assert!(KeyValues::parse("novalue").is_err());
        assert_eq!(KeyValues::parse(&kv.render()).unwrap(), kv);
    }
}
