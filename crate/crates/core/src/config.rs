//! Flat `key = value` configuration text.
//!
//! Blank lines and lines starting with `#` are ignored, as is anything after a
//! `#` preceded by whitespace. Nested settings use dotted keys
//! (`optimizer.step_size = 0.05`).

use std::collections::BTreeMap;
use std::str::FromStr;

use crate::error::{Error, Result};

pub type KvMap = BTreeMap<String, String>;

pub fn parse_kv(text: &str) -> Result<KvMap> {
    let mut out = KvMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = strip_comment(line).trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
            location: format!("line {}", lineno + 1),
            message: format!("expected `key = value`, got `{line}`"),
        })?;
        let key = key.trim();
        if key.is_empty() {
            return Err(Error::Parse { location: format!("line {}", lineno + 1), message: "empty key".into() });
        }
        if out.insert(key.to_string(), value.trim().to_string()).is_some() {
            return Err(Error::Parse {
                location: format!("line {}", lineno + 1),
                message: format!("duplicate key `{key}`"),
            });
        }
    }
    Ok(out)
}

fn strip_comment(line: &str) -> &str {
    if line.trim_start().starts_with('#') {
        return "";
    }
    line.char_indices()
        .find(|&(i, c)| c == '#' && i > 0 && line[..i].ends_with(char::is_whitespace))
        .map_or(line, |(i, _)| &line[..i])
}

pub fn render_kv(map: &KvMap) -> String {
    map.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
}

pub fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::InvalidConfig(format!("`{key}`: cannot parse `{value}`")))
}

pub fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse_value(key, s))
        .collect()
}

/// Renders a float so that it parses back to the same value.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_renders() {
        let m = parse_kv("# comment\n a = 1 \n\nb.c=x, y\n").unwrap();
        assert_eq!(m["a"], "1");
        assert_eq!(m["b.c"], "x, y");
        let m = parse_kv("a = 1   # trailing\nb = dir#1\n").unwrap();
        assert_eq!(m["a"], "1");
        assert_eq!(m["b"], "dir#1");
        assert_eq!(parse_kv(&render_kv(&m)).unwrap(), m);
        assert_eq!(parse_list::<f64>("k", "1, 2.5,3").unwrap(), vec![1.0, 2.5, 3.0]);
    }

    #[test]
    fn rejects_garbage() {
        assert!(parse_kv("novalue\n").is_err());
        assert!(parse_kv("a=1\na=2\n").is_err());
        assert!(parse_value::<usize>("k", "-1").is_err());
    }
}
