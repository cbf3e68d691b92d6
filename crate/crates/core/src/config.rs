//! Flat `key = value` configuration files.
//!
//! Blank lines and `#` comments are ignored. Keys cover both the model
//! architecture and the training run; see [`RunConfig`].

use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::training::TrainConfig;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KvEntry {
    pub line: usize,
    pub key: String,
    pub value: String,
}

pub fn parse_kv(text: &str) -> Result<Vec<KvEntry>> {
    let mut out: Vec<KvEntry> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = match raw.find('#') {
            Some(p) => &raw[..p],
            None => raw,
        }
        .trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content.split_once('=').ok_or_else(|| Error::ConfigLine {
            line,
            msg: format!("expected `key = value`, found `{content}`"),
        })?;
        let key = key.trim();
        let value = value.trim();
        if key.is_empty() || key.contains(char::is_whitespace) {
            return Err(Error::ConfigLine {
                line,
                msg: format!("invalid key `{key}`"),
            });
        }
        if out.iter().any(|e| e.key == key) {
            return Err(Error::ConfigLine {
                line,
                msg: format!("duplicate key `{key}`"),
            });
        }
        out.push(KvEntry {
            line,
            key: key.to_string(),
            value: value.to_string(),
        });
    }
    Ok(out)
}

pub fn write_kv<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> String {
    let mut s = String::new();
    for (k, v) in pairs {
        s.push_str(k);
        s.push_str(" = ");
        s.push_str(v);
        s.push('\n');
    }
    s
}

pub(crate) fn parse_value<T: FromStr>(key: &str, value: &str) -> std::result::Result<T, String>
where
    T::Err: Display,
{
    value
        .parse()
        .map_err(|e| format!("bad value `{value}` for `{key}`: {e}"))
}

/// Parses `true/false/1/0/yes/no/on/off`.
pub(crate) fn parse_flag(key: &str, value: &str) -> std::result::Result<bool, String> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(format!("bad boolean `{value}` for `{key}`")),
    }
}

/// Model and training settings read from one config file.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for entry in parse_kv(text)? {
            let handled = cfg
                .model
                .set(&entry.key, &entry.value)
                .and_then(|m| {
                    if m {
                        Ok(true)
                    } else {
                        cfg.train.set(&entry.key, &entry.value)
                    }
                })
                .map_err(|msg| Error::ConfigLine { line: entry.line, msg })?;
            if !handled {
                return Err(Error::ConfigLine {
                    line: entry.line,
                    msg: format!("unknown key `{}`", entry.key),
                });
            }
        }
        cfg.model.validate()?;
        cfg.train.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn to_text(&self) -> String {
        let mut pairs = self.model.to_pairs();
        pairs.extend(self.train.to_pairs());
        write_kv(pairs.iter().map(|(k, v)| (k.as_str(), v.as_str())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn comments_and_blank_lines_are_skipped() {
        let kv = parse_kv("# header\n\nembed_dim = 32  # trailing\nseed=4\n").unwrap();
        assert_eq!(kv.len(), 2);
        assert_eq!(
            kv[0],
            KvEntry {
                line: 3,
                key: "embed_dim".into(),
                value: "32".into()
            }
        );
        assert_eq!(kv[1].value, "4");
    }

    #[test]
    fn malformed_line_reports_its_number() {
        match parse_kv("a = 1\nnot a pair\n") {
            Err(Error::ConfigLine { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_key_and_bad_value_report_line() {
        match RunConfig::parse("embed_dim = 16\nfoo = 1\n") {
            Err(Error::ConfigLine { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        match RunConfig::parse("\n\nbatch_size = many\n") {
            Err(Error::ConfigLine { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn text_round_trip() {
        let mut cfg = RunConfig::default();
        cfg.model.embed_dim = 24;
        cfg.train.epochs = 7;
        cfg.train.augment.rot90 = false;
        let back = RunConfig::parse(&cfg.to_text()).unwrap();
        assert_eq!(back, cfg);
    }
}
