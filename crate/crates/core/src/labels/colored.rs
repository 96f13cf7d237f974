//! Yarn-slot prefixed ("colored") complete labels and yarn types.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Single-yarn or multi-yarn fabric.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum YarnKind {
    Sj,
    Mj,
}

impl YarnKind {
    pub fn as_str(self) -> &'static str {
        match self {
            YarnKind::Sj => "sj",
            YarnKind::Mj => "mj",
        }
    }
}

impl fmt::Display for YarnKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for YarnKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sj" => Ok(YarnKind::Sj),
            "mj" => Ok(YarnKind::Mj),
            _ => Err(Error::Config(format!("unknown yarn kind {s:?} (expected sj or mj)"))),
        }
    }
}

/// Yarn type of a sample. `sj` has one color; `mj` has two to four.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct YarnType {
    kind: YarnKind,
    color_count: u8,
}

impl YarnType {
    pub const SJ: YarnType = YarnType {
        kind: YarnKind::Sj,
        color_count: 1,
    };

    pub fn sj() -> Self {
        Self::SJ
    }

    pub fn mj(color_count: u8) -> Result<Self> {
        if !(2..=4).contains(&color_count) {
            return Err(Error::ColoredLabel(format!(
                "multi-yarn color count must be 2..=4, got {color_count}"
            )));
        }
        Ok(YarnType {
            kind: YarnKind::Mj,
            color_count,
        })
    }

    pub fn kind(&self) -> YarnKind {
        self.kind
    }

    pub fn color_count(&self) -> u8 {
        self.color_count
    }

    pub fn is_sj(&self) -> bool {
        self.kind == YarnKind::Sj
    }
}

impl fmt::Display for YarnType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            YarnKind::Sj => write!(f, "sj"),
            YarnKind::Mj => write!(f, "{}j", self.color_count),
        }
    }
}

impl FromStr for YarnType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sj" => Ok(Self::SJ),
            "2j" => Self::mj(2),
            "3j" => Self::mj(3),
            "4j" => Self::mj(4),
            other => Err(Error::ColoredLabel(format!("unknown yarn type {other:?}"))),
        }
    }
}

impl Serialize for YarnType {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for YarnType {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// A complete label tagged with the yarn that knits it, e.g. `(1/2j)FK,MAK`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ColoredLabel {
    pub yarn_slot: u8,
    pub yarn_count: u8,
    pub base_name: String,
}

impl ColoredLabel {
    pub fn new(yarn_slot: u8, yarn_count: u8, base_name: impl Into<String>) -> Result<Self> {
        let label = ColoredLabel {
            yarn_slot,
            yarn_count,
            base_name: base_name.into(),
        };
        label.check()?;
        Ok(label)
    }

    fn check(&self) -> Result<()> {
        if !(1..=4).contains(&self.yarn_count) {
            return Err(Error::ColoredLabel(format!(
                "yarn count {} outside 1..=4",
                self.yarn_count
            )));
        }
        if self.yarn_slot < 1 || self.yarn_slot > self.yarn_count {
            return Err(Error::ColoredLabel(format!(
                "yarn slot {} exceeds yarn count {}",
                self.yarn_slot, self.yarn_count
            )));
        }
        if self.base_name.is_empty() {
            return Err(Error::ColoredLabel("empty base name".into()));
        }
        Ok(())
    }

    /// Parses either a prefixed label or a bare (single-yarn) base name.
    pub fn parse(s: &str) -> Result<Self> {
        let Some(rest) = s.strip_prefix('(') else {
            return ColoredLabel::new(1, 1, s);
        };
        let close = rest
            .find(')')
            .ok_or_else(|| Error::ColoredLabel(format!("unterminated yarn prefix in {s:?}")))?;
        let prefix = &rest[..close];
        let base = &rest[close + 1..];
        let (slot, count) = prefix
            .strip_suffix('j')
            .and_then(|p| p.split_once('/'))
            .ok_or_else(|| Error::ColoredLabel(format!("malformed yarn prefix {prefix:?}")))?;
        let slot: u8 = slot
            .parse()
            .map_err(|_| Error::ColoredLabel(format!("bad yarn slot in {s:?}")))?;
        let count: u8 = count
            .parse()
            .map_err(|_| Error::ColoredLabel(format!("bad yarn count in {s:?}")))?;
        ColoredLabel::new(slot, count, base)
    }
}

impl fmt::Display for ColoredLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.yarn_count == 1 {
            write!(f, "{}", self.base_name)
        } else {
            write!(f, "({}/{}j){}", self.yarn_slot, self.yarn_count, self.base_name)
        }
    }
}

/// Strips the yarn prefix from a colored complete label. Idempotent.
pub fn aggregate_colored(name: &str) -> Result<String> {
    Ok(ColoredLabel::parse(name)?.base_name)
}
