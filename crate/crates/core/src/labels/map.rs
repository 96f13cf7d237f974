use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of front labels.
pub const FRONT_K: usize = 14;
/// Width of the complete label head, including reserved slots.
pub const COMPLETE_K: usize = 34;

/// Which table a label map describes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpaceId {
    FrontSj,
    FrontMj,
    Complete,
}

impl SpaceId {
    pub fn space(self) -> LabelSpace {
        match self {
            SpaceId::FrontSj | SpaceId::FrontMj => LabelSpace::Front,
            SpaceId::Complete => LabelSpace::Complete,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SpaceId::FrontSj => "front_sj",
            SpaceId::FrontMj => "front_mj",
            SpaceId::Complete => "complete",
        }
    }

    fn from_stem(stem: &str) -> Option<Self> {
        match stem {
            "front_sj" => Some(SpaceId::FrontSj),
            "front_mj" => Some(SpaceId::FrontMj),
            "complete" => Some(SpaceId::Complete),
            _ => None,
        }
    }
}

/// The index space a grid lives in. Both front maps share one space.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelSpace {
    Front,
    Complete,
}

impl LabelSpace {
    /// Number of label indices in the space.
    pub fn k(self) -> usize {
        match self {
            LabelSpace::Front => FRONT_K,
            LabelSpace::Complete => COMPLETE_K,
        }
    }
}

impl fmt::Display for LabelSpace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LabelSpace::Front => write!(f, "front"),
            LabelSpace::Complete => write!(f, "complete"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelEntry {
    pub index: usize,
    pub name: String,
    pub color: [u8; 3],
}

/// Ordered label table. Complete maps also carry the projection onto front indices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMap {
    space_id: SpaceId,
    entries: Vec<LabelEntry>,
    front_projection: Option<Vec<usize>>,
}

impl LabelMap {
    pub fn new(
        space_id: SpaceId,
        entries: Vec<LabelEntry>,
        front_projection: Option<Vec<usize>>,
    ) -> Result<Self> {
        let map = LabelMap {
            space_id,
            entries,
            front_projection,
        };
        map.check()?;
        Ok(map)
    }

    fn check(&self) -> Result<()> {
        if self.entries.is_empty() {
            return Err(Error::MapFormat("map has no entries".into()));
        }
        let mut names = HashSet::new();
        for (i, e) in self.entries.iter().enumerate() {
            if e.index != i {
                return Err(Error::MapFormat(format!(
                    "indices must be contiguous from 0; entry {i} has index {}",
                    e.index
                )));
            }
            if !names.insert(e.name.as_str()) {
                return Err(Error::MapFormat(format!("duplicate name {:?}", e.name)));
            }
        }
        match self.space_id.space() {
            LabelSpace::Front => {
                if self.entries.len() != FRONT_K {
                    return Err(Error::MapFormat(format!(
                        "front map must have {FRONT_K} entries, got {}",
                        self.entries.len()
                    )));
                }
                if self.front_projection.is_some() {
                    return Err(Error::MapFormat("front map cannot carry front_index".into()));
                }
            }
            LabelSpace::Complete => {
                if self.entries.len() > COMPLETE_K {
                    return Err(Error::MapFormat(format!(
                        "complete map has at most {COMPLETE_K} entries, got {}",
                        self.entries.len()
                    )));
                }
                let proj = self
                    .front_projection
                    .as_ref()
                    .ok_or_else(|| Error::MapFormat("complete map requires front_index".into()))?;
                if proj.len() != self.entries.len() {
                    return Err(Error::MapFormat("front_index missing for some entries".into()));
                }
                if let Some(bad) = proj.iter().find(|&&f| f >= FRONT_K) {
                    return Err(Error::MapFormat(format!("front_index {bad} out of range")));
                }
            }
        }
        Ok(())
    }

    /// Parses map CSV text (`index,name,color[,front_index]`).
    pub fn from_csv_str(text: &str, space_id: SpaceId) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let headers = reader.headers().map_err(csv_to_map)?.clone();
        let col = |name: &str| headers.iter().position(|h| h == name);
        let (Some(ci), Some(cn), Some(cc)) = (col("index"), col("name"), col("color")) else {
            return Err(Error::MapFormat(format!(
                "header must be index,name,color[,front_index]; got {:?}",
                headers.iter().collect::<Vec<_>>()
            )));
        };
        let cf = col("front_index");

        let mut rows = Vec::new();
        for record in reader.records() {
            let record = record.map_err(csv_to_map)?;
            let field = |i: usize| record.get(i).unwrap_or("");
            let index: usize = field(ci)
                .parse()
                .map_err(|_| Error::MapFormat(format!("bad index {:?}", field(ci))))?;
            let color = parse_hex_color(field(cc))?;
            let front = match cf {
                Some(i) if !field(i).is_empty() => Some(
                    field(i)
                        .parse::<usize>()
                        .map_err(|_| Error::MapFormat(format!("bad front_index {:?}", field(i))))?,
                ),
                _ => None,
            };
            rows.push((index, field(cn).to_string(), color, front));
        }
        if rows.is_empty() {
            return Err(Error::MapFormat("map has no entries".into()));
        }
        let mut seen = HashSet::new();
        for (index, ..) in &rows {
            if !seen.insert(*index) {
                return Err(Error::MapFormat(format!("duplicate index {index}")));
            }
        }
        rows.sort_by_key(|r| r.0);

        let front_projection = if space_id.space() == LabelSpace::Complete {
            let proj: Option<Vec<usize>> = rows.iter().map(|r| r.3).collect();
            Some(proj.ok_or_else(|| Error::MapFormat("complete map requires front_index".into()))?)
        } else {
            None
        };
        let entries = rows
            .into_iter()
            .map(|(index, name, color, _)| LabelEntry { index, name, color })
            .collect();
        LabelMap::new(space_id, entries, front_projection)
    }

    pub fn to_csv_string(&self) -> String {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        let result: csv::Result<()> = (|| {
            if self.front_projection.is_some() {
                w.write_record(["index", "name", "color", "front_index"])?;
            } else {
                w.write_record(["index", "name", "color"])?;
            }
            for e in &self.entries {
                let mut rec = vec![e.index.to_string(), e.name.clone(), format_hex_color(e.color)];
                if let Some(p) = &self.front_projection {
                    rec.push(p[e.index].to_string());
                }
                w.write_record(&rec)?;
            }
            Ok(())
        })();
        result.expect("writing to memory");
        String::from_utf8(w.into_inner().expect("in-memory writer")).expect("utf8 csv")
    }

    pub fn space_id(&self) -> SpaceId {
        self.space_id
    }

    pub fn space(&self) -> LabelSpace {
        self.space_id.space()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[LabelEntry] {
        &self.entries
    }

    pub fn name(&self, index: usize) -> Option<&str> {
        self.entries.get(index).map(|e| e.name.as_str())
    }

    pub fn color(&self, index: usize) -> Option<[u8; 3]> {
        self.entries.get(index).map(|e| e.color)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.name == name)
    }

    /// Complete-index → front-index table; `None` on front maps.
    pub fn front_projection(&self) -> Option<&[usize]> {
        self.front_projection.as_deref()
    }
}

/// Loads a map, taking its space from the file stem (`front_sj`, `front_mj`,
/// `complete`) or, for other names, from the presence of a `front_index` column.
pub fn load_label_map(path: impl AsRef<Path>) -> Result<LabelMap> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    let space = path
        .file_stem()
        .and_then(|s| s.to_str())
        .and_then(SpaceId::from_stem)
        .unwrap_or_else(|| {
            let header = text.lines().next().unwrap_or("");
            if header.contains("front_index") {
                SpaceId::Complete
            } else {
                SpaceId::FrontSj
            }
        });
    LabelMap::from_csv_str(&text, space)
}

fn csv_to_map(e: csv::Error) -> Error {
    Error::MapFormat(e.to_string())
}

pub fn parse_hex_color(s: &str) -> Result<[u8; 3]> {
    let hex = s
        .strip_prefix('#')
        .filter(|h| h.len() == 6 && h.is_ascii())
        .ok_or_else(|| Error::MapFormat(format!("color must be #rrggbb, got {s:?}")))?;
    let mut rgb = [0u8; 3];
    for (i, c) in rgb.iter_mut().enumerate() {
        *c = u8::from_str_radix(&hex[2 * i..2 * i + 2], 16)
            .map_err(|_| Error::MapFormat(format!("bad color {s:?}")))?;
    }
    Ok(rgb)
}

pub fn format_hex_color(c: [u8; 3]) -> String {
    format!("#{:02x}{:02x}{:02x}", c[0], c[1], c[2])
}
