//! Landmark sets and their CSV representation (`id,x,y,z,region`, mm).

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const LANDMARK_HEADER: &str = "id,x,y,z,region";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Region {
    Near,
    Far,
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Region::Near => "near",
            Region::Far => "far",
        })
    }
}

impl FromStr for Region {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "near" => Ok(Region::Near),
            "far" => Ok(Region::Far),
            other => Err(format!("unknown region '{other}'")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Landmark {
    pub id: String,
    pub position: [f64; 3],
    pub region: Region,
}

/// Landmarks with unique ids and finite positions.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LandmarkSet {
    entries: Vec<Landmark>,
}

impl LandmarkSet {
    pub fn new(entries: Vec<Landmark>) -> Result<Self> {
        let mut seen = HashSet::new();
        for e in &entries {
            if e.id.is_empty() || e.id.contains([',', '\n', '\r']) {
                return Err(Error::input(format!("invalid landmark id '{}'", e.id)));
            }
            if !seen.insert(e.id.as_str()) {
                return Err(Error::input(format!("duplicate landmark id '{}'", e.id)));
            }
            if e.position.iter().any(|c| !c.is_finite()) {
                return Err(Error::input(format!("landmark '{}' has a non-finite position", e.id)));
            }
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[Landmark] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Landmark> {
        self.entries.iter().find(|e| e.id == id)
    }

    /// Same ids and regions, new positions.
    pub fn with_positions(&self, positions: impl IntoIterator<Item = [f64; 3]>) -> Self {
        Self {
            entries: self
                .entries
                .iter()
                .zip(positions)
                .map(|(e, position)| Landmark { position, ..e.clone() })
                .collect(),
        }
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(LANDMARK_HEADER);
        s.push('\n');
        for e in &self.entries {
            let [x, y, z] = e.position;
            s.push_str(&format!("{},{x:?},{y:?},{z:?},{}\n", e.id, e.region));
        }
        s
    }

    pub fn parse_csv(text: &str, path: &Path) -> Result<Self> {
        let mut lines = text.lines();
        match lines.next().map(str::trim) {
            Some(LANDMARK_HEADER) => {}
            _ => return Err(Error::format(path, format!("landmark file must start with '{LANDMARK_HEADER}'"))),
        }
        let mut entries = Vec::new();
        for (n, line) in lines.enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').map(str::trim).collect();
            let bad = |msg: String| Error::format(path, format!("line {}: {msg}", n + 2));
            if f.len() != 5 {
                return Err(bad(format!("expected 5 fields, got {}", f.len())));
            }
            let mut position = [0.0; 3];
            for d in 0..3 {
                position[d] = f[d + 1]
                    .parse()
                    .map_err(|_| bad(format!("cannot parse coordinate '{}'", f[d + 1])))?;
            }
            let region = f[4].parse().map_err(bad)?;
            entries.push(Landmark {
                id: f[0].to_string(),
                position,
                region,
            });
        }
        Self::new(entries).map_err(|e| Error::format(path, e.to_string()))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_csv(&text, path)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}
