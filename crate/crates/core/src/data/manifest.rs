use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{load_png, ImagePair};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    #[default]
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

/// Filename templates for the rainy and clean halves of a pair, each containing
/// one `{id}` placeholder. Written as `RAINY:CLEAN`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PairPattern {
    rainy: (String, String),
    clean: (String, String),
}

const ID: &str = "{id}";

fn split_template(t: &str) -> Result<(String, String)> {
    let parts: Vec<&str> = t.split(ID).collect();
    if parts.len() != 2 {
        return Err(Error::InvalidArgument(format!(
            "pair template `{t}` must contain exactly one `{ID}`"
        )));
    }
    Ok((parts[0].to_string(), parts[1].to_string()))
}

impl PairPattern {
    pub fn new(rainy: &str, clean: &str) -> Result<Self> {
        let pattern = PairPattern { rainy: split_template(rainy)?, clean: split_template(clean)? };
        if pattern.rainy == pattern.clean {
            return Err(Error::InvalidArgument("rainy and clean templates are identical".into()));
        }
        Ok(pattern)
    }

    pub fn rainy_name(&self, id: &str) -> String {
        format!("{}{id}{}", self.rainy.0, self.rainy.1)
    }

    pub fn clean_name(&self, id: &str) -> String {
        format!("{}{id}{}", self.clean.0, self.clean.1)
    }

    fn match_template<'a>(t: &(String, String), name: &'a str) -> Option<&'a str> {
        let id = name.strip_prefix(t.0.as_str())?.strip_suffix(t.1.as_str())?;
        (!id.is_empty()).then_some(id)
    }

    pub fn rainy_id<'a>(&self, name: &'a str) -> Option<&'a str> {
        Self::match_template(&self.rainy, name)
    }

    pub fn clean_id<'a>(&self, name: &'a str) -> Option<&'a str> {
        Self::match_template(&self.clean, name)
    }
}

impl Default for PairPattern {
    fn default() -> Self {
        PairPattern::new("rain-{id}.png", "norain-{id}.png").expect("valid default pattern")
    }
}

impl FromStr for PairPattern {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (rainy, clean) = s.split_once(':').ok_or_else(|| {
            Error::InvalidArgument(format!("pair pattern `{s}` must look like `rain-{ID}.png:norain-{ID}.png`"))
        })?;
        PairPattern::new(rainy, clean)
    }
}

impl fmt::Display for PairPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.rainy_name(ID), self.clean_name(ID))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PairEntry {
    pub id: String,
    pub rainy: PathBuf,
    pub clean: PathBuf,
}

#[derive(Clone, Debug)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub pairs: Vec<PairEntry>,
    pub split: Split,
    /// Files that matched one template but had no partner.
    pub unpaired: Vec<PathBuf>,
}

impl DatasetManifest {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn with_split(mut self, split: Split) -> Self {
        self.split = split;
        self
    }

    pub fn warnings(&self) -> Vec<String> {
        self.unpaired.iter().map(|p| format!("unpaired file {}", p.display())).collect()
    }

    pub fn load_pair(&self, i: usize) -> Result<ImagePair> {
        let e = &self.pairs[i];
        ImagePair::new(e.id.clone(), load_png(&e.rainy)?, load_png(&e.clean)?)
    }
}

/// Scans `root` (non-recursively) for files matching `pattern`. Pairs are sorted by id.
pub fn load_manifest(root: &Path, pattern: &PairPattern) -> Result<DatasetManifest> {
    if !root.is_dir() {
        return Err(Error::Data(format!("data root {} is not a directory", root.display())));
    }
    let mut rainy = BTreeMap::new();
    let mut clean = BTreeMap::new();
    for entry in std::fs::read_dir(root)? {
        let entry = entry?;
        if !entry.file_type()?.is_file() {
            continue;
        }
        let Ok(name) = entry.file_name().into_string() else { continue };
        if let Some(id) = pattern.rainy_id(&name) {
            rainy.insert(id.to_string(), entry.path());
        } else if let Some(id) = pattern.clean_id(&name) {
            clean.insert(id.to_string(), entry.path());
        }
    }
    let mut pairs = Vec::new();
    let mut unpaired = Vec::new();
    for (id, r) in &rainy {
        match clean.get(id) {
            Some(c) => pairs.push(PairEntry { id: id.clone(), rainy: r.clone(), clean: c.clone() }),
            None => unpaired.push(r.clone()),
        }
    }
    unpaired.extend(clean.iter().filter(|(id, _)| !rainy.contains_key(*id)).map(|(_, p)| p.clone()));
    unpaired.sort();
    if pairs.is_empty() {
        return Err(Error::Data(format!(
            "no pairs found in {} (pattern {pattern})",
            root.display()
        )));
    }
    Ok(DatasetManifest { root: root.to_path_buf(), pairs, split: Split::Train, unpaired })
}
