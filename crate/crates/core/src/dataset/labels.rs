//! The closed emotion label set and group mappings over it.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::de::{MapAccess, Visitor};
use serde::{Deserialize, Deserializer, Serialize};

use crate::error::{Error, Result};

macro_rules! emotions {
    ($($variant:ident => $name:literal),+ $(,)?) => {
        /// The twelve investor-emotion classes, in corpus label order.
        #[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        #[serde(rename_all = "lowercase")]
        pub enum Emotion {
            $($variant),+
        }

        impl Emotion {
            pub const ALL: [Emotion; 12] = [$(Emotion::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self {
                    $(Emotion::$variant => $name),+
                }
            }
        }

        impl FromStr for Emotion {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($name => Ok(Emotion::$variant),)+
                    other => Err(Error::UnknownLabel(other.to_string())),
                }
            }
        }
    };
}

emotions! {
    Optimism => "optimism",
    Anxiety => "anxiety",
    Excitement => "excitement",
    Disgust => "disgust",
    Belief => "belief",
    Ambiguous => "ambiguous",
    Amusement => "amusement",
    Confusion => "confusion",
    Anger => "anger",
    Panic => "panic",
    Surprise => "surprise",
    Depression => "depression",
}

pub const NUM_CLASSES: usize = 12;

impl Emotion {
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Emotion> {
        Self::ALL.get(i).copied()
    }
}

impl fmt::Display for Emotion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

pub fn emotion_names() -> Vec<String> {
    Emotion::ALL.iter().map(|e| e.as_str().to_string()).collect()
}

/// A total assignment of the twelve labels to coarser groups, with an optional
/// set of labels that have no group.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMap {
    pub name: String,
    mapping: BTreeMap<Emotion, String>,
    excluded: BTreeSet<Emotion>,
}

#[derive(Deserialize)]
struct LabelMapFile {
    name: String,
    #[serde(deserialize_with = "ordered_pairs")]
    mapping: Vec<(String, String)>,
    #[serde(default)]
    excluded: Vec<String>,
}

fn ordered_pairs<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Vec<(String, String)>, D::Error> {
    struct Pairs;
    impl<'de> Visitor<'de> for Pairs {
        type Value = Vec<(String, String)>;
        fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
            f.write_str("an object of label -> group")
        }
        fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> std::result::Result<Self::Value, A::Error> {
            let mut out = Vec::new();
            while let Some(pair) = map.next_entry::<String, String>()? {
                out.push(pair);
            }
            Ok(out)
        }
    }
    d.deserialize_map(Pairs)
}

impl LabelMap {
    /// Validates totality: each label is mapped exactly once or excluded, never both.
    pub fn new(
        name: impl Into<String>,
        pairs: impl IntoIterator<Item = (String, String)>,
        excluded: impl IntoIterator<Item = String>,
    ) -> Result<Self> {
        let mut mapping = BTreeMap::new();
        for (label, group) in pairs {
            let e = parse_label(&label)?;
            if mapping.insert(e, group).is_some() {
                return Err(Error::LabelMap(format!("label {label:?} mapped more than once")));
            }
        }
        let mut excl = BTreeSet::new();
        for label in excluded {
            let e = parse_label(&label)?;
            if mapping.contains_key(&e) || !excl.insert(e) {
                return Err(Error::LabelMap(format!("label {label:?} duplicated")));
            }
        }
        if let Some(missing) = Emotion::ALL
            .iter()
            .find(|e| !mapping.contains_key(e) && !excl.contains(e))
        {
            return Err(Error::LabelMap(format!("label {:?} missing", missing.as_str())));
        }
        if mapping.values().any(String::is_empty) {
            return Err(Error::LabelMap("empty group name".into()));
        }
        Ok(Self {
            name: name.into(),
            mapping,
            excluded: excl,
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: LabelMapFile =
            serde_json::from_str(text).map_err(|e| Error::LabelMap(e.to_string()))?;
        Self::new(file.name, file.mapping, file.excluded)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// `"ekman6"` or `"valence3"`.
    pub fn builtin(name: &str) -> Option<Self> {
        let text = match name {
            "ekman6" => include_str!("../../assets/ekman6.json"),
            "valence3" => include_str!("../../assets/valence3.json"),
            _ => return None,
        };
        Some(Self::from_json(text).expect("bundled label map is valid"))
    }

    /// The map sending each label to itself.
    pub fn identity() -> Self {
        Self::new(
            "emotion12",
            Emotion::ALL.iter().map(|e| (e.to_string(), e.to_string())),
            Vec::new(),
        )
        .expect("identity map is total")
    }

    /// `None` when the label is excluded.
    pub fn group(&self, label: Emotion) -> Option<&str> {
        self.mapping.get(&label).map(String::as_str)
    }

    pub fn is_excluded(&self, label: Emotion) -> bool {
        self.excluded.contains(&label)
    }

    /// Distinct group names, sorted.
    pub fn groups(&self) -> Vec<String> {
        let set: BTreeSet<&String> = self.mapping.values().collect();
        set.into_iter().cloned().collect()
    }

    pub fn excluded(&self) -> impl Iterator<Item = Emotion> + '_ {
        self.excluded.iter().copied()
    }
}

fn parse_label(label: &str) -> Result<Emotion> {
    label
        .parse()
        .map_err(|_| Error::LabelMap(format!("unknown label {label:?}")))
}
