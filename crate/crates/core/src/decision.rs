//! Binary multi-label coding decisions.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde::de::{self, MapAccess, Visitor};
use serde::ser::SerializeMap;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::codebook::Codebook;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecisionError {
    #[error("unknown code `{0}`")]
    UnknownCode(String),
}

/// One 0/1 slot per codebook code, in codebook order.
///
/// Values built through [`normalize_decision`] always cover the whole
/// codebook. Deserialized values keep whatever keys the document held; call
/// [`DecisionMap::renormalize`] to check them against a codebook.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DecisionMap {
    entries: Vec<(String, bool)>,
}

impl DecisionMap {
    pub fn get(&self, code: &str) -> Option<bool> {
        self.entries.iter().find(|(k, _)| k == code).map(|&(_, v)| v)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, bool)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), *v))
    }

    /// Code names set to 1.
    pub fn positives(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().filter(|(_, v)| *v).map(|(k, _)| k.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn renormalize(&self, cb: &Codebook) -> Result<DecisionMap, DecisionError> {
        normalize_decision(self.iter(), cb)
    }

    /// Codes whose value differs between the two maps.
    pub fn disputed<'a>(&'a self, other: &'a DecisionMap) -> impl Iterator<Item = &'a str> {
        self.iter()
            .filter(move |(k, v)| other.get(k) != Some(*v))
            .map(|(k, _)| k)
    }
}

/// Resolves every key of `raw` against `cb` and fills absent codes with 0.
///
/// When two raw keys resolve to the same code the later one wins.
pub fn normalize_decision<I, K>(raw: I, cb: &Codebook) -> Result<DecisionMap, DecisionError>
where
    I: IntoIterator<Item = (K, bool)>,
    K: AsRef<str>,
{
    let mut values = alloc::vec![false; cb.len()];
    for (key, value) in raw {
        let key = key.as_ref();
        let idx = cb
            .resolve(key)
            .ok_or_else(|| DecisionError::UnknownCode(key.trim().to_string()))?;
        values[idx] = value;
    }
    Ok(DecisionMap {
        entries: cb.names().map(String::from).zip(values).collect(),
    })
}

impl Serialize for DecisionMap {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut map = serializer.serialize_map(Some(self.entries.len()))?;
        for (k, v) in &self.entries {
            map.serialize_entry(k, &u8::from(*v))?;
        }
        map.end()
    }
}

impl<'de> Deserialize<'de> for DecisionMap {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct MapVisitor;

        impl<'de> Visitor<'de> for MapVisitor {
            type Value = DecisionMap;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a map of code names to 0/1")
            }

            fn visit_map<A: MapAccess<'de>>(self, mut access: A) -> Result<DecisionMap, A::Error> {
                let mut entries = Vec::new();
                while let Some((k, v)) = access.next_entry::<String, Binary>()? {
                    entries.push((k, v.0));
                }
                Ok(DecisionMap { entries })
            }
        }

        deserializer.deserialize_map(MapVisitor)
    }
}

struct Binary(bool);

impl<'de> Deserialize<'de> for Binary {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct BinaryVisitor;

        impl Visitor<'_> for BinaryVisitor {
            type Value = Binary;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("0, 1, true or false")
            }

            fn visit_bool<E: de::Error>(self, v: bool) -> Result<Binary, E> {
                Ok(Binary(v))
            }

            fn visit_u64<E: de::Error>(self, v: u64) -> Result<Binary, E> {
                match v {
                    0 => Ok(Binary(false)),
                    1 => Ok(Binary(true)),
                    _ => Err(E::invalid_value(de::Unexpected::Unsigned(v), &self)),
                }
            }

            fn visit_i64<E: de::Error>(self, v: i64) -> Result<Binary, E> {
                match v {
                    0 => Ok(Binary(false)),
                    1 => Ok(Binary(true)),
                    _ => Err(E::invalid_value(de::Unexpected::Signed(v), &self)),
                }
            }
        }

        deserializer.deserialize_any(BinaryVisitor)
    }
}
