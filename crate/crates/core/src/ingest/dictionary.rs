use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::de::{Deserializer, MapAccess, Visitor};

use super::IngestError;

/// Counter name -> natural-language description.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CounterDictionary {
    pub entries: BTreeMap<String, String>,
    /// Keys that appeared more than once; the last occurrence won.
    pub duplicates: Vec<String>,
}

impl CounterDictionary {
    pub fn describe(&self, counter: &str) -> Option<&str> {
        self.entries.get(counter).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

impl FromIterator<(String, String)> for CounterDictionary {
    fn from_iter<I: IntoIterator<Item = (String, String)>>(iter: I) -> Self {
        CounterDictionary { entries: iter.into_iter().collect(), duplicates: Vec::new() }
    }
}

struct DictVisitor;

impl<'de> Visitor<'de> for DictVisitor {
    type Value = CounterDictionary;

    fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
        f.write_str("a flat JSON object mapping counter names to descriptions")
    }

    fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> Result<Self::Value, A::Error> {
        let mut dict = CounterDictionary::default();
        while let Some((key, value)) = map.next_entry::<String, String>()? {
            if dict.entries.insert(key.clone(), value).is_some() {
                dict.duplicates.push(key);
            }
        }
        Ok(dict)
    }
}

pub fn parse_counter_dictionary(text: &str, origin: &str) -> Result<CounterDictionary, IngestError> {
    if text.trim().is_empty() {
        return Ok(CounterDictionary::default());
    }
    let mut de = serde_json::Deserializer::from_str(text);
    let dict = (&mut de)
        .deserialize_map(DictVisitor)
        .and_then(|d| de.end().map(|_| d))
        .map_err(|source| IngestError::Json { origin: origin.to_string(), source })?;
    for key in &dict.duplicates {
        log::warn!("{origin}: duplicate dictionary key `{key}`, keeping the last value");
    }
    Ok(dict)
}

/// Loads `counter_dictionary.json`. Duplicate keys resolve last-wins.
pub fn load_counter_dictionary(path: &Path) -> Result<CounterDictionary, IngestError> {
    let text = std::fs::read_to_string(path).map_err(|e| IngestError::io(path, e))?;
    parse_counter_dictionary(&text, &path.display().to_string())
}
