use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, substream, Stream};

/// Translated long-form annotations of a record.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Translations {
    pub language: String,
    pub background: String,
    pub analysis: String,
    pub description: String,
    pub scene: String,
}

/// One metadata entry: basic information, annotations and optional translations.
///
/// Serialized as one JSON object per line with lowercase field names.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetadataRecord {
    pub title: String,
    pub artists: String,
    pub region: String,
    pub language: String,
    pub genres: Vec<String>,
    pub tags: Vec<String>,
    pub background: String,
    pub analysis: String,
    pub description: String,
    pub scene: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub translations: Option<Translations>,
}

/// Text assembled from a subset of record fields.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TextInput {
    pub text: String,
    pub source_fields: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ComposeMode {
    All,
    Sample,
}

const LONG_FORM: [&str; 4] = ["background", "analysis", "description", "scene"];

impl MetadataRecord {
    pub fn validate(&self) -> Result<()> {
        if self.title.trim().is_empty() {
            return Err(Error::InvalidRecord("title is empty".into()));
        }
        if !is_language_code(&self.language) {
            return Err(Error::InvalidRecord(format!(
                "language {:?} is not an ISO 639-1 code",
                self.language
            )));
        }
        if let Some(t) = &self.translations {
            if !is_language_code(&t.language) {
                return Err(Error::InvalidRecord(format!(
                    "translation language {:?} is not an ISO 639-1 code",
                    t.language
                )));
            }
            if !t.language.is_empty() && t.language == self.language {
                return Err(Error::InvalidRecord(
                    "translation language equals record language".into(),
                ));
            }
        }
        Ok(())
    }

    /// Non-empty fields in schema order as (name, rendered text).
    fn fields(&self) -> Vec<(&'static str, String)> {
        let list = |v: &[String]| {
            v.iter()
                .map(|s| s.trim())
                .filter(|s| !s.is_empty())
                .collect::<Vec<_>>()
                .join(", ")
        };
        [
            ("title", self.title.clone()),
            ("artists", self.artists.clone()),
            ("region", self.region.clone()),
            ("language", self.language.clone()),
            ("genres", list(&self.genres)),
            ("tags", list(&self.tags)),
            ("background", self.background.clone()),
            ("analysis", self.analysis.clone()),
            ("description", self.description.clone()),
            ("scene", self.scene.clone()),
        ]
        .into_iter()
        .filter(|(_, v)| !v.trim().is_empty())
        .collect()
    }

    fn translated_fields(&self) -> Vec<(&'static str, String)> {
        let Some(t) = &self.translations else {
            return Vec::new();
        };
        [
            ("translations.background", &t.background),
            ("translations.analysis", &t.analysis),
            ("translations.description", &t.description),
            ("translations.scene", &t.scene),
        ]
        .into_iter()
        .filter(|(_, v)| !v.trim().is_empty())
        .map(|(k, v)| (k, v.clone()))
        .collect()
    }
}

fn is_language_code(code: &str) -> bool {
    code.is_empty() || (code.len() == 2 && code.bytes().all(|b| b.is_ascii_lowercase()))
}

/// Builds the training text for a record.
///
/// `All` joins every non-empty field in schema order, translated long-form
/// fields last. `Sample` keeps each non-empty field (and the translations block
/// as one unit) with probability 1/2, redrawing when nothing is kept; a kept
/// translations block replaces the original long-form fields in place.
pub fn compose_text_input(
    record: &MetadataRecord,
    seed: u64,
    mode: ComposeMode,
) -> Result<TextInput> {
    let fields = record.fields();
    let translated = record.translated_fields();
    if fields.is_empty() && translated.is_empty() {
        return Err(Error::EmptyRecord);
    }
    record.validate()?;

    let parts: Vec<(&str, String)> = match mode {
        ComposeMode::All => fields.into_iter().chain(translated).collect(),
        ComposeMode::Sample => {
            let has_block = !translated.is_empty();
            let units = fields.len() + usize::from(has_block);
            let mut rng = substream(derive_seed(seed, &[0x7e47]), Stream::Sampling);
            let keep: Vec<bool> = loop {
                let draw: Vec<bool> = (0..units).map(|_| rng.gen_bool(0.5)).collect();
                if draw.iter().any(|&k| k) {
                    break draw;
                }
            };
            let use_translation = has_block && keep[units - 1];
            let mut out = Vec::new();
            for ((name, text), &k) in fields.into_iter().zip(&keep) {
                if use_translation && LONG_FORM.contains(&name) {
                    continue;
                }
                if k {
                    out.push((name, text));
                }
            }
            if use_translation {
                // translated fields take the long-form slots, which close the schema
                out.extend(translated);
            }
            out
        }
    };

    let text = parts
        .iter()
        .map(|(_, t)| t.as_str())
        .collect::<Vec<_>>()
        .join("\n");
    Ok(TextInput {
        text,
        source_fields: parts.iter().map(|(n, _)| n.to_string()).collect(),
    })
}

pub fn read_records_jsonl(path: &Path) -> Result<Vec<MetadataRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: MetadataRecord = serde_json::from_str(&line).map_err(|e| {
            Error::InvalidRecord(format!("{}:{}: {e}", path.display(), lineno + 1))
        })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn write_records_jsonl(path: &Path, records: &[MetadataRecord]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn basic() -> MetadataRecord {
        MetadataRecord {
            title: "A".into(),
            artists: "B".into(),
            ..Default::default()
        }
    }

    fn full() -> MetadataRecord {
        MetadataRecord {
            title: "Scarborough Fair".into(),
            artists: "Traditional".into(),
            region: "England".into(),
            language: "en".into(),
            genres: vec!["Folk".into(), "Ballad".into()],
            tags: vec!["modal".into()],
            background: "orig-background".into(),
            analysis: "orig-analysis".into(),
            description: "orig-description".into(),
            scene: "orig-scene".into(),
            translations: Some(Translations {
                language: "fr".into(),
                background: "trad-background".into(),
                analysis: "trad-analysis".into(),
                description: String::new(),
                scene: "trad-scene".into(),
            }),
        }
    }

    #[test]
    fn all_mode_joins_in_schema_order() {
        let t = compose_text_input(&basic(), 0, ComposeMode::All).unwrap();
        assert_eq!(t.text, "A\nB");
        assert_eq!(t.source_fields, vec!["title", "artists"]);
    }

    #[test]
    fn all_mode_renders_lists_and_translations() {
        let t = compose_text_input(&full(), 0, ComposeMode::All).unwrap();
        let lines: Vec<_> = t.text.lines().collect();
        assert_eq!(lines[4], "Folk, Ballad");
        assert_eq!(lines.last(), Some(&"trad-scene"));
        assert_eq!(lines.len(), 13);
    }

    #[test]
    fn sampling_is_deterministic() {
        let r = full();
        let a = compose_text_input(&r, 9, ComposeMode::Sample).unwrap();
        let b = compose_text_input(&r, 9, ComposeMode::Sample).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn drawn_translations_replace_originals() {
        let r = full();
        let mut found = false;
        for seed in 0..200 {
            let t = compose_text_input(&r, seed, ComposeMode::Sample).unwrap();
            if t.source_fields.iter().any(|f| f.starts_with("translations.")) {
                assert!(t.text.contains("trad-background"));
                assert!(!t.text.contains("orig-"));
                found = true;
                break;
            }
        }
        assert!(found, "no seed in 0..200 drew the translations block");
    }

    #[test]
    fn empty_record_is_rejected() {
        let err = compose_text_input(&MetadataRecord::default(), 0, ComposeMode::All).unwrap_err();
        assert_eq!(err.to_string(), "empty record");
    }

    #[test]
    fn invariants_are_validated() {
        let mut r = full();
        r.translations.as_mut().unwrap().language = "en".into();
        assert!(r.validate().is_err());
        let mut r = full();
        r.title.clear();
        assert!(r.validate().is_err());
        assert!(full().validate().is_ok());
    }

    #[test]
    fn jsonl_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.jsonl");
        write_records_jsonl(&p, &[full(), basic()]).unwrap();
        assert_eq!(read_records_jsonl(&p).unwrap(), vec![full(), basic()]);
        let line = std::fs::read_to_string(&p).unwrap();
        assert!(line.starts_with("{\"title\":"));
    }

    proptest! {
        #[test]
        fn sampled_fields_come_from_non_empty_fields(seed in any::<u64>(), mask in 0u16..2048) {
            let mut r = full();
            let blank = |bit: u16| mask & (1 << bit) != 0;
            if blank(1) { r.artists.clear(); }
            if blank(2) { r.region.clear(); }
            if blank(3) { r.genres.clear(); }
            if blank(4) { r.tags.clear(); }
            if blank(5) { r.background.clear(); }
            if blank(6) { r.analysis.clear(); }
            if blank(7) { r.description.clear(); }
            if blank(8) { r.scene.clear(); }
            if blank(9) { r.translations = None; }
            let available: Vec<String> = r.fields().into_iter().chain(r.translated_fields())
                .map(|(n, _)| n.to_string()).collect();
            let t = compose_text_input(&r, seed, ComposeMode::Sample).unwrap();
            prop_assert!(!t.text.is_empty());
            prop_assert!(!t.source_fields.is_empty());
            for f in &t.source_fields {
                prop_assert!(available.contains(f));
            }
        }
    }
}
