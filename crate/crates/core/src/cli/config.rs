use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde_json::{Map, Value};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Int,
    Float,
    Bool,
    Str,
    /// A string or null.
    OptStr,
    /// A non-negative integer or the string "auto".
    IntOrAuto,
}

/// Every accepted key with its type and default.
const SCHEMA: &[(&str, Kind, &str)] = &[
    ("seed", Kind::Int, "42"),
    ("variant", Kind::Str, r#""sa""#),
    ("steps_per_stage", Kind::Int, "1000"),
    ("init_checkpoint", Kind::OptStr, "null"),
    ("checkpoint", Kind::OptStr, "null"),
    ("out", Kind::OptStr, "null"),
    ("data.kind", Kind::Str, r#""synthetic""#),
    ("data.dir", Kind::OptStr, "null"),
    ("data.split", Kind::Str, r#""train""#),
    ("data.clip_dim", Kind::Int, "8"),
    ("data.records", Kind::OptStr, "null"),
    ("data.symbolic_dir", Kind::OptStr, "null"),
    ("data.audio_dir", Kind::OptStr, "null"),
    ("data.audio_dim", Kind::Int, "768"),
    ("encoder.n_layers", Kind::Int, "2"),
    ("encoder.hidden", Kind::Int, "64"),
    ("encoder.n_heads", Kind::Int, "4"),
    ("encoder.ff_mult", Kind::Int, "4"),
    ("encoder.out_dim", Kind::Int, "64"),
    ("encoder.positional", Kind::Bool, "true"),
    ("train.peak_lr", Kind::Float, "0.001"),
    ("train.warmup_steps", Kind::IntOrAuto, r#""auto""#),
    ("train.batch_size", Kind::Int, "32"),
    ("train.weight_decay", Kind::Float, "0.01"),
    ("train.beta1", Kind::Float, "0.9"),
    ("train.beta2", Kind::Float, "0.999"),
    ("train.eps_adam", Kind::Float, "1e-8"),
    ("contrastive.temperature_init", Kind::Float, "0.07"),
    ("contrastive.learn_temperature", Kind::Bool, "true"),
    ("contrastive.similarity", Kind::Str, r#""cosine""#),
    ("contrastive.symmetric", Kind::Bool, "false"),
    ("synth.n_train", Kind::Int, "500"),
    ("synth.n_heldout", Kind::Int, "100"),
    ("synth.latent_dim", Kind::Int, "8"),
    ("synth.obs_dim", Kind::Int, "32"),
    ("synth.noise", Kind::Float, "0.05"),
    ("embed.modality", Kind::Str, r#""text""#),
    ("embed.input", Kind::OptStr, "null"),
    ("eval.queries", Kind::OptStr, "null"),
    ("eval.gallery", Kind::OptStr, "null"),
    ("eval.pairs", Kind::OptStr, "null"),
    ("eval.k", Kind::Int, "10"),
    ("probe.train", Kind::OptStr, "null"),
    ("probe.train_labels", Kind::OptStr, "null"),
    ("probe.test", Kind::OptStr, "null"),
    ("probe.test_labels", Kind::OptStr, "null"),
    ("probe.task", Kind::Str, r#""single_label""#),
    ("probe.l2", Kind::Float, "0.0001"),
    ("probe.max_iter", Kind::Int, "2000"),
    ("probe.lr", Kind::Float, "1.0"),
    ("project.input", Kind::OptStr, "null"),
    ("project.k", Kind::Int, "2"),
];

fn kind_of(key: &str) -> Option<Kind> {
    SCHEMA.iter().find(|(k, _, _)| *k == key).map(|(_, kind, _)| *kind)
}

pub fn valid_keys() -> impl Iterator<Item = &'static str> {
    SCHEMA.iter().map(|(k, _, _)| *k)
}

/// The valid key closest to `key` by edit distance, comparing whole keys and
/// also the part after the last dot.
pub fn nearest_key(key: &str) -> &'static str {
    let leaf = |k: &str| k.rsplit('.').next().unwrap_or(k).to_string();
    let key_leaf = leaf(key);
    valid_keys()
        .min_by_key(|k| {
            let whole = strsim::damerau_levenshtein(key, k);
            let tail = strsim::damerau_levenshtein(&key_leaf, &leaf(k));
            (whole.min(tail), whole)
        })
        .expect("schema is non-empty")
}

fn unknown_key(key: &str) -> Error {
    Error::Config(format!(
        "unknown key {key:?}; did you mean {:?}? valid keys: {}",
        nearest_key(key),
        valid_keys().collect::<Vec<_>>().join(", ")
    ))
}

fn check_value(key: &str, kind: Kind, v: Value) -> Result<Value> {
    let bad = |v: &Value| Error::Config(format!("key {key:?} has an invalid value {v}"));
    let ok = match (kind, &v) {
        (Kind::Int, Value::Number(n)) => n.is_u64(),
        (Kind::Float, Value::Number(_)) => true,
        (Kind::Bool, Value::Bool(_)) => true,
        (Kind::Str, Value::String(_)) => true,
        (Kind::OptStr, Value::String(_) | Value::Null) => true,
        (Kind::IntOrAuto, Value::Number(n)) => n.is_u64(),
        (Kind::IntOrAuto, Value::String(s)) => s == "auto",
        _ => false,
    };
    if ok {
        Ok(v)
    } else {
        Err(bad(&v))
    }
}

/// Reads a flag value: JSON when it parses as such, unless the key expects a
/// string, and a bare string otherwise.
fn parse_flag_value(kind: Kind, raw: &str) -> Value {
    if matches!(kind, Kind::Str | Kind::OptStr) && raw != "null" {
        return Value::String(raw.to_string());
    }
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

/// Fully resolved settings: every schema key with a value.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, Value>,
}

/// Merges defaults, the JSON object in `file` (if any) and `key=value`
/// overrides, in that order of increasing precedence.
pub fn parse_config(file: Option<&Path>, overrides: &[String]) -> Result<RunConfig> {
    let mut values: BTreeMap<String, Value> = SCHEMA
        .iter()
        .map(|(k, _, d)| (k.to_string(), serde_json::from_str(d).expect("valid default")))
        .collect();
    if let Some(path) = file {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let obj: Map<String, Value> = if text.trim().is_empty() {
            Map::new()
        } else {
            match serde_json::from_str(&text)? {
                Value::Object(m) => m,
                _ => return Err(Error::Config(format!("{} is not a JSON object", path.display()))),
            }
        };
        for (k, v) in obj {
            let kind = kind_of(&k).ok_or_else(|| unknown_key(&k))?;
            values.insert(k.clone(), check_value(&k, kind, v)?);
        }
    }
    for o in overrides {
        let (k, raw) = o
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override {o:?} is not of the form key=value")))?;
        let kind = kind_of(k).ok_or_else(|| unknown_key(k))?;
        values.insert(k.to_string(), check_value(k, kind, parse_flag_value(kind, raw))?);
    }
    Ok(RunConfig { values })
}

impl RunConfig {
    /// The resolved configuration as a JSON object; a valid config file.
    pub fn to_json(&self) -> Value {
        Value::Object(self.values.clone().into_iter().collect())
    }

    fn value(&self, key: &str) -> &Value {
        self.values.get(key).unwrap_or_else(|| panic!("{key} is not a schema key"))
    }

    pub fn u64(&self, key: &str) -> u64 {
        self.value(key).as_u64().expect("checked integer")
    }

    pub fn usize(&self, key: &str) -> usize {
        self.u64(key) as usize
    }

    pub fn f64(&self, key: &str) -> f64 {
        self.value(key).as_f64().expect("checked number")
    }

    pub fn bool(&self, key: &str) -> bool {
        self.value(key).as_bool().expect("checked bool")
    }

    pub fn str(&self, key: &str) -> &str {
        self.value(key).as_str().expect("checked string")
    }

    pub fn opt_path(&self, key: &str) -> Option<PathBuf> {
        self.value(key).as_str().map(PathBuf::from)
    }

    /// A path that the current command cannot do without.
    pub fn path(&self, key: &str) -> Result<PathBuf> {
        self.opt_path(key)
            .ok_or_else(|| Error::Config(format!("missing required key {key:?}")))
    }

    /// `None` for "auto".
    pub fn int_or_auto(&self, key: &str) -> Option<u64> {
        self.value(key).as_u64()
    }
}
