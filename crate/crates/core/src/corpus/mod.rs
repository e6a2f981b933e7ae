//! Labeled datasets, the task/attribute registry and seed sampling.
//!
//! Datasets are JSONL, one record per line. Field names depend on the task
//! shape:
//!
//! | shape              | fields                                   |
//! |--------------------|------------------------------------------|
//! | `single_text`      | `text`, `label`                          |
//! | `text_pair`        | `text1`, `text2`, `label`                |
//! | `question_choices` | `question`, `choices` (array), `answer`  |
//!
//! `id` and `origin` (`human` / `llm_proposed`) are optional on every shape.
//! Records without an id get `<task>-<line>` with 1-based line numbers.

mod sampling;
mod task;

use std::collections::{BTreeMap, HashSet};
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

pub use sampling::{sample_seed_set, sample_seed_set_with, select_pool, uniform_below, SampleRequest, SamplingMode, SeedSet};
pub use task::{TaskRegistry, TaskShape, TaskSpec, ANSWER_PLACEHOLDER};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{source_name}:{line}: malformed record: {reason}")]
    Parse {
        source_name: String,
        line: usize,
        reason: String,
    },
    #[error("{source_name}:{line}: label {label:?} is not a label of task {task}")]
    LabelAt {
        source_name: String,
        line: usize,
        task: String,
        label: String,
    },
    #[error("label {label:?} is not a label of task {task}")]
    UnknownLabel { task: String, label: String },
    #[error("unknown task {0:?}")]
    UnknownTask(String),
    #[error("invalid task spec {task}: {reason}")]
    InvalidSpec { task: String, reason: String },
    #[error("pool holds {available} examples labeled {label:?}, {required} required")]
    Capacity {
        label: String,
        available: usize,
        required: usize,
    },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    #[default]
    Human,
    LlmProposed,
}

/// One annotated example.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedExample {
    pub id: String,
    pub fields: BTreeMap<String, String>,
    /// Answer options, only for `question_choices` tasks; indexed like the
    /// task's label list.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub choices: Vec<String>,
    pub label: String,
    #[serde(default)]
    pub origin: Origin,
}

impl SeedExample {
    pub fn single(id: impl Into<String>, text: impl Into<String>, label: impl Into<String>) -> Self {
        let mut fields = BTreeMap::new();
        fields.insert("text".to_string(), text.into());
        Self {
            id: id.into(),
            fields,
            choices: Vec::new(),
            label: label.into(),
            origin: Origin::Human,
        }
    }

    pub fn field(&self, name: &str) -> Option<&str> {
        self.fields.get(name).map(String::as_str)
    }

    /// The text that generation rewrites.
    pub fn manipulated_text(&self, spec: &TaskSpec) -> &str {
        self.field(&spec.manipulated_field).unwrap_or("")
    }

    /// Surface text of the choice a label points at (multiple-choice tasks).
    pub fn choice_for(&self, spec: &TaskSpec, label: &str) -> Option<&str> {
        let idx = spec.label_index(label)?;
        self.choices.get(idx).map(String::as_str)
    }

    /// Checks the example against the task: known label, all text fields
    /// present and non-empty.
    pub fn validate(&self, spec: &TaskSpec) -> Result<(), String> {
        if !spec.has_label(&self.label) {
            return Err(format!("unknown label {:?}", self.label));
        }
        for f in spec.shape.text_fields() {
            match self.field(f) {
                Some(t) if !t.trim().is_empty() => {}
                _ => return Err(format!("missing or empty field {f:?}")),
            }
        }
        if spec.shape == TaskShape::QuestionChoices {
            if self.choices.len() != spec.n_labels() {
                return Err(format!(
                    "expected {} choices, found {}",
                    spec.n_labels(),
                    self.choices.len()
                ));
            }
            if self.choices.iter().any(|c| c.trim().is_empty()) {
                return Err("empty choice".into());
            }
        }
        Ok(())
    }

    /// Serializes back into the dataset record layout of the task shape.
    pub fn to_record(&self, spec: &TaskSpec) -> Map<String, Value> {
        let mut rec = Map::new();
        rec.insert("id".into(), Value::String(self.id.clone()));
        for (k, v) in &self.fields {
            rec.insert(k.clone(), Value::String(v.clone()));
        }
        match spec.shape {
            TaskShape::QuestionChoices => {
                rec.insert(
                    "choices".into(),
                    Value::Array(self.choices.iter().cloned().map(Value::String).collect()),
                );
                rec.insert("answer".into(), Value::String(self.label.clone()));
            }
            _ => {
                rec.insert("label".into(), Value::String(self.label.clone()));
            }
        }
        if self.origin != Origin::Human {
            rec.insert("origin".into(), serde_json::to_value(self.origin).expect("origin serializes"));
        }
        rec
    }
}

/// Exact registry descriptor for a label.
pub fn attribute_for<'a>(spec: &'a TaskSpec, label: &str) -> Result<&'a str, CorpusError> {
    spec.check_label(label)?;
    Ok(spec.attribute_of[label].as_str())
}

/// Descriptor instantiated for one example. For multiple-choice tasks the
/// answer placeholder is replaced by the label's choice text, verbatim.
pub fn attribute_for_example(spec: &TaskSpec, seed: &SeedExample, label: &str) -> Result<String, CorpusError> {
    let template = attribute_for(spec, label)?;
    if spec.shape == TaskShape::QuestionChoices && template.contains(ANSWER_PLACEHOLDER) {
        let choice = seed.choice_for(spec, label).ok_or_else(|| CorpusError::UnknownLabel {
            task: spec.task_id.clone(),
            label: label.to_string(),
        })?;
        return Ok(template.replace(ANSWER_PLACEHOLDER, choice));
    }
    Ok(template.to_string())
}

pub fn load_dataset(path: impl AsRef<Path>, spec: &TaskSpec) -> Result<Vec<SeedExample>, CorpusError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path)?;
    parse_dataset(file, spec, &path.display().to_string())
}

/// Parses a JSONL dataset. `source_name` only feeds diagnostics.
pub fn parse_dataset<R: Read>(reader: R, spec: &TaskSpec, source_name: &str) -> Result<Vec<SeedExample>, CorpusError> {
    let mut pool = Vec::new();
    let mut ids = HashSet::new();
    for (idx, line) in BufReader::new(reader).lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |reason: String| CorpusError::Parse {
            source_name: source_name.to_string(),
            line: line_no,
            reason,
        };
        let value: Value = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        let obj = value.as_object().ok_or_else(|| parse_err("record is not a JSON object".into()))?;
        let seed = record_to_seed(obj, spec, line_no).map_err(parse_err)?;
        if !spec.has_label(&seed.label) {
            return Err(CorpusError::LabelAt {
                source_name: source_name.to_string(),
                line: line_no,
                task: spec.task_id.clone(),
                label: seed.label,
            });
        }
        seed.validate(spec).map_err(parse_err)?;
        if !ids.insert(seed.id.clone()) {
            return Err(parse_err(format!("duplicate id {:?}", seed.id)));
        }
        pool.push(seed);
    }
    Ok(pool)
}

fn string_field(obj: &Map<String, Value>, name: &str) -> Result<Option<String>, String> {
    match obj.get(name) {
        None | Some(Value::Null) => Ok(None),
        Some(Value::String(s)) => Ok(Some(s.clone())),
        Some(Value::Number(n)) if name == "label" || name == "answer" || name == "id" => Ok(Some(n.to_string())),
        Some(_) => Err(format!("field {name:?} must be a string")),
    }
}

fn record_to_seed(obj: &Map<String, Value>, spec: &TaskSpec, line_no: usize) -> Result<SeedExample, String> {
    let mut fields = BTreeMap::new();
    for f in spec.shape.text_fields() {
        let text = string_field(obj, f)?.ok_or_else(|| format!("missing field {f:?}"))?;
        fields.insert(f.to_string(), text);
    }
    let label_key = match spec.shape {
        TaskShape::QuestionChoices => "answer",
        _ => "label",
    };
    let label = string_field(obj, label_key)?.ok_or_else(|| format!("missing field {label_key:?}"))?;
    let choices = if spec.shape == TaskShape::QuestionChoices {
        match obj.get("choices") {
            Some(Value::Array(items)) => items
                .iter()
                .map(|v| v.as_str().map(str::to_string).ok_or("choices must be strings".to_string()))
                .collect::<Result<Vec<_>, _>>()?,
            _ => return Err("missing field \"choices\" (array)".into()),
        }
    } else {
        Vec::new()
    };
    let origin = match obj.get("origin") {
        None | Some(Value::Null) => Origin::Human,
        Some(v) => serde_json::from_value(v.clone()).map_err(|_| format!("unknown origin {v}"))?,
    };
    let id = string_field(obj, "id")?.unwrap_or_else(|| format!("{}-{}", spec.task_id, line_no));
    Ok(SeedExample {
        id,
        fields,
        choices,
        label,
        origin,
    })
}

/// Writes examples as JSONL in the dataset layout of `spec`.
pub fn write_dataset<'a>(
    path: impl AsRef<Path>,
    spec: &TaskSpec,
    examples: impl IntoIterator<Item = &'a SeedExample>,
) -> Result<(), CorpusError> {
    let mut out = String::new();
    for ex in examples {
        out.push_str(&serde_json::to_string(&ex.to_record(spec)).expect("record serializes"));
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Small corpora bundled for offline demos and tests.
pub mod toy {
    use super::*;

    const SST2: &str = include_str!("../../data/toy/sst2.jsonl");
    const SST2_TEST: &str = include_str!("../../data/toy/sst2_test.jsonl");
    const AGNEWS: &str = include_str!("../../data/toy/agnews.jsonl");
    const AGNEWS_TEST: &str = include_str!("../../data/toy/agnews_test.jsonl");
    const MNLI: &str = include_str!("../../data/toy/mnli.jsonl");
    const CSQA: &str = include_str!("../../data/toy/csqa.jsonl");

    /// Raw JSONL of the bundled generation pool for a task, if one ships.
    pub fn pool_jsonl(task_id: &str) -> Option<&'static str> {
        match task_id {
            "sst2" => Some(SST2),
            "agnews" => Some(AGNEWS),
            "mnli" => Some(MNLI),
            "csqa" => Some(CSQA),
            _ => None,
        }
    }

    pub fn test_jsonl(task_id: &str) -> Option<&'static str> {
        match task_id {
            "sst2" => Some(SST2_TEST),
            "agnews" => Some(AGNEWS_TEST),
            _ => None,
        }
    }

    pub fn pool(spec: &TaskSpec) -> Result<Vec<SeedExample>, CorpusError> {
        let text = pool_jsonl(&spec.task_id).ok_or_else(|| CorpusError::UnknownTask(spec.task_id.clone()))?;
        parse_dataset(text.as_bytes(), spec, &format!("<toy:{}>", spec.task_id))
    }

    pub fn test_set(spec: &TaskSpec) -> Result<Vec<SeedExample>, CorpusError> {
        let text = test_jsonl(&spec.task_id).ok_or_else(|| CorpusError::UnknownTask(spec.task_id.clone()))?;
        parse_dataset(text.as_bytes(), spec, &format!("<toy-test:{}>", spec.task_id))
    }
}
