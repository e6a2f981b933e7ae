use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::CorpusError;

const BUNDLED_TASKS: &str = include_str!("../../data/tasks.json");

/// Placeholder in a multiple-choice attribute descriptor that is replaced by
/// the surface text of the chosen answer.
pub const ANSWER_PLACEHOLDER: &str = "<answer name>";

/// How the text of one example is laid out.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskShape {
    SingleText,
    TextPair,
    QuestionChoices,
}

impl TaskShape {
    /// Text fields every record of this shape must carry.
    pub fn text_fields(self) -> &'static [&'static str] {
        match self {
            TaskShape::SingleText => &["text"],
            TaskShape::TextPair => &["text1", "text2"],
            TaskShape::QuestionChoices => &["question"],
        }
    }
}

/// A task's label set and the attribute descriptor injected into prompts for
/// each label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_id: String,
    pub shape: TaskShape,
    pub labels: Vec<String>,
    pub attribute_of: BTreeMap<String, String>,
    pub manipulated_field: String,
    /// Display title of the fixed field for pair-shaped tasks ("Premise").
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context_title: Option<String>,
}

impl TaskSpec {
    pub fn validate(&self) -> Result<(), CorpusError> {
        let invalid = |reason: String| CorpusError::InvalidSpec {
            task: self.task_id.clone(),
            reason,
        };
        if self.task_id.trim().is_empty() {
            return Err(invalid("empty task id".into()));
        }
        if self.labels.is_empty() {
            return Err(invalid("label list is empty".into()));
        }
        let mut seen = BTreeSet::new();
        for label in &self.labels {
            if label.is_empty() {
                return Err(invalid("empty label id".into()));
            }
            if !seen.insert(label.as_str()) {
                return Err(invalid(format!("duplicate label {label:?}")));
            }
            match self.attribute_of.get(label) {
                Some(attr) if !attr.trim().is_empty() => {}
                _ => return Err(invalid(format!("label {label:?} has no attribute descriptor"))),
            }
        }
        if let Some(extra) = self.attribute_of.keys().find(|k| !seen.contains(k.as_str())) {
            return Err(invalid(format!("descriptor for undeclared label {extra:?}")));
        }
        if !self.shape.text_fields().contains(&self.manipulated_field.as_str()) {
            return Err(invalid(format!(
                "manipulated field {:?} does not exist for shape {:?}",
                self.manipulated_field, self.shape
            )));
        }
        Ok(())
    }

    pub fn n_labels(&self) -> usize {
        self.labels.len()
    }

    pub fn label_index(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn has_label(&self, label: &str) -> bool {
        self.label_index(label).is_some()
    }

    pub(crate) fn check_label(&self, label: &str) -> Result<(), CorpusError> {
        if self.has_label(label) {
            Ok(())
        } else {
            Err(CorpusError::UnknownLabel {
                task: self.task_id.clone(),
                label: label.to_string(),
            })
        }
    }

    /// The fixed (non-manipulated) text field of a pair-shaped task.
    pub fn context_field(&self) -> Option<&'static str> {
        match self.shape {
            TaskShape::TextPair => self
                .shape
                .text_fields()
                .iter()
                .copied()
                .find(|f| *f != self.manipulated_field),
            _ => None,
        }
    }
}

/// The set of known tasks, keyed by task id.
#[derive(Debug, Clone)]
pub struct TaskRegistry {
    specs: Vec<TaskSpec>,
}

impl TaskRegistry {
    /// The six tasks shipped with the crate.
    pub fn bundled() -> Self {
        Self::from_json(BUNDLED_TASKS).expect("bundled task registry is valid")
    }

    pub fn from_json(text: &str) -> Result<Self, CorpusError> {
        let specs: Vec<TaskSpec> = serde_json::from_str(text).map_err(|e| CorpusError::InvalidSpec {
            task: "<registry>".into(),
            reason: e.to_string(),
        })?;
        let mut ids = BTreeSet::new();
        for spec in &specs {
            spec.validate()?;
            if !ids.insert(spec.task_id.clone()) {
                return Err(CorpusError::InvalidSpec {
                    task: spec.task_id.clone(),
                    reason: "task id registered twice".into(),
                });
            }
        }
        Ok(Self { specs })
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, CorpusError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn get(&self, task_id: &str) -> Result<&TaskSpec, CorpusError> {
        self.specs
            .iter()
            .find(|s| s.task_id == task_id)
            .ok_or_else(|| CorpusError::UnknownTask(task_id.to_string()))
    }

    pub fn specs(&self) -> &[TaskSpec] {
        &self.specs
    }
}
