//! Prompt rendering for the manipulation chains and their ablations.
//!
//! Templates live in `templates/<version>/` and are compiled in. Rendering is
//! a single left-to-right pass over `{name}` placeholders, so placeholder-like
//! text inside a seed sentence is never expanded.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{attribute_for, attribute_for_example, CorpusError, SeedExample, TaskShape, TaskSpec};

pub const TEMPLATE_VERSION: &str = "v1";

mod templates {
    pub const COTAM: &str = include_str!("../../templates/v1/cotam.txt");
    pub const COTDA: &str = include_str!("../../templates/v1/cotda.txt");
    pub const FLIPDA: &str = include_str!("../../templates/v1/flipda.txt");
    pub const WO_WHAT: &str = include_str!("../../templates/v1/cotam_wo_what.txt");
    pub const WO_HOW: &str = include_str!("../../templates/v1/cotam_wo_how.txt");
    pub const WO_COT: &str = include_str!("../../templates/v1/cotam_wo_cot.txt");
    pub const SEED_PROPOSAL: &str = include_str!("../../templates/v1/seed_proposal.txt");
    pub const SEED_PROPOSAL_SINGLE: &str = include_str!("../../templates/v1/seed_proposal_single.txt");
}

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("variant {0} switches labels and needs a target label")]
    MissingTarget(Variant),
    #[error("variant {0} does not take a target label")]
    UnexpectedTarget(Variant),
    #[error("target label {0:?} equals the source label")]
    TargetIsSource(String),
    #[error("source and target attributes are identical: {0:?}")]
    SameAttribute(String),
    #[error("seed proposals are rendered with render_seed_proposal")]
    SeedProposalVariant,
    #[error("seed proposals need a count of at least 1")]
    ZeroCount,
    #[error("seed proposals are only supported for single-text tasks, not {0}")]
    UnsupportedShape(String),
    #[error("unknown prompt variant {0:?}")]
    UnknownVariant(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Cotam,
    Cotda,
    Flipda,
    CotamWoWhat,
    CotamWoHow,
    CotamWoCot,
    SeedProposal,
}

impl Variant {
    pub const ALL: [Variant; 7] = [
        Variant::Cotam,
        Variant::Cotda,
        Variant::Flipda,
        Variant::CotamWoWhat,
        Variant::CotamWoHow,
        Variant::CotamWoCot,
        Variant::SeedProposal,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Cotam => "cotam",
            Variant::Cotda => "cotda",
            Variant::Flipda => "flipda",
            Variant::CotamWoWhat => "cotam_wo_what",
            Variant::CotamWoHow => "cotam_wo_how",
            Variant::CotamWoCot => "cotam_wo_cot",
            Variant::SeedProposal => "seed_proposal",
        }
    }

    /// Whether generations carry a label different from their seed.
    pub fn is_switching(self) -> bool {
        !matches!(self, Variant::Cotda | Variant::SeedProposal)
    }

    /// Step number of the final "write" instruction, if the chain is numbered.
    pub fn final_step(self) -> Option<u8> {
        match self {
            Variant::Cotam | Variant::Cotda => Some(3),
            Variant::Flipda | Variant::CotamWoWhat | Variant::CotamWoHow => Some(2),
            Variant::CotamWoCot | Variant::SeedProposal => None,
        }
    }

    pub fn default_temperature(self) -> f64 {
        match self {
            Variant::Cotda => 0.1,
            _ => 0.0,
        }
    }

    fn template(self) -> &'static str {
        let raw = match self {
            Variant::Cotam => templates::COTAM,
            Variant::Cotda => templates::COTDA,
            Variant::Flipda => templates::FLIPDA,
            Variant::CotamWoWhat => templates::WO_WHAT,
            Variant::CotamWoHow => templates::WO_HOW,
            Variant::CotamWoCot => templates::WO_COT,
            Variant::SeedProposal => templates::SEED_PROPOSAL,
        };
        strip_final_newline(raw)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = PromptError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| PromptError::UnknownVariant(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedPrompt {
    pub text: String,
    pub variant: Variant,
    pub seed_id: Option<String>,
    pub source_attr: String,
    pub target_attr: Option<String>,
    pub template_version: String,
}

fn strip_final_newline(s: &str) -> &str {
    s.strip_suffix('\n').unwrap_or(s)
}

/// Single-pass `{name}` substitution. Unknown placeholders are left intact.
fn fill(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len() + 64);
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        match after.find('}') {
            Some(close) => {
                let name = &after[..close];
                match vars.iter().find(|(k, _)| *k == name) {
                    Some((_, v)) => out.push_str(v),
                    None => {
                        out.push('{');
                        out.push_str(name);
                        out.push('}');
                    }
                }
                rest = &after[close + 1..];
            }
            None => {
                out.push_str(&rest[open..]);
                rest = "";
            }
        }
    }
    out.push_str(rest);
    out
}

/// Labels a seed of `source_label` is switched to: every other label, in
/// registry order.
pub fn enumerate_targets(spec: &TaskSpec, source_label: &str) -> Result<Vec<String>, PromptError> {
    spec.check_label(source_label)?;
    Ok(spec.labels.iter().filter(|l| *l != source_label).cloned().collect())
}

/// Context lines shown above the quoted sentence for pair and
/// multiple-choice tasks.
fn context_block(spec: &TaskSpec, seed: &SeedExample) -> String {
    match spec.shape {
        TaskShape::SingleText => String::new(),
        TaskShape::TextPair => {
            let field = spec.context_field().unwrap_or("text1");
            let title = spec.context_title.as_deref().unwrap_or("Context");
            format!("{title}: \"{}\"\n", seed.field(field).unwrap_or(""))
        }
        TaskShape::QuestionChoices => {
            let options: Vec<String> = spec
                .labels
                .iter()
                .zip(&seed.choices)
                .map(|(l, c)| format!("({l}) {c}"))
                .collect();
            format!("Choices: {}\n", options.join(" "))
        }
    }
}

pub fn render(
    variant: Variant,
    seed: &SeedExample,
    spec: &TaskSpec,
    target_label: Option<&str>,
) -> Result<RenderedPrompt, PromptError> {
    if variant == Variant::SeedProposal {
        return Err(PromptError::SeedProposalVariant);
    }
    let source_attr = attribute_for_example(spec, seed, &seed.label)?;
    let target_attr = match (variant.is_switching(), target_label) {
        (true, None) => return Err(PromptError::MissingTarget(variant)),
        (false, Some(_)) => return Err(PromptError::UnexpectedTarget(variant)),
        (false, None) => None,
        (true, Some(target)) => {
            spec.check_label(target).map_err(PromptError::from)?;
            if target == seed.label {
                return Err(PromptError::TargetIsSource(target.to_string()));
            }
            let attr = attribute_for_example(spec, seed, target)?;
            if attr == source_attr {
                return Err(PromptError::SameAttribute(attr));
            }
            Some(attr)
        }
    };
    let body = fill(
        variant.template(),
        &[
            ("sentence", seed.manipulated_text(spec)),
            ("attr", &source_attr),
            ("new_attr", target_attr.as_deref().unwrap_or("")),
        ],
    );
    let text = context_block(spec, seed) + &body;
    Ok(RenderedPrompt {
        text,
        variant,
        seed_id: Some(seed.id.clone()),
        source_attr,
        target_attr,
        template_version: TEMPLATE_VERSION.to_string(),
    })
}

/// Prompt asking the model to propose `count` fresh examples of `label`.
pub fn render_seed_proposal(spec: &TaskSpec, label: &str, count: usize) -> Result<RenderedPrompt, PromptError> {
    if count == 0 {
        return Err(PromptError::ZeroCount);
    }
    if spec.shape != TaskShape::SingleText {
        return Err(PromptError::UnsupportedShape(spec.task_id.clone()));
    }
    let attr = attribute_for(spec, label)?.to_string();
    let text = if count == 1 {
        fill(strip_final_newline(templates::SEED_PROPOSAL_SINGLE), &[("attr", &attr)])
    } else {
        let n = count.to_string();
        fill(Variant::SeedProposal.template(), &[("count", &n), ("attr", &attr)])
    };
    Ok(RenderedPrompt {
        text,
        variant: Variant::SeedProposal,
        seed_id: None,
        source_attr: attr,
        target_attr: None,
        template_version: TEMPLATE_VERSION.to_string(),
    })
}
