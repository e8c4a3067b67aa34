//! Prompt assembly for the baseline and relation-guided strategies.
//!
//! Prompt text is data: every string here is pinned by golden fixtures under
//! `tests/fixtures/prompts`, so edits must be made in both places.

mod captions;
mod parse;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::image::ImagePayload;
use crate::relations::relation_catalog;

pub use captions::{CaptionSet, CaptionSetError};
pub use parse::{parse_response, ParseError};

/// Number of captions requested per input.
pub const CAPTIONS_PER_INPUT: usize = 5;

/// Repair instruction appended when a response fails schema validation.
pub const REPAIR_INSTRUCTION: &str = "Return only the JSON in the required format.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Baseline,
    Rona,
}

impl Strategy {
    pub const ALL: [Strategy; 2] = [Strategy::Baseline, Strategy::Rona];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Baseline => "baseline",
            Strategy::Rona => "rona",
        }
    }

    pub fn expected_schema(self) -> ExpectedSchema {
        match self {
            Strategy::Baseline => ExpectedSchema::ArrayOfFive,
            Strategy::Rona => ExpectedSchema::RelationKeyed,
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "baseline" => Ok(Strategy::Baseline),
            "rona" => Ok(Strategy::Rona),
            other => Err(format!("unknown strategy `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Task {
    #[serde(rename = "image-only")]
    ImageOnly,
    #[serde(rename = "image+caption")]
    ImagePlusCaption,
}

impl Task {
    pub const ALL: [Task; 2] = [Task::ImageOnly, Task::ImagePlusCaption];

    pub fn as_str(self) -> &'static str {
        match self {
            Task::ImageOnly => "image-only",
            Task::ImagePlusCaption => "image+caption",
        }
    }

    /// Row label used in rendered reports.
    pub fn label(self) -> &'static str {
        match self {
            Task::ImageOnly => "Image-only",
            Task::ImagePlusCaption => "Image + Caption",
        }
    }

    /// Noun phrase naming the input in the user prompt.
    fn framing(self) -> &'static str {
        match self {
            Task::ImageOnly => "image",
            Task::ImagePlusCaption => "image-caption pair",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Task {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "image-only" => Ok(Task::ImageOnly),
            "image+caption" => Ok(Task::ImagePlusCaption),
            other => Err(format!("unknown task `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExpectedSchema {
    ArrayOfFive,
    RelationKeyed,
}

impl fmt::Display for ExpectedSchema {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExpectedSchema::ArrayOfFive => f.write_str("five-caption array"),
            ExpectedSchema::RelationKeyed => f.write_str("relation-keyed object"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PromptError {
    #[error("the image+caption task requires a ground-truth caption")]
    CaptionMissing,
    #[error("a caption was supplied for the image-only task")]
    CaptionUnexpected,
}

const BASELINE_SYSTEM: &str =
    "You are an expert linguist, and your task is to write image captions.";

const RONA_SYSTEM_PREAMBLE: &str = "You are an expert linguist, and your task is to write image captions with the help of Coherence Relations. A coherence relation describes the structural, logical, and purposeful relationships between an image and its caption, capturing the author's intent.\n\nThese are the possible coherence relations you can assign to an image-text pair:";

const BASELINE_TASK: &str = "Analyze the image and write 5 suitable captions that are diverse, but relevant. Create diverse captions while retaining the same overall meaning of the original image-caption pair.\n\nReturn the captions as a JSON Array with the following format:\n[\n\"<insert-caption-text-1>\",\n\"<insert-caption-text-2>\",\n\"<insert-caption-text-3>\",\n\"<insert-caption-text-4>\",\n\"<insert-caption-text-5>\"\n]";

const RONA_TASK: &str = "Write 5 image captions, one for each coherence relation as your output.\n\nReturn the captions as a JSON object with the following format:\n{\n\"Insertion\": \"<insert-caption-text-1>\",\n\"Concretization\": \"<insert-caption-text-2>\",\n\"Projection\": \"<insert-caption-text-3>\",\n\"Restatement\": \"<insert-caption-text-4>\",\n\"Extension\": \"<insert-caption-text-5>\"\n}";

/// The bulleted relation list, one `- Name: definition` line per relation.
pub fn relation_list() -> String {
    relation_catalog()
        .iter()
        .map(|r| format!("- {}: {}", r.name(), r.definition()))
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn build_system_message(strategy: Strategy) -> String {
    match strategy {
        Strategy::Baseline => BASELINE_SYSTEM.to_string(),
        Strategy::Rona => format!("{RONA_SYSTEM_PREAMBLE}\n\n{}", relation_list()),
    }
}

/// The user-turn instruction without the ground-truth caption.
pub fn user_instruction(strategy: Strategy, task: Task) -> String {
    let body = match strategy {
        Strategy::Baseline => BASELINE_TASK,
        Strategy::Rona => RONA_TASK,
    };
    format!("You will be given an {} as input. {body}", task.framing())
}

/// Full user-turn text. The caption, when present, follows the instruction
/// after a blank line.
pub fn build_user_message(
    strategy: Strategy,
    task: Task,
    caption: Option<&str>,
) -> Result<String, PromptError> {
    let caption = check_caption(task, caption)?;
    let instruction = user_instruction(strategy, task);
    Ok(match caption {
        Some(c) => format!("{instruction}\n\n{c}"),
        None => instruction,
    })
}

fn check_caption(task: Task, caption: Option<&str>) -> Result<Option<&str>, PromptError> {
    match (task, caption) {
        (Task::ImageOnly, None) => Ok(None),
        (Task::ImageOnly, Some(_)) => Err(PromptError::CaptionUnexpected),
        (Task::ImagePlusCaption, Some(c)) if !c.trim().is_empty() => Ok(Some(c)),
        (Task::ImagePlusCaption, _) => Err(PromptError::CaptionMissing),
    }
}

/// Everything a provider needs to issue one generation request.
#[derive(Debug, Clone)]
pub struct PromptBundle {
    pub sample_id: String,
    pub strategy: Strategy,
    pub task: Task,
    pub system_message: String,
    /// User-turn text preceding the image attachment.
    pub instruction: String,
    /// Ground-truth caption, sent after the image attachment.
    pub caption: Option<String>,
    pub image: ImagePayload,
}

impl PromptBundle {
    pub fn new(
        sample_id: impl Into<String>,
        strategy: Strategy,
        task: Task,
        caption: Option<&str>,
        image: ImagePayload,
    ) -> Result<Self, PromptError> {
        let caption = check_caption(task, caption)?.map(str::to_string);
        Ok(Self {
            sample_id: sample_id.into(),
            strategy,
            task,
            system_message: build_system_message(strategy),
            instruction: user_instruction(strategy, task),
            caption,
            image,
        })
    }

    pub fn expected_schema(&self) -> ExpectedSchema {
        self.strategy.expected_schema()
    }

    /// The user turn as a single text, identical to [`build_user_message`].
    pub fn user_message(&self) -> String {
        match &self.caption {
            Some(c) => format!("{}\n\n{c}", self.instruction),
            None => self.instruction.clone(),
        }
    }
}
