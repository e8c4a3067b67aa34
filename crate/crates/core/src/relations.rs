//! The five coherence relations used to steer caption generation.
//!
//! A coherence relation names the pragmatic link between an image and the
//! text that accompanies it. Three relations are anchored on a single entity
//! in the image, two on the scene as a whole. The short definitions returned
//! by [`CoherenceRelation::definition`] are the exact fragments injected into
//! the relation-guided system message.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Granularity at which a relation ties image and caption together.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RelationLevel {
    EntityLevel,
    SceneLevel,
}

/// One of the five coherence relations.
///
/// Variants serialize with their exact capitalised names, which are also the
/// keys of the relation-keyed JSON output format.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CoherenceRelation {
    /// The focal object is visible but left unsaid in the caption.
    Insertion,
    /// An anchor entity shows up in both modalities; the caption adds context about it.
    Concretization,
    /// The caption's topic is only associated with, not depicted by, the image.
    Projection,
    /// The caption describes the scene in more detail.
    Restatement,
    /// The caption builds a new idea or story around the scene.
    Extension,
}

const CATALOG: [CoherenceRelation; 5] = [
    CoherenceRelation::Insertion,
    CoherenceRelation::Concretization,
    CoherenceRelation::Projection,
    CoherenceRelation::Restatement,
    CoherenceRelation::Extension,
];

/// All relations in the fixed prompt order.
pub fn relation_catalog() -> &'static [CoherenceRelation; 5] {
    &CATALOG
}

impl CoherenceRelation {
    pub const COUNT: usize = 5;

    pub fn name(self) -> &'static str {
        match self {
            Self::Insertion => "Insertion",
            Self::Concretization => "Concretization",
            Self::Projection => "Projection",
            Self::Restatement => "Restatement",
            Self::Extension => "Extension",
        }
    }

    /// Abbreviation used in figures and report legends.
    pub fn abbreviation(self) -> &'static str {
        match self {
            Self::Insertion => "Ins",
            Self::Concretization => "Con",
            Self::Projection => "Proj",
            Self::Restatement => "Rstt",
            Self::Extension => "Ext",
        }
    }

    pub fn level(self) -> RelationLevel {
        match self {
            Self::Insertion | Self::Concretization | Self::Projection => RelationLevel::EntityLevel,
            Self::Restatement | Self::Extension => RelationLevel::SceneLevel,
        }
    }

    /// Single-line definition used verbatim in the system message.
    pub fn definition(self) -> &'static str {
        match self {
            Self::Insertion => {
                "The salient object described in the image is not explicitly mentioned in the text."
            }
            Self::Concretization => {
                "Both the text and image contain a mention of the main visual entity."
            }
            Self::Projection => {
                "The main entity mentioned in the text is implicitly related to the visual objects present in the image."
            }
            Self::Restatement => "The text directly describes the image contents.",
            Self::Extension => {
                "The image expands upon the story or idea in the text, presenting new elements or elaborations, effectively filling in narrative gaps left by the text."
            }
        }
    }

    /// Position in [`relation_catalog`].
    pub fn index(self) -> usize {
        self as usize
    }
}

/// Convenience wrapper matching the operation name used by callers.
pub fn definition_fragment(relation: CoherenceRelation) -> &'static str {
    relation.definition()
}

impl fmt::Display for CoherenceRelation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown coherence relation `{0}`")]
pub struct UnknownRelation(pub String);

impl FromStr for CoherenceRelation {
    type Err = UnknownRelation;

    /// Exact-case match only; the output schema keys are case sensitive.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        CATALOG
            .iter()
            .copied()
            .find(|r| r.name() == s)
            .ok_or_else(|| UnknownRelation(s.to_string()))
    }
}
