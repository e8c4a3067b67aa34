use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Strategy, CAPTIONS_PER_INPUT};
use crate::relations::{relation_catalog, CoherenceRelation};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CaptionSetError {
    #[error("expected {CAPTIONS_PER_INPUT} captions, got {0}")]
    WrongArity(usize),
    #[error("caption {0} is empty")]
    EmptyCaption(usize),
    #[error("relation {0} appears more than once")]
    DuplicateRelation(CoherenceRelation),
    #[error("relation {0} is missing")]
    MissingRelation(CoherenceRelation),
}

/// Five generated captions for one input.
///
/// Baseline sets are ordered; relation-guided sets hold one caption per
/// coherence relation, stored in catalog order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "CaptionSetRepr", into = "CaptionSetRepr")]
pub struct CaptionSet {
    strategy: Strategy,
    captions: [String; CAPTIONS_PER_INPUT],
}

impl CaptionSet {
    pub fn ordered<I, S>(captions: I) -> Result<Self, CaptionSetError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let captions: Vec<String> = captions.into_iter().map(Into::into).collect();
        let captions: [String; CAPTIONS_PER_INPUT] = captions
            .try_into()
            .map_err(|v: Vec<String>| CaptionSetError::WrongArity(v.len()))?;
        check_non_empty(&captions)?;
        Ok(Self {
            strategy: Strategy::Baseline,
            captions,
        })
    }

    pub fn by_relation<I, S>(entries: I) -> Result<Self, CaptionSetError>
    where
        I: IntoIterator<Item = (CoherenceRelation, S)>,
        S: Into<String>,
    {
        let mut slots: [Option<String>; CAPTIONS_PER_INPUT] = Default::default();
        for (relation, text) in entries {
            let slot = &mut slots[relation.index()];
            if slot.is_some() {
                return Err(CaptionSetError::DuplicateRelation(relation));
            }
            *slot = Some(text.into());
        }
        let mut captions: [String; CAPTIONS_PER_INPUT] = Default::default();
        for (relation, (slot, out)) in relation_catalog()
            .iter()
            .zip(slots.into_iter().zip(captions.iter_mut()))
        {
            *out = slot.ok_or(CaptionSetError::MissingRelation(*relation))?;
        }
        check_non_empty(&captions)?;
        Ok(Self {
            strategy: Strategy::Rona,
            captions,
        })
    }

    pub fn strategy(&self) -> Strategy {
        self.strategy
    }

    /// Captions in order; for relation-keyed sets this is catalog order.
    pub fn captions(&self) -> &[String; CAPTIONS_PER_INPUT] {
        &self.captions
    }

    pub fn get(&self, relation: CoherenceRelation) -> Option<&str> {
        match self.strategy {
            Strategy::Rona => Some(&self.captions[relation.index()]),
            Strategy::Baseline => None,
        }
    }

    /// Serializes into the JSON output format the prompt asks for.
    pub fn to_response_json(&self) -> String {
        match self.strategy {
            Strategy::Baseline => serde_json::to_string(&self.captions),
            Strategy::Rona => serde_json::to_string(&self.relation_map()),
        }
        .expect("strings always serialize")
    }

    fn relation_map(&self) -> BTreeMap<CoherenceRelation, &str> {
        relation_catalog()
            .iter()
            .map(|r| (*r, self.captions[r.index()].as_str()))
            .collect()
    }
}

fn check_non_empty(captions: &[String]) -> Result<(), CaptionSetError> {
    match captions.iter().position(|c| c.trim().is_empty()) {
        Some(i) => Err(CaptionSetError::EmptyCaption(i)),
        None => Ok(()),
    }
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "strategy", content = "captions", rename_all = "lowercase")]
enum CaptionSetRepr {
    Baseline(Vec<String>),
    Rona(BTreeMap<CoherenceRelation, String>),
}

impl TryFrom<CaptionSetRepr> for CaptionSet {
    type Error = CaptionSetError;

    fn try_from(repr: CaptionSetRepr) -> Result<Self, Self::Error> {
        match repr {
            CaptionSetRepr::Baseline(v) => CaptionSet::ordered(v),
            CaptionSetRepr::Rona(m) => CaptionSet::by_relation(m),
        }
    }
}

impl From<CaptionSet> for CaptionSetRepr {
    fn from(set: CaptionSet) -> Self {
        match set.strategy {
            Strategy::Baseline => CaptionSetRepr::Baseline(set.captions.to_vec()),
            Strategy::Rona => CaptionSetRepr::Rona(
                relation_catalog()
                    .iter()
                    .zip(set.captions)
                    .map(|(r, c)| (*r, c))
                    .collect(),
            ),
        }
    }
}
