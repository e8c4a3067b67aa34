//! Extraction and validation of caption JSON from free-form model output.

use std::fmt;

use serde::de::{self, Deserialize, Deserializer, MapAccess, SeqAccess, Visitor};

use super::{CaptionSet, ExpectedSchema, Strategy, CAPTIONS_PER_INPUT};
use crate::relations::CoherenceRelation;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ParseError {
    #[error("no parseable JSON value in response")]
    MalformedJson { raw: String },
    #[error("response does not match the {expected}: {reason}")]
    SchemaMismatch {
        expected: ExpectedSchema,
        reason: String,
        raw: String,
    },
}

impl ParseError {
    pub fn raw(&self) -> &str {
        match self {
            ParseError::MalformedJson { raw } | ParseError::SchemaMismatch { raw, .. } => raw,
        }
    }
}

/// JSON tree that keeps object entries in order, duplicates included.
#[derive(Debug, Clone, PartialEq)]
enum JsonNode {
    Array(Vec<JsonNode>),
    Object(Vec<(String, JsonNode)>),
    String(String),
    Scalar(&'static str),
}

impl JsonNode {
    fn kind(&self) -> &'static str {
        match self {
            JsonNode::Array(_) => "array",
            JsonNode::Object(_) => "object",
            JsonNode::String(_) => "string",
            JsonNode::Scalar(k) => k,
        }
    }
}

struct NodeVisitor;

impl<'de> Visitor<'de> for NodeVisitor {
    type Value = JsonNode;

    fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("any JSON value")
    }

    fn visit_bool<E: de::Error>(self, _: bool) -> Result<JsonNode, E> {
        Ok(JsonNode::Scalar("boolean"))
    }
    fn visit_i64<E: de::Error>(self, _: i64) -> Result<JsonNode, E> {
        Ok(JsonNode::Scalar("number"))
    }
    fn visit_u64<E: de::Error>(self, _: u64) -> Result<JsonNode, E> {
        Ok(JsonNode::Scalar("number"))
    }
    fn visit_f64<E: de::Error>(self, _: f64) -> Result<JsonNode, E> {
        Ok(JsonNode::Scalar("number"))
    }
    fn visit_unit<E: de::Error>(self) -> Result<JsonNode, E> {
        Ok(JsonNode::Scalar("null"))
    }
    fn visit_str<E: de::Error>(self, v: &str) -> Result<JsonNode, E> {
        Ok(JsonNode::String(v.to_string()))
    }
    fn visit_string<E: de::Error>(self, v: String) -> Result<JsonNode, E> {
        Ok(JsonNode::String(v))
    }

    fn visit_seq<A: SeqAccess<'de>>(self, mut seq: A) -> Result<JsonNode, A::Error> {
        let mut items = Vec::new();
        while let Some(item) = seq.next_element()? {
            items.push(item);
        }
        Ok(JsonNode::Array(items))
    }

    fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> Result<JsonNode, A::Error> {
        let mut entries = Vec::new();
        while let Some((k, v)) = map.next_entry::<String, JsonNode>()? {
            entries.push((k, v));
        }
        Ok(JsonNode::Object(entries))
    }
}

impl<'de> Deserialize<'de> for JsonNode {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        d.deserialize_any(NodeVisitor)
    }
}

/// Bodies of markdown code fences, in order of appearance.
fn fenced_blocks(text: &str) -> Vec<&str> {
    let mut blocks = Vec::new();
    let mut rest = text;
    while let Some(open) = rest.find("```") {
        let after = &rest[open + 3..];
        // Skip an info string such as `json`.
        let body_start = after.find('\n').map(|i| i + 1).unwrap_or(after.len());
        let body = &after[body_start..];
        match body.find("```") {
            Some(close) => {
                blocks.push(&body[..close]);
                rest = &body[close + 3..];
            }
            None => {
                blocks.push(body);
                break;
            }
        }
    }
    blocks
}

/// First JSON array or object that parses, scanning left to right.
fn first_json_value(text: &str) -> Option<JsonNode> {
    text.char_indices()
        .filter(|(_, c)| *c == '[' || *c == '{')
        .find_map(|(pos, _)| {
            serde_json::Deserializer::from_str(&text[pos..])
                .into_iter::<JsonNode>()
                .next()
                .and_then(Result::ok)
        })
}

fn extract(raw: &str) -> Option<JsonNode> {
    fenced_blocks(raw)
        .into_iter()
        .find_map(first_json_value)
        .or_else(|| first_json_value(raw))
}

/// Parses a provider reply into a validated [`CaptionSet`].
///
/// Surrounding prose and markdown code fences are tolerated; the extracted
/// value itself must match the strategy's schema exactly.
pub fn parse_response(strategy: Strategy, raw: &str) -> Result<CaptionSet, ParseError> {
    let node = extract(raw).ok_or_else(|| ParseError::MalformedJson {
        raw: raw.to_string(),
    })?;
    let expected = strategy.expected_schema();
    let mismatch = |reason: String| ParseError::SchemaMismatch {
        expected,
        reason,
        raw: raw.to_string(),
    };
    match (strategy, node) {
        (Strategy::Baseline, JsonNode::Array(items)) => {
            if items.len() != CAPTIONS_PER_INPUT {
                return Err(mismatch(format!(
                    "expected {CAPTIONS_PER_INPUT} captions, found {}",
                    items.len()
                )));
            }
            let captions = items
                .into_iter()
                .enumerate()
                .map(|(i, item)| match item {
                    JsonNode::String(s) => Ok(s),
                    other => Err(mismatch(format!("element {i} is a {}", other.kind()))),
                })
                .collect::<Result<Vec<_>, _>>()?;
            CaptionSet::ordered(captions).map_err(|e| mismatch(e.to_string()))
        }
        (Strategy::Rona, JsonNode::Object(entries)) => {
            if entries.len() != CAPTIONS_PER_INPUT {
                return Err(mismatch(format!(
                    "expected {CAPTIONS_PER_INPUT} keys, found {}",
                    entries.len()
                )));
            }
            let pairs = entries
                .into_iter()
                .map(|(key, value)| {
                    let relation: CoherenceRelation = key
                        .parse()
                        .map_err(|_| mismatch(format!("unexpected key `{key}`")))?;
                    match value {
                        JsonNode::String(s) => Ok((relation, s)),
                        other => Err(mismatch(format!("value of `{key}` is a {}", other.kind()))),
                    }
                })
                .collect::<Result<Vec<_>, _>>()?;
            CaptionSet::by_relation(pairs).map_err(|e| mismatch(e.to_string()))
        }
        (_, other) => Err(mismatch(format!("top-level value is a {}", other.kind()))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const RONA_OK: &str = r#"{"Insertion": "i", "Concretization": "c", "Projection": "p", "Restatement": "r", "Extension": "e"}"#;

    fn is_schema_mismatch(r: Result<CaptionSet, ParseError>) -> bool {
        matches!(r, Err(ParseError::SchemaMismatch { .. }))
    }

    #[test]
    fn minimal_baseline() {
        let set = parse_response(Strategy::Baseline, r#"["a","b","c","d","e"]"#).unwrap();
        assert_eq!(set.strategy(), Strategy::Baseline);
        assert_eq!(set.captions()[4], "e");
    }

    #[test]
    fn rona_object() {
        let set = parse_response(Strategy::Rona, RONA_OK).unwrap();
        assert_eq!(set.get(CoherenceRelation::Restatement), Some("r"));
    }

    #[test]
    fn arity_violation() {
        assert!(is_schema_mismatch(parse_response(
            Strategy::Baseline,
            r#"["a","b"]"#
        )));
    }

    #[test]
    fn missing_relation() {
        let raw =
            r#"{"Insertion": "i", "Concretization": "c", "Restatement": "r", "Extension": "e"}"#;
        assert!(is_schema_mismatch(parse_response(Strategy::Rona, raw)));
    }

    #[test]
    fn duplicate_key_is_rejected() {
        let raw = r#"{"Insertion": "i", "Insertion": "j", "Projection": "p", "Restatement": "r", "Extension": "e"}"#;
        let err = parse_response(Strategy::Rona, raw).unwrap_err();
        assert!(err.to_string().contains("more than once"), "{err}");
    }

    #[test]
    fn wrong_case_key_is_rejected() {
        let raw = RONA_OK.replace("\"Insertion\"", "\"insertion\"");
        assert!(is_schema_mismatch(parse_response(Strategy::Rona, &raw)));
    }

    #[test]
    fn non_string_values() {
        assert!(is_schema_mismatch(parse_response(
            Strategy::Baseline,
            r#"["a","b","c","d",5]"#
        )));
        let raw = RONA_OK.replace("\"e\"", "[\"e\"]");
        assert!(is_schema_mismatch(parse_response(Strategy::Rona, &raw)));
    }

    #[test]
    fn strategy_shape_mismatch() {
        assert!(is_schema_mismatch(parse_response(
            Strategy::Rona,
            r#"["a","b","c","d","e"]"#
        )));
        assert!(is_schema_mismatch(parse_response(
            Strategy::Baseline,
            RONA_OK
        )));
    }

    #[test]
    fn fenced_and_prose_wrapped() {
        let fenced = format!("Here you go:\n```json\n{RONA_OK}\n```\nEnjoy!");
        assert!(parse_response(Strategy::Rona, &fenced).is_ok());
        let bare_fence = "```\n[\"a\",\"b\",\"c\",\"d\",\"e\"]\n```";
        assert!(parse_response(Strategy::Baseline, bare_fence).is_ok());
        let prose = "Sure [see below]: [\"a\",\"b\",\"c\",\"d\",\"e\"] Hope that helps.";
        assert!(parse_response(Strategy::Baseline, prose).is_ok());
    }

    #[test]
    fn malformed_json_keeps_raw() {
        let err = parse_response(Strategy::Baseline, "I cannot help with that.").unwrap_err();
        assert!(matches!(err, ParseError::MalformedJson { .. }));
        assert_eq!(err.raw(), "I cannot help with that.");
        assert!(matches!(
            parse_response(Strategy::Baseline, "[\"a\", \"b\""),
            Err(ParseError::MalformedJson { .. })
        ));
    }
}
