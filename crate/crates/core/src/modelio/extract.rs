//! Pulling structured artifacts out of free-form model replies.

use serde::{Deserialize, Deserializer, Serialize};
use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ExtractError {
    #[error("no complete <{tag}>...</{tag}> block in the reply")]
    MissingBlock { tag: String },
    #[error("no parseable decision object in the reply")]
    MalformedDecision { raw: String },
}

/// Contents of the last complete `<tag>...</tag>` pair, with surrounding
/// newlines removed.
pub fn extract_tagged_block(text: &str, tag: &str) -> Result<String, ExtractError> {
    let open = format!("<{tag}>");
    let close = format!("</{tag}>");
    let missing = || ExtractError::MissingBlock {
        tag: tag.to_string(),
    };
    let end = text.rfind(&close).ok_or_else(missing)?;
    let start = text[..end].rfind(&open).ok_or_else(missing)? + open.len();
    Ok(text[start..end]
        .trim_start_matches(['\r', '\n'])
        .trim_end_matches(['\r', '\n'])
        .to_string())
}

/// Routing decision produced by the test analysis agent.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnalysisDecision {
    #[serde(deserialize_with = "lenient_bool")]
    pub is_finish: bool,
    #[serde(default, deserialize_with = "null_as_empty")]
    pub guidance_for_write_dockerfile_agent: String,
    #[serde(default, deserialize_with = "null_as_empty")]
    pub guidance_for_write_eval_script_agent: String,
    #[serde(default, deserialize_with = "null_as_empty")]
    pub guidance_for_context_retrieval_agent: String,
}

impl AnalysisDecision {
    pub fn finished() -> Self {
        Self {
            is_finish: true,
            ..Self::default()
        }
    }

    pub fn has_writer_guidance(&self) -> bool {
        !self.guidance_for_write_dockerfile_agent.trim().is_empty()
            || !self.guidance_for_write_eval_script_agent.trim().is_empty()
    }

    pub fn has_any_guidance(&self) -> bool {
        self.has_writer_guidance() || !self.guidance_for_context_retrieval_agent.trim().is_empty()
    }
}

fn lenient_bool<'de, D: Deserializer<'de>>(d: D) -> Result<bool, D::Error> {
    match Value::deserialize(d)? {
        Value::Bool(b) => Ok(b),
        Value::String(s) if s.eq_ignore_ascii_case("true") => Ok(true),
        Value::String(s) if s.eq_ignore_ascii_case("false") => Ok(false),
        other => Err(serde::de::Error::custom(format!("is_finish must be boolean, got {other}"))),
    }
}

fn null_as_empty<'de, D: Deserializer<'de>>(d: D) -> Result<String, D::Error> {
    Ok(match Value::deserialize(d)? {
        Value::Null => String::new(),
        Value::String(s) => s,
        other => other.to_string(),
    })
}

/// Top-level JSON objects found anywhere in `text`, in order.
fn json_objects(text: &str) -> Vec<Value> {
    let mut out = Vec::new();
    let mut i = 0;
    while let Some(off) = text[i..].find('{') {
        let start = i + off;
        let mut stream = serde_json::Deserializer::from_str(&text[start..]).into_iter::<Value>();
        match stream.next() {
            Some(Ok(v @ Value::Object(_))) => {
                out.push(v);
                i = start + stream.byte_offset();
            }
            _ => i = start + 1,
        }
    }
    out
}

/// Drops `#` comments and trailing commas outside strings, the two most
/// common deviations in model-written JSON.
fn relax_json(text: &str) -> String {
    let chars: Vec<char> = text.chars().collect();
    let mut out = String::with_capacity(text.len());
    let (mut in_str, mut escaped) = (false, false);
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if in_str {
            out.push(c);
            match (escaped, c) {
                (true, _) => escaped = false,
                (false, '\\') => escaped = true,
                (false, '"') => in_str = false,
                _ => {}
            }
        } else if c == '"' {
            in_str = true;
            out.push(c);
        } else if c == '#' {
            while i < chars.len() && chars[i] != '\n' {
                i += 1;
            }
            continue;
        } else if c == ',' {
            let next = chars[i + 1..].iter().find(|c| !c.is_whitespace() && **c != '#');
            if !matches!(next, Some('}') | Some(']')) {
                out.push(c);
            }
        } else {
            out.push(c);
        }
        i += 1;
    }
    out
}

fn last_decision(text: &str) -> Option<AnalysisDecision> {
    json_objects(text)
        .into_iter()
        .rev()
        .filter(|v| v.get("is_finish").is_some())
        .find_map(|v| serde_json::from_value(v).ok())
}

/// Parses the last decision object in `text`, fenced or bare.
pub fn extract_analysis_decision(text: &str) -> Result<AnalysisDecision, ExtractError> {
    last_decision(text)
        .or_else(|| last_decision(&relax_json(text)))
        .ok_or_else(|| ExtractError::MalformedDecision {
            raw: text.to_string(),
        })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_block() {
        assert_eq!(
            extract_tagged_block("<dockerfile>FROM x</dockerfile>", "dockerfile").unwrap(),
            "FROM x"
        );
        assert_eq!(
            extract_tagged_block("see\n<script>\n#!/bin/bash\necho hi\n</script>\n", "script").unwrap(),
            "#!/bin/bash\necho hi"
        );
    }

    #[test]
    fn no_block() {
        assert!(matches!(
            extract_tagged_block("just prose", "dockerfile"),
            Err(ExtractError::MissingBlock { .. })
        ));
        assert!(extract_tagged_block("<dockerfile>unterminated", "dockerfile").is_err());
        assert!(extract_tagged_block("</dockerfile> then <dockerfile>", "dockerfile").is_err());
    }

    /// Independent oracle: non-greedy regex over all pairs, keep the last.
    fn regex_oracle(text: &str, tag: &str) -> Option<String> {
        let re = regex::Regex::new(&format!("(?s)<{tag}>(.*?)</{tag}>")).unwrap();
        re.captures_iter(text)
            .last()
            .map(|c| c[1].trim_matches(['\r', '\n']).to_string())
    }

    #[test]
    fn last_block_wins_against_oracle() {
        let cases = [
            "<dockerfile>A</dockerfile> and <dockerfile>B</dockerfile>",
            "draft:\n<dockerfile>\nFROM a\n</dockerfile>\nfinal:\n<dockerfile>\nFROM b\nRUN x\n</dockerfile>\n",
            "<dockerfile>one</dockerfile><dockerfile>two</dockerfile><dockerfile>three</dockerfile>",
            "<dockerfile>A</dockerfile> trailing <dockerfile>open only",
            "<script>x</script> noise <dockerfile>D</dockerfile>",
            "<dockerfile>\n\n\nspaced\n\n</dockerfile>",
        ];
        for c in cases {
            assert_eq!(extract_tagged_block(c, "dockerfile").ok(), regex_oracle(c, "dockerfile"), "{c}");
        }
        assert_eq!(extract_tagged_block(cases[0], "dockerfile").unwrap(), "B");
    }

    #[test]
    fn bare_finish_decision() {
        let d = extract_analysis_decision(r#"All good. {"is_finish": true}"#).unwrap();
        assert_eq!(d, AnalysisDecision::finished());
    }

    #[test]
    fn fenced_decision_round_trips() {
        let d = AnalysisDecision {
            is_finish: false,
            guidance_for_write_dockerfile_agent: "install libxml2-dev; error: xml2-config not found".into(),
            ..Default::default()
        };
        let text = format!("Analysis below.\n```json\n{}\n```\n", serde_json::to_string_pretty(&d).unwrap());
        assert_eq!(extract_analysis_decision(&text).unwrap(), d);
    }

    #[test]
    fn prose_is_malformed() {
        match extract_analysis_decision("I think it is fine").unwrap_err() {
            ExtractError::MalformedDecision { raw } => assert_eq!(raw, "I think it is fine"),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn last_object_wins_and_nested_values_are_skipped() {
        let text = r#"{"is_finish": false, "guidance_for_write_eval_script_agent": "use {\"a\": 1}"}
            later {"other": {"is_finish": "nested"}} final {"is_finish": "true", "guidance_for_context_retrieval_agent": null}"#;
        let d = extract_analysis_decision(text).unwrap();
        assert!(d.is_finish);
        assert_eq!(d.guidance_for_context_retrieval_agent, "");
    }

    #[test]
    fn commented_json_with_trailing_comma() {
        let text = "```json\n{\n\"is_finish\": false,  # keep going\n\"guidance_for_write_eval_script_agent\": \"run tests/test_a.py # only\",\n}\n```";
        let d = extract_analysis_decision(text).unwrap();
        assert!(!d.is_finish);
        assert_eq!(d.guidance_for_write_eval_script_agent, "run tests/test_a.py # only");
    }
}
