use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Revision of the bundled prompt assets; recorded in task records.
pub const PROMPT_VERSION: &str = "v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateId {
    Exploration,
    DockerfileInit,
    EvalscriptInit,
    Analysis,
}

impl TemplateId {
    pub const ALL: [TemplateId; 4] = [
        TemplateId::Exploration,
        TemplateId::DockerfileInit,
        TemplateId::EvalscriptInit,
        TemplateId::Analysis,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TemplateId::Exploration => "exploration",
            TemplateId::DockerfileInit => "dockerfile_init",
            TemplateId::EvalscriptInit => "evalscript_init",
            TemplateId::Analysis => "analysis",
        }
    }

    pub fn body(self) -> &'static str {
        match self {
            TemplateId::Exploration => include_str!("../../assets/prompts/exploration.txt"),
            TemplateId::DockerfileInit => include_str!("../../assets/prompts/dockerfile_init.txt"),
            TemplateId::EvalscriptInit => include_str!("../../assets/prompts/evalscript_init.txt"),
            TemplateId::Analysis => include_str!("../../assets/prompts/analysis.txt"),
        }
    }

    /// Placeholder names in the template body, sorted.
    pub fn placeholders(self) -> BTreeSet<&'static str> {
        placeholder_re()
            .captures_iter(self.body())
            .map(|c| c.get(1).expect("group").as_str())
            .collect()
    }
}

impl fmt::Display for TemplateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for TemplateId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TemplateId::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| format!("unknown template id {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RenderError {
    #[error("template {template} has unbound placeholder {{{name}}}")]
    Unbound { template: TemplateId, name: String },
}

fn placeholder_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\{([a-z_][a-z0-9_]*)\}").expect("static regex"))
}

/// Substitutes every `{name}` in the template. Values are inserted
/// literally; placeholders inside values are not expanded. Extra bindings
/// are ignored.
pub fn render_prompt(
    template: TemplateId,
    bindings: &BTreeMap<String, String>,
) -> Result<String, RenderError> {
    let body = template.body();
    if let Some(name) = template
        .placeholders()
        .into_iter()
        .find(|n| !bindings.contains_key(*n))
    {
        return Err(RenderError::Unbound {
            template,
            name: name.to_string(),
        });
    }
    Ok(placeholder_re()
        .replace_all(body, |c: &regex::Captures<'_>| bindings[&c[1]].clone())
        .into_owned())
}

/// Convenience for building binding maps from string pairs.
pub fn bindings<'a>(pairs: impl IntoIterator<Item = (&'a str, String)>) -> BTreeMap<String, String> {
    pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dockerfile_template_names_base_image() {
        let out = render_prompt(
            TemplateId::DockerfileInit,
            &bindings([("python_version", "3.12".to_string())]),
        )
        .unwrap();
        assert!(out.contains("openswe-python-3.12"));
        assert!(!out.contains("{python_version}"));
    }

    #[test]
    fn empty_bindings_fail() {
        let err = render_prompt(TemplateId::DockerfileInit, &BTreeMap::new()).unwrap_err();
        assert_eq!(
            err,
            RenderError::Unbound {
                template: TemplateId::DockerfileInit,
                name: "python_version".into()
            }
        );
    }

    #[test]
    fn analysis_template_mentions_decision_field() {
        let all = TemplateId::Analysis
            .placeholders()
            .into_iter()
            .map(|n| (n, format!("<{n}>")));
        let out = render_prompt(TemplateId::Analysis, &bindings(all)).unwrap();
        assert!(out.contains("is_finish"));
        assert!(out.contains("<dockerfile>"));
    }

    #[test]
    fn every_template_has_known_placeholders() {
        assert_eq!(
            TemplateId::DockerfileInit.placeholders().into_iter().collect::<Vec<_>>(),
            ["python_version"]
        );
        assert!(TemplateId::EvalscriptInit.placeholders().is_empty());
        assert!(TemplateId::Exploration.placeholders().contains("request"));
        for t in TemplateId::ALL {
            assert_eq!(t.as_str().parse::<TemplateId>().unwrap(), t);
        }
    }
}
