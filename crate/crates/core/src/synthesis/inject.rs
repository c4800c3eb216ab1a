use thiserror::Error;

use super::lint::{heredocs, HEREDOC_DELIMITER, TEST_PATCH_PLACEHOLDER};
use super::EvalScriptDraft;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum InjectError {
    #[error("test patch contains the heredoc delimiter {HEREDOC_DELIMITER}")]
    DelimiterCollision,
    #[error("script must contain the placeholder line exactly once (found {0})")]
    Placeholder(usize),
}

/// Substitutes the test patch for the placeholder line.
///
/// The patch lands verbatim between the delimiter lines. A patch without a
/// trailing newline gets one so the closing delimiter stays on its own
/// line. For an empty patch the apply command gains `--allow-empty` if the
/// script did not already ask for it.
pub fn inject_test_patch(draft: &EvalScriptDraft, test_patch: &str) -> Result<String, InjectError> {
    if test_patch.contains(HEREDOC_DELIMITER) {
        return Err(InjectError::DelimiterCollision);
    }
    let script = &draft.template_text;
    let found = script.matches(TEST_PATCH_PLACEHOLDER).count();
    if found != 1 {
        return Err(InjectError::Placeholder(found));
    }

    let mut lines: Vec<String> = script.split_inclusive('\n').map(str::to_string).collect();
    let at = lines
        .iter()
        .position(|l| l.contains(TEST_PATCH_PLACEHOLDER))
        .expect("counted once");

    let mut body = test_patch.to_string();
    if !body.is_empty() && !body.ends_with('\n') {
        body.push('\n');
    }
    let line = &lines[at];
    lines[at] = if line.trim_end_matches(['\n', '\r']).trim() == TEST_PATCH_PLACEHOLDER {
        body
    } else {
        // Placeholder shares its line with other text; replace in place.
        line.replacen(TEST_PATCH_PLACEHOLDER, test_patch, 1)
    };

    if test_patch.is_empty() {
        let plain: Vec<&str> = script.lines().collect();
        if let Some(doc) = heredocs(&plain).into_iter().find(|d| d.contains(at)) {
            let opener = &mut lines[doc.opener];
            if opener.contains("git apply") && !opener.contains("--allow-empty") {
                *opener = opener.replacen("git apply", "git apply --allow-empty", 1);
            }
        }
    }
    Ok(lines.concat())
}
