use serde::{Deserialize, Serialize};

/// What the writers need to know about building and testing the repo.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetrievalReport {
    #[serde(default)]
    pub dependency_pins: Vec<String>,
    #[serde(default)]
    pub language_version: Option<String>,
    #[serde(default)]
    pub setup_commands: Vec<String>,
    #[serde(default)]
    pub test_commands: Vec<String>,
    #[serde(default)]
    pub env_framework_notes: String,
}

fn clean_list(items: &mut Vec<String>) {
    let mut seen = Vec::<String>::new();
    for item in items.drain(..) {
        let t = item.trim().to_string();
        if !t.is_empty() && !seen.contains(&t) {
            seen.push(t);
        }
    }
    *items = seen;
}

impl RetrievalReport {
    /// Prompt-ready text form.
    pub fn render(&self) -> String {
        let list = |items: &[String]| {
            if items.is_empty() {
                "- (none found)\n".to_string()
            } else {
                items.iter().map(|i| format!("- {i}\n")).collect()
            }
        };
        format!(
            "Python version: {}\nDependency pins:\n{}Setup commands:\n{}Test commands:\n{}Notes:\n{}\n",
            self.language_version.as_deref().unwrap_or("unknown"),
            list(&self.dependency_pins),
            list(&self.setup_commands),
            list(&self.test_commands),
            if self.env_framework_notes.is_empty() {
                "(none)"
            } else {
                &self.env_framework_notes
            },
        )
    }

    /// Drops blank and duplicate entries, then trims notes and pins until
    /// the rendered form fits in `cap` bytes.
    pub fn normalized(mut self, cap: usize) -> Self {
        clean_list(&mut self.dependency_pins);
        clean_list(&mut self.setup_commands);
        clean_list(&mut self.test_commands);
        self.language_version = self
            .language_version
            .map(|v| v.trim().to_string())
            .filter(|v| !v.is_empty());
        self.env_framework_notes = self.env_framework_notes.trim().to_string();
        while self.render().len() > cap {
            if !self.env_framework_notes.is_empty() {
                let over = self.render().len() - cap;
                let keep = self.env_framework_notes.len().saturating_sub(over);
                let mut cut = keep;
                while !self.env_framework_notes.is_char_boundary(cut) {
                    cut -= 1;
                }
                self.env_framework_notes.truncate(cut);
            } else if self.dependency_pins.pop().is_none()
                && self.setup_commands.pop().is_none()
                && self.test_commands.pop().is_none()
            {
                break;
            }
        }
        self
    }
}

fn file_name(path: &str) -> &str {
    path.rsplit('/').next().unwrap_or(path)
}

fn command_from_doc_line(line: &str) -> Option<String> {
    let t = line
        .trim()
        .trim_start_matches("$ ")
        .trim_start_matches("- ")
        .trim_start_matches("run: ")
        .trim_matches('`')
        .trim();
    let starts = |p: &str| t == p || t.starts_with(&format!("{p} "));
    if starts("pytest") || starts("python -m pytest") || starts("tox") || starts("python -m unittest") {
        Some(t.to_string())
    } else {
        None
    }
}

/// Best-effort report assembled from digested files when the model never
/// produced one.
pub fn report_from_evidence(collected: &[(String, String)]) -> RetrievalReport {
    let mut r = RetrievalReport::default();
    let mut frameworks = Vec::new();
    for (path, text) in collected {
        let name = file_name(path);
        let lower = name.to_ascii_lowercase();
        if lower.starts_with("requirements") && lower.ends_with(".txt") {
            r.setup_commands.push(format!("pip install -r {path}"));
            for line in text.lines() {
                let l = line.split('#').next().unwrap_or("").trim();
                if l.contains("==") && !l.starts_with('-') {
                    r.dependency_pins.push(l.to_string());
                }
            }
        }
        if name == ".python-version" {
            r.language_version = text.lines().next().map(|l| l.trim().to_string());
        }
        if name == "pyproject.toml" || name == "setup.py" || name == "setup.cfg" {
            r.setup_commands.push("pip install -e .".to_string());
            for line in text.lines() {
                let l = line.trim();
                if l.starts_with("requires-python") || l.starts_with("python_requires") {
                    if let Some(v) = l.split(['"', '\'']).nth(1) {
                        r.language_version.get_or_insert_with(|| v.to_string());
                    }
                }
            }
        }
        let hay = text.to_ascii_lowercase();
        for (marker, fw) in [
            ("[tool.poetry]", "poetry"),
            ("poetry install", "poetry"),
            ("uv sync", "uv"),
            ("uv pip", "uv"),
            ("pipenv", "pipenv"),
            ("environment.yml", "conda"),
            ("[tool.pytest", "pytest"),
            ("[pytest]", "pytest"),
        ] {
            if hay.contains(marker) && !frameworks.contains(&fw) {
                frameworks.push(fw);
            }
        }
        r.test_commands
            .extend(text.lines().filter_map(command_from_doc_line));
    }
    if !frameworks.is_empty() {
        r.env_framework_notes = format!("frameworks mentioned: {}", frameworks.join(", "));
    }
    r
}
