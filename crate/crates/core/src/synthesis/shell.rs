//! Just enough shell lexing to find commands inside RUN lines and scripts.
//! Handles quotes, backslash escapes and the `&& || ; | &` separators.

/// Splits a command line into simple commands at unquoted separators.
pub fn split_commands(src: &str) -> Vec<String> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let mut cur = String::new();
    let (mut single, mut double) = (false, false);
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if single {
            single = c != '\'';
            cur.push(c);
        } else if c == '\\' && i + 1 < chars.len() {
            cur.push(c);
            cur.push(chars[i + 1]);
            i += 1;
        } else if double {
            double = c != '"';
            cur.push(c);
        } else {
            match c {
                '\'' => {
                    single = true;
                    cur.push(c);
                }
                '"' => {
                    double = true;
                    cur.push(c);
                }
                ';' | '|' | '&' | '\n' => {
                    if !cur.trim().is_empty() {
                        out.push(cur.trim().to_string());
                    }
                    cur.clear();
                }
                _ => cur.push(c),
            }
        }
        i += 1;
    }
    if !cur.trim().is_empty() {
        out.push(cur.trim().to_string());
    }
    out
}

/// Splits one simple command into words, removing quotes.
pub fn words(src: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    let mut in_word = false;
    let (mut single, mut double) = (false, false);
    let mut chars = src.chars().peekable();
    while let Some(c) = chars.next() {
        if single {
            if c == '\'' {
                single = false;
            } else {
                cur.push(c);
            }
        } else if double {
            match c {
                '"' => double = false,
                '\\' => {
                    if let Some(n) = chars.next() {
                        cur.push(n);
                    }
                }
                _ => cur.push(c),
            }
        } else if c.is_whitespace() {
            if in_word {
                out.push(std::mem::take(&mut cur));
                in_word = false;
            }
        } else {
            in_word = true;
            match c {
                '\'' => single = true,
                '"' => double = true,
                '\\' => {
                    if let Some(n) = chars.next() {
                        cur.push(n);
                    }
                }
                _ => cur.push(c),
            }
        }
    }
    if in_word {
        out.push(cur);
    }
    out
}

fn is_assignment(word: &str) -> bool {
    match word.split_once('=') {
        Some((name, _)) => {
            !name.is_empty()
                && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
                && !name.starts_with(|c: char| c.is_ascii_digit())
        }
        None => false,
    }
}

fn basename(word: &str) -> &str {
    word.rsplit('/').next().unwrap_or(word)
}

/// Every simple command in `src`, as word lists, with env assignments and
/// common wrappers (`env`, `sudo`, `timeout N`, `conda run -n X`) removed and
/// `bash -c '...'` payloads expanded in place.
pub fn simple_commands(src: &str) -> Vec<Vec<String>> {
    let mut out = Vec::new();
    collect(src, &mut out, 0);
    out
}

fn collect(src: &str, out: &mut Vec<Vec<String>>, depth: usize) {
    for cmd in split_commands(src) {
        let mut w = words(&cmd);
        loop {
            while w.first().is_some_and(|x| is_assignment(x)) {
                w.remove(0);
            }
            match w.first().map(|s| basename(s)) {
                Some("env") | Some("sudo") | Some("exec") | Some("xvfb-run") | Some("time") => {
                    w.remove(0);
                }
                Some("timeout") => {
                    w.drain(..w.len().min(2));
                }
                Some("conda") | Some("mamba") if w.get(1).map(String::as_str) == Some("run") => {
                    w.drain(..2);
                    while w.first().is_some_and(|x| x.starts_with('-')) {
                        let flag = w.remove(0);
                        if matches!(flag.as_str(), "-n" | "--name" | "-p" | "--prefix") && !w.is_empty() {
                            w.remove(0);
                        }
                    }
                }
                _ => break,
            }
        }
        let shell = matches!(w.first().map(|s| basename(s)), Some("bash") | Some("sh") | Some("zsh"));
        let c_flag = w
            .iter()
            .position(|x| x.starts_with('-') && !x.starts_with("--") && x.ends_with('c'));
        if shell && depth < 4 {
            if let Some(pos) = c_flag {
                if let Some(payload) = w.get(pos + 1) {
                    collect(payload, out, depth + 1);
                    continue;
                }
            }
        }
        if !w.is_empty() {
            out.push(w);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splits_on_unquoted_separators() {
        assert_eq!(
            split_commands("a && b || c; d | e 'x;y' \"p&q\""),
            ["a", "b", "c", "d", "e 'x;y' \"p&q\""]
        );
    }

    #[test]
    fn words_strip_quotes() {
        assert_eq!(words(r#"pip install "poetry>=1,<2" 'a b' c\ d"#), ["pip", "install", "poetry>=1,<2", "a b", "c d"]);
    }

    #[test]
    fn expands_shell_payloads_and_wrappers() {
        let cmds = simple_commands("FOO=1 bash -lc 'pip install -e . && timeout 60 pytest -x'");
        assert_eq!(cmds, [vec!["pip", "install", "-e", "."], vec!["pytest", "-x"]]);
        let cmds = simple_commands("conda run -n testbed python -m unittest");
        assert_eq!(cmds, [vec!["python", "-m", "unittest"]]);
    }
}
