/// Result of [`strip_source_comments`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StrippedSource {
    pub text: String,
    /// Set when a `/*` block was still open at end of input. Everything after
    /// the opener has been dropped.
    pub unterminated_block: bool,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum State {
    Code,
    Line,
    Block,
    Str,
    TextBlock,
    Char,
}

/// Removes `//`, `/* */` and `/** */` comments from Java-like source.
///
/// String, text-block and char literals are copied verbatim even when they
/// contain comment markers. Newlines inside block comments are kept so line
/// numbers of the remaining code do not move.
pub fn strip_source_comments(code: &str) -> StrippedSource {
    let chars: Vec<char> = code.chars().collect();
    let mut out = String::with_capacity(code.len());
    let mut state = State::Code;
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let next = chars.get(i + 1).copied();
        match state {
            State::Code => match (c, next) {
                ('/', Some('/')) => {
                    state = State::Line;
                    i += 2;
                    continue;
                }
                ('/', Some('*')) => {
                    state = State::Block;
                    i += 2;
                    continue;
                }
                ('"', _) if next == Some('"') && chars.get(i + 2) == Some(&'"') => {
                    out.push_str("\"\"\"");
                    state = State::TextBlock;
                    i += 3;
                    continue;
                }
                ('"', _) => {
                    out.push(c);
                    state = State::Str;
                }
                ('\'', _) => {
                    out.push(c);
                    state = State::Char;
                }
                _ => out.push(c),
            },
            State::Line => {
                if c == '\n' {
                    out.push('\n');
                    state = State::Code;
                }
            }
            State::Block => {
                if c == '*' && next == Some('/') {
                    state = State::Code;
                    i += 2;
                    continue;
                }
                if c == '\n' {
                    out.push('\n');
                }
            }
            State::Str | State::Char => {
                out.push(c);
                let close = if state == State::Str { '"' } else { '\'' };
                if c == '\\' {
                    if let Some(n) = next {
                        out.push(n);
                        i += 2;
                        continue;
                    }
                } else if c == close || c == '\n' {
                    state = State::Code;
                }
            }
            State::TextBlock => {
                if c == '\\' {
                    out.push(c);
                    if let Some(n) = next {
                        out.push(n);
                        i += 2;
                        continue;
                    }
                } else if c == '"' && next == Some('"') && chars.get(i + 2) == Some(&'"') {
                    out.push_str("\"\"\"");
                    state = State::Code;
                    i += 3;
                    continue;
                } else {
                    out.push(c);
                }
            }
        }
        i += 1;
    }
    StrippedSource {
        text: out,
        unterminated_block: state == State::Block,
    }
}
