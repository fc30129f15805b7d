//! Just enough Java lexing to find method bodies: literals and comments are
//! recognized so that braces inside them are ignored, and method headers are
//! matched with a token-level heuristic.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokKind {
    Ident,
    Literal,
    Punct,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tok {
    pub kind: TokKind,
    pub text: String,
    /// 1-based line of the token's first character.
    pub line: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum JavaError {
    #[error("unbalanced braces (line {line})")]
    UnbalancedBraces { line: usize },
}

/// A method or constructor with a body. Lines are 1-based and inclusive.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JavaMethod {
    pub name: String,
    /// First line of the declaration (annotations and modifiers included).
    pub start_line: usize,
    /// Line holding the opening brace of the body.
    pub body_line: usize,
    /// Line holding the closing brace of the body.
    pub end_line: usize,
}

impl JavaMethod {
    pub fn contains(&self, line: usize) -> bool {
        (self.start_line..=self.end_line).contains(&line)
    }

    fn span(&self) -> usize {
        self.end_line - self.start_line
    }
}

const NOT_A_METHOD_NAME: &[&str] = &[
    "if", "for", "while", "switch", "catch", "synchronized", "try", "return", "new", "else", "do",
    "throw", "case", "assert", "super", "this", "yield",
];

const NOT_BEFORE_NAME: &[&str] = &["new", "record", "return", "throw", "case", "else", "yield", "assert"];

fn is_ident_start(c: char) -> bool {
    c.is_alphabetic() || c == '_' || c == '$'
}

fn is_ident_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_' || c == '$'
}

pub fn lex(source: &str) -> Vec<Tok> {
    let chars: Vec<char> = source.chars().collect();
    let mut toks = Vec::new();
    let mut line = 1;
    let mut i = 0;
    let n = chars.len();
    while i < n {
        let c = chars[i];
        let next = chars.get(i + 1).copied();
        if c == '\n' {
            line += 1;
            i += 1;
        } else if c.is_whitespace() {
            i += 1;
        } else if c == '/' && next == Some('/') {
            while i < n && chars[i] != '\n' {
                i += 1;
            }
        } else if c == '/' && next == Some('*') {
            i += 2;
            while i < n && !(chars[i] == '*' && chars.get(i + 1) == Some(&'/')) {
                if chars[i] == '\n' {
                    line += 1;
                }
                i += 1;
            }
            i = (i + 2).min(n);
        } else if c == '"' || c == '\'' {
            let start_line = line;
            let start = i;
            let text_block = c == '"' && next == Some('"') && chars.get(i + 2) == Some(&'"');
            if text_block {
                i += 3;
                while i < n && !(chars[i] == '"' && chars.get(i + 1) == Some(&'"') && chars.get(i + 2) == Some(&'"')) {
                    if chars[i] == '\\' {
                        i += 1;
                    }
                    if chars.get(i) == Some(&'\n') {
                        line += 1;
                    }
                    i += 1;
                }
                i = (i + 3).min(n);
            } else {
                i += 1;
                while i < n && chars[i] != c && chars[i] != '\n' {
                    if chars[i] == '\\' {
                        i += 1;
                    }
                    i += 1;
                }
                i = (i + 1).min(n);
            }
            toks.push(Tok {
                kind: TokKind::Literal,
                text: chars[start..i.min(n)].iter().collect(),
                line: start_line,
            });
        } else if c.is_ascii_digit() {
            let start = i;
            while i < n && (is_ident_char(chars[i]) || (chars[i] == '.' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit()))) {
                i += 1;
            }
            toks.push(Tok {
                kind: TokKind::Literal,
                text: chars[start..i].iter().collect(),
                line,
            });
        } else if is_ident_start(c) {
            let start = i;
            while i < n && is_ident_char(chars[i]) {
                i += 1;
            }
            toks.push(Tok {
                kind: TokKind::Ident,
                text: chars[start..i].iter().collect(),
                line,
            });
        } else {
            toks.push(Tok {
                kind: TokKind::Punct,
                text: c.to_string(),
                line,
            });
            i += 1;
        }
    }
    toks
}

fn is_punct(t: &Tok, p: &str) -> bool {
    t.kind == TokKind::Punct && t.text == p
}

/// Index of the `(` matching the `)` at `close`, scanning backwards.
fn matching_open_paren(toks: &[Tok], close: usize) -> Option<usize> {
    let mut depth = 0usize;
    for k in (0..=close).rev() {
        if is_punct(&toks[k], ")") {
            depth += 1;
        } else if is_punct(&toks[k], "(") {
            depth -= 1;
            if depth == 0 {
                return Some(k);
            }
        } else if is_punct(&toks[k], "{") || is_punct(&toks[k], "}") || is_punct(&toks[k], ";") {
            return None;
        }
    }
    None
}

/// If the `{` at `brace` opens a method or constructor body, returns the index
/// of the name token.
fn method_name_before(toks: &[Tok], brace: usize) -> Option<usize> {
    let mut k = brace.checked_sub(1)?;
    // Skip a `throws A, b.C<D>` clause.
    let mut j = k;
    loop {
        let t = &toks[j];
        if t.kind == TokKind::Ident && t.text == "throws" {
            k = j.checked_sub(1)?;
            break;
        }
        let allowed = t.kind == TokKind::Ident || [".", ",", "<", ">", "?"].iter().any(|p| is_punct(t, p));
        if !allowed || j == 0 {
            break;
        }
        j -= 1;
    }
    if !is_punct(&toks[k], ")") {
        return None;
    }
    let open = matching_open_paren(toks, k)?;
    let name_idx = open.checked_sub(1)?;
    let name = &toks[name_idx];
    if name.kind != TokKind::Ident || NOT_A_METHOD_NAME.contains(&name.text.as_str()) {
        return None;
    }
    match name_idx.checked_sub(1).map(|p| &toks[p]) {
        None => Some(name_idx),
        Some(prev) if prev.kind == TokKind::Ident => {
            (!NOT_BEFORE_NAME.contains(&prev.text.as_str())).then_some(name_idx)
        }
        Some(prev) if [">", "]", "{", "}", ";", ")"].iter().any(|p| is_punct(prev, p)) => {
            // `)` only closes an annotation argument list: `@A(x) Foo() {`.
            if is_punct(prev, ")") {
                let ann_open = matching_open_paren(toks, name_idx - 1)?;
                let before = ann_open.checked_sub(2).map(|p| &toks[p])?;
                if !is_punct(before, "@") {
                    return None;
                }
            }
            Some(name_idx)
        }
        Some(_) => None,
    }
}

fn declaration_start(toks: &[Tok], name_idx: usize) -> usize {
    let mut k = name_idx;
    while k > 0 {
        let prev = &toks[k - 1];
        if is_punct(prev, ";") || is_punct(prev, "{") || is_punct(prev, "}") {
            break;
        }
        k -= 1;
    }
    toks[k].line
}

/// Every method and constructor with a body, in source order of their
/// opening braces.
pub fn find_methods(source: &str) -> Result<Vec<JavaMethod>, JavaError> {
    let toks = lex(source);
    let mut stack: Vec<(usize, Option<usize>)> = Vec::new();
    let mut open_methods: Vec<(usize, JavaMethod)> = Vec::new();
    let mut methods = Vec::new();
    for (idx, t) in toks.iter().enumerate() {
        if is_punct(t, "{") {
            let name = method_name_before(&toks, idx);
            stack.push((idx, name));
            if let Some(name_idx) = name {
                open_methods.push((
                    idx,
                    JavaMethod {
                        name: toks[name_idx].text.clone(),
                        start_line: declaration_start(&toks, name_idx),
                        body_line: t.line,
                        end_line: t.line,
                    },
                ));
            }
        } else if is_punct(t, "}") {
            let (open_idx, name) = stack.pop().ok_or(JavaError::UnbalancedBraces { line: t.line })?;
            if name.is_some() {
                let (o, mut m) = open_methods.pop().expect("method stack tracks brace stack");
                debug_assert_eq!(o, open_idx);
                m.end_line = t.line;
                methods.push(m);
            }
        }
    }
    if let Some((idx, _)) = stack.last() {
        return Err(JavaError::UnbalancedBraces { line: toks[*idx].line });
    }
    methods.sort_by_key(|m| (m.body_line, m.start_line));
    Ok(methods)
}

/// Innermost method whose declaration-to-closing-brace span holds `line`.
pub fn innermost_method(methods: &[JavaMethod], line: usize) -> Option<&JavaMethod> {
    methods
        .iter()
        .filter(|m| m.contains(line))
        .min_by_key(|m| (m.span(), std::cmp::Reverse(m.start_line)))
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"package a.b;

import java.util.List;

public class Foo extends Bar implements Baz {
    static {
        INIT = 1;
    }

    private final String s = "}{";

    /** Docs { */
    @Override
    public <T> List<T> first(List<T> in) throws IOException, java.io.Error {
        if (in.isEmpty()) {
            return null;
        }
        Runnable r = new Runnable() {
            public void run() {
                go('}');
            }
        };
        return in;
    }

    Foo(int x) {
        this.x = x;
    }

    abstract void nobody();

    int[] arr() { return new int[] {1, 2}; }
}
"#;

    #[test]
    fn finds_methods_and_spans() {
        let ms = find_methods(SAMPLE).unwrap();
        let summary: Vec<_> = ms.iter().map(|m| (m.name.as_str(), m.start_line, m.end_line)).collect();
        // Hand-counted: `first` spans its annotation line 13 to the brace on
        // line 24; `run` lines 19-21; the constructor 26-28; `arr` line 32.
        assert_eq!(summary, [("first", 13, 24), ("run", 19, 21), ("Foo", 26, 28), ("arr", 32, 32)]);
    }

    #[test]
    fn innermost_prefers_nested() {
        let ms = find_methods(SAMPLE).unwrap();
        assert_eq!(innermost_method(&ms, 20).unwrap().name, "run");
        assert_eq!(innermost_method(&ms, 16).unwrap().name, "first");
        assert!(innermost_method(&ms, 7).is_none());
        assert!(innermost_method(&ms, 3).is_none());
    }

    #[test]
    fn control_flow_and_lambdas_are_not_methods() {
        let src = "class A { void f() { while (x) { } for (;;) { } switch (y) { } try (R r = g()) { } catch (E e) { } Runnable q = () -> { }; synchronized (this) { } } }";
        let ms = find_methods(src).unwrap();
        assert_eq!(ms.len(), 1);
        assert_eq!(ms[0].name, "f");
    }

    #[test]
    fn records_are_not_methods() {
        let ms = find_methods("record P(int x) { P { } int y() { return x; } }").unwrap();
        assert_eq!(ms.iter().map(|m| m.name.as_str()).collect::<Vec<_>>(), ["y"]);
    }

    #[test]
    fn unbalanced_is_an_error() {
        assert!(matches!(find_methods("class A { void f() { }"), Err(JavaError::UnbalancedBraces { .. })));
        assert!(matches!(find_methods("class A { } }"), Err(JavaError::UnbalancedBraces { line: 1 })));
    }
}
