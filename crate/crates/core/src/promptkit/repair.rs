//! Bounded repair of near-JSON model output.

use super::ParseError;

/// End index (exclusive) of the bracket structure opening at `start`,
/// skipping brackets inside string literals.
pub(crate) fn balanced_end(text: &str, start: usize) -> Option<usize> {
    let bytes = text.as_bytes();
    let mut stack: Vec<u8> = Vec::new();
    let mut in_string = false;
    let mut escaped = false;
    for (i, &b) in bytes.iter().enumerate().skip(start) {
        if in_string {
            if escaped {
                escaped = false;
            } else if b == b'\\' {
                escaped = true;
            } else if b == b'"' {
                in_string = false;
            }
            continue;
        }
        match b {
            b'"' => in_string = true,
            b'{' => stack.push(b'}'),
            b'[' => stack.push(b']'),
            b'}' | b']' => {
                if stack.pop() != Some(b) {
                    return None;
                }
                if stack.is_empty() {
                    return Some(i + 1);
                }
            }
            _ => {}
        }
    }
    None
}

/// Every balanced slice starting with `open`, in order of appearance.
pub(crate) fn balanced_slices(text: &str, open: u8) -> impl Iterator<Item = &str> {
    text.bytes()
        .enumerate()
        .filter(move |(_, b)| *b == open)
        .filter_map(move |(i, _)| balanced_end(text, i).map(|end| &text[i..end]))
}

fn normalize_quotes(s: &str) -> String {
    s.chars()
        .map(|c| match c {
            '\u{201C}' | '\u{201D}' | '\u{201E}' | '\u{FF02}' => '"',
            '\u{2018}' | '\u{2019}' => '\'',
            other => other,
        })
        .collect()
}

fn strip_fences(s: &str) -> String {
    s.lines()
        .filter(|l| !l.trim_start().starts_with("```"))
        .collect::<Vec<_>>()
        .join("\n")
}

fn trim_to_structure(s: &str) -> &str {
    let Some(start) = s.find(['{', '[']) else {
        return s;
    };
    match balanced_end(s, start) {
        Some(end) => &s[start..end],
        None => &s[start..],
    }
}

fn drop_trailing_commas(s: &str) -> String {
    let chars: Vec<char> = s.chars().collect();
    let mut out = String::with_capacity(s.len());
    let mut in_string = false;
    let mut escaped = false;
    for (i, &c) in chars.iter().enumerate() {
        if in_string {
            out.push(c);
            if escaped {
                escaped = false;
            } else if c == '\\' {
                escaped = true;
            } else if c == '"' {
                in_string = false;
            }
            continue;
        }
        if c == '"' {
            in_string = true;
        }
        if c == ',' {
            let next = chars[i + 1..].iter().find(|n| !n.is_whitespace());
            if matches!(next, Some('}') | Some(']')) {
                continue;
            }
        }
        out.push(c);
    }
    out
}

/// One repair pass: smart quotes, code fences, trim to the first bracket
/// structure, trailing commas.
pub fn repair(raw: &str) -> String {
    let s = normalize_quotes(raw);
    let s = strip_fences(&s);
    let s = trim_to_structure(&s);
    drop_trailing_commas(s)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Repaired<T> {
    pub value: T,
    /// Whether the repair pass was needed.
    pub repaired: bool,
}

/// Runs `parser` on `raw`; on failure applies one repair pass and retries.
/// An input the parser already accepts is never repaired.
pub fn repair_then_parse<T, F>(raw: &str, parser: F) -> Result<Repaired<T>, ParseError>
where
    F: Fn(&str) -> Result<T, ParseError>,
{
    match parser(raw) {
        Ok(value) => Ok(Repaired { value, repaired: false }),
        Err(first) => {
            let fixed = repair(raw);
            if fixed == raw {
                return Err(first);
            }
            parser(&fixed).map(|value| Repaired { value, repaired: true })
        }
    }
}
