//! Pulling a JSON value out of free-form model output.

use serde_json::Value;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ExtractError {
    #[error("no JSON {0} found in output")]
    NotFound(&'static str),
    #[error("JSON {0} is not closed (output truncated?)")]
    Unbalanced(&'static str),
    #[error("candidate JSON does not parse: {0}")]
    Parse(String),
}

/// Finds the first balanced `{...}` in `text`, repairs Python-style quoting
/// and parses it. Markdown fences are looked into first.
pub fn extract_json(text: &str) -> Result<Value, ExtractError> {
    extract(text, '{', '}', "object")
}

/// Same as [`extract_json`] for a top-level list.
pub fn extract_json_array(text: &str) -> Result<Value, ExtractError> {
    extract(text, '[', ']', "array")
}

fn extract(text: &str, open: char, close: char, what: &'static str) -> Result<Value, ExtractError> {
    let region = fenced_blocks(text)
        .into_iter()
        .find(|block| block.contains(open))
        .unwrap_or(text);
    let start = region.find(open).ok_or(ExtractError::NotFound(what))?;
    let end = balanced_end(&region[start..], open, close).ok_or(ExtractError::Unbalanced(what))?;
    let (candidate, literals) = normalize(&region[start..start + end]);
    let mut value: Value = serde_json::from_str(&candidate).map_err(|e| ExtractError::Parse(e.to_string()))?;
    restore_literals(&mut value, &literals);
    Ok(value)
}

/// serde_json rewrites some literals (`2e3` becomes `2e+3`). Numbers come
/// out of the parse in source order, so the originals can be put back. With
/// duplicate keys the counts differ and nothing is touched.
fn restore_literals(value: &mut Value, literals: &[String]) {
    fn collect<'a>(v: &'a mut Value, out: &mut Vec<&'a mut Value>) {
        match v {
            Value::Number(_) => out.push(v),
            Value::Array(items) => items.iter_mut().for_each(|i| collect(i, out)),
            Value::Object(map) => map.values_mut().for_each(|i| collect(i, out)),
            _ => {}
        }
    }
    let mut slots = Vec::new();
    collect(value, &mut slots);
    if slots.len() != literals.len() {
        return;
    }
    for (slot, lit) in slots.into_iter().zip(literals) {
        *slot = Value::Number(serde_json::Number::from_string_unchecked(lit.clone()));
    }
}

/// Contents of ``` fenced blocks, language tag line dropped.
fn fenced_blocks(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut rest = text;
    while let Some(open) = rest.find("```") {
        let after = &rest[open + 3..];
        let body_start = after.find('\n').map_or(after.len(), |i| i + 1);
        let body = &after[body_start..];
        match body.find("```") {
            Some(close) => {
                out.push(&body[..close]);
                rest = &body[close + 3..];
            }
            None => {
                // unterminated fence: treat the remainder as the block
                out.push(body);
                break;
            }
        }
    }
    out
}

/// Byte length of the balanced region starting at `s[0] == open`.
fn balanced_end(s: &str, open: char, close: char) -> Option<usize> {
    let mut depth = 0usize;
    let mut quote: Option<char> = None;
    let mut escaped = false;
    for (i, c) in s.char_indices() {
        if let Some(q) = quote {
            if escaped {
                escaped = false;
            } else if c == '\\' {
                escaped = true;
            } else if c == q {
                quote = None;
            }
            continue;
        }
        match c {
            '"' | '\'' => quote = Some(c),
            c if c == open => depth += 1,
            c if c == close => {
                depth -= 1;
                if depth == 0 {
                    return Some(i + c.len_utf8());
                }
            }
            _ => {}
        }
    }
    None
}

/// Outside string literals: single-quoted strings become double-quoted,
/// Python constants become JSON ones, bare words become strings and
/// trailing commas are dropped. Numbers and double-quoted strings are
/// copied byte for byte; number tokens are also returned in order.
fn normalize(src: &str) -> (String, Vec<String>) {
    let chars: Vec<char> = src.chars().collect();
    let mut out = String::with_capacity(src.len() + 8);
    let mut literals = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        match c {
            '"' => {
                out.push(c);
                i += 1;
                while i < chars.len() {
                    let d = chars[i];
                    out.push(d);
                    i += 1;
                    if d == '\\' {
                        if let Some(&e) = chars.get(i) {
                            out.push(e);
                            i += 1;
                        }
                    } else if d == '"' {
                        break;
                    }
                }
            }
            '\'' => {
                out.push('"');
                i += 1;
                while i < chars.len() {
                    let d = chars[i];
                    if d == '\\' && i + 1 < chars.len() {
                        if chars[i + 1] == '\'' {
                            out.push('\'');
                        } else {
                            out.push(d);
                            out.push(chars[i + 1]);
                        }
                        i += 2;
                        continue;
                    }
                    i += 1;
                    if d == '\'' {
                        break;
                    }
                    if d == '"' {
                        out.push_str("\\\"");
                    } else {
                        out.push(d);
                    }
                }
                out.push('"');
            }
            c if c.is_ascii_digit() || (c == '-' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit())) => {
                let start = i;
                i += 1;
                while i < chars.len() && (chars[i].is_ascii_alphanumeric() || matches!(chars[i], '.' | '+' | '-')) {
                    i += 1;
                }
                let lit: String = chars[start..i].iter().collect();
                out.push_str(&lit);
                literals.push(lit);
            }
            c if c.is_alphabetic() || c == '_' => {
                let start = i;
                while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_' || chars[i] == '-') {
                    i += 1;
                }
                let word: String = chars[start..i].iter().collect();
                match word.as_str() {
                    "true" | "false" | "null" => out.push_str(&word),
                    "True" => out.push_str("true"),
                    "False" => out.push_str("false"),
                    "None" => out.push_str("null"),
                    _ => {
                        out.push('"');
                        out.push_str(&word);
                        out.push('"');
                    }
                }
            }
            ']' | '}' => {
                let trimmed = out.trim_end().len();
                if out[..trimmed].ends_with(',') {
                    out.truncate(trimmed - 1);
                }
                out.push(c);
                i += 1;
            }
            _ => {
                out.push(c);
                i += 1;
            }
        }
    }
    (out, literals)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fenced() {
        let v = extract_json("Here is the result:\n```json\n{\"set\": [[1, 5]]}\n```\nDone.").unwrap();
        assert_eq!(v["set"][0][1], 5);
    }

    #[test]
    fn single_quotes_and_bare_words() {
        let v = extract_json("{'set': [[1,5]], 'parameter_types': [integer, float]}").unwrap();
        assert_eq!(v["set"][0][0], 1);
        assert_eq!(v["parameter_types"][1], "float");
    }

    #[test]
    fn no_object() {
        assert_eq!(extract_json("I cannot answer"), Err(ExtractError::NotFound("object")));
        assert_eq!(
            extract_json("{\"set\": [[1, 5]], \"hyper"),
            Err(ExtractError::Unbalanced("object"))
        );
    }

    #[test]
    fn apostrophe_inside_double_quoted_string() {
        let v = extract_json(r#"{"note": "it's fine", 'k': 'say "hi"'}"#).unwrap();
        assert_eq!(v["note"], "it's fine");
        assert_eq!(v["k"], "say \"hi\"");
    }

    #[test]
    fn python_constants_and_trailing_commas() {
        let v = extract_json("{'a': [None, None,], 'b': True, 'c': False,}").unwrap();
        assert!(v["a"][0].is_null());
        assert_eq!(v["a"].as_array().unwrap().len(), 2);
        assert_eq!(v["b"], true);
    }

    #[test]
    fn numbers_are_untouched() {
        let raw = "{'parameter': [[1.50, 2e3], [-0.000100, 10]]}";
        let v = extract_json(raw).unwrap();
        let text = serde_json::to_string(&v).unwrap();
        for lit in ["1.50", "2e3", "-0.000100", "10"] {
            assert!(text.contains(lit), "{lit} missing from {text}");
        }
    }

    #[test]
    fn arrays() {
        let v = extract_json_array("The set bounds are [[1, 4], [2, 9]].").unwrap();
        assert_eq!(v[1][1], 9);
    }
}
