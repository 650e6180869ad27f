//! Parsing of agent replies: the sentinel-delimited `KEY: value` block and
//! fenced code blocks.

use std::collections::BTreeMap;

pub const BEGIN: &str = "===BEGIN_ASSESSMENT===";
pub const END: &str = "===END_ASSESSMENT===";

/// Keys of the first assessment block, uppercased with spaces and dashes
/// turned into underscores. Lines without a key continue the previous value.
pub fn parse_block(text: &str) -> Result<BTreeMap<String, String>, String> {
    let mut lines = text.lines().map(str::trim);
    if !lines.any(|l| l == BEGIN) {
        return Err(format!("missing {BEGIN} line"));
    }
    let mut fields: BTreeMap<String, String> = BTreeMap::new();
    let mut last: Option<String> = None;
    for line in lines {
        if line == END {
            return Ok(fields);
        }
        match split_key(line) {
            Some((key, value)) => {
                fields.insert(key.clone(), value.to_string());
                last = Some(key);
            }
            None if line.is_empty() => {}
            None => match last.as_ref().and_then(|k| fields.get_mut(k)) {
                Some(v) => {
                    if !v.is_empty() {
                        v.push('\n');
                    }
                    v.push_str(line);
                }
                None => return Err(format!("unexpected line before first key: {line:?}")),
            },
        }
    }
    Err(format!("missing {END} line"))
}

fn split_key(line: &str) -> Option<(String, &str)> {
    let (key, value) = line.split_once(':')?;
    let key = key.trim();
    let valid = !key.is_empty()
        && key.len() <= 32
        && key.chars().all(|c| c.is_ascii_alphabetic() || c == '_' || c == ' ' || c == '-');
    valid.then(|| {
        let norm = key.to_ascii_uppercase().replace([' ', '-'], "_");
        (norm, value.trim())
    })
}

pub fn parse_yes_no(value: &str) -> Option<bool> {
    let v = value.trim().trim_end_matches('.').to_ascii_lowercase();
    match v.as_str() {
        "yes" | "y" | "true" => Some(true),
        "no" | "n" | "false" => Some(false),
        _ => None,
    }
}

/// Contents of the first fenced (```) block, without the info string.
pub fn first_code_block(text: &str) -> Option<String> {
    let mut lines = text.lines();
    lines.by_ref().find(|l| l.trim_start().starts_with("```"))?;
    let mut body = Vec::new();
    for line in lines {
        if line.trim_start().starts_with("```") {
            return Some(body.join("\n"));
        }
        body.push(line);
    }
    None
}
