//! Text folding shared by verdict parsing, judging, and entity keying.

/// Case-folds, replaces every non-alphanumeric character with a space, and
/// collapses whitespace runs. Two strings that fold equal are treated as the
/// same token sequence everywhere verdicts or entity keys are compared.
pub fn fold(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut pending_space = false;
    for ch in s.chars() {
        if ch.is_alphanumeric() {
            if pending_space && !out.is_empty() {
                out.push(' ');
            }
            pending_space = false;
            for lower in ch.to_lowercase() {
                out.push(lower);
            }
        } else {
            pending_space = true;
        }
    }
    out
}

/// Canonical key for entity surface forms: case-folded with whitespace runs
/// collapsed. Punctuation is preserved so "u.s." and "us" stay distinct.
pub fn entity_key(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut pending_space = false;
    for ch in s.chars() {
        if ch.is_whitespace() {
            pending_space = true;
        } else {
            if pending_space && !out.is_empty() {
                out.push(' ');
            }
            pending_space = false;
            for lower in ch.to_lowercase() {
                out.push(lower);
            }
        }
    }
    out
}

/// Strict yes/no verdict parse: fold, then require an exact match.
/// Anything else (including hedges like "yes, because") is `None`.
pub fn parse_yes_no(s: &str) -> Option<bool> {
    match fold(s).as_str() {
        "yes" => Some(true),
        "no" => Some(false),
        _ => None,
    }
}

/// Strict true/false verdict parse with the same folding as [`parse_yes_no`].
pub fn parse_true_false(s: &str) -> Option<bool> {
    match fold(s).as_str() {
        "true" => Some(true),
        "false" => Some(false),
        _ => None,
    }
}
