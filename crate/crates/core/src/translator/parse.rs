use std::sync::LazyLock;

use regex::Regex;

use crate::error::{Error, Result};
use crate::terrain::{Property, PropertyLevel, PropertyLevels};

static ANSWER_LINE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r"(?i)\b(restitution|friction|stiffness|damping)\s*=\s*(very_low|very_high|low|medium|high)\b",
    )
    .unwrap()
});

/// Extract `property=LEVEL` answers from a model reply.
///
/// Case-insensitive; surrounding prose is ignored and later duplicates
/// override earlier ones. Fails listing every property without an answer.
pub fn parse_response(text: &str) -> Result<PropertyLevels> {
    let mut found: [Option<PropertyLevel>; 4] = [None; 4];
    for line in text.lines() {
        for cap in ANSWER_LINE.captures_iter(line) {
            let prop = cap[1].to_ascii_lowercase();
            let Some(slot) = Property::QUALITATIVE.iter().position(|p| p.name() == prop) else {
                continue;
            };
            // the regex only admits valid tokens
            found[slot] = cap[2].parse().ok();
        }
    }
    let missing: Vec<String> = Property::QUALITATIVE
        .iter()
        .zip(found.iter())
        .filter(|(_, f)| f.is_none())
        .map(|(p, _)| p.name().to_string())
        .collect();
    if !missing.is_empty() {
        return Err(Error::Parse { missing });
    }
    let [r, f, s, d] = found.map(Option::unwrap);
    Ok(PropertyLevels::new(r, f, s, d))
}
