//! Deterministic rule-based stand-in for the language model.
//!
//! Rules, from lowest to highest priority:
//! terrain nouns set a few properties, weather words shift levels from
//! there, and explicit `<modifier> <property>` phrases override both.
//! Anything left untouched stays `Medium`.

use std::sync::LazyLock;

use regex::Regex;

use crate::terrain::{Property, PropertyLevel, PropertyLevels};

use PropertyLevel::*;

struct NounRule {
    pattern: Regex,
    sets: &'static [(Property, PropertyLevel)],
}

static NOUN_RULES: LazyLock<Vec<NounRule>> = LazyLock::new(|| {
    let rule = |p: &str, sets| NounRule {
        pattern: Regex::new(p).unwrap(),
        sets,
    };
    vec![
        rule(r"\bgrass", &[(Property::Stiffness, Low)]),
        rule(
            r"\b(ice|icy|snow)\b",
            &[(Property::Friction, VeryLow), (Property::Restitution, Low)],
        ),
        rule(
            r"\b(sand|sandy|beach|beaches)\b",
            &[(Property::Stiffness, VeryLow), (Property::Damping, VeryHigh)],
        ),
        rule(
            r"\b(concrete|asphalt)\b",
            &[(Property::Stiffness, VeryHigh), (Property::Friction, High)],
        ),
        rule(
            r"\b(running[\s-]+tracks?|rubber)\b",
            &[
                (Property::Friction, VeryHigh),
                (Property::Restitution, High),
                (Property::Stiffness, High),
            ],
        ),
        rule(
            r"\b(mountain[\s-]+roads?|rock|rocks|rocky)\b",
            &[(Property::Stiffness, VeryHigh), (Property::Friction, High)],
        ),
    ]
});

static WET: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\b(rain|rainy|raining|drizzle|drizzling|wet|moist)\b").unwrap());
static SUNNY: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\b(sun|sunny|dry)\b").unwrap());
static SNOWY: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\bsnowy\b").unwrap());

static EXPLICIT: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r"\b(no|very[\s-]+low|low|medium|high|very[\s-]+high)\s+(restitution|friction|stiffness|damping)\b",
    )
    .unwrap()
});

fn modifier_level(m: &str) -> PropertyLevel {
    let words: Vec<&str> = m.split(|c: char| c.is_whitespace() || c == '-').filter(|w| !w.is_empty()).collect();
    match words.as_slice() {
        ["no"] | ["very", "low"] => VeryLow,
        ["low"] => Low,
        ["medium"] => Medium,
        ["high"] => High,
        _ => VeryHigh,
    }
}

fn property_named(name: &str) -> Property {
    match name {
        "restitution" => Property::Restitution,
        "friction" => Property::Friction,
        "stiffness" => Property::Stiffness,
        _ => Property::Damping,
    }
}

/// Map a free-form terrain description to levels. Total and deterministic.
pub fn mock_translate(description: &str) -> PropertyLevels {
    let text = description.to_lowercase();
    let mut levels = PropertyLevels::default();

    // Nouns in order of first mention; later mentions win on conflicts.
    let mut hits: Vec<(usize, &NounRule)> = NOUN_RULES
        .iter()
        .filter_map(|r| r.pattern.find(&text).map(|m| (m.start(), r)))
        .collect();
    hits.sort_by_key(|(pos, _)| *pos);
    for (_, rule) in hits {
        for &(p, l) in rule.sets {
            levels.set(p, l);
        }
    }

    if WET.is_match(&text) {
        levels.friction = levels.friction.pred();
        levels.damping = levels.damping.succ();
    }
    if SUNNY.is_match(&text) {
        levels.friction = levels.friction.succ();
    }
    if SNOWY.is_match(&text) {
        levels.friction = VeryLow;
    }

    for cap in EXPLICIT.captures_iter(&text) {
        levels.set(property_named(&cap[2]), modifier_level(&cap[1]));
    }
    levels
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::terrain::describe_low_level;

    #[test]
    fn explicit_phrases() {
        let l = mock_translate(
            "This environment has medium restitution when collision, low friction, and very high damping.",
        );
        assert_eq!(l, PropertyLevels::new(Medium, Low, Medium, VeryHigh));
    }

    #[test]
    fn no_means_very_low() {
        let l = mock_translate(
            "This environment has no restitution when collision, very high friction, and no damping.",
        );
        assert_eq!(l, PropertyLevels::new(VeryLow, VeryHigh, Medium, VeryLow));
    }

    #[test]
    fn beach_under_sun() {
        let l = mock_translate("The spot is walking on the beach near the sea under the sun.");
        assert_eq!(l.stiffness, VeryLow);
        assert_eq!(l.damping, VeryHigh);
        assert_eq!(l.friction, High);
        assert_eq!(l.restitution, Medium);
    }

    #[test]
    fn snowy_mountain_road() {
        let l = mock_translate("The spot is walking on a mountain road covered by ice. It's snowy now.");
        assert_eq!(l, PropertyLevels::new(Low, VeryLow, VeryHigh, Medium));
    }

    #[test]
    fn grassland_after_rain() {
        let l = mock_translate("You are entering a grassland right after the rain");
        assert_eq!(l.friction, Low);
        assert_eq!(l.damping, High);
        assert_eq!(l.stiffness, Low);
    }

    #[test]
    fn weather_shifts_saturate() {
        let l = mock_translate("running tracks on a sunny day");
        assert_eq!(l.friction, VeryHigh);
        let l = mock_translate("icy path in the rain");
        assert_eq!(l.friction, VeryLow);
    }

    #[test]
    fn explicit_overrides_nouns_and_weather() {
        let l = mock_translate("a beach in the rain with high damping and very high friction");
        assert_eq!(l.damping, High);
        assert_eq!(l.friction, VeryHigh);
        assert_eq!(l.stiffness, VeryLow);
    }

    #[test]
    fn no_keywords_defaults_medium() {
        assert_eq!(mock_translate("…"), PropertyLevels::default());
        assert_eq!(mock_translate(""), PropertyLevels::default());
        // substrings inside other words do not fire
        assert_eq!(mock_translate("terrain with brainy sundials"), PropertyLevels::default());
    }

    #[test]
    fn recovers_every_low_level_description() {
        for l in PropertyLevels::all() {
            assert_eq!(mock_translate(&describe_low_level(&l)), l);
        }
    }
}
