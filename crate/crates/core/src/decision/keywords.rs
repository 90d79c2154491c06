use super::DecisionCategory;
use crate::encoding::words;

/// Phrase patterns per category, checked in this order. A pattern matches
/// when its words appear contiguously in the lowercased text.
const PATTERNS: &[(DecisionCategory, &[&str])] = &[
    (DecisionCategory::Stop, &["stop"]),
    (DecisionCategory::Stop, &["halt"]),
    (DecisionCategory::LaneChangeLeft, &["lanes", "to", "the", "left"]),
    (DecisionCategory::LaneChangeLeft, &["left", "lane"]),
    (DecisionCategory::LaneChangeLeft, &["lane", "change", "left"]),
    (DecisionCategory::LaneChangeRight, &["lanes", "to", "the", "right"]),
    (DecisionCategory::LaneChangeRight, &["right", "lane"]),
    (DecisionCategory::LaneChangeRight, &["lane", "change", "right"]),
    (DecisionCategory::TurnLeft, &["turn", "left"]),
    (DecisionCategory::TurnLeft, &["left", "turn"]),
    (DecisionCategory::TurnRight, &["turn", "right"]),
    (DecisionCategory::TurnRight, &["right", "turn"]),
    (DecisionCategory::Accelerate, &["speed", "up"]),
    (DecisionCategory::Accelerate, &["accelerate"]),
    (DecisionCategory::Accelerate, &["pick", "up", "speed"]),
    (DecisionCategory::Decelerate, &["slow", "down"]),
    (DecisionCategory::Decelerate, &["decelerate"]),
    (DecisionCategory::Decelerate, &["brake"]),
    (DecisionCategory::Decelerate, &["reduce", "my", "speed"]),
    (DecisionCategory::Forward, &["forward"]),
    (DecisionCategory::Forward, &["straight"]),
    (DecisionCategory::Forward, &["keep", "moving"]),
    (DecisionCategory::Forward, &["keep", "going"]),
];

/// Maps a decision sentence to its category by keyword matching.
pub fn category_from_text(text: &str) -> Option<DecisionCategory> {
    let tokens = words(text);
    PATTERNS.iter().find_map(|(cat, pat)| {
        tokens
            .windows(pat.len())
            .any(|w| w.iter().zip(pat.iter()).all(|(a, b)| a == b))
            .then_some(*cat)
    })
}
