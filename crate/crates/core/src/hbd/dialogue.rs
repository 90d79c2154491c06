use std::fmt;

use serde::{Deserialize, Serialize};

use super::person::{to_first_person, to_first_person_checked};
use super::HbdError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DialogueSource {
    LookBothWays,
    BddX,
    Nuscenes,
    VirtualHbd,
    Synthetic,
}

impl DialogueSource {
    pub const ALL: [DialogueSource; 5] = [
        DialogueSource::LookBothWays,
        DialogueSource::BddX,
        DialogueSource::Nuscenes,
        DialogueSource::VirtualHbd,
        DialogueSource::Synthetic,
    ];

    /// Maximum turns per record: open-source clips get three, simulated
    /// ones five.
    pub fn turn_limit(self) -> usize {
        match self {
            DialogueSource::LookBothWays | DialogueSource::BddX | DialogueSource::Nuscenes => 3,
            DialogueSource::VirtualHbd | DialogueSource::Synthetic => 5,
        }
    }
}

impl fmt::Display for DialogueSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            DialogueSource::LookBothWays => "look_both_ways",
            DialogueSource::BddX => "bdd_x",
            DialogueSource::Nuscenes => "nuscenes",
            DialogueSource::VirtualHbd => "virtual_hbd",
            DialogueSource::Synthetic => "synthetic",
        };
        f.write_str(s)
    }
}

/// Question types in canonical dialogue order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartKind {
    Gaze,
    Description,
    Reasoning,
    Decision,
    Control,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaPart {
    pub kind: PartKind,
    pub question: String,
    pub answer: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DialogueTurn {
    pub kind: PartKind,
    pub question: String,
    pub answer: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DialogueRecord {
    pub scene_id: String,
    pub source: DialogueSource,
    pub turns: Vec<DialogueTurn>,
    /// Set when first-person conversion met a construction it left alone.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub needs_review: bool,
}

impl DialogueRecord {
    pub fn turn(&self, kind: PartKind) -> Option<&DialogueTurn> {
        self.turns.iter().find(|t| t.kind == kind)
    }

    /// Checks turn count, order and first-person answers.
    pub fn validate(&self) -> Result<(), String> {
        let limit = self.source.turn_limit();
        if self.turns.is_empty() || self.turns.len() > limit {
            return Err(format!(
                "{} turns, source {} allows 1..={limit}",
                self.turns.len(),
                self.source
            ));
        }
        if self.turns.windows(2).any(|w| w[0].kind >= w[1].kind) {
            return Err("turns are not in canonical order".into());
        }
        if let Some(t) = self.turns.iter().find(|t| to_first_person(&t.answer) != t.answer) {
            return Err(format!("answer is not first-person: {:?}", t.answer));
        }
        Ok(())
    }
}

/// Assembly result with any truncation warnings.
#[derive(Debug, Clone, PartialEq)]
pub struct Assembled {
    pub record: DialogueRecord,
    pub warnings: Vec<String>,
}

/// Orders parts gaze → description → reasoning → decision → control,
/// converts answers to first person and truncates to the source's limit.
pub fn assemble_dialogue(scene_id: &str, parts: &[QaPart], source: DialogueSource) -> Result<Assembled, HbdError> {
    if parts.is_empty() {
        return Err(HbdError::Contract("a dialogue needs at least one part".into()));
    }
    let mut sorted: Vec<&QaPart> = parts.iter().collect();
    sorted.sort_by_key(|p| p.kind);
    let mut warnings = Vec::new();
    let mut needs_review = false;
    let mut turns = Vec::with_capacity(sorted.len());
    for p in sorted {
        if turns.iter().any(|t: &DialogueTurn| t.kind == p.kind) {
            warnings.push(format!("{scene_id}: duplicate {:?} part dropped", p.kind));
            continue;
        }
        let (answer, review) = to_first_person_checked(&p.answer);
        needs_review |= review;
        turns.push(DialogueTurn {
            kind: p.kind,
            question: p.question.clone(),
            answer,
        });
    }
    let limit = source.turn_limit();
    if turns.len() > limit {
        warnings.push(format!(
            "{scene_id}: {} turns exceed the {source} limit of {limit}, truncated",
            turns.len()
        ));
        turns.truncate(limit);
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok(Assembled {
        record: DialogueRecord {
            scene_id: scene_id.to_string(),
            source,
            turns,
            needs_review,
        },
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parts(kinds: &[PartKind]) -> Vec<QaPart> {
        kinds
            .iter()
            .map(|&k| QaPart {
                kind: k,
                question: format!("{k:?}?"),
                answer: "The driver waits.".into(),
            })
            .collect()
    }

    #[test]
    fn full_virtual_record() {
        use PartKind::*;
        let a = assemble_dialogue(
            "s1",
            &parts(&[Control, Decision, Gaze, Reasoning, Description]),
            DialogueSource::VirtualHbd,
        )
        .unwrap();
        let kinds: Vec<PartKind> = a.record.turns.iter().map(|t| t.kind).collect();
        assert_eq!(kinds, vec![Gaze, Description, Reasoning, Decision, Control]);
        assert!(a.warnings.is_empty());
        assert_eq!(a.record.turns[0].answer, "I wait.");
        a.record.validate().unwrap();
    }

    #[test]
    fn open_source_truncates_with_warning() {
        use PartKind::*;
        let a = assemble_dialogue(
            "s2",
            &parts(&[Gaze, Description, Reasoning, Decision]),
            DialogueSource::BddX,
        )
        .unwrap();
        assert_eq!(a.record.turns.len(), 3);
        assert_eq!(a.warnings.len(), 1);
        let single = assemble_dialogue("s3", &parts(&[Gaze]), DialogueSource::Nuscenes).unwrap();
        assert_eq!(single.record.turns.len(), 1);
        assert!(assemble_dialogue("s4", &[], DialogueSource::Synthetic).is_err());
    }
}
