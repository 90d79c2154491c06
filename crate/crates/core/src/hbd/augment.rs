use super::dialogue::{DialogueRecord, PartKind};
use super::person::to_first_person;
use crate::client::{generate_with_retry, AuditLog, GenerationRequest, TextGenerationClient, Turn};
use crate::decision::category_from_text;

/// Phrase substitutions for offline rewriting, applied longest first.
const SYNONYMS: &[(&str, &str)] = &[
    ("change lanes to the left", "move over into the left lane"),
    ("change lanes to the right", "move over into the right lane"),
    ("keep moving forward", "continue straight ahead"),
    ("come to a complete stop", "bring the car to a full stop"),
    ("I am looking at", "My attention is on"),
    ("slow down", "reduce my speed"),
    ("speed up", "pick up speed"),
    ("turn left", "make a left turn"),
    ("turn right", "make a right turn"),
    ("I will", "I am going to"),
];

const PARAPHRASE_PROMPT: &str = "Rewrite the driver's answer in different words. Keep its meaning, keep it in the \
     first person, and reply with the rewritten answer only.";

fn replace_phrase(text: &str, from: &str, to: &str) -> String {
    let mut out = text.replace(from, to);
    let mut cap_from = from.to_string();
    if let Some(f) = cap_from.get_mut(0..1) {
        f.make_ascii_uppercase();
    }
    if cap_from != from {
        let mut cap_to = to.to_string();
        if let Some(f) = cap_to.get_mut(0..1) {
            f.make_ascii_uppercase();
        }
        out = out.replace(&cap_from, &cap_to);
    }
    out
}

/// "X because Y." → "Because Y, x." for a single sentence.
fn reorder_because(text: &str) -> Option<String> {
    let body = text.strip_suffix('.')?;
    if body.contains(['.', '!', '?']) {
        return None;
    }
    let (x, y) = body.split_once(" because ")?;
    if x.is_empty() || y.is_empty() || y.contains(" because ") {
        return None;
    }
    let keep_case = x.starts_with("I ") || x.starts_with("I'");
    let x = if keep_case {
        x.to_string()
    } else {
        let mut c = x.chars();
        c.next()
            .map(|f| f.to_lowercase().chain(c).collect())
            .unwrap_or_default()
    };
    Some(format!("Because {y}, {x}."))
}

/// Deterministic offline rewrite.
pub fn offline_paraphrase(text: &str) -> String {
    let mut out = text.to_string();
    for (from, to) in SYNONYMS {
        out = replace_phrase(&out, from, to);
    }
    reorder_because(&out).unwrap_or(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Augmented {
    pub record: DialogueRecord,
    /// Turns whose rewrite was rejected and kept original.
    pub rejected: usize,
    pub warnings: Vec<String>,
}

/// Rewrites every answer, via `client` when given, else offline. A rewrite
/// is rejected when it stops being first-person or when the decision turn
/// no longer maps to the same maneuver.
pub fn augment(
    record: &DialogueRecord,
    client: Option<&dyn TextGenerationClient>,
    max_attempts: usize,
    audit: Option<&AuditLog>,
) -> Augmented {
    let mut out = record.clone();
    let mut rejected = 0;
    let mut warnings = Vec::new();
    for turn in &mut out.turns {
        let rewritten = match client {
            Some(c) => {
                let req = GenerationRequest {
                    system: PARAPHRASE_PROMPT.into(),
                    turns: vec![Turn::user(turn.answer.clone())],
                };
                match generate_with_retry(c, &req, max_attempts, audit, "paraphrase") {
                    Ok((text, _)) => text.trim().to_string(),
                    Err(e) => {
                        warnings.push(format!(
                            "{}: paraphrase client failed ({e}), using offline rewrite",
                            record.scene_id
                        ));
                        offline_paraphrase(&turn.answer)
                    }
                }
            }
            None => offline_paraphrase(&turn.answer),
        };
        let category_kept =
            turn.kind != PartKind::Decision || category_from_text(&rewritten) == category_from_text(&turn.answer);
        let first_person = to_first_person(&rewritten) == rewritten;
        if rewritten.is_empty() || !category_kept || !first_person {
            rejected += 1;
            warnings.push(format!(
                "{}: rewrite of {:?} turn rejected ({}), original kept",
                record.scene_id,
                turn.kind,
                if !category_kept {
                    "maneuver changed"
                } else {
                    "not a first-person answer"
                }
            ));
            continue;
        }
        turn.answer = rewritten;
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    Augmented {
        record: out,
        rejected,
        warnings,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::client::ClientError;
    use crate::decision::DecisionCategory;
    use crate::hbd::dialogue::{DialogueSource, DialogueTurn};

    fn record(answer: &str) -> DialogueRecord {
        DialogueRecord {
            scene_id: "s".into(),
            source: DialogueSource::Synthetic,
            turns: vec![DialogueTurn {
                kind: PartKind::Decision,
                question: "What will you do?".into(),
                answer: answer.into(),
            }],
            needs_review: false,
        }
    }

    #[test]
    fn offline_examples() {
        assert_eq!(
            offline_paraphrase("I will keep moving forward."),
            "I am going to continue straight ahead."
        );
        assert_eq!(
            offline_paraphrase("I slow down because the light is red."),
            "Because the light is red, I reduce my speed."
        );
        let a = augment(&record("I will keep moving forward."), None, 3, None);
        assert_eq!(a.record.turns[0].answer, "I am going to continue straight ahead.");
        assert_eq!(
            category_from_text(&a.record.turns[0].answer),
            Some(DecisionCategory::Forward)
        );
    }

    struct Flipper;

    impl TextGenerationClient for Flipper {
        fn generate(&self, req: &GenerationRequest) -> Result<String, ClientError> {
            Ok(req.turns[0].text.replace("left", "right"))
        }
    }

    struct Broken;

    impl TextGenerationClient for Broken {
        fn generate(&self, _: &GenerationRequest) -> Result<String, ClientError> {
            Err(ClientError::Status(500))
        }
    }

    #[test]
    fn category_guard_rejects_flips() {
        let r = record("I will turn left along the road.");
        let a = augment(&r, Some(&Flipper), 3, None);
        assert_eq!(a.record, r);
        assert_eq!(a.rejected, 1);
    }

    #[test]
    fn client_failure_falls_back_offline() {
        let a = augment(&record("I will slow down."), Some(&Broken), 2, None);
        assert_eq!(a.record.turns[0].answer, "I am going to reduce my speed.");
        assert!(!a.warnings.is_empty());
    }

    #[test]
    fn empty_record_unchanged() {
        let mut r = record("x");
        r.turns.clear();
        assert_eq!(augment(&r, None, 3, None).record, r);
    }
}
