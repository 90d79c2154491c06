//! Decision maker backed by a remote text-generation service.

use super::{category_from_text, scene_summary, scripted_decision_maker, DriverLogicOutput};
use crate::client::{generate_with_retry, AuditLog, ClientError, GenerationRequest, TextGenerationClient, Turn};
use crate::sim::Scene;

/// Questions asked in order; the answers fill gaze, description, reasoning
/// and decision.
pub const DIALOGUE_QUESTIONS: [&str; 4] = [
    "Where are you looking, and at what?",
    "Describe the scene around you.",
    "What matters most for your next move, and why?",
    "What will you do next? Answer in one sentence.",
];

const SYSTEM_PROMPT: &str = "You are the driver of the ego vehicle. Answer every question in the first person, \
     in one or two short sentences.";

#[derive(Debug, Clone, PartialEq)]
pub struct RemoteOptions {
    /// Total attempts per question.
    pub max_retries: usize,
    pub system_prompt: String,
}

impl Default for RemoteOptions {
    fn default() -> Self {
        RemoteOptions {
            max_retries: 3,
            system_prompt: SYSTEM_PROMPT.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RemoteDecision {
    pub output: DriverLogicOutput,
    /// True when the decision could not be parsed and the scripted output
    /// was used instead.
    pub fell_back: bool,
    pub warnings: Vec<String>,
    /// Attempts used across all four questions.
    pub attempts: usize,
}

/// Asks the four dialogue questions in sequence, each with the full history.
///
/// Transport failures surface as errors once retries are exhausted. An answer
/// that does not map to a decision category falls back to the scripted
/// output with a warning.
pub fn remote_decision_maker(
    scene: &Scene,
    client: &dyn TextGenerationClient,
    opts: &RemoteOptions,
    audit: Option<&AuditLog>,
) -> Result<RemoteDecision, ClientError> {
    let summary = scene_summary(scene);
    let mut turns: Vec<Turn> = Vec::with_capacity(8);
    let mut answers = Vec::with_capacity(4);
    let mut attempts = 0;
    for (i, q) in DIALOGUE_QUESTIONS.iter().enumerate() {
        let question = if i == 0 {
            format!("{summary}\n{q}")
        } else {
            (*q).to_string()
        };
        turns.push(Turn::user(question));
        let request = GenerationRequest {
            system: opts.system_prompt.clone(),
            turns: turns.clone(),
        };
        let (answer, used) = generate_with_retry(client, &request, opts.max_retries, audit, "decision_maker")?;
        attempts += used;
        let answer = answer.trim().to_string();
        turns.push(Turn::assistant(answer.clone()));
        answers.push(answer);
    }
    match category_from_text(&answers[3]) {
        Some(category) => {
            let mut it = answers.into_iter();
            let mut next = || it.next().unwrap_or_default();
            Ok(RemoteDecision {
                output: DriverLogicOutput {
                    gaze_text: next(),
                    description_text: next(),
                    reasoning_text: next(),
                    decision_text: next(),
                    category,
                },
                fell_back: false,
                warnings: Vec::new(),
                attempts,
            })
        }
        None => {
            let warning = format!(
                "scene {}: decision answer {:?} has no recognizable maneuver, using scripted output",
                scene.seed, answers[3]
            );
            log::warn!("{warning}");
            Ok(RemoteDecision {
                output: scripted_decision_maker(scene),
                fell_back: true,
                warnings: vec![warning],
                attempts,
            })
        }
    }
}
