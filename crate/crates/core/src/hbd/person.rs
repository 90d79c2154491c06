//! Rule-based third-person → first-person rewriting for driver narratives.

/// Words that introduce another person; a later "he"/"she" is then ambiguous.
const OTHER_PEOPLE: &[&str] = &[
    "pedestrian",
    "pedestrians",
    "cyclist",
    "cyclists",
    "person",
    "people",
    "man",
    "woman",
    "child",
    "children",
    "passenger",
    "officer",
    "worker",
];

/// Plural nouns that "they" may refer to instead of the driver.
const PLURAL_THINGS: &[&str] = &["vehicles", "cars", "trucks", "lanes", "lights", "agents", "others"];

const MODALS: &[&str] = &[
    "will",
    "would",
    "can",
    "could",
    "should",
    "must",
    "may",
    "might",
    "shall",
    "did",
    "had",
    "cannot",
    "can't",
    "won't",
    "wouldn't",
    "couldn't",
    "shouldn't",
    "didn't",
];

/// Adverbs that may sit between the subject and its verb.
const INTERPOSED: &[&str] = &[
    "also", "then", "now", "still", "just", "always", "never", "already", "soon",
];

#[derive(Debug, Clone)]
struct Piece {
    text: String,
    word: bool,
}

fn split_pieces(text: &str) -> Vec<Piece> {
    let mut out: Vec<Piece> = Vec::new();
    for c in text.chars() {
        let is_word = c.is_alphanumeric() || c == '\'';
        match out.last_mut() {
            Some(p) if p.word == is_word => p.text.push(c),
            _ => out.push(Piece {
                text: c.to_string(),
                word: is_word,
            }),
        }
    }
    out
}

fn capitalized(w: &str) -> bool {
    w.chars().next().is_some_and(char::is_uppercase)
}

fn match_case(template: &str, word: &str) -> String {
    if capitalized(template) {
        let mut c = word.chars();
        match c.next() {
            Some(f) => f.to_uppercase().chain(c).collect(),
            None => String::new(),
        }
    } else {
        word.to_string()
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Subject {
    Singular,
    Plural,
}

/// Verb form agreeing with "I". `None` means the form is not recognized.
fn agree(verb: &str, subject: Subject) -> Option<String> {
    let lower = verb.to_lowercase();
    let fixed = match (subject, lower.as_str()) {
        (Subject::Singular, "is") => Some("am"),
        (Subject::Singular, "isn't") => Some("am not"),
        (Subject::Singular, "has") => Some("have"),
        (Subject::Singular, "hasn't") => Some("haven't"),
        (Subject::Singular, "does") => Some("do"),
        (Subject::Singular, "doesn't") => Some("don't"),
        (Subject::Singular, "goes") => Some("go"),
        (Subject::Plural, "are") => Some("am"),
        (Subject::Plural, "aren't") => Some("am not"),
        (Subject::Plural, "were") => Some("was"),
        (Subject::Plural, "weren't") => Some("wasn't"),
        _ => None,
    };
    if let Some(f) = fixed {
        return Some(match_case(verb, f));
    }
    if subject == Subject::Plural || MODALS.contains(&lower.as_str()) || lower == "was" || lower.ends_with("ed") {
        return Some(verb.to_string());
    }
    if !lower.ends_with('s') {
        return None;
    }
    let base = if lower.len() > 4 && lower.ends_with("ies") {
        format!("{}y", &lower[..lower.len() - 3])
    } else if ["ches", "shes", "sses", "xes", "zes", "oes"]
        .iter()
        .any(|s| lower.ends_with(s))
    {
        lower[..lower.len() - 2].to_string()
    } else if ["ss", "us", "is"].iter().any(|s| lower.ends_with(s)) {
        return None;
    } else {
        lower[..lower.len() - 1].to_string()
    };
    Some(match_case(verb, &base))
}

/// Rewrites driver references to the first person. Returns the text and a
/// flag set when a construction was left alone because the rules could not
/// decide it.
pub fn to_first_person_checked(text: &str) -> (String, bool) {
    let mut pieces = split_pieces(text);
    let mut needs_review = false;
    let words: Vec<usize> = (0..pieces.len()).filter(|&i| pieces[i].word).collect();
    let mut removed = vec![false; pieces.len()];
    let mut driver_seen = false;
    let mut other_person = false;
    let mut plural_thing = false;

    let lower_at =
        |pieces: &[Piece], wi: usize| -> Option<String> { words.get(wi).map(|&i| pieces[i].text.to_lowercase()) };
    // Word position of the verb after a rewritten subject at word position `wi`.
    let verb_after = |pieces: &[Piece], wi: usize| -> Option<usize> {
        let mut j = wi + 1;
        while let Some(w) = lower_at(pieces, j) {
            if w.ends_with("ly") || INTERPOSED.contains(&w.as_str()) {
                j += 1;
            } else {
                return Some(j);
            }
        }
        None
    };
    let separator_is_space = |pieces: &[Piece], a: usize| pieces.get(a + 1).is_some_and(|p| p.text.trim().is_empty());

    let mut wi = 0;
    while wi < words.len() {
        let i = words[wi];
        let lower = pieces[i].text.to_lowercase();
        let next = lower_at(&pieces, wi + 1);
        let mut subject: Option<Subject> = None;
        if lower == "the" && next.as_deref() == Some("driver's") && separator_is_space(&pieces, i) {
            pieces[i].text = match_case(&pieces[i].text, "my");
            removed[i + 1] = true;
            removed[words[wi + 1]] = true;
            driver_seen = true;
            other_person = false;
            plural_thing = false;
            wi += 2;
            continue;
        }
        if lower == "the" && next.as_deref() == Some("driver") && separator_is_space(&pieces, i) {
            pieces[i].text = "I".into();
            removed[i + 1] = true;
            removed[words[wi + 1]] = true;
            driver_seen = true;
            other_person = false;
            plural_thing = false;
            subject = Some(Subject::Singular);
            wi += 1;
        } else if OTHER_PEOPLE.contains(&lower.as_str()) {
            other_person |= driver_seen;
        } else if PLURAL_THINGS.contains(&lower.as_str()) {
            plural_thing |= driver_seen;
        } else if driver_seen {
            let word = pieces[i].text.clone();
            let resolved = !other_person;
            let replacement = match lower.as_str() {
                "he" | "she" if resolved => {
                    subject = Some(Subject::Singular);
                    Some("I")
                }
                "they" if resolved && !plural_thing => {
                    subject = Some(Subject::Plural);
                    Some("I")
                }
                "his" | "their" if resolved && !(lower == "their" && plural_thing) => Some("my"),
                "him" | "them" if resolved && !(lower == "them" && plural_thing) => Some("me"),
                "himself" | "herself" | "themselves" if resolved => Some("myself"),
                "her" if resolved => {
                    let followed_by_word = separator_is_space(&pieces, i) && lower_at(&pieces, wi + 1).is_some();
                    Some(if followed_by_word { "my" } else { "me" })
                }
                "he" | "she" | "his" | "him" | "her" | "himself" | "herself" => {
                    needs_review = true;
                    None
                }
                _ => None,
            };
            if let Some(r) = replacement {
                pieces[i].text = if r == "I" { r.to_string() } else { match_case(&word, r) };
            }
        }
        if let Some(s) = subject {
            if let Some(vj) = verb_after(&pieces, wi) {
                let vi = words[vj];
                match agree(&pieces[vi].text, s) {
                    Some(v) => pieces[vi].text = v,
                    None => needs_review = true,
                }
            }
        }
        wi += 1;
    }
    let out = pieces
        .into_iter()
        .zip(removed)
        .filter(|(_, r)| !r)
        .map(|(p, _)| p.text)
        .collect();
    (out, needs_review)
}

pub fn to_first_person(text: &str) -> String {
    to_first_person_checked(text).0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn oracle_pairs() {
        let cases = [
            (
                "The driver slows down because the light is red.",
                "I slow down because the light is red.",
            ),
            ("I am turning left.", "I am turning left."),
            ("", ""),
            (
                "The driver is looking at the vehicle in the driver's lane.",
                "I am looking at the vehicle in my lane.",
            ),
            ("The driver's route turns left.", "My route turns left."),
            (
                "The driver checks the mirror before he changes lanes.",
                "I check the mirror before I change lanes.",
            ),
            ("The driver carefully pushes the brake.", "I carefully push the brake."),
            ("The driver will stop.", "I will stop."),
            ("The driver has a clear view.", "I have a clear view."),
            ("The driver does not brake.", "I do not brake."),
            ("The driver tries to keep his distance.", "I try to keep my distance."),
            (
                "The driver watches the gap; they are patient.",
                "I watch the gap; I am patient.",
            ),
            ("The driver waits.", "I wait."),
        ];
        for (input, want) in cases {
            assert_eq!(to_first_person(input), want, "input: {input}");
        }
    }

    #[test]
    fn other_person_is_left_for_review() {
        let (out, review) = to_first_person_checked("The driver sees a pedestrian. He waves.");
        assert_eq!(out, "I see a pedestrian. He waves.");
        assert!(review);
        assert_eq!(to_first_person(&out), out);
    }

    #[test]
    fn other_drivers_are_untouched() {
        let s = "The other driver slows down.";
        assert_eq!(to_first_person(s), s);
    }
}
