//! A state-transition dialogue grammar over speech acts.
//!
//! [`CorGrammar`] is plain data: a set of states, a deterministic transition
//! table keyed by `(state, speaker, act)`, and per-act text templates. The
//! built-in [`CorGrammar::default_grammar`] is a handcrafted table for
//! information-seeking dialogues (request, search, answer, evaluate, close).
//! It is one possible mapping of the taxonomy onto conversational roles, not
//! a canonical one. Grammars load from and save to JSON, so the table can be
//! edited without recompiling.
//!
//! The grammar serves two purposes: [`validate_sequence`] checks a labelled
//! dialogue against it, and [`generate_dialogue`] walks it to synthesise
//! sessions for provider-free tests.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Event, SearchAction, SearchActionEvent, Session, Speaker, SpeechAct, Utterance};

const DEFAULT_GRAMMAR: &str = include_str!("default_grammar.json");

/// Message of the violation reported when a sequence ends outside an
/// accepting state.
pub const NO_CLOSING: &str = "no closing ritual";

#[derive(Debug, thiserror::Error)]
pub enum CorError {
    #[error("invalid grammar: {0}")]
    InvalidGrammar(String),
    #[error("target_turns must be at least 2, got {0}")]
    TooFewTurns(usize),
    #[error("no accepting state is reachable within {0} turns")]
    UnreachableAccepting(usize),
    #[error("{0}")]
    Io(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub from: String,
    pub speaker: Speaker,
    pub act: SpeechAct,
    pub to: String,
    /// Relative preference during generation.
    #[serde(default = "unit_weight")]
    pub weight: f64,
}

fn unit_weight() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemplateSet {
    pub speaker: Speaker,
    pub act: SpeechAct,
    /// Texts with `{slot}` placeholders filled from [`CorGrammar::slots`].
    pub texts: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorGrammar {
    pub states: Vec<String>,
    pub start: String,
    pub accepting: Vec<String>,
    pub transitions: Vec<Transition>,
    /// Agent acts preceded by a burst of search actions when generating.
    #[serde(default)]
    pub search_before: Vec<SpeechAct>,
    pub templates: Vec<TemplateSet>,
    #[serde(default)]
    pub slots: BTreeMap<String, Vec<String>>,
}

/// A position where a sequence departs from the grammar.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CorViolation {
    /// Offending element; `None` for end-of-sequence problems.
    pub index: Option<usize>,
    pub message: String,
}

impl std::fmt::Display for CorViolation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.index {
            Some(i) => write!(f, "turn {i}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

impl CorGrammar {
    pub fn default_grammar() -> Self {
        Self::from_json(DEFAULT_GRAMMAR).expect("built-in grammar is valid")
    }

    pub fn from_json(text: &str) -> Result<Self, CorError> {
        let grammar: CorGrammar = serde_json::from_str(text).map_err(|e| CorError::InvalidGrammar(e.to_string()))?;
        grammar.check()?;
        Ok(grammar)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CorError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| CorError::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("grammar serializes")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CorError> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| CorError::Io(format!("{}: {e}", path.display())))
    }

    /// Structural checks: known states, a deterministic table, positive
    /// weights and a template for every transition.
    pub fn check(&self) -> Result<(), CorError> {
        let bad = |m: String| Err(CorError::InvalidGrammar(m));
        let states: BTreeSet<&str> = self.states.iter().map(String::as_str).collect();
        if states.len() != self.states.len() {
            return bad("duplicate state names".into());
        }
        if !states.contains(self.start.as_str()) {
            return bad(format!("unknown start state `{}`", self.start));
        }
        if self.accepting.is_empty() {
            return bad("no accepting states".into());
        }
        if let Some(s) = self.accepting.iter().find(|s| !states.contains(s.as_str())) {
            return bad(format!("unknown accepting state `{s}`"));
        }
        let mut keys = BTreeSet::new();
        for t in &self.transitions {
            for s in [&t.from, &t.to] {
                if !states.contains(s.as_str()) {
                    return bad(format!("transition uses unknown state `{s}`"));
                }
            }
            if !keys.insert((t.from.as_str(), t.speaker, t.act)) {
                return bad(format!("two transitions from `{}` on {} {}", t.from, t.speaker, t.act));
            }
            if !(t.weight.is_finite() && t.weight > 0.0) {
                return bad(format!("non-positive weight on `{}` {} {}", t.from, t.speaker, t.act));
            }
            if self.texts(t.speaker, t.act).is_none() {
                return bad(format!("no templates for {} {}", t.speaker, t.act));
            }
        }
        for set in &self.templates {
            for text in &set.texts {
                for slot in slot_names(text) {
                    if self.slots.get(slot).is_none_or(|v| v.is_empty()) {
                        return bad(format!("template slot `{{{slot}}}` has no fillers"));
                    }
                }
            }
        }
        Ok(())
    }

    /// Target of `(state, speaker, act)`, if the table has one.
    pub fn next(&self, state: &str, speaker: Speaker, act: SpeechAct) -> Option<&str> {
        self.transitions
            .iter()
            .find(|t| t.from == state && t.speaker == speaker && t.act == act)
            .map(|t| t.to.as_str())
    }

    pub fn is_accepting(&self, state: &str) -> bool {
        self.accepting.iter().any(|s| s == state)
    }

    fn texts(&self, speaker: Speaker, act: SpeechAct) -> Option<&[String]> {
        self.templates
            .iter()
            .find(|t| t.speaker == speaker && t.act == act && !t.texts.is_empty())
            .map(|t| t.texts.as_slice())
    }

    /// Fewest transitions from each state to an accepting state; absent
    /// where none is reachable.
    pub fn distances_to_accepting(&self) -> HashMap<&str, usize> {
        let mut dist: HashMap<&str, usize> = HashMap::new();
        let mut queue = VecDeque::new();
        for s in &self.accepting {
            dist.insert(s.as_str(), 0);
            queue.push_back(s.as_str());
        }
        while let Some(s) = queue.pop_front() {
            let d = dist[s];
            for t in self.transitions.iter().filter(|t| t.to == s) {
                if !dist.contains_key(t.from.as_str()) {
                    dist.insert(t.from.as_str(), d + 1);
                    queue.push_back(t.from.as_str());
                }
            }
        }
        dist
    }

    /// Acts carried by at least one transition reachable from the start.
    pub fn reachable_acts(&self) -> BTreeSet<SpeechAct> {
        let mut seen = BTreeSet::from([self.start.as_str()]);
        let mut queue = VecDeque::from([self.start.as_str()]);
        let mut acts = BTreeSet::new();
        while let Some(s) = queue.pop_front() {
            for t in self.transitions.iter().filter(|t| t.from == s) {
                acts.insert(t.act);
                if seen.insert(t.to.as_str()) {
                    queue.push_back(t.to.as_str());
                }
            }
        }
        acts
    }
}

fn slot_names(text: &str) -> impl Iterator<Item = &str> {
    text.split('{').skip(1).filter_map(|part| part.split_once('}').map(|(name, _)| name))
}

/// Violations of `acts` against `grammar`; empty iff the sequence runs from
/// the start state to an accepting state.
///
/// A turn with no matching transition is reported and skipped, leaving the
/// state unchanged, so one stray turn yields one violation.
pub fn validate_sequence(acts: &[(Speaker, SpeechAct)], grammar: &CorGrammar) -> Vec<CorViolation> {
    let mut violations = Vec::new();
    let mut state = grammar.start.as_str();
    for (i, &(speaker, act)) in acts.iter().enumerate() {
        match grammar.next(state, speaker, act) {
            Some(next) => state = next,
            None => violations.push(CorViolation {
                index: Some(i),
                message: format!("{speaker} {act} not allowed in state `{state}`"),
            }),
        }
    }
    if !grammar.is_accepting(state) {
        violations.push(CorViolation {
            index: None,
            message: NO_CLOSING.to_string(),
        });
    }
    violations
}

/// [`validate_sequence`] over the utterances of a session.
pub fn validate_session(session: &Session, grammar: &CorGrammar) -> Vec<CorViolation> {
    let acts: Vec<(Speaker, SpeechAct)> = session.utterances().map(|u| (u.speaker, u.speech_act)).collect();
    validate_sequence(&acts, grammar)
}

fn fill(text: &str, slots: &BTreeMap<String, Vec<String>>, rng: &mut ChaCha8Rng) -> String {
    let mut out = String::with_capacity(text.len() + 16);
    let mut rest = text;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        match after.find('}') {
            Some(close) => {
                let name = &after[..close];
                let filler = slots[name].choose(rng).expect("slot has fillers");
                out.push_str(filler);
                rest = &after[close + 1..];
            }
            None => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}

/// Seeded random walk over `grammar` producing a session of at most
/// `target_turns` utterances that ends in an accepting state.
///
/// Transitions are drawn by weight among those that still leave room to
/// close within the budget. Each agent turn whose act is listed in
/// `search_before` is preceded by one to three search actions, starting
/// with a query creation. Utterance lengths scale with their token counts.
pub fn generate_dialogue(seed: u64, target_turns: usize, grammar: &CorGrammar) -> Result<Session, CorError> {
    if target_turns < 2 {
        return Err(CorError::TooFewTurns(target_turns));
    }
    let dist = grammar.distances_to_accepting();
    match dist.get(grammar.start.as_str()) {
        Some(&d) if d <= target_turns => {}
        _ => return Err(CorError::UnreachableAccepting(target_turns)),
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut turns: Vec<(Speaker, SpeechAct)> = Vec::new();
    let mut state = grammar.start.as_str();
    loop {
        let remaining = target_turns - turns.len();
        let options: Vec<&Transition> = grammar
            .transitions
            .iter()
            .filter(|t| t.from == state && dist.get(t.to.as_str()).is_some_and(|&d| d < remaining))
            .collect();
        if options.is_empty() {
            if grammar.is_accepting(state) {
                break;
            }
            return Err(CorError::UnreachableAccepting(target_turns));
        }
        let pick = WeightedIndex::new(options.iter().map(|t| t.weight)).expect("positive weights");
        let t = options[pick.sample(&mut rng)];
        turns.push((t.speaker, t.act));
        state = &t.to;
    }
    Ok(realize(seed, &turns, grammar, &mut rng))
}

fn realize(seed: u64, turns: &[(Speaker, SpeechAct)], grammar: &CorGrammar, rng: &mut ChaCha8Rng) -> Session {
    let mut events = Vec::new();
    let mut clock: u64 = rng.random_range(0..2_000);
    let mut index = 0u32;
    for &(speaker, act) in turns {
        if speaker == Speaker::Agent && grammar.search_before.contains(&act) {
            let n = rng.random_range(1..=3);
            for k in 0..n {
                clock += rng.random_range(1_500..6_000);
                let action = if k == 0 {
                    SearchAction::SR1
                } else {
                    *[SearchAction::SR2, SearchAction::SR3, SearchAction::SR4].choose(rng).expect("non-empty")
                };
                events.push(Event::SearchAction(SearchActionEvent {
                    event_index: index,
                    timestamp_ms: clock,
                    action,
                }));
                index += 1;
            }
        }
        let texts = grammar.texts(speaker, act).expect("checked grammar");
        let text = fill(texts.choose(rng).expect("non-empty"), &grammar.slots, rng);
        clock += rng.random_range(200..1_500);
        let words = text.split_whitespace().count() as u64;
        let length = 250 * words + rng.random_range(100..700);
        events.push(Event::Utterance(Utterance {
            event_index: index,
            speaker,
            text,
            start_ms: clock,
            end_ms: clock + length,
            speech_act: act,
        }));
        clock += length;
        index += 1;
    }
    Session {
        session_id: format!("cor-{seed:06}"),
        user_id: format!("user-{:02}", seed % 25),
        task_id: format!("task-{}", seed % 10),
        task_complexity: (seed % 3 + 1) as u8,
        system_id: "synthetic".to_string(),
        events,
    }
}

/// One generated session per seed, in seed order.
pub fn generate_corpus(seeds: &[u64], target_turns: usize, grammar: &CorGrammar) -> Result<Corpus, CorError> {
    let sessions = seeds
        .par_iter()
        .map(|&seed| generate_dialogue(seed, target_turns, grammar))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Corpus::new(format!("cor-synthetic turns={target_turns}"), sessions))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Taxonomy;
    use crate::features::FallbackAnnotator;
    use Speaker::{Agent, User};
    use SpeechAct::*;

    #[test]
    fn default_grammar_reaches_every_act() {
        let g = CorGrammar::default_grammar();
        assert_eq!(g.reachable_acts().len(), SpeechAct::COUNT);
        assert!(!g.is_accepting(&g.start));
    }

    #[test]
    fn empty_sequence_lacks_closing() {
        let v = validate_sequence(&[], &CorGrammar::default_grammar());
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].message, NO_CLOSING);
        assert_eq!(v[0].index, None);
    }

    #[test]
    fn answer_before_question_is_flagged_at_its_index() {
        let g = CorGrammar::default_grammar();
        let seq = [(User, S12), (Agent, S12), (Agent, S4), (User, S1)];
        let v = validate_sequence(&seq, &g);
        assert_eq!(v[0].index, Some(2));
    }

    #[test]
    fn minimal_dialogue_is_accepted() {
        let g = CorGrammar::default_grammar();
        let seq = [
            (User, S12),
            (Agent, S12),
            (User, S1),
            (Agent, S4),
            (User, S7),
            (Agent, S11),
            (User, S12),
            (Agent, S12),
        ];
        assert!(validate_sequence(&seq, &g).is_empty());
    }

    #[test]
    fn generation_is_seeded_and_accepted() {
        let g = CorGrammar::default_grammar();
        let a = generate_dialogue(7, 20, &g).unwrap();
        assert_eq!(a, generate_dialogue(7, 20, &g).unwrap());
        assert_ne!(a, generate_dialogue(8, 20, &g).unwrap());
        assert!(validate_session(&a, &g).is_empty());
        let first = a.utterances().next().unwrap();
        let last = a.utterances().last().unwrap();
        assert_eq!((first.speech_act, last.speech_act), (S12, S12));
        assert!(a.utterances().count() <= 20);
    }

    #[test]
    fn budget_errors() {
        let g = CorGrammar::default_grammar();
        assert!(matches!(generate_dialogue(1, 1, &g), Err(CorError::TooFewTurns(1))));
        assert!(matches!(generate_dialogue(1, 4, &g), Err(CorError::UnreachableAccepting(4))));
    }

    #[test]
    fn nondeterministic_tables_are_rejected() {
        let mut g = CorGrammar::default_grammar();
        let mut dup = g.transitions[0].clone();
        dup.to = "ready".into();
        g.transitions.push(dup);
        assert!(matches!(CorGrammar::from_json(&g.to_json()), Err(CorError::InvalidGrammar(_))));
    }

    #[test]
    fn json_round_trip() {
        let g = CorGrammar::default_grammar();
        assert_eq!(CorGrammar::from_json(&g.to_json()).unwrap(), g);
    }

    /// Every act's templates have flag signatures that no other act shares,
    /// so token-level features alone separate the acts.
    #[test]
    fn template_signatures_are_act_specific() {
        let g = CorGrammar::default_grammar();
        let mut owner: HashMap<Vec<(bool, bool, bool, bool, bool, bool)>, SpeechAct> = HashMap::new();
        for set in &g.templates {
            for text in &set.texts {
                let mut rng = ChaCha8Rng::seed_from_u64(0);
                for _ in 0..20 {
                    let filled = fill(text, &g.slots, &mut rng);
                    let sig: Vec<_> = FallbackAnnotator::tokenize(&filled)
                        .iter()
                        .map(|t| {
                            let f = FallbackAnnotator::flags(t);
                            (f.alpha, f.digit, f.punct, f.url, f.stopword, f.oov)
                        })
                        .collect();
                    let prev = owner.insert(sig, set.act);
                    assert!(prev.is_none_or(|a| a == set.act), "`{filled}` collides with {prev:?}");
                }
            }
        }
    }
}
