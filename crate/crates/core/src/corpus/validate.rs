use std::collections::HashSet;
use std::fmt;

use serde::Serialize;

use super::{Corpus, Event};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    DuplicateSession,
    NegativeDuration,
    EmptyText,
    NonIncreasingEventIndex,
    DecreasingTimestamp,
}

impl ViolationKind {
    pub fn message(self) -> &'static str {
        match self {
            ViolationKind::DuplicateSession => "duplicate session id",
            ViolationKind::NegativeDuration => "negative duration",
            ViolationKind::EmptyText => "empty utterance text",
            ViolationKind::NonIncreasingEventIndex => "event index not strictly increasing",
            ViolationKind::DecreasingTimestamp => "timestamp decreases",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub session_id: String,
    pub event_index: Option<u32>,
    pub kind: ViolationKind,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.event_index {
            Some(idx) => write!(f, "{}#{}: {}", self.session_id, idx, self.kind.message()),
            None => write!(f, "{}: {}", self.session_id, self.kind.message()),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn len(&self) -> usize {
        self.violations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }
}

pub(super) fn validate(corpus: &Corpus) -> ValidationReport {
    let mut violations = Vec::new();
    let mut seen = HashSet::new();
    for session in &corpus.sessions {
        let mut push = |event_index, kind| {
            violations.push(Violation {
                session_id: session.session_id.clone(),
                event_index,
                kind,
            })
        };
        if !seen.insert(session.session_id.as_str()) {
            push(None, ViolationKind::DuplicateSession);
        }
        let mut prev: Option<&Event> = None;
        for ev in &session.events {
            let idx = ev.event_index();
            if let Event::Utterance(u) = ev {
                if u.end_ms < u.start_ms {
                    push(Some(idx), ViolationKind::NegativeDuration);
                }
                if u.text.trim().is_empty() {
                    push(Some(idx), ViolationKind::EmptyText);
                }
            }
            if let Some(p) = prev {
                if idx <= p.event_index() {
                    push(Some(idx), ViolationKind::NonIncreasingEventIndex);
                }
                if ev.start_ms() < p.start_ms() {
                    push(Some(idx), ViolationKind::DecreasingTimestamp);
                }
            }
            prev = Some(ev);
        }
    }
    ValidationReport { violations }
}
