//! Conversational-search sessions: the data model, on-disk formats, validation,
//! seeded train/test splitting and summary statistics.
//!
//! A [`Corpus`] is a list of [`Session`]s. Each session is an ordered
//! interleaving of [`Utterance`]s (user or agent speech, labelled with a
//! [`SpeechAct`]) and [`SearchActionEvent`]s (agent-only retrieval behaviour,
//! labelled with a [`SearchAction`]).

mod io;
mod labels;
mod split;
mod stats;
mod validate;

use serde::{Deserialize, Serialize};

pub use io::{CorpusFormat, TSV_COLUMNS};
pub use labels::{SearchAction, Speaker, SpeechAct, Taxonomy};
pub use split::{split, split_grouped, split_unstratified, Split, SplitError};
pub use stats::CorpusStats;
pub use validate::{ValidationReport, Violation, ViolationKind};

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("input file is empty")]
    EmptyFile,
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("line {line}: unknown label `{code}`")]
    UnknownLabel { code: String, line: usize },
    #[error("line {line}: {reason}")]
    MalformedRow { line: usize, reason: String },
    #[error("line {line}: search actions are performed by the agent only")]
    UserSearchAction { line: usize },
    #[error("cannot infer corpus format from `{0}` (expected .tsv or .jsonl)")]
    UnknownFormat(String),
}

/// Identifies one event inside a corpus.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Locator {
    pub session_id: String,
    pub event_index: u32,
}

impl std::fmt::Display for Locator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}#{}", self.session_id, self.event_index)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Utterance {
    pub event_index: u32,
    pub speaker: Speaker,
    pub text: String,
    pub start_ms: u64,
    pub end_ms: u64,
    pub speech_act: SpeechAct,
}

impl Utterance {
    /// Duration in seconds; zero when the timestamps are inverted.
    pub fn duration_s(&self) -> f64 {
        self.end_ms.saturating_sub(self.start_ms) as f64 / 1000.0
    }
}

/// A retrieval action taken by the agent. There is no speaker field: only
/// the agent searches.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchActionEvent {
    pub event_index: u32,
    pub timestamp_ms: u64,
    pub action: SearchAction,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Event {
    Utterance(Utterance),
    SearchAction(SearchActionEvent),
}

impl Event {
    pub fn event_index(&self) -> u32 {
        match self {
            Event::Utterance(u) => u.event_index,
            Event::SearchAction(a) => a.event_index,
        }
    }

    /// Start of the event on the session clock.
    pub fn start_ms(&self) -> u64 {
        match self {
            Event::Utterance(u) => u.start_ms,
            Event::SearchAction(a) => a.timestamp_ms,
        }
    }

    /// End of the event on the session clock (equal to the start for actions).
    pub fn end_ms(&self) -> u64 {
        match self {
            Event::Utterance(u) => u.end_ms,
            Event::SearchAction(a) => a.timestamp_ms,
        }
    }

    pub fn as_utterance(&self) -> Option<&Utterance> {
        match self {
            Event::Utterance(u) => Some(u),
            Event::SearchAction(_) => None,
        }
    }

    pub fn as_search_action(&self) -> Option<&SearchActionEvent> {
        match self {
            Event::SearchAction(a) => Some(a),
            Event::Utterance(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Session {
    pub session_id: String,
    pub user_id: String,
    pub task_id: String,
    pub task_complexity: u8,
    pub system_id: String,
    pub events: Vec<Event>,
}

impl Session {
    pub fn utterances(&self) -> impl Iterator<Item = &Utterance> {
        self.events.iter().filter_map(Event::as_utterance)
    }

    pub fn search_actions(&self) -> impl Iterator<Item = &SearchActionEvent> {
        self.events.iter().filter_map(Event::as_search_action)
    }

    pub fn locator(&self, event: &Event) -> Locator {
        Locator {
            session_id: self.session_id.clone(),
            event_index: event.event_index(),
        }
    }

    /// Copy of the session holding only the events up to and including
    /// position `pos`.
    pub fn truncated(&self, pos: usize) -> Session {
        Session {
            events: self.events[..=pos.min(self.events.len().saturating_sub(1))].to_vec(),
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Corpus {
    pub sessions: Vec<Session>,
    pub provenance: String,
}

impl Corpus {
    pub fn new(provenance: impl Into<String>, sessions: Vec<Session>) -> Self {
        Self {
            sessions,
            provenance: provenance.into(),
        }
    }

    pub fn utterance_count(&self) -> usize {
        self.sessions.iter().map(|s| s.utterances().count()).sum()
    }

    pub fn search_action_count(&self) -> usize {
        self.sessions.iter().map(|s| s.search_actions().count()).sum()
    }

    pub fn session(&self, session_id: &str) -> Option<&Session> {
        self.sessions.iter().find(|s| s.session_id == session_id)
    }

    /// Loads and label-checks a corpus file. Structural invariants are not
    /// enforced here; run [`Corpus::validate`] for those.
    pub fn load(path: impl AsRef<std::path::Path>, format: CorpusFormat) -> Result<Self, CorpusError> {
        io::load(path.as_ref(), format)
    }

    /// Loads a corpus, inferring the format from the file extension.
    pub fn load_auto(path: impl AsRef<std::path::Path>) -> Result<Self, CorpusError> {
        let path = path.as_ref();
        io::load(path, CorpusFormat::from_path(path)?)
    }

    pub fn write(&self, path: impl AsRef<std::path::Path>, format: CorpusFormat) -> Result<(), CorpusError> {
        io::write(self, path.as_ref(), format)
    }

    pub fn validate(&self) -> ValidationReport {
        validate::validate(self)
    }

    pub fn stats(&self) -> CorpusStats {
        CorpusStats::of(self)
    }
}
