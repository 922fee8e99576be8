use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Corpus, Event, SearchAction, Speaker, SpeechAct};

/// Label and speaker frequencies of a corpus. Every taxonomy code is present
/// in the label maps, with zero when unused.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub sessions: usize,
    pub utterances: usize,
    pub search_actions: usize,
    pub user_utterances: usize,
    pub agent_utterances: usize,
    pub speech_acts: BTreeMap<SpeechAct, usize>,
    pub search_action_labels: BTreeMap<SearchAction, usize>,
    /// Utterances per task id.
    pub task_utterances: BTreeMap<String, usize>,
}

impl CorpusStats {
    pub fn of(corpus: &Corpus) -> Self {
        let mut stats = CorpusStats {
            sessions: corpus.sessions.len(),
            utterances: 0,
            search_actions: 0,
            user_utterances: 0,
            agent_utterances: 0,
            speech_acts: SpeechAct::ALL.iter().map(|&a| (a, 0)).collect(),
            search_action_labels: SearchAction::ALL.iter().map(|&a| (a, 0)).collect(),
            task_utterances: BTreeMap::new(),
        };
        for session in &corpus.sessions {
            for ev in &session.events {
                match ev {
                    Event::Utterance(u) => {
                        stats.utterances += 1;
                        match u.speaker {
                            Speaker::User => stats.user_utterances += 1,
                            Speaker::Agent => stats.agent_utterances += 1,
                        }
                        *stats.speech_acts.entry(u.speech_act).or_default() += 1;
                        *stats.task_utterances.entry(session.task_id.clone()).or_default() += 1;
                    }
                    Event::SearchAction(a) => {
                        stats.search_actions += 1;
                        *stats.search_action_labels.entry(a.action).or_default() += 1;
                    }
                }
            }
        }
        stats
    }
}
