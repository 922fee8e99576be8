//! Dialogue metadata: the eight per-instance fields and their encoding.

use std::collections::BTreeSet;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::FeatureError;
use crate::corpus::{Event, SearchAction, Session, Speaker, SpeechAct, Taxonomy, Utterance};

/// Names of the metadata fields, in encoding order.
pub const META_FIELDS: [&str; 8] = [
    "utterance_number",
    "duration_s",
    "speaker_role",
    "system_id",
    "task_complexity",
    "prev_speech_act",
    "prev_search_action",
    "prev_user_speech_act",
];

/// Unencoded metadata of one instance, derived from the instance's event and
/// the session events strictly before it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawMeta {
    pub utterance_number: f64,
    pub duration_s: f64,
    pub speaker: Speaker,
    pub system_id: String,
    pub task_complexity: u8,
    pub prev_speech_act: Option<SpeechAct>,
    pub prev_search_action: Option<SearchAction>,
    pub prev_user_speech_act: Option<SpeechAct>,
}

impl RawMeta {
    /// Metadata of `event` given `history`, the session events preceding it.
    /// `act_of` supplies the speech act attributed to each prior utterance
    /// (gold labels, or stage-one predictions).
    ///
    /// For an utterance the number is its 1-based position among the
    /// session's utterances and the duration is its own. For a search action
    /// the number is the count of utterances before it, and the duration is
    /// the time elapsed since the previous event ended.
    pub fn derive(
        session: &Session,
        history: &[Event],
        event: &Event,
        act_of: &dyn Fn(&Utterance) -> SpeechAct,
    ) -> Self {
        let prior_utterances = history.iter().filter_map(Event::as_utterance);
        let n_prior = prior_utterances.clone().count();
        let prev_speech_act = prior_utterances.clone().last().map(act_of);
        let prev_user_speech_act = prior_utterances.filter(|u| u.speaker == Speaker::User).last().map(act_of);
        let prev_search_action = history.iter().filter_map(Event::as_search_action).last().map(|a| a.action);
        let (utterance_number, duration_s, speaker) = match event {
            Event::Utterance(u) => ((n_prior + 1) as f64, u.duration_s(), u.speaker),
            Event::SearchAction(a) => {
                let prev_end = history.last().map(Event::end_ms).unwrap_or(a.timestamp_ms);
                (
                    n_prior as f64,
                    a.timestamp_ms.saturating_sub(prev_end) as f64 / 1000.0,
                    Speaker::Agent,
                )
            }
        };
        RawMeta {
            utterance_number,
            duration_s,
            speaker,
            system_id: session.system_id.clone(),
            task_complexity: session.task_complexity,
            prev_speech_act,
            prev_search_action,
            prev_user_speech_act,
        }
    }
}

/// Mean and population standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub mean: f64,
    pub std: f64,
}

impl Moments {
    pub fn of(values: impl IntoIterator<Item = f64>) -> Self {
        let values: Vec<f64> = values.into_iter().collect();
        if values.is_empty() {
            return Moments { mean: 0.0, std: 1.0 };
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Moments { mean, std: var.sqrt() }
    }

    /// z-score; a zero spread only centres.
    pub fn apply(&self, x: f64) -> f64 {
        if self.std > 0.0 {
            (x - self.mean) / self.std
        } else {
            x - self.mean
        }
    }
}

/// Standardisation moments, fitted on the training split only.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub utterance_number: Moments,
    pub duration_s: Moments,
}

impl Standardizer {
    pub fn fit<'a>(train: impl IntoIterator<Item = &'a RawMeta>) -> Self {
        let train: Vec<&RawMeta> = train.into_iter().collect();
        Standardizer {
            utterance_number: Moments::of(train.iter().map(|m| m.utterance_number)),
            duration_s: Moments::of(train.iter().map(|m| m.duration_s)),
        }
    }
}

/// Vocabularies of the study-specific categorical fields. Unseen values map
/// to a trailing OTHER slot.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetaSchema {
    pub system_ids: Vec<String>,
    pub task_complexities: Vec<u8>,
}

impl MetaSchema {
    pub fn fit<'a>(train: impl IntoIterator<Item = &'a RawMeta>) -> Self {
        let mut systems = BTreeSet::new();
        let mut complexities = BTreeSet::new();
        for m in train {
            systems.insert(m.system_id.clone());
            complexities.insert(m.task_complexity);
        }
        MetaSchema {
            system_ids: systems.into_iter().collect(),
            task_complexities: complexities.into_iter().collect(),
        }
    }

    pub fn field_widths(&self) -> [usize; 8] {
        [
            1,
            1,
            2,
            self.system_ids.len() + 1,
            self.task_complexities.len() + 1,
            SpeechAct::COUNT + 1,
            SearchAction::COUNT + 1,
            SpeechAct::COUNT + 1,
        ]
    }

    /// Width of one timestep when the fields are laid out as a sequence.
    pub fn step_width(&self) -> usize {
        self.field_widths().into_iter().max().unwrap_or(1)
    }
}

/// The encoded metadata fields, one sub-vector per field in
/// [`META_FIELDS`] order. One-hot blocks reserve their last slot for NONE
/// (previous-label fields) or OTHER (vocabulary fields).
#[derive(Debug, Clone, PartialEq)]
pub struct MetadataVector {
    pub fields: Vec<Vec<f64>>,
}

impl MetadataVector {
    pub fn flat(&self) -> Vec<f64> {
        self.fields.concat()
    }

    /// Fields as an `8 × width` sequence, each row zero-padded.
    pub fn to_sequence(&self, width: usize) -> Array2<f64> {
        let mut seq = Array2::zeros((self.fields.len(), width));
        for (r, field) in self.fields.iter().enumerate() {
            for (c, &v) in field.iter().enumerate().take(width) {
                seq[[r, c]] = v;
            }
        }
        seq
    }

    pub fn standardized_duration(&self) -> f64 {
        self.fields[1][0]
    }
}

fn one_hot(width: usize, slot: usize) -> Vec<f64> {
    let mut v = vec![0.0; width];
    v[slot.min(width - 1)] = 1.0;
    v
}

fn label_one_hot<T: Taxonomy>(label: Option<T>) -> Vec<f64> {
    one_hot(T::COUNT + 1, label.map(T::index).unwrap_or(T::COUNT))
}

pub fn encode_raw_metadata(
    raw: &RawMeta,
    schema: &MetaSchema,
    standardizer: Option<&Standardizer>,
) -> Result<MetadataVector, FeatureError> {
    let st = standardizer.ok_or(FeatureError::StandardizerMissing)?;
    let system_slot = schema
        .system_ids
        .iter()
        .position(|s| *s == raw.system_id)
        .unwrap_or(schema.system_ids.len());
    let complexity_slot = schema
        .task_complexities
        .iter()
        .position(|&c| c == raw.task_complexity)
        .unwrap_or(schema.task_complexities.len());
    Ok(MetadataVector {
        fields: vec![
            vec![st.utterance_number.apply(raw.utterance_number)],
            vec![st.duration_s.apply(raw.duration_s)],
            one_hot(2, raw.speaker.index()),
            one_hot(schema.system_ids.len() + 1, system_slot),
            one_hot(schema.task_complexities.len() + 1, complexity_slot),
            label_one_hot(raw.prev_speech_act),
            label_one_hot(raw.prev_search_action),
            label_one_hot(raw.prev_user_speech_act),
        ],
    })
}

/// Encodes the metadata of `event`, where `history` holds the events of
/// `session` that precede it. Previous-act fields use gold labels.
pub fn encode_metadata(
    event: &Event,
    history: &[Event],
    session: &Session,
    schema: &MetaSchema,
    standardizer: Option<&Standardizer>,
) -> Result<MetadataVector, FeatureError> {
    let raw = RawMeta::derive(session, history, event, &|u| u.speech_act);
    encode_raw_metadata(&raw, schema, standardizer)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{SearchActionEvent, Utterance};

    fn utt(idx: u32, speaker: Speaker, act: SpeechAct, start: u64, end: u64) -> Event {
        Event::Utterance(Utterance {
            event_index: idx,
            speaker,
            text: "x".into(),
            start_ms: start,
            end_ms: end,
            speech_act: act,
        })
    }

    fn session() -> Session {
        Session {
            session_id: "s".into(),
            user_id: "u".into(),
            task_id: "t".into(),
            task_complexity: 1,
            system_id: "A".into(),
            events: vec![
                utt(1, Speaker::User, SpeechAct::S12, 0, 1000),
                utt(2, Speaker::Agent, SpeechAct::S12, 1500, 3000),
                utt(3, Speaker::User, SpeechAct::S1, 3500, 7000),
                Event::SearchAction(SearchActionEvent {
                    event_index: 4,
                    timestamp_ms: 9000,
                    action: SearchAction::SR1,
                }),
                utt(5, Speaker::Agent, SpeechAct::S4, 12000, 18000),
            ],
        }
    }

    #[test]
    fn first_utterance_has_no_previous_labels() {
        let s = session();
        let raw = RawMeta::derive(&s, &[], &s.events[0], &|u| u.speech_act);
        assert_eq!(raw.prev_speech_act, None);
        assert_eq!(raw.prev_search_action, None);
        assert_eq!(raw.prev_user_speech_act, None);
        let schema = MetaSchema::fit([&raw]);
        let st = Standardizer::fit([&raw]);
        let v = encode_raw_metadata(&raw, &schema, Some(&st)).unwrap();
        assert_eq!(v.fields.len(), 8);
        assert_eq!(v.fields[5][12], 1.0);
        assert_eq!(v.fields[6][4], 1.0);
        assert_eq!(v.fields[7][12], 1.0);
    }

    #[test]
    fn previous_fields_track_latest_applicable_event() {
        let s = session();
        let raw = RawMeta::derive(&s, &s.events[..4], &s.events[4], &|u| u.speech_act);
        assert_eq!(raw.prev_speech_act, Some(SpeechAct::S1));
        assert_eq!(raw.prev_user_speech_act, Some(SpeechAct::S1));
        assert_eq!(raw.prev_search_action, Some(SearchAction::SR1));
        assert_eq!(raw.utterance_number, 4.0);
        assert_eq!(raw.duration_s, 6.0);

        let action = RawMeta::derive(&s, &s.events[..3], &s.events[3], &|u| u.speech_act);
        assert_eq!(action.speaker, Speaker::Agent);
        assert_eq!(action.utterance_number, 3.0);
        assert_eq!(action.duration_s, 2.0);
    }

    #[test]
    fn duration_z_score() {
        let s = session();
        let mut raw = RawMeta::derive(&s, &s.events[..4], &s.events[4], &|u| u.speech_act);
        raw.duration_s = 6.0;
        let st = Standardizer {
            utterance_number: Moments { mean: 0.0, std: 1.0 },
            duration_s: Moments { mean: 4.0, std: 2.0 },
        };
        let v = encode_raw_metadata(&raw, &MetaSchema::fit([&raw]), Some(&st)).unwrap();
        assert_eq!(v.standardized_duration(), 1.0);
    }

    #[test]
    fn missing_standardizer_is_an_error() {
        let s = session();
        let schema = MetaSchema {
            system_ids: vec![],
            task_complexities: vec![],
        };
        assert!(matches!(
            encode_metadata(&s.events[0], &[], &s, &schema, None),
            Err(FeatureError::StandardizerMissing)
        ));
    }

    #[test]
    fn unseen_categories_use_other_slot() {
        let s = session();
        let raw = RawMeta::derive(&s, &[], &s.events[0], &|u| u.speech_act);
        let schema = MetaSchema {
            system_ids: vec!["B".into()],
            task_complexities: vec![0],
        };
        let st = Standardizer::fit([&raw]);
        let v = encode_raw_metadata(&raw, &schema, Some(&st)).unwrap();
        assert_eq!(v.fields[3], vec![0.0, 1.0]);
        assert_eq!(v.fields[4], vec![0.0, 1.0]);
        let seq = v.to_sequence(schema.step_width());
        assert_eq!(seq.dim(), (8, 13));
    }
}
