//! Classification instances and the two-stage speech-act → search-action run.

mod leakage;

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Event, Locator, SearchAction, Session, Speaker, SpeechAct, Taxonomy, Utterance};
use crate::features::{
    build_channels, ChannelCombo, ChannelSet, FeatureError, FeatureExtractor, FeatureSchema, InstanceFeatures, RawMeta,
    TokenAnnotation,
};
use crate::model::{ModelError, TrainedModel};

pub use leakage::{scan_leakage, LeakageReport};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Features(#[from] FeatureError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("no speech-act prediction for utterance {0}")]
    MissingPredictions(Locator),
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("{0}")]
    Io(String),
}

/// Where the previous-act metadata of search instances comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActSource {
    Gold,
    Predicted,
}

impl fmt::Display for ActSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ActSource::Gold => "gold",
            ActSource::Predicted => "predicted",
        })
    }
}

impl FromStr for ActSource {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "gold" => Ok(ActSource::Gold),
            "predicted" => Ok(ActSource::Predicted),
            other => Err(format!("unknown act source `{other}` (expected gold or predicted)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpeechInstance {
    pub locator: Locator,
    pub features: InstanceFeatures,
    pub gold: SpeechAct,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchInstance {
    pub locator: Locator,
    pub context_text: String,
    pub features: InstanceFeatures,
    pub gold: SearchAction,
    pub act_source: ActSource,
}

/// Speech-act predictions keyed by utterance.
pub type ActMap = BTreeMap<Locator, SpeechAct>;

/// Common view of speech and search instances.
pub trait Instance: Sync {
    fn locator(&self) -> &Locator;
    fn features(&self) -> &InstanceFeatures;
}

impl Instance for SpeechInstance {
    fn locator(&self) -> &Locator {
        &self.locator
    }

    fn features(&self) -> &InstanceFeatures {
        &self.features
    }
}

impl Instance for SearchInstance {
    fn locator(&self) -> &Locator {
        &self.locator
    }

    fn features(&self) -> &InstanceFeatures {
        &self.features
    }
}

/// Encodes `instances` under `schema`, keeping only the channels in `combo`.
pub fn channel_sets<I: Instance>(
    instances: &[I],
    schema: &FeatureSchema,
    combo: ChannelCombo,
) -> Result<Vec<ChannelSet>, FeatureError> {
    instances
        .par_iter()
        .map(|i| build_channels(i.features(), schema, combo))
        .collect()
}

/// Fits a feature schema on the given training instances.
pub fn fit_schema<'a, I: Instance + 'a>(train: impl IntoIterator<Item = &'a I>, extractor: &FeatureExtractor) -> FeatureSchema {
    let feats: Vec<&InstanceFeatures> = train.into_iter().map(|i| i.features()).collect();
    FeatureSchema::fit(feats.iter().copied(), extractor)
}

fn speech_instances_of(session: &Session, extractor: &FeatureExtractor) -> Result<Vec<SpeechInstance>, FeatureError> {
    let mut out = Vec::new();
    for (pos, event) in session.events.iter().enumerate() {
        let Event::Utterance(u) = event else { continue };
        let locator = session.locator(event);
        let meta = RawMeta::derive(session, &session.events[..pos], event, &|u: &Utterance| u.speech_act);
        out.push(SpeechInstance {
            features: InstanceFeatures {
                tokens: extractor.annotator.annotate_event(&locator, &u.text)?,
                meta,
                embedding: extractor.embed(&u.text)?,
                label: u.speech_act.index(),
            },
            locator,
            gold: u.speech_act,
        });
    }
    Ok(out)
}

/// One instance per utterance, in corpus order. Previous-act metadata uses
/// gold labels.
pub fn make_speech_instances(corpus: &Corpus, extractor: &FeatureExtractor) -> Result<Vec<SpeechInstance>, PipelineError> {
    let per_session: Vec<Vec<SpeechInstance>> = corpus
        .sessions
        .par_iter()
        .map(|s| speech_instances_of(s, extractor))
        .collect::<Result<_, _>>()?;
    Ok(per_session.into_iter().flatten().collect())
}

/// User utterances the search action at `pos` responds to: those after the
/// previous search action, or else the latest user utterance before it.
pub fn context_utterances(session: &Session, pos: usize) -> Vec<&Utterance> {
    let history = &session.events[..pos];
    let window_start = history
        .iter()
        .rposition(|e| matches!(e, Event::SearchAction(_)))
        .map_or(0, |p| p + 1);
    let window: Vec<&Utterance> = history[window_start..]
        .iter()
        .filter_map(Event::as_utterance)
        .filter(|u| u.speaker == Speaker::User)
        .collect();
    if !window.is_empty() {
        return window;
    }
    history
        .iter()
        .rev()
        .filter_map(Event::as_utterance)
        .find(|u| u.speaker == Speaker::User)
        .into_iter()
        .collect()
}

fn search_instances_of(
    session: &Session,
    extractor: &FeatureExtractor,
    act_source: ActSource,
    predictions: Option<&ActMap>,
) -> Result<Vec<SearchInstance>, PipelineError> {
    let lookup = |u: &Utterance| -> Result<SpeechAct, PipelineError> {
        match act_source {
            ActSource::Gold => Ok(u.speech_act),
            ActSource::Predicted => {
                let loc = Locator {
                    session_id: session.session_id.clone(),
                    event_index: u.event_index,
                };
                predictions
                    .and_then(|p| p.get(&loc))
                    .copied()
                    .ok_or(PipelineError::MissingPredictions(loc))
            }
        }
    };
    let mut acts: BTreeMap<u32, SpeechAct> = BTreeMap::new();
    let mut out = Vec::new();
    for (pos, event) in session.events.iter().enumerate() {
        let a = match event {
            Event::Utterance(u) => {
                acts.insert(u.event_index, lookup(u)?);
                continue;
            }
            Event::SearchAction(a) => a,
        };
        let locator = session.locator(event);
        let context = context_utterances(session, pos);
        let context_text = context.iter().map(|u| u.text.as_str()).collect::<Vec<_>>().join(" ");
        let mut tokens: Vec<TokenAnnotation> = Vec::new();
        for u in &context {
            let loc = Locator {
                session_id: session.session_id.clone(),
                event_index: u.event_index,
            };
            tokens.extend(extractor.annotator.annotate_event(&loc, &u.text)?);
        }
        if tokens.len() > extractor.max_len {
            tokens.drain(..tokens.len() - extractor.max_len);
        }
        let meta = RawMeta::derive(session, &session.events[..pos], event, &|u: &Utterance| acts[&u.event_index]);
        out.push(SearchInstance {
            features: InstanceFeatures {
                tokens,
                meta,
                embedding: extractor.embed(&context_text)?,
                label: a.action.index(),
            },
            locator,
            context_text,
            gold: a.action,
            act_source,
        });
    }
    Ok(out)
}

/// One instance per search action, in corpus order. With
/// [`ActSource::Predicted`], `predictions` must cover every utterance that
/// precedes an action.
pub fn make_search_instances(
    corpus: &Corpus,
    extractor: &FeatureExtractor,
    act_source: ActSource,
    predictions: Option<&ActMap>,
) -> Result<Vec<SearchInstance>, PipelineError> {
    let per_session: Vec<Vec<SearchInstance>> = corpus
        .sessions
        .par_iter()
        .map(|s| search_instances_of(s, extractor, act_source, predictions))
        .collect::<Result<_, _>>()?;
    Ok(per_session.into_iter().flatten().collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Speech,
    Search,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Speech => "speech",
            Stage::Search => "search",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRow {
    pub locator: Locator,
    pub stage: Stage,
    pub gold: String,
    pub predicted: String,
    pub p_max: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PipelinePredictions {
    pub rows: Vec<PredictionRow>,
}

pub const PREDICTION_COLUMNS: [&str; 6] = ["session_id", "event_index", "stage", "gold", "predicted", "p_max"];

impl PipelinePredictions {
    pub fn stage(&self, stage: Stage) -> impl Iterator<Item = &PredictionRow> {
        self.rows.iter().filter(move |r| r.stage == stage)
    }

    /// Share of rows of `stage` whose prediction equals the gold label.
    pub fn accuracy(&self, stage: Stage) -> Option<f64> {
        let (hits, n) = self
            .stage(stage)
            .fold((0usize, 0usize), |(h, n), r| (h + (r.gold == r.predicted) as usize, n + 1));
        (n > 0).then(|| hits as f64 / n as f64)
    }

    /// Speech-act predictions of stage one.
    pub fn speech_acts(&self) -> ActMap {
        self.stage(Stage::Speech)
            .map(|r| (r.locator.clone(), r.predicted.parse().expect("stage-one rows hold speech-act codes")))
            .collect()
    }

    pub fn to_tsv(&self) -> String {
        let mut out = PREDICTION_COLUMNS.join("\t");
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{:.6}\n",
                r.locator.session_id,
                r.locator.event_index,
                r.stage.as_str(),
                r.gold,
                r.predicted,
                r.p_max
            ));
        }
        out
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<(), PipelineError> {
        let path = path.as_ref();
        std::fs::write(path, self.to_tsv()).map_err(|e| PipelineError::Io(format!("{}: {e}", path.display())))
    }
}

fn check_model(model: &TrainedModel, extractor: &FeatureExtractor, n_classes: usize, stage: &str) -> Result<FeatureSchema, PipelineError> {
    let schema = model
        .schema
        .clone()
        .ok_or_else(|| PipelineError::SchemaMismatch(format!("{stage} model carries no feature schema")))?;
    if model.config.n_classes != n_classes {
        return Err(PipelineError::SchemaMismatch(format!(
            "{stage} model predicts {} classes, expected {n_classes}",
            model.config.n_classes
        )));
    }
    if schema.annotator != extractor.annotator.id() {
        return Err(PipelineError::SchemaMismatch(format!(
            "{stage} model was trained with annotator {}, extractor uses {}",
            schema.annotator,
            extractor.annotator.id()
        )));
    }
    if model.config.channels.contains(crate::features::Channel::Embedding) && schema.encoder != extractor.encoder_info() {
        return Err(PipelineError::SchemaMismatch(format!(
            "{stage} model was trained with encoder {:?}, extractor provides {:?}",
            schema.encoder.map(|e| e.id),
            extractor.encoder_info().map(|e| e.id)
        )));
    }
    Ok(schema)
}

fn rows<T: Taxonomy>(
    locators: impl Iterator<Item = Locator>,
    golds: impl Iterator<Item = T>,
    preds: Vec<crate::model::Prediction>,
    stage: Stage,
) -> Vec<PredictionRow> {
    locators
        .zip(golds)
        .zip(preds)
        .map(|((locator, gold), p)| PredictionRow {
            locator,
            stage,
            gold: gold.code().to_string(),
            predicted: T::from_index(p.label).expect("model classes match the taxonomy").code().to_string(),
            p_max: p.p_max(),
        })
        .collect()
}

/// Predicts the speech act of every utterance, then every search action
/// using those predictions in its previous-act metadata.
pub fn run_two_stage(
    corpus: &Corpus,
    extractor: &FeatureExtractor,
    speech_model: &TrainedModel,
    search_model: &TrainedModel,
) -> Result<PipelinePredictions, PipelineError> {
    let speech_schema = check_model(speech_model, extractor, SpeechAct::COUNT, "speech")?;
    let search_schema = check_model(search_model, extractor, SearchAction::COUNT, "search")?;

    let speech = make_speech_instances(corpus, extractor)?;
    let sets = channel_sets(&speech, &speech_schema, speech_model.config.channels)?;
    let preds = speech_model.predict_batch(&sets)?;
    let mut out = PipelinePredictions {
        rows: rows::<SpeechAct>(
            speech.iter().map(|i| i.locator.clone()),
            speech.iter().map(|i| i.gold),
            preds,
            Stage::Speech,
        ),
    };

    let acts = out.speech_acts();
    let search = make_search_instances(corpus, extractor, ActSource::Predicted, Some(&acts))?;
    let sets = channel_sets(&search, &search_schema, search_model.config.channels)?;
    let preds = search_model.predict_batch(&sets)?;
    out.rows.extend(rows::<SearchAction>(
        search.iter().map(|i| i.locator.clone()),
        search.iter().map(|i| i.gold),
        preds,
        Stage::Search,
    ));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::SearchActionEvent;

    fn utt(idx: u32, speaker: Speaker, act: SpeechAct, text: &str) -> Event {
        Event::Utterance(Utterance {
            event_index: idx,
            speaker,
            text: text.into(),
            start_ms: idx as u64 * 1000,
            end_ms: idx as u64 * 1000 + 500,
            speech_act: act,
        })
    }

    fn action(idx: u32, a: SearchAction) -> Event {
        Event::SearchAction(SearchActionEvent {
            event_index: idx,
            timestamp_ms: idx as u64 * 1000,
            action: a,
        })
    }

    fn session() -> Session {
        Session {
            session_id: "s1".into(),
            user_id: "u1".into(),
            task_id: "t1".into(),
            task_complexity: 1,
            system_id: "audio".into(),
            events: vec![
                utt(0, Speaker::User, SpeechAct::S12, "hello"),
                utt(1, Speaker::Agent, SpeechAct::S12, "hi there"),
                utt(2, Speaker::User, SpeechAct::S1, "find cheap flights"),
                action(3, SearchAction::SR1),
                utt(4, Speaker::User, SpeechAct::S8, "to Rome"),
                utt(5, Speaker::Agent, SpeechAct::S2, "one moment"),
                utt(6, Speaker::User, SpeechAct::S8, "in May"),
                action(7, SearchAction::SR2),
                action(8, SearchAction::SR3),
            ],
        }
    }

    #[test]
    fn context_is_window_since_last_action() {
        let s = session();
        let texts = |pos| context_utterances(&s, pos).iter().map(|u| u.text.clone()).collect::<Vec<_>>();
        assert_eq!(texts(3), ["hello", "find cheap flights"]);
        assert_eq!(texts(7), ["to Rome", "in May"]);
        assert_eq!(texts(8), ["in May"]);
    }

    #[test]
    fn search_instances_join_context_text() {
        let corpus = Corpus::new("fixture", vec![session()]);
        let inst = make_search_instances(&corpus, &FeatureExtractor::default(), ActSource::Gold, None).unwrap();
        assert_eq!(inst.len(), 3);
        assert_eq!(inst[1].context_text, "to Rome in May");
        assert_eq!(inst[1].features.tokens.len(), 4);
        assert_eq!(inst[1].features.meta.prev_speech_act, Some(SpeechAct::S8));
        assert_eq!(inst[1].features.meta.prev_user_speech_act, Some(SpeechAct::S8));
        assert_eq!(inst[2].features.meta.prev_search_action, Some(SearchAction::SR2));
    }

    #[test]
    fn predicted_mode_needs_predictions() {
        let corpus = Corpus::new("fixture", vec![session()]);
        let err = make_search_instances(&corpus, &FeatureExtractor::default(), ActSource::Predicted, None).unwrap_err();
        assert!(matches!(err, PipelineError::MissingPredictions(_)));
    }

    #[test]
    fn long_context_keeps_latest_tokens() {
        let corpus = Corpus::new("fixture", vec![session()]);
        let ex = FeatureExtractor::default().with_max_len(2);
        let inst = make_search_instances(&corpus, &ex, ActSource::Gold, None).unwrap();
        let surfaces: Vec<&str> = inst[1].features.tokens.iter().map(|t| t.surface.as_str()).collect();
        assert_eq!(surfaces, ["in", "May"]);
    }
}
