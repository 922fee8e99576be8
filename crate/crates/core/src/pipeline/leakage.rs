//! Checks that no instance feature depends on later events or on the
//! instance's own label.

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{make_search_instances, make_speech_instances, ActSource, PipelineError};
use crate::corpus::{Corpus, Event, Locator, SearchAction, SpeechAct, Taxonomy};
use crate::features::{FeatureExtractor, InstanceFeatures};

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LeakageReport {
    pub checked: usize,
    pub violations: Vec<Locator>,
}

impl LeakageReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

fn features_at(corpus: &Corpus, extractor: &FeatureExtractor, loc: &Locator, is_action: bool) -> Result<Option<InstanceFeatures>, PipelineError> {
    Ok(if is_action {
        make_search_instances(corpus, extractor, ActSource::Gold, None)?
            .into_iter()
            .find(|i| &i.locator == loc)
            .map(|i| i.features)
    } else {
        make_speech_instances(corpus, extractor)?
            .into_iter()
            .find(|i| &i.locator == loc)
            .map(|i| i.features)
    })
}

fn relabel(event: &mut Event) {
    match event {
        Event::Utterance(u) => u.speech_act = SpeechAct::from_index((u.speech_act.index() + 1) % SpeechAct::COUNT).expect("index in range"),
        Event::SearchAction(a) => a.action = SearchAction::from_index((a.action.index() + 1) % SearchAction::COUNT).expect("index in range"),
    }
}

/// Recomputes the features of `samples` randomly chosen events from a copy
/// of their session cut just after the event and with the event's own label
/// changed. Any difference apart from the label is reported.
pub fn scan_leakage(
    corpus: &Corpus,
    extractor: &FeatureExtractor,
    samples: usize,
    seed: u64,
) -> Result<LeakageReport, PipelineError> {
    let all: Vec<(usize, usize)> = corpus
        .sessions
        .iter()
        .enumerate()
        .flat_map(|(s, sess)| (0..sess.events.len()).map(move |p| (s, p)))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picked: Vec<(usize, usize)> = all.choose_multiple(&mut rng, samples.min(all.len())).copied().collect();

    let mut report = LeakageReport::default();
    for (s, pos) in picked {
        let session = &corpus.sessions[s];
        let event = &session.events[pos];
        let loc = session.locator(event);
        let is_action = matches!(event, Event::SearchAction(_));
        let full = Corpus::new(corpus.provenance.clone(), vec![session.clone()]);
        let mut cut = session.truncated(pos);
        relabel(cut.events.last_mut().expect("truncated session keeps the event"));
        let cut = Corpus::new(corpus.provenance.clone(), vec![cut]);

        let before = features_at(&full, extractor, &loc, is_action)?;
        let after = features_at(&cut, extractor, &loc, is_action)?;
        let same = match (before, after) {
            (Some(a), Some(mut b)) => {
                b.label = a.label;
                a == b
            }
            _ => false,
        };
        report.checked += 1;
        if !same {
            report.violations.push(loc);
        }
    }
    Ok(report)
}
