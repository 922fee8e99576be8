use std::sync::Arc;

use convact_core::cor::{generate_corpus, CorGrammar};
use convact_core::corpus::{Corpus, SearchAction, SpeechAct, Taxonomy};
use convact_core::features::{ChannelCombo, FallbackAnnotator, FeatureExtractor, StubEncoder};
use convact_core::model::{train, AdnnConfig, TrainedModel};
use convact_core::pipeline::{
    channel_sets, fit_schema, make_search_instances, make_speech_instances, run_two_stage, scan_leakage, ActMap,
    ActSource, Instance, Stage,
};

fn corpus() -> Corpus {
    let seeds: Vec<u64> = (1..=16).collect();
    generate_corpus(&seeds, 18, &CorGrammar::default_grammar()).unwrap()
}

fn extractor() -> FeatureExtractor {
    FeatureExtractor::new(Arc::new(FallbackAnnotator), None)
}

fn meta_ling() -> ChannelCombo {
    "meta+linguistic".parse().unwrap()
}

fn fit<I: Instance>(instances: &[I], ex: &FeatureExtractor, n_classes: usize) -> TrainedModel {
    let schema = fit_schema(instances, ex);
    let sets = channel_sets(instances, &schema, meta_ling()).unwrap();
    let config = AdnnConfig {
        hidden_units: 6,
        attention_dim: 4,
        epochs: 2,
        ..AdnnConfig::new(n_classes, meta_ling())
    };
    train(&sets, &config).unwrap().with_schema(schema)
}

fn gold_acts(c: &Corpus, ex: &FeatureExtractor) -> ActMap {
    make_speech_instances(c, ex).unwrap().into_iter().map(|i| (i.locator, i.gold)).collect()
}

#[test]
fn predicted_mode_with_gold_acts_matches_gold_mode() {
    let (c, ex) = (corpus(), extractor());
    let gold = make_search_instances(&c, &ex, ActSource::Gold, None).unwrap();
    let acts = gold_acts(&c, &ex);
    let predicted = make_search_instances(&c, &ex, ActSource::Predicted, Some(&acts)).unwrap();
    assert_eq!(gold.len(), c.search_action_count());
    assert_eq!(gold.len(), predicted.len());
    for (g, p) in gold.iter().zip(&predicted) {
        assert_eq!(g.locator, p.locator);
        assert_eq!(g.features, p.features);
        assert_eq!(g.context_text, p.context_text);
        assert_eq!(p.act_source, ActSource::Predicted);
    }
}

#[test]
fn predicted_acts_only_touch_metadata() {
    let (c, ex) = (corpus(), extractor());
    let gold = make_search_instances(&c, &ex, ActSource::Gold, None).unwrap();
    let shifted: ActMap = gold_acts(&c, &ex)
        .into_iter()
        .map(|(loc, act)| (loc, SpeechAct::from_index((act.index() + 5) % SpeechAct::COUNT).unwrap()))
        .collect();
    let predicted = make_search_instances(&c, &ex, ActSource::Predicted, Some(&shifted)).unwrap();
    let mut meta_changed = 0;
    for (g, p) in gold.iter().zip(&predicted) {
        assert_eq!(g.features.tokens, p.features.tokens);
        assert_eq!(g.features.label, p.features.label);
        meta_changed += (g.features.meta != p.features.meta) as usize;
    }
    assert!(meta_changed > 0);
}

#[test]
fn predicted_mode_requires_predictions() {
    let (c, ex) = (corpus(), extractor());
    assert!(make_search_instances(&c, &ex, ActSource::Predicted, None).is_err());
    let mut partial = gold_acts(&c, &ex);
    let first = partial.keys().next().unwrap().clone();
    partial.remove(&first);
    assert!(make_search_instances(&c, &ex, ActSource::Predicted, Some(&partial)).is_err());
}

#[test]
fn two_stage_feeds_stage_one_output_into_stage_two() {
    let (c, ex) = (corpus(), extractor());
    let speech = make_speech_instances(&c, &ex).unwrap();
    let search = make_search_instances(&c, &ex, ActSource::Gold, None).unwrap();
    let speech_model = fit(&speech, &ex, SpeechAct::COUNT);
    let search_model = fit(&search, &ex, SearchAction::COUNT);

    let out = run_two_stage(&c, &ex, &speech_model, &search_model).unwrap();
    assert_eq!(out.stage(Stage::Speech).count(), c.utterance_count());
    assert_eq!(out.stage(Stage::Search).count(), c.search_action_count());

    let acts = out.speech_acts();
    let manual = make_search_instances(&c, &ex, ActSource::Predicted, Some(&acts)).unwrap();
    let sets = channel_sets(&manual, search_model.schema.as_ref().unwrap(), meta_ling()).unwrap();
    let expected: Vec<String> = search_model
        .predict_batch(&sets)
        .unwrap()
        .iter()
        .map(|p| SearchAction::from_index(p.label).unwrap().code().to_string())
        .collect();
    let got: Vec<String> = out.stage(Stage::Search).map(|r| r.predicted.clone()).collect();
    assert_eq!(got, expected);

    assert!(run_two_stage(&c, &ex, &search_model, &speech_model).is_err());
    let schemaless = TrainedModel { schema: None, ..speech_model };
    assert!(run_two_stage(&c, &ex, &schemaless, &search_model).is_err());
}

#[test]
fn prediction_tsv_has_one_row_per_event() {
    let (c, ex) = (corpus(), extractor());
    let speech = make_speech_instances(&c, &ex).unwrap();
    let search = make_search_instances(&c, &ex, ActSource::Gold, None).unwrap();
    let out = run_two_stage(&c, &ex, &fit(&speech, &ex, SpeechAct::COUNT), &fit(&search, &ex, SearchAction::COUNT)).unwrap();
    let tsv = out.to_tsv();
    assert_eq!(tsv.lines().count(), 1 + c.utterance_count() + c.search_action_count());
    assert!(tsv.starts_with("session_id\tevent_index\tstage\tgold\tpredicted\tp_max\n"));
}

#[test]
fn no_feature_reads_later_events_or_own_label() {
    let c = corpus();
    let report = scan_leakage(&c, &extractor(), 150, 3).unwrap();
    assert_eq!(report.checked, 150);
    assert!(report.passed(), "{:?}", report.violations);

    let with_encoder = FeatureExtractor::new(Arc::new(FallbackAnnotator), Some(Arc::new(StubEncoder::default())));
    assert!(scan_leakage(&c, &with_encoder, 60, 4).unwrap().passed());
}
