use std::path::PathBuf;

use convact_core::corpus::{
    split, split_grouped, Corpus, CorpusError, CorpusFormat, Event, SearchAction, Speaker, SpeechAct, ViolationKind,
};
use proptest::prelude::*;

fn fixture() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/mini.tsv")
}

#[test]
fn fixture_loads_with_expected_shape() {
    let c = Corpus::load_auto(fixture()).unwrap();
    assert_eq!(c.sessions.len(), 2);
    assert_eq!(c.utterance_count(), 10);
    assert_eq!(c.search_action_count(), 3);
    assert!(c.validate().is_clean());

    let s1 = c.session("s01").unwrap();
    assert_eq!(s1.task_complexity, 2);
    assert_eq!(s1.system_id, "sys-a");
    let actions: Vec<SearchAction> = s1.search_actions().map(|a| a.action).collect();
    assert_eq!(actions, [SearchAction::SR1, SearchAction::SR3]);
    let Event::SearchAction(a) = &s1.events[3] else { panic!("expected an action") };
    assert_eq!(a.timestamp_ms, 7900);
    let answer = s1.utterances().find(|u| u.speech_act == SpeechAct::S4).unwrap();
    assert_eq!(answer.speaker, Speaker::Agent);
    assert_eq!(answer.duration_s(), 3.8);
}

#[test]
fn fixture_stats() {
    let stats = Corpus::load_auto(fixture()).unwrap().stats();
    assert_eq!(stats.sessions, 2);
    assert_eq!(stats.user_utterances, 6);
    assert_eq!(stats.agent_utterances, 4);
    assert_eq!(stats.speech_acts[&SpeechAct::S12], 3);
    assert_eq!(stats.search_action_labels[&SearchAction::SR1], 2);
}

#[test]
fn formats_round_trip() {
    let c = Corpus::load_auto(fixture()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    for name in ["copy.tsv", "copy.jsonl"] {
        let path = dir.path().join(name);
        c.write(&path, CorpusFormat::from_path(&path).unwrap()).unwrap();
        let back = Corpus::load_auto(&path).unwrap();
        assert_eq!(back.sessions, c.sessions, "{name}");
    }
    let tsv = dir.path().join("copy.tsv");
    let again = dir.path().join("again.tsv");
    Corpus::load_auto(&tsv).unwrap().write(&again, CorpusFormat::Tsv).unwrap();
    assert_eq!(std::fs::read(&tsv).unwrap(), std::fs::read(&again).unwrap());
}

#[test]
fn malformed_rows_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let original = std::fs::read_to_string(fixture()).unwrap();
    let cases = [
        ("S12\t\n", "S99\t\n"),
        ("\t\t\t\tSR3", "\t\t\tS4\tSR3"),
        ("Thanks, bye.", " "),
        ("search_action\tagent\t9300", "search_action\tuser\t9300"),
    ];
    for (from, to) in cases {
        let path = dir.path().join("bad.tsv");
        std::fs::write(&path, original.replacen(from, to, 1)).unwrap();
        assert!(Corpus::load_auto(&path).is_err(), "{from:?} -> {to:?}");
    }
    let path = dir.path().join("user_search.tsv");
    std::fs::write(&path, original.replacen("search_action\tagent\t9300", "search_action\tuser\t9300", 1)).unwrap();
    assert!(matches!(Corpus::load_auto(&path), Err(CorpusError::UserSearchAction { .. })));
    assert!(matches!(Corpus::load_auto(dir.path().join("x.csv")), Err(CorpusError::UnknownFormat(_))));
}

#[test]
fn validation_reports_each_kind() {
    let mut c = Corpus::load_auto(fixture()).unwrap();
    let dup = c.sessions[1].clone();
    c.sessions.push(dup);
    if let Event::Utterance(u) = &mut c.sessions[0].events[0] {
        u.end_ms = 0;
        u.start_ms = 500;
        u.text = "  ".into();
    }
    c.sessions[0].events.swap(5, 6);
    let kinds: Vec<ViolationKind> = c.validate().violations.iter().map(|v| v.kind).collect();
    for k in [
        ViolationKind::DuplicateSession,
        ViolationKind::NegativeDuration,
        ViolationKind::EmptyText,
        ViolationKind::NonIncreasingEventIndex,
        ViolationKind::DecreasingTimestamp,
    ] {
        assert!(kinds.contains(&k), "{k:?} missing from {kinds:?}");
    }
}

proptest! {
    #[test]
    fn split_partitions_indices(labels in prop::collection::vec(0usize..5, 10..200), seed in any::<u64>()) {
        let s = split(&labels, seed, 0.8).unwrap();
        let mut all: Vec<usize> = s.train.iter().chain(&s.test).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..labels.len()).collect::<Vec<_>>());
        prop_assert!(!s.train.is_empty() && !s.test.is_empty());
        prop_assert_eq!(s, split(&labels, seed, 0.8).unwrap());
    }

    #[test]
    fn grouped_split_never_straddles(groups in prop::collection::vec(0u8..12, 10..150), seed in any::<u64>()) {
        prop_assume!(groups.iter().collect::<std::collections::BTreeSet<_>>().len() >= 2);
        let s = split_grouped(&groups, seed, 0.75).unwrap();
        for &i in &s.train {
            prop_assert!(s.test.iter().all(|&j| groups[j] != groups[i]));
        }
    }
}
