//! Inter-annotator agreement.
//!
//! Cohen's kappa is defined for a pair of annotators. Per-label values are
//! computed one-vs-rest: both label sequences are binarised to `L` / not-`L`
//! and kappa is taken on the binary sequences. With more than two annotators
//! every pair is scored on the items both labelled and the pairwise values
//! are averaged.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{SearchAction, SpeechAct, Taxonomy};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum AnnotationError {
    #[error("label sequences differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("label sequences are empty")]
    EmptyInput,
    #[error("chance agreement is 1 but observed agreement is {0}")]
    DegenerateMarginals(f64),
    #[error("need at least two annotators, found {0}")]
    NotEnoughAnnotators(usize),
    #[error("annotators share no items")]
    NoSharedItems,
    #[error("label `{0}` is outside the label set")]
    UnknownLabel(String),
    #[error("{0}")]
    Io(String),
    #[error("line {line}: {reason}")]
    MalformedRow { line: usize, reason: String },
}

/// Cohen's kappa for two equally long label sequences.
///
/// Returns exactly `1.0` when both observed and chance agreement are 1.
pub fn cohen_kappa<L: Ord>(a: &[L], b: &[L]) -> Result<f64, AnnotationError> {
    if a.len() != b.len() {
        return Err(AnnotationError::LengthMismatch(a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(AnnotationError::EmptyInput);
    }
    let n = a.len() as u128;
    let mut margins: BTreeMap<&L, (u128, u128)> = BTreeMap::new();
    let mut agree: u128 = 0;
    for (x, y) in a.iter().zip(b) {
        margins.entry(x).or_default().0 += 1;
        margins.entry(y).or_default().1 += 1;
        if x == y {
            agree += 1;
        }
    }
    // Integer numerators keep the computation exact and order independent:
    // kappa = (n*agree - sum(ca*cb)) / (n^2 - sum(ca*cb)).
    let chance: u128 = margins.values().map(|&(ca, cb)| ca * cb).sum();
    let denom = n * n - chance;
    if denom == 0 {
        return if agree == n {
            Ok(1.0)
        } else {
            Err(AnnotationError::DegenerateMarginals(agree as f64 / n as f64))
        };
    }
    Ok(((n * agree) as f64 - chance as f64) / denom as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelKappa {
    pub label: String,
    /// `None` when the label appears in neither sequence.
    pub kappa: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementTable {
    pub per_label: Vec<LabelKappa>,
    pub overall: f64,
    pub n_items: usize,
}

impl AgreementTable {
    pub fn kappa_of(&self, label: &str) -> Option<f64> {
        self.per_label.iter().find(|l| l.label == label).and_then(|l| l.kappa)
    }
}

/// Overall kappa plus one-vs-rest kappa for every label in `label_set`.
pub fn per_label_kappa<L: Ord + std::fmt::Display>(
    a: &[L],
    b: &[L],
    label_set: &[L],
) -> Result<AgreementTable, AnnotationError> {
    let overall = cohen_kappa(a, b)?;
    let per_label = label_set
        .iter()
        .map(|label| {
            let present = a.iter().chain(b).any(|x| x == label);
            let kappa = if present {
                let ba: Vec<bool> = a.iter().map(|x| x == label).collect();
                let bb: Vec<bool> = b.iter().map(|x| x == label).collect();
                Some(cohen_kappa(&ba, &bb)?)
            } else {
                None
            };
            Ok(LabelKappa {
                label: label.to_string(),
                kappa,
            })
        })
        .collect::<Result<Vec<_>, AnnotationError>>()?;
    Ok(AgreementTable {
        per_label,
        overall,
        n_items: a.len(),
    })
}

/// Labels keyed by item, one map per annotator.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AnnotationSet {
    pub by_annotator: BTreeMap<String, BTreeMap<String, String>>,
}

impl AnnotationSet {
    pub fn insert(&mut self, item: &str, annotator: &str, label: &str) {
        self.by_annotator
            .entry(annotator.to_string())
            .or_default()
            .insert(item.to_string(), label.to_string());
    }

    /// Reads an `item_id  annotator_id  label` TSV with a header row.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, AnnotationError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| AnnotationError::Io(format!("{}: {e}", path.display())))?;
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or(AnnotationError::EmptyInput)?;
        let cols: Vec<&str> = header.split('\t').map(str::trim).collect();
        let pos = |name: &str| {
            cols.iter().position(|c| *c == name).ok_or_else(|| AnnotationError::MalformedRow {
                line: 1,
                reason: format!("missing column `{name}`"),
            })
        };
        let (item_col, ann_col, label_col) = (pos("item_id")?, pos("annotator_id")?, pos("label")?);
        let mut set = AnnotationSet::default();
        for (i, line) in lines {
            let fields: Vec<&str> = line.split('\t').map(str::trim).collect();
            if fields.len() != cols.len() {
                return Err(AnnotationError::MalformedRow {
                    line: i + 1,
                    reason: format!("expected {} fields, found {}", cols.len(), fields.len()),
                });
            }
            set.insert(fields[item_col], fields[ann_col], fields[label_col]);
        }
        Ok(set)
    }

    /// Mean pairwise agreement over all annotator pairs, each pair scored on
    /// the items both annotators labelled.
    pub fn agreement(&self, label_set: &[&str]) -> Result<AgreementTable, AnnotationError> {
        let annotators: Vec<&BTreeMap<String, String>> = self.by_annotator.values().collect();
        if annotators.len() < 2 {
            return Err(AnnotationError::NotEnoughAnnotators(annotators.len()));
        }
        let known: BTreeSet<&str> = label_set.iter().copied().collect();
        for labels in &annotators {
            if let Some(bad) = labels.values().find(|l| !known.contains(l.as_str())) {
                return Err(AnnotationError::UnknownLabel(bad.clone()));
            }
        }

        let mut overall = Vec::new();
        let mut per_label: Vec<Vec<f64>> = vec![Vec::new(); label_set.len()];
        let mut shared_items = BTreeSet::new();
        for i in 0..annotators.len() {
            for j in i + 1..annotators.len() {
                let (mut a, mut b) = (Vec::new(), Vec::new());
                for (item, la) in annotators[i] {
                    if let Some(lb) = annotators[j].get(item) {
                        a.push(la.as_str());
                        b.push(lb.as_str());
                        shared_items.insert(item.as_str());
                    }
                }
                if a.is_empty() {
                    continue;
                }
                let table = per_label_kappa(&a, &b, label_set)?;
                overall.push(table.overall);
                for (acc, lk) in per_label.iter_mut().zip(&table.per_label) {
                    acc.extend(lk.kappa);
                }
            }
        }
        if overall.is_empty() {
            return Err(AnnotationError::NoSharedItems);
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        Ok(AgreementTable {
            per_label: label_set
                .iter()
                .zip(&per_label)
                .map(|(label, ks)| LabelKappa {
                    label: label.to_string(),
                    kappa: (!ks.is_empty()).then(|| mean(ks)),
                })
                .collect(),
            overall: mean(&overall),
            n_items: shared_items.len(),
        })
    }
}

pub fn speech_act_codes() -> Vec<&'static str> {
    SpeechAct::all().iter().map(|a| a.code()).collect()
}

pub fn search_action_codes() -> Vec<&'static str> {
    SearchAction::all().iter().map(|a| a.code()).collect()
}

/// Agreement for the speech-act and search-action annotation passes, laid
/// out like a per-code kappa table.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub speech: Option<AgreementTable>,
    pub search: Option<AgreementTable>,
}

fn fmt_kappa(k: Option<f64>) -> String {
    k.map(|k| format!("{k:.3}")).unwrap_or_else(|| "NA".into())
}

impl AgreementReport {
    fn sections(&self) -> impl Iterator<Item = (&'static str, &AgreementTable)> {
        [("speech_act", self.speech.as_ref()), ("search_action", self.search.as_ref())]
            .into_iter()
            .filter_map(|(name, t)| t.map(|t| (name, t)))
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("section\tcode\tkappa\n");
        for (section, table) in self.sections() {
            for lk in &table.per_label {
                let _ = writeln!(out, "{section}\t{}\t{}", lk.label, fmt_kappa(lk.kappa));
            }
            let _ = writeln!(out, "{section}\toverall\t{:.3}", table.overall);
        }
        out
    }

    pub fn to_markdown(&self) -> String {
        let mut out = String::from("| Section | Code | κ |\n|---|---|---|\n");
        for (section, table) in self.sections() {
            for lk in &table.per_label {
                let _ = writeln!(out, "| {section} | {} | {} |", lk.label, fmt_kappa(lk.kappa));
            }
        }
        out.push('\n');
        for (section, table) in self.sections() {
            let _ = writeln!(out, "Overall {section} κ = {:.3} over {} items", table.overall, table.n_items);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_sequences_have_kappa_one() {
        let a = ["S1", "S2", "S2", "S4"];
        assert_eq!(cohen_kappa(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn hand_computed_two_by_two_table() {
        // p_o = 0.75, p_e = 0.5 * 0.25 + 0.5 * 0.75 = 0.5
        let a = ["S1", "S1", "S2", "S2"];
        let b = ["S1", "S2", "S2", "S2"];
        assert_eq!(cohen_kappa(&a, &b).unwrap(), 0.5);
    }

    #[test]
    fn constant_sequences() {
        let a = ["S1"; 5];
        assert_eq!(cohen_kappa(&a, &a).unwrap(), 1.0);
        // p_e < 1 when the constant labels differ; kappa is 0.
        assert_eq!(cohen_kappa(&a, &["S2"; 5]).unwrap(), 0.0);
    }

    #[test]
    fn error_paths() {
        assert_eq!(cohen_kappa(&[1, 2], &[1]), Err(AnnotationError::LengthMismatch(2, 1)));
        assert_eq!(cohen_kappa::<u8>(&[], &[]), Err(AnnotationError::EmptyInput));
    }

    #[test]
    fn per_label_on_identical_sequences() {
        let a = ["S1", "S2", "S1"];
        let t = per_label_kappa(&a, &a, &["S1", "S2", "S3"]).unwrap();
        assert_eq!(t.kappa_of("S1"), Some(1.0));
        assert_eq!(t.kappa_of("S2"), Some(1.0));
        assert_eq!(t.per_label[2].kappa, None);
        assert_eq!(t.n_items, 3);
    }

    #[test]
    fn three_annotators_average_pairwise() {
        let mut set = AnnotationSet::default();
        for (item, labels) in [("i1", ["S1", "S1", "S1"]), ("i2", ["S2", "S2", "S1"]), ("i3", ["S2", "S2", "S2"])] {
            for (ann, label) in ["a", "b", "c"].iter().zip(labels) {
                set.insert(item, ann, label);
            }
        }
        let t = set.agreement(&["S1", "S2"]).unwrap();
        let ab = cohen_kappa(&["S1", "S2", "S2"], &["S1", "S2", "S2"]).unwrap();
        let ac = cohen_kappa(&["S1", "S2", "S2"], &["S1", "S1", "S2"]).unwrap();
        let bc = ac;
        assert!((t.overall - (ab + ac + bc) / 3.0).abs() < 1e-15);
        assert_eq!(t.n_items, 3);
    }

    #[test]
    fn labels_outside_the_set_are_rejected() {
        let mut set = AnnotationSet::default();
        set.insert("i1", "a", "S13");
        set.insert("i1", "b", "S1");
        assert_eq!(
            set.agreement(&speech_act_codes()),
            Err(AnnotationError::UnknownLabel("S13".into()))
        );
    }
}
