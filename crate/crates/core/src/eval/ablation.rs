//! Channel-ablation protocol: every channel subset trained and tested over a
//! list of seeds on identical splits.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::confusion::ConfusionReport;
use super::wilcoxon::{wilcoxon_signed_rank, WilcoxonResult};
use super::EvalError;
use crate::corpus::{split, split_grouped, Corpus, SearchAction, SpeechAct, Split, Taxonomy};
use crate::features::{Channel, ChannelCombo, ChannelSet, FeatureExtractor};
use crate::model::{train, AdnnConfig};
use crate::pipeline::{
    channel_sets, fit_schema, make_search_instances, make_speech_instances, ActMap, ActSource, Instance, SearchInstance,
    SpeechInstance,
};

/// p-values below this are flagged significant.
pub const SIGNIFICANCE_LEVEL: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Speech,
    Search,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Speech => "speech",
            Task::Search => "search",
        }
    }

    pub fn n_classes(self) -> usize {
        match self {
            Task::Speech => SpeechAct::COUNT,
            Task::Search => SearchAction::COUNT,
        }
    }

    pub fn label_codes(self) -> Vec<String> {
        match self {
            Task::Speech => SpeechAct::ALL.iter().map(|a| a.code().to_string()).collect(),
            Task::Search => SearchAction::ALL.iter().map(|a| a.code().to_string()).collect(),
        }
    }
}

impl std::str::FromStr for Task {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "speech" => Ok(Task::Speech),
            "search" => Ok(Task::Search),
            other => Err(format!("unknown task `{other}` (expected speech or search)")),
        }
    }
}

/// Unit at which train and test are separated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitLevel {
    /// Instances, stratified by label.
    Instance,
    /// Whole sessions.
    Session,
}

impl std::str::FromStr for SplitLevel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "instance" => Ok(SplitLevel::Instance),
            "session" => Ok(SplitLevel::Session),
            other => Err(format!("unknown split level `{other}` (expected instance or session)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationConfig {
    /// Template for every cell; `channels`, `n_classes` and `seed` are set
    /// per cell.
    pub model: AdnnConfig,
    pub seeds: Vec<u64>,
    pub combos: Vec<ChannelCombo>,
    pub split_ratio: f64,
    pub split_level: SplitLevel,
    /// Source of the previous-act metadata of search-task test instances.
    pub act_source: ActSource,
    /// Channels of the stage-one speech model used when `act_source` is
    /// predicted.
    pub speech_channels: ChannelCombo,
    /// Worker threads for the cells of one seed; 0 lets the pool decide.
    pub jobs: usize,
}

impl AblationConfig {
    pub fn new(task: Task) -> Self {
        AblationConfig {
            model: AdnnConfig::new(task.n_classes(), ChannelCombo::FULL),
            seeds: (1..=30).collect(),
            combos: ChannelCombo::FULL.subsets(),
            split_ratio: 0.8,
            split_level: SplitLevel::Instance,
            act_source: ActSource::Gold,
            speech_channels: ChannelCombo::new([Channel::Meta, Channel::Linguistic]),
            jobs: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub combo: ChannelCombo,
    /// One accuracy per seed, in seed order.
    pub accuracies: Vec<f64>,
    /// Test-set confusion matrix per seed.
    pub confusions: Vec<ConfusionReport>,
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    if v.len() % 2 == 1 {
        v[mid]
    } else {
        (v[mid - 1] + v[mid]) / 2.0
    }
}

impl AblationRow {
    pub fn max(&self) -> f64 {
        self.accuracies.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn median(&self) -> f64 {
        median(&self.accuracies)
    }

    pub fn mean(&self) -> f64 {
        self.accuracies.iter().sum::<f64>() / self.accuracies.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub task: Task,
    pub seeds: Vec<u64>,
    pub rows: Vec<AblationRow>,
    /// `significance[i][j]`: test of row `i` against row `j`; `None` on the
    /// diagonal.
    pub significance: Vec<Vec<Option<WilcoxonResult>>>,
    pub best_by_median: usize,
    pub best_by_max: usize,
    pub config: AblationConfig,
    /// Hash of the feature schema fitted for each seed, in seed order.
    #[serde(default)]
    pub schema_hashes: Vec<String>,
}

fn best_by(rows: &[AblationRow], key: impl Fn(&AblationRow) -> f64) -> usize {
    let mut best = 0;
    for (i, r) in rows.iter().enumerate().skip(1) {
        if key(r) > key(&rows[best]) {
            best = i;
        }
    }
    best
}

impl AblationReport {
    pub fn from_rows(task: Task, seeds: Vec<u64>, rows: Vec<AblationRow>, config: AblationConfig) -> Result<Self, EvalError> {
        if rows.is_empty() {
            return Err(EvalError::Empty("ablation rows"));
        }
        let mut significance = vec![vec![None; rows.len()]; rows.len()];
        for i in 0..rows.len() {
            for j in 0..rows.len() {
                if i != j {
                    significance[i][j] = Some(wilcoxon_signed_rank(&rows[i].accuracies, &rows[j].accuracies)?);
                }
            }
        }
        Ok(AblationReport {
            task,
            seeds,
            best_by_median: best_by(&rows, AblationRow::median),
            best_by_max: best_by(&rows, AblationRow::max),
            rows,
            significance,
            config,
            schema_hashes: Vec::new(),
        })
    }

    pub fn row(&self, combo: ChannelCombo) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.combo == combo)
    }

    /// p-value of row `i` against the best-by-median row.
    pub fn p_vs_best(&self, i: usize) -> Option<f64> {
        self.significance[i][self.best_by_median].map(|r| r.p_value)
    }

    pub fn significant_vs_best(&self, i: usize) -> bool {
        self.p_vs_best(i).is_some_and(|p| p < SIGNIFICANCE_LEVEL)
    }
}

/// Keeps only the channels of `combo`.
pub fn restrict(set: &ChannelSet, combo: ChannelCombo) -> ChannelSet {
    ChannelSet {
        meta: set.meta.clone().filter(|_| combo.contains(Channel::Meta)),
        linguistic: set.linguistic.clone().filter(|_| combo.contains(Channel::Linguistic)),
        embedding: set.embedding.clone().filter(|_| combo.contains(Channel::Embedding)),
        label: set.label,
    }
}

fn union(combos: &[ChannelCombo]) -> ChannelCombo {
    ChannelCombo::new(combos.iter().flat_map(|c| c.channels()))
}

fn split_for<I: Instance>(instances: &[I], seed: u64, config: &AblationConfig) -> Result<Split, EvalError> {
    let s = match config.split_level {
        SplitLevel::Instance => {
            let labels: Vec<usize> = instances.iter().map(|i| i.features().label).collect();
            split(&labels, seed, config.split_ratio)?
        }
        SplitLevel::Session => {
            let groups: Vec<&str> = instances.iter().map(|i| i.locator().session_id.as_str()).collect();
            split_grouped(&groups, seed, config.split_ratio)?
        }
    };
    Ok(s)
}

fn pick<T: Clone>(items: &[T], idx: &[usize]) -> Vec<T> {
    idx.iter().map(|&i| items[i].clone()).collect()
}

/// Stage-one predictions for every utterance, from a speech model trained
/// on this seed's speech training split.
fn predicted_acts(
    speech: &[SpeechInstance],
    extractor: &FeatureExtractor,
    seed: u64,
    config: &AblationConfig,
) -> Result<ActMap, EvalError> {
    let s = split_for(speech, seed, config)?;
    let train_inst = pick(speech, &s.train);
    let schema = fit_schema(&train_inst, extractor);
    let train_sets = channel_sets(&train_inst, &schema, config.speech_channels)?;
    let model_config = AdnnConfig {
        channels: config.speech_channels,
        n_classes: Task::Speech.n_classes(),
        seed,
        ..config.model.clone()
    };
    let model = train(&train_sets, &model_config)?;
    let all_sets = channel_sets(speech, &schema, config.speech_channels)?;
    let preds = model.predict_batch(&all_sets)?;
    Ok(speech
        .iter()
        .zip(preds)
        .map(|(i, p)| (i.locator.clone(), SpeechAct::from_index(p.label).expect("speech model has 12 classes")))
        .collect())
}

fn run_cells(
    train_sets: &[ChannelSet],
    test_sets: &[ChannelSet],
    task: Task,
    seed: u64,
    config: &AblationConfig,
) -> Result<Vec<(f64, ConfusionReport)>, EvalError> {
    let labels = task.label_codes();
    let cell = |combo: &ChannelCombo| -> Result<(f64, ConfusionReport), EvalError> {
        let train_c: Vec<ChannelSet> = train_sets.iter().map(|s| restrict(s, *combo)).collect();
        let test_c: Vec<ChannelSet> = test_sets.iter().map(|s| restrict(s, *combo)).collect();
        let model_config = AdnnConfig {
            channels: *combo,
            n_classes: task.n_classes(),
            seed,
            ..config.model.clone()
        };
        let model = train(&train_c, &model_config)?;
        let preds = model.predict_batch(&test_c)?;
        let mut matrix = vec![vec![0usize; labels.len()]; labels.len()];
        for (p, s) in preds.iter().zip(&test_c) {
            matrix[s.label][p.label] += 1;
        }
        let report = ConfusionReport::from_matrix(labels.clone(), matrix);
        log::info!("{} {combo} seed {seed}: accuracy {:.4}", task.name(), report.accuracy());
        Ok((report.accuracy(), report))
    };
    if config.jobs == 1 {
        return config.combos.iter().map(cell).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.jobs)
        .build()
        .map_err(|e| EvalError::Config(e.to_string()))?;
    pool.install(|| config.combos.par_iter().map(cell).collect())
}

/// Runs every (combination, seed) cell. All combinations of a seed share the
/// same split and the same fitted feature schema, so per-seed accuracies are
/// paired across rows.
pub fn ablate(corpus: &Corpus, task: Task, extractor: &FeatureExtractor, config: &AblationConfig) -> Result<AblationReport, EvalError> {
    if config.combos.is_empty() || config.combos.iter().any(|c| c.is_empty()) {
        return Err(EvalError::Config("at least one non-empty channel combination is required".into()));
    }
    if config.seeds.is_empty() {
        return Err(EvalError::Config("at least one seed is required".into()));
    }
    config.model.validate()?;
    let all_channels = union(&config.combos);

    let speech = make_speech_instances(corpus, extractor)?;
    let search: Vec<SearchInstance> = match task {
        Task::Speech => Vec::new(),
        Task::Search => make_search_instances(corpus, extractor, ActSource::Gold, None)?,
    };

    let mut per_combo: Vec<Vec<(f64, ConfusionReport)>> = vec![Vec::new(); config.combos.len()];
    let mut schema_hashes = Vec::with_capacity(config.seeds.len());
    for &seed in &config.seeds {
        let (train_sets, test_sets) = match task {
            Task::Speech => {
                let s = split_for(&speech, seed, config)?;
                let train_inst = pick(&speech, &s.train);
                let schema = fit_schema(&train_inst, extractor);
                schema_hashes.push(schema.hash());
                (
                    channel_sets(&train_inst, &schema, all_channels)?,
                    channel_sets(&pick(&speech, &s.test), &schema, all_channels)?,
                )
            }
            Task::Search => {
                let s = split_for(&search, seed, config)?;
                let train_inst = pick(&search, &s.train);
                let schema = fit_schema(&train_inst, extractor);
                schema_hashes.push(schema.hash());
                let test_inst = match config.act_source {
                    ActSource::Gold => pick(&search, &s.test),
                    ActSource::Predicted => {
                        let acts = predicted_acts(&speech, extractor, seed, config)?;
                        let predicted = make_search_instances(corpus, extractor, ActSource::Predicted, Some(&acts))?;
                        pick(&predicted, &s.test)
                    }
                };
                (
                    channel_sets(&train_inst, &schema, all_channels)?,
                    channel_sets(&test_inst, &schema, all_channels)?,
                )
            }
        };
        for (k, cell) in run_cells(&train_sets, &test_sets, task, seed, config)?.into_iter().enumerate() {
            per_combo[k].push(cell);
        }
    }

    let rows = config
        .combos
        .iter()
        .zip(per_combo)
        .map(|(&combo, cells)| {
            let (accuracies, confusions) = cells.into_iter().unzip();
            AblationRow {
                combo,
                accuracies,
                confusions,
            }
        })
        .collect();
    let mut report = AblationReport::from_rows(task, config.seeds.clone(), rows, config.clone())?;
    report.schema_hashes = schema_hashes;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_of_known_vectors() {
        assert_eq!(median(&[0.5, 0.7, 0.6]), 0.6);
        assert_eq!(median(&[0.1, 0.4, 0.2, 0.3]), 0.25);
    }

    #[test]
    fn full_ablation_has_seven_combinations() {
        let c = AblationConfig::new(Task::Speech);
        assert_eq!(c.combos.len(), 7);
        assert_eq!(c.seeds.len(), 30);
    }

    #[test]
    fn bests_are_tracked_separately() {
        let row = |combo: &str, acc: &[f64]| AblationRow {
            combo: combo.parse().unwrap(),
            accuracies: acc.to_vec(),
            confusions: Vec::new(),
        };
        let rows = vec![
            row("meta+bert", &[0.80, 0.81, 0.95]),
            row("meta+linguistic+bert", &[0.85, 0.86, 0.87]),
            row("bert", &[0.30, 0.31, 0.29]),
        ];
        let r = AblationReport::from_rows(Task::Speech, vec![1, 2, 3], rows, AblationConfig::new(Task::Speech)).unwrap();
        assert_eq!(r.best_by_median, 1);
        assert_eq!(r.best_by_max, 0);
        assert_eq!(r.p_vs_best(1), None);
        let p = r.p_vs_best(2).unwrap();
        assert_eq!(p, r.significance[1][2].unwrap().p_value);
    }
}
