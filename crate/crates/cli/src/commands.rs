use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use convact_core::annotation::{search_action_codes, speech_act_codes, AgreementReport, AnnotationSet};
use convact_core::cor::{generate_corpus, validate_session, CorGrammar};
use convact_core::corpus::{split, split_grouped, Corpus, CorpusFormat, Taxonomy};
use convact_core::eval::{ablate as run_ablation, render_report, AblationReport, SplitLevel, Task};
use convact_core::features::{
    annotations_to_tsv, build_channels, Channel, FallbackAnnotator, FeatureExtractor, FeatureSchema, PrecomputedAnnotator,
    StubEncoder, TokenAnnotator,
};
use convact_core::model::{load_model, save_model, train as train_model};
use convact_core::pipeline::{
    channel_sets, fit_schema, make_search_instances, make_speech_instances, run_two_stage, ActSource, Instance, Stage,
};
use serde_json::{json, Value};

use crate::config::RunConfig;

pub const MANIFEST: &str = "run_manifest.json";

/// Cache root: `$CONVACT_CACHE`, else the user cache directory.
pub fn cache_dir() -> PathBuf {
    if let Some(dir) = std::env::var_os("CONVACT_CACHE").filter(|d| !d.is_empty()) {
        return PathBuf::from(dir);
    }
    if let Some(dir) = std::env::var_os("XDG_CACHE_HOME").filter(|d| !d.is_empty()) {
        return PathBuf::from(dir).join("convact");
    }
    match std::env::var_os("HOME") {
        Some(home) => PathBuf::from(home).join(".cache").join("convact"),
        None => PathBuf::from(".convact-cache"),
    }
}

fn extractor(config: &RunConfig) -> Result<FeatureExtractor> {
    let annotator: Arc<dyn TokenAnnotator> = match &config.annotations {
        Some(path) => Arc::new(PrecomputedAnnotator::load(path)?),
        None => Arc::new(FallbackAnnotator),
    };
    let encoder: Option<Arc<dyn convact_core::features::ContextualEncoder>> = match config.encoder.as_str() {
        "none" if config.channels.contains(Channel::Embedding) => {
            return Err(crate::UsageError(format!(
                "channel set {} needs a contextual encoder (pass --encoder, or --channels without bert)",
                config.channels
            ))
            .into())
        }
        "none" => None,
        "stub" => Some(Arc::new(StubEncoder {
            width: config.encoder_width,
            ..StubEncoder::default()
        })),
        other => bail!(
            "encoder `{other}` is not available (bundled: none, stub; looked for weights under {})",
            cache_dir().join("encoders").join(other).display()
        ),
    };
    Ok(FeatureExtractor::new(annotator, encoder).with_max_len(config.max_len))
}

fn load_corpus(paths: &[PathBuf]) -> Result<Corpus> {
    let mut sessions = Vec::new();
    let mut provenance = Vec::new();
    for path in paths {
        let c = Corpus::load_auto(path).with_context(|| format!("loading {}", path.display()))?;
        provenance.push(c.provenance);
        sessions.extend(c.sessions);
    }
    Ok(Corpus::new(provenance.join(";"), sessions))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn write_manifest(dir: &Path, command: &str, config: &RunConfig, extractor: &FeatureExtractor, extra: Value) -> Result<()> {
    let mut manifest = json!({
        "software": "convact",
        "version": env!("CARGO_PKG_VERSION"),
        "command": command,
        "config": config.to_flat(),
        "seeds": config.seeds,
        "annotator": extractor.annotator.id(),
        "encoder": extractor.encoder_info().map(|e| e.id),
    });
    if let (Value::Object(m), Value::Object(e)) = (&mut manifest, extra) {
        m.extend(e);
    }
    write(&dir.join(MANIFEST), &(serde_json::to_string_pretty(&manifest)? + "\n"))
}

pub fn corpus_validate(path: &Path) -> Result<ExitCode> {
    let corpus = Corpus::load_auto(path).with_context(|| format!("loading {}", path.display()))?;
    let report = corpus.validate();
    for v in &report.violations {
        println!("{v}");
    }
    println!("{} violations", report.len());
    Ok(if report.is_clean() { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

pub fn corpus_stats(path: &Path, as_json: bool, charts: Option<&Path>) -> Result<ExitCode> {
    let corpus = Corpus::load_auto(path).with_context(|| format!("loading {}", path.display()))?;
    let stats = corpus.stats();
    if as_json {
        println!("{}", serde_json::to_string_pretty(&stats)?);
    } else {
        let mut out = String::new();
        let _ = writeln!(out, "sessions\t{}", stats.sessions);
        let _ = writeln!(out, "utterances\t{} (user {}, agent {})", stats.utterances, stats.user_utterances, stats.agent_utterances);
        let _ = writeln!(out, "search_actions\t{}", stats.search_actions);
        for (act, n) in &stats.speech_acts {
            let _ = writeln!(out, "{}\t{n}\t{}", act.code(), act.name());
        }
        for (action, n) in &stats.search_action_labels {
            let _ = writeln!(out, "{}\t{n}\t{}", action.code(), action.name());
        }
        print!("{out}");
    }
    if let Some(dir) = charts {
        for p in render_report(&[], Some(&stats), dir)? {
            log::info!("wrote {}", p.display());
        }
    }
    Ok(ExitCode::SUCCESS)
}

pub fn kappa(speech: Option<&Path>, search: Option<&Path>, out: Option<&Path>) -> Result<ExitCode> {
    if speech.is_none() && search.is_none() {
        return Err(crate::UsageError("kappa needs --speech and/or --search".into()).into());
    }
    let table = |path: Option<&Path>, codes: Vec<&'static str>| -> Result<_> {
        path.map(|p| -> Result<_> {
            let set = AnnotationSet::load(p).with_context(|| format!("loading {}", p.display()))?;
            Ok(set.agreement(&codes).with_context(|| format!("scoring {}", p.display()))?)
        })
        .transpose()
    };
    let report = AgreementReport {
        speech: table(speech, speech_act_codes())?,
        search: table(search, search_action_codes())?,
    };
    print!("{}", report.to_markdown());
    if let Some(dir) = out {
        create_dir(dir)?;
        write(&dir.join("kappa.tsv"), &report.to_tsv())?;
        write(&dir.join("kappa.md"), &report.to_markdown())?;
    }
    Ok(ExitCode::SUCCESS)
}

fn indices_split<I: Instance>(instances: &[I], config: &RunConfig) -> Result<(Vec<usize>, Vec<usize>)> {
    let s = match config.split_level {
        SplitLevel::Instance => {
            let labels: Vec<usize> = instances.iter().map(|i| i.features().label).collect();
            split(&labels, config.seed, config.split_ratio)?
        }
        SplitLevel::Session => {
            let groups: Vec<&str> = instances.iter().map(|i| i.locator().session_id.as_str()).collect();
            split_grouped(&groups, config.seed, config.split_ratio)?
        }
    };
    Ok((s.train, s.test))
}

fn features_out<I: Instance>(instances: &[I], config: &RunConfig, extractor: &FeatureExtractor) -> Result<ExitCode> {
    let dir = &config.output;
    create_dir(dir)?;
    let schema = fit_schema(instances, extractor);
    schema.save(dir.join("schema.json"))?;
    write(
        &dir.join("annotations.tsv"),
        &annotations_to_tsv(instances.iter().map(|i| (i.locator(), i.features().tokens.as_slice()))),
    )?;
    let mut tsv = String::from("session_id\tevent_index\tlabel\tn_tokens\tmeta\n");
    for inst in instances {
        let set = build_channels(inst.features(), &schema, config.channels)?;
        let meta = set.meta.map(|m| m.flat().iter().map(|v| format!("{v:.6}")).collect::<Vec<_>>().join(","));
        let n_tokens = set.linguistic.map(|l| l.n_tokens.to_string());
        let label = match config.task {
            Task::Speech => convact_core::corpus::SpeechAct::from_index(inst.features().label).map(|a| a.code()),
            Task::Search => convact_core::corpus::SearchAction::from_index(inst.features().label).map(|a| a.code()),
        };
        let _ = writeln!(
            tsv,
            "{}\t{}\t{}\t{}\t{}",
            inst.locator().session_id,
            inst.locator().event_index,
            label.unwrap_or("?"),
            n_tokens.unwrap_or_default(),
            meta.unwrap_or_default()
        );
    }
    write(&dir.join("instances.tsv"), &tsv)?;
    write_manifest(dir, "features extract", config, extractor, json!({ "schema_hash": schema.hash() }))?;
    println!("{} instances, schema {}", instances.len(), &schema.hash()[..12]);
    Ok(ExitCode::SUCCESS)
}

pub fn features_extract(config: &RunConfig) -> Result<ExitCode> {
    let corpus = load_corpus(&config.corpus)?;
    let extractor = extractor(config)?;
    match config.task {
        Task::Speech => features_out(&make_speech_instances(&corpus, &extractor)?, config, &extractor),
        Task::Search => features_out(&make_search_instances(&corpus, &extractor, ActSource::Gold, None)?, config, &extractor),
    }
}

fn train_on<I: Instance + Clone>(instances: &[I], config: &RunConfig, extractor: &FeatureExtractor, all: bool) -> Result<ExitCode> {
    let (train_idx, test_idx) = if all {
        ((0..instances.len()).collect(), Vec::new())
    } else {
        indices_split(instances, config)?
    };
    let pick = |idx: &[usize]| idx.iter().map(|&i| instances[i].clone()).collect::<Vec<I>>();
    let (train_inst, test_inst) = (pick(&train_idx), pick(&test_idx));
    let schema = fit_schema(&train_inst, extractor);
    let train_sets = channel_sets(&train_inst, &schema, config.channels)?;
    let model = train_model(&train_sets, &config.model(config.task.n_classes(), config.channels))?.with_schema(schema.clone());
    let train_acc = model.accuracy(&train_sets)?;
    let test_acc = if test_inst.is_empty() {
        None
    } else {
        Some(model.accuracy(&channel_sets(&test_inst, &schema, config.channels)?)?)
    };

    let dir = &config.output;
    create_dir(dir)?;
    save_model(&model, dir.join("model"))?;
    let metrics = json!({
        "task": config.task.name(),
        "channels": config.channels.to_string(),
        "n_train": train_inst.len(),
        "n_test": test_inst.len(),
        "train_accuracy": train_acc,
        "test_accuracy": test_acc,
    });
    write(&dir.join("metrics.json"), &(serde_json::to_string_pretty(&metrics)? + "\n"))?;
    write_manifest(dir, "train", config, extractor, json!({ "schema_hash": schema.hash() }))?;
    match test_acc {
        Some(t) => println!("train accuracy {train_acc:.4}, held-out accuracy {t:.4}"),
        None => println!("train accuracy {train_acc:.4}"),
    }
    Ok(ExitCode::SUCCESS)
}

pub fn train(config: &RunConfig, all: bool) -> Result<ExitCode> {
    let corpus = load_corpus(&config.corpus)?;
    let extractor = extractor(config)?;
    match config.task {
        Task::Speech => train_on(&make_speech_instances(&corpus, &extractor)?, config, &extractor, all),
        Task::Search => train_on(
            &make_search_instances(&corpus, &extractor, ActSource::Gold, None)?,
            config,
            &extractor,
            all,
        ),
    }
}

pub fn ablate(config: &RunConfig) -> Result<ExitCode> {
    let corpus = load_corpus(&config.corpus)?;
    let extractor = extractor(config)?;
    let report = run_ablation(&corpus, config.task, &extractor, &config.ablation())?;
    let dir = &config.output;
    let written = render_report(std::slice::from_ref(&report), None, dir)?;
    write(&dir.join("ablation.json"), &serde_json::to_string_pretty(&report)?)?;
    write_manifest(dir, "ablate", config, &extractor, json!({ "schema_hash": report.schema_hashes }))?;
    for p in &written {
        log::info!("wrote {}", p.display());
    }
    for (i, row) in report.rows.iter().enumerate() {
        println!(
            "{}\tmax {:.4}\tmedian {:.4}{}",
            row.combo,
            row.max(),
            row.median(),
            if report.significant_vs_best(i) { "\t*" } else { "" }
        );
    }
    Ok(ExitCode::SUCCESS)
}

pub fn pipeline_run(config: &RunConfig, speech_model: &Path, search_model: &Path) -> Result<ExitCode> {
    let corpus = load_corpus(&config.corpus)?;
    let extractor = extractor(config)?;
    let speech = load_model(speech_model).with_context(|| format!("loading {}", speech_model.display()))?;
    let search = load_model(search_model).with_context(|| format!("loading {}", search_model.display()))?;
    let predictions = run_two_stage(&corpus, &extractor, &speech, &search)?;
    let dir = &config.output;
    create_dir(dir)?;
    predictions.write(dir.join("predictions.tsv"))?;
    let hash = |m: &convact_core::model::TrainedModel| m.schema.as_ref().map(FeatureSchema::hash);
    write_manifest(
        dir,
        "pipeline run",
        config,
        &extractor,
        json!({ "schema_hash": { "speech": hash(&speech), "search": hash(&search) } }),
    )?;
    for stage in [Stage::Speech, Stage::Search] {
        let n = predictions.stage(stage).count();
        match predictions.accuracy(stage) {
            Some(acc) => println!("{}: {n} predictions, accuracy {acc:.4}", stage.as_str()),
            None => println!("{}: {n} predictions", stage.as_str()),
        }
    }
    Ok(ExitCode::SUCCESS)
}

pub fn synth(
    sessions: u64,
    turns: usize,
    first_seed: u64,
    grammar: Option<&Path>,
    dump_grammar: Option<&Path>,
    out: &Path,
) -> Result<ExitCode> {
    let grammar = match grammar {
        Some(p) => CorGrammar::load(p)?,
        None => CorGrammar::default_grammar(),
    };
    if let Some(p) = dump_grammar {
        grammar.save(p)?;
    }
    let format = CorpusFormat::from_path(out)?;
    let seeds: Vec<u64> = (first_seed..first_seed + sessions).collect();
    let corpus = generate_corpus(&seeds, turns, &grammar)?;
    let invalid = corpus.sessions.iter().filter(|s| !validate_session(s, &grammar).is_empty()).count();
    if invalid > 0 {
        bail!("{invalid} generated sessions do not satisfy the grammar");
    }
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    corpus.write(out, format)?;
    println!(
        "{} sessions, {} utterances, {} search actions",
        corpus.sessions.len(),
        corpus.utterance_count(),
        corpus.search_action_count()
    );
    Ok(ExitCode::SUCCESS)
}

pub fn report(ablations: &[PathBuf], corpus: Option<&Path>, out: &Path) -> Result<ExitCode> {
    if ablations.is_empty() && corpus.is_none() {
        return Err(crate::UsageError("report needs --ablation and/or --corpus".into()).into());
    }
    let reports = ablations
        .iter()
        .map(|p| -> Result<AblationReport> {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))
        })
        .collect::<Result<Vec<_>>>()?;
    let stats = corpus.map(|p| Corpus::load_auto(p).map(|c| c.stats())).transpose()?;
    let written = render_report(&reports, stats.as_ref(), out)?;
    for p in &written {
        println!("{}", p.display());
    }
    Ok(ExitCode::SUCCESS)
}
