//! Flat event-per-row TSV and session-per-line JSONL corpus formats.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde_json::{json, Map, Value};

use super::{
    Corpus, CorpusError, Event, SearchAction, SearchActionEvent, Session, Speaker, SpeechAct,
    Utterance,
};

/// Column order of the TSV export.
pub const TSV_COLUMNS: [&str; 13] = [
    "session_id",
    "user_id",
    "task_id",
    "task_complexity",
    "system_id",
    "event_index",
    "event_type",
    "speaker",
    "start_ms",
    "end_ms",
    "text",
    "speech_act",
    "search_action",
];

const SESSION_FIELDS: [&str; 5] = ["session_id", "user_id", "task_id", "task_complexity", "system_id"];
const EVENT_FIELDS: [&str; 8] = [
    "event_index",
    "event_type",
    "speaker",
    "start_ms",
    "end_ms",
    "text",
    "speech_act",
    "search_action",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorpusFormat {
    Tsv,
    Jsonl,
}

impl CorpusFormat {
    pub fn from_path(path: &Path) -> Result<Self, CorpusError> {
        match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
            Some("tsv") | Some("txt") => Ok(CorpusFormat::Tsv),
            Some("jsonl") | Some("ndjson") => Ok(CorpusFormat::Jsonl),
            _ => Err(CorpusError::UnknownFormat(path.display().to_string())),
        }
    }
}

impl std::str::FromStr for CorpusFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "tsv" => Ok(CorpusFormat::Tsv),
            "jsonl" => Ok(CorpusFormat::Jsonl),
            other => Err(format!("unknown corpus format `{other}`")),
        }
    }
}

fn io_err(path: &Path, source: std::io::Error) -> CorpusError {
    CorpusError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub(super) fn load(path: &Path, format: CorpusFormat) -> Result<Corpus, CorpusError> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    if file.metadata().map_err(|e| io_err(path, e))?.len() == 0 {
        return Err(CorpusError::EmptyFile);
    }
    let provenance = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("corpus")
        .to_string();
    let sessions = match format {
        CorpusFormat::Tsv => load_tsv(BufReader::new(file), path)?,
        CorpusFormat::Jsonl => load_jsonl(BufReader::new(file), path)?,
    };
    Ok(Corpus { sessions, provenance })
}

/// Session-level fields repeated on every TSV row.
#[derive(Debug, Clone, PartialEq, Eq)]
struct Header {
    session_id: String,
    user_id: String,
    task_id: String,
    task_complexity: u8,
    system_id: String,
}

fn field<'a>(row: &'a HashMap<&str, String>, name: &str) -> &'a str {
    row.get(name).map(String::as_str).unwrap_or("").trim()
}

fn parse_num<T: std::str::FromStr>(value: &str, name: &str, line: usize) -> Result<T, CorpusError> {
    value.parse().map_err(|_| CorpusError::MalformedRow {
        line,
        reason: format!("`{name}` is not a valid number: `{value}`"),
    })
}

fn parse_header(row: &HashMap<&str, String>, line: usize) -> Result<Header, CorpusError> {
    let session_id = field(row, "session_id");
    if session_id.is_empty() {
        return Err(CorpusError::MalformedRow {
            line,
            reason: "empty session_id".into(),
        });
    }
    Ok(Header {
        session_id: session_id.to_string(),
        user_id: field(row, "user_id").to_string(),
        task_id: field(row, "task_id").to_string(),
        task_complexity: parse_num(field(row, "task_complexity"), "task_complexity", line)?,
        system_id: field(row, "system_id").to_string(),
    })
}

fn parse_event(row: &HashMap<&str, String>, line: usize) -> Result<Event, CorpusError> {
    let event_index: u32 = parse_num(field(row, "event_index"), "event_index", line)?;
    let speech_act = field(row, "speech_act");
    let search_action = field(row, "search_action");
    let start = field(row, "start_ms");
    match field(row, "event_type") {
        "utterance" => {
            if !search_action.is_empty() {
                return Err(CorpusError::MalformedRow {
                    line,
                    reason: "utterance row carries a search_action label".into(),
                });
            }
            if speech_act.is_empty() {
                return Err(CorpusError::MalformedRow {
                    line,
                    reason: "utterance row without a speech_act label".into(),
                });
            }
            let speech_act: SpeechAct = speech_act.parse().map_err(|code| CorpusError::UnknownLabel { code, line })?;
            let speaker: Speaker = field(row, "speaker").parse().map_err(|s| CorpusError::MalformedRow {
                line,
                reason: format!("unknown speaker `{s}`"),
            })?;
            // Text keeps its inner spacing; only emptiness is judged on the trimmed form.
            let text = row.get("text").cloned().unwrap_or_default();
            if text.trim().is_empty() {
                return Err(CorpusError::MalformedRow {
                    line,
                    reason: "empty utterance text".into(),
                });
            }
            Ok(Event::Utterance(Utterance {
                event_index,
                speaker,
                text,
                start_ms: parse_num(start, "start_ms", line)?,
                end_ms: parse_num(field(row, "end_ms"), "end_ms", line)?,
                speech_act,
            }))
        }
        "search_action" => {
            if !speech_act.is_empty() {
                return Err(CorpusError::MalformedRow {
                    line,
                    reason: "search_action row carries a speech_act label".into(),
                });
            }
            match field(row, "speaker").to_ascii_lowercase().as_str() {
                "" | "-" | "agent" => {}
                "user" => return Err(CorpusError::UserSearchAction { line }),
                other => {
                    return Err(CorpusError::MalformedRow {
                        line,
                        reason: format!("unknown speaker `{other}`"),
                    })
                }
            }
            if search_action.is_empty() {
                return Err(CorpusError::MalformedRow {
                    line,
                    reason: "search_action row without a search_action label".into(),
                });
            }
            let action: SearchAction = search_action
                .parse()
                .map_err(|code| CorpusError::UnknownLabel { code, line })?;
            Ok(Event::SearchAction(SearchActionEvent {
                event_index,
                timestamp_ms: parse_num(start, "start_ms", line)?,
                action,
            }))
        }
        other => Err(CorpusError::MalformedRow {
            line,
            reason: format!("unknown event_type `{other}`"),
        }),
    }
}

/// Groups rows into sessions by first appearance of their session id.
#[derive(Default)]
struct SessionAssembler {
    order: Vec<String>,
    sessions: HashMap<String, Session>,
}

impl SessionAssembler {
    fn push(&mut self, header: Header, event: Event, line: usize) -> Result<(), CorpusError> {
        match self.sessions.get_mut(&header.session_id) {
            Some(session) => {
                let same = session.user_id == header.user_id
                    && session.task_id == header.task_id
                    && session.task_complexity == header.task_complexity
                    && session.system_id == header.system_id;
                if !same {
                    return Err(CorpusError::MalformedRow {
                        line,
                        reason: format!("session `{}` has inconsistent session-level fields", header.session_id),
                    });
                }
                session.events.push(event);
            }
            None => {
                self.order.push(header.session_id.clone());
                self.sessions.insert(
                    header.session_id.clone(),
                    Session {
                        session_id: header.session_id,
                        user_id: header.user_id,
                        task_id: header.task_id,
                        task_complexity: header.task_complexity,
                        system_id: header.system_id,
                        events: vec![event],
                    },
                );
            }
        }
        Ok(())
    }

    fn finish(mut self) -> Vec<Session> {
        self.order
            .iter()
            .map(|id| self.sessions.remove(id).expect("assembled session"))
            .collect()
    }
}

fn load_tsv<R: std::io::Read>(reader: R, path: &Path) -> Result<Vec<Session>, CorpusError> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .quoting(false)
        .flexible(true)
        .has_headers(true)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| io_err(path, std::io::Error::other(e)))?
        .clone();
    if headers.is_empty() || (headers.len() == 1 && headers[0].trim().is_empty()) {
        return Err(CorpusError::EmptyFile);
    }
    let names: Vec<String> = headers.iter().map(|h| h.trim().to_string()).collect();
    for col in TSV_COLUMNS {
        if !names.iter().any(|n| n == col) {
            return Err(CorpusError::MissingColumn(col.to_string()));
        }
    }

    let mut assembler = SessionAssembler::default();
    for record in rdr.records() {
        let record = record.map_err(|e| io_err(path, std::io::Error::other(e)))?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        if record.len() == 1 && record[0].trim().is_empty() {
            continue;
        }
        if record.len() != names.len() {
            return Err(CorpusError::MalformedRow {
                line,
                reason: format!("expected {} fields, found {}", names.len(), record.len()),
            });
        }
        let row: HashMap<&str, String> = names
            .iter()
            .map(String::as_str)
            .zip(record.iter().map(str::to_string))
            .collect();
        let header = parse_header(&row, line)?;
        let event = parse_event(&row, line)?;
        assembler.push(header, event, line)?;
    }
    Ok(assembler.finish())
}

fn value_to_field(value: &Value) -> String {
    match value {
        Value::Null => String::new(),
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

fn load_jsonl<R: BufRead>(reader: R, path: &Path) -> Result<Vec<Session>, CorpusError> {
    let mut assembler = SessionAssembler::default();
    let mut saw_content = false;
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| io_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        saw_content = true;
        let value: Value = serde_json::from_str(&line).map_err(|e| CorpusError::MalformedRow {
            line: line_no,
            reason: e.to_string(),
        })?;
        let obj = value.as_object().ok_or_else(|| CorpusError::MalformedRow {
            line: line_no,
            reason: "expected a session object".into(),
        })?;
        let mut session_row: HashMap<&str, String> = HashMap::new();
        for name in SESSION_FIELDS {
            let v = obj.get(name).ok_or_else(|| CorpusError::MissingColumn(name.to_string()))?;
            session_row.insert(name, value_to_field(v));
        }
        let events = obj
            .get("events")
            .ok_or_else(|| CorpusError::MissingColumn("events".into()))?
            .as_array()
            .ok_or_else(|| CorpusError::MalformedRow {
                line: line_no,
                reason: "`events` is not an array".into(),
            })?;
        let header = parse_header(&session_row, line_no)?;
        for ev in events {
            let ev = ev.as_object().ok_or_else(|| CorpusError::MalformedRow {
                line: line_no,
                reason: "event is not an object".into(),
            })?;
            let mut row = session_row.clone();
            for name in EVENT_FIELDS {
                match ev.get(name) {
                    Some(v) => {
                        row.insert(name, value_to_field(v));
                    }
                    // Optional in JSONL: the label column not used by this event type.
                    None if matches!(name, "speech_act" | "search_action" | "text" | "end_ms" | "speaker") => {}
                    None => return Err(CorpusError::MissingColumn(name.to_string())),
                }
            }
            let event = parse_event(&row, line_no)?;
            assembler.push(header.clone(), event, line_no)?;
        }
    }
    if !saw_content {
        return Err(CorpusError::EmptyFile);
    }
    Ok(assembler.finish())
}

/// Tabs and line breaks cannot be represented inside a TSV field.
fn tsv_safe(text: &str) -> String {
    text.replace(['\t', '\n', '\r'], " ")
}

pub(super) fn write(corpus: &Corpus, path: &Path, format: CorpusFormat) -> Result<(), CorpusError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
    }
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut out = BufWriter::new(file);
    let res = match format {
        CorpusFormat::Tsv => write_tsv(corpus, &mut out),
        CorpusFormat::Jsonl => write_jsonl(corpus, &mut out),
    };
    res.and_then(|_| out.flush()).map_err(|e| io_err(path, e))
}

fn write_tsv<W: Write>(corpus: &Corpus, out: &mut W) -> std::io::Result<()> {
    writeln!(out, "{}", TSV_COLUMNS.join("\t"))?;
    for s in &corpus.sessions {
        for ev in &s.events {
            let (event_type, speaker, start, end, text, act, action) = match ev {
                Event::Utterance(u) => (
                    "utterance",
                    u.speaker.as_str(),
                    u.start_ms,
                    u.end_ms,
                    tsv_safe(&u.text),
                    u.speech_act.to_string(),
                    String::new(),
                ),
                Event::SearchAction(a) => (
                    "search_action",
                    "-",
                    a.timestamp_ms,
                    a.timestamp_ms,
                    String::new(),
                    String::new(),
                    a.action.to_string(),
                ),
            };
            writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                tsv_safe(&s.session_id),
                tsv_safe(&s.user_id),
                tsv_safe(&s.task_id),
                s.task_complexity,
                tsv_safe(&s.system_id),
                ev.event_index(),
                event_type,
                speaker,
                start,
                end,
                text,
                act,
                action
            )?;
        }
    }
    Ok(())
}

fn write_jsonl<W: Write>(corpus: &Corpus, out: &mut W) -> std::io::Result<()> {
    for s in &corpus.sessions {
        let events: Vec<Value> = s
            .events
            .iter()
            .map(|ev| match ev {
                Event::Utterance(u) => json!({
                    "event_index": u.event_index,
                    "event_type": "utterance",
                    "speaker": u.speaker.as_str(),
                    "start_ms": u.start_ms,
                    "end_ms": u.end_ms,
                    "text": u.text,
                    "speech_act": u.speech_act.to_string(),
                    "search_action": "",
                }),
                Event::SearchAction(a) => json!({
                    "event_index": a.event_index,
                    "event_type": "search_action",
                    "speaker": "-",
                    "start_ms": a.timestamp_ms,
                    "end_ms": a.timestamp_ms,
                    "text": "",
                    "speech_act": "",
                    "search_action": a.action.to_string(),
                }),
            })
            .collect();
        let mut obj = Map::new();
        obj.insert("session_id".into(), json!(s.session_id));
        obj.insert("user_id".into(), json!(s.user_id));
        obj.insert("task_id".into(), json!(s.task_id));
        obj.insert("task_complexity".into(), json!(s.task_complexity));
        obj.insert("system_id".into(), json!(s.system_id));
        obj.insert("events".into(), Value::Array(events));
        writeln!(out, "{}", Value::Object(obj))?;
    }
    Ok(())
}
