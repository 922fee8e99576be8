//! Token-level annotation providers.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::FeatureError;
use crate::corpus::Locator;

/// Character-class flags of a token.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CharFlags {
    pub alpha: bool,
    pub digit: bool,
    pub punct: bool,
    pub url: bool,
    pub stopword: bool,
    pub oov: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TokenAnnotation {
    pub surface: String,
    /// Entity type, `NONE` outside entities.
    pub ner: String,
    pub flags: CharFlags,
    pub pos_coarse: String,
    pub pos_fine: String,
    pub dep: String,
    /// Offset of the token from the start of its sentence.
    pub sent_offset: usize,
}

impl TokenAnnotation {
    /// Sentence-offset bucket: 0, 1, 2, 3 or 4 for "4+".
    pub fn sent_bucket(&self) -> usize {
        self.sent_offset.min(4)
    }

    pub fn starts_sentence(&self) -> bool {
        self.sent_offset == 0
    }
}

/// Produces one [`TokenAnnotation`] per token under the provider's own
/// tokenization. Implementations must be deterministic and safe to share
/// across threads.
pub trait TokenAnnotator: Send + Sync {
    /// Provider name and version, recorded in feature manifests.
    fn id(&self) -> String;

    fn annotate(&self, text: &str) -> Result<Vec<TokenAnnotation>, FeatureError>;

    /// Annotation of a specific corpus event. Providers backed by
    /// precomputed data look the event up; others annotate the text.
    fn annotate_event(&self, _locator: &Locator, text: &str) -> Result<Vec<TokenAnnotation>, FeatureError> {
        self.annotate(text)
    }
}

/// Label used by the fallback annotator for tags it cannot produce.
pub const OTHER_TAG: &str = "OTHER";

const STOPWORDS: &[&str] = &[
    "a", "about", "above", "after", "again", "all", "am", "an", "and", "any", "are", "as", "at", "be",
    "because", "been", "before", "being", "below", "between", "both", "but", "by", "can", "could", "did",
    "do", "does", "doing", "down", "during", "each", "few", "for", "from", "further", "had", "has",
    "have", "having", "he", "her", "here", "hers", "him", "his", "how", "i", "if", "in", "into", "is",
    "it", "its", "just", "me", "more", "most", "my", "no", "nor", "not", "now", "of", "off", "on",
    "once", "only", "or", "other", "our", "out", "over", "own", "same", "she", "should", "so", "some",
    "such", "than", "that", "the", "their", "them", "then", "there", "these", "they", "this", "those",
    "through", "to", "too", "under", "until", "up", "very", "was", "we", "were", "what", "when",
    "where", "which", "while", "who", "whom", "why", "will", "with", "would", "you", "your",
];

fn url_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?i)^(?:(?:https?://|www\.)\S+|[a-z0-9-]+(?:\.[a-z0-9-]+)*\.(?:com|org|net|edu|gov|io|uk|example)(?:/\S*)?)$")
            .expect("url regex")
    })
}

fn number_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^[$£€]?\d+(?:[.,]\d+)*%?$").expect("number regex"))
}

fn is_punct(c: char) -> bool {
    c.is_ascii_punctuation() || matches!(c, '…' | '“' | '”' | '‘' | '’' | '–' | '—' | '¿' | '¡')
}

fn is_sentence_end(token: &str) -> bool {
    matches!(token, "." | "!" | "?")
}

/// Deterministic rule-based annotator for provider-free runs.
///
/// * Tokens: whitespace chunks with leading and trailing punctuation split
///   off one character at a time; URLs stay whole.
/// * `url`: `http(s)://…`, `www.…` or a dotted host with a common TLD.
/// * `digit`: number-like (`42`, `8.95`, `$116`, `20%`).
/// * `punct`: every character is punctuation.
/// * `alpha`: every character is alphabetic.
/// * `stopword`: lowercase form is in a fixed English stopword list.
/// * `oov`: none of alpha/digit/punct/url holds (mixed tokens such as `l'Homme`).
/// * Sentences end after `.`, `!` or `?` tokens.
/// * NER, POS and dependency tags are all `OTHER`.
#[derive(Debug, Clone, Copy, Default)]
pub struct FallbackAnnotator;

impl FallbackAnnotator {
    pub const ID: &'static str = "fallback@1";

    pub fn tokenize(text: &str) -> Vec<String> {
        let mut tokens = Vec::new();
        for chunk in text.split_whitespace() {
            if url_re().is_match(chunk) {
                tokens.push(chunk.to_string());
                continue;
            }
            let chars: Vec<char> = chunk.chars().collect();
            let mut start = 0;
            let mut end = chars.len();
            while start < end && is_punct(chars[start]) {
                tokens.push(chars[start].to_string());
                start += 1;
            }
            let mut trailing = Vec::new();
            while end > start && is_punct(chars[end - 1]) {
                trailing.push(chars[end - 1].to_string());
                end -= 1;
            }
            if start < end {
                let core: String = chars[start..end].iter().collect();
                tokens.push(core);
            }
            tokens.extend(trailing.into_iter().rev());
        }
        tokens
    }

    pub fn flags(token: &str) -> CharFlags {
        let url = url_re().is_match(token);
        let punct = !token.is_empty() && token.chars().all(is_punct);
        let digit = number_re().is_match(token);
        let alpha = !token.is_empty() && token.chars().all(char::is_alphabetic);
        let stopword = STOPWORDS.binary_search(&token.to_lowercase().as_str()).is_ok();
        CharFlags {
            alpha,
            digit,
            punct,
            url,
            stopword,
            oov: !(alpha || digit || punct || url),
        }
    }
}

impl TokenAnnotator for FallbackAnnotator {
    fn id(&self) -> String {
        Self::ID.to_string()
    }

    fn annotate(&self, text: &str) -> Result<Vec<TokenAnnotation>, FeatureError> {
        let mut offset = 0;
        Ok(Self::tokenize(text)
            .into_iter()
            .map(|surface| {
                let ann = TokenAnnotation {
                    flags: Self::flags(&surface),
                    ner: OTHER_TAG.into(),
                    pos_coarse: OTHER_TAG.into(),
                    pos_fine: OTHER_TAG.into(),
                    dep: OTHER_TAG.into(),
                    sent_offset: offset,
                    surface,
                };
                offset = if is_sentence_end(&ann.surface) { 0 } else { offset + 1 };
                ann
            })
            .collect())
    }
}

/// Column order of the precomputed-annotation TSV.
pub const ANNOTATION_COLUMNS: [&str; 15] = [
    "session_id",
    "event_index",
    "token_index",
    "surface",
    "ner",
    "alpha",
    "digit",
    "punct",
    "url",
    "stopword",
    "oov",
    "pos_coarse",
    "pos_fine",
    "dep",
    "sent_offset",
];

/// Annotations produced offline (e.g. by an external NLP toolkit), keyed by
/// corpus event.
#[derive(Debug, Clone, Default)]
pub struct PrecomputedAnnotator {
    id: String,
    by_event: HashMap<Locator, Vec<TokenAnnotation>>,
}

impl PrecomputedAnnotator {
    pub fn new(id: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            by_event: HashMap::new(),
        }
    }

    pub fn insert(&mut self, locator: Locator, tokens: Vec<TokenAnnotation>) {
        self.by_event.insert(locator, tokens);
    }

    pub fn len(&self) -> usize {
        self.by_event.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_event.is_empty()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, FeatureError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| FeatureError::Io(format!("{}: {e}", path.display())))?;
        let mut lines = text.lines().enumerate();
        let header: Vec<&str> = lines
            .next()
            .ok_or_else(|| FeatureError::Format("empty annotation file".into()))?
            .1
            .split('\t')
            .collect();
        let col = |name: &str| {
            header
                .iter()
                .position(|h| h.trim() == name)
                .ok_or_else(|| FeatureError::Format(format!("missing column `{name}`")))
        };
        let cols: Vec<usize> = ANNOTATION_COLUMNS.iter().map(|c| col(c)).collect::<Result<_, _>>()?;
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("annotations");
        let mut provider = PrecomputedAnnotator::new(format!("precomputed:{stem}"));
        let mut rows: Vec<(Locator, usize, TokenAnnotation)> = Vec::new();
        for (i, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            let bad = |what: &str| FeatureError::Format(format!("line {}: {what}", i + 1));
            if f.len() != header.len() {
                return Err(bad("wrong field count"));
            }
            let get = |k: usize| f[cols[k]].trim();
            let flag = |k: usize| match get(k) {
                "1" | "true" => Ok(true),
                "0" | "false" | "" => Ok(false),
                _ => Err(bad("flags must be 0 or 1")),
            };
            let locator = Locator {
                session_id: get(0).to_string(),
                event_index: get(1).parse().map_err(|_| bad("bad event_index"))?,
            };
            let token_index: usize = get(2).parse().map_err(|_| bad("bad token_index"))?;
            let ann = TokenAnnotation {
                surface: get(3).to_string(),
                ner: get(4).to_string(),
                flags: CharFlags {
                    alpha: flag(5)?,
                    digit: flag(6)?,
                    punct: flag(7)?,
                    url: flag(8)?,
                    stopword: flag(9)?,
                    oov: flag(10)?,
                },
                pos_coarse: get(11).to_string(),
                pos_fine: get(12).to_string(),
                dep: get(13).to_string(),
                sent_offset: get(14).parse().map_err(|_| bad("bad sent_offset"))?,
            };
            rows.push((locator, token_index, ann));
        }
        rows.sort_by(|a, b| (&a.0, a.1).cmp(&(&b.0, b.1)));
        for (locator, _, ann) in rows {
            provider.by_event.entry(locator).or_default().push(ann);
        }
        Ok(provider)
    }
}

impl TokenAnnotator for PrecomputedAnnotator {
    fn id(&self) -> String {
        self.id.clone()
    }

    fn annotate(&self, _text: &str) -> Result<Vec<TokenAnnotation>, FeatureError> {
        Err(FeatureError::ProviderUnavailable(
            "precomputed annotations are only available for corpus events".into(),
        ))
    }

    fn annotate_event(&self, locator: &Locator, _text: &str) -> Result<Vec<TokenAnnotation>, FeatureError> {
        self.by_event
            .get(locator)
            .cloned()
            .ok_or_else(|| FeatureError::ProviderUnavailable(format!("no precomputed annotations for {locator}")))
    }
}

/// Renders annotations in the precomputed-annotation TSV layout.
pub fn annotations_to_tsv<'a>(rows: impl IntoIterator<Item = (&'a Locator, &'a [TokenAnnotation])>) -> String {
    let mut out = ANNOTATION_COLUMNS.join("\t");
    out.push('\n');
    let b = |x: bool| if x { 1 } else { 0 };
    for (loc, tokens) in rows {
        for (i, t) in tokens.iter().enumerate() {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                loc.session_id,
                loc.event_index,
                i,
                t.surface.replace('\t', " "),
                t.ner,
                b(t.flags.alpha),
                b(t.flags.digit),
                b(t.flags.punct),
                b(t.flags.url),
                b(t.flags.stopword),
                b(t.flags.oov),
                t.pos_coarse,
                t.pos_fine,
                t.dep,
                t.sent_offset
            );
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stopword_list_is_sorted_for_binary_search() {
        assert!(STOPWORDS.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn empty_text_has_no_tokens() {
        assert!(FallbackAnnotator.annotate("").unwrap().is_empty());
        assert!(FallbackAnnotator.annotate("   ").unwrap().is_empty());
    }

    #[test]
    fn greeting_splits_final_period() {
        let toks = FallbackAnnotator.annotate("Hi Joanna.").unwrap();
        let surfaces: Vec<_> = toks.iter().map(|t| t.surface.as_str()).collect();
        assert_eq!(surfaces, ["Hi", "Joanna", "."]);
        assert!(toks[2].flags.punct);
        assert!(!toks[0].flags.punct && !toks[1].flags.punct);
        assert!(toks[0].flags.alpha && toks[1].flags.alpha);
    }

    #[test]
    fn url_token_is_flagged() {
        let toks = FallbackAnnotator.annotate("see http://a.example now").unwrap();
        assert_eq!(toks.len(), 3);
        assert!(toks[1].flags.url);
        assert!(!toks[0].flags.url && !toks[2].flags.url);
        assert!(FallbackAnnotator::flags("sephora.com").url);
    }

    #[test]
    fn numbers_and_mixed_tokens() {
        assert!(FallbackAnnotator::flags("8.95").digit);
        assert!(FallbackAnnotator::flags("$116").digit);
        let f = FallbackAnnotator::flags("l'Homme");
        assert!(f.oov && !f.alpha);
        assert!(FallbackAnnotator::flags("The").stopword);
    }

    #[test]
    fn sentence_offsets_reset_after_terminators() {
        let toks = FallbackAnnotator.annotate("Ok. Give me a few minutes!").unwrap();
        let offs: Vec<_> = toks.iter().map(|t| t.sent_offset).collect();
        assert_eq!(offs, [0, 1, 0, 1, 2, 3, 4, 5]);
        assert_eq!(toks[7].sent_bucket(), 4);
        assert!(toks[2].starts_sentence());
    }

    #[test]
    fn precomputed_tsv_round_trip() {
        let loc = Locator {
            session_id: "s1".into(),
            event_index: 3,
        };
        let toks = FallbackAnnotator.annotate("Can you repeat that?").unwrap();
        let tsv = annotations_to_tsv([(&loc, toks.as_slice())]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ann.tsv");
        std::fs::write(&path, tsv).unwrap();
        let provider = PrecomputedAnnotator::load(&path).unwrap();
        assert_eq!(provider.annotate_event(&loc, "ignored").unwrap(), toks);
        let missing = Locator {
            session_id: "s1".into(),
            event_index: 4,
        };
        assert!(matches!(
            provider.annotate_event(&missing, "x"),
            Err(FeatureError::ProviderUnavailable(_))
        ));
    }
}
