//! The three feature channels: token-level linguistic one-hots, dialogue
//! metadata and contextual embeddings.
//!
//! Extraction happens in two steps. [`FeatureExtractor`] turns a corpus event
//! into schema-independent [`InstanceFeatures`] (token annotations, raw
//! metadata, embedding rows). Once a [`FeatureSchema`] has been fitted on a
//! training split, [`build_channels`] encodes those into a [`ChannelSet`].

mod annotator;
mod encoder;
mod linguistic;
mod metadata;

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use annotator::{
    annotations_to_tsv, CharFlags, FallbackAnnotator, PrecomputedAnnotator, TokenAnnotation, TokenAnnotator,
    ANNOTATION_COLUMNS, OTHER_TAG,
};
pub use encoder::{embed_text, ContextualEncoder, EmbeddingMatrix, StubEncoder, START_TOKEN};
pub use linguistic::{
    encode_linguistic, CategoricalField, FlagField, LinguisticBlock, LinguisticMatrix, LinguisticSchema,
    DEFAULT_MAX_LEN, SENT_BUCKETS,
};
pub use metadata::{
    encode_metadata, encode_raw_metadata, MetaSchema, MetadataVector, Moments, RawMeta, Standardizer, META_FIELDS,
};

#[derive(Debug, thiserror::Error)]
pub enum FeatureError {
    #[error("annotation provider unavailable: {0}")]
    ProviderUnavailable(String),
    #[error("contextual encoder unavailable: {0}")]
    EncoderUnavailable(String),
    #[error("metadata standardizer missing (fit it on the training split first)")]
    StandardizerMissing,
    #[error("invalid feature configuration: {0}")]
    Config(String),
    #[error("{0}")]
    Io(String),
    #[error("malformed feature file: {0}")]
    Format(String),
}

/// A feature channel. Declaration order is the canonical fusion order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Channel {
    Meta,
    Linguistic,
    #[serde(rename = "bert")]
    Embedding,
}

impl Channel {
    pub const ALL: [Channel; 3] = [Channel::Meta, Channel::Linguistic, Channel::Embedding];

    pub fn name(self) -> &'static str {
        match self {
            Channel::Meta => "meta",
            Channel::Linguistic => "linguistic",
            Channel::Embedding => "bert",
        }
    }

    fn bit(self) -> u8 {
        1 << (self as u8)
    }
}

impl FromStr for Channel {
    type Err = FeatureError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "meta" | "metadata" => Ok(Channel::Meta),
            "linguistic" | "ling" => Ok(Channel::Linguistic),
            "bert" | "embedding" | "embeddings" => Ok(Channel::Embedding),
            other => Err(FeatureError::Config(format!("unknown channel `{other}`"))),
        }
    }
}

/// A subset of channels, always iterated in canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct ChannelCombo(u8);

impl ChannelCombo {
    pub const EMPTY: ChannelCombo = ChannelCombo(0);
    pub const FULL: ChannelCombo = ChannelCombo(0b111);

    pub fn new(channels: impl IntoIterator<Item = Channel>) -> Self {
        ChannelCombo(channels.into_iter().fold(0, |acc, c| acc | c.bit()))
    }

    pub fn contains(self, c: Channel) -> bool {
        self.0 & c.bit() != 0
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_subset_of(self, other: ChannelCombo) -> bool {
        self.0 & !other.0 == 0
    }

    pub fn channels(self) -> impl Iterator<Item = Channel> {
        Channel::ALL.into_iter().filter(move |&c| self.contains(c))
    }

    /// Every non-empty subset of `self`, ordered by size and then by name.
    pub fn subsets(self) -> Vec<ChannelCombo> {
        let mut out: Vec<ChannelCombo> = (1..=self.0)
            .filter(|&m| m & !self.0 == 0)
            .map(ChannelCombo)
            .filter(|c| !c.is_empty())
            .collect();
        out.sort_by_key(|c| (c.len(), c.to_string()));
        out
    }
}

impl fmt::Display for ChannelCombo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = self.channels().map(Channel::name).collect();
        f.write_str(&names.join("+"))
    }
}

impl FromStr for ChannelCombo {
    type Err = FeatureError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let channels = s
            .split([',', '+'])
            .filter(|p| !p.trim().is_empty())
            .map(Channel::from_str)
            .collect::<Result<Vec<_>, _>>()?;
        let combo = ChannelCombo::new(channels);
        if combo.is_empty() {
            return Err(FeatureError::Config("channel set is empty".into()));
        }
        Ok(combo)
    }
}

impl Serialize for ChannelCombo {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for ChannelCombo {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// The encoded channels of one instance. Absent channels are `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSet {
    pub meta: Option<MetadataVector>,
    pub linguistic: Option<LinguisticMatrix>,
    pub embedding: Option<EmbeddingMatrix>,
    pub label: usize,
}

impl ChannelSet {
    pub fn combo(&self) -> ChannelCombo {
        let mut present = Vec::new();
        if self.meta.is_some() {
            present.push(Channel::Meta);
        }
        if self.linguistic.is_some() {
            present.push(Channel::Linguistic);
        }
        if self.embedding.is_some() {
            present.push(Channel::Embedding);
        }
        ChannelCombo::new(present)
    }
}

/// Schema-independent features of one instance.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceFeatures {
    pub tokens: Vec<TokenAnnotation>,
    pub meta: RawMeta,
    pub embedding: Option<Arc<EmbeddingMatrix>>,
    pub label: usize,
}

/// Identity of the encoder a schema was fitted with.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderInfo {
    pub id: String,
    pub width: usize,
}

pub const SCHEMA_VERSION: u32 = 1;

/// Everything needed to encode instances exactly as at training time.
/// Persisted as JSON beside trained models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub version: u32,
    pub annotator: String,
    pub encoder: Option<EncoderInfo>,
    pub linguistic: LinguisticSchema,
    pub meta: MetaSchema,
    pub standardizer: Standardizer,
}

impl FeatureSchema {
    /// Fits vocabularies and standardisation moments on training instances.
    pub fn fit<'a>(train: impl IntoIterator<Item = &'a InstanceFeatures> + Clone, extractor: &FeatureExtractor) -> Self {
        let linguistic = LinguisticSchema::fit(train.clone().into_iter().flat_map(|f| f.tokens.iter()), extractor.max_len);
        let meta = MetaSchema::fit(train.clone().into_iter().map(|f| &f.meta));
        let standardizer = Standardizer::fit(train.into_iter().map(|f| &f.meta));
        FeatureSchema {
            version: SCHEMA_VERSION,
            annotator: extractor.annotator.id(),
            encoder: extractor.encoder_info(),
            linguistic,
            meta,
            standardizer,
        }
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("schema serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), FeatureError> {
        let path = path.as_ref();
        let json = serde_json::to_string_pretty(self).map_err(|e| FeatureError::Format(e.to_string()))?;
        std::fs::write(path, json).map_err(|e| FeatureError::Io(format!("{}: {e}", path.display())))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, FeatureError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| FeatureError::Io(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| FeatureError::Format(e.to_string()))
    }

    pub fn linguistic_width(&self) -> usize {
        self.linguistic.width()
    }

    pub fn meta_width(&self) -> usize {
        self.meta.step_width()
    }
}

/// Provider bundle used to turn events into [`InstanceFeatures`].
#[derive(Clone)]
pub struct FeatureExtractor {
    pub annotator: Arc<dyn TokenAnnotator>,
    pub encoder: Option<Arc<dyn ContextualEncoder>>,
    pub max_len: usize,
}

impl fmt::Debug for FeatureExtractor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FeatureExtractor")
            .field("annotator", &self.annotator.id())
            .field("encoder", &self.encoder.as_ref().map(|e| e.id()))
            .field("max_len", &self.max_len)
            .finish()
    }
}

impl Default for FeatureExtractor {
    fn default() -> Self {
        FeatureExtractor::new(Arc::new(FallbackAnnotator), None)
    }
}

impl FeatureExtractor {
    pub fn new(annotator: Arc<dyn TokenAnnotator>, encoder: Option<Arc<dyn ContextualEncoder>>) -> Self {
        FeatureExtractor {
            annotator,
            encoder,
            max_len: DEFAULT_MAX_LEN,
        }
    }

    pub fn with_max_len(mut self, max_len: usize) -> Self {
        self.max_len = max_len;
        self
    }

    pub fn encoder_info(&self) -> Option<EncoderInfo> {
        self.encoder.as_ref().map(|e| EncoderInfo {
            id: e.id(),
            width: e.width(),
        })
    }

    pub fn embed(&self, text: &str) -> Result<Option<Arc<EmbeddingMatrix>>, FeatureError> {
        match &self.encoder {
            Some(enc) => Ok(Some(Arc::new(enc.embed(text)?))),
            None => Ok(None),
        }
    }
}

/// Encodes the requested channels of one instance under a fitted schema.
pub fn build_channels(
    features: &InstanceFeatures,
    schema: &FeatureSchema,
    combo: ChannelCombo,
) -> Result<ChannelSet, FeatureError> {
    if combo.is_empty() {
        return Err(FeatureError::Config("at least one channel is required".into()));
    }
    let meta = if combo.contains(Channel::Meta) {
        Some(encode_raw_metadata(&features.meta, &schema.meta, Some(&schema.standardizer))?)
    } else {
        None
    };
    let linguistic = combo
        .contains(Channel::Linguistic)
        .then(|| encode_linguistic(&features.tokens, &schema.linguistic));
    let embedding = if combo.contains(Channel::Embedding) {
        let emb = features
            .embedding
            .as_ref()
            .ok_or_else(|| FeatureError::EncoderUnavailable("no contextual encoder configured".into()))?;
        Some(emb.as_ref().clone())
    } else {
        None
    };
    Ok(ChannelSet {
        meta,
        linguistic,
        embedding,
        label: features.label,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn combo_names_and_order() {
        let names: Vec<String> = ChannelCombo::FULL.subsets().iter().map(|c| c.to_string()).collect();
        assert_eq!(
            names,
            [
                "bert",
                "linguistic",
                "meta",
                "linguistic+bert",
                "meta+bert",
                "meta+linguistic",
                "meta+linguistic+bert"
            ]
        );
        let parsed: ChannelCombo = "bert,meta".parse().unwrap();
        assert_eq!(parsed.to_string(), "meta+bert");
        assert!("".parse::<ChannelCombo>().is_err());
        assert!("meta,audio".parse::<ChannelCombo>().is_err());
    }

    #[test]
    fn combo_subsets_of_partial_set() {
        let c: ChannelCombo = "meta,linguistic".parse().unwrap();
        assert_eq!(c.subsets().len(), 3);
        assert!(c.is_subset_of(ChannelCombo::FULL));
        assert!(!ChannelCombo::FULL.is_subset_of(c));
    }
}
