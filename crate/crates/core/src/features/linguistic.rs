//! One-hot token matrices for the linguistic channel.

use std::collections::BTreeSet;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::annotator::{TokenAnnotation, OTHER_TAG};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CategoricalField {
    Ner,
    PosCoarse,
    PosFine,
    Dep,
    /// Sentence-offset bucket rendered as "0".."3" or "4+".
    SentDistance,
}

impl CategoricalField {
    fn value(self, t: &TokenAnnotation) -> String {
        match self {
            CategoricalField::Ner => t.ner.clone(),
            CategoricalField::PosCoarse => t.pos_coarse.clone(),
            CategoricalField::PosFine => t.pos_fine.clone(),
            CategoricalField::Dep => t.dep.clone(),
            CategoricalField::SentDistance => SENT_BUCKETS[t.sent_bucket()].to_string(),
        }
    }
}

pub const SENT_BUCKETS: [&str; 5] = ["0", "1", "2", "3", "4+"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlagField {
    Alpha,
    Digit,
    Punct,
    Url,
    Stopword,
    Oov,
    /// Marks the first token of each sentence.
    SentenceStart,
}

impl FlagField {
    pub const CHAR_CLASSES: [FlagField; 6] = [
        FlagField::Alpha,
        FlagField::Digit,
        FlagField::Punct,
        FlagField::Url,
        FlagField::Stopword,
        FlagField::Oov,
    ];

    fn value(self, t: &TokenAnnotation) -> bool {
        match self {
            FlagField::Alpha => t.flags.alpha,
            FlagField::Digit => t.flags.digit,
            FlagField::Punct => t.flags.punct,
            FlagField::Url => t.flags.url,
            FlagField::Stopword => t.flags.stopword,
            FlagField::Oov => t.flags.oov,
            FlagField::SentenceStart => t.starts_sentence(),
        }
    }
}

/// One column block of the linguistic matrix.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LinguisticBlock {
    /// One-hot over `vocab` followed by a final OTHER column.
    Categorical { field: CategoricalField, vocab: Vec<String> },
    /// Independent 0/1 columns.
    Flags { flags: Vec<FlagField> },
}

impl LinguisticBlock {
    pub fn width(&self) -> usize {
        match self {
            LinguisticBlock::Categorical { vocab, .. } => vocab.len() + 1,
            LinguisticBlock::Flags { flags } => flags.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinguisticSchema {
    pub blocks: Vec<LinguisticBlock>,
    pub max_len: usize,
}

pub const DEFAULT_MAX_LEN: usize = 64;

impl LinguisticSchema {
    pub fn width(&self) -> usize {
        self.blocks.iter().map(LinguisticBlock::width).sum()
    }

    /// Default block layout with vocabularies collected from `tokens`
    /// (sorted; the OTHER tag itself is never a vocabulary entry).
    pub fn fit<'a>(tokens: impl IntoIterator<Item = &'a TokenAnnotation>, max_len: usize) -> Self {
        let fields = [
            CategoricalField::Ner,
            CategoricalField::PosCoarse,
            CategoricalField::PosFine,
            CategoricalField::Dep,
        ];
        let mut vocabs: Vec<BTreeSet<String>> = vec![BTreeSet::new(); fields.len()];
        for t in tokens {
            for (field, vocab) in fields.iter().zip(vocabs.iter_mut()) {
                let v = field.value(t);
                if v != OTHER_TAG {
                    vocab.insert(v);
                }
            }
        }
        let mut blocks: Vec<LinguisticBlock> = fields
            .iter()
            .zip(vocabs)
            .map(|(&field, vocab)| LinguisticBlock::Categorical {
                field,
                vocab: vocab.into_iter().collect(),
            })
            .collect();
        blocks.push(LinguisticBlock::Categorical {
            field: CategoricalField::SentDistance,
            vocab: SENT_BUCKETS.iter().map(|s| s.to_string()).collect(),
        });
        let mut flags = FlagField::CHAR_CLASSES.to_vec();
        flags.push(FlagField::SentenceStart);
        blocks.push(LinguisticBlock::Flags { flags });
        Self { blocks, max_len }
    }
}

/// `max_len × width` token matrix. Rows past `n_tokens` are zero padding.
#[derive(Debug, Clone, PartialEq)]
pub struct LinguisticMatrix {
    pub data: Array2<f64>,
    pub n_tokens: usize,
}

impl LinguisticMatrix {
    /// The non-padding rows.
    pub fn tokens(&self) -> ndarray::ArrayView2<'_, f64> {
        self.data.slice(ndarray::s![..self.n_tokens, ..])
    }

    /// Little-endian byte image of the full matrix, for exact comparisons.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = (self.n_tokens as u64).to_le_bytes().to_vec();
        for v in self.data.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }
}

/// Encodes at most `schema.max_len` tokens (extra tokens are dropped from
/// the tail). Values missing from a block vocabulary go to its OTHER column.
pub fn encode_linguistic(annotations: &[TokenAnnotation], schema: &LinguisticSchema) -> LinguisticMatrix {
    let n = annotations.len().min(schema.max_len);
    let mut data = Array2::zeros((schema.max_len, schema.width()));
    for (row, tok) in annotations.iter().take(n).enumerate() {
        let mut col = 0;
        for block in &schema.blocks {
            match block {
                LinguisticBlock::Categorical { field, vocab } => {
                    let value = field.value(tok);
                    let slot = vocab.iter().position(|v| *v == value).unwrap_or(vocab.len());
                    data[[row, col + slot]] = 1.0;
                }
                LinguisticBlock::Flags { flags } => {
                    for (k, flag) in flags.iter().enumerate() {
                        if flag.value(tok) {
                            data[[row, col + k]] = 1.0;
                        }
                    }
                }
            }
            col += block.width();
        }
    }
    LinguisticMatrix { data, n_tokens: n }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::annotator::{CharFlags, FallbackAnnotator, TokenAnnotator};

    fn token(ner: &str, pos: &str, dep: &str) -> TokenAnnotation {
        TokenAnnotation {
            surface: "x".into(),
            ner: ner.into(),
            flags: CharFlags {
                alpha: true,
                ..Default::default()
            },
            pos_coarse: pos.into(),
            pos_fine: pos.into(),
            dep: dep.into(),
            sent_offset: 0,
        }
    }

    fn small_schema(max_len: usize) -> LinguisticSchema {
        let v = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect::<Vec<_>>();
        LinguisticSchema {
            blocks: vec![
                LinguisticBlock::Categorical {
                    field: CategoricalField::Ner,
                    vocab: v(&["PERSON", "ORG", "GPE", "MONEY"]),
                },
                LinguisticBlock::Categorical {
                    field: CategoricalField::PosCoarse,
                    vocab: v(&["NOUN", "VERB"]),
                },
                LinguisticBlock::Categorical {
                    field: CategoricalField::Dep,
                    vocab: v(&["nsubj", "dobj", "ROOT"]),
                },
                LinguisticBlock::Flags {
                    flags: FlagField::CHAR_CLASSES.to_vec(),
                },
            ],
            max_len,
        }
    }

    #[test]
    fn single_token_one_hot_per_block() {
        let schema = small_schema(1);
        assert_eq!(schema.width(), 18);
        let m = encode_linguistic(&[token("ORG", "ADJ", "ROOT")], &schema);
        let row = m.data.row(0);
        assert_eq!(row.slice(ndarray::s![0..5]).sum(), 1.0);
        assert_eq!(row[1], 1.0); // ORG
        assert_eq!(row.slice(ndarray::s![5..8]).sum(), 1.0);
        assert_eq!(row[7], 1.0); // ADJ is unknown -> OTHER
        assert_eq!(row.slice(ndarray::s![8..12]).sum(), 1.0);
        assert_eq!(row[10], 1.0);
        assert_eq!(row[12], 1.0); // alpha flag
    }

    #[test]
    fn short_inputs_are_zero_padded() {
        let schema = small_schema(4);
        let m = encode_linguistic(&[token("ORG", "NOUN", "ROOT"), token("NONE", "VERB", "dobj")], &schema);
        assert_eq!(m.data.dim(), (4, 18));
        assert_eq!(m.n_tokens, 2);
        assert!(m.data.row(2).iter().all(|&v| v == 0.0));
        assert!(m.data.row(3).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn long_inputs_drop_tail_tokens() {
        let schema = small_schema(2);
        let toks = vec![token("ORG", "NOUN", "ROOT"), token("GPE", "VERB", "dobj"), token("MONEY", "NOUN", "nsubj")];
        let m = encode_linguistic(&toks, &schema);
        assert_eq!(m.n_tokens, 2);
        assert_eq!(m.data[[1, 2]], 1.0); // second token kept (GPE)
    }

    #[test]
    fn fitted_fallback_schema_layout() {
        let toks = FallbackAnnotator.annotate("Hi Joanna. How are you?").unwrap();
        let schema = LinguisticSchema::fit(&toks, DEFAULT_MAX_LEN);
        // ner, pos, pos_fine, dep collapse to OTHER; sentence buckets; 7 flags.
        assert_eq!(schema.width(), 1 + 1 + 1 + 1 + 6 + 7);
        let m = encode_linguistic(&toks, &schema);
        let m2 = encode_linguistic(&toks, &schema);
        assert_eq!(m.to_bytes(), m2.to_bytes());
        // "How" starts the second sentence.
        assert_eq!(m.data[[3, schema.width() - 1]], 1.0);
    }
}
