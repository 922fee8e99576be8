//! Attention-based BiLSTM classifier over one to three feature channels.
//!
//! Metadata and linguistic channels run through a bidirectional LSTM and an
//! additive attention layer; the embedding channel (the output of a frozen
//! contextual encoder) goes straight to its own attention layer. The
//! per-channel context vectors are concatenated in canonical channel order
//! and fed to a softmax output layer.

mod layers;
mod network;
mod params;
mod persist;
mod train;

use ndarray::{Array1, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::features::{Channel, ChannelCombo, ChannelSet, FeatureSchema};

pub use params::{fused_width, AdnnParams, Attention, Head, InputDims, Lstm, RecurrentBranch};
pub use persist::{load_model, load_model_for, save_model, MANIFEST_FILE, WEIGHTS_MAGIC};
pub use train::{loss_and_gradients, train};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("empty input sequence on channel {0}")]
    EmptySequence(&'static str),
    #[error("label {label} out of range for {n_classes} classes")]
    LabelOutOfRange { label: usize, n_classes: usize },
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("instance lacks the {0} channel")]
    MissingChannel(&'static str),
    #[error("training diverged: non-finite loss in epoch {0}")]
    Diverged(usize),
    #[error("incompatible model artifact: {0}")]
    IncompatibleVersion(String),
    #[error("corrupt model artifact: {0}")]
    CorruptArtifact(String),
    #[error("{0}")]
    Io(String),
    #[error("invalid model configuration: {0}")]
    Config(String),
}

/// Architecture and optimiser settings.
///
/// `encoder_learning_rate` applies to contextual-encoder weights. The
/// bundled encoders are frozen, so it is carried for the record only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdnnConfig {
    pub hidden_units: usize,
    pub dropout: f64,
    pub recurrent_dropout: f64,
    pub post_attention_dropout: f64,
    pub attention_dim: usize,
    pub n_classes: usize,
    pub learning_rate: f64,
    pub encoder_learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub channels: ChannelCombo,
}

impl AdnnConfig {
    pub fn new(n_classes: usize, channels: ChannelCombo) -> Self {
        AdnnConfig {
            hidden_units: 128,
            dropout: 0.25,
            recurrent_dropout: 0.1,
            post_attention_dropout: 0.25,
            attention_dim: 64,
            n_classes,
            learning_rate: 1e-3,
            encoder_learning_rate: 2e-5,
            batch_size: 16,
            epochs: 20,
            seed: 1,
            channels,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: String| Err(ModelError::Config(msg));
        if self.n_classes < 2 {
            return bad(format!("n_classes must be at least 2, got {}", self.n_classes));
        }
        for (name, rate) in [
            ("dropout", self.dropout),
            ("recurrent_dropout", self.recurrent_dropout),
            ("post_attention_dropout", self.post_attention_dropout),
        ] {
            if !(0.0..1.0).contains(&rate) {
                return bad(format!("{name} must lie in [0, 1), got {rate}"));
            }
        }
        if self.channels.is_empty() {
            return bad("at least one channel is required".into());
        }
        if self.hidden_units == 0 || self.attention_dim == 0 || self.batch_size == 0 {
            return bad("hidden_units, attention_dim and batch_size must be positive".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
}

/// A fitted classifier. Immutable once built; `predict` takes `&self`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub config: AdnnConfig,
    pub dims: InputDims,
    pub params: AdnnParams,
    pub schema: Option<FeatureSchema>,
    pub log: Vec<EpochLog>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub label: usize,
    pub distribution: Vec<f64>,
}

impl Prediction {
    pub fn p_max(&self) -> f64 {
        self.distribution[self.label]
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

const PREDICT_CHUNK: usize = 64;

impl TrainedModel {
    pub fn with_schema(mut self, schema: FeatureSchema) -> Self {
        self.schema = Some(schema);
        self
    }

    pub fn predict(&self, instance: &ChannelSet) -> Result<Prediction, ModelError> {
        Ok(self.predict_batch(std::slice::from_ref(instance))?.remove(0))
    }

    pub fn predict_batch(&self, instances: &[ChannelSet]) -> Result<Vec<Prediction>, ModelError> {
        let mut out = Vec::with_capacity(instances.len());
        for chunk in instances.chunks(PREDICT_CHUNK) {
            let refs: Vec<&ChannelSet> = chunk.iter().collect();
            let probs = network::forward(&self.params, &self.config, self.dims, &refs, None)?.probs;
            for row in probs.outer_iter() {
                let distribution = row.to_vec();
                out.push(Prediction {
                    label: argmax(&distribution),
                    distribution,
                });
            }
        }
        Ok(out)
    }

    /// Fraction of instances whose predicted label equals the stored label.
    pub fn accuracy(&self, instances: &[ChannelSet]) -> Result<f64, ModelError> {
        if instances.is_empty() {
            return Ok(0.0);
        }
        let preds = self.predict_batch(instances)?;
        let hits = preds.iter().zip(instances).filter(|(p, i)| p.label == i.label).count();
        Ok(hits as f64 / instances.len() as f64)
    }

    /// Evaluation-mode context vector of one channel.
    pub fn encode_channel(&self, channel: Channel, instance: &ChannelSet) -> Result<Array1<f64>, ModelError> {
        network::encode_channel(&self.params, &self.config, self.dims, channel, instance)
    }
}

/// Additive attention over the rows of `h`: scores `s_t = v·tanh(W h_t)`,
/// weights `softmax(s)`, context `Σ_t α_t h_t`.
pub fn additive_attention(h: ArrayView2<'_, f64>, params: &Attention) -> Result<(Array1<f64>, Array1<f64>), ModelError> {
    if h.nrows() == 0 {
        return Err(ModelError::EmptySequence("attention"));
    }
    if h.ncols() != params.input_width() || params.w.nrows() != params.v.len() {
        return Err(ModelError::ShapeMismatch(format!(
            "attention expects width {} (W {:?}, v {}), got {}",
            params.input_width(),
            params.w.dim(),
            params.v.len(),
            h.ncols()
        )));
    }
    let (ctx, cache) = layers::attention_forward(params, h.to_owned(), vec![0, h.nrows()]);
    Ok((ctx.row(0).to_owned(), cache.weights(0)))
}

/// Concatenates per-channel context vectors in canonical channel order.
pub fn fuse(contexts: impl IntoIterator<Item = (Channel, Array1<f64>)>) -> Array1<f64> {
    let mut parts: Vec<(Channel, Array1<f64>)> = contexts.into_iter().collect();
    parts.sort_by_key(|(c, _)| *c);
    Array1::from_iter(parts.into_iter().flat_map(|(_, v)| v.into_iter()))
}

/// Widths of the channels present in `instance`.
pub fn input_dims(instance: &ChannelSet) -> InputDims {
    InputDims {
        meta: instance
            .meta
            .as_ref()
            .map(|m| m.fields.iter().map(Vec::len).max().unwrap_or(0))
            .unwrap_or(0),
        linguistic: instance.linguistic.as_ref().map(|l| l.data.ncols()).unwrap_or(0),
        embedding: instance.embedding.as_ref().map(|e| e.width()).unwrap_or(0),
    }
}

/// Builds the input matrix a channel feeds into its encoder.
pub(crate) fn channel_input(
    instance: &ChannelSet,
    channel: Channel,
    dims: InputDims,
) -> Result<std::borrow::Cow<'_, Array2<f64>>, ModelError> {
    use std::borrow::Cow;
    let missing = || ModelError::MissingChannel(channel.name());
    let m = match channel {
        Channel::Meta => {
            let meta = instance.meta.as_ref().ok_or_else(missing)?;
            if meta.fields.iter().any(|f| f.len() > dims.meta) {
                return Err(ModelError::ShapeMismatch(format!(
                    "metadata field wider than the model's step width {}",
                    dims.meta
                )));
            }
            Cow::Owned(meta.to_sequence(dims.meta))
        }
        Channel::Linguistic => {
            let ling = instance.linguistic.as_ref().ok_or_else(missing)?;
            if ling.n_tokens == 0 {
                return Err(ModelError::EmptySequence("linguistic"));
            }
            Cow::Owned(ling.tokens().to_owned())
        }
        Channel::Embedding => Cow::Borrowed(&instance.embedding.as_ref().ok_or_else(missing)?.data),
    };
    if m.nrows() == 0 {
        return Err(ModelError::EmptySequence(channel.name()));
    }
    if m.ncols() != dims.of(channel) {
        return Err(ModelError::ShapeMismatch(format!(
            "{} input has width {}, model expects {}",
            channel.name(),
            m.ncols(),
            dims.of(channel)
        )));
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn single_step_attention_is_identity() {
        let p = Attention {
            w: array![[0.3, -0.2], [0.1, 0.5]],
            v: array![1.0, -1.0],
        };
        let h = array![[0.7, -1.3]];
        let (ctx, w) = additive_attention(h.view(), &p).unwrap();
        assert_eq!(w.to_vec(), vec![1.0]);
        assert_eq!(ctx, h.row(0));
    }

    #[test]
    fn identical_rows_get_uniform_weights() {
        let p = Attention {
            w: array![[0.3, -0.2], [0.1, 0.5], [2.0, 0.0]],
            v: array![1.0, -1.0, 0.5],
        };
        let h = Array2::from_shape_fn((4, 2), |(_, j)| j as f64 + 0.5);
        let (_, w) = additive_attention(h.view(), &p).unwrap();
        for x in w.iter() {
            assert!((x - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn attention_rejects_bad_shapes() {
        let p = Attention {
            w: array![[0.3, -0.2]],
            v: array![1.0],
        };
        assert!(matches!(
            additive_attention(Array2::zeros((2, 3)).view(), &p),
            Err(ModelError::ShapeMismatch(_))
        ));
        assert!(matches!(
            additive_attention(Array2::zeros((0, 2)).view(), &p),
            Err(ModelError::EmptySequence(_))
        ));
    }

    #[test]
    fn fuse_is_order_independent() {
        let a = (Channel::Meta, Array1::from(vec![1.0; 4]));
        let b = (Channel::Linguistic, Array1::from(vec![2.0; 6]));
        let c = (Channel::Embedding, Array1::from(vec![3.0; 8]));
        let x = fuse([a.clone(), b.clone(), c.clone()]);
        let y = fuse([c, a, b.clone()]);
        assert_eq!(x.len(), 18);
        assert_eq!(x, y);
        assert_eq!(fuse([b.clone()]), b.1);
    }

    #[test]
    fn argmax_breaks_ties_low() {
        assert_eq!(argmax(&[0.25, 0.5, 0.5, 0.1]), 1);
        assert_eq!(argmax(&[0.5, 0.5]), 0);
    }

    #[test]
    fn config_validation() {
        let mut c = AdnnConfig::new(12, ChannelCombo::FULL);
        assert!(c.validate().is_ok());
        c.n_classes = 1;
        assert!(c.validate().is_err());
        c.n_classes = 4;
        c.dropout = 1.0;
        assert!(c.validate().is_err());
        c.dropout = 0.0;
        c.channels = ChannelCombo::EMPTY;
        assert!(c.validate().is_err());
    }
}
