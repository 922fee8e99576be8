//! Mini-batch Adam training.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::network::{backward, forward};
use super::params::{AdnnParams, InputDims};
use super::{input_dims, AdnnConfig, EpochLog, ModelError, TrainedModel};
use crate::features::{Channel, ChannelSet};

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPSILON: f64 = 1e-7;

const STREAM_INIT: u64 = 0;
const STREAM_SHUFFLE: u64 = 1;
const STREAM_DROPOUT: u64 = 2;

fn rng_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn check_instances(instances: &[ChannelSet], config: &AdnnConfig) -> Result<InputDims, ModelError> {
    let first = instances.first().ok_or(ModelError::EmptyTrainingSet)?;
    let dims = input_dims(first);
    for inst in instances {
        if inst.label >= config.n_classes {
            return Err(ModelError::LabelOutOfRange {
                label: inst.label,
                n_classes: config.n_classes,
            });
        }
        for channel in config.channels.channels() {
            let present = match channel {
                Channel::Meta => inst.meta.is_some(),
                Channel::Linguistic => inst.linguistic.is_some(),
                Channel::Embedding => inst.embedding.is_some(),
            };
            if !present {
                return Err(ModelError::MissingChannel(channel.name()));
            }
            if input_dims(inst).of(channel) != dims.of(channel) {
                return Err(ModelError::ShapeMismatch(format!(
                    "{} width differs between training instances",
                    channel.name()
                )));
            }
        }
    }
    Ok(dims)
}

/// Content digest of the channels a model reads, used to put the training
/// set in an order that does not depend on how it was supplied.
fn digest(inst: &ChannelSet, config: &AdnnConfig) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update((inst.label as u64).to_le_bytes());
    if config.channels.contains(Channel::Meta) {
        if let Some(m) = &inst.meta {
            for field in &m.fields {
                h.update((field.len() as u64).to_le_bytes());
                for v in field {
                    h.update(v.to_le_bytes());
                }
            }
        }
    }
    if config.channels.contains(Channel::Linguistic) {
        if let Some(l) = &inst.linguistic {
            h.update(l.to_bytes());
        }
    }
    if config.channels.contains(Channel::Embedding) {
        if let Some(e) = &inst.embedding {
            h.update((e.rows() as u64).to_le_bytes());
            for v in e.data.iter() {
                h.update(v.to_le_bytes());
            }
        }
    }
    h.finalize().into()
}

struct Adam {
    m: AdnnParams,
    v: AdnnParams,
    t: i32,
}

impl Adam {
    fn new(params: &AdnnParams) -> Self {
        Adam {
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
        }
    }

    fn step(&mut self, params: &mut AdnnParams, grad: &AdnnParams, lr: f64) {
        self.t += 1;
        let lr_t = lr * (1.0 - BETA2.powi(self.t)).sqrt() / (1.0 - BETA1.powi(self.t));
        let grads = grad.named();
        let ms = self.m.named_mut();
        let vs = self.v.named_mut();
        for (((_, mut p), (_, g)), ((_, mut m), (_, mut v))) in
            params.named_mut().into_iter().zip(grads).zip(ms.into_iter().zip(vs))
        {
            ndarray::Zip::from(&mut p)
                .and(&g)
                .and(&mut m)
                .and(&mut v)
                .for_each(|p, &g, m, v| {
                    *m = BETA1 * *m + (1.0 - BETA1) * g;
                    *v = BETA2 * *v + (1.0 - BETA2) * g * g;
                    *p -= lr_t * *m / (v.sqrt() + EPSILON);
                });
        }
    }
}

/// Trains a fresh model. Initialisation, batch order and dropout masks are
/// all drawn from `config.seed`; the result does not depend on the order of
/// `instances`.
pub fn train(instances: &[ChannelSet], config: &AdnnConfig) -> Result<TrainedModel, ModelError> {
    config.validate()?;
    let dims = check_instances(instances, config)?;

    let mut keyed: Vec<([u8; 32], usize)> = instances.iter().enumerate().map(|(i, x)| (digest(x, config), i)).collect();
    keyed.sort();
    let mut order: Vec<usize> = keyed.into_iter().map(|(_, i)| i).collect();

    let mut init_rng = rng_stream(config.seed, STREAM_INIT);
    let mut shuffle_rng = rng_stream(config.seed, STREAM_SHUFFLE);
    let mut dropout_rng = rng_stream(config.seed, STREAM_DROPOUT);

    let mut params = AdnnParams::init(config, dims, &mut init_rng);
    params.round_to_f32();
    let mut adam = Adam::new(&params);
    let mut log = Vec::with_capacity(config.epochs);

    for epoch in 1..=config.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut total = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&ChannelSet> = chunk.iter().map(|&i| &instances[i]).collect();
            let labels: Vec<usize> = batch.iter().map(|x| x.label).collect();
            let cache = forward(&params, config, dims, &batch, Some(&mut dropout_rng))?;
            let (loss, grad) = backward(&params, &cache, &labels);
            total += loss * chunk.len() as f64;
            adam.step(&mut params, &grad, config.learning_rate);
        }
        let loss = total / instances.len() as f64;
        if !loss.is_finite() {
            return Err(ModelError::Diverged(epoch));
        }
        log::debug!("epoch {epoch}: loss {loss:.6}");
        log.push(EpochLog { epoch, loss });
    }
    params.round_to_f32();
    Ok(TrainedModel {
        config: config.clone(),
        dims,
        params,
        schema: None,
        log,
    })
}

/// Evaluation-mode mean cross-entropy of `batch` and its analytic gradient.
pub fn loss_and_gradients(
    params: &AdnnParams,
    config: &AdnnConfig,
    dims: InputDims,
    batch: &[ChannelSet],
) -> Result<(f64, AdnnParams), ModelError> {
    let refs: Vec<&ChannelSet> = batch.iter().collect();
    let labels: Vec<usize> = batch.iter().map(|x| x.label).collect();
    if let Some(&label) = labels.iter().find(|&&l| l >= config.n_classes) {
        return Err(ModelError::LabelOutOfRange {
            label,
            n_classes: config.n_classes,
        });
    }
    let cache = forward(params, config, dims, &refs, None)?;
    Ok(backward(params, &cache, &labels))
}
