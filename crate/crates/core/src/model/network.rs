//! Batched forward and backward passes through the whole network.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand_chacha::ChaCha8Rng;

use super::layers::{
    attention_backward, attention_forward, dropout_mask, lstm_backward, lstm_forward, softmax_rows, AttentionCache,
    LstmCache,
};
use super::params::{AdnnParams, Attention, InputDims, RecurrentBranch};
use super::{channel_input, AdnnConfig, ModelError};
use crate::features::{Channel, ChannelSet};

pub(crate) struct BranchCache {
    fwd: LstmCache,
    bwd: LstmCache,
    attn: AttentionCache,
    lens: Vec<usize>,
}

enum ChannelCache {
    Recurrent(BranchCache),
    Embedding(AttentionCache),
}

pub(crate) struct ForwardCache {
    channels: Vec<(Channel, usize, ChannelCache)>,
    fused: Array2<f64>,
    post_mask: Option<Array2<f64>>,
    pub(crate) probs: Array2<f64>,
}

fn stack(seqs: &[ArrayView2<'_, f64>], mask: Option<&Array2<f64>>) -> (Array2<f64>, Vec<usize>) {
    let mut offsets = vec![0];
    for s in seqs {
        offsets.push(offsets.last().unwrap() + s.nrows());
    }
    let width = seqs.first().map(|s| s.ncols()).unwrap_or(0);
    let mut out = Array2::zeros((*offsets.last().unwrap(), width));
    for (k, seq) in seqs.iter().enumerate() {
        let mut block = out.slice_mut(s![offsets[k]..offsets[k + 1], ..]);
        block.assign(seq);
        if let Some(m) = mask {
            block *= &m.row(k);
        }
    }
    (out, offsets)
}

fn branch_forward(
    p: &RecurrentBranch,
    seqs: &[ArrayView2<'_, f64>],
    config: &AdnnConfig,
    rng: Option<&mut ChaCha8Rng>,
) -> (Array2<f64>, BranchCache) {
    let batch = seqs.len();
    let hidden = p.fwd.hidden();
    let width = p.fwd.input_width();
    let masks: [Option<Array2<f64>>; 4] = match rng {
        Some(r) => [
            dropout_mask(r, batch, width, config.dropout),
            dropout_mask(r, batch, hidden, config.recurrent_dropout),
            dropout_mask(r, batch, width, config.dropout),
            dropout_mask(r, batch, hidden, config.recurrent_dropout),
        ],
        None => [None, None, None, None],
    };
    let (hf, fwd) = lstm_forward(&p.fwd, seqs, masks[0].as_ref(), masks[1].as_ref());
    let reversed: Vec<ArrayView2<'_, f64>> = seqs.iter().map(|x| x.slice(s![..;-1, ..])).collect();
    let (hb, bwd) = lstm_forward(&p.bwd, &reversed, masks[2].as_ref(), masks[3].as_ref());

    let lens: Vec<usize> = seqs.iter().map(|x| x.nrows()).collect();
    let total: usize = lens.iter().sum();
    let mut states = Array2::zeros((total, 2 * hidden));
    let mut offsets = vec![0];
    for (k, &len) in lens.iter().enumerate() {
        let base = *offsets.last().unwrap();
        for t in 0..len {
            let mut row = states.row_mut(base + t);
            row.slice_mut(s![..hidden]).assign(&hf[t].row(k));
            row.slice_mut(s![hidden..]).assign(&hb[len - 1 - t].row(k));
        }
        offsets.push(base + len);
    }
    let (ctx, attn) = attention_forward(&p.attn, states, offsets);
    (ctx, BranchCache { fwd, bwd, attn, lens })
}

fn branch_backward(p: &RecurrentBranch, cache: &BranchCache, d_ctx: ArrayView2<'_, f64>, grad: &mut RecurrentBranch) {
    let hidden = p.fwd.hidden();
    let batch = cache.lens.len();
    let steps = cache.lens.iter().copied().max().unwrap_or(0);
    let d_states = attention_backward(&p.attn, &cache.attn, d_ctx, &mut grad.attn, true).expect("input gradient requested");
    let mut d_hf = vec![Array2::<f64>::zeros((batch, hidden)); steps];
    let mut d_hb = vec![Array2::<f64>::zeros((batch, hidden)); steps];
    let mut base = 0;
    for (k, &len) in cache.lens.iter().enumerate() {
        for t in 0..len {
            let row = d_states.row(base + t);
            d_hf[t].row_mut(k).assign(&row.slice(s![..hidden]));
            d_hb[len - 1 - t].row_mut(k).assign(&row.slice(s![hidden..]));
        }
        base += len;
    }
    lstm_backward(&p.fwd, &cache.fwd, &d_hf, &mut grad.fwd);
    lstm_backward(&p.bwd, &cache.bwd, &d_hb, &mut grad.bwd);
}

fn embedding_forward(
    p: &Attention,
    seqs: &[ArrayView2<'_, f64>],
    config: &AdnnConfig,
    rng: Option<&mut ChaCha8Rng>,
) -> (Array2<f64>, AttentionCache) {
    let mask = rng.and_then(|r| dropout_mask(r, seqs.len(), p.input_width(), config.dropout));
    let (inputs, offsets) = stack(seqs, mask.as_ref());
    attention_forward(p, inputs, offsets)
}

/// Runs the network on a batch. With `rng` set, dropout is active and its
/// masks are drawn from `rng` in a fixed order.
pub(crate) fn forward(
    params: &AdnnParams,
    config: &AdnnConfig,
    dims: InputDims,
    batch: &[&ChannelSet],
    mut rng: Option<&mut ChaCha8Rng>,
) -> Result<ForwardCache, ModelError> {
    let mut channels = Vec::new();
    let mut contexts = Vec::new();
    for channel in config.channels.channels() {
        let inputs = batch
            .iter()
            .map(|inst| channel_input(inst, channel, dims))
            .collect::<Result<Vec<_>, _>>()?;
        let views: Vec<ArrayView2<'_, f64>> = inputs.iter().map(|m| m.view()).collect();
        let missing = || ModelError::ShapeMismatch(format!("model has no parameters for channel {}", channel.name()));
        let (ctx, cache) = match channel {
            Channel::Meta | Channel::Linguistic => {
                let branch = if channel == Channel::Meta { &params.meta } else { &params.linguistic };
                let branch = branch.as_ref().ok_or_else(missing)?;
                let (ctx, cache) = branch_forward(branch, &views, config, rng.as_deref_mut());
                (ctx, ChannelCache::Recurrent(cache))
            }
            Channel::Embedding => {
                let attn = params.embedding.as_ref().ok_or_else(missing)?;
                let (ctx, cache) = embedding_forward(attn, &views, config, rng.as_deref_mut());
                (ctx, ChannelCache::Embedding(cache))
            }
        };
        channels.push((channel, ctx.ncols(), cache));
        contexts.push(ctx);
    }
    let views: Vec<_> = contexts.iter().map(|c| c.view()).collect();
    let mut fused = ndarray::concatenate(Axis(1), &views).map_err(|e| ModelError::ShapeMismatch(e.to_string()))?;
    if fused.ncols() != params.head.w.ncols() {
        return Err(ModelError::ShapeMismatch(format!(
            "fused width {} does not match head width {}",
            fused.ncols(),
            params.head.w.ncols()
        )));
    }
    let post_mask = rng.and_then(|r| dropout_mask(r, batch.len(), fused.ncols(), config.post_attention_dropout));
    if let Some(m) = &post_mask {
        fused *= m;
    }
    let mut logits = fused.dot(&params.head.w.t());
    logits += &params.head.b;
    let probs = softmax_rows(&logits);
    Ok(ForwardCache {
        channels,
        fused,
        post_mask,
        probs,
    })
}

/// Mean cross-entropy of the batch and its gradient with respect to every
/// parameter.
pub(crate) fn backward(params: &AdnnParams, cache: &ForwardCache, labels: &[usize]) -> (f64, AdnnParams) {
    let n = labels.len() as f64;
    let mut grad = params.zeros_like();
    let mut loss = 0.0;
    let mut d_logits = cache.probs.clone();
    for (b, &y) in labels.iter().enumerate() {
        loss -= cache.probs[[b, y]].max(f64::MIN_POSITIVE).ln();
        d_logits[[b, y]] -= 1.0;
    }
    d_logits /= n;
    grad.head.w = d_logits.t().dot(&cache.fused);
    grad.head.b = d_logits.sum_axis(Axis(0));
    let mut d_fused = d_logits.dot(&params.head.w);
    if let Some(m) = &cache.post_mask {
        d_fused *= m;
    }
    let mut col = 0;
    for (channel, width, ch_cache) in &cache.channels {
        let d_ctx = d_fused.slice(s![.., col..col + width]);
        match (channel, ch_cache) {
            (Channel::Meta, ChannelCache::Recurrent(c)) => {
                branch_backward(params.meta.as_ref().unwrap(), c, d_ctx, grad.meta.as_mut().unwrap())
            }
            (Channel::Linguistic, ChannelCache::Recurrent(c)) => branch_backward(
                params.linguistic.as_ref().unwrap(),
                c,
                d_ctx,
                grad.linguistic.as_mut().unwrap(),
            ),
            (Channel::Embedding, ChannelCache::Embedding(c)) => {
                attention_backward(params.embedding.as_ref().unwrap(), c, d_ctx, grad.embedding.as_mut().unwrap(), false);
            }
            _ => unreachable!("cache kind follows channel kind"),
        }
        col += width;
    }
    (loss / n, grad)
}

/// Evaluation-mode context vector of a single channel.
pub(crate) fn encode_channel(
    params: &AdnnParams,
    config: &AdnnConfig,
    dims: InputDims,
    channel: Channel,
    instance: &ChannelSet,
) -> Result<Array1<f64>, ModelError> {
    let input = channel_input(instance, channel, dims)?;
    let views = [input.view()];
    let missing = || ModelError::MissingChannel(channel.name());
    let ctx = match channel {
        Channel::Meta => branch_forward(params.meta.as_ref().ok_or_else(missing)?, &views, config, None).0,
        Channel::Linguistic => branch_forward(params.linguistic.as_ref().ok_or_else(missing)?, &views, config, None).0,
        Channel::Embedding => embedding_forward(params.embedding.as_ref().ok_or_else(missing)?, &views, config, None).0,
    };
    Ok(ctx.row(0).to_owned())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{ChannelCombo, LinguisticMatrix, MetadataVector};
    use rand::{Rng, SeedableRng};

    #[test]
    fn gradients_hold_with_dropout_masks() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let config = AdnnConfig {
            hidden_units: 3,
            attention_dim: 2,
            ..AdnnConfig::new(2, ChannelCombo::new([Channel::Meta, Channel::Linguistic]))
        };
        let dims = InputDims {
            meta: 2,
            linguistic: 3,
            embedding: 0,
        };
        let batch: Vec<ChannelSet> = (0..4)
            .map(|i| ChannelSet {
                meta: Some(MetadataVector {
                    fields: (0..8).map(|_| vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).collect(),
                }),
                linguistic: Some(LinguisticMatrix {
                    data: Array2::from_shape_fn((5, 3), |_| rng.random_range(-1.0..1.0)),
                    n_tokens: 2 + i,
                }),
                embedding: None,
                label: i % 2,
            })
            .collect();
        let refs: Vec<&ChannelSet> = batch.iter().collect();
        let labels: Vec<usize> = batch.iter().map(|x| x.label).collect();
        let mut params = AdnnParams::init(&config, dims, &mut rng);
        let loss_at = |p: &AdnnParams| {
            let mut r = ChaCha8Rng::seed_from_u64(99);
            let cache = forward(p, &config, dims, &refs, Some(&mut r)).unwrap();
            backward(p, &cache, &labels)
        };
        let (_, grad) = loss_at(&params);
        let analytic: Vec<Vec<f64>> = grad.named().into_iter().map(|(_, t)| t.iter().copied().collect()).collect();
        let eps = 1e-6;
        for (k, a) in analytic.iter().enumerate() {
            for (idx, &g) in a.iter().enumerate() {
                let bump = |p: &mut AdnnParams, d: f64| *p.named_mut()[k].1.iter_mut().nth(idx).unwrap() += d;
                bump(&mut params, eps);
                let up = loss_at(&params).0;
                bump(&mut params, -2.0 * eps);
                let down = loss_at(&params).0;
                bump(&mut params, eps);
                let numeric = (up - down) / (2.0 * eps);
                let rel = (g - numeric).abs() / (g.abs() + numeric.abs()).max(1e-7);
                assert!(rel < 1e-4, "tensor {k}[{idx}]: {g} vs {numeric}");
            }
        }
    }
}
