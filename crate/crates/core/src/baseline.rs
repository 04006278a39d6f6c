//! Supervised baseline: trajectory encoder, transformer encoder, mean pool
//! and a linear head regressing the normalized parameters directly from the
//! ordinary-event trajectory.

use loadinv_nn::layers::{EncoderSpec, Linear, TrajectoryEncoder, TransformerEncoder, TransformerSpec};
use loadinv_nn::{clip_global_norm, Adam, Condition, Graph, NodeId, ParamBuilder, ParamStore, Scalar, Tensor};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dataio::Dataset;
use crate::diffusion::{batch_conditions, batch_x0, noise_mse, EpochLog, EventBinding, TrainConfig, TrainReport};
use crate::error::{CoreError, Result};
use crate::seed;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResTfrConfig {
    pub n_params: usize,
    pub transformer: TransformerSpec,
    pub encoder: EncoderSpec,
    /// Event the model reads.
    pub event: String,
}

impl ResTfrConfig {
    pub fn full(n_params: usize, traj_len: usize) -> Self {
        let d = loadinv_nn::DenoiserConfig::full(n_params, traj_len, vec!["ordinary".into()]);
        Self { n_params, transformer: d.transformer, encoder: d.encoder, event: "ordinary".into() }
    }

    pub fn desk(n_params: usize, traj_len: usize) -> Self {
        let d = loadinv_nn::DenoiserConfig::desk(n_params, traj_len, vec!["ordinary".into()]);
        Self { n_params, transformer: d.transformer, encoder: d.encoder, event: "ordinary".into() }
    }
}

#[derive(Clone, Debug)]
pub struct ResTfrModel {
    pub config: ResTfrConfig,
    traj_enc: TrajectoryEncoder,
    traj_tok: Linear,
    encoder: TransformerEncoder,
    head: Linear,
}

impl ResTfrModel {
    pub fn build(config: ResTfrConfig, pb: &mut ParamBuilder) -> Result<Self> {
        if config.encoder.down2 != config.transformer.width {
            return Err(CoreError::Config("encoder output width must equal model width".into()));
        }
        let w = config.transformer.width;
        let traj_enc = TrajectoryEncoder::new(pb, "traj_enc", &config.encoder);
        let traj_tok = Linear::new(pb, "traj_tok", w, w);
        let encoder = TransformerEncoder::new(pb, "encoder", &config.transformer);
        let head = Linear::new(pb, "head", w, config.n_params);
        Ok(Self { config, traj_enc, traj_tok, encoder, head })
    }

    pub fn init<S: Scalar>(config: ResTfrConfig, seed: u64) -> Result<(Self, ParamStore<S>)> {
        let mut pb = ParamBuilder::new(seed);
        let m = Self::build(config, &mut pb)?;
        Ok((m, pb.finish()))
    }

    /// Normalized parameter predictions `[batch, n_params]` from channel-last
    /// trajectories `[batch * len, 2]`.
    pub fn forward<S: Scalar>(&self, g: &mut Graph<S>, p: &ParamStore<S>, trajs: NodeId, batch: usize) -> Result<NodeId> {
        let tokens = self.config.encoder.tokens();
        let h = self.traj_enc.forward(g, p, trajs, batch)?;
        let h = self.traj_tok.forward(g, p, h)?;
        let h = self.encoder.forward(g, p, h, batch, tokens)?;
        let pooled = g.mean_pool(h, batch)?;
        Ok(self.head.forward(g, p, pooled)?)
    }

    pub fn predict(&self, p: &ParamStore<f32>, trajs: &Tensor<f32>) -> Result<Vec<f64>> {
        let batch = trajs.shape()[0] / self.config.encoder.len;
        let mut g = Graph::new();
        let x = g.input(trajs.clone());
        let out = self.forward(&mut g, p, x, batch)?;
        Ok(g.value(out).to_f64_vec())
    }
}

fn binding(model: &ResTfrModel, data: &Dataset) -> Result<Vec<EventBinding>> {
    let di = data
        .manifest
        .event_index(&model.config.event)
        .ok_or_else(|| CoreError::Contract(format!("dataset has no event {}", model.config.event)))?;
    Ok(vec![EventBinding { model_event: 0, dataset_event: di, stats: data.manifest.stats[di].clone() }])
}

fn batch_loss_value(model: &ResTfrModel, store: &ParamStore<f32>, data: &Dataset, b: &[EventBinding], idx: &[usize]) -> Result<f64> {
    let conds: Vec<Condition<f32>> = batch_conditions(data, b, idx)?;
    let pred = model.predict(store, &conds[0].trajs)?;
    Ok(noise_mse(&pred, &batch_x0(data, idx)))
}

/// Mean squared error on normalized parameters with early stopping on the
/// test split; returns the best weights.
pub fn train(
    model: &ResTfrModel,
    init: ParamStore<f32>,
    data: &Dataset,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<(ParamStore<f32>, TrainReport)> {
    let b = binding(model, data)?;
    let np = data.n_params();
    let take = |r: std::ops::Range<usize>, cap: Option<usize>| -> Vec<usize> {
        let n = cap.map_or(r.len(), |c| c.min(r.len()));
        r.take(n).collect()
    };
    let train_idx = take(data.train_indices(), cfg.max_train_records);
    let test_idx = take(data.test_indices(), cfg.max_test_records);
    let mut store = init;
    let mut opt = Adam::new(&store, cfg.lr);
    let mut best = store.clone();
    let mut report = TrainReport { best_test_loss: f64::INFINITY, ..Default::default() };
    for epoch in 1..=cfg.max_epochs {
        let mut order = train_idx.clone();
        order.shuffle(&mut seed::rng(cfg.seed, &[epoch as u64, 2]));
        let (mut sum, mut norm_sum, mut batches) = (0.0, 0.0, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            let conds = batch_conditions(data, &b, chunk)?;
            let mut g = Graph::new();
            let x = g.input(conds[0].trajs.clone());
            let pred = model.forward(&mut g, &store, x, chunk.len())?;
            let target: Vec<f32> = batch_x0(data, chunk).iter().map(|&v| v as f32).collect();
            let t = g.input(Tensor::new(&[chunk.len(), np], target)?);
            let loss = g.mse(pred, t)?;
            let lv = g.value(loss).data()[0] as f64;
            if !lv.is_finite() {
                return Err(CoreError::Numerical(format!("non-finite baseline loss at epoch {epoch}")));
            }
            let mut grads = g.backward(loss)?.for_params(&store);
            norm_sum += clip_global_norm(&mut grads, cfg.clip_norm);
            opt.update(&mut store, &grads);
            sum += lv;
            batches += 1;
        }
        let mut test_sum = 0.0;
        for chunk in test_idx.chunks(256) {
            test_sum += batch_loss_value(model, &store, data, &b, chunk)? * chunk.len() as f64;
        }
        let test_loss = test_sum / test_idx.len() as f64;
        let log = EpochLog { epoch, train_loss: sum / batches as f64, test_loss, grad_norm: norm_sum / batches as f64 };
        on_epoch(&log);
        report.epochs.push(log);
        if test_loss < report.best_test_loss {
            report.best_test_loss = test_loss;
            report.best_epoch = epoch;
            best = store.clone();
        } else if epoch - report.best_epoch >= cfg.patience {
            break;
        }
    }
    Ok((best, report))
}

/// Physical-space point estimate for one standardized observation.
pub fn estimate(model: &ResTfrModel, store: &ParamStore<f32>, space: &crate::ParamSpace, obs: &Tensor<f32>) -> Result<Vec<f64>> {
    let x = model.predict(store, obs)?;
    let mut theta = space.denormalize(&x);
    space.clip(&mut theta);
    Ok(theta)
}
