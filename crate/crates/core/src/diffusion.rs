//! DDPM over the normalized 30-dimensional parameter space: linear variance
//! schedule, forward noising, the noise-prediction loss, training with Adam
//! and the ancestral reverse sampler.

use loadinv_nn::{clip_global_norm, Adam, Condition, DenoiserModel, Graph, ParamStore, Tensor};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataio::{Dataset, EventStats};
use crate::error::{CoreError, Result};
use crate::params::ParamSpace;
use crate::seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub steps: usize,
    /// `beta[t - 1]` for `t = 1..=steps`; likewise below.
    pub beta: Vec<f64>,
    pub alpha: Vec<f64>,
    pub alpha_bar: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl Schedule {
    pub const STEPS: usize = 200;
    pub const BETA_START: f64 = 1e-4;
    pub const BETA_END: f64 = 5e-3;

    pub fn standard() -> Self {
        Self::linear(Self::STEPS, Self::BETA_START, Self::BETA_END).expect("valid constants")
    }

    /// Linear betas including both endpoints.
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if steps < 2 || !(0.0 < beta_start && beta_start < beta_end && beta_end < 1.0) {
            return Err(CoreError::Config(format!("bad schedule T={steps} beta {beta_start}..{beta_end}")));
        }
        let beta: Vec<f64> = (0..steps)
            .map(|i| beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64)
            .collect();
        let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bar = Vec::with_capacity(steps);
        let mut acc = 1.0;
        for a in &alpha {
            acc *= a;
            alpha_bar.push(acc);
        }
        let sigma = beta.iter().map(|b| b.sqrt()).collect();
        Ok(Self { steps, beta, alpha, alpha_bar, sigma })
    }

    fn check_t(&self, t: usize) {
        assert!(t >= 1 && t <= self.steps, "step {t} outside 1..={}", self.steps);
    }

    /// `x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps`.
    pub fn q_sample(&self, x0: &[f64], t: usize, eps: &[f64]) -> Vec<f64> {
        self.check_t(t);
        let ab = self.alpha_bar[t - 1];
        let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
        x0.iter().zip(eps).map(|(&x, &e)| a * x + b * e).collect()
    }

    /// One reverse step:
    /// `x_{t-1} = (x_t - beta_t / sqrt(1 - abar_t) eps_hat) / sqrt(alpha_t) + sigma_t z`.
    pub fn p_step(&self, x_t: &[f64], t: usize, eps_hat: &[f64], z: &[f64]) -> Vec<f64> {
        self.check_t(t);
        let i = t - 1;
        let c = self.beta[i] / (1.0 - self.alpha_bar[i]).sqrt();
        let inv = 1.0 / self.alpha[i].sqrt();
        x_t.iter()
            .zip(eps_hat)
            .zip(z)
            .map(|((&x, &e), &zz)| (x - c * e) * inv + self.sigma[i] * zz)
            .collect()
    }
}

pub fn standard_normal_vec<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// Mean over all elements of `(pred - eps)^2`.
pub fn noise_mse(pred: &[f64], eps: &[f64]) -> f64 {
    assert_eq!(pred.len(), eps.len());
    pred.iter().zip(eps).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / pred.len() as f64
}

// ---------------------------------------------------------------- batches

/// Conditioning events of a model resolved against a dataset.
#[derive(Clone, Debug)]
pub struct EventBinding {
    /// Index into the model's event list.
    pub model_event: usize,
    /// Index into the dataset's trajectory blocks.
    pub dataset_event: usize,
    pub stats: EventStats,
}

pub fn bind_events(model: &DenoiserModel, data: &Dataset) -> Result<Vec<EventBinding>> {
    model
        .config
        .events
        .iter()
        .enumerate()
        .map(|(mi, label)| {
            let di = data
                .manifest
                .event_index(label)
                .ok_or_else(|| CoreError::Contract(format!("dataset has no event {label}")))?;
            let stats = data.manifest.stats[di].clone();
            Ok(EventBinding { model_event: mi, dataset_event: di, stats })
        })
        .collect()
}

/// Standardized channel-last conditions for records `idx`.
pub fn batch_conditions(data: &Dataset, bindings: &[EventBinding], idx: &[usize]) -> Result<Vec<Condition<f32>>> {
    bindings
        .iter()
        .map(|b| {
            let mut buf = Vec::with_capacity(idx.len() * crate::dataio::TRAJ_LEN);
            for &i in idx {
                b.stats.standardize_channel_last(data.traj_block(b.dataset_event, i), &mut buf);
            }
            Ok(Condition { event: b.model_event, trajs: Tensor::new(&[idx.len() * crate::clm::N_OUT, 2], buf)? })
        })
        .collect()
}

/// Normalized parameters of records `idx`, row-major.
pub fn batch_x0(data: &Dataset, idx: &[usize]) -> Vec<f64> {
    let space = &data.manifest.space;
    idx.iter().flat_map(|&i| space.normalize(&data.theta(i))).collect()
}

// ---------------------------------------------------------------- training

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr: f64,
    pub max_epochs: usize,
    /// Stop after this many epochs without a new best test loss.
    pub patience: usize,
    pub clip_norm: f64,
    pub seed: u64,
    /// Cap on training records (`None` = whole training split).
    #[serde(default)]
    pub max_train_records: Option<usize>,
    /// Cap on test records used for the per-epoch test loss.
    #[serde(default)]
    pub max_test_records: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 128,
            lr: 1e-4,
            max_epochs: 100,
            patience: 10,
            clip_norm: 1.0,
            seed: 0,
            max_train_records: None,
            max_test_records: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub test_loss: f64,
    pub grad_norm: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_test_loss: f64,
}

fn capped(r: std::ops::Range<usize>, cap: Option<usize>) -> Vec<usize> {
    let n = cap.map_or(r.len(), |c| c.min(r.len()));
    r.take(n).collect()
}

/// Draws `t` and `eps` for a batch and returns `(x_t, steps, eps)`.
fn noise_batch(schedule: &Schedule, x0: &[f64], n_params: usize, rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<usize>, Vec<f64>) {
    let b = x0.len() / n_params;
    let mut xt = Vec::with_capacity(x0.len());
    let mut steps = Vec::with_capacity(b);
    let mut eps_all = Vec::with_capacity(x0.len());
    for r in 0..b {
        let t = rng.random_range(1..=schedule.steps);
        let eps = standard_normal_vec(rng, n_params);
        xt.extend(schedule.q_sample(&x0[r * n_params..(r + 1) * n_params], t, &eps));
        steps.push(t);
        eps_all.extend(eps);
    }
    (xt, steps, eps_all)
}

fn to_f32_tensor(shape: &[usize], v: &[f64]) -> Result<Tensor<f32>> {
    Ok(Tensor::new(shape, v.iter().map(|&x| x as f32).collect())?)
}

/// Mean noise-prediction loss of `model` over `idx` with a fixed noise
/// stream.
pub fn evaluate_loss(
    model: &DenoiserModel,
    store: &ParamStore<f32>,
    data: &Dataset,
    schedule: &Schedule,
    idx: &[usize],
    batch_size: usize,
    seed: u64,
) -> Result<f64> {
    let bindings = bind_events(model, data)?;
    let np = data.n_params();
    let mut rng = seed::rng(seed, &[0x7e57]);
    let mut total = 0.0;
    for chunk in idx.chunks(batch_size) {
        let x0 = batch_x0(data, chunk);
        let (xt, steps, eps) = noise_batch(schedule, &x0, np, &mut rng);
        let conds = batch_conditions(data, &bindings, chunk)?;
        let mut g = Graph::new();
        let x = g.input(to_f32_tensor(&[chunk.len(), np], &xt)?);
        let pred = model.forward(&mut g, store, x, &steps, &conds)?;
        let p: Vec<f64> = g.value(pred).to_f64_vec();
        total += noise_mse(&p, &eps) * chunk.len() as f64;
    }
    Ok(total / idx.len() as f64)
}

/// Trains the denoiser and returns the weights with the best test loss.
pub fn train(
    model: &DenoiserModel,
    init: ParamStore<f32>,
    data: &Dataset,
    schedule: &Schedule,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<(ParamStore<f32>, TrainReport)> {
    if cfg.batch_size == 0 || cfg.max_epochs == 0 {
        return Err(CoreError::Config("batch size and epoch budget must be positive".into()));
    }
    if model.config.n_params != data.n_params() {
        return Err(CoreError::Contract("model and dataset disagree on the parameter count".into()));
    }
    let bindings = bind_events(model, data)?;
    let np = data.n_params();
    let train_idx = capped(data.train_indices(), cfg.max_train_records);
    let test_idx = capped(data.test_indices(), cfg.max_test_records);
    if train_idx.is_empty() || test_idx.is_empty() {
        return Err(CoreError::Data("empty training or test split".into()));
    }
    let mut store = init;
    let mut opt = Adam::new(&store, cfg.lr);
    let mut best = store.clone();
    let mut report = TrainReport { best_test_loss: f64::INFINITY, ..Default::default() };

    for epoch in 1..=cfg.max_epochs {
        let mut order = train_idx.clone();
        order.shuffle(&mut seed::rng(cfg.seed, &[epoch as u64, 0]));
        let mut rng = seed::rng(cfg.seed, &[epoch as u64, 1]);
        let mut sum = 0.0;
        let mut norm_sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let x0 = batch_x0(data, chunk);
            let (xt, steps, eps) = noise_batch(schedule, &x0, np, &mut rng);
            let conds = batch_conditions(data, &bindings, chunk)?;
            let mut g = Graph::new();
            let x = g.input(to_f32_tensor(&[chunk.len(), np], &xt)?);
            let pred = model.forward(&mut g, &store, x, &steps, &conds)?;
            let target = g.input(to_f32_tensor(&[chunk.len(), np], &eps)?);
            let loss = g.mse(pred, target)?;
            let lv = g.value(loss).data()[0] as f64;
            if !lv.is_finite() {
                return Err(CoreError::Numerical(format!("non-finite training loss at epoch {epoch}, batch {batches}")));
            }
            let mut grads = g.backward(loss)?.for_params(&store);
            norm_sum += clip_global_norm(&mut grads, cfg.clip_norm);
            opt.update(&mut store, &grads);
            sum += lv;
            batches += 1;
        }
        let test_loss = evaluate_loss(model, &store, data, schedule, &test_idx, 256, cfg.seed)?;
        if !test_loss.is_finite() {
            return Err(CoreError::Numerical(format!("non-finite test loss at epoch {epoch}")));
        }
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

// ---------------------------------------------------------------- sampling

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSamples {
    /// `n x 30` physical-space samples, clipped into bounds.
    pub samples: Vec<Vec<f64>>,
    pub conditioning: Vec<String>,
    pub seed: u64,
    /// Coordinates moved by clipping, over all samples.
    pub clipped_values: usize,
    /// Samples with at least one clipped coordinate.
    pub clipped_samples: usize,
}

impl PosteriorSamples {
    pub fn out_of_bounds_fraction(&self) -> f64 {
        self.clipped_samples as f64 / self.samples.len().max(1) as f64
    }
}

/// Distribution of the reverse chain's starting point.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Start {
    /// `x_T ~ N(0, I)`.
    #[default]
    Standard,
    /// `x_T ~ N(0, s^2 I)` with `s^2 = abar_T / 3 + 1 - abar_T`, the forward
    /// marginal variance at step `T` under a uniform prior on `[-1, 1]`.
    Marginal,
}

impl Start {
    pub fn is_standard(&self) -> bool {
        *self == Start::Standard
    }

    pub fn scale(&self, schedule: &Schedule) -> f64 {
        match self {
            Start::Standard => 1.0,
            Start::Marginal => {
                let ab = schedule.alpha_bar[schedule.steps - 1];
                (ab / 3.0 + 1.0 - ab).sqrt()
            }
        }
    }
}

/// Runs `n` reverse chains from `x_T ~ N(0, I)` as one batch. Chain `i`
/// draws its start point and noise from its own stream derived from `seed`,
/// so each chain is a pure function of `(seed, i, conditions, weights)`.
/// `conditions` holds standardized channel-last `[512, 2]` observations
/// tagged with model event indices.
pub fn sample_posterior(
    model: &DenoiserModel,
    store: &ParamStore<f32>,
    schedule: &Schedule,
    space: &ParamSpace,
    conditions: &[Condition<f32>],
    n: usize,
    seed: u64,
) -> Result<PosteriorSamples> {
    sample_posterior_from(model, store, schedule, space, conditions, n, seed, Start::Standard)
}

/// [`sample_posterior`] with a chosen start distribution. The standard start
/// reproduces it bit for bit.
#[allow(clippy::too_many_arguments)]
pub fn sample_posterior_from(
    model: &DenoiserModel,
    store: &ParamStore<f32>,
    schedule: &Schedule,
    space: &ParamSpace,
    conditions: &[Condition<f32>],
    n: usize,
    seed: u64,
    start: Start,
) -> Result<PosteriorSamples> {
    let np = model.config.n_params;
    if np != space.len() {
        return Err(CoreError::Contract("model and parameter space disagree on the parameter count".into()));
    }
    let ctx = model.context_tokens(store, conditions)?;
    let mut rngs: Vec<ChaCha8Rng> = (0..n).map(|i| seed::rng(seed, &[i as u64])).collect();
    let scale = start.scale(schedule);
    let mut x: Vec<f64> = rngs.iter_mut().flat_map(|r| standard_normal_vec(r, np)).map(|v| v * scale).collect();
    for t in (1..=schedule.steps).rev() {
        let xt = to_f32_tensor(&[n, np], &x)?;
        let eps = model.predict_shared(store, &xt, &vec![t; n], &ctx)?.to_f64_vec();
        let mut next = Vec::with_capacity(x.len());
        for (i, r) in rngs.iter_mut().enumerate() {
            let z = if t > 1 { standard_normal_vec(r, np) } else { vec![0.0; np] };
            next.extend(schedule.p_step(&x[i * np..(i + 1) * np], t, &eps[i * np..(i + 1) * np], &z));
        }
        x = next;
    }
    let mut samples = Vec::with_capacity(n);
    let (mut clipped_values, mut clipped_samples) = (0, 0);
    for row in x.chunks(np) {
        let mut theta = space.denormalize(row);
        let c = space.clip(&mut theta);
        clipped_values += c;
        clipped_samples += (c > 0) as usize;
        samples.push(theta);
    }
    let mut labels: Vec<(usize, String)> =
        conditions.iter().map(|c| (c.event, model.config.events.get(c.event).cloned().unwrap_or_default())).collect();
    labels.sort();
    Ok(PosteriorSamples {
        samples,
        conditioning: labels.into_iter().map(|l| l.1).collect(),
        seed,
        clipped_values,
        clipped_samples,
    })
}

/// Standardizes one `[p(512), q(512)]` observation for conditioning.
pub fn observation(stats: &EventStats, model_event: usize, block: &[f32]) -> Result<Condition<f32>> {
    let mut buf = Vec::with_capacity(block.len());
    stats.standardize_channel_last(block, &mut buf);
    Ok(Condition { event: model_event, trajs: Tensor::new(&[crate::clm::N_OUT, 2], buf)? })
}
