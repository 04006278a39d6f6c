//! Transformer denoiser that predicts the diffusion noise on the parameter
//! vector from three token types: one token per parameter, one token for
//! the diffusion step and eight tokens per conditioning trajectory.

use serde::{Deserialize, Serialize};

use crate::embed::sinusoidal_embed;
use crate::error::{NnError, Result};
use crate::graph::{Graph, NodeId};
use crate::layers::{EncoderSpec, Linear, TrajectoryEncoder, TransformerEncoder, TransformerSpec, INIT_STD};
use crate::params::{Init, ParamBuilder, ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const TRAJ_CHANNELS: usize = 2;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DenoiserConfig {
    pub n_params: usize,
    pub transformer: TransformerSpec,
    pub encoder: EncoderSpec,
    /// Event labels the model can be conditioned on, in embedding order.
    pub events: Vec<String>,
}

impl DenoiserConfig {
    /// Widths of the reference architecture.
    pub fn full(n_params: usize, traj_len: usize, events: Vec<String>) -> Self {
        Self {
            n_params,
            transformer: TransformerSpec { width: 256, ffn: 512, layers: 3, heads: 4 },
            encoder: EncoderSpec { in_channels: TRAJ_CHANNELS, len: traj_len, stem: 32, down1: 128, down2: 256 },
            events,
        }
    }

    /// Reduced widths that train on a desktop CPU.
    pub fn desk(n_params: usize, traj_len: usize, events: Vec<String>) -> Self {
        Self {
            n_params,
            transformer: TransformerSpec { width: 64, ffn: 128, layers: 2, heads: 2 },
            encoder: EncoderSpec { in_channels: TRAJ_CHANNELS, len: traj_len, stem: 16, down1: 32, down2: 64 },
            events,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.encoder.down2 != self.transformer.width {
            return Err(NnError::Contract(format!(
                "encoder output width {} must equal model width {}",
                self.encoder.down2, self.transformer.width
            )));
        }
        if !self.transformer.width.is_multiple_of(self.transformer.heads) || !self.transformer.width.is_multiple_of(2) {
            return Err(NnError::Contract("model width must be even and split across heads".into()));
        }
        if self.events.is_empty() {
            return Err(NnError::Contract("at least one conditioning event is required".into()));
        }
        if !self.encoder.len.is_multiple_of(64) {
            return Err(NnError::Contract("trajectory length must be a multiple of 64".into()));
        }
        Ok(())
    }

    pub fn event_index(&self, label: &str) -> Option<usize> {
        self.events.iter().position(|e| e == label)
    }
}

/// One conditioning observation for a whole batch: `trajs` is channel-last
/// `[batch * len, 2]`.
#[derive(Clone, Debug)]
pub struct Condition<S> {
    pub event: usize,
    pub trajs: Tensor<S>,
}

/// Interleaves two channels into the channel-last layout the encoder reads.
pub fn channel_last<S: Scalar>(p: &[f64], q: &[f64]) -> Vec<S> {
    assert_eq!(p.len(), q.len());
    let mut out = Vec::with_capacity(2 * p.len());
    for (&a, &b) in p.iter().zip(q) {
        out.push(S::from_f64_lossy(a));
        out.push(S::from_f64_lossy(b));
    }
    out
}

#[derive(Clone, Debug)]
pub struct DenoiserModel {
    pub config: DenoiserConfig,
    param_w: ParamId,
    param_b: ParamId,
    time_tok: Linear,
    traj_enc: TrajectoryEncoder,
    traj_tok: Linear,
    event_emb: Vec<ParamId>,
    encoder: TransformerEncoder,
    readout_w: ParamId,
    readout_b: ParamId,
}

impl DenoiserModel {
    pub fn build(config: DenoiserConfig, pb: &mut ParamBuilder) -> Result<Self> {
        config.validate()?;
        let w = config.transformer.width;
        let p = config.n_params;
        let param_w = pb.add("param_tok.w", &[p, w], Init::TruncNormal(INIT_STD));
        let param_b = pb.add("param_tok.b", &[p, w], Init::Zeros);
        let time_tok = Linear::new(pb, "time_tok", w, w);
        let traj_enc = TrajectoryEncoder::new(pb, "traj_enc", &config.encoder);
        let traj_tok = Linear::new(pb, "traj_tok", w, w);
        let event_emb = config
            .events
            .iter()
            .map(|e| pb.add(format!("event_emb.{e}"), &[w], Init::TruncNormal(INIT_STD)))
            .collect();
        let encoder = TransformerEncoder::new(pb, "encoder", &config.transformer);
        let readout_w = pb.add("readout.w", &[p, w], Init::TruncNormal(INIT_STD));
        let readout_b = pb.add("readout.b", &[p], Init::Zeros);
        Ok(Self { config, param_w, param_b, time_tok, traj_enc, traj_tok, event_emb, encoder, readout_w, readout_b })
    }

    /// Fresh model and seeded weights.
    pub fn init<S: Scalar>(config: DenoiserConfig, seed: u64) -> Result<(Self, ParamStore<S>)> {
        let mut pb = ParamBuilder::new(seed);
        let model = Self::build(config, &mut pb)?;
        Ok((model, pb.finish()))
    }

    pub fn width(&self) -> usize {
        self.config.transformer.width
    }

    pub fn tokens_per_event(&self) -> usize {
        self.config.encoder.tokens()
    }

    /// Sequence length for `n_conditions` observations.
    pub fn sequence_len(&self, n_conditions: usize) -> usize {
        self.config.n_params + 1 + n_conditions * self.tokens_per_event()
    }

    /// Canonical (event-sorted) order of the conditions. Rejects unknown or
    /// repeated events.
    fn canonical_order<T>(&self, conds: &[T], event_of: impl Fn(&T) -> usize) -> Result<Vec<usize>> {
        if conds.is_empty() || conds.len() > self.config.events.len() {
            return Err(NnError::Contract(format!(
                "need between 1 and {} conditions, got {}",
                self.config.events.len(),
                conds.len()
            )));
        }
        let mut order: Vec<usize> = (0..conds.len()).collect();
        order.sort_by_key(|&i| event_of(&conds[i]));
        for w in order.windows(2) {
            if event_of(&conds[w[0]]) == event_of(&conds[w[1]]) {
                return Err(NnError::Contract("event conditioned twice".into()));
            }
        }
        if let Some(&bad) = order.iter().find(|&&i| event_of(&conds[i]) >= self.event_emb.len()) {
            return Err(NnError::Contract(format!(
                "unknown event id {} (model has {} events)",
                event_of(&conds[bad]),
                self.event_emb.len()
            )));
        }
        Ok(order)
    }

    /// Encoded, tokenized and event-tagged tokens for each condition:
    /// `[batch * 8 * n_conditions, width]` in canonical event order.
    fn context<S: Scalar>(
        &self,
        g: &mut Graph<S>,
        p: &ParamStore<S>,
        conds: &[Condition<S>],
        batch: usize,
    ) -> Result<NodeId> {
        let order = self.canonical_order(conds, |c| c.event)?;
        let n_tok = self.tokens_per_event();
        let len = self.config.encoder.len;
        let mut parts = Vec::with_capacity(order.len());
        for i in order {
            let c = &conds[i];
            if c.trajs.as_matrix() != (batch * len, TRAJ_CHANNELS) {
                return Err(NnError::Shape(format!(
                    "condition trajectories {:?}, expected [{batch} * {len}, 2]",
                    c.trajs.shape()
                )));
            }
            let x = g.input(c.trajs.clone());
            let h = self.traj_enc.forward(g, p, x, batch)?;
            let h = self.traj_tok.forward(g, p, h)?;
            let e = g.param(p, self.event_emb[c.event]);
            let h = g.add_bias(h, e)?;
            parts.push((h, n_tok));
        }
        if parts.len() == 1 {
            return Ok(parts[0].0);
        }
        g.concat_seq(&parts, batch)
    }

    /// Context tokens for a single observation set, reusable across a
    /// whole reverse chain and any number of samples.
    pub fn context_tokens<S: Scalar>(&self, p: &ParamStore<S>, conds: &[Condition<S>]) -> Result<Tensor<S>> {
        let mut g = Graph::new();
        let node = self.context(&mut g, p, conds, 1)?;
        Ok(g.value(node).clone())
    }

    fn head<S: Scalar>(
        &self,
        g: &mut Graph<S>,
        p: &ParamStore<S>,
        x_t: NodeId,
        steps: &[usize],
        ctx: NodeId,
        ctx_tokens: usize,
    ) -> Result<NodeId> {
        let batch = steps.len();
        let w = self.width();
        let np = self.config.n_params;
        if g.value(x_t).as_matrix() != (batch, np) {
            return Err(NnError::Shape(format!(
                "x_t {:?}, expected [{batch}, {np}]",
                g.value(x_t).shape()
            )));
        }
        let pw = g.param(p, self.param_w);
        let pb = g.param(p, self.param_b);
        let param_tokens = g.scalar_embed(x_t, pw, pb)?;

        let mut emb = Vec::with_capacity(batch * w);
        for &t in steps {
            emb.extend(sinusoidal_embed(t, w).into_iter().map(S::from_f64_lossy));
        }
        let te = g.input(Tensor::new(&[batch, w], emb)?);
        let time_token = self.time_tok.forward(g, p, te)?;

        let seq = g.concat_seq(&[(param_tokens, np), (time_token, 1), (ctx, ctx_tokens)], batch)?;
        let tokens = np + 1 + ctx_tokens;
        let h = self.encoder.forward(g, p, seq, batch, tokens)?;
        let rw = g.param(p, self.readout_w);
        let rb = g.param(p, self.readout_b);
        g.token_readout(h, rw, rb, tokens, 0)
    }

    /// Noise prediction `[batch, n_params]` with per-sample trajectories.
    pub fn forward<S: Scalar>(
        &self,
        g: &mut Graph<S>,
        p: &ParamStore<S>,
        x_t: NodeId,
        steps: &[usize],
        conds: &[Condition<S>],
    ) -> Result<NodeId> {
        let ctx = self.context(g, p, conds, steps.len())?;
        self.head(g, p, x_t, steps, ctx, conds.len() * self.tokens_per_event())
    }

    /// Noise prediction with context tokens shared by every sample in the
    /// batch (see [`Self::context_tokens`]).
    pub fn forward_shared<S: Scalar>(
        &self,
        g: &mut Graph<S>,
        p: &ParamStore<S>,
        x_t: NodeId,
        steps: &[usize],
        ctx_tokens: &Tensor<S>,
    ) -> Result<NodeId> {
        let (n, w) = ctx_tokens.as_matrix();
        if w != self.width() || n == 0 || n % self.tokens_per_event() != 0 {
            return Err(NnError::Shape(format!("context tokens {:?}", ctx_tokens.shape())));
        }
        let c = g.input(ctx_tokens.clone());
        let ctx = g.broadcast_batch(c, steps.len());
        self.head(g, p, x_t, steps, ctx, n)
    }

    /// Convenience wrapper returning predictions as plain rows.
    pub fn predict_shared<S: Scalar>(
        &self,
        p: &ParamStore<S>,
        x_t: &Tensor<S>,
        steps: &[usize],
        ctx_tokens: &Tensor<S>,
    ) -> Result<Tensor<S>> {
        let mut g = Graph::new();
        let x = g.input(x_t.clone());
        let out = self.forward_shared(&mut g, p, x, steps, ctx_tokens)?;
        let v = g.value(out).clone();
        if !v.all_finite() {
            return Err(NnError::NonFinite("denoiser output".into()));
        }
        Ok(v)
    }
}
