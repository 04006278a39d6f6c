//! Layers built on the tape ops: linear maps, layer norm, pre-norm
//! transformer blocks and the strided 1-D convolutional trajectory encoder.

use serde::{Deserialize, Serialize};

use crate::error::{NnError, Result};
use crate::graph::{Graph, NodeId};
use crate::params::{Init, ParamBuilder, ParamId, ParamStore};
use crate::scalar::Scalar;

pub const INIT_STD: f64 = 0.02;

#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    pub fn new(pb: &mut ParamBuilder, name: &str, d_in: usize, d_out: usize) -> Self {
        let w = pb.add(format!("{name}.w"), &[d_in, d_out], Init::TruncNormal(INIT_STD));
        let b = pb.add(format!("{name}.b"), &[d_out], Init::Zeros);
        Self { w, b, d_in, d_out }
    }

    pub fn forward<S: Scalar>(&self, g: &mut Graph<S>, p: &ParamStore<S>, x: NodeId) -> Result<NodeId> {
        let w = g.param(p, self.w);
        let b = g.param(p, self.b);
        let y = g.matmul(x, w)?;
        g.add_bias(y, b)
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new(pb: &mut ParamBuilder, name: &str, d: usize) -> Self {
        Self {
            gamma: pb.add(format!("{name}.gamma"), &[d], Init::Ones),
            beta: pb.add(format!("{name}.beta"), &[d], Init::Zeros),
        }
    }

    pub fn forward<S: Scalar>(&self, g: &mut Graph<S>, p: &ParamStore<S>, x: NodeId) -> Result<NodeId> {
        let gamma = g.param(p, self.gamma);
        let beta = g.param(p, self.beta);
        g.layer_norm(x, gamma, beta)
    }
}

/// Multi-head self-attention with separate query/key/value/output maps.
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub heads: usize,
}

impl MultiHeadAttention {
    pub fn new(pb: &mut ParamBuilder, name: &str, width: usize, heads: usize) -> Self {
        assert!(heads > 0 && width.is_multiple_of(heads), "width must split across heads");
        Self {
            q: Linear::new(pb, &format!("{name}.q"), width, width),
            k: Linear::new(pb, &format!("{name}.k"), width, width),
            v: Linear::new(pb, &format!("{name}.v"), width, width),
            o: Linear::new(pb, &format!("{name}.o"), width, width),
            heads,
        }
    }

    pub fn forward<S: Scalar>(
        &self,
        g: &mut Graph<S>,
        p: &ParamStore<S>,
        x: NodeId,
        batch: usize,
        tokens: usize,
    ) -> Result<NodeId> {
        let q = self.q.forward(g, p, x)?;
        let k = self.k.forward(g, p, x)?;
        let v = self.v.forward(g, p, x)?;
        let a = g.attention(q, k, v, batch, tokens, self.heads)?;
        self.o.forward(g, p, a)
    }
}

/// Pre-norm encoder block: `x + MHA(LN(x))`, then `x + FFN(LN(x))`.
#[derive(Clone, Debug)]
pub struct EncoderLayer {
    pub ln1: LayerNorm,
    pub attn: MultiHeadAttention,
    pub ln2: LayerNorm,
    pub ff1: Linear,
    pub ff2: Linear,
}

impl EncoderLayer {
    pub fn new(pb: &mut ParamBuilder, name: &str, width: usize, ffn: usize, heads: usize) -> Self {
        Self {
            ln1: LayerNorm::new(pb, &format!("{name}.ln1"), width),
            attn: MultiHeadAttention::new(pb, &format!("{name}.attn"), width, heads),
            ln2: LayerNorm::new(pb, &format!("{name}.ln2"), width),
            ff1: Linear::new(pb, &format!("{name}.ff1"), width, ffn),
            ff2: Linear::new(pb, &format!("{name}.ff2"), ffn, width),
        }
    }

    pub fn forward<S: Scalar>(
        &self,
        g: &mut Graph<S>,
        p: &ParamStore<S>,
        x: NodeId,
        batch: usize,
        tokens: usize,
    ) -> Result<NodeId> {
        let h = self.ln1.forward(g, p, x)?;
        let a = self.attn.forward(g, p, h, batch, tokens)?;
        let x = g.add(x, a)?;
        let h = self.ln2.forward(g, p, x)?;
        let h = self.ff1.forward(g, p, h)?;
        let h = g.gelu(h);
        let h = self.ff2.forward(g, p, h)?;
        g.add(x, h)
    }
}

/// Stack of pre-norm blocks followed by a final layer norm. No positional
/// encoding is applied, so the stack is equivariant to token order.
#[derive(Clone, Debug)]
pub struct TransformerEncoder {
    pub layers: Vec<EncoderLayer>,
    pub ln_out: LayerNorm,
}

impl TransformerEncoder {
    pub fn new(pb: &mut ParamBuilder, name: &str, spec: &TransformerSpec) -> Self {
        let layers = (0..spec.layers)
            .map(|i| EncoderLayer::new(pb, &format!("{name}.{i}"), spec.width, spec.ffn, spec.heads))
            .collect();
        Self { layers, ln_out: LayerNorm::new(pb, &format!("{name}.ln_out"), spec.width) }
    }

    pub fn forward<S: Scalar>(
        &self,
        g: &mut Graph<S>,
        p: &ParamStore<S>,
        mut x: NodeId,
        batch: usize,
        tokens: usize,
    ) -> Result<NodeId> {
        for layer in &self.layers {
            x = layer.forward(g, p, x, batch, tokens)?;
        }
        self.ln_out.forward(g, p, x)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransformerSpec {
    pub width: usize,
    pub ffn: usize,
    pub layers: usize,
    pub heads: usize,
}

/// Same-length 1-D convolution, kernel 3, stride 1.
#[derive(Clone, Debug)]
pub struct Conv3 {
    pub lin: Linear,
}

impl Conv3 {
    pub fn new(pb: &mut ParamBuilder, name: &str, ch: usize) -> Self {
        Self { lin: Linear::new(pb, name, 3 * ch, ch) }
    }

    pub fn forward<S: Scalar>(
        &self,
        g: &mut Graph<S>,
        p: &ParamStore<S>,
        x: NodeId,
        batch: usize,
        len: usize,
    ) -> Result<NodeId> {
        let u = g.unfold3(x, batch, len)?;
        self.lin.forward(g, p, u)
    }
}

/// `x + conv(gelu(conv(x)))` at constant channel count.
#[derive(Clone, Debug)]
pub struct ResBlock {
    pub c1: Conv3,
    pub c2: Conv3,
}

impl ResBlock {
    pub fn new(pb: &mut ParamBuilder, name: &str, ch: usize) -> Self {
        Self { c1: Conv3::new(pb, &format!("{name}.c1"), ch), c2: Conv3::new(pb, &format!("{name}.c2"), ch) }
    }

    pub fn forward<S: Scalar>(
        &self,
        g: &mut Graph<S>,
        p: &ParamStore<S>,
        x: NodeId,
        batch: usize,
        len: usize,
    ) -> Result<NodeId> {
        let h = self.c1.forward(g, p, x, batch, len)?;
        let h = g.gelu(h);
        let h = self.c2.forward(g, p, h, batch, len)?;
        g.add(x, h)
    }
}

/// Non-overlapping strided convolution: kernel = stride = `factor`.
///
/// On a channel-last `[batch * len, ch]` layout every output position reads
/// one contiguous run of `factor * ch` values, so the convolution is a
/// reshape followed by a matrix product.
#[derive(Clone, Debug)]
pub struct PatchConv {
    pub lin: Linear,
    pub factor: usize,
}

impl PatchConv {
    pub fn new(pb: &mut ParamBuilder, name: &str, c_in: usize, c_out: usize, factor: usize) -> Self {
        Self { lin: Linear::new(pb, name, factor * c_in, c_out), factor }
    }

    pub fn forward<S: Scalar>(
        &self,
        g: &mut Graph<S>,
        p: &ParamStore<S>,
        x: NodeId,
        batch: usize,
        len: usize,
    ) -> Result<NodeId> {
        let (rows, c_in) = g.value(x).as_matrix();
        if rows != batch * len || !len.is_multiple_of(self.factor) {
            return Err(NnError::Shape(format!(
                "patch conv input [{rows}, {c_in}] for batch {batch} len {len}"
            )));
        }
        let r = g.reshape(x, &[batch * len / self.factor, self.factor * c_in])?;
        self.lin.forward(g, p, r)
    }
}

/// Channel widths of the trajectory encoder.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderSpec {
    pub in_channels: usize,
    pub len: usize,
    pub stem: usize,
    pub down1: usize,
    pub down2: usize,
}

impl EncoderSpec {
    /// Output token count: three stride-4 stages.
    pub fn tokens(&self) -> usize {
        self.len / 64
    }
}

/// Stem (k=4,s=4) -> residual block -> downsample (k=4,s=4) -> residual
/// block -> downsample (k=4,s=4). A `(2, 512)` trajectory becomes 8 tokens.
#[derive(Clone, Debug)]
pub struct TrajectoryEncoder {
    pub spec: EncoderSpec,
    pub stem: PatchConv,
    pub res1: ResBlock,
    pub down1: PatchConv,
    pub res2: ResBlock,
    pub down2: PatchConv,
}

impl TrajectoryEncoder {
    pub fn new(pb: &mut ParamBuilder, name: &str, spec: &EncoderSpec) -> Self {
        assert!(spec.len.is_multiple_of(64), "trajectory length must be a multiple of 64");
        Self {
            stem: PatchConv::new(pb, &format!("{name}.stem"), spec.in_channels, spec.stem, 4),
            res1: ResBlock::new(pb, &format!("{name}.res1"), spec.stem),
            down1: PatchConv::new(pb, &format!("{name}.down1"), spec.stem, spec.down1, 4),
            res2: ResBlock::new(pb, &format!("{name}.res2"), spec.down1),
            down2: PatchConv::new(pb, &format!("{name}.down2"), spec.down1, spec.down2, 4),
            spec: spec.clone(),
        }
    }

    /// `x` is channel-last `[batch * len, in_channels]`; returns
    /// `[batch * tokens, down2]`.
    pub fn forward<S: Scalar>(
        &self,
        g: &mut Graph<S>,
        p: &ParamStore<S>,
        x: NodeId,
        batch: usize,
    ) -> Result<NodeId> {
        let len = self.spec.len;
        let h = self.stem.forward(g, p, x, batch, len)?;
        let h = self.res1.forward(g, p, h, batch, len / 4)?;
        let h = self.down1.forward(g, p, h, batch, len / 4)?;
        let h = self.res2.forward(g, p, h, batch, len / 16)?;
        self.down2.forward(g, p, h, batch, len / 16)
    }
}
