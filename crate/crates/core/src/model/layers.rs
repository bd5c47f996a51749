//! Building blocks shared by both architectures.

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::autodiff::{Graph, Var};
use super::params::{truncated_normal, ParamId, ParamStore};
use super::trace::{AttentionMap, Stream};

pub(crate) const INIT_STD: f64 = 0.02;

/// Per-pass state: dropout randomness and the attention trace being recorded.
pub(crate) struct Pass {
    dropout: f64,
    rng: Option<ChaCha8Rng>,
    record: bool,
    pub maps: Vec<AttentionMap>,
}

impl Pass {
    pub fn eval() -> Self {
        Self { dropout: 0.0, rng: None, record: true, maps: Vec::new() }
    }

    pub fn train(dropout: f64, rng: ChaCha8Rng) -> Self {
        Self { dropout, rng: Some(rng), record: false, maps: Vec::new() }
    }

    pub fn dropout(&mut self, g: &mut Graph, x: Var) -> Var {
        let rate = self.dropout;
        let Some(rng) = self.rng.as_mut().filter(|_| rate > 0.0) else {
            return x;
        };
        let keep = 1.0 / (1.0 - rate);
        let mask = Array2::from_shape_simple_fn(g.value(x).raw_dim(), || {
            if rng.random::<f64>() < rate {
                0.0
            } else {
                keep
            }
        });
        g.mul_const(x, mask)
    }
}

/// Where an attention block sits, for tagging its trace entries.
#[derive(Clone, Copy)]
pub(crate) struct TraceTag {
    pub stream: Stream,
    pub layer: usize,
    pub in_cross_layer: bool,
    pub query_offset: usize,
    pub key_offset: usize,
}

pub(crate) struct Init<'a> {
    pub store: &'a mut ParamStore,
    pub rng: &'a mut ChaCha8Rng,
}

impl Init<'_> {
    pub fn normal(&mut self, name: &str, rows: usize, cols: usize) -> ParamId {
        let v = truncated_normal(self.rng, rows, cols, INIT_STD);
        self.store.insert(name, v)
    }

    /// Weight matrix with standard deviation `1/sqrt(rows)`, so a product
    /// keeps the scale of its input at any width.
    pub fn fan_in(&mut self, name: &str, rows: usize, cols: usize) -> ParamId {
        let v = truncated_normal(self.rng, rows, cols, (rows as f64).recip().sqrt());
        self.store.insert(name, v)
    }

    pub fn zeros(&mut self, name: &str, rows: usize, cols: usize) -> ParamId {
        self.store.insert(name, Array2::zeros((rows, cols)))
    }

    pub fn ones(&mut self, name: &str, rows: usize, cols: usize) -> ParamId {
        self.store.insert(name, Array2::ones((rows, cols)))
    }
}

#[derive(Clone)]
pub(crate) struct Linear {
    weight: ParamId,
    bias: Option<ParamId>,
}

impl Linear {
    pub fn new(init: &mut Init, name: &str, input: usize, output: usize) -> Self {
        Self {
            weight: init.fan_in(&format!("{name}.weight"), input, output),
            bias: Some(init.zeros(&format!("{name}.bias"), 1, output)),
        }
    }

    pub fn without_bias(init: &mut Init, name: &str, input: usize, output: usize) -> Self {
        Self {
            weight: init.fan_in(&format!("{name}.weight"), input, output),
            bias: None,
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let w = g.param(self.weight);
        let y = g.matmul(x, w);
        match self.bias {
            Some(b) => {
                let b = g.param(b);
                g.add_row(y, b)
            }
            None => y,
        }
    }
}

#[derive(Clone)]
pub(crate) struct LayerNorm {
    gain: ParamId,
    bias: ParamId,
}

impl LayerNorm {
    pub fn new(init: &mut Init, name: &str, dim: usize) -> Self {
        Self {
            gain: init.ones(&format!("{name}.gain"), 1, dim),
            bias: init.zeros(&format!("{name}.bias"), 1, dim),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let gain = g.param(self.gain);
        let bias = g.param(self.bias);
        g.layer_norm(x, gain, bias)
    }
}

#[derive(Clone)]
pub(crate) struct MultiHeadAttention {
    query: Linear,
    key: Linear,
    value: Linear,
    output: Linear,
    n_heads: usize,
}

impl MultiHeadAttention {
    pub fn new(init: &mut Init, name: &str, hidden: usize, n_heads: usize) -> Self {
        Self {
            query: Linear::new(init, &format!("{name}.query"), hidden, hidden),
            key: Linear::new(init, &format!("{name}.key"), hidden, hidden),
            value: Linear::new(init, &format!("{name}.value"), hidden, hidden),
            output: Linear::new(init, &format!("{name}.output"), hidden, hidden),
            n_heads,
        }
    }

    /// Queries from `queries`, keys and values from `context`; context
    /// positions flagged in `key_mask` are not attended.
    pub fn forward(
        &self,
        g: &mut Graph,
        pass: &mut Pass,
        queries: Var,
        context: Var,
        key_mask: &[bool],
        tag: TraceTag,
    ) -> Var {
        let q = self.query.forward(g, queries);
        let k = self.key.forward(g, context);
        let v = self.value.forward(g, context);
        let hidden = g.value(q).ncols();
        let dh = hidden / self.n_heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut heads = Vec::with_capacity(self.n_heads);
        for h in 0..self.n_heads {
            let (lo, hi) = (h * dh, (h + 1) * dh);
            let qh = g.slice_cols(q, lo, hi);
            let kh = g.slice_cols(k, lo, hi);
            let vh = g.slice_cols(v, lo, hi);
            let scores = g.matmul_t(qh, kh);
            let scores = g.scale(scores, scale);
            let probs = g.softmax(scores, key_mask);
            if pass.record {
                pass.maps.push(AttentionMap {
                    stream: tag.stream,
                    layer: tag.layer,
                    in_cross_layer: tag.in_cross_layer,
                    head: h,
                    query_offset: tag.query_offset,
                    key_offset: tag.key_offset,
                    weights: g.value(probs).clone(),
                });
            }
            heads.push(g.matmul(probs, vh));
        }
        let merged = g.concat_cols(&heads);
        self.output.forward(g, merged)
    }
}

/// Attention followed by dropout, residual and layer norm.
#[derive(Clone)]
pub(crate) struct AttentionSublayer {
    attention: MultiHeadAttention,
    norm: LayerNorm,
}

impl AttentionSublayer {
    pub fn new(init: &mut Init, name: &str, hidden: usize, n_heads: usize) -> Self {
        Self {
            attention: MultiHeadAttention::new(init, &format!("{name}.attention"), hidden, n_heads),
            norm: LayerNorm::new(init, &format!("{name}.norm"), hidden),
        }
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        pass: &mut Pass,
        x: Var,
        context: Var,
        key_mask: &[bool],
        tag: TraceTag,
    ) -> Var {
        let a = self.attention.forward(g, pass, x, context, key_mask, tag);
        let a = pass.dropout(g, a);
        let r = g.add(x, a);
        self.norm.forward(g, r)
    }
}

/// Position-wise feed-forward with GELU, plus residual and layer norm.
#[derive(Clone)]
pub(crate) struct FeedForwardSublayer {
    up: Linear,
    down: Linear,
    norm: LayerNorm,
}

impl FeedForwardSublayer {
    pub fn new(init: &mut Init, name: &str, hidden: usize, inner: usize) -> Self {
        Self {
            up: Linear::new(init, &format!("{name}.up"), hidden, inner),
            down: Linear::new(init, &format!("{name}.down"), inner, hidden),
            norm: LayerNorm::new(init, &format!("{name}.norm"), hidden),
        }
    }

    pub fn forward(&self, g: &mut Graph, pass: &mut Pass, x: Var) -> Var {
        let h = self.up.forward(g, x);
        let h = g.gelu(h);
        let h = self.down.forward(g, h);
        let h = pass.dropout(g, h);
        let r = g.add(x, h);
        self.norm.forward(g, r)
    }
}

#[derive(Clone)]
pub(crate) struct EncoderLayer {
    attention: AttentionSublayer,
    ffn: FeedForwardSublayer,
}

impl EncoderLayer {
    pub fn new(init: &mut Init, name: &str, hidden: usize, n_heads: usize, inner: usize) -> Self {
        Self {
            attention: AttentionSublayer::new(init, &format!("{name}.self"), hidden, n_heads),
            ffn: FeedForwardSublayer::new(init, &format!("{name}.ffn"), hidden, inner),
        }
    }

    pub fn forward(&self, g: &mut Graph, pass: &mut Pass, x: Var, mask: &[bool], tag: TraceTag) -> Var {
        let x = self.attention.forward(g, pass, x, x, mask, tag);
        self.ffn.forward(g, pass, x)
    }
}

/// Cross-attention in both directions, then per-stream self-attention and
/// feed-forward.
#[derive(Clone)]
pub(crate) struct CrossLayer {
    lang_to_vision: AttentionSublayer,
    vision_to_lang: AttentionSublayer,
    lang_self: AttentionSublayer,
    vision_self: AttentionSublayer,
    lang_ffn: FeedForwardSublayer,
    vision_ffn: FeedForwardSublayer,
}

pub(crate) struct CrossLayerTags {
    pub layer: usize,
    pub lang_self_layer: usize,
    pub vision_self_layer: usize,
    pub lang_offset: usize,
    pub vision_offset: usize,
}

impl CrossLayer {
    pub fn new(init: &mut Init, name: &str, hidden: usize, n_heads: usize, inner: usize) -> Self {
        Self {
            lang_to_vision: AttentionSublayer::new(init, &format!("{name}.lang_to_vision"), hidden, n_heads),
            vision_to_lang: AttentionSublayer::new(init, &format!("{name}.vision_to_lang"), hidden, n_heads),
            lang_self: AttentionSublayer::new(init, &format!("{name}.lang_self"), hidden, n_heads),
            vision_self: AttentionSublayer::new(init, &format!("{name}.vision_self"), hidden, n_heads),
            lang_ffn: FeedForwardSublayer::new(init, &format!("{name}.lang_ffn"), hidden, inner),
            vision_ffn: FeedForwardSublayer::new(init, &format!("{name}.vision_ffn"), hidden, inner),
        }
    }

    #[allow(clippy::too_many_arguments)]
    pub fn forward(
        &self,
        g: &mut Graph,
        pass: &mut Pass,
        lang: Var,
        vision: Var,
        lang_mask: &[bool],
        vision_mask: &[bool],
        t: &CrossLayerTags,
    ) -> (Var, Var) {
        let tag = |stream, layer, in_cross_layer, query_offset, key_offset| TraceTag {
            stream,
            layer,
            in_cross_layer,
            query_offset,
            key_offset,
        };
        let lang_x = self.lang_to_vision.forward(
            g,
            pass,
            lang,
            vision,
            vision_mask,
            tag(Stream::CrossLangToVision, t.layer, true, t.lang_offset, t.vision_offset),
        );
        let vision_x = self.vision_to_lang.forward(
            g,
            pass,
            vision,
            lang,
            lang_mask,
            tag(Stream::CrossVisionToLang, t.layer, true, t.vision_offset, t.lang_offset),
        );
        let lang_s = self.lang_self.forward(
            g,
            pass,
            lang_x,
            lang_x,
            lang_mask,
            tag(Stream::Language, t.lang_self_layer, true, t.lang_offset, t.lang_offset),
        );
        let vision_s = self.vision_self.forward(
            g,
            pass,
            vision_x,
            vision_x,
            vision_mask,
            tag(Stream::Vision, t.vision_self_layer, true, t.vision_offset, t.vision_offset),
        );
        (
            self.lang_ffn.forward(g, pass, lang_s),
            self.vision_ffn.forward(g, pass, vision_s),
        )
    }
}

/// Two-layer answer classifier over the pooled representation.
#[derive(Clone)]
pub(crate) struct AnswerHead {
    dense: Linear,
    norm: LayerNorm,
    out: Linear,
}

impl AnswerHead {
    pub fn new(init: &mut Init, hidden: usize, n_answers: usize) -> Self {
        Self {
            dense: Linear::new(init, "head.dense", hidden, 2 * hidden),
            norm: LayerNorm::new(init, "head.norm", 2 * hidden),
            out: Linear::new(init, "head.out", 2 * hidden, n_answers),
        }
    }

    pub fn forward(&self, g: &mut Graph, pooled: Var) -> Var {
        let h = self.dense.forward(g, pooled);
        let h = g.gelu(h);
        let h = self.norm.forward(g, h);
        self.out.forward(g, h)
    }
}
