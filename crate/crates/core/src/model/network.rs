use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::autodiff::{Gradients, Graph, Var};
use super::config::{Layers, ModelConfig};
use super::layers::{
    AnswerHead, CrossLayer, CrossLayerTags, EncoderLayer, Init, LayerNorm, Linear, Pass, TraceTag,
};
use super::params::ParamStore;
use super::trace::{AttentionTrace, Stream, TokenMap};
use super::vocab::{CLS, PAD, SEP};
use super::ModelError;
use crate::features::RegionFeatures;

#[derive(Clone)]
struct TextEmbedding {
    word: super::params::ParamId,
    position: super::params::ParamId,
    segment: super::params::ParamId,
    norm: LayerNorm,
}

impl TextEmbedding {
    fn new(init: &mut Init, c: &ModelConfig) -> Self {
        Self {
            word: init.normal("text.word", c.vocab_size, c.hidden_dim),
            position: init.normal("text.position", c.max_question_tokens + 2, c.hidden_dim),
            segment: init.normal("text.segment", 1, c.hidden_dim),
            norm: LayerNorm::new(init, "text.norm", c.hidden_dim),
        }
    }

    /// Rows: `[CLS] question [SEP]` followed by `n_pad` padding tokens.
    fn forward(&self, g: &mut Graph, pass: &mut Pass, question: &[u32], n_pad: usize) -> Var {
        let ids: Vec<usize> = std::iter::once(CLS)
            .chain(question.iter().copied())
            .chain(std::iter::once(SEP))
            .chain(std::iter::repeat_n(PAD, n_pad))
            .map(|i| i as usize)
            .collect();
        let real = question.len() + 2;
        let positions: Vec<usize> = (0..ids.len()).map(|i| if i < real { i } else { 0 }).collect();
        let table = g.param(self.word);
        let words = g.gather(table, &ids);
        let table = g.param(self.position);
        let pos = g.gather(table, &positions);
        let sum = g.add(words, pos);
        let seg = g.param(self.segment);
        let sum = g.add_row(sum, seg);
        let out = self.norm.forward(g, sum);
        pass.dropout(g, out)
    }
}

/// The three additive terms of a region embedding, before normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct VisualTerms {
    pub feature: Array2<f64>,
    pub position: Array2<f64>,
    pub segment: Array2<f64>,
}

#[derive(Clone)]
struct VisualEmbedding {
    feature: Linear,
    position: Linear,
    segment: super::params::ParamId,
    norm: LayerNorm,
}

impl VisualEmbedding {
    fn new(init: &mut Init, c: &ModelConfig) -> Self {
        Self {
            feature: Linear::without_bias(init, "visual.feature", c.feature_dim, c.hidden_dim),
            position: Linear::without_bias(init, "visual.box", 4, c.hidden_dim),
            segment: init.normal("visual.segment", 1, c.hidden_dim),
            norm: LayerNorm::new(init, "visual.norm", c.hidden_dim),
        }
    }

    fn terms(&self, g: &mut Graph, regions: &RegionFeatures) -> (Var, Var, Var) {
        let n = regions.n_regions();
        let dim = regions.feature_dim();
        let feats = Array2::from_shape_fn((n, dim), |(r, c)| regions.features[r][c] as f64);
        let boxes = Array2::from_shape_fn((n, 4), |(r, c)| regions.boxes[r][c] as f64);
        let feats = g.constant(feats);
        let boxes = g.constant(boxes);
        let f = self.feature.forward(g, feats);
        let p = self.position.forward(g, boxes);
        let s = g.param(self.segment);
        (f, p, s)
    }

    fn forward(&self, g: &mut Graph, pass: &mut Pass, regions: &RegionFeatures) -> Var {
        let (f, p, s) = self.terms(g, regions);
        let sum = g.add(f, p);
        let sum = g.add_row(sum, s);
        let out = self.norm.forward(g, sum);
        pass.dropout(g, out)
    }
}

#[derive(Clone)]
enum Body {
    Single(Vec<EncoderLayer>),
    Dual {
        language: Vec<EncoderLayer>,
        vision: Vec<EncoderLayer>,
        cross: Vec<CrossLayer>,
    },
}

/// Output of one inference pass.
#[derive(Debug, Clone)]
pub struct ForwardResult {
    pub logits: Vec<f64>,
    pub trace: AttentionTrace,
    pub token_map: TokenMap,
}

/// A VQA transformer together with its parameters.
#[derive(Clone)]
pub struct VqaModel {
    config: ModelConfig,
    n_answers: usize,
    params: ParamStore,
    text: TextEmbedding,
    visual: VisualEmbedding,
    body: Body,
    head: AnswerHead,
}

impl std::fmt::Debug for VqaModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("VqaModel")
            .field("config", &self.config)
            .field("n_answers", &self.n_answers)
            .field("n_parameters", &self.params.n_scalars())
            .finish()
    }
}

impl VqaModel {
    /// Fresh model initialized from `config.seed`.
    pub fn new(config: ModelConfig, n_answers: usize) -> Result<Self, ModelError> {
        config.validate()?;
        if n_answers == 0 {
            return Err(ModelError::InvalidConfig("answer space is empty".into()));
        }
        if config.vocab_size < 4 {
            return Err(ModelError::InvalidConfig("vocab_size must cover the special tokens".into()));
        }
        let mut store = ParamStore::default();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut init = Init { store: &mut store, rng: &mut rng };
        let c = &config;
        let text = TextEmbedding::new(&mut init, c);
        let visual = VisualEmbedding::new(&mut init, c);
        let (h, heads, inner) = (c.hidden_dim, c.n_heads, c.ffn_dim());
        let stack = |init: &mut Init, prefix: &str, n: usize| {
            (0..n)
                .map(|i| EncoderLayer::new(init, &format!("{prefix}.{i}"), h, heads, inner))
                .collect::<Vec<_>>()
        };
        let body = match c.layers {
            Layers::Single(l) => Body::Single(stack(&mut init, "encoder", l)),
            Layers::Dual { language, vision, cross } => Body::Dual {
                language: stack(&mut init, "language", language),
                vision: stack(&mut init, "vision", vision),
                cross: (0..cross)
                    .map(|i| CrossLayer::new(&mut init, &format!("cross.{i}"), h, heads, inner))
                    .collect(),
            },
        };
        let head = AnswerHead::new(&mut init, h, n_answers);
        Ok(Self { config, n_answers, params: store, text, visual, body, head })
    }

    /// Rebuilds a model and replaces every parameter with the named tensors.
    pub fn with_params(
        config: ModelConfig,
        n_answers: usize,
        tensors: Vec<(String, Array2<f64>)>,
    ) -> Result<Self, ModelError> {
        let mut model = Self::new(config, n_answers)?;
        if tensors.len() != model.params.len() {
            return Err(ModelError::CorruptArtifact(format!(
                "expected {} tensors, found {}",
                model.params.len(),
                tensors.len()
            )));
        }
        for (name, value) in tensors {
            let id = model
                .params
                .id(&name)
                .ok_or_else(|| ModelError::CorruptArtifact(format!("unknown tensor `{name}`")))?;
            if model.params.value(id).dim() != value.dim() {
                return Err(ModelError::CorruptArtifact(format!(
                    "tensor `{name}` has shape {:?}, expected {:?}",
                    value.dim(),
                    model.params.value(id).dim()
                )));
            }
            *model.params.value_mut(id) = value;
        }
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn n_answers(&self) -> usize {
        self.n_answers
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn check_regions(&self, regions: &RegionFeatures) -> Result<(), ModelError> {
        let n = regions.n_regions();
        if n == 0 || n > self.config.max_regions || regions.features.len() != n {
            return Err(ModelError::Shape(format!(
                "{n} regions, expected 1..={}",
                self.config.max_regions
            )));
        }
        if let Some(row) = regions.features.iter().find(|f| f.len() != self.config.feature_dim) {
            return Err(ModelError::DimensionMismatch {
                expected: self.config.feature_dim,
                found: row.len(),
            });
        }
        Ok(())
    }

    /// Splits ids into question tokens and a padding count.
    fn check_question(&self, ids: &[u32]) -> Result<(Vec<u32>, usize), ModelError> {
        let question: Vec<u32> = ids.iter().copied().filter(|&i| i != PAD).collect();
        if question.is_empty() {
            return Err(ModelError::EmptyQuestion);
        }
        if question.len() > self.config.max_question_tokens {
            return Err(ModelError::Shape(format!(
                "{} question tokens, limit {}",
                question.len(),
                self.config.max_question_tokens
            )));
        }
        if let Some(&bad) = question.iter().find(|&&i| i as usize >= self.config.vocab_size) {
            return Err(ModelError::Shape(format!("token id {bad} outside the vocabulary")));
        }
        let padding = ids.len() - question.len();
        Ok((question, padding))
    }

    fn build(
        &self,
        g: &mut Graph,
        pass: &mut Pass,
        ids: &[u32],
        regions: &RegionFeatures,
    ) -> Result<(Var, TokenMap), ModelError> {
        self.check_regions(regions)?;
        let (question, n_pad) = self.check_question(ids)?;
        let n_q = question.len();
        let n_r = regions.n_regions();
        let text = self.text.forward(g, pass, &question, n_pad);
        let visual = self.visual.forward(g, pass, regions);
        let tag = |stream, layer, q: usize, k: usize| TraceTag {
            stream,
            layer,
            in_cross_layer: false,
            query_offset: q,
            key_offset: k,
        };

        let (pooled, token_map) = match &self.body {
            Body::Single(layers) => {
                let real_text = n_q + 2;
                let text_real = g.slice_rows(text, 0, real_text);
                let mut parts = vec![text_real, visual];
                if n_pad > 0 {
                    parts.push(g.slice_rows(text, real_text, real_text + n_pad));
                }
                let mut x = g.concat_rows(&parts);
                let total = real_text + n_r + n_pad;
                let mask: Vec<bool> = (0..total).map(|i| i >= real_text + n_r).collect();
                for (l, layer) in layers.iter().enumerate() {
                    x = layer.forward(g, pass, x, &mask, tag(Stream::Joint, l, 0, 0));
                }
                let map = TokenMap {
                    total_len: total,
                    question_positions: 1..n_q + 1,
                    region_positions: real_text..real_text + n_r,
                    special_positions: vec![0, n_q + 1],
                    padding_positions: (real_text + n_r..total).collect(),
                };
                (g.slice_rows(x, 0, 1), map)
            }
            Body::Dual { language, vision, cross } => {
                let t_lang = n_q + 2 + n_pad;
                let lang_mask: Vec<bool> = (0..t_lang).map(|i| i >= n_q + 2).collect();
                let vision_mask = vec![false; n_r];
                let mut lang = text;
                for (l, layer) in language.iter().enumerate() {
                    lang = layer.forward(g, pass, lang, &lang_mask, tag(Stream::Language, l, 0, 0));
                }
                let mut vis = visual;
                for (l, layer) in vision.iter().enumerate() {
                    vis = layer.forward(g, pass, vis, &vision_mask, tag(Stream::Vision, l, t_lang, t_lang));
                }
                for (i, layer) in cross.iter().enumerate() {
                    let tags = CrossLayerTags {
                        layer: i,
                        lang_self_layer: language.len() + i,
                        vision_self_layer: vision.len() + i,
                        lang_offset: 0,
                        vision_offset: t_lang,
                    };
                    (lang, vis) = layer.forward(g, pass, lang, vis, &lang_mask, &vision_mask, &tags);
                }
                let map = TokenMap {
                    total_len: t_lang + n_r,
                    question_positions: 1..n_q + 1,
                    region_positions: t_lang..t_lang + n_r,
                    special_positions: vec![0, n_q + 1],
                    padding_positions: (n_q + 2..t_lang).collect(),
                };
                (g.slice_rows(lang, 0, 1), map)
            }
        };
        Ok((self.head.forward(g, pooled), token_map))
    }

    /// Inference pass (no dropout) returning logits and the full attention trace.
    pub fn forward(&self, ids: &[u32], regions: &RegionFeatures) -> Result<ForwardResult, ModelError> {
        let mut g = Graph::new(&self.params);
        let mut pass = Pass::eval();
        let (logits, token_map) = self.build(&mut g, &mut pass, ids, regions)?;
        let logits: Vec<f64> = g.value(logits).iter().copied().collect();
        if logits.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::NonFinite);
        }
        Ok(ForwardResult { logits, trace: AttentionTrace { maps: pass.maps }, token_map })
    }

    /// Soft-target loss of one example and its parameter gradients. Dropout
    /// is applied when `dropout_rng` is given.
    pub fn loss_and_gradients(
        &self,
        ids: &[u32],
        regions: &RegionFeatures,
        targets: &[f64],
        dropout_rng: Option<ChaCha8Rng>,
    ) -> Result<(f64, Gradients), ModelError> {
        if targets.len() != self.n_answers {
            return Err(ModelError::Shape(format!(
                "{} targets for {} answers",
                targets.len(),
                self.n_answers
            )));
        }
        let mut g = Graph::new(&self.params);
        let mut pass = match dropout_rng {
            Some(rng) => Pass::train(self.config.dropout, rng),
            None => Pass::train(0.0, ChaCha8Rng::seed_from_u64(0)),
        };
        let (logits, _) = self.build(&mut g, &mut pass, ids, regions)?;
        let loss = g.bce_with_logits(logits, targets);
        let value = g.value(loss)[[0, 0]];
        Ok((value, g.backward(loss)))
    }

    /// Soft-target loss without gradients or dropout.
    pub fn loss(&self, ids: &[u32], regions: &RegionFeatures, targets: &[f64]) -> Result<f64, ModelError> {
        let mut g = Graph::new(&self.params);
        let mut pass = Pass::train(0.0, ChaCha8Rng::seed_from_u64(0));
        let (logits, _) = self.build(&mut g, &mut pass, ids, regions)?;
        let loss = g.bce_with_logits(logits, targets);
        Ok(g.value(loss)[[0, 0]])
    }

    /// Region embeddings after normalization, one row per region.
    pub fn embed_visual(&self, regions: &RegionFeatures) -> Result<Array2<f64>, ModelError> {
        self.check_regions(regions)?;
        let mut g = Graph::new(&self.params);
        let out = self.visual.forward(&mut g, &mut Pass::eval(), regions);
        Ok(g.value(out).clone())
    }

    /// The feature, box-position and segment terms summed by [`Self::embed_visual`].
    pub fn visual_terms(&self, regions: &RegionFeatures) -> Result<VisualTerms, ModelError> {
        self.check_regions(regions)?;
        let mut g = Graph::new(&self.params);
        let (f, p, s) = self.visual.terms(&mut g, regions);
        Ok(VisualTerms {
            feature: g.value(f).clone(),
            position: g.value(p).clone(),
            segment: g.value(s).clone(),
        })
    }
}
