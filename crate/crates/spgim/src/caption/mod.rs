//! Visual-to-textual pretraining: a convolutional visual front-end feeding
//! grid features to transformer decoders that caption the image in both the
//! forward and backward direction. The trained backbone transfers to the
//! saliency distillation branch; cross-attention rows provide word-level
//! spatial attention maps.

pub mod corpus;
mod pretrain;
#[cfg(test)]
mod tests;
pub mod tokenizer;
mod transformer;

pub use pretrain::{train_bicaption, BicaptionReport, PretrainSchedule};
pub use tokenizer::Tokenizer;

use ndarray::{Array2, Array3, Array4, ArrayD, Axis, IxDyn};

use crate::data::ImagePlane;
use crate::error::{Error, Result};
use crate::nn::{Backbone, BackboneConfig, Embedding, Fwd, Init, LayerNorm, Linear, ParamStore};
use crate::tensor::{Graph, Var};
use transformer::DecoderLayer;

use tokenizer::{EOS, SOS};

/// Decoder hyperparameters plus the visual front-end configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct CaptionerConfig {
    pub backbone: BackboneConfig,
    pub layers: usize,
    pub heads: usize,
    pub model_width: usize,
    pub vocab_size: usize,
    pub max_len: usize,
    pub dropout: f64,
    /// When set, the backward direction reuses the forward decoder weights.
    pub share_backward_decoder: bool,
}

impl CaptionerConfig {
    /// CPU-scale defaults: quarter-width backbone, 2 layers x 4 heads x 128.
    pub fn desk(vocab_size: usize) -> Self {
        CaptionerConfig {
            backbone: BackboneConfig::desk(3, 0.25),
            layers: 2,
            heads: 4,
            model_width: 128,
            vocab_size,
            max_len: 30,
            dropout: 0.1,
            share_backward_decoder: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.model_width % self.heads != 0 {
            return Err(Error::InvalidArgument(format!(
                "model width {} not divisible by heads {}",
                self.model_width, self.heads
            )));
        }
        if self.vocab_size <= tokenizer::SPECIALS.len() {
            return Err(Error::InvalidArgument(
                "vocabulary holds no words beyond specials".into(),
            ));
        }
        Ok(())
    }
}

/// Projected visual tokens for one image: (N_I, D_I) with N_I = (H/32)(W/32).
#[derive(Clone, Debug)]
pub struct GridFeatures {
    pub tokens: Array2<f64>,
    pub grid_h: usize,
    pub grid_w: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
}

/// Token-id sequence delimited by [SOS]/[EOS].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CaptionSequence {
    pub tokens: Vec<usize>,
    pub direction: Direction,
}

impl CaptionSequence {
    pub fn forward(tokens: Vec<usize>) -> Self {
        CaptionSequence {
            tokens,
            direction: Direction::Forward,
        }
    }

    /// Reverse the word order, keeping the delimiters in place.
    pub fn reversed(&self) -> Self {
        let inner: Vec<usize> = self.tokens[1..self.tokens.len() - 1]
            .iter()
            .rev()
            .copied()
            .collect();
        let mut tokens = vec![SOS];
        tokens.extend(inner);
        tokens.push(EOS);
        CaptionSequence {
            tokens,
            direction: match self.direction {
                Direction::Forward => Direction::Backward,
                Direction::Backward => Direction::Forward,
            },
        }
    }

    pub fn validate(&self, max_len: usize) -> Result<()> {
        if self.tokens.first() != Some(&SOS) {
            return Err(Error::InvalidArgument(
                "caption sequence must start with [SOS]".into(),
            ));
        }
        if self.tokens.last() != Some(&EOS) {
            return Err(Error::InvalidArgument(
                "caption sequence must end with [EOS]".into(),
            ));
        }
        if self.tokens.len() > max_len {
            return Err(Error::SequenceTooLong {
                len: self.tokens.len(),
                max: max_len,
            });
        }
        Ok(())
    }

    /// Words without the delimiters.
    pub fn words(&self) -> &[usize] {
        &self.tokens[1..self.tokens.len() - 1]
    }
}

struct DecoderStack {
    layers: Vec<DecoderLayer>,
    final_ln: LayerNorm,
    head: Linear,
}

impl DecoderStack {
    fn new(ps: &mut ParamStore, prefix: &str, cfg: &CaptionerConfig) -> Self {
        let layers = (0..cfg.layers)
            .map(|i| {
                DecoderLayer::new(
                    ps,
                    &format!("{prefix}.layer{i}"),
                    cfg.model_width,
                    cfg.heads,
                    cfg.dropout,
                )
            })
            .collect();
        DecoderStack {
            layers,
            final_ln: LayerNorm::new(ps, &format!("{prefix}.final_ln"), cfg.model_width),
            head: Linear::new(ps, &format!("{prefix}.head"), cfg.model_width, cfg.vocab_size, true),
        }
    }
}

/// The caption-pretraining model: visual encoder, grid projection, shared
/// token/position embeddings, and one decoder stack per direction.
pub struct Captioner {
    pub config: CaptionerConfig,
    pub prefix: String,
    pub backbone: Backbone,
    proj: Linear,
    tok_emb: Embedding,
    pos_emb: String,
    dec_fwd: DecoderStack,
    dec_bwd: Option<DecoderStack>,
}

impl Captioner {
    pub fn new(ps: &mut ParamStore, prefix: &str, config: CaptionerConfig) -> Result<Self> {
        config.validate()?;
        let backbone = Backbone::new(ps, &format!("{prefix}.backbone"), config.backbone.clone());
        let proj = Linear::new(
            ps,
            &format!("{prefix}.proj"),
            config.backbone.final_channels(),
            config.model_width,
            true,
        );
        let tok_emb = Embedding::new(
            ps,
            &format!("{prefix}.tok_emb"),
            config.vocab_size,
            config.model_width,
        );
        let pos_emb = format!("{prefix}.pos_emb");
        ps.register(
            &pos_emb,
            &[config.max_len, config.model_width],
            Init::Normal { std: 0.02 },
        );
        let dec_fwd = DecoderStack::new(ps, &format!("{prefix}.decoder_fwd"), &config);
        let dec_bwd = (!config.share_backward_decoder)
            .then(|| DecoderStack::new(ps, &format!("{prefix}.decoder_bwd"), &config));
        Ok(Captioner {
            config,
            prefix: prefix.to_string(),
            backbone,
            proj,
            tok_emb,
            pos_emb,
            dec_fwd,
            dec_bwd,
        })
    }

    fn stack(&self, direction: Direction) -> &DecoderStack {
        match direction {
            Direction::Forward => &self.dec_fwd,
            Direction::Backward => self.dec_bwd.as_ref().unwrap_or(&self.dec_fwd),
        }
    }

    /// In-graph grid features for a batch: images (B,3,H,W) -> (B, N, D).
    pub fn encode_images_var(&self, f: &mut Fwd, images: Var) -> Var {
        let pyramid = self.backbone.forward(f, images);
        let s4 = pyramid.s4;
        let shape = f.g.shape(s4).to_vec();
        let (b, c, gh, gw) = (shape[0], shape[1], shape[2], shape[3]);
        let flat = f.g.reshape(s4, &[b, c, gh * gw]);
        let tokens = f.g.permute(flat, &[0, 2, 1]);
        self.proj.forward(f, tokens)
    }

    /// Grid features for one image. The spatial sides must be divisible by
    /// 32; the rejection names the padding that would fix it.
    pub fn encode_image(&self, ps: &ParamStore, image: &ImagePlane) -> Result<GridFeatures> {
        let (h, w) = (image.height(), image.width());
        for side in [h, w] {
            if side % 32 != 0 {
                let pad = 32 - side % 32;
                return Err(Error::NotDivisible {
                    side,
                    divisor: 32,
                    padded: side + pad,
                    pad,
                });
            }
        }
        let mut g = Graph::new();
        let mut f = Fwd::inference(&mut g, ps);
        let batch = image_batch(&[image]);
        let images = f.g.constant(batch.into_dyn());
        let tokens = self.encode_images_var(&mut f, images);
        let value = f.g.value(tokens);
        let n = value.shape()[1];
        let d = value.shape()[2];
        let tokens = value
            .to_shape((n, d))
            .expect("single-image grid")
            .to_owned();
        Ok(GridFeatures {
            tokens,
            grid_h: h / 32,
            grid_w: w / 32,
        })
    }

    /// Teacher-forced decoder logits: grid (B,N,D), inputs (B,T) -> (B,T,V).
    /// Also returns the last layer's cross-attention trace.
    fn decode_logits(
        &self,
        f: &mut Fwd,
        grid: Var,
        inputs: &[Vec<usize>],
        direction: Direction,
    ) -> (Var, transformer::AttentionTrace) {
        let b = inputs.len();
        let t = inputs[0].len();
        assert!(inputs.iter().all(|row| row.len() == t));
        assert!(t <= self.config.max_len, "decoder input exceeds max_len");
        let flat_ids: Vec<usize> = inputs.iter().flatten().copied().collect();
        let emb = self.tok_emb.forward(f, &flat_ids);
        let emb = f.g.reshape(emb, &[b, t, self.config.model_width]);

        let pos_full = f.param(&self.pos_emb);
        let pos = f.g.slice_axis0(pos_full, 0, t);
        let pos_b = broadcast_rows(f, pos, b);
        let mut x = f.g.add(emb, pos_b);

        let stack = self.stack(direction);
        let mut trace = None;
        for layer in &stack.layers {
            let (nx, tr) = layer.forward(f, x, grid);
            x = nx;
            trace = Some(tr);
        }
        let x = stack.final_ln.forward(f, x);
        let logits = stack.head.forward(f, x);
        (logits, trace.expect("decoder has at least one layer"))
    }

    /// Cross-entropy of a batch of caption sequences against the grid
    /// features, teacher-forced. Sequences may have ragged lengths; padding
    /// rows carry zero weight.
    pub fn caption_loss(
        &self,
        f: &mut Fwd,
        grid: Var,
        captions: &[CaptionSequence],
        direction: Direction,
    ) -> Result<Var> {
        assert!(!captions.is_empty());
        for c in captions {
            c.validate(self.config.max_len + 1)?;
        }
        let t_in = captions
            .iter()
            .map(|c| c.tokens.len() - 1)
            .max()
            .unwrap();
        let mut inputs = Vec::with_capacity(captions.len());
        let mut targets = Vec::new();
        let mut weights = Vec::new();
        for c in captions {
            let n = c.tokens.len() - 1;
            let mut row = c.tokens[..n].to_vec();
            row.resize(t_in, tokenizer::PAD);
            inputs.push(row);
            for k in 0..t_in {
                if k < n {
                    targets.push(c.tokens[k + 1]);
                    weights.push(1.0);
                } else {
                    targets.push(tokenizer::PAD);
                    weights.push(0.0);
                }
            }
        }
        let (logits, _) = self.decode_logits(f, grid, &inputs, direction);
        let b = captions.len();
        let v = self.config.vocab_size;
        let flat = f.g.reshape(logits, &[b * t_in, v]);
        let logp = f.g.log_softmax_last(flat);
        Ok(f.g.nll_mean(logp, &targets, &weights))
    }

    /// Mean of the forward and backward caption losses.
    pub fn bicaption_loss(
        &self,
        f: &mut Fwd,
        grid: Var,
        captions: &[CaptionSequence],
    ) -> Result<Var> {
        let fwd = self.caption_loss(f, grid, captions, Direction::Forward)?;
        let reversed: Vec<CaptionSequence> = captions.iter().map(|c| c.reversed()).collect();
        let bwd = self.caption_loss(f, grid, &reversed, Direction::Backward)?;
        let sum = f.g.add(fwd, bwd);
        Ok(f.g.affine(sum, 0.5, 0.0))
    }

    /// Next-token distribution given a prefix that starts with [SOS].
    pub fn caption_step(
        &self,
        ps: &ParamStore,
        grid: &GridFeatures,
        prefix: &[usize],
    ) -> Result<Vec<f64>> {
        if prefix.first() != Some(&SOS) {
            return Err(Error::InvalidArgument(
                "caption prefix must start with [SOS]".into(),
            ));
        }
        if prefix.len() > self.config.max_len {
            return Err(Error::SequenceTooLong {
                len: prefix.len(),
                max: self.config.max_len,
            });
        }
        let mut g = Graph::new();
        let mut f = Fwd::inference(&mut g, ps);
        let grid_var = grid_to_var(&mut f, grid);
        let (logits, _) = self.decode_logits(&mut f, grid_var, &[prefix.to_vec()], Direction::Forward);
        let value = f.g.value(logits);
        let t = prefix.len();
        let v = self.config.vocab_size;
        let last: Vec<f64> = (0..v).map(|j| value[[0, t - 1, j]]).collect();
        let m = last.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = last.iter().map(|&x| (x - m).exp()).collect();
        let z: f64 = exps.iter().sum();
        Ok(exps.into_iter().map(|e| e / z).collect())
    }

    /// Teacher-forced logits for every prefix position, used by causality
    /// tests and greedy decoding.
    pub fn prefix_logits(
        &self,
        ps: &ParamStore,
        grid: &GridFeatures,
        prefix: &[usize],
    ) -> Result<Array2<f64>> {
        if prefix.len() > self.config.max_len {
            return Err(Error::SequenceTooLong {
                len: prefix.len(),
                max: self.config.max_len,
            });
        }
        let mut g = Graph::new();
        let mut f = Fwd::inference(&mut g, ps);
        let grid_var = grid_to_var(&mut f, grid);
        let (logits, _) = self.decode_logits(&mut f, grid_var, &[prefix.to_vec()], Direction::Forward);
        let value = f.g.value(logits);
        let t = prefix.len();
        let v = self.config.vocab_size;
        Ok(Array2::from_shape_fn((t, v), |(i, j)| value[[0, i, j]]))
    }

    /// Raw cross-attention probabilities of the last decoder layer for a
    /// teacher-forced caption: (heads, T_in, N_I).
    pub fn cross_attention_probs(
        &self,
        ps: &ParamStore,
        grid: &GridFeatures,
        caption: &CaptionSequence,
    ) -> Result<Array3<f64>> {
        caption.validate(self.config.max_len + 1)?;
        let inputs = vec![caption.tokens[..caption.tokens.len() - 1].to_vec()];
        let mut g = Graph::new();
        let mut f = Fwd::inference(&mut g, ps);
        let grid_var = grid_to_var(&mut f, grid);
        let (_, trace) = self.decode_logits(&mut f, grid_var, &inputs, Direction::Forward);
        let probs = f.g.value(trace.probs);
        let h = trace.heads;
        let t = inputs[0].len();
        let n = grid.tokens.nrows();
        Ok(Array3::from_shape_fn((h, t, n), |(hi, ti, ni)| {
            probs[[hi, ti, ni]]
        }))
    }

    /// Word-level spatial attention maps: one (H/32, W/32) map per caption
    /// word, averaged over the last layer's heads. Each map sums to 1.
    pub fn export_word_attention(
        &self,
        ps: &ParamStore,
        grid: &GridFeatures,
        caption: &CaptionSequence,
        trained_steps: u64,
    ) -> Result<WordAttention> {
        let probs = self.cross_attention_probs(ps, grid, caption)?;
        let (heads, _, n) = probs.dim();
        assert_eq!(n, grid.grid_h * grid.grid_w, "grid token count mismatch");
        let words = caption.words().to_vec();
        let mut maps = Vec::with_capacity(words.len());
        // Query position of word w_k in the decoder input [SOS] w1..wT is
        // k+1; that row attends over the grid while encoding the word.
        for k in 0..words.len() {
            let q = k + 1;
            let mut map = Array2::<f64>::zeros((grid.grid_h, grid.grid_w));
            for ni in 0..n {
                let mean: f64 =
                    (0..heads).map(|hi| probs[[hi, q, ni]]).sum::<f64>() / heads as f64;
                map[[ni / grid.grid_w, ni % grid.grid_w]] = mean;
            }
            maps.push(map);
        }
        let warning =
            (trained_steps == 0).then(|| "untrained weights: maps are noise".to_string());
        Ok(WordAttention {
            maps,
            word_ids: words,
            warning,
        })
    }
}

/// Per-word attention maps plus a warning watermark when the decoder has
/// never been trained.
#[derive(Clone, Debug)]
pub struct WordAttention {
    pub maps: Vec<Array2<f64>>,
    pub word_ids: Vec<usize>,
    pub warning: Option<String>,
}

/// Stack (3,H,W) images into an (B,3,H,W) batch.
pub fn image_batch(images: &[&ImagePlane]) -> Array4<f64> {
    assert!(!images.is_empty());
    let (h, w) = (images[0].height(), images[0].width());
    let mut out = Array4::zeros((images.len(), 3, h, w));
    for (i, img) in images.iter().enumerate() {
        assert_eq!(
            (img.height(), img.width()),
            (h, w),
            "batch images must share dimensions"
        );
        out.index_axis_mut(Axis(0), i).assign(&img.0);
    }
    out
}

fn grid_to_var(f: &mut Fwd, grid: &GridFeatures) -> Var {
    let (n, d) = grid.tokens.dim();
    let mut arr = ArrayD::zeros(IxDyn(&[1, n, d]));
    for i in 0..n {
        for j in 0..d {
            arr[[0, i, j]] = grid.tokens[[i, j]];
        }
    }
    f.g.constant(arr)
}

/// Repeat a (T, D) tensor across a new leading batch axis.
fn broadcast_rows(f: &mut Fwd, x: Var, b: usize) -> Var {
    let shape = f.g.shape(x).to_vec();
    let (t, d) = (shape[0], shape[1]);
    let parts: Vec<Var> = (0..b).map(|_| x).collect();
    let stacked = f.g.concat(0, &parts);
    f.g.reshape(stacked, &[b, t, d])
}
