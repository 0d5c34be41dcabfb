//! The full encoder / dense bottleneck / fused-decoder network.
//!
//! With `depth = D` and `base_filters = F`:
//!
//! * encoder steps `l = 1..D-1`: conv block to `F * 2^(l-1)` channels at
//!   `H / 2^(l-1)`, kept as the skip tensor, then 2x2 max pooling;
//! * bottleneck: `dense_blocks` densely connected conv blocks with
//!   `F * 2^(D-1)` channels at `H / 2^(D-1)`;
//! * decoder steps `l = D-1..1`: nearest upsampling, 2x2 convolution halving
//!   the channels, batch norm, bidirectional ConvLSTM over
//!   `(skip, upsampled)`, conv block;
//! * head: 1x1 convolution to one channel and a sigmoid.

mod config;

pub use config::{ModelConfig, Preset};

use std::fmt::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::{
    load_checkpoint, save_checkpoint, BConvLstm, BatchNorm, Checkpoint, Conv2d, ConvBlock,
    DenseBottleneck, Mode, ParamStore, Session, StatUpdate,
};
use crate::tensor::{shape_str, Padding, Real, Tensor, Var};

/// One decoder step: up-convolution, batch norm, skip fusion, conv block.
#[derive(Clone, Debug)]
pub struct DecoderStep {
    pub up: Conv2d,
    pub bn: BatchNorm,
    pub fusion: BConvLstm,
    pub block: ConvBlock,
}

/// Per-sample shapes (`[C, H, W]`) observed during a forward pass.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ForwardTrace {
    /// Encoder skip tensors, shallowest first.
    pub encoder: Vec<Vec<usize>>,
    pub bottleneck: Vec<usize>,
    /// Channel count each dense block received.
    pub dense_inputs: Vec<usize>,
    /// Decoder step outputs, deepest first.
    pub decoder: Vec<Vec<usize>>,
    pub output: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct Model<T: Real> {
    config: ModelConfig,
    store: ParamStore<T>,
    encoder: Vec<ConvBlock>,
    bottleneck: DenseBottleneck,
    decoder: Vec<DecoderStep>,
    head: Conv2d,
}

fn sample_shape(shape: &[usize]) -> Vec<usize> {
    shape[shape.len() - 3..].to_vec()
}

impl<T: Real> Model<T> {
    /// Materializes every parameter deterministically from `config.seed`.
    pub fn build(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let k = config.kernel_size;
        let (h, w) = config.input_size;

        let mut encoder = Vec::with_capacity(config.depth - 1);
        let mut c_prev = config.input_channels;
        for l in 1..config.depth {
            let width = config.filters_at(l);
            encoder.push(ConvBlock::new(
                &mut store,
                &mut rng,
                &format!("enc{l}"),
                c_prev,
                width,
                k,
            )?);
            c_prev = width;
        }
        let deepest = config.filters_at(config.depth);
        let bottleneck = DenseBottleneck::new(
            &mut store,
            &mut rng,
            "dense",
            c_prev,
            deepest,
            config.dense_blocks,
            k,
        )?;

        let mut decoder = Vec::with_capacity(config.depth - 1);
        for l in (1..config.depth).rev() {
            let width = config.filters_at(l);
            let spatial = (h >> (l - 1), w >> (l - 1));
            let up = Conv2d::new(
                &mut store,
                &mut rng,
                &format!("dec{l}.up"),
                config.filters_at(l + 1),
                width,
                2,
                Padding::Same,
                true,
            )?;
            let bn = BatchNorm::new(
                &mut store,
                &format!("dec{l}.bn"),
                width,
                config.bn_momentum,
                config.bn_eps,
            )?;
            let fusion = BConvLstm::new(
                &mut store,
                &mut rng,
                &format!("dec{l}.fuse"),
                width,
                width,
                width,
                k,
                spatial,
            )?;
            let block = ConvBlock::new(&mut store, &mut rng, &format!("dec{l}.block"), width, width, k)?;
            decoder.push(DecoderStep {
                up,
                bn,
                fusion,
                block,
            });
        }
        let head = Conv2d::new(
            &mut store,
            &mut rng,
            "head",
            config.base_filters,
            1,
            1,
            Padding::Same,
            true,
        )?;
        Ok(Self {
            config,
            store,
            encoder,
            bottleneck,
            decoder,
            head,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore<T> {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    pub fn bottleneck(&self) -> &DenseBottleneck {
        &self.bottleneck
    }

    pub fn encoder(&self) -> &[ConvBlock] {
        &self.encoder
    }

    pub fn decoder(&self) -> &[DecoderStep] {
        &self.decoder
    }

    pub fn head(&self) -> &Conv2d {
        &self.head
    }

    /// Trainable scalar count.
    pub fn count_params(&self) -> usize {
        self.store.count_params()
    }

    pub fn session(&self, mode: Mode) -> Session<'_, T> {
        Session::new(&self.store, mode)
    }

    pub fn apply_stat_updates(&mut self, updates: &[StatUpdate<T>]) {
        self.store.apply_stat_updates(updates);
    }

    pub fn forward(&self, s: &mut Session<'_, T>, x: Var) -> Result<Var> {
        self.forward_traced(s, x).map(|(y, _)| y)
    }

    pub fn forward_traced(&self, s: &mut Session<'_, T>, x: Var) -> Result<(Var, ForwardTrace)> {
        let xs = s.graph.shape(x).to_vec();
        let expect = [self.config.input_channels, self.config.input_size.0, self.config.input_size.1];
        if xs.len() != 4 || xs[1..] != expect {
            return Err(Error::dim(format!(
                "model expects [B,{},{},{}] input, got {}",
                expect[0],
                expect[1],
                expect[2],
                shape_str(&xs)
            )));
        }
        let mut trace = ForwardTrace::default();
        let mut skips = Vec::with_capacity(self.encoder.len());
        let mut h = x;
        for block in &self.encoder {
            let e = block.forward(s, h)?;
            trace.encoder.push(sample_shape(s.graph.shape(e)));
            skips.push(e);
            h = s.graph.maxpool2(e)?;
        }
        let (mut d, seen) = self.bottleneck.forward_traced(s, h)?;
        trace.bottleneck = sample_shape(s.graph.shape(d));
        trace.dense_inputs = seen;

        for (step, &skip) in self.decoder.iter().zip(skips.iter().rev()) {
            let up = s.graph.upsample2(d)?;
            let up = step.up.forward(s, up)?;
            let up = step.bn.forward(s, up)?;
            if s.graph.shape(up) != s.graph.shape(skip) {
                return Err(Error::dim(format!(
                    "skip tensor {} does not match upsampled decoder tensor {}",
                    shape_str(s.graph.shape(skip)),
                    shape_str(s.graph.shape(up))
                )));
            }
            let fused = step.fusion.forward(s, &[skip, up])?;
            d = step.block.forward(s, fused)?;
            trace.decoder.push(sample_shape(s.graph.shape(d)));
        }
        let logits = self.head.forward(s, d)?;
        let y = s.graph.sigmoid(logits);
        trace.output = sample_shape(s.graph.shape(y));
        Ok((y, trace))
    }

    /// Inference-mode probabilities for a `[B,C,H,W]` batch.
    pub fn predict(&self, batch: &Tensor<T>) -> Result<Tensor<T>> {
        let mut s = self.session(Mode::Infer);
        let x = s.input(batch.clone());
        let y = self.forward(&mut s, x)?;
        Ok(s.graph.value(y).clone())
    }

    /// Tab-separated `name, shape, params` per tensor in build order, then
    /// the trainable total.
    pub fn summary(&self) -> String {
        let mut out = String::from("name\tshape\tparams\n");
        for e in self.store.entries() {
            let n = if e.trainable { e.value.numel() } else { 0 };
            let _ = writeln!(out, "{}\t{}\t{}", e.name, shape_str(e.value.shape()), n);
        }
        let _ = writeln!(out, "total\t-\t{}", self.count_params());
        out
    }

    pub fn cast<U: Real>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            store: self.store.cast(),
            encoder: self.encoder.clone(),
            bottleneck: self.bottleneck.clone(),
            decoder: self.decoder.clone(),
            head: self.head.clone(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_checkpoint(path, &self.store, &self.config.to_kv())
    }

    /// Rebuilds a model from a checkpoint's stored configuration and weights.
    pub fn from_checkpoint(ckpt: &Checkpoint<T>) -> Result<Self> {
        let config = ModelConfig::from_kv(&ckpt.metadata)?;
        let mut model = Self::build(config)?;
        model.load_weights(&ckpt.store)?;
        Ok(model)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&load_checkpoint(path)?)
    }

    /// Copies weights in; fails naming the first tensor whose name or shape
    /// does not match this architecture.
    pub fn load_weights(&mut self, weights: &ParamStore<T>) -> Result<()> {
        self.store.copy_from(weights)
    }
}
