use rand::Rng;

use super::{glorot_kernel, Mode, ParamId, ParamStore, Session, StatUpdate};
use crate::error::{Error, Result};
use crate::tensor::{Padding, Real, Tensor, Var};

/// Stride-1 convolution with an optional per-channel bias.
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub padding: Padding,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        padding: Padding,
        bias: bool,
    ) -> Result<Self> {
        let weight = store.add_param(
            format!("{name}.weight"),
            glorot_kernel(rng, [c_out, c_in, kernel, kernel]),
        )?;
        let bias = if bias {
            Some(store.add_param(format!("{name}.bias"), Tensor::zeros(&[c_out]))?)
        } else {
            None
        };
        Ok(Self {
            weight,
            bias,
            padding,
        })
    }

    pub fn in_channels<T: Real>(&self, store: &ParamStore<T>) -> usize {
        store.get(self.weight).shape()[1]
    }

    pub fn out_channels<T: Real>(&self, store: &ParamStore<T>) -> usize {
        store.get(self.weight).shape()[0]
    }

    pub fn forward<T: Real>(&self, s: &mut Session<'_, T>, x: Var) -> Result<Var> {
        let w = s.var(self.weight);
        let b = self.bias.map(|b| s.var(b));
        s.graph.conv2d(x, w, b, self.padding)
    }
}

/// Two 3x3 `same` convolutions, each followed by ReLU.
#[derive(Clone, Debug)]
pub struct ConvBlock {
    pub conv1: Conv2d,
    pub conv2: Conv2d,
}

impl ConvBlock {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
    ) -> Result<Self> {
        Ok(Self {
            conv1: Conv2d::new(
                store,
                rng,
                &format!("{name}.conv1"),
                c_in,
                c_out,
                kernel,
                Padding::Same,
                true,
            )?,
            conv2: Conv2d::new(
                store,
                rng,
                &format!("{name}.conv2"),
                c_out,
                c_out,
                kernel,
                Padding::Same,
                true,
            )?,
        })
    }

    pub fn in_channels<T: Real>(&self, store: &ParamStore<T>) -> usize {
        self.conv1.in_channels(store)
    }

    pub fn out_channels<T: Real>(&self, store: &ParamStore<T>) -> usize {
        self.conv2.out_channels(store)
    }

    pub fn forward<T: Real>(&self, s: &mut Session<'_, T>, x: Var) -> Result<Var> {
        let h = self.conv1.forward(s, x)?;
        let h = s.graph.relu(h);
        let h = self.conv2.forward(s, h)?;
        Ok(s.graph.relu(h))
    }
}

/// Densely connected stack of conv blocks.
///
/// Block 1 reads the bottleneck input; block `i > 1` reads the channel-wise
/// concatenation of the outputs of blocks `1..i`, i.e. `(i - 1) * width`
/// channels. The output is the last block's output.
#[derive(Clone, Debug)]
pub struct DenseBottleneck {
    blocks: Vec<ConvBlock>,
    width: usize,
}

impl DenseBottleneck {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        c_in: usize,
        width: usize,
        count: usize,
        kernel: usize,
    ) -> Result<Self> {
        if count == 0 {
            return Err(Error::usage("dense bottleneck needs at least one block"));
        }
        let mut blocks = Vec::with_capacity(count);
        for i in 0..count {
            let inputs = if i == 0 { c_in } else { i * width };
            blocks.push(ConvBlock::new(
                store,
                rng,
                &format!("{name}.block{}", i + 1),
                inputs,
                width,
                kernel,
            )?);
        }
        Self::assemble(store, blocks, c_in, width)
    }

    /// Checks an existing list of blocks against the dense channel rule.
    pub fn assemble<T: Real>(
        store: &ParamStore<T>,
        blocks: Vec<ConvBlock>,
        c_in: usize,
        width: usize,
    ) -> Result<Self> {
        if blocks.is_empty() {
            return Err(Error::usage("dense bottleneck needs at least one block"));
        }
        for (i, b) in blocks.iter().enumerate() {
            let expect = if i == 0 { c_in } else { i * width };
            let got = b.in_channels(store);
            if got != expect {
                return Err(Error::dim(format!(
                    "dense block {} reads {got} channels, expected {expect}",
                    i + 1
                )));
            }
            if b.out_channels(store) != width {
                return Err(Error::dim(format!(
                    "dense block {} writes {} channels, expected {width}",
                    i + 1,
                    b.out_channels(store)
                )));
            }
        }
        Ok(Self { blocks, width })
    }

    pub fn blocks(&self) -> &[ConvBlock] {
        &self.blocks
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn forward<T: Real>(&self, s: &mut Session<'_, T>, x: Var) -> Result<Var> {
        self.forward_traced(s, x).map(|(y, _)| y)
    }

    /// Forward pass that also reports the channel count each block actually
    /// received.
    pub fn forward_traced<T: Real>(
        &self,
        s: &mut Session<'_, T>,
        x: Var,
    ) -> Result<(Var, Vec<usize>)> {
        let channel_axis = s.graph.shape(x).len() - 3;
        let mut outputs = Vec::with_capacity(self.blocks.len());
        let mut seen = Vec::with_capacity(self.blocks.len());
        for (i, block) in self.blocks.iter().enumerate() {
            let input = if i == 0 {
                x
            } else {
                s.graph.concat_channels(&outputs)?
            };
            seen.push(s.graph.shape(input)[channel_axis]);
            outputs.push(block.forward(s, input)?);
        }
        Ok((*outputs.last().expect("non-empty"), seen))
    }
}

/// Per-channel batch normalization with running statistics.
#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNorm {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        channels: usize,
        momentum: f64,
        eps: f64,
    ) -> Result<Self> {
        if !(momentum > 0.0 && momentum < 1.0) {
            return Err(Error::usage(format!(
                "batchnorm momentum must lie in (0, 1), got {momentum}"
            )));
        }
        if eps <= 0.0 {
            return Err(Error::usage(format!(
                "batchnorm epsilon must be positive, got {eps}"
            )));
        }
        Ok(Self {
            gamma: store.add_param(format!("{name}.gamma"), Tensor::ones(&[channels]))?,
            beta: store.add_param(format!("{name}.beta"), Tensor::zeros(&[channels]))?,
            running_mean: store
                .add_buffer(format!("{name}.running_mean"), Tensor::zeros(&[channels]))?,
            running_var: store
                .add_buffer(format!("{name}.running_var"), Tensor::ones(&[channels]))?,
            momentum,
            eps,
        })
    }

    /// Normalizes a `[B,C,H,W]` batch. Train mode uses batch statistics and
    /// queues a running-statistics update on the session; infer mode uses
    /// the stored running statistics.
    pub fn forward<T: Real>(&self, s: &mut Session<'_, T>, x: Var) -> Result<Var> {
        let gamma = s.var(self.gamma);
        let beta = s.var(self.beta);
        let eps = T::from_f64_lossy(self.eps);
        match s.mode() {
            Mode::Train => {
                let (y, stats) = s.graph.batch_norm_train(x, gamma, beta, eps)?;
                s.push_update(StatUpdate {
                    running_mean: self.running_mean,
                    running_var: self.running_var,
                    mean: stats.mean,
                    var: stats.var,
                    count: stats.count,
                    momentum: self.momentum,
                });
                Ok(y)
            }
            Mode::Infer => {
                let store = s.store();
                let mean = store.get(self.running_mean).data();
                let var = store.get(self.running_var).data();
                s.graph.batch_norm_infer(x, gamma, beta, mean, var, eps)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::OpKind;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn zero_all(store: &mut ParamStore<f64>) {
        for id in store.ids().collect::<Vec<_>>() {
            store.get_mut(id).data_mut().fill(0.0);
        }
    }

    #[test]
    fn conv_block_zero_weights_give_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::<f64>::new();
        let block = ConvBlock::new(&mut store, &mut rng, "b", 1, 16, 3).unwrap();
        zero_all(&mut store);
        let mut s = Session::new(&store, Mode::Train);
        let x = s.input(Tensor::full(&[1, 64, 64], 3.0));
        let y = block.forward(&mut s, x).unwrap();
        assert_eq!(s.graph.shape(y), &[16, 64, 64]);
        assert!(s.graph.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn conv_block_channel_mismatch() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::<f64>::new();
        let block = ConvBlock::new(&mut store, &mut rng, "b", 2, 4, 3).unwrap();
        let mut s = Session::new(&store, Mode::Train);
        let x = s.input(Tensor::ones(&[3, 4, 4]));
        assert!(matches!(block.forward(&mut s, x), Err(Error::Dimension(_))));
    }

    #[test]
    fn dense_channel_law_d3() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::<f64>::new();
        let dense = DenseBottleneck::new(&mut store, &mut rng, "dense", 5, 8, 3, 3).unwrap();
        let ins: Vec<_> = dense.blocks().iter().map(|b| b.in_channels(&store)).collect();
        assert_eq!(ins, vec![5, 8, 16]);
        let mut s = Session::new(&store, Mode::Train);
        let x = s.input(Tensor::ones(&[5, 4, 4]));
        let (y, seen) = dense.forward_traced(&mut s, x).unwrap();
        assert_eq!(seen, vec![5, 8, 16]);
        assert_eq!(s.graph.shape(y), &[8, 4, 4]);
        assert_eq!(s.graph.count(OpKind::Concat), 2);
        assert_eq!(s.graph.count(OpKind::Conv2d), 6);
    }

    #[test]
    fn dense_misconfiguration_fails_at_build() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::<f64>::new();
        let b1 = ConvBlock::new(&mut store, &mut rng, "b1", 4, 8, 3).unwrap();
        let b2 = ConvBlock::new(&mut store, &mut rng, "b2", 16, 8, 3).unwrap();
        let err = DenseBottleneck::assemble(&store, vec![b1, b2], 4, 8).unwrap_err();
        assert!(matches!(err, Error::Dimension(_)));
    }

    #[test]
    fn dense_zero_params_zero_output() {
        for d in 1..=3 {
            let mut rng = ChaCha8Rng::seed_from_u64(d as u64);
            let mut store = ParamStore::<f64>::new();
            let dense = DenseBottleneck::new(&mut store, &mut rng, "dense", 2, 4, d, 3).unwrap();
            zero_all(&mut store);
            let mut s = Session::new(&store, Mode::Infer);
            let x = s.input(Tensor::full(&[2, 4, 4], -1.5));
            let y = dense.forward(&mut s, x).unwrap();
            assert!(s.graph.value(y).data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn batchnorm_constant_channel_maps_to_beta() {
        let mut store = ParamStore::<f64>::new();
        let bn = BatchNorm::new(&mut store, "bn", 1, 0.1, 1e-5).unwrap();
        store.get_mut(bn.beta).data_mut()[0] = 0.25;
        let mut s = Session::new(&store, Mode::Train);
        let x = s.input(Tensor::full(&[2, 1, 2, 2], 4.0));
        let y = bn.forward(&mut s, x).unwrap();
        assert!(s.graph.value(y).data().iter().all(|&v| (v - 0.25).abs() < 1e-12));
        assert_eq!(s.stat_updates().len(), 1);
    }

    #[test]
    fn batchnorm_rejects_bad_hyperparameters() {
        let mut store = ParamStore::<f64>::new();
        assert!(BatchNorm::new(&mut store, "a", 1, 1.0, 1e-5).is_err());
        assert!(BatchNorm::new(&mut store, "b", 1, 0.1, 0.0).is_err());
    }
}
