//! Central finite-difference checks of every layer type, in `f64`.

use std::fmt::Write as _;
use std::time::{Duration, Instant};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::model::{Model, Preset};
use crate::nn::{BConvLstm, BatchNorm, Conv2d, ConvBlock, ConvLstmCell, DenseBottleneck, Mode, ParamId, ParamStore, Session};
use crate::tensor::{Padding, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradcheckConfig {
    pub tolerance: f64,
    /// Finite-difference step.
    pub epsilon: f64,
    /// Relative errors use `max(|analytic|, |numeric|, floor)` as denominator.
    pub floor: f64,
    pub seed: u64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            tolerance: 1e-3,
            epsilon: 1e-4,
            floor: 1e-6,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamError {
    pub name: String,
    pub numel: usize,
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CaseReport {
    pub layer: String,
    pub params: Vec<ParamError>,
}

impl CaseReport {
    pub fn max_error(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_error).fold(0.0, f64::max)
    }
}

#[derive(Clone, Debug)]
pub struct GradcheckReport {
    pub cases: Vec<CaseReport>,
    pub tolerance: f64,
    pub elapsed: Duration,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.cases.iter().all(|c| c.max_error() < self.tolerance)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for case in &self.cases {
            let verdict = if case.max_error() < self.tolerance { "PASS" } else { "FAIL" };
            let _ = writeln!(
                s,
                "layer {}: {verdict} (max relative error {:.3e})",
                case.layer,
                case.max_error()
            );
            for p in &case.params {
                let _ = writeln!(s, "  {}\t{}\t{:.3e}", p.name, p.numel, p.max_rel_error);
            }
        }
        let failed: Vec<(&str, &ParamError)> = self
            .cases
            .iter()
            .flat_map(|c| c.params.iter().map(move |p| (c.layer.as_str(), p)))
            .filter(|(_, p)| p.max_rel_error >= self.tolerance)
            .collect();
        if !failed.is_empty() {
            let mut worst = failed;
            worst.sort_by(|a, b| b.1.max_rel_error.total_cmp(&a.1.max_rel_error));
            let _ = writeln!(s, "worst offenders:");
            for (layer, p) in worst.iter().take(5) {
                let _ = writeln!(
                    s,
                    "  {layer} {}[{}]: analytic {:.6e} numeric {:.6e} relative error {:.3e}",
                    p.name, p.worst_index, p.analytic, p.numeric, p.max_rel_error
                );
            }
        }
        let passed = self
            .cases
            .iter()
            .filter(|c| c.max_error() < self.tolerance)
            .count();
        let _ = writeln!(
            s,
            "overall: {} ({passed}/{} layers within {:e}, {:.2} s)",
            if self.passed() { "PASS" } else { "FAIL" },
            self.cases.len(),
            self.tolerance,
            self.elapsed.as_secs_f64()
        );
        s
    }
}

type Forward<'a> = dyn Fn(&mut Session<'_, f64>) -> Result<Var> + 'a;

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-scale..scale)).collect()).expect("shape")
}

/// Moves every trainable value off its initializer so zero-initialized
/// peepholes and biases are exercised too.
fn jitter(store: &mut ParamStore<f64>, rng: &mut ChaCha8Rng) {
    let ids: Vec<ParamId> = store.ids().filter(|&id| store.is_trainable(id)).collect();
    for id in ids {
        for v in store.get_mut(id).data_mut() {
            *v += rng.gen_range(-0.3..0.3);
        }
    }
}

fn projected_loss(store: &ParamStore<f64>, forward: &Forward<'_>, proj: &Tensor<f64>, grads: bool) -> Result<(f64, Vec<Option<Tensor<f64>>>)> {
    let mut s = Session::new(store, Mode::Train);
    let out = forward(&mut s)?;
    let r = s.graph.constant(proj.clone());
    let weighted = s.graph.hadamard(out, r)?;
    let loss = s.graph.sum(weighted);
    let value = s.graph.value(loss).item()?;
    if !grads {
        return Ok((value, Vec::new()));
    }
    s.graph.backward(loss)?;
    Ok((value, s.grads()))
}

/// Compares analytic gradients of `sum(R * forward(...))` for a fixed random
/// `R` against central differences, for every trainable scalar in `store`.
pub fn check_case(
    layer: &str,
    store: &ParamStore<f64>,
    forward: &Forward<'_>,
    config: &GradcheckConfig,
    rng: &mut ChaCha8Rng,
) -> Result<CaseReport> {
    let shape = {
        let mut s = Session::new(store, Mode::Train);
        let out = forward(&mut s)?;
        s.graph.shape(out).to_vec()
    };
    let proj = random_tensor(rng, &shape, 1.0);
    let (_, grads) = projected_loss(store, forward, &proj, true)?;
    let mut probe = store.clone();
    let mut params = Vec::new();
    for id in store.ids().filter(|&id| store.is_trainable(id)) {
        let analytic = grads[id.index()].clone().unwrap_or_else(|| Tensor::zeros(store.get(id).shape()));
        let mut worst = ParamError {
            name: store.name(id).to_string(),
            numel: analytic.numel(),
            max_rel_error: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
        };
        for j in 0..analytic.numel() {
            let orig = store.get(id).data()[j];
            probe.get_mut(id).data_mut()[j] = orig + config.epsilon;
            let (plus, _) = projected_loss(&probe, forward, &proj, false)?;
            probe.get_mut(id).data_mut()[j] = orig - config.epsilon;
            let (minus, _) = projected_loss(&probe, forward, &proj, false)?;
            probe.get_mut(id).data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * config.epsilon);
            let a = analytic.data()[j];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(config.floor);
            if err > worst.max_rel_error || err.is_nan() {
                worst.max_rel_error = err;
                worst.worst_index = j;
                worst.analytic = a;
                worst.numeric = numeric;
            }
        }
        params.push(worst);
    }
    Ok(CaseReport {
        layer: layer.to_string(),
        params,
    })
}

/// Every layer type plus the full micro-preset model.
pub fn run_suite(config: &GradcheckConfig) -> Result<GradcheckReport> {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut cases = Vec::new();

    {
        let mut st = ParamStore::new();
        let x = st.add_param("input", random_tensor(&mut rng, &[2, 2, 5, 5], 1.0))?;
        let conv = Conv2d::new(&mut st, &mut rng, "conv", 2, 3, 3, Padding::Same, true)?;
        let valid = Conv2d::new(&mut st, &mut rng, "conv_valid", 3, 2, 3, Padding::Valid, true)?;
        jitter(&mut st, &mut rng);
        let f = |s: &mut Session<'_, f64>| {
            let xv = s.var(x);
            let h = conv.forward(s, xv)?;
            valid.forward(s, h)
        };
        cases.push(check_case("conv2d", &st, &f, config, &mut rng)?);
    }
    {
        let mut st = ParamStore::new();
        let x = st.add_param("input", random_tensor(&mut rng, &[2, 2, 6, 6], 1.0))?;
        let block = ConvBlock::new(&mut st, &mut rng, "block", 2, 3, 3)?;
        jitter(&mut st, &mut rng);
        let f = |s: &mut Session<'_, f64>| {
            let xv = s.var(x);
            block.forward(s, xv)
        };
        cases.push(check_case("conv_block", &st, &f, config, &mut rng)?);
    }
    {
        let mut st = ParamStore::new();
        let x = st.add_param("input", random_tensor(&mut rng, &[3, 2, 4, 4], 2.0))?;
        let bn = BatchNorm::new(&mut st, "bn", 2, 0.1, 1e-5)?;
        jitter(&mut st, &mut rng);
        let f = |s: &mut Session<'_, f64>| {
            let xv = s.var(x);
            bn.forward(s, xv)
        };
        cases.push(check_case("batchnorm_train", &st, &f, config, &mut rng)?);
    }
    {
        let mut st = ParamStore::new();
        let x0 = st.add_param("input0", random_tensor(&mut rng, &[2, 2, 4, 4], 1.0))?;
        let x1 = st.add_param("input1", random_tensor(&mut rng, &[2, 2, 4, 4], 1.0))?;
        let cell = ConvLstmCell::new(&mut st, &mut rng, "cell", 2, 3, 3, (4, 4))?;
        jitter(&mut st, &mut rng);
        let f = |s: &mut Session<'_, f64>| {
            let a = s.var(x0);
            let b = s.var(x1);
            let first = cell.step(s, a, None)?;
            let second = cell.step(s, b, Some(&first.state))?;
            s.graph.concat_channels(&[second.state.h, second.state.c])
        };
        cases.push(check_case("convlstm_step", &st, &f, config, &mut rng)?);
    }
    {
        let mut st = ParamStore::new();
        let x0 = st.add_param("input0", random_tensor(&mut rng, &[2, 2, 4, 4], 1.0))?;
        let x1 = st.add_param("input1", random_tensor(&mut rng, &[2, 2, 4, 4], 1.0))?;
        let fusion = BConvLstm::new(&mut st, &mut rng, "fuse", 2, 3, 2, 3, (4, 4))?;
        jitter(&mut st, &mut rng);
        let f = |s: &mut Session<'_, f64>| {
            let a = s.var(x0);
            let b = s.var(x1);
            fusion.forward(s, &[a, b])
        };
        cases.push(check_case("bconvlstm", &st, &f, config, &mut rng)?);
    }
    {
        let mut st = ParamStore::new();
        let x = st.add_param("input", random_tensor(&mut rng, &[2, 3, 4, 4], 1.0))?;
        let dense = DenseBottleneck::new(&mut st, &mut rng, "dense", 3, 4, 2, 3)?;
        jitter(&mut st, &mut rng);
        let f = |s: &mut Session<'_, f64>| {
            let xv = s.var(x);
            dense.forward(s, xv)
        };
        cases.push(check_case("dense_bottleneck_d2", &st, &f, config, &mut rng)?);
    }
    {
        let mut mc = Preset::Micro.model_config();
        mc.seed = config.seed;
        let model = Model::<f64>::build(mc.clone())?;
        let mut st = model.store().clone();
        let (h, w) = mc.input_size;
        let x = st.add_param("input", random_tensor(&mut rng, &[2, mc.input_channels, h, w], 1.0))?;
        jitter(&mut st, &mut rng);
        let f = |s: &mut Session<'_, f64>| {
            let xv = s.var(x);
            model.forward(s, xv)
        };
        cases.push(check_case("micro_model", &st, &f, config, &mut rng)?);
    }

    Ok(GradcheckReport {
        cases,
        tolerance: config.tolerance,
        elapsed: started.elapsed(),
    })
}
